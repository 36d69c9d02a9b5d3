// Builds the default street benchmark, writes it to disk and prints the
// per-domain class frequencies.
//
// `cargo run --release --example generate_benchmark -- [out_dir]`

use std::path::PathBuf;

use mtda::harness::{load_benchmark, save_benchmark};
use mtda::scenegen::{build_benchmark, class_histogram, GeneratorConfig, STREET_CLASSES};

pub fn run_example() -> mtda::Result<()> {
    let mut config = GeneratorConfig::street(2);
    config.train_size = 8;
    config.val_size = 4;
    let bench = build_benchmark(&config)?;

    print!("{:<10}", "domain");
    for c in STREET_CLASSES {
        print!("{c:>13}");
    }
    println!();
    for d in std::iter::once(&bench.source).chain(&bench.targets) {
        let labels: Vec<_> = (0..d.val.len()).filter_map(|i| d.val.label(i)).collect();
        print!("{:<10}", d.domain_id());
        for f in class_histogram(labels, config.num_classes) {
            print!("{f:>13.3}");
        }
        println!();
    }

    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    let files = save_benchmark(&out, &bench)?;
    println!("wrote {} files to {}", files.len(), out.display());

    // Target training splits are stored without labels.
    let back = load_benchmark(&out)?;
    for t in &back.targets {
        println!("{}: train labelled = {}, val labelled = {}", t.domain_id(), t.train.has_labels(), t.val.has_labels());
    }
    Ok(())
}

fn main() {
    run_example().expect("benchmark generation failed");
}
