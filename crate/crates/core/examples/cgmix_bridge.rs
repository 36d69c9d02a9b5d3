// Builds a ClassMix and a context-guided bridge from one source and one
// target sample, prints the candidate similarities and writes the label
// maps (source, target, bridge) as PGM images.
//
// `cargo run --release --example cgmix_bridge -- [out_dir]`

use std::path::PathBuf;

use mtda::mixing::{cgmix_with_candidates, classmix, generate_candidates, select_classes, write_label_triptych, MixConfig};
use mtda::scenegen::{build_benchmark, GeneratorConfig, STREET_CLASSES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mtda::Result<Option<usize>> {
    let mut config = GeneratorConfig::street(1);
    config.train_size = 2;
    config.val_size = 1;
    let bench = build_benchmark(&config)?;
    let source = &bench.source.train;
    let target = &bench.targets[0].val;
    let (xs, ys) = (source.image(0), source.label(0).expect("source is labelled"));
    // Ground truth stands in for teacher pseudo-labels here.
    let (xt, yt) = (target.image(0), target.label(0).expect("val is labelled"));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let classes = select_classes(ys, &mut rng);
    let names: Vec<&str> = classes.iter().map(|&c| STREET_CLASSES[c as usize]).collect();
    println!("pasting {names:?}");

    let plain = classmix(xs, ys, xt, yt, &classes)?;
    println!("classmix pastes {} pixels in place", plain.mask_used.mask.count());

    let mix = MixConfig::default();
    let candidates = generate_candidates(xs, ys, &classes, &mix, &mut rng)?;
    let (bridge, sims) = cgmix_with_candidates(ys, xt, yt, &classes, &candidates, config.num_classes, &mix)?;
    for (i, (c, s)) in candidates.iter().zip(&sims).enumerate() {
        let t = &c.transform;
        let mark = if Some(i) == bridge.chosen_candidate { "*" } else { " " };
        println!(
            "{mark} candidate {i}: flip {:5} shift ({:>3},{:>3}) scale {:.2}  similarity {s:.4}",
            t.flip, t.dy, t.dx, t.scale
        );
    }

    let tmp = tempfile::tempdir()?;
    let dir = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("bridge.pgm");
    write_label_triptych(&path, &[ys, yt, &bridge.label], config.num_classes)?;
    println!("wrote {}", path.display());
    Ok(bridge.chosen_candidate)
}

fn main() {
    run_example().expect("bridge example failed");
}
