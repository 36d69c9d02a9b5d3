// Trains the four cumulative component settings (pooled targets with
// ClassMix, then cyclic selection, Fisher-weighted EMA and context-guided
// mixing) and prints the seed-averaged table.
//
// `cargo run --release --example ablation -- [seeds] [max_iter]`, e.g.
// `-- 0,1,2 600`

use mtda::harness::{ablate, ExperimentConfig};
use mtda::scenegen::build_benchmark;

fn main() -> mtda::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: Vec<u64> = args
        .next()
        .unwrap_or_else(|| "0".into())
        .split(',')
        .map(|s| s.parse().expect("seeds are integers"))
        .collect();
    let mut config = ExperimentConfig::desk();
    if let Some(n) = args.next() {
        config.optim.max_iter = n.parse().expect("max_iter must be an integer");
    }
    let bench = build_benchmark(&config.generator)?;
    let report = ablate(&config, &bench, &seeds)?;
    print!("{}", report.to_csv());
    for row in &report.rows {
        match row.forgetting {
            Some(f) => println!("{:<20} mean drop after a switch {f:+.4}", row.name),
            None => println!("{:<20} (pooled targets, no switches)", row.name),
        }
    }
    Ok(())
}
