// Trains the full method once per target visiting order and reports how
// far apart the orders end up.
//
// `cargo run --release --example order_study -- [seeds] [max_iter]`

use mtda::harness::{order_study, ExperimentConfig};
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
    let report = order_study(&config, &bench, None, &seeds)?;
    print!("{}", report.to_csv());
    println!("largest gap between orders: {:.4}", report.max_gap);
    Ok(())
}
