// One adaptation run with the full method on the desk preset, printing the
// per-target report and where each target's mIoU stood at every epoch end.
//
// `cargo run --release --example train_single -- [max_iter] [seed]`

use mtda::harness::{train, ExperimentConfig};
use mtda::scenegen::{build_benchmark, STREET_CLASSES};

fn main() -> mtda::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = ExperimentConfig::desk();
    if let Some(n) = args.next() {
        config.optim.max_iter = n.parse().expect("max_iter must be an integer");
    }
    if let Some(s) = args.next() {
        config.seed = s.parse().expect("seed must be an integer");
    }
    let bench = build_benchmark(&config.generator)?;
    let t = std::time::Instant::now();
    let run = train(&config, &bench)?;
    println!("trained {} iterations in {:.1}s", config.optim.max_iter, t.elapsed().as_secs_f64());

    for p in run.log.eval_points() {
        let per: Vec<String> = p.per_domain.iter().map(|(d, m)| format!("{d} {m:.3}")).collect();
        println!("iter {:>5} on {:<9} {}", p.iteration, p.active, per.join("  "));
    }
    let names: Vec<String> = STREET_CLASSES.iter().map(|s| s.to_string()).collect();
    print!("{}", run.summary.to_csv(&names));
    Ok(())
}
