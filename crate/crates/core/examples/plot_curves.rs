// Trains a short run with and without Fisher-weighted EMA and draws the
// per-target mIoU curves of both as SVG.
//
// `cargo run --release --example plot_curves -- [out_dir]`

use std::path::PathBuf;

use mtda::harness::{emit_plots, train, ExperimentConfig, RunLog};
use mtda::scenegen::build_benchmark;

pub fn run_example(config: &ExperimentConfig, out: &std::path::Path) -> mtda::Result<Vec<PathBuf>> {
    let bench = build_benchmark(&config.generator)?;
    let mut runs = Vec::new();
    for af_ema in [false, true] {
        let mut c = config.clone();
        c.toggles.af_ema = af_ema;
        let log = train(&c, &bench)?.log;
        let label = if af_ema { "fisher-ema" } else { "plain-ema" };
        runs.push((label.to_string(), log));
    }
    let refs: Vec<(String, &RunLog)> = runs.iter().map(|(n, l)| (n.clone(), l)).collect();
    emit_plots(&refs, out)
}

fn main() -> mtda::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("plots"), PathBuf::from);
    let mut config = ExperimentConfig::desk();
    config.optim.max_iter = 400;
    for p in run_example(&config, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
