use serde::{Deserialize, Serialize};

use super::log::RunLog;
use super::train::train;
use super::{ExperimentConfig, Toggles};
use crate::error::{Error, Result};
use crate::scenegen::Benchmark;

/// The four cumulative component settings, from baseline to full method.
pub fn ablation_rows() -> [(&'static str, Toggles); 4] {
    let base = Toggles::BASELINE;
    [
        ("baseline", base),
        ("+ODS", Toggles { ods: true, ..base }),
        (
            "+ODS+AF-EMA",
            Toggles {
                ods: true,
                af_ema: true,
                ..base
            },
        ),
        (
            "+ODS+AF-EMA+CGMix",
            Toggles {
                ods: true,
                af_ema: true,
                cgmix: true,
                ..base
            },
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
    pub seeds: Vec<u64>,
    /// Seed-averaged mIoU per target.
    pub per_domain: Vec<(String, f64)>,
    /// Seed-averaged mean over targets.
    pub avg: f64,
    pub per_seed_avg: Vec<f64>,
    /// Seed-averaged drop of the previous target after each switch, when
    /// epoch-end evaluations were logged.
    pub forgetting: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub targets: Vec<String>,
    pub rows: Vec<AblationRow>,
    /// Run logs as `(row name, seed, log)`.
    pub logs: Vec<(String, u64, RunLog)>,
}

impl AblationReport {
    /// `config,ods,af_ema,cgmix,seeds,<targets>,Avg.`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,ods,af_ema,cgmix,seeds");
        for t in &self.targets {
            out.push(',');
            out.push_str(t);
        }
        out.push_str(",Avg.\n");
        let mark = |b: bool| if b { "x" } else { "" };
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{}",
                r.name,
                mark(r.toggles.ods),
                mark(r.toggles.af_ema),
                mark(r.toggles.cgmix),
                seeds.join(";")
            ));
            for (_, m) in &r.per_domain {
                out.push_str(&format!(",{m:.6}"));
            }
            out.push_str(&format!(",{:.6}\n", r.avg));
        }
        out
    }
}

/// Seed-averaged results of one configuration.
struct Averaged {
    per_domain: Vec<(String, f64)>,
    avg: f64,
    per_seed_avg: Vec<f64>,
    forgetting: Option<f64>,
    logs: Vec<(u64, RunLog)>,
}

fn run_seeds(config: &ExperimentConfig, bench: &Benchmark, seeds: &[u64]) -> Result<Averaged> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let targets = bench.target_ids();
    let mut sums = vec![0.0; targets.len()];
    let mut per_seed_avg = Vec::with_capacity(seeds.len());
    let mut forgetting = Vec::new();
    let mut logs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = train(&ExperimentConfig { seed, ..config.clone() }, bench)?;
        for (s, t) in sums.iter_mut().zip(&targets) {
            *s += run.summary.miou_of(t).expect("every target is evaluated");
        }
        per_seed_avg.push(run.summary.avg_miou);
        if let Some(f) = run.log.mean_forgetting() {
            forgetting.push(f);
        }
        logs.push((seed, run.log));
    }
    let n = seeds.len() as f64;
    Ok(Averaged {
        per_domain: targets.into_iter().zip(sums.iter().map(|s| s / n)).collect(),
        avg: per_seed_avg.iter().sum::<f64>() / n,
        per_seed_avg,
        forgetting: (forgetting.len() == seeds.len()).then(|| forgetting.iter().sum::<f64>() / n),
        logs,
    })
}

/// Trains each of the four cumulative settings on every seed. Everything but
/// the three component toggles is taken from `config`.
pub fn ablate(config: &ExperimentConfig, bench: &Benchmark, seeds: &[u64]) -> Result<AblationReport> {
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for (name, toggles) in ablation_rows() {
        let cfg = ExperimentConfig {
            toggles: Toggles {
                l_unsup: config.toggles.l_unsup,
                conf_weighting: config.toggles.conf_weighting,
                ..toggles
            },
            ..config.clone()
        };
        let a = run_seeds(&cfg, bench, seeds)?;
        rows.push(AblationRow {
            name: name.to_string(),
            toggles: cfg.toggles,
            seeds: seeds.to_vec(),
            per_domain: a.per_domain,
            avg: a.avg,
            per_seed_avg: a.per_seed_avg,
            forgetting: a.forgetting,
        });
        logs.extend(a.logs.into_iter().map(|(s, l)| (name.to_string(), s, l)));
    }
    Ok(AblationReport {
        targets: bench.target_ids(),
        rows,
        logs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub order: Vec<String>,
    pub seeds: Vec<u64>,
    pub per_domain: Vec<(String, f64)>,
    pub avg: f64,
    pub per_seed_avg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub targets: Vec<String>,
    pub rows: Vec<OrderRow>,
    /// Largest difference in `avg` between any two orders.
    pub max_gap: f64,
}

impl OrderReport {
    /// `order,seeds,<targets>,Avg.,max_gap`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("order,seeds");
        for t in &self.targets {
            out.push(',');
            out.push_str(t);
        }
        out.push_str(",Avg.,max_gap\n");
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            out.push_str(&format!("{},{}", r.order.join(">"), seeds.join(";")));
            for (_, m) in &r.per_domain {
                out.push_str(&format!(",{m:.6}"));
            }
            out.push_str(&format!(",{:.6},{:.6}\n", r.avg, self.max_gap));
        }
        out
    }
}

/// All orderings of `items`, in lexicographic order of positions.
pub(crate) fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// Trains the configuration once per target order (all orders when
/// `orders` is `None`) with the same seeds, and reports the spread.
pub fn order_study(
    config: &ExperimentConfig,
    bench: &Benchmark,
    orders: Option<&[Vec<String>]>,
    seeds: &[u64],
) -> Result<OrderReport> {
    let targets = bench.target_ids();
    if targets.len() < 2 {
        return Err(Error::config("an order study needs at least two targets"));
    }
    let orders = match orders {
        Some(o) => o.to_vec(),
        None => permutations(&targets),
    };
    let mut sorted_targets = targets.clone();
    sorted_targets.sort();
    for o in &orders {
        let mut s = o.clone();
        s.sort();
        if s != sorted_targets {
            return Err(Error::config(format!("{o:?} is not a permutation of {targets:?}")));
        }
    }
    let mut rows = Vec::with_capacity(orders.len());
    for order in orders {
        let cfg = ExperimentConfig {
            domain_order: Some(order.clone()),
            ..config.clone()
        };
        let a = run_seeds(&cfg, bench, seeds)?;
        rows.push(OrderRow {
            order,
            seeds: seeds.to_vec(),
            per_domain: a.per_domain,
            avg: a.avg,
            per_seed_avg: a.per_seed_avg,
        });
    }
    let mut max_gap: f64 = 0.0;
    for a in &rows {
        for b in &rows {
            max_gap = max_gap.max((a.avg - b.avg).abs());
        }
    }
    Ok(OrderReport { targets, rows, max_gap })
}
