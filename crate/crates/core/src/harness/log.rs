use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

/// One line of the JSON-lines run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        seed: u64,
        targets: Vec<String>,
        ods: bool,
        af_ema: bool,
        cgmix: bool,
    },
    WarmupEnd {
        iterations: usize,
        loss: f64,
    },
    Iteration {
        iteration: usize,
        domain: String,
        lr: f64,
        loss_sup: f64,
        loss_brg: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        loss_unsup: Option<f64>,
        loss: f64,
    },
    DomainSwitch {
        epoch: usize,
        from: String,
        to: String,
    },
    EpochEnd {
        iteration: usize,
        epoch: usize,
        domain: String,
    },
    FisherComputed {
        iteration: usize,
        domain: String,
        samples: usize,
        raw_mean: f64,
        raw_max: f64,
        at_lambda1: f64,
        at_lambda2: f64,
    },
    Eval {
        iteration: usize,
        epoch: usize,
        /// Target trained on when the evaluation happened.
        active: String,
        reports: Vec<EvalReport>,
        avg_miou: f64,
    },
}

/// An evaluation event flattened for analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub iteration: usize,
    pub epoch: usize,
    pub active: String,
    pub per_domain: Vec<(String, f64)>,
    pub avg_miou: f64,
}

impl EvalPoint {
    pub fn miou_of(&self, domain: &str) -> Option<f64> {
        self.per_domain.iter().find(|(d, _)| d == domain).map(|(_, m)| *m)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    events: Vec<Event>,
}

impl RunLog {
    pub fn new() -> Self {
        RunLog::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line)
                .map_err(|err| Error::Data(format!("{} line {}: {err}", path.display(), i + 1)))?;
            events.push(e);
        }
        Ok(RunLog { events })
    }

    /// Evaluation events in log order.
    pub fn eval_points(&self) -> Vec<EvalPoint> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Eval {
                    iteration,
                    epoch,
                    active,
                    reports,
                    avg_miou,
                } => Some(EvalPoint {
                    iteration: *iteration,
                    epoch: *epoch,
                    active: active.clone(),
                    per_domain: reports.iter().map(|r| (r.domain_id.clone(), r.miou)).collect(),
                    avg_miou: *avg_miou,
                }),
                _ => None,
            })
            .collect()
    }

    /// `(from, to)` of every domain switch.
    pub fn switches(&self) -> Vec<(String, String)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::DomainSwitch { from, to, .. } => Some((from.clone(), to.clone())),
                _ => None,
            })
            .collect()
    }

    /// Active domain of each training iteration.
    pub fn iteration_domains(&self) -> Vec<&str> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Iteration { domain, .. } => Some(domain.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn fisher_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::FisherComputed { .. }))
            .count()
    }

    /// Average drop in each domain's mIoU across the epoch right after
    /// training on it ends, over all epoch-end evaluations. Returns `None`
    /// without two consecutive epoch-end evaluations.
    pub fn mean_forgetting(&self) -> Option<f64> {
        let points = self.eval_points();
        let mut drops = Vec::new();
        for w in points.windows(2) {
            let (before, after) = (&w[0], &w[1]);
            if before.active == after.active {
                continue;
            }
            if let (Some(a), Some(b)) = (before.miou_of(&before.active), after.miou_of(&before.active)) {
                drops.push(a - b);
            }
        }
        (!drops.is_empty()).then(|| drops.iter().sum::<f64>() / drops.len() as f64)
    }
}
