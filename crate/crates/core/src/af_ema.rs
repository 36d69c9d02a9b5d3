//! Fisher-weighted teacher updates.
//!
//! When a target epoch ends, the teacher's diagonal Fisher information over
//! that domain is min-max normalised, clipped to `[lambda1, lambda2]` and
//! used as a per-element EMA coefficient for the next epoch, so parameters
//! that mattered for the finished domain move more slowly.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::mean_teacher::{pseudo_label, BlendWeights, TeacherStudent};
use crate::scenegen::Dataset;
use crate::segnet::{self, ParamSet};
use crate::tensor::Tensor;

pub const FISHER_MAGIC: &[u8; 4] = b"ODBF";
pub const DEFAULT_LAMBDA1: f64 = 0.99;
pub const DEFAULT_LAMBDA2: f64 = 0.9999;
pub const DEFAULT_SAMPLE_CAP: usize = 256;

/// Range over which the min-max normalisation is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    /// Each parameter tensor separately.
    #[default]
    Tensor,
    /// All parameters together.
    Global,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FisherCoefficients {
    /// Mean squared gradient per element, mirroring the parameter set.
    pub raw: Vec<Vec<f64>>,
    /// EMA coefficients in `[lambda1, lambda2]`.
    pub adjusted: Vec<Vec<f64>>,
    pub computed_on: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub scope: NormScope,
    pub samples: usize,
}

/// Mean over `images` of the squared gradient of the teacher's cross-entropy
/// against its own pseudo-labels. The teacher is not modified.
pub fn compute_fisher<'a>(teacher: &ParamSet, images: impl IntoIterator<Item = &'a Tensor>) -> Result<Vec<Vec<f64>>> {
    let mut acc: Vec<Vec<f64>> = teacher.iter().map(|p| vec![0.0; p.value().len()]).collect();
    let mut n = 0usize;
    for image in images {
        let pseudo = pseudo_label(teacher, image)?;
        let (_, grads) = segnet::loss_and_grads(teacher, image, &pseudo.label, None)?;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (av, gv) in a.iter_mut().zip(g) {
                *av += gv * gv;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::contract("Fisher information over an empty dataset"));
    }
    let inv = n as f64;
    for a in &mut acc {
        for v in a.iter_mut() {
            *v /= inv;
        }
    }
    Ok(acc)
}

/// Evenly spaced subset of `0..len` with at most `cap` indices.
pub fn subsample_indices(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(cap) if cap < len => (0..cap).map(|i| i * len / cap).collect(),
        _ => (0..len).collect(),
    }
}

/// Fisher over (a capped subsample of) a target split. Only images are read.
pub fn compute_fisher_on(teacher: &ParamSet, dataset: &Dataset, cap: Option<usize>) -> Result<(Vec<Vec<f64>>, usize)> {
    let idx = subsample_indices(dataset.len(), cap);
    let raw = compute_fisher(teacher, idx.iter().map(|&i| dataset.image(i)))?;
    Ok((raw, idx.len()))
}

/// Min-max normalisation per scope followed by clipping to
/// `[lambda1, lambda2]`. A scope whose values are all equal maps to `lambda1`.
pub fn normalize_clip(raw: &[Vec<f64>], lambda1: f64, lambda2: f64, scope: NormScope) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&lambda1) || !(0.0..=1.0).contains(&lambda2) {
        return Err(Error::config(format!("lambdas {lambda1}, {lambda2} must lie in [0, 1]")));
    }
    if lambda1 > lambda2 {
        return Err(Error::config(format!("lambda1 {lambda1} exceeds lambda2 {lambda2}")));
    }
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Fisher information".into()));
    }
    let range = |vals: &mut dyn Iterator<Item = &f64>| {
        vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let map = |v: f64, (lo, hi): (f64, f64)| {
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(lambda1, lambda2)
        } else {
            lambda1
        }
    };
    let global = range(&mut raw.iter().flatten());
    Ok(raw
        .iter()
        .map(|t| {
            let r = match scope {
                NormScope::Tensor => range(&mut t.iter()),
                NormScope::Global => global,
            };
            t.iter().map(|&v| map(v, r)).collect()
        })
        .collect())
}

impl FisherCoefficients {
    /// Fisher over `dataset` turned into EMA coefficients.
    pub fn compute(
        teacher: &ParamSet,
        dataset: &Dataset,
        cap: Option<usize>,
        lambda1: f64,
        lambda2: f64,
        scope: NormScope,
    ) -> Result<Self> {
        let (raw, samples) = compute_fisher_on(teacher, dataset, cap)?;
        let adjusted = normalize_clip(&raw, lambda1, lambda2, scope)?;
        Ok(FisherCoefficients {
            raw,
            adjusted,
            computed_on: dataset.domain_id().to_string(),
            lambda1,
            lambda2,
            scope,
            samples,
        })
    }

    /// Histogram of adjusted coefficients: share at `lambda1`, at `lambda2`,
    /// and strictly between.
    pub fn saturation(&self) -> (f64, f64, f64) {
        let n = self.adjusted.iter().map(Vec::len).sum::<usize>().max(1) as f64;
        let (mut lo, mut hi) = (0usize, 0usize);
        for &v in self.adjusted.iter().flatten() {
            if v <= self.lambda1 {
                lo += 1;
            } else if v >= self.lambda2 {
                hi += 1;
            }
        }
        (lo as f64 / n, hi as f64 / n, 1.0 - (lo + hi) as f64 / n)
    }
}

/// `teacher <- F' * teacher + (1 - F') * student` elementwise.
pub fn af_ema_update(pair: &mut TeacherStudent, adjusted: &[Vec<f64>]) -> Result<()> {
    pair.blend(BlendWeights::PerElement(adjusted))
}

#[derive(Serialize, Deserialize)]
struct Header {
    computed_on: String,
    lambda1: f64,
    lambda2: f64,
    scope: NormScope,
    samples: usize,
    params: Vec<(String, usize)>,
}

/// Writes raw then adjusted coefficients, each in parameter order.
pub fn save_fisher(path: &Path, fisher: &FisherCoefficients, params: &ParamSet) -> Result<()> {
    if fisher.raw.len() != params.len() || fisher.raw.iter().zip(params.iter()).any(|(f, p)| f.len() != p.value().len()) {
        return Err(Error::shape("Fisher arrays do not mirror the parameter set"));
    }
    let header = Header {
        computed_on: fisher.computed_on.clone(),
        lambda1: fisher.lambda1,
        lambda2: fisher.lambda2,
        scope: fisher.scope,
        samples: fisher.samples,
        params: params.iter().map(|p| (p.name().to_string(), p.value().len())).collect(),
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    codec::write_header(&mut out, FISHER_MAGIC, &header)?;
    for block in [&fisher.raw, &fisher.adjusted] {
        for t in block {
            codec::write_f64s(&mut out, t)?;
        }
    }
    Ok(())
}

/// Reads a snapshot back together with its parameter names.
pub fn load_fisher(path: &Path) -> Result<(FisherCoefficients, Vec<String>)> {
    let bytes = fs::read(path)?;
    let (mut reader, header): (_, Header) = Reader::open(&bytes, FISHER_MAGIC)?;
    let read_block = |reader: &mut Reader| -> Result<Vec<Vec<f64>>> {
        header.params.iter().map(|(_, n)| reader.f64s(*n)).collect()
    };
    let raw = read_block(&mut reader)?;
    let adjusted = read_block(&mut reader)?;
    reader.finish()?;
    Ok((
        FisherCoefficients {
            raw,
            adjusted,
            computed_on: header.computed_on,
            lambda1: header.lambda1,
            lambda2: header.lambda2,
            scope: header.scope,
            samples: header.samples,
        },
        header.params.into_iter().map(|(n, _)| n).collect(),
    ))
}
