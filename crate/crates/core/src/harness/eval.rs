use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{report, ConfusionMatrix, EvalSummary};
use crate::scenegen::Dataset;
use crate::segnet::{self, load_checkpoint, ParamSet};
use crate::tensor::{ops, LabelMap};

/// Per-pixel argmax prediction of `params` for sample `index`.
pub fn predict(params: &ParamSet, dataset: &Dataset, index: usize) -> Result<LabelMap> {
    let logits = segnet::forward(params, dataset.image(index))?;
    Ok(ops::pixel_argmax(&logits)?.0)
}

/// mIoU of `params` on every dataset, plus the unweighted average.
pub fn evaluate(params: &ParamSet, datasets: &[&Dataset]) -> Result<EvalSummary> {
    let mut reports = Vec::with_capacity(datasets.len());
    for ds in datasets {
        if !ds.has_labels() {
            return Err(Error::Data(format!("'{}' has no labels to evaluate against", ds.domain_id())));
        }
        let mut cm = ConfusionMatrix::new(ds.num_classes());
        for i in 0..ds.len() {
            let pred = predict(params, ds, i)?;
            let gt = ds.label(i).expect("labelled dataset");
            cm.accumulate(&pred, gt)?;
        }
        reports.push(report(ds.domain_id(), &cm)?);
    }
    EvalSummary::new(reports)
}

/// Evaluates the teacher stored in a checkpoint file.
pub fn evaluate_checkpoint(path: &Path, datasets: &[&Dataset]) -> Result<EvalSummary> {
    let ck = load_checkpoint(path)?;
    let teacher = ck
        .get("teacher")
        .ok_or_else(|| Error::Data(format!("{} holds no teacher weights", path.display())))?;
    if let Some(ds) = datasets.iter().find(|d| d.num_classes() != ck.config.num_classes) {
        return Err(Error::Data(format!(
            "checkpoint predicts {} classes, '{}' has {}",
            ck.config.num_classes,
            ds.domain_id(),
            ds.num_classes()
        )));
    }
    evaluate(teacher, datasets)
}
