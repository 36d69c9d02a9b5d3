use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::log::{Event, RunLog};
use super::{evaluate, ExperimentConfig};
use crate::af_ema::{af_ema_update, compute_fisher, normalize_clip, subsample_indices, FisherCoefficients};
use crate::error::{Error, Result};
use crate::mean_teacher::{
    bridge_pixel_weights, bridging_loss_grad, pseudo_label, supervised_loss_grad, unsupervised_loss_grad,
    TeacherStudent,
};
use crate::metrics::EvalSummary;
use crate::mixing::{cgmix, classmix, select_classes};
use crate::ods::OdsState;
use crate::scenegen::{Benchmark, Dataset};
use crate::segnet::{init, Checkpoint, SegNetConfig};
use crate::tensor::{poly_lr, sgd_step, OptimState};

/// Name used for the pooled target stream when domains are not cycled.
const MERGED: &str = "merged";

pub struct TrainOutcome {
    /// Teacher and student weights after the last iteration.
    pub checkpoint: Checkpoint,
    /// Teacher evaluated on every target validation split.
    pub summary: EvalSummary,
    pub log: RunLog,
}

/// Where target samples come from: one domain at a time, or all pooled.
enum TargetStream {
    Cycled(OdsState),
    Merged,
}

/// Samples of the current target epoch, as `(target index, sample index)`.
fn epoch_queue(stream: &TargetStream, bench: &Benchmark, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut queue: Vec<(usize, usize)> = match stream {
        TargetStream::Cycled(ods) => {
            let t = target_index(bench, ods.current_domain());
            (0..bench.targets[t].train.len()).map(|i| (t, i)).collect()
        }
        TargetStream::Merged => bench
            .targets
            .iter()
            .enumerate()
            .flat_map(|(t, d)| (0..d.train.len()).map(move |i| (t, i)))
            .collect(),
    };
    queue.shuffle(rng);
    queue
}

fn target_index(bench: &Benchmark, id: &str) -> usize {
    bench
        .targets
        .iter()
        .position(|t| t.domain_id() == id)
        .expect("target ids checked before training")
}

fn check_benchmark(config: &ExperimentConfig, bench: &Benchmark) -> Result<()> {
    let c = config.model.num_classes;
    if !bench.source.train.has_labels() {
        return Err(Error::Data("source training split has no labels".into()));
    }
    let all = std::iter::once(&bench.source).chain(&bench.targets);
    for d in all {
        for ds in [&d.train, &d.val] {
            if ds.num_classes() != c {
                return Err(Error::Data(format!(
                    "'{}' has {} classes, model predicts {c}",
                    ds.domain_id(),
                    ds.num_classes()
                )));
            }
        }
        if !d.val.has_labels() {
            return Err(Error::Data(format!("'{}' validation split has no labels", d.domain_id())));
        }
    }
    if let Some(order) = &config.domain_order {
        for id in order {
            if bench.target(id).is_none() {
                return Err(Error::Data(format!("target '{id}' is not in the benchmark")));
            }
        }
    }
    Ok(())
}

/// Model configuration actually used for a run: the seed offsets the
/// initialisation so that repeated seeds vary the starting weights too.
pub(crate) fn run_model_config(config: &ExperimentConfig) -> SegNetConfig {
    SegNetConfig {
        init_seed: config.model.init_seed.wrapping_add(config.seed),
        ..config.model.clone()
    }
}

fn eval_targets(bench: &Benchmark) -> Vec<&Dataset> {
    bench.targets.iter().map(|t| &t.val).collect()
}

/// Runs the full adaptation loop.
///
/// Each iteration draws a source batch (cycling through the source split)
/// and a batch from the active target stream, builds one bridge per pair
/// from teacher pseudo-labels, steps the student on supervised plus bridge
/// loss and then updates the teacher. When the active target's split is
/// exhausted the epoch ends: the selector advances and, if enabled, Fisher
/// coefficients are recomputed on the finished target.
pub fn train(config: &ExperimentConfig, bench: &Benchmark) -> Result<TrainOutcome> {
    config.validate()?;
    check_benchmark(config, bench)?;
    let toggles = config.toggles;
    let model_config = run_model_config(config);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let mut mix_rng = ChaCha8Rng::seed_from_u64(config.seed);
    mix_rng.set_stream(2);

    let source = &bench.source.train;
    let mut source_order: Vec<usize> = (0..source.len()).collect();
    source_order.shuffle(&mut order_rng);
    let mut source_pos = 0;
    let mut next_source = |rng: &mut ChaCha8Rng| {
        if source_pos == source_order.len() {
            source_order.shuffle(rng);
            source_pos = 0;
        }
        source_pos += 1;
        source_order[source_pos - 1]
    };

    let mut student = init(&model_config)?;
    let mut log = RunLog::new();
    if config.warmup_iters > 0 {
        let mut warm = OptimState::new(
            config.warmup_lr,
            config.optim.momentum,
            config.optim.weight_decay,
            config.optim.power,
            config.warmup_iters,
        )?;
        let mut loss = 0.0;
        for it in 0..config.warmup_iters {
            let scale = 1.0 / config.batch_size as f64;
            let mut grads: Vec<Vec<f64>> = student.iter().map(|p| vec![0.0; p.value().len()]).collect();
            loss = 0.0;
            for _ in 0..config.batch_size {
                let si = next_source(&mut order_rng);
                let lg = supervised_loss_grad(&student, source.image(si), source.label(si).expect("labelled source"))?;
                loss += scale * lg.loss;
                for (acc, g) in grads.iter_mut().zip(&lg.grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += scale * v;
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("warm-up loss {loss} at iteration {it}")));
            }
            student.clear_grads();
            student.accumulate_grads(&grads, 1.0)?;
            let lr = poly_lr(it, &warm);
            sgd_step(&mut student, &mut warm, lr)?;
        }
        student.clear_grads();
        log.push(Event::WarmupEnd {
            iterations: config.warmup_iters,
            loss,
        });
    }
    let mut pair = TeacherStudent::new(student, config.ema_alpha)?;
    let mut optim = config.optim.state()?;

    let targets: Vec<String> = if config.domain_order.is_some() {
        config.target_order()
    } else {
        bench.target_ids()
    };
    let mut stream = if toggles.ods {
        TargetStream::Cycled(OdsState::new(targets.clone())?)
    } else {
        TargetStream::Merged
    };

    log.push(Event::RunStart {
        seed: config.seed,
        targets,
        ods: toggles.ods,
        af_ema: toggles.af_ema,
        cgmix: toggles.cgmix,
    });

    let mut queue = epoch_queue(&stream, bench, &mut order_rng);
    let mut queue_pos = 0;
    let mut epoch = 0;
    let mut fisher: Option<FisherCoefficients> = None;
    let mut last_eval: Option<(usize, EvalSummary)> = None;
    let num_classes = config.model.num_classes;
    let max_iter = config.optim.max_iter;

    for it in 0..max_iter {
        let domain = match &stream {
            TargetStream::Cycled(ods) => ods.current_domain().to_string(),
            TargetStream::Merged => MERGED.to_string(),
        };
        let take = config.batch_size.min(queue.len() - queue_pos);
        let batch = &queue[queue_pos..queue_pos + take];
        queue_pos += take;

        let scale = 1.0 / take as f64;
        let mut grads: Vec<Vec<f64>> = pair.student().iter().map(|p| vec![0.0; p.value().len()]).collect();
        let (mut sup_sum, mut brg_sum, mut unsup_sum) = (0.0, 0.0, 0.0);
        for &(t, i) in batch {
            let si = next_source(&mut order_rng);
            let (xs, ys) = (source.image(si), source.label(si).expect("labelled source"));
            let xt = bench.targets[t].train.image(i);

            let pseudo = pseudo_label(pair.teacher(), xt)?;
            let classes = select_classes(ys, &mut mix_rng);
            let bridge = if toggles.cgmix {
                cgmix(xs, ys, xt, &pseudo.label, &classes, num_classes, &config.mix, &mut mix_rng)?
            } else {
                classmix(xs, ys, xt, &pseudo.label, &classes)?
            };
            let weights = toggles
                .conf_weighting
                .then(|| bridge_pixel_weights(&bridge, &pseudo, config.confidence_threshold));

            let mut parts = vec![
                supervised_loss_grad(pair.student(), xs, ys)?,
                bridging_loss_grad(pair.student(), &bridge, weights.as_deref())?,
            ];
            if toggles.l_unsup {
                parts.push(unsupervised_loss_grad(pair.student(), xt, &pseudo)?);
            }
            sup_sum += parts[0].loss;
            brg_sum += parts[1].loss;
            unsup_sum += parts.get(2).map_or(0.0, |p| p.loss);
            for part in &parts {
                for (acc, g) in grads.iter_mut().zip(&part.grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += scale * v;
                    }
                }
            }
        }
        let (loss_sup, loss_brg) = (sup_sum * scale, brg_sum * scale);
        let loss_unsup = toggles.l_unsup.then_some(unsup_sum * scale);
        let loss = loss_sup + loss_brg + loss_unsup.unwrap_or(0.0);
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("loss {loss} at iteration {it}")));
        }

        let lr = poly_lr(it, &optim);
        pair.set_student_grads(&grads)?;
        pair.sgd_step(&mut optim, lr)?;
        match &fisher {
            Some(f) => af_ema_update(&mut pair, &f.adjusted)?,
            None => pair.ema_update()?,
        }
        log.push(Event::Iteration {
            iteration: it,
            domain: domain.clone(),
            lr,
            loss_sup,
            loss_brg,
            loss_unsup,
            loss,
        });

        let epoch_done = queue_pos == queue.len();
        let mut evaluated = false;
        if epoch_done {
            log.push(Event::EpochEnd {
                iteration: it,
                epoch,
                domain: domain.clone(),
            });
            if config.eval_on_epoch_end {
                let s = evaluate(pair.teacher(), &eval_targets(bench))?;
                push_eval(&mut log, it, epoch, &domain, &s);
                last_eval = Some((it, s));
                evaluated = true;
            }
            // Images of the epoch that just ended, for the Fisher estimate.
            let finished: Vec<(usize, usize)> = queue.clone();
            if let TargetStream::Cycled(ods) = &mut stream {
                let switch = ods.on_epoch_complete();
                log.push(Event::DomainSwitch {
                    epoch: switch.epoch,
                    from: switch.from,
                    to: switch.to,
                });
            }
            if toggles.af_ema {
                let mut pool = finished;
                pool.sort_unstable();
                let idx = subsample_indices(pool.len(), config.fisher_cap);
                let raw = compute_fisher(pair.teacher(), idx.iter().map(|&k| bench.targets[pool[k].0].train.image(pool[k].1)))?;
                let adjusted = normalize_clip(&raw, config.lambda1, config.lambda2, config.fisher_norm_scope)?;
                let f = FisherCoefficients {
                    raw,
                    adjusted,
                    computed_on: domain.clone(),
                    lambda1: config.lambda1,
                    lambda2: config.lambda2,
                    scope: config.fisher_norm_scope,
                    samples: idx.len(),
                };
                let n = f.raw.iter().map(Vec::len).sum::<usize>() as f64;
                let (at_lambda1, at_lambda2, _) = f.saturation();
                log.push(Event::FisherComputed {
                    iteration: it,
                    domain: domain.clone(),
                    samples: f.samples,
                    raw_mean: f.raw.iter().flatten().sum::<f64>() / n,
                    raw_max: f.raw.iter().flatten().fold(0.0, |m: f64, &v| m.max(v)),
                    at_lambda1,
                    at_lambda2,
                });
                fisher = Some(f);
            }
            epoch += 1;
            queue = epoch_queue(&stream, bench, &mut order_rng);
            queue_pos = 0;
        }
        let is_last = it + 1 == max_iter;
        if !evaluated && ((config.eval_every > 0 && (it + 1) % config.eval_every == 0) || is_last) {
            let s = evaluate(pair.teacher(), &eval_targets(bench))?;
            push_eval(&mut log, it, epoch, &domain, &s);
            last_eval = Some((it, s));
        }
    }

    let summary = match last_eval {
        Some((_, s)) => s,
        None => evaluate(pair.teacher(), &eval_targets(bench))?,
    };
    let (student, teacher) = pair.into_parts();
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: model_config,
            iteration: max_iter,
            sets: vec![("teacher".into(), teacher), ("student".into(), student)],
        },
        summary,
        log,
    })
}

fn push_eval(log: &mut RunLog, iteration: usize, epoch: usize, active: &str, s: &EvalSummary) {
    log.push(Event::Eval {
        iteration,
        epoch,
        active: active.to_string(),
        reports: s.reports.clone(),
        avg_miou: s.avg_miou,
    });
}
