//! Student/teacher pair, pseudo-labels and the losses the student trains on.

use crate::error::{Error, Result};
use crate::mixing::Bridge;
use crate::segnet::{self, ParamSet};
use crate::tensor::{ops, sgd_step, LabelMap, OptimState, Tensor};

/// Default confidence threshold for optional bridge-loss weighting.
pub const CONFIDENCE_THRESHOLD: f64 = 0.968;

/// The trained student and its slowly moving teacher.
///
/// The teacher is only reachable mutably through the EMA updates, and the
/// student only through [`TeacherStudent::sgd_step`]; both are counted.
#[derive(Debug)]
pub struct TeacherStudent {
    student: ParamSet,
    teacher: ParamSet,
    pub alpha: f64,
    teacher_updates: usize,
    student_steps: usize,
}

/// Per-element blend weights for the teacher update.
pub(crate) enum BlendWeights<'a> {
    Scalar(f64),
    PerElement(&'a [Vec<f64>]),
}

impl TeacherStudent {
    /// Teacher starts as an exact copy of the student.
    pub fn new(student: ParamSet, alpha: f64) -> Result<Self> {
        let teacher = student.clone_params();
        TeacherStudent::from_parts(student, teacher, alpha)
    }

    pub fn from_parts(student: ParamSet, teacher: ParamSet, alpha: f64) -> Result<Self> {
        student
            .check_congruent(&teacher)
            .map_err(|e| Error::contract(format!("teacher/student mismatch: {e}")))?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("EMA coefficient {alpha} outside [0, 1]")));
        }
        Ok(TeacherStudent {
            student,
            teacher,
            alpha,
            teacher_updates: 0,
            student_steps: 0,
        })
    }

    pub fn student(&self) -> &ParamSet {
        &self.student
    }

    pub fn teacher(&self) -> &ParamSet {
        &self.teacher
    }

    pub fn teacher_updates(&self) -> usize {
        self.teacher_updates
    }

    pub fn student_steps(&self) -> usize {
        self.student_steps
    }

    pub fn into_parts(self) -> (ParamSet, ParamSet) {
        (self.student, self.teacher)
    }

    /// Replaces the student's gradients.
    pub fn set_student_grads(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        self.student.clear_grads();
        self.student.accumulate_grads(grads, 1.0)
    }

    /// Optimiser step on the student; the teacher is never touched here.
    pub fn sgd_step(&mut self, state: &mut OptimState, lr: f64) -> Result<()> {
        sgd_step(&mut self.student, state, lr)?;
        self.student.clear_grads();
        self.student_steps += 1;
        Ok(())
    }

    /// `teacher <- alpha * teacher + (1 - alpha) * student`.
    pub fn ema_update(&mut self) -> Result<()> {
        self.blend(BlendWeights::Scalar(self.alpha))
    }

    pub(crate) fn blend(&mut self, weights: BlendWeights<'_>) -> Result<()> {
        self.teacher.check_congruent(&self.student)?;
        if let BlendWeights::PerElement(w) = &weights {
            if w.len() != self.teacher.len()
                || w.iter().zip(self.teacher.iter()).any(|(c, p)| c.len() != p.value().len())
            {
                return Err(Error::shape("EMA coefficients do not mirror the parameter set"));
            }
        }
        for (i, (t, s)) in self.teacher.iter_mut().zip(self.student.iter()).enumerate() {
            let s = s.value().data();
            let t = t.value_mut().data_mut();
            match &weights {
                BlendWeights::Scalar(a) => {
                    for (tv, sv) in t.iter_mut().zip(s) {
                        *tv = a * *tv + (1.0 - a) * sv;
                    }
                }
                BlendWeights::PerElement(w) => {
                    for ((tv, sv), a) in t.iter_mut().zip(s).zip(&w[i]) {
                        *tv = a * *tv + (1.0 - a) * sv;
                    }
                }
            }
        }
        self.teacher_updates += 1;
        Ok(())
    }
}

/// Teacher prediction used as a training target.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub label: LabelMap,
    /// Max softmax probability per pixel.
    pub confidence: Vec<f64>,
}

impl PseudoLabel {
    /// Fraction of pixels whose confidence exceeds `threshold`.
    pub fn confident_fraction(&self, threshold: f64) -> f64 {
        let n = self.confidence.iter().filter(|&&c| c > threshold).count();
        n as f64 / self.confidence.len().max(1) as f64
    }
}

/// Per-pixel argmax of the teacher's softmax, lowest class on ties.
pub fn pseudo_label(teacher: &ParamSet, image: &Tensor) -> Result<PseudoLabel> {
    let logits = segnet::forward(teacher, image)?;
    pseudo_label_from_logits(&logits)
}

pub fn pseudo_label_from_logits(logits: &Tensor) -> Result<PseudoLabel> {
    let (label, confidence) = ops::pixel_argmax(logits)?;
    Ok(PseudoLabel { label, confidence })
}

/// Loss value together with its gradient for every student parameter.
#[derive(Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Pixel cross-entropy of the student on a labelled source image.
pub fn supervised_loss(student: &ParamSet, image: &Tensor, label: &LabelMap) -> Result<f64> {
    let logits = segnet::forward(student, image)?;
    Ok(ops::softmax_ce_with_grad(&logits, label, None)?.0)
}

pub fn supervised_loss_grad(student: &ParamSet, image: &Tensor, label: &LabelMap) -> Result<LossGrad> {
    let (loss, grads) = segnet::loss_and_grads(student, image, label, None)?;
    Ok(LossGrad { loss, grads })
}

/// Pixel cross-entropy of the student on a target image against teacher
/// pseudo-labels.
pub fn unsupervised_loss_grad(student: &ParamSet, image: &Tensor, pseudo: &PseudoLabel) -> Result<LossGrad> {
    let (loss, grads) = segnet::loss_and_grads(student, image, &pseudo.label, None)?;
    Ok(LossGrad { loss, grads })
}

/// Weights for a confidence-weighted bridge loss: pasted pixels weigh 1,
/// pseudo-labelled pixels weigh the fraction of confident target pixels.
pub fn bridge_pixel_weights(bridge: &Bridge, pseudo: &PseudoLabel, threshold: f64) -> Vec<f64> {
    let q = pseudo.confident_fraction(threshold);
    bridge
        .mask_used
        .mask
        .data()
        .iter()
        .map(|&m| if m != 0 { 1.0 } else { q })
        .collect()
}

/// Pixel cross-entropy of the student on a bridge.
pub fn bridging_loss(student: &ParamSet, bridge: &Bridge, weights: Option<&[f64]>) -> Result<f64> {
    let logits = segnet::forward(student, &bridge.image)?;
    Ok(ops::softmax_ce_with_grad(&logits, &bridge.label, weights)?.0)
}

pub fn bridging_loss_grad(student: &ParamSet, bridge: &Bridge, weights: Option<&[f64]>) -> Result<LossGrad> {
    let (loss, grads) = segnet::loss_and_grads(student, &bridge.image, &bridge.label, weights)?;
    Ok(LossGrad { loss, grads })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mixing::{classmix, cgmix, MixConfig};
    use crate::segnet::{init, SegNetConfig};

    fn small_net(seed: u64) -> ParamSet {
        init(&SegNetConfig {
            init_seed: seed,
            ..SegNetConfig::with_classes(&[4], 7)
        })
        .unwrap()
    }

    fn zero_net() -> ParamSet {
        init(&SegNetConfig {
            init_scale: 0.0,
            ..SegNetConfig::with_classes(&[4], 7)
        })
        .unwrap()
    }

    /// Net whose logits are `30 * onehot(class)` everywhere.
    fn constant_net(class: usize) -> ParamSet {
        let mut p = zero_net();
        let last = p.by_name_mut("conv1.bias").unwrap();
        last.value_mut().data_mut()[class] = 30.0;
        p
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn supervised_loss_examples() {
        let x = image(3, 3, 0);
        assert!(supervised_loss(&constant_net(4), &x, &LabelMap::filled(3, 3, 4)).unwrap() < 1e-9);
        let l = supervised_loss(&zero_net(), &x, &LabelMap::filled(3, 3, 2)).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn supervised_loss_matches_hand_computation() {
        // A 1x1 conv net with identity-ish weights makes logits computable by hand.
        let mut p = ParamSet::new();
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data_mut()[0] = 1.0; // class 0 <- R
        k.data_mut()[4] = 2.0; // class 1 <- 2 G
        k.data_mut()[8] = -1.0; // class 2 <- -B
        p.push("conv0.weight", k).unwrap();
        p.push("conv0.bias", Tensor::new(vec![3], vec![0.0, 0.0, 0.5]).unwrap()).unwrap();
        let x = Tensor::new(vec![3, 2, 2], vec![0.1, 0.9, 0.4, 0.0, 0.3, 0.2, 0.5, 0.7, 0.6, 0.1, 0.8, 0.4]).unwrap();
        let y = LabelMap::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        let mut total = 0.0;
        for px in 0..4 {
            let r = x.data()[px];
            let g = x.data()[4 + px];
            let b = x.data()[8 + px];
            let logits = [r, 2.0 * g, -b + 0.5];
            let lse = logits.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
            total += lse - logits[y.data()[px] as usize];
        }
        let expected = total / 4.0;
        assert!((supervised_loss(&p, &x, &y).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_teacher_pseudo_labels_class_zero() {
        let pl = pseudo_label(&zero_net(), &image(5, 4, 1)).unwrap();
        assert!(pl.label.data().iter().all(|&v| v == 0));
        assert!(pl.confidence.iter().all(|&c| (c - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn confident_teacher_pseudo_labels() {
        let pl = pseudo_label(&constant_net(5), &image(4, 4, 2)).unwrap();
        assert!(pl.label.data().iter().all(|&v| v == 5));
        assert!(pl.confidence.iter().all(|&c| c > 1.0 - 1e-11));
    }

    #[test]
    fn pseudo_label_matches_scan_and_is_shift_invariant() {
        let net = small_net(3);
        let x = image(6, 5, 3);
        let logits = segnet::forward(&net, &x).unwrap();
        let pl = pseudo_label(&net, &x).unwrap();
        let hw = 30;
        for p in 0..hw {
            let mut best = 0;
            for c in 1..7 {
                if logits.data()[c * hw + p] > logits.data()[best * hw + p] {
                    best = c;
                }
            }
            assert_eq!(pl.label.data()[p] as usize, best);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shift: Vec<f64> = (0..hw).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut shifted = logits.clone();
        for c in 0..7 {
            for p in 0..hw {
                shifted.data_mut()[c * hw + p] += shift[p];
            }
        }
        assert_eq!(pseudo_label_from_logits(&shifted).unwrap().label, pl.label);
    }

    #[test]
    fn full_mask_bridge_equals_supervised() {
        let net = small_net(5);
        let (xs, xt) = (image(6, 6, 5), image(6, 6, 6));
        let ys = LabelMap::new(6, 6, (0..36).map(|i| (i % 3) as u8).collect()).unwrap();
        let yt = LabelMap::filled(6, 6, 6);
        let b = classmix(&xs, &ys, &xt, &yt, &[0, 1, 2]).unwrap();
        assert_eq!(bridging_loss(&net, &b, None).unwrap(), supervised_loss(&net, &xs, &ys).unwrap());
        let b = classmix(&xs, &ys, &xt, &yt, &[]).unwrap();
        assert_eq!(bridging_loss(&net, &b, None).unwrap(), supervised_loss(&net, &xt, &yt).unwrap());
    }

    #[test]
    fn mixed_bridge_loss_decomposes_by_region() {
        let net = small_net(7);
        let (xs, xt) = (image(6, 6, 8), image(6, 6, 9));
        let ys = LabelMap::new(6, 6, (0..36).map(|i| (i / 6 % 4) as u8).collect()).unwrap();
        let yt = LabelMap::new(6, 6, (0..36).map(|i| (i % 5) as u8).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b = cgmix(&xs, &ys, &xt, &yt, &[1, 3], 7, &MixConfig::default(), &mut rng).unwrap();
        let logits = segnet::forward(&net, &b.image).unwrap();
        let hw = 36;
        let pixel_ce = |p: usize| {
            let t = b.label.data()[p] as usize;
            let lse = (0..7).map(|c| logits.data()[c * hw + p].exp()).sum::<f64>().ln();
            lse - logits.data()[t * hw + p]
        };
        let (mut pasted, mut kept) = (0.0, 0.0);
        for p in 0..hw {
            if b.mask_used.mask.data()[p] == 1 {
                pasted += pixel_ce(p);
            } else {
                kept += pixel_ce(p);
            }
        }
        let expected = (pasted + kept) / hw as f64;
        assert!((bridging_loss(&net, &b, None).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn confidence_weights_apply_only_to_pseudo_pixels() {
        let xt = image(4, 4, 11);
        let pl = pseudo_label(&zero_net(), &xt).unwrap();
        let ys = LabelMap::new(4, 4, (0..16).map(|i| (i % 2) as u8).collect()).unwrap();
        let b = classmix(&image(4, 4, 12), &ys, &xt, &pl.label, &[1]).unwrap();
        let w = bridge_pixel_weights(&b, &pl, CONFIDENCE_THRESHOLD);
        for p in 0..16 {
            assert_eq!(w[p], if p % 2 == 1 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn ema_examples() {
        let student = small_net(1);
        let mut pair = TeacherStudent::from_parts(student.clone_params(), small_net(2), 1.0).unwrap();
        let before = pair.teacher().flatten();
        pair.ema_update().unwrap();
        assert_eq!(pair.teacher().flatten(), before);
        pair.alpha = 0.0;
        pair.ema_update().unwrap();
        assert_eq!(pair.teacher().flatten(), student.flatten());

        let zeros = zero_net();
        let mut twos = zero_net();
        for p in twos.iter_mut() {
            p.value_mut().data_mut().iter_mut().for_each(|v| *v = 2.0);
        }
        let mut pair = TeacherStudent::from_parts(twos, zeros, 0.5).unwrap();
        pair.ema_update().unwrap();
        assert!(pair.teacher().flatten().iter().all(|&v| v == 1.0));
        assert_eq!(pair.teacher_updates(), 1);
    }

    #[test]
    fn ema_rejects_incongruent_sets() {
        let a = small_net(1);
        let b = init(&SegNetConfig::with_classes(&[5], 7)).unwrap();
        assert!(matches!(TeacherStudent::from_parts(a, b, 0.9), Err(Error::Contract(_))));
    }

    #[test]
    fn ema_result_lies_between_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let alpha = rng.gen_range(0.0..=1.0);
            let s = small_net(rng.gen());
            let t = small_net(rng.gen());
            let (sf, tf) = (s.flatten(), t.flatten());
            let mut pair = TeacherStudent::from_parts(s, t, alpha).unwrap();
            pair.ema_update().unwrap();
            for ((v, a), b) in pair.teacher().flatten().iter().zip(&sf).zip(&tf) {
                assert!(*v >= a.min(*b) - 1e-15 && *v <= a.max(*b) + 1e-15);
            }
        }
    }

    #[test]
    fn sgd_moves_only_the_student() {
        let mut pair = TeacherStudent::new(small_net(1), 0.99).unwrap();
        let teacher_before = pair.teacher().flatten();
        let x = image(4, 4, 14);
        let lg = supervised_loss_grad(pair.student(), &x, &LabelMap::filled(4, 4, 3)).unwrap();
        pair.set_student_grads(&lg.grads).unwrap();
        let mut st = OptimState::new(0.1, 0.9, 0.0, 0.9, 10).unwrap();
        pair.sgd_step(&mut st, 0.1).unwrap();
        assert_eq!(pair.teacher().flatten(), teacher_before);
        assert_ne!(pair.student().flatten(), teacher_before);
        assert_eq!((pair.student_steps(), pair.teacher_updates()), (1, 0));
    }
}
