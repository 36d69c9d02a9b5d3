#![allow(dead_code)]

use mtda::segnet::{self, ParamSet, SegNetConfig};
use mtda::tensor::{ops, LabelMap, Tensor, IGNORE_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_REL_TOL: f64 = 1e-4;

/// One random network, input, target and optional pixel weights.
pub struct GradCase {
    pub params: ParamSet,
    pub image: Tensor,
    pub target: LabelMap,
    pub weights: Option<Vec<f64>>,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> GradCase {
    let depth = rng.gen_range(1..=3);
    let hidden: Vec<usize> = (1..depth).map(|_| rng.gen_range(2..=5)).collect();
    let classes = rng.gen_range(2..=5);
    let config = SegNetConfig {
        kernel: if rng.gen_bool(0.75) { 3 } else { 1 },
        init_seed: rng.gen(),
        init_scale: rng.gen_range(0.5..1.5),
        ..SegNetConfig::with_classes(&hidden, classes)
    };
    let mut params = segnet::init(&config).unwrap();
    // Non-zero biases so every bias gradient path is exercised.
    for p in params.iter_mut() {
        if p.name().ends_with("bias") {
            for v in p.value_mut().data_mut() {
                *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let (h, w) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
    let image = Tensor::from_fn(&[3, h, w], |_| rng.gen_range(-1.0..1.0));
    let labels = (0..h * w)
        .map(|_| if rng.gen_bool(0.1) { IGNORE_LABEL } else { rng.gen_range(0..classes) as u8 })
        .collect();
    let target = LabelMap::new(h, w, labels).unwrap();
    let weights = rng.gen_bool(0.5).then(|| (0..h * w).map(|_| rng.gen_range(0.0..2.0)).collect());
    GradCase {
        params,
        image,
        target,
        weights,
    }
}

impl GradCase {
    pub fn loss(&self, params: &ParamSet) -> f64 {
        segnet::loss_and_grads(params, &self.image, &self.target, self.weights.as_deref())
            .unwrap()
            .0
    }

    /// Sign pattern of every hidden pre-activation.
    pub fn relu_pattern(&self, params: &ParamSet) -> Vec<bool> {
        let layers = params.len() / 2;
        let mut x = self.image.clone();
        let mut pattern = Vec::new();
        for l in 0..layers {
            let w = params.get(2 * l).unwrap().value();
            let b = params.get(2 * l + 1).unwrap().value();
            x = ops::conv2d(&x, w, b).unwrap();
            if l + 1 < layers {
                pattern.extend(x.data().iter().map(|&v| v > 0.0));
                x = ops::relu(&x);
            }
        }
        pattern
    }

    fn shifted(&self, dir: &[f64], step: f64) -> ParamSet {
        let mut p = self.params.clone_params();
        let flat: Vec<f64> = p.flatten().iter().zip(dir).map(|(v, d)| v + step * d).collect();
        p.load_flat(&flat).unwrap();
        p
    }

    /// Analytic and central-difference directional derivative along `dir`.
    /// `None` when a ReLU changes sign inside the stencil, where the loss
    /// is not differentiable and the difference quotient is meaningless.
    pub fn directional(&self, dir: &[f64]) -> Option<(f64, f64)> {
        let plus = self.shifted(dir, FD_STEP);
        let minus = self.shifted(dir, -FD_STEP);
        let base = self.relu_pattern(&self.params);
        if self.relu_pattern(&plus) != base || self.relu_pattern(&minus) != base {
            return None;
        }
        let (_, grads) =
            segnet::loss_and_grads(&self.params, &self.image, &self.target, self.weights.as_deref()).unwrap();
        let analytic: f64 = grads.iter().flatten().zip(dir).map(|(g, d)| g * d).sum();
        let numeric = (self.loss(&plus) - self.loss(&minus)) / (2.0 * FD_STEP);
        Some((analytic, numeric))
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
}

pub struct GradSuite {
    pub cases: usize,
    pub redrawn: usize,
    pub max_rel_err: f64,
}

/// Checks `n` random pairs along a random direction each.
pub fn gradient_suite(n: usize, seed: u64) -> GradSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = GradSuite {
        cases: 0,
        redrawn: 0,
        max_rel_err: 0.0,
    };
    while suite.cases < n {
        let case = random_case(&mut rng);
        let dir: Vec<f64> = (0..case.params.total_len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        match case.directional(&dir) {
            Some((a, num)) => {
                suite.cases += 1;
                suite.max_rel_err = suite.max_rel_err.max(rel_err(a, num));
            }
            None => suite.redrawn += 1,
        }
    }
    suite
}

/// Random parameter sets of one random architecture, for pairwise tests.
pub fn random_param_pair(rng: &mut ChaCha8Rng) -> (ParamSet, ParamSet) {
    let hidden: Vec<usize> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(1..6)).collect();
    let config = SegNetConfig {
        kernel: if rng.gen_bool(0.5) { 3 } else { 1 },
        init_seed: rng.gen(),
        ..SegNetConfig::with_classes(&hidden, rng.gen_range(2..8))
    };
    let a = segnet::init(&config).unwrap();
    let mut b = a.clone_params();
    let flat: Vec<f64> = b
        .flatten()
        .iter()
        .map(|_| StandardNormal.sample(rng))
        .collect::<Vec<f64>>();
    b.load_flat(&flat).unwrap();
    (a, b)
}

/// A run small enough for debug-mode tests: 16x16 images, four training
/// samples per domain, two iterations per target epoch.
pub fn tiny_config(targets: usize) -> mtda::harness::ExperimentConfig {
    let mut generator = mtda::scenegen::GeneratorConfig::street(targets);
    generator.height = 16;
    generator.width = 16;
    generator.train_size = 4;
    generator.val_size = 2;
    mtda::harness::ExperimentConfig {
        generator,
        model: SegNetConfig::with_classes(&[4], 7),
        optim: mtda::harness::OptimConfig {
            base_lr: 0.01,
            max_iter: 2 * 3 * targets,
            ..Default::default()
        },
        batch_size: 2,
        eval_every: 0,
        eval_on_epoch_end: false,
        ema_alpha: 0.99,
        fisher_cap: Some(2),
        ..mtda::harness::ExperimentConfig::default()
    }
}

/// Blocky random labels so that class masks have real regions and rings.
pub fn random_label_map(h: usize, w: usize, classes: u8, rng: &mut ChaCha8Rng) -> LabelMap {
    let bh = rng.gen_range(1..5);
    let bw = rng.gen_range(1..5);
    let cols = w / bw + 1;
    let blocks: Vec<u8> = (0..(h / bh + 1) * cols).map(|_| rng.gen_range(0..classes)).collect();
    let data = (0..h * w).map(|p| blocks[(p / w / bh) * cols + (p % w) / bw]).collect();
    LabelMap::new(h, w, data).unwrap()
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
}

/// Pixel-by-pixel provenance check of a bridge: inside `mask` every channel
/// and the label must come from the pasted sample, outside from the target,
/// and the mask must be exactly the pasted label's selected classes.
pub fn audit_bridge(
    bridge: &mtda::mixing::Bridge,
    pasted: (&Tensor, &LabelMap),
    target: (&Tensor, &LabelMap),
    classes: &[u8],
) -> Result<(), String> {
    let (h, w) = (target.1.height(), target.1.width());
    let hw = h * w;
    let mask = &bridge.mask_used.mask;
    for p in 0..hw {
        let inside = mask.data()[p] != 0;
        let expect_inside = classes.contains(&pasted.1.data()[p]);
        if inside != expect_inside {
            return Err(format!("mask bit at pixel {p} is {inside}, selected-class test says {expect_inside}"));
        }
        let (img, lab) = if inside { pasted } else { target };
        if bridge.label.data()[p] != lab.data()[p] {
            return Err(format!("label at pixel {p} has wrong provenance"));
        }
        for ch in 0..3 {
            if bridge.image.data()[ch * hw + p].to_bits() != img.data()[ch * hw + p].to_bits() {
                return Err(format!("channel {ch} at pixel {p} has wrong provenance"));
            }
        }
    }
    Ok(())
}

/// Pixels within Chebyshev distance `radius` of the mask, excluding the mask.
pub fn oracle_ring(mask: &[u8], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            mask[p] == 0
                && (-r..=r).any(|dy| {
                    (-r..=r).any(|dx| {
                        let (sy, sx) = (y + dy, x + dx);
                        sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize && mask[(sy * w as isize + sx) as usize] != 0
                    })
                })
        })
        .collect()
}

fn ring_counts(label: &LabelMap, ring: &[bool], classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; classes];
    for (&l, &r) in label.data().iter().zip(ring) {
        if r && (l as usize) < classes {
            counts[l as usize] += 1;
        }
    }
    counts
}

/// Exhaustive argmax of context cosine similarity in exact integer
/// arithmetic; ties go to the lowest index.
pub fn oracle_best_candidate(
    source_label: &LabelMap,
    classes: &[u8],
    candidate_masks: &[Vec<u8>],
    target_pseudo: &LabelMap,
    num_classes: usize,
    radius: usize,
) -> usize {
    let (h, w) = (source_label.height(), source_label.width());
    let src_mask: Vec<u8> = source_label.data().iter().map(|l| classes.contains(l) as u8).collect();
    let cs = ring_counts(source_label, &oracle_ring(&src_mask, h, w, radius), num_classes);
    let cs_sq: u128 = cs.iter().map(|&v| (v as u128) * (v as u128)).sum();
    // cos^2 = dot^2 / (|cs|^2 |ct|^2); |cs|^2 is shared, so compare dot^2 / |ct|^2.
    let score = |m: &Vec<u8>| -> (u128, u128) {
        let ct = ring_counts(target_pseudo, &oracle_ring(m, h, w, radius), num_classes);
        let dot: u128 = cs.iter().zip(&ct).map(|(&a, &b)| a as u128 * b as u128).sum();
        let ct_sq: u128 = ct.iter().map(|&v| (v as u128) * (v as u128)).sum();
        if cs_sq == 0 || ct_sq == 0 {
            (0, 1)
        } else {
            (dot * dot, ct_sq)
        }
    };
    let mut best = 0;
    let mut best_score = score(&candidate_masks[0]);
    for (i, m) in candidate_masks.iter().enumerate().skip(1) {
        let s = score(m);
        if s.0 * best_score.1 > best_score.0 * s.1 {
            best = i;
            best_score = s;
        }
    }
    best
}
