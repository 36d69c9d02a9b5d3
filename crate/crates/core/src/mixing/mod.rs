//! Domain bridges: source classes pasted into target images.
//!
//! [`classmix`] pastes the selected source classes in place. [`cgmix`] first
//! draws geometric variants of the source sample and keeps the one whose
//! pasted region is surrounded, in the target pseudo-labels, by the class
//! mix most similar (cosine) to what surrounds it in the source.

mod geometry;
mod pgm;

pub use geometry::{apply_transform, generate_candidates, Candidate, GeoTransform};
pub use pgm::write_label_triptych;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor, IGNORE_LABEL};

/// Parameters of the context-guided placement search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub n_aug: usize,
    /// Std of the Gaussian whose support defines the neighbour ring.
    pub sigma: f64,
    /// Half-width of the truncated Gaussian kernel.
    pub radius: usize,
    pub flip_prob: f64,
    /// Largest translation as a fraction of each image side.
    pub max_shift: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            n_aug: 10,
            sigma: 1.0,
            radius: 2,
            flip_prob: 0.5,
            max_shift: 0.25,
            scale_min: 0.8,
            scale_max: 1.25,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_aug == 0 {
            return Err(Error::config("n_aug must be at least 1"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config(format!("sigma {} must be positive", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(0.0..=1.0).contains(&self.max_shift) {
            return Err(Error::config("flip_prob and max_shift must lie in [0, 1]"));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::config("scale range must be positive and ordered"));
        }
        Ok(())
    }
}

/// Binary `H x W` mask, stored as 0/1 bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_bools(height: usize, width: usize, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        let data: Vec<u8> = bits.into_iter().map(u8::from).collect();
        if data.len() != height * width {
            return Err(Error::shape(format!("mask needs {} entries, got {}", height * width, data.len())));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Pixels whose label belongs to the selected classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMask {
    pub mask: BinaryMask,
    pub selected_classes: Vec<u8>,
}

impl ClassMask {
    pub fn from_label(label: &LabelMap, classes: &[u8]) -> Self {
        let mut member = [false; 256];
        for &c in classes {
            member[c as usize] = true;
        }
        member[IGNORE_LABEL as usize] = false;
        let mut selected = classes.to_vec();
        selected.sort_unstable();
        selected.dedup();
        ClassMask {
            mask: BinaryMask {
                height: label.height(),
                width: label.width(),
                data: label.data().iter().map(|&v| member[v as usize] as u8).collect(),
            },
            selected_classes: selected,
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        ClassMask {
            mask: BinaryMask::zeros(height, width),
            selected_classes: Vec::new(),
        }
    }
}

/// Ring of pixels just outside a [`ClassMask`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborMask {
    pub mask: BinaryMask,
    pub source_mask: ClassMask,
}

/// L1-normalised class histogram, or all zeros for an empty region.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector {
    pub hist: Vec<f64>,
}

impl ContextVector {
    pub fn is_zero(&self) -> bool {
        self.hist.iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    ClassMix,
    CgMix,
}

/// A mixed image and label map plus the mask that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Bridge {
    pub image: Tensor,
    pub label: LabelMap,
    /// 1 where pixels come from the (possibly transformed) source.
    pub mask_used: ClassMask,
    pub provenance: Provenance,
    pub chosen_candidate: Option<usize>,
}

/// Picks `ceil(P / 2)` of the `P` classes present in `label`, uniformly at
/// random among subsets of that size. Returned sorted.
pub fn select_classes<R: Rng + ?Sized>(label: &LabelMap, rng: &mut R) -> Vec<u8> {
    let present = label.classes_present();
    let k = present.len().div_ceil(2);
    let mut chosen: Vec<u8> = present.choose_multiple(rng, k).copied().collect();
    chosen.sort_unstable();
    chosen
}

fn check_pair(image: &Tensor, label: &LabelMap, what: &str) -> Result<(usize, usize)> {
    let (c, h, w) = image.dims3(what)?;
    if c != 3 || label.height() != h || label.width() != w {
        return Err(Error::shape(format!(
            "{what}: image {:?} does not match label {}x{}",
            image.shape(),
            label.height(),
            label.width()
        )));
    }
    Ok((h, w))
}

/// `mask * pasted + (1 - mask) * target` for both image and labels.
pub fn compose(
    pasted_image: &Tensor,
    pasted_label: &LabelMap,
    mask: &ClassMask,
    target_image: &Tensor,
    target_label: &LabelMap,
) -> Result<(Tensor, LabelMap)> {
    let (h, w) = check_pair(pasted_image, pasted_label, "pasted sample")?;
    if check_pair(target_image, target_label, "target sample")? != (h, w)
        || mask.mask.height != h
        || mask.mask.width != w
    {
        return Err(Error::shape("bridge inputs disagree in spatial size"));
    }
    let hw = h * w;
    let m = mask.mask.data();
    let mut image = target_image.clone();
    let mut label = target_label.clone();
    for p in (0..hw).filter(|&p| m[p] != 0) {
        for ch in 0..3 {
            image.data_mut()[ch * hw + p] = pasted_image.data()[ch * hw + p];
        }
        label.data_mut()[p] = pasted_label.data()[p];
    }
    Ok((image, label))
}

/// Pastes the pixels of `classes` from the source sample into the target.
pub fn classmix(
    source_image: &Tensor,
    source_label: &LabelMap,
    target_image: &Tensor,
    target_pseudo: &LabelMap,
    classes: &[u8],
) -> Result<Bridge> {
    let mask = ClassMask::from_label(source_label, classes);
    let (image, label) = compose(source_image, source_label, &mask, target_image, target_pseudo)?;
    Ok(Bridge {
        image,
        label,
        mask_used: mask,
        provenance: Provenance::ClassMix,
        chosen_candidate: None,
    })
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// `1[G(mask) > 0] - mask` with a separable zero-padded truncated Gaussian.
pub fn neighbor_mask(class_mask: &ClassMask, sigma: f64, radius: usize) -> NeighborMask {
    let (h, w) = (class_mask.mask.height, class_mask.mask.width);
    let kernel = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let src: Vec<f64> = class_mask.mask.data.iter().map(|&v| v as f64).collect();
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let sx = x as isize + i as isize - r;
                if sx >= 0 && (sx as usize) < w {
                    acc += kv * src[y * w + sx as usize];
                }
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut data = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let sy = y as isize + i as isize - r;
                if sy >= 0 && (sy as usize) < h {
                    acc += kv * horiz[sy as usize * w + x];
                }
            }
            let inside = class_mask.mask.data[y * w + x] != 0;
            data[y * w + x] = (acc > 0.0 && !inside) as u8;
        }
    }
    NeighborMask {
        mask: BinaryMask { height: h, width: w, data },
        source_mask: class_mask.clone(),
    }
}

/// Class histogram of `label` under `mask`, L1-normalised.
pub fn context_vector(label: &LabelMap, mask: &BinaryMask, num_classes: usize) -> ContextVector {
    let mut hist = vec![0.0; num_classes];
    for (&l, &m) in label.data().iter().zip(&mask.data) {
        if m != 0 && (l as usize) < num_classes {
            hist[l as usize] += 1.0;
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|v| *v /= total);
    }
    ContextVector { hist }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &ContextVector, b: &ContextVector) -> f64 {
    let dot: f64 = a.hist.iter().zip(&b.hist).map(|(x, y)| x * y).sum();
    let na = a.hist.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.hist.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Context-guided placement over precomputed candidates. Returns the bridge
/// and the similarity of every candidate.
pub fn cgmix_with_candidates(
    source_label: &LabelMap,
    target_image: &Tensor,
    target_pseudo: &LabelMap,
    classes: &[u8],
    candidates: &[Candidate],
    num_classes: usize,
    config: &MixConfig,
) -> Result<(Bridge, Vec<f64>)> {
    let (h, w) = check_pair(target_image, target_pseudo, "target sample")?;
    if classes.is_empty() || candidates.is_empty() {
        return Ok((
            Bridge {
                image: target_image.clone(),
                label: target_pseudo.clone(),
                mask_used: ClassMask::empty(h, w),
                provenance: Provenance::CgMix,
                chosen_candidate: None,
            },
            Vec::new(),
        ));
    }
    let source_mask = ClassMask::from_label(source_label, classes);
    let ring = neighbor_mask(&source_mask, config.sigma, config.radius);
    let c_s = context_vector(source_label, &ring.mask, num_classes);

    let sims: Vec<f64> = candidates
        .iter()
        .map(|cand| {
            let ring = neighbor_mask(&cand.mask, config.sigma, config.radius);
            cosine(&c_s, &context_vector(target_pseudo, &ring.mask, num_classes))
        })
        .collect();
    let mut best = 0;
    for (i, &s) in sims.iter().enumerate().skip(1) {
        if s > sims[best] {
            best = i;
        }
    }
    let chosen = &candidates[best];
    let (image, label) = compose(&chosen.image, &chosen.label, &chosen.mask, target_image, target_pseudo)?;
    Ok((
        Bridge {
            image,
            label,
            mask_used: chosen.mask.clone(),
            provenance: Provenance::CgMix,
            chosen_candidate: Some(best),
        },
        sims,
    ))
}

/// Draws `config.n_aug` geometric variants of the source sample and pastes
/// the one whose neighbour-ring context best matches the source's.
#[allow(clippy::too_many_arguments)]
pub fn cgmix<R: Rng + ?Sized>(
    source_image: &Tensor,
    source_label: &LabelMap,
    target_image: &Tensor,
    target_pseudo: &LabelMap,
    classes: &[u8],
    num_classes: usize,
    config: &MixConfig,
    rng: &mut R,
) -> Result<Bridge> {
    check_pair(source_image, source_label, "source sample")?;
    if classes.is_empty() {
        return cgmix_with_candidates(source_label, target_image, target_pseudo, classes, &[], num_classes, config)
            .map(|(b, _)| b);
    }
    let candidates = generate_candidates(source_image, source_label, classes, config, rng)?;
    cgmix_with_candidates(source_label, target_image, target_pseudo, classes, &candidates, num_classes, config)
        .map(|(b, _)| b)
}
