//! Procedural street-scene-like segmentation data.
//!
//! A scene is drawn label-first: horizontal background bands (sky on top,
//! ground at the bottom, a fill class in between) and then placed blobs and
//! poles for the object classes. The image is rendered from the label map
//! through a per-domain palette, per-sample colour jitter, a domain-invariant
//! per-class luminance texture and pixel noise. Domains differ in palette,
//! noise and spatial layout while sharing the class set.

mod dataset;
mod profile;

pub use dataset::{load_dataset, save_dataset, Dataset, Sample, Split, DATASET_MAGIC};
pub use profile::{ClassLayout, DomainProfile, Placement};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

/// Class names of the default seven-class street benchmark, in index order.
pub const STREET_CLASSES: [&str; 7] = ["flat", "construction", "object", "nature", "sky", "human", "vehicle"];

/// Everything needed to regenerate a benchmark bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub base_seed: u64,
    pub source: DomainProfile,
    pub targets: Vec<DomainProfile>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::street(2)
    }
}

impl GeneratorConfig {
    /// Seven-class 64x64 street benchmark with `num_targets` shifted targets.
    pub fn street(num_targets: usize) -> Self {
        GeneratorConfig {
            num_classes: 7,
            height: 64,
            width: 64,
            train_size: 100,
            val_size: 32,
            base_seed: 0,
            source: DomainProfile::street_source(),
            targets: (0..num_targets).map(DomainProfile::street_target).collect(),
        }
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::config("at least one target domain is required"));
        }
        if self.num_classes < 2 || self.num_classes > 254 {
            return Err(Error::config(format!("num_classes {} outside [2, 254]", self.num_classes)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("image size must be positive"));
        }
        if self.train_size == 0 || self.val_size == 0 {
            return Err(Error::config("splits must be non-empty"));
        }
        let mut ids = vec![self.source.name.as_str()];
        for p in std::iter::once(&self.source).chain(&self.targets) {
            p.validate(self.num_classes)?;
        }
        for t in &self.targets {
            if ids.contains(&t.name.as_str()) {
                return Err(Error::config(format!("duplicate domain id '{}'", t.name)));
            }
            ids.push(&t.name);
        }
        Ok(())
    }

    /// Seed of sample `index` in the given domain/split. Every
    /// (domain, split) pair owns a disjoint block of `2^32` seeds.
    pub fn sample_seed(&self, domain: usize, split: Split, index: usize) -> u64 {
        let block = (domain as u64) * 2 + matches!(split, Split::Val) as u64;
        self.base_seed
            .wrapping_add(block << 32)
            .wrapping_add(index as u64)
    }
}

/// Train and validation splits of one domain.
#[derive(Debug)]
pub struct DomainData {
    pub train: Dataset,
    pub val: Dataset,
}

impl DomainData {
    pub fn domain_id(&self) -> &str {
        self.train.domain_id()
    }
}

#[derive(Debug)]
pub struct Benchmark {
    pub source: DomainData,
    pub targets: Vec<DomainData>,
}

impl Benchmark {
    pub fn target(&self, id: &str) -> Option<&DomainData> {
        self.targets.iter().find(|t| t.domain_id() == id)
    }

    pub fn target_ids(&self) -> Vec<String> {
        self.targets.iter().map(|t| t.domain_id().to_string()).collect()
    }
}

/// Draws one labelled scene. Pure in `(profile, seed, size)`.
pub fn generate_sample(profile: &DomainProfile, seed: u64, height: usize, width: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ profile.seed_offset.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let label = render_label(profile, height, width, &mut rng);
    let image = render_image(profile, &label, &mut rng);
    Sample::new(image, Some(label))
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn render_label(profile: &DomainProfile, h: usize, w: usize, rng: &mut ChaCha8Rng) -> LabelMap {
    let classes = &profile.layout;
    let fill = classes
        .iter()
        .position(|l| l.placement == Placement::Fill)
        .unwrap_or(0) as u8;
    let mut label = LabelMap::filled(h, w, fill);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Bands first so that objects occlude them.
    for (class, layout) in classes.iter().enumerate() {
        let is_top = match layout.placement {
            Placement::Top => true,
            Placement::Bottom => false,
            _ => continue,
        };
        let edge = clamp01(layout.band_mean + layout.band_std * std_normal.sample(rng));
        let amp = rng.gen_range(0.0..0.04);
        let freq = rng.gen_range(1.0..3.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for x in 0..w {
            let t = x as f64 / w as f64;
            let e = clamp01(edge + amp * (std::f64::consts::TAU * freq * t + phase).sin());
            let row = (e * h as f64).round() as usize;
            let rows = if is_top { 0..row.min(h) } else { row.min(h)..h };
            for y in rows {
                label.set(y, x, class as u8);
            }
        }
    }

    for (class, layout) in classes.iter().enumerate() {
        if !matches!(layout.placement, Placement::Blob | Placement::Pole) {
            continue;
        }
        let count = rng.gen_range(layout.count_min..=layout.count_max.max(layout.count_min));
        for _ in 0..count {
            let cy = clamp01(layout.band_mean + layout.band_std * std_normal.sample(rng)) * h as f64;
            let cx = rng.gen_range(0.0..1.0) * w as f64;
            let size = rng.gen_range(layout.size_min..=layout.size_max.max(layout.size_min)) * h as f64;
            match layout.placement {
                Placement::Blob => {
                    let ry = size * 0.5;
                    let rx = ry * rng.gen_range(0.7..1.6);
                    fill_ellipse(&mut label, cy, cx, ry, rx, class as u8);
                }
                Placement::Pole => {
                    // Poles stand on `cy` and rise by `size`.
                    let half_w = (size * 0.08).max(0.6);
                    fill_rect(&mut label, cy - size, cy, cx - half_w, cx + half_w, class as u8);
                }
                _ => unreachable!(),
            }
        }
    }
    label
}

fn fill_ellipse(label: &mut LabelMap, cy: f64, cx: f64, ry: f64, rx: f64, class: u8) {
    let (h, w) = (label.height() as isize, label.width() as isize);
    let y0 = ((cy - ry).floor() as isize).max(0);
    let y1 = ((cy + ry).ceil() as isize).min(h - 1);
    let x0 = ((cx - rx).floor() as isize).max(0);
    let x1 = ((cx + rx).ceil() as isize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dy = (y as f64 + 0.5 - cy) / ry.max(1e-9);
            let dx = (x as f64 + 0.5 - cx) / rx.max(1e-9);
            if dy * dy + dx * dx <= 1.0 {
                label.set(y as usize, x as usize, class);
            }
        }
    }
}

fn fill_rect(label: &mut LabelMap, top: f64, bottom: f64, left: f64, right: f64, class: u8) {
    let (h, w) = (label.height() as isize, label.width() as isize);
    let y0 = (top.round() as isize).max(0);
    let y1 = (bottom.round() as isize).min(h);
    let x0 = (left.round() as isize).max(0);
    let x1 = (right.round() as isize).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            label.set(y as usize, x as usize, class);
        }
    }
}

/// Domain-invariant luminance pattern of class `class` at pixel `(y, x)`,
/// in `[-1, 1]`.
pub fn class_texture(class: usize, y: usize, x: usize) -> f64 {
    let (y, x) = (y as i64, x as i64);
    match class % 7 {
        0 => if (y / 2) % 2 == 0 { 1.0 } else { -1.0 },
        1 => if (x / 3 + y / 3) % 2 == 0 { 1.0 } else { -1.0 },
        2 => 0.0,
        3 => {
            let hsh = (x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663)) & 0xff;
            hsh as f64 / 127.5 - 1.0
        }
        4 => 0.0,
        5 => if x % 2 == 0 { 1.0 } else { -1.0 },
        _ => if (x + y) % 2 == 0 { 1.0 } else { -1.0 },
    }
}

fn render_image(profile: &DomainProfile, label: &LabelMap, rng: &mut ChaCha8Rng) -> Tensor {
    let (h, w) = (label.height(), label.width());
    let hw = h * w;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let offsets: Vec<[f64; 3]> = profile
        .color_jitter
        .iter()
        .map(|&s| {
            let mut o = [0.0; 3];
            for v in &mut o {
                *v = s * std_normal.sample(rng);
            }
            o
        })
        .collect();
    let mut data = vec![0.0; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let class = label.get(y, x) as usize;
            let tex = profile.texture_amplitude * class_texture(class, y, x);
            for ch in 0..3 {
                let mut v = profile.palette[class][ch] + offsets[class][ch] + tex;
                if profile.noise_sigma > 0.0 {
                    v += profile.noise_sigma * std_normal.sample(rng);
                }
                // Round through f32 so that the on-disk format is lossless.
                data[ch * hw + y * w + x] = clamp01(v) as f32 as f64;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("3 x H x W")
}

fn build_split(config: &GeneratorConfig, domain: usize, profile: &DomainProfile, split: Split, count: usize) -> Result<Dataset> {
    let samples = (0..count)
        .map(|i| {
            let seed = config.sample_seed(domain, split, i);
            generate_sample(profile, seed, config.height, config.width)
        })
        .collect();
    Dataset::new(profile.name.clone(), split, config.num_classes, samples)
}

/// Generates the source domain (index 0) and every target domain, each with
/// a train and a val split. All splits carry labels; target labels exist
/// only for evaluation and audit.
pub fn build_benchmark(config: &GeneratorConfig) -> Result<Benchmark> {
    config.validate()?;
    let domain = |index: usize, profile: &DomainProfile| -> Result<DomainData> {
        Ok(DomainData {
            train: build_split(config, index, profile, Split::Train, config.train_size)?,
            val: build_split(config, index, profile, Split::Val, config.val_size)?,
        })
    };
    let source = domain(0, &config.source)?;
    let targets = config
        .targets
        .iter()
        .enumerate()
        .map(|(k, p)| domain(k + 1, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark { source, targets })
}

/// Per-class pixel frequencies over a collection of label maps.
pub fn class_histogram<'a>(labels: impl IntoIterator<Item = &'a LabelMap>, num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0u64; num_classes];
    for l in labels {
        for &v in l.data() {
            if (v as usize) < num_classes {
                counts[v as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}
