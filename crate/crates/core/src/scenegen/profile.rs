use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a class is placed in a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Fills whatever no other class claims.
    Fill,
    /// Band from the top edge down to a wavy boundary at `band_mean`.
    Top,
    /// Band from a wavy boundary at `band_mean` down to the bottom edge.
    Bottom,
    /// Ellipses centred at vertical position `band_mean`.
    Blob,
    /// Thin vertical bars standing on vertical position `band_mean`.
    Pole,
}

/// Spatial distribution of one class. Vertical positions and sizes are
/// fractions of the image height.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassLayout {
    pub placement: Placement,
    pub band_mean: f64,
    pub band_std: f64,
    pub count_min: u32,
    pub count_max: u32,
    pub size_min: f64,
    pub size_max: f64,
}

impl ClassLayout {
    fn band(placement: Placement, mean: f64, std: f64) -> Self {
        ClassLayout {
            placement,
            band_mean: mean,
            band_std: std,
            count_min: 0,
            count_max: 0,
            size_min: 0.0,
            size_max: 0.0,
        }
    }

    fn objects(placement: Placement, mean: f64, std: f64, count: (u32, u32), size: (f64, f64)) -> Self {
        ClassLayout {
            placement,
            band_mean: mean,
            band_std: std,
            count_min: count.0,
            count_max: count.1,
            size_min: size.0,
            size_max: size.1,
        }
    }
}

/// Generative recipe for one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub name: String,
    /// Mean RGB of each class, in `[0, 1]`.
    pub palette: Vec<[f64; 3]>,
    /// Std of the per-sample colour offset of each class.
    pub color_jitter: Vec<f64>,
    pub noise_sigma: f64,
    /// Amplitude of the shared per-class luminance texture.
    pub texture_amplitude: f64,
    pub layout: Vec<ClassLayout>,
    pub seed_offset: u64,
}

impl DomainProfile {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let name = &self.name;
        if self.palette.len() != num_classes || self.color_jitter.len() != num_classes || self.layout.len() != num_classes {
            return Err(Error::config(format!(
                "profile '{name}': palette, jitter and layout must each have {num_classes} entries"
            )));
        }
        if self.palette.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config(format!("profile '{name}': palette values must lie in [0, 1]")));
        }
        if self.color_jitter.iter().any(|&s| s < 0.0 || !s.is_finite())
            || self.noise_sigma < 0.0
            || self.texture_amplitude < 0.0
        {
            return Err(Error::config(format!("profile '{name}': standard deviations must be >= 0")));
        }
        for l in &self.layout {
            if !(0.0..=1.0).contains(&l.band_mean) || !(0.0..=1.0).contains(&l.band_std) {
                return Err(Error::config(format!("profile '{name}': band parameters must lie in [0, 1]")));
            }
            if l.count_min > l.count_max || l.size_min > l.size_max || l.size_min < 0.0 {
                return Err(Error::config(format!("profile '{name}': empty count or size range")));
            }
        }
        Ok(())
    }

    /// Labelled source domain of the seven-class street benchmark.
    pub fn street_source() -> Self {
        use Placement::*;
        DomainProfile {
            name: "source".into(),
            palette: vec![
                [0.50, 0.45, 0.50], // flat
                [0.45, 0.40, 0.35], // construction
                [0.80, 0.78, 0.25], // object
                [0.30, 0.58, 0.22], // nature
                [0.55, 0.72, 0.95], // sky
                [0.85, 0.25, 0.30], // human
                [0.15, 0.18, 0.62], // vehicle
            ],
            color_jitter: vec![0.03; 7],
            noise_sigma: 0.03,
            texture_amplitude: 0.08,
            layout: vec![
                ClassLayout::band(Bottom, 0.62, 0.04),
                ClassLayout::band(Fill, 0.5, 0.0),
                ClassLayout::objects(Pole, 0.62, 0.03, (1, 3), (0.15, 0.30)),
                ClassLayout::objects(Blob, 0.45, 0.06, (1, 3), (0.15, 0.30)),
                ClassLayout::band(Top, 0.30, 0.04),
                ClassLayout::objects(Blob, 0.66, 0.03, (0, 3), (0.08, 0.14)),
                ClassLayout::objects(Blob, 0.76, 0.05, (1, 3), (0.12, 0.20)),
            ],
            seed_offset: 0,
        }
    }

    /// The `k`-th unlabelled target of the street benchmark. The first three
    /// are hand-tuned shifts; later ones perturb the source deterministically.
    pub fn street_target(k: usize) -> Self {
        use Placement::*;
        let base = DomainProfile::street_source();
        match k {
            0 => DomainProfile {
                name: "target_a".into(),
                palette: vec![
                    [0.38, 0.38, 0.42],
                    [0.55, 0.52, 0.50],
                    [0.70, 0.65, 0.45],
                    [0.22, 0.45, 0.30],
                    [0.70, 0.75, 0.80],
                    [0.70, 0.30, 0.45],
                    [0.25, 0.25, 0.45],
                ],
                color_jitter: vec![0.04; 7],
                noise_sigma: 0.04,
                layout: vec![
                    ClassLayout::band(Bottom, 0.56, 0.04),
                    ClassLayout::band(Fill, 0.5, 0.0),
                    ClassLayout::objects(Pole, 0.56, 0.03, (2, 4), (0.15, 0.35)),
                    ClassLayout::objects(Blob, 0.38, 0.06, (1, 3), (0.12, 0.25)),
                    ClassLayout::band(Top, 0.22, 0.04),
                    ClassLayout::objects(Blob, 0.60, 0.03, (1, 3), (0.08, 0.14)),
                    ClassLayout::objects(Blob, 0.68, 0.04, (1, 3), (0.12, 0.20)),
                ],
                seed_offset: 1,
                ..base
            },
            1 => DomainProfile {
                name: "target_b".into(),
                palette: vec![
                    [0.58, 0.50, 0.40],
                    [0.60, 0.45, 0.30],
                    [0.85, 0.70, 0.35],
                    [0.42, 0.55, 0.20],
                    [0.60, 0.65, 0.75],
                    [0.90, 0.40, 0.25],
                    [0.25, 0.30, 0.70],
                ],
                color_jitter: vec![0.05; 7],
                noise_sigma: 0.05,
                layout: vec![
                    ClassLayout::band(Bottom, 0.70, 0.04),
                    ClassLayout::band(Fill, 0.5, 0.0),
                    ClassLayout::objects(Pole, 0.70, 0.03, (1, 2), (0.15, 0.25)),
                    ClassLayout::objects(Blob, 0.55, 0.06, (1, 4), (0.15, 0.30)),
                    ClassLayout::band(Top, 0.38, 0.04),
                    ClassLayout::objects(Blob, 0.74, 0.03, (1, 4), (0.08, 0.14)),
                    ClassLayout::objects(Blob, 0.83, 0.04, (1, 3), (0.12, 0.20)),
                ],
                seed_offset: 2,
                ..base
            },
            _ => {
                let shift = 0.06 * (k as f64 - 1.0).min(3.0);
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let palette = base
                    .palette
                    .iter()
                    .enumerate()
                    .map(|(c, rgb)| {
                        let mut out = *rgb;
                        out[c % 3] = (out[c % 3] + sign * shift).clamp(0.0, 1.0);
                        out
                    })
                    .collect();
                let layout = base
                    .layout
                    .iter()
                    .map(|l| ClassLayout {
                        band_mean: (l.band_mean - sign * 0.5 * shift).clamp(0.0, 1.0),
                        ..l.clone()
                    })
                    .collect();
                DomainProfile {
                    name: format!("target_{k}"),
                    palette,
                    layout,
                    seed_offset: k as u64 + 1,
                    ..base
                }
            }
        }
    }

    /// Generic profile for an arbitrary class count: class 0 is the ground
    /// band, class 1 the fill, class 2 the sky band and the rest are blobs
    /// spread over the image height.
    pub fn generic(name: &str, num_classes: usize, seed_offset: u64) -> Self {
        use Placement::*;
        let mut palette = Vec::with_capacity(num_classes);
        let mut layout = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let t = c as f64 / num_classes.max(1) as f64;
            palette.push([
                (0.15 + 0.7 * t).clamp(0.0, 1.0),
                (0.85 - 0.6 * t).clamp(0.0, 1.0),
                ((c * 37 % 11) as f64 / 10.0).clamp(0.0, 1.0),
            ]);
            layout.push(match c {
                0 => ClassLayout::band(Bottom, 0.7, 0.05),
                1 => ClassLayout::band(Fill, 0.5, 0.0),
                2 => ClassLayout::band(Top, 0.3, 0.05),
                _ => ClassLayout::objects(Blob, 0.2 + 0.6 * t, 0.1, (1, 2), (0.1, 0.25)),
            });
        }
        DomainProfile {
            name: name.into(),
            palette,
            color_jitter: vec![0.02; num_classes],
            noise_sigma: 0.02,
            texture_amplitude: 0.0,
            layout,
            seed_offset,
        }
    }
}
