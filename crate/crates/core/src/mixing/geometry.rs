use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassMask, MixConfig};
use crate::error::Result;
use crate::tensor::{LabelMap, Tensor, IGNORE_LABEL};

/// Horizontal flip, then scaling about the image centre, then an integer
/// translation. Resampling is nearest-neighbour for image and labels alike.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub flip: bool,
    pub scale: f64,
    pub dy: i32,
    pub dx: i32,
}

impl GeoTransform {
    pub const IDENTITY: GeoTransform = GeoTransform {
        flip: false,
        scale: 1.0,
        dy: 0,
        dx: 0,
    };

    pub fn translation(dy: i32, dx: i32) -> Self {
        GeoTransform {
            dy,
            dx,
            ..GeoTransform::IDENTITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(config: &MixConfig, height: usize, width: usize, rng: &mut R) -> Self {
        let flip = rng.gen_bool(config.flip_prob);
        let scale = if config.scale_min < config.scale_max {
            rng.gen_range(config.scale_min..=config.scale_max)
        } else {
            config.scale_min
        };
        let max_dy = (config.max_shift * height as f64).round() as i32;
        let max_dx = (config.max_shift * width as f64).round() as i32;
        GeoTransform {
            flip,
            scale,
            dy: rng.gen_range(-max_dy..=max_dy),
            dx: rng.gen_range(-max_dx..=max_dx),
        }
    }

    /// Source pixel that lands on output pixel `(y, x)`, if inside the frame.
    pub fn source_of(&self, y: usize, x: usize, height: usize, width: usize) -> Option<(usize, usize)> {
        let cy = (height as f64 - 1.0) / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        let py = (y as i64 - self.dy as i64) as f64;
        let px = (x as i64 - self.dx as i64) as f64;
        let sy = ((py - cy) / self.scale + cy).round();
        let mut sx = ((px - cx) / self.scale + cx).round();
        if self.flip {
            sx = width as f64 - 1.0 - sx;
        }
        if sy < 0.0 || sx < 0.0 || sy >= height as f64 || sx >= width as f64 {
            return None;
        }
        Some((sy as usize, sx as usize))
    }
}

/// A geometrically transformed copy of the source sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub image: Tensor,
    /// Out-of-frame pixels carry [`IGNORE_LABEL`].
    pub label: LabelMap,
    /// Selected classes in the transformed label; never set out of frame.
    pub mask: ClassMask,
    pub transform: GeoTransform,
}

pub fn apply_transform(image: &Tensor, label: &LabelMap, classes: &[u8], t: &GeoTransform) -> Result<Candidate> {
    let (_, h, w) = image.dims3("transform input")?;
    let hw = h * w;
    let mut out_img = vec![0.0; 3 * hw];
    let mut out_lab = vec![IGNORE_LABEL; hw];
    for y in 0..h {
        for x in 0..w {
            if let Some((sy, sx)) = t.source_of(y, x, h, w) {
                let (dst, src) = (y * w + x, sy * w + sx);
                out_lab[dst] = label.data()[src];
                for ch in 0..3 {
                    out_img[ch * hw + dst] = image.data()[ch * hw + src];
                }
            }
        }
    }
    let label = LabelMap::new(h, w, out_lab)?;
    let mask = ClassMask::from_label(&label, classes);
    Ok(Candidate {
        image: Tensor::new(vec![3, h, w], out_img)?,
        label,
        mask,
        transform: *t,
    })
}

/// `config.n_aug` random flip/translate/scale variants of the source sample.
pub fn generate_candidates<R: Rng + ?Sized>(
    image: &Tensor,
    label: &LabelMap,
    classes: &[u8],
    config: &MixConfig,
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    config.validate()?;
    let (h, w) = (label.height(), label.width());
    (0..config.n_aug)
        .map(|_| {
            let t = GeoTransform::sample(config, h, w, rng);
            apply_transform(image, label, classes, &t)
        })
        .collect()
}
