use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, IGNORE_LABEL};

/// Writes label maps side by side as a binary PGM, separated by a one
/// pixel white column. Classes map to evenly spaced grey levels; ignore is
/// black.
pub fn write_label_triptych(path: &Path, maps: &[&LabelMap], num_classes: usize) -> Result<()> {
    let Some(first) = maps.first() else {
        return Err(Error::contract("nothing to draw"));
    };
    let h = first.height();
    if maps.iter().any(|m| m.height() != h) {
        return Err(Error::shape("triptych panels differ in height"));
    }
    let total_w: usize = maps.iter().map(|m| m.width()).sum::<usize>() + maps.len() - 1;
    let grey = |v: u8| -> u8 {
        if v == IGNORE_LABEL {
            0
        } else {
            (40 + (v as usize * 200) / num_classes.saturating_sub(1).max(1)).min(240) as u8
        }
    };
    let mut pixels = Vec::with_capacity(h * total_w);
    for y in 0..h {
        for (i, m) in maps.iter().enumerate() {
            if i > 0 {
                pixels.push(255);
            }
            pixels.extend((0..m.width()).map(|x| grey(m.get(y, x))));
        }
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{total_w} {h}\n255\n")?;
    f.write_all(&pixels)?;
    Ok(())
}
