use crate::error::{Error, Result};

/// Label value that losses and metrics skip.
pub const IGNORE_LABEL: u8 = 255;

/// `H x W` map of class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::shape(format!(
                "label map {height}x{width} needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        LabelMap {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.data[y * self.width + x] = class;
    }

    /// Sorted, deduplicated class indices present (ignore excluded).
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=254u8).filter(|&c| seen[c as usize]).collect()
    }

    /// Applies a class relabeling; ignore pixels stay ignore.
    pub fn map_classes(&self, perm: &[u8]) -> LabelMap {
        let data = self
            .data
            .iter()
            .map(|&v| if v == IGNORE_LABEL { v } else { perm[v as usize] })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Errors if any non-ignore label is `>= num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != IGNORE_LABEL && v as usize >= num_classes)
        {
            Some(i) => Err(Error::Bounds(format!(
                "label {} at pixel {} is outside [0, {})",
                self.data[i], i, num_classes
            ))),
            None => Ok(()),
        }
    }
}
