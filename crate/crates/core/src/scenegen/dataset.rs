use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"ODBD";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One image, optionally with its ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    image: Tensor,
    label: Option<LabelMap>,
}

impl Sample {
    pub fn new(image: Tensor, label: Option<LabelMap>) -> Self {
        Sample { image, label }
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn label(&self) -> Option<&LabelMap> {
        self.label.as_ref()
    }

    pub fn into_parts(self) -> (Tensor, Option<LabelMap>) {
        (self.image, self.label)
    }
}

/// Ordered samples of one domain split.
///
/// Labels are only reachable through [`Dataset::label`], which counts every
/// read so that tests can prove a training path never touched them.
#[derive(Debug)]
pub struct Dataset {
    domain_id: String,
    split: Split,
    num_classes: usize,
    height: usize,
    width: usize,
    samples: Vec<Sample>,
    label_reads: AtomicUsize,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.domain_id == other.domain_id
            && self.split == other.split
            && self.num_classes == other.num_classes
            && self.height == other.height
            && self.width == other.width
            && self.samples == other.samples
    }
}

impl Dataset {
    pub fn new(domain_id: impl Into<String>, split: Split, num_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let domain_id = domain_id.into();
        let first = samples
            .first()
            .ok_or_else(|| Error::Data(format!("dataset '{domain_id}' is empty")))?;
        let (c, height, width) = first.image.dims3("dataset image")?;
        if c != 3 {
            return Err(Error::shape(format!("dataset images need 3 channels, got {c}")));
        }
        let has_labels = first.label.is_some();
        for (i, s) in samples.iter().enumerate() {
            if s.image.shape() != [3, height, width] {
                return Err(Error::shape(format!("sample {i} has shape {:?}", s.image.shape())));
            }
            if !s.image.is_finite() {
                return Err(Error::NonFinite(format!("sample {i} image")));
            }
            match &s.label {
                Some(l) if l.height() == height && l.width() == width => l.check_classes(num_classes)?,
                None if !has_labels => {}
                _ => return Err(Error::shape(format!("sample {i} label is missing or mis-sized"))),
            }
        }
        Ok(Dataset {
            domain_id,
            split,
            num_classes,
            height,
            width,
            samples,
            label_reads: AtomicUsize::new(0),
        })
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.samples[0].label.is_some()
    }

    pub fn image(&self, index: usize) -> &Tensor {
        &self.samples[index].image
    }

    /// Ground truth of sample `index`; every call is counted.
    pub fn label(&self, index: usize) -> Option<&LabelMap> {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        self.samples[index].label.as_ref()
    }

    /// Number of [`label`](Self::label) calls so far.
    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    domain_id: String,
    split: Split,
    #[serde(rename = "C")]
    num_classes: usize,
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    count: usize,
    has_labels: bool,
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let header = Header {
        domain_id: dataset.domain_id.clone(),
        split: dataset.split,
        num_classes: dataset.num_classes,
        height: dataset.height,
        width: dataset.width,
        count: dataset.samples.len(),
        has_labels: dataset.has_labels(),
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    codec::write_header(&mut out, DATASET_MAGIC, &header)?;
    for s in &dataset.samples {
        codec::write_f32s(&mut out, s.image.data().iter().map(|&v| v as f32))?;
        if let Some(l) = &s.label {
            std::io::Write::write_all(&mut out, l.data())?;
        }
    }
    std::io::Write::flush(&mut out)?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]. Any inconsistency yields a
/// parse error carrying the byte offset; nothing partial is returned.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let (mut reader, header): (_, Header) = Reader::open(&bytes, DATASET_MAGIC)?;
    let parse_err = |offset: u64, msg: String| Error::Parse { offset, msg };
    if header.count == 0 || header.height == 0 || header.width == 0 {
        return Err(parse_err(12, "header declares an empty dataset".into()));
    }
    let hw = header.height * header.width;
    let mut samples = Vec::with_capacity(header.count.min(1 << 16));
    for _ in 0..header.count {
        let raw = reader.f32s(3 * hw)?;
        let image = Tensor::new(vec![3, header.height, header.width], raw.into_iter().map(f64::from).collect())?;
        let label = if header.has_labels {
            let at = reader.offset();
            let lab = LabelMap::new(header.height, header.width, reader.take(hw)?.to_vec())?;
            lab.check_classes(header.num_classes)
                .map_err(|e| parse_err(at, e.to_string()))?;
            Some(lab)
        } else {
            None
        };
        samples.push(Sample { image, label });
    }
    reader.finish()?;
    Dataset::new(header.domain_id, header.split, header.num_classes, samples)
}
