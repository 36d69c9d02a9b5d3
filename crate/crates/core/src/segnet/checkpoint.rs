use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init, ParamSet, SegNetConfig};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ODBC";

/// Model weights at some training iteration. The payload stores each named
/// set (e.g. `teacher`, `student`) back to back in parameter order.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: SegNetConfig,
    pub iteration: usize,
    pub sets: Vec<(String, ParamSet)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: SegNetConfig,
    iteration: usize,
    sets: Vec<String>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&ParamSet> {
        self.sets.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let Some((_, first)) = checkpoint.sets.first() else {
        return Err(Error::contract("checkpoint has no parameter sets"));
    };
    for (_, set) in &checkpoint.sets[1..] {
        first.check_congruent(set)?;
    }
    let header = Header {
        config: checkpoint.config.clone(),
        iteration: checkpoint.iteration,
        sets: checkpoint.sets.iter().map(|(n, _)| n.clone()).collect(),
        params: first
            .iter()
            .map(|p| ParamEntry {
                name: p.name().to_string(),
                shape: p.value().shape().to_vec(),
            })
            .collect(),
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    codec::write_header(&mut out, CHECKPOINT_MAGIC, &header)?;
    for (_, set) in &checkpoint.sets {
        codec::write_f64s(&mut out, &set.flatten())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let (mut reader, header): (_, Header) = Reader::open(&bytes, CHECKPOINT_MAGIC)?;
    let template = init(&header.config).map_err(|e| Error::Parse {
        offset: 12,
        msg: format!("header config invalid: {e}"),
    })?;
    let expected: Vec<ParamEntry> = template
        .iter()
        .map(|p| ParamEntry {
            name: p.name().to_string(),
            shape: p.value().shape().to_vec(),
        })
        .collect();
    if expected != header.params {
        return Err(Error::Parse {
            offset: 12,
            msg: "parameter layout does not match the header config".into(),
        });
    }
    let mut sets = Vec::with_capacity(header.sets.len());
    for name in header.sets {
        let flat = reader.f64s(template.total_len())?;
        let mut set = template.clone_params();
        set.load_flat(&flat)?;
        sets.push((name, set));
    }
    reader.finish()?;
    Ok(Checkpoint {
        config: header.config,
        iteration: header.iteration,
        sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let config = SegNetConfig::with_classes(&[4], 3);
        let teacher = init(&config).unwrap();
        let student = init(&SegNetConfig {
            init_seed: 9,
            ..config.clone()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.odbc");
        let ck = Checkpoint {
            config: config.clone(),
            iteration: 17,
            sets: vec![("teacher".into(), teacher), ("student".into(), student)],
        };
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.iteration, 17);
        assert_eq!(back.config, config);
        for (name, set) in &ck.sets {
            let loaded = back.get(name).unwrap();
            let a: Vec<u64> = set.flatten().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = loaded.flatten().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let config = SegNetConfig::with_classes(&[4], 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.odbc");
        save_checkpoint(
            &path,
            &Checkpoint {
                config: config.clone(),
                iteration: 0,
                sets: vec![("teacher".into(), init(&config).unwrap())],
            },
        )
        .unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
    }
}
