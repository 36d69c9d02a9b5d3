use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::{load_dataset, save_dataset, Benchmark, Dataset, DomainData, Split};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    source: String,
    targets: Vec<String>,
}

fn split_path(dir: &Path, domain: &str, split: Split) -> PathBuf {
    let s = match split {
        Split::Train => "train",
        Split::Val => "val",
    };
    dir.join(format!("{domain}_{s}.odbd"))
}

/// Writes every split as `<domain>_<split>.odbd` plus a manifest listing
/// the domains. Target training splits are stored without labels.
pub fn save_benchmark(dir: &Path, bench: &Benchmark) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut save = |ds: &Dataset| -> Result<()> {
        let p = split_path(dir, ds.domain_id(), ds.split());
        save_dataset(&p, ds)?;
        written.push(p);
        Ok(())
    };
    save(&bench.source.train)?;
    save(&bench.source.val)?;
    for t in &bench.targets {
        save(&unlabeled(&t.train)?)?;
        save(&t.val)?;
    }
    let manifest = Manifest {
        source: bench.source.domain_id().to_string(),
        targets: bench.target_ids(),
    };
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?)?;
    written.push(mp);
    Ok(written)
}

fn unlabeled(ds: &Dataset) -> Result<Dataset> {
    let samples = (0..ds.len())
        .map(|i| crate::scenegen::Sample::new(ds.image(i).clone(), None))
        .collect();
    Dataset::new(ds.domain_id(), ds.split(), ds.num_classes(), samples)
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    let mp = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::Data(format!("{}: {e}", mp.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", mp.display())))?;
    let load = |domain: &str| -> Result<DomainData> {
        Ok(DomainData {
            train: load_dataset(&split_path(dir, domain, Split::Train))?,
            val: load_dataset(&split_path(dir, domain, Split::Val))?,
        })
    };
    let source = load(&manifest.source)?;
    if !source.train.has_labels() {
        return Err(Error::Data("source training split has no labels".into()));
    }
    let targets = manifest.targets.iter().map(|t| load(t)).collect::<Result<Vec<_>>>()?;
    if targets.is_empty() {
        return Err(Error::Data("manifest lists no target domains".into()));
    }
    Ok(Benchmark { source, targets })
}
