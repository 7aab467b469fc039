//! Paired datasets on disk: 8-bit P6 pixmaps plus a tab-separated manifest.
//!
//! ```text
//! # clean	degraded	kind	param	degradation_seed	clean_seed
//! clean_00000.ppm	degraded_00000.ppm	jpeg	45	1234	7
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{DegradationKind, DegradationSpec, ImagePair};
use crate::error::{Error, Result};
use crate::imageio::{read_ppm, write_ppm};

pub const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "# clean\tdegraded\tkind\tparam\tdegradation_seed\tclean_seed";

/// Writes every pair and the manifest into `dir` (created if needed).
pub fn write_dataset(dir: &Path, pairs: &[ImagePair]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for (i, p) in pairs.iter().enumerate() {
        let clean = format!("clean_{i:05}.ppm");
        let degraded = format!("degraded_{i:05}.ppm");
        write_ppm(&dir.join(&clean), &p.clean)?;
        write_ppm(&dir.join(&degraded), &p.degraded)?;
        manifest.push_str(&format!(
            "{clean}\t{degraded}\t{}\t{}\t{}\t{}\n",
            p.spec.kind, p.spec.param, p.spec.seed, p.seed
        ));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a dataset written by [`write_dataset`]. Pixel values come back
/// quantised to 8 bits.
pub fn read_dataset(dir: &Path) -> Result<Vec<ImagePair>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::Config {
            location: format!("{}:{}", path.display(), n + 1),
            reason,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let kind: DegradationKind = f[2].parse().map_err(|e: Error| bad(e.to_string()))?;
        let param: f64 = f[3].parse().map_err(|_| bad(format!("bad parameter `{}`", f[3])))?;
        let seed: u64 = f[4].parse().map_err(|_| bad(format!("bad seed `{}`", f[4])))?;
        let clean_seed: u64 = f[5].parse().map_err(|_| bad(format!("bad seed `{}`", f[5])))?;
        let spec = DegradationSpec::new(kind, param, seed).map_err(|e| bad(e.to_string()))?;
        let clean = read_ppm(&dir.join(f[0]))?;
        let degraded = read_ppm(&dir.join(f[1]))?;
        if clean.shape() != degraded.shape() {
            return Err(bad(format!(
                "clean {:?} and degraded {:?} differ in shape",
                clean.shape(),
                degraded.shape()
            )));
        }
        pairs.push(ImagePair {
            clean,
            degraded,
            spec,
            seed: clean_seed,
        });
    }
    if pairs.is_empty() {
        return Err(bad_empty(&path));
    }
    Ok(pairs)
}

fn bad_empty(path: &Path) -> Error {
    Error::Config {
        location: path.display().to_string(),
        reason: "manifest lists no pairs".into(),
    }
}
