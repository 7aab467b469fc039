//! Checkpoint files: a text manifest followed by one little-endian f32 blob.
//!
//! ```text
//! MRCKPT 1
//! seed 7
//! step 200
//! module restorer 1 channels=3 base=16
//! group restorer embed trainable=1 weight=16x3x3x3@0 bias=16@1728
//! ...
//! blob 123456
//! <123456 raw bytes>
//! ```
//!
//! Offsets are byte offsets into the blob and must tile it in manifest
//! order. All randomness is counter-based, so `seed` and `step` are the
//! whole RNG state of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{AdaSam, AdaSamConfig, Extractor, Network, ParamGroup, ParamSet, Restorer, RestorerConfig, Rfr};
use crate::tensor::Tensor;

pub const MAGIC: &str = "MRCKPT";
pub const FORMAT_VERSION: u32 = 1;

type P = f32;

/// One stored network: its module tag, version, constructor fields and
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleEntry {
    pub module: String,
    pub version: u32,
    pub fields: Vec<(String, String)>,
    pub params: ParamSet<P>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub step: u64,
    pub modules: Vec<ModuleEntry>,
}

/// Networks that can be stored in and rebuilt from a checkpoint.
pub trait Persist: Network<P> + Sized {
    fn fields(&self) -> Vec<(String, String)>;
    fn rebuild(fields: &Fields, params: ParamSet<P>) -> Result<Self>;
}

/// Constructor fields of one module entry, with typed lookups.
pub struct Fields<'a> {
    module: &'a str,
    pairs: &'a [(String, String)],
}

impl Fields<'_> {
    pub fn usize(&self, key: &str) -> Result<usize> {
        let raw = self
            .pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::UnknownName(format!("{}.{key}", self.module)))?;
        raw.parse().map_err(|_| Error::Checkpoint {
            path: self.module.to_string(),
            reason: format!("field `{key}` = `{raw}` is not a non-negative integer"),
        })
    }
}

fn field(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

impl Persist for Restorer<P> {
    fn fields(&self) -> Vec<(String, String)> {
        let c = self.config();
        vec![field("channels", c.channels), field("base", c.base)]
    }

    fn rebuild(f: &Fields, params: ParamSet<P>) -> Result<Self> {
        let config = RestorerConfig {
            channels: f.usize("channels")?,
            base: f.usize("base")?,
        };
        Restorer::from_params(config, params)
    }
}

impl Persist for AdaSam<P> {
    fn fields(&self) -> Vec<(String, String)> {
        let c = self.config();
        vec![
            field("channels", c.channels),
            field("patch", c.patch),
            field("dim", c.dim),
            field("heads", c.heads),
        ]
    }

    fn rebuild(f: &Fields, params: ParamSet<P>) -> Result<Self> {
        let config = AdaSamConfig {
            channels: f.usize("channels")?,
            patch: f.usize("patch")?,
            dim: f.usize("dim")?,
            heads: f.usize("heads")?,
        };
        AdaSam::from_params(config, params)
    }
}

impl Persist for Rfr<P> {
    fn fields(&self) -> Vec<(String, String)> {
        let c = self.restorer_config();
        vec![field("channels", c.channels), field("base", c.base)]
    }

    fn rebuild(f: &Fields, params: ParamSet<P>) -> Result<Self> {
        let config = RestorerConfig {
            channels: f.usize("channels")?,
            base: f.usize("base")?,
        };
        Rfr::from_params(config, params)
    }
}

impl Persist for Extractor<P> {
    fn fields(&self) -> Vec<(String, String)> {
        vec![field("channels", self.channels())]
    }

    fn rebuild(f: &Fields, params: ParamSet<P>) -> Result<Self> {
        Extractor::from_params(f.usize("channels")?, params)
    }
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

impl Checkpoint {
    pub fn new(seed: u64, step: u64) -> Self {
        Checkpoint {
            seed,
            step,
            modules: Vec::new(),
        }
    }

    /// Stores `net`, replacing any entry with the same module tag.
    pub fn put<N: Persist>(&mut self, net: &N) {
        let entry = ModuleEntry {
            module: N::MODULE.to_string(),
            version: N::VERSION,
            fields: net.fields(),
            params: net.params().clone(),
        };
        match self.modules.iter_mut().find(|m| m.module == N::MODULE) {
            Some(m) => *m = entry,
            None => self.modules.push(entry),
        }
    }

    pub fn with<N: Persist>(mut self, net: &N) -> Self {
        self.put(net);
        self
    }

    pub fn has<N: Persist>(&self) -> bool {
        self.modules.iter().any(|m| m.module == N::MODULE)
    }

    /// Rebuilds the stored network of type `N`; the module version must
    /// match the current code.
    pub fn get<N: Persist>(&self) -> Result<N> {
        let m = self
            .modules
            .iter()
            .find(|m| m.module == N::MODULE)
            .ok_or_else(|| Error::UnknownName(format!("module `{}` in checkpoint", N::MODULE)))?;
        if m.version != N::VERSION {
            return Err(Error::Checkpoint {
                path: N::MODULE.to_string(),
                reason: format!("module version {} stored, this build reads {}", m.version, N::VERSION),
            });
        }
        let fields = Fields {
            module: &m.module,
            pairs: &m.fields,
        };
        N::rebuild(&fields, m.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC} {FORMAT_VERSION}\nseed {}\nstep {}\n", self.seed, self.step);
        let mut blob = Vec::new();
        for m in &self.modules {
            let _ = write!(head, "module {} {}", m.module, m.version);
            for (k, v) in &m.fields {
                let _ = write!(head, " {k}={v}");
            }
            head.push('\n');
            for (name, g) in m.params.iter() {
                let _ = write!(head, "group {} {name} trainable={}", m.module, u8::from(g.trainable));
                let _ = write!(head, " weight={}@{}", dims(g.weight.shape()), blob.len());
                blob.extend(g.weight.to_le_bytes());
                if let Some(b) = &g.bias {
                    let _ = write!(head, " bias={}@{}", dims(b.shape()), blob.len());
                    blob.extend(b.to_le_bytes());
                }
                head.push('\n');
            }
        }
        let _ = writeln!(head, "blob {}", blob.len());
        let mut out = head.into_bytes();
        out.extend(blob);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        Reader::new(bytes, origin).read()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], origin: &'a str) -> Self {
        Reader { bytes, pos: 0, origin }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.origin.to_string(),
            reason: reason.into(),
        }
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.fail("manifest ends without a `blob` line (file truncated?)"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| self.fail("manifest is not UTF-8"))
    }

    fn keyed_u64(&mut self, key: &str) -> Result<u64> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.fail(format!("expected `{key} <integer>`, found `{line}`")))
    }

    fn shape(&self, spec: &str) -> Result<(Vec<usize>, usize)> {
        let (d, off) = spec
            .split_once('@')
            .ok_or_else(|| self.fail(format!("tensor `{spec}` lacks an offset")))?;
        let shape = d
            .split('x')
            .map(|s| s.parse::<usize>().map_err(|_| self.fail(format!("bad shape `{d}`"))))
            .collect::<Result<Vec<_>>>()?;
        let off = off.parse().map_err(|_| self.fail(format!("bad offset `{off}`")))?;
        Ok((shape, off))
    }

    fn read(mut self) -> Result<Checkpoint> {
        let magic = self.line()?;
        let version = magic
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| self.fail("not a checkpoint (bad magic line)"))?;
        if version != FORMAT_VERSION {
            return Err(self.fail(format!("format version {version}, this build reads {FORMAT_VERSION}")));
        }
        let seed = self.keyed_u64("seed")?;
        let step = self.keyed_u64("step")?;
        let mut modules: Vec<ModuleEntry> = Vec::new();
        // (module index, group name, trainable, weight, bias) with blob offsets.
        type Pending = (usize, String, bool, (Vec<usize>, usize), Option<(Vec<usize>, usize)>);
        let mut pending: Vec<Pending> = Vec::new();
        let blob_len = loop {
            let line = self.line()?;
            let mut words = line.split(' ');
            match words.next() {
                Some("module") => {
                    let (Some(module), Some(v)) = (words.next(), words.next()) else {
                        return Err(self.fail(format!("bad module line `{line}`")));
                    };
                    let version = v.parse().map_err(|_| self.fail(format!("bad module version `{v}`")))?;
                    let fields = words
                        .map(|w| {
                            w.split_once('=')
                                .map(|(k, v)| (k.to_string(), v.to_string()))
                                .ok_or_else(|| self.fail(format!("bad field `{w}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    modules.push(ModuleEntry {
                        module: module.to_string(),
                        version,
                        fields,
                        params: ParamSet::new(),
                    });
                }
                Some("group") => {
                    let parts: Vec<&str> = words.collect();
                    if !(4..=5).contains(&parts.len()) {
                        return Err(self.fail(format!("bad group line `{line}`")));
                    }
                    let m = modules
                        .iter()
                        .position(|m| m.module == parts[0])
                        .ok_or_else(|| self.fail(format!("group for undeclared module `{}`", parts[0])))?;
                    let trainable = match parts[2] {
                        "trainable=1" => true,
                        "trainable=0" => false,
                        other => return Err(self.fail(format!("bad flag `{other}`"))),
                    };
                    let weight = parts[3]
                        .strip_prefix("weight=")
                        .ok_or_else(|| self.fail(format!("expected weight, found `{}`", parts[3])))?;
                    let bias = match parts.get(4) {
                        Some(b) => Some(
                            self.shape(
                                b.strip_prefix("bias=")
                                    .ok_or_else(|| self.fail(format!("expected bias, found `{b}`")))?,
                            )?,
                        ),
                        None => None,
                    };
                    pending.push((m, parts[1].to_string(), trainable, self.shape(weight)?, bias));
                }
                Some("blob") => {
                    let n = words.next().and_then(|v| v.parse::<usize>().ok());
                    break n.ok_or_else(|| self.fail(format!("bad blob line `{line}`")))?;
                }
                _ => return Err(self.fail(format!("unexpected manifest line `{line}`"))),
            }
        };
        let blob = &self.bytes[self.pos..];
        if blob.len() != blob_len {
            return Err(self.fail(format!(
                "blob holds {} bytes, manifest declares {blob_len} (file truncated or corrupt)",
                blob.len()
            )));
        }
        let mut cursor = 0;
        let mut take = |(shape, off): (Vec<usize>, usize), what: &str| -> Result<Tensor<P>> {
            let bytes = shape.iter().product::<usize>() * 4;
            if off != cursor || off + bytes > blob.len() {
                return Err(self.fail(format!(
                    "{what}: offset {off} with {bytes} bytes does not follow the previous tensor at {cursor}"
                )));
            }
            cursor += bytes;
            let data = blob[off..off + bytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::new(&shape, data)
        };
        for (m, name, trainable, w, b) in pending {
            let weight = take(w, &name)?;
            let bias = b.map(|b| take(b, &name)).transpose()?;
            modules[m].params.insert(
                name,
                ParamGroup {
                    weight,
                    bias,
                    trainable,
                },
            )?;
        }
        if cursor != blob.len() {
            return Err(self.fail(format!("{} trailing blob bytes not claimed by any group", blob.len() - cursor)));
        }
        Ok(Checkpoint { seed, step, modules })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut r = Restorer::<P>::new(RestorerConfig { channels: 3, base: 4 }, 1);
        r.set_trainable(&["head"], false).unwrap();
        Checkpoint::new(7, 42)
            .with(&r)
            .with(&AdaSam::<P>::new(AdaSamConfig { dim: 8, heads: 2, ..Default::default() }, 2).unwrap())
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let r: Restorer<P> = back.get().unwrap();
        assert!(!r.params().get("head").unwrap().trainable);
    }

    #[test]
    fn truncation_is_reported_as_corruption() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            let err = Checkpoint::from_bytes(&bytes[..cut], "mem").unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
        }
    }

    /// Swaps an equal-length manifest snippet without touching the blob.
    fn patch(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
        let at = bytes.windows(from.len()).position(|w| w == from.as_bytes()).unwrap();
        let mut out = bytes.to_vec();
        out[at..at + to.len()].copy_from_slice(to.as_bytes());
        out
    }

    #[test]
    fn missing_module_and_version_mismatch_are_rejected() {
        let c = sample();
        assert!(c.get::<Rfr<P>>().is_err());
        let bumped = patch(&c.to_bytes(), "module restorer 1", "module restorer 9");
        let err = Checkpoint::from_bytes(&bumped, "mem").unwrap().get::<Restorer<P>>().unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        assert!(Checkpoint::from_bytes(&patch(&c.to_bytes(), "MRCKPT 1", "MRCKPT 2"), "mem").is_err());
    }

    #[test]
    fn renamed_group_is_rejected_with_the_missing_name() {
        let bytes = patch(&sample().to_bytes(), "restorer head ", "restorer hexd ");
        let err = Checkpoint::from_bytes(&bytes, "mem").unwrap().get::<Restorer<P>>().unwrap_err();
        assert!(err.to_string().contains("`head`"), "{err}");
    }
}
