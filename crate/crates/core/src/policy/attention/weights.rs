//! Named-tensor parameter bundles and their binary interchange format.
//!
//! Layout (all integers u32 little-endian):
//!
//! ```text
//! "DARW" version:u8 count
//! count x { name_len name[utf8] rank dims[rank] data[f32 LE, row-major] }
//! ```
//!
//! The network configuration lives next to the tensor file in a JSON sidecar
//! named `<file>.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"DARW";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected \"DARW\"")]
    BadMagic([u8; 4]),
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated weight file at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("tensor name at byte offset {offset} is not valid UTF-8")]
    BadName { offset: usize },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("duplicate tensor '{0}'")]
    Duplicate(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("weights do not match the network config:\n  {}", .0.join("\n  "))]
    Shape(Vec<String>),
    #[error("tensor '{name}' has a non-finite value at element {index}")]
    NonFinite { name: String, index: usize },
}

/// Architecture hyper-parameters shared by the trainer and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub d: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// `C` in `C * tanh(u / C)`; `None` disables clipping.
    pub logit_clip: Option<f64>,
    /// One MLP for both arms (`arm_mlp.*`) or one per arm (`arm1_mlp.*`, `arm2_mlp.*`).
    pub shared_arm_mlp: bool,
    /// Object self-attention layer; off means the MLP embeddings pass through.
    pub object_encoder: bool,
    /// Arm cross-attention layer; off means the MLP embeddings pass through.
    pub arm_encoder: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            d: 128,
            heads: 8,
            mlp_hidden: 128,
            logit_clip: Some(10.0),
            shared_arm_mlp: true,
            object_encoder: true,
            arm_encoder: true,
        }
    }
}

pub const ARM_INPUT: usize = 2;
pub const OBJECT_INPUT: usize = 4;

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), WeightError> {
        if self.d == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return Err(WeightError::Config("d, heads and mlp_hidden must be positive".into()));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(WeightError::Config(format!(
                "d = {} is not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if let Some(c) = self.logit_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(WeightError::Config(format!("logit_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn arm_mlp_prefixes(&self) -> &'static [&'static str] {
        if self.shared_arm_mlp {
            &["arm_mlp"]
        } else {
            &["arm1_mlp", "arm2_mlp"]
        }
    }

    /// Every tensor the network reads, with its shape. Linear weights use the
    /// `[out, in]` layout.
    pub fn expected_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let (d, h) = (self.d, self.mlp_hidden);
        let mut out = BTreeMap::new();
        let mut linear = |name: &str, fan_in: usize, fan_out: usize, bias: bool| {
            out.insert(format!("{name}.weight"), vec![fan_out, fan_in]);
            if bias {
                out.insert(format!("{name}.bias"), vec![fan_out]);
            }
        };
        for p in self.arm_mlp_prefixes() {
            linear(&format!("{p}.0"), ARM_INPUT, h, true);
            linear(&format!("{p}.1"), h, d, true);
        }
        linear("obj_mlp.0", OBJECT_INPUT, h, true);
        linear("obj_mlp.1", h, d, true);
        let mut mha = |prefix: &str| {
            for proj in ["q", "k", "v", "o"] {
                linear(&format!("{prefix}.{proj}"), d, d, true);
            }
        };
        if self.arm_encoder {
            mha("arm_mha");
        }
        if self.object_encoder {
            mha("obj_mha");
        }
        for dec in ["dec1", "dec2"] {
            linear(&format!("{dec}.q"), d, d, false);
            linear(&format!("{dec}.k"), d, d, false);
        }
        linear("value.0", 3 * d, h, true);
        linear("value.1", h, 1, true);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub config: NetworkConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Path of the JSON sidecar holding the [`NetworkConfig`] for `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WeightError + '_ {
    move |source| WeightError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl WeightBundle {
    /// Randomly initialized bundle: weights and biases uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn random(config: NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .expected_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let fan_in = if name.ends_with(".weight") { shape[1] } else { shape[0] };
                let bound = 1.0 / (fan_in as f32).sqrt();
                let len = shape.iter().product();
                let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
                (name, Tensor::new(shape, data))
            })
            .collect();
        Self { config, tensors }
    }

    /// All-zero bundle with the right shapes.
    pub fn zeros(config: NetworkConfig) -> Self {
        let tensors = config
            .expected_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(shape)))
            .collect();
        Self { config, tensors }
    }

    /// Checks the config, every expected tensor's presence and shape, and
    /// finiteness. Shape problems are collected and reported together.
    pub fn validate(&self) -> Result<(), WeightError> {
        self.config.validate()?;
        let expected = self.config.expected_shapes();
        let mut problems = Vec::new();
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => problems.push(format!("{name}: missing, expected {shape:?}")),
                Some(t) if &t.shape != shape => {
                    problems.push(format!("{name}: shape {:?}, expected {shape:?}", t.shape))
                }
                Some(_) => {}
            }
        }
        for name in self.tensors.keys().filter(|n| !expected.contains_key(*n)) {
            problems.push(format!("{name}: unexpected tensor"));
        }
        if !problems.is_empty() {
            return Err(WeightError::Shape(problems));
        }
        for (name, t) in &self.tensors {
            if let Some(index) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(WeightError::NonFinite {
                    name: name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &dim in &t.shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses the tensor section only; the result is not validated against
    /// any config.
    pub fn parse_tensors(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, WeightError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(WeightError::BadMagic(magic));
        }
        let version = r.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(WeightError::UnsupportedVersion(version));
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let offset = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| WeightError::BadName { offset })?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.saturating_mul(4))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(WeightError::Duplicate(name));
            }
        }
        if r.pos != bytes.len() {
            return Err(WeightError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(tensors)
    }

    /// Writes the tensor file and its JSON sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), WeightError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(io_err(path))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(&side, json + "\n").map_err(io_err(&side))
    }

    /// Reads the tensor file, takes the config from the sidecar and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightError> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(io_err(&side))?;
        let config = serde_json::from_str(&text).map_err(|e| WeightError::Sidecar {
            path: side.clone(),
            message: e.to_string(),
        })?;
        Self::load_with_config(path, config)
    }

    /// Like [`WeightBundle::load`] but with an explicit config; the sidecar is
    /// ignored.
    pub fn load_with_config(path: impl AsRef<Path>, config: NetworkConfig) -> Result<Self, WeightError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(io_err(path))?;
        let bundle = Self {
            config,
            tensors: Self::parse_tensors(&bytes)?,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        let rest = self.bytes.len() - self.pos;
        if n > rest {
            return Err(WeightError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            d: 16,
            heads: 4,
            mlp_hidden: 8,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.darw");
        let bundle = WeightBundle::random(small(), 5);
        bundle.write(&path).unwrap();
        let back = WeightBundle::load(&path).unwrap();
        assert_eq!(back.config, bundle.config);
        for (name, t) in &bundle.tensors {
            let u = &back.tensors[name];
            assert_eq!(u.shape, t.shape);
            assert!(t.data.iter().zip(&u.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(fs::read(&path).unwrap(), back.to_bytes());
    }

    #[test]
    fn header_layout() {
        let mut tensors = BTreeMap::new();
        tensors.insert("ab".to_string(), Tensor::new(vec![1, 2], vec![1.0, -2.5]));
        let bytes = WeightBundle {
            config: small(),
            tensors,
        }
        .to_bytes();
        let mut expect = b"DARW\x01".to_vec();
        for word in [1u32, 2] {
            expect.extend_from_slice(&word.to_le_bytes());
        }
        expect.extend_from_slice(b"ab");
        for word in [2u32, 1, 2] {
            expect.extend_from_slice(&word.to_le_bytes());
        }
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn truncated_file_names_offset() {
        let bytes = WeightBundle::random(small(), 1).to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match WeightBundle::parse_tensors(cut) {
            Err(WeightError::Truncated { offset, needed }) => {
                assert!(offset < cut.len());
                assert!(needed > 0);
                assert!(WeightError::Truncated { offset, needed }
                    .to_string()
                    .contains(&offset.to_string()));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(matches!(
            WeightBundle::parse_tensors(&bytes[..6]),
            Err(WeightError::Truncated { offset: 5, .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = WeightBundle::random(small(), 1).to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            WeightBundle::parse_tensors(&bytes),
            Err(WeightError::UnsupportedVersion(2))
        ));
        bytes[0] = b'X';
        assert!(matches!(WeightBundle::parse_tensors(&bytes), Err(WeightError::BadMagic(_))));
    }

    #[test]
    fn d128_bundle_into_d64_config_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.darw");
        WeightBundle::random(NetworkConfig::default(), 2).write(&path).unwrap();
        let narrow = NetworkConfig {
            d: 64,
            ..NetworkConfig::default()
        };
        match WeightBundle::load_with_config(&path, narrow) {
            Err(WeightError::Shape(problems)) => {
                // Every d-dependent tensor is listed, not just the first.
                assert!(problems.len() > 10, "{problems:?}");
                assert!(problems.iter().any(|p| p.starts_with("dec2.k.weight")));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut bundle = WeightBundle::random(small(), 3);
        bundle.tensors.get_mut("obj_mlp.0.bias").unwrap().data[2] = f32::NAN;
        assert!(matches!(
            bundle.validate(),
            Err(WeightError::NonFinite { index: 2, .. })
        ));
    }

    #[test]
    fn config_checks() {
        assert!(NetworkConfig::default().validate().is_ok());
        let bad = NetworkConfig {
            heads: 7,
            ..NetworkConfig::default()
        };
        assert!(bad.validate().is_err());
        let unshared = NetworkConfig {
            shared_arm_mlp: false,
            arm_encoder: false,
            ..small()
        };
        let shapes = unshared.expected_shapes();
        assert!(shapes.contains_key("arm2_mlp.1.weight"));
        assert!(!shapes.contains_key("arm_mlp.0.weight"));
        assert!(!shapes.contains_key("arm_mha.q.weight"));
        assert_eq!(shapes["value.0.weight"], vec![8, 48]);
    }

    #[test]
    fn sidecar_defaults_missing_fields() {
        let cfg: NetworkConfig = serde_json::from_str(r#"{"d": 32, "logit_clip": null}"#).unwrap();
        assert_eq!(cfg.d, 32);
        assert_eq!(cfg.heads, 8);
        assert_eq!(cfg.logit_clip, None);
    }
}
