//! Instance files: one JSON instance per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use dualarm_core::{sample_batch, Instance, SamplerSpec};

use crate::BenchError;

/// `count` instances with seeds `spec.seed, spec.seed + 1, ...`.
pub fn generate(spec: &SamplerSpec, count: usize) -> Result<Vec<Instance>, BenchError> {
    sample_batch(spec.n, spec.scheme, count, spec.seed, spec.config).map_err(|e| BenchError::Args(e.to_string()))
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<(), BenchError> {
    let file = File::create(path).map_err(BenchError::io(path))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst).map_err(|e| BenchError::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(BenchError::io(path))?;
    }
    w.flush().map_err(BenchError::io(path))
}

/// Reads and validates every instance; errors name the offending line.
pub fn read_instances(path: &Path) -> Result<Vec<Instance>, BenchError> {
    let file = File::open(path).map_err(BenchError::io(path))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(BenchError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| BenchError::Data(format!("{}:{}: {msg}", path.display(), no + 1));
        let inst: Instance = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        inst.validate().map_err(|e| bad(e.to_string()))?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualarm_core::Scheme;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.jsonl");
        let insts = generate(&SamplerSpec::new(6, Scheme::FS, 11), 25).unwrap();
        write_instances(&path, &insts).unwrap();
        assert_eq!(read_instances(&path).unwrap(), insts);
    }

    #[test]
    fn malformed_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.jsonl");
        let insts = generate(&SamplerSpec::new(2, Scheme::CA, 1), 2).unwrap();
        let mut text = serde_json::to_string(&insts[0]).unwrap();
        text.push_str("\n{\"config\": 3}\n");
        std::fs::write(&path, text).unwrap();
        let err = read_instances(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
