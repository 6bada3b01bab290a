//! Artifact files: solution and peak tables, and the checksummed manifest
//! every command leaves next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::recovery::RecoveredPeak;
use crate::solver::SparseSolution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolutionHeader {
    pub lambda: f64,
    pub tol: f64,
    pub iterations: usize,
    pub duality_gap: f64,
    pub mesh_generation: usize,
    pub kkt_residual: f64,
}

/// `# {header}` line, then `nodeIndex,x(,y),c`.
pub fn solution_csv(mesh: &Mesh, sol: &SparseSolution) -> Result<String> {
    if mesh.num_nodes() != sol.coefficients.len() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_nodes(),
            got: sol.coefficients.len(),
        });
    }
    let header = SolutionHeader {
        lambda: sol.lambda,
        tol: sol.tol,
        iterations: sol.iterations,
        duality_gap: sol.duality_gap,
        mesh_generation: sol.mesh_generation,
        kkt_residual: sol.kkt_residual,
    };
    let mut out = format!("# {}\n", serde_json::to_string(&header)?);
    out += if mesh.dim() == 1 { "nodeIndex,x,c\n" } else { "nodeIndex,x,y,c\n" };
    for (k, c) in sol.coefficients.iter().enumerate() {
        out += &k.to_string();
        for v in mesh.node(k) {
            out += &format!(",{v:e}");
        }
        out += &format!(",{c:e}\n");
    }
    Ok(out)
}

/// Inverse of [`solution_csv`]: header, node coordinates (flat) and
/// coefficients.
pub fn parse_solution_csv(text: &str) -> Result<(SolutionHeader, Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::invalid("solution CSV lacks its `# {json}` header"))?;
    let header: SolutionHeader = serde_json::from_str(header)?;
    let cols = lines.next().ok_or_else(|| Error::invalid("solution CSV lacks column names"))?.split(',').count();
    let (mut nodes, mut coef) = (Vec::new(), Vec::new());
    for line in lines {
        let f: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        if f.len() != cols {
            return Err(Error::LengthMismatch { expected: cols, got: f.len() });
        }
        nodes.extend_from_slice(&f[1..cols - 1]);
        coef.push(f[cols - 1]);
    }
    Ok((header, nodes, coef))
}

/// `clusterId,x(,y),amplitude,supportSize,sign`.
pub fn peaks_csv(peaks: &[RecoveredPeak], dim: usize) -> String {
    let mut out = String::from(if dim == 1 {
        "clusterId,x,amplitude,supportSize,sign\n"
    } else {
        "clusterId,x,y,amplitude,supportSize,sign\n"
    });
    for p in peaks {
        out += &p.cluster_id.to_string();
        for v in &p.location {
            out += &format!(",{v:e}");
        }
        out += &format!(",{:e},{},{}\n", p.amplitude, p.support_size, p.sign);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub command: String,
    pub config_name: String,
    pub config_hash: String,
    pub version: String,
    pub converged: bool,
    /// Set when the run stopped on an error; outputs are partial.
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

/// Writes files below one directory and remembers their checksums.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(ArtifactWriter {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `relative` uses `/` separators.
    pub fn write(&mut self, relative: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let bytes = bytes.as_ref();
        let path = self.root.join(relative);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(relative, bytes);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text)
    }

    /// Registers a file some other writer already produced.
    pub fn adopt(&mut self, relative: &str) -> Result<()> {
        let path = self.root.join(relative);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record(relative, &bytes);
        Ok(())
    }

    fn record(&mut self, relative: &str, bytes: &[u8]) {
        self.artifacts.retain(|a| a.path != relative);
        self.artifacts.push(Artifact {
            path: relative.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    /// Writes `manifest.json` (not listed in itself).
    pub fn finish(self, command: &str, config_name: &str, config_hash: &str, converged: bool, error: Option<String>) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            config_name: config_name.to_string(),
            config_hash: config_hash.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            converged,
            error,
            artifacts: self.artifacts,
        };
        let path = self.root.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoxDomain;

    #[test]
    fn solution_csv_round_trip() {
        let mesh = Mesh::uniform(&BoxDomain::unit(2), &[3, 3]).unwrap();
        let sol = SparseSolution {
            coefficients: (0..9).map(|k| k as f64 * 0.1 - 0.3).collect(),
            lambda: 0.25,
            weights: vec![0.25; 9],
            tol: 1e-8,
            iterations: 7,
            kkt_residual: 1e-9,
            duality_gap: 2e-10,
            objective: 0.0,
            mesh_generation: 3,
            history: Vec::new(),
        };
        let text = solution_csv(&mesh, &sol).unwrap();
        assert!(text.lines().nth(1) == Some("nodeIndex,x,y,c"));
        let (h, nodes, c) = parse_solution_csv(&text).unwrap();
        assert_eq!((h.lambda, h.iterations, h.mesh_generation), (0.25, 7, 3));
        assert_eq!(nodes, mesh.coords());
        assert_eq!(c, sol.coefficients);
    }

    #[test]
    fn manifest_checksums_match_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path()).unwrap();
        w.write("a/b.txt", "hello").unwrap();
        let m = w.finish("test", "x", "00", true, None).unwrap();
        // sha256("hello")
        assert_eq!(m.artifacts[0].sha256, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert!(dir.path().join("manifest.json").exists());
    }
}
