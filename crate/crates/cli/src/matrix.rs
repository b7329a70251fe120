//! Runs every (method, seed) cell and writes CSVs, checkpoints and a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use mdlc_core::agents::{run_sequential, MethodKind, RunOutput};
use mdlc_core::policy::save_checkpoint;
use mdlc_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const EPISODE_HEADER: &str = "method,seed,phase,episode,return,optimal_return,regret,steps,wall_hits";
pub const GATE_HEADER: &str = "method,seed,phase,episode,feature_index,gate_value";
pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "resolved-config.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub method: String,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub cells: Vec<CellRecord>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn cell_stem(method: MethodKind, seed: u64) -> String {
    format!("{}_seed{seed}", method.name())
}

pub fn episode_csv(method: MethodKind, seed: u64, out: &RunOutput) -> String {
    let mut s = String::from(EPISODE_HEADER);
    s.push('\n');
    for r in &out.ledger.rows {
        let _ = writeln!(
            s,
            "{},{seed},{},{},{},{},{},{},{}",
            method.name(),
            r.phase,
            r.episode,
            r.episode_return,
            r.optimal_return,
            r.regret,
            r.steps,
            r.wall_hits
        );
    }
    s
}

pub fn gate_csv(method: MethodKind, seed: u64, out: &RunOutput) -> String {
    let mut s = String::from(GATE_HEADER);
    s.push('\n');
    for g in &out.gate_log {
        for (i, v) in g.gates.iter().enumerate() {
            let _ = writeln!(s, "{},{seed},{},{},{i},{v}", method.name(), g.phase, g.episode);
        }
    }
    s
}

/// Files written for one cell, relative to the output directory.
fn write_cell(dir: &Path, method: MethodKind, seed: u64, out: &RunOutput) -> Result<Vec<PathBuf>> {
    let stem = cell_stem(method, seed);
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        fs::write(dir.join(&name), bytes)?;
        written.push(PathBuf::from(name));
        Ok(())
    };
    put(format!("{stem}_episodes.csv"), episode_csv(method, seed, out).as_bytes())?;
    put(format!("{stem}_gates.csv"), gate_csv(method, seed, out).as_bytes())?;
    for ck in &out.checkpoints {
        let name = format!("{stem}_phase{}_control.ckpt", ck.phase);
        save_checkpoint(&dir.join(&name), &ck.control)?;
        written.push(PathBuf::from(name));
        if let Some(d) = &ck.default {
            let name = format!("{stem}_phase{}_default.ckpt", ck.phase);
            save_checkpoint(&dir.join(&name), d)?;
            written.push(PathBuf::from(name));
        }
    }
    Ok(written)
}

/// Trains every cell of `cfg` into `dir`. Cells that fail are recorded in
/// the manifest and do not stop the others.
pub fn run_matrix(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    run_matrix_with(cfg, dir, |_, _, _| {})
}

/// As [`run_matrix`], calling `progress(method, seed, ok)` after each cell.
pub fn run_matrix_with<F>(cfg: &RunConfig, dir: &Path, progress: F) -> Result<Manifest>
where
    F: Fn(MethodKind, u64, bool) + Sync,
{
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let resolved = serde_json::to_string_pretty(&cfg.to_value())?;
    fs::write(dir.join(RESOLVED_CONFIG), resolved.as_bytes())?;

    let cells: Vec<(MethodKind, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results: Mutex<Vec<Option<(CellRecord, Vec<PathBuf>)>>> = Mutex::new(vec![None; cells.len()]);
    let next = Mutex::new(0usize);

    let work = || loop {
        let i = {
            let mut n = next.lock().expect("queue lock");
            if *n >= cells.len() {
                return;
            }
            *n += 1;
            *n - 1
        };
        let (method, seed) = cells[i];
        let outcome = run_sequential(&cfg.cell(method), seed).and_then(|out| write_cell(dir, method, seed, &out));
        let ok = outcome.is_ok();
        let (record, files) = match outcome {
            Ok(files) => (
                CellRecord {
                    method: method.name().into(),
                    seed,
                    status: CellStatus::Ok,
                    error: None,
                },
                files,
            ),
            Err(e) => (
                CellRecord {
                    method: method.name().into(),
                    seed,
                    status: CellStatus::Failed,
                    error: Some(e.to_string()),
                },
                Vec::new(),
            ),
        };
        results.lock().expect("results lock")[i] = Some((record, files));
        progress(method, seed, ok);
    };
    let workers = cfg.parallelism.min(cells.len()).max(1);
    std::thread::scope(|s| {
        for _ in 1..workers {
            s.spawn(work);
        }
        work();
    });

    let mut manifest = Manifest {
        cells: Vec::new(),
        files: Vec::new(),
    };
    let mut paths = vec![PathBuf::from(RESOLVED_CONFIG)];
    for r in results.into_inner().expect("results lock") {
        let (record, files) = r.ok_or_else(|| Error::contract("matrix cell never ran"))?;
        manifest.cells.push(record);
        paths.extend(files);
    }
    for p in paths {
        let bytes = fs::read(dir.join(&p))?;
        manifest.files.push(FileEntry {
            path: p.to_string_lossy().into_owned(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Checks every manifest entry against the file on disk.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let m = Manifest::load(dir)?;
    for f in &m.files {
        let bytes = fs::read(dir.join(&f.path))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::contract(format!("hash mismatch for {}", f.path)));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
