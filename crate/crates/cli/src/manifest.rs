//! Run directories and the manifest that makes each run reproducible.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub version: &'static str,
    pub argv: Vec<String>,
    pub config: &'a ExperimentConfig,
    /// Root seed and the named sub-streams this command drew from.
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub started_at: String,
    pub finished_at: String,
    pub timings_seconds: BTreeMap<String, f64>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((total, hex))
}

/// Output directory of one command plus everything the manifest needs.
pub struct Run {
    pub dir: PathBuf,
    command: String,
    started_at: chrono::DateTime<chrono::Local>,
    clock: Instant,
    phase: Option<(String, Instant)>,
    timings: BTreeMap<String, f64>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    /// Uses `out` if given, else `<runs_dir>/<timestamp>-<command>`.
    pub fn create(command: &str, out: Option<&Path>, runs_dir: Option<&Path>, root_seed: u64) -> Result<Self> {
        let started_at = chrono::Local::now();
        let dir = match out {
            Some(p) => p.to_path_buf(),
            None => runs_dir
                .unwrap_or(Path::new("runs"))
                .join(format!("{}-{command}", started_at.format("%Y%m%d-%H%M%S%.3f"))),
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut seeds = BTreeMap::new();
        seeds.insert("root".to_owned(), root_seed);
        Ok(Self {
            dir,
            command: command.to_owned(),
            started_at,
            clock: Instant::now(),
            phase: None,
            timings: BTreeMap::new(),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn seed(&mut self, label: &str, value: u64) {
        self.seeds.insert(label.to_owned(), value);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Starts timing a named phase, closing the previous one.
    pub fn phase(&mut self, name: &str) {
        self.end_phase();
        self.phase = Some((name.to_owned(), Instant::now()));
    }

    fn end_phase(&mut self) {
        if let Some((name, t)) = self.phase.take() {
            *self.timings.entry(name).or_default() += t.elapsed().as_secs_f64();
        }
    }

    /// Creates an output file inside the run directory and records it.
    pub fn create_file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.outputs.push(name.to_owned());
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Records a file some library call wrote into the run directory.
    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_owned());
    }

    /// Hashes inputs and outputs and writes the manifest through a temporary file and a rename.
    pub fn finish(mut self, config: &ExperimentConfig, summary: serde_json::Value) -> Result<PathBuf> {
        self.end_phase();
        self.timings.insert("total".into(), self.clock.elapsed().as_secs_f64());
        let entry = |path: &Path, shown: String| -> Result<FileEntry> {
            let (bytes, sha256) = sha256_file(path)?;
            Ok(FileEntry { path: shown, bytes, sha256 })
        };
        let inputs = self.inputs.iter().map(|p| entry(p, p.display().to_string())).collect::<Result<Vec<_>>>()?;
        let mut names = self.outputs.clone();
        names.sort();
        names.dedup();
        let outputs = names.iter().map(|n| entry(&self.path(n), n.clone())).collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            config,
            seeds: std::mem::take(&mut self.seeds),
            inputs,
            outputs,
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Local::now().to_rfc3339(),
            timings_seconds: std::mem::take(&mut self.timings),
            summary,
        };
        let tmp = self.path(&format!("{MANIFEST_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer_pretty(&mut w, &manifest)?;
            w.write_all(b"\n")?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        let path = self.path(MANIFEST_FILE);
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}
