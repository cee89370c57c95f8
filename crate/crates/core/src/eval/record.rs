//! Per-run episode logs and their on-disk form.
//!
//! A record file is one JSON header line prefixed with `# `, a column line,
//! then one `experiment_id,algorithm,seed,global_step,episodic_return` line
//! per completed episode. Returns are written in shortest round-trip form,
//! so a record read back compares equal to the one written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algos::{AlgoConfig, Algorithm, EpisodeLog};
use crate::env::EnvSpec;
use crate::error::{Error, Result};

pub const COLUMNS: &str = "experiment_id,algorithm,seed,global_step,episodic_return";

/// The episodes of one (experiment, algorithm, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub experiment_id: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episodes: Vec<EpisodeLog>,
    pub config_digest: String,
    /// `completed`, `stopped at …` or `diverged at …`.
    pub status: String,
    pub wall_time_s: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    experiment_id: String,
    algorithm: String,
    seed: u64,
    config_digest: String,
    status: String,
    wall_time_s: f64,
}

/// SHA-256 over the algorithm configuration and the environment spec.
pub fn config_digest(cfg: &AlgoConfig, env: &EnvSpec) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(cfg).expect("config serialises"));
    h.update(format!("{env:?}"));
    hex::encode(h.finalize())
}

impl RunRecord {
    /// Checks that global steps are strictly increasing.
    pub fn validate(&self) -> Result<()> {
        for w in self.episodes.windows(2) {
            if w[1].global_step <= w[0].global_step {
                return Err(Error::invalid(format!(
                    "{}: global_step {} does not increase after {}",
                    self.file_name(),
                    w[1].global_step,
                    w[0].global_step
                )));
            }
        }
        Ok(())
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.episodic_return).collect()
    }

    /// `<algorithm>-seed<seed>.csv`.
    pub fn file_name(&self) -> String {
        format!("{}-seed{}.csv", self.algorithm.tag(), self.seed)
    }

    /// The episode lines only; identical for identical runs regardless of wall time.
    pub fn body(&self) -> String {
        let mut s = String::new();
        for e in &self.episodes {
            writeln!(s, "{},{},{},{},{}", self.experiment_id, self.algorithm.tag(), self.seed, e.global_step, e.episodic_return)
                .expect("write to string");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let header = Header {
            experiment_id: self.experiment_id.clone(),
            algorithm: self.algorithm.tag().to_string(),
            seed: self.seed,
            config_digest: self.config_digest.clone(),
            status: self.status.clone(),
            wall_time_s: self.wall_time_s,
        };
        format!("# {}\n{COLUMNS}\n{}", serde_json::to_string(&header).expect("header serialises"), self.body())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |detail: String| Error::parse(origin, detail);
        let mut lines = text.lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, l)) if l.starts_with("# ") => serde_json::from_str(&l[2..]).map_err(|e| err(format!("header: {e}")))?,
            _ => return Err(err("missing `# {…}` header line".into())),
        };
        match lines.next() {
            Some((_, l)) if l.trim() == COLUMNS => {}
            _ => return Err(err(format!("line 2 must be `{COLUMNS}`"))),
        }
        let algorithm: Algorithm = header.algorithm.parse()?;
        let mut episodes = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| err(format!("line {}: {what}", i + 1));
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            if f[0] != header.experiment_id || f[1] != algorithm.tag() || f[2].parse::<u64>().ok() != Some(header.seed) {
                return Err(bad("experiment, algorithm or seed disagrees with the header"));
            }
            let global_step = f[3].parse().map_err(|_| bad("bad global_step"))?;
            let episodic_return = f[4].parse().map_err(|_| bad("bad episodic_return"))?;
            episodes.push(EpisodeLog { global_step, episodic_return });
        }
        let record = Self {
            experiment_id: header.experiment_id,
            algorithm,
            seed: header.seed,
            episodes,
            config_digest: header.config_digest,
            status: header.status,
            wall_time_s: header.wall_time_s,
        };
        record.validate()?;
        Ok(record)
    }

    /// Writes `dir/<file_name>` through a temporary file and a rename.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(self.file_name());
        let tmp = dir.join(format!(".{}.tmp", self.file_name()));
        fs::write(&tmp, self.to_text()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Every `*.csv` record below `dir`, sorted by path.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths = Vec::new();
    collect_csv(dir, &mut paths)?;
    paths.sort();
    let records = paths.iter().map(|p| RunRecord::read(p)).collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::Empty(format!("no records under {}", dir.display())));
    }
    Ok(records)
}

fn collect_csv(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_csv(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "csv") {
            out.push(path);
        }
    }
    Ok(())
}
