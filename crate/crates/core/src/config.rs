//! Run configuration files.
//!
//! Grammar (one item per line, `#` starts a comment line):
//!
//! ```text
//! file    = { blank | comment | section | entry }
//! section = "[" name "]"          ; "run", "env", or an algorithm tag
//! entry   = key "=" value
//! ```
//!
//! Entries before the first section belong to `[run]`. Environment
//! overrides live in `[env]` or as `env.<key>` entries in `[run]`.
//! An algorithm section (`[ddpg]`, …) overrides that algorithm's
//! hyperparameters by field name; the tuner writes such sections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::algos::{AlgoConfig, Algorithm};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::eval::ExperimentId;

pub const RUN_SECTION: &str = "run";
pub const ENV_SECTION: &str = "env";

/// Parsed sections of a configuration file, in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = RUN_SECTION.to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let bad = |detail: &str| Error::parse(origin, format!("line {}: {detail}", i + 1));
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| bad("unterminated section header"))?.trim();
                if name.is_empty() {
                    return Err(bad("empty section name"));
                }
                section = name.to_string();
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(bad("empty key"));
            }
            let (sec, key) = match k.strip_prefix("env.") {
                Some(rest) if section == RUN_SECTION => (ENV_SECTION.to_string(), rest.to_string()),
                _ => (section.clone(), k.to_string()),
            };
            if cfg.sections.entry(sec).or_default().insert(key, v.to_string()).is_some() {
                return Err(bad(&format!("duplicate key `{k}`")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, entries) in &self.sections {
            if !s.is_empty() {
                s.push('\n');
            }
            writeln!(s, "[{name}]").expect("write to string");
            for (k, v) in entries {
                writeln!(s, "{k} = {v}").expect("write to string");
            }
        }
        s
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value.to_string());
    }

    /// Replaces a whole section.
    pub fn replace_section(&mut self, section: &str, entries: BTreeMap<String, String>) {
        self.sections.insert(section.to_string(), entries);
    }

    /// `env.<key>` overrides, in key order.
    pub fn env_overrides(&self) -> Result<Vec<(String, f64)>> {
        let Some(env) = self.sections.get(ENV_SECTION) else { return Ok(Vec::new()) };
        env.iter().map(|(k, v)| Ok((k.clone(), parse_f64(&format!("env.{k}"), v)?))).collect()
    }

    /// The algorithm's section applied over `base`, if the section exists.
    pub fn algo_config(&self, base: &AlgoConfig) -> Result<Option<AlgoConfig>> {
        let Some(entries) = self.sections.get(base.algorithm.tag()) else { return Ok(None) };
        let mut cfg = base.clone();
        apply_algo_entries(&mut cfg, entries)?;
        Ok(Some(cfg))
    }

    /// Every algorithm section, checked against the algorithm's defaults.
    pub fn algo_sections(&self) -> Result<BTreeMap<Algorithm, BTreeMap<String, String>>> {
        let mut out = BTreeMap::new();
        for alg in Algorithm::ALL {
            if let Some(entries) = self.sections.get(alg.tag()) {
                apply_algo_entries(&mut AlgoConfig::new(alg), entries)?;
                out.insert(alg, entries.clone());
            }
        }
        Ok(out)
    }

    /// Rejects sections that are neither `run`, `env` nor an algorithm tag.
    pub fn check_sections(&self) -> Result<()> {
        for name in self.sections.keys() {
            if name != RUN_SECTION && name != ENV_SECTION && name.parse::<Algorithm>().is_err() {
                return Err(Error::parse("config", format!("unknown section [{name}]")));
            }
        }
        Ok(())
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::parse("config", format!("`{key}` needs a number, got `{v}`")))
}

/// Sets `key = value` pairs on `cfg`; `autotune_alpha` and `norm_adv` also take `true`/`false`.
pub fn apply_algo_entries(cfg: &mut AlgoConfig, entries: &BTreeMap<String, String>) -> Result<()> {
    for (k, v) in entries {
        let value = match v.as_str() {
            "true" => 1.0,
            "false" => 0.0,
            _ => parse_f64(k, v)?,
        };
        cfg.set(k, value)?;
    }
    Ok(())
}

/// Parses `3`, `1..10` (inclusive) or `1,2,5`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::parse("seeds", format!("`{s}` is not `N`, `A..B` or a comma list"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    let mut dedup = seeds.clone();
    dedup.sort_unstable();
    dedup.dedup();
    if seeds.is_empty() || dedup.len() != seeds.len() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Parses `all` or a comma list of algorithm tags.
pub fn parse_algorithms(s: &str) -> Result<Vec<Algorithm>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Algorithm::ALL.to_vec());
    }
    let algs = s.split(',').map(str::parse).collect::<Result<Vec<Algorithm>>>()?;
    let mut seen = algs.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != algs.len() {
        return Err(Error::parse("algorithms", format!("`{s}` lists an algorithm twice")));
    }
    Ok(algs)
}

/// Everything one command needs to launch runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Overrides the experiment's step budget.
    pub steps: Option<u64>,
    pub env_overrides: Vec<(String, f64)>,
    pub out: PathBuf,
    pub workers: usize,
    /// Hyperparameter overrides per algorithm (the file's algorithm sections).
    pub tuned: BTreeMap<Algorithm, BTreeMap<String, String>>,
}

/// Command-line values; each one, when present, wins over the file's `[run]` section.
#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    pub experiment: Option<String>,
    pub algorithms: Option<String>,
    pub seeds: Option<String>,
    pub steps: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(flags: &RunFlags, file: Option<&ConfigFile>) -> Result<Self> {
        let empty = ConfigFile::default();
        let file = file.unwrap_or(&empty);
        file.check_sections()?;
        let from_file = |key: &str| file.get(RUN_SECTION, key).map(str::to_string);
        let pick = |flag: &Option<String>, key: &str| flag.clone().or_else(|| from_file(key));

        let experiment: ExperimentId = pick(&flags.experiment, "experiment")
            .ok_or_else(|| Error::invalid("no experiment given (--experiment or `experiment =` in [run])"))?
            .parse()?;
        let algorithms = parse_algorithms(&pick(&flags.algorithms, "algorithms").unwrap_or_else(|| "all".into()))?;
        let seeds = parse_seeds(&pick(&flags.seeds, "seeds").unwrap_or_else(|| "1..10".into()))?;
        let steps = match flags.steps {
            Some(s) => Some(s),
            None => from_file("steps").map(|s| s.parse().map_err(|_| Error::parse("config", format!("bad steps `{s}`")))).transpose()?,
        };
        if steps == Some(0) {
            return Err(Error::invalid("steps must be positive"));
        }
        let workers = match flags.workers {
            Some(w) => w,
            None => from_file("workers").map(|s| s.parse().map_err(|_| Error::parse("config", format!("bad workers `{s}`")))).transpose()?.unwrap_or(1),
        };
        if workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        let out = flags.out.clone().or_else(|| from_file("out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("runs"));
        let known = ["experiment", "algorithms", "seeds", "steps", "workers", "out"];
        if let Some(run) = file.sections.get(RUN_SECTION) {
            if let Some(k) = run.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(Error::parse("config", format!("unknown [run] key `{k}`")));
            }
        }
        let env_overrides = file.env_overrides()?;
        let mut probe = EnvSpec::new(experiment.env);
        for (k, v) in &env_overrides {
            probe.set_override(k, *v)?;
        }
        Ok(Self { experiment, algorithms, seeds, steps, env_overrides, out, workers, tuned: file.algo_sections()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# quick run
experiment = v0-homo-64L
seeds = 1..3
env.T_physics = 324

[env]
relax_a = 0.5

[ddpg]
learning_rate = 1e-3
actor_critic_layer_size = 32
";

    #[test]
    fn parses_sections_and_env_keys() {
        let f = ConfigFile::parse(SAMPLE, "sample").unwrap();
        assert_eq!(f.get("run", "seeds"), Some("1..3"));
        assert_eq!(f.env_overrides().unwrap(), vec![("T_physics".into(), 324.0), ("relax_a".into(), 0.5)]);
        let ddpg = f.algo_config(&AlgoConfig::new(Algorithm::Ddpg)).unwrap().unwrap();
        assert_eq!((ddpg.learning_rate, ddpg.actor_critic_layer_size), (1e-3, 32));
        assert!(f.algo_config(&AlgoConfig::new(Algorithm::Td3)).unwrap().is_none());
        assert_eq!(ConfigFile::parse(&f.to_text(), "again").unwrap(), f);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigFile::parse("[run\n", "x").is_err());
        assert!(ConfigFile::parse("just words\n", "x").is_err());
        assert!(ConfigFile::parse("a = 1\na = 2\n", "x").is_err());
        let f = ConfigFile::parse("[ddpg]\nnot_a_field = 1\n", "x").unwrap();
        assert!(f.algo_sections().is_err());
        let f = ConfigFile::parse("[nonsense]\n", "x").unwrap();
        assert!(f.check_sections().is_err());
    }

    #[test]
    fn seeds_and_algorithms() {
        assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("3, 1").unwrap(), vec![3, 1]);
        for bad in ["", "4..1", "1,1", "x", "1..b"] {
            assert!(parse_seeds(bad).is_err(), "{bad}");
        }
        assert_eq!(parse_algorithms("all").unwrap().len(), 8);
        assert_eq!(parse_algorithms("TD3,ddpg").unwrap(), vec![Algorithm::Td3, Algorithm::Ddpg]);
        assert!(parse_algorithms("td3,td3").is_err());
        assert!(parse_algorithms("dqn").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let f = ConfigFile::parse(SAMPLE, "sample").unwrap();
        let flags = RunFlags { seeds: Some("5".into()), algorithms: Some("td3".into()), ..Default::default() };
        let rc = RunConfig::resolve(&flags, Some(&f)).unwrap();
        assert_eq!(rc.experiment.to_string(), "v0-homo-64L");
        assert_eq!((rc.seeds.clone(), rc.algorithms.clone(), rc.workers), (vec![5], vec![Algorithm::Td3], 1));
        assert!(rc.tuned.contains_key(&Algorithm::Ddpg));
        assert!(RunConfig::resolve(&RunFlags::default(), None).is_err());
        let bad_env = ConfigFile::parse("experiment = v0-homo-64L\nenv.nope = 1\n", "x").unwrap();
        assert!(RunConfig::resolve(&RunFlags::default(), Some(&bad_env)).is_err());
    }
}
