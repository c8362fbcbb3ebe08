//! Merging of a flat `key=value` recipe file with command-line flags.
//!
//! Recipe keys: `seed`, `jobs`, `out`, `farsec_threshold`, `keywords`,
//! `vocab_cap`, `population`, `generations`, `tune`, `validation_fraction`,
//! `decision_threshold`, `order_column`, and `data.<name>` for dataset paths.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use sbr_core::HarnessConfig;

use crate::CommonArgs;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_OUT: &str = "sbr-results";

#[derive(Debug, Clone)]
pub struct Recipe {
    /// Dataset name to path, in name order.
    pub data: BTreeMap<String, PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub order_column: Option<String>,
    pub harness: HarnessConfig,
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            data: BTreeMap::new(),
            seed: DEFAULT_SEED,
            jobs: 1,
            out: PathBuf::from(DEFAULT_OUT),
            order_column: None,
            harness: HarnessConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

/// Splits `name=path`; a bare path is named after its lowercased file stem.
pub fn parse_data_arg(arg: &str) -> Result<(String, PathBuf)> {
    if let Some((name, path)) = arg.split_once('=') {
        let name = name.trim();
        if name.is_empty() || path.trim().is_empty() {
            bail!("--data expects name=path, got `{arg}`");
        }
        return Ok((name.to_string(), PathBuf::from(path.trim())));
    }
    let path = PathBuf::from(arg);
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| anyhow!("cannot derive a dataset name from `{arg}`"))?;
    Ok((stem.to_lowercase(), path))
}

impl Recipe {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let h = &mut self.harness;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "order_column" => self.order_column = Some(value.to_string()),
            "farsec_threshold" => h.farsec.threshold = parse(key, value)?,
            "keywords" => h.farsec.keyword_count = parse(key, value)?,
            "vocab_cap" => h.features.vocab_cap = parse(key, value)?,
            "population" => h.tuning.population = parse(key, value)?,
            "generations" => h.tuning.generations = parse(key, value)?,
            "tune" => h.tuning.enabled = parse(key, value)?,
            "validation_fraction" => h.validation_fraction = parse(key, value)?,
            "decision_threshold" => h.decision_threshold = parse(key, value)?,
            _ => match key.strip_prefix("data.") {
                Some(name) if !name.is_empty() => {
                    self.data.insert(name.to_string(), PathBuf::from(value));
                }
                _ => bail!("unknown recipe key `{key}`"),
            },
        }
        Ok(())
    }

    pub fn parse_file_contents(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
            self.apply(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut r = Recipe::default();
        r.parse_file_contents(&text)
            .with_context(|| format!("in recipe {}", path.display()))?;
        Ok(r)
    }

    /// Recipe file first, then flags on top.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut r = match &args.config {
            Some(p) => Recipe::load(p)?,
            None => Recipe::default(),
        };
        for d in &args.data {
            let (name, path) = parse_data_arg(d)?;
            r.data.insert(name, path);
        }
        let h = &mut r.harness;
        if let Some(v) = args.seed {
            r.seed = v;
        }
        if let Some(v) = args.jobs {
            r.jobs = v;
        }
        if let Some(v) = &args.out {
            r.out = v.clone();
        }
        if let Some(v) = &args.order_column {
            r.order_column = Some(v.clone());
        }
        if let Some(v) = args.farsec_threshold {
            h.farsec.threshold = v;
        }
        if let Some(v) = args.keywords {
            h.farsec.keyword_count = v;
        }
        if let Some(v) = args.vocab_cap {
            h.features.vocab_cap = v;
        }
        if let Some(v) = args.population {
            h.tuning.population = v;
        }
        if let Some(v) = args.generations {
            h.tuning.generations = v;
        }
        if args.no_tune {
            h.tuning.enabled = false;
        }
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        self.harness.farsec.validate()?;
        if self.harness.features.vocab_cap == 0 {
            bail!("--vocab-cap must be at least 1");
        }
        if !(0.0..1.0).contains(&self.harness.validation_fraction) {
            bail!("validation_fraction must lie in [0, 1)");
        }
        for (name, path) in &self.data {
            if !path.is_file() {
                bail!("dataset `{name}`: no such file {}", path.display());
            }
        }
        Ok(())
    }
}
