//! Run configuration: defaults, a flat `key = value` config file, and the
//! validation shared by every command.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::TagScheme;
use crate::decoder::PruneConfig;
use crate::error::{Error, Result};
use crate::tagger::Hyperparams;

/// Everything a run needs. Field defaults: embedding size 50, hidden size
/// 200, dropout 0.5, learning rate 1e-3, 30 epochs, min_count 1, prune
/// width 5.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub token_column: usize,
    pub tag_column: usize,
    pub scheme: TagScheme,
    pub orders: Vec<usize>,
    pub hyperparams: Hyperparams,
    pub min_count: usize,
    pub prune: PruneConfig,
    pub seed: u64,
    pub threads: usize,
    pub parallel_orders: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            dev: None,
            test: None,
            token_column: 0,
            tag_column: 1,
            scheme: TagScheme::Bio,
            orders: vec![1, 2, 3],
            hyperparams: Hyperparams::default(),
            min_count: 1,
            prune: PruneConfig::Width(5),
            seed: 42,
            threads: 1,
            parallel_orders: false,
        }
    }
}

pub fn parse_orders(spec: &str) -> Result<Vec<usize>> {
    let orders: Vec<usize> = spec
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad order '{p}' in '{spec}'")))
        })
        .collect::<Result<_>>()?;
    Ok(orders)
}

/// Parses "token,tag" column indices.
pub fn parse_columns(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!(
            "columns must be 'token,tag', got '{spec}'"
        )));
    }
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad column index '{s}'")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?))
}

impl RunConfig {
    /// Applies one `key = value` setting; unknown keys are rejected so typos
    /// fail loudly.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = |k: &str, v: &str| Error::Config(format!("bad value '{v}' for {k}"));
        match key {
            "train" => self.train = Some(PathBuf::from(value)),
            "dev" => self.dev = Some(PathBuf::from(value)),
            "test" => self.test = Some(PathBuf::from(value)),
            "token_column" => {
                self.token_column = value.parse().map_err(|_| bad_num(key, value))?
            }
            "tag_column" => self.tag_column = value.parse().map_err(|_| bad_num(key, value))?,
            "scheme" => self.scheme = TagScheme::from_str(value)?,
            "orders" => self.orders = parse_orders(value)?,
            "d_emb" => self.hyperparams.d_emb = value.parse().map_err(|_| bad_num(key, value))?,
            "d_hidden" => {
                self.hyperparams.d_hidden = value.parse().map_err(|_| bad_num(key, value))?
            }
            "dropout" => {
                self.hyperparams.dropout = value.parse().map_err(|_| bad_num(key, value))?
            }
            "lr" => self.hyperparams.lr = value.parse().map_err(|_| bad_num(key, value))?,
            "epochs" => {
                self.hyperparams.epochs = value.parse().map_err(|_| bad_num(key, value))?
            }
            "min_count" => self.min_count = value.parse().map_err(|_| bad_num(key, value))?,
            "prune" => {
                self.prune = match value {
                    "off" => PruneConfig::Off,
                    "on" => match self.prune {
                        PruneConfig::Off => PruneConfig::Width(5),
                        keep => keep,
                    },
                    other => return Err(Error::Config(format!("prune must be on/off, got '{other}'"))),
                }
            }
            "prune_width" => {
                self.prune = PruneConfig::Width(value.parse().map_err(|_| bad_num(key, value))?)
            }
            "seed" => self.seed = value.parse().map_err(|_| bad_num(key, value))?,
            "threads" => self.threads = value.parse().map_err(|_| bad_num(key, value))?,
            "parallel_orders" => {
                self.parallel_orders = value.parse().map_err(|_| bad_num(key, value))?
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Reads a flat config file: `key = value` per line, `#` comments and
    /// blank lines ignored.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected 'key = value'", path.display(), i + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() {
            return Err(Error::Config("at least one order is required".into()));
        }
        if self.orders[0] < 1 {
            return Err(Error::Config("orders must be at least 1".into()));
        }
        for pair in self.orders.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Config("orders must be strictly increasing".into()));
            }
        }
        let hp = &self.hyperparams;
        if !(0.0..1.0).contains(&hp.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", hp.dropout)));
        }
        if !(hp.lr > 0.0 && hp.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", hp.lr)));
        }
        if hp.d_emb == 0 || hp.d_hidden == 0 {
            return Err(Error::Config("embedding and hidden sizes must be positive".into()));
        }
        if self.min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if let PruneConfig::Width(0) = self.prune {
            return Err(Error::Config("prune width must be at least 1".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}
