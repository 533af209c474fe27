//! Sectioned `key = value` run configuration shared by all commands.
//!
//! ```text
//! # comment
//! [net]
//! arch = shallow_u_stack(3)
//! channels = 12
//! [train]
//! schedule = 1:50,2:10
//! ```
//!
//! Every key must be known and may appear once; `section.key` overrides from
//! the command line go through [`RunConfig::set`].

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::NetConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Mirror maps across the detected reflection plane before scoring.
    pub symmetrize: bool,
    /// Uniform PR thresholds.
    pub thresholds: usize,
    /// Binarization threshold for masks and salient regions.
    pub salient_threshold: f64,
    /// Average-pool kernel used at inference; 0 means the final schedule kernel.
    pub kernel: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { symmetrize: true, thresholds: 101, salient_threshold: 0.9, kernel: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalConfig {
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub retrieval: RetrievalConfig,
}

fn parse_value<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Apply `section.key = value`.
    pub fn set(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (section, key) =
            dotted.split_once('.').ok_or_else(|| Error::Config(format!("key {dotted:?} needs a section prefix")))?;
        match section {
            "net" => self.net.set(key, value),
            "train" => self.train.set(key, value),
            "eval" => {
                match key {
                    "symmetrize" => self.eval.symmetrize = parse_value(dotted, value)?,
                    "thresholds" => self.eval.thresholds = parse_value(dotted, value)?,
                    "salient_threshold" => self.eval.salient_threshold = parse_value(dotted, value)?,
                    "kernel" => self.eval.kernel = parse_value(dotted, value)?,
                    _ => return Err(Error::Config(format!("unknown eval key {key:?}"))),
                }
                Ok(())
            }
            "retrieval" => match key {
                "k" => {
                    self.retrieval.k = parse_value(dotted, value)?;
                    Ok(())
                }
                _ => Err(Error::Config(format!("unknown retrieval key {key:?}"))),
            },
            _ => Err(Error::Config(format!("unknown section {section:?}"))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| perr(format!("expected key = value, got {line:?}")))?;
            let s = section.as_deref().ok_or_else(|| perr("key outside any [section]".into()))?;
            let dotted = format!("{s}.{}", k.trim());
            if !seen.insert(dotted.clone()) {
                return Err(perr(format!("duplicate key {dotted}")));
            }
            cfg.set(&dotted, v.trim()).map_err(|e| perr(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.eval.salient_threshold) {
            return Err(Error::Config(format!("eval.salient_threshold {} outside [0,1]", self.eval.salient_threshold)));
        }
        if self.eval.thresholds < 2 {
            return Err(Error::Config("eval.thresholds must be >= 2".into()));
        }
        Ok(())
    }

    /// Inference kernel: `eval.kernel`, or the last schedule kernel.
    pub fn infer_kernel(&self) -> usize {
        if self.eval.kernel == 0 {
            self.train.final_kernel()
        } else {
            self.eval.kernel
        }
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[net]\n");
        for (k, v) in self.net.to_pairs() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str("\n[train]\n");
        for (k, v) in self.train.to_pairs() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!(
            "\n[eval]\nsymmetrize = {}\nthresholds = {}\nsalient_threshold = {}\nkernel = {}\n",
            self.eval.symmetrize, self.eval.thresholds, self.eval.salient_threshold, self.eval.kernel
        ));
        s.push_str(&format!("\n[retrieval]\nk = {}\n", self.retrieval.k));
        s
    }
}
