//! Key-value experiment configuration.
//!
//! Values are layered: built-in defaults (desk or `--full` scale), then the config file's
//! unnamed section, then the file's section named after the subcommand, then `--key=value`
//! overrides, then `--seed`.

use crate::error::{usage, Result};
use ini::Ini;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subcommand {
    Online,
    TheorySuite,
    ReferenceImpact,
    EtaGamma,
    DisplacementDemo,
    ClosedForm,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::Online,
        Subcommand::TheorySuite,
        Subcommand::ReferenceImpact,
        Subcommand::EtaGamma,
        Subcommand::DisplacementDemo,
        Subcommand::ClosedForm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Online => "online",
            Self::TheorySuite => "theory-suite",
            Self::ReferenceImpact => "reference-impact",
            Self::EtaGamma => "eta-gamma",
            Self::DisplacementDemo => "displacement-demo",
            Self::ClosedForm => "closed-form",
        }
    }

    /// `(key, desk default, full-scale default)`.
    pub fn keys(self) -> &'static [(&'static str, &'static str, &'static str)] {
        match self {
            Self::Online => &[
                ("seed", "0", "0"),
                ("seeds", "0,1,2,3,4", "0,1,2,3,4"),
                ("d", "8", "32"),
                ("n", "4096", "16384"),
                ("rounds", "10", "10"),
                ("k", "1,2,8", "1,2,8"),
                ("alpha", "0.01", "0.01"),
                ("beta", "1", "1"),
                ("sigma0", "1", "1"),
                ("steps", "100", "100"),
                ("w0_scale", "1", "1"),
                ("fresh_prompts", "false", "false"),
                ("exact", "false", "false"),
                ("joint_sigma", "false", "false"),
                ("batch_size", "0", "0"),
                ("record_bound", "false", "false"),
            ],
            Self::TheorySuite => &[
                ("seed", "0", "0"),
                ("instances", "50", "200"),
                ("trials", "100", "400"),
                ("max_n", "20", "20"),
                ("alpha", "0.01", "0.01"),
                ("beta", "1", "1"),
                ("label_instances", "5", "50"),
                ("label_draws", "1000000", "1000000"),
                ("instance_file", "", ""),
                ("corrupt", "none", "none"),
            ],
            Self::ReferenceImpact => &[
                ("seed", "0", "0"),
                ("seeds", "0,1,2,3,4", "0,1,2,3,4"),
                ("d", "8", "32"),
                ("n", "4096", "16384"),
                ("rounds", "10", "10"),
                ("k", "1", "1"),
                ("alpha", "0.01", "0.01"),
                ("beta", "1", "1"),
                ("sigma0", "1", "1"),
                ("steps", "100", "100"),
                ("scales", "0.05,10", "0.05,10"),
            ],
            Self::EtaGamma => &[
                ("seed", "0", "0"),
                ("k", "1,2,4,8", "1,2,4,8"),
                ("delta", "0,0.5,1,3,10", "0,0.5,1,3,10"),
                ("mc_samples", "100000", "10000000"),
                ("mc_tolerance_se", "4", "4"),
            ],
            Self::DisplacementDemo => &[
                ("seed", "0", "0"),
                ("d", "8", "32"),
                ("n", "512", "4096"),
                ("alpha", "0.1", "0.1"),
                ("beta", "1", "1"),
            ],
            Self::ClosedForm => &[
                ("seed", "0", "0"),
                ("d", "4", "32"),
                ("beta", "1", "1"),
                ("sigma0", "1", "1"),
                ("rounds", "100", "100"),
                ("perturbations", "100", "100"),
                ("mc_samples", "100000", "1000000"),
            ],
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown subcommand `{s}`"))
    }
}

/// Fully resolved parameters for one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    subcommand: Subcommand,
    values: BTreeMap<String, String>,
    full: bool,
}

impl ExperimentConfig {
    /// Built-in defaults only.
    pub fn defaults(subcommand: Subcommand, full: bool) -> Self {
        let values = subcommand
            .keys()
            .iter()
            .map(|(k, desk, big)| (k.to_string(), if full { big } else { desk }.to_string()))
            .collect();
        Self { subcommand, values, full }
    }

    pub fn resolve(
        subcommand: Subcommand,
        file: Option<&Path>,
        overrides: &[(String, String)],
        seed: Option<u64>,
        full: bool,
    ) -> Result<Self> {
        let mut cfg = Self::defaults(subcommand, full);
        if let Some(path) = file {
            if !path.is_file() {
                return Err(usage("--config", format!("{} does not exist", path.display())));
            }
            let ini = Ini::load_from_file(path)?;
            for section in [None, Some(subcommand.name())] {
                if let Some(props) = ini.section(section) {
                    for (k, v) in props.iter() {
                        cfg.set(k, v)?;
                    }
                }
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        if let Some(s) = seed {
            cfg.set("seed", &s.to_string())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(usage(key, format!("unknown key for `{}`", self.subcommand))),
        }
    }

    /// Parses every key once so bad values surface before any work starts.
    fn validate(&self) -> Result<()> {
        for key in self.values.keys() {
            match key.as_str() {
                "seeds" => {
                    if self.list::<u64>(key)?.is_empty() {
                        return Err(usage(key, "seeds must be non-empty"));
                    }
                }
                "k" => {
                    let ks = self.list::<usize>(key)?;
                    if ks.is_empty() || ks.contains(&0) {
                        return Err(usage(key, "need at least one k, each >= 1"));
                    }
                }
                "scales" | "delta" => {
                    if self.list::<f64>(key)?.is_empty() {
                        return Err(usage(key, "list must be non-empty"));
                    }
                }
                "fresh_prompts" | "exact" | "joint_sigma" | "record_bound" => {
                    self.bool(key)?;
                }
                "alpha" | "beta" | "sigma0" | "w0_scale" | "mc_tolerance_se" => {
                    let v = self.f64(key)?;
                    if !(v >= 0.0) || (key != "alpha" && key != "w0_scale" && v == 0.0) {
                        return Err(usage(key, format!("out of range: {v}")));
                    }
                }
                "instance_file" => {
                    if let Some(p) = self.path(key) {
                        if !p.is_file() {
                            return Err(usage(key, format!("{} does not exist", p.display())));
                        }
                    }
                }
                "corrupt" => {}
                "d" | "n" | "mc_samples" | "label_draws" => {
                    if self.usize(key)? == 0 {
                        return Err(usage(key, "must be positive"));
                    }
                }
                _ => {
                    self.u64(key)?;
                }
            }
        }
        Ok(())
    }

    pub fn subcommand(&self) -> Subcommand {
        self.subcommand
    }

    pub fn full(&self) -> bool {
        self.full
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values.get(key).map(String::as_str).ok_or_else(|| usage(key, "missing"))
    }

    fn parse<T: FromStr>(&self, key: &str, text: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        text.trim().parse::<T>().map_err(|e| usage(key, format!("cannot parse `{text}`: {e}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key, self.raw(key)?)?;
        if !v.is_finite() {
            return Err(usage(key, "must be finite"));
        }
        Ok(v)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key, self.raw(key)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key, self.raw(key)?)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key, self.raw(key)?)
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)?
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| self.parse(key, s))
            .collect()
    }

    /// `None` for an empty value.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }
}

/// Splits `--key=value` overrides from the arguments clap should see. The common flags
/// keep their own meaning in either spelling.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    const COMMON: [&str; 4] = ["config", "out", "seed", "full"];
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            if !COMMON.contains(&k) {
                overrides.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}
