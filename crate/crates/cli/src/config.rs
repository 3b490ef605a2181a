//! Run configuration: a flat TOML file.
//!
//! ```toml
//! schema_version = 1
//! site = "siegen"
//! latitude = 50.9
//! longitude = 8.0
//! data = "ghi.csv"             # timestamp_utc, ghi_whm2, toa_whm2
//! learn_years = 7              # first years learn, the rest test
//! tau = 0.75
//! families = ["gumbel", "gaussian", "bb1"]
//! family = "gumbel"            # family simulated by default
//! variant = "C2"
//! scenarios = 1000
//! seed = 42                    # required by simulate unless --seed is given
//! out = "out"
//! synthetic_years = 14         # years emitted by `synth`
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ghi_core::artifact::short_hash;
use ghi_core::pipeline::FitConfig;
use ghi_core::scoring::EvalConfig;
use ghi_core::{Family, Site, Variant};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_site")]
    pub site: String,
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_learn_years")]
    pub learn_years: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_families")]
    pub families: Vec<String>,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_synthetic_years")]
    pub synthetic_years: usize,
    #[serde(default = "default_spread_members")]
    pub spread_members: usize,
}

fn default_site() -> String {
    "site".into()
}
fn default_learn_years() -> usize {
    7
}
fn default_tau() -> f64 {
    0.75
}
fn default_families() -> Vec<String> {
    vec!["gumbel".into(), "gaussian".into(), "bb1".into()]
}
fn default_family() -> String {
    "gumbel".into()
}
fn default_variant() -> String {
    "C2".into()
}
fn default_scenarios() -> usize {
    1000
}
fn default_out() -> PathBuf {
    "out".into()
}
fn default_synthetic_years() -> usize {
    14
}
fn default_spread_members() -> usize {
    1000
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

pub fn parse_family(s: &str) -> Result<Family, ConfigError> {
    match Family::parse(s) {
        Some(Family::Independence) | None => Err(bad(format!("unknown copula family '{s}' (gumbel, gaussian, bb1)"))),
        Some(f) => Ok(f),
    }
}

pub fn parse_variant(s: &str) -> Result<Variant, ConfigError> {
    match s.to_ascii_uppercase().as_str() {
        "C1" => Ok(Variant::C1),
        "C2" => Ok(Variant::C2),
        _ => Err(bad(format!("unknown variant '{s}' (C1, C2)"))),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version)));
        }
        cfg.data = cfg.data.map(|p| base.join(p));
        cfg.out = base.join(&cfg.out);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(-90.0..=90.0).contains(&self.latitude) || !(-180.0..=180.0).contains(&self.longitude) {
            return Err(bad("latitude/longitude out of range"));
        }
        if self.learn_years == 0 {
            return Err(bad("learn_years must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(bad("tau must lie in (0, 1)"));
        }
        if self.scenarios == 0 {
            return Err(bad("scenarios must be at least 1"));
        }
        if self.families.is_empty() {
            return Err(bad("families must not be empty"));
        }
        for f in &self.families {
            parse_family(f)?;
        }
        let fam = parse_family(&self.family)?;
        if !self.families.iter().any(|f| Family::parse(f) == Some(fam)) {
            return Err(bad(format!("family '{}' is not among the fitted families", self.family)));
        }
        parse_variant(&self.variant)?;
        if self.synthetic_years == 0 || self.spread_members == 0 {
            return Err(bad("synthetic_years and spread_members must be positive"));
        }
        Ok(())
    }

    /// Short digest of the canonical JSON form; written into every output.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn site(&self) -> Site {
        Site::new(self.site.clone(), self.latitude, self.longitude)
    }

    pub fn fit_config(&self) -> FitConfig {
        let mut f = FitConfig::default();
        f.bounds.tau = self.tau;
        f.families = self.families.iter().map(|s| parse_family(s).expect("validated")).collect();
        f
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { spread_members: self.spread_members, ..EvalConfig::default() }
    }

    /// Checks the learn/test split against the number of available years.
    pub fn split(&self, years: usize) -> Result<(usize, usize), ConfigError> {
        if years <= self.learn_years {
            return Err(bad(format!("{years} data years leave no test years after {} learn years", self.learn_years)));
        }
        Ok((self.learn_years, years - self.learn_years))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nlatitude = 50.9\nlongitude = 8.0\n";

    #[test]
    fn defaults_and_resolution() {
        let c = RunConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(c.learn_years, 7);
        assert_eq!(c.out, PathBuf::from("/base/out"));
        assert_eq!(c.seed, None);
        assert_eq!(c.fit_config().families.len(), 3);
        assert_eq!(c.hash(), RunConfig::from_toml(MINIMAL, Path::new("/base")).unwrap().hash());
    }

    #[test]
    fn rejections() {
        for text in [
            "schema_version = 2\nlatitude = 1.0\nlongitude = 1.0\n",
            "schema_version = 1\nlatitude = 1.0\n",
            "schema_version = 1\nlatitude = 1.0\nlongitude = 1.0\nscenarios = 0\n",
            "schema_version = 1\nlatitude = 1.0\nlongitude = 1.0\nfamily = \"clayton\"\n",
            "schema_version = 1\nlatitude = 1.0\nlongitude = 1.0\nvariant = \"C3\"\n",
            "schema_version = 1\nlatitude = 1.0\nlongitude = 1.0\nunknown_key = 3\n",
            "schema_version = 1\nlatitude = 1.0\nlongitude = 1.0\nfamilies = [\"gaussian\"]\n",
        ] {
            assert!(RunConfig::from_toml(text, Path::new(".")).is_err(), "{text}");
        }
        let c = RunConfig::from_toml(MINIMAL, Path::new(".")).unwrap();
        assert!(c.split(7).is_err());
        assert_eq!(c.split(10).unwrap(), (7, 3));
    }
}
