use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sofic::entropy::{LPreset, Strategy, SweepGrids};
use sofic::group::SoficFamily;
use sofic::microstates::ShiftSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Metric,
    Observable,
    Both,
    SpectralCertificate,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Metric => "metric",
            Method::Observable => "observable",
            Method::Both => "both",
            Method::SpectralCertificate => "spectral-certificate",
        }
    }
}

fn default_family() -> String {
    "cyclic".into()
}
fn default_support_radius() -> usize {
    1
}
fn default_rank() -> usize {
    2
}
fn default_f_radius() -> Vec<usize> {
    vec![0]
}
fn default_l_preset() -> Vec<String> {
    vec!["cyl0".into()]
}
fn default_strategy() -> String {
    "auto".into()
}
fn default_samples() -> u64 {
    20_000
}
fn default_kappa() -> Vec<f64> {
    vec![0.5]
}
fn default_output() -> String {
    "out".into()
}
fn default_nets() -> usize {
    1
}
fn default_m() -> f64 {
    1.0
}
fn default_frequency() -> f64 {
    std::f64::consts::PI
}

/// One experiment file. Keys are flat; the system is a path relative to the file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: Option<String>,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_support_radius")]
    pub support_radius: usize,
    /// Free rank for `random-permutation`, lattice rank for `quotient`.
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub d: Vec<usize>,
    /// Quotient side lengths; `d = side^rank`.
    #[serde(default)]
    pub sides: Vec<u64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
    #[serde(default = "default_f_radius")]
    pub f_radius: Vec<usize>,
    #[serde(default = "default_l_preset")]
    pub l_preset: Vec<String>,
    pub method: Method,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: u64,
    /// Partition scales for observable sweeps.
    #[serde(default = "default_kappa")]
    pub kappa: Vec<f64>,
    /// Observable tolerances; defaults to the squares of `delta`.
    #[serde(default)]
    pub observable_delta: Vec<f64>,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub witness_length: Option<usize>,
    #[serde(default = "default_frequency")]
    pub witness_frequency: f64,
    #[serde(default)]
    pub witness_file: Option<String>,
    #[serde(default = "default_nets")]
    pub nets: usize,
    #[serde(default = "default_m")]
    pub m: f64,
}

/// A validated config together with its resolved inputs.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub system: Option<ShiftSystem>,
    system_text: Option<String>,
    witness_text: Option<String>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| anyhow!("malformed config {}: {e}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(config, dir)
    }

    pub fn from_config(config: ExperimentConfig, dir: PathBuf) -> Result<Self> {
        let read = |rel: &str, what: &str| -> Result<String> {
            let p = dir.join(rel);
            std::fs::read_to_string(&p).with_context(|| format!("field '{what}': reading {}", p.display()))
        };
        let system_text = config.system.as_deref().map(|s| read(s, "system")).transpose()?;
        let witness_text = config
            .witness_file
            .as_deref()
            .map(|s| read(s, "witness_file"))
            .transpose()?;
        let system = system_text
            .as_deref()
            .map(|t| ShiftSystem::from_toml(t).map_err(|e| anyhow!("field 'system': {e}")))
            .transpose()?;
        let exp = Experiment {
            config,
            dir,
            system,
            system_text,
            witness_text,
        };
        exp.validate()?;
        Ok(exp)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        let nonempty = |ok: bool, field: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                bail!("field '{field}': must be a nonempty list")
            }
        };
        match c.family.as_str() {
            "quotient" => nonempty(!c.sides.is_empty(), "sides")?,
            "cyclic" | "random-permutation" => nonempty(!c.d.is_empty(), "d")?,
            other => bail!("field 'family': unknown family '{other}' (cyclic | quotient | random-permutation)"),
        }
        nonempty(!c.epsilon.is_empty(), "epsilon")?;
        if c.method == Method::SpectralCertificate {
            if c.witness_length.is_none() && c.witness_file.is_none() {
                bail!("field 'witness_length': spectral-certificate needs witness_length or witness_file");
            }
            if c.nets == 0 || !(c.m > 0.0) {
                bail!("fields 'nets' and 'm' must be positive");
            }
        } else {
            if self.system.is_none() {
                bail!("field 'system': required for method '{}'", c.method.as_str());
            }
            nonempty(!c.delta.is_empty(), "delta")?;
            nonempty(!c.f_radius.is_empty(), "f_radius")?;
            nonempty(!c.l_preset.is_empty(), "l_preset")?;
            nonempty(!c.kappa.is_empty(), "kappa")?;
            for l in &c.l_preset {
                LPreset::parse(l).map_err(|e| anyhow!("field 'l_preset': {e}"))?;
            }
            self.grids()?.check().map_err(|e| anyhow!("grids: {e}"))?;
        }
        self.strategy().map_err(|e| anyhow!("field 'strategy': {e}"))?;
        self.family().map_err(|e| anyhow!("field 'family': {e}"))?;
        Ok(())
    }

    pub fn strategy(&self) -> sofic::Result<Strategy> {
        Strategy::parse(&self.config.strategy, self.config.samples, self.config.seed)
    }

    pub fn family(&self) -> sofic::Result<SoficFamily> {
        let c = &self.config;
        match c.family.as_str() {
            "quotient" => SoficFamily::quotient(c.rank, c.sides.clone(), c.support_radius),
            "random-permutation" => SoficFamily::random_permutation(c.rank, c.d.clone(), c.support_radius, c.seed),
            _ => SoficFamily::cyclic(c.d.clone(), c.support_radius),
        }
    }

    pub fn grids(&self) -> Result<SweepGrids> {
        let c = &self.config;
        Ok(SweepGrids {
            epsilons: c.epsilon.clone(),
            deltas: c.delta.clone(),
            f_radii: c.f_radius.clone(),
            l_presets: c
                .l_preset
                .iter()
                .map(|l| LPreset::parse(l))
                .collect::<sofic::Result<_>>()?,
        })
    }

    /// Grids for an observable sweep: `κ` takes the place of `ε`.
    pub fn observable_grids(&self) -> Result<SweepGrids> {
        let c = &self.config;
        let deltas = if c.observable_delta.is_empty() {
            c.delta.iter().map(|d| d * d).collect()
        } else {
            c.observable_delta.clone()
        };
        Ok(SweepGrids {
            epsilons: c.kappa.clone(),
            deltas,
            ..self.grids()?
        })
    }

    pub fn witness_text(&self) -> Option<&str> {
        self.witness_text.as_deref()
    }

    /// SHA-256 of the canonical JSON form, with file references replaced by their contents.
    /// Output location does not enter the hash.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(&self.config)?;
        let obj = v.as_object_mut().expect("config serializes to an object");
        obj.remove("output");
        obj.insert("system".into(), serde_json::json!(self.system_text));
        obj.insert("witness_file".into(), serde_json::json!(self.witness_text));
        // serde_json maps are key-sorted, so this text is independent of key order in the file
        let canonical = serde_json::to_string(&v)?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }
}
