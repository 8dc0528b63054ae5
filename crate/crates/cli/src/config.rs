//! Case configuration. Precedence: config file, then command-line flags,
//! then built-in defaults. Relative paths inside a config file resolve
//! against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dsa_atlas::atlas::{InjectionSite, ViewLabel};
use dsa_atlas::preproc::PreprocParams;
use dsa_atlas::register::{RegistrationConfig, Stage};
use dsa_atlas::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseConfig {
    pub case_id: String,
    pub atlas: PathBuf,
    pub lut: PathBuf,
    pub frames: PathBuf,
    pub geometry: PathBuf,
    pub output: PathBuf,
    /// Phantom ground truth; enables TRE.
    pub truth: Option<PathBuf>,
    pub debug_dir: Option<PathBuf>,
    pub site: InjectionSite,
    pub view: ViewLabel,
    /// Inclusive frame index range.
    pub frame_range: Option<[usize; 2]>,
    pub stage: Stage,
    /// Recorded in the run manifest; set for phantom cases.
    pub seed: Option<u64>,
    pub preproc: PreprocParams,
    pub registration: RegistrationConfig,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self {
            case_id: "case".into(),
            atlas: PathBuf::new(),
            lut: PathBuf::new(),
            frames: PathBuf::new(),
            geometry: PathBuf::new(),
            output: PathBuf::from("out"),
            truth: None,
            debug_dir: None,
            site: InjectionSite::LeftAnterior,
            view: ViewLabel::Anteroposterior,
            frame_range: None,
            stage: Stage::Bspline,
            seed: None,
            preproc: PreprocParams::default(),
            registration: RegistrationConfig::default(),
        }
    }
}

const PATH_KEYS: [&str; 7] = ["atlas", "lut", "frames", "geometry", "output", "truth", "debug_dir"];

fn cfg_err(why: impl Into<String>) -> Error {
    Error::invalid("case config", why)
}

/// Deep merge of `over` into `base`; tables merge key by key, anything else
/// is replaced.
pub fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(bv) => merge(bv, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl CaseConfig {
    /// Parse a TOML config, resolving its relative paths against `base_dir`.
    pub fn table_from_toml(text: &str, base_dir: &Path) -> Result<toml::Value> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        for key in PATH_KEYS {
            if let Some(toml::Value::String(s)) = table.get_mut(key) {
                let p = Path::new(s.as_str());
                if p.is_relative() {
                    *s = base_dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        Ok(toml::Value::Table(table))
    }

    /// Overlay the config file at `path` (if any) on `flags`.
    pub fn resolve(flags: &CaseConfig, path: Option<&Path>) -> Result<CaseConfig> {
        let Some(path) = path else {
            return Ok(flags.clone());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let file = Self::table_from_toml(&text, dir)?;
        let mut base = toml::Value::try_from(flags).map_err(|e| cfg_err(e.to_string()))?;
        merge(&mut base, file);
        base.try_into().map_err(|e: toml::de::Error| cfg_err(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| cfg_err(e.to_string()))
    }

    /// Every referenced input must exist before any work starts.
    pub fn check_paths(&self) -> Result<()> {
        let mut inputs = vec![
            ("atlas", &self.atlas),
            ("lut", &self.lut),
            ("frames", &self.frames),
            ("geometry", &self.geometry),
        ];
        if let Some(t) = &self.truth {
            inputs.push(("truth", t));
        }
        for (name, p) in inputs {
            if p.as_os_str().is_empty() {
                return Err(cfg_err(format!("no {name} path given")));
            }
            if !p.exists() {
                return Err(cfg_err(format!("{name} path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}
