//! Synthetic cases as pipeline inputs, in memory or as a case directory with
//! a ready-to-run `case.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsa_atlas::atlas::{select_labels, TerritoryLUT};
use dsa_atlas::imgcore::LabelVolume;
use dsa_atlas::io_util::atomic_write;
use dsa_atlas::phantom::{make_case, phantom_geometry, synth_atlas, synth_lut, write_case, PhantomCase, PhantomConfig};
use dsa_atlas::projector::ConeBeamGeometry;
use dsa_atlas::register::Stage;
use dsa_atlas::{Error, Result};

use crate::config::CaseConfig;
use crate::pipeline::CaseInputs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSetup {
    /// Cubic atlas side in voxels.
    pub atlas_size: usize,
    pub territories: usize,
    pub atlas_seed: u64,
    /// Square detector side in pixels.
    pub detector_px: usize,
    pub case: PhantomConfig,
}

impl Default for PhantomSetup {
    fn default() -> Self {
        Self {
            atlas_size: 64,
            territories: 6,
            atlas_seed: 1,
            detector_px: 192,
            case: PhantomConfig::default(),
        }
    }
}

/// Atlas, table and geometry shared by every case of one setup.
#[derive(Clone, Debug)]
pub struct PhantomScene {
    pub atlas: LabelVolume,
    pub lut: TerritoryLUT,
    pub geometry: ConeBeamGeometry,
}

impl PhantomScene {
    pub fn new(setup: &PhantomSetup) -> Result<Self> {
        let atlas = synth_atlas([setup.atlas_size; 3], setup.territories, setup.atlas_seed)?;
        let lut = synth_lut(setup.territories)?;
        let geometry = phantom_geometry(setup.case.view, setup.detector_px, &atlas);
        Ok(Self { atlas, lut, geometry })
    }

    pub fn case(&self, config: &PhantomConfig) -> Result<PhantomCase> {
        let labels = select_labels(&self.lut, config.site)?;
        make_case(&self.atlas, &self.geometry, &labels, config)
    }

    /// Pipeline inputs for a case, ground truth attached.
    pub fn inputs(&self, case_id: &str, case: &PhantomCase) -> CaseInputs {
        CaseInputs {
            case_id: case_id.into(),
            atlas: self.atlas.clone(),
            lut: self.lut.clone(),
            frames: case.frames.clone(),
            geometry: self.geometry.clone(),
            site: case.site,
            view: case.view,
            truth: Some(case.truth()),
        }
    }
}

pub const CASE_TOML: &str = "case.toml";

/// Write the case directory and its `case.toml`. Paths in the config are
/// relative to `dir`; outputs go to `dir/out`. Affine-only phantoms pin an
/// affine-only stage.
pub fn write_phantom(setup: &PhantomSetup, case_id: &str, dir: &Path) -> Result<(CaseConfig, PathBuf)> {
    let scene = PhantomScene::new(setup)?;
    let case = scene.case(&setup.case)?;
    write_case(&case, &scene.lut, dir)?;
    let affine_only = setup.case.bounds.max_bspline_px == 0.0;
    let cfg = CaseConfig {
        case_id: case_id.into(),
        atlas: "atlas.nii".into(),
        lut: "lut.json".into(),
        frames: "frames".into(),
        geometry: "geometry.json".into(),
        output: "out".into(),
        truth: Some("truth.json".into()),
        site: setup.case.site,
        view: setup.case.view,
        stage: if affine_only { Stage::Affine } else { Stage::Bspline },
        seed: Some(setup.case.seed),
        ..CaseConfig::default()
    };
    // Only case-describing keys, so command-line flags can still set the rest.
    let mut keep = vec!["case_id", "atlas", "lut", "frames", "geometry", "output", "truth", "site", "view", "seed"];
    if affine_only {
        keep.push("stage");
    }
    let mut table = toml::Table::try_from(&cfg).map_err(|e| Error::invalid("case config", e.to_string()))?;
    table.retain(|k, _| keep.contains(&k));
    let text = toml::to_string_pretty(&table).map_err(|e| Error::invalid("case config", e.to_string()))?;
    let path = dir.join(CASE_TOML);
    atomic_write(&path, text.as_bytes())?;
    Ok((cfg, path))
}
