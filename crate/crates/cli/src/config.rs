//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid by
//! command-line flags. Unknown keys anywhere are an error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nerdf_core::distill::DistillConfig;
use nerdf_core::encoding::EncodingConfig;
use nerdf_core::field::TeacherTrainConfig;
use nerdf_core::nerdf::RenderConfig;
use nerdf_core::scenes::SceneConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Built-in scene name or path to a scene file.
    pub scene: String,
    /// Seeds the teacher and the student; the per-section `seed` keys follow it.
    pub seed: u64,
    /// Where outputs go; set from `--out`.
    pub out_dir: PathBuf,
    pub encoding: EncodingConfig,
    pub render: RenderConfig,
    pub distill: DistillConfig,
    pub teacher: TeacherTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: "sphere".into(),
            seed: 0,
            out_dir: PathBuf::from("."),
            encoding: EncodingConfig::default(),
            render: RenderConfig::default(),
            distill: DistillConfig::default(),
            teacher: TeacherTrainConfig::default(),
        }
    }
}

/// Flags that may override file values. `None` leaves the lower layer alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scene: Option<String>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub iterations: Option<u64>,
    pub batch: Option<usize>,
    pub no_vdc: bool,
    pub no_ovs: bool,
    pub nelf_baseline: bool,
}

/// Merges `overlay` into `base`, recursing into tables.
fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Fully resolved configuration plus the scene it names.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub scene: SceneConfig,
}

pub fn resolve(file: Option<&Path>, flags: &Overrides, out_dir: &Path) -> CliResult<Resolved> {
    let mut table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut user = toml::Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(path, format!("cannot read config: {e}")))?;
        user = text.parse::<toml::Table>().map_err(|e| config_err(path, e))?;
        for section in ["distill", "teacher"] {
            if user.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(config_err(path, format!("{section}.seed is derived; set the top-level `seed`")));
            }
        }
        merge(&mut table, user.clone());
    }
    let mut run: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| config_err(file.unwrap_or(Path::new("<defaults>")), e))?;

    if let Some(s) = &flags.scene {
        run.scene = s.clone();
    }
    if let Some(seed) = flags.seed {
        run.seed = seed;
    }
    if let Some(k) = flags.k {
        run.render.k = k;
    }
    if let Some(n) = flags.iterations {
        run.distill.iterations = n;
        run.teacher.iterations = n;
    }
    if let Some(b) = flags.batch {
        run.distill.batch = b;
    }
    if flags.no_vdc {
        run.distill.enable_vdc = false;
    }
    if flags.no_ovs {
        run.distill.enable_ovs = false;
    }
    if flags.nelf_baseline {
        run.distill.head = nerdf_core::nerdf::Head::Rgb;
        run.distill.enable_vdc = false;
    }
    run.distill.seed = run.seed;
    run.teacher.seed = run.seed;
    run.out_dir = out_dir.to_path_buf();

    let scene = SceneConfig::resolve(&run.scene)?;
    let explicit_scale = user
        .get("encoding")
        .and_then(|e| e.get("coord_scale"))
        .is_some();
    if !explicit_scale {
        run.encoding.coord_scale = scene.camera.coord_scale;
    }
    run.encoding.validate()?;
    run.render.validate()?;
    run.distill.validate()?;
    Ok(Resolved { run, scene })
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
