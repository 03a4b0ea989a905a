//! Run configuration: the TOML file format, path resolution, and assembly
//! into the core experiment config.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use emofuse::train::ExperimentConfig;
use emofuse::{FusionConfig, RmmSchedule, SynthSpec, TrainConfig};

use crate::CliError;

/// Environment variable naming the default root for all outputs (run
/// directories, generated datasets). Falls back to the working directory.
pub const OUT_ROOT_ENV: &str = "EMOFUSE_OUT_ROOT";

/// Where the records come from: a feature manifest on disk, or a synthetic
/// generator specification. Exactly one must be set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

/// One training run as described by a TOML file. The `[model]`, `[train]`,
/// and `[rmm]` tables are optional and default to the standard settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run name; becomes the default output directory name and the row
    /// label in reports.
    pub name: String,
    /// Output directory; relative paths resolve against the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: FusionConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub rmm: RmmSchedule,
}

impl RunConfig {
    /// The core experiment view of this run.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            rmm: self.rmm.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!(
                "run name {:?} must be a non-empty plain directory name",
                self.name
            )));
        }
        match (&self.data.manifest, &self.data.synth) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "data: set either `manifest` or `synth`, not both".into(),
            )),
            (None, None) => Err(CliError::Config(
                "data: one of `manifest` or `synth` is required".into(),
            )),
            _ => Ok(()),
        }?;
        self.experiment()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Reads and parses a run configuration; a relative manifest path is
/// resolved against the configuration file's own directory.
pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(manifest) = &config.data.manifest {
        if manifest.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            config.data.manifest = Some(base.join(manifest));
        }
    }
    Ok(config)
}

/// The output root: `$EMOFUSE_OUT_ROOT` when set, the working directory
/// otherwise.
pub fn out_root() -> PathBuf {
    env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn against_root(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_root().join(path)
    }
}

/// Picks the run directory: the `--out` flag wins, then the config's
/// `output_dir`, then `<root>/runs/<name>`.
pub fn resolve_run_dir(config: &RunConfig, out_flag: Option<&Path>) -> PathBuf {
    match (out_flag, &config.output_dir) {
        (Some(out), _) => against_root(out),
        (None, Some(dir)) => against_root(dir),
        (None, None) => out_root().join("runs").join(&config.name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"
name = "full"
[data.synth]
"#,
        );
        let config = load_run_config(&path).unwrap();
        assert_eq!(config.name, "full");
        assert_eq!(config.train.epochs, 20);
        assert_eq!(config.model.d_model, 1024);
        assert!(!config.rmm.enabled);
        assert!(config.data.synth.is_some());
        config.validate().unwrap();
    }

    #[test]
    fn relative_manifest_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"
name = "run"
[data]
manifest = "features/manifest.jsonl"
"#,
        );
        let config = load_run_config(&path).unwrap();
        assert_eq!(
            config.data.manifest.unwrap(),
            dir.path().join("features/manifest.jsonl")
        );
    }

    #[test]
    fn unknown_keys_and_bad_shapes_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"
name = "run"
strange_key = 1
[data.synth]
"#,
        );
        assert!(matches!(load_run_config(&path), Err(CliError::Config(_))));

        let path = write_config(
            dir.path(),
            r#"
name = "run"
[data.synth]
[model]
d_model = 10
n_heads_self = 3
"#,
        );
        let config = load_run_config(&path).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn data_source_must_be_exactly_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "name = \"x\"\n[data]\n");
        let config = load_run_config(&path).unwrap();
        assert!(config.validate().is_err());
        let path = write_config(
            dir.path(),
            r#"
name = "x"
[data]
manifest = "m.jsonl"
[data.synth]
"#,
        );
        let config = load_run_config(&path).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn run_dir_resolution_priority() {
        let config = RunConfig {
            name: "demo".into(),
            output_dir: Some(PathBuf::from("/abs/configured")),
            data: DataConfig::default(),
            model: FusionConfig::default(),
            train: TrainConfig::default(),
            rmm: RmmSchedule::default(),
        };
        assert_eq!(
            resolve_run_dir(&config, Some(Path::new("/flag/dir"))),
            PathBuf::from("/flag/dir")
        );
        assert_eq!(
            resolve_run_dir(&config, None),
            PathBuf::from("/abs/configured")
        );
        let bare = RunConfig {
            output_dir: None,
            ..config
        };
        assert!(resolve_run_dir(&bare, None).ends_with("runs/demo"));
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let config = RunConfig {
            name: "round".into(),
            output_dir: Some(PathBuf::from("runs/round")),
            data: DataConfig {
                manifest: None,
                synth: Some(SynthSpec::default()),
            },
            model: FusionConfig {
                d_model: 16,
                n_heads_self: 4,
                n_heads_cross: 4,
                ..FusionConfig::default()
            },
            train: TrainConfig::default(),
            rmm: RmmSchedule::default(),
        };
        let text = toml::to_string_pretty(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.name, config.name);
        assert_eq!(back.model, config.model);
        assert_eq!(back.train, config.train);
        assert_eq!(back.rmm, config.rmm);
    }
}
