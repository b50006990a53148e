//! Run configuration for the batch driver.
//!
//! One JSON document describes a complete run: the reaction model, the two
//! noise covariances, simulation parameters, initial states, and per-study
//! settings.  Dotted `--set key=value` overrides are applied to the raw JSON
//! tree before deserialization, so a typo in a key surfaces as an unknown
//! field instead of being silently dropped.  The canonical serialized form of
//! the resolved config is what gets hashed into run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use msbl_core::model::scalar_fn;
use msbl_core::{catalog, CoreError, CovSpec, ModelSpec, SimParams, SineField};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Driver-level failures, each mapped to one of the stable exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed config file, bad override, or an unusable field value.
    #[error("{0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// Exit-code contract: 0 success, 1 failed check or run, 2 config error,
    /// 3 step-bias abort, 4 degenerate study.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(core) => match core {
                CoreError::BiasGuard { .. } => 3,
                CoreError::DegenerateStudy(_) => 4,
                CoreError::UnknownModel(_)
                | CoreError::UnknownScalarFn(_)
                | CoreError::InvalidParam { .. }
                | CoreError::NonPositiveStep { .. }
                | CoreError::NegativeCovariance { .. }
                | CoreError::ModeOutOfRange { .. }
                | CoreError::GridTooCoarse { .. }
                | CoreError::WindowTooShort { .. }
                | CoreError::ProjectUp { .. }
                | CoreError::TooFewPoints(_)
                | CoreError::EmptyTable
                | CoreError::SubstepCap(_) => 2,
                _ => 1,
            },
        }
    }
}

/// Model selection: either a catalog `id`, or an inline `linear_gaussian`
/// family definition built from named scalar functions.
///
/// With the `id` form, `lip_f` and `lip_g` may still be overridden; that is
/// the knob for probing how the assumption checks respond to larger Lipschitz
/// constants without defining a new model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_g: Option<f64>,
}

impl ModelConfig {
    pub fn from_id(id: &str) -> Self {
        Self {
            id: Some(id.to_string()),
            family: None,
            f1: None,
            g1: None,
            damping: None,
            coupling: None,
            lip_f: None,
            lip_g: None,
        }
    }

    pub fn resolve(&self) -> Result<ModelSpec, CliError> {
        match (&self.id, &self.family) {
            (_, Some(family)) if family == "linear_gaussian" => {
                let f1 = scalar_fn(self.f1.as_deref().ok_or_else(|| {
                    CliError::Config("inline linear_gaussian model needs 'f1'".into())
                })?)?;
                let g1 = scalar_fn(self.g1.as_deref().ok_or_else(|| {
                    CliError::Config("inline linear_gaussian model needs 'g1'".into())
                })?)?;
                let lip_f = self.lip_f.ok_or_else(|| {
                    CliError::Config("inline linear_gaussian model needs 'lip_f'".into())
                })?;
                let lip_g = self.lip_g.ok_or_else(|| {
                    CliError::Config("inline linear_gaussian model needs 'lip_g'".into())
                })?;
                let id = self
                    .id
                    .clone()
                    .unwrap_or_else(|| "custom_linear_gaussian".into());
                Ok(ModelSpec::linear_gaussian(
                    id,
                    f1,
                    g1,
                    self.damping.unwrap_or(1.0),
                    self.coupling.unwrap_or(1.0),
                    lip_f,
                    lip_g,
                ))
            }
            (_, Some(family)) => Err(CliError::Config(format!(
                "unknown model family '{family}' (supported: linear_gaussian)"
            ))),
            (Some(id), None) => {
                if self.f1.is_some()
                    || self.g1.is_some()
                    || self.damping.is_some()
                    || self.coupling.is_some()
                {
                    return Err(CliError::Config(
                        "a catalog model accepts only lip_f/lip_g overrides; \
                         use the 'family' form to define coefficients"
                            .into(),
                    ));
                }
                let mut spec = catalog(id)?;
                if let Some(v) = self.lip_f {
                    spec.lip_f = v;
                }
                if let Some(v) = self.lip_g {
                    spec.lip_g = v;
                }
                Ok(spec)
            }
            (None, None) => Err(CliError::Config(
                "model needs either an 'id' or a 'family'".into(),
            )),
        }
    }
}

/// Initial state as leading sine-mode coefficients, zero-padded to the
/// working truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldInit {
    pub coeffs: Vec<f64>,
}

impl FieldInit {
    pub fn build(&self, m: usize, name: &str) -> Result<SineField, CliError> {
        if self.coeffs.len() > m {
            return Err(CliError::Config(format!(
                "{name} supplies {} coefficients but the truncation holds {m} modes",
                self.coeffs.len()
            )));
        }
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(m, 0.0);
        Ok(SineField::new(coeffs)?)
    }
}

fn first_mode() -> FieldInit {
    FieldInit { coeffs: vec![1.0] }
}

/// Study settings; anything left out falls back to a per-study default when
/// the corresponding subcommand runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    /// Moment order of the strong-error norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Test functional id for the weak study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<String>,
    /// Fitted-order band that maps to exit status 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_band: Option<(f64, f64)>,
    /// Truncation sweep for the refinement study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    /// Scale parameter for the refinement study; defaults to `params.eps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub galerkin_eps: Option<f64>,
}

/// Settings of the ergodic averaged-drift estimator used by the `fbar`
/// subcommand; remove the section to force closed forms only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbarConfig {
    #[serde(default = "default_micro_dt")]
    pub micro_dt: f64,
    #[serde(default = "default_window")]
    pub window: f64,
    /// Burn-in time; the default scales with the fast spectral gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
}

fn default_micro_dt() -> f64 {
    1e-3
}

fn default_window() -> f64 {
    200.0
}

impl Default for FbarConfig {
    fn default() -> Self {
        Self {
            micro_dt: default_micro_dt(),
            window: default_window(),
            burn_in: None,
        }
    }
}

/// Complete description of one batch run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub cov1: CovSpec,
    pub cov2: CovSpec,
    pub params: SimParams,
    #[serde(default = "first_mode")]
    pub x0: FieldInit,
    #[serde(default = "first_mode")]
    pub y0: FieldInit,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fbar: Option<FbarConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::from_id("linear_gaussian_default"),
            cov1: CovSpec::power_decay(1.0, 4.0, 64),
            cov2: CovSpec::power_decay(1.0, 2.0, 64),
            params: SimParams {
                eps: 0.25,
                t_horizon: 0.5,
                macro_dt: 2.5e-4,
                kappa: 0.015625,
                m: 32,
                n_paths: 100,
                master_seed: 0,
            },
            x0: first_mode(),
            y0: first_mode(),
            study: StudyConfig::default(),
            fbar: Some(FbarConfig::default()),
            output_dir: None,
        }
    }
}

/// Core objects shared by every subcommand.
pub struct Resolved {
    pub model: ModelSpec,
    pub x0: SineField,
    pub y0: SineField,
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let model = self.model.resolve()?;
        // Exercises the parameter invariants (positive steps, horizon bounds,
        // substep cap) before any command commits to a run directory.
        let mut probe = self.params.clone();
        probe.n_paths = 1;
        probe.schedule()?;
        Ok(Resolved {
            model,
            x0: self.x0.build(self.params.m, "x0")?,
            y0: self.y0.build(self.params.m, "y0")?,
        })
    }

    /// Canonical serialized form: field order fixed by the struct, trailing
    /// newline, no unset optionals.  This is the text that gets digested into
    /// the manifest, so equal configs produce equal run fingerprints.
    pub fn canonical_text(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("config serialization cannot fail");
        text.push('\n');
        text
    }
}

/// Loads the config file (or the built-in defaults), applies `--set`
/// overrides, then deserializes strictly.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut tree: serde_json::Value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(RunConfig::default())
            .expect("default config serialization cannot fail"),
    };
    for spec in sets {
        apply_set(&mut tree, spec)?;
    }
    serde_json::from_value(tree).map_err(|e| CliError::Config(format!("config: {e}")))
}

/// Applies one `key.path=value` override to the raw JSON tree.  Values parse
/// as JSON when possible and fall back to strings, so `--set model.id=zero`
/// and `--set params.eps=0.125` both do the expected thing.
fn apply_set(tree: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{spec}'")))?;
    let segments: Vec<&str> = path.split('.').collect();
    if path.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!(
            "--set key '{path}' has an empty segment"
        )));
    }
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = tree;
    for seg in &segments[..segments.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| {
                CliError::Config(format!("--set cannot descend into non-object at '{seg}'"))
            })?
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let leaf = segments[segments.len() - 1];
    node.as_object_mut()
        .ok_or_else(|| {
            CliError::Config(format!("--set cannot assign into non-object at '{leaf}'"))
        })?
        .insert(leaf.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_default_config_resolves() {
        let config = RunConfig::default();
        let resolved = config.resolve().unwrap();
        assert_eq!(resolved.model.id, "linear_gaussian_default");
        assert_eq!(resolved.x0.modes(), 32);
        assert!((resolved.x0.coeff(1) - 1.0).abs() < 1e-15);
        assert_eq!(resolved.x0.coeff(2), 0.0);
    }

    #[test]
    fn test_canonical_text_round_trips() {
        let config = RunConfig::default();
        let text = config.canonical_text();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.canonical_text(), text);
    }

    #[test]
    fn test_set_overrides_nested_and_rejects_unknown() {
        let mut tree = serde_json::to_value(RunConfig::default()).unwrap();
        apply_set(&mut tree, "params.eps=0.125").unwrap();
        apply_set(&mut tree, "model.lip_g=10").unwrap();
        apply_set(&mut tree, "study.eps_grid=[0.25,0.125,0.0625]").unwrap();
        let config: RunConfig = serde_json::from_value(tree.clone()).unwrap();
        assert_eq!(config.params.eps, 0.125);
        assert_eq!(config.model.lip_g, Some(10.0));
        assert_eq!(
            config.study.eps_grid.as_deref(),
            Some(&[0.25, 0.125, 0.0625][..])
        );

        apply_set(&mut tree, "params.bogus=1").unwrap();
        assert!(serde_json::from_value::<RunConfig>(tree).is_err());
    }

    #[test]
    fn test_inline_model_requires_coefficients() {
        let mut model = ModelConfig {
            family: Some("linear_gaussian".into()),
            ..ModelConfig::from_id("custom")
        };
        let err = model.resolve().unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert_eq!(err.exit_code(), 2);

        model.f1 = Some("sin".into());
        model.g1 = Some("identity".into());
        model.lip_f = Some(2.0);
        model.lip_g = Some(1.0);
        let spec = model.resolve().unwrap();
        assert_eq!(spec.id, "custom");
        assert_eq!(spec.lip_g, 1.0);
    }

    #[test]
    fn test_exit_codes_by_error_class() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Core(CoreError::UnknownModel("nope".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::Core(CoreError::DegenerateStudy("flat".into())).exit_code(),
            4
        );
        assert_eq!(
            CliError::Core(CoreError::BiasGuard {
                bias: 1.0,
                reference: 1.0,
                suggested: 0.5,
            })
            .exit_code(),
            3
        );
        assert_eq!(
            CliError::Core(CoreError::NonFinite {
                context: "x".into()
            })
            .exit_code(),
            1
        );
    }

    #[test]
    fn test_field_init_pads_and_bounds() {
        let init = FieldInit {
            coeffs: vec![0.5, -0.25],
        };
        let field = init.build(4, "x0").unwrap();
        assert_eq!(field.coeffs(), &[0.5, -0.25, 0.0, 0.0]);
        assert!(init.build(1, "x0").is_err());
    }
}
