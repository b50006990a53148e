//! Reproducible run directories and on-disk formats.
//!
//! Every run lands in a directory named `{unix-seconds}-{digest}`, where the
//! digest is the first twelve hex characters of the SHA-256 of the effective
//! configuration. The timestamp appears only in the directory name, never
//! inside a file, so identical configurations produce byte-identical files
//! no matter when they run:
//!
//! - `manifest.json`: model id, parameters, covariance laws, config digest,
//!   enough to rerun the study bit-exactly,
//! - `trajectory-{kind}-{path}.csv`: `t, mode_1 .. mode_m` per macro node,
//! - `report.json` / `report.csv`: full study record and the
//!   `eps, error, std_err` table,
//! - `plot_data.csv`: `log10_eps, log10_error, fit_line` for external
//!   plotting.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! recovers the exact bit pattern that was computed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::frozen::FbarEstimate;
use crate::integrate::{SimParams, Trajectory};
use crate::noise::CovSpec;
use crate::study::{ErrorReport, GalerkinReport, MomentReport};

/// First twelve hex characters of the SHA-256 of the configuration text.
pub fn config_digest(config: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.as_bytes());
    let hex = format!("{:x}", hasher.finalize());
    hex[..12].to_string()
}

/// Everything needed to reproduce a run, written beside its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_id: String,
    pub params: SimParams,
    pub cov1: CovSpec,
    pub cov2: CovSpec,
    pub config_sha256: String,
    /// Study or command name, when the run belongs to one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<String>,
}

/// A created output directory with writers for the standard file set.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `base/{unix-seconds}-{digest}`, appending a counter on the
    /// rare collision of two runs with one config in the same second.
    pub fn create(base: &Path, config: &str) -> Result<Self> {
        fs::create_dir_all(base)?;
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let stem = format!("{}-{}", secs, config_digest(config));
        let mut candidate = base.join(&stem);
        let mut counter = 1u32;
        loop {
            match fs::create_dir(&candidate) {
                Ok(()) => return Ok(Self { path: candidate }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    counter += 1;
                    candidate = base.join(format!("{stem}-{counter}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Wraps an existing directory without creating anything.
    pub fn at(path: PathBuf) -> Self {
        Self { path }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_file(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(contents.as_bytes())?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_file(name, &text)
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<PathBuf> {
        self.write_json("manifest.json", manifest)
    }

    /// Stores the exact configuration text, so the run can be repeated from
    /// the directory alone rather than from the digest in the manifest.
    pub fn write_config(&self, config: &str) -> Result<PathBuf> {
        self.write_file("config.json", config)
    }

    /// One CSV per (kind, path): `t, mode_1 .. mode_m`.
    pub fn write_trajectory(&self, traj: &Trajectory, path_id: u64) -> Result<PathBuf> {
        let m = traj.modes();
        let mut out = String::from("t");
        for k in 1..=m {
            out.push_str(&format!(",mode_{k}"));
        }
        out.push('\n');
        for (t, state) in traj.times.iter().zip(&traj.states) {
            out.push_str(&format!("{t}"));
            for c in state.coeffs() {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        self.write_file(
            &format!("trajectory-{}-{path_id:04}.csv", traj.kind.as_str()),
            &out,
        )
    }

    /// `report.json`, `report.csv`, and `plot_data.csv` for an error study.
    pub fn write_error_report(&self, report: &ErrorReport) -> Result<Vec<PathBuf>> {
        let mut written = vec![self.write_json("report.json", report)?];

        let mut csv = String::from("eps,error,std_err\n");
        for ((eps, err), se) in report
            .eps_grid
            .iter()
            .zip(&report.errors)
            .zip(&report.std_errs)
        {
            csv.push_str(&format!("{eps},{err},{se}\n"));
        }
        written.push(self.write_file("report.csv", &csv)?);

        let ln10 = std::f64::consts::LN_10;
        let mut plot = String::from("log10_eps,log10_error,fit_line\n");
        for (eps, err) in report.eps_grid.iter().zip(&report.errors) {
            let fit = (report.fit_intercept + report.fitted_order * eps.ln()) / ln10;
            plot.push_str(&format!("{},{},{fit}\n", eps.log10(), err.log10()));
        }
        written.push(self.write_file("plot_data.csv", &plot)?);
        Ok(written)
    }

    pub fn write_moment_report(&self, report: &MomentReport) -> Result<PathBuf> {
        self.write_json("moments.json", report)
    }

    pub fn write_galerkin_report(&self, report: &GalerkinReport) -> Result<PathBuf> {
        self.write_json("galerkin.json", report)
    }

    /// JSON record of one averaged-drift estimate at a probe point.
    pub fn write_fbar_estimate(&self, estimate: &FbarEstimate) -> Result<PathBuf> {
        self.write_json("fbar.json", estimate)
    }
}
