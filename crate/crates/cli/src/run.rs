//! Experiment runs: config loading, output files, manifest and lock.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use barystab::experiments::{
    default_population, dual_check_experiment, empirical_barycenter_experiment, hnet_experiment,
    regularization_bias_default, stability_sweep, ExperimentConfig, Family, Sweep,
};
use barystab::format::{to_json_string, Table};
use barystab::functionals::compute_c_rho;
use barystab::Error;
use clap::ValueEnum;
use serde::Serialize;
use thiserror::Error;

pub const LOCK_FILE: &str = ".barystab.lock";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Fig1,
    Fig2,
    RemarkExponent,
    StabilitySweep,
    EmpiricalBary,
    Hnet,
    RegBias,
    DualCheck,
    CertifyCrho,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig1 => "fig1",
            Experiment::Fig2 => "fig2",
            Experiment::RemarkExponent => "remark-exponent",
            Experiment::StabilitySweep => "stability-sweep",
            Experiment::EmpiricalBary => "empirical-bary",
            Experiment::Hnet => "hnet",
            Experiment::RegBias => "reg-bias",
            Experiment::DualCheck => "dual-check",
            Experiment::CertifyCrho => "certify-crho",
        }
    }

    fn stem(self) -> String {
        self.name().replace('-', "_")
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::BadConfig(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::OutOfRegime(_)
            | Error::DomainMismatch
            | Error::WrongDimension { .. }
            | Error::NegativeWeight { .. }
            | Error::ZeroTotalMass
            | Error::PointOutsideDomain { .. }
            | Error::AllZeroDensity
            | Error::DisconnectedSupport { .. }
            | Error::Json(_) => RunError::BadConfig(e.to_string()),
            Error::Io(_) | Error::Csv(_) => RunError::Io(e.to_string()),
            _ => RunError::Solver(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

/// Record of one run, written as `manifest.json` in the output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    /// Emitted files, relative to the output directory.
    pub outputs: Vec<String>,
    pub library_version: String,
}

/// Read and validate a config file; `None` gives the defaults.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, RunError> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| RunError::BadConfig(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RunError::BadConfig(format!("{}: {e}", path.display())))
}

/// Exclusive lock on an output directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                Err(RunError::Io(format!("{} exists; another run is using this directory", path.display())))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn table(&mut self, stem: &str, t: &Table) -> Result<(), RunError> {
        self.write(&format!("{stem}.csv"), &t.to_csv_string())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let s = to_json_string(value, true).map_err(|e| RunError::Io(e.to_string()))?;
        self.write(name, &(s + "\n"))
    }
}

#[derive(Serialize)]
struct FitRecord<'a> {
    x: &'a str,
    y: &'a str,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    points: usize,
}

fn write_sweep(out: &mut Outputs<'_>, stem: &str, sweep: &Sweep) -> Result<(), RunError> {
    out.table(stem, &sweep.table)?;
    if let Some(fit) = &sweep.fit {
        let rec = FitRecord {
            x: &sweep.fit_columns.0,
            y: &sweep.fit_columns.1,
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            points: fit.pairs.len(),
        };
        out.json(&format!("{stem}_fit.json"), &rec)?;
    }
    Ok(())
}

/// Run one experiment and write its outputs and manifest into `out_dir`.
pub fn run(experiment: Experiment, config: ExperimentConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    let started = chrono::Utc::now().to_rfc3339();
    let mut config = config;
    match experiment {
        Experiment::Fig1 => config.family = Family::Fig1,
        Experiment::Fig2 => config.family = Family::Fig2,
        Experiment::RemarkExponent => config.family = Family::Remark,
        _ => {}
    }
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let _lock = DirLock::acquire(out_dir)?;
    let mut out = Outputs { dir: out_dir, files: Vec::new() };
    let stem = experiment.stem();
    match experiment {
        Experiment::Fig1 | Experiment::Fig2 | Experiment::RemarkExponent | Experiment::StabilitySweep => {
            write_sweep(&mut out, &stem, &stability_sweep(&config)?)?;
        }
        Experiment::EmpiricalBary => {
            let p = config.population.clone().unwrap_or_else(default_population);
            let t = empirical_barycenter_experiment(
                &p,
                &config.sample_sizes,
                config.repeats,
                config.seed,
                &config.ot_config(),
            )?;
            out.table(&stem, &t)?;
        }
        Experiment::Hnet => out.table(&stem, &hnet_experiment(&config.h_values, config.instances, config.seed)?)?,
        Experiment::RegBias => out.table(&stem, &regularization_bias_default(&config)?)?,
        Experiment::DualCheck => out.table(&stem, &dual_check_experiment(config.instances, config.seed)?)?,
        Experiment::CertifyCrho => {
            let c = &config.crho;
            let report = compute_c_rho(&c.overlaps, c.m_lower, c.m_upper, c.radius, c.dim)?;
            out.json(&format!("{stem}.json"), &report)?;
        }
    }
    let manifest = RunManifest {
        subcommand: experiment.name().to_string(),
        seed: config.seed,
        config,
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        outputs: out.files.clone(),
        library_version: barystab::VERSION.to_string(),
    };
    out.json(MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}
