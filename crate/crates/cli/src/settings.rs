use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use disperc::config::{parse_config, parse_range, parse_real_list, ConfigFile};
use disperc::model::{BoundaryCondition, Coupling, ModelParams};
use disperc::{Error, Result};

/// Flags shared by every subcommand. Each one overrides the same key from
/// `--config`.
#[derive(Args, Debug, Default)]
pub struct Flags {
    /// Configuration file with `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub h: Option<f64>,
    /// Coupling sign, 1 or -1.
    #[arg(long = "j", visible_alias = "J", global = true, allow_negative_numbers = true)]
    pub j: Option<i32>,
    /// free, plus or minus.
    #[arg(long, global = true)]
    pub boundary: Option<BoundaryCondition>,
    #[arg(long, global = true)]
    pub box_sites: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Percolation clusters per estimate.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Cluster-size truncation.
    #[arg(long, global = true)]
    pub cap: Option<usize>,
    #[arg(long, global = true)]
    pub replicas: Option<usize>,
    #[arg(long, global = true)]
    pub inner_replicas: Option<usize>,
    /// Comma separated times, e.g. `0.5,1,2,4`.
    #[arg(long, global = true)]
    pub time_grid: Option<String>,
    /// Inclusive range, e.g. `2..20`.
    #[arg(long, global = true)]
    pub n_range: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// coupling-audit: exact, two-stage or glauber. relax: exact, mc or both.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub pivot: Option<usize>,
    #[arg(long, global = true)]
    pub burn_in: Option<usize>,
    /// Observable, e.g. `spin(0) + 0.5*corr(0,1)`.
    #[arg(long, global = true)]
    pub functional: Option<String>,
    /// Number of random test functions.
    #[arg(long, global = true)]
    pub functions: Option<usize>,
    /// Write curve rows `x,value,se` to this file.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// gap-audit: write the exact box probabilities in binary to this file.
    #[arg(long, global = true)]
    pub export_probs: Option<PathBuf>,
}

/// Fully resolved settings, echoed in every report.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub dim: usize,
    pub beta: f64,
    pub h: f64,
    pub j: i32,
    pub boundary: BoundaryCondition,
    pub box_sites: usize,
    pub seed: u64,
    pub samples: usize,
    pub cap: usize,
    pub replicas: usize,
    pub inner_replicas: usize,
    pub time_grid: Vec<f64>,
    pub n_range: (usize, usize),
    pub mode: Option<String>,
    pub pivot: usize,
    pub burn_in: usize,
    pub functional: Option<String>,
    pub functions: usize,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.dim, self.beta, self.h, Coupling::from_sign(self.j)?)
    }

    pub fn mode_or<'a>(&'a self, default: &'a str, allowed: &[&str]) -> Result<&'a str> {
        let mode = self.mode.as_deref().unwrap_or(default);
        if allowed.contains(&mode) {
            Ok(mode)
        } else {
            Err(Error::InvalidParameter(format!("mode must be one of {allowed:?}, got {mode:?}")))
        }
    }
}

fn flag_error(e: Error, flag: &str) -> Error {
    match e {
        Error::Parse { msg, .. } => Error::InvalidParameter(format!("--{flag}: {msg}")),
        other => other,
    }
}

/// Merge flags over the configuration file over defaults.
pub fn resolve(flags: &Flags) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => ConfigFile::default(),
    };
    let time_grid = match &flags.time_grid {
        Some(v) => Some(parse_real_list(v, 0, "time-grid").map_err(|e| flag_error(e, "time-grid"))?),
        None => file.time_grid,
    };
    let n_range = match &flags.n_range {
        Some(v) => Some(parse_range(v, 0, "n-range").map_err(|e| flag_error(e, "n-range"))?),
        None => file.n_range,
    };
    let cfg = RunConfig {
        dim: flags.dim.or(file.dim).unwrap_or(2),
        beta: flags.beta.or(file.beta).unwrap_or(0.0),
        h: flags.h.or(file.h).unwrap_or(0.0),
        j: flags.j.or(file.j).unwrap_or(1),
        boundary: flags.boundary.or(file.boundary).unwrap_or(BoundaryCondition::Free),
        box_sites: flags.box_sites.or(file.box_sites).unwrap_or(9),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        samples: flags.samples.or(file.samples).unwrap_or(100_000),
        cap: flags.cap.or(file.cap).unwrap_or(60),
        replicas: flags.replicas.or(file.replicas).unwrap_or(1000),
        inner_replicas: flags.inner_replicas.or(file.inner_replicas).unwrap_or(32),
        time_grid: time_grid.unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0, 4.0]),
        n_range: n_range.unwrap_or((2, 20)),
        mode: flags.mode.clone().or(file.mode),
        pivot: flags.pivot.or(file.pivot).unwrap_or(0),
        burn_in: flags.burn_in.or(file.burn_in).unwrap_or(50),
        functional: flags.functional.clone().or(file.functional),
        functions: flags.functions.or(file.functions).unwrap_or(20),
        threads: flags.threads.or(file.threads),
    };
    cfg.params()?;
    if cfg.box_sites == 0 {
        return Err(Error::InvalidParameter("box-sites must be positive".into()));
    }
    if cfg.time_grid.iter().any(|t| *t < 0.0) {
        return Err(Error::InvalidParameter("time-grid entries must be nonnegative".into()));
    }
    if cfg.samples == 0 || cfg.replicas == 0 {
        return Err(Error::InvalidParameter("samples and replicas must be positive".into()));
    }
    if cfg.threads == Some(0) {
        return Err(Error::InvalidParameter("threads must be positive".into()));
    }
    Ok(cfg)
}
