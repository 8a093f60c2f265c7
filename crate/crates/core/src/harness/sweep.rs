//! One-parameter sweeps over a base configuration.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use super::{execute, run_to_dir, RunConfig, RunOptions, RunOutcome};
use crate::error::{Result, SimError};
use crate::params::Algorithm;
use crate::rng::derive_seed;

pub const SUMMARY_FILE: &str = "sweep_summary.csv";
pub const SUMMARY_HEADER: &str =
    "axis,value,seed,records,floor_mean_last20,min_grad_norm_sq,final_grad_norm_sq,sigma_g_sq,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Multiplies both generator spreads, scaling `sigma_g^2` by `value^2`.
    SigmaGScale,
    Participants,
    EtaC,
    EtaS,
    Tau,
    Clusters,
    Algo,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SigmaGScale => "sigma_g_scale",
            SweepAxis::Participants => "M",
            SweepAxis::EtaC => "eta_c",
            SweepAxis::EtaS => "eta_s",
            SweepAxis::Tau => "tau",
            SweepAxis::Clusters => "K",
            SweepAxis::Algo => "algo",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let bad =
            |what: &str| SimError::config(format!("sweep value {value:?} is not a valid {what}"));
        let float = || value.parse::<f64>().map_err(|_| bad("number"));
        let int = || value.parse::<usize>().map_err(|_| bad("integer"));
        let mut cfg = base.clone();
        match self {
            SweepAxis::SigmaGScale => {
                let s = float()?;
                if !(s.is_finite() && s >= 0.0) {
                    return Err(bad("non-negative scale"));
                }
                cfg.federation.cluster_center_spread *= s;
                cfg.federation.within_cluster_spread *= s;
            }
            SweepAxis::Participants => cfg.hyper.participants = int()?,
            SweepAxis::EtaC => cfg.hyper.eta_c = float()?,
            SweepAxis::EtaS => cfg.hyper.eta_s = float()?,
            SweepAxis::Tau => cfg.hyper.tau = int()?,
            SweepAxis::Clusters => cfg.algo.clusters = Some(int()?),
            SweepAxis::Algo => cfg.algo.name = value.parse::<Algorithm>()?,
        }
        cfg.seed = derive_seed(base.seed, &[self.name().as_bytes(), value.as_bytes()]);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sigma_g_scale" | "sigma_g" => SweepAxis::SigmaGScale,
            "M" => SweepAxis::Participants,
            "eta_c" => SweepAxis::EtaC,
            "eta_s" => SweepAxis::EtaS,
            "tau" => SweepAxis::Tau,
            "K" => SweepAxis::Clusters,
            "algo" => SweepAxis::Algo,
            other => {
                return Err(SimError::config(format!(
                    "unknown sweep axis {other:?} (expected sigma_g_scale, M, eta_c, eta_s, tau, K or algo)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: String,
    pub config: RunConfig,
    pub outcome: RunOutcome,
}

impl SweepPoint {
    pub fn floor(&self) -> f64 {
        self.outcome.floor().unwrap_or(f64::NAN)
    }

    fn dir_name(axis: SweepAxis, value: &str) -> String {
        let safe: String = value
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        format!("{}={safe}", axis.name())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepOutcome {
    pub fn floors(&self) -> Vec<f64> {
        self.points.iter().map(SweepPoint::floor).collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for p in &self.points {
            let o = &p.outcome;
            let status = match &o.failure {
                None => "ok".to_string(),
                Some(f) => format!("failed@{}", f.round),
            };
            writeln!(
                out,
                "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.axis.name(),
                p.value,
                p.config.seed,
                o.records.len(),
                p.floor(),
                o.min_grad_norm_sq().unwrap_or(f64::NAN),
                o.final_grad_norm_sq().unwrap_or(f64::NAN),
                o.manifest.constants.analytic.sigma_g_sq,
                status
            )
            .expect("writing to a String");
        }
        out
    }
}

fn point_configs(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<RunConfig>> {
    if values.is_empty() {
        return Err(SimError::config("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|v| {
            let mut cfg = axis.apply(base, v)?;
            cfg.output_dir = base.output_dir.join(SweepPoint::dir_name(axis, v));
            Ok(cfg)
        })
        .collect()
}

/// Runs every point in memory; points execute in parallel.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    opts: RunOptions,
) -> Result<SweepOutcome> {
    let configs = point_configs(base, axis, values)?;
    let outcomes: Vec<RunOutcome> = configs
        .par_iter()
        .map(|c| execute(c, opts))
        .collect::<Result<Vec<_>>>()?;
    let points = values
        .iter()
        .zip(configs)
        .zip(outcomes)
        .map(|((v, config), outcome)| SweepPoint {
            value: v.clone(),
            config,
            outcome,
        })
        .collect();
    Ok(SweepOutcome { axis, points })
}

/// Runs every point into `<output_dir>/<axis>=<value>/` and writes
/// `sweep_summary.csv` beside them.
pub fn sweep_to_dir(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    opts: RunOptions,
) -> Result<SweepOutcome> {
    let configs = point_configs(base, axis, values)?;
    let root: &Path = &base.output_dir;
    fs::create_dir_all(root)?;
    let outcomes: Vec<RunOutcome> = configs
        .par_iter()
        .map(|c| run_to_dir(c, &c.output_dir, opts))
        .collect::<Result<Vec<_>>>()?;
    let points = values
        .iter()
        .zip(configs)
        .zip(outcomes)
        .map(|((v, config), outcome)| SweepPoint {
            value: v.clone(),
            config,
            outcome,
        })
        .collect();
    let out = SweepOutcome { axis, points };
    fs::write(root.join(SUMMARY_FILE), out.summary_csv())?;
    Ok(out)
}
