//! The experiment engine: federation, sampler, local trainer and aggregator
//! wired into a `T`-round run, plus metric persistence, sweeps and the
//! verification suite.

mod config;
mod sweep;
mod verify;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AlgoConfig, FederationConfig, HyperConfig, MifaMode, RunConfig};
pub use sweep::{sweep, sweep_to_dir, SweepAxis, SweepOutcome, SweepPoint, SUMMARY_FILE};
pub use verify::{
    check_finite_differences, check_reductions, check_saga_equivalence,
    check_subset_variance_identity, check_unbiased_direction, verify, CheckResult, VerifyReport,
};

use crate::aggregators::{
    cluster_miss_probability, ClusterAssignment, RoundUpdates, ServerAggregatorState,
};
use crate::error::{Result, SimError};
use crate::localsgd::{local_sgd, LocalRunConfig};
use crate::objectives::{generate_federation, global_grad_and_loss, AnalyticConstants, Federation};
use crate::params::{
    lr_precondition_report, Algorithm, HyperParams, PreconditionReport, RunRecord,
};
use crate::rng::{sampler_stream, ClientRoundStream};
use crate::sampling::{sample_round, RoundPlan};
use crate::vector::ModelVector;

pub const VERSION: &str = concat!("fedvarp-sim ", env!("CARGO_PKG_VERSION"));
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_FILE: &str = "failure.json";
pub const METRICS_HEADER: &str = "round,grad_norm_sq,global_loss,dist_to_opt_sq";

/// Fraction of the logged records averaged by [`floor_estimate`].
pub const FLOOR_TAIL_FRACTION: f64 = 0.2;

/// How the participants of one round are evaluated. All variants produce
/// identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientExecution {
    #[default]
    Sequential,
    /// Evaluate participants in descending id order.
    Reversed,
    /// Evaluate participants on the rayon pool.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub execution: ClientExecution,
    /// Keep `w^(t)` for every `t` in [`RunOutcome::iterates`].
    pub keep_iterates: bool,
}

impl RunOptions {
    pub fn parallel() -> Self {
        RunOptions {
            execution: ClientExecution::Parallel,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    #[serde(flatten)]
    pub analytic: AnalyticConstants,
    /// Cluster miss probability for ClusterFedVARP with equal-size clusters.
    pub p: Option<f64>,
}

/// Everything known about a run before round 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub constants: DerivedConstants,
    pub preconditions: Option<PreconditionReport>,
    pub preconditions_note: Option<String>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub round: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub records: Vec<RunRecord>,
    pub iterates: Vec<ModelVector>,
    pub failure: Option<RunFailure>,
}

impl RunOutcome {
    pub fn floor(&self) -> Option<f64> {
        floor_estimate(&self.records)
    }

    pub fn min_grad_norm_sq(&self) -> Option<f64> {
        self.records.iter().map(|r| r.grad_norm_sq).reduce(f64::min)
    }

    pub fn final_grad_norm_sq(&self) -> Option<f64> {
        self.records.last().map(|r| r.grad_norm_sq)
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.records)
    }
}

/// Mean `grad_norm_sq` over the last 20% of records (at least one).
pub fn floor_estimate(records: &[RunRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let tail =
        ((records.len() as f64 * FLOOR_TAIL_FRACTION).ceil() as usize).clamp(1, records.len());
    let slice = &records[records.len() - tail..];
    Some(slice.iter().map(|r| r.grad_norm_sq).sum::<f64>() / tail as f64)
}

/// CSV with 17 significant digits per float.
pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            r.round, r.grad_norm_sq, r.global_loss, r.dist_to_opt_sq
        )
        .expect("writing to a String");
    }
    out
}

/// Everything needed to step a configured run.
struct Simulation {
    cfg: RunConfig,
    hyper: HyperParams,
    federation: Federation,
    state: ServerAggregatorState,
    manifest: RunManifest,
}

impl Simulation {
    fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hyper = cfg.hyper_params()?;
        let federation = generate_federation(&cfg.federation_spec())?;
        let n = federation.num_clients();

        let assignment = match cfg.algo.name {
            Algorithm::ClusterFedVarp => {
                Some(ClusterAssignment::round_robin(n, cfg.server_clusters())?)
            }
            _ => None,
        };
        let p = match &assignment {
            Some(a) => a
                .equal_size()
                .map(|r| cluster_miss_probability(n, r, hyper.participants))
                .transpose()?,
            None => None,
        };
        let (preconditions, preconditions_note) = if cfg.algo.name == Algorithm::ClusterFedVarp
            && p.is_none()
        {
            (
                None,
                Some("unequal cluster sizes: cluster theorem conditions not evaluated".to_string()),
            )
        } else {
            match lr_precondition_report(&hyper, federation.constants.smoothness, cfg.algo.name, p)
            {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        let manifest = RunManifest {
            version: VERSION.to_string(),
            config: cfg.clone(),
            constants: DerivedConstants {
                analytic: federation.constants.clone(),
                p,
            },
            preconditions,
            preconditions_note,
        };
        let state = ServerAggregatorState::new(
            cfg.algo.name,
            ModelVector::zeros(federation.dim()),
            n,
            assignment,
        )?;
        Ok(Simulation {
            cfg: cfg.clone(),
            hyper,
            federation,
            state,
            manifest,
        })
    }

    fn record(&self) -> Result<RunRecord> {
        let (grad, loss) = global_grad_and_loss(&self.federation.clients, &self.state.w)?;
        Ok(RunRecord {
            round: self.state.round,
            grad_norm_sq: grad.norm_sq(),
            global_loss: loss,
            dist_to_opt_sq: self.state.w.dist_sq(&self.federation.constants.w_star)?,
        })
    }

    fn plan(&self, round: usize) -> Result<RoundPlan> {
        let n = self.federation.num_clients();
        if self.cfg.algo.name == Algorithm::Mifa
            && self.cfg.algo.mifa_mode == MifaMode::FullFirstRound
            && round == 0
        {
            return Ok(RoundPlan::full(round, n));
        }
        sample_round(
            round,
            n,
            self.hyper.participants,
            &mut sampler_stream(self.cfg.seed, round),
        )
    }

    fn local_updates(
        &self,
        plan: &RoundPlan,
        execution: ClientExecution,
    ) -> Result<BTreeMap<usize, ModelVector>> {
        let local = LocalRunConfig::from(&self.hyper);
        let w = &self.state.w;
        let one = |&i: &usize| -> Result<(usize, ModelVector)> {
            let stream = ClientRoundStream::new(self.cfg.seed, i, plan.round);
            Ok((
                i,
                local_sgd(&self.federation.clients[i], w, &local, &stream)?,
            ))
        };
        let results: Vec<Result<(usize, ModelVector)>> = match execution {
            ClientExecution::Sequential => plan.participants.iter().map(one).collect(),
            ClientExecution::Reversed => {
                let mut r: Vec<_> = plan.participants.iter().rev().map(one).collect();
                r.reverse();
                r
            }
            ClientExecution::Parallel => plan.participants.par_iter().map(one).collect(),
        };
        // ascending client order, so the reported failure does not depend on scheduling
        results.into_iter().collect()
    }

    fn round(&mut self, round: usize, execution: ClientExecution) -> Result<()> {
        let plan = self.plan(round)?;
        let deltas = self.local_updates(&plan, execution)?;
        let upd = RoundUpdates::new(plan, deltas)?;
        self.state.step(&upd, self.hyper.effective_server_lr())?;
        Ok(())
    }
}

/// Runs `cfg` to completion or to its first failure. Configuration problems
/// are returned as errors; failures after round 0 starts are reported in
/// [`RunOutcome::failure`] alongside the records logged so far.
pub fn execute(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome> {
    let mut sim = Simulation::new(cfg)?;
    let rounds = sim.hyper.rounds;
    let mut records = Vec::with_capacity(rounds / cfg.log_every + 2);
    let mut iterates = Vec::new();
    let mut failure = None;

    for t in 0..rounds {
        if opts.keep_iterates {
            iterates.push(sim.state.w.clone());
        }
        if t % cfg.log_every == 0 {
            records.push(sim.record()?);
        }
        if let Err(e) = sim.round(t, opts.execution) {
            failure = Some(RunFailure {
                round: t,
                message: e.to_string(),
            });
            break;
        }
    }
    if failure.is_none() {
        if opts.keep_iterates {
            iterates.push(sim.state.w.clone());
        }
        records.push(sim.record()?);
    }
    Ok(RunOutcome {
        manifest: sim.manifest,
        records,
        iterates,
        failure,
    })
}

/// Like [`execute`] but a mid-run failure becomes an error.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let out = execute(cfg, RunOptions::default())?;
    match &out.failure {
        None => Ok(out),
        Some(f) => Err(SimError::config(format!(
            "run aborted at round {}: {}",
            f.round, f.message
        ))),
    }
}

/// Runs `cfg` and writes `manifest.json` (before round 0), `metrics.csv` and,
/// on failure, `failure.json` under `dir`.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path, opts: RunOptions) -> Result<RunOutcome> {
    let sim = Simulation::new(cfg)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), sim.manifest.to_json())?;
    drop(sim);
    let out = execute(cfg, opts)?;
    persist_results(&out, dir)?;
    Ok(out)
}

fn persist_results(out: &RunOutcome, dir: &Path) -> Result<()> {
    fs::write(dir.join(METRICS_FILE), out.metrics_csv())?;
    let failure_path = dir.join(FAILURE_FILE);
    match &out.failure {
        Some(f) => fs::write(failure_path, serde_json::to_string_pretty(f)? + "\n")?,
        None if failure_path.exists() => fs::remove_file(failure_path)?,
        None => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::config::tests::SAMPLE;
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig::from_json(SAMPLE).unwrap()
    }

    #[test]
    fn zero_rounds_logs_the_initial_point() {
        let c = cfg().with_overrides(&["hyper.T=0".into()]).unwrap();
        let out = run(&c).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].round, 0);
        let w_star = &out.manifest.constants.analytic.w_star;
        assert_eq!(out.records[0].dist_to_opt_sq, w_star.norm_sq());
    }

    #[test]
    fn logging_schedule() {
        let out = run(&cfg()).unwrap();
        let rounds: Vec<usize> = out.records.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 5, 10, 15, 20]);
        let c = cfg()
            .with_overrides(&["hyper.T=7".into(), "log_every=3".into()])
            .unwrap();
        let rounds: Vec<usize> = run(&c).unwrap().records.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 3, 6, 7]);
    }

    // Full participation: with M < N the zero-initialised tables of the
    // variance-reduced methods can make single steps non-descent.
    #[test]
    fn identical_clients_descend_monotonically() {
        for algo in Algorithm::ALL {
            let c = cfg()
                .with_overrides(&[
                    "federation.K_true=1".into(),
                    "federation.within_cluster_spread=0".into(),
                    "federation.cluster_center_spread=2".into(),
                    "hyper.eta_c=0.5".into(),
                    "hyper.eta_s=1".into(),
                    "hyper.M=10".into(),
                    "log_every=1".into(),
                    format!("algo.name={algo}"),
                ])
                .unwrap();
            let out = run(&c).unwrap();
            assert!(out.manifest.constants.analytic.sigma_g_sq < 1e-28);
            assert!(out.records[0].grad_norm_sq > 0.0);
            for pair in out.records.windows(2) {
                assert!(
                    pair[1].grad_norm_sq <= pair[0].grad_norm_sq,
                    "{algo}: {pair:?}"
                );
            }
        }
        let c = cfg()
            .with_overrides(&[
                "federation.K_true=1".into(),
                "federation.within_cluster_spread=0".into(),
                "hyper.eta_c=0.5".into(),
                "log_every=1".into(),
                "algo.name=fedavg".into(),
            ])
            .unwrap();
        let out = run(&c).unwrap();
        assert!(out
            .records
            .windows(2)
            .all(|p| p[1].grad_norm_sq <= p[0].grad_norm_sq));
    }

    #[test]
    fn floor_uses_last_fifth() {
        let recs: Vec<RunRecord> = (0..10)
            .map(|i| RunRecord {
                round: i,
                grad_norm_sq: i as f64,
                global_loss: 0.0,
                dist_to_opt_sq: 0.0,
            })
            .collect();
        assert_eq!(floor_estimate(&recs), Some(8.5));
        assert_eq!(floor_estimate(&recs[..1]), Some(0.0));
        assert_eq!(floor_estimate(&[]), None);
    }

    #[test]
    fn csv_has_round_trip_precision() {
        let recs = [RunRecord {
            round: 3,
            grad_norm_sq: 0.1,
            global_loss: 1.0 / 3.0,
            dist_to_opt_sq: 2.0,
        }];
        let csv = metrics_csv(&recs);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "3");
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.1);
        assert_eq!(row[2].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(row[1], "1.0000000000000001e-1");
    }

    #[test]
    fn manifest_records_constants_and_report() {
        let out = run(&cfg()).unwrap();
        let m = &out.manifest;
        assert_eq!(m.version, VERSION);
        assert!(m.preconditions.is_some());
        assert!(m.constants.p.is_none());
        let c = cfg()
            .with_overrides(&["algo.name=clusterfedvarp".into(), "algo.K=2".into()])
            .unwrap();
        let m = run(&c).unwrap().manifest;
        // N=10, r=5, M=3: C(5,3)/C(10,3) = 10/120
        assert!((m.constants.p.unwrap() - 1.0 / 12.0).abs() < 1e-15);
        let c = cfg()
            .with_overrides(&["algo.name=clusterfedvarp".into(), "algo.K=3".into()])
            .unwrap();
        let m = run(&c).unwrap().manifest;
        assert!(m.constants.p.is_none());
        assert!(m.preconditions.is_none());
        assert!(m.preconditions_note.is_some());
    }

    #[test]
    fn divergence_keeps_partial_records() {
        let c = cfg()
            .with_overrides(&[
                "hyper.eta_c=1000".into(),
                "hyper.tau=50".into(),
                "log_every=1".into(),
            ])
            .unwrap();
        let out = execute(&c, RunOptions::default()).unwrap();
        let f = out.failure.clone().expect("diverges");
        assert_eq!(out.records.len(), f.round + 1);
        assert!(run(&c).is_err());

        let dir = tempfile::tempdir().unwrap();
        run_to_dir(&c, dir.path(), RunOptions::default()).unwrap();
        assert!(dir.path().join(FAILURE_FILE).exists());
        assert!(dir.path().join(MANIFEST_FILE).exists());
        let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), f.round + 2);
    }

    #[test]
    fn mifa_full_first_round() {
        let c = cfg()
            .with_overrides(&[
                "algo.name=mifa".into(),
                "algo.mifa_mode=full_first_round".into(),
                "hyper.T=1".into(),
            ])
            .unwrap();
        let sim = Simulation::new(&c).unwrap();
        assert_eq!(sim.plan(0).unwrap().len(), 10);
        assert_eq!(sim.plan(1).unwrap().len(), 3);
    }
}
