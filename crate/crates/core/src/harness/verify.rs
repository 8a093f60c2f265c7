//! Exhaustive-enumeration and equivalence checks behind `fedvarp-sim verify`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{execute, AlgoConfig, FederationConfig, HyperConfig, MifaMode, RunConfig, RunOptions};
use crate::aggregators::{
    direction, ClusterAssignment, RoundUpdates, ServerAggregatorState, ServerMemory,
};
use crate::error::Result;
use crate::objectives::{generate_federation, QuadraticClient};
use crate::params::Algorithm;
use crate::rng::{sampler_stream, stream, Domain, StreamRng};
use crate::sampling::{enumerate_subsets, sample_round, without_replacement_variance};
use crate::vector::{ordered_mean, ModelVector};

pub const EXHAUSTIVE_TOL: f64 = 1e-12;
pub const FINITE_DIFF_TOL: f64 = 1e-6;
pub const FINITE_DIFF_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_error(name: &str, worst: Result<f64>, tol: f64, what: &str) -> Self {
        match worst {
            Ok(e) => CheckResult::new(
                name,
                e <= tol,
                format!("max {what} {e:.3e} (tol {tol:.0e})"),
            ),
            Err(e) => CheckResult::new(name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_vectors(r: &mut StreamRng, count: usize, dim: usize) -> Vec<ModelVector> {
    (0..count)
        .map(|_| {
            ModelVector::new((0..dim).map(|_| r.sample(StandardNormal)).collect()).expect("finite")
        })
        .collect()
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(got.abs())
    }
}

/// Exhaustive `E_S |mean_S x - x_bar|^2` over all size-`m` subsets.
pub fn exhaustive_subset_variance(xs: &[ModelVector], m: usize) -> Result<f64> {
    let mean = ordered_mean(xs).expect("non-empty");
    let subsets = enumerate_subsets(xs.len(), m)?;
    let mut acc = 0.0;
    for s in &subsets {
        let sub = ordered_mean(s.participants.iter().map(|&i| &xs[i])).expect("non-empty");
        acc += sub.dist_sq(&mean)?;
    }
    Ok(acc / subsets.len() as f64)
}

/// Compares `closed_form` against exhaustive enumeration for `instances`
/// random populations (N in 2..=8, d in {1, 3, 10}, every M).
pub fn check_subset_variance_identity<F>(closed_form: F, instances: usize, seed: u64) -> CheckResult
where
    F: Fn(&[ModelVector], usize) -> Result<f64>,
{
    let worst = (|| {
        let mut worst: f64 = 0.0;
        for inst in 0..instances {
            let mut r = stream(seed, Domain::Verify, &[1, inst as u64]);
            let n = r.random_range(2..=8usize);
            let d = [1, 3, 10][r.random_range(0..3usize)];
            let xs = random_vectors(&mut r, n, d);
            for m in 1..=n {
                worst = worst.max(rel_err(
                    closed_form(&xs, m)?,
                    exhaustive_subset_variance(&xs, m)?,
                ));
            }
        }
        Ok(worst)
    })();
    CheckResult::from_error(
        "subset_variance_identity",
        worst,
        EXHAUSTIVE_TOL,
        "relative error",
    )
}

/// Average of subset means over all subsets equals the population mean.
pub fn check_subset_mean_unbiased(instances: usize, seed: u64) -> CheckResult {
    let worst = (|| {
        let mut worst: f64 = 0.0;
        for inst in 0..instances {
            let mut r = stream(seed, Domain::Verify, &[2, inst as u64]);
            let n = r.random_range(2..=8usize);
            let xs = random_vectors(&mut r, n, 3);
            let mean = ordered_mean(&xs).expect("non-empty");
            for m in 1..=n {
                let subsets = enumerate_subsets(n, m)?;
                let means: Vec<ModelVector> = subsets
                    .iter()
                    .map(|s| {
                        ordered_mean(s.participants.iter().map(|&i| &xs[i])).expect("non-empty")
                    })
                    .collect();
                let avg = ordered_mean(&means).expect("non-empty");
                worst = worst.max(avg.dist_sq(&mean)?.sqrt() / (1.0 + mean.norm()));
            }
        }
        Ok(worst)
    })();
    CheckResult::from_error(
        "subset_mean_unbiased",
        worst,
        EXHAUSTIVE_TOL,
        "relative error",
    )
}

/// Builds a random server state for `algo` over `n` clients.
fn random_state(
    r: &mut StreamRng,
    algo: Algorithm,
    n: usize,
    dim: usize,
) -> Result<ServerAggregatorState> {
    let assignment = match algo {
        Algorithm::ClusterFedVarp => {
            let k = r.random_range(1..=n);
            // every cluster non-empty, sizes possibly unequal
            let mut labels: Vec<usize> = (0..n)
                .map(|i| if i < k { i } else { r.random_range(0..k) })
                .collect();
            for i in (1..n).rev() {
                labels.swap(i, r.random_range(0..=i));
            }
            Some(ClusterAssignment::new(labels, k)?)
        }
        _ => None,
    };
    let mut st = ServerAggregatorState::new(algo, ModelVector::zeros(dim), n, assignment)?;
    match &mut st.memory {
        ServerMemory::ClientTable { y, y_bar } => {
            *y = random_vectors(r, n, dim);
            *y_bar = ordered_mean(y.iter()).expect("non-empty");
        }
        ServerMemory::ClusterTable { y, .. } => {
            let k = y.len();
            *y = random_vectors(r, k, dim);
        }
        ServerMemory::Stateless => {}
    }
    Ok(st)
}

/// For every N in 2..=max_n and every M, the mean of `algo`'s direction over
/// all subsets equals the mean FedAvg direction.
pub fn check_unbiased_direction(
    algo: Algorithm,
    max_n: usize,
    trials: usize,
    seed: u64,
) -> CheckResult {
    let name = format!("unbiased_direction_{algo}");
    let worst = (|| {
        let mut worst: f64 = 0.0;
        for n in 2..=max_n {
            for m in 1..=n {
                let subsets = enumerate_subsets(n, m)?;
                for trial in 0..trials {
                    let mut r =
                        stream(seed, Domain::Verify, &[3, n as u64, m as u64, trial as u64]);
                    let dim = r.random_range(1..=4usize);
                    let deltas = random_vectors(&mut r, n, dim);
                    let st = random_state(&mut r, algo, n, dim)?;
                    let avg = ServerAggregatorState::new(
                        Algorithm::FedAvg,
                        ModelVector::zeros(dim),
                        n,
                        None,
                    )?;
                    let mut vr = Vec::with_capacity(subsets.len());
                    let mut plain = Vec::with_capacity(subsets.len());
                    for s in &subsets {
                        let upd = RoundUpdates::new(
                            s.clone(),
                            s.participants
                                .iter()
                                .map(|&i| (i, deltas[i].clone()))
                                .collect(),
                        )?;
                        vr.push(direction(&st, &upd)?);
                        plain.push(direction(&avg, &upd)?);
                    }
                    let a = ordered_mean(&vr).expect("non-empty");
                    let b = ordered_mean(&plain).expect("non-empty");
                    worst = worst.max(a.dist_sq(&b)?.sqrt() / (1.0 + b.norm()));
                }
            }
        }
        Ok(worst)
    })();
    CheckResult::from_error(&name, worst, EXHAUSTIVE_TOL, "relative gap")
}

fn reduction_config(
    seed: u64,
    algo: Algorithm,
    clusters: Option<usize>,
    rounds: usize,
) -> RunConfig {
    RunConfig {
        federation: FederationConfig {
            num_clients: 12,
            dim: 3,
            true_clusters: 3,
            cluster_center_spread: 2.0,
            within_cluster_spread: 0.5,
            noise_sigma: 0.1,
            hessian_eig_min: 0.5,
            hessian_eig_max: 1.0,
            seed: seed ^ 0x5eed,
        },
        hyper: HyperConfig {
            eta_c: 0.05,
            eta_s: 1.5,
            tau: 3,
            rounds,
            participants: 4,
        },
        algo: AlgoConfig {
            name: algo,
            clusters,
            mifa_mode: MifaMode::ColdStart,
        },
        log_every: 1,
        output_dir: "verify".into(),
        seed,
    }
}

fn bits(v: &ModelVector) -> Vec<u64> {
    v.as_slice().iter().map(|x| x.to_bits()).collect()
}

fn same_trajectory(a: &RunConfig, b: &RunConfig) -> Result<std::result::Result<(), usize>> {
    let opts = RunOptions {
        keep_iterates: true,
        ..RunOptions::default()
    };
    let ta = execute(a, opts)?;
    let tb = execute(b, opts)?;
    if ta.failure.is_some() || tb.failure.is_some() || ta.iterates.len() != tb.iterates.len() {
        return Ok(Err(0));
    }
    for (t, (x, y)) in ta.iterates.iter().zip(&tb.iterates).enumerate() {
        if bits(x) != bits(y) {
            return Ok(Err(t));
        }
    }
    Ok(Ok(()))
}

/// ClusterFedVARP with singleton clusters against FedVARP, and with one
/// cluster against FedAvg, compared bit for bit over whole trajectories.
pub fn check_reductions(seeds: &[u64], rounds: usize) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (name, reference, clusters) in [
        ("reduction_k_equals_n_is_fedvarp", Algorithm::FedVarp, 12),
        ("reduction_k_equals_one_is_fedavg", Algorithm::FedAvg, 1),
    ] {
        let mut failures = Vec::new();
        let mut error = None;
        for &seed in seeds {
            let a = reduction_config(seed, Algorithm::ClusterFedVarp, Some(clusters), rounds);
            let b = reduction_config(seed, reference, None, rounds);
            match same_trajectory(&a, &b) {
                Ok(Ok(())) => {}
                Ok(Err(t)) => failures.push(format!("seed {seed} round {t}")),
                Err(e) => error = Some(e.to_string()),
            }
        }
        let passed = failures.is_empty() && error.is_none();
        let detail = match (&error, failures.is_empty()) {
            (Some(e), _) => format!("error: {e}"),
            (None, true) => format!("{} seeds x {rounds} rounds bitwise identical", seeds.len()),
            (None, false) => format!("first divergence: {}", failures.join(", ")),
        };
        out.push(CheckResult::new(name, passed, detail));
    }
    out
}

fn saga_config(num_clients: usize, steps: usize, seed: u64) -> RunConfig {
    RunConfig {
        federation: FederationConfig {
            num_clients,
            dim: 1,
            true_clusters: num_clients,
            cluster_center_spread: 3.0,
            within_cluster_spread: 0.0,
            noise_sigma: 0.0,
            hessian_eig_min: 1.0,
            hessian_eig_max: 1.0,
            seed: seed ^ 0xa5a5,
        },
        hyper: HyperConfig {
            eta_c: 1.0 / (8.0 * num_clients as f64),
            eta_s: 1.0,
            tau: 1,
            rounds: steps,
            participants: 1,
        },
        algo: AlgoConfig {
            name: Algorithm::FedVarp,
            clusters: None,
            mifa_mode: MifaMode::ColdStart,
        },
        log_every: 1,
        output_dir: "verify".into(),
        seed,
    }
}

/// Scalar SAGA on `f(w) = (1/N) sum_i a/2 (w - mu_i)^2` with a gradient
/// table.
///
/// The client's one-step normalised displacement `(w - (w - eta g)) / eta`
/// is the floating-point image of the sampled gradient, and the SAGA
/// estimate `g - alpha_j + mean(alpha)` is accumulated table entry by table
/// entry as `g + sum_i (1/N - [i = j]) alpha_i`, the reduction order the
/// server uses.
fn reference_saga(a: f64, mu: &[f64], eta: f64, picks: &[usize]) -> Vec<f64> {
    let n = mu.len();
    let mut w = 0.0f64;
    let mut table = vec![0.0f64; n];
    let mut path = vec![w];
    for &j in picks {
        let g = a * (w - mu[j]);
        let stepped = w + (-eta) * g;
        let seen = (w - stepped) / eta;
        let mut dir = seen / 1.0;
        for (i, alpha) in table.iter().enumerate() {
            let coef = 1.0 / n as f64 - if i == j { 1.0 } else { 0.0 };
            if coef != 0.0 {
                dir += coef * alpha;
            }
        }
        w += (-eta) * dir;
        table[j] = seen;
        path.push(w);
    }
    path
}

/// Textbook SAGA with exact gradients, for a tolerance-level comparison.
fn textbook_saga(a: f64, mu: &[f64], eta: f64, picks: &[usize]) -> Vec<f64> {
    let n = mu.len() as f64;
    let mut w = 0.0f64;
    let mut table = vec![0.0f64; mu.len()];
    let mut path = vec![w];
    for &j in picks {
        let g = a * (w - mu[j]);
        let mean: f64 = table.iter().sum::<f64>() / n;
        w -= eta * (g - table[j] + mean);
        table[j] = g;
        path.push(w);
    }
    path
}

/// FedVARP with `tau = 1`, `M = 1`, `sigma = 0`, `eta_s = 1` against a
/// directly coded SAGA on `num_clients` scalar quadratics.
pub fn check_saga_equivalence(num_clients: usize, steps: usize, seed: u64) -> CheckResult {
    const NAME: &str = "saga_equivalence";
    let cfg = saga_config(num_clients, steps, seed);
    let result = (|| -> Result<(bool, Option<usize>, f64)> {
        let fed = generate_federation(&cfg.federation_spec())?;
        let mu: Vec<f64> = fed
            .clients
            .iter()
            .map(|c| c.minimizer().as_slice()[0])
            .collect();
        let a = fed.clients[0].hessian_eigs()[0];
        let picks: Vec<usize> = (0..steps)
            .map(|t| {
                sample_round(t, num_clients, 1, &mut sampler_stream(cfg.seed, t))
                    .map(|p| p.participants[0])
            })
            .collect::<Result<_>>()?;
        let out = execute(
            &cfg,
            RunOptions {
                keep_iterates: true,
                ..RunOptions::default()
            },
        )?;
        let fedvarp: Vec<f64> = out.iterates.iter().map(|w| w.as_slice()[0]).collect();
        let eta = cfg.hyper.eta_c;
        let reference = reference_saga(a, &mu, eta, &picks);
        let textbook = textbook_saga(a, &mu, eta, &picks);
        let mismatch = fedvarp
            .iter()
            .zip(&reference)
            .position(|(x, y)| x.to_bits() != y.to_bits());
        let scale = textbook
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
            .max(1.0);
        let drift = fedvarp
            .iter()
            .zip(&textbook)
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
            / scale;
        Ok((fedvarp.len() == reference.len(), mismatch, drift))
    })();
    match result {
        Ok((true, None, drift)) if drift <= 1e-9 => CheckResult::new(
            NAME,
            true,
            format!("{steps} steps bitwise equal; textbook SAGA within {drift:.2e}"),
        ),
        Ok((_, mismatch, drift)) => CheckResult::new(
            NAME,
            false,
            format!("first bitwise mismatch at step {mismatch:?}; textbook gap {drift:.2e}"),
        ),
        Err(e) => CheckResult::new(NAME, false, format!("error: {e}")),
    }
}

/// Central differences of every `f_i` against its analytic gradient.
pub fn check_finite_differences(trials: usize, seed: u64) -> CheckResult {
    let worst = (|| {
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let mut r = stream(seed, Domain::Verify, &[4, trial as u64]);
            let d = r.random_range(1..=10usize);
            let eigs: Arc<[f64]> = (0..d)
                .map(|_| r.random_range(0.0..2.0))
                .collect::<Vec<f64>>()
                .into();
            let mu = random_vectors(&mut r, 1, d).remove(0);
            let client = QuadraticClient::new(0, eigs, mu, 0.0)?;
            let w = random_vectors(&mut r, 1, d).remove(0);
            let g = client.gradient(&w)?;
            for j in 0..d {
                let mut plus = w.clone().into_inner();
                let mut minus = plus.clone();
                plus[j] += FINITE_DIFF_STEP;
                minus[j] -= FINITE_DIFF_STEP;
                let fd = (client.loss(&ModelVector::new(plus)?)?
                    - client.loss(&ModelVector::new(minus)?)?)
                    / (2.0 * FINITE_DIFF_STEP);
                worst = worst.max((fd - g.as_slice()[j]).abs());
            }
        }
        Ok(worst)
    })();
    CheckResult::from_error(
        "finite_difference_gradient",
        worst,
        FINITE_DIFF_TOL,
        "absolute error",
    )
}

/// The full release gate.
pub fn verify() -> VerifyReport {
    let seed = 0x00f3_d7a4;
    let mut checks = vec![
        check_subset_variance_identity(without_replacement_variance, 100, seed),
        check_subset_mean_unbiased(50, seed),
        check_unbiased_direction(Algorithm::FedVarp, 6, 3, seed),
        check_unbiased_direction(Algorithm::ClusterFedVarp, 6, 3, seed),
    ];
    checks.extend(check_reductions(&(0..10).collect::<Vec<u64>>(), 200));
    checks.push(check_saga_equivalence(20, 500, seed));
    checks.push(check_finite_differences(200, seed));
    VerifyReport { checks }
}
