//! Hyperparameters, algorithm tags, per-round metric rows and the advisory
//! learning-rate report derived from the convergence theorems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Server-side aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedVarp,
    ClusterFedVarp,
    Mifa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::FedAvg,
        Algorithm::FedVarp,
        Algorithm::ClusterFedVarp,
        Algorithm::Mifa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedVarp => "fedvarp",
            Algorithm::ClusterFedVarp => "clusterfedvarp",
            Algorithm::Mifa => "mifa",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Algorithm::FedAvg),
            "fedvarp" => Ok(Algorithm::FedVarp),
            "clusterfedvarp" => Ok(Algorithm::ClusterFedVarp),
            "mifa" => Ok(Algorithm::Mifa),
            other => Err(SimError::config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Optimisation hyperparameters for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Client learning rate.
    pub eta_c: f64,
    /// Server learning rate.
    pub eta_s: f64,
    /// Local SGD steps per round.
    pub tau: usize,
    /// Communication rounds.
    pub rounds: usize,
    /// Clients sampled per round.
    pub participants: usize,
    /// Total number of clients.
    pub num_clients: usize,
}

impl HyperParams {
    pub fn new(
        eta_c: f64,
        eta_s: f64,
        tau: usize,
        rounds: usize,
        participants: usize,
        num_clients: usize,
    ) -> Result<Self> {
        let h = HyperParams {
            eta_c,
            eta_s,
            tau,
            rounds,
            participants,
            num_clients,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_c.is_finite() && self.eta_c > 0.0) {
            return Err(SimError::config(format!(
                "eta_c must be positive, got {}",
                self.eta_c
            )));
        }
        if !(self.eta_s.is_finite() && self.eta_s > 0.0) {
            return Err(SimError::config(format!(
                "eta_s must be positive, got {}",
                self.eta_s
            )));
        }
        if self.tau == 0 {
            return Err(SimError::config("tau must be at least 1"));
        }
        if self.num_clients == 0 {
            return Err(SimError::config("N must be at least 1"));
        }
        if self.participants == 0 || self.participants > self.num_clients {
            return Err(SimError::config(format!(
                "M must satisfy 1 <= M <= N, got M={} N={}",
                self.participants, self.num_clients
            )));
        }
        Ok(())
    }

    /// The effective server step `eta_s * eta_c * tau`. Every server update
    /// in the crate takes its step size from here.
    pub fn effective_server_lr(&self) -> f64 {
        self.eta_s * self.eta_c * self.tau as f64
    }
}

pub fn effective_server_lr(h: &HyperParams) -> f64 {
    h.effective_server_lr()
}

/// One learning-rate condition: `value <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub satisfied: bool,
}

impl BoundCheck {
    fn new(name: &str, value: f64, bound: f64) -> Self {
        BoundCheck {
            name: name.to_string(),
            value,
            bound,
            satisfied: value <= bound,
        }
    }
}

/// Advisory report of the theorem learning-rate conditions for one algorithm.
/// Runs are never blocked on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionReport {
    pub algo: Algorithm,
    pub smoothness: f64,
    pub checks: Vec<BoundCheck>,
}

impl PreconditionReport {
    pub fn all_satisfied(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const ETA_C: &str = "eta_c";
pub const ETA_S_ETA_C: &str = "eta_s*eta_c";

/// Evaluates the client-rate and product-rate bounds for `algo`.
///
/// FedAvg: `eta_c <= 1/(8 L tau)`, `eta_s eta_c <= 1/(24 tau L)`.
/// FedVARP: `eta_c <= 1/(10 L tau)`,
/// `eta_s eta_c <= min{M^{3/2}/(8 L tau N), 5M/(48 tau L), 1/(4 L tau)}`.
/// ClusterFedVARP: `eta_c <= 1/(10 L tau)`,
/// `eta_s eta_c <= min{sqrt(M)(1-p)/(8 L tau), M/(16 tau L), 1/(4 L tau)}`,
/// where `p` is the cluster miss probability and must be supplied.
/// MIFA carries no bounds and yields an empty report.
pub fn lr_precondition_report(
    h: &HyperParams,
    smoothness: f64,
    algo: Algorithm,
    miss_probability: Option<f64>,
) -> Result<PreconditionReport> {
    if !(smoothness.is_finite() && smoothness > 0.0) {
        return Err(SimError::Domain(format!(
            "smoothness L must be positive, got {smoothness}"
        )));
    }
    let l = smoothness;
    let tau = h.tau as f64;
    let m = h.participants as f64;
    let n = h.num_clients as f64;
    let product = h.eta_s * h.eta_c;

    let checks = match algo {
        Algorithm::FedAvg => vec![
            BoundCheck::new(ETA_C, h.eta_c, 1.0 / (8.0 * l * tau)),
            BoundCheck::new(ETA_S_ETA_C, product, 1.0 / (24.0 * tau * l)),
        ],
        Algorithm::FedVarp => {
            let bound = (m.powf(1.5) / (8.0 * l * tau * n))
                .min(5.0 * m / (48.0 * tau * l))
                .min(1.0 / (4.0 * l * tau));
            vec![
                BoundCheck::new(ETA_C, h.eta_c, 1.0 / (10.0 * l * tau)),
                BoundCheck::new(ETA_S_ETA_C, product, bound),
            ]
        }
        Algorithm::ClusterFedVarp => {
            let p = miss_probability.ok_or_else(|| {
                SimError::Domain("ClusterFedVARP bounds need the cluster miss probability".into())
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Domain(format!(
                    "miss probability {p} outside [0, 1]"
                )));
            }
            let bound = (m.sqrt() * (1.0 - p) / (8.0 * l * tau))
                .min(m / (16.0 * tau * l))
                .min(1.0 / (4.0 * l * tau));
            vec![
                BoundCheck::new(ETA_C, h.eta_c, 1.0 / (10.0 * l * tau)),
                BoundCheck::new(ETA_S_ETA_C, product, bound),
            ]
        }
        Algorithm::Mifa => Vec::new(),
    };
    Ok(PreconditionReport {
        algo,
        smoothness: l,
        checks,
    })
}

/// Metrics at one logged round, always evaluated with exact gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub round: usize,
    pub grad_norm_sq: f64,
    pub global_loss: f64,
    pub dist_to_opt_sq: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(eta_c: f64, eta_s: f64, tau: usize, m: usize, n: usize) -> HyperParams {
        HyperParams::new(eta_c, eta_s, tau, 10, m, n).unwrap()
    }

    #[test]
    fn effective_lr_examples() {
        assert!((hp(0.1, 1.0, 5, 1, 1).effective_server_lr() - 0.5).abs() < 1e-15);
        assert_eq!(hp(1.0, 1.0, 1, 1, 1).effective_server_lr(), 1.0);
        assert!((hp(0.01, 2.0, 10, 1, 1).effective_server_lr() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fedavg_bounds() {
        let r =
            lr_precondition_report(&hp(0.01, 1.0, 4, 1, 1), 1.0, Algorithm::FedAvg, None).unwrap();
        assert_eq!(r.check(ETA_C).unwrap().bound, 1.0 / 32.0);
        assert_eq!(r.check(ETA_S_ETA_C).unwrap().bound, 1.0 / 96.0);
        assert!(r.all_satisfied());
    }

    #[test]
    fn fedvarp_bounds_min_term() {
        let r =
            lr_precondition_report(&hp(0.01, 1.0, 1, 1, 1), 1.0, Algorithm::FedVarp, None).unwrap();
        assert!((r.check(ETA_S_ETA_C).unwrap().bound - 5.0 / 48.0).abs() < 1e-15);
        assert!((r.check(ETA_C).unwrap().bound - 0.1).abs() < 1e-15);
    }

    #[test]
    fn cluster_bounds_need_p() {
        let h = hp(0.01, 1.0, 1, 5, 50);
        assert!(lr_precondition_report(&h, 1.0, Algorithm::ClusterFedVarp, None).is_err());
        let r = lr_precondition_report(&h, 1.0, Algorithm::ClusterFedVarp, Some(0.0)).unwrap();
        // sqrt(5)/8 = 0.2795, 5/16 = 0.3125, 1/4
        assert_eq!(r.check(ETA_S_ETA_C).unwrap().bound, 0.25);
    }

    #[test]
    fn mifa_has_no_bounds() {
        let r = lr_precondition_report(&hp(0.5, 4.0, 1, 1, 1), 1.0, Algorithm::Mifa, None).unwrap();
        assert!(r.checks.is_empty());
    }

    #[test]
    fn rejects_bad_smoothness() {
        let h = hp(0.01, 1.0, 1, 1, 1);
        assert!(matches!(
            lr_precondition_report(&h, 0.0, Algorithm::FedAvg, None),
            Err(SimError::Domain(_))
        ));
        assert!(lr_precondition_report(&h, -1.0, Algorithm::FedAvg, None).is_err());
    }

    #[test]
    fn hyperparam_invariants() {
        assert!(HyperParams::new(0.0, 1.0, 1, 1, 1, 1).is_err());
        assert!(HyperParams::new(0.1, 0.0, 1, 1, 1, 1).is_err());
        assert!(HyperParams::new(0.1, 1.0, 0, 1, 1, 1).is_err());
        assert!(HyperParams::new(0.1, 1.0, 1, 1, 3, 2).is_err());
        assert!(HyperParams::new(0.1, 1.0, 1, 1, 0, 2).is_err());
        assert!(HyperParams::new(0.1, 1.0, 1, 0, 2, 2).is_ok());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("scaffold".parse::<Algorithm>().is_err());
    }

    proptest! {
        #[test]
        fn effective_lr_is_the_product(eta_c in 1e-6f64..10.0, eta_s in 1e-6f64..10.0, tau in 1usize..100) {
            let h = HyperParams::new(eta_c, eta_s, tau, 1, 1, 1).unwrap();
            prop_assert_eq!(h.effective_server_lr(), eta_s * eta_c * tau as f64);
        }

        #[test]
        fn shrinking_rates_never_breaks_a_pass(
            eta_c in 1e-4f64..0.5,
            eta_s in 1e-2f64..4.0,
            shrink_c in 0.01f64..1.0,
            shrink_s in 0.01f64..1.0,
            tau in 1usize..8,
            n in 1usize..40,
            m_frac in 0.0f64..1.0,
            l in 0.1f64..10.0,
            p in 0.0f64..1.0,
            algo_idx in 0usize..4,
        ) {
            let m = 1 + ((n - 1) as f64 * m_frac) as usize;
            let algo = Algorithm::ALL[algo_idx];
            let big = HyperParams::new(eta_c, eta_s, tau, 1, m, n).unwrap();
            let small = HyperParams::new(eta_c * shrink_c, eta_s * shrink_s, tau, 1, m, n).unwrap();
            let rb = lr_precondition_report(&big, l, algo, Some(p)).unwrap();
            let rs = lr_precondition_report(&small, l, algo, Some(p)).unwrap();
            for (cb, cs) in rb.checks.iter().zip(&rs.checks) {
                prop_assert!(!cb.satisfied || cs.satisfied, "{} flipped", cb.name);
            }
        }
    }
}
