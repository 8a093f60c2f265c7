//! Client-side local training.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::objectives::QuadraticClient;
use crate::params::HyperParams;
use crate::rng::ClientRoundStream;
use crate::vector::{check_dim, ModelVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalRunConfig {
    pub tau: usize,
    pub eta_c: f64,
}

impl LocalRunConfig {
    pub fn new(tau: usize, eta_c: f64) -> Result<Self> {
        if tau == 0 {
            return Err(SimError::config("tau must be at least 1"));
        }
        if !(eta_c.is_finite() && eta_c > 0.0) {
            return Err(SimError::config(format!(
                "eta_c must be positive, got {eta_c}"
            )));
        }
        Ok(LocalRunConfig { tau, eta_c })
    }
}

impl From<&HyperParams> for LocalRunConfig {
    fn from(h: &HyperParams) -> Self {
        LocalRunConfig {
            tau: h.tau,
            eta_c: h.eta_c,
        }
    }
}

/// Runs `tau` steps of SGD from `w` and returns the normalised update
/// `(w - w_tau) / (eta_c * tau)`. Step `k` draws its noise from
/// `stream.step(k)`.
pub fn local_sgd(
    client: &QuadraticClient,
    w: &ModelVector,
    cfg: &LocalRunConfig,
    stream: &ClientRoundStream,
) -> Result<ModelVector> {
    check_dim(client.dim(), w.len())?;
    let local = local_iterate(client, w, cfg, stream)?;
    let delta = w.sub(&local)?.divided(cfg.eta_c * cfg.tau as f64);
    if !delta.is_finite() {
        return Err(SimError::Divergence {
            round: stream.round,
            step: cfg.tau,
            client: client.client_id,
        });
    }
    Ok(delta)
}

/// The final local iterate `w_i^(t, tau)`.
pub fn local_iterate(
    client: &QuadraticClient,
    w: &ModelVector,
    cfg: &LocalRunConfig,
    stream: &ClientRoundStream,
) -> Result<ModelVector> {
    let mut iterate = w.clone();
    for k in 0..cfg.tau {
        let diverged = || SimError::Divergence {
            round: stream.round,
            step: k,
            client: client.client_id,
        };
        let g = client
            .stochastic_gradient(&iterate, &mut stream.step(k))
            .map_err(|e| match e {
                SimError::NonFinite { .. } => diverged(),
                other => other,
            })?;
        iterate.axpy_in_place(-cfg.eta_c, &g)?;
        if !iterate.is_finite() {
            return Err(diverged());
        }
    }
    Ok(iterate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    fn client(eigs: &[f64], mu: &[f64], sigma: f64) -> QuadraticClient {
        QuadraticClient::new(3, Arc::from(eigs.to_vec()), mv(mu), sigma).unwrap()
    }

    fn stream() -> ClientRoundStream {
        ClientRoundStream::new(11, 3, 0)
    }

    #[test]
    fn one_noiseless_step_is_the_gradient() {
        let c = client(&[1.0, 0.5], &[2.0, -1.0], 0.0);
        let w = mv(&[0.25, 0.5]);
        let delta = local_sgd(&c, &w, &LocalRunConfig::new(1, 0.5).unwrap(), &stream()).unwrap();
        // dyadic inputs keep every intermediate exact
        assert_eq!(delta, c.gradient(&w).unwrap());
    }

    #[test]
    fn two_step_recursion() {
        let c = client(&[1.0], &[2.0], 0.0);
        let delta = local_sgd(
            &c,
            &mv(&[0.0]),
            &LocalRunConfig::new(2, 0.5).unwrap(),
            &stream(),
        )
        .unwrap();
        assert_eq!(delta, mv(&[-1.5]));
    }

    #[test]
    fn minimizer_is_a_fixed_point() {
        let c = client(&[1.0, 3.0], &[0.7, -0.2], 0.0);
        for tau in [1, 2, 7] {
            let delta = local_sgd(
                &c,
                &mv(&[0.7, -0.2]),
                &LocalRunConfig::new(tau, 0.1).unwrap(),
                &stream(),
            )
            .unwrap();
            assert_eq!(delta, mv(&[0.0, 0.0]));
        }
    }

    #[test]
    fn divergence_reports_round_and_step() {
        let c = client(&[1.0], &[0.0], 0.0);
        let s = ClientRoundStream::new(1, 3, 42);
        let err = local_sgd(
            &c,
            &mv(&[1e300]),
            &LocalRunConfig::new(50, 1e10).unwrap(),
            &s,
        )
        .unwrap_err();
        match err {
            SimError::Divergence { round, client, .. } => {
                assert_eq!(round, 42);
                assert_eq!(client, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn input_is_not_modified_and_runs_are_deterministic() {
        let c = client(&[1.0, 2.0], &[1.0, 1.0], 0.5);
        let w = mv(&[0.0, 0.0]);
        let cfg = LocalRunConfig::new(5, 0.05).unwrap();
        let a = local_sgd(&c, &w, &cfg, &stream()).unwrap();
        let b = local_sgd(&c, &w, &cfg, &stream()).unwrap();
        assert_eq!(w, mv(&[0.0, 0.0]));
        let bits = |v: &ModelVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let other = local_sgd(&c, &w, &cfg, &ClientRoundStream::new(11, 3, 1)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn dimension_checked() {
        let c = client(&[1.0], &[0.0], 0.0);
        assert!(matches!(
            local_sgd(
                &c,
                &mv(&[0.0, 0.0]),
                &LocalRunConfig::new(1, 0.1).unwrap(),
                &stream()
            ),
            Err(SimError::Dimension { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(LocalRunConfig::new(0, 0.1).is_err());
        assert!(LocalRunConfig::new(1, 0.0).is_err());
    }
}
