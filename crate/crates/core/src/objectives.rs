//! Synthetic quadratic client objectives.
//!
//! Client `i` minimises `f_i(w) = 1/2 (w - mu_i)^T A (w - mu_i)` with a
//! diagonal Hessian `A` shared by every client. Because `A` is shared,
//! `grad f_i(w) - grad f(w) = A(mu_bar - mu_i)` does not depend on `w`, so the
//! smoothness, heterogeneity and cluster-heterogeneity constants can be
//! reported exactly rather than bounded.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{self, Domain};
use crate::vector::{check_dim, ordered_mean, ordered_sum, ModelVector};

/// One client's local objective plus its stochastic gradient oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticClient {
    pub client_id: usize,
    hessian_eigs: Arc<[f64]>,
    mu: ModelVector,
    noise_sigma: f64,
}

impl QuadraticClient {
    pub fn new(
        client_id: usize,
        hessian_eigs: Arc<[f64]>,
        mu: ModelVector,
        noise_sigma: f64,
    ) -> Result<Self> {
        check_dim(hessian_eigs.len(), mu.len())?;
        if hessian_eigs.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(SimError::config(
                "Hessian eigenvalues must be finite and non-negative",
            ));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(SimError::config(format!(
                "noise sigma must be non-negative, got {noise_sigma}"
            )));
        }
        Ok(QuadraticClient {
            client_id,
            hessian_eigs,
            mu,
            noise_sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn minimizer(&self) -> &ModelVector {
        &self.mu
    }

    pub fn hessian_eigs(&self) -> &[f64] {
        &self.hessian_eigs
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Largest Hessian eigenvalue; the exact smoothness constant.
    pub fn smoothness(&self) -> f64 {
        self.hessian_eigs.iter().copied().fold(0.0, f64::max)
    }

    pub fn loss(&self, w: &ModelVector) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        let q = w
            .as_slice()
            .iter()
            .zip(self.mu.as_slice())
            .zip(self.hessian_eigs.iter())
            .fold(0.0, |acc, ((wj, mj), aj)| acc + aj * (wj - mj) * (wj - mj));
        Ok(0.5 * q)
    }

    /// Exact local gradient `A(w - mu_i)`.
    pub fn gradient(&self, w: &ModelVector) -> Result<ModelVector> {
        check_dim(self.dim(), w.len())?;
        let g = w
            .as_slice()
            .iter()
            .zip(self.mu.as_slice())
            .zip(self.hessian_eigs.iter())
            .map(|((wj, mj), aj)| aj * (wj - mj))
            .collect();
        ModelVector::new(g).map_err(|_| SimError::NonFinite {
            context: "gradient",
        })
    }

    /// Exact gradient plus isotropic Gaussian noise with `E|noise|^2 = sigma^2`.
    /// With `sigma = 0` nothing is drawn from `rng`.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        w: &ModelVector,
        rng: &mut R,
    ) -> Result<ModelVector> {
        let g = self.gradient(w)?;
        if self.noise_sigma == 0.0 {
            return Ok(g);
        }
        let scale = self.noise_sigma / (self.dim() as f64).sqrt();
        let noisy: Vec<f64> = g
            .as_slice()
            .iter()
            .map(|gj| {
                let z: f64 = rng.sample(StandardNormal);
                gj + scale * z
            })
            .collect();
        ModelVector::new(noisy)
    }
}

/// Free-function form of [`QuadraticClient::stochastic_gradient`].
pub fn stochastic_gradient<R: Rng + ?Sized>(
    client: &QuadraticClient,
    w: &ModelVector,
    rng: &mut R,
) -> Result<ModelVector> {
    client.stochastic_gradient(w, rng)
}

/// Generator description for a federation of quadratic clients.
///
/// Client `i` belongs to generator cluster `i mod K_true` and gets
/// `mu_i = center[i mod K_true] + delta_i`, where `delta_i` is uniform in the
/// ball of radius `within_cluster_spread`.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationSpec {
    pub num_clients: usize,
    pub dim: usize,
    pub cluster_centers: Vec<ModelVector>,
    pub within_cluster_spread: f64,
    pub noise_sigma: f64,
    pub hessian_eigs: Vec<f64>,
    pub seed: u64,
    /// Require `K_true` to divide `N`.
    pub equal_size: bool,
}

impl FederationSpec {
    pub fn true_clusters(&self) -> usize {
        self.cluster_centers.len()
    }

    fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(SimError::config("federation needs at least one client"));
        }
        if self.dim == 0 {
            return Err(SimError::config("dimension d must be at least 1"));
        }
        let k = self.true_clusters();
        if k == 0 || k > self.num_clients {
            return Err(SimError::config(format!(
                "K_true must satisfy 1 <= K_true <= N, got K_true={k} N={}",
                self.num_clients
            )));
        }
        if self.equal_size && !self.num_clients.is_multiple_of(k) {
            return Err(SimError::config(format!(
                "N={} is not divisible by K_true={k} for equal-size clusters",
                self.num_clients
            )));
        }
        check_dim(self.dim, self.hessian_eigs.len())?;
        for c in &self.cluster_centers {
            check_dim(self.dim, c.len())?;
        }
        if !(self.within_cluster_spread.is_finite() && self.within_cluster_spread >= 0.0) {
            return Err(SimError::config(
                "within_cluster_spread must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Constants of the generated federation, all in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticConstants {
    /// Smoothness `L = max eig(A)`.
    pub smoothness: f64,
    /// `max_i |A(mu_bar - mu_i)|^2`.
    pub sigma_g_sq: f64,
    /// `max_k max_{i in C_k} |A(mu_bar_k - mu_i)|^2` over generator clusters.
    pub sigma_k_sq: f64,
    /// Global minimiser `mu_bar`.
    pub w_star: ModelVector,
    /// `f(w_star) = (1/2N) sum_i (mu_bar - mu_i)^T A (mu_bar - mu_i)`.
    pub f_star: f64,
}

#[derive(Debug, Clone)]
pub struct Federation {
    pub clients: Vec<QuadraticClient>,
    /// Generator cluster label of each client.
    pub labels: Vec<usize>,
    pub constants: AnalyticConstants,
}

impl Federation {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.constants.w_star.len()
    }
}

fn weighted_norm_sq(eigs: &[f64], v: &ModelVector) -> f64 {
    // |A v|^2
    eigs.iter()
        .zip(v.as_slice())
        .fold(0.0, |acc, (a, x)| acc + (a * x) * (a * x))
}

fn quad_form(eigs: &[f64], v: &ModelVector) -> f64 {
    eigs.iter()
        .zip(v.as_slice())
        .fold(0.0, |acc, (a, x)| acc + a * x * x)
}

/// Builds the clients of `spec` and their analytic constants.
pub fn generate_federation(spec: &FederationSpec) -> Result<Federation> {
    spec.validate()?;
    let k_true = spec.true_clusters();
    let eigs: Arc<[f64]> = spec.hessian_eigs.clone().into();

    let mut clients = Vec::with_capacity(spec.num_clients);
    let mut labels = Vec::with_capacity(spec.num_clients);
    for i in 0..spec.num_clients {
        let label = i % k_true;
        let offset = ball_sample(spec.seed, i, spec.dim, spec.within_cluster_spread);
        let mu = spec.cluster_centers[label].add(&offset)?;
        clients.push(QuadraticClient::new(i, eigs.clone(), mu, spec.noise_sigma)?);
        labels.push(label);
    }
    let constants = analytic_constants(&clients, &labels, k_true)?;
    Ok(Federation {
        clients,
        labels,
        constants,
    })
}

/// Uniform draw from the `dim`-ball of the given radius, keyed by client.
fn ball_sample(seed: u64, client: usize, dim: usize, radius: f64) -> ModelVector {
    if radius == 0.0 {
        return ModelVector::zeros(dim);
    }
    let mut r = rng::stream(seed, Domain::Federation, &[1, client as u64]);
    let z: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let norm = z
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let u: f64 = r.random();
    let len = radius * u.powf(1.0 / dim as f64);
    ModelVector::new(z.iter().map(|x| x / norm * len).collect()).expect("finite draw")
}

/// Centres with i.i.d. `Normal(0, spread^2/d)` coordinates, so
/// `E|center|^2 = spread^2`.
pub fn random_centers(seed: u64, count: usize, dim: usize, spread: f64) -> Vec<ModelVector> {
    (0..count)
        .map(|k| {
            if spread == 0.0 {
                return ModelVector::zeros(dim);
            }
            let mut r = rng::stream(seed, Domain::Federation, &[0, k as u64]);
            let scale = spread / (dim as f64).sqrt();
            let v = (0..dim)
                .map(|_| scale * r.sample::<f64, _>(StandardNormal))
                .collect();
            ModelVector::new(v).expect("finite draw")
        })
        .collect()
}

/// `d` eigenvalues evenly spaced on `[min, max]` (just `max` when `d = 1`).
pub fn linear_spectrum(dim: usize, min: f64, max: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![max];
    }
    (0..dim)
        .map(|j| min + (max - min) * j as f64 / (dim - 1) as f64)
        .collect()
}

fn analytic_constants(
    clients: &[QuadraticClient],
    labels: &[usize],
    k: usize,
) -> Result<AnalyticConstants> {
    let eigs = clients[0].hessian_eigs();
    let w_star = ordered_mean(clients.iter().map(|c| c.minimizer())).expect("non-empty");
    let mut sigma_g_sq: f64 = 0.0;
    let mut f_acc = 0.0;
    for c in clients {
        let diff = w_star.sub(c.minimizer())?;
        sigma_g_sq = sigma_g_sq.max(weighted_norm_sq(eigs, &diff));
        f_acc += quad_form(eigs, &diff);
    }
    let f_star = f_acc / (2.0 * clients.len() as f64);

    let mut sigma_k_sq: f64 = 0.0;
    for cluster in 0..k {
        let members: Vec<&QuadraticClient> = clients
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == cluster)
            .map(|(c, _)| c)
            .collect();
        let Some(center) = ordered_mean(members.iter().map(|c| c.minimizer())) else {
            continue;
        };
        for c in members {
            sigma_k_sq = sigma_k_sq.max(weighted_norm_sq(eigs, &center.sub(c.minimizer())?));
        }
    }

    Ok(AnalyticConstants {
        smoothness: clients[0].smoothness(),
        sigma_g_sq,
        sigma_k_sq,
        w_star,
        f_star,
    })
}

/// `((1/N) sum_i grad f_i(w), (1/N) sum_i f_i(w))` with exact gradients,
/// summed in ascending client order.
pub fn global_grad_and_loss(
    clients: &[QuadraticClient],
    w: &ModelVector,
) -> Result<(ModelVector, f64)> {
    if clients.is_empty() {
        return Err(SimError::config(
            "global objective needs at least one client",
        ));
    }
    let grads = clients
        .iter()
        .map(|c| c.gradient(w))
        .collect::<Result<Vec<_>>>()?;
    let n = clients.len() as f64;
    let grad = ordered_sum(&grads).expect("non-empty").divided(n);
    let mut loss = 0.0;
    for c in clients {
        loss += c.loss(w)?;
    }
    Ok((grad, loss / n))
}
