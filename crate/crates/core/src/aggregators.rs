//! Server-side aggregation: FedAvg, FedVARP, ClusterFedVARP and a MIFA-style
//! baseline.
//!
//! FedVARP and ClusterFedVARP share one direction kernel. Writing `n_s` for
//! the number of clients mapped to state slot `s` and `m_s` for how many of
//! them were sampled, the variance-reduced direction
//!
//! ```text
//! v = (1/M) sum_{i in S} (delta_i - y_{slot(i)}) + (1/N) sum_j y_{slot(j)}
//! ```
//!
//! is evaluated as `mean_{i in S} delta_i + sum_s (n_s/N - m_s/M) y_s`,
//! skipping slots whose coefficient is exactly zero. The two forms agree in
//! exact arithmetic. The second one makes the reductions hold bit for bit:
//! with one cluster every coefficient is `1 - 1 = 0` and the kernel returns
//! the FedAvg mean unchanged, and with singleton clusters it performs exactly
//! the FedVARP operations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::params::Algorithm;
use crate::sampling::RoundPlan;
use crate::vector::{check_dim, ordered_mean, ordered_sum, ModelVector};

/// Relative tolerance for the running-mean consistency check.
pub const RUNNING_MEAN_TOL: f64 = 1e-10;

/// Map from client id to cluster id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, num_clusters: usize) -> Result<Self> {
        if num_clusters == 0 {
            return Err(SimError::config("need at least one cluster"));
        }
        if let Some(bad) = labels.iter().find(|&&c| c >= num_clusters) {
            return Err(SimError::config(format!(
                "cluster id {bad} out of range for K={num_clusters}"
            )));
        }
        Ok(ClusterAssignment {
            labels,
            num_clusters,
        })
    }

    /// Client `i` goes to cluster `i mod K`.
    pub fn round_robin(num_clients: usize, num_clusters: usize) -> Result<Self> {
        if num_clusters == 0 || num_clusters > num_clients {
            return Err(SimError::config(format!(
                "need 1 <= K <= N, got K={num_clusters} N={num_clients}"
            )));
        }
        Self::new(
            (0..num_clients).map(|i| i % num_clusters).collect(),
            num_clusters,
        )
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_clients(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_of(&self, client: usize) -> Result<usize> {
        self.labels
            .get(client)
            .copied()
            .ok_or_else(|| SimError::config(format!("client {client} has no cluster assignment")))
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &c in &self.labels {
            sizes[c] += 1;
        }
        sizes
    }

    /// Common cluster size `r` if every cluster has the same size.
    pub fn equal_size(&self) -> Option<usize> {
        let sizes = self.sizes();
        let r = sizes[0];
        sizes.iter().all(|&s| s == r).then_some(r)
    }
}

/// Algorithm-specific server memory.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerMemory {
    /// FedAvg keeps nothing between rounds.
    Stateless,
    /// FedVARP and MIFA: latest update per client and its running mean.
    ClientTable {
        y: Vec<ModelVector>,
        y_bar: ModelVector,
    },
    /// ClusterFedVARP: one state per cluster.
    ClusterTable {
        y: Vec<ModelVector>,
        assignment: ClusterAssignment,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerAggregatorState {
    pub algo: Algorithm,
    pub w: ModelVector,
    pub memory: ServerMemory,
    pub round: usize,
    num_clients: usize,
}

impl ServerAggregatorState {
    /// Fresh state with every table entry zero. `assignment` is required for
    /// ClusterFedVARP and ignored otherwise.
    pub fn new(
        algo: Algorithm,
        w0: ModelVector,
        num_clients: usize,
        assignment: Option<ClusterAssignment>,
    ) -> Result<Self> {
        if num_clients == 0 {
            return Err(SimError::config("server needs at least one client"));
        }
        let d = w0.len();
        let memory = match algo {
            Algorithm::FedAvg => ServerMemory::Stateless,
            Algorithm::FedVarp | Algorithm::Mifa => ServerMemory::ClientTable {
                y: vec![ModelVector::zeros(d); num_clients],
                y_bar: ModelVector::zeros(d),
            },
            Algorithm::ClusterFedVarp => {
                let assignment = assignment
                    .ok_or_else(|| SimError::config("ClusterFedVARP needs a cluster assignment"))?;
                if assignment.num_clients() != num_clients {
                    return Err(SimError::config(format!(
                        "assignment covers {} clients, expected {num_clients}",
                        assignment.num_clients()
                    )));
                }
                ServerMemory::ClusterTable {
                    y: vec![ModelVector::zeros(d); assignment.num_clusters()],
                    assignment,
                }
            }
        };
        Ok(ServerAggregatorState {
            algo,
            w: w0,
            memory,
            round: 0,
            num_clients,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Client states for table-based algorithms.
    pub fn client_table(&self) -> Option<(&[ModelVector], &ModelVector)> {
        match &self.memory {
            ServerMemory::ClientTable { y, y_bar } => Some((y, y_bar)),
            _ => None,
        }
    }

    pub fn cluster_table(&self) -> Option<(&[ModelVector], &ClusterAssignment)> {
        match &self.memory {
            ServerMemory::ClusterTable { y, assignment } => Some((y, assignment)),
            _ => None,
        }
    }

    /// Dispatches to the step matching `self.algo`.
    pub fn step(&mut self, upd: &RoundUpdates, eta_tilde: f64) -> Result<&ModelVector> {
        match self.algo {
            Algorithm::FedAvg => fedavg_step(self, upd, eta_tilde),
            Algorithm::FedVarp => fedvarp_step(self, upd, eta_tilde),
            Algorithm::ClusterFedVarp => clusterfedvarp_step(self, upd, eta_tilde),
            Algorithm::Mifa => mifa_step(self, upd, eta_tilde),
        }
    }

    fn expect(&self, algo: Algorithm) -> Result<()> {
        if self.algo == algo {
            Ok(())
        } else {
            Err(SimError::config(format!(
                "{algo} step applied to a {} state",
                self.algo
            )))
        }
    }

    fn apply(&mut self, direction: &ModelVector, eta_tilde: f64) -> Result<()> {
        self.w.axpy_in_place(-eta_tilde, direction)?;
        self.round += 1;
        if !self.w.is_finite() {
            return Err(SimError::NonFinite {
                context: "server step",
            });
        }
        Ok(())
    }
}

/// The updates returned by one round's participants.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdates {
    pub plan: RoundPlan,
    pub deltas: BTreeMap<usize, ModelVector>,
}

impl RoundUpdates {
    pub fn new(plan: RoundPlan, deltas: BTreeMap<usize, ModelVector>) -> Result<Self> {
        let upd = RoundUpdates { plan, deltas };
        if upd.plan.is_empty() {
            return Err(SimError::config("empty participant set"));
        }
        if !upd
            .deltas
            .keys()
            .copied()
            .eq(upd.plan.participants.iter().copied())
        {
            return Err(SimError::config(
                "update keys differ from the round's participants",
            ));
        }
        Ok(upd)
    }

    /// Convenience constructor from `(client, delta)` pairs.
    pub fn from_pairs(
        round: usize,
        num_clients: usize,
        pairs: Vec<(usize, ModelVector)>,
    ) -> Result<Self> {
        let plan = RoundPlan::new(round, pairs.iter().map(|(i, _)| *i).collect(), num_clients)?;
        Self::new(plan, pairs.into_iter().collect())
    }

    fn validate(&self, state: &ServerAggregatorState) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(SimError::config("empty participant set"));
        }
        for (&i, d) in &self.deltas {
            if i >= state.num_clients {
                return Err(SimError::config(format!("participant {i} out of range")));
            }
            check_dim(state.dim(), d.len())?;
        }
        Ok(())
    }

    fn mean_delta(&self) -> ModelVector {
        ordered_mean(self.deltas.values()).expect("validated non-empty")
    }
}

/// Shared variance-reduced kernel; see the module docs.
fn table_direction(
    upd: &RoundUpdates,
    states: &[ModelVector],
    slot_sizes: &[usize],
    slot_of: impl Fn(usize) -> Result<usize>,
    num_clients: usize,
) -> Result<ModelVector> {
    let mut hits = vec![0usize; states.len()];
    for &i in upd.deltas.keys() {
        hits[slot_of(i)?] += 1;
    }
    let n = num_clients as f64;
    let m = upd.deltas.len() as f64;
    let mut v = upd.mean_delta();
    for ((y, &size), &hit) in states.iter().zip(slot_sizes).zip(&hits) {
        let coef = size as f64 / n - hit as f64 / m;
        if coef != 0.0 {
            v.axpy_in_place(coef, y)?;
        }
    }
    Ok(v)
}

/// Aggregated direction `v` the state would use for `upd`, without mutating.
pub fn direction(state: &ServerAggregatorState, upd: &RoundUpdates) -> Result<ModelVector> {
    upd.validate(state)?;
    match (&state.memory, state.algo) {
        (ServerMemory::Stateless, _) => Ok(upd.mean_delta()),
        (ServerMemory::ClientTable { y, .. }, Algorithm::Mifa) => {
            let refreshed: Vec<&ModelVector> = y
                .iter()
                .enumerate()
                .map(|(j, yj)| upd.deltas.get(&j).unwrap_or(yj))
                .collect();
            Ok(ordered_mean(refreshed).expect("non-empty table"))
        }
        (ServerMemory::ClientTable { y, .. }, _) => {
            let ones = vec![1usize; y.len()];
            table_direction(upd, y, &ones, Ok, state.num_clients)
        }
        (ServerMemory::ClusterTable { y, assignment }, _) => table_direction(
            upd,
            y,
            &assignment.sizes(),
            |i| assignment.cluster_of(i),
            state.num_clients,
        ),
    }
}

/// `v = (1/M) sum_{i in S} delta_i`, then `w <- w - eta_tilde * v`.
pub fn fedavg_step<'a>(
    state: &'a mut ServerAggregatorState,
    upd: &RoundUpdates,
    eta_tilde: f64,
) -> Result<&'a ModelVector> {
    state.expect(Algorithm::FedAvg)?;
    let v = direction(state, upd)?;
    state.apply(&v, eta_tilde)?;
    Ok(&state.w)
}

/// FedVARP: step along the variance-reduced direction computed from the
/// pre-update table, then `y_bar += (1/N) sum_{i in S} (delta_i - y_i)` and
/// `y_i <- delta_i` for participants. Fails with [`SimError::StateDrift`] if
/// the running mean departs from the table mean.
pub fn fedvarp_step<'a>(
    state: &'a mut ServerAggregatorState,
    upd: &RoundUpdates,
    eta_tilde: f64,
) -> Result<&'a ModelVector> {
    state.expect(Algorithm::FedVarp)?;
    let v = direction(state, upd)?;
    state.apply(&v, eta_tilde)?;

    let n = state.num_clients as f64;
    let ServerMemory::ClientTable { y, y_bar } = &mut state.memory else {
        unreachable!("FedVARP state always holds a client table");
    };
    let corrections = upd
        .deltas
        .iter()
        .map(|(&i, d)| d.sub(&y[i]))
        .collect::<Result<Vec<_>>>()?;
    let total = ordered_sum(&corrections).expect("non-empty");
    y_bar.axpy_in_place(1.0 / n, &total)?;
    for (&i, d) in &upd.deltas {
        y[i] = d.clone();
    }
    check_running_mean(y, y_bar)?;
    Ok(&state.w)
}

/// ClusterFedVARP: step along the cluster-state direction, then each
/// sampled cluster's state becomes the mean update of its sampled members.
pub fn clusterfedvarp_step<'a>(
    state: &'a mut ServerAggregatorState,
    upd: &RoundUpdates,
    eta_tilde: f64,
) -> Result<&'a ModelVector> {
    state.expect(Algorithm::ClusterFedVarp)?;
    let v = direction(state, upd)?;
    state.apply(&v, eta_tilde)?;

    let ServerMemory::ClusterTable { y, assignment } = &mut state.memory else {
        unreachable!("ClusterFedVARP state always holds a cluster table");
    };
    let mut members: BTreeMap<usize, Vec<&ModelVector>> = BTreeMap::new();
    for (&i, d) in &upd.deltas {
        members
            .entry(assignment.cluster_of(i)?)
            .or_default()
            .push(d);
    }
    for (k, ds) in members {
        y[k] = ordered_mean(ds).expect("non-empty group");
    }
    Ok(&state.w)
}

/// MIFA-style baseline: refresh `y_i <- delta_i` for participants first, then
/// step along the plain table mean `(1/N) sum_j y_j`.
pub fn mifa_step<'a>(
    state: &'a mut ServerAggregatorState,
    upd: &RoundUpdates,
    eta_tilde: f64,
) -> Result<&'a ModelVector> {
    state.expect(Algorithm::Mifa)?;
    let v = direction(state, upd)?;
    state.apply(&v, eta_tilde)?;
    let ServerMemory::ClientTable { y, y_bar } = &mut state.memory else {
        unreachable!("MIFA state always holds a client table");
    };
    for (&i, d) in &upd.deltas {
        y[i] = d.clone();
    }
    *y_bar = v;
    Ok(&state.w)
}

/// Relative gap between a running mean and the recomputed table mean,
/// scaled by the mean entry norm.
pub fn running_mean_error(y: &[ModelVector], y_bar: &ModelVector) -> f64 {
    let Some(exact) = ordered_mean(y) else {
        return 0.0;
    };
    let gap = exact.dist_sq(y_bar).map(f64::sqrt).unwrap_or(f64::INFINITY);
    if gap == 0.0 {
        return 0.0;
    }
    let scale = y.iter().map(ModelVector::norm).sum::<f64>() / y.len() as f64;
    if scale == 0.0 {
        f64::INFINITY
    } else {
        gap / scale
    }
}

fn check_running_mean(y: &[ModelVector], y_bar: &ModelVector) -> Result<()> {
    let rel_err = running_mean_error(y, y_bar);
    if rel_err <= RUNNING_MEAN_TOL {
        Ok(())
    } else {
        Err(SimError::StateDrift { rel_err })
    }
}

/// Probability that a given cluster of `r` clients gets no participant when
/// `M` of `N` clients are drawn without replacement: `C(N-r, M) / C(N, M)`.
pub fn cluster_miss_probability(n: usize, r: usize, m: usize) -> Result<f64> {
    if r == 0 || r > n {
        return Err(SimError::config(format!(
            "cluster size r={r} must satisfy 1 <= r <= N={n}"
        )));
    }
    if !n.is_multiple_of(r) {
        return Err(SimError::config(format!(
            "N={n} is not a multiple of cluster size r={r}"
        )));
    }
    if m > n {
        return Err(SimError::config(format!("M={m} exceeds N={n}")));
    }
    if m > n - r {
        return Ok(0.0);
    }
    // prod_{j<M} (N-r-j)/(N-j): no factorial overflow
    Ok((0..m).fold(1.0, |acc, j| acc * (n - r - j) as f64 / (n - j) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::vec_axpy;

    fn s(x: f64) -> ModelVector {
        ModelVector::new(vec![x]).unwrap()
    }

    fn scalar_table(state: &ServerAggregatorState) -> Vec<f64> {
        match &state.memory {
            ServerMemory::ClientTable { y, .. } | ServerMemory::ClusterTable { y, .. } => {
                y.iter().map(|v| v.as_slice()[0]).collect()
            }
            ServerMemory::Stateless => vec![],
        }
    }

    fn with_client_table(algo: Algorithm, ys: &[f64]) -> ServerAggregatorState {
        let mut st = ServerAggregatorState::new(algo, s(0.0), ys.len(), None).unwrap();
        let table: Vec<ModelVector> = ys.iter().map(|&x| s(x)).collect();
        let mean = ordered_mean(&table).unwrap();
        st.memory = ServerMemory::ClientTable {
            y: table,
            y_bar: mean,
        };
        st
    }

    #[test]
    fn fedavg_mean_and_step() {
        let mut st = ServerAggregatorState::new(Algorithm::FedAvg, s(0.0), 4, None).unwrap();
        let upd = RoundUpdates::from_pairs(0, 4, vec![(0, s(1.0)), (2, s(3.0))]).unwrap();
        assert_eq!(direction(&st, &upd).unwrap(), s(2.0));
        fedavg_step(&mut st, &upd, 0.1).unwrap();
        assert!((st.w.as_slice()[0] + 0.2).abs() < 1e-15);

        let single = RoundUpdates::from_pairs(1, 4, vec![(3, s(0.7))]).unwrap();
        assert_eq!(direction(&st, &single).unwrap(), s(0.7));
    }

    #[test]
    fn first_fedvarp_round_matches_fedavg() {
        let upd = RoundUpdates::from_pairs(0, 5, vec![(1, s(0.3)), (4, s(-1.1))]).unwrap();
        let avg = ServerAggregatorState::new(Algorithm::FedAvg, s(0.0), 5, None).unwrap();
        let varp = ServerAggregatorState::new(Algorithm::FedVarp, s(0.0), 5, None).unwrap();
        assert_eq!(
            direction(&avg, &upd).unwrap(),
            direction(&varp, &upd).unwrap()
        );
    }

    #[test]
    fn fedvarp_worked_example() {
        let mut st = with_client_table(Algorithm::FedVarp, &[1.0, 2.0, 3.0]);
        let upd = RoundUpdates::from_pairs(0, 3, vec![(0, s(5.0))]).unwrap();
        let v = direction(&st, &upd).unwrap().as_slice()[0];
        assert!((v - 6.0).abs() < 1e-14);
        fedvarp_step(&mut st, &upd, 1.0).unwrap();
        assert_eq!(scalar_table(&st), vec![5.0, 2.0, 3.0]);
        let (_, y_bar) = st.client_table().unwrap();
        assert!((y_bar.as_slice()[0] - 10.0 / 3.0).abs() < 1e-14);
        assert!((st.w.as_slice()[0] + 6.0).abs() < 1e-14);
    }

    #[test]
    fn fedvarp_detects_corrupted_running_mean() {
        let mut st = with_client_table(Algorithm::FedVarp, &[1.0, 2.0, 3.0]);
        if let ServerMemory::ClientTable { y_bar, .. } = &mut st.memory {
            *y_bar = s(2.5);
        }
        let upd = RoundUpdates::from_pairs(0, 3, vec![(1, s(1.0))]).unwrap();
        assert!(matches!(
            fedvarp_step(&mut st, &upd, 0.1),
            Err(SimError::StateDrift { .. })
        ));
    }

    #[test]
    fn cluster_worked_example() {
        let assignment = ClusterAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let mut st =
            ServerAggregatorState::new(Algorithm::ClusterFedVarp, s(0.0), 4, Some(assignment))
                .unwrap();
        if let ServerMemory::ClusterTable { y, .. } = &mut st.memory {
            *y = vec![s(10.0), s(20.0)];
        }
        let upd = RoundUpdates::from_pairs(0, 4, vec![(0, s(4.0)), (2, s(6.0))]).unwrap();
        let v = direction(&st, &upd).unwrap().as_slice()[0];
        assert!((v - 5.0).abs() < 1e-14);
        clusterfedvarp_step(&mut st, &upd, 1.0).unwrap();
        assert_eq!(scalar_table(&st), vec![4.0, 6.0]);
    }

    #[test]
    fn cluster_state_is_within_cluster_mean() {
        let assignment = ClusterAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let mut st =
            ServerAggregatorState::new(Algorithm::ClusterFedVarp, s(0.0), 4, Some(assignment))
                .unwrap();
        if let ServerMemory::ClusterTable { y, .. } = &mut st.memory {
            *y = vec![s(10.0), s(20.0)];
        }
        let upd = RoundUpdates::from_pairs(0, 4, vec![(0, s(4.0)), (1, s(8.0))]).unwrap();
        clusterfedvarp_step(&mut st, &upd, 1.0).unwrap();
        assert_eq!(scalar_table(&st), vec![6.0, 20.0]);
    }

    #[test]
    fn single_cluster_is_fedavg_bitwise() {
        let assignment = ClusterAssignment::round_robin(5, 1).unwrap();
        let mut st =
            ServerAggregatorState::new(Algorithm::ClusterFedVarp, s(0.0), 5, Some(assignment))
                .unwrap();
        if let ServerMemory::ClusterTable { y, .. } = &mut st.memory {
            *y = vec![s(0.123456789)];
        }
        let upd =
            RoundUpdates::from_pairs(0, 5, vec![(0, s(0.1)), (2, s(0.2)), (3, s(0.7))]).unwrap();
        let avg = ServerAggregatorState::new(Algorithm::FedAvg, s(0.0), 5, None).unwrap();
        let a = direction(&avg, &upd).unwrap();
        let b = direction(&st, &upd).unwrap();
        assert_eq!(a.as_slice()[0].to_bits(), b.as_slice()[0].to_bits());
    }

    #[test]
    fn missing_assignment_is_a_config_error() {
        let assignment = ClusterAssignment::new(vec![0, 1, 0], 2).unwrap();
        let st = ServerAggregatorState::new(
            Algorithm::ClusterFedVarp,
            s(0.0),
            3,
            Some(assignment.clone()),
        );
        assert!(st.is_ok());
        assert!(
            ServerAggregatorState::new(Algorithm::ClusterFedVarp, s(0.0), 4, Some(assignment))
                .is_err()
        );
        assert!(ServerAggregatorState::new(Algorithm::ClusterFedVarp, s(0.0), 3, None).is_err());
        assert!(ClusterAssignment::new(vec![0, 2], 2).is_err());
        assert!(ClusterAssignment::new(vec![], 0).is_err());
    }

    #[test]
    fn mifa_examples() {
        let mut st = with_client_table(Algorithm::Mifa, &[0.0, 7.0]);
        let upd = RoundUpdates::from_pairs(0, 2, vec![(0, s(3.0))]).unwrap();
        assert_eq!(direction(&st, &upd).unwrap(), s(5.0));
        mifa_step(&mut st, &upd, 1.0).unwrap();
        assert_eq!(scalar_table(&st), vec![3.0, 7.0]);

        let cold = ServerAggregatorState::new(Algorithm::Mifa, s(0.0), 4, None).unwrap();
        let upd = RoundUpdates::from_pairs(0, 4, vec![(0, s(4.0))]).unwrap();
        assert_eq!(direction(&cold, &upd).unwrap(), s(1.0));
    }

    #[test]
    fn mifa_full_participation_is_fedavg() {
        let mut mifa = ServerAggregatorState::new(Algorithm::Mifa, s(0.0), 3, None).unwrap();
        let mut avg = ServerAggregatorState::new(Algorithm::FedAvg, s(0.0), 3, None).unwrap();
        for (t, ds) in [[0.3, -1.0, 2.5], [0.1, 0.2, 0.4]].iter().enumerate() {
            let upd = RoundUpdates::from_pairs(
                t,
                3,
                ds.iter().enumerate().map(|(i, &x)| (i, s(x))).collect(),
            )
            .unwrap();
            mifa_step(&mut mifa, &upd, 0.5).unwrap();
            fedavg_step(&mut avg, &upd, 0.5).unwrap();
            assert_eq!(mifa.w, avg.w);
        }
    }

    #[test]
    fn wrong_algorithm_rejected() {
        let mut st = ServerAggregatorState::new(Algorithm::FedAvg, s(0.0), 2, None).unwrap();
        let upd = RoundUpdates::from_pairs(0, 2, vec![(0, s(1.0))]).unwrap();
        assert!(fedvarp_step(&mut st, &upd, 0.1).is_err());
        assert!(mifa_step(&mut st, &upd, 0.1).is_err());
    }

    #[test]
    fn update_keys_must_match_plan() {
        let plan = RoundPlan::new(0, vec![0, 1], 3).unwrap();
        let deltas: BTreeMap<usize, ModelVector> = [(0, s(1.0)), (2, s(1.0))].into_iter().collect();
        assert!(RoundUpdates::new(plan, deltas).is_err());
        assert!(RoundUpdates::from_pairs(0, 3, vec![]).is_err());
    }

    #[test]
    fn dimension_mismatch_in_updates() {
        let mut st = ServerAggregatorState::new(Algorithm::FedAvg, s(0.0), 2, None).unwrap();
        let upd = RoundUpdates::from_pairs(0, 2, vec![(0, ModelVector::zeros(2))]).unwrap();
        assert!(matches!(
            fedavg_step(&mut st, &upd, 0.1),
            Err(SimError::Dimension { .. })
        ));
    }

    #[test]
    fn miss_probability_examples() {
        assert!((cluster_miss_probability(4, 2, 2).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(cluster_miss_probability(6, 6, 1).unwrap(), 0.0);
        assert_eq!(cluster_miss_probability(6, 2, 6).unwrap(), 0.0);
        assert!(cluster_miss_probability(4, 5, 2).is_err());
        assert!(cluster_miss_probability(5, 2, 2).is_err());
    }

    #[test]
    fn miss_probability_matches_subset_counting() {
        use crate::sampling::enumerate_subsets;
        for (n, r) in [(6, 2), (6, 3), (8, 2), (8, 4)] {
            for m in 1..=n {
                let subsets = enumerate_subsets(n, m).unwrap();
                let misses = subsets
                    .iter()
                    .filter(|p| p.participants.iter().all(|&i| i >= r))
                    .count();
                let expected = misses as f64 / subsets.len() as f64;
                let got = cluster_miss_probability(n, r, m).unwrap();
                assert!((got - expected).abs() < 1e-14, "n={n} r={r} m={m}");
            }
        }
    }

    #[test]
    fn server_step_uses_negated_axpy() {
        let mut st = ServerAggregatorState::new(Algorithm::FedAvg, s(1.5), 1, None).unwrap();
        let upd = RoundUpdates::from_pairs(0, 1, vec![(0, s(0.25))]).unwrap();
        fedavg_step(&mut st, &upd, 0.5).unwrap();
        assert_eq!(st.w, vec_axpy(-0.5, &s(0.25), &s(1.5)).unwrap());
        assert_eq!(st.round, 1);
    }
}
