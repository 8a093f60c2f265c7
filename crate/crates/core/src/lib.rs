//! Deterministic simulator for federated optimisation with server-side
//! variance reduction.
//!
//! Clients run local SGD on synthetic quadratic objectives whose smoothness and
//! heterogeneity constants are known exactly; the server aggregates their
//! updates with FedAvg, FedVARP, ClusterFedVARP or a MIFA-style baseline.
//! Every random draw is keyed by `(seed, client, round, step)`, so runs are
//! reproducible bit for bit regardless of execution order.

pub mod aggregators;
pub mod cli;
pub mod error;
pub mod harness;
pub mod localsgd;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod sampling;
pub mod vector;

pub use aggregators::{
    cluster_miss_probability, clusterfedvarp_step, fedavg_step, fedvarp_step, mifa_step,
    ClusterAssignment, RoundUpdates, ServerAggregatorState, ServerMemory,
};
pub use error::{Result, SimError};
pub use localsgd::{local_sgd, LocalRunConfig};
pub use objectives::{
    generate_federation, global_grad_and_loss, stochastic_gradient, AnalyticConstants, Federation,
    FederationSpec, QuadraticClient,
};
pub use params::{
    effective_server_lr, lr_precondition_report, Algorithm, HyperParams, PreconditionReport,
    RunRecord,
};
pub use sampling::{enumerate_subsets, sample_round, without_replacement_variance, RoundPlan};
pub use vector::{vec_axpy, ModelVector};
