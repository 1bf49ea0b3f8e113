//! Tabular reinforcement learning with dynamic (recursive) coherent risk:
//! expectile and CVaR functionals, exact dynamic-programming oracles,
//! softmax policy iteration, model-free critics, and training agents.

pub mod agents;
pub mod critic;
pub mod error;
pub mod exact;
pub mod harness;
pub mod mdp;
pub mod policy;
pub mod risk;
pub mod table;

pub use error::{Error, Result};
pub use mdp::{EnvKind, GridWorld, TabularMdp, Transition};
pub use policy::SoftmaxPolicyTable;
pub use risk::{DiscreteDistribution, RiskKind, RiskSpec};
pub use table::Table;
