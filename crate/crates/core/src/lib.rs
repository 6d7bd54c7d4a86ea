//! Stochastic fictitious play in supermodular games, with the
//! stochastic-approximation machinery around it: Robbins-Monro processes,
//! perturbed best-response dynamics, asymptotic-pseudo-trajectory metrics and
//! linear stability of perturbed equilibria.

pub mod analysis;
pub mod error;
pub mod flow;
pub mod games;
pub mod response;
pub mod stochastic;

pub use error::{Error, Result};
pub use flow::{
    check_cooperative_irreducible, check_strong_monotonicity, classify_stability, enumerate_pne,
    find_pne, flow, EquilibriumReport, FlowOptions, PneCatalog, StabilityLabel, VectorField,
};
pub use games::{t_inverse, t_leq, t_operator, Game, MixedProfile, TImage};
pub use response::{logit, BestResponseField, ChoiceRegistry, ChoiceSpec};
pub use stochastic::{NoiseRecord, OmegaRate, StepSchedule, Trajectory};

