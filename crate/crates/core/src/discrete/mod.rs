//! Finite prompt/response spaces where every population quantity can be enumerated.

pub mod displacement;
pub mod dynamics;
pub mod instance;

pub use displacement::{displacement_demo, DisplacementReport, DisplacementRow};
pub use dynamics::{
    empirical_counts_step, empirical_gradient, empirical_loss, empirical_one_step, induced_probabilities,
    logits_of, max_abs_diff, minimizer_family_check, ordered_population_gradient, population_loss,
    population_one_step, predicted_population_step, sample_discrete_dataset, symmetric_gradient_check,
    unordered_population_gradient, winning_probabilities, DirectLogitPolicy, DiscreteTuple,
    FeaturizedLogitPolicy, MinimizerFamilyReport, Table, WinningProbabilities,
};
pub use instance::{DiscreteInstance, DiscretePrompt, RandomInstanceOptions};
