pub mod closed_form;
pub mod displacement;
pub mod eta_gamma;
pub mod online;
pub mod reference;
pub mod theory;

pub use closed_form::run_closed_form;
pub use displacement::run_displacement_demo;
pub use eta_gamma::run_eta_gamma;
pub use online::run_online;
pub use reference::run_reference_impact;
pub use theory::run_theory_suite;
