//! Convergence experiments, two-scale diagnostics, lemma checks and reporting.

pub mod checks;
pub mod config;
pub mod diagnostics;
pub mod study;

pub use config::{MeshBlock, PhysicsBlock, RunConfig};
pub use diagnostics::{
    lemma_checks, max_growth, two_scale_pairing, two_scale_pairing_extended, weak_error, LemmaRow, LemmaTable,
    PairingSeries, WeakError,
};
pub use study::{
    compute_tensor, coupled_noise, hom_params, micro_params,
    run_convergence_study, study_verdicts, weak_decrease_margin, write_report, ConvergenceReport, EpsilonRow,
    HomSummary, StageError, TensorSummary, Verdict,
};
