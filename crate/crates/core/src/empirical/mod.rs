//! Finite-size simulation: teacher and data generation, regularized ERM
//! fits with hard or soft transfer, and Monte Carlo trial aggregation.

pub mod data;
pub mod fit;
pub mod rng;
pub mod trial;

pub use data::{gen_dataset, gen_teachers, sample_count, Dataset, TeacherPair};
pub use fit::{erm_objective, fit_erm, fit_erm_with, FitOptions, FitOutcome, Frozen, Penalty};
pub use rng::{StageRng, Stream};
pub use trial::{
    overlaps, run_group_trials, run_source, run_transfer_trial, run_trial_group, run_trials, sample_penalty,
    source_stage, target_stage, trial_seed, write_records_csv, SourceStage, Stat, TrialRecord, TrialSummary,
    CSV_HEADER, LAMBDA_FLOOR,
};
