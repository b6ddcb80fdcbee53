//! Core library for forecasting medication non-adherence and allocating
//! capacity-limited adherence interventions.
//!
//! The pipeline has five stages, each in its own module:
//!
//! 1. [`cohort`] — patient data model, PDC adherence labels from pharmacy
//!    claims, and a calibrated synthetic cohort generator.
//! 2. [`forecast`] — penalized logistic regression with per-patient random
//!    intercepts, recursive coefficient/precision updates, multi-year
//!    non-adherence forecasts, and forecast evaluation (AUC, confusion, VIF).
//! 3. [`reward`] — converts non-adherence forecasts into expected
//!    CVD-risk-reduction rewards through a Poisson-binomial count
//!    distribution.
//! 4. [`allocation`] — capacity-constrained patient selection: a marginal
//!    ranking policy plus an exhaustive exact solver used to certify it.
//! 5. [`rules`] / [`sim`] — the patient-intervention decision rules and the
//!    Monte-Carlo cohort simulation that compares them.

pub mod allocation;
pub mod cohort;
pub mod error;
pub mod forecast;
pub mod reward;
pub mod rng;
pub mod rules;
pub mod sim;

pub use allocation::{exact_allocate, greedy_allocate, validate_plan, AllocationInstance, SelectionPlan};
pub use cohort::{
    BiometricKind, BiometricRecord, ClaimRecord, Cohort, DemographicProfile, GeneratorConfig,
    Patient, QuarterlyRecord, Race, Sex,
};
pub use error::{Error, Result};
pub use forecast::{
    CoefficientState, CovariateLayout, Eq3Sign, FeatureVector, FitResult, ForecastHorizon,
    ForecastMetrics,
};
pub use reward::{CountDistribution, InterventionParams, NonAdherenceProfile, RewardMatrix};
pub use rules::{EpochDecision, RuleKind};
pub use sim::{InterventionCatalogEntry, ReplicationResult, SimulationConfig, SimulationSummary};
