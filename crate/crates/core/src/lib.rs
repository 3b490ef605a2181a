//! Bounded beta-copula time-series model for hourly global horizontal
//! irradiation: seasonal bounds, beta marginals, Markov-tree copulas,
//! scenario generation and scoring.

pub mod artifact;
pub mod bounds;
pub mod calendar;
pub mod copula;
pub mod daily;
pub mod dependence;
pub mod error;
pub mod marginals;
pub mod optim;
pub mod pipeline;
pub mod scenario;
pub mod scoring;
pub mod seasonal;
pub mod special;
pub mod stats;
pub mod synthetic;

pub use artifact::Artifact;
pub use bounds::{BoundsConfig, BoundsModel, Daylight};
pub use calendar::{Grid, HourlyPanel, Site, DAYS, HOURS};
pub use copula::{Copula, Family};
pub use daily::{DailyModel, Regime};
pub use error::{Error, ErrorClass, Result};
pub use marginals::MarginalModel;
pub use pipeline::{fit_all, FitConfig, FittedModel};
pub use scenario::{ModelBundle, ScenarioSet, ScenarioSource, Simulator, Variant};
pub use scoring::{evaluate, EvalConfig, Rule, ScoreReport};
