//! Synthetic survey experiments on chat-completion language models.
//!
//! The library turns a sample of survey respondents into persona prompts,
//! queries a chat-completions endpoint (or a deterministic mock), and
//! analyses the resulting response distributions: treatment effects, exact
//! grouped Shapley decompositions, marginal sensitivity scans, temperature
//! calibration against a human benchmark, and weighted demographic
//! regressions with robust standard errors.

pub mod dataio;
pub mod domain;
pub mod effects;
pub mod gateway;
pub mod prompting;
pub mod stats;
pub mod workflows;

pub use domain::{
    AnswerScale, ComponentId, DemographicProfile, GroupingScheme, Persona, ResponseRecord,
    Scenario, SurveyQuestion, SurveySample, TreatmentVector,
};
