//! Config-driven commands composing the pipeline into complete experiments:
//! calibration, horizon profiles, decompositions, sensitivity scans,
//! demographic regressions, knowledge probes, and synthetic data generation.

use crate::dataio::{
    build_scenario_with_baseline, load_answer_scale, load_component_series,
    load_demographic_map, load_group_estimates, load_microdata, synth_microdata, ComponentSeries,
    ComponentSeriesSet, DataError, Marginals, Microdata, DEFAULT_BASELINE_END,
};
use crate::domain::{
    default_answer_scale, AnswerScale, ComponentId, DomainError, Scenario, SurveyQuestion,
    SurveySample, TreatmentVector, YearMonth,
};
use crate::effects::{
    naive_effect, scan_summary, sensitivity_scan, shapley_decompose, EffectsError, ScanResult,
    ScanSummary, ScanTarget, ShapleyMode, ShapleyReport,
};
use crate::gateway::{
    cache_key, mock_respondent, run_sample, CachedBackend, GatewayError, HttpBackend,
    MockBackend, MockCoefficients, ModelConfig, ResponseCache, ResponseFunction, RunOptions,
    RunOutcome, SurveyBackend, BASKET_SHARES, DEFAULT_TEMPERATURE_CAP,
};
use crate::stats::{
    coef_similarity, cross_horizon_matrix, demographic_regression, hypothesis_report,
    linear_contribution, loss_from_moment_diffs, ons_reference_diffs, pearson,
    responsiveness_regression, weighted_summary, CoefficientVerdict, HypothesisSpec,
    RegressionResult, RobustSe, StatsError,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ENDPOINT_ENV: &str = "SYNTHSURV_ENDPOINT";
pub const API_KEY_ENV: &str = "SYNTHSURV_API_KEY";

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

fn default_label() -> String {
    "experiment".into()
}
fn default_horizons() -> Vec<u8> {
    vec![0, 1, 2, 5]
}
fn default_temperatures() -> Vec<f64> {
    vec![0.0]
}
fn default_seed() -> u64 {
    42
}
fn default_grouping() -> String {
    "food_rest".into()
}
fn default_mode() -> String {
    "aggregate".into()
}
fn default_baseline() -> String {
    "zero".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub allow_high_temperature: bool,
}

fn default_model_id() -> String {
    "mock".into()
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    8
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_backoff_ms() -> u64 {
    250
}

impl Default for ModelSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults are total")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockSection {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default = "default_shares")]
    pub shares: [f64; 4],
    /// (category, class key, offset) triples.
    #[serde(default)]
    pub demo_offsets: Vec<(String, String, f64)>,
    /// (component, component, share) triples by component name.
    #[serde(default)]
    pub interactions: Vec<(String, String, f64)>,
}

fn default_shares() -> [f64; 4] {
    BASKET_SHARES
}

impl Default for MockSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults are total")
    }
}

impl MockSection {
    pub fn coefficients(&self) -> Result<MockCoefficients, WorkflowError> {
        let mut interactions = Vec::new();
        for (a, b, s) in &self.interactions {
            let pa = ComponentId::from_name(a)
                .map_err(|_| WorkflowError::Config(format!("unknown component {a:?}")))?;
            let pb = ComponentId::from_name(b)
                .map_err(|_| WorkflowError::Config(format!("unknown component {b:?}")))?;
            interactions.push((pa, pb, *s));
        }
        Ok(MockCoefficients {
            intercept: self.intercept,
            shares: self.shares,
            demo_offsets: self.demo_offsets.clone(),
            interactions,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSection {
    #[serde(default = "default_food_grid")]
    pub food_rest_grid: Vec<f64>,
    #[serde(default = "default_energy_grid")]
    pub energy_grid: Vec<f64>,
    #[serde(default = "default_other_grid")]
    pub other_grid: Vec<f64>,
    /// x ranges used for the slope fits.
    #[serde(default = "default_food_range")]
    pub food_rest_range: (f64, f64),
    #[serde(default = "default_energy_range")]
    pub energy_range: (f64, f64),
    #[serde(default = "default_other_range")]
    pub other_range: (f64, f64),
}

fn grid(stop: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut x = 0.0;
    while x <= stop + 1e-9 {
        out.push(x);
        x += step;
    }
    out
}

fn default_food_grid() -> Vec<f64> {
    grid(30.0, 2.0)
}
fn default_energy_grid() -> Vec<f64> {
    grid(100.0, 10.0)
}
fn default_other_grid() -> Vec<f64> {
    grid(15.0, 1.0)
}
fn default_food_range() -> (f64, f64) {
    (0.0, 20.0)
}
fn default_energy_range() -> (f64, f64) {
    (0.0, 100.0)
}
fn default_other_range() -> (f64, f64) {
    (0.0, 15.0)
}

impl Default for ScanSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults are total")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProbeSection {
    pub prompts_file: Option<PathBuf>,
    #[serde(default)]
    pub trend_model_ids: Vec<String>,
    #[serde(default = "default_trend_subsample")]
    pub trend_subsample: usize,
    #[serde(default = "default_trend_permutations")]
    pub trend_permutations: u64,
}

fn default_trend_subsample() -> usize {
    200
}
fn default_trend_permutations() -> u64 {
    9
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegressSection {
    pub group_estimates: Option<PathBuf>,
    pub ons_map: Option<PathBuf>,
    pub responsiveness: Option<PathBuf>,
    #[serde(default = "default_resp_range")]
    pub responsiveness_range: (String, String),
}

fn default_resp_range() -> (String, String) {
    ("2011Q2".into(), "2021Q2".into())
}

/// One experiment's full configuration, loaded from a TOML file. Relative
/// paths are resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_label")]
    pub label: String,
    pub sample_file: PathBuf,
    pub demographic_map: PathBuf,
    pub answer_scale: Option<PathBuf>,
    pub component_series: PathBuf,
    /// Survey month "YYYY-MM"; the treatment uses the three preceding
    /// months.
    pub survey_month: String,
    #[serde(default)]
    pub baseline_end: Option<String>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<u8>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    /// "food_rest" or "singletons".
    #[serde(default = "default_grouping")]
    pub grouping: String,
    /// "aggregate" or "per_persona".
    #[serde(default = "default_mode")]
    pub shapley_mode: String,
    /// "zero" or "historical".
    #[serde(default = "default_baseline")]
    pub decompose_baseline: String,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub mock: MockSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub regress: RegressSection,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkflowError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| WorkflowError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.sample_file);
        fix(&mut self.demographic_map);
        fix(&mut self.component_series);
        if let Some(p) = &mut self.answer_scale {
            fix(p);
        }
        for p in [
            &mut self.probe.prompts_file,
            &mut self.regress.group_estimates,
            &mut self.regress.ons_map,
            &mut self.regress.responsiveness,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        for path in [&self.sample_file, &self.demographic_map, &self.component_series] {
            if !path.exists() {
                return Err(WorkflowError::Config(format!("missing file {}", path.display())));
            }
        }
        if YearMonth::parse(&self.survey_month).is_none() {
            return Err(WorkflowError::Config(format!(
                "bad survey_month {:?}, expected YYYY-MM",
                self.survey_month
            )));
        }
        for &t in &self.temperatures {
            if t < 0.0 || (!self.model.allow_high_temperature && t > DEFAULT_TEMPERATURE_CAP) {
                return Err(WorkflowError::Config(format!("temperature {t} outside the cap")));
            }
        }
        match self.grouping.as_str() {
            "food_rest" | "singletons" => {}
            other => return Err(WorkflowError::Config(format!("unknown grouping {other:?}"))),
        }
        match self.shapley_mode.as_str() {
            "aggregate" | "per_persona" => {}
            other => return Err(WorkflowError::Config(format!("unknown shapley_mode {other:?}"))),
        }
        match self.decompose_baseline.as_str() {
            "zero" | "historical" => {}
            other => {
                return Err(WorkflowError::Config(format!("unknown decompose_baseline {other:?}")))
            }
        }
        Ok(())
    }

    fn grouping_scheme(&self) -> crate::domain::GroupingScheme {
        match self.grouping.as_str() {
            "singletons" => crate::domain::GroupingScheme::singletons(&ComponentId::ALL),
            _ => crate::domain::GroupingScheme::food_rest_energy_other(),
        }
    }

    fn shapley_mode_enum(&self) -> ShapleyMode {
        match self.shapley_mode.as_str() {
            "per_persona" => ShapleyMode::PerPersona,
            _ => ShapleyMode::AggregateFirst,
        }
    }

    fn model_config(&self) -> ModelConfig {
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| self.model.endpoint.clone());
        let mut config = ModelConfig::new(self.model.model_id.clone(), endpoint);
        config.temperature = self.model.temperature;
        config.api_key = std::env::var(API_KEY_ENV).ok();
        config.max_retries = self.model.max_retries;
        config.max_concurrency = self.model.max_concurrency;
        config.timeout = std::time::Duration::from_millis(self.model.timeout_ms);
        config.backoff_base = std::time::Duration::from_millis(self.model.backoff_ms);
        config.allow_high_temperature = self.model.allow_high_temperature;
        config
    }
}

/// Execution environment shared by all commands.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    /// Offline: never open a network connection; use the mock backend plus
    /// the cache.
    pub offline: bool,
    pub cache_path: Option<PathBuf>,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Self {
        RunContext { config, out_dir: out_dir.into(), offline: true, cache_path: None }
    }
}

struct BackendStack {
    http: Option<HttpBackend>,
    mock: Option<MockBackend>,
    cache: Option<ResponseCache>,
}

impl BackendStack {
    fn build(ctx: &RunContext) -> Result<Self, WorkflowError> {
        let cache = match &ctx.cache_path {
            Some(path) => Some(ResponseCache::open(path)?),
            None => None,
        };
        if ctx.offline {
            Ok(BackendStack {
                http: None,
                mock: Some(MockBackend::new(ctx.config.mock.coefficients()?)),
                cache,
            })
        } else {
            Ok(BackendStack {
                http: Some(HttpBackend::new(ctx.config.model_config())?),
                mock: None,
                cache,
            })
        }
    }

    fn with<R>(&self, f: impl FnOnce(&dyn SurveyBackend) -> R) -> R {
        let inner: &dyn SurveyBackend = match (&self.http, &self.mock) {
            (Some(h), _) => h,
            (_, Some(m)) => m,
            _ => unreachable!("one backend always exists"),
        };
        match &self.cache {
            Some(cache) => f(&CachedBackend::new(inner, cache)),
            None => f(inner),
        }
    }
}

struct Workspace {
    microdata: Microdata,
    sample: SurveySample,
    scale: AnswerScale,
    series: ComponentSeriesSet,
    scenario: Scenario,
}

fn load_workspace(config: &ExperimentConfig) -> Result<Workspace, WorkflowError> {
    let map = load_demographic_map(&config.demographic_map)?;
    let scale = match &config.answer_scale {
        Some(path) => load_answer_scale(path)?,
        None => default_answer_scale(),
    };
    let microdata = load_microdata(&config.sample_file, &map, &scale)?;
    let mut sample = microdata.sample.clone();
    sample.label = config.label.clone();
    sample.master_seed = config.master_seed;

    let series = load_component_series(&config.component_series)?;
    let survey_month = YearMonth::parse(&config.survey_month)
        .ok_or_else(|| WorkflowError::Config("bad survey_month".into()))?;
    let baseline_end = match &config.baseline_end {
        Some(s) => YearMonth::parse(s)
            .ok_or_else(|| WorkflowError::Config(format!("bad baseline_end {s:?}")))?,
        None => DEFAULT_BASELINE_END,
    };
    let scenario =
        build_scenario_with_baseline(&series, survey_month, config.label.clone(), baseline_end)?;
    Ok(Workspace { microdata, sample, scale, series, scenario })
}

fn question_for(horizon: u8, scale: &AnswerScale) -> Result<SurveyQuestion, WorkflowError> {
    let mut q = SurveyQuestion::default_for_horizon(horizon)?;
    q.scale = scale.clone();
    Ok(q)
}

fn write_text(path: &Path, content: &str) -> Result<(), WorkflowError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub temperature: f64,
    pub n_miss: usize,
    pub mean: f64,
    pub diff_mean: f64,
    pub sd: f64,
    pub diff_sd: f64,
    pub l1: f64,
    pub l2: f64,
    pub pcc: f64,
    pub pval: f64,
}

/// Runs the perceptions question at every configured temperature and
/// compares each synthetic distribution against the human benchmark. Writes
/// `calibrate.csv`; a failure at one temperature does not stop the others.
pub fn cmd_calibrate(ctx: &RunContext) -> Result<Vec<CalibrationRow>, WorkflowError> {
    let ws = load_workspace(&ctx.config)?;
    let stack = BackendStack::build(ctx)?;
    let question = question_for(0, &ws.scale)?;
    let weights: Vec<f64> = ws.sample.personas.iter().map(|p| p.weight).collect();
    let benchmark = ws
        .microdata
        .responses
        .get(&0)
        .ok_or_else(|| WorkflowError::Config("sample lacks horizon-0 benchmark responses".into()))?;
    let bench_summary = weighted_summary(benchmark, &weights)?;

    let mut rows = Vec::new();
    for &t in &ctx.config.temperatures {
        let attempt = || -> Result<CalibrationRow, WorkflowError> {
            let outcome = stack.with(|backend| {
                run_sample(
                    &ws.sample,
                    Some(&ws.scenario),
                    &question,
                    &ctx.config.model.model_id,
                    t,
                    backend,
                    RunOptions {
                        max_concurrency: ctx.config.model.max_concurrency,
                        fail_fast: false,
                    },
                )
            })?;
            let values = outcome.values_for(&ws.sample);
            let summary = weighted_summary(&values, &weights)?;
            let (pcc, pval) = pearson(&values, benchmark).unwrap_or((f64::NAN, f64::NAN));
            let diff_mean = bench_summary.mean - summary.mean;
            let diff_sd = bench_summary.sd - summary.sd;
            Ok(CalibrationRow {
                temperature: t,
                n_miss: values.iter().filter(|v| v.is_none()).count(),
                mean: summary.mean,
                diff_mean,
                diff_sd,
                sd: summary.sd,
                l1: loss_from_moment_diffs(diff_mean, diff_sd, 1),
                l2: loss_from_moment_diffs(diff_mean, diff_sd, 2),
                pcc,
                pval,
            })
        };
        match attempt() {
            Ok(row) => rows.push(row),
            Err(e) => eprintln!("calibrate: temperature {t} failed: {e}"),
        }
    }

    let mut out = String::from("T,n_miss,MN,diff_MN,SD,diff_SD,L1-loss,L2-loss,pcc,pval\n");
    for r in &rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.temperature, r.n_miss, r.mean, r.diff_mean, r.sd, r.diff_sd, r.l1, r.l2, r.pcc,
            r.pval
        );
    }
    write_text(&ctx.out_dir.join("calibrate.csv"), &out)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Runs every configured horizon at the model temperature and dumps the raw
/// records, one file per horizon.
pub fn cmd_run(ctx: &RunContext) -> Result<BTreeMap<u8, RunOutcome>, WorkflowError> {
    let ws = load_workspace(&ctx.config)?;
    let stack = BackendStack::build(ctx)?;
    let mut outcomes = BTreeMap::new();
    std::fs::create_dir_all(&ctx.out_dir)?;
    for &h in &ctx.config.horizons {
        let question = question_for(h, &ws.scale)?;
        let outcome = stack.with(|backend| {
            run_sample(
                &ws.sample,
                Some(&ws.scenario),
                &question,
                &ctx.config.model.model_id,
                ctx.config.model.temperature,
                backend,
                RunOptions { max_concurrency: ctx.config.model.max_concurrency, fail_fast: false },
            )
        })?;
        let path = ctx.out_dir.join(format!("responses_h{h}.csv"));
        let mut writer = csv::Writer::from_path(&path).map_err(|e| {
            WorkflowError::Config(format!("cannot write {}: {e}", path.display()))
        })?;
        writer
            .write_record([
                "persona_id",
                "horizon",
                "value",
                "temperature",
                "permutation_seed",
                "timestamp",
                "raw_text",
            ])
            .and_then(|_| {
                for r in &outcome.records {
                    writer.write_record([
                        r.persona_id.as_str(),
                        &r.horizon_years.to_string(),
                        &fmt_opt(r.value),
                        &r.temperature.to_string(),
                        &r.option_permutation_seed.to_string(),
                        r.timestamp.as_str(),
                        r.raw_text.as_str(),
                    ])?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|e| WorkflowError::Config(format!("csv write failed: {e}")))?;
        outcomes.insert(h, outcome);
    }
    Ok(outcomes)
}

// ---------------------------------------------------------------------------
// profile
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileRow {
    pub horizon: u8,
    pub mean_conditioned: f64,
    pub sd_conditioned: f64,
    pub n_miss_conditioned: usize,
    pub mean_unconditioned: f64,
    pub sd_unconditioned: f64,
    pub n_miss_unconditioned: usize,
    /// Conditioned minus unconditioned aggregate mean.
    pub effect_mean: f64,
    pub benchmark_mean: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    pub horizons: Vec<u8>,
    pub matrix: Vec<Vec<Option<f64>>>,
}

/// Conditioned and unconditioned runs per horizon with treatment-effect
/// columns, the cross-horizon correlation matrix, and plot-ready series.
pub fn cmd_profile(ctx: &RunContext) -> Result<ProfileReport, WorkflowError> {
    let ws = load_workspace(&ctx.config)?;
    let stack = BackendStack::build(ctx)?;
    let weights: Vec<f64> = ws.sample.personas.iter().map(|p| p.weight).collect();

    let mut rows = Vec::new();
    let mut conditioned_values: Vec<(u8, Vec<Option<f64>>)> = Vec::new();
    for &h in &ctx.config.horizons {
        let question = question_for(h, &ws.scale)?;
        let run = |scenario: Option<&Scenario>| {
            stack.with(|backend| {
                run_sample(
                    &ws.sample,
                    scenario,
                    &question,
                    &ctx.config.model.model_id,
                    ctx.config.model.temperature,
                    backend,
                    RunOptions {
                        max_concurrency: ctx.config.model.max_concurrency,
                        fail_fast: false,
                    },
                )
            })
        };
        let attempt = || -> Result<(ProfileRow, Vec<Option<f64>>), WorkflowError> {
            let cond = run(Some(&ws.scenario))?.values_for(&ws.sample);
            let uncond = run(None)?.values_for(&ws.sample);
            let cond_summary = weighted_summary(&cond, &weights)?;
            let uncond_summary = weighted_summary(&uncond, &weights)?;
            let benchmark_mean = ws
                .microdata
                .responses
                .get(&h)
                .and_then(|r| weighted_summary(r, &weights).ok())
                .map(|s| s.mean);
            Ok((
                ProfileRow {
                    horizon: h,
                    mean_conditioned: cond_summary.mean,
                    sd_conditioned: cond_summary.sd,
                    n_miss_conditioned: cond_summary.n_miss,
                    mean_unconditioned: uncond_summary.mean,
                    sd_unconditioned: uncond_summary.sd,
                    n_miss_unconditioned: uncond_summary.n_miss,
                    effect_mean: cond_summary.mean - uncond_summary.mean,
                    benchmark_mean,
                },
                cond,
            ))
        };
        match attempt() {
            Ok((row, cond)) => {
                rows.push(row);
                conditioned_values.push((h, cond));
            }
            Err(e) => eprintln!("profile: horizon {h} failed: {e}"),
        }
    }

    let (horizons, matrix) = if conditioned_values.len() >= 2 {
        cross_horizon_matrix(&conditioned_values)?
    } else {
        (conditioned_values.iter().map(|(h, _)| *h).collect(), Vec::new())
    };

    let mut out = String::from(
        "horizon,MN_cond,SD_cond,n_miss_cond,MN_uncond,SD_uncond,n_miss_uncond,effect_MN,bench_MN\n",
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.horizon,
            r.mean_conditioned,
            r.sd_conditioned,
            r.n_miss_conditioned,
            r.mean_unconditioned,
            r.sd_unconditioned,
            r.n_miss_unconditioned,
            r.effect_mean,
            fmt_opt(r.benchmark_mean)
        );
    }
    write_text(&ctx.out_dir.join("profile.csv"), &out)?;

    let mut mout = String::from("horizon");
    for h in &horizons {
        let _ = write!(mout, ",h{h}");
    }
    mout.push('\n');
    for (i, h) in horizons.iter().enumerate() {
        let _ = write!(mout, "{h}");
        for j in 0..horizons.len() {
            let cell = matrix.get(i).and_then(|row| row.get(j).copied()).flatten();
            let _ = write!(mout, ",{}", fmt_opt(cell));
        }
        mout.push('\n');
    }
    write_text(&ctx.out_dir.join("profile_matrix.csv"), &mout)?;

    // plot series: per-horizon means plus the historical swath and out-turn
    // from the headline series when available
    let headline = ws.series.get("headline").ok();
    let (band_lo, band_hi) = headline
        .map(|s| historical_band(s, DEFAULT_BASELINE_END))
        .unwrap_or((None, None));
    let outturn = headline.and_then(|s| s.get(ws.scenario.reference_period));
    let mut sout =
        String::from("horizon,gpt_conditioned,gpt_unconditioned,benchmark,hist_lo,hist_hi,outturn\n");
    for r in &rows {
        let _ = writeln!(
            sout,
            "{},{},{},{},{},{},{}",
            r.horizon,
            r.mean_conditioned,
            r.mean_unconditioned,
            fmt_opt(r.benchmark_mean),
            fmt_opt(band_lo),
            fmt_opt(band_hi),
            fmt_opt(outturn)
        );
    }
    write_text(&ctx.out_dir.join("profile_series.csv"), &sout)?;

    Ok(ProfileReport { rows, horizons, matrix })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn historical_band(series: &ComponentSeries, end: YearMonth) -> (Option<f64>, Option<f64>) {
    let mut values: Vec<f64> = series
        .observations()
        .filter(|(m, _)| *m <= end)
        .map(|(_, v)| v)
        .collect();
    if values.is_empty() {
        return (None, None);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (Some(percentile(&values, 0.05)), Some(percentile(&values, 0.95)))
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub shapley: ShapleyReport,
    pub naive: Vec<(String, f64)>,
    /// Benchmark contributions from the linear responsiveness model, when a
    /// quarterly series file is configured.
    pub linear_benchmark: Option<Vec<(String, f64)>>,
}

fn player_scenario_input(
    player: &str,
    grouping: &crate::domain::GroupingScheme,
    treatment: &TreatmentVector,
) -> f64 {
    let members = grouping
        .players()
        .iter()
        .find(|(n, _)| n == player)
        .map(|(_, m)| m.clone())
        .unwrap_or_default();
    let mut num = 0.0;
    let mut den = 0.0;
    for id in members {
        let idx = ComponentId::ALL.iter().position(|c| *c == id).unwrap();
        num += BASKET_SHARES[idx] * treatment.component(id).value;
        den += BASKET_SHARES[idx];
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Naive and Shapley decompositions of the scenario effect, plus the linear
/// benchmark bars where configured. Writes `decompose.csv`.
pub fn cmd_decompose(ctx: &RunContext) -> Result<DecomposeReport, WorkflowError> {
    let ws = load_workspace(&ctx.config)?;
    let stack = BackendStack::build(ctx)?;
    let question = question_for(0, &ws.scale)?;
    let grouping = ctx.config.grouping_scheme();
    let baseline = match ctx.config.decompose_baseline.as_str() {
        "historical" => ws.scenario.baseline,
        _ => TreatmentVector::zeros(),
    };

    let report = stack.with(|backend| -> Result<DecomposeReport, WorkflowError> {
        let f = ResponseFunction::new(
            backend,
            &question,
            &ctx.config.model.model_id,
            ctx.config.model.temperature,
            ctx.config.master_seed,
        );
        let shapley = shapley_decompose(
            &f,
            &ws.sample,
            &ws.scenario.treatment,
            &baseline,
            &grouping,
            ctx.config.shapley_mode_enum(),
        )?;
        let mut naive = Vec::new();
        for (name, _) in shapley.attributions.iter() {
            naive.push((
                name.clone(),
                naive_effect(&f, &ws.sample, &ws.scenario.treatment, &baseline, &grouping, name)?,
            ));
        }
        Ok(DecomposeReport { shapley, naive, linear_benchmark: None })
    })?;

    let linear_benchmark = match &ctx.config.regress.responsiveness {
        Some(path) => {
            let (bench, food_rest, energy, other) = load_quarterly(path)?;
            let range = (
                ctx.config.regress.responsiveness_range.0.as_str(),
                ctx.config.regress.responsiveness_range.1.as_str(),
            );
            let fit = responsiveness_regression(
                &bench,
                &food_rest,
                &energy,
                &other,
                range,
                RobustSe::Hc1,
            )?;
            let mut bars = Vec::new();
            for (name, _) in &report.shapley.attributions {
                if let Some(coef) = fit.coefficient(name) {
                    let input = player_scenario_input(name, &grouping, &ws.scenario.treatment);
                    bars.push((name.clone(), linear_contribution(coef, input)));
                }
            }
            Some(bars)
        }
        None => None,
    };
    let report = DecomposeReport { linear_benchmark, ..report };

    let mut out = String::from("player,naive,shapley,linear_benchmark\n");
    for ((name, tau), (_, naive)) in report.shapley.attributions.iter().zip(&report.naive) {
        let bench = report
            .linear_benchmark
            .as_ref()
            .and_then(|bars| bars.iter().find(|(n, _)| n == name).map(|(_, v)| *v));
        let _ = writeln!(out, "{name},{naive},{tau},{}", fmt_opt(bench));
    }
    let _ = writeln!(out, "(baseline),,{},", report.shapley.baseline);
    let _ = writeln!(out, "(total),,{},", report.shapley.total);
    write_text(&ctx.out_dir.join("decompose.csv"), &out)?;
    Ok(report)
}

type QuarterlySeries = (
    Vec<(String, f64)>,
    Vec<(String, f64)>,
    Vec<(String, f64)>,
    Vec<(String, f64)>,
);

fn load_quarterly(path: &Path) -> Result<QuarterlySeries, WorkflowError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| WorkflowError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut bench = Vec::new();
    let mut food_rest = Vec::new();
    let mut energy = Vec::new();
    let mut other = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| WorkflowError::Config(e.to_string()))?;
        let q = record[0].to_string();
        let parse = |i: usize| -> Result<f64, WorkflowError> {
            record[i]
                .parse()
                .map_err(|_| WorkflowError::Config(format!("bad number in {}", path.display())))
        };
        bench.push((q.clone(), parse(1)?));
        food_rest.push((q.clone(), parse(2)?));
        energy.push((q.clone(), parse(3)?));
        other.push((q, parse(4)?));
    }
    Ok((bench, food_rest, energy, other))
}

// ---------------------------------------------------------------------------
// scan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub target: String,
    pub result: ScanResult,
    pub summary: Option<ScanSummary>,
    /// Historical 5th and 95th percentiles of the scanned component.
    pub band: (Option<f64>, Option<f64>),
}

/// Marginal sensitivity curves for food+restaurants, energy, and other,
/// with slope/weight/ratio summaries and historical bands. Writes
/// `scan_points.csv` and `scan_summary.csv`.
pub fn cmd_scan(ctx: &RunContext) -> Result<Vec<ScanReport>, WorkflowError> {
    let ws = load_workspace(&ctx.config)?;
    let stack = BackendStack::build(ctx)?;
    let question = question_for(0, &ws.scale)?;
    let treatment = &ws.scenario.treatment;
    let food = treatment.component(ComponentId::Food).value;
    let rest = treatment.component(ComponentId::Restaurants).value;
    let ratio = if food != 0.0 { rest / food } else { 0.0 };

    let scan = &ctx.config.scan;
    type TargetSpec<'a> = (&'a str, ScanTarget, &'a Vec<f64>, (f64, f64));
    let targets: Vec<TargetSpec> = vec![
        (
            "food_rest",
            ScanTarget::FoodWithRestaurants { ratio },
            &scan.food_rest_grid,
            scan.food_rest_range,
        ),
        ("energy", ScanTarget::Single(ComponentId::Energy), &scan.energy_grid, scan.energy_range),
        ("other", ScanTarget::Single(ComponentId::Other), &scan.other_grid, scan.other_range),
    ];

    let reports = stack.with(|backend| -> Result<Vec<ScanReport>, WorkflowError> {
        let f = ResponseFunction::new(
            backend,
            &question,
            &ctx.config.model.model_id,
            ctx.config.model.temperature,
            ctx.config.master_seed,
        );
        let mut reports = Vec::new();
        for (name, target, grid, range) in &targets {
            let result = sensitivity_scan(&f, &ws.sample, treatment, *target, grid)?;
            let summary = scan_summary(&result, *target, *range);
            let band = scan_band(&ws.series, *target);
            reports.push(ScanReport { target: name.to_string(), result, summary, band });
        }
        Ok(reports)
    })?;

    let mut points = String::from("target,x,aggregate,delta\n");
    for r in &reports {
        for p in &r.result.points {
            let _ = writeln!(points, "{},{},{},{}", r.target, p.x, p.aggregate, p.aggregate - r.result.offset);
        }
    }
    write_text(&ctx.out_dir.join("scan_points.csv"), &points)?;

    let mut summary = String::from("target,slope,weight,ratio,offset,band_lo,band_hi\n");
    for r in &reports {
        let (slope, weight, ratio) = r
            .summary
            .map(|s| (Some(s.slope), Some(s.weight), Some(s.ratio)))
            .unwrap_or((None, None, None));
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            r.target,
            fmt_opt(slope),
            fmt_opt(weight),
            fmt_opt(ratio),
            r.result.offset,
            fmt_opt(r.band.0),
            fmt_opt(r.band.1)
        );
    }
    write_text(&ctx.out_dir.join("scan_summary.csv"), &summary)?;
    Ok(reports)
}

fn scan_band(series: &ComponentSeriesSet, target: ScanTarget) -> (Option<f64>, Option<f64>) {
    match target {
        ScanTarget::Single(id) => series
            .get(id.name())
            .map(|s| historical_band(s, DEFAULT_BASELINE_END))
            .unwrap_or((None, None)),
        ScanTarget::FoodWithRestaurants { .. } => {
            let (Ok(food), Ok(rest)) = (series.get("food"), series.get("restaurants")) else {
                return (None, None);
            };
            let rest_map: BTreeMap<YearMonth, f64> = rest.observations().collect();
            let (wf, wr) = (BASKET_SHARES[0], BASKET_SHARES[1]);
            let mut values: Vec<f64> = food
                .observations()
                .filter(|(m, _)| *m <= DEFAULT_BASELINE_END)
                .filter_map(|(m, f)| rest_map.get(&m).map(|r| (wf * f + wr * r) / (wf + wr)))
                .collect();
            if values.is_empty() {
                return (None, None);
            }
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (Some(percentile(&values, 0.05)), Some(percentile(&values, 0.95)))
        }
    }
}

// ---------------------------------------------------------------------------
// regress
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressReport {
    pub benchmark: RegressionResult,
    pub synthetic: Vec<(f64, RegressionResult)>,
    pub ons_diffs: Option<Vec<(String, f64)>>,
    pub verdicts: Vec<CoefficientVerdict>,
    /// (category, pearson, cosine) between benchmark and the first
    /// synthetic fit.
    pub similarity: Vec<(String, f64, f64)>,
}

fn category_slopes(result: &RegressionResult, category: &str) -> Vec<(String, f64)> {
    result
        .named_slopes()
        .into_iter()
        .filter(|(n, _)| n.starts_with(&format!("{category} (")))
        .collect()
}

/// Demographic WLS for the human benchmark and each synthetic temperature,
/// side by side with reference diffs, hypothesis verdicts, and per-category
/// similarity. Writes `regress.csv`, `hypotheses.csv`, `similarity.csv`,
/// and `regress_bars.csv`.
pub fn cmd_regress(ctx: &RunContext) -> Result<RegressReport, WorkflowError> {
    let ws = load_workspace(&ctx.config)?;
    let stack = BackendStack::build(ctx)?;
    let question = question_for(0, &ws.scale)?;
    let spec = HypothesisSpec::default_demographics();

    let benchmark_y = ws
        .microdata
        .responses
        .get(&0)
        .ok_or_else(|| WorkflowError::Config("sample lacks horizon-0 benchmark responses".into()))?;
    let benchmark = demographic_regression(&ws.sample, benchmark_y, &spec, RobustSe::Hc1)?;
    let verdicts = hypothesis_report(&benchmark, &spec);

    let mut synthetic = Vec::new();
    for &t in &ctx.config.temperatures {
        let outcome = stack.with(|backend| {
            run_sample(
                &ws.sample,
                Some(&ws.scenario),
                &question,
                &ctx.config.model.model_id,
                t,
                backend,
                RunOptions { max_concurrency: ctx.config.model.max_concurrency, fail_fast: false },
            )
        })?;
        let values = outcome.values_for(&ws.sample);
        match demographic_regression(&ws.sample, &values, &spec, RobustSe::Hc1) {
            Ok(fit) => synthetic.push((t, fit)),
            Err(e) => eprintln!("regress: temperature {t} failed: {e}"),
        }
    }

    let ons_diffs = match (&ctx.config.regress.group_estimates, &ctx.config.regress.ons_map) {
        (Some(est), Some(map)) => {
            let table = load_group_estimates(est, map)?;
            for w in &table.warnings {
                eprintln!("regress: {w}");
            }
            Some(ons_reference_diffs(&table.categories, &spec)?)
        }
        _ => None,
    };

    let mut similarity = Vec::new();
    if let Some((_, first)) = synthetic.first() {
        for cat in &spec.categories {
            let a = category_slopes(&benchmark, &cat.category);
            let b = category_slopes(first, &cat.category);
            if let Ok((r, cos)) = coef_similarity(&a, &b) {
                similarity.push((cat.category.clone(), r, cos));
            }
        }
        if let Ok((r, cos)) = coef_similarity(&benchmark.named_slopes(), &first.named_slopes()) {
            similarity.push(("all".into(), r, cos));
        }
    }

    // main table
    let mut out = String::from("name,bench_coef,bench_se,bench_stars");
    for (t, _) in &synthetic {
        let _ = write!(out, ",coef_T{t},se_T{t},stars_T{t}");
    }
    out.push_str(",ons_diff\n");
    for (i, name) in benchmark.names.iter().enumerate() {
        let _ = write!(
            out,
            "{name},{},{},{}",
            benchmark.coefficients[i], benchmark.robust_se[i], benchmark.stars[i]
        );
        for (_, fit) in &synthetic {
            match fit.names.iter().position(|n| n == name) {
                Some(j) => {
                    let _ = write!(out, ",{},{},{}", fit.coefficients[j], fit.robust_se[j], fit.stars[j]);
                }
                None => out.push_str(",,,"),
            }
        }
        let diff = ons_diffs
            .as_ref()
            .and_then(|d| d.iter().find(|(n, _)| n == name).map(|(_, v)| *v));
        let _ = writeln!(out, ",{}", fmt_opt(diff));
    }
    let _ = writeln!(out, "(r2_adj),{},,", benchmark.r2_adj);
    let _ = writeln!(out, "(n_obs),{},,", benchmark.n_obs);
    write_text(&ctx.out_dir.join("regress.csv"), &out)?;

    let mut hyp = String::from("name,coefficient,expected,verdict,one_sided_p,significant\n");
    for v in &verdicts {
        let _ = writeln!(
            hyp,
            "{},{},{:?},{:?},{},{}",
            v.name, v.coefficient, v.expected, v.verdict, v.one_sided_p, v.significant
        );
    }
    write_text(&ctx.out_dir.join("hypotheses.csv"), &hyp)?;

    let mut sim = String::from("category,pearson,cosine\n");
    for (cat, r, cos) in &similarity {
        let _ = writeln!(sim, "{cat},{r},{cos}");
    }
    write_text(&ctx.out_dir.join("similarity.csv"), &sim)?;

    // grouped-bar data with 95% intervals
    let mut bars = String::from("set,name,estimate,ci_lo,ci_hi\n");
    let emit = |set: &str, fit: &RegressionResult, out: &mut String| {
        for (i, name) in fit.names.iter().enumerate() {
            if name == "(intercept)" {
                continue;
            }
            let half = 1.96 * fit.robust_se[i];
            let _ = writeln!(
                out,
                "{set},{name},{},{},{}",
                fit.coefficients[i],
                fit.coefficients[i] - half,
                fit.coefficients[i] + half
            );
        }
    };
    emit("benchmark", &benchmark, &mut bars);
    for (t, fit) in &synthetic {
        emit(&format!("T={t}"), fit, &mut bars);
    }
    write_text(&ctx.out_dir.join("regress_bars.csv"), &bars)?;

    Ok(RegressReport { benchmark, synthetic, ons_diffs, verdicts, similarity })
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub prompt: String,
    pub reply: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendPoint {
    pub model_id: String,
    pub mean_perception: f64,
    pub n_miss: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub entries: Vec<ProbeEntry>,
    pub trend: Vec<TrendPoint>,
}

fn mock_probe_reply(prompt: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    format!("mock probe reply {:x}", hasher.finalize())
}

/// Sends each knowledge probe in a fresh conversation and records the
/// replies; optionally runs the unconditioned trend experiment across a
/// list of model ids, pooling the answer permutations. Writes
/// `probe_transcript.txt` and `trend.csv`.
pub fn cmd_probe(ctx: &RunContext) -> Result<ProbeReport, WorkflowError> {
    let prompts: Vec<String> = match &ctx.config.probe.prompts_file {
        Some(path) => std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    };

    let cache = match &ctx.cache_path {
        Some(path) => Some(ResponseCache::open(path)?),
        None => None,
    };
    let http = if ctx.offline { None } else { Some(HttpBackend::new(ctx.config.model_config())?) };

    let mut entries = Vec::new();
    for prompt in &prompts {
        let key = cache_key(
            &ctx.config.model.model_id,
            ctx.config.model.temperature,
            "",
            prompt,
            0,
        );
        let cached = cache.as_ref().and_then(|c| c.lookup(&key));
        let (reply, timestamp) = match cached {
            Some((reply, timestamp)) => (reply, timestamp),
            None => {
                let (reply, timestamp) = match &http {
                    Some(backend) => {
                        let exchange = backend.complete("", prompt)?;
                        (exchange.reply_text, chrono::Utc::now().to_rfc3339())
                    }
                    None => (mock_probe_reply(prompt), "1970-01-01T00:00:00+00:00".into()),
                };
                if let Some(c) = &cache {
                    c.store_raw(
                        &key,
                        &ctx.config.model.model_id,
                        ctx.config.model.temperature,
                        "",
                        prompt,
                        0,
                        &reply,
                        &timestamp,
                    )?;
                }
                (reply, timestamp)
            }
        };
        entries.push(ProbeEntry { prompt: prompt.clone(), reply, timestamp });
    }

    let mut transcript = String::new();
    for e in &entries {
        let _ = writeln!(transcript, "[{}]\nPrompt: {}\nReply: {}\n", e.timestamp, e.prompt, e.reply);
    }
    write_text(&ctx.out_dir.join("probe_transcript.txt"), &transcript)?;

    // unconditioned trend experiment across model ids
    let mut trend = Vec::new();
    if !ctx.config.probe.trend_model_ids.is_empty() {
        let ws = load_workspace(&ctx.config)?;
        let stack = BackendStack::build(ctx)?;
        let question = question_for(0, &ws.scale)?;
        let n = ctx.config.probe.trend_subsample.min(ws.sample.personas.len());
        let mut subsample = ws.sample.clone();
        subsample.personas.truncate(n);
        let weights: Vec<f64> = subsample.personas.iter().map(|p| p.weight).collect();
        for model_id in &ctx.config.probe.trend_model_ids {
            // pool values across answer permutations, then take the
            // weighted mean
            let mut pooled: Vec<Option<f64>> = Vec::new();
            let mut pooled_weights: Vec<f64> = Vec::new();
            for perm in 0..ctx.config.probe.trend_permutations {
                let mut permuted = subsample.clone();
                permuted.master_seed = ctx.config.master_seed.wrapping_add(perm);
                let outcome = stack.with(|backend| {
                    run_sample(
                        &permuted,
                        None,
                        &question,
                        model_id,
                        ctx.config.model.temperature,
                        backend,
                        RunOptions {
                            max_concurrency: ctx.config.model.max_concurrency,
                            fail_fast: false,
                        },
                    )
                })?;
                pooled.extend(outcome.values_for(&permuted));
                pooled_weights.extend(weights.iter().copied());
            }
            let summary = weighted_summary(&pooled, &pooled_weights)?;
            trend.push(TrendPoint {
                model_id: model_id.clone(),
                mean_perception: summary.mean,
                n_miss: summary.n_miss,
            });
        }
        let mut tout = String::from("model_id,mean_perception,n_miss\n");
        for t in &trend {
            let _ = writeln!(tout, "{},{},{}", t.model_id, t.mean_perception, t.n_miss);
        }
        write_text(&ctx.out_dir.join("trend.csv"), &tout)?;
    }

    Ok(ProbeReport { entries, trend })
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------

/// Generates a synthetic sample file in the survey schema.
pub fn cmd_synth_data(
    out_path: impl AsRef<Path>,
    n: usize,
    seed: u64,
) -> Result<(), WorkflowError> {
    synth_microdata(out_path, n, seed, &Marginals::uniform())?;
    Ok(())
}

/// Offline smoke check used by tests: a mock respondent answering the main
/// scenario with the default coefficients.
pub fn mock_reference_reply(config: &ExperimentConfig) -> Result<String, WorkflowError> {
    let ws = load_workspace(config)?;
    let coeffs = config.mock.coefficients()?;
    let persona = &ws.sample.personas[0];
    Ok(mock_respondent(
        &coeffs,
        &persona.profile,
        &ws.scenario.treatment,
        0.0,
        0,
        &ws.scale,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn assets() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
    }

    fn test_config() -> ExperimentConfig {
        let assets = assets();
        ExperimentConfig {
            label: "test".into(),
            sample_file: assets.join("sample_microdata.csv"),
            demographic_map: assets.join("demographic_map.csv"),
            answer_scale: Some(assets.join("answer_scale.csv")),
            component_series: assets.join("component_series.csv"),
            survey_month: "2023-02".into(),
            baseline_end: None,
            horizons: vec![0, 1],
            temperatures: vec![0.0],
            master_seed: 42,
            grouping: "food_rest".into(),
            shapley_mode: "aggregate".into(),
            decompose_baseline: "zero".into(),
            model: ModelSection::default(),
            mock: MockSection::default(),
            scan: ScanSection::default(),
            probe: ProbeSection {
                prompts_file: Some(assets.join("probe_prompts.txt")),
                trend_model_ids: vec!["mock-a".into(), "mock-b".into()],
                trend_subsample: 20,
                trend_permutations: 3,
            },
            regress: RegressSection {
                group_estimates: Some(assets.join("ons_group_estimates.csv")),
                ons_map: Some(assets.join("ons_to_ias_map.csv")),
                responsiveness: Some(assets.join("responsiveness_quarterly.csv")),
                responsiveness_range: default_resp_range(),
            },
        }
    }

    #[test]
    fn scenario_matches_published_conditioning() {
        let ws = load_workspace(&test_config()).unwrap();
        let t = &ws.scenario.treatment;
        assert_eq!(t.component(ComponentId::Food).value, 17.0);
        assert_eq!(t.component(ComponentId::Restaurants).value, 9.8);
        assert_eq!(t.component(ComponentId::Energy).value, 88.0);
        assert_eq!(t.component(ComponentId::Other).value, 5.0);
        let b = &ws.scenario.baseline;
        assert_relative_eq!(b.component(ComponentId::Food).value, 2.4, epsilon = 1e-9);
        assert_relative_eq!(b.component(ComponentId::Restaurants).value, 3.8, epsilon = 1e-9);
        assert_relative_eq!(b.component(ComponentId::Energy).value, 4.2, epsilon = 1e-9);
        assert_relative_eq!(b.component(ComponentId::Other).value, 1.7, epsilon = 1e-9);
    }

    #[test]
    fn calibrate_is_deterministic_offline() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(test_config(), dir.path().join("a"));
        let rows = cmd_calibrate(&ctx).unwrap();
        assert_eq!(rows.len(), 1);
        let ctx2 = RunContext::new(test_config(), dir.path().join("b"));
        cmd_calibrate(&ctx2).unwrap();
        let a = std::fs::read(dir.path().join("a/calibrate.csv")).unwrap();
        let b = std::fs::read(dir.path().join("b/calibrate.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn profile_reports_positive_effect() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(test_config(), dir.path());
        let report = cmd_profile(&ctx).unwrap();
        assert_eq!(report.rows.len(), 2);
        // mock latent responds to the conditioning, so the treatment effect
        // is strongly positive
        assert!(report.rows[0].effect_mean > 5.0, "{}", report.rows[0].effect_mean);
        assert!(dir.path().join("profile_matrix.csv").exists());
        assert!(dir.path().join("profile_series.csv").exists());
    }

    #[test]
    fn decompose_additive_mock_matches_naive() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(test_config(), dir.path());
        let report = cmd_decompose(&ctx).unwrap();
        let total: f64 = report.shapley.attributions.iter().map(|(_, v)| v).sum();
        assert_relative_eq!(report.shapley.baseline + total, report.shapley.total, epsilon = 1e-9);
        for ((name, tau), (_, naive)) in report.shapley.attributions.iter().zip(&report.naive) {
            // snapping makes the mock only approximately additive
            assert!((tau - naive).abs() <= 1.0, "{name}: {tau} vs {naive}");
        }
        assert!(report.linear_benchmark.is_some());
    }

    #[test]
    fn scan_recovers_mock_slopes() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = test_config();
        // grids chosen so the mock latent lands exactly on scale option
        // values, making the snapped curve linear
        let c_energy = 0.096 * 17.0 + 0.074 * 9.8 + 0.789 * 5.0;
        let c_other = 0.096 * 17.0 + 0.074 * 9.8 + 0.041 * 88.0;
        config.scan.energy_grid = (0..9).map(|j| (6.5 + j as f64 - c_energy) / 0.041).collect();
        config.scan.energy_range = (0.0, 250.0);
        config.scan.other_grid = (0..9).map(|j| (6.5 + j as f64 - c_other) / 0.789).collect();
        config.scan.other_range = (0.0, 12.0);
        let ctx = RunContext::new(config, dir.path());
        let reports = cmd_scan(&ctx).unwrap();
        let by_name: BTreeMap<&str, &ScanReport> =
            reports.iter().map(|r| (r.target.as_str(), r)).collect();
        // planted mock loadings, modulo snapping: energy 0.041, other 0.789
        let energy = by_name["energy"].summary.unwrap();
        assert!((energy.slope - 0.041).abs() < 0.01, "{}", energy.slope);
        let other = by_name["other"].summary.unwrap();
        assert!((other.slope - 0.789).abs() < 0.01, "{}", other.slope);
        assert!(by_name["food_rest"].band.0.is_some());
    }

    #[test]
    fn regress_emits_tables() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(test_config(), dir.path());
        let report = cmd_regress(&ctx).unwrap();
        assert!(report.benchmark.names.len() > 20);
        assert!(report.ons_diffs.is_some());
        assert_eq!(report.verdicts.len(), 22);
        for file in ["regress.csv", "hypotheses.csv", "similarity.csv", "regress_bars.csv"] {
            assert!(dir.path().join(file).exists(), "{file}");
        }
    }

    #[test]
    fn probe_runs_thirteen_prompts_and_trend() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(test_config(), dir.path());
        let report = cmd_probe(&ctx).unwrap();
        assert_eq!(report.entries.len(), 13);
        assert_eq!(report.trend.len(), 2);
        // identical mock coefficients: both model ids give the same pooled
        // mean
        assert_relative_eq!(
            report.trend[0].mean_perception,
            report.trend[1].mean_perception
        );
        assert!(dir.path().join("probe_transcript.txt").exists());
        assert!(dir.path().join("trend.csv").exists());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = test_config();
        let text = toml::to_string(&config).unwrap();
        let parsed: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed.survey_month, config.survey_month);
        assert_eq!(parsed.temperatures, config.temperatures);
    }

    #[test]
    fn config_rejects_high_temperature() {
        let mut config = test_config();
        config.temperatures = vec![2.0];
        assert!(config.validate().is_err());
        config.model.allow_high_temperature = true;
        assert!(config.validate().is_ok());
    }
}
