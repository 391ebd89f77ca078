//! Treatment effects, exact grouped Shapley decomposition, and marginal
//! sensitivity scans over the conditioning components.

use crate::domain::{ComponentId, GroupingScheme, Persona, SurveySample, TreatmentVector};
use crate::gateway::GatewayError;
use crate::stats::weighted_mean;
use num::rational::Ratio;
use num::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no usable responses for a configuration")]
    Degenerate,
    #[error("grouping does not cover the scenario's active components")]
    BadGrouping,
}

/// A response function g(persona, treatment) used by the effects engine.
/// Implemented by the live pipeline and by plain closures in tests.
pub trait Respond: Sync {
    fn respond(
        &self,
        persona: &Persona,
        treatment: &TreatmentVector,
    ) -> Result<Option<f64>, GatewayError>;
}

impl<F> Respond for F
where
    F: Fn(&Persona, &TreatmentVector) -> Option<f64> + Sync,
{
    fn respond(
        &self,
        persona: &Persona,
        treatment: &TreatmentVector,
    ) -> Result<Option<f64>, GatewayError> {
        Ok(self(persona, treatment))
    }
}

impl Respond for crate::gateway::ResponseFunction<'_> {
    fn respond(
        &self,
        persona: &Persona,
        treatment: &TreatmentVector,
    ) -> Result<Option<f64>, GatewayError> {
        self.eval(persona, treatment)
    }
}

/// Weighted mean response across the sample under one treatment; missing
/// responses are dropped pairwise.
pub fn aggregate_response(
    f: &dyn Respond,
    sample: &SurveySample,
    treatment: &TreatmentVector,
) -> Result<f64, EffectsError> {
    let mut values = Vec::with_capacity(sample.personas.len());
    let mut weights = Vec::with_capacity(sample.personas.len());
    for persona in &sample.personas {
        values.push(f.respond(persona, treatment)?);
        weights.push(persona.weight);
    }
    weighted_mean(&values, &weights).map_err(|_| EffectsError::Degenerate)
}

/// tau_i = g(t1; x_i) - g(t0; x_i); missing if either side is missing.
pub fn individual_effect(
    f: &dyn Respond,
    persona: &Persona,
    t1: &TreatmentVector,
    t0: &TreatmentVector,
) -> Result<Option<f64>, EffectsError> {
    let a = f.respond(persona, t1)?;
    let b = f.respond(persona, t0)?;
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    })
}

/// Weighted average of individual effects; personas missing either arm are
/// dropped.
pub fn average_effect(
    f: &dyn Respond,
    sample: &SurveySample,
    t1: &TreatmentVector,
    t0: &TreatmentVector,
) -> Result<f64, EffectsError> {
    let mut effects = Vec::with_capacity(sample.personas.len());
    let mut weights = Vec::with_capacity(sample.personas.len());
    for persona in &sample.personas {
        effects.push(individual_effect(f, persona, t1, t0)?);
        weights.push(persona.weight);
    }
    weighted_mean(&effects, &weights).map_err(|_| EffectsError::Degenerate)
}

/// Exact Shapley coalition weight |S|! (K - |S| - 1)! / K! as a rational.
pub fn coalition_weight(coalition_size: usize, n_players: usize) -> Ratio<u64> {
    assert!(coalition_size < n_players);
    fn factorial(n: usize) -> u64 {
        (1..=n as u64).product::<u64>().max(1)
    }
    Ratio::new(
        factorial(coalition_size) * factorial(n_players - coalition_size - 1),
        factorial(n_players),
    )
}

/// Whether Shapley values are computed on the aggregate response surface or
/// per persona and then averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapleyMode {
    AggregateFirst,
    PerPersona,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapleyReport {
    /// (player name, attributed effect), in grouping order.
    pub attributions: Vec<(String, f64)>,
    /// Aggregate response with every player at its baseline value.
    pub baseline: f64,
    /// Aggregate response under the full scenario.
    pub total: f64,
    pub mode: ShapleyMode,
    /// Distinct treatment configurations evaluated (2^K).
    pub configurations: usize,
}

impl ShapleyReport {
    pub fn attribution(&self, player: &str) -> Option<f64> {
        self.attributions
            .iter()
            .find(|(name, _)| name == player)
            .map(|(_, v)| *v)
    }
}

fn config_treatment(
    mask: usize,
    grouping: &GroupingScheme,
    scenario: &TreatmentVector,
    baseline: &TreatmentVector,
) -> TreatmentVector {
    let mut t = *baseline;
    for (k, (_, members)) in grouping.players().iter().enumerate() {
        if mask & (1 << k) != 0 {
            for id in members {
                *t.component_mut(*id) = scenario.component(*id);
            }
        }
    }
    t
}

fn shapley_from_values(values: &[f64], k: usize) -> Vec<f64> {
    let mut taus = vec![0.0; k];
    for (player, tau) in taus.iter_mut().enumerate() {
        let mut acc = 0.0;
        for mask in 0..(1usize << k) {
            if mask & (1 << player) != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = coalition_weight(s, k).to_f64().expect("small factorials");
            acc += w * (values[mask | (1 << player)] - values[mask]);
        }
        *tau = acc;
    }
    taus
}

/// Exact grouped Shapley decomposition of the scenario's aggregate effect.
///
/// Players are the groups in `grouping`; components outside a coalition sit
/// at their baseline values. Every one of the 2^K configurations is
/// evaluated exactly once. The report satisfies
/// baseline + sum of attributions = total (efficiency).
pub fn shapley_decompose(
    f: &dyn Respond,
    sample: &SurveySample,
    scenario: &TreatmentVector,
    baseline: &TreatmentVector,
    grouping: &GroupingScheme,
    mode: ShapleyMode,
) -> Result<ShapleyReport, EffectsError> {
    let covered = grouping.covered_components();
    if scenario.active_components().iter().any(|id| !covered.contains(id)) {
        return Err(EffectsError::BadGrouping);
    }
    let k = grouping.players().len();
    let n_configs = 1usize << k;

    let configs: Vec<TreatmentVector> = (0..n_configs)
        .map(|mask| config_treatment(mask, grouping, scenario, baseline))
        .collect();

    let names: Vec<String> = grouping.players().iter().map(|(n, _)| n.clone()).collect();

    match mode {
        ShapleyMode::AggregateFirst => {
            let mut values = Vec::with_capacity(n_configs);
            for config in &configs {
                values.push(aggregate_response(f, sample, config)?);
            }
            let taus = shapley_from_values(&values, k);
            Ok(ShapleyReport {
                attributions: names.into_iter().zip(taus).collect(),
                baseline: values[0],
                total: values[n_configs - 1],
                mode,
                configurations: n_configs,
            })
        }
        ShapleyMode::PerPersona => {
            // personas missing any configuration are dropped entirely so the
            // per-persona decompositions stay internally consistent
            let mut taus_acc = vec![0.0; k];
            let mut base_acc = 0.0;
            let mut total_acc = 0.0;
            let mut weight_acc = 0.0;
            for persona in &sample.personas {
                let mut values = Vec::with_capacity(n_configs);
                let mut complete = true;
                for config in &configs {
                    match f.respond(persona, config)? {
                        Some(v) => values.push(v),
                        None => {
                            complete = false;
                            break;
                        }
                    }
                }
                if !complete {
                    continue;
                }
                let taus = shapley_from_values(&values, k);
                for (acc, tau) in taus_acc.iter_mut().zip(&taus) {
                    *acc += persona.weight * tau;
                }
                base_acc += persona.weight * values[0];
                total_acc += persona.weight * values[n_configs - 1];
                weight_acc += persona.weight;
            }
            if weight_acc <= 0.0 {
                return Err(EffectsError::Degenerate);
            }
            Ok(ShapleyReport {
                attributions: names
                    .into_iter()
                    .zip(taus_acc.into_iter().map(|t| t / weight_acc))
                    .collect(),
                baseline: base_acc / weight_acc,
                total: total_acc / weight_acc,
                mode,
                configurations: n_configs,
            })
        }
    }
}

/// One player at its scenario values with every other player held at the
/// baseline, minus the all-baseline aggregate.
pub fn naive_effect(
    f: &dyn Respond,
    sample: &SurveySample,
    scenario: &TreatmentVector,
    baseline: &TreatmentVector,
    grouping: &GroupingScheme,
    player: &str,
) -> Result<f64, EffectsError> {
    let k = grouping
        .players()
        .iter()
        .position(|(name, _)| name == player)
        .ok_or(EffectsError::BadGrouping)?;
    let solo = config_treatment(1 << k, grouping, scenario, baseline);
    let base = config_treatment(0, grouping, scenario, baseline);
    Ok(aggregate_response(f, sample, &solo)? - aggregate_response(f, sample, &base)?)
}

/// What a sensitivity scan varies: one component, or food and restaurants
/// moved together at a fixed restaurants/food ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScanTarget {
    Single(ComponentId),
    /// Food at the grid value, restaurants at grid value times `ratio`.
    FoodWithRestaurants { ratio: f64 },
}

impl ScanTarget {
    /// CPIH basket weight of the varied components.
    pub fn basket_weight(&self) -> f64 {
        use crate::gateway::BASKET_SHARES;
        match self {
            ScanTarget::Single(id) => {
                let idx = ComponentId::ALL.iter().position(|c| c == id).unwrap();
                BASKET_SHARES[idx]
            }
            ScanTarget::FoodWithRestaurants { .. } => BASKET_SHARES[0] + BASKET_SHARES[1],
        }
    }

    fn apply(&self, base: &TreatmentVector, x: f64) -> (TreatmentVector, f64) {
        use crate::gateway::BASKET_SHARES;
        let mut t = *base;
        match self {
            ScanTarget::Single(id) => {
                let c = t.component_mut(*id);
                c.value = x;
                c.active = true;
                (t, x)
            }
            ScanTarget::FoodWithRestaurants { ratio } => {
                let food = t.component_mut(ComponentId::Food);
                food.value = x;
                food.active = true;
                let rest = t.component_mut(ComponentId::Restaurants);
                rest.value = x * ratio;
                rest.active = true;
                // report the basket-weighted rate of the pair on the x axis
                let (wf, wr) = (BASKET_SHARES[0], BASKET_SHARES[1]);
                ((t), (wf * x + wr * x * ratio) / (wf + wr))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanPoint {
    /// Varied rate (basket-weighted when two components move together).
    pub x: f64,
    /// Aggregate response at this point.
    pub aggregate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    /// Aggregate response with the varied components at zero.
    pub offset: f64,
}

/// Evaluates the aggregate response over a grid of rates for the target
/// components, holding the rest of the scenario fixed. The offset is the
/// aggregate at a grid value of zero.
pub fn sensitivity_scan(
    f: &dyn Respond,
    sample: &SurveySample,
    base: &TreatmentVector,
    target: ScanTarget,
    grid: &[f64],
) -> Result<ScanResult, EffectsError> {
    let mut points = Vec::with_capacity(grid.len());
    let mut offset = None;
    for &g in grid {
        let (t, x) = target.apply(base, g);
        let aggregate = aggregate_response(f, sample, &t)?;
        if g == 0.0 {
            offset = Some(aggregate);
        }
        points.push(ScanPoint { x, aggregate });
    }
    let offset = match offset {
        Some(v) => v,
        None => {
            let (t, _) = target.apply(base, 0.0);
            aggregate_response(f, sample, &t)?
        }
    };
    Ok(ScanResult { points, offset })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanSummary {
    /// OLS slope of aggregate response against the varied rate.
    pub slope: f64,
    /// Basket weight of the varied components.
    pub weight: f64,
    /// Slope divided by basket weight.
    pub ratio: f64,
}

/// OLS slope over the points whose x lies in `linear_range`, then the
/// slope-to-basket-weight ratio.
pub fn scan_summary(
    result: &ScanResult,
    target: ScanTarget,
    linear_range: (f64, f64),
) -> Option<ScanSummary> {
    let pts: Vec<&ScanPoint> = result
        .points
        .iter()
        .filter(|p| p.x >= linear_range.0 && p.x <= linear_range.1)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.aggregate).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.x - mx) * (p.aggregate - my)).sum();
    let slope = sxy / sxx;
    let weight = target.basket_weight();
    Some(ScanSummary { slope, weight, ratio: slope / weight })
}
