//! Weighted distribution statistics, calibration loss, correlation
//! analyses, and WLS demographic regressions with robust standard errors.

use crate::domain::{DemographicProfile, SurveySample};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no usable (value, weight) pairs")]
    NoUsablePairs,
    #[error("need at least {needed} usable pairs, got {got}")]
    InsufficientPairs { needed: usize, got: usize },
    #[error("zero variance in input vector")]
    ZeroVariance,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("not enough observations: n = {n}, columns = {k}")]
    InsufficientObservations { n: usize, k: usize },
    #[error("unknown demographic category {0:?}")]
    UnknownCategory(String),
    #[error("class {class:?} missing from estimates for category {category:?}")]
    MissingClass { category: String, class: String },
    #[error("coefficient vectors share no names")]
    EmptyIntersection,
    #[error("fewer than 2 grid points in the requested range")]
    DegenerateRange,
    #[error("insufficient overlap between series in the fit range")]
    InsufficientOverlap,
}

// ---------------------------------------------------------------------------
// Weighted moments
// ---------------------------------------------------------------------------

/// Weighted mean and standard deviation of a response vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub mean: f64,
    pub sd: f64,
    /// Count of non-missing responses.
    pub n: usize,
    pub n_miss: usize,
    pub weights_used: bool,
}

/// Weighted mean over non-missing pairs; missing values and their weights
/// are excluded pairwise.
pub fn weighted_mean(values: &[Option<f64>], weights: &[f64]) -> Result<f64, StatsError> {
    check_lengths(values.len(), weights.len())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, &w) in values.iter().zip(weights) {
        if let Some(y) = v {
            num += w * y;
            den += w;
        }
    }
    if den <= 0.0 {
        return Err(StatsError::NoUsablePairs);
    }
    Ok(num / den)
}

/// Weighted sample standard deviation. The corrected variant applies the
/// frequency-style factor sum(w)/(sum(w) - 1) to the uncorrected weighted
/// variance sum(w (y - mu)^2)/sum(w).
pub fn weighted_sd(
    values: &[Option<f64>],
    weights: &[f64],
    corrected: bool,
) -> Result<f64, StatsError> {
    check_lengths(values.len(), weights.len())?;
    let usable = values
        .iter()
        .zip(weights)
        .filter(|(v, &w)| v.is_some() && w > 0.0)
        .count();
    if usable < 2 {
        return Err(StatsError::InsufficientPairs { needed: 2, got: usable });
    }
    let mu = weighted_mean(values, weights)?;
    let mut ss = 0.0;
    let mut wsum = 0.0;
    for (v, &w) in values.iter().zip(weights) {
        if let Some(y) = v {
            ss += w * (y - mu) * (y - mu);
            wsum += w;
        }
    }
    let mut var = ss / wsum;
    if corrected {
        var *= wsum / (wsum - 1.0);
    }
    Ok(var.max(0.0).sqrt())
}

/// Summary with n and n_miss bookkeeping; sd uses the corrected variant.
pub fn weighted_summary(
    values: &[Option<f64>],
    weights: &[f64],
) -> Result<DistributionSummary, StatsError> {
    let n_miss = values.iter().filter(|v| v.is_none()).count();
    let n = values.len() - n_miss;
    Ok(DistributionSummary {
        mean: weighted_mean(values, weights)?,
        sd: weighted_sd(values, weights, true)?,
        n,
        n_miss,
        weights_used: true,
    })
}

/// Equally weighted two-moment loss between a synthetic and a benchmark
/// response distribution; l = 1 for linear, l = 2 for quadratic.
pub fn calibration_loss(
    synthetic: &DistributionSummary,
    benchmark: &DistributionSummary,
    l: u8,
) -> f64 {
    loss_from_moment_diffs(synthetic.mean - benchmark.mean, synthetic.sd - benchmark.sd, l)
}

/// Same loss evaluated directly on moment differences.
pub fn loss_from_moment_diffs(diff_mean: f64, diff_sd: f64, l: u8) -> f64 {
    let l = f64::from(l);
    0.5 * diff_mean.abs().powf(l) + 0.5 * diff_sd.abs().powf(l)
}

// ---------------------------------------------------------------------------
// Correlations
// ---------------------------------------------------------------------------

/// Unweighted Pearson correlation with pairwise deletion of missing values;
/// the two-sided p-value uses a t statistic with n - 2 degrees of freedom.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> Result<(f64, f64), StatsError> {
    check_lengths(x.len(), y.len())?;
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    if pairs.len() < 3 {
        return Err(StatsError::InsufficientPairs { needed: 3, got: pairs.len() });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let p = if (1.0 - r * r) <= f64::EPSILON {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((r, p))
}

/// Pairwise correlation cells; `None` marks a degenerate pair.
pub type CorrelationMatrix = Vec<Vec<Option<f64>>>;

/// Pairwise Pearson matrix across horizons; degenerate cells are `None`
/// rather than fatal. The diagonal is exactly 1.
pub fn cross_horizon_matrix(
    responses: &[(u8, Vec<Option<f64>>)],
) -> Result<(Vec<u8>, CorrelationMatrix), StatsError> {
    if responses.len() < 2 {
        return Err(StatsError::InsufficientPairs { needed: 2, got: responses.len() });
    }
    let horizons: Vec<u8> = responses.iter().map(|(h, _)| *h).collect();
    let k = responses.len();
    let mut matrix = vec![vec![None; k]; k];
    for i in 0..k {
        matrix[i][i] = Some(1.0);
        for j in (i + 1)..k {
            let cell = pearson(&responses[i].1, &responses[j].1).ok().map(|(r, _)| r);
            matrix[i][j] = cell;
            matrix[j][i] = cell;
        }
    }
    Ok((horizons, matrix))
}

/// Pearson correlation and cosine similarity between two coefficient
/// vectors, matched by name.
pub fn coef_similarity(
    beta_a: &[(String, f64)],
    beta_b: &[(String, f64)],
) -> Result<(f64, f64), StatsError> {
    let b_map: BTreeMap<&str, f64> = beta_b.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let pairs: Vec<(f64, f64)> = beta_a
        .iter()
        .filter_map(|(n, v)| b_map.get(n.as_str()).map(|w| (*v, *w)))
        .collect();
    if pairs.len() < 2 {
        return Err(StatsError::EmptyIntersection);
    }
    let xs: Vec<Option<f64>> = pairs.iter().map(|p| Some(p.0)).collect();
    let ys: Vec<Option<f64>> = pairs.iter().map(|p| Some(p.1)).collect();
    let r = if pairs.len() >= 3 {
        pearson(&xs, &ys)?.0
    } else {
        // 2-vectors correlate perfectly up to sign
        let d0 = pairs[1].0 - pairs[0].0;
        let d1 = pairs[1].1 - pairs[0].1;
        if d0 == 0.0 || d1 == 0.0 {
            return Err(StatsError::ZeroVariance);
        }
        (d0 * d1).signum()
    };
    let dot: f64 = pairs.iter().map(|(a, b)| a * b).sum();
    let na: f64 = pairs.iter().map(|(a, _)| a * a).sum::<f64>().sqrt();
    let nb: f64 = pairs.iter().map(|(_, b)| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((r, dot / (na * nb)))
}

// ---------------------------------------------------------------------------
// Dummy designs and hypothesis specs
// ---------------------------------------------------------------------------

/// Expected sign of a non-base coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedSign {
    Negative,
    Positive,
    Unspecified,
}

/// One demographic category in a regression: base class plus the non-base
/// classes that get dummy columns, with their hypothesised signs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategorySpec {
    /// One of "sex", "age", "income", "housing", "class", "education",
    /// "region", "work".
    pub category: String,
    pub base_class: String,
    pub classes: Vec<(String, ExpectedSign)>,
}

/// Per-category base classes and coefficient sign expectations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub categories: Vec<CategorySpec>,
}

impl HypothesisSpec {
    /// The default regression spec: income, housing, age, class, education,
    /// region against the base classes hypothesised to have experienced the
    /// highest inflation, all non-base coefficients expected negative.
    pub fn default_demographics() -> Self {
        let neg = ExpectedSign::Negative;
        let cat = |category: &str, base: &str, classes: &[&str]| CategorySpec {
            category: category.into(),
            base_class: base.into(),
            classes: classes.iter().map(|c| (c.to_string(), neg)).collect(),
        };
        HypothesisSpec {
            categories: vec![
                cat("income", "<9999", &["10000-19999", "20000-34999", "35000-44999", ">45000"]),
                cat("housing", "council", &["rent", "mortgage", "outright"]),
                cat("age", "16-24", &["25-34", "35-44", "45-54", "55-64", "65-75"]),
                cat("class", "working", &["skilled_working", "lower_middle", "upper_middle", "pensioner"]),
                cat("education", "gcse", &["a_level", "degree"]),
                cat("region", "scotland", &["north_or_ni", "wales_or_west", "midlands", "south_east"]),
            ],
        }
    }

    /// Total non-base coefficient count.
    pub fn n_coefficients(&self) -> usize {
        self.categories.iter().map(|c| c.classes.len()).sum()
    }
}

/// Class key of a profile within a named category.
pub fn profile_class_key(profile: &DemographicProfile, category: &str) -> Result<&'static str, StatsError> {
    Ok(match category {
        "sex" => profile.sex.key(),
        "age" => profile.age_band.key(),
        "income" => profile.income_band.key(),
        "housing" => profile.housing.key(),
        "class" => profile.social_class.key(),
        "education" => profile.education.key(),
        "region" => profile.region.key(),
        "work" => profile.work.key(),
        other => return Err(StatsError::UnknownCategory(other.to_string())),
    })
}

/// Intercept column plus one 0/1 dummy per non-base class per category.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    /// Column names, "(intercept)" first, then "category (class)".
    pub names: Vec<String>,
    /// All-zero columns removed because the class is absent from the sample.
    pub dropped: Vec<String>,
}

/// Builds the dummy design for a sample; rows align with personas.
pub fn build_dummy_design(
    sample: &SurveySample,
    spec: &HypothesisSpec,
) -> Result<DesignMatrix, StatsError> {
    let n = sample.personas.len();
    let mut columns: Vec<(String, Vec<f64>)> = vec![("(intercept)".into(), vec![1.0; n])];
    for cat in &spec.categories {
        for (class, _) in &cat.classes {
            let name = format!("{} ({})", cat.category, class);
            let mut col = vec![0.0; n];
            for (i, p) in sample.personas.iter().enumerate() {
                if profile_class_key(&p.profile, &cat.category)? == class.as_str() {
                    col[i] = 1.0;
                }
            }
            columns.push((name, col));
        }
    }
    let mut dropped = Vec::new();
    columns.retain(|(name, col)| {
        if name != "(intercept)" && col.iter().all(|&v| v == 0.0) {
            dropped.push(name.clone());
            false
        } else {
            true
        }
    });
    let names: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let k = columns.len();
    let x = DMatrix::from_fn(n, k, |i, j| columns[j].1[i]);
    Ok(DesignMatrix { x, names, dropped })
}

// ---------------------------------------------------------------------------
// Weighted least squares
// ---------------------------------------------------------------------------

/// Robust covariance flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustSe {
    Hc0,
    #[default]
    Hc1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Coefficient names, intercept first when present.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub robust_se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub stars: Vec<String>,
    pub r2_adj: f64,
    pub n_obs: usize,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    /// Named (coefficient, robust se) pairs excluding the intercept.
    pub fn named_slopes(&self) -> Vec<(String, f64)> {
        self.names
            .iter()
            .zip(&self.coefficients)
            .filter(|(n, _)| n.as_str() != "(intercept)")
            .map(|(n, c)| (n.clone(), *c))
            .collect()
    }
}

fn stars_for(p: f64) -> String {
    if p < 0.01 {
        "***".into()
    } else if p < 0.05 {
        "**".into()
    } else if p < 0.10 {
        "*".into()
    } else {
        String::new()
    }
}

/// Weighted least squares with heteroskedasticity-robust sandwich standard
/// errors (weights folded into the sandwich) and t-distribution p-values.
pub fn wls_fit(
    y: &[f64],
    x: &DMatrix<f64>,
    names: &[String],
    weights: &[f64],
    flavor: RobustSe,
) -> Result<RegressionResult, StatsError> {
    let n = x.nrows();
    let k = x.ncols();
    check_lengths(y.len(), n)?;
    check_lengths(weights.len(), n)?;
    if names.len() != k {
        return Err(StatsError::LengthMismatch(format!(
            "{} names for {} columns",
            names.len(),
            k
        )));
    }
    if n <= k {
        return Err(StatsError::InsufficientObservations { n, k });
    }

    let yv = DVector::from_column_slice(y);
    // X' W X and X' W y
    let mut xtwx = DMatrix::zeros(k, k);
    let mut xtwy = DVector::zeros(k);
    for i in 0..n {
        let xi = x.row(i).transpose();
        xtwx += weights[i] * &xi * xi.transpose();
        xtwy += weights[i] * y[i] * &xi;
    }
    let bread = xtwx.clone().try_inverse().ok_or(StatsError::RankDeficient)?;
    let beta = &bread * &xtwy;

    let fitted = x * &beta;
    let resid = &yv - &fitted;

    // sandwich: (X'WX)^-1 [sum w_i^2 e_i^2 x_i x_i'] (X'WX)^-1
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let xi = x.row(i).transpose();
        let s = weights[i] * weights[i] * resid[i] * resid[i];
        meat += s * &xi * xi.transpose();
    }
    let scale = match flavor {
        RobustSe::Hc0 => 1.0,
        RobustSe::Hc1 => n as f64 / (n - k) as f64,
    };
    let cov = scale * &bread * meat * &bread;

    let df = (n - k) as f64;
    let tdist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let mut robust_se = Vec::with_capacity(k);
    let mut p_values = Vec::with_capacity(k);
    for j in 0..k {
        let se = cov[(j, j)].max(0.0).sqrt();
        robust_se.push(se);
        let p = if se == 0.0 {
            if beta[j] == 0.0 { 1.0 } else { 0.0 }
        } else {
            2.0 * (1.0 - tdist.cdf((beta[j] / se).abs()))
        };
        p_values.push(p);
    }
    let stars = p_values.iter().map(|&p| stars_for(p)).collect();

    // weighted R^2
    let wsum: f64 = weights.iter().sum();
    let ybar = y.iter().zip(weights).map(|(yi, wi)| wi * yi).sum::<f64>() / wsum;
    let sst: f64 = y
        .iter()
        .zip(weights)
        .map(|(yi, wi)| wi * (yi - ybar) * (yi - ybar))
        .sum();
    let ssr: f64 = resid
        .iter()
        .zip(weights)
        .map(|(e, wi)| wi * e * e)
        .sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let r2_adj = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df;

    Ok(RegressionResult {
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        robust_se,
        p_values,
        stars,
        r2_adj,
        n_obs: n,
    })
}

/// Fits the demographic regression for a sample: builds the dummy design,
/// drops rows with missing responses, and runs weighted least squares with
/// survey weights.
pub fn demographic_regression(
    sample: &SurveySample,
    responses: &[Option<f64>],
    spec: &HypothesisSpec,
    flavor: RobustSe,
) -> Result<RegressionResult, StatsError> {
    check_lengths(responses.len(), sample.personas.len())?;
    let design = build_dummy_design(sample, spec)?;
    let keep: Vec<usize> = responses
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect();
    if keep.is_empty() {
        return Err(StatsError::NoUsablePairs);
    }
    let y: Vec<f64> = keep.iter().map(|&i| responses[i].unwrap()).collect();
    let w: Vec<f64> = keep.iter().map(|&i| sample.personas[i].weight).collect();
    let x = DMatrix::from_fn(keep.len(), design.x.ncols(), |r, c| design.x[(keep[r], c)]);
    wls_fit(&y, &x, &design.names, &w, flavor)
}

// ---------------------------------------------------------------------------
// Hypothesis verdicts and reference diffs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignVerdict {
    Consistent,
    Inconsistent,
    Neutral,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientVerdict {
    pub name: String,
    pub coefficient: f64,
    pub expected: ExpectedSign,
    pub verdict: SignVerdict,
    /// One-sided p-value for H: beta < 0.
    pub one_sided_p: f64,
    pub significant: bool,
}

/// Per-coefficient sign verdicts against the hypothesis spec.
pub fn hypothesis_report(
    result: &RegressionResult,
    spec: &HypothesisSpec,
) -> Vec<CoefficientVerdict> {
    let df = (result.n_obs.saturating_sub(result.names.len())).max(1) as f64;
    let tdist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let mut out = Vec::new();
    for cat in &spec.categories {
        for (class, expected) in &cat.classes {
            let name = format!("{} ({})", cat.category, class);
            let Some(idx) = result.names.iter().position(|n| n == &name) else {
                continue;
            };
            let beta = result.coefficients[idx];
            let se = result.robust_se[idx];
            let one_sided_p = if se == 0.0 {
                if beta < 0.0 { 0.0 } else { 1.0 }
            } else {
                tdist.cdf(beta / se)
            };
            let verdict = if beta == 0.0 {
                SignVerdict::Neutral
            } else {
                let sign_ok = match expected {
                    ExpectedSign::Negative => beta < 0.0,
                    ExpectedSign::Positive => beta > 0.0,
                    ExpectedSign::Unspecified => true,
                };
                if sign_ok { SignVerdict::Consistent } else { SignVerdict::Inconsistent }
            };
            out.push(CoefficientVerdict {
                name,
                coefficient: beta,
                expected: *expected,
                verdict,
                one_sided_p,
                significant: result.p_values[idx] < 0.10,
            });
        }
    }
    out
}

/// Percentage-point differences of group-level estimates against each
/// category's base class.
pub fn ons_reference_diffs(
    estimates: &BTreeMap<String, BTreeMap<String, f64>>,
    spec: &HypothesisSpec,
) -> Result<Vec<(String, f64)>, StatsError> {
    let mut out = Vec::new();
    for cat in &spec.categories {
        let table = estimates
            .get(&cat.category)
            .ok_or_else(|| StatsError::MissingClass {
                category: cat.category.clone(),
                class: cat.base_class.clone(),
            })?;
        let base = *table.get(&cat.base_class).ok_or_else(|| StatsError::MissingClass {
            category: cat.category.clone(),
            class: cat.base_class.clone(),
        })?;
        for (class, _) in &cat.classes {
            let v = *table.get(class).ok_or_else(|| StatsError::MissingClass {
                category: cat.category.clone(),
                class: class.clone(),
            })?;
            out.push((format!("{} ({})", cat.category, class), v - base));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Aggregate responsiveness regression
// ---------------------------------------------------------------------------

/// Regresses an aggregate benchmark series on the three grouped component
/// series over a quarter range (labels like "2011Q2", inclusive). Unit
/// weights, robust standard errors.
pub fn responsiveness_regression(
    benchmark: &[(String, f64)],
    food_rest: &[(String, f64)],
    energy: &[(String, f64)],
    other: &[(String, f64)],
    range: (&str, &str),
    flavor: RobustSe,
) -> Result<RegressionResult, StatsError> {
    let to_map = |s: &[(String, f64)]| -> BTreeMap<String, f64> {
        s.iter().cloned().collect()
    };
    let fm = to_map(food_rest);
    let em = to_map(energy);
    let om = to_map(other);
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (q, y) in benchmark {
        if q.as_str() < range.0 || q.as_str() > range.1 {
            continue;
        }
        if let (Some(f), Some(e), Some(o)) = (fm.get(q), em.get(q), om.get(q)) {
            rows.push([*y, *f, *e, *o]);
        }
    }
    if rows.len() < 5 {
        return Err(StatsError::InsufficientOverlap);
    }
    let n = rows.len();
    let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { rows[i][j] });
    let names = vec![
        "(intercept)".to_string(),
        "food_rest".to_string(),
        "energy".to_string(),
        "other".to_string(),
    ];
    wls_fit(&y, &x, &names, &vec![1.0; n], flavor)
}

/// Shapley contribution of a component in a linear model: coefficient times
/// the scenario input.
pub fn linear_contribution(coefficient: f64, scenario_input: f64) -> f64 {
    coefficient * scenario_input
}

fn check_lengths(a: usize, b: usize) -> Result<(), StatsError> {
    if a != b {
        Err(StatsError::LengthMismatch(format!("{a} vs {b}")))
    } else {
        Ok(())
    }
}
