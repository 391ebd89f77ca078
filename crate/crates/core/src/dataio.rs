//! Ingestion of price-index component series, survey microdata, demographic
//! code maps, answer-scale definitions, and group-level inflation estimates,
//! plus deterministic synthetic microdata generation.

use crate::domain::{
    default_answer_scale, AnswerScale, ComponentId, DemographicProfile, Persona, ScaleBin,
    Scenario, SocialClass, SurveySample, TreatmentVector, YearMonth, AgeBand, Education, Housing,
    IncomeBand, Region, Sex, Work, DEFAULT_PENSIONER_AGE_THRESHOLD,
};
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("component {component}: duplicate month {month}")]
    DuplicateMonth { component: String, month: YearMonth },
    #[error("component {component}: missing month {month}")]
    MissingMonth { component: String, month: YearMonth },
    #[error("unknown component series {0:?}")]
    UnknownComponent(String),
    #[error("line {line}: unmapped {category} code {code:?}")]
    UnmappedCode { line: u64, category: String, code: String },
    #[error("invalid marginals for {category}: {message}")]
    BadMarginals { category: String, message: String },
    #[error("no estimate for ONS group {0:?}")]
    MissingGroup(String),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Component series
// ---------------------------------------------------------------------------

/// Monthly year-on-year inflation observations for one index component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSeries {
    pub name: String,
    observations: BTreeMap<YearMonth, f64>,
}

impl ComponentSeries {
    pub fn new(name: impl Into<String>) -> Self {
        ComponentSeries { name: name.into(), observations: BTreeMap::new() }
    }

    pub fn insert(&mut self, month: YearMonth, yoy: f64) -> Result<(), DataError> {
        if self.observations.insert(month, yoy).is_some() {
            return Err(DataError::DuplicateMonth { component: self.name.clone(), month });
        }
        Ok(())
    }

    pub fn get(&self, month: YearMonth) -> Option<f64> {
        self.observations.get(&month).copied()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn start(&self) -> Option<YearMonth> {
        self.observations.keys().next().copied()
    }

    pub fn observations(&self) -> impl Iterator<Item = (YearMonth, f64)> + '_ {
        self.observations.iter().map(|(m, v)| (*m, *v))
    }

    /// Mean yoy over the three months preceding the survey month.
    pub fn three_month_avg(&self, survey_month: YearMonth) -> Result<f64, DataError> {
        let mut month = survey_month;
        let mut sum = 0.0;
        for _ in 0..3 {
            month = month.prev();
            sum += self.get(month).ok_or(DataError::MissingMonth {
                component: self.name.clone(),
                month,
            })?;
        }
        Ok(sum / 3.0)
    }

    /// Mean yoy over [start, end] inclusive; `None` start means the series
    /// start.
    pub fn window_mean(&self, start: Option<YearMonth>, end: YearMonth) -> Result<f64, DataError> {
        let start = start
            .or_else(|| self.start())
            .ok_or(DataError::MissingMonth { component: self.name.clone(), month: end })?;
        let values: Vec<f64> = self
            .observations
            .range(start..=end)
            .map(|(_, v)| *v)
            .collect();
        if values.is_empty() {
            return Err(DataError::MissingMonth { component: self.name.clone(), month: start });
        }
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Component series keyed by name ("food", "restaurants", "energy",
/// "other", optionally "headline").
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ComponentSeriesSet {
    series: BTreeMap<String, ComponentSeries>,
}

impl ComponentSeriesSet {
    pub fn get(&self, name: &str) -> Result<&ComponentSeries, DataError> {
        self.series
            .get(name)
            .ok_or_else(|| DataError::UnknownComponent(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.series.keys().map(String::as_str).collect()
    }

    pub fn insert(&mut self, series: ComponentSeries) {
        self.series.insert(series.name.clone(), series);
    }
}

/// Loads `date,component,yoy` rows into per-component series. Malformed
/// rows are reported with line numbers; a duplicate month is fatal.
pub fn load_component_series(path: impl AsRef<Path>) -> Result<ComponentSeriesSet, DataError> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(DataError::MissingColumn(name))
    };
    let (date_col, comp_col, yoy_col) = (col("date")?, col("component")?, col("yoy")?);

    let mut set = ComponentSeriesSet::default();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let month = YearMonth::parse(&record[date_col]).ok_or_else(|| DataError::Malformed {
            line,
            message: format!("bad date {:?}, expected YYYY-MM", &record[date_col]),
        })?;
        let name = record[comp_col].to_string();
        let yoy: f64 = record[yoy_col].parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("non-numeric yoy {:?}", &record[yoy_col]),
        })?;
        set.series
            .entry(name.clone())
            .or_insert_with(|| ComponentSeries::new(name))
            .insert(month, yoy)?;
    }
    Ok(set)
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DataError::Malformed { line, message: e.to_string() }
}

/// End of the historical-average baseline window: the month the model's
/// training data stops.
pub const DEFAULT_BASELINE_END: YearMonth = YearMonth { year: 2021, month: 9 };

/// Builds a scenario for a survey month: each component's treatment value is
/// its three-month average before the survey month, and the baseline is the
/// historical mean from the series start through `baseline_end`.
pub fn build_scenario_with_baseline(
    set: &ComponentSeriesSet,
    survey_month: YearMonth,
    name: impl Into<String>,
    baseline_end: YearMonth,
) -> Result<Scenario, DataError> {
    let mut treatment = TreatmentVector::zeros();
    let mut baseline = TreatmentVector::zeros();
    for id in ComponentId::ALL {
        let series = set.get(id.name())?;
        treatment.component_mut(id).value = series.three_month_avg(survey_month)?;
        baseline.component_mut(id).value = series.window_mean(None, baseline_end)?;
    }
    Ok(Scenario { name: name.into(), treatment, reference_period: survey_month, baseline })
}

pub fn build_scenario(
    set: &ComponentSeriesSet,
    survey_month: YearMonth,
    name: impl Into<String>,
) -> Result<Scenario, DataError> {
    build_scenario_with_baseline(set, survey_month, name, DEFAULT_BASELINE_END)
}

// ---------------------------------------------------------------------------
// Demographic code map
// ---------------------------------------------------------------------------

/// Maps survey number codes to category class keys, e.g. ("housing", "3")
/// -> "council". Shipped as a versioned asset.
#[derive(Debug, Clone, Default)]
pub struct DemographicMap {
    entries: BTreeMap<(String, String), String>,
}

impl DemographicMap {
    pub fn decode(&self, category: &str, code: &str) -> Option<&str> {
        let code = if code.trim().is_empty() { "NaN" } else { code.trim() };
        self.entries
            .get(&(category.to_string(), code.to_string()))
            .map(String::as_str)
    }

    pub fn insert(&mut self, category: &str, code: &str, key: &str) {
        self.entries
            .insert((category.to_string(), code.to_string()), key.to_string());
    }
}

/// Loads `category,code,key` rows.
pub fn load_demographic_map(path: impl AsRef<Path>) -> Result<DemographicMap, DataError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_error)?;
    let mut map = DemographicMap::default();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        if record.len() < 3 {
            return Err(DataError::Malformed {
                line: line_of(&record),
                message: "expected category,code,key".into(),
            });
        }
        map.insert(&record[0], &record[1], &record[2]);
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Answer-scale files
// ---------------------------------------------------------------------------

/// Loads `label,kind,low,high` rows into an answer scale. Kinds: `closed`
/// (low..high), `open_below` (high bound), `open_above` (low bound),
/// `missing`.
pub fn load_answer_scale(path: impl AsRef<Path>) -> Result<AnswerScale, DataError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_error)?;
    let mut bins = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let num = |s: &str| -> Result<f64, DataError> {
            s.parse().map_err(|_| DataError::Malformed {
                line,
                message: format!("non-numeric bound {s:?}"),
            })
        };
        let bin = match &record[1] {
            "closed" => ScaleBin::Closed { low: num(&record[2])?, high: num(&record[3])? },
            "open_below" => ScaleBin::OpenBelow { boundary: num(&record[3])? },
            "open_above" => ScaleBin::OpenAbove { boundary: num(&record[2])? },
            "missing" => ScaleBin::Missing,
            other => {
                return Err(DataError::Malformed {
                    line,
                    message: format!("unknown bin kind {other:?}"),
                })
            }
        };
        bins.push((record[0].to_string(), bin));
    }
    Ok(AnswerScale::from_bins(bins)?)
}

// ---------------------------------------------------------------------------
// Survey microdata
// ---------------------------------------------------------------------------

pub const MICRODATA_CATEGORIES: [&str; 8] =
    ["sex", "age", "education", "housing", "income", "region", "class", "work"];

pub const RESPONSE_HORIZONS: [u8; 4] = [0, 1, 2, 5];

/// One raw microdata row: number codes as strings ("NaN" for unshared),
/// weight, and per-horizon response codes (1-based scale option index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrodataRow {
    pub id: String,
    /// Codes in `MICRODATA_CATEGORIES` order.
    pub codes: Vec<String>,
    pub weight: f64,
    /// Response code per horizon; `None` when the cell is empty.
    pub responses: Vec<Option<usize>>,
}

/// Parsed microdata: raw rows plus the decoded sample and numeric
/// benchmark responses (aligned with persona order, one vector per
/// horizon).
#[derive(Debug, Clone)]
pub struct Microdata {
    pub rows: Vec<MicrodataRow>,
    pub sample: SurveySample,
    pub responses: BTreeMap<u8, Vec<Option<f64>>>,
}

fn decode_profile(
    row: &MicrodataRow,
    map: &DemographicMap,
    line: u64,
    pensioner_threshold: u8,
) -> Result<DemographicProfile, DataError> {
    let key = |category: &str, code: &str| -> Result<String, DataError> {
        map.decode(category, code)
            .map(str::to_string)
            .ok_or_else(|| DataError::UnmappedCode {
                line,
                category: category.to_string(),
                code: code.to_string(),
            })
    };
    let get = |cat: &str| -> &str {
        let idx = MICRODATA_CATEGORIES.iter().position(|c| *c == cat).unwrap();
        &row.codes[idx]
    };
    let mut profile = DemographicProfile {
        sex: Sex::from_key(&key("sex", get("sex"))?)?,
        age_band: AgeBand::from_key(&key("age", get("age"))?)?,
        income_band: IncomeBand::from_key(&key("income", get("income"))?)?,
        housing: Housing::from_key(&key("housing", get("housing"))?)?,
        social_class: SocialClass::from_key(&key("class", get("class"))?)?,
        education: Education::from_key(&key("education", get("education"))?)?,
        region: Region::from_key(&key("region", get("region"))?)?,
        work: Work::from_key(&key("work", get("work"))?)?,
    };
    // pensioner is imputed, not carried as a survey code; the age gate keeps
    // the class distinct from the oldest age band so both stay estimable
    if profile.age_band.lower_bound() >= pensioner_threshold && profile.work == Work::NotWorking {
        profile.social_class = SocialClass::Pensioner;
    }
    Ok(profile)
}

/// Loads microdata (`id`, category code columns, `weight`, `resp_h{H}`
/// columns), decodes profiles through the demographic map, and converts
/// response codes to numeric values via the answer scale.
pub fn load_microdata(
    path: impl AsRef<Path>,
    map: &DemographicMap,
    scale: &AnswerScale,
) -> Result<Microdata, DataError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id").ok_or(DataError::MissingColumn("id"))?;
    let weight_col = col("weight").ok_or(DataError::MissingColumn("weight"))?;
    let mut cat_cols = Vec::new();
    for cat in MICRODATA_CATEGORIES {
        cat_cols.push(col(cat).ok_or(DataError::MissingColumn(cat))?);
    }
    let resp_cols: Vec<Option<usize>> = RESPONSE_HORIZONS
        .iter()
        .map(|h| col(&format!("resp_h{h}")))
        .collect();

    let mut rows = Vec::new();
    let mut personas = Vec::new();
    let mut responses: BTreeMap<u8, Vec<Option<f64>>> = RESPONSE_HORIZONS
        .iter()
        .filter(|h| resp_cols[RESPONSE_HORIZONS.iter().position(|x| x == *h).unwrap()].is_some())
        .map(|h| (*h, Vec::new()))
        .collect();

    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let weight: f64 = record[weight_col].parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("non-numeric weight {:?}", &record[weight_col]),
        })?;
        let mut row = MicrodataRow {
            id: record[id_col].to_string(),
            codes: cat_cols.iter().map(|&c| record[c].to_string()).collect(),
            weight,
            responses: Vec::new(),
        };
        for (hi, rc) in resp_cols.iter().enumerate() {
            let code = match rc {
                None => None,
                Some(c) => {
                    let raw = record[*c].trim();
                    if raw.is_empty() || raw == "NaN" {
                        None
                    } else {
                        let code: usize = raw.parse().map_err(|_| DataError::Malformed {
                            line,
                            message: format!("bad response code {raw:?}"),
                        })?;
                        if code < 1 || code > scale.options().len() {
                            return Err(DataError::Malformed {
                                line,
                                message: format!("response code {code} outside the scale"),
                            });
                        }
                        Some(code)
                    }
                }
            };
            row.responses.push(code);
            if rc.is_some() {
                let horizon = RESPONSE_HORIZONS[hi];
                let value = code.and_then(|c| scale.options()[c - 1].value);
                responses.get_mut(&horizon).unwrap().push(value);
            }
        }
        let profile = decode_profile(&row, map, line, DEFAULT_PENSIONER_AGE_THRESHOLD)?;
        personas.push(Persona { id: row.id.clone(), profile, weight });
        rows.push(row);
    }

    Ok(Microdata {
        rows,
        sample: SurveySample { personas, label: String::new(), master_seed: 0 },
        responses,
    })
}

/// Emits rows in the same schema `load_microdata` reads; load then re-emit
/// is byte-stable.
pub fn write_microdata(rows: &[MicrodataRow], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str("id,");
    out.push_str(&MICRODATA_CATEGORIES.join(","));
    out.push_str(",weight");
    for h in RESPONSE_HORIZONS {
        let _ = write!(out, ",resp_h{h}");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{},{},{:.4}", row.id, row.codes.join(","), row.weight);
        for resp in &row.responses {
            match resp {
                Some(code) => {
                    let _ = write!(out, ",{code}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic microdata
// ---------------------------------------------------------------------------

/// Category marginals for synthetic draws: per category, (code, weight)
/// pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Marginals {
    pub per_category: BTreeMap<String, Vec<(String, f64)>>,
}

impl Marginals {
    /// Uniform over the survey's code lists.
    pub fn uniform() -> Self {
        let codes: [(&str, &[&str]); 8] = [
            ("sex", &["1", "2", "3", "4"]),
            ("age", &["2", "3", "4", "5", "6", "7"]),
            ("education", &["1", "2", "3", "NaN"]),
            ("housing", &["1", "2", "3", "4"]),
            ("income", &["7", "8", "9", "10", "11", "12"]),
            ("region", &["1", "2", "3", "4", "5"]),
            ("class", &["1", "2", "3", "4"]),
            ("work", &["1", "2"]),
        ];
        Marginals {
            per_category: codes
                .into_iter()
                .map(|(cat, list)| {
                    (
                        cat.to_string(),
                        list.iter().map(|c| (c.to_string(), 1.0)).collect(),
                    )
                })
                .collect(),
        }
    }

    fn sampler(&self, category: &str) -> Result<(Vec<&str>, WeightedIndex<f64>), DataError> {
        let entries = self.per_category.get(category).ok_or_else(|| DataError::BadMarginals {
            category: category.to_string(),
            message: "missing category".into(),
        })?;
        let codes: Vec<&str> = entries.iter().map(|(c, _)| c.as_str()).collect();
        let weights: Vec<f64> = entries.iter().map(|(_, w)| *w).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| DataError::BadMarginals {
            category: category.to_string(),
            message: e.to_string(),
        })?;
        Ok((codes, index))
    }
}

/// Writes a deterministic synthetic sample in the survey schema. Identical
/// (n, seed, marginals) produce identical files.
pub fn synth_microdata(
    path: impl AsRef<Path>,
    n: usize,
    seed: u64,
    marginals: &Marginals,
) -> Result<(), DataError> {
    assert!(n >= 1, "need at least one row");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samplers = Vec::new();
    for cat in MICRODATA_CATEGORIES {
        samplers.push(marginals.sampler(cat)?);
    }
    let weight_dist = Uniform::new(0.5, 1.5);
    let n_options = default_answer_scale().options().len();
    let resp_dist = Uniform::new_inclusive(1, n_options);

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let codes: Vec<String> = samplers
            .iter()
            .map(|(codes, index)| codes[index.sample(&mut rng)].to_string())
            .collect();
        let weight: f64 = weight_dist.sample(&mut rng);
        let weight = (weight * 10_000.0).round() / 10_000.0;
        let responses: Vec<Option<usize>> = RESPONSE_HORIZONS
            .iter()
            .map(|_| Some(resp_dist.sample(&mut rng)))
            .collect();
        rows.push(MicrodataRow { id: format!("r{:05}", i + 1), codes, weight, responses });
    }
    write_microdata(&rows, path)
}

// ---------------------------------------------------------------------------
// Group-level inflation estimates
// ---------------------------------------------------------------------------

/// Per-category, per-class experienced-inflation estimates after
/// reallocating source statistical groups onto the survey's demographic
/// classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupEstimateTable {
    pub categories: BTreeMap<String, BTreeMap<String, f64>>,
    pub reference_period: String,
    pub warnings: Vec<String>,
}

fn parse_fraction(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().ok()?;
        let den: f64 = den.trim().parse().ok()?;
        (den != 0.0).then(|| num / den)
    } else {
        s.parse().ok()
    }
}

/// Loads statistical-office group estimates (`category,group,estimate,
/// period`) and reallocates them onto survey classes using the map file
/// (`category,group,class,fraction`; fractions like "4/5" or decimals).
///
/// Class values are fraction-weighted arithmetic means of the contributing
/// group estimates. Fraction sums per group away from 1 produce warnings;
/// mapped groups without estimates are fatal.
pub fn load_group_estimates(
    estimates_path: impl AsRef<Path>,
    map_path: impl AsRef<Path>,
) -> Result<GroupEstimateTable, DataError> {
    let mut estimates: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut reference_period = String::new();
    let mut reader = csv::Reader::from_path(estimates_path.as_ref()).map_err(csv_error)?;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let value: f64 = record[2].parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("non-numeric estimate {:?}", &record[2]),
        })?;
        estimates.insert((record[0].to_string(), record[1].to_string()), value);
        if reference_period.is_empty() && record.len() > 3 {
            reference_period = record[3].to_string();
        }
    }

    // (category, class) -> [(fraction, estimate)]
    let mut contributions: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    let mut fraction_sums: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(map_path.as_ref()).map_err(csv_error)?;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let category = record[0].to_string();
        let group = record[1].to_string();
        let class = record[2].to_string();
        let fraction = parse_fraction(&record[3]).ok_or_else(|| DataError::Malformed {
            line,
            message: format!("bad fraction {:?}", &record[3]),
        })?;
        let estimate = *estimates
            .get(&(category.clone(), group.clone()))
            .ok_or_else(|| DataError::MissingGroup(format!("{category}/{group}")))?;
        contributions
            .entry((category.clone(), class))
            .or_default()
            .push((fraction, estimate));
        *fraction_sums.entry((category, group)).or_insert(0.0) += fraction;
    }

    let mut warnings = Vec::new();
    for ((category, group), sum) in &fraction_sums {
        if (sum - 1.0).abs() > 1e-6 {
            warnings.push(format!(
                "{category}/{group}: allocated fractions sum to {sum}, not 1"
            ));
        }
    }

    let mut categories: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for ((category, class), contribs) in contributions {
        let total: f64 = contribs.iter().map(|(f, _)| f).sum();
        let value: f64 = contribs.iter().map(|(f, v)| f * v).sum::<f64>() / total;
        categories.entry(category).or_default().insert(class, value);
    }

    Ok(GroupEstimateTable { categories, reference_period, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_series() {
        let f = write_temp("date,component,yoy\n2022-01,food,4.0\n2022-02,food,4.5\n2022-03,food,5.0\n");
        let set = load_component_series(f.path()).unwrap();
        let food = set.get("food").unwrap();
        assert_eq!(food.len(), 3);
        assert_eq!(food.get(YearMonth::new(2022, 2).unwrap()), Some(4.5));
    }

    #[test]
    fn duplicate_month_is_fatal() {
        let f = write_temp("date,component,yoy\n2022-01,food,4.0\n2022-01,food,4.5\n");
        let err = load_component_series(f.path()).unwrap_err();
        assert!(err.to_string().contains("2022-01"), "{err}");
    }

    #[test]
    fn non_numeric_yoy_names_line() {
        let f = write_temp("date,component,yoy\n2022-01,food,4.0\n2022-02,food,oops\n");
        let err = load_component_series(f.path()).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 3, .. }), "{err}");
    }

    #[test]
    fn three_month_avg_constant() {
        let mut s = ComponentSeries::new("food");
        for m in 1..=12 {
            s.insert(YearMonth::new(2022, m).unwrap(), 5.0).unwrap();
        }
        assert_relative_eq!(s.three_month_avg(YearMonth::new(2022, 11).unwrap()).unwrap(), 5.0);
    }

    #[test]
    fn three_month_avg_cv_food() {
        // (14, 15, 16) across Aug-Oct 2022 averages to the cross-validation
        // scenario's food value
        let mut s = ComponentSeries::new("food");
        s.insert(YearMonth::new(2022, 8).unwrap(), 14.0).unwrap();
        s.insert(YearMonth::new(2022, 9).unwrap(), 15.0).unwrap();
        s.insert(YearMonth::new(2022, 10).unwrap(), 16.0).unwrap();
        assert_relative_eq!(s.three_month_avg(YearMonth::new(2022, 11).unwrap()).unwrap(), 15.0);
    }

    #[test]
    fn three_month_avg_missing_month() {
        let mut s = ComponentSeries::new("food");
        s.insert(YearMonth::new(2022, 8).unwrap(), 14.0).unwrap();
        s.insert(YearMonth::new(2022, 10).unwrap(), 16.0).unwrap();
        let err = s.three_month_avg(YearMonth::new(2022, 11).unwrap()).unwrap_err();
        assert!(matches!(err, DataError::MissingMonth { .. }));
    }

    #[test]
    fn build_scenario_constant_two() {
        let mut set = ComponentSeriesSet::default();
        for id in ComponentId::ALL {
            let mut s = ComponentSeries::new(id.name());
            for m in 1..=12 {
                s.insert(YearMonth::new(2022, m).unwrap(), 2.0).unwrap();
            }
            set.insert(s);
        }
        let sc = build_scenario_with_baseline(
            &set,
            YearMonth::new(2022, 12).unwrap(),
            "const",
            YearMonth::new(2022, 6).unwrap(),
        )
        .unwrap();
        for id in ComponentId::ALL {
            assert_relative_eq!(sc.treatment.component(id).value, 2.0);
            assert_relative_eq!(sc.baseline.component(id).value, 2.0);
        }
    }

    #[test]
    fn scenario_invariant_to_row_order() {
        let rows = [
            "2022-11,food,17.0",
            "2022-12,food,17.0",
            "2023-01,food,17.0",
            "2022-11,energy,88.0",
            "2023-01,energy,88.0",
            "2022-12,energy,88.0",
            "2023-01,restaurants,9.8",
            "2022-11,restaurants,9.8",
            "2022-12,restaurants,9.8",
            "2022-12,other,5.0",
            "2022-11,other,5.0",
            "2023-01,other,5.0",
        ];
        let forward = write_temp(&format!("date,component,yoy\n{}\n", rows.join("\n")));
        let mut reversed_rows = rows;
        reversed_rows.reverse();
        let reversed = write_temp(&format!("date,component,yoy\n{}\n", reversed_rows.join("\n")));
        let a = load_component_series(forward.path()).unwrap();
        let b = load_component_series(reversed.path()).unwrap();
        let month = YearMonth::new(2023, 2).unwrap();
        let end = YearMonth::new(2023, 1).unwrap();
        let sa = build_scenario_with_baseline(&a, month, "x", end).unwrap();
        let sb = build_scenario_with_baseline(&b, month, "x", end).unwrap();
        assert_eq!(sa.treatment, sb.treatment);
    }

    fn test_map() -> DemographicMap {
        load_demographic_map(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../assets/demographic_map.csv"
        ))
        .unwrap()
    }

    #[test]
    fn microdata_decodes_codes() {
        let f = write_temp(
            "id,sex,age,education,housing,income,region,class,work,weight,resp_h0,resp_h1,resp_h2,resp_h5\n\
             r1,1,6,2,3,NaN,2,1,2,1.0000,14,,5,21\n",
        );
        let md = load_microdata(f.path(), &test_map(), &default_answer_scale()).unwrap();
        let p = &md.sample.personas[0].profile;
        assert_eq!(p.housing, Housing::Council);
        assert_eq!(p.income_band, IncomeBand::Undisclosed);
        assert_eq!(p.income_band.wording(), "undisclosed income");
        assert_eq!(p.age_band, AgeBand::A16To24);
        // code 14 is "risen by 9-10%"; code 21 is "no idea"
        assert_eq!(md.responses[&0][0], Some(9.5));
        assert_eq!(md.responses[&1][0], None);
        assert_eq!(md.responses[&5][0], None);
    }

    #[test]
    fn pensioner_imputed_from_age() {
        let f = write_temp(
            "id,sex,age,education,housing,income,region,class,work,weight,resp_h0,resp_h1,resp_h2,resp_h5\n\
             r1,2,7,1,1,7,1,3,2,0.8000,1,,,\n",
        );
        let md = load_microdata(f.path(), &test_map(), &default_answer_scale()).unwrap();
        assert_eq!(md.sample.personas[0].profile.social_class, SocialClass::Pensioner);
    }

    #[test]
    fn missing_weight_column_errors() {
        let f = write_temp(
            "id,sex,age,education,housing,income,region,class,work,resp_h0,resp_h1,resp_h2,resp_h5\n\
             r1,1,6,2,3,7,2,1,2,14,,,\n",
        );
        let err = load_microdata(f.path(), &test_map(), &default_answer_scale()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn("weight")));
    }

    #[test]
    fn unmapped_code_reports_row() {
        let f = write_temp(
            "id,sex,age,education,housing,income,region,class,work,weight,resp_h0,resp_h1,resp_h2,resp_h5\n\
             r1,1,6,2,9,7,2,1,2,1.0000,14,,,\n",
        );
        let err = load_microdata(f.path(), &test_map(), &default_answer_scale()).unwrap_err();
        match err {
            DataError::UnmappedCode { line, category, code } => {
                assert_eq!(line, 2);
                assert_eq!(category, "housing");
                assert_eq!(code, "9");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn synth_is_deterministic_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        synth_microdata(&a, 10, 1, &Marginals::uniform()).unwrap();
        synth_microdata(&b, 10, 1, &Marginals::uniform()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let md = load_microdata(&a, &test_map(), &default_answer_scale()).unwrap();
        assert_eq!(md.rows.len(), 10);
        let c = dir.path().join("c.csv");
        write_microdata(&md.rows, &c).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    }

    #[test]
    fn synth_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        synth_microdata(&p, 1, 9, &Marginals::uniform()).unwrap();
        let md = load_microdata(&p, &test_map(), &default_answer_scale()).unwrap();
        assert_eq!(md.sample.personas.len(), 1);
    }

    #[test]
    fn synth_uniform_shares_close_to_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.csv");
        let n = 10_000;
        synth_microdata(&p, n, 7, &Marginals::uniform()).unwrap();
        let md = load_microdata(&p, &test_map(), &default_answer_scale()).unwrap();
        // housing has four codes; each share should be within 2 p.p. of 1/4
        let mut counts = BTreeMap::new();
        let idx = MICRODATA_CATEGORIES.iter().position(|c| *c == "housing").unwrap();
        for row in &md.rows {
            *counts.entry(row.codes[idx].clone()).or_insert(0usize) += 1;
        }
        for (_, c) in counts {
            let share = c as f64 / n as f64;
            assert!((share - 0.25).abs() < 0.02, "share {share}");
        }
    }

    #[test]
    fn invalid_marginals_rejected() {
        let mut m = Marginals::uniform();
        m.per_category.insert("housing".into(), vec![("1".into(), -1.0)]);
        let dir = tempfile::tempdir().unwrap();
        let err = synth_microdata(dir.path().join("x.csv"), 5, 1, &m).unwrap_err();
        assert!(matches!(err, DataError::BadMarginals { .. }));
    }

    #[test]
    fn group_estimates_pass_through_and_weighted_mean() {
        let est = write_temp(
            "category,group,estimate,period\n\
             housing,Owned outright,9.0,2022-12\n\
             income,Lowest ten,12.0,2022-12\n\
             income,Second decile,11.0,2022-12\n\
             income,Third decile,10.0,2022-12\n",
        );
        let map = write_temp(
            "category,group,class,fraction\n\
             housing,Owned outright,outright,1\n\
             income,Lowest ten,<9999,4/5\n\
             income,Lowest ten,10000-19999,1/5\n\
             income,Second decile,10000-19999,1\n\
             income,Third decile,10000-19999,1/2\n\
             income,Third decile,20000-34999,1/2\n",
        );
        let table = load_group_estimates(est.path(), map.path()).unwrap();
        assert!(table.warnings.is_empty(), "{:?}", table.warnings);
        assert_eq!(table.reference_period, "2022-12");
        // single group mapping wholly to one class passes through
        assert_relative_eq!(table.categories["housing"]["outright"], 9.0);
        // lowest decile alone feeds the bottom band
        assert_relative_eq!(table.categories["income"]["<9999"], 12.0);
        // hand-weighted mean: (1/5*12 + 1*11 + 1/2*10) / (1/5 + 1 + 1/2)
        let expected = (0.2 * 12.0 + 11.0 + 0.5 * 10.0) / 1.7;
        assert_relative_eq!(table.categories["income"]["10000-19999"], expected, epsilon = 1e-12);
    }

    #[test]
    fn fraction_sum_mismatch_warns() {
        let est = write_temp("category,group,estimate,period\nincome,Lowest ten,12.0,2022-12\n");
        let map = write_temp("category,group,class,fraction\nincome,Lowest ten,<9999,4/5\n");
        let table = load_group_estimates(est.path(), map.path()).unwrap();
        assert_eq!(table.warnings.len(), 1);
        assert!(table.warnings[0].contains("Lowest ten"));
    }

    #[test]
    fn missing_group_is_fatal() {
        let est = write_temp("category,group,estimate,period\nincome,Second decile,11.0,2022-12\n");
        let map = write_temp("category,group,class,fraction\nincome,Lowest ten,<9999,4/5\n");
        let err = load_group_estimates(est.path(), map.path()).unwrap_err();
        assert!(matches!(err, DataError::MissingGroup(_)));
    }

    #[test]
    fn answer_scale_file_round_trip() {
        let scale = load_answer_scale(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../assets/answer_scale.csv"
        ))
        .unwrap();
        assert_eq!(scale, default_answer_scale());
    }
}
