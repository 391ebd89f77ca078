//! Shared domain types: respondent profiles, treatment vectors, answer
//! scales, and the deterministic categorical <-> numeric mappings the rest
//! of the pipeline relies on.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Age below which the pensioner social class may not be assigned.
pub const DEFAULT_PENSIONER_AGE_THRESHOLD: u8 = 65;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("option label not in scale: {0:?}")]
    UnknownLabel(String),
    #[error("invalid category value for {category}: {value:?}")]
    InvalidCategory { category: &'static str, value: String },
    #[error("answer scale options must be strictly ordered by value ({0:?} out of order)")]
    UnorderedScale(String),
    #[error("answer scale is empty")]
    EmptyScale,
    #[error("grouping scheme does not partition the active components: {0}")]
    BadGrouping(String),
    #[error("invalid horizon {0}; expected one of 0, 1, 2, 5")]
    InvalidHorizon(u8),
}

// ---------------------------------------------------------------------------
// Demographic categories
// ---------------------------------------------------------------------------

macro_rules! category_enum {
    ($(#[$meta:meta])* $name:ident, $cat:literal, { $($variant:ident => $key:literal, $wording:literal;)+ }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant,)+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant,)+];
            pub const CATEGORY: &'static str = $cat;

            /// Stable machine-readable key, used in data files.
            pub fn key(self) -> &'static str {
                match self {
                    $($name::$variant => $key,)+
                }
            }

            /// Phrase substituted into the persona prompt.
            pub fn wording(self) -> &'static str {
                match self {
                    $($name::$variant => $wording,)+
                }
            }

            pub fn from_key(key: &str) -> Result<Self, DomainError> {
                match key {
                    $($key => Ok($name::$variant),)+
                    other => Err(DomainError::InvalidCategory {
                        category: $cat,
                        value: other.to_string(),
                    }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.key())
            }
        }
    };
}

category_enum!(Sex, "sex", {
    Male => "male", "male";
    Female => "female", "female";
    OtherGender => "other_gender", "identifying your gender in another way";
    Undisclosed => "undisclosed_gender", "not revealing your gender";
});

category_enum!(AgeBand, "age", {
    A16To24 => "16-24", "16-24";
    A25To34 => "25-34", "25-34";
    A35To44 => "35-44", "35-44";
    A45To54 => "45-54", "45-54";
    A55To64 => "55-64", "55-64";
    A65To75 => "65-75", "65-75";
});

impl AgeBand {
    /// Lower bound of the band in years.
    pub fn lower_bound(self) -> u8 {
        match self {
            AgeBand::A16To24 => 16,
            AgeBand::A25To34 => 25,
            AgeBand::A35To44 => 35,
            AgeBand::A45To54 => 45,
            AgeBand::A55To64 => 55,
            AgeBand::A65To75 => 65,
        }
    }
}

category_enum!(IncomeBand, "income", {
    Under10k => "<9999", "income of <\u{a3}9999";
    From10kTo20k => "10000-19999", "income of \u{a3}10000-\u{a3}19999";
    From20kTo35k => "20000-34999", "income of \u{a3}20000-\u{a3}34999";
    From35kTo45k => "35000-44999", "income of \u{a3}35000-\u{a3}44999";
    Over45k => ">45000", "income of >\u{a3}45000";
    Undisclosed => "undisclosed_income", "undisclosed income";
});

category_enum!(Housing, "housing", {
    Outright => "outright", "house you own outright";
    Mortgage => "mortgage", "house with a mortgage";
    Council => "council", "council house";
    Rent => "rent", "house you rent";
});

category_enum!(SocialClass, "class", {
    UpperMiddle => "upper_middle", "upper-middle class";
    LowerMiddle => "lower_middle", "lower middle class";
    SkilledWorking => "skilled_working", "skilled working class";
    Working => "working", "working class";
    Pensioner => "pensioner", "a pensioner";
});

category_enum!(Education, "education", {
    Gcse => "gcse", "got your GCSEs but not A-levels";
    ALevel => "a_level", "got your A-levels but not a degree";
    Degree => "degree", "have got a degree";
    Unshared => "unshared", "haven't shared your level of education";
});

category_enum!(Region, "region", {
    Scotland => "scotland", "Scotland";
    NorthOrNI => "north_or_ni", "the North of England or Northern Ireland";
    Midlands => "midlands", "the Midlands (of England)";
    WalesOrWest => "wales_or_west", "Wales or the West of England";
    SouthEast => "south_east", "the South East of England";
});

category_enum!(Work, "work", {
    Working => "working", "work full or part time";
    NotWorking => "not_working", "are not working";
});

/// A respondent's category memberships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub sex: Sex,
    pub age_band: AgeBand,
    pub income_band: IncomeBand,
    pub housing: Housing,
    pub social_class: SocialClass,
    pub education: Education,
    pub region: Region,
    pub work: Work,
}

impl DemographicProfile {
    /// Pensioner is an imputed class: it may only be assigned when the age
    /// band reaches the threshold.
    pub fn pensioner_consistent(&self, age_threshold: u8) -> bool {
        self.social_class != SocialClass::Pensioner || self.age_band.lower_bound() >= age_threshold
    }
}

/// A respondent: profile plus survey weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub profile: DemographicProfile,
    pub weight: f64,
}

/// An ordered set of personas forming one survey wave.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveySample {
    pub personas: Vec<Persona>,
    pub label: String,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationIssue {
    DuplicateId(String),
    NegativeWeight { id: String, weight_repr: String },
    NonFiniteWeight { id: String },
    PensionerAgeMismatch { id: String },
    EmptySample,
    AllZeroWeights,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Lists every invariant violation in a sample; the empty report means the
/// sample is valid.
pub fn validate_sample(sample: &SurveySample) -> ValidationReport {
    validate_sample_with_threshold(sample, DEFAULT_PENSIONER_AGE_THRESHOLD)
}

pub fn validate_sample_with_threshold(sample: &SurveySample, age_threshold: u8) -> ValidationReport {
    let mut report = ValidationReport::default();
    if sample.personas.is_empty() {
        report.issues.push(ValidationIssue::EmptySample);
        return report;
    }
    let mut seen = BTreeSet::new();
    let mut any_positive = false;
    for p in &sample.personas {
        if !seen.insert(p.id.clone()) {
            report.issues.push(ValidationIssue::DuplicateId(p.id.clone()));
        }
        if !p.weight.is_finite() {
            report.issues.push(ValidationIssue::NonFiniteWeight { id: p.id.clone() });
        } else if p.weight < 0.0 {
            report.issues.push(ValidationIssue::NegativeWeight {
                id: p.id.clone(),
                weight_repr: format!("{}", p.weight),
            });
        } else if p.weight > 0.0 {
            any_positive = true;
        }
        if !p.profile.pensioner_consistent(age_threshold) {
            report
                .issues
                .push(ValidationIssue::PensionerAgeMismatch { id: p.id.clone() });
        }
    }
    if !any_positive {
        report.issues.push(ValidationIssue::AllZeroWeights);
    }
    report
}

// ---------------------------------------------------------------------------
// Treatments and scenarios
// ---------------------------------------------------------------------------

/// The four conditioning components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentId {
    Food,
    Restaurants,
    Energy,
    Other,
}

impl ComponentId {
    pub const ALL: [ComponentId; 4] = [
        ComponentId::Food,
        ComponentId::Restaurants,
        ComponentId::Energy,
        ComponentId::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentId::Food => "food",
            ComponentId::Restaurants => "restaurants",
            ComponentId::Energy => "energy",
            ComponentId::Other => "other",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, DomainError> {
        match name {
            "food" => Ok(ComponentId::Food),
            "restaurants" => Ok(ComponentId::Restaurants),
            "energy" => Ok(ComponentId::Energy),
            "other" => Ok(ComponentId::Other),
            other => Err(DomainError::InvalidCategory {
                category: "component",
                value: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One conditioning component: a %yoy rate plus whether it appears in the
/// prompt at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub value: f64,
    pub active: bool,
}

impl Component {
    pub fn active(value: f64) -> Self {
        Component { value, active: true }
    }

    pub fn inactive() -> Self {
        Component { value: 0.0, active: false }
    }
}

/// Conditioning rates for (food, restaurants, energy, other), each with an
/// active flag; all-inactive is the unconditioned case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentVector {
    pub food: Component,
    pub restaurants: Component,
    pub energy: Component,
    pub other: Component,
}

impl TreatmentVector {
    /// All four components active at the given rates.
    pub fn all_active(food: f64, restaurants: f64, energy: f64, other: f64) -> Self {
        TreatmentVector {
            food: Component::active(food),
            restaurants: Component::active(restaurants),
            energy: Component::active(energy),
            other: Component::active(other),
        }
    }

    /// All four components active at zero.
    pub fn zeros() -> Self {
        Self::all_active(0.0, 0.0, 0.0, 0.0)
    }

    /// No component present in the prompt (unconditioned).
    pub fn unconditioned() -> Self {
        TreatmentVector {
            food: Component::inactive(),
            restaurants: Component::inactive(),
            energy: Component::inactive(),
            other: Component::inactive(),
        }
    }

    pub fn component(&self, id: ComponentId) -> Component {
        match id {
            ComponentId::Food => self.food,
            ComponentId::Restaurants => self.restaurants,
            ComponentId::Energy => self.energy,
            ComponentId::Other => self.other,
        }
    }

    pub fn component_mut(&mut self, id: ComponentId) -> &mut Component {
        match id {
            ComponentId::Food => &mut self.food,
            ComponentId::Restaurants => &mut self.restaurants,
            ComponentId::Energy => &mut self.energy,
            ComponentId::Other => &mut self.other,
        }
    }

    /// Copy with `id` set to `value` (active), other components unchanged.
    pub fn with_component(mut self, id: ComponentId, value: f64) -> Self {
        *self.component_mut(id) = Component::active(value);
        self
    }

    pub fn active_components(&self) -> Vec<ComponentId> {
        ComponentId::ALL
            .into_iter()
            .filter(|&id| self.component(id).active)
            .collect()
    }

    pub fn is_unconditioned(&self) -> bool {
        self.active_components().is_empty()
    }

    pub fn is_finite(&self) -> bool {
        ComponentId::ALL.iter().all(|&id| self.component(id).value.is_finite())
    }
}

/// Calendar month, used for reference periods and series observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Option<Self> {
        (1..=12).contains(&month).then_some(YearMonth { year, month })
    }

    /// Parses "YYYY-MM".
    pub fn parse(s: &str) -> Option<Self> {
        let (y, m) = s.split_once('-')?;
        Self::new(y.parse().ok()?, m.parse().ok()?)
    }

    pub fn prev(self) -> Self {
        if self.month == 1 {
            YearMonth { year: self.year - 1, month: 12 }
        } else {
            YearMonth { year: self.year, month: self.month - 1 }
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// A named treatment with its reference period and baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub treatment: TreatmentVector,
    pub reference_period: YearMonth,
    pub baseline: TreatmentVector,
}

// ---------------------------------------------------------------------------
// Answer scales and questions
// ---------------------------------------------------------------------------

/// One answer option with its numeric value; `None` means the option maps to
/// a missing response ("no idea").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleOption {
    pub label: String,
    pub value: Option<f64>,
}

/// Ordered categorical options with numeric midpoints.
///
/// Closed bins [a, b] map to (a + b) / 2; open bins map to the boundary
/// plus/minus 0.5; don't-know options map to missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerScale {
    options: Vec<ScaleOption>,
}

/// Bin description for a single option as loaded from a scale file.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleBin {
    /// Closed interval [low, high]; value is the midpoint.
    Closed { low: f64, high: f64 },
    /// Open below the boundary; value is boundary - 0.5.
    OpenBelow { boundary: f64 },
    /// Open above the boundary; value is boundary + 0.5.
    OpenAbove { boundary: f64 },
    /// Maps to a missing response.
    Missing,
}

impl ScaleBin {
    pub fn value(&self) -> Option<f64> {
        match *self {
            ScaleBin::Closed { low, high } => Some((low + high) / 2.0),
            ScaleBin::OpenBelow { boundary } => Some(boundary - 0.5),
            ScaleBin::OpenAbove { boundary } => Some(boundary + 0.5),
            ScaleBin::Missing => None,
        }
    }
}

impl AnswerScale {
    /// Builds a scale from labelled bins, checking that non-missing options
    /// are strictly ordered by value.
    pub fn from_bins(bins: Vec<(String, ScaleBin)>) -> Result<Self, DomainError> {
        if bins.is_empty() {
            return Err(DomainError::EmptyScale);
        }
        let options: Vec<ScaleOption> = bins
            .into_iter()
            .map(|(label, bin)| ScaleOption { value: bin.value(), label })
            .collect();
        let mut last: Option<f64> = None;
        for opt in &options {
            if let Some(v) = opt.value {
                if let Some(prev) = last {
                    if v <= prev {
                        return Err(DomainError::UnorderedScale(opt.label.clone()));
                    }
                }
                last = Some(v);
            }
        }
        Ok(AnswerScale { options })
    }

    pub fn options(&self) -> &[ScaleOption] {
        &self.options
    }

    pub fn labels(&self) -> Vec<String> {
        self.options.iter().map(|o| o.label.clone()).collect()
    }

    /// Nearest non-missing option to a latent value (used by the mock
    /// respondent). Ties resolve to the lower option.
    pub fn snap(&self, latent: f64) -> &ScaleOption {
        self.options
            .iter()
            .filter(|o| o.value.is_some())
            .min_by(|a, b| {
                let da = (a.value.unwrap() - latent).abs();
                let db = (b.value.unwrap() - latent).abs();
                da.partial_cmp(&db).unwrap()
            })
            .expect("scale has at least one numeric option")
    }
}

/// Maps an option label to its numeric value, or `None` for don't-know
/// options. Labels outside the scale are an error, distinct from missing.
pub fn map_option_to_value(label: &str, scale: &AnswerScale) -> Result<Option<f64>, DomainError> {
    scale
        .options()
        .iter()
        .find(|o| o.label == label)
        .map(|o| o.value)
        .ok_or_else(|| DomainError::UnknownLabel(label.to_string()))
}

/// The canonical perception/expectation scale: open lower bin, 1-point bins
/// from "gone down by 1-2%" through "risen by 14-15%", an open upper bin at
/// 15%, and a "no idea" option mapping to missing.
pub fn default_answer_scale() -> AnswerScale {
    let mut bins: Vec<(String, ScaleBin)> = vec![
        ("gone down by more than 2%".into(), ScaleBin::OpenBelow { boundary: -2.0 }),
        ("gone down by 1-2%".into(), ScaleBin::Closed { low: -2.0, high: -1.0 }),
        ("gone down by less than 1%".into(), ScaleBin::Closed { low: -1.0, high: 0.0 }),
        ("not changed".into(), ScaleBin::Closed { low: 0.0, high: 0.0 }),
        ("risen by less than 1%".into(), ScaleBin::Closed { low: 0.0, high: 1.0 }),
    ];
    for lo in 1..=14 {
        bins.push((
            format!("risen by {}-{}%", lo, lo + 1),
            ScaleBin::Closed { low: lo as f64, high: (lo + 1) as f64 },
        ));
    }
    bins.push(("risen by more than 15%".into(), ScaleBin::OpenAbove { boundary: 15.0 }));
    bins.push(("no idea".into(), ScaleBin::Missing));
    AnswerScale::from_bins(bins).expect("default scale is well formed")
}

/// A survey question at one expectation horizon (0 = perceptions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub horizon_years: u8,
    pub wording: String,
    pub scale: AnswerScale,
}

impl SurveyQuestion {
    /// Default question wording per horizon with the canonical scale.
    ///
    /// Only the perceptions wording (horizon 0) is documented verbatim; the
    /// expectation wordings are configurable templates.
    pub fn default_for_horizon(horizon_years: u8) -> Result<Self, DomainError> {
        let wording = match horizon_years {
            0 => "Which of these options best describes how prices have changed over the last 12 months?".to_string(),
            1 => "Which of these options best describes how you expect prices to change over the next 12 months?".to_string(),
            2 | 5 => format!(
                "Which of these options best describes how you expect prices to change in the 12 months ending {} years from now?",
                horizon_years
            ),
            other => return Err(DomainError::InvalidHorizon(other)),
        };
        Ok(SurveyQuestion {
            horizon_years,
            wording,
            scale: default_answer_scale(),
        })
    }
}

/// A parsed per-respondent, per-horizon response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub persona_id: String,
    pub horizon_years: u8,
    pub raw_text: String,
    pub value: Option<f64>,
    pub model_id: String,
    pub temperature: f64,
    pub option_permutation_seed: u64,
    pub timestamp: String,
}

// ---------------------------------------------------------------------------
// Grouping schemes
// ---------------------------------------------------------------------------

/// A partition of the active treatment components into decomposition
/// players (e.g. food + restaurants bunched into one player).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingScheme {
    players: Vec<(String, BTreeSet<ComponentId>)>,
}

impl GroupingScheme {
    /// Builds a scheme, checking the players form a disjoint, exhaustive
    /// partition of `active` with no empty players.
    pub fn new(
        players: Vec<(String, BTreeSet<ComponentId>)>,
        active: &[ComponentId],
    ) -> Result<Self, DomainError> {
        if players.is_empty() {
            return Err(DomainError::BadGrouping("no players".into()));
        }
        let mut covered = BTreeSet::new();
        for (name, comps) in &players {
            if comps.is_empty() {
                return Err(DomainError::BadGrouping(format!("player {name:?} is empty")));
            }
            for c in comps {
                if !covered.insert(*c) {
                    return Err(DomainError::BadGrouping(format!(
                        "component {c} appears in more than one player"
                    )));
                }
            }
        }
        let active_set: BTreeSet<ComponentId> = active.iter().copied().collect();
        if covered != active_set {
            return Err(DomainError::BadGrouping(format!(
                "players cover {covered:?}, active components are {active_set:?}"
            )));
        }
        Ok(GroupingScheme { players })
    }

    /// The default grouping: food & restaurants bunched, energy and other
    /// on their own.
    pub fn food_rest_energy_other() -> Self {
        GroupingScheme {
            players: vec![
                (
                    "food_rest".into(),
                    [ComponentId::Food, ComponentId::Restaurants].into_iter().collect(),
                ),
                ("energy".into(), [ComponentId::Energy].into_iter().collect()),
                ("other".into(), [ComponentId::Other].into_iter().collect()),
            ],
        }
    }

    /// One player per component.
    pub fn singletons(active: &[ComponentId]) -> Self {
        GroupingScheme {
            players: active
                .iter()
                .map(|&c| (c.name().to_string(), [c].into_iter().collect()))
                .collect(),
        }
    }

    pub fn players(&self) -> &[(String, BTreeSet<ComponentId>)] {
        &self.players
    }

    /// Union of all players' components.
    pub fn covered_components(&self) -> BTreeSet<ComponentId> {
        self.players.iter().flat_map(|(_, c)| c.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.players.len()
    }

    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> DemographicProfile {
        DemographicProfile {
            sex: Sex::Male,
            age_band: AgeBand::A16To24,
            income_band: IncomeBand::Over45k,
            housing: Housing::Rent,
            social_class: SocialClass::UpperMiddle,
            education: Education::ALevel,
            region: Region::NorthOrNI,
            work: Work::NotWorking,
        }
    }

    #[test]
    fn map_upper_open_bin() {
        let scale = default_answer_scale();
        assert_eq!(map_option_to_value("risen by more than 15%", &scale).unwrap(), Some(15.5));
    }

    #[test]
    fn map_closed_bins_to_midpoints() {
        let scale = default_answer_scale();
        assert_eq!(map_option_to_value("risen by 13-14%", &scale).unwrap(), Some(13.5));
        assert_eq!(map_option_to_value("gone down by 1-2%", &scale).unwrap(), Some(-1.5));
        assert_eq!(map_option_to_value("gone down by less than 1%", &scale).unwrap(), Some(-0.5));
        assert_eq!(map_option_to_value("not changed", &scale).unwrap(), Some(0.0));
    }

    #[test]
    fn map_missing_and_unknown_are_distinct() {
        let scale = default_answer_scale();
        assert_eq!(map_option_to_value("no idea", &scale).unwrap(), None);
        assert!(matches!(
            map_option_to_value("something else", &scale),
            Err(DomainError::UnknownLabel(_))
        ));
    }

    #[test]
    fn scale_values_strictly_ordered() {
        let scale = default_answer_scale();
        let vals: Vec<f64> = scale.options().iter().filter_map(|o| o.value).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn every_closed_unit_bin_maps_to_half() {
        let scale = default_answer_scale();
        for lo in 1..=14 {
            let label = format!("risen by {}-{}%", lo, lo + 1);
            assert_eq!(map_option_to_value(&label, &scale).unwrap(), Some(lo as f64 + 0.5));
        }
    }

    #[test]
    fn validate_sample_reports_issues() {
        let p = Persona { id: "a".into(), profile: profile(), weight: 1.0 };
        let mut dup = p.clone();
        dup.weight = -1.0;
        let sample = SurveySample {
            personas: vec![p.clone(), dup],
            label: "t".into(),
            master_seed: 0,
        };
        let report = validate_sample(&sample);
        assert!(report.issues.contains(&ValidationIssue::DuplicateId("a".into())));
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::NegativeWeight { .. })));

        let ok = SurveySample {
            personas: vec![p, Persona { id: "b".into(), profile: profile(), weight: 2.0 }],
            label: "t".into(),
            master_seed: 0,
        };
        assert!(validate_sample(&ok).is_valid());
    }

    #[test]
    fn pensioner_requires_age() {
        let mut prof = profile();
        prof.social_class = SocialClass::Pensioner;
        assert!(!prof.pensioner_consistent(DEFAULT_PENSIONER_AGE_THRESHOLD));
        prof.age_band = AgeBand::A65To75;
        assert!(prof.pensioner_consistent(DEFAULT_PENSIONER_AGE_THRESHOLD));
    }

    #[test]
    fn grouping_must_partition() {
        let active = [ComponentId::Food, ComponentId::Restaurants, ComponentId::Energy];
        assert!(GroupingScheme::new(
            vec![("f".into(), [ComponentId::Food].into_iter().collect())],
            &active
        )
        .is_err());
        let overlap = GroupingScheme::new(
            vec![
                ("a".into(), [ComponentId::Food, ComponentId::Energy].into_iter().collect()),
                ("b".into(), [ComponentId::Energy, ComponentId::Restaurants].into_iter().collect()),
            ],
            &active,
        );
        assert!(overlap.is_err());
        assert_eq!(GroupingScheme::food_rest_energy_other().len(), 3);
    }

    #[test]
    fn treatment_vector_flags() {
        let t = TreatmentVector::unconditioned();
        assert!(t.is_unconditioned());
        let t = t.with_component(ComponentId::Energy, 76.0);
        assert_eq!(t.active_components(), vec![ComponentId::Energy]);
        assert_eq!(t.energy.value, 76.0);
    }

    #[test]
    fn year_month_roundtrip() {
        let ym = YearMonth::parse("2023-02").unwrap();
        assert_eq!(ym.to_string(), "2023-02");
        assert_eq!(ym.prev(), YearMonth::new(2023, 1).unwrap());
        assert_eq!(YearMonth::new(2023, 1).unwrap().prev(), YearMonth::new(2022, 12).unwrap());
        assert!(YearMonth::parse("2023-13").is_none());
    }
}
