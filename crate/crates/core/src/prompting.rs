//! Deterministic rendering of the system and user prompts: persona wording,
//! conditioning-rate formatting, question text, and per-respondent option
//! scrambling.

use crate::domain::{
    DemographicProfile, Persona, Scenario, SurveyQuestion, TreatmentVector,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The fixed system prompt used for every request.
pub const SYSTEM_PROMPT: &str = "You are pretending to be the person described given your best guess as to their personal, social and economic situation.";

const PREAMBLE: &str =
    "You are going to be asked questions about your perception of current and future inflation.";
const CLOSING: &str = "Please choose one option, no explanation.";

/// A fully rendered prompt for one respondent and question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    /// Option labels in presentation (post-scramble) order.
    pub presented_options: Vec<String>,
    pub permutation_seed: u64,
}

/// Renders a %yoy rate: nearest integer when |rate| > 10, one decimal digit
/// otherwise, always with a trailing "%".
pub fn format_rate(rate: f64) -> String {
    if rate.abs() > 10.0 {
        format!("{:.0}%", rate)
    } else {
        format!("{:.1}%", rate)
    }
}

/// The two-sentence persona paragraph with category wordings substituted.
pub fn render_persona_sentence(profile: &DemographicProfile) -> String {
    format!(
        "You are {}, aged {}, live in {}, are {} and {} with an {}. You {} and live in a {}.",
        profile.sex.wording(),
        profile.age_band.wording(),
        profile.region.wording(),
        profile.social_class.wording(),
        profile.work.wording(),
        profile.income_band.wording(),
        profile.education.wording(),
        profile.housing.wording(),
    )
}

/// The conditioning paragraph. Empty when all components are inactive;
/// omitted components leave no residue text.
pub fn render_conditioning(t: &TreatmentVector) -> String {
    let mut clauses: Vec<String> = Vec::new();
    if t.food.active {
        let mut clause = format!("food inflation has been {}", format_rate(t.food.value));
        if t.restaurants.active {
            clause.push_str(&format!(
                " ({} in restaurants and cafes)",
                format_rate(t.restaurants.value)
            ));
        }
        clauses.push(clause);
    } else if t.restaurants.active {
        clauses.push(format!(
            "inflation in restaurants and cafes has been {}",
            format_rate(t.restaurants.value)
        ));
    }
    if t.energy.active {
        clauses.push(format!(
            "energy price inflation was about {}",
            format_rate(t.energy.value)
        ));
    }

    let mut out = String::new();
    if !clauses.is_empty() {
        out.push_str(&format!("In the last few months, {}.", clauses.join(", ")));
    }
    if t.other.active {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&format!(
            "On average the rate of inflation on other goods was about {}.",
            format_rate(t.other.value)
        ));
    }
    out
}

/// Deterministic permutation of the option labels from a seed.
pub fn scramble_options(labels: &[String], seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = labels.to_vec();
    out.shuffle(&mut rng);
    out
}

/// Stable per-respondent permutation seed from the sample's master seed,
/// the persona id, and the question horizon (FNV-1a, platform independent).
pub fn derive_seed(master_seed: u64, persona_id: &str, horizon_years: u8) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in master_seed
        .to_le_bytes()
        .iter()
        .chain(persona_id.as_bytes())
        .chain(&[horizon_years])
    {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Assembles the full prompt: persona paragraph, conditioning paragraph
/// (when any component is active), preamble, question, scrambled numbered
/// options, and the closing instruction. Byte-deterministic given inputs.
pub fn build_prompt(
    persona: &Persona,
    scenario: Option<&Scenario>,
    question: &SurveyQuestion,
    seed: u64,
) -> PromptBundle {
    let presented = scramble_options(&question.scale.labels(), seed);

    let mut user_text = render_persona_sentence(&persona.profile);
    if let Some(s) = scenario {
        let conditioning = render_conditioning(&s.treatment);
        if !conditioning.is_empty() {
            user_text.push_str("\n\n");
            user_text.push_str(&conditioning);
        }
    }
    user_text.push_str("\n\n");
    user_text.push_str(PREAMBLE);
    user_text.push('\n');
    user_text.push_str(&question.wording);
    user_text.push_str("\n\n");
    for (i, label) in presented.iter().enumerate() {
        user_text.push_str(&format!("{}. {}\n", i + 1, label));
    }
    user_text.push('\n');
    user_text.push_str(CLOSING);

    PromptBundle {
        system_text: SYSTEM_PROMPT.to_string(),
        user_text,
        presented_options: presented,
        permutation_seed: seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;

    fn example_profile() -> DemographicProfile {
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
    fn rate_formatting() {
        assert_eq!(format_rate(88.0), "88%");
        assert_eq!(format_rate(9.8), "9.8%");
        assert_eq!(format_rate(17.0), "17%");
        assert_eq!(format_rate(-0.25), "-0.2%");
        // exactly ten keeps one decimal
        assert_eq!(format_rate(10.0), "10.0%");
        assert_eq!(format_rate(-10.0), "-10.0%");
        assert_eq!(format_rate(10.4), "10%");
    }

    #[test]
    fn persona_paragraph_matches_example() {
        assert_eq!(
            render_persona_sentence(&example_profile()),
            "You are male, aged 16-24, live in the North of England or Northern Ireland, \
             are upper-middle class and are not working with an income of >\u{a3}45000. \
             You got your A-levels but not a degree and live in a house you rent."
        );
    }

    #[test]
    fn persona_paragraph_pensioner_council_gcse() {
        let profile = DemographicProfile {
            sex: Sex::Female,
            age_band: AgeBand::A65To75,
            income_band: IncomeBand::Under10k,
            housing: Housing::Council,
            social_class: SocialClass::Pensioner,
            education: Education::Gcse,
            region: Region::Scotland,
            work: Work::NotWorking,
        };
        let s = render_persona_sentence(&profile);
        assert!(s.contains("are a pensioner"));
        assert!(s.contains("live in a council house"));
        assert!(s.contains("got your GCSEs but not A-levels"));
        assert!(s.contains("income of <\u{a3}9999"));
    }

    #[test]
    fn undisclosed_income_phrase() {
        let mut profile = example_profile();
        profile.income_band = IncomeBand::Undisclosed;
        assert!(render_persona_sentence(&profile).contains("with an undisclosed income"));
    }

    #[test]
    fn conditioning_main_scenario() {
        let t = TreatmentVector::all_active(17.0, 9.8, 88.0, 5.0);
        assert_eq!(
            render_conditioning(&t),
            "In the last few months, food inflation has been 17% (9.8% in restaurants and cafes), \
             energy price inflation was about 88%. \
             On average the rate of inflation on other goods was about 5.0%."
        );
    }

    #[test]
    fn conditioning_unconditioned_is_empty() {
        assert_eq!(render_conditioning(&TreatmentVector::unconditioned()), "");
    }

    #[test]
    fn conditioning_energy_only() {
        let t = TreatmentVector::unconditioned().with_component(ComponentId::Energy, 76.0);
        assert_eq!(
            render_conditioning(&t),
            "In the last few months, energy price inflation was about 76%."
        );
    }

    #[test]
    fn conditioning_restaurants_without_food() {
        let t = TreatmentVector::unconditioned().with_component(ComponentId::Restaurants, 8.1);
        assert_eq!(
            render_conditioning(&t),
            "In the last few months, inflation in restaurants and cafes has been 8.1%."
        );
    }

    #[test]
    fn scramble_is_deterministic() {
        let labels: Vec<String> = (0..10).map(|i| format!("opt{i}")).collect();
        let a = scramble_options(&labels, 7);
        let b = scramble_options(&labels, 7);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        let mut orig = labels.clone();
        orig.sort();
        assert_eq!(sorted, orig);
    }

    #[test]
    fn scramble_single_element() {
        let labels = vec!["only".to_string()];
        assert_eq!(scramble_options(&labels, 42), labels);
    }

    #[test]
    fn scramble_uniform_over_permutations() {
        // chi-square over all 24 permutations of 4 options
        let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let n = 10_000u64;
        let mut counts = std::collections::HashMap::new();
        for seed in 0..n {
            *counts.entry(scramble_options(&labels, seed)).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = n as f64 / 24.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // critical value of chi-square with 23 df at p = 0.001 is 49.73
        assert!(chi2 < 49.73, "chi2 = {chi2}");
    }

    #[test]
    fn build_prompt_is_pure_and_isolated() {
        let persona = Persona { id: "p1".into(), profile: example_profile(), weight: 1.0 };
        let question = SurveyQuestion::default_for_horizon(0).unwrap();
        let scenario = Scenario {
            name: "main".into(),
            treatment: TreatmentVector::all_active(17.0, 9.8, 88.0, 5.0),
            reference_period: YearMonth::new(2023, 2).unwrap(),
            baseline: TreatmentVector::zeros(),
        };
        let a = build_prompt(&persona, Some(&scenario), &question, 3);
        let b = build_prompt(&persona, Some(&scenario), &question, 3);
        assert_eq!(a, b);

        // every label appears exactly once in the user text
        for label in question.scale.labels() {
            assert_eq!(a.user_text.matches(&format!(". {label}\n")).count(), 1);
        }

        // a different seed changes only the option order
        let c = build_prompt(&persona, Some(&scenario), &question, 4);
        assert_ne!(a.presented_options, c.presented_options);
        let strip = |text: &str| -> Vec<String> {
            text.lines()
                .filter(|l| !l.chars().next().map(|c| c.is_ascii_digit()).unwrap_or(false))
                .map(|l| l.to_string())
                .collect()
        };
        assert_eq!(strip(&a.user_text), strip(&c.user_text));
    }

    #[test]
    fn unconditioned_prompt_drops_conditioning_paragraph() {
        let persona = Persona { id: "p1".into(), profile: example_profile(), weight: 1.0 };
        let question = SurveyQuestion::default_for_horizon(0).unwrap();
        let bundle = build_prompt(&persona, None, &question, 3);
        assert!(!bundle.user_text.contains("In the last few months"));
        assert!(!bundle.user_text.contains("\n\n\n"));
    }

    #[test]
    fn derived_seed_is_stable() {
        let a = derive_seed(42, "persona-1", 0);
        let b = derive_seed(42, "persona-1", 0);
        assert_eq!(a, b);
        assert_ne!(derive_seed(42, "persona-1", 1), a);
        assert_ne!(derive_seed(43, "persona-1", 0), a);
        assert_ne!(derive_seed(42, "persona-2", 0), a);
    }
}
