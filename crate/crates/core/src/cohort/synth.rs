//! Seeded synthetic cohort standing in for the private clinical registry.
//!
//! The generator draws a representative set of trauma, screening and revision
//! features, computes a ground-truth risk from a logistic function with a
//! pairwise interaction (smoking x diabetes) and a thresholded term (CRP above
//! 10 mg/l), solves the intercept so the mean risk equals the target
//! incidence, draws outcomes from that risk, and finally blanks predictor
//! cells completely at random.

use chrono::{Duration, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Cell, CohortError, Dataset, FeatureSchema, FeatureSpec, PatientRecord};
use crate::matrix::sigmoid;
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};

/// Coefficients of the ground-truth log-odds (before `signal_scale`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskCoefficients {
    pub infection: f64,
    pub smoker: f64,
    pub diabetes: f64,
    /// Extra log-odds when a smoker also has diabetes.
    pub smoker_x_diabetes: f64,
    /// Step added when CRP exceeds `crp_threshold`.
    pub crp_high: f64,
    pub crp_threshold: f64,
    /// Per Weber-Cech level (hypertrophic = 0 .. atrophic = 2).
    pub weber_cech_level: f64,
    pub previous_surgery: f64,
    /// Per decade of age above 50.
    pub age_decade: f64,
    pub obesity: f64,
    pub bone_graft: f64,
    pub soft_tissue_level: f64,
    pub instability_level: f64,
    pub tibia: f64,
    /// Per 100 days between fracture and revision.
    pub revision_delay_100d: f64,
    pub low_hemoglobin: f64,
    pub corticosteroids: f64,
}

impl Default for RiskCoefficients {
    fn default() -> Self {
        Self {
            infection: 1.0,
            smoker: 0.5,
            diabetes: 0.4,
            smoker_x_diabetes: 1.2,
            crp_high: 1.2,
            crp_threshold: 10.0,
            weber_cech_level: 0.45,
            previous_surgery: 0.3,
            age_decade: 0.15,
            obesity: 0.4,
            bone_graft: -0.6,
            soft_tissue_level: 0.4,
            instability_level: 0.3,
            tibia: 0.3,
            revision_delay_100d: 0.1,
            low_hemoglobin: 0.5,
            corticosteroids: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Mean ground-truth risk (the expected failed-healing incidence).
    pub target_incidence: f64,
    /// Expected fraction of Missing cells among all predictor cells. The
    /// fracture date is never blanked, so the remaining cells are blanked at a
    /// slightly higher per-cell rate.
    pub missing_rate: f64,
    /// Multiplier on every risk coefficient.
    pub signal_scale: f64,
    pub risk: RiskCoefficients,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { target_incidence: 0.3877, missing_rate: 0.166, signal_scale: 1.0, risk: RiskCoefficients::default() }
    }
}

const OUTCOME: &str = "failed_healing";
const FRACTURE_DATE: &str = "fracture_date";

const COMORBIDITIES: [(&str, f64); 7] = [
    ("diabetes", 0.15),
    ("lung_disease", 0.10),
    ("renal_disease", 0.06),
    ("cardiovascular_disease", 0.20),
    ("peripheral_artery_disease", 0.05),
    ("osteoporosis", 0.08),
    ("rheumatoid_arthritis", 0.04),
];
const MEDICATIONS: [(&str, f64); 6] = [
    ("nsaids", 0.30),
    ("corticosteroids", 0.08),
    ("bisphosphonates", 0.06),
    ("anticoagulants", 0.15),
    ("opioids", 0.20),
    ("immunosuppressants", 0.04),
];
const LOCATIONS: [(&str, f64); 6] = [
    ("femur", 0.30),
    ("tibia", 0.35),
    ("humerus", 0.15),
    ("radius_ulna", 0.10),
    ("fibula", 0.05),
    ("clavicle", 0.05),
];
const PRIMARY_FIXATION: [(&str, f64); 6] = [
    ("plate", 0.40),
    ("intramedullary_nail", 0.35),
    ("external_fixator", 0.10),
    ("screws", 0.07),
    ("k_wires", 0.04),
    ("conservative", 0.04),
];
const REVISION_FIXATION: [(&str, f64); 5] = [
    ("plate", 0.35),
    ("intramedullary_nail", 0.30),
    ("external_fixator", 0.10),
    ("double_plating", 0.15),
    ("nail_plus_plate", 0.10),
];
const OPEN_FRACTURE: [&str; 4] = ["closed", "gustilo_1", "gustilo_2", "gustilo_3"];
const WEBER_CECH: [&str; 3] = ["hypertrophic", "oligotrophic", "atrophic"];
const STABILITY: [&str; 3] = ["stable", "partially_unstable", "unstable"];
const SOFT_TISSUE: [&str; 3] = ["intact", "compromised", "defect"];
const ASA: [&str; 4] = ["asa_1", "asa_2", "asa_3", "asa_4"];

fn names<T>(items: &[(&'static str, T)]) -> Vec<&'static str> {
    items.iter().map(|(n, _)| *n).collect()
}

/// Representative schema of the synthetic cohort (34 predictors plus the outcome).
pub fn synthetic_schema() -> FeatureSchema {
    let features = vec![
        FeatureSpec::boolean(OUTCOME),
        FeatureSpec::date(FRACTURE_DATE),
        FeatureSpec::continuous("age"),
        FeatureSpec::categorical("sex", &["female", "male"]),
        FeatureSpec::continuous("bmi"),
        FeatureSpec::boolean("smoker"),
        FeatureSpec::boolean("alcohol_abuse"),
        FeatureSpec::multi_categorical("comorbidities", &names(&COMORBIDITIES)),
        FeatureSpec::categorical("fracture_location", &names(&LOCATIONS)),
        FeatureSpec::ordinal("open_fracture", &OPEN_FRACTURE),
        FeatureSpec::interval("injury_severity_score"),
        FeatureSpec::date("primary_surgery_date"),
        FeatureSpec::categorical("primary_fixation", &names(&PRIMARY_FIXATION)),
        FeatureSpec::date("nonunion_diagnosis_date"),
        FeatureSpec::ordinal("weber_cech", &WEBER_CECH),
        FeatureSpec::ordinal("biomechanical_stability", &STABILITY),
        FeatureSpec::ordinal("soft_tissue_status", &SOFT_TISSUE),
        FeatureSpec::boolean("infection"),
        FeatureSpec::interval("previous_surgeries"),
        FeatureSpec::continuous("defect_size_mm"),
        FeatureSpec::continuous("hemoglobin"),
        FeatureSpec::continuous("crp"),
        FeatureSpec::continuous("leukocytes"),
        FeatureSpec::continuous("albumin"),
        FeatureSpec::continuous("vitamin_d"),
        FeatureSpec::continuous("hba1c"),
        FeatureSpec::multi_categorical("medications", &names(&MEDICATIONS)),
        FeatureSpec::date("revision_date"),
        FeatureSpec::categorical("revision_fixation", &names(&REVISION_FIXATION)),
        FeatureSpec::boolean("autologous_bone_graft"),
        FeatureSpec::boolean("growth_factors"),
        FeatureSpec::boolean("antibiotic_treatment"),
        FeatureSpec::boolean("masquelet_technique"),
        FeatureSpec::ordinal("asa_score", &ASA),
        FeatureSpec::interval("pain_score"),
    ];
    FeatureSchema::new(features, OUTCOME, FRACTURE_DATE).expect("synthetic schema is valid")
}

fn pick<'a>(rng: &mut Rng, items: &[(&'a str, f64)]) -> (usize, &'a str) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, (name, p)) in items.iter().enumerate() {
        acc += p;
        if u < acc {
            return (i, name);
        }
    }
    let last = items.len() - 1;
    (last, items[last].0)
}

fn pick_level(rng: &mut Rng, levels: &[&str], probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    levels.len() - 1
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn days(rng: &mut Rng, lo: i64, hi: i64) -> Duration {
    Duration::days(rng.random_range(lo..=hi))
}

/// Generate `n` patients plus each patient's ground-truth failure risk.
pub fn generate_synthetic_cohort(
    n: usize,
    seed: u64,
    config: &SyntheticConfig,
) -> Result<(Dataset, Vec<f64>), CohortError> {
    let invalid = |m: String| CohortError::InvalidConfig(m);
    if n < 20 {
        return Err(invalid(format!("cohort size {n} is below the minimum of 20")));
    }
    if !(config.target_incidence > 0.0 && config.target_incidence < 1.0) {
        return Err(invalid("target incidence must lie in (0, 1)".into()));
    }
    if !(config.missing_rate >= 0.0 && config.missing_rate < 1.0) {
        return Err(invalid("missing rate must lie in [0, 1)".into()));
    }
    if !config.signal_scale.is_finite() {
        return Err(invalid("signal scale must be finite".into()));
    }
    let schema = synthetic_schema();
    let predictors = schema.predictor_indices().count();
    // The fracture date is one of the predictors and is never blanked.
    let cell_rate = config.missing_rate * predictors as f64 / (predictors - 1) as f64;
    if cell_rate >= 1.0 {
        return Err(invalid("missing rate too high for the number of blankable features".into()));
    }

    let mut rng = rng_from_seed(derive_seed(seed, stream::SYNTH, 0));
    let mut records = Vec::with_capacity(n);
    let mut linear = Vec::with_capacity(n);
    let start = NaiveDate::from_ymd_opt(2009, 1, 1).unwrap();
    let c = &config.risk;
    let s = config.signal_scale;

    for _ in 0..n {
        let fracture = start + days(&mut rng, 0, 4700);
        let age = Normal::<f64>::new(52.0, 17.0).unwrap().sample(&mut rng).clamp(18.0, 95.0);
        let male = rng.random_bool(0.62);
        let bmi = Normal::<f64>::new(27.5, 5.0).unwrap().sample(&mut rng).clamp(16.0, 50.0);
        let smoker = rng.random_bool(0.33);
        let alcohol = rng.random_bool(if smoker { 0.2 } else { 0.08 });
        let comorb: Vec<bool> = COMORBIDITIES.iter().map(|(_, p)| rng.random_bool(*p)).collect();
        let diabetes = comorb[0];
        let (loc_idx, location) = pick(&mut rng, &LOCATIONS);
        let open = pick_level(&mut rng, &OPEN_FRACTURE, &[0.65, 0.12, 0.12, 0.11]);
        let iss = (4.0 + Poisson::new(9.0).unwrap().sample(&mut rng) + 4.0 * open as f64).min(75.0);
        let primary = fracture + days(&mut rng, 0, 10);
        let (_, primary_fix) = pick(&mut rng, &PRIMARY_FIXATION);
        let diagnosis = primary + days(&mut rng, 180, 540);
        let weber = pick_level(&mut rng, &WEBER_CECH, &[0.35, 0.25, 0.40]);
        let stability = pick_level(&mut rng, &STABILITY, &[0.4, 0.35, 0.25]);
        let soft = pick_level(&mut rng, &SOFT_TISSUE, &[0.6, 0.28, 0.12]);
        let infection = rng.random_bool(if open >= 2 { 0.4 } else { 0.18 });
        let prev_surg = 1.0 + Poisson::new(1.2).unwrap().sample(&mut rng);
        let defect = round1(Exp::new(0.1).unwrap().sample(&mut rng));
        let hemoglobin = round1(Normal::<f64>::new(13.2, 1.6).unwrap().sample(&mut rng).clamp(7.0, 18.0));
        let crp_base = LogNormal::<f64>::new(6f64.ln(), 0.9).unwrap().sample(&mut rng);
        let crp = round1(if infection { crp_base * 2.5 } else { crp_base }.min(300.0));
        let leuko = round1(Normal::<f64>::new(if infection { 9.5 } else { 7.8 }, 2.2).unwrap().sample(&mut rng).max(2.0));
        let albumin = round1(Normal::<f64>::new(40.0, 5.0).unwrap().sample(&mut rng).clamp(20.0, 55.0));
        let vitd = round1(LogNormal::<f64>::new(22f64.ln(), 0.5).unwrap().sample(&mut rng));
        let hba1c = round1(Normal::<f64>::new(if diabetes { 7.6 } else { 5.5 }, 0.6).unwrap().sample(&mut rng));
        let meds: Vec<bool> = MEDICATIONS.iter().map(|(_, p)| rng.random_bool(*p)).collect();
        let revision = diagnosis + days(&mut rng, 7, 120);
        let (_, revision_fix) = pick(&mut rng, &REVISION_FIXATION);
        let graft = rng.random_bool(0.55);
        let growth = rng.random_bool(0.15);
        let antibiotic = rng.random_bool(if infection { 0.85 } else { 0.15 });
        let masquelet = rng.random_bool(if defect > 20.0 { 0.4 } else { 0.04 });
        let asa = pick_level(&mut rng, &ASA, &[0.2, 0.45, 0.3, 0.05]);
        let pain = rng.random_range(0..=10) as f64;

        let delay = (revision - fracture).num_days() as f64;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let eta = s
            * (c.infection * flag(infection)
                + c.smoker * flag(smoker)
                + c.diabetes * flag(diabetes)
                + c.smoker_x_diabetes * flag(smoker && diabetes)
                + c.crp_high * flag(crp > c.crp_threshold)
                + c.weber_cech_level * weber as f64
                + c.previous_surgery * prev_surg
                + c.age_decade * (age - 50.0) / 10.0
                + c.obesity * flag(bmi > 30.0)
                + c.bone_graft * flag(graft)
                + c.soft_tissue_level * soft as f64
                + c.instability_level * stability as f64
                + c.tibia * flag(loc_idx == 1)
                + c.revision_delay_100d * delay / 100.0
                + c.low_hemoglobin * flag(hemoglobin < 12.0)
                + c.corticosteroids * flag(meds[1]));
        linear.push(eta);

        let set = |flags: &[bool], items: &[(&str, f64)]| {
            Cell::CategorySet(
                items.iter().zip(flags).filter(|(_, &f)| f).map(|((n, _), _)| n.to_string()).collect(),
            )
        };
        let values = vec![
            Cell::Bool(false),
            Cell::Date(fracture),
            Cell::Number(round1(age)),
            Cell::Category(if male { "male" } else { "female" }.into()),
            Cell::Number(round1(bmi)),
            Cell::Bool(smoker),
            Cell::Bool(alcohol),
            set(&comorb, &COMORBIDITIES),
            Cell::Category(location.into()),
            Cell::Category(OPEN_FRACTURE[open].into()),
            Cell::Number(iss),
            Cell::Date(primary),
            Cell::Category(primary_fix.into()),
            Cell::Date(diagnosis),
            Cell::Category(WEBER_CECH[weber].into()),
            Cell::Category(STABILITY[stability].into()),
            Cell::Category(SOFT_TISSUE[soft].into()),
            Cell::Bool(infection),
            Cell::Number(prev_surg),
            Cell::Number(defect),
            Cell::Number(hemoglobin),
            Cell::Number(crp),
            Cell::Number(leuko),
            Cell::Number(albumin),
            Cell::Number(vitd),
            Cell::Number(hba1c),
            set(&meds, &MEDICATIONS),
            Cell::Date(revision),
            Cell::Category(revision_fix.into()),
            Cell::Bool(graft),
            Cell::Bool(growth),
            Cell::Bool(antibiotic),
            Cell::Bool(masquelet),
            Cell::Category(ASA[asa].into()),
            Cell::Number(pain),
        ];
        debug_assert_eq!(values.len(), schema.len());
        records.push(PatientRecord { values });
    }

    let intercept = solve_intercept(&linear, config.target_incidence);
    let risk: Vec<f64> = linear.iter().map(|eta| sigmoid(intercept + eta)).collect();

    let mut outcome_rng = rng_from_seed(derive_seed(seed, stream::SYNTH, 1));
    let outcomes: Vec<bool> = risk.iter().map(|&p| outcome_rng.random::<f64>() < p).collect();

    let mut missing_rng = rng_from_seed(derive_seed(seed, stream::SYNTH, 2));
    let blankable: Vec<usize> = schema
        .predictor_indices()
        .filter(|&i| i != schema.fracture_date_index())
        .collect();
    if cell_rate > 0.0 {
        for rec in &mut records {
            for &i in &blankable {
                if missing_rng.random::<f64>() < cell_rate {
                    rec.values[i] = Cell::Missing;
                }
            }
        }
    }

    let dataset = Dataset::new(schema, records, outcomes)?;
    Ok((dataset, risk))
}

/// Intercept `b` such that `mean(sigmoid(b + eta)) == target`, by bisection.
fn solve_intercept(eta: &[f64], target: f64) -> f64 {
    let mean_risk = |b: f64| eta.iter().map(|e| sigmoid(b + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_risk(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
