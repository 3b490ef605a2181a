use ghi_core::artifact::Artifact;
use ghi_core::copula::Family;
use ghi_core::scenario::{simulate, HistoricalSimulation, Simulator, Variant};
use ghi_core::scoring::Rule;
use ghi_core::synthetic::{generate_panel, truth_bundle, SyntheticConfig};
use ghi_core::{evaluate, fit_all, EvalConfig, Error, FitConfig, FittedModel, ScenarioSource};

fn setup() -> (ghi_core::ModelBundle, ghi_core::HourlyPanel, ghi_core::HourlyPanel) {
    let cfg = SyntheticConfig::default();
    let truth = truth_bundle(&cfg).unwrap();
    let panel = generate_panel(&truth, &cfg.site, 2005, 8, 21).unwrap();
    (truth, panel.slice_years(0, 5).unwrap(), panel.slice_years(5, 8).unwrap())
}

#[test]
fn truth_beats_historical_and_reference_is_one() {
    let (truth, learn, test) = setup();
    let eval = EvalConfig { spread_members: 100, ..EvalConfig::default() };
    let sim = Simulator::new(&truth, 200, 3).unwrap();
    let hs = HistoricalSimulation::new(&learn, 200, 3);
    let rep = evaluate(&[("truth", &sim as &dyn ScenarioSource), ("HS", &hs)], &test, &truth.bounds, &eval).unwrap();
    assert_eq!(rep.reference, "HS");
    for r in Rule::ALL {
        assert_eq!(rep.normalized_score("HS", r).unwrap(), 1.0);
    }
    assert!(rep.normalized_score("truth", Rule::CrpsH).unwrap() < 1.0);
    assert!(rep.normalized_score("truth", Rule::Es).unwrap() < 1.0);
    assert_eq!(rep.losses[0][0].len(), 3 * 365);

    let mut csv = Vec::new();
    rep.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("model,rule,score_normalized,dm_vs_best_p\n"));
    assert_eq!(text.lines().count(), 11);
    assert!(rep.table().contains("CRPS-U"));
}

#[test]
fn independent_days_lose_on_weekly_totals() {
    let (truth, _, test) = setup();
    let eval = EvalConfig { spread_members: 100, ..EvalConfig::default() };
    let c1 = truth.with_variant(Variant::C1);
    let (s2, s1) = (Simulator::new(&truth, 300, 4).unwrap(), Simulator::new(&c1, 300, 4).unwrap());
    let rep = evaluate(&[("C2", &s2 as &dyn ScenarioSource), ("C1", &s1)], &test, &truth.bounds, &eval).unwrap();
    assert!(rep.raw_score("C2", Rule::CrpsW).unwrap() < rep.raw_score("C1", Rule::CrpsW).unwrap());
}

struct Broken;

impl ScenarioSource for Broken {
    fn count(&self) -> usize {
        4
    }
    fn day(&self, _d: usize) -> ghi_core::Result<Vec<[f64; 24]>> {
        Ok(vec![[0.0; 24]; 2])
    }
}

#[test]
fn malformed_source_is_rejected() {
    let (truth, _, test) = setup();
    let r = evaluate(&[("bad", &Broken as &dyn ScenarioSource)], &test, &truth.bounds, &EvalConfig::default());
    assert!(matches!(r, Err(Error::HorizonMismatch(_))));
}

#[test]
fn fitted_model_survives_artifact_round_trip() {
    let (_, learn, _) = setup();
    let fit = fit_all(&learn, &FitConfig::default()).unwrap();
    let text = Artifact::new("fit", "h", &fit).to_json().unwrap();
    let back: Artifact<FittedModel> = Artifact::from_json("fit", &text).unwrap();
    assert_eq!(back.payload.dependence, fit.dependence);
    assert_eq!(back.payload.marginals, fit.marginals);
    let b = back.payload.bundle(Family::Gumbel, Variant::C2).unwrap();
    let (x, y) = (simulate(&b, 2, 9).unwrap(), simulate(&fit.bundle(Family::Gumbel, Variant::C2).unwrap(), 2, 9).unwrap());
    assert_eq!(x.values, y.values);
}
