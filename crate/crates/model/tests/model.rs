use std::fs;

use kgmcq_core::RawSignals;
use kgmcq_core::SIGNAL_NAMES;
use kgmcq_model::ablation::{ablation, default_grid, WATCHED_PAIR};
use kgmcq_model::dataset::{
    assemble_dataset, build_dataset, read_table, split_indices, split_train_test, write_table,
    DEFAULT_OUTLIER_THRESHOLD,
};
use kgmcq_model::importance::{gain_importance, permutation_importance};
use kgmcq_model::metrics::{mae, r2, rmse, spearman};
use kgmcq_model::report::{emit_histogram, emit_reports};
use kgmcq_model::synthetic::planted_dataset;
use kgmcq_model::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raw_row(id: &str, raw: [f64; 9], difficulty: f64) -> RawRow {
    RawRow { mcq_id: id.into(), raw, difficulty, liking: None, responses: None }
}

fn random_rows(n: usize, seed: u64) -> Vec<RawRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut raw = [0.0; 9];
            raw.iter_mut().for_each(|v| *v = rng.gen());
            raw_row(&format!("q{i:03}"), raw, rng.gen_range(0.0..0.9))
        })
        .collect()
}

/// Dataset of 1 informative feature (index 0) and 8 noise features; feature 8 constant.
fn one_informative(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<RawRow> = (0..n)
        .map(|i| {
            let mut raw = [0.0; 9];
            raw.iter_mut().for_each(|v| *v = rng.gen());
            raw[8] = 0.5;
            let d: f64 = 0.1 + 0.8 * raw[0] + rng.gen_range(-0.02..0.02);
            let d = d.clamp(0.0, 1.0);
            raw_row(&format!("q{i:03}"), raw, d)
        })
        .collect();
    build_dataset(&rows, None).unwrap()
}

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn label_is_incorrect_rate_and_threshold_drops_outlier() {
    let s = ResponseSummary { mcq_id: "a".into(), responses: 38, incorrect: 13, liking_mean: None };
    assert!((s.incorrect_rate().unwrap() - 13.0 / 38.0).abs() < 1e-15);
    assert!((s.incorrect_rate().unwrap() - 0.342).abs() < 1e-3);

    let mut rows = random_rows(156, 3);
    rows[77].difficulty = 0.975;
    let ds = build_dataset(&rows, Some(DEFAULT_OUTLIER_THRESHOLD)).unwrap();
    assert_eq!(ds.len(), 155);
    assert_eq!(ds.excluded, vec!["q077".to_string()]);
    assert_eq!(build_dataset(&rows, None).unwrap().len(), 156);
    assert!(build_dataset(&[raw_row("x", [0.0; 9], 1.2)], None).is_err());
}

#[test]
fn zero_response_questions_are_left_out() {
    let sig = RawSignals {
        reasoning: 1,
        extra_triple: 0,
        distractor_depth: 1.5,
        node_embed_sim: 0.3,
        text_embed_sim: 1.1,
        degree_centrality: 4.0,
        readability: 60.0,
        above_largest_gap_count: 1,
        llm_extra_fact: Some(0),
    };
    let signals: Vec<(String, RawSignals)> = (0..3).map(|i| (format!("m{i}"), sig)).collect();
    let responses = vec![
        ResponseSummary { mcq_id: "m0".into(), responses: 4, incorrect: 1, liking_mean: Some(0.5) },
        ResponseSummary { mcq_id: "m1".into(), responses: 0, incorrect: 0, liking_mean: None },
    ];
    let mut warnings = Vec::new();
    let ds = assemble_dataset(&signals, &responses, None, &mut warnings).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.rows[0].label, 0.25);
    assert_eq!(warnings.len(), 2);
}

#[test]
fn split_sizes_partition_and_determinism() {
    let (tr, te) = split_indices(155, 0.8, 42).unwrap();
    assert_eq!((tr.len(), te.len()), (124, 31));
    let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..155).collect::<Vec<_>>());
    assert_eq!(split_indices(155, 0.8, 42).unwrap(), (tr, te));
    let (a, b) = split_indices(100, 0.8, 1).unwrap();
    assert_eq!((a.len(), b.len()), (80, 20));
    assert!(matches!(split_indices(4, 0.8, 1), Err(ModelError::TooFewRows { need: 5, got: 4 })));
}

#[test]
fn ols_recovers_planted_nine_feature_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let beta = [0.3, -1.2, 0.05, 2.0, 0.0, -0.7, 1.5, 0.25, -0.4];
    let x: Vec<Vec<f64>> = (0..200).map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| 0.8 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).collect();
    let m = LinearModel::fit(&x, &y);
    for (c, b) in m.coefficients.iter().zip(&beta) {
        assert!((c - b).abs() < 1e-6, "{c} vs {b}");
    }
    assert!((m.intercept - 0.8).abs() < 1e-6);
}

#[test]
fn gbt_with_zero_rate_or_zero_stages_is_the_mean_model() {
    let ds = planted_dataset(80, 0.05, 5).unwrap();
    let (x, y) = (ds.x(), ds.y());
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let zero_rate = GradientBoosting::fit(&x, &y, &GbtParams { learning_rate: 0.0, ..Default::default() });
    let no_stages = GradientBoosting::fit(&x, &y, &GbtParams { n_stages: 0, ..Default::default() });
    for row in &x {
        assert_eq!(zero_rate.predict(row), mean);
        assert_eq!(no_stages.predict(row), mean);
    }
}

#[test]
fn gbt_learns_monotone_single_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen::<f64>()]).collect();
    let y: Vec<f64> = x.iter().map(|r| r[0].sqrt() + rng.gen_range(-0.03..0.03)).collect();
    let m = GradientBoosting::fit(&x[..160], &y[..160], &GbtParams { n_stages: 50, ..Default::default() });
    let pred: Vec<f64> = x[160..].iter().map(|r| m.predict(r)).collect();
    assert!(r2(&pred, &y[160..]).unwrap() >= 0.8);
}

#[test]
fn forest_fits_training_data_and_is_seeded() {
    let ds = planted_dataset(200, 0.05, 8).unwrap();
    let m = fit_model(ModelKind::RandomForest, &ds, 42).unwrap();
    let pred: Vec<f64> = m.predict_all(&ds).unwrap().iter().map(|p| p.value).collect();
    assert!(r2(&pred, &ds.y()).unwrap() >= 0.9);
    let again = fit_model(ModelKind::RandomForest, &ds, 42).unwrap();
    assert_eq!(m, again);

    let single = ds.subset(&[3]);
    let m = fit_model(ModelKind::RandomForest, &single, 1).unwrap();
    let p0 = m.predict_raw(&ds.rows[0].features).unwrap();
    assert!((p0 - ds.rows[3].label).abs() < 1e-12);
    assert_eq!(m.predict_raw(&ds.rows[9].features).unwrap(), p0);
}

#[test]
fn zero_weight_linear_predicts_intercept_everywhere() {
    let m = FittedModel {
        kind: ModelKind::Linear,
        feature_names: SIGNAL_NAMES.iter().map(|s| s.to_string()).collect(),
        regressor: Regressor::Linear(LinearModel { coefficients: vec![0.0; 9], intercept: 0.34, regularized: false }),
    };
    for v in [0.0, 0.5, 10.0] {
        assert_eq!(m.predict(&[v; 9]).unwrap().value, 0.34);
    }
    assert!(m.predict(&[0.0; 8]).is_err());
}

#[test]
fn golden_gbt_prediction() {
    let ds = planted_dataset(120, 0.05, 2024).unwrap();
    let m = fit_model(ModelKind::Gbt, &ds, 42).unwrap();
    let p = m.predict_raw(&[0.25, 0.5, 0.75, 0.1, 0.9, 0.3, 0.6, 0.4, 0.2]).unwrap();
    let golden = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/golden/model_prediction.json");
    if std::env::var_os("KGMCQ_BLESS").is_some() {
        fs::write(golden, format!("{}\n", serde_json::json!({ "gbt_seed42": p }))).unwrap();
    }
    let frozen: serde_json::Value = serde_json::from_str(&fs::read_to_string(golden).unwrap()).unwrap();
    assert_eq!(frozen["gbt_seed42"].as_f64().unwrap(), p);
}

#[test]
fn evaluation_edge_cases() {
    let ds = planted_dataset(40, 0.05, 1).unwrap();
    let m = fit_model(ModelKind::Linear, &ds, 0).unwrap();
    let r = evaluate(&m, &ds, ds.len(), 0, &[]).unwrap();
    assert!(r.rmse >= r.mae && r.mae >= 0.0);
    assert_eq!(r.points.len(), 40);
    let mut constant = ds.clone();
    constant.rows.iter_mut().for_each(|r| r.label = 0.4);
    assert_eq!(evaluate(&m, &constant, 0, 0, &[]).unwrap().r2, None);
    assert!(matches!(evaluate(&m, &ds.subset(&[]), 0, 0, &[]), Err(ModelError::EmptyTest)));
}

#[test]
fn gain_importance_prefers_the_informative_feature() {
    let ds = one_informative(300, 4);
    let m = fit_model(ModelKind::Gbt, &ds, 42).unwrap();
    let imp = gain_importance(&m).unwrap();
    let total: f64 = imp.iter().map(|f| f.value).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(imp.iter().all(|f| f.value >= 0.0));
    assert_eq!(imp[0].feature, "Reasoning");
    assert!(imp[0].value > 0.5);
    assert_eq!(imp[8].value, 0.0);
    assert!(gain_importance(&fit_model(ModelKind::Linear, &ds, 0).unwrap()).is_none());

    let mut flat = ds.clone();
    flat.rows.iter_mut().for_each(|r| r.label = 0.3);
    let stump = fit_model(ModelKind::Gbt, &flat, 0).unwrap();
    assert!(gain_importance(&stump).unwrap().iter().all(|f| f.value == 0.0));
}

#[test]
fn permutation_importance_ranks_and_repeats() {
    let ds = one_informative(300, 6);
    let (train, test) = split_train_test(&ds, 0.8, 42).unwrap();
    let m = fit_model(ModelKind::RandomForest, &train, 42).unwrap();
    let imp = permutation_importance(&m, &test, 7).unwrap();
    let top = imp.iter().max_by(|a, b| a.value.total_cmp(&b.value)).unwrap();
    assert_eq!(top.feature, "Reasoning");
    assert!(imp[8].value.abs() < 1e-12);
    assert_eq!(imp, permutation_importance(&m, &test, 7).unwrap());
}

#[test]
fn ablation_grid_shape_and_baseline() {
    let ds = planted_dataset(100, 0.05, 13).unwrap();
    let grid = default_grid(&ds.feature_names);
    assert_eq!(grid.len(), 14);
    let run = ablation(&ds, &grid, ModelKind::Gbt, 42).unwrap();
    assert_eq!(run.entries.len(), 14);
    assert_eq!(run.entries[0].report, run.baseline);
    let (train, test) = split_train_test(&ds, 0.8, 42).unwrap();
    let direct = evaluate(&fit_model(ModelKind::Gbt, &train, 42).unwrap(), &test, train.len(), 42, &[]).unwrap();
    assert_eq!(direct, run.baseline);
    assert!(run.find(&WATCHED_PAIR).is_some());
    assert!(run.watched_pair_holds().is_some());
    // removing an informative feature hurts
    assert!(run.find(&["Reasoning"]).unwrap().report.rmse > run.baseline.rmse);

    let all: Vec<String> = ds.feature_names.clone();
    assert!(matches!(ablation(&ds, &[all], ModelKind::Linear, 1), Err(ModelError::NoFeatures)));
    assert!(matches!(ablation(&ds, &[vec!["Bogus".into()]], ModelKind::Linear, 1), Err(ModelError::UnknownFeature(_))));
}

#[test]
fn reports_are_written_deterministically() {
    let ds = planted_dataset(60, 0.05, 21).unwrap();
    let (train, test) = split_train_test(&ds, 0.8, 42).unwrap();
    let reports: Vec<ModelReport> = ModelKind::ALL
        .iter()
        .map(|&k| evaluate(&fit_model(k, &train, 42).unwrap(), &test, train.len(), 42, &[]).unwrap())
        .collect();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = emit_reports(&reports, a.path()).unwrap();
    emit_reports(&reports, b.path()).unwrap();
    assert_eq!(files.len(), 6);
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
    let points: Vec<_> = files.iter().filter(|f| f.to_string_lossy().contains("points_")).collect();
    assert_eq!(points.len(), 4);
    let table = fs::read_to_string(a.path().join("metrics.txt")).unwrap();
    let pct = format!("{:.1}%", reports[2].spearman.unwrap() * 100.0);
    assert!(table.contains(&pct), "{table}");
    let back: Vec<ModelReport> =
        serde_json::from_str(&fs::read_to_string(a.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(back[1].rmse, reports[1].rmse);
}

#[test]
fn histogram_counts() {
    let dir = tempfile::tempdir().unwrap();
    let h = emit_histogram(&[0.5; 7], &dir.path().join("h.json")).unwrap();
    assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(h.counts[10], 7);
    assert!(emit_histogram(&[], &dir.path().join("e.json")).is_err());
}

#[test]
fn table_roundtrip_and_lenient_headers() {
    let dir = tempfile::tempdir().unwrap();
    let rows = random_rows(8, 2);
    let p = dir.path().join("t.csv");
    write_table(&p, &rows).unwrap();
    assert_eq!(read_table(&p).unwrap(), rows);

    let alt = dir.path().join("alt.csv");
    let header = "Question ID,Signal Reasoning,extra_triple,Distractor Depth,Node Embedding Similarity,\
                  text_embed_sim,Degree Centrality,Flesch Reading Ease,above_largest_gap_count,LLM Extra Fact,\
                  Incorrect Answer Rate,Liking Score";
    fs::write(&alt, format!("{header}\nq1,1,0,1.5,0.2,0.3,4,55.5,2,1,0.4,66\nq2,0,1,2,0.1,0.9,3,70,1,0,0.2,50\n"))
        .unwrap();
    let got = read_table(&alt).unwrap();
    assert_eq!(got[0].mcq_id, "q1");
    assert_eq!(got[0].raw, [1.0, 0.0, 1.5, 0.2, 0.3, 4.0, 55.5, 2.0, 1.0]);
    assert_eq!(got[0].difficulty, 0.4);
    assert_eq!(got[0].liking, Some(0.66));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "mcq_id,Reasoning\nq,1\n").unwrap();
    assert!(matches!(read_table(&bad), Err(ModelError::MissingColumn(_))));
}

proptest! {
    #[test]
    fn spearman_matches_brute_force(
        a in prop::collection::vec(0u8..6, 3..40),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = a.iter().map(|_| (rng.gen_range(0..8) as f64) / 2.0).collect();
        let (ra, rb) = (brute_ranks(&a), brute_ranks(&b));
        let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
        match spearman(&a, &b) {
            None => prop_assert!(constant(&a) || constant(&b)),
            Some(s) => prop_assert!((s - brute_pearson(&ra, &rb)).abs() < 1e-12),
        }
    }

    #[test]
    fn rmse_dominates_mae(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50)) {
        let (p, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let (r, m) = (rmse(&p, &y), mae(&p, &y));
        prop_assert!(r + 1e-12 >= m);
        let bf = (p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64).sqrt();
        prop_assert!((r - bf).abs() < 1e-12);
    }

    #[test]
    fn split_is_a_partition(n in 5usize..300, seed in any::<u64>()) {
        let (tr, te) = split_indices(n, 0.8, seed).unwrap();
        prop_assert_eq!(tr.len(), (n as f64 * 0.8).floor() as usize);
        let mut all: Vec<usize> = tr.into_iter().chain(te).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
