use super::*;
use alloc::string::ToString;
use alloc::vec;
use proptest::prelude::*;

fn gauss(rng: &mut SeededRng) -> f64 {
    // Box-Muller
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
}

fn cluster(rng: &mut SeededRng, center: &[f64], sigma: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| center.iter().map(|c| c + sigma * gauss(rng)).collect()).collect()
}

fn diag(weight: f64, mean: &[f64], var: &[f64]) -> GaussianComponent {
    GaussianComponent { weight, mean: mean.to_vec(), covariance: Covariance::Diagonal(var.to_vec()) }
}

fn full(weight: f64, mean: &[f64], cov: &[f64]) -> GaussianComponent {
    GaussianComponent { weight, mean: mean.to_vec(), covariance: Covariance::Full(cov.to_vec()) }
}

/// Determinant and inverse by cofactor expansion, dims 1..=3 only.
fn det_inv(m: &[f64], n: usize) -> (f64, Vec<f64>) {
    match n {
        1 => (m[0], vec![1.0 / m[0]]),
        2 => {
            let d = m[0] * m[3] - m[1] * m[2];
            (d, vec![m[3] / d, -m[1] / d, -m[2] / d, m[0] / d])
        }
        3 => {
            let c = |r: usize, col: usize| m[r * 3 + col];
            let cof = |r: usize, col: usize| {
                let rows: Vec<usize> = (0..3).filter(|&i| i != r).collect();
                let cols: Vec<usize> = (0..3).filter(|&i| i != col).collect();
                let minor = c(rows[0], cols[0]) * c(rows[1], cols[1]) - c(rows[0], cols[1]) * c(rows[1], cols[0]);
                if (r + col).is_multiple_of(2) {
                    minor
                } else {
                    -minor
                }
            };
            let d = c(0, 0) * cof(0, 0) + c(0, 1) * cof(0, 1) + c(0, 2) * cof(0, 2);
            let mut inv = vec![0.0; 9];
            for r in 0..3 {
                for col in 0..3 {
                    inv[col * 3 + r] = cof(r, col) / d;
                }
            }
            (d, inv)
        }
        _ => unreachable!(),
    }
}

/// Direct `log Σ w N(x)` without any log-space tricks.
fn brute_force_log_density(model: &ClassModel, x: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for c in &model.components {
        let m = match &c.covariance {
            Covariance::Diagonal(v) => {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    m[i * n + i] = v[i];
                }
                m
            }
            Covariance::Full(m) => m.clone(),
        };
        let (det, inv) = det_inv(&m, n);
        let d: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += d[i] * inv[i * n + j] * d[j];
            }
        }
        let norm = (2.0 * core::f64::consts::PI).powi(n as i32) * det;
        total += c.weight * (-0.5 * quad).exp() / norm.sqrt();
    }
    total.ln()
}

fn class(label: &str, components: Vec<GaussianComponent>) -> ClassModel {
    ClassModel { label: label.to_string(), components }
}

#[test]
fn standard_normal_at_mean() {
    let m = class("a", vec![diag(1.0, &[0.0, 0.0], &[1.0, 1.0])]);
    let got = log_density(&m, &[0.0, 0.0]).unwrap();
    assert!((got - (-(2.0 * core::f64::consts::PI).ln())).abs() < 1e-15);
    assert!((got + 1.837877).abs() < 1e-6);
}

#[test]
fn two_component_mixture_matches_direct_sum() {
    let m = class("a", vec![diag(0.3, &[0.0, 1.0], &[0.5, 2.0]), diag(0.7, &[2.0, -1.0], &[1.5, 0.25])]);
    for x in [[0.0, 0.0], [1.0, 1.0], [2.0, -1.0], [-3.0, 4.0]] {
        assert!((log_density(&m, &x).unwrap() - brute_force_log_density(&m, &x)).abs() < 1e-10);
    }
}

#[test]
fn far_pose_stays_finite() {
    let m = class("a", vec![diag(1.0, &[0.0; 16], &[1.0; 16])]);
    let x = vec![30.0; 16];
    let v = log_density(&m, &x).unwrap();
    assert!(v.is_finite() && v < -7000.0);
    // both components deep in the tail still combine without underflow
    let m2 = class("b", vec![diag(0.5, &[0.0], &[1.0]), diag(0.5, &[1.0], &[1.0])]);
    let v2 = log_density(&m2, &[40.0]).unwrap();
    assert!(v2.is_finite());
}

#[test]
fn dimension_mismatch() {
    let m = class("a", vec![diag(1.0, &[0.0, 0.0], &[1.0, 1.0])]);
    assert_eq!(log_density(&m, &[0.0]), Err(GmmError::DimensionMismatch { expected: 2, got: 1 }));
}

proptest! {
    #[test]
    fn log_density_matches_brute_force(
        dim in 1usize..=3,
        k in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let mut comps = Vec::new();
        let raw: Vec<f64> = (0..k).map(|_| 0.1 + rng.next_f64()).collect();
        let total: f64 = raw.iter().sum();
        for (j, w) in raw.iter().enumerate() {
            let mean: Vec<f64> = (0..dim).map(|_| 4.0 * rng.next_f64() - 2.0).collect();
            if j % 2 == 0 {
                let var: Vec<f64> = (0..dim).map(|_| 0.2 + 2.0 * rng.next_f64()).collect();
                comps.push(diag(w / total, &mean, &var));
            } else {
                // A = B Bᵀ + 0.5 I is SPD
                let b: Vec<f64> = (0..dim * dim).map(|_| rng.next_f64() - 0.5).collect();
                let mut a = vec![0.0; dim * dim];
                for r in 0..dim {
                    for c in 0..dim {
                        a[r * dim + c] = (0..dim).map(|t| b[r * dim + t] * b[c * dim + t]).sum::<f64>()
                            + if r == c { 0.5 } else { 0.0 };
                    }
                }
                comps.push(full(w / total, &mean, &a));
            }
        }
        let model = class("m", comps);
        let x: Vec<f64> = (0..dim).map(|_| 6.0 * rng.next_f64() - 3.0).collect();
        let got = log_density(&model, &x).unwrap();
        let want = brute_force_log_density(&model, &x);
        prop_assert!((got - want).abs() < 1e-10, "got {} want {}", got, want);
    }
}

fn separated_classifier(n_classes: usize) -> GmmClassifier {
    let classes = (0..n_classes)
        .map(|i| {
            let mut mean = vec![0.0; 16];
            mean[i % 16] = 10.0 * (1 + i / 16) as f64;
            class(&alloc::format!("c{i}"), vec![diag(1.0, &mean, &[1.0; 16])])
        })
        .collect();
    GmmClassifier::new(classes, vec![1.0 / n_classes as f64; n_classes], ReferenceIndices::DEFAULT, None).unwrap()
}

#[test]
fn pose_at_class_mean_wins() {
    let clf = separated_classifier(8);
    for k in 0..8 {
        let x = clf.classes()[k].components[0].mean.clone();
        // brute-force enumeration of all class scores
        let scores: Vec<f64> =
            (0..8).map(|c| clf.priors()[c].ln() + brute_force_log_density_diag16(&clf.classes()[c], &x)).collect();
        let argmax = (0..8).fold(0, |b, c| if scores[c] > scores[b] { c } else { b });
        assert_eq!(argmax, k);
        match clf.classify(&x).unwrap() {
            Classification::Accepted { class, label, score, .. } => {
                assert_eq!(class, k);
                assert_eq!(label, alloc::format!("c{k}"));
                assert!((score - scores[k]).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

fn brute_force_log_density_diag16(model: &ClassModel, x: &[f64]) -> f64 {
    // product of univariate densities, done in log space term by term
    let c = &model.components[0];
    let Covariance::Diagonal(v) = &c.covariance else { unreachable!() };
    x.iter()
        .zip(&c.mean)
        .zip(v)
        .map(|((x, m), s)| -0.5 * ((2.0 * core::f64::consts::PI * s).ln() + (x - m) * (x - m) / s))
        .sum()
}

#[test]
fn ties_go_to_lowest_index() {
    let comp = diag(1.0, &[0.0, 0.0], &[1.0, 1.0]);
    let clf = GmmClassifier::new(
        vec![class("x", vec![comp.clone()]), class("y", vec![comp.clone()]), class("z", vec![comp])],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ReferenceIndices::DEFAULT,
        None,
    );
    // priors of 1/3 each do not sum to exactly 1.0 in binary but are within tolerance
    let clf = clf.unwrap();
    assert_eq!(clf.classify(&[0.3, -0.2]).unwrap().label(), Some("x"));
}

#[test]
fn rejection_threshold() {
    let mut clf = separated_classifier(3);
    let x = clf.classes()[1].components[0].mean.clone();
    clf.set_rejection_log_density(Some(0.0));
    assert!(matches!(clf.classify(&x).unwrap(), Classification::Rejected { class: 1, .. }));
    clf.set_rejection_log_density(Some(-1e6));
    assert_eq!(clf.classify(&x).unwrap().label(), Some("c1"));
}

#[test]
fn classify_dimension_mismatch() {
    let clf = separated_classifier(2);
    assert!(matches!(clf.classify(&[0.0; 3]), Err(GmmError::DimensionMismatch { expected: 16, got: 3 })));
}

proptest! {
    #[test]
    fn prior_scaling_keeps_argmax(seed in any::<u64>(), scale in 1e-3..1e3f64) {
        let mut rng = SeededRng::new(seed);
        let clf = separated_classifier(4);
        let priors: Vec<f64> = (0..4).map(|_| 0.05 + rng.next_f64()).collect();
        let scaled: Vec<f64> = priors.iter().map(|p| p * scale).collect();
        let x: Vec<f64> = (0..16).map(|_| 12.0 * rng.next_f64() - 1.0).collect();
        let a = clf.classify_with_priors(&x, &priors).unwrap();
        let b = clf.classify_with_priors(&x, &scaled).unwrap();
        prop_assert_eq!(a.label(), b.label());
    }
}

#[test]
fn new_rejects_bad_models() {
    let c = |w: f64| class("a", vec![diag(w, &[0.0], &[1.0])]);
    assert!(GmmClassifier::new(vec![c(1.0)], vec![0.5], ReferenceIndices::DEFAULT, None).is_err());
    assert!(GmmClassifier::new(vec![c(0.5)], vec![1.0], ReferenceIndices::DEFAULT, None).is_err());
    assert!(GmmClassifier::new(vec![], vec![], ReferenceIndices::DEFAULT, None).is_err());
    let bad_var = class("a", vec![diag(1.0, &[0.0], &[0.0])]);
    assert!(GmmClassifier::new(vec![bad_var], vec![1.0], ReferenceIndices::DEFAULT, None).is_err());
    let not_spd = class("a", vec![full(1.0, &[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0])]);
    assert!(GmmClassifier::new(vec![not_spd], vec![1.0], ReferenceIndices::DEFAULT, None).is_err());
    assert!(GmmClassifier::new(vec![c(1.0), c(1.0)], vec![0.5, 0.5], ReferenceIndices::DEFAULT, None).is_err());
}

fn check_trace(trace: &EmTrace) {
    assert!(trace.max_decrease() <= 1e-8, "log-likelihood decreased by {}", trace.max_decrease());
    for e in &trace.responsibility_error {
        assert!(*e <= 1e-12, "responsibilities off by {e}");
    }
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

#[test]
fn single_component_is_closed_form() {
    let mut rng = SeededRng::new(11);
    let data = cluster(&mut rng, &[1.0, -2.0, 3.0], 0.7, 40);
    let cfg = TrainingConfig::default();
    let (comps, trace) = em_fit(&refs(&data), 1, &cfg, &mut SeededRng::new(0)).unwrap();
    check_trace(&trace);
    assert!(trace.converged);
    let n = data.len() as f64;
    for d in 0..3 {
        let mean = data.iter().map(|x| x[d]).sum::<f64>() / n;
        let var = data.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / n;
        assert!((comps[0].mean[d] - mean).abs() < 1e-12);
        let Covariance::Diagonal(v) = &comps[0].covariance else { unreachable!() };
        assert!((v[d] - var.max(cfg.variance_floor)).abs() < 1e-12);
    }
    assert_eq!(comps[0].weight, 1.0);
    // one M step reaches the optimum; the second E step only confirms it
    assert_eq!(trace.iterations(), 2);
    assert!((trace.log_likelihood[2] - trace.log_likelihood[1]).abs() < 1e-9);
}

#[test]
fn identical_samples_hit_the_floor() {
    let data = vec![vec![0.25; 16]; 21];
    let mut ds = LabeledDataset::new();
    for x in &data {
        ds.push("same", x.clone());
    }
    let (clf, traces) = train_with_traces(&ds, &TrainingConfig::default()).unwrap();
    check_trace(&traces[0]);
    let Covariance::Diagonal(v) = &clf.classes()[0].components[0].covariance else { unreachable!() };
    assert!(v.iter().all(|&s| s == 1e-6));
}

#[test]
fn two_clusters_recover_equal_weights() {
    let mut rng = SeededRng::new(5);
    let mut data = cluster(&mut rng, &[0.0, 0.0], 1.0, 50);
    data.extend(cluster(&mut rng, &[12.0, 12.0], 1.0, 50));
    let cfg = TrainingConfig::default();
    let (comps, trace) = em_fit(&refs(&data), 2, &cfg, &mut SeededRng::new(1)).unwrap();
    check_trace(&trace);
    for c in &comps {
        assert!((c.weight - 0.5).abs() < 0.05, "weight {}", c.weight);
    }
    let mut means: Vec<f64> = comps.iter().map(|c| c.mean[0]).collect();
    means.sort_by(f64::total_cmp);
    assert!(means[0].abs() < 1.0 && (means[1] - 12.0).abs() < 1.0);
}

#[test]
fn em_traces_are_monotone_over_many_runs() {
    for seed in 0..40u64 {
        let mut rng = SeededRng::new(seed);
        let dim = 1 + (seed as usize % 4);
        let mut data = Vec::new();
        for c in 0..3 {
            let center: Vec<f64> = (0..dim).map(|d| (c * 3 + d) as f64 * 0.8).collect();
            data.extend(cluster(&mut rng, &center, 0.5 + 0.3 * c as f64, 30));
        }
        for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
            for k in 1..=4 {
                let cfg = TrainingConfig { covariance_kind: kind, rng_seed: seed, ..Default::default() };
                let (comps, trace) = em_fit(&refs(&data), k, &cfg, &mut SeededRng::new(seed)).unwrap();
                check_trace(&trace);
                let wsum: f64 = comps.iter().map(|c| c.weight).sum();
                assert!((wsum - 1.0).abs() < 1e-9);
                for c in &comps {
                    c.validate(dim).unwrap();
                }
            }
        }
    }
}

#[test]
fn insufficient_samples() {
    let mut ds = LabeledDataset::new();
    for i in 0..3 {
        ds.push("a", vec![i as f64]);
    }
    ds.push("b", vec![1.0]);
    let err = train(&ds, &TrainingConfig::default()).unwrap_err();
    assert_eq!(err, GmmError::InsufficientSamples { label: "b".into(), count: 1, needed: 2 });
    let cfg = TrainingConfig { components_per_class: 3, ..Default::default() };
    assert!(matches!(train(&ds, &cfg), Err(GmmError::InsufficientSamples { count: 3, needed: 4, .. })));
}

#[test]
fn rejects_bad_inputs() {
    assert_eq!(train(&LabeledDataset::new(), &TrainingConfig::default()), Err(GmmError::EmptyDataset));
    let mut ds = LabeledDataset::new();
    ds.push("a", vec![1.0, 2.0]);
    ds.push("a", vec![f64::NAN, 2.0]);
    assert_eq!(train(&ds, &TrainingConfig::default()), Err(GmmError::NonFiniteSample(1)));
    let cfg = TrainingConfig { components_per_class: 0, ..Default::default() };
    assert!(matches!(train(&ds, &cfg), Err(GmmError::InvalidConfig(_))));
}

fn synthetic_dataset(n_classes: usize, per_class: usize, sep: f64, seed: u64) -> LabeledDataset {
    let mut rng = SeededRng::new(seed);
    let mut ds = LabeledDataset::new();
    for c in 0..n_classes {
        let mut center = vec![0.0; 16];
        center[c % 16] = sep;
        for x in cluster(&mut rng, &center, 1.0, per_class) {
            ds.push(&alloc::format!("class{c}"), x);
        }
    }
    ds
}

#[test]
fn eight_by_twenty_trains_eight_models() {
    let ds = synthetic_dataset(8, 20, 6.0, 3);
    let (clf, traces) = train_with_traces(&ds, &TrainingConfig::default()).unwrap();
    assert_eq!(clf.classes().len(), 8);
    assert_eq!(traces.len(), 8);
    traces.iter().for_each(check_trace);
    for p in clf.priors() {
        assert!((p - 0.125).abs() < 1e-15);
    }
}

#[test]
fn well_separated_pair_is_perfect() {
    let ds = synthetic_dataset(2, 40, 10.0, 9);
    let (train_set, test_set) = split(&ds, 0.5, 4).unwrap();
    let clf = train(&train_set, &TrainingConfig::default()).unwrap();
    assert_eq!(evaluate(&clf, &test_set).unwrap().accuracy, 1.0);
    assert_eq!(evaluate(&clf, &train_set).unwrap().accuracy, 1.0);
}

#[test]
fn training_is_deterministic() {
    let ds = synthetic_dataset(3, 30, 4.0, 2);
    for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
        let cfg = TrainingConfig { components_per_class: 2, covariance_kind: kind, rng_seed: 77, ..Default::default() };
        assert_eq!(train(&ds, &cfg).unwrap(), train(&ds, &cfg).unwrap());
    }
}

#[test]
fn full_covariance_training() {
    let ds = synthetic_dataset(8, 20, 6.0, 13);
    let cfg = TrainingConfig { covariance_kind: CovarianceKind::Full, ..Default::default() };
    let (clf, traces) = train_with_traces(&ds, &cfg).unwrap();
    traces.iter().for_each(check_trace);
    assert_eq!(clf.covariance_kind(), CovarianceKind::Full);
    // 20 samples in 16 dims: the scatter is rank deficient, the ridge keeps it SPD
    assert!(evaluate(&clf, &ds).unwrap().accuracy > 0.9);
}

#[test]
fn evaluate_reports() {
    let ds = synthetic_dataset(3, 10, 10.0, 1);
    let mut clf = train(&ds, &TrainingConfig::default()).unwrap();
    assert_eq!(evaluate(&clf, &LabeledDataset::new()), Err(GmmError::EmptyDataset));
    let report = evaluate(&clf, &ds).unwrap();
    assert_eq!((report.total, report.correct, report.accuracy), (30, 30, 1.0));
    assert_eq!(report.confusion.counts[1], vec![0, 10, 0, 0]);
    assert_eq!(report.per_class_recall, vec![Some(1.0); 3]);

    clf.set_rejection_log_density(Some(f64::INFINITY));
    let report = evaluate(&clf, &ds).unwrap();
    assert_eq!(report.accuracy, 0.0);
    assert_eq!(report.confusion.counts[2][3], 10);

    let mut unknown = LabeledDataset::new();
    unknown.push("nope", vec![0.0; 16]);
    assert_eq!(evaluate(&clf, &unknown), Err(GmmError::UnknownLabel("nope".into())));

    // a class missing from the test set has no recall
    let mut partial = LabeledDataset::with_labels(["class0"]);
    partial.push("class0", ds.class_samples(0)[0].to_vec());
    clf.set_rejection_log_density(None);
    let report = evaluate(&clf, &partial).unwrap();
    assert_eq!(report.per_class_recall, vec![Some(1.0), None, None]);
}

#[test]
fn split_counts_and_determinism() {
    let ds = synthetic_dataset(8, 30, 5.0, 1);
    let (tr, te) = split(&ds, 2.0 / 3.0, 42).unwrap();
    assert_eq!(tr.class_counts(), vec![20; 8]);
    assert_eq!(te.class_counts(), vec![10; 8]);
    let (tr2, te2) = split(&ds, 2.0 / 3.0, 42).unwrap();
    assert_eq!((tr.clone(), te.clone()), (tr2, te2));
    let (tr3, _) = split(&ds, 2.0 / 3.0, 43).unwrap();
    assert_ne!(tr, tr3);

    let mut tiny = LabeledDataset::new();
    for l in ["a", "a", "b", "b"] {
        tiny.push(l, vec![0.0]);
    }
    let (tr, te) = split(&tiny, 0.5, 0).unwrap();
    assert_eq!((tr.class_counts(), te.class_counts()), (vec![1, 1], vec![1, 1]));

    tiny.push("c", vec![0.0]);
    assert!(matches!(split(&tiny, 0.5, 0), Err(GmmError::InsufficientSamples { count: 1, .. })));
    assert!(split(&tiny, 1.0, 0).is_err());
    assert!(split(&tiny, 0.0, 0).is_err());
}
