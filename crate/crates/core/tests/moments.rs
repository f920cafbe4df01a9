use nalgebra::{DMatrix, DVector};
use tensorkit::metrics::total_variation;
use tensorkit::moments::{
    estimate_from_moments, estimate_mixture, gmm_generate, gmm_moments, topic_generate, topic_moments,
    topic_population_moments, unwhiten, whitened_power_estimate, whitening_defect, whitening_matrix, EstimateConfig,
    GmmSpec, ModelKind, SampleMatrix, ThirdMomentPath, TopicSpec,
};
use tensorkit::power::{symmetry_defect, PowerConfig, SymmetricContraction};
use tensorkit::random;
use tensorkit::tensor::outer;
use tensorkit::DenseTensor;

fn points(s: &SampleMatrix) -> &DMatrix<f64> {
    match s {
        SampleMatrix::Points(x) => x,
        _ => panic!("expected points"),
    }
}

fn word_frequencies(s: &SampleMatrix) -> DVector<f64> {
    let SampleMatrix::Documents { vocab, docs } = s else { panic!("expected documents") };
    let mut f = DVector::zeros(*vocab);
    let mut total = 0.0;
    for w in docs.iter().flatten() {
        f[*w] += 1.0;
        total += 1.0;
    }
    f / total
}

fn three_means() -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.3, 0.3, 1.0])
}

#[test]
fn vanishing_noise_puts_samples_on_the_means() {
    let spec = GmmSpec::new(three_means(), DVector::from_vec(vec![0.2, 0.3, 0.5]), 1e-12).unwrap();
    let (s, labels) = gmm_generate(&spec, 200, 1).unwrap();
    for (row, &h) in points(&s).row_iter().zip(&labels) {
        assert!((row.transpose() - spec.means.column(h)).amax() < 1e-10);
    }
}

#[test]
fn single_component_sample_mean_is_within_the_clt_bound() {
    let sigma = 0.5;
    let mean = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 0.0]);
    let spec = GmmSpec::new(mean.clone(), DVector::from_element(1, 1.0), sigma).unwrap();
    let n = 100_000;
    let (s, _) = gmm_generate(&spec, n, 2).unwrap();
    let sample_mean = points(&s).row_sum().transpose() / n as f64;
    let bound = 3.0 * sigma / (n as f64).sqrt();
    assert!((sample_mean - mean.column(0)).amax() <= bound);
}

#[test]
fn label_histogram_matches_the_weights() {
    let w = DVector::from_vec(vec![0.2, 0.3, 0.5]);
    let spec = GmmSpec::new(three_means(), w.clone(), 0.1).unwrap();
    let n = 50_000;
    let (_, labels) = gmm_generate(&spec, n, 3).unwrap();
    for (i, &wi) in w.iter().enumerate() {
        let freq = labels.iter().filter(|&&h| h == i).count() as f64 / n as f64;
        assert!((freq - wi).abs() <= 3.0 * (wi * (1.0 - wi) / n as f64).sqrt());
    }
}

#[test]
fn single_topic_unigrams_converge() {
    let mut rng = random::rng(4);
    let raw = random::normal_vector(10, &mut rng).map(f64::exp);
    let topic = DMatrix::from_column_slice(10, 1, (raw.clone() / raw.sum()).as_slice());
    let spec = TopicSpec::new(topic.clone(), DVector::from_element(1, 1.0), 3).unwrap();
    let (s, _) = topic_generate(&spec, 100_000, 5).unwrap();
    assert!(total_variation(&word_frequencies(&s), &topic.column(0).into_owned()) <= 0.02);
}

#[test]
fn word_marginal_is_the_weighted_topic_mix() {
    let spec = TopicSpec::block_topics(12, DVector::from_vec(vec![0.6, 0.4]), 4, 6).unwrap();
    let (s, _) = topic_generate(&spec, 50_000, 7).unwrap();
    let marginal = &spec.topics * &spec.weights;
    assert!(total_variation(&word_frequencies(&s), &marginal) <= 0.02);
    let m = topic_moments(&s, 2).unwrap();
    assert!((&m.mean - word_frequencies(&s)).amax() < 1e-12);
}

#[test]
fn one_hot_topics_give_a_diagonal_second_moment() {
    let topics = DMatrix::from_column_slice(4, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let spec = TopicSpec::new(topics, DVector::from_vec(vec![0.25, 0.75]), 3).unwrap();
    let (s, labels) = topic_generate(&spec, 400, 8).unwrap();
    let m = topic_moments(&s, 2).unwrap();
    let share = labels.iter().filter(|&&h| h == 0).count() as f64 / 400.0;
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, share, 0.0, 1.0 - share]));
    assert!((m.second - expected).amax() < 1e-12);
}

#[test]
fn topic_population_moments_have_the_mixture_form() {
    let spec = TopicSpec::block_topics(5, DVector::from_vec(vec![0.3, 0.7]), 3, 9).unwrap();
    let m = topic_population_moments(&spec).unwrap();
    let mut m3 = DenseTensor::zeros(vec![5, 5, 5]).unwrap();
    let mut m2 = DMatrix::zeros(5, 5);
    for i in 0..2 {
        let a = spec.topics.column(i).into_owned();
        m2 += &a * a.transpose() * spec.weights[i];
        m3.axpy(spec.weights[i], &outer(&[a.clone(), a.clone(), a]).unwrap()).unwrap();
    }
    assert!((m.second - m2).amax() < 1e-15);
    assert!(m.third.unwrap().sub(&m3).unwrap().frobenius_norm() < 1e-15);
}

#[test]
fn random_spd_is_whitened() {
    let mut rng = random::rng(10);
    for k in 1..=5 {
        let g = random::normal_matrix(5, 5, &mut rng);
        let m2 = &g * g.transpose() + DMatrix::identity(5, 5) * 0.1;
        let w = whitening_matrix(&m2, k).unwrap();
        assert_eq!(w.shape(), (5, k));
        assert!(whitening_defect(&m2, &w) <= 1e-10);
    }
}

#[test]
fn planted_whitened_tensor_gives_back_the_weights() {
    let w = [0.5f64, 0.3, 0.2];
    let mut rng = random::rng(12);
    let v = random::orthonormal_matrix(3, 3, &mut rng);
    let mut t = DenseTensor::zeros(vec![3, 3, 3]).unwrap();
    for (i, wi) in w.iter().enumerate() {
        let c = v.column(i).into_owned();
        t.axpy(1.0 / wi.sqrt(), &outer(&[c.clone(), c.clone(), c]).unwrap()).unwrap();
    }
    let ex = whitened_power_estimate(&t, &PowerConfig::new(3)).unwrap();
    assert!(ex.failure.is_none());
    let mut weights: Vec<f64> = ex.values.iter().map(|l| 1.0 / (l * l)).collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    let mut lambdas: Vec<f64> = ex.values.iter().cloned().collect();
    lambdas.sort_by(f64::total_cmp);
    for (i, wi) in w.iter().enumerate() {
        assert!((lambdas[i] - 1.0 / wi.sqrt()).abs() < 1e-8);
        assert!((weights[i] - wi).abs() < 1e-6);
    }
    for d in &ex.diagnostics {
        assert!(d.residual <= 1e-6);
    }
    // extracted eigenpairs satisfy T(I, v, v) = λ v on the undeflated tensor too
    for (j, &l) in ex.values.iter().enumerate() {
        let x = ex.vectors.column(j).into_owned();
        assert!((t.contract(&x) - &x * l).norm() <= 1e-6 * l.max(1.0));
    }
}

#[test]
fn one_component_whitened_moment_is_a_scalar() {
    let t = DenseTensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
    let ex = whitened_power_estimate(&t, &PowerConfig::new(1)).unwrap();
    assert_eq!(ex.values.len(), 1);
    assert!((ex.values[0] - 2.0).abs() < 1e-15);
    assert!((ex.vectors[(0, 0)].abs() - 1.0).abs() < 1e-15);
    let est = unwhiten(&ex.vectors, &ex.values, &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert!((est.weights[0] - 0.25).abs() < 1e-15);
}

#[test]
fn single_component_pipeline_returns_the_sample_mean() {
    let mean = DMatrix::from_column_slice(5, 1, &[0.2, -0.4, 0.8, 0.0, 0.4]);
    let spec = GmmSpec::new(mean, DVector::from_element(1, 1.0), 0.1).unwrap();
    let (s, _) = gmm_generate(&spec, 20_000, 13).unwrap();
    let sample_mean = points(&s).row_sum().transpose() / 20_000.0;
    let est = estimate_mixture(&s, ModelKind::Gmm, &EstimateConfig::new(1)).unwrap();
    assert!((est.components.column(0) - sample_mean).norm() < 0.01);
    assert!((est.weights[0] - 1.0).abs() < 0.03);
}

#[test]
fn materialized_sample_moments_are_symmetric() {
    let spec = GmmSpec::new(three_means(), DVector::from_vec(vec![0.2, 0.3, 0.5]), 0.2).unwrap();
    let (s, _) = gmm_generate(&spec, 5_000, 14).unwrap();
    let m = gmm_moments(&s, 3).unwrap();
    assert!((&m.second - m.second.transpose()).amax() <= 1e-12);
    let t = m.third.unwrap();
    assert!(symmetry_defect(&t).unwrap() <= 1e-10);
}

#[test]
fn pipeline_invariants_hold_on_sample_runs() {
    let spec = GmmSpec::orthonormal_means(6, DVector::from_vec(vec![0.4, 0.35, 0.25]), 0.1, 15).unwrap();
    let (s, _) = gmm_generate(&spec, 20_000, 16).unwrap();
    for path in [ThirdMomentPath::Implicit, ThirdMomentPath::Materialized] {
        let mut cfg = EstimateConfig::new(3);
        cfg.path = path;
        let est = estimate_mixture(&s, ModelKind::Gmm, &cfg).unwrap();
        assert!(est.diagnostics.whitening_defect <= 1e-8);
        for (d, &l) in est.diagnostics.pairs.iter().zip(&est.diagnostics.eigenvalues) {
            assert!(d.residual <= 1e-6 * l.max(1.0));
        }
        assert!(est.weights.iter().all(|&w| w > 0.0));
        cfg.renormalize_weights = true;
        let renorm = estimate_mixture(&s, ModelKind::Gmm, &cfg).unwrap();
        assert!((renorm.weights.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn topic_estimates_are_probability_vectors() {
    let spec = TopicSpec::block_topics(9, DVector::from_vec(vec![0.5, 0.5]), 3, 17).unwrap();
    let (s, _) = topic_generate(&spec, 5_000, 18).unwrap();
    let est = estimate_mixture(&s, ModelKind::Topic, &EstimateConfig::new(2)).unwrap();
    for c in est.components.column_iter() {
        assert!(c.iter().all(|&p| p >= 0.0));
        assert!((c.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn too_many_components_is_a_rank_error_on_exact_moments() {
    let spec = TopicSpec::block_topics(6, DVector::from_vec(vec![0.5, 0.5]), 3, 19).unwrap();
    let m = topic_population_moments(&spec).unwrap();
    let err = estimate_from_moments(&m, ModelKind::Topic, &EstimateConfig::new(3)).unwrap_err();
    assert!(matches!(err, tensorkit::Error::Stage { stage: "whitening", .. }));
    assert_eq!(err.kind(), tensorkit::ErrorKind::Data);
}
