use nalgebra::{DMatrix, DVector, SymmetricEigen};
use tensorkit::cpd::{check_sufficient_uniqueness, cp_als, fit, CpConfig, CpInit};
use tensorkit::power::{extract_eigenpairs, matrix_power_method, PowerConfig};
use tensorkit::random;
use tensorkit::tensor::outer;
use tensorkit::tucker::hosvd;
use tensorkit::{DenseTensor, Error, KruskalTensor};

fn noisy_kruskal(seed: u64) -> DenseTensor {
    let mut rng = random::rng(seed);
    let factors = (0..3).map(|_| random::normal_matrix(4, 2, &mut rng)).collect();
    let clean = KruskalTensor::from_factors(factors).unwrap().to_dense().unwrap();
    let noise = random::normal_vector(clean.len(), &mut rng) * 0.1;
    DenseTensor::new(clean.shape().to_vec(), (DVector::from_vec(clean.data().to_vec()) + noise).as_slice().to_vec())
        .unwrap()
}

#[test]
fn als_error_never_increases_on_noisy_data() {
    for seed in 0..5 {
        let t = noisy_kruskal(seed);
        for init in [CpInit::Random, CpInit::HosvdLeadingVectors] {
            let mut cfg = CpConfig::new(2);
            cfg.seed = seed;
            cfg.init = init;
            let res = cp_als(&t, &cfg).unwrap();
            for w in res.fit_history.windows(2) {
                assert!(w[1] <= w[0], "seed {seed}: {} -> {}", w[0], w[1]);
            }
            let err = fit(&t, &res.model).unwrap();
            assert!((err - res.fit_history.last().unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn normalized_als_gives_unit_columns() {
    let t = noisy_kruskal(9);
    let mut cfg = CpConfig::new(2);
    cfg.normalize = true;
    let res = cp_als(&t, &cfg).unwrap();
    for f in &res.model.factors {
        for c in f.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn cp_rejects_bad_configurations() {
    let t = noisy_kruskal(1);
    assert!(matches!(cp_als(&t, &CpConfig::new(0)), Err(Error::Config(_))));
    let matrix = DenseTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(matches!(cp_als(&matrix, &CpConfig::new(1)), Err(Error::Config(_))));
    let bad = DenseTensor::new(vec![2, 1, 1], vec![1.0, f64::NAN]).unwrap();
    assert!(matches!(cp_als(&bad, &CpConfig::new(1)), Err(Error::Data(_))));
}

#[test]
fn hosvd_core_is_all_orthogonal_with_ordered_slices() {
    let mut rng = random::rng(11);
    let t = DenseTensor::new(vec![4, 3, 5], random::normal_vector(60, &mut rng).as_slice().to_vec()).unwrap();
    let m = hosvd(&t, &[4, 3, 5]).unwrap();
    let norm2 = t.frobenius_norm().powi(2);
    for mode in 1..=3 {
        let g = m.core.unfold(mode).unwrap();
        let gram = &g * g.transpose();
        let mut previous = f64::INFINITY;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                if i != j {
                    assert!(gram[(i, j)].abs() <= 1e-10 * norm2);
                }
            }
            // slice norms are the mode-n singular values, in descending order
            assert!(gram[(i, i)] <= previous + 1e-10 * norm2);
            previous = gram[(i, i)];
        }
    }
    // orthogonal factors preserve the norm
    assert!((m.core.frobenius_norm() - t.frobenius_norm()).abs() < 1e-12 * t.frobenius_norm());
}

#[test]
fn deflation_removes_exactly_the_extracted_energy() {
    // for an orthogonally decomposable T, ‖T − λ_1 v_1^∘3‖² = ‖T‖² − λ_1²
    let mut rng = random::rng(21);
    let v = random::orthonormal_matrix(6, 3, &mut rng);
    let lambda = [3.0, 2.0, 0.5];
    let mut t = DenseTensor::zeros(vec![6, 6, 6]).unwrap();
    for (i, &l) in lambda.iter().enumerate() {
        let c = v.column(i).into_owned();
        t.axpy(l, &outer(&[c.clone(), c.clone(), c]).unwrap()).unwrap();
    }
    let pairs = extract_eigenpairs(&t, &PowerConfig::new(1)).unwrap();
    let p = &pairs[0];
    let x = p.vector.clone();
    let mut deflated = t.clone();
    deflated.axpy(-p.value, &outer(&[x.clone(), x.clone(), x]).unwrap()).unwrap();
    let expected = t.frobenius_norm().powi(2) - p.value * p.value;
    assert!((deflated.frobenius_norm().powi(2) - expected).abs() < 1e-10);
    assert!(lambda.iter().any(|&l| (l - p.value).abs() < 1e-10));
}

#[test]
fn matrix_power_method_matches_symmetric_eigensolver() {
    let mut rng = random::rng(31);
    for _ in 0..5 {
        let q = random::orthonormal_matrix(5, 5, &mut rng);
        let evals = DVector::from_vec(vec![-4.0, 2.5, 1.0, 0.5, -0.1]);
        let m = &q * DMatrix::from_diagonal(&evals) * q.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let pair = matrix_power_method(&m, 2000, 1e-12, 1).unwrap();
        let eig = SymmetricEigen::new(m.clone());
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (i, &e)| if e.abs() > b.1.abs() { (i, e) } else { b });
        assert!((pair.value - eig.eigenvalues[idx]).abs() < 1e-9);
        assert!(pair.vector.dot(&eig.eigenvectors.column(idx)).abs() > 1.0 - 1e-9);
    }
}

#[test]
fn matrix_factorizations_are_not_unique_but_cp_can_be() {
    // M = A B^T = (A R)(R^{-1} B^T) for any invertible R
    let mut rng = random::rng(41);
    let a = random::normal_matrix(4, 2, &mut rng);
    let b = random::normal_matrix(3, 2, &mut rng);
    let r = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 1.0]);
    let r_inv = r.clone().try_inverse().unwrap();
    let m = &a * b.transpose();
    let other = (&a * &r) * (&r_inv * b.transpose());
    assert!((&m - &other).amax() < 1e-12);
    assert!((&a * &r - &a).amax() > 0.1);

    // the same factors plus a generic third mode meet the k-rank condition
    let c = random::normal_matrix(3, 2, &mut rng);
    let k = KruskalTensor::from_factors(vec![a, b, c]).unwrap();
    assert!(check_sufficient_uniqueness(&k, 1e-10).unwrap());
}
