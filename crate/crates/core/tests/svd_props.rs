use lsvd_core::linalg::{reconstruct, reverse_columns, reverse_rows, spectral_norm, svd, Matrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn gram_residual(m: &Matrix, by_columns: bool) -> f64 {
    let g = if by_columns { m.transpose().matmul(m).unwrap() } else { m.matmul(&m.transpose()).unwrap() };
    let n = g.rows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let e = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - e).abs());
        }
    }
    worst
}

fn matrix_strategy(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn svd_contract(m in matrix_strategy(24)) {
        let t = svd(&m).unwrap();
        prop_assert_eq!(t.u.shape(), (m.rows(), m.rows()));
        prop_assert_eq!(t.v.shape(), (m.cols(), m.cols()));
        prop_assert_eq!(t.s.len(), m.rows().min(m.cols()));
        prop_assert!(t.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(t.s.iter().all(|s| *s >= 0.0));
        prop_assert!(gram_residual(&t.u, true) <= 1e-5);
        prop_assert!(gram_residual(&t.v, false) <= 1e-5);
        let err = reconstruct(&t.u, &t.s, &t.v).unwrap().sub(&m).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-5 * m.frobenius_norm().max(1e-300));
        for j in 0..t.u.cols() {
            let col = t.u.column(j);
            let big = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            prop_assert!(big >= 0.0);
        }
    }

    #[test]
    fn singular_values_match_nalgebra(m in matrix_strategy(16)) {
        let ours = svd(&m).unwrap().s;
        let mut theirs: Vec<f64> = to_na(&m).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        let scale = theirs[0].max(1.0);
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-10 * scale, "{} vs {}", a, b);
        }
    }

    #[test]
    fn reversal_identity(m in matrix_strategy(20)) {
        let t = svd(&m).unwrap();
        if m.rows() != m.cols() {
            return Ok(());
        }
        let mut s_rev = t.s.clone();
        s_rev.reverse();
        let a = reconstruct(&reverse_columns(&t.u), &s_rev, &reverse_rows(&t.v)).unwrap();
        let b = t.reconstruct();
        prop_assert!(a.sub(&b).unwrap().frobenius_norm() <= 1e-10 * b.frobenius_norm().max(1e-300));
    }

    #[test]
    fn reversal_is_an_involution(m in matrix_strategy(12)) {
        prop_assert_eq!(reverse_columns(&reverse_columns(&m)), m.clone());
        prop_assert_eq!(reverse_rows(&reverse_rows(&m)), m);
    }

    #[test]
    fn spectral_norm_matches_nalgebra(m in matrix_strategy(12)) {
        let theirs = to_na(&m).singular_values().max();
        prop_assert!((spectral_norm(&m).unwrap() - theirs).abs() <= 1e-10 * theirs.max(1.0));
    }
}

#[test]
fn reconstruct_matches_triple_product_oracle() {
    // Orthogonal factors from a QR of fixed matrices.
    let qa = to_na(&Matrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * i as f64)).qr().q();
    let qb = to_na(&Matrix::from_fn(4, 4, |i, j| ((i * 2 + j * 5) % 7) as f64 - 0.3 * j as f64)).qr().q();
    let u = Matrix::from_fn(4, 4, |i, j| qa[(i, j)]);
    let v = Matrix::from_fn(4, 4, |i, j| qb[(i, j)]);
    let s = [4.0, 3.0, 2.0, 1.0];
    let got = reconstruct(&u, &s, &v).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += u[(i, k)] * s[k] * v[(k, j)];
            }
            assert!((got[(i, j)] - acc).abs() <= 1e-10);
        }
    }
}

#[test]
fn reconstruct_examples() {
    let id = Matrix::identity(2);
    assert_eq!(reconstruct(&id, &[2.0, 0.0], &id).unwrap(), Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 0.0]]));
    assert!(reconstruct(&id, &[1.0], &id).is_err());
}

#[test]
fn determinism() {
    let m = Matrix::from_fn(9, 7, |i, j| ((i * 31 + j * 17) % 11) as f64 - 5.0);
    let a = svd(&m).unwrap();
    let b = svd(&m).unwrap();
    assert_eq!(a.u, b.u);
    assert_eq!(a.s, b.s);
    assert_eq!(a.v, b.v);
}

#[test]
fn repeated_singular_values_still_reconstruct() {
    let m = Matrix::from_rows(&[&[2.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 1.0]]);
    let t = svd(&m).unwrap();
    assert_eq!(t.s, vec![2.0, 2.0, 1.0]);
    assert!(t.reconstruct().sub(&m).unwrap().frobenius_norm() < 1e-12);
}
