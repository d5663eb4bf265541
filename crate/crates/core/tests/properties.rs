mod common;

use proptest::prelude::*;

use sslora::analysis::{adapter_curve, linearity_gap};
use sslora::linalg::{matmul, svd, Matrix};
use sslora::losses::{orth_loss, ss_loss};
use sslora::persist::{read_container, write_container, Tensor, TensorContainer, TensorData};
use sslora::subspace::{contribution_curve, decompose, truncation_rank};

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

fn chain() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (1usize..6, 1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(a, b, c, d)| {
        let m = |r, k| prop::collection::vec(-2.0f64..2.0, r * k).prop_map(move |v| Matrix::new(r, k, v).unwrap());
        (m(a, b), m(b, c), m(c, d))
    })
}

fn factors(count: usize) -> impl Strategy<Value = Vec<Matrix>> {
    (2usize..7, 1usize..4).prop_flat_map(move |(d, r)| {
        prop::collection::vec(
            prop::collection::vec(-1.5f64..1.5, d * r).prop_map(move |v| Matrix::new(d, r, v).unwrap()),
            count,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative((a, b, c) in chain()) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = 1.0 + left.frobenius_norm();
        prop_assert!(left.max_abs_diff(&right) <= 1e-12 * scale);
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal(w in matrix(1..9, 1..9)) {
        let s = svd(&w).unwrap();
        let scale = 1.0 + w.frobenius_norm();
        prop_assert!(s.reconstruct().max_abs_diff(&w) <= 1e-10 * scale);
        let utu = sslora::linalg::matmul_tn(&s.u, &s.u).unwrap();
        prop_assert!(utu.max_abs_diff(&Matrix::identity(s.u.cols())) <= 1e-10);
        prop_assert!(s.sigma.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn singular_values_survive_transpose_and_scale(w in matrix(1..8, 1..8), k in 0.1f64..10.0) {
        let s = svd(&w).unwrap().sigma;
        let st = svd(&w.transpose()).unwrap().sigma;
        let ss = svd(&w.scale(k)).unwrap().sigma;
        let tol = 1e-10 * (1.0 + s[0]) * k.max(1.0);
        for i in 0..s.len() {
            prop_assert!((s[i] - st[i]).abs() <= tol);
            prop_assert!((ss[i] - k * s[i]).abs() <= tol);
        }
    }

    #[test]
    fn decomposition_splits_the_output_space(w in matrix(2..10, 2..10), tau in 0.05f64..1.0) {
        prop_assume!(w.frobenius_norm() > 1e-6);
        let dec = decompose(&w, tau).unwrap();
        let d = w.rows();
        prop_assert_eq!(dec.k + dec.s, d.min(w.cols()));
        let curve = contribution_curve(&dec.sigma).unwrap();
        prop_assert_eq!(dec.k, truncation_rank(&curve, tau));
        prop_assert!(dec.retained_energy() >= tau - 1e-12);
        let idem = matmul(&dec.p_m, &dec.p_m).unwrap().max_abs_diff(&dec.p_m);
        prop_assert!(idem <= 1e-10);
        prop_assert!(matmul(&dec.p_m, &dec.p_n).unwrap().frobenius_norm() <= 1e-10 * d as f64);
    }

    #[test]
    fn orth_loss_ignores_order(bs in factors(3)) {
        let fwd: Vec<&Matrix> = bs.iter().collect();
        let rev: Vec<&Matrix> = bs.iter().rev().collect();
        let (a, ga) = orth_loss(&fwd).unwrap();
        let (b, gb) = orth_loss(&rev).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        for i in 0..3 {
            prop_assert!(ga[i].max_abs_diff(&gb[2 - i]) <= 1e-12 * (1.0 + ga[i].frobenius_norm()));
        }
    }

    #[test]
    fn separation_loss_is_symmetric_and_nonpositive(bs in factors(2)) {
        let ab = ss_loss(&[&bs[0], &bs[1]]).unwrap();
        let ba = ss_loss(&[&bs[1], &bs[0]]).unwrap();
        prop_assert!(ab.value <= 0.0);
        prop_assert!((ab.value - ba.value).abs() <= 1e-12 * (1.0 + ab.value.abs()));
        prop_assert!(ab.grads[0].max_abs_diff(&ba.grads[1]) <= 1e-12 * (1.0 + ab.grads[0].frobenius_norm()));
    }

    #[test]
    fn curves_are_monotone_and_gap_bounded(b in matrix(3..9, 1..4)) {
        prop_assume!(b.frobenius_norm() > 1e-6);
        let c = adapter_curve(&b, b.cols()).unwrap();
        prop_assert!(c.values().windows(2).all(|w| w[0] <= w[1] + 1e-15));
        prop_assert!((c.values()[c.len() - 1] - 1.0).abs() <= 1e-9);
        let gap = linearity_gap(&c);
        prop_assert!((0.0..=1.0).contains(&gap));
    }

    #[test]
    fn container_round_trip_is_bit_exact(
        tensors in prop::collection::vec(
            (prop::collection::vec(0usize..4, 0..3), any::<bool>(), any::<u64>()),
            0..12,
        )
    ) {
        let mut c = TensorContainer::new();
        for (i, (shape, wide, seed)) in tensors.iter().enumerate() {
            let n: usize = shape.iter().product();
            let bits = |j: usize| seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(j as u32) ^ j as u64;
            let data = if *wide {
                TensorData::F64((0..n).map(|j| f64::from_bits(bits(j))).collect())
            } else {
                TensorData::F32((0..n).map(|j| f32::from_bits(bits(j) as u32)).collect())
            };
            c.insert(format!("t{i}"), Tensor::new(shape.clone(), data).unwrap());
        }
        let bytes = write_container(&c);
        let back = read_container(&bytes).unwrap();
        prop_assert_eq!(write_container(&back), bytes);
        prop_assert_eq!(back.tensors.len(), c.tensors.len());
    }
}
