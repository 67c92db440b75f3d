use adasdbo::network::{build_ring, spectral_norm_sq};
use adasdbo::{linalg, MixingMatrix, Topology};
use proptest::prelude::*;

fn check_doubly_stochastic(w: &MixingMatrix<f64>) {
    let n = w.n();
    for i in 0..n {
        let row: f64 = (0..n).map(|j| w.get(i, j)).sum();
        let col: f64 = (0..n).map(|j| w.get(j, i)).sum();
        assert!((row - 1.0).abs() <= 1e-12 && (col - 1.0).abs() <= 1e-12);
        assert!((0..n).all(|j| w.get(i, j) >= 0.0));
    }
    assert!(w.rho_w() < 1.0);
}

/// `Σ_i ‖r_i − r̄‖²` over the rows of a block.
fn disagreement(rows: &[Vec<f64>]) -> f64 {
    let dim = rows[0].len();
    let mean = linalg::mean_rows(rows.iter().map(Vec::as_slice), dim);
    rows.iter().map(|r| linalg::norm_sq(&linalg::sub(r, &mean))).sum()
}

#[test]
fn ring_row_pattern() {
    let w = build_ring(5, 0.4).unwrap();
    let row: Vec<f64> = (0..5).map(|j| w.get(0, j)).collect();
    assert_eq!(row, vec![0.4, 0.3, 0.0, 0.0, 0.3]);
}

#[test]
fn ring_rho_matches_its_spectrum() {
    // circulant: eigenvalues 0.4 + 0.6 cos(2πk/5)
    let w = build_ring(5, 0.4).unwrap();
    let second = (0.4f64 + 0.6 * (2.0 * std::f64::consts::PI / 5.0).cos()).abs();
    let worst = (0.4f64 + 0.6 * (4.0 * std::f64::consts::PI / 5.0).cos())
        .abs()
        .max(second);
    assert!((w.rho_w() - worst * worst).abs() <= 1e-9);
    assert!((spectral_norm_sq(5, w.entries()).unwrap() - w.rho_w()).abs() <= 1e-12);
}

proptest! {
    #[test]
    fn topologies_are_doubly_stochastic_and_contract(
        kind in 0usize..4,
        half in 2usize..6,
        w in 0.05f64..0.95,
        p in 0.3f64..1.0,
        seed in any::<u64>(),
        values in proptest::collection::vec(-5.0f64..5.0, 36),
    ) {
        let n = 2 * half;
        let topology = match kind {
            0 => Topology::Ring { w },
            1 => Topology::Ladder,
            2 => Topology::Random { edge_prob: p, seed },
            _ => Topology::Complete,
        };
        let mixing: MixingMatrix<f64> = topology.build(n).unwrap();
        check_doubly_stochastic(&mixing);

        let rows: Vec<Vec<f64>> = values.chunks(3).take(n).map(<[f64]>::to_vec).collect();
        let mixed = mixing.mix_rows(&rows).unwrap();
        let before = disagreement(&rows);
        let after = disagreement(&mixed);
        prop_assert!(after <= mixing.rho_w() * before + 1e-12 * (1.0 + before));

        let mean = |r: &[Vec<f64>]| linalg::mean_rows(r.iter().map(Vec::as_slice), 3);
        let gap = linalg::norm(&linalg::sub(&mean(&rows), &mean(&mixed)));
        prop_assert!(gap <= 1e-12 * (1.0 + linalg::norm(&mean(&rows))));
    }

    #[test]
    fn non_stochastic_matrices_are_rejected(n in 2usize..6, bump in 0.01f64..0.5) {
        let mut e = vec![1.0 / n as f64; n * n];
        e[0] += bump;
        prop_assert!(MixingMatrix::from_dense(n, e).is_err());
    }
}
