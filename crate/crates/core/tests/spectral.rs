use jeans_core::torus_spectral::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn field(dim: usize, n: usize, vals: &[f64]) -> Field {
    let grid = TorusGrid::new(dim, n).unwrap();
    Field { grid, values: vals[..grid.len()].to_vec() }
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval(v in values(256)) {
        for (dim, n) in [(1, 64), (2, 16)] {
            let u = field(dim, n, &v);
            let grid_l2 = l2_norm(&u);
            let spectral_l2 = sobolev_norm(&u, NormConfig { s: 0 });
            prop_assert!((grid_l2 - spectral_l2).abs() <= 1e-12 * grid_l2.max(1e-300));
        }
    }

    #[test]
    fn diff_is_linear(v in values(64), w in values(64), al in -3.0f64..3.0, be in -3.0f64..3.0) {
        let u = field(1, 64, &v);
        let z = field(1, 64, &w);
        let mix = Field { grid: u.grid, values: v.iter().zip(&w).map(|(a, b)| al * a + be * b).collect() };
        let (du, dz, dm) = (diff(&u, 0), diff(&z, 0), diff(&mix, 0));
        let scale = sup(&du.values).max(sup(&dz.values)).max(1.0);
        for i in 0..64 {
            prop_assert!((dm.values[i] - al * du.values[i] - be * dz.values[i]).abs() < 1e-12 * scale * 8.0);
        }
    }

    #[test]
    fn norms_are_shift_invariant(v in values(256), shift in 0usize..16) {
        let u = field(2, 16, &v);
        // cyclic shift along the first axis
        let mut s = u.clone();
        for i in 0..16 {
            for j in 0..16 {
                s.values[((i + shift) % 16) * 16 + j] = u.values[i * 16 + j];
            }
        }
        for k in [0u32, 2, 4] {
            let a = sobolev_norm(&u, NormConfig { s: k });
            let b = sobolev_norm(&s, NormConfig { s: k });
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }
        prop_assert_eq!(sup(&u.values), sup(&s.values));
    }
}

#[test]
fn three_dimensional_laplacian() {
    let grid = TorusGrid::new(3, 8).unwrap();
    let u = Field::from_fn(grid, |x| (x[0] + 2.0 * x[1]).sin() * x[2].cos());
    let l = laplacian(&u);
    for (a, b) in l.values.iter().zip(&u.values) {
        assert!((a + 6.0 * b).abs() < 1e-12);
    }
}

#[test]
fn sobolev_weight_of_single_mode() {
    let grid = TorusGrid::new(1, 32).unwrap();
    let u = Field::from_fn(grid, |x| (3.0 * x[0]).cos());
    // |u|_s^2 = 2 pi * 10^s * (1/2)
    for s in [0u32, 1, 4] {
        let want = (PI * 10f64.powi(s as i32)).sqrt();
        assert!((sobolev_norm(&u, NormConfig { s }) - want).abs() < 1e-11 * want);
    }
}

#[test]
fn nyquist_is_dropped_in_derivatives() {
    let grid = TorusGrid::new(1, 16).unwrap();
    let u = Field::from_fn(grid, |x| (8.0 * x[0]).cos());
    assert!(sup(&diff(&u, 0).values) < 1e-13);
    assert!(sup(&laplacian(&u).values) < 1e-13);
}
