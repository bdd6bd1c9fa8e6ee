use jeans_core::acceptance::random_tuple;
use jeans_core::fuchsian::*;
use jeans_core::params::*;
use jeans_core::pde_solver::*;
use jeans_core::reference_ode::*;
use jeans_core::torus_spectral::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn reference() -> &'static Trajectory {
    static R: OnceLock<Trajectory> = OnceLock::new();
    R.get_or_init(|| {
        let p = ModelParams::special();
        let d = OdeData::new(1.0, 1.0, 1.0).unwrap();
        let dc = derive_constants(&p, &d).unwrap();
        integrate_reference(&p, &d, &dc, &StopCriteria { y_max: 1e12, g_min: Some(5e-5), ..Default::default() }).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transform_round_trip(t in 1.0f64..5.4, v in proptest::collection::vec(-1.0f64..1.0, 96)) {
        let tr = reference();
        let grid = TorusGrid::new(1, 32).unwrap();
        let fs = FieldSet {
            t,
            w: Field { grid, values: v[..32].to_vec() },
            w0: Field { grid, values: v[32..64].to_vec() },
            wi: vec![Field { grid, values: v[64..].to_vec() }],
        };
        let rp = tr.at(t).unwrap();
        let back = from_fuchsian_at(&to_fuchsian_at(&fs, &rp, 1.0), &rp, 1.0).unwrap();
        for (a, b) in fs.to_vec().iter().zip(back.to_vec()) {
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn constant_data_maps_to_constant_u() {
    let tr = reference();
    let grid = TorusGrid::new(1, 8).unwrap();
    let eps = 0.01;
    let fs = FieldSet { t: 1.0, w: Field::constant(grid, eps * tr.data.f_ring), ..FieldSet::zeros(grid, 1.0) };
    let st = to_fuchsian(&fs, tr, &tr.params).unwrap();
    assert_eq!(st.tau, -1.0);
    assert!(st.u.values.iter().all(|u| (u - eps).abs() < 1e-15));
    assert_eq!(st.sup_all(), eps);
}

#[test]
fn limit_block_eigenvalues_random_tuples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let zero = Remainders { r: 0.0, h: 0.0, f: 0.0, l: 0.0, k: 0.0 };
    for _ in 0..50 {
        let (p, d) = random_tuple(&mut rng);
        let dc = derive_constants(&p, &d).unwrap();
        let rp = RefPoint {
            t: 1.0,
            y: 2.0,
            q0: 1.0,
            big_g: 1.0,
            f: 1.0,
            f0: 1.0,
            f0_dot: 0.0,
            g: 0.5,
            chi: 2.0 * p.b * dc.b_const / (3.0 - 2.0 * p.c),
            xi: 1.0,
            frak_g: 0.0,
            tau: -0.5,
        };
        for n in [1, 2, 3] {
            let ev = symmetrized_eigenvalues(&singular_block(n, &rp, &p, dc.b_const, &zero), 1.0);
            let mut want = vec![dc.lambda_tilde[0], dc.lambda_tilde[1]];
            want.extend(std::iter::repeat(dc.lambda_tilde[2]).take(n));
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, w) in ev.iter().zip(&want) {
                // eigenvalues of the block itself carry the 1/A factor
                assert!((a - w / p.gauge).abs() < 1e-10 * w.max(1.0), "{ev:?} {want:?} A={}", p.gauge);
            }
        }
    }
}

#[test]
fn zero_state_is_an_equilibrium() {
    let tr = reference();
    let grid = TorusGrid::new(2, 8).unwrap();
    let init = FuchsianState::zeros(grid, -1.0);
    let cfg = FuchsianConfig { tau_end: -0.01, ..Default::default() };
    let run = integrate_fuchsian(&init, tr, &tr.params, &cfg).unwrap();
    assert_eq!(run.final_state.sup_all(), 0.0);
    let a = assemble(&init, tr, &tr.params).unwrap();
    assert!(a.source.iter().all(|v| *v == 0.0));
    let en = energy_monitor(&run.records);
    assert!(en.all_ok);
}

#[test]
fn transport_coefficient_at_start() {
    let tr = reference();
    let p = tr.params;
    let st = FuchsianState::zeros(TorusGrid::new(1, 4).unwrap(), -1.0);
    let a = assemble(&st, tr, &p).unwrap();
    let chi0 = tr.at(tr.data.t0).unwrap().chi;
    let want = p.m * chi0 / (p.gauge * tr.constants.b_const * -1.0);
    assert!((a.transport_coef - want).abs() < 1e-14 * want.abs());
    assert!((chi0 - 2f64.powf(-2.0 / 3.0)).abs() < 1e-14);
    assert_eq!(a.frak_b.len(), 4);
    assert_eq!(transport_matrix(1, 0, a.transport_coef), transport_matrix(1, 0, a.transport_coef).transpose());
}

#[test]
fn chain_rule_fourth_order() {
    let tr = reference();
    let p = tr.params;
    let h = |tau: f64| tr.t_of_tau(tau).unwrap().sin();
    let tau = -0.5;
    let rp = tr.at_tau(tau).unwrap();
    let exact = rp.t.cos() / dtau_dt(&rp, &p, tr.constants.b_const);
    let fd = |d: f64| (-h(tau + 2.0 * d) + 8.0 * h(tau + d) - 8.0 * h(tau - d) + h(tau - 2.0 * d)) / (12.0 * d);
    let e1 = (fd(0.01) - exact).abs();
    let e2 = (fd(0.005) - exact).abs();
    let ratio = e1 / e2;
    assert!(e2 < 1e-6, "{e1} {e2}");
    assert!(ratio > 12.0 && ratio < 20.0, "error ratio {ratio}");
}

#[test]
fn source_terms_vanish_toward_zero_tau() {
    let tr = reference();
    let p = tr.params;
    let bc = tr.constants.b_const;
    let at = |tau: f64| remainders_at(&tr.at_tau(tau).unwrap(), &p, bc, 0.0, 0.01).unwrap();
    let (a, b) = (at(-0.5), at(-1e-4));
    assert!(b.l.abs() < 1e-2 * a.l.abs() && b.k.abs() < 1e-2 * a.k.abs());
}

#[test]
fn vanishing_denominator_is_reported() {
    let tr = reference();
    let rp = tr.at(1.0).unwrap();
    let u = -(1.0 + 1.0 / rp.f);
    let e = remainders_at(&rp, &tr.params, tr.constants.b_const, 0.0, u).unwrap_err();
    assert!(matches!(e, FuchsianError::RDenominatorVanishes { .. }));
}

#[test]
fn condition_v_on_zero_run_near_zero_tau() {
    let tr = reference();
    let grid = TorusGrid::new(1, 4).unwrap();
    let samples: Vec<FuchsianState> = [-1.0, -0.1, -1e-3, -1e-4].iter().map(|&t| FuchsianState::zeros(grid, t)).collect();
    let lmin = tr.constants.lambda_tilde.iter().cloned().fold(f64::INFINITY, f64::min);
    let rep = condition_v_check(&samples, tr, &tr.params, 0.5 * lmin, 0.5).unwrap();
    let last = rep.samples.last().unwrap();
    assert!(last.pass && last.in_gamma);
    assert!(!rep.samples[0].pass);
    assert_eq!(rep.tau_delta, rep.samples.iter().filter(|s| !s.pass).map(|s| s.tau).reduce(f64::max));
    assert!(rep.kappa * tr.params.gauge <= lmin - rep.eps + 1e-15);
    assert!(matches!(
        condition_v_check(&samples, tr, &tr.params, lmin, 0.5),
        Err(FuchsianError::EpsTooLarge { .. })
    ));
}

fn sigma_run(sigma: f64, tol: f64, taus: &[f64]) -> (FuchsianRun, PdeRun) {
    let tr = reference();
    let p = tr.params;
    let grid = TorusGrid::new(1, 32).unwrap();
    let ts: Vec<f64> = taus.iter().map(|&x| tr.t_of_tau(x).unwrap()).collect();
    let cfg = PerturbationConfig {
        rel_tol: tol,
        output_times: ts,
        snapshot_every: 40,
        f_stop: 1e3,
        ..PerturbationConfig::single_mode(grid, sigma)
    };
    let pde = integrate_pde(&cfg, tr, &p).unwrap();
    let init = to_fuchsian(&initial_fields(&cfg, tr), tr, &p).unwrap();
    let fc = FuchsianConfig { rel_tol: tol, tau_end: taus[taus.len() - 1], output_taus: taus.to_vec(), ..Default::default() };
    (integrate_fuchsian(&init, tr, &p, &fc).unwrap(), pde)
}

fn cross_diff(f: &FuchsianRun, pde: &PdeRun) -> f64 {
    let tr = reference();
    f.outputs
        .iter()
        .chain(std::iter::once(&f.final_state))
        .map(|o| {
            let t = tr.t_of_tau(o.tau).unwrap();
            let sn = pde.snapshots.iter().min_by(|a, b| (a.state.t - t).abs().total_cmp(&(b.state.t - t).abs())).unwrap();
            let u = to_fuchsian(&sn.state, tr, &tr.params).unwrap();
            u.to_vec().iter().zip(o.to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn residual_zero_for_zero_data() {
    let (_, pde) = sigma_run(0.0, 1e-10, &[-0.8, -0.5]);
    let res = fuchsian_residual(&pde.snapshots, reference(), &reference().params).unwrap();
    assert!(!res.is_empty() && res.iter().all(|r| r.sup == 0.0));
}

#[test]
fn cross_integrator_gap_shrinks_with_tolerance() {
    let taus = [-0.8, -0.6, -0.4];
    let (f1, p1) = sigma_run(1e-2, 1e-6, &taus);
    let (f2, p2) = sigma_run(1e-2, 1e-7, &taus);
    let (d1, d2) = (cross_diff(&f1, &p1), cross_diff(&f2, &p2));
    assert!(d2 < d1 && d1 < 1e-6, "{d1} {d2}");
}

#[test]
fn energy_envelope_scales_with_data() {
    let taus = [-0.8, -0.6];
    let (a, _) = sigma_run(1e-3, 1e-10, &taus);
    let (b, _) = sigma_run(5e-4, 1e-10, &taus);
    let (ea, eb) = (energy_monitor(&a.records), energy_monitor(&b.records));
    assert!((ea.norm0 - 2.0 * eb.norm0).abs() < 1e-14 * ea.norm0);
    let env_a = energy_envelope(-0.5, ea.tau0, ea.norm0, 0.3, 0.2);
    let env_b = energy_envelope(-0.5, eb.tau0, eb.norm0, 0.3, 0.2);
    assert!((env_a - 2.0 * env_b).abs() < 1e-14 * env_a);
    assert!(ea.all_ok && eb.all_ok);
}
