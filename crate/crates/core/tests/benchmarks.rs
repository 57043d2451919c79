use stochrel::benchmarks::{
    beam_analytic_pf, beam_simulator, experimental_design, load_dataset_csv, moving_window_stats,
    provenance_sidecar_path, rs_analytic_pf, rs_analytic_s, rs_pf_from_log_parameters, rs_simulator,
    write_provenance_sidecar, StochasticSimulator, WindConfig, WindSimulator,
};
use stochrel::reliability::estimate_pf_single_loop;
use stochrel::rng;
use stochrel::{lhs_sample, Dataset, Error, Matrix};

#[test]
fn rs_reference_values() {
    assert!((rs_analytic_pf() - 3.154e-3).abs() <= 1e-6);
    // deterministic limit with a positive margin, then a zero margin
    assert_eq!(
        rs_pf_from_log_parameters([(1.6, 0.0), (0.65, 0.0), (0.0, 0.0), (0.0, 0.0)]),
        0.0
    );
    assert_eq!(
        rs_pf_from_log_parameters([(0.7, 0.1), (0.5, 0.2), (0.1, 0.03), (0.1, 0.1)]),
        0.5
    );
    let [_, _, (l1, _), (l2, _)] = rs_simulator().log_parameters();
    let s = 1.7;
    assert!((rs_analytic_s(s * (l1 + l2).exp(), s).unwrap() - 0.5).abs() < 1e-15);
    assert!(rs_analytic_s(-1.0, 2.0).is_err());
}

#[test]
fn rs_conditional_probability_matches_brute_force() {
    let sim = rs_simulator();
    let latent = sim.latent().unwrap();
    let n = 10_000_000;
    let mut r = rng::rng(17);
    let mut z = [0.0; 2];
    let mut fails = 0u64;
    for _ in 0..n {
        latent.sample_into(&mut r, &mut z);
        fails += u64::from(2.0 / z[0] - 2.0 * z[1] <= 0.0);
    }
    let mc = fails as f64 / n as f64;
    let s = rs_analytic_s(2.0, 2.0).unwrap();
    assert!((s - 0.480).abs() < 5e-4, "{s}");
    assert!((s - mc).abs() < 4.0 * (s * (1.0 - s) / n as f64).sqrt(), "{s} vs {mc}");
}

#[test]
fn rs_mean_response_from_lognormal_moments() {
    let sim = rs_simulator();
    let [_, _, (l1, z1), (l2, z2)] = sim.log_parameters();
    let inv_z1 = (-l1 + 0.5 * z1 * z1).exp();
    let mean_z2 = (l2 + 0.5 * z2 * z2).exp();
    let expected = 5.0 * inv_z1 - 2.0 * mean_z2;
    let var = 25.0 * inv_z1 * inv_z1 * (z1 * z1).exp_m1() + 4.0 * mean_z2 * mean_z2 * (z2 * z2).exp_m1();
    let n = 100_000;
    let mut r = rng::rng(2);
    let mean = (0..n).map(|_| sim.evaluate(&[5.0, 2.0], &mut r)).sum::<f64>() / n as f64;
    assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt());
}

#[test]
fn expected_s_over_lhs_reproduces_pf() {
    let sim = rs_simulator();
    let x = lhs_sample(sim.inputs(), 1_000_000, 5);
    let mean = x.rows().map(|r| rs_analytic_s(r[0], r[1]).unwrap()).sum::<f64>() / x.nrows() as f64;
    assert!((mean / rs_analytic_pf() - 1.0).abs() < 0.01, "{mean}");
}

#[test]
fn analytic_pf_agrees_with_large_monte_carlo() {
    let n = 10_000_000;
    let rs = rs_simulator();
    let beam = beam_simulator(0.02).unwrap();
    for (sim, p) in [
        (&rs as &dyn StochasticSimulator, rs_analytic_pf()),
        (&beam, beam_analytic_pf(0.02).unwrap()),
    ] {
        let e = estimate_pf_single_loop(sim, sim.inputs(), n, 99).unwrap();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((e.pf - p).abs() < 4.0 * se, "{}: {} vs {p}", sim.name(), e.pf);
    }
}

#[test]
fn beam_reference_values() {
    assert!((beam_analytic_pf(0.02).unwrap() - 1.019e-3).abs() <= 1e-6);
    let beam = beam_simulator(0.02).unwrap();
    let deflection = 5.0 * 10_000.0 * 5f64.powi(4) / (32.0 * 3e10 * 0.15 * 0.3f64.powi(3));
    assert!((deflection - 8.038e-3).abs() < 1e-6);
    let g = beam.evaluate_at_latent(&[10_000.0, 5.0, 0.15, 0.3], &[3e10]).unwrap();
    assert!((g - (0.02 - deflection)).abs() < 1e-15);
    assert!((g - 0.0120).abs() < 1e-4);
    assert!(beam_analytic_pf(0.05).unwrap() < beam_analytic_pf(0.02).unwrap());
    assert!(beam_analytic_pf(10.0).unwrap() < 1e-100);
}

#[test]
fn dataset_csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ok.csv");
    std::fs::write(&path, "x1,x2,y\n1,2,3\n4,5,6.5\n-1e-3,0.25,7\n").unwrap();
    let d = load_dataset_csv(&path, Some(2)).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.y, vec![3.0, 6.5, 7.0]);
    let prov = d.provenance.as_ref().unwrap();
    assert_eq!(prov.rows, 3);
    assert_eq!(prov.sha256.len(), 64);
    let side = write_provenance_sidecar(&d, &path).unwrap();
    assert_eq!(side, provenance_sidecar_path(&path));
    assert!(std::fs::read_to_string(side).unwrap().contains(&prov.sha256));

    let bad = dir.path().join("nan.csv");
    std::fs::write(&bad, "x1,y\n1,2\n2,NaN\n").unwrap();
    match load_dataset_csv(&bad, None) {
        Err(Error::Dataset { reason, .. }) => assert!(reason.contains("row 2") && reason.contains("`y`"), "{reason}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(load_dataset_csv(&path, Some(3)).is_err());

    // full-precision round trip, replication-free and replicated
    let sim = rs_simulator();
    let original = experimental_design(&sim, 200, 4).unwrap();
    let file = dir.path().join("design.csv");
    original.write_csv(&file).unwrap();
    let back = load_dataset_csv(&file, Some(2)).unwrap();
    assert_eq!(back.x, original.x);
    assert_eq!(back.y, original.y);

    let groups: Vec<u64> = (0..6).map(|i| i / 3).collect();
    let x = Matrix::from_vec(6, 1, vec![0.1, 0.1, 0.1, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    let rep = Dataset::replicated(groups.clone(), x, vec![1.0, 2.0, 3.0, 4.0, 5.0, std::f64::consts::PI]).unwrap();
    let file = dir.path().join("rep.csv");
    rep.write_csv(&file).unwrap();
    let back = load_dataset_csv(&file, None).unwrap();
    assert_eq!(back.groups, Some(groups));
    assert_eq!(back.x, rep.x);
    assert_eq!(back.y, rep.y);
}

#[test]
fn window_quantiles_are_ordered() {
    let sim = WindSimulator::new(WindConfig::default()).unwrap();
    let data = sim.response_dataset(100_000, 3).unwrap();
    let grid: Vec<f64> = (0..=44).map(|i| 3.0 + 0.5 * i as f64).collect();
    for w in moving_window_stats(&data, 0.25, &grid, &[0.025, 0.5, 0.975]).unwrap() {
        if let Some(q) = w.quantiles {
            assert!(q[0] <= q[1] && q[1] <= q[2], "u = {}", w.u);
        } else {
            assert!(w.flagged);
        }
    }
}
