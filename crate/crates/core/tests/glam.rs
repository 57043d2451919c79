use proptest::prelude::*;
use stochrel::benchmarks::{
    experimental_design, rs_analytic_s, rs_simulator, AdditiveNoiseSimulator, StochasticSimulator,
};
use stochrel::glam::{self, CandidateStatus, GlamConfig, GlamModel, Selection};
use stochrel::gld::{self, GldParams};
use stochrel::{mc_sample, Dataset, Error, Marginal, Matrix, RandomVector};

fn unit_inputs() -> RandomVector {
    RandomVector::unnamed(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap()
}

/// Replicated design from Y | x ~ GLD(x, 1, 0.5, 0.5) on an equispaced grid.
fn replicated_generator(points: usize, reps: usize) -> Dataset {
    let mut groups = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..points {
        let x = (i as f64 + 0.5) / points as f64;
        let p = GldParams::new(x, 1.0, 0.5, 0.5).unwrap();
        for y in p.sample(reps, 1000 + i as u64) {
            groups.push(i as u64);
            xs.push(x);
            ys.push(y);
        }
    }
    Dataset::replicated(groups, Matrix::from_vec(ys.len(), 1, xs), ys).unwrap()
}

#[test]
fn uniform_noise_median_is_recovered() {
    let sim = AdditiveNoiseSimulator::uniform_noise(0.0, 10.0, 1.0).unwrap();
    let data = experimental_design(&sim, 2000, 1).unwrap();
    let model = glam::fit(sim.inputs(), &data, &GlamConfig::default()).unwrap();
    let median = model.quantile(&[5.0], 0.5).unwrap();
    assert!((median - 5.0).abs() < 0.1, "median {median}");

    let m = &model.metadata;
    assert!(m.log_likelihood >= m.initial_log_likelihood);
    let best = m.candidates[m.selected].score.unwrap();
    for c in &m.candidates {
        if c.status == CandidateStatus::Fitted {
            assert!(c.log_likelihood.unwrap() >= m.initial_log_likelihood);
            assert!(c.score.unwrap() <= best);
        }
    }
}

#[test]
fn too_few_samples_for_the_basis_is_a_precondition_error() {
    let sim = AdditiveNoiseSimulator::uniform_noise(0.0, 10.0, 1.0).unwrap();
    let data = experimental_design(&sim, 30, 1).unwrap();
    let cfg = GlamConfig {
        location_scale_degrees: (3, 3),
        shape_degrees: (1, 1),
        ..GlamConfig::default()
    };
    assert!(matches!(
        glam::fit(sim.inputs(), &data, &cfg),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn replicated_fit_recovers_the_location_function() {
    let data = replicated_generator(50, 200);
    let model = glam::fit_replicated(&unit_inputs(), &data, &GlamConfig::default()).unwrap();
    let worst = (0..=100)
        .map(|i| {
            let x = i as f64 / 100.0;
            (model.lambda(&[x]).unwrap().location - x).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 0.1, "sup |λ1(x) − x| = {worst}");
}

#[test]
fn replicated_fit_with_one_input_value_is_the_local_fit() {
    let p = GldParams::new(2.0, 1.5, 0.3, 0.1).unwrap();
    let ys = p.sample(400, 8);
    let data = Dataset::replicated(vec![0; 400], Matrix::from_vec(400, 1, vec![0.4; 400]), ys.clone()).unwrap();
    let model = glam::fit_replicated(&unit_inputs(), &data, &GlamConfig::default()).unwrap();
    let local = gld::fit_moments(&ys).unwrap().params;
    for x in [0.0, 0.4, 0.9] {
        let l = model.lambda(&[x]).unwrap();
        for (a, b) in l.to_array().iter().zip(local.to_array()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{l:?} vs {local:?}");
        }
    }
}

#[test]
fn two_replications_are_rejected() {
    let data = replicated_generator(20, 2);
    assert!(matches!(
        glam::fit_replicated(&unit_inputs(), &data, &GlamConfig::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn constant_models_give_closed_form_failure_probabilities() {
    let rv = unit_inputs();
    // support [λ1 − 1/λ2, λ1 + 1/λ2] for λ3 = λ4 = 1
    let above = GlamModel::constant(rv.clone(), [3.0, 0.0, 1.0, 1.0]);
    assert_eq!(above.conditional_pf(&[0.3]).unwrap(), 0.0);
    let below = GlamModel::constant(rv.clone(), [-3.0, 0.0, 1.0, 1.0]);
    assert_eq!(below.conditional_pf(&[0.3]).unwrap(), 1.0);
    let shifted = GlamModel::constant(rv, [0.5, 0.0, 1.0, 1.0]);
    assert!((shifted.conditional_pf(&[0.3]).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn samples_match_the_quadrature_mean_and_stay_in_support() {
    let rv = unit_inputs();
    let model = GlamModel::constant(rv, [1.0, 0.4f64.ln(), 0.05, 0.3]);
    let p = model.lambda(&[0.5]).unwrap();
    // E[Y] = ∫ Q(u) du on a fine midpoint grid
    let m = 200_000;
    let mean_q = (0..m)
        .map(|i| p.quantile((i as f64 + 0.5) / m as f64).unwrap())
        .sum::<f64>()
        / m as f64;
    let var_q = (0..m)
        .map(|i| (p.quantile((i as f64 + 0.5) / m as f64).unwrap() - mean_q).powi(2))
        .sum::<f64>()
        / m as f64;
    let n = 100_000;
    let ys = model.sample(&[0.5], n, 3).unwrap();
    let mean = ys.iter().sum::<f64>() / n as f64;
    assert!((mean - mean_q).abs() < 3.0 * (var_q / n as f64).sqrt());
    let (lo, hi) = p.support();
    assert!(ys.iter().all(|&y| y >= lo && y <= hi));
}

#[test]
fn fitted_rs_model_is_well_formed() {
    let sim = rs_simulator();
    let data = experimental_design(&sim, 1500, 2).unwrap();
    let cfg = GlamConfig {
        location_scale_degrees: (1, 2),
        shape_degrees: (0, 1),
        q_grid: vec![1.0],
        selection: Selection::Bic,
        ..GlamConfig::default()
    };
    let model = glam::fit(sim.inputs(), &data, &cfg).unwrap();
    let xs = mc_sample(sim.inputs(), 100_000, 5);
    let mut pred = glam::Predictor::new(&model);
    for x in xs.rows() {
        assert!(pred.lambda(x).scale > 0.0);
        let s = pred.conditional_pf(x);
        assert!((0.0..=1.0).contains(&s));
    }
    // continuity of s away from support crossings, on a line through the body
    let s_at = |r: f64| model.conditional_pf(&[r, 2.0]).unwrap();
    for r in [3.5, 4.0, 4.5, 5.0] {
        let d1 = (s_at(r + 1e-3) - s_at(r)).abs();
        let d2 = (s_at(r + 1e-6) - s_at(r)).abs();
        assert!(d2 <= d1 + 1e-12 && d2 < 1e-4, "r = {r}: {d1} {d2}");
    }
    // a coarse model still tracks the exact s in the body of the inputs
    let err = (model.conditional_pf(&[4.0, 3.0]).unwrap() - rs_analytic_s(4.0, 3.0).unwrap()).abs();
    assert!(err < 0.15, "{err}");
    let m = &model.metadata;
    let best = m.candidates[m.selected].score.unwrap();
    assert!(m.candidates.iter().filter_map(|c| c.score).all(|s| s <= best));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conditional_pf_is_a_probability(c in prop::array::uniform4(-2.0..2.0f64), x in 0.0..1.0f64) {
        let model = GlamModel::constant(unit_inputs(), [c[0], c[1], c[2].abs(), c[3].abs()]);
        if let Ok(s) = model.conditional_pf(&[x]) {
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
