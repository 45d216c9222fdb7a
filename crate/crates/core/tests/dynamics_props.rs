// Properties of the Euler flow: energy monotonicity, determinism, mass
// conservation, tangency.

use aml::attention::Normalization;
use aml::dynamics::{run, uniform_init, velocity, DynamicsConfig, Mode};
use aml::perceptron::{ActivationKind, PerceptronParams};

fn monotone_run(mode: Mode) -> (usize, f64) {
    let params = PerceptronParams::sample_standard_normal(ActivationKind::Gelu, 2, 2, 2024);
    let mut cfg = DynamicsConfig::new(1.0, mode, Normalization::Unnormalized);
    cfg.dt = 1e-3;
    cfg.max_steps = 2000;
    cfg.speed_tol = 1e-300;
    let init = uniform_init(2, 64, 3).unwrap();
    let out = run(&cfg, Some(&params), &init).unwrap();
    let snaps = &out.trajectory.snapshots;
    let sign = if mode == Mode::Descent { 1.0 } else { -1.0 };
    let mut worst: f64 = f64::NEG_INFINITY;
    for w in snaps.windows(2) {
        let steps = (w[1].step - w[0].step) as f64;
        let v = w[0].max_speed.max(w[1].max_speed);
        let slack = steps * 10.0 * cfg.dt * cfg.dt * v * v;
        worst = worst.max(sign * (w[1].energy - w[0].energy) - slack);
    }
    (snaps.len(), worst)
}

#[test]
fn descent_energy_non_increasing() {
    let (n, worst) = monotone_run(Mode::Descent);
    assert!(n > 100);
    assert!(worst <= 0.0, "energy rose by {worst} beyond slack");
}

#[test]
fn ascent_energy_non_decreasing() {
    let (_, worst) = monotone_run(Mode::Ascent);
    assert!(worst <= 0.0, "energy fell by {worst} beyond slack");
}

#[test]
fn runs_are_bit_identical() {
    let params = PerceptronParams::sample_standard_normal(ActivationKind::Relu, 3, 3, 1);
    let mut cfg = DynamicsConfig::new(2.0, Mode::Descent, Normalization::Softmax);
    cfg.max_steps = 500;
    cfg.seed = 17;
    let a = run(&cfg, Some(&params), &uniform_init(3, 40, cfg.seed).unwrap()).unwrap();
    let b = run(&cfg, Some(&params), &uniform_init(3, 40, cfg.seed).unwrap()).unwrap();
    assert_eq!(a, b);
    let bits = |o: &aml::dynamics::RunOutcome| o.final_ensemble.flat_coords().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn masses_conserved_exactly() {
    let init = uniform_init(2, 33, 5).unwrap();
    let cfg = DynamicsConfig { max_steps: 300, ..DynamicsConfig::new(3.0, Mode::Ascent, Normalization::Unnormalized) };
    let out = run(&cfg, None, &init).unwrap();
    assert_eq!(out.final_ensemble.masses(), init.masses());
    for s in &out.trajectory.snapshots {
        if let Some(e) = &s.ensemble {
            assert_eq!(e.masses(), init.masses());
        }
    }
}

#[test]
fn velocities_are_tangent() {
    let params = PerceptronParams::sample_standard_normal(ActivationKind::Gelu, 5, 4, 8);
    for norm in [Normalization::Unnormalized, Normalization::Softmax] {
        for mode in [Mode::Ascent, Mode::Descent] {
            let cfg = DynamicsConfig::new(4.0, mode, norm);
            let ens = uniform_init(5, 20, 9).unwrap();
            let v = velocity(&cfg, Some(&params), &ens).unwrap();
            for t in &v {
                let dot: f64 = t.base.coords().iter().zip(&t.vec).map(|(a, b)| a * b).sum();
                assert!(dot.abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn pure_attention_ascent_collapses_at_small_beta() {
    let cfg = DynamicsConfig::new(0.05, Mode::Ascent, Normalization::Unnormalized);
    let out = run(&cfg, None, &uniform_init(2, 64, 1).unwrap()).unwrap();
    assert_eq!(out.termination, aml::dynamics::Termination::Converged);
    assert_eq!(aml::clusters::detect(&out.final_ensemble, 0.05).unwrap().len(), 1);
}
