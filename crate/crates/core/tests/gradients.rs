use santalo::checks::{gradient_errors, gradient_tolerance};
use santalo::functionals::Functional;
use santalo::gauge::{Gauge, GaugeNetwork, SymmetrizedGauge, SymmetryGroup};
use santalo::{Discretization, Evaluator};

fn coarse(dim: usize) -> Evaluator {
    let mut disc = Discretization::default_for(dim);
    disc.quadrature.volume_h = if dim == 2 { 0.04 } else { 0.15 };
    disc.quadrature.boundary_m = if dim == 2 { 256 } else { 512 };
    if dim == 3 {
        disc.mfs.n_sources = 60;
        disc.mfs.n_collocation = 240;
    }
    Evaluator::new(dim, &disc).unwrap()
}

#[test]
fn network_gradients_2d() {
    let eval = coarse(2);
    let kinds = [
        Functional::Vol,
        Functional::Per,
        Functional::W,
        Functional::E,
        Functional::T,
        Functional::Mu1,
        Functional::Mu2,
    ];
    for seed in 0..2 {
        let net = GaugeNetwork::init_random_with_jitter(2, 8, seed, 1.0, 0.5).unwrap();
        let idx: Vec<usize> = (0..net.params().len()).collect();
        let errs = gradient_errors(&eval, &net, &kinds, &idx, 1e-5).unwrap();
        for (k, e) in kinds.iter().zip(errs) {
            assert!(e <= gradient_tolerance(*k), "seed {seed} {k}: {e:.3e}");
        }
    }
}

#[test]
fn symmetrized_gradients_2d() {
    let eval = coarse(2);
    let net = GaugeNetwork::init_random_with_jitter(2, 8, 5, 1.0, 0.5).unwrap();
    let g = SymmetrizedGauge::new(net, SymmetryGroup::axis_reflections(2)).unwrap();
    let kinds = [Functional::Vol, Functional::Per, Functional::W, Functional::T];
    let idx: Vec<usize> = (0..g.params().len()).step_by(2).collect();
    let errs = gradient_errors(&eval, &g, &kinds, &idx, 1e-5).unwrap();
    for (k, e) in kinds.iter().zip(errs) {
        assert!(e <= gradient_tolerance(*k), "{k}: {e:.3e}");
    }
}

#[test]
fn network_gradients_3d() {
    let eval = coarse(3);
    let net = GaugeNetwork::init_random_with_jitter(3, 12, 3, 1.0, 0.4).unwrap();
    let kinds = [Functional::Vol, Functional::Per, Functional::W, Functional::E, Functional::T];
    let idx: Vec<usize> = (0..net.params().len()).step_by(4).collect();
    let errs = gradient_errors(&eval, &net, &kinds, &idx, 1e-5).unwrap();
    for (k, e) in kinds.iter().zip(errs) {
        assert!(e <= gradient_tolerance(*k), "{k}: {e:.3e}");
    }
}

#[test]
fn degenerate_pair_sum_gradient_on_disk() {
    // the disk-like symmetric net has μ₁ = μ₂; their sum stays differentiable
    let eval = coarse(2);
    let net = GaugeNetwork::init_random_with_jitter(2, 16, 0, 1.0, 0.0).unwrap();
    let kinds = [Functional::Mu1, Functional::Mu2];
    let ad = eval.values_and_gradients(&net, &kinds).unwrap();
    assert!((ad[0].0 / ad[1].0 - 1.0).abs() < 1e-6, "{} {}", ad[0].0, ad[1].0);
    let theta = net.params().to_vec();
    let h = 1e-5;
    let mut fd = Vec::new();
    let mut an = Vec::new();
    for i in (0..theta.len()).step_by(3) {
        let mut t = theta.clone();
        t[i] += h;
        let up: f64 = eval.values(&net.with_params(&t), &kinds).unwrap().iter().sum();
        t[i] = theta[i] - h;
        let dn: f64 = eval.values(&net.with_params(&t), &kinds).unwrap().iter().sum();
        fd.push((up - dn) / (2.0 * h));
        an.push(ad[0].1[i] + ad[1].1[i]);
    }
    let err = santalo::checks::relative_error(&an, &fd, 1e-2);
    assert!(err <= 1e-3, "{err:.3e}");
}
