use psmlab::model::{CycleNet, LossBreakdown, ModelConfig, TermWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn miniature() -> ModelConfig {
    ModelConfig {
        image_size: 8,
        channels: 3,
        embedding_dim: 4,
        widths: vec![2, 2],
        // a larger output gain keeps every generator weight influential
        output_gain: 1.0,
        ..ModelConfig::default()
    }
}

fn term(l: &LossBreakdown, t: usize) -> f64 {
    [l.reconstruction, l.cycle_consistency, l.neutral_symmetric][t]
}

/// Worst relative error over `samples` random coordinates for loss term `t`.
fn worst_relative_error(t: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = CycleNet::<f64>::new(miniature(), seed).unwrap();
    // stay away from the clamp boundaries
    let a: Vec<f64> = (0..192).map(|_| rng.random_range(0.3..0.7)).collect();
    let b: Vec<f64> = (0..192).map(|_| rng.random_range(0.3..0.7)).collect();
    let mut w = [0.0; 3];
    w[t] = 1.0;
    let weights = TermWeights {
        reconstruction: w[0],
        cycle: w[1],
        symmetric: w[2],
    };
    let mut grad = net.zeros_like();
    net.accumulate_grads(&a, &b, weights, 1.0, &mut grad, 1.0).unwrap();
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let analytic: Vec<f64> = grad.params().iter().flat_map(|p| p.data.iter().copied()).collect();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut informative = 0;
    for _ in 0..samples {
        let flat = rng.random_range(0..total);
        let (mut ti, mut off) = (0, flat);
        while off >= sizes[ti] {
            off -= sizes[ti];
            ti += 1;
        }
        let eval = |delta: f64| {
            let mut n = net.clone();
            n.params_mut()[ti].data[off] += delta;
            term(&n.losses(&a, &b, 1.0).unwrap(), t)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let an = analytic[flat];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
        worst = worst.max(rel);
        if an.abs() > 1e-7 {
            informative += 1;
        }
    }
    assert!(informative * 2 >= samples, "only {informative} coordinates with a visible gradient");
    worst
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    let e = worst_relative_error(0, 100, 11);
    eprintln!("worst relative error {e:.3e}");
    assert!(e <= 1e-4, "worst relative error {e}");
}

#[test]
fn cycle_gradient_matches_finite_differences() {
    let e = worst_relative_error(1, 100, 12);
    eprintln!("worst relative error {e:.3e}");
    assert!(e <= 1e-4, "worst relative error {e}");
}

#[test]
fn symmetric_gradient_matches_finite_differences() {
    let e = worst_relative_error(2, 100, 13);
    eprintln!("worst relative error {e:.3e}");
    assert!(e <= 1e-4, "worst relative error {e}");
}
