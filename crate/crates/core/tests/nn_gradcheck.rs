//! Analytic gradients of every layer and of the scaled model against
//! central finite differences, 100 seeds, 64-bit.

use signkit::model::scaled_gradient_check;
use signkit::nn::gradcheck::layer_suite;

const SEEDS: u64 = 100;

fn tolerance(layer: &str) -> f64 {
    match layer {
        "dense" => 1e-7,
        "conv2d" | "softmax_cross_entropy" => 1e-6,
        _ => 1e-5,
    }
}

#[test]
fn every_layer_over_100_seeds() {
    let mut worst: Vec<(&'static str, f64, u64)> = Vec::new();
    for seed in 0..SEEDS {
        for c in layer_suite(seed) {
            match worst.iter_mut().find(|w| w.0 == c.layer) {
                Some(w) if c.max_error > w.1 => *w = (c.layer, c.max_error, seed),
                Some(_) => {}
                None => worst.push((c.layer, c.max_error, seed)),
            }
        }
    }
    for (layer, err, seed) in &worst {
        eprintln!("{layer:<22} {err:.3e} (seed {seed})");
        assert!(*err < tolerance(layer), "{layer}: {err:e} at seed {seed}");
    }
    assert_eq!(worst.len(), 8);
}

#[test]
fn scaled_model_over_100_seeds() {
    let mut worst = (0.0, String::new());
    let (mut probes, mut skipped) = (0, 0);
    for seed in 0..SEEDS {
        let c = scaled_gradient_check(seed, 3).unwrap();
        probes += c.probes;
        skipped += c.skipped;
        if c.max_error > worst.0 {
            worst = (c.max_error, format!("seed {seed} {}", c.worst));
        }
    }
    eprintln!(
        "scaled model: {:.3e} at {} ({probes} probes, {skipped} skipped)",
        worst.0, worst.1
    );
    assert!(worst.0 < 1e-4);
}
