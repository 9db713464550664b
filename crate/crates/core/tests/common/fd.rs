use probmask::mask::{self, GumbelDraw, Layout, MaskKind, MaskSample, ProbVector};
use probmask::net::{self, kaiming_normal_init, loss_and_grads, NetSpec, NetState};
use probmask::rng::{self, Purpose};
use probmask::Tensor;
use rand::Rng;

use super::rel_err;

pub fn random_batch(spec: &NetSpec, rows: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut r = rng::stream(seed, Purpose::Blobs, 1, 0, 0);
    let data = (0..rows * spec.input_len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels = (0..rows).map(|_| r.random_range(0..spec.num_classes())).collect();
    (Tensor::new(vec![rows, spec.input_len()], data).unwrap(), labels)
}

pub fn random_mask(spec: &NetSpec, seed: u64) -> MaskSample {
    let mut r = rng::stream(seed, Purpose::Blobs, 2, 0, 0);
    let values = spec
        .maskable()
        .map(|p| (0..p.numel()).map(|_| r.random_range(0.2..1.0)).collect())
        .collect();
    MaskSample {
        values,
        kind: MaskKind::Soft,
    }
}

/// Perturbs biases too, so every parameter has a non-trivial gradient.
pub fn jitter_biases(spec: &NetSpec, state: &mut NetState, seed: u64) {
    let mut r = rng::stream(seed, Purpose::Blobs, 3, 0, 0);
    for (p, t) in spec.params().iter().zip(&mut state.params) {
        if p.mask_slot.is_none() {
            for v in t.data_mut() {
                *v = r.random_range(-0.1..0.1);
            }
        }
    }
}

/// Checks weight and mask gradients on `per_tensor` coordinates of every tensor.
pub fn check_layer_gradients(spec: &NetSpec, seed: u64, per_tensor: usize) -> usize {
    let mut state = kaiming_normal_init(spec, seed).unwrap();
    jitter_biases(spec, &mut state, seed);
    let mask = random_mask(spec, seed);
    let (x, y) = random_batch(spec, 5, seed);
    let g = loss_and_grads(spec, &state, &mask, &x, &y).unwrap();
    let loss_at = |st: &NetState, m: &MaskSample| loss_and_grads(spec, st, m, &x, &y).unwrap().loss;
    let eps = 1e-5;
    let mut pick = rng::stream(seed, Purpose::Blobs, 4, 0, 0);
    let mut checked = 0;
    for (pi, info) in spec.params().iter().enumerate() {
        for _ in 0..per_tensor {
            let j = pick.random_range(0..info.numel());
            let mut plus = state.clone();
            plus.params[pi].data_mut()[j] += eps;
            let mut minus = state.clone();
            minus.params[pi].data_mut()[j] -= eps;
            let numeric = (loss_at(&plus, &mask) - loss_at(&minus, &mask)) / (2.0 * eps);
            let analytic = g.params[pi].data()[j];
            assert!(
                rel_err(analytic, numeric) <= 1e-4,
                "{}[{j}]: analytic {analytic} numeric {numeric}",
                info.name
            );
            checked += 1;
            if let Some(slot) = info.mask_slot {
                let mut mp = mask.clone();
                mp.values[slot][j] += eps;
                let mut mm = mask.clone();
                mm.values[slot][j] -= eps;
                let numeric = (loss_at(&state, &mp) - loss_at(&state, &mm)) / (2.0 * eps);
                let analytic = g.mask[slot][j];
                assert!(
                    rel_err(analytic, numeric) <= 1e-4,
                    "mask {}[{j}]: analytic {analytic} numeric {numeric}",
                    info.name
                );
                checked += 1;
            }
        }
    }
    checked
}

/// End-to-end `∂L/∂s` through the relaxed mask at a fixed draw.
pub fn check_prob_gradient(spec: &NetSpec, seed: u64, coords: usize, tau: f64) -> usize {
    let state = kaiming_normal_init(spec, seed).unwrap();
    let layout = Layout::from_spec(spec);
    let mut r = rng::stream(seed, Purpose::Blobs, 5, 0, 0);
    let segs = layout
        .lens()
        .iter()
        .map(|&n| (0..n).map(|_| r.random_range(0.05..0.95)).collect())
        .collect();
    let s = ProbVector::new(layout.clone(), segs).unwrap();
    let draw = GumbelDraw::sample(&layout, &mut rng::stream(seed, Purpose::Gumbel, 0, 0, 0));
    let (x, y) = random_batch(spec, 6, seed);
    let loss_at = |s: &ProbVector| {
        let m = mask::soft_mask(s, &draw, tau).unwrap();
        net::loss_and_grads(spec, &state, &m, &x, &y).unwrap()
    };
    let g = loss_at(&s);
    let analytic = mask::chain_grad_to_prob(&g.mask, &s, &draw, tau).unwrap();
    let flat = s.to_flat();
    let analytic: Vec<f64> = analytic.concat();
    let eps = 1e-6;
    let mut checked = 0;
    for _ in 0..coords {
        let j = r.random_range(0..flat.len());
        let mut p = flat.clone();
        p[j] += eps;
        let mut m = flat.clone();
        m[j] -= eps;
        let numeric = (loss_at(&s.with_flat(&p).unwrap()).loss - loss_at(&s.with_flat(&m).unwrap()).loss) / (2.0 * eps);
        if analytic[j].abs() <= 1e-8 && numeric.abs() <= 1e-8 {
            continue;
        }
        assert!(
            rel_err(analytic[j], numeric) <= 1e-4,
            "s[{j}]: analytic {} numeric {numeric}",
            analytic[j]
        );
        checked += 1;
    }
    checked
}

