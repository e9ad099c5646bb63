//! Softmax cross-entropy objective.

/// Floor applied to diagonal hessian entries.
pub const HESSIAN_FLOOR: f64 = 1e-16;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Cross-entropy `-ln softmax(logits)[label]`, computed stably.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Gradient `p - onehot(label)` and diagonal hessian `max(p (1 - p), 1e-16)`
/// of the cross-entropy with respect to the logits.
pub fn softmax_grad_hess(logits: &[f64], label: usize) -> (Vec<f64>, Vec<f64>) {
    let p = softmax(logits);
    let g = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| pk - if k == label { 1.0 } else { 0.0 })
        .collect();
    let h = p.iter().map(|&pk| (pk * (1.0 - pk)).max(HESSIAN_FLOOR)).collect();
    (g, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_logits() {
        let (g, h) = softmax_grad_hess(&[0.0, 0.0, 0.0], 0);
        let expected = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        for x in h {
            assert!((x - 2.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_logits() {
        let (g, h) = softmax_grad_hess(&[10.0, -10.0, -10.0], 0);
        assert!(g.iter().all(|x| x.abs() < 1e-8));
        assert!(h.iter().all(|&x| (HESSIAN_FLOOR..1e-8).contains(&x)));
        let (_, h) = softmax_grad_hess(&[800.0, -800.0], 0);
        assert_eq!(h, vec![HESSIAN_FLOOR, HESSIAN_FLOOR]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1e3, -2.0, 5.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps = 1e-5;
        for _ in 0..50 {
            let k = rng.random_range(2..7);
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let label = rng.random_range(0..k);
            let (g, h) = softmax_grad_hess(&logits, label);
            for j in 0..k {
                let mut up = logits.clone();
                let mut dn = logits.clone();
                up[j] += eps;
                dn[j] -= eps;
                let fd_g = (cross_entropy(&up, label) - cross_entropy(&dn, label)) / (2.0 * eps);
                assert!((fd_g - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3), "g {j}: {fd_g} vs {}", g[j]);
                let fd_h = (softmax_grad_hess(&up, label).0[j] - softmax_grad_hess(&dn, label).0[j]) / (2.0 * eps);
                assert!((fd_h - h[j]).abs() <= 1e-5 * h[j].abs(), "h {j}: {fd_h} vs {}", h[j]);
            }
        }
    }
}
