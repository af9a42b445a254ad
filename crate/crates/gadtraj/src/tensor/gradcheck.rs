//! Finite-difference gradient verification and gradient-norm clipping.

use super::{Tape, Tensor, Var};

/// Compare analytic gradients of a scalar-valued tape function against
/// central differences at `x`. Returns the max over coordinates of
/// `|analytic - fd| / max(1, |analytic|)`.
///
/// `f` must build the same graph on every call; it is invoked once for the
/// analytic pass and twice per coordinate for the differences.
pub fn check_gradients<F>(f: F, x: &Tensor, h: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_grad());
    let loss = f(&mut tape, xv);
    assert_eq!(tape.value(loss).len(), 1, "check_gradients needs a scalar function");
    tape.backward(loss).expect("backward on scalar loss");
    let analytic = tape.grad_of(xv);

    let eval = |data: Vec<f64>| -> f64 {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::from_vec(x.shape.clone(), data));
        let loss = f(&mut tape, xv);
        tape.scalar_value(loss)
    };

    let mut worst = 0.0_f64;
    for i in 0..x.data.len() {
        let mut plus = x.data.clone();
        plus[i] += h;
        let mut minus = x.data.clone();
        minus[i] -= h;
        let fd = (eval(plus) - eval(minus)) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Global L2 norm over a set of gradient buffers.
pub fn grad_l2_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grad_l2_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
