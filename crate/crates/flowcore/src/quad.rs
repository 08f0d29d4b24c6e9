//! Right-endpoint rectangle quadrature on `[-1, x_i]`.
//!
//! All `Q` coefficients equal `Δ = (x_i + 1)/Q` and the abscissas replace the
//! last coordinate with `-1 + jΔ`; the positivity of the coefficients is what
//! keeps the pseudo-network loss convex, which is why no higher-order rule is
//! offered. Node `Q` is pinned to `x_i` itself so the j = Q identity
//! `-1 + QΔ = x_i` holds exactly in floating point too.

use alloc::vec::Vec;

use crate::activations::elu_plus_one;
use crate::model::{embed_clamped, unf_net_at_embedded, Family, FlowModel};
use crate::{math, CoreError};

/// Rectangle scheme: the only knob is the number of points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadratureScheme {
    pub q_points: usize,
}

impl QuadratureScheme {
    pub fn new(q_points: usize) -> Self {
        assert!(q_points >= 1);
        QuadratureScheme { q_points }
    }
}

/// Coefficient and abscissas for integrating over the last coordinate of
/// `x_prefix_full` (which includes the upper limit `x_i` itself).
///
/// Returns `(Δ, t_1..t_Q)` with `t_j = -1 + jΔ` and `t_Q = x_i` exactly.
pub fn node_coords(xi: f64, q: usize) -> Result<(f64, Vec<f64>), CoreError> {
    if q < 1 {
        return Err(CoreError::InvalidConfig("Q must be at least 1"));
    }
    if xi < -1.0 {
        return Err(CoreError::LowerLimitExceedsUpper);
    }
    let delta = (xi + 1.0) / q as f64;
    let mut ts: Vec<f64> = (1..q).map(|j| -1.0 + j as f64 * delta).collect();
    ts.push(xi);
    Ok((delta, ts))
}

/// The full `(coefficient, node-vector)` sequence; node `j` replaces the last
/// coordinate of `x_prefix_full` with `-1 + jΔ`.
pub fn quad_nodes(x_prefix_full: &[f64], q: usize) -> Result<Vec<(f64, Vec<f64>)>, CoreError> {
    let n = x_prefix_full.len();
    assert!(n >= 1, "need at least the integration coordinate");
    let (delta, ts) = node_coords(x_prefix_full[n - 1], q)?;
    Ok(ts
        .into_iter()
        .map(|t| {
            let mut node = x_prefix_full.to_vec();
            node[n - 1] = t;
            (delta, node)
        })
        .collect())
}

/// `f̃_i = Σ_j Δ · φ(N_i(node_j))`: the rectangle-rule reconstruction of `f_i`
/// from the modeled derivative. Quadrature nodes may fall slightly outside
/// the unit ball, so their embedding clamps the residual coordinate at zero.
pub fn reconstruct_f(
    model: &FlowModel,
    i: usize,
    x_prefix: &[f64],
    q: usize,
) -> Result<f64, CoreError> {
    if model.family != Family::Unf {
        return Err(CoreError::InvalidConfig(
            "quadrature reconstruction applies to the UNF family",
        ));
    }
    let p = model.dim(i);
    if x_prefix.len() != i {
        return Err(CoreError::ShapeMismatch {
            expected: i,
            got: x_prefix.len(),
        });
    }
    let (delta, ts) = node_coords(x_prefix[i - 1], q)?;
    let mut node = x_prefix.to_vec();
    let mut acc = 0.0;
    for t in ts {
        node[i - 1] = t;
        let xbar = embed_clamped(&node);
        acc += delta * elu_plus_one(unf_net_at_embedded(p, &xbar));
    }
    Ok(acc)
}

/// `|rectangle sum of fprime − f_analytic(upper)|` on `[-1, upper]`; the test
/// oracle for the O(1/Q) error decay.
pub fn quad_error_oracle<F, G>(fprime: F, f_analytic: G, upper: f64, q: usize) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let (delta, ts) = node_coords(upper, q).expect("upper >= -1");
    let sum: f64 = ts.iter().map(|&t| delta * fprime(t)).sum();
    math::abs(sum - f_analytic(upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_unf, BaseDist};
    use crate::Rng;

    #[test]
    fn nodes_hand_case() {
        let nodes = quad_nodes(&[0.5], 4).unwrap();
        let expect = [-0.625, -0.25, 0.125, 0.5];
        assert_eq!(nodes.len(), 4);
        for ((delta, node), want) in nodes.iter().zip(expect) {
            assert!((delta - 0.375).abs() < 1e-15);
            assert!((node[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_interval() {
        let nodes = quad_nodes(&[-1.0], 7).unwrap();
        assert!(nodes.iter().all(|(d, n)| *d == 0.0 && n[0] == -1.0));
    }

    #[test]
    fn last_abscissa_is_upper_limit_exactly() {
        let mut rng = Rng::from_seed(9);
        for _ in 0..200 {
            let xi = rng.uniform_in(-1.0, 1.0);
            let q = 1 + rng.index(64);
            let nodes = quad_nodes(&[0.1, xi], q).unwrap();
            assert_eq!(nodes.last().unwrap().1[1], xi);
            assert_eq!(nodes.last().unwrap().1[0], 0.1);
        }
    }

    #[test]
    fn below_lower_limit_errors() {
        assert_eq!(
            quad_nodes(&[-1.5], 4).unwrap_err(),
            CoreError::LowerLimitExceedsUpper
        );
    }

    #[test]
    fn constant_integrand_is_exact() {
        // Zero network has derivative φ(0) = 1 everywhere.
        let mut rng = Rng::from_seed(10);
        let mut model = init_unf(1, 4, 0.2, BaseDist::Exponential, &mut rng);
        for p in &mut model.per_dim {
            p.outer.iter_mut().for_each(|a| *a = 0.0);
        }
        for q in [1usize, 3, 17, 64] {
            let v = reconstruct_f(&model, 1, &[0.0], q).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "Q={q}: {v}");
            let v = reconstruct_f(&model, 1, &[0.5], q).unwrap();
            assert!((v - 1.5).abs() < 1e-12, "Q={q}: {v}");
        }
    }

    #[test]
    fn linear_integrand_error_closed_form() {
        // fprime(t) = t, upper 0.5, Q = 4: sum = 0.375·(-0.25) = -0.09375,
        // analytic -0.375, right-endpoint error Δ(f'(b)-f'(a))/2 = 0.28125.
        let err = quad_error_oracle(|t| t, |u| (u * u - 1.0) / 2.0, 0.5, 4);
        assert_eq!(err, 0.28125);
        let err1 = quad_error_oracle(|_| 1.0, |u| u + 1.0, 0.5, 9);
        assert!(err1 < 1e-15);
    }

    #[test]
    fn first_order_convergence() {
        let cases: [(fn(f64) -> f64, fn(f64) -> f64); 3] = [
            (|t| t, |u| (u * u - 1.0) / 2.0),
            (|t| t * t, |u| (u * u * u + 1.0) / 3.0),
            (|t| t.sin(), |u| (-1.0f64).cos() - u.cos()),
        ];
        for (fp, fa) in cases {
            for q in [8usize, 16, 32] {
                let e1 = quad_error_oracle(fp, fa, 0.5, q);
                let e2 = quad_error_oracle(fp, fa, 0.5, 2 * q);
                assert!(e2 <= 0.6 * e1, "Q={q}: {e2} !<= 0.6*{e1}");
                let ratio = e1 / e2;
                assert!((1.8..=2.2).contains(&ratio), "Q={q} ratio {ratio}");
            }
        }
    }

    #[test]
    fn coefficients_are_nonnegative() {
        let mut rng = Rng::from_seed(13);
        for _ in 0..100 {
            let xi = rng.uniform_in(-1.0, 1.0);
            for (d, _) in quad_nodes(&[xi], 1 + rng.index(32)).unwrap() {
                assert!(d >= 0.0);
            }
        }
    }
}
