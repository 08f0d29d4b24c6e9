//! Losses and hand-rolled exact gradients.
//!
//! UNF, exponential base:
//! `L̃(∇f, x) = Σ_i f̃_i − Σ_i log φ(N_i(x̄_{1:i}))` with
//! `f̃_i = Σ_{j=1}^Q Δ φ(N_i(x̄^{(j)}))` the rectangle reconstruction.
//!
//! CNF (the network itself is `f_i`, no quadrature):
//! exponential base `Σ_i (N_i − log ∂N_i/∂x_i)`,
//! Gaussian base `Σ_i (N_i²/2 − log ∂N_i/∂x_i)`.
//!
//! Gradients are reverse-mode by hand. For the UNF quadrature term the chain
//! rule factors per node as `Δ φ'(N) a_r σ'(pre_r) x̄`, and for the log term
//! as `−(φ'/φ)(N) a_r σ'(pre_r) x̄`; only the last two embedded coordinates
//! differ across nodes, so the node loop accumulates three per-neuron scalars
//! and the outer product with the shared prefix happens once at the end.

use alloc::vec;
use alloc::vec::Vec;

use crate::activations::{
    elu_plus_one, elu_plus_one_prime, elu_ratio, ln_elu_plus_one, tanh, tanh_prime_from,
    tanh_second_from,
};
use crate::linalg::Mat;
use crate::model::{BaseDist, Family, FlowModel, Offsets};
use crate::quad::node_coords;
use crate::{math, CoreError};

/// Per-dimension loss terms: `(reconstruction f̃_i, log term −log ∂f_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_dim: Vec<(f64, f64)>,
}

impl LossBreakdown {
    fn from_terms(per_dim: Vec<(f64, f64)>) -> Result<Self, CoreError> {
        let mut total = 0.0;
        for &(recon, logterm) in &per_dim {
            total += recon + logterm;
        }
        if !total.is_finite() {
            return Err(CoreError::NumericOverflow { step: 0 });
        }
        Ok(LossBreakdown { total, per_dim })
    }
}

/// Column-major copy of the combined weights `w̄ + w`, plus combined biases.
/// Lets the per-node inner loops run down contiguous neuron arrays.
struct Columns {
    cols: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

fn combined_columns(p: &crate::model::FlowParams) -> Columns {
    let m = p.width;
    let ncols = p.input_dim();
    let mut cols = vec![vec![0.0; m]; ncols];
    let mut bias = vec![0.0; m];
    for r in 0..m {
        let w0 = p.w0.row(r);
        let dw = p.dw.row(r);
        for c in 0..ncols {
            cols[c][r] = w0[c] + dw[c];
        }
        bias[r] = p.b0[r] + p.db[r];
    }
    Columns { cols, bias }
}

/// Blocked sum with four fixed-order accumulators: vectorizes while staying
/// deterministic. The pseudo-network loss uses the same reduction so that it
/// matches the network loss bit-for-bit at zero offsets.
#[inline]
pub(crate) fn blocked_sum(vals: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = vals.len() / 4;
    for k in 0..chunks {
        let b = 4 * k;
        for l in 0..4 {
            acc[l] += vals[b + l];
        }
    }
    let mut tail = 0.0;
    for v in &vals[4 * chunks..] {
        tail += v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// UNF loss (and optionally gradient) contribution of dimension `i`.
///
/// `xs` is `x_{1:i}` including the integration coordinate. When `grad` is
/// given, `weight * ∂L̃_i/∂(dw, db)` is accumulated into it.
fn unf_dim_loss_grad(
    p: &crate::model::FlowParams,
    xs: &[f64],
    q: usize,
    mut grad: Option<(&mut Mat, &mut [f64], f64)>,
) -> Result<(f64, f64), CoreError> {
    let i = p.dim_index;
    if xs.len() != i {
        return Err(CoreError::ShapeMismatch {
            expected: i,
            got: xs.len(),
        });
    }
    let sq: f64 = xs.iter().map(|v| v * v).sum();
    if sq > 1.0 {
        return Err(CoreError::PointOutsideBall);
    }
    let m = p.width;
    let prefix = &xs[..i - 1];
    let prefix_sq: f64 = prefix.iter().map(|v| v * v).sum();
    let (delta, ts) = node_coords(xs[i - 1], q)?;

    let cw = combined_columns(p);
    // Prefix part of the pre-activation, shared by every node (no bias yet;
    // the canonical order is coordinates ascending, bias last).
    let mut acc0 = vec![0.0f64; m];
    for (c, &xc) in prefix.iter().enumerate() {
        let col = &cw.cols[c];
        for r in 0..m {
            acc0[r] += col[r] * xc;
        }
    }

    let col_t = &cw.cols[i - 1];
    let col_e = &cw.cols[i];
    let mut pre = vec![0.0f64; m];
    let mut terms = vec![0.0f64; m];
    // Per-neuron accumulators for the gradient: plain, t-weighted and
    // residual-weighted sums of s_j · a_r · 1[pre > 0].
    let mut g_plain = vec![0.0f64; m];
    let mut g_t = vec![0.0f64; m];
    let mut g_e = vec![0.0f64; m];
    let want_grad = grad.is_some();
    let weight = grad.as_ref().map(|g| g.2).unwrap_or(0.0);

    let mut recon = 0.0;
    let mut logterm = 0.0;
    let n_points = ts.len();
    for (j, &t) in ts.iter().enumerate() {
        // Same expression shape as embed_clamped so the two agree bit-exactly.
        let e = math::sqrt((1.0 - (prefix_sq + t * t)).max(0.0));
        for r in 0..m {
            pre[r] = (acc0[r] + col_t[r] * t + col_e[r] * e) + cw.bias[r];
        }
        for r in 0..m {
            let x = pre[r];
            terms[r] = if x > 0.0 { p.outer[r] * x } else { 0.0 };
        }
        let n_val = blocked_sum(&terms);
        recon += delta * elu_plus_one(n_val);
        let last = j + 1 == n_points;
        if last {
            // Node Q sits exactly at x_i, which is also the log-term point.
            logterm = -ln_elu_plus_one(n_val);
        }
        if want_grad {
            let mut s = weight * delta * elu_plus_one_prime(n_val);
            if last {
                s -= weight * elu_ratio(n_val);
            }
            for r in 0..m {
                if pre[r] > 0.0 {
                    let g = s * p.outer[r];
                    g_plain[r] += g;
                    g_t[r] += g * t;
                    g_e[r] += g * e;
                }
            }
        }
    }

    if let Some((gdw, gdb, _)) = grad.as_mut() {
        for r in 0..m {
            let row = gdw.row_mut(r);
            for (c, &xc) in prefix.iter().enumerate() {
                row[c] += g_plain[r] * xc;
            }
            row[i - 1] += g_t[r];
            row[i] += g_e[r];
            gdb[r] += g_plain[r];
        }
    }
    Ok((recon, logterm))
}

/// CNF loss (and optionally gradient) contribution of dimension `i`.
fn cnf_dim_loss_grad(
    tau: f64,
    p: &crate::model::FlowParams,
    xs: &[f64],
    base: BaseDist,
    mut grad: Option<(&mut Mat, &mut [f64], f64)>,
) -> Result<(f64, f64), CoreError> {
    let i = p.dim_index;
    if xs.len() != i {
        return Err(CoreError::ShapeMismatch {
            expected: i,
            got: xs.len(),
        });
    }
    let m = p.width;
    let own = i - 1;
    let mut th = vec![0.0f64; m];
    let mut w_own = vec![0.0f64; m];
    let mut n_acc = 0.0;
    let mut d_acc = 0.0;
    for r in 0..m {
        let t = tanh(p.pre_activation(r, xs));
        th[r] = t;
        let w = p.w0.row(r)[own] + p.dw.row(r)[own];
        w_own[r] = w;
        n_acc += p.outer[r] * t;
        d_acc += p.outer[r] * tanh_prime_from(t) * w;
    }
    let n_val = tau * n_acc;
    let d_val = tau * d_acc;
    if d_val <= 0.0 {
        return Err(CoreError::NonpositiveJacobian);
    }
    let recon = match base {
        BaseDist::Exponential => n_val,
        BaseDist::Gaussian => 0.5 * n_val * n_val,
    };
    let logterm = -math::ln(d_val);

    if let Some((gdw, gdb, weight)) = grad.as_mut() {
        let coef_n = *weight
            * match base {
                BaseDist::Exponential => 1.0,
                BaseDist::Gaussian => n_val,
            };
        let coef_d = -*weight / d_val;
        for r in 0..m {
            let a = p.outer[r];
            let t = th[r];
            let tp = tanh_prime_from(t);
            let tpp = tanh_second_from(t);
            // n-part: τ a tp x_c ; d-part: τ a (tpp w_own x_c + tp δ_{c=own})
            let gn = coef_n * tau * a * tp;
            let gd_shared = coef_d * tau * a * tpp * w_own[r];
            let row = gdw.row_mut(r);
            for (c, &xc) in xs.iter().enumerate() {
                row[c] += (gn + gd_shared) * xc;
            }
            row[own] += coef_d * tau * a * tp;
            gdb[r] += gn + gd_shared;
        }
    }
    Ok((recon, logterm))
}

/// UNF approximate loss `L̃(∇f, x)`; exponential base only.
pub fn unf_loss(model: &FlowModel, x: &[f64], q: usize) -> Result<LossBreakdown, CoreError> {
    if model.family != Family::Unf {
        return Err(CoreError::InvalidConfig("unf_loss requires a UNF model"));
    }
    if model.base != BaseDist::Exponential {
        return Err(CoreError::InvalidConfig(
            "the UNF loss is defined for the exponential base",
        ));
    }
    check_point(model, x)?;
    let per_dim = (1..=model.d)
        .map(|i| unf_dim_loss_grad(model.dim(i), &x[..i], q, None))
        .collect::<Result<Vec<_>, _>>()?;
    LossBreakdown::from_terms(per_dim)
}

/// CNF loss; the base distribution selects the formula.
pub fn cnf_loss(model: &FlowModel, x: &[f64]) -> Result<LossBreakdown, CoreError> {
    if model.family != Family::Cnf {
        return Err(CoreError::InvalidConfig("cnf_loss requires a CNF model"));
    }
    check_point(model, x)?;
    let per_dim = (1..=model.d)
        .map(|i| cnf_dim_loss_grad(model.tau, model.dim(i), &x[..i], model.base, None))
        .collect::<Result<Vec<_>, _>>()?;
    LossBreakdown::from_terms(per_dim)
}

/// Family-dispatched loss.
pub fn loss_of(model: &FlowModel, x: &[f64], q: usize) -> Result<LossBreakdown, CoreError> {
    match model.family {
        Family::Unf => unf_loss(model, x, q),
        Family::Cnf => cnf_loss(model, x),
        Family::CnfSquare => Err(CoreError::InvalidConfig(
            "the squared reparameterization has no training loss",
        )),
    }
}

/// Accumulate `weight * ∇_θ loss(model, x)` into `out`; returns the loss
/// total. This is the hot path the trainer calls per batch point.
pub fn accumulate_loss_grad(
    model: &FlowModel,
    x: &[f64],
    q: usize,
    weight: f64,
    out: &mut Offsets,
) -> Result<f64, CoreError> {
    check_point(model, x)?;
    let mut total = 0.0;
    for i in 1..=model.d {
        let o = &mut out.per_dim[i - 1];
        let (recon, logterm) = match model.family {
            Family::Unf => unf_dim_loss_grad(
                model.dim(i),
                &x[..i],
                q,
                Some((&mut o.dw, &mut o.db, weight)),
            )?,
            Family::Cnf => cnf_dim_loss_grad(
                model.tau,
                model.dim(i),
                &x[..i],
                model.base,
                Some((&mut o.dw, &mut o.db, weight)),
            )?,
            Family::CnfSquare => {
                return Err(CoreError::InvalidConfig(
                    "the squared reparameterization has no trainer",
                ))
            }
        };
        total += recon + logterm;
    }
    if !total.is_finite() {
        return Err(CoreError::NumericOverflow { step: 0 });
    }
    Ok(total)
}

/// Exact gradient of [`unf_loss`] with the offset shape.
pub fn unf_loss_grad(
    model: &FlowModel,
    x: &[f64],
    q: usize,
) -> Result<(LossBreakdown, Offsets), CoreError> {
    if model.family != Family::Unf {
        return Err(CoreError::InvalidConfig("unf_loss requires a UNF model"));
    }
    loss_grad(model, x, q)
}

/// Exact gradient of [`cnf_loss`] with the offset shape.
pub fn cnf_loss_grad(model: &FlowModel, x: &[f64]) -> Result<(LossBreakdown, Offsets), CoreError> {
    if model.family != Family::Cnf {
        return Err(CoreError::InvalidConfig("cnf_loss requires a CNF model"));
    }
    loss_grad(model, x, 1)
}

/// Family-dispatched exact loss gradient.
pub fn loss_grad_of(
    model: &FlowModel,
    x: &[f64],
    q: usize,
) -> Result<(LossBreakdown, Offsets), CoreError> {
    loss_grad(model, x, q)
}

fn loss_grad(
    model: &FlowModel,
    x: &[f64],
    q: usize,
) -> Result<(LossBreakdown, Offsets), CoreError> {
    check_point(model, x)?;
    let mut out = Offsets::zeros_like(model);
    let mut per_dim = Vec::with_capacity(model.d);
    for i in 1..=model.d {
        let o = &mut out.per_dim[i - 1];
        let terms = match model.family {
            Family::Unf => {
                unf_dim_loss_grad(model.dim(i), &x[..i], q, Some((&mut o.dw, &mut o.db, 1.0)))?
            }
            Family::Cnf => cnf_dim_loss_grad(
                model.tau,
                model.dim(i),
                &x[..i],
                model.base,
                Some((&mut o.dw, &mut o.db, 1.0)),
            )?,
            Family::CnfSquare => {
                return Err(CoreError::InvalidConfig(
                    "the squared reparameterization has no trainer",
                ))
            }
        };
        per_dim.push(terms);
    }
    Ok((LossBreakdown::from_terms(per_dim)?, out))
}

fn check_point(model: &FlowModel, x: &[f64]) -> Result<(), CoreError> {
    if x.len() != model.d {
        return Err(CoreError::ShapeMismatch {
            expected: model.d,
            got: x.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_cnf, init_unf};
    use crate::Rng;

    fn zero_outer(model: &mut FlowModel) {
        for p in &mut model.per_dim {
            p.outer.iter_mut().for_each(|a| *a = 0.0);
        }
    }

    #[test]
    fn unf_zero_network_hand_values() {
        let mut rng = Rng::from_seed(30);
        let mut model = init_unf(1, 6, 0.2, BaseDist::Exponential, &mut rng);
        zero_outer(&mut model);
        let lb = unf_loss(&model, &[0.0], 64).unwrap();
        assert!((lb.per_dim[0].0 - 1.0).abs() < 1e-12);
        assert_eq!(lb.per_dim[0].1, 0.0);
        assert!((lb.total - 1.0).abs() < 1e-12);

        let lb = unf_loss(&model, &[0.5], 64).unwrap();
        assert!((lb.total - 1.5).abs() < 1e-12);

        let mut model2 = init_unf(2, 6, 0.2, BaseDist::Exponential, &mut rng);
        zero_outer(&mut model2);
        let lb = unf_loss(&model2, &[0.0, 0.0], 64).unwrap();
        assert!((lb.total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cnf_hand_values() {
        // Gaussian base, zero network, ∂ = ε: per-dim term 0 - log ε.
        let mut rng = Rng::from_seed(31);
        let mut model = init_cnf(1, 1, 0.2, 0.4, 1.0, 1e-3, BaseDist::Gaussian, &mut rng);
        let p = &mut model.per_dim[0];
        p.outer[0] = 1.0;
        p.w0.row_mut(0)[0] = 1e-3;
        p.b0[0] = 0.0;
        let lb = cnf_loss(&model, &[0.0]).unwrap();
        assert_eq!(lb.per_dim[0].0, 0.0);
        assert!((lb.per_dim[0].1 - (-(1e-3f64).ln())).abs() < 1e-12);

        // Exponential base: N = 0.3, ∂ = 1 -> loss 0.3. Single neuron with
        // bias atanh(0.3) and own weight 1/tanh'(atanh(0.3)) at x = 0.
        model.base = BaseDist::Exponential;
        let p = &mut model.per_dim[0];
        let b = 0.5 * (1.3f64 / 0.7).ln(); // atanh(0.3)
        p.outer[0] = 1.0;
        p.b0[0] = b;
        p.w0.row_mut(0)[0] = 1.0 / (1.0 - 0.09);
        let lb = cnf_loss(&model, &[0.0]).unwrap();
        assert!((lb.per_dim[0].0 - 0.3).abs() < 1e-12, "N {}", lb.per_dim[0].0);
        assert!(lb.per_dim[0].1.abs() < 1e-12, "log term {}", lb.per_dim[0].1);
        assert!((lb.total - 0.3).abs() < 1e-12);
    }

    #[test]
    fn cnf_additivity_over_dims() {
        let mut rng = Rng::from_seed(32);
        let model = init_cnf(2, 8, 0.2, 0.4, 0.5, 1e-3, BaseDist::Gaussian, &mut rng);
        let x = [0.2, -0.1];
        let lb = cnf_loss(&model, &x).unwrap();
        let sum: f64 = lb.per_dim.iter().map(|(a, b)| a + b).sum();
        assert!((lb.total - sum).abs() < 1e-12);
        assert_eq!(lb.per_dim.len(), 2);
    }

    #[test]
    fn unf_zero_outer_gives_zero_gradient() {
        let mut rng = Rng::from_seed(33);
        let mut model = init_unf(2, 8, 0.2, BaseDist::Exponential, &mut rng);
        zero_outer(&mut model);
        let (_, g) = unf_loss_grad(&model, &[0.1, 0.2], 16).unwrap();
        assert!(g.per_dim.iter().all(|o| o.dw.data().iter().all(|&v| v == 0.0)
            && o.db.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn cnf_zero_outer_row_contributes_zero_gradient() {
        let mut rng = Rng::from_seed(34);
        let mut model = init_cnf(1, 4, 0.2, 0.4, 1.0, 1e-3, BaseDist::Gaussian, &mut rng);
        model.per_dim[0].outer[2] = 0.0;
        let (_, g) = cnf_loss_grad(&model, &[0.2]).unwrap();
        assert!(g.per_dim[0].dw.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(g.per_dim[0].db[2], 0.0);
    }

    #[test]
    fn cnf_symmetric_neurons_get_equal_gradients() {
        let mut rng = Rng::from_seed(35);
        let mut model = init_cnf(1, 2, 0.2, 0.4, 1.0, 1e-3, BaseDist::Gaussian, &mut rng);
        {
            let p = &mut model.per_dim[0];
            p.outer[1] = p.outer[0];
            let w = p.w0.row(0)[0];
            p.w0.row_mut(1)[0] = w;
            p.b0[1] = p.b0[0];
        }
        let (_, g) = cnf_loss_grad(&model, &[0.3]).unwrap();
        assert_eq!(g.per_dim[0].dw.row(0)[0], g.per_dim[0].dw.row(1)[0]);
        assert_eq!(g.per_dim[0].db[0], g.per_dim[0].db[1]);
    }

    #[test]
    fn unf_log_term_gradient_at_zero_net() {
        // With N = 0 the log-term gradient is -1 · ∇N (φ'/φ = 1 at 0).
        // Build a single never-active neuron so the quadrature term vanishes
        // and only the log point could contribute; with ReLU off everywhere
        // the whole gradient is zero — then flip to an always-active neuron
        // and check the log part against the analytic value.
        let mut rng = Rng::from_seed(36);
        let mut model = init_unf(1, 1, 0.2, BaseDist::Exponential, &mut rng);
        {
            let p = &mut model.per_dim[0];
            p.outer[0] = 0.5;
            p.w0.row_mut(0)[0] = 0.0;
            p.w0.row_mut(0)[1] = 0.0;
            p.b0[0] = 1.0; // pre-activation 1 > 0 everywhere, N = 0.5·1 = 0.5
        }
        let x = [0.0];
        let q = 4;
        let (_, g) = unf_loss_grad(&model, &x, q).unwrap();
        // By hand: nodes t_j in {-0.75, -0.5, -0.25, 0}, Δ = 0.25, N ≡ 0.5
        // at every node (pre = 1), φ'(0.5) = 1, φ(0.5) = 1.5.
        // d/db = Σ_j Δ·1·a·1 − (1/1.5)·a·1 = 0.25·4·0.5 − 0.5/1.5
        let expect_db = 0.25 * 4.0 * 0.5 - 0.5 / 1.5;
        assert!((g.per_dim[0].db[0] - expect_db).abs() < 1e-12);
    }

    #[test]
    fn grad_weight_scales_linearly() {
        let mut rng = Rng::from_seed(37);
        let model = init_unf(2, 6, 0.2, BaseDist::Exponential, &mut rng);
        let x = [0.1, -0.2];
        let mut g1 = Offsets::zeros_like(&model);
        let mut g2 = Offsets::zeros_like(&model);
        accumulate_loss_grad(&model, &x, 8, 1.0, &mut g1).unwrap();
        accumulate_loss_grad(&model, &x, 8, 0.5, &mut g2).unwrap();
        for (a, b) in g1.per_dim.iter().zip(&g2.per_dim) {
            for (x, y) in a.dw.data().iter().zip(b.dw.data()) {
                assert!((0.5 * x - y).abs() < 1e-15);
            }
        }
    }
}
