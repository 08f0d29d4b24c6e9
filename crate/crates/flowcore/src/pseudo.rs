//! Pseudo-networks: the first-order linearization of each network in its
//! trainable offsets around the random initialization.
//!
//! UNF: `P = Σ_r a_r (σ(⟨w̄_r, x̄⟩ + b̄_r) + σ'(⟨w̄_r, x̄⟩ + b̄_r)(⟨w_r, x̄⟩ + b_r))`
//! and the pseudo-derivative is `φ(P)` — the outer activation is *not*
//! linearized.
//!
//! CNF: `P = P_c + P_ℓ` with the frozen part
//! `P_c = τ Σ_r a_r tanh(⟨w̄_r, x⟩ + b̄_r)` and the offset-linear part
//! `P_ℓ = τ Σ_r a_r tanh'(⟨w̄_r, x⟩ + b̄_r)(⟨w_r, x⟩ + b_r)`.
//!
//! The evaluators mirror the network code paths operation for operation, so
//! with all offsets zero every diagnostic gap in this module is exactly zero.
//! The squared-reparameterization pseudo (`ζ` squaring the last coordinate)
//! is kept only to exhibit the non-convex loss surface; its offset term is
//! quadratic, not linear.

use alloc::vec;
use alloc::vec::Vec;

use crate::activations::{
    elu_plus_one, elu_plus_one_prime, elu_ratio, ln_elu_plus_one, relu, relu_prime, tanh,
    tanh_prime_from, tanh_second_from,
};
use crate::linalg::{Mat, VecNorm};
use crate::loss::{blocked_sum, loss_grad_of, loss_of, LossBreakdown};
use crate::model::{
    cnf_net_forward, cnf_partial_xi, embed_clamped, unf_net_at_embedded, BaseDist, Family,
    FlowModel, FlowParams, Offsets,
};
use crate::quad::node_coords;
use crate::train::Checkpoint;
use crate::{math, CoreError, Rng};

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// UNF pseudo value at an embedded point with explicit offsets.
fn unf_pseudo_at(p: &FlowParams, dw: &Mat, db: &[f64], xbar: &[f64]) -> f64 {
    let mut acc = 0.0;
    for r in 0..p.width {
        let pre0 = p.pre_activation_frozen(r, xbar);
        let lin = lin_term(dw.row(r), db[r], xbar);
        acc += p.outer[r] * (relu(pre0) + relu_prime(pre0) * lin);
    }
    acc
}

#[inline]
fn lin_term(dw_row: &[f64], db: f64, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for c in 0..x.len() {
        acc += dw_row[c] * x[c];
    }
    acc + db
}

/// UNF pseudo-network `P_i(x̄_{1:i})` with the model's own offsets.
pub fn unf_pseudo_forward(p: &FlowParams, x_prefix: &[f64]) -> Result<f64, CoreError> {
    if x_prefix.len() != p.dim_index {
        return Err(CoreError::ShapeMismatch {
            expected: p.dim_index,
            got: x_prefix.len(),
        });
    }
    let xbar = crate::model::embed_normalized(x_prefix)?;
    Ok(unf_pseudo_at(p, &p.dw, &p.db, &xbar))
}

/// CNF pseudo parts `(P_c, P_ℓ)` with explicit offsets; `P_c` reads only
/// frozen parameters.
pub fn cnf_pseudo_at(
    tau: f64,
    p: &FlowParams,
    dw: &Mat,
    db: &[f64],
    x_prefix: &[f64],
) -> (f64, f64) {
    let mut pc = 0.0;
    let mut pl = 0.0;
    for r in 0..p.width {
        let pre0 = p.pre_activation_frozen(r, x_prefix);
        let t = tanh(pre0);
        pc += p.outer[r] * t;
        pl += p.outer[r] * tanh_prime_from(t) * lin_term(dw.row(r), db[r], x_prefix);
    }
    (tau * pc, tau * pl)
}

/// CNF pseudo parts with the model's own offsets.
pub fn cnf_pseudo_forward(
    tau: f64,
    p: &FlowParams,
    x_prefix: &[f64],
) -> Result<(f64, f64), CoreError> {
    if x_prefix.len() != p.dim_index {
        return Err(CoreError::ShapeMismatch {
            expected: p.dim_index,
            got: x_prefix.len(),
        });
    }
    Ok(cnf_pseudo_at(tau, p, &p.dw, &p.db, x_prefix))
}

/// Squared-reparameterization pseudo value and its exact `x_i` derivative.
///
/// The offset enters through `ζ(w̄ + w) − ζ(w̄)`, which is quadratic in the
/// last weight — the source of the non-convexity this evaluator exists to
/// demonstrate.
pub fn cnf_square_pseudo_at(
    tau: f64,
    p: &FlowParams,
    dw: &Mat,
    db: &[f64],
    x_prefix: &[f64],
) -> (f64, f64) {
    let own = p.input_dim() - 1;
    let mut val = 0.0;
    let mut der = 0.0;
    for r in 0..p.width {
        let w0 = p.w0.row(r);
        let dwr = dw.row(r);
        let zeta0_own = w0[own] * w0[own];
        let zeta_own = (w0[own] + dwr[own]) * (w0[own] + dwr[own]);
        // S_r = ⟨ζ(w̄), x⟩ + b̄ ; lin_r = ⟨ζ(w̄+w) − ζ(w̄), x⟩ + b
        let mut s = 0.0;
        let mut lin = 0.0;
        for c in 0..own {
            s += w0[c] * x_prefix[c];
            lin += dwr[c] * x_prefix[c];
        }
        s += zeta0_own * x_prefix[own];
        s += p.b0[r];
        lin += (zeta_own - zeta0_own) * x_prefix[own];
        lin += db[r];
        let t = tanh(s);
        let tp = tanh_prime_from(t);
        let tpp = tanh_second_from(t);
        let a2 = p.outer[r] * p.outer[r];
        val += a2 * (t + tp * lin);
        der += a2 * (tp * zeta0_own + tpp * zeta0_own * lin + tp * (zeta_own - zeta0_own));
    }
    (tau * val, tau * der)
}

// ---------------------------------------------------------------------------
// Pseudo losses
// ---------------------------------------------------------------------------

/// UNF pseudo loss of one dimension, mirroring the network loss kernel:
/// same nodes, same reduction, optional gradient accumulation.
fn unf_pseudo_dim_loss_grad(
    p: &FlowParams,
    dw: &Mat,
    db: &[f64],
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
    let (delta, ts) = node_coords(xs[i - 1], q)?;
    let mut node = xs.to_vec();
    let mut terms = vec![0.0f64; m];
    let mut pre0 = vec![0.0f64; m];
    let mut g_plain = vec![0.0f64; m];
    let mut g_t = vec![0.0f64; m];
    let mut g_e = vec![0.0f64; m];
    let want_grad = grad.is_some();
    let weight = grad.as_ref().map(|g| g.2).unwrap_or(0.0);

    let mut recon = 0.0;
    let mut logterm = 0.0;
    let n_points = ts.len();
    for (j, &t) in ts.iter().enumerate() {
        node[i - 1] = t;
        let xbar = embed_clamped(&node);
        let e = xbar[i];
        for r in 0..m {
            let pr = p.pre_activation_frozen(r, &xbar);
            pre0[r] = pr;
            let lin = lin_term(dw.row(r), db[r], &xbar);
            terms[r] = if pr > 0.0 {
                p.outer[r] * pr + (p.outer[r] * 1.0) * lin
            } else {
                0.0
            };
        }
        let p_val = blocked_sum(&terms);
        recon += delta * elu_plus_one(p_val);
        let last = j + 1 == n_points;
        if last {
            logterm = -ln_elu_plus_one(p_val);
        }
        if want_grad {
            let mut s = weight * delta * elu_plus_one_prime(p_val);
            if last {
                s -= weight * elu_ratio(p_val);
            }
            for r in 0..m {
                if pre0[r] > 0.0 {
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
            for (c, &xc) in xs[..i - 1].iter().enumerate() {
                row[c] += g_plain[r] * xc;
            }
            row[i - 1] += g_t[r];
            row[i] += g_e[r];
            gdb[r] += g_plain[r];
        }
    }
    Ok((recon, logterm))
}

/// CNF pseudo loss of one dimension, mirroring the network loss kernel.
fn cnf_pseudo_dim_loss_grad(
    tau: f64,
    p: &FlowParams,
    dw: &Mat,
    db: &[f64],
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
    let mut n_acc = 0.0;
    let mut d_acc = 0.0;
    for r in 0..m {
        let t = tanh(p.pre_activation_frozen(r, xs));
        th[r] = t;
        let lin = lin_term(dw.row(r), db[r], xs);
        let w0_own = p.w0.row(r)[own];
        n_acc += p.outer[r] * t + p.outer[r] * tanh_prime_from(t) * lin;
        d_acc += p.outer[r] * tanh_prime_from(t) * w0_own
            + p.outer[r] * tanh_second_from(t) * w0_own * lin
            + p.outer[r] * tanh_prime_from(t) * dw.row(r)[own];
    }
    let p_val = tau * n_acc;
    let d_val = tau * d_acc;
    if d_val <= 0.0 {
        return Err(CoreError::NonpositiveJacobian);
    }
    let recon = match base {
        BaseDist::Exponential => p_val,
        BaseDist::Gaussian => 0.5 * p_val * p_val,
    };
    let logterm = -math::ln(d_val);

    if let Some((gdw, gdb, weight)) = grad.as_mut() {
        let coef_n = *weight
            * match base {
                BaseDist::Exponential => 1.0,
                BaseDist::Gaussian => p_val,
            };
        let coef_d = -*weight / d_val;
        for r in 0..m {
            let a = p.outer[r];
            let t = th[r];
            let tp = tanh_prime_from(t);
            let tpp = tanh_second_from(t);
            let w0_own = p.w0.row(r)[own];
            let gn = coef_n * tau * a * tp;
            let gd_shared = coef_d * tau * a * tpp * w0_own;
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

/// Squared-reparameterization pseudo loss of one dimension (no gradient; the
/// convexity search only needs values).
fn cnf_square_pseudo_dim_loss(
    tau: f64,
    p: &FlowParams,
    dw: &Mat,
    db: &[f64],
    xs: &[f64],
    base: BaseDist,
) -> Result<(f64, f64), CoreError> {
    let i = p.dim_index;
    if xs.len() != i {
        return Err(CoreError::ShapeMismatch {
            expected: i,
            got: xs.len(),
        });
    }
    let (val, der) = cnf_square_pseudo_at(tau, p, dw, db, xs);
    if der <= 0.0 {
        return Err(CoreError::NonpositiveJacobian);
    }
    let recon = match base {
        BaseDist::Exponential => val,
        BaseDist::Gaussian => 0.5 * val * val,
    };
    Ok((recon, -math::ln(der)))
}

/// Pseudo loss with explicit offsets (the convexity tester varies these).
pub fn pseudo_loss_at(
    model: &FlowModel,
    off: &Offsets,
    x: &[f64],
    q: usize,
) -> Result<LossBreakdown, CoreError> {
    if x.len() != model.d {
        return Err(CoreError::ShapeMismatch {
            expected: model.d,
            got: x.len(),
        });
    }
    let mut per_dim = Vec::with_capacity(model.d);
    for i in 1..=model.d {
        let p = model.dim(i);
        let o = &off.per_dim[i - 1];
        let terms = match model.family {
            Family::Unf => {
                if model.base != BaseDist::Exponential {
                    return Err(CoreError::InvalidConfig(
                        "the UNF loss is defined for the exponential base",
                    ));
                }
                unf_pseudo_dim_loss_grad(p, &o.dw, &o.db, &x[..i], q, None)?
            }
            Family::Cnf => {
                cnf_pseudo_dim_loss_grad(model.tau, p, &o.dw, &o.db, &x[..i], model.base, None)?
            }
            Family::CnfSquare => {
                cnf_square_pseudo_dim_loss(model.tau, p, &o.dw, &o.db, &x[..i], model.base)?
            }
        };
        per_dim.push(terms);
    }
    let mut total = 0.0;
    for &(a, b) in &per_dim {
        total += a + b;
    }
    if !total.is_finite() {
        return Err(CoreError::NumericOverflow { step: 0 });
    }
    Ok(LossBreakdown { total, per_dim })
}

/// Pseudo loss with the model's own offsets: the same formula as the network
/// loss with the pseudo forward substituted.
pub fn pseudo_loss(model: &FlowModel, x: &[f64], q: usize) -> Result<LossBreakdown, CoreError> {
    pseudo_loss_at(model, &Offsets::from_model(model), x, q)
}

/// Gradient of the pseudo loss w.r.t. the offsets, with the model's own
/// offsets installed (UNF and CNF only).
pub fn pseudo_loss_grad(
    model: &FlowModel,
    x: &[f64],
    q: usize,
) -> Result<(LossBreakdown, Offsets), CoreError> {
    if x.len() != model.d {
        return Err(CoreError::ShapeMismatch {
            expected: model.d,
            got: x.len(),
        });
    }
    let mut out = Offsets::zeros_like(model);
    let mut per_dim = Vec::with_capacity(model.d);
    for i in 1..=model.d {
        let p = model.dim(i);
        let g = &mut out.per_dim[i - 1];
        let terms = match model.family {
            Family::Unf => unf_pseudo_dim_loss_grad(
                p,
                &p.dw,
                &p.db,
                &x[..i],
                q,
                Some((&mut g.dw, &mut g.db, 1.0)),
            )?,
            Family::Cnf => cnf_pseudo_dim_loss_grad(
                model.tau,
                p,
                &p.dw,
                &p.db,
                &x[..i],
                model.base,
                Some((&mut g.dw, &mut g.db, 1.0)),
            )?,
            Family::CnfSquare => {
                return Err(CoreError::InvalidConfig(
                    "no gradient for the squared reparameterization",
                ))
            }
        };
        per_dim.push(terms);
    }
    let mut total = 0.0;
    for &(a, b) in &per_dim {
        total += a + b;
    }
    Ok((LossBreakdown { total, per_dim }, out))
}

// ---------------------------------------------------------------------------
// Convexity tester
// ---------------------------------------------------------------------------

/// Worst segment found by [`convexity_test`]; re-evaluating it must
/// reproduce `max_violation`.
#[derive(Debug, Clone)]
pub struct Witness {
    pub theta1: Offsets,
    pub theta2: Offsets,
    pub lambda: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvexityVerdict {
    /// Trials attempted (including ones skipped for leaving the loss domain).
    pub trials: usize,
    /// Trials where all three loss evaluations were defined.
    pub evaluated: usize,
    /// `max L(λθ1 + (1−λ)θ2) − λL(θ1) − (1−λ)L(θ2)`; positive means the
    /// segment violates convexity by that much.
    pub max_violation: f64,
    pub tol: f64,
    pub witness: Option<Witness>,
}

impl ConvexityVerdict {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tol
    }
}

/// Violation of the first-order convexity inequality on one segment.
pub fn segment_violation<F>(loss: &F, w: &Witness) -> Result<f64, CoreError>
where
    F: Fn(&Offsets, &[f64]) -> Result<f64, CoreError>,
{
    let mid = Offsets::lincomb(w.lambda, &w.theta1, 1.0 - w.lambda, &w.theta2);
    let l_mid = loss(&mid, &w.x)?;
    let l1 = loss(&w.theta1, &w.x)?;
    let l2 = loss(&w.theta2, &w.x)?;
    Ok(l_mid - w.lambda * l1 - (1.0 - w.lambda) * l2)
}

/// Randomized segment test of convexity in the offsets.
///
/// Samples `(θ1, θ2, λ, x)` with offset entries `N(0, offset_scale²)` and
/// probe points in the radius-0.5 ball, and records the worst violation of
/// `L(λθ1 + (1−λ)θ2) ≤ λL(θ1) + (1−λ)L(θ2)`. Trials where the loss is
/// undefined (nonpositive pseudo-Jacobian) are skipped.
pub fn convexity_test<F>(
    model: &FlowModel,
    loss: F,
    trials: usize,
    offset_scale: f64,
    rng: &mut Rng,
    tol: f64,
) -> ConvexityVerdict
where
    F: Fn(&Offsets, &[f64]) -> Result<f64, CoreError>,
{
    let mut max_violation = f64::NEG_INFINITY;
    let mut witness = None;
    let mut evaluated = 0usize;
    for _ in 0..trials {
        let theta1 = random_offsets(model, offset_scale, rng);
        let theta2 = random_offsets(model, offset_scale, rng);
        let lambda = rng.uniform();
        let x = rng.in_ball(model.d, 0.5);
        let w = Witness {
            theta1,
            theta2,
            lambda,
            x,
        };
        match segment_violation(&loss, &w) {
            Ok(v) => {
                evaluated += 1;
                if v > max_violation {
                    max_violation = v;
                    witness = Some(w);
                }
            }
            Err(_) => continue,
        }
    }
    ConvexityVerdict {
        trials,
        evaluated,
        max_violation,
        tol,
        witness,
    }
}

fn random_offsets(model: &FlowModel, scale: f64, rng: &mut Rng) -> Offsets {
    let mut off = Offsets::zeros_like(model);
    for o in &mut off.per_dim {
        for v in o.dw.data_mut() {
            *v = scale * rng.normal();
        }
        for v in &mut o.db {
            *v = scale * rng.normal();
        }
    }
    off
}

/// Quasi-uniform probe set in the radius-`radius` ball, fixed by seed.
pub fn probe_points(d: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::derive(seed, &[0x70726f6265]); // "probe" stream
    (0..count).map(|_| rng.in_ball(d, radius)).collect()
}

// ---------------------------------------------------------------------------
// Coupling trace
// ---------------------------------------------------------------------------

/// Per-checkpoint record of how far the network and its pseudo-network have
/// drifted apart: sups over the probe set of the forward and derivative
/// gaps, probe-averaged loss gap, probe-averaged `(2,1)`-norm gradient gap,
/// and the offset drift norms. All gaps are exactly zero at step 0.
#[derive(Debug, Clone)]
pub struct CouplingReport {
    pub step: usize,
    pub sup_forward_gap: f64,
    pub sup_deriv_gap: f64,
    pub mean_loss_gap: f64,
    pub mean_grad_gap_21: f64,
    pub drift_22: f64,
    pub drift_2inf: f64,
    pub drift_21: f64,
}

/// Evaluate the coupling diagnostics at every checkpoint that carries an
/// offset snapshot. `model` supplies the frozen parameters; snapshots are
/// installed one at a time.
pub fn coupling_trace(
    model: &FlowModel,
    checkpoints: &[Checkpoint],
    probes: &[Vec<f64>],
    q: usize,
) -> Result<Vec<CouplingReport>, CoreError> {
    if model.family == Family::CnfSquare {
        return Err(CoreError::InvalidConfig(
            "coupling is traced for the UNF and CNF families",
        ));
    }
    let mut scratch = model.clone();
    let mut reports = Vec::with_capacity(checkpoints.len());
    for ck in checkpoints {
        let snap = ck.snapshot.as_ref().ok_or(CoreError::InvalidConfig(
            "coupling trace needs checkpoints with offset snapshots",
        ))?;
        snap.install(&mut scratch);
        let mut sup_forward = 0.0f64;
        let mut sup_deriv = 0.0f64;
        let mut loss_gap_acc = 0.0f64;
        let mut grad_gap_acc = 0.0f64;
        for x in probes {
            for i in 1..=scratch.d {
                let p = scratch.dim(i);
                let (n_val, p_val, dn, dp) = match scratch.family {
                    Family::Unf => {
                        let xbar = crate::model::embed_normalized(&x[..i])?;
                        let n = unf_net_at_embedded(p, &xbar);
                        let pv = unf_pseudo_at(p, &p.dw, &p.db, &xbar);
                        (n, pv, elu_plus_one(n), elu_plus_one(pv))
                    }
                    Family::Cnf => {
                        let n = cnf_net_forward(scratch.tau, p, &x[..i])?;
                        let (pc, pl) = cnf_pseudo_at(scratch.tau, p, &p.dw, &p.db, &x[..i]);
                        let dn = cnf_partial_xi(scratch.tau, p, &x[..i])?;
                        let (_, dp) = cnf_pseudo_parts_derivative(scratch.tau, p, &x[..i]);
                        (n, pc + pl, dn, dp)
                    }
                    Family::CnfSquare => unreachable!(),
                };
                sup_forward = sup_forward.max(math::abs(n_val - p_val));
                sup_deriv = sup_deriv.max(math::abs(dn - dp));
            }
            let lf = loss_of(&scratch, x, q)?;
            let lg = pseudo_loss(&scratch, x, q)?;
            loss_gap_acc += math::abs(lf.total - lg.total);
            let (_, gf) = loss_grad_of(&scratch, x, q)?;
            let (_, gg) = pseudo_loss_grad(&scratch, x, q)?;
            let mut diff = gf;
            diff.axpy(-1.0, &gg);
            grad_gap_acc += diff.total_norm(VecNorm::Two, VecNorm::One);
        }
        let n_probes = probes.len().max(1) as f64;
        reports.push(CouplingReport {
            step: ck.step,
            sup_forward_gap: sup_forward,
            sup_deriv_gap: sup_deriv,
            mean_loss_gap: loss_gap_acc / n_probes,
            mean_grad_gap_21: grad_gap_acc / n_probes,
            drift_22: snap.total_norm(VecNorm::Two, VecNorm::Two),
            drift_2inf: snap.total_norm(VecNorm::Two, VecNorm::Inf),
            drift_21: snap.total_norm(VecNorm::Two, VecNorm::One),
        });
    }
    Ok(reports)
}

/// `(value, ∂P/∂x_i)` of the CNF pseudo-network with the model offsets.
fn cnf_pseudo_parts_derivative(tau: f64, p: &FlowParams, xs: &[f64]) -> (f64, f64) {
    let own = p.input_dim() - 1;
    let mut val = 0.0;
    let mut der = 0.0;
    for r in 0..p.width {
        let t = tanh(p.pre_activation_frozen(r, xs));
        let lin = lin_term(p.dw.row(r), p.db[r], xs);
        let w0_own = p.w0.row(r)[own];
        val += p.outer[r] * t + p.outer[r] * tanh_prime_from(t) * lin;
        der += p.outer[r] * tanh_prime_from(t) * w0_own
            + p.outer[r] * tanh_second_from(t) * w0_own * lin
            + p.outer[r] * tanh_prime_from(t) * p.dw.row(r)[own];
    }
    (tau * val, tau * der)
}
