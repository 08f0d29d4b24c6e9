//! Parameter containers and forward passes for the two flow families.
//!
//! Every output dimension `i` (1-based) gets its own one-hidden-layer network
//! with frozen outer weights `a_r`, frozen initial inner weights/biases
//! `(w̄_r, b̄_r)` and trainable offsets `(w_r, b_r)`:
//!
//! * UNF: `N_i(x̄) = Σ_r a_r · ReLU(⟨w̄_r + w_r, x̄_{1:i}⟩ + b̄_r + b_r)` over the
//!   normalized embedding `x̄_{1:i} ∈ R^{i+1}`, and `∂f_i/∂x_i = φ(N_i)` with
//!   `φ = ELU+1`.
//! * CNF: `N_i(x) = τ Σ_r a_r · tanh(⟨w̄_r + w_r, x_{1:i}⟩ + b̄_r + b_r)` on the
//!   raw coordinates (no embedding — the two families genuinely differ here),
//!   with the constraint `w̄_{r,i} + w_{r,i} ≥ ε` kept by projection.
//! * CNF-SquareReparam: the squared reparameterization
//!   `τ Σ_r a_r² tanh(⟨ζ(w̄_r + w_r), x⟩ + b̄_r + b_r)` where `ζ` squares the
//!   last input coordinate. Only used by the convexity diagnostics.
//!
//! All dot products accumulate coordinates in ascending order with the bias
//! added last; the pseudo-network evaluators mirror this so that network and
//! linearization agree bit-for-bit at zero offsets.

use alloc::vec;
use alloc::vec::Vec;

use crate::activations::{relu, tanh, tanh_prime_from, ActivationKind};
use crate::linalg::{norm_pq_rows, Mat, VecNorm};
use crate::math;
use crate::{activations, CoreError, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Family {
    Unf,
    Cnf,
    CnfSquare,
}

impl Family {
    pub fn activation(self) -> ActivationKind {
        match self {
            Family::Unf => ActivationKind::Relu,
            Family::Cnf | Family::CnfSquare => ActivationKind::Tanh,
        }
    }

    /// Network input width for output dimension `i` (1-based): UNF embeds an
    /// extra coordinate, CNF does not.
    pub fn input_dim(self, dim_index: usize) -> usize {
        match self {
            Family::Unf => dim_index + 1,
            Family::Cnf | Family::CnfSquare => dim_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaseDist {
    /// Density `e^{-Σ z_i}` on the nonnegative orthant.
    Exponential,
    /// Standard normal per coordinate.
    Gaussian,
}

/// Per-output-dimension network parameters.
///
/// `outer`, `w0`, `b0` are frozen after initialization; only `dw`, `db` train.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowParams {
    /// 1-based output coordinate this network models.
    pub dim_index: usize,
    pub width: usize,
    pub outer: Vec<f64>,
    pub w0: Mat,
    pub b0: Vec<f64>,
    pub dw: Mat,
    pub db: Vec<f64>,
}

impl FlowParams {
    pub fn input_dim(&self) -> usize {
        self.w0.cols()
    }

    /// `⟨w̄_r + w_r, x⟩ + (b̄_r + b_r)` with coordinates accumulated in
    /// ascending order and the bias added last.
    #[inline]
    pub fn pre_activation(&self, r: usize, x: &[f64]) -> f64 {
        let w0 = self.w0.row(r);
        let dw = self.dw.row(r);
        let mut acc = 0.0;
        for c in 0..x.len() {
            acc += (w0[c] + dw[c]) * x[c];
        }
        acc + (self.b0[r] + self.db[r])
    }

    /// Pre-activation at the frozen initial weights (offsets ignored).
    #[inline]
    pub fn pre_activation_frozen(&self, r: usize, x: &[f64]) -> f64 {
        let w0 = self.w0.row(r);
        let mut acc = 0.0;
        for c in 0..x.len() {
            acc += w0[c] * x[c];
        }
        acc + self.b0[r]
    }

    fn check_prefix(&self, x_prefix: &[f64]) -> Result<(), CoreError> {
        if x_prefix.len() != self.dim_index {
            return Err(CoreError::ShapeMismatch {
                expected: self.dim_index,
                got: x_prefix.len(),
            });
        }
        Ok(())
    }
}

/// A full flow: `d` per-dimension networks plus the family-level constants.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowModel {
    pub family: Family,
    pub d: usize,
    pub per_dim: Vec<FlowParams>,
    /// Normalization constant τ (CNF families; 1.0 for UNF).
    pub tau: f64,
    /// Monotonicity floor ε (CNF; 0.0 for UNF).
    pub eps_floor: f64,
    pub base: BaseDist,
}

impl FlowModel {
    /// Parameters of output dimension `i` (1-based).
    pub fn dim(&self, i: usize) -> &FlowParams {
        &self.per_dim[i - 1]
    }

    pub fn dim_mut(&mut self, i: usize) -> &mut FlowParams {
        &mut self.per_dim[i - 1]
    }

    /// FNV-1a hash over the frozen arrays; training must not change it.
    pub fn frozen_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for p in &self.per_dim {
            p.outer.iter().for_each(|&v| eat(v));
            p.w0.data().iter().for_each(|&v| eat(v));
            p.b0.iter().for_each(|&v| eat(v));
        }
        h
    }

    /// Smallest constrained weight `w̄_{r,i} + w_{r,i}` across dims and rows
    /// (CNF families; the projection keeps this at or above `eps_floor`).
    pub fn min_monotone_weight(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for p in &self.per_dim {
            let c = p.input_dim() - 1;
            for r in 0..p.width {
                lo = lo.min(p.w0.row(r)[c] + p.dw.row(r)[c]);
            }
        }
        lo
    }
}

/// Normalized embedding `x̄ = (x_1, …, x_i, √(1 − ‖x‖²))`, unit 2-norm.
pub fn embed_normalized(x_prefix: &[f64]) -> Result<Vec<f64>, CoreError> {
    let sq: f64 = x_prefix.iter().map(|v| v * v).sum();
    if sq > 1.0 {
        return Err(CoreError::PointOutsideBall);
    }
    let mut out = Vec::with_capacity(x_prefix.len() + 1);
    out.extend_from_slice(x_prefix);
    out.push(math::sqrt(1.0 - sq));
    Ok(out)
}

/// Embedding with the residual coordinate clamped at zero, for quadrature
/// nodes that may fall slightly outside the ball.
pub fn embed_clamped(x_prefix: &[f64]) -> Vec<f64> {
    let sq: f64 = x_prefix.iter().map(|v| v * v).sum();
    let mut out = Vec::with_capacity(x_prefix.len() + 1);
    out.extend_from_slice(x_prefix);
    out.push(math::sqrt((1.0 - sq).max(0.0)));
    out
}

/// UNF network value at an already-embedded point.
pub(crate) fn unf_net_at_embedded(p: &FlowParams, xbar: &[f64]) -> f64 {
    let mut acc = 0.0;
    for r in 0..p.width {
        acc += p.outer[r] * relu(p.pre_activation(r, xbar));
    }
    acc
}

/// `N_i(x̄_{1:i})` for the UNF family; embeds and validates the input.
pub fn unf_net_forward(p: &FlowParams, x_prefix: &[f64]) -> Result<f64, CoreError> {
    p.check_prefix(x_prefix)?;
    let xbar = embed_normalized(x_prefix)?;
    Ok(unf_net_at_embedded(p, &xbar))
}

/// Modeled Jacobian diagonal `∂f_i/∂x_i = φ(N_i)`, strictly positive.
pub fn unf_derivative(p: &FlowParams, x_prefix: &[f64]) -> Result<f64, CoreError> {
    Ok(activations::elu_plus_one(unf_net_forward(p, x_prefix)?))
}

/// `τ Σ_r a_r tanh(⟨w̄_r + w_r, x_{1:i}⟩ + b̄_r + b_r)` (raw input, no embedding).
pub fn cnf_net_forward(tau: f64, p: &FlowParams, x_prefix: &[f64]) -> Result<f64, CoreError> {
    p.check_prefix(x_prefix)?;
    let mut acc = 0.0;
    for r in 0..p.width {
        acc += p.outer[r] * tanh(p.pre_activation(r, x_prefix));
    }
    Ok(tau * acc)
}

/// Exact `∂N_i/∂x_i` of [`cnf_net_forward`]; errors if it comes out
/// nonpositive (a violated initialization or projection contract).
pub fn cnf_partial_xi(tau: f64, p: &FlowParams, x_prefix: &[f64]) -> Result<f64, CoreError> {
    p.check_prefix(x_prefix)?;
    let own = p.input_dim() - 1;
    let mut acc = 0.0;
    for r in 0..p.width {
        let t = tanh(p.pre_activation(r, x_prefix));
        let w_own = p.w0.row(r)[own] + p.dw.row(r)[own];
        acc += p.outer[r] * tanh_prime_from(t) * w_own;
    }
    let out = tau * acc;
    if out <= 0.0 {
        return Err(CoreError::NonpositiveJacobian);
    }
    Ok(out)
}

/// Squared-reparameterization forward
/// `τ Σ_r a_r² tanh(⟨ζ(w̄_r + w_r), x⟩ + b̄_r + b_r)` with `ζ` squaring the
/// last input coordinate. Diagnostics only; there is no trainer for it.
pub fn cnf_square_forward(tau: f64, p: &FlowParams, x_prefix: &[f64]) -> Result<f64, CoreError> {
    p.check_prefix(x_prefix)?;
    let own = p.input_dim() - 1;
    let mut acc = 0.0;
    for r in 0..p.width {
        let w0 = p.w0.row(r);
        let dw = p.dw.row(r);
        let mut pre = 0.0;
        for c in 0..own {
            pre += (w0[c] + dw[c]) * x_prefix[c];
        }
        let zeta_last = (w0[own] + dw[own]) * (w0[own] + dw[own]);
        pre += zeta_last * x_prefix[own];
        pre += p.b0[r] + p.db[r];
        acc += p.outer[r] * p.outer[r] * tanh(pre);
    }
    Ok(tau * acc)
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// UNF init: `a ~ N(0, ε_a²)`, `w̄, b̄ ~ N(0, 1/m)`, offsets zero.
pub fn init_unf(d: usize, m: usize, eps_a: f64, base: BaseDist, rng: &mut Rng) -> FlowModel {
    let sigma_wb = math::sqrt(1.0 / m as f64);
    let per_dim = (1..=d)
        .map(|i| {
            let cols = i + 1;
            let outer = rng.sample_normal(0.0, eps_a, m);
            let w0 = Mat::from_data(m, cols, rng.sample_normal(0.0, sigma_wb, m * cols));
            let b0 = rng.sample_normal(0.0, sigma_wb, m);
            FlowParams {
                dim_index: i,
                width: m,
                outer,
                w0,
                b0,
                dw: Mat::zeros(m, cols),
                db: vec![0.0; m],
            }
        })
        .collect();
    FlowModel {
        family: Family::Unf,
        d,
        per_dim,
        tau: 1.0,
        eps_floor: 0.0,
        base,
    }
}

/// CNF init: `a ~ half-normal(0, ε_a²)`; the weight on each dimension's own
/// coordinate is half-normal(0, σ_wb²) clamped up to `eps_floor` so the
/// monotonicity constraint holds with zero offsets; all other inner weights
/// and biases are `N(0, σ_wb²)`.
pub fn init_cnf(
    d: usize,
    m: usize,
    eps_a: f64,
    sigma_wb: f64,
    tau: f64,
    eps_floor: f64,
    base: BaseDist,
    rng: &mut Rng,
) -> FlowModel {
    let per_dim = (1..=d)
        .map(|i| {
            let cols = i;
            let outer = rng.sample_half_normal(eps_a, m);
            let mut w0 = Mat::zeros(m, cols);
            for r in 0..m {
                let row = w0.row_mut(r);
                for c in 0..cols - 1 {
                    row[c] = rng.normal() * sigma_wb;
                }
                row[cols - 1] = rng.half_normal(sigma_wb).max(eps_floor);
            }
            let b0 = rng.sample_normal(0.0, sigma_wb, m);
            FlowParams {
                dim_index: i,
                width: m,
                outer,
                w0,
                b0,
                dw: Mat::zeros(m, cols),
                db: vec![0.0; m],
            }
        })
        .collect();
    FlowModel {
        family: Family::Cnf,
        d,
        per_dim,
        tau,
        eps_floor,
        base,
    }
}

/// Squared-reparameterization init (signs of `a` and the last weight are
/// irrelevant since both get squared): all parameters plain normal.
pub fn init_cnf_square(
    d: usize,
    m: usize,
    eps_a: f64,
    sigma_wb: f64,
    tau: f64,
    base: BaseDist,
    rng: &mut Rng,
) -> FlowModel {
    let per_dim = (1..=d)
        .map(|i| {
            let cols = i;
            let outer = rng.sample_normal(0.0, eps_a, m);
            let w0 = Mat::from_data(m, cols, rng.sample_normal(0.0, sigma_wb, m * cols));
            let b0 = rng.sample_normal(0.0, sigma_wb, m);
            FlowParams {
                dim_index: i,
                width: m,
                outer,
                w0,
                b0,
                dw: Mat::zeros(m, cols),
                db: vec![0.0; m],
            }
        })
        .collect();
    FlowModel {
        family: Family::CnfSquare,
        d,
        per_dim,
        tau,
        eps_floor: 0.0,
        base,
    }
}

// ---------------------------------------------------------------------------
// Offsets
// ---------------------------------------------------------------------------

/// Trainable offsets of one dimension's network, same shapes as `(dw, db)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DimOffsets {
    pub dw: Mat,
    pub db: Vec<f64>,
}

/// Offsets (or gradients — same shape) for every dimension of a model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Offsets {
    pub per_dim: Vec<DimOffsets>,
}

impl Offsets {
    pub fn zeros_like(model: &FlowModel) -> Self {
        Offsets {
            per_dim: model
                .per_dim
                .iter()
                .map(|p| DimOffsets {
                    dw: Mat::zeros(p.width, p.input_dim()),
                    db: vec![0.0; p.width],
                })
                .collect(),
        }
    }

    pub fn from_model(model: &FlowModel) -> Self {
        Offsets {
            per_dim: model
                .per_dim
                .iter()
                .map(|p| DimOffsets {
                    dw: p.dw.clone(),
                    db: p.db.clone(),
                })
                .collect(),
        }
    }

    pub fn install(&self, model: &mut FlowModel) {
        for (p, o) in model.per_dim.iter_mut().zip(&self.per_dim) {
            p.dw = o.dw.clone();
            p.db = o.db.clone();
        }
    }

    pub fn fill_zero(&mut self) {
        for o in &mut self.per_dim {
            o.dw.fill(0.0);
            o.db.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Offsets) {
        for (a, b) in self.per_dim.iter_mut().zip(&other.per_dim) {
            for (x, y) in a.dw.data_mut().iter_mut().zip(b.dw.data()) {
                *x += c * y;
            }
            for (x, y) in a.db.iter_mut().zip(&b.db) {
                *x += c * y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for o in &mut self.per_dim {
            o.dw.data_mut().iter_mut().for_each(|v| *v *= c);
            o.db.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn lincomb(a: f64, x: &Offsets, b: f64, y: &Offsets) -> Offsets {
        let mut out = x.clone();
        out.scale(a);
        out.axpy(b, y);
        out
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for o in &self.per_dim {
            for &v in o.dw.data() {
                m = m.max(math::abs(v));
            }
            for &v in &o.db {
                m = m.max(math::abs(v));
            }
        }
        m
    }

    /// `‖θ_i‖_{p,q}` over rows `(w_r, b_r)` of dimension `i` (1-based).
    pub fn dim_norm(&self, i: usize, p: VecNorm, q: VecNorm) -> f64 {
        let o = &self.per_dim[i - 1];
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(o.db.len());
        for r in 0..o.db.len() {
            let mut row = o.dw.row(r).to_vec();
            row.push(o.db[r]);
            rows.push(row);
        }
        norm_pq_rows(rows.iter().map(|r| r.as_slice()), p, q).unwrap_or(0.0)
    }

    /// `‖θ‖_{p,q}` with the rows of all dimensions stacked.
    pub fn total_norm(&self, p: VecNorm, q: VecNorm) -> f64 {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for o in &self.per_dim {
            for r in 0..o.db.len() {
                let mut row = o.dw.row(r).to_vec();
                row.push(o.db[r]);
                rows.push(row);
            }
        }
        norm_pq_rows(rows.iter().map(|r| r.as_slice()), p, q).unwrap_or(0.0)
    }
}
