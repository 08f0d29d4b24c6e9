//! SGD and projected-SGD training loops.
//!
//! Each step samples a batch uniformly with replacement, averages the
//! per-point gradients (mean, not sum, so learning rates are comparable
//! across batch sizes), applies the SGD update to the offsets, and for CNF
//! models projects the weight on each dimension's own coordinate back to
//! `w̄_{r,i} + w_{r,i} ≥ ε`. Everything is deterministic given the config and
//! seed; per-point gradients within a batch may be computed in parallel by a
//! [`GradExec`] implementation, but the reduction order is fixed.

use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::VecNorm;
use crate::loss::{accumulate_loss_grad, loss_of};
use crate::model::{BaseDist, Family, FlowModel, Offsets};
use crate::{math, CoreError, Rng};

/// Abort thresholds: training is declared unstable when the batch loss or any
/// offset leaves these ranges.
pub const LOSS_ABORT: f64 = 1e12;
pub const PARAM_ABORT: f64 = 1e8;

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub family: Family,
    pub base: BaseDist,
    pub eta: f64,
    pub t_steps: usize,
    pub batch: usize,
    pub m: usize,
    /// Outer-weight std ε_a.
    pub eps_a: f64,
    /// Inner init std σ_wb (CNF; the UNF init is pinned to 1/√m).
    pub sigma_wb: f64,
    pub tau: f64,
    pub eps_floor: f64,
    pub q_points: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Retain offset snapshots in checkpoints (needed for coupling traces).
    pub snapshot_offsets: bool,
}

impl TrainConfig {
    /// Family defaults: UNF pairs with the exponential base and no τ; CNF
    /// pairs with the Gaussian base, τ = 1/m and σ_wb = 1/√m.
    pub fn for_family(family: Family, m: usize) -> Self {
        let (base, tau, sigma_wb) = match family {
            Family::Unf => (BaseDist::Exponential, 1.0, 0.0),
            Family::Cnf | Family::CnfSquare => (
                BaseDist::Gaussian,
                1.0 / m as f64,
                1.0 / math::sqrt(m as f64),
            ),
        };
        TrainConfig {
            family,
            base,
            eta: 0.05,
            t_steps: 20_000,
            batch: 32,
            m,
            eps_a: 0.2,
            sigma_wb,
            tau,
            eps_floor: 1e-3,
            q_points: 64,
            seed: 0,
            checkpoint_every: 500,
            snapshot_offsets: false,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.eta < 0.0 || !self.eta.is_finite() {
            return Err(CoreError::InvalidConfig("learning rate must be >= 0"));
        }
        if self.batch == 0 {
            return Err(CoreError::InvalidConfig("batch size must be >= 1"));
        }
        if self.m == 0 {
            return Err(CoreError::InvalidConfig("width must be >= 1"));
        }
        if self.q_points == 0 {
            return Err(CoreError::InvalidConfig("Q must be >= 1"));
        }
        if matches!(self.family, Family::Cnf) && self.eps_floor <= 0.0 {
            return Err(CoreError::InvalidConfig("eps_floor must be > 0 for CNF"));
        }
        if self.checkpoint_every == 0 {
            return Err(CoreError::InvalidConfig("checkpoint_every must be >= 1"));
        }
        Ok(())
    }

    /// Fresh model drawn from this config's initialization scheme.
    pub fn init_model(&self, d: usize, rng: &mut Rng) -> FlowModel {
        match self.family {
            Family::Unf => crate::model::init_unf(d, self.m, self.eps_a, self.base, rng),
            Family::Cnf => crate::model::init_cnf(
                d,
                self.m,
                self.eps_a,
                self.sigma_wb,
                self.tau,
                self.eps_floor,
                self.base,
                rng,
            ),
            Family::CnfSquare => crate::model::init_cnf_square(
                d,
                self.m,
                self.eps_a,
                self.sigma_wb,
                self.tau,
                self.base,
                rng,
            ),
        }
    }
}

/// Per-dimension drift norms of the offsets at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftNorms {
    pub n22: f64,
    pub n2inf: f64,
    pub n21: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    /// Mean batch loss since the previous checkpoint.
    pub running_loss: f64,
    /// One entry per output dimension, offsets only (frozen weights excluded).
    pub drift: Vec<DriftNorms>,
    pub snapshot: Option<Offsets>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainOutcome {
    Completed,
    Aborted { step: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoints: Vec<Checkpoint>,
    pub outcome: TrainOutcome,
}

impl TrainRun {
    pub fn aborted(&self) -> bool {
        matches!(self.outcome, TrainOutcome::Aborted { .. })
    }
}

/// One per-point gradient produced by a [`GradExec`].
#[derive(Debug, Clone)]
pub struct PointGrad {
    pub loss: f64,
    pub grad: Offsets,
}

/// Computes per-point gradients for a batch. Implementations may parallelize
/// across points; the trainer reduces `out` in index order so results do not
/// depend on scheduling.
pub trait GradExec: Sync {
    fn batch(
        &self,
        model: &FlowModel,
        q: usize,
        xs: &[&[f64]],
        out: &mut [PointGrad],
    ) -> Result<(), CoreError>;
}

/// Straight-line sequential executor.
pub struct SeqExec;

impl GradExec for SeqExec {
    fn batch(
        &self,
        model: &FlowModel,
        q: usize,
        xs: &[&[f64]],
        out: &mut [PointGrad],
    ) -> Result<(), CoreError> {
        for (x, pg) in xs.iter().zip(out.iter_mut()) {
            pg.grad.fill_zero();
            pg.loss = accumulate_loss_grad(model, x, q, 1.0, &mut pg.grad)?;
        }
        Ok(())
    }
}

/// `offsets -= eta * grad`; frozen arrays are untouched by construction.
pub fn sgd_step(model: &mut FlowModel, grad: &Offsets, eta: f64) {
    for (p, g) in model.per_dim.iter_mut().zip(&grad.per_dim) {
        for (w, gw) in p.dw.data_mut().iter_mut().zip(g.dw.data()) {
            *w -= eta * gw;
        }
        for (b, gb) in p.db.iter_mut().zip(&g.db) {
            *b -= eta * gb;
        }
    }
}

/// Projection onto the CNF constraint set:
/// `dw[r][i-1] <- max(dw[r][i-1], ε - w̄[r][i-1])`. Idempotent. The combined
/// weight `w̄ + dw` must come out at or above ε in actual f64 arithmetic, so
/// the clamp nudges up by ulps where `w̄ + (ε - w̄)` rounds below ε.
pub fn project_cnf(model: &mut FlowModel) {
    let eps = model.eps_floor;
    for p in &mut model.per_dim {
        let own = p.input_dim() - 1;
        for r in 0..p.width {
            let w0 = p.w0.row(r)[own];
            let floor = eps - w0;
            let v = &mut p.dw.row_mut(r)[own];
            if *v < floor {
                *v = floor;
            }
            while w0 + *v < eps {
                *v = (*v).next_up();
            }
        }
    }
}

fn drift_norms(model: &FlowModel) -> Vec<DriftNorms> {
    let offs = Offsets::from_model(model);
    (1..=model.d)
        .map(|i| DriftNorms {
            n22: offs.dim_norm(i, VecNorm::Two, VecNorm::Two),
            n2inf: offs.dim_norm(i, VecNorm::Two, VecNorm::Inf),
            n21: offs.dim_norm(i, VecNorm::Two, VecNorm::One),
        })
        .collect()
}

fn offsets_max_abs(model: &FlowModel) -> f64 {
    let mut mx = 0.0f64;
    for p in &model.per_dim {
        for &v in p.dw.data() {
            mx = mx.max(math::abs(v));
        }
        for &v in &p.db {
            mx = mx.max(math::abs(v));
        }
    }
    mx
}

/// Mini-batch (projected) SGD for `cfg.t_steps` iterations.
///
/// Batches are drawn uniformly with replacement from `data`. Checkpoints are
/// emitted at step 0, every `checkpoint_every` steps and at the final step.
/// Numeric blow-ups abort with the last good checkpoints kept.
pub fn train(
    model: &mut FlowModel,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    exec: &dyn GradExec,
) -> Result<TrainRun, CoreError> {
    cfg.validate()?;
    if model.family == Family::CnfSquare {
        return Err(CoreError::InvalidConfig(
            "the squared reparameterization has no trainer",
        ));
    }
    if data.is_empty() {
        return Err(CoreError::InvalidConfig("empty training set"));
    }
    for x in data {
        if x.len() != model.d {
            return Err(CoreError::ShapeMismatch {
                expected: model.d,
                got: x.len(),
            });
        }
        let sq: f64 = x.iter().map(|v| v * v).sum();
        if sq > 1.0 {
            return Err(CoreError::PointOutsideBall);
        }
    }

    let mut checkpoints = Vec::new();
    if cfg.t_steps == 0 {
        return Ok(TrainRun {
            checkpoints,
            outcome: TrainOutcome::Completed,
        });
    }

    // Step-0 checkpoint: loss over a deterministic probe batch, zero drift.
    let probe = data.len().min(cfg.batch);
    let mut init_loss = 0.0;
    for x in &data[..probe] {
        init_loss += loss_of(model, x, cfg.q_points)?.total;
    }
    checkpoints.push(Checkpoint {
        step: 0,
        running_loss: init_loss / probe as f64,
        drift: drift_norms(model),
        snapshot: cfg.snapshot_offsets.then(|| Offsets::from_model(model)),
    });

    let mut grads: Vec<PointGrad> = (0..cfg.batch)
        .map(|_| PointGrad {
            loss: 0.0,
            grad: Offsets::zeros_like(model),
        })
        .collect();
    let mut total_grad = Offsets::zeros_like(model);
    let inv_b = 1.0 / cfg.batch as f64;

    let mut loss_acc = 0.0;
    let mut loss_count = 0usize;
    let mut abort: Option<(usize, String)> = None;

    for t in 0..cfg.t_steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.index(data.len())).collect();
        let xs: Vec<&[f64]> = idx.iter().map(|&k| data[k].as_slice()).collect();
        if let Err(e) = exec.batch(model, cfg.q_points, &xs, &mut grads) {
            abort = Some((t, alloc::format!("{e}")));
            break;
        }
        let mean_loss = grads.iter().map(|g| g.loss).sum::<f64>() * inv_b;
        if !mean_loss.is_finite() || math::abs(mean_loss) > LOSS_ABORT {
            abort = Some((t, alloc::format!("batch loss {mean_loss}")));
            break;
        }
        total_grad.fill_zero();
        for g in &grads {
            total_grad.axpy(inv_b, &g.grad);
        }
        sgd_step(model, &total_grad, cfg.eta);
        if model.family == Family::Cnf {
            project_cnf(model);
        }
        if offsets_max_abs(model) > PARAM_ABORT {
            abort = Some((t, alloc::string::String::from("parameter overflow")));
            break;
        }
        loss_acc += mean_loss;
        loss_count += 1;
        let step = t + 1;
        if step % cfg.checkpoint_every == 0 || step == cfg.t_steps {
            checkpoints.push(Checkpoint {
                step,
                running_loss: loss_acc / loss_count as f64,
                drift: drift_norms(model),
                snapshot: cfg.snapshot_offsets.then(|| Offsets::from_model(model)),
            });
            loss_acc = 0.0;
            loss_count = 0;
        }
    }

    let outcome = match abort {
        Some((step, reason)) => TrainOutcome::Aborted { step, reason },
        None => TrainOutcome::Completed,
    };
    Ok(TrainRun {
        checkpoints,
        outcome,
    })
}

/// Mean loss over a dataset slice (used for final train/test numbers).
pub fn mean_loss(model: &FlowModel, data: &[Vec<f64>], q: usize) -> Result<f64, CoreError> {
    if data.is_empty() {
        return Err(CoreError::InvalidConfig("empty evaluation set"));
    }
    let mut acc = 0.0;
    for x in data {
        acc += loss_of(model, x, q)?.total;
    }
    Ok(acc / data.len() as f64)
}
