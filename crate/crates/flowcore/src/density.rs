//! Flow inversion, exact log-density via change of variables, sampling and
//! Monte-Carlo KL diagnostics.
//!
//! `log p(x) = log p_Z(f(x)) + Σ_i log ∂f_i/∂x_i`. With the exponential base
//! any `z_i < 0` puts the point outside the support and the log-density is
//! the `-inf` sentinel (not an error). Inversion goes coordinate by
//! coordinate with bisection — the autoregressive map is strictly increasing
//! in its own coordinate, so bisection is unconditionally safe where a Newton
//! step would need curvature assumptions.

use alloc::vec::Vec;

use crate::activations::ln_elu_plus_one;
use crate::model::{cnf_net_forward, cnf_partial_xi, unf_net_forward, BaseDist, Family, FlowModel};
use crate::quad::reconstruct_f;
use crate::{math, CoreError, Rng};

/// Default bisection budget: 60 halvings of `[-1, 1]` exhaust an f64.
pub const BISECT_MAX_ITERS: usize = 60;

const LN_2PI: f64 = 1.8378770664093453;

/// `z_i = f_i(x_{1:i})`: quadrature reconstruction for UNF, the network value
/// itself for CNF.
pub fn forward_map(model: &FlowModel, x: &[f64], q: usize) -> Result<Vec<f64>, CoreError> {
    check_dim(model, x)?;
    (1..=model.d)
        .map(|i| forward_dim(model, i, &x[..i], q))
        .collect()
}

fn forward_dim(model: &FlowModel, i: usize, head: &[f64], q: usize) -> Result<f64, CoreError> {
    match model.family {
        Family::Unf => reconstruct_f(model, i, head, q),
        Family::Cnf => cnf_net_forward(model.tau, model.dim(i), head),
        Family::CnfSquare => Err(CoreError::InvalidConfig(
            "no density operations for the squared reparameterization",
        )),
    }
}

fn log_det_dim(model: &FlowModel, i: usize, head: &[f64]) -> Result<f64, CoreError> {
    match model.family {
        Family::Unf => Ok(ln_elu_plus_one(unf_net_forward(model.dim(i), head)?)),
        Family::Cnf => Ok(math::ln(cnf_partial_xi(model.tau, model.dim(i), head)?)),
        Family::CnfSquare => Err(CoreError::InvalidConfig(
            "no density operations for the squared reparameterization",
        )),
    }
}

pub fn base_log_density(base: BaseDist, z: &[f64]) -> f64 {
    match base {
        BaseDist::Exponential => {
            if z.iter().any(|&v| v < 0.0) {
                return f64::NEG_INFINITY;
            }
            -z.iter().sum::<f64>()
        }
        BaseDist::Gaussian => {
            -0.5 * z.len() as f64 * LN_2PI - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
        }
    }
}

/// `log p_Z(f(x)) + Σ_i log ∂f_i/∂x_i`; `-inf` when the exponential base has
/// no mass at `f(x)`.
pub fn log_density(model: &FlowModel, x: &[f64], q: usize) -> Result<f64, CoreError> {
    let z = forward_map(model, x, q)?;
    let base = base_log_density(model.base, &z);
    if base == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let mut acc = base;
    for i in 1..=model.d {
        acc += log_det_dim(model, i, &x[..i])?;
    }
    Ok(acc)
}

/// Bisection solve of a strictly increasing scalar function on `[lo, hi]`.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, target: f64, tol: f64) -> f64 {
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECT_MAX_ITERS {
        mid = 0.5 * (lo + hi);
        let v = f(mid);
        if math::abs(v - target) <= tol {
            return mid;
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mid
}

/// Invert the flow inside the ball of the given radius: solves
/// `f_i(x_{1:i-1}, x_i) = z_i` coordinate by coordinate. The bracket for
/// `x_i` is `[-R_i, R_i]` with `R_i² = radius² − ‖x_{1:i-1}‖²` so every
/// prefix stays inside the ball.
pub fn invert_flow_in_ball(
    model: &FlowModel,
    z: &[f64],
    q: usize,
    tol: f64,
    radius: f64,
) -> Result<Vec<f64>, CoreError> {
    check_dim(model, z)?;
    let mut x: Vec<f64> = Vec::with_capacity(model.d);
    for i in 1..=model.d {
        let prefix_sq: f64 = x.iter().map(|v| v * v).sum();
        let r_i = math::sqrt((radius * radius - prefix_sq).max(0.0));
        let mut head = x.clone();
        head.push(0.0);
        let eval = |t: f64, head: &mut Vec<f64>| {
            head[i - 1] = t;
            forward_dim(model, i, head, q)
        };
        let f_lo = eval(-r_i, &mut head)?;
        let f_hi = eval(r_i, &mut head)?;
        let zi = z[i - 1];
        if zi < f_lo || zi > f_hi {
            return Err(CoreError::TargetOutsideImage {
                dim: i,
                lo: f_lo,
                hi: f_hi,
                target: zi,
            });
        }
        let xi = bisect(
            |t| {
                let mut h = x.clone();
                h.push(t);
                forward_dim(model, i, &h, q).unwrap_or(f64::INFINITY)
            },
            -r_i,
            r_i,
            zi,
            tol,
        );
        x.push(xi);
    }
    Ok(x)
}

/// Inversion in the unit ball (the models' natural domain).
pub fn invert_flow(model: &FlowModel, z: &[f64], q: usize, tol: f64) -> Result<Vec<f64>, CoreError> {
    invert_flow_in_ball(model, z, q, tol, 1.0)
}

/// Draw `n` samples: base draw, then inversion; base points outside the
/// model's image are rejected and redrawn. A sustained acceptance rate below
/// one half reports the model image as degenerate.
pub fn sample(
    model: &FlowModel,
    n: usize,
    rng: &mut Rng,
    q: usize,
    tol: f64,
) -> Result<Vec<Vec<f64>>, CoreError> {
    let mut out = Vec::with_capacity(n);
    let mut attempts: u64 = 0;
    let mut accepted: u64 = 0;
    while out.len() < n {
        attempts += 1;
        let z: Vec<f64> = (0..model.d)
            .map(|_| match model.base {
                BaseDist::Exponential => rng.exponential(),
                BaseDist::Gaussian => rng.normal(),
            })
            .collect();
        match invert_flow(model, &z, q, tol) {
            Ok(x) => {
                accepted += 1;
                out.push(x);
            }
            Err(CoreError::TargetOutsideImage { .. }) => {}
            Err(e) => return Err(e),
        }
        if attempts >= 100 && accepted * 2 < attempts {
            return Err(CoreError::ModelImageTooSmall { attempts, accepted });
        }
    }
    Ok(out)
}

/// Monte-Carlo KL estimate with standard error and the Pinsker TV bound.
#[derive(Debug, Clone, Copy)]
pub struct KlEstimate {
    pub kl: f64,
    pub std_err: f64,
    /// `sqrt(max(kl, 0) / 2)` — Pinsker's bound on total variation.
    pub tv_bound: f64,
    pub used: usize,
    pub discarded: usize,
}

/// `KL(p ‖ q) ≈ mean of log p − log q` over samples drawn from `p`.
/// Samples where either density is `-inf` are discarded (counted); more than
/// 10% discards is a support mismatch.
pub fn kl_monte_carlo<P, Q>(
    p_log_density: P,
    q_log_density: Q,
    samples: &[Vec<f64>],
) -> Result<KlEstimate, CoreError>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    if samples.is_empty() {
        return Err(CoreError::InvalidConfig("no samples for the KL estimate"));
    }
    let mut diffs: Vec<f64> = Vec::with_capacity(samples.len());
    let mut discarded = 0usize;
    for x in samples {
        let lp = p_log_density(x);
        let lq = q_log_density(x);
        if lp == f64::NEG_INFINITY || lq == f64::NEG_INFINITY {
            discarded += 1;
            continue;
        }
        diffs.push(lp - lq);
    }
    if discarded * 10 > samples.len() {
        return Err(CoreError::SupportMismatch {
            discarded,
            total: samples.len(),
        });
    }
    let used = diffs.len();
    if used == 0 {
        return Err(CoreError::SupportMismatch {
            discarded,
            total: samples.len(),
        });
    }
    let mean = diffs.iter().sum::<f64>() / used as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / (used.max(2) - 1) as f64;
    Ok(KlEstimate {
        kl: mean,
        std_err: math::sqrt(var / used as f64),
        tv_bound: math::sqrt(mean.max(0.0) / 2.0),
        used,
        discarded,
    })
}

fn check_dim(model: &FlowModel, v: &[f64]) -> Result<(), CoreError> {
    if v.len() != model.d {
        return Err(CoreError::ShapeMismatch {
            expected: model.d,
            got: v.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_unf;

    fn zero_net(d: usize, seed: u64) -> FlowModel {
        let mut rng = Rng::from_seed(seed);
        let mut model = init_unf(d, 4, 0.2, BaseDist::Exponential, &mut rng);
        for p in &mut model.per_dim {
            p.outer.iter_mut().for_each(|a| *a = 0.0);
        }
        model
    }

    #[test]
    fn zero_net_forward_is_shift_by_one() {
        let model = zero_net(2, 60);
        let z = forward_map(&model, &[0.0, 0.5], 64).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12);
        assert!((z[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_net_log_density_closed_form() {
        let model = zero_net(1, 61);
        let ld = log_density(&model, &[0.0], 64).unwrap();
        assert!((ld - (-1.0)).abs() < 1e-12);
        let ld = log_density(&model, &[0.5], 64).unwrap();
        assert!((ld - (-1.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_net_inversion() {
        let model = zero_net(1, 62);
        let x = invert_flow(&model, &[0.5], 64, 1e-10).unwrap();
        assert!((x[0] + 0.5).abs() < 1e-9);
        // Below the image: f(-1) = 0.
        let err = invert_flow(&model, &[-0.25], 64, 1e-10).unwrap_err();
        assert!(matches!(err, CoreError::TargetOutsideImage { dim: 1, .. }));
    }

    #[test]
    fn round_trip_on_random_models() {
        let mut rng = Rng::from_seed(63);
        let model = init_unf(2, 16, 0.2, BaseDist::Exponential, &mut rng);
        for _ in 0..200 {
            let x = rng.in_ball(2, 0.6);
            let z = forward_map(&model, &x, 64).unwrap();
            let back = invert_flow(&model, &z, 64, 1e-10).unwrap();
            let z2 = forward_map(&model, &back, 64).unwrap();
            for (a, b) in z.iter().zip(&z2) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sampling_lands_in_ball_and_is_deterministic() {
        let model = zero_net(1, 64);
        let mut rng1 = Rng::from_seed(7);
        let s1 = sample(&model, 200, &mut rng1, 64, 1e-10).unwrap();
        assert!(s1.iter().all(|x| x[0].abs() <= 1.0 + 1e-9));
        let mut rng2 = Rng::from_seed(7);
        let s2 = sample(&model, 200, &mut rng2, 64, 1e-10).unwrap();
        assert_eq!(s1, s2);
        assert!(sample(&model, 0, &mut rng1, 64, 1e-10).unwrap().is_empty());
    }

    #[test]
    fn kl_of_identical_densities_is_zero() {
        let mut rng = Rng::from_seed(65);
        let samples: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.normal()]).collect();
        let ld = |x: &[f64]| -0.5 * x[0] * x[0];
        let est = kl_monte_carlo(ld, ld, &samples).unwrap();
        assert_eq!(est.kl, 0.0);
        assert_eq!(est.discarded, 0);
    }

    #[test]
    fn kl_of_shifted_gaussians_matches_closed_form() {
        // KL(N(0,1) || N(0.5,1)) = 0.5²/2 = 0.125.
        let mut rng = Rng::from_seed(66);
        let samples: Vec<Vec<f64>> = (0..40_000).map(|_| vec![rng.normal()]).collect();
        let p = |x: &[f64]| -0.5 * x[0] * x[0];
        let q = |x: &[f64]| -0.5 * (x[0] - 0.5) * (x[0] - 0.5);
        let est = kl_monte_carlo(p, q, &samples).unwrap();
        assert!(
            (est.kl - 0.125).abs() <= 3.0 * est.std_err,
            "kl {} se {}",
            est.kl,
            est.std_err
        );
        assert!((est.tv_bound - math::sqrt(est.kl / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn kl_support_mismatch_detected() {
        let samples: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let p = |_: &[f64]| 0.0;
        let q = |x: &[f64]| {
            if x[0] < 50.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        };
        assert!(matches!(
            kl_monte_carlo(p, q, &samples),
            Err(CoreError::SupportMismatch { .. })
        ));
    }

    #[test]
    fn bisection_brackets_straddle_target_at_every_step() {
        let mut lo = -1.0f64;
        let mut hi = 1.0f64;
        let target = 0.3f64;
        let f = |t: f64| t * t * t + t; // strictly increasing
        for _ in 0..50 {
            assert!(f(lo) <= target && target <= f(hi));
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
}
