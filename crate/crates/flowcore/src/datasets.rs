//! Synthetic dataset generators.
//!
//! Every generator is pure given `(n, seed)` and rescales its draws into the
//! radius-0.5 ball: the affine map comes from the *analytic* 6σ range of the
//! mixture (never the realized sample), and any point still outside the ball
//! is rejected and redrawn so the density stays absolutely continuous — no
//! clipping atoms.

use alloc::string::String;
use alloc::vec::Vec;

use crate::activations::{elu_plus_one, ln_elu_plus_one};
use crate::density::bisect;
use crate::linalg::dot;
use crate::model::embed_clamped;
use crate::quad::node_coords;
use crate::{math, CoreError, Rng};

pub const DATA_BALL_RADIUS: f64 = 0.5;

/// Affine map `x' = (x - shift) * factor` applied at generation time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScaleMap {
    pub shift: Vec<f64>,
    pub factor: f64,
}

impl ScaleMap {
    pub fn identity(d: usize) -> Self {
        ScaleMap {
            shift: alloc::vec![0.0; d],
            factor: 1.0,
        }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for (v, s) in x.iter_mut().zip(&self.shift) {
            *v = (*v - s) * self.factor;
        }
    }
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub name: String,
    pub d: usize,
    pub points: Vec<Vec<f64>>,
    pub scale: ScaleMap,
    pub seed: u64,
    /// Generator id + version; regeneration from `(name, n, seed)` must be
    /// bit-exact as long as this tag matches.
    pub generator: String,
}

impl Dataset {
    /// Deterministic 90/10 split by index after a seeded shuffle.
    pub fn split_train_test(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.points.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = Rng::derive(self.seed, &[0x73706c6974]); // "split" stream
        for i in (1..n).rev() {
            let j = rng.index(i + 1);
            idx.swap(i, j);
        }
        let cut = (n * 9) / 10;
        let train = idx[..cut].iter().map(|&k| self.points[k].clone()).collect();
        let test = idx[cut..].iter().map(|&k| self.points[k].clone()).collect();
        (train, test)
    }

    fn assert_in_ball(&self) {
        for x in &self.points {
            let sq: f64 = x.iter().map(|v| v * v).sum();
            assert!(
                sq <= DATA_BALL_RADIUS * DATA_BALL_RADIUS + 1e-12,
                "generated point left the data ball"
            );
        }
    }
}

fn draw_scaled<F>(n: usize, d: usize, scale: &ScaleMap, rng: &mut Rng, mut draw: F) -> Vec<Vec<f64>>
where
    F: FnMut(&mut Rng) -> Vec<f64>,
{
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let mut x = draw(rng);
        debug_assert_eq!(x.len(), d);
        scale.apply(&mut x);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        if sq <= DATA_BALL_RADIUS * DATA_BALL_RADIUS {
            points.push(x);
        }
    }
    points
}

/// 1D mixture of two Gaussians with means ±2.5 and unit variance.
pub fn gen_mog1d(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::derive(seed, &[0x6d6f6731]);
    // Analytic 6σ range: |x| ≤ 2.5 + 6.
    let scale = ScaleMap {
        shift: alloc::vec![0.0],
        factor: DATA_BALL_RADIUS / 8.5,
    };
    let points = draw_scaled(n, 1, &scale, &mut rng, |rng| {
        let mean = if rng.index(2) == 0 { -2.5 } else { 2.5 };
        alloc::vec![mean + rng.normal()]
    });
    let ds = Dataset {
        name: String::from("mog1d"),
        d: 1,
        points,
        scale,
        seed,
        generator: String::from("mog1d/v1"),
    };
    ds.assert_in_ball();
    ds
}

/// 1D mixture of three Betas with parameters (5,30), (30,5), (30,30),
/// mapped from [0,1] to [-1/2, 1/2].
pub fn gen_mob1d(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::derive(seed, &[0x6d6f6231]);
    let scale = ScaleMap {
        shift: alloc::vec![0.5],
        factor: 1.0,
    };
    let params = [(5.0, 30.0), (30.0, 5.0), (30.0, 30.0)];
    let points = draw_scaled(n, 1, &scale, &mut rng, |rng| {
        let (a, b) = params[rng.index(3)];
        alloc::vec![rng.beta(a, b)]
    });
    let ds = Dataset {
        name: String::from("mob1d"),
        d: 1,
        points,
        scale,
        seed,
        generator: String::from("mob1d/v1"),
    };
    ds.assert_in_ball();
    ds
}

pub const GRID2D_SIDE: usize = 5;
pub const GRID2D_SIGMA: f64 = 0.06;

/// Centers of the 2D grid blobs on `[-1, 1]²`, row-major.
pub fn grid2d_centers() -> Vec<[f64; 2]> {
    let k = GRID2D_SIDE;
    let mut centers = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            let step = 2.0 / (k - 1) as f64;
            centers.push([-1.0 + a as f64 * step, -1.0 + b as f64 * step]);
        }
    }
    centers
}

/// 2D grid of 5×5 isotropic Gaussian blobs.
pub fn gen_grid2d(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::derive(seed, &[0x67726964]);
    let centers = grid2d_centers();
    let reach = math::sqrt(2.0) + 6.0 * GRID2D_SIGMA;
    let scale = ScaleMap {
        shift: alloc::vec![0.0, 0.0],
        factor: DATA_BALL_RADIUS / reach,
    };
    let points = draw_scaled(n, 2, &scale, &mut rng, |rng| {
        let c = centers[rng.index(centers.len())];
        alloc::vec![
            c[0] + GRID2D_SIGMA * rng.normal(),
            c[1] + GRID2D_SIGMA * rng.normal()
        ]
    });
    let ds = Dataset {
        name: String::from("grid2d"),
        d: 2,
        points,
        scale,
        seed,
        generator: String::from("grid2d/v1"),
    };
    ds.assert_in_ball();
    ds
}

pub const MOG5D_COMPONENTS: usize = 10;
pub const MOG5D_SIGMA: f64 = 0.3;

/// Component means of the 5D mixture, derived from the seed so the layout
/// regenerates from the dataset header alone.
pub fn mog5d_means(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::derive(seed, &[0x6d6f6735, 0x6d65616e]);
    (0..MOG5D_COMPONENTS)
        .map(|_| (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
        .collect()
}

/// 5D mixture of 10 isotropic Gaussians with seed-derived means.
pub fn gen_mog5d(n: usize, seed: u64) -> Dataset {
    let means = mog5d_means(seed);
    let mut rng = Rng::derive(seed, &[0x6d6f6735]);
    let max_mean = means
        .iter()
        .map(|m| math::sqrt(m.iter().map(|v| v * v).sum()))
        .fold(0.0f64, f64::max);
    let reach = max_mean + 6.0 * MOG5D_SIGMA * math::sqrt(5.0);
    let scale = ScaleMap {
        shift: alloc::vec![0.0; 5],
        factor: DATA_BALL_RADIUS / reach,
    };
    let points = draw_scaled(n, 5, &scale, &mut rng, |rng| {
        let m = &means[rng.index(MOG5D_COMPONENTS)];
        m.iter().map(|&mu| mu + MOG5D_SIGMA * rng.normal()).collect()
    });
    let ds = Dataset {
        name: String::from("mog5d"),
        d: 5,
        points,
        scale,
        seed,
        generator: String::from("mog5d/v1"),
    };
    ds.assert_in_ball();
    ds
}

/// Regenerate a named dataset; bit-exact for matching `(name, n, seed)`.
pub fn generate(name: &str, n: usize, seed: u64) -> Result<Dataset, CoreError> {
    match name {
        "mog1d" => Ok(gen_mog1d(n, seed)),
        "mob1d" => Ok(gen_mob1d(n, seed)),
        "grid2d" => Ok(gen_grid2d(n, seed)),
        "mog5d" => Ok(gen_mog5d(n, seed)),
        _ => Err(CoreError::InvalidConfig("unknown dataset name")),
    }
}

// ---------------------------------------------------------------------------
// Known-target flows
// ---------------------------------------------------------------------------

/// Inner activation of the target derivative networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Psi {
    Sin,
    Tanh,
    Cubic,
}

impl Psi {
    fn eval(self, y: f64) -> f64 {
        match self {
            Psi::Sin => math::sin(y),
            Psi::Tanh => math::tanh(y),
            Psi::Cubic => y * y * y,
        }
    }
}

/// One output dimension of the ground-truth flow: the derivative is
/// `φ(Σ_r α_r ψ(⟨w_r, x̄_{1:i}⟩))` with `|α_r| ≤ 1`, `‖w_r‖ ≤ 1`.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetDim {
    pub alphas: Vec<f64>,
    /// One weight row per neuron, each of length `i + 1` (embedded input).
    pub ws: Vec<Vec<f64>>,
    pub psi: Psi,
}

/// Analytically-defined monotone autoregressive flow used as a ground truth:
/// exact derivative in closed form, `f_i` by dense rectangle quadrature.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetFlow {
    pub d: usize,
    pub per_dim: Vec<TargetDim>,
    /// Quadrature resolution for evaluating `f_i` and densities.
    pub q_dense: usize,
}

impl TargetFlow {
    /// `∂F*_i/∂x_i` at `x_{1:i}` (strictly positive).
    pub fn derivative(&self, i: usize, head: &[f64]) -> f64 {
        let td = &self.per_dim[i - 1];
        let xbar = embed_clamped(head);
        let mut s = 0.0;
        for (alpha, w) in td.alphas.iter().zip(&td.ws) {
            s += alpha * td.psi.eval(dot(w, &xbar));
        }
        elu_plus_one(s)
    }

    /// `F*_i(x_{1:i})` by rectangle quadrature on `[-1, x_i]`.
    pub fn f_value(&self, i: usize, head: &[f64]) -> f64 {
        let (delta, ts) = node_coords(head[i - 1], self.q_dense).expect("x_i >= -1");
        let mut node = head.to_vec();
        let mut acc = 0.0;
        for t in ts {
            node[i - 1] = t;
            acc += delta * self.derivative(i, &node);
        }
        acc
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (1..=self.d).map(|i| self.f_value(i, &x[..i])).collect()
    }

    /// Exponential-base log density of the pushforward (the image of the
    /// ball is inside the nonnegative orthant by construction).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 1..=self.d {
            acc -= self.f_value(i, &x[..i]);
            let mut s = 0.0;
            let td = &self.per_dim[i - 1];
            let xbar = embed_clamped(&x[..i]);
            for (alpha, w) in td.alphas.iter().zip(&td.ws) {
                s += alpha * td.psi.eval(dot(w, &xbar));
            }
            acc += ln_elu_plus_one(s);
        }
        acc
    }

    /// Invert `z = F*(x)` inside the data ball; `None` when some `z_i` falls
    /// outside the attainable interval.
    pub fn invert(&self, z: &[f64], tol: f64, radius: f64) -> Option<Vec<f64>> {
        let mut x: Vec<f64> = Vec::with_capacity(self.d);
        for i in 1..=self.d {
            let prefix_sq: f64 = x.iter().map(|v| v * v).sum();
            let r_i = math::sqrt((radius * radius - prefix_sq).max(0.0));
            let mut head = x.clone();
            head.push(-r_i);
            let f_lo = self.f_value(i, &head);
            head[i - 1] = r_i;
            let f_hi = self.f_value(i, &head);
            let zi = z[i - 1];
            if zi < f_lo || zi > f_hi {
                return None;
            }
            let xi = bisect(
                |t| {
                    let mut h = x.clone();
                    h.push(t);
                    self.f_value(i, &h)
                },
                -r_i,
                r_i,
                zi,
                tol,
            );
            x.push(xi);
        }
        Some(x)
    }
}

/// Random target flow plus a dataset drawn from it by inverting exponential
/// base draws inside the radius-0.5 ball (out-of-image draws rejected).
pub fn gen_target_flow(
    d: usize,
    psi: Psi,
    neurons: usize,
    n: usize,
    seed: u64,
    q_dense: usize,
    tol: f64,
) -> (Dataset, TargetFlow) {
    let mut rng = Rng::derive(seed, &[0x74617267, psi as u64, neurons as u64]);
    let per_dim = (1..=d)
        .map(|i| {
            let alphas: Vec<f64> = (0..neurons)
                .map(|r| {
                    let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                    sign * rng.uniform_in(0.7, 1.0)
                })
                .collect();
            let ws: Vec<Vec<f64>> = (0..neurons)
                .map(|_| {
                    let raw: Vec<f64> = (0..i + 1).map(|_| rng.normal()).collect();
                    let norm = math::sqrt(raw.iter().map(|v| v * v).sum());
                    let len = rng.uniform_in(0.6, 1.0);
                    raw.iter().map(|v| v * len / norm).collect()
                })
                .collect();
            TargetDim { alphas, ws, psi }
        })
        .collect();
    let target = TargetFlow {
        d,
        per_dim,
        q_dense,
    };

    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let z: Vec<f64> = (0..d).map(|_| rng.exponential()).collect();
        if let Some(x) = target.invert(&z, tol, DATA_BALL_RADIUS) {
            points.push(x);
        }
    }
    let ds = Dataset {
        name: String::from("target_flow"),
        d,
        points,
        scale: ScaleMap::identity(d),
        seed,
        generator: String::from("target_flow/v1"),
    };
    ds.assert_in_ball();
    (ds, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mog1d_matches_mixture_moments() {
        let n = 10_000;
        let ds = gen_mog1d(n, 42);
        assert_eq!(ds.points.len(), n);
        assert!(ds.points.iter().all(|x| x[0].abs() <= 0.5));
        // Pre-scale mean ≈ 0 within 4σ_mix/√n, σ_mix² = 1 + 2.5².
        let mean_pre: f64 =
            ds.points.iter().map(|x| x[0] / ds.scale.factor).sum::<f64>() / n as f64;
        let bound = 4.0 * (7.25f64).sqrt() / (n as f64).sqrt();
        assert!(mean_pre.abs() < bound, "{mean_pre} vs {bound}");
    }

    #[test]
    fn mob1d_mean_matches_beta_mixture() {
        let n = 10_000;
        let ds = gen_mob1d(n, 43);
        assert!(ds.points.iter().all(|x| x[0].abs() <= 0.5));
        // Mixture mean on [0,1]: ((5/35) + (30/35) + 1/2)/3 = 1/2, so 0 after
        // the shift; spread is dominated by the component separation.
        let mean: f64 = ds.points.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.012, "mean {mean}");
    }

    #[test]
    fn grid2d_component_counts_are_multinomial() {
        let n = 10_000;
        let ds = gen_grid2d(n, 44);
        assert!(ds
            .points
            .iter()
            .all(|x| x[0] * x[0] + x[1] * x[1] <= 0.25 + 1e-12));
        // Assign each point to its nearest center and chi-square against the
        // uniform multinomial; χ²₀.₉₉₉(24) = 51.18 (Wilson–Hilferty check:
        // 24(1 - 2/216 + 3.09√(2/216))³ ≈ 51.3).
        let centers = grid2d_centers();
        let mut counts = [0usize; 25];
        for x in &ds.points {
            let (mut best, mut best_d) = (0usize, f64::INFINITY);
            for (k, c) in centers.iter().enumerate() {
                let cx = c[0] * ds.scale.factor;
                let cy = c[1] * ds.scale.factor;
                let dist = (x[0] - cx) * (x[0] - cx) + (x[1] - cy) * (x[1] - cy);
                if dist < best_d {
                    best_d = dist;
                    best = k;
                }
            }
            counts[best] += 1;
        }
        let expect = n as f64 / 25.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        assert!(chi2 < 51.18, "chi2 {chi2}");
    }

    #[test]
    fn mog5d_trace_matches_analytic_mixture() {
        let n = 10_000;
        let ds = gen_mog5d(n, 45);
        assert_eq!(ds.d, 5);
        let means = mog5d_means(45);
        // Analytic trace of the mixture covariance, then scaled by factor².
        let grand: Vec<f64> = (0..5)
            .map(|c| means.iter().map(|m| m[c]).sum::<f64>() / means.len() as f64)
            .collect();
        let spread: f64 = means
            .iter()
            .map(|m| {
                m.iter()
                    .zip(&grand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / means.len() as f64;
        let trace_pre = 5.0 * MOG5D_SIGMA * MOG5D_SIGMA + spread;
        let trace_scaled = trace_pre * ds.scale.factor * ds.scale.factor;
        let emp_mean: Vec<f64> = (0..5)
            .map(|c| ds.points.iter().map(|x| x[c]).sum::<f64>() / n as f64)
            .collect();
        let emp_trace: f64 = ds
            .points
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&emp_mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        assert!(
            (emp_trace - trace_scaled).abs() < 0.1 * trace_scaled,
            "emp {emp_trace} vs analytic {trace_scaled}"
        );
    }

    #[test]
    fn generators_are_seed_deterministic() {
        for name in ["mog1d", "mob1d", "grid2d", "mog5d"] {
            let a = generate(name, 500, 7).unwrap();
            let b = generate(name, 500, 7).unwrap();
            assert_eq!(a.points, b.points, "{name}");
            let c = generate(name, 500, 8).unwrap();
            assert_ne!(a.points, c.points, "{name}");
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = gen_mog1d(1000, 9);
        let (tr1, te1) = ds.split_train_test();
        let (tr2, _) = ds.split_train_test();
        assert_eq!(tr1, tr2);
        assert_eq!(tr1.len(), 900);
        assert_eq!(te1.len(), 100);
    }

    #[test]
    fn zero_target_flow_is_shift_by_one() {
        let target = TargetFlow {
            d: 1,
            per_dim: alloc::vec![TargetDim {
                alphas: alloc::vec![0.0],
                ws: alloc::vec![alloc::vec![0.0, 0.0]],
                psi: Psi::Tanh,
            }],
            q_dense: 256,
        };
        // Derivative ≡ φ(0) = 1, so F(x) = x + 1 and data = z - 1 truncated.
        assert!((target.f_value(1, &[0.25]) - 1.25).abs() < 1e-12);
        let x = target.invert(&[0.8], 1e-10, 0.5).unwrap();
        assert!((x[0] + 0.2).abs() < 1e-8);
        assert!(target.invert(&[1.6], 1e-10, 0.5).is_none());
    }

    #[test]
    fn target_flow_round_trip_and_self_kl() {
        let (ds, target) = gen_target_flow(2, Psi::Tanh, 2, 400, 11, 512, 1e-10);
        assert_eq!(ds.points.len(), 400);
        for x in ds.points.iter().take(50) {
            let z = target.forward(x);
            let back = target.invert(&z, 1e-10, DATA_BALL_RADIUS).unwrap();
            let z2 = target.forward(&back);
            for (a, b) in z.iter().zip(&z2) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        let ld = |x: &[f64]| target.log_density(x);
        let est = crate::density::kl_monte_carlo(ld, ld, &ds.points).unwrap();
        assert_eq!(est.kl, 0.0);
    }
}
