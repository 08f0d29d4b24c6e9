//! Finite-difference oracle for the hand-rolled gradients.
//!
//! The oracle only touches the public loss evaluators: it perturbs one offset
//! coordinate at a time and takes central differences, entirely independent
//! of the reverse-mode code it checks. UNF instances are resampled until all
//! pre-activations (at every quadrature node and at the point itself) sit at
//! least 1e-3 away from the ReLU kink, so the FD step (1e-5) cannot flip an
//! activation pattern.

use flowcore::loss::{cnf_loss, cnf_loss_grad, loss_of, unf_loss, unf_loss_grad};
use flowcore::model::{embed_clamped, init_cnf, init_unf};
use flowcore::quad::quad_nodes;
use flowcore::train::project_cnf;
use flowcore::{BaseDist, Family, FlowModel, Offsets, Rng};

const FD_STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;

fn randomize_offsets(model: &mut FlowModel, scale: f64, rng: &mut Rng) {
    for p in &mut model.per_dim {
        for v in p.dw.data_mut() {
            *v = scale * rng.normal();
        }
        for v in &mut p.db {
            *v = scale * rng.normal();
        }
    }
    if model.family == Family::Cnf {
        project_cnf(model);
    }
}

/// Smallest |pre-activation| over all dims, neurons, and evaluation points
/// (every quadrature node plus the log point).
fn min_kink_distance(model: &FlowModel, x: &[f64], q: usize) -> f64 {
    let mut lo = f64::INFINITY;
    for i in 1..=model.d {
        let p = model.dim(i);
        let mut points: Vec<Vec<f64>> = quad_nodes(&x[..i], q)
            .unwrap()
            .into_iter()
            .map(|(_, node)| node)
            .collect();
        points.push(x[..i].to_vec());
        for pt in &points {
            let xbar = embed_clamped(pt);
            for r in 0..p.width {
                lo = lo.min(p.pre_activation(r, &xbar).abs());
            }
        }
    }
    lo
}

fn fd_gradient(model: &FlowModel, x: &[f64], q: usize) -> Offsets {
    let mut work = model.clone();
    let mut fd = Offsets::zeros_like(model);
    for di in 0..model.d {
        let (rows, cols) = {
            let p = &model.per_dim[di];
            (p.width, p.input_dim())
        };
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.per_dim[di].dw.row(r)[c];
                work.per_dim[di].dw.row_mut(r)[c] = orig + FD_STEP;
                let up = loss_of(&work, x, q).unwrap().total;
                work.per_dim[di].dw.row_mut(r)[c] = orig - FD_STEP;
                let dn = loss_of(&work, x, q).unwrap().total;
                work.per_dim[di].dw.row_mut(r)[c] = orig;
                fd.per_dim[di].dw.row_mut(r)[c] = (up - dn) / (2.0 * FD_STEP);
            }
            let orig = model.per_dim[di].db[r];
            work.per_dim[di].db[r] = orig + FD_STEP;
            let up = loss_of(&work, x, q).unwrap().total;
            work.per_dim[di].db[r] = orig - FD_STEP;
            let dn = loss_of(&work, x, q).unwrap().total;
            work.per_dim[di].db[r] = orig;
            fd.per_dim[di].db[r] = (up - dn) / (2.0 * FD_STEP);
        }
    }
    fd
}

fn rel_gap(analytic: &Offsets, fd: &Offsets) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in analytic.per_dim.iter().zip(&fd.per_dim) {
        for (x, y) in a.dw.data().iter().zip(b.dw.data()) {
            num += (x - y) * (x - y);
            den += x * x;
        }
        for (x, y) in a.db.iter().zip(&b.db) {
            num += (x - y) * (x - y);
            den += x * x;
        }
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

#[test]
fn unf_gradient_matches_central_differences() {
    let mut rng = Rng::from_seed(0xFD01);
    let q = 8;
    let mut checked = 0;
    while checked < 50 {
        let d = 1 + rng.index(3);
        let m = 1 + rng.index(16);
        let mut model = init_unf(d, m, 0.3, BaseDist::Exponential, &mut rng);
        randomize_offsets(&mut model, 0.15, &mut rng);
        let x = rng.in_ball(d, 0.5);
        if min_kink_distance(&model, &x, q) < KINK_MARGIN {
            continue;
        }
        let (_, analytic) = unf_loss_grad(&model, &x, q).unwrap();
        let fd = fd_gradient(&model, &x, q);
        let gap = rel_gap(&analytic, &fd);
        assert!(gap <= 1e-5, "instance {checked}: relative gap {gap}");
        checked += 1;
    }
}

#[test]
fn cnf_gradient_matches_central_differences() {
    let mut rng = Rng::from_seed(0xFD02);
    for base in [BaseDist::Gaussian, BaseDist::Exponential] {
        let mut checked = 0;
        while checked < 50 {
            let d = 1 + rng.index(3);
            let m = 1 + rng.index(16);
            let mut model = init_cnf(d, m, 0.3, 0.5, 1.0, 1e-3, base, &mut rng);
            randomize_offsets(&mut model, 0.15, &mut rng);
            let x = rng.in_ball(d, 0.5);
            // FD perturbs the own-coordinate weights; keep the Jacobian
            // comfortably positive so the log stays smooth on the stencil.
            if (1..=d).any(|i| {
                flowcore::model::cnf_partial_xi(model.tau, model.dim(i), &x[..i])
                    .map(|v| v < 1e-2)
                    .unwrap_or(true)
            }) {
                continue;
            }
            let (_, analytic) = cnf_loss_grad(&model, &x).unwrap();
            let fd = fd_gradient(&model, &x, 1);
            let gap = rel_gap(&analytic, &fd);
            assert!(gap <= 1e-5, "instance {checked}: relative gap {gap}");
            checked += 1;
        }
    }
}

#[test]
fn loss_decomposition_is_consistent() {
    let mut rng = Rng::from_seed(0xFD03);
    let unf = init_unf(3, 8, 0.2, BaseDist::Exponential, &mut rng);
    let cnf = init_cnf(3, 8, 0.2, 0.4, 0.2, 1e-3, BaseDist::Gaussian, &mut rng);
    for _ in 0..20 {
        let x = rng.in_ball(3, 0.5);
        for lb in [unf_loss(&unf, &x, 16).unwrap(), cnf_loss(&cnf, &x).unwrap()] {
            let sum: f64 = lb.per_dim.iter().map(|(a, b)| a + b).sum();
            assert!((lb.total - sum).abs() <= 1e-12 * (1.0 + lb.total.abs()));
        }
    }
}
