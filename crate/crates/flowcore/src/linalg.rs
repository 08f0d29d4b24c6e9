//! Dense row-major matrices, vector norms and the `(p, q)` matrix norms used
//! for drift reporting: `‖M‖_{p,q} = (Σ_i ‖m_i‖_p^q)^{1/q}` over rows `m_i`,
//! with `q = ∞` meaning the max over rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::CoreError;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Vector norm selector; the only exponents the drift reports use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecNorm {
    One,
    Two,
    Inf,
}

pub fn vec_norm(v: &[f64], p: VecNorm) -> f64 {
    match p {
        VecNorm::One => v.iter().map(|x| math::abs(*x)).sum(),
        VecNorm::Two => math::sqrt(v.iter().map(|x| x * x).sum()),
        VecNorm::Inf => v.iter().fold(0.0, |acc, x| acc.max(math::abs(*x))),
    }
}

/// `(Σ_i ‖row_i‖_p^q)^{1/q}`, or `max_i ‖row_i‖_p` for `q = ∞`.
pub fn norm_pq(m: &Mat, p: VecNorm, q: VecNorm) -> Result<f64, CoreError> {
    if m.rows == 0 {
        return Err(CoreError::EmptyMatrix);
    }
    let row_norms = (0..m.rows).map(|r| vec_norm(m.row(r), p));
    Ok(match q {
        VecNorm::One => row_norms.sum(),
        VecNorm::Two => math::sqrt(row_norms.map(|n| n * n).sum()),
        VecNorm::Inf => row_norms.fold(0.0, f64::max),
    })
}

/// Same norm over an iterator of rows, so callers can stack `(w_r, b_r)`
/// rows without materializing a matrix.
pub fn norm_pq_rows<'a, I>(rows: I, p: VecNorm, q: VecNorm) -> Result<f64, CoreError>
where
    I: Iterator<Item = &'a [f64]>,
{
    let mut count = 0usize;
    let mut acc = 0.0f64;
    for row in rows {
        count += 1;
        let n = vec_norm(row, p);
        match q {
            VecNorm::One => acc += n,
            VecNorm::Two => acc += n * n,
            VecNorm::Inf => acc = acc.max(n),
        }
    }
    if count == 0 {
        return Err(CoreError::EmptyMatrix);
    }
    Ok(match q {
        VecNorm::Two => math::sqrt(acc),
        _ => acc,
    })
}

/// Dot product accumulated in ascending index order.
///
/// Shared by every forward pass so that paths which must agree bit-for-bit
/// (network vs. pseudo-network at zero offsets) do agree.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Least-squares affine fit `y ≈ ⟨coef, x⟩ + intercept` over sample rows.
///
/// Solves the normal equations with partial-pivot Gaussian elimination; the
/// systems here are tiny (data dimension + 1).
pub fn affine_fit(xs: &[Vec<f64>], ys: &[f64]) -> (Vec<f64>, f64) {
    assert!(!xs.is_empty() && xs.len() == ys.len());
    let d = xs[0].len();
    let n = d + 1; // coefficients plus intercept
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for (x, &y) in xs.iter().zip(ys) {
        let aug = |j: usize| if j < d { x[j] } else { 1.0 };
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] += aug(i) * aug(j);
            }
            b[i] += aug(i) * y;
        }
    }
    solve_in_place(&mut a, &mut b, n);
    let intercept = b[d];
    b.truncate(d);
    (b, intercept)
}

fn solve_in_place(a: &mut [f64], b: &mut [f64], n: usize) {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if math::abs(a[r * n + col]) > math::abs(a[piv * n + col]) {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let diag = a[col * n + col];
        if diag == 0.0 {
            continue; // singular direction; leave coefficient at zero
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[r * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            b[r] -= factor * b[col];
        }
    }
    for i in 0..n {
        let diag = a[i * n + i];
        if diag != 0.0 {
            b[i] /= diag;
        } else {
            b[i] = 0.0;
        }
    }
}
