//! Activation functions and their derivatives.
//!
//! `ELU+1` is the positive output activation for the UNF Jacobian diagonal:
//! `φ(u) = e^u` for `u < 0`, `u + 1` for `u ≥ 0`. It is strictly positive,
//! strictly increasing and 1-Lipschitz, with `φ'` again 1-Lipschitz. We take
//! `φ'(0) = 1` (right limit) so `φ'` stays monotone. `ReLU'(0) = 0` is the
//! subgradient convention; the kink has measure zero but the choice matters
//! when comparing activation indicators in coupling diagnostics.

use crate::math;

/// Which hidden-layer activation a network family uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ActivationKind {
    Relu,
    Tanh,
    EluPlusOne,
}

/// `φ(u) = e^u · 1[u<0] + (u+1) · 1[u≥0]`, strictly positive.
#[inline(always)]
pub fn elu_plus_one(u: f64) -> f64 {
    if u < 0.0 {
        math::exp(u)
    } else {
        u + 1.0
    }
}

/// `φ'(u) = e^u` for `u < 0`, else `1` (right-continuous at 0).
#[inline(always)]
pub fn elu_plus_one_prime(u: f64) -> f64 {
    if u < 0.0 {
        math::exp(u)
    } else {
        1.0
    }
}

/// `log φ(u)`: equals `u` for `u < 0`, `ln(u+1)` otherwise.
#[inline(always)]
pub fn ln_elu_plus_one(u: f64) -> f64 {
    if u < 0.0 {
        u
    } else {
        math::ln(u + 1.0)
    }
}

/// `φ'(u)/φ(u)`: 1 for `u < 0`, `1/(u+1)` otherwise. Always in (0, 1].
#[inline(always)]
pub fn elu_ratio(u: f64) -> f64 {
    if u < 0.0 {
        1.0
    } else {
        1.0 / (u + 1.0)
    }
}

#[inline(always)]
pub fn relu(u: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        0.0
    }
}

/// Indicator `1[u > 0]`; zero at the kink.
#[inline(always)]
pub fn relu_prime(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline(always)]
pub fn tanh(u: f64) -> f64 {
    math::tanh(u)
}

/// `tanh'` expressed through the already-computed `tanh` value.
#[inline(always)]
pub fn tanh_prime_from(t: f64) -> f64 {
    1.0 - t * t
}

/// `tanh''` expressed through the `tanh` value: `-2 t (1 - t²)`.
#[inline(always)]
pub fn tanh_second_from(t: f64) -> f64 {
    -2.0 * t * (1.0 - t * t)
}
