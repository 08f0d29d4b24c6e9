use core::fmt;

/// Errors surfaced by the numerical core.
///
/// Contract breaches (shape mismatches, nonpositive Jacobians) are reported
/// eagerly; numeric blow-ups during training abort with the failing step.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A matrix norm was requested on a matrix with no rows.
    EmptyMatrix,
    /// An input vector length does not match the parameter shapes.
    ShapeMismatch { expected: usize, got: usize },
    /// An input point lies outside the unit ball and cannot be embedded.
    PointOutsideBall,
    /// The modeled Jacobian entry `∂f_i/∂x_i` came out nonpositive, which
    /// signals a violated initialization or projection contract.
    NonpositiveJacobian,
    /// Quadrature upper limit below the lower limit `-1`.
    LowerLimitExceedsUpper,
    /// Inversion target lies outside the attainable image of the ball.
    TargetOutsideImage {
        dim: usize,
        lo: f64,
        hi: f64,
        target: f64,
    },
    /// Rejection sampling kept missing the model image.
    ModelImageTooSmall { attempts: u64, accepted: u64 },
    /// Too many `-inf` log densities were discarded in a KL estimate.
    SupportMismatch { discarded: usize, total: usize },
    /// Loss or parameters left the finite range during training.
    NumericOverflow { step: usize },
    /// The requested operation is not defined for this model family/config.
    InvalidConfig(&'static str),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::EmptyMatrix => write!(f, "empty matrix"),
            CoreError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            CoreError::PointOutsideBall => write!(f, "point outside unit ball"),
            CoreError::NonpositiveJacobian => write!(f, "nonpositive Jacobian"),
            CoreError::LowerLimitExceedsUpper => write!(f, "lower limit exceeds upper limit"),
            CoreError::TargetOutsideImage {
                dim,
                lo,
                hi,
                target,
            } => write!(
                f,
                "target outside image: z_{dim} = {target} not in [{lo}, {hi}]"
            ),
            CoreError::ModelImageTooSmall { attempts, accepted } => write!(
                f,
                "model image too small: {accepted}/{attempts} draws accepted"
            ),
            CoreError::SupportMismatch { discarded, total } => {
                write!(f, "support mismatch: {discarded}/{total} samples discarded")
            }
            CoreError::NumericOverflow { step } => write!(f, "numeric overflow at step {step}"),
            CoreError::InvalidConfig(what) => write!(f, "invalid config: {what}"),
        }
    }
}

impl core::error::Error for CoreError {}
