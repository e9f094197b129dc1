//! Activation functions used to map a fused opinion score into probability
//! space.
//!
//! `SinAct` is the piecewise function
//!
//! ```text
//!          0                           x < 0
//! H(x) =   x + sin(2πx − π) / (2π)     0 ≤ x ≤ 1
//!          1                           x > 1
//! ```
//!
//! It meets the clamps with zero slope, reaches 0 and 1 exactly, and has
//! slope 2 at `x = 0.5`, eight times the steepest point of the logistic
//! sigmoid.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Cut used by [`ActivationKind::Step`].
pub const STEP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Step,
    Sigmoid,
    SinAct,
}

impl ActivationKind {
    pub fn is_differentiable(self) -> bool {
        !matches!(self, ActivationKind::Step)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Step => "Step",
            ActivationKind::Sigmoid => "Sigmoid",
            ActivationKind::SinAct => "SinAct",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "step" => Ok(ActivationKind::Step),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "sinact" => Ok(ActivationKind::SinAct),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn sinact(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x > 1.0 {
        1.0
    } else {
        // sin(2πx − π) = −sin(2πx)
        x - (TWO_PI * x).sin() / TWO_PI
    }
}

#[inline]
pub fn sinact_deriv(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        1.0 - (TWO_PI * x).cos()
    } else {
        0.0
    }
}

#[inline]
pub fn activate(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Step => {
            if x >= STEP_THRESHOLD {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::Sigmoid => sigmoid(x),
        ActivationKind::SinAct => sinact(x),
    }
}

pub fn activate_deriv(kind: ActivationKind, x: f64) -> Result<f64> {
    match kind {
        ActivationKind::Step => Err(Error::NonDifferentiable),
        ActivationKind::Sigmoid => {
            let s = sigmoid(x);
            Ok(s * (1.0 - s))
        }
        ActivationKind::SinAct => Ok(sinact_deriv(x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // straight transcription of the piecewise form, kept separate from the
    // production path which uses the rewritten sine
    fn sinact_reference(x: f64) -> f64 {
        if x > 1.0 {
            1.0
        } else if x < 0.0 {
            0.0
        } else {
            x + (2.0 * PI * x - PI).sin() / (2.0 * PI)
        }
    }

    #[test]
    fn sinact_anchor_points() {
        assert_eq!(sinact(0.0), 0.0);
        assert_eq!(sinact(1.0), 1.0);
        assert_eq!(sinact(0.5), 0.5);
        let expected = 0.25 - 1.0 / (2.0 * PI);
        assert!((sinact(0.25) - expected).abs() < 1e-15);
        assert!((sinact(0.25) - 0.0908451).abs() < 1e-7);
    }

    #[test]
    fn rewritten_form_matches_reference() {
        for i in 0..=1000 {
            let x = -0.2 + 1.4 * i as f64 / 1000.0;
            assert!((sinact(x) - sinact_reference(x)).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn other_kinds() {
        assert_eq!(activate(ActivationKind::Sigmoid, 0.0), 0.5);
        assert_eq!(activate(ActivationKind::Step, 0.5), 1.0);
        assert_eq!(activate(ActivationKind::Step, 0.4999), 0.0);
        assert_eq!(activate_deriv(ActivationKind::Sigmoid, 0.0).unwrap(), 0.25);
        assert!(matches!(
            activate_deriv(ActivationKind::Step, 0.3),
            Err(Error::NonDifferentiable)
        ));
    }

    #[test]
    fn derivative_values() {
        assert_eq!(sinact_deriv(0.5), 2.0);
        assert_eq!(sinact_deriv(0.0), 0.0);
        assert_eq!(sinact_deriv(1.0), 0.0);
        assert_eq!(sinact_deriv(-0.3), 0.0);
        assert_eq!(sinact_deriv(1.3), 0.0);
    }

    #[test]
    fn saturates_exactly() {
        assert_eq!(sinact(-0.1), 0.0);
        assert_eq!(sinact(1.1), 1.0);
        assert_eq!(sinact(-1e9), 0.0);
        assert_eq!(sinact(1e9), 1.0);
    }

    #[test]
    fn symmetry_and_monotonicity_on_grid() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=10_000 {
            let x = -0.5 + 2.0 * i as f64 / 10_000.0;
            assert!((sinact(x) + sinact(1.0 - x) - 1.0).abs() <= 1e-12);
            assert!(sinact(x) >= prev);
            assert!(sinact_deriv(x) >= 0.0);
            prev = sinact(x);
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for kind in [ActivationKind::Sigmoid, ActivationKind::SinAct] {
            for _ in 0..1000 {
                let x: f64 = match kind {
                    ActivationKind::SinAct => rng.gen_range(h..1.0 - h),
                    _ => rng.gen_range(-6.0..6.0),
                };
                let fd = (activate(kind, x + h) - activate(kind, x - h)) / (2.0 * h);
                let d = activate_deriv(kind, x).unwrap();
                assert!((d - fd).abs() <= 1e-6, "{kind} at {x}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn steeper_than_sigmoid() {
        let sig_max = (0..=2000)
            .map(|i| activate_deriv(ActivationKind::Sigmoid, -10.0 + i as f64 * 0.01).unwrap())
            .fold(0.0, f64::max);
        assert_eq!(sig_max, 0.25);
        assert!(sinact_deriv(0.5) > sig_max);
    }

    #[test]
    fn parses_names() {
        assert_eq!(
            "SinAct".parse::<ActivationKind>().unwrap(),
            ActivationKind::SinAct
        );
        assert_eq!(
            "sigmoid".parse::<ActivationKind>().unwrap(),
            ActivationKind::Sigmoid
        );
        assert!("relu".parse::<ActivationKind>().is_err());
    }
}
