use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Smooth stand-in for the derivative of the spike step function, as a
/// function of `x = V - theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    #[default]
    MultiGaussian,
    FastSigmoid,
    Boxcar,
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

impl SurrogateKind {
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            SurrogateKind::MultiGaussian => {
                // the mixture is symmetric; folding keeps it exactly even
                let x = x.abs();
                1.15 * normal_pdf(x, 0.0, 0.5) - 0.15 * normal_pdf(x, 3.0, 3.0) - 0.15 * normal_pdf(x, -3.0, 3.0)
            }
            SurrogateKind::FastSigmoid => (10.0 * x.abs() + 1.0).powi(-2),
            SurrogateKind::Boxcar => {
                if x.abs() <= 0.5 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::MultiGaussian => "mg",
            SurrogateKind::FastSigmoid => "fastsig",
            SurrogateKind::Boxcar => "boxcar",
        }
    }
}

impl FromStr for SurrogateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mg" | "multi_gaussian" => Ok(SurrogateKind::MultiGaussian),
            "fastsig" | "fast_sigmoid" => Ok(SurrogateKind::FastSigmoid),
            "boxcar" => Ok(SurrogateKind::Boxcar),
            other => Err(format!("unknown surrogate `{other}` (expected mg, fastsig or boxcar)")),
        }
    }
}

/// Evaluates `kind` at `x`.
pub fn surrogate_derivative(x: f64, kind: SurrogateKind) -> f64 {
    kind.derivative(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_reference_points() {
        // 1.15 / (0.5 sqrt(2 pi)) - 2 * 0.15 exp(-1/2) / (3 sqrt(2 pi))
        let want = 1.15 / (0.5 * (2.0 * PI).sqrt()) - 0.3 * (-0.5f64).exp() / (3.0 * (2.0 * PI).sqrt());
        let mg = surrogate_derivative(0.0, SurrogateKind::MultiGaussian);
        assert!((mg - want).abs() < 1e-15);
        assert!((mg - 0.8934).abs() < 1e-4);
        assert_eq!(surrogate_derivative(0.0, SurrogateKind::FastSigmoid), 1.0);
        assert_eq!(surrogate_derivative(0.6, SurrogateKind::Boxcar), 0.0);
        assert_eq!(surrogate_derivative(0.4, SurrogateKind::Boxcar), 0.5);
        assert_eq!(surrogate_derivative(0.5, SurrogateKind::Boxcar), 0.5);
    }

    #[test]
    fn even_functions() {
        for kind in [SurrogateKind::MultiGaussian, SurrogateKind::FastSigmoid, SurrogateKind::Boxcar] {
            for i in 0..200 {
                let x = i as f64 * 0.037;
                assert_eq!(kind.derivative(x), kind.derivative(-x), "{kind:?} at {x}");
            }
        }
    }
}
