//! Robust kernels in whitened units.
//!
//! `rho` is scaled so that `rho(r) ≈ r²` near zero, which keeps it
//! comparable with the Gaussian loss; the IRLS weight then satisfies
//! `rho'(r) = 2·w(r)·r` and `w(0) = 1`. L1 is the exception: its weight is
//! the unnormalized `1/max(r, ε)`, so `w(0) = 1/ε`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Residual norm below which the L1 weight saturates.
pub const L1_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    None,
    Huber,
    Cauchy,
    GemanMcClure,
    L1,
    /// Scalar form of closed-form dynamic covariance scaling, `w = min(1, c²/r²)`.
    Cdce,
}

impl KernelKind {
    pub fn default_parameter(self) -> f64 {
        match self {
            KernelKind::None => 1.0,
            KernelKind::Huber => 1.345,
            KernelKind::Cauchy => 2.3849,
            KernelKind::GemanMcClure => 1.0,
            KernelKind::L1 => L1_WEIGHT_FLOOR,
            KernelKind::Cdce => 1.0,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::None => "none",
            KernelKind::Huber => "huber",
            KernelKind::Cauchy => "cauchy",
            KernelKind::GemanMcClure => "gm",
            KernelKind::L1 => "l1",
            KernelKind::Cdce => "cdce",
        })
    }
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(KernelKind::None),
            "huber" => Ok(KernelKind::Huber),
            "cauchy" => Ok(KernelKind::Cauchy),
            "gm" | "geman_mcclure" => Ok(KernelKind::GemanMcClure),
            "l1" => Ok(KernelKind::L1),
            "cdce" => Ok(KernelKind::Cdce),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustKernel {
    pub kind: KernelKind,
    /// Kernel width `c`, or the weight floor for L1.
    pub parameter: f64,
}

impl RobustKernel {
    pub fn new(kind: KernelKind, parameter: f64) -> Option<Self> {
        (parameter > 0.0 && parameter.is_finite()).then_some(Self { kind, parameter })
    }

    pub fn with_default(kind: KernelKind) -> Self {
        Self {
            kind,
            parameter: kind.default_parameter(),
        }
    }

    pub fn none() -> Self {
        Self::with_default(KernelKind::None)
    }

    /// IRLS weight for a whitened residual norm `r ≥ 0`.
    pub fn weight(&self, r: f64) -> f64 {
        let c = self.parameter;
        match self.kind {
            KernelKind::None => 1.0,
            KernelKind::Huber => {
                if r <= c {
                    1.0
                } else {
                    c / r
                }
            }
            KernelKind::Cauchy => 1.0 / (1.0 + (r * r) / (c * c)),
            KernelKind::GemanMcClure => {
                let d = c * c + r * r;
                c.powi(4) / (d * d)
            }
            KernelKind::L1 => 1.0 / r.max(c),
            KernelKind::Cdce => {
                if r <= c {
                    1.0
                } else {
                    (c * c) / (r * r)
                }
            }
        }
    }

    /// Robust loss of a whitened residual norm.
    pub fn rho(&self, r: f64) -> f64 {
        let c = self.parameter;
        let r2 = r * r;
        match self.kind {
            KernelKind::None => r2,
            KernelKind::Huber => {
                if r <= c {
                    r2
                } else {
                    2.0 * c * r - c * c
                }
            }
            KernelKind::Cauchy => c * c * (r2 / (c * c)).ln_1p(),
            KernelKind::GemanMcClure => c * c * r2 / (c * c + r2),
            KernelKind::L1 => {
                if r <= c {
                    r2 / c
                } else {
                    2.0 * r - c
                }
            }
            KernelKind::Cdce => {
                if r <= c {
                    r2
                } else {
                    c * c * (1.0 + 2.0 * (r / c).ln())
                }
            }
        }
    }
}
