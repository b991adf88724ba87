//! Terminal functionals `g` (or `eta`) and BSDE drivers `f(s, x, y, z)`.

use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};

/// Terminal data as a function of the terminal state. Mode indices count from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalFunctional {
    Constant {
        kappa: f64,
    },
    /// `scale * <x, e_k>`
    Mode {
        k: usize,
        scale: f64,
    },
    /// `<x, e_k>^2`; locally Lipschitz only.
    SquareMode {
        k: usize,
    },
    SinMode {
        k: usize,
    },
    CosMode {
        k: usize,
    },
    /// `sin(w * sum_k x_k)`
    SinOfSum {
        w: f64,
    },
    Shifted {
        base: Box<TerminalFunctional>,
        shift: f64,
    },
}

impl TerminalFunctional {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TerminalFunctional::Constant { kappa } => *kappa,
            TerminalFunctional::Mode { k, scale } => scale * x[k - 1],
            TerminalFunctional::SquareMode { k } => x[k - 1] * x[k - 1],
            TerminalFunctional::SinMode { k } => x[k - 1].sin(),
            TerminalFunctional::CosMode { k } => x[k - 1].cos(),
            TerminalFunctional::SinOfSum { w } => (w * x.iter().sum::<f64>()).sin(),
            TerminalFunctional::Shifted { base, shift } => base.eval(x) + shift,
        }
    }

    pub fn shifted(self, shift: f64) -> Self {
        TerminalFunctional::Shifted {
            base: Box::new(self),
            shift,
        }
    }

    /// Declared Lipschitz constant in `H` on a `dim`-mode truncation;
    /// `None` for functionals that are only locally Lipschitz.
    pub fn lipschitz(&self, dim: usize) -> Option<f64> {
        match self {
            TerminalFunctional::Constant { .. } => Some(0.0),
            TerminalFunctional::Mode { scale, .. } => Some(scale.abs()),
            TerminalFunctional::SquareMode { .. } => None,
            TerminalFunctional::SinMode { .. } | TerminalFunctional::CosMode { .. } => Some(1.0),
            TerminalFunctional::SinOfSum { w } => Some(w.abs() * (dim as f64).sqrt()),
            TerminalFunctional::Shifted { base, .. } => base.lipschitz(dim),
        }
    }

    /// Largest mode index the functional reads.
    pub fn max_mode(&self) -> usize {
        match self {
            TerminalFunctional::Mode { k, .. }
            | TerminalFunctional::SquareMode { k }
            | TerminalFunctional::SinMode { k }
            | TerminalFunctional::CosMode { k } => *k,
            TerminalFunctional::Shifted { base, .. } => base.max_mode(),
            _ => 1,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let k = self.max_mode();
        if k == 0 || k > dim {
            return Err(FkError::InvalidInput {
                field: "terminal",
                reason: format!("mode {k} outside 1..={dim}"),
            });
        }
        Ok(())
    }
}

/// Coefficients of the linear driver `-(a y + b_lin + <c, z>)`, with
/// `a(x) = a0 + a1 cos(x_1)`, `b_lin(x) = b0 + b1 sin(x_1)` and constant `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDriver {
    pub a0: f64,
    #[serde(default)]
    pub a1: f64,
    pub b0: f64,
    #[serde(default)]
    pub b1: f64,
    pub c: Vec<f64>,
}

impl LinearDriver {
    pub fn constant(a: f64, b_lin: f64, c: Vec<f64>) -> Self {
        Self {
            a0: a,
            a1: 0.0,
            b0: b_lin,
            b1: 0.0,
            c,
        }
    }

    pub fn a(&self, _t: f64, x: &[f64]) -> f64 {
        if self.a1 == 0.0 {
            self.a0
        } else {
            self.a0 + self.a1 * x[0].cos()
        }
    }

    pub fn b_lin(&self, _t: f64, x: &[f64]) -> f64 {
        if self.b1 == 0.0 {
            self.b0
        } else {
            self.b0 + self.b1 * x[0].sin()
        }
    }

    pub fn c(&self, _t: f64, _x: &[f64]) -> &[f64] {
        &self.c
    }

    pub fn c_norm_sq(&self) -> f64 {
        self.c.iter().map(|v| v * v).sum()
    }

    /// `a y + b_lin + <c, z>`: the generator with the sign used in the linear BSDE.
    pub fn rate(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        let cz: f64 = self.c.iter().zip(z).map(|(c, z)| c * z).sum();
        self.a(t, x) * y + self.b_lin(t, x) + cz
    }

    pub fn bound_a(&self) -> f64 {
        self.a0.abs() + self.a1.abs()
    }
}

/// The nonlinearity `f(s, x, y, z)` of `dY = f ds + <Z, dW>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverSpec {
    Zero,
    /// `f = rho * y`
    LinearY {
        rho: f64,
    },
    /// `f = scale * sin(y)`
    SinY {
        scale: f64,
    },
    /// `f = -(a y + b_lin + <c, z>)`
    Linear(LinearDriver),
    /// `f = base + shift`
    Shifted {
        base: Box<DriverSpec>,
        shift: f64,
    },
}

impl DriverSpec {
    pub fn eval(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        match self {
            DriverSpec::Zero => 0.0,
            DriverSpec::LinearY { rho } => rho * y,
            DriverSpec::SinY { scale } => scale * y.sin(),
            DriverSpec::Linear(l) => -l.rate(t, x, y, z),
            DriverSpec::Shifted { base, shift } => base.eval(t, x, y, z) + shift,
        }
    }

    /// The driver at fixed `(t, x)`, for repeated evaluation in `(y, z)`.
    pub fn at<'a>(&'a self, t: f64, x: &'a [f64]) -> LocalDriver<'a> {
        let linear = match self {
            DriverSpec::Linear(l) => Some((l.a(t, x), l.b_lin(t, x), l.c.as_slice())),
            _ => None,
        };
        LocalDriver {
            spec: self,
            t,
            x,
            linear,
        }
    }

    pub fn shifted(self, shift: f64) -> Self {
        DriverSpec::Shifted {
            base: Box::new(self),
            shift,
        }
    }

    /// Declared Lipschitz constant in `(x, y, z)`; for the linear driver the
    /// `x`-part is taken on `|y| <= 1`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            DriverSpec::Zero => 0.0,
            DriverSpec::LinearY { rho } => rho.abs(),
            DriverSpec::SinY { scale } => scale.abs(),
            DriverSpec::Linear(l) => {
                let c = l.c_norm_sq().sqrt();
                l.bound_a().max(c).max(l.a1.abs() + l.b1.abs())
            }
            DriverSpec::Shifted { base, .. } => base.lipschitz(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DriverSpec::Zero)
    }

    /// Whether `f` is nondecreasing in `y` (needed only for uniqueness).
    pub fn monotone_in_y(&self) -> bool {
        match self {
            DriverSpec::Zero => true,
            DriverSpec::LinearY { rho } => *rho >= 0.0,
            DriverSpec::SinY { scale } => *scale == 0.0,
            DriverSpec::Linear(l) => -l.a0 - l.a1.abs() >= 0.0,
            DriverSpec::Shifted { base, .. } => base.monotone_in_y(),
        }
    }

    /// Whether `f` reads `z` at all.
    pub fn uses_z(&self) -> bool {
        match self {
            DriverSpec::Linear(l) => l.c.iter().any(|c| *c != 0.0),
            DriverSpec::Shifted { base, .. } => base.uses_z(),
            _ => false,
        }
    }

    pub fn validate(&self, d_xi: usize) -> Result<()> {
        match self {
            DriverSpec::Linear(l) if l.c.len() != d_xi => Err(FkError::DimensionMismatch {
                context: "linear driver c",
                expected: d_xi,
                got: l.c.len(),
            }),
            DriverSpec::Shifted { base, .. } => base.validate(d_xi),
            _ => Ok(()),
        }
    }
}

/// A driver with its state-dependent coefficients evaluated once.
pub struct LocalDriver<'a> {
    spec: &'a DriverSpec,
    t: f64,
    x: &'a [f64],
    linear: Option<(f64, f64, &'a [f64])>,
}

impl LocalDriver<'_> {
    pub fn eval(&self, y: f64, z: &[f64]) -> f64 {
        match self.linear {
            Some((a, b, c)) => {
                let cz: f64 = c.iter().zip(z).map(|(c, z)| c * z).sum();
                -(a * y + b + cz)
            }
            None => self.spec.eval(self.t, self.x, y, z),
        }
    }
}
