//! Signal containers shared by the channel, diffusion, and codec layers.
//!
//! A [`RealSignal`] of length 2k stacks k in-phase values followed by k
//! quadrature values; complex symbol i is `(x[i], x[i+k])`. Average power per
//! complex symbol is `|x|^2 / k`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("real signal length must be even and nonzero, got {0}")]
    BadRealLength(usize),
    #[error("complex component lengths differ: re={re}, im={im}")]
    ComponentMismatch { re: usize, im: usize },
    #[error("complex signal must hold at least one symbol")]
    Empty,
}

/// Length-2k real vector in the receiver's stacked I/Q coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSignal {
    values: Vec<f64>,
}

impl RealSignal {
    pub fn new(values: Vec<f64>) -> Result<Self, SignalError> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(SignalError::BadRealLength(values.len()));
        }
        Ok(Self { values })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            values: vec![0.0; 2 * k.max(1)],
        }
    }

    /// Number of complex symbols.
    pub fn k(&self) -> usize {
        self.values.len() / 2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction forbids empty signals
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Average power per complex symbol, `|x|^2 / k`.
    pub fn complex_power(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v * v).sum();
        sum / self.k() as f64
    }
}

/// k complex symbols stored as split re/im planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexSignal {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self, SignalError> {
        if re.len() != im.len() {
            return Err(SignalError::ComponentMismatch {
                re: re.len(),
                im: im.len(),
            });
        }
        if re.is_empty() {
            return Err(SignalError::Empty);
        }
        Ok(Self { re, im })
    }

    pub fn k(&self) -> usize {
        self.re.len()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }
}

/// Pair the first half of `x` with the second half as (re, im) planes.
pub fn complex_from_real(x: &RealSignal) -> ComplexSignal {
    let k = x.k();
    ComplexSignal {
        re: x.values()[..k].to_vec(),
        im: x.values()[k..].to_vec(),
    }
}

/// Inverse of [`complex_from_real`].
pub fn real_from_complex(y: &ComplexSignal) -> RealSignal {
    let mut values = Vec::with_capacity(2 * y.k());
    values.extend_from_slice(&y.re);
    values.extend_from_slice(&y.im);
    RealSignal { values }
}
