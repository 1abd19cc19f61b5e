//! Query interface for potentials `V` with `μ ∝ exp(-V)`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;

/// A potential `V: R^d → R`. Implementations must be pure functions of `x`.
pub trait Potential: Sync {
    fn dim(&self) -> usize;

    /// `V(x)`. `x.len()` must equal [`Potential::dim`].
    fn value(&self, x: &[f64]) -> f64;

    /// Writes `∇V(x)` into `out`.
    fn gradient(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingGradient)
    }

    fn has_gradient(&self) -> bool {
        false
    }

    /// The analytic mixture behind this potential, when there is one. Exact
    /// score oracles are only available through this hook.
    fn mixture(&self) -> Option<&GaussianMixture> {
        None
    }
}

/// Snapshot of a query counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTally {
    pub values: u64,
    pub gradients: u64,
}

impl QueryTally {
    pub fn total(&self) -> u64 {
        self.values + self.gradients
    }
}

/// Wraps a potential and counts every value and gradient query.
pub struct Counted<'a> {
    inner: &'a dyn Potential,
    values: AtomicU64,
    gradients: AtomicU64,
}

impl<'a> Counted<'a> {
    pub fn new(inner: &'a dyn Potential) -> Self {
        Self {
            inner,
            values: AtomicU64::new(0),
            gradients: AtomicU64::new(0),
        }
    }

    pub fn tally(&self) -> QueryTally {
        QueryTally {
            values: self.values.load(Ordering::Relaxed),
            gradients: self.gradients.load(Ordering::Relaxed),
        }
    }

    pub fn inner(&self) -> &'a dyn Potential {
        self.inner
    }
}

impl Potential for Counted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.values.fetch_add(1, Ordering::Relaxed);
        self.inner.value(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(x, out)
    }

    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }

    fn mixture(&self) -> Option<&GaussianMixture> {
        self.inner.mixture()
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User-supplied potential built from closures.
pub struct FnPotential {
    dim: usize,
    value: Box<ValueFn>,
    gradient: Option<Box<GradFn>>,
}

impl FnPotential {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: Box::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    /// `V(x) = ‖x‖²/2`, the standard Gaussian potential.
    pub fn standard_gaussian(dim: usize) -> Self {
        Self::new(dim, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>())
            .with_gradient(|x, out| out.copy_from_slice(x))
    }
}

impl fmt::Debug for FnPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPotential")
            .field("dim", &self.dim)
            .field("has_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl Potential for FnPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.gradient {
            Some(g) => {
                g(x, out);
                Ok(())
            }
            None => Err(Error::MissingGradient),
        }
    }

    fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}
