//! Discretization grids and smoothing kernels.
//!
//! All estimators in this crate work on curves observed at `L` equispaced
//! time points and represent calibration adjustments through a density
//! discretized at `J` equispaced source points. Both grids live on `(0, 1]`
//! and use right endpoints, so Riemann sums carry weights `1/J` and `1/L`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Right-endpoint discretization grids on `(0, 1]`.
///
/// The source grid `s_j = j/J` (`j = 1..J`) supports the adjustment density;
/// the observation grid `t_l = l/L` (`l = 1..L`) carries the curves.
///
/// ```
/// let grids = funcal::grid::Grids::new(2, 3).unwrap();
/// assert_eq!(grids.s(), &[0.5, 1.0]);
/// assert_eq!(grids.t(), &[1.0 / 3.0, 2.0 / 3.0, 1.0]);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    s: Vec<f64>,
    t: Vec<f64>,
}

impl Grids {
    /// Builds the pair of grids with `j_count` source and `l_count`
    /// observation points. Zero counts are rejected.
    pub fn new(j_count: usize, l_count: usize) -> Result<Self> {
        if j_count == 0 || l_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid sizes must be positive, got J = {j_count}, L = {l_count}"
            )));
        }
        let s = (1..=j_count).map(|j| j as f64 / j_count as f64).collect();
        let t = (1..=l_count).map(|l| l as f64 / l_count as f64).collect();
        Ok(Self { s, t })
    }

    /// Source grid points `s_1 < … < s_J`.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// Observation grid points `t_1 < … < t_L`.
    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// Number of source points `J`.
    pub fn num_s(&self) -> usize {
        self.s.len()
    }

    /// Number of observation points `L`.
    pub fn num_t(&self) -> usize {
        self.t.len()
    }
}

/// Smoothing kernel linking the source and observation grids.
///
/// Additional kernel families can be added as new variants; every variant
/// must be symmetric, strictly positive, and equal to one on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `K(s, t) = exp(-(t - s)^2 / (2 sigma2))`.
    Gaussian { sigma2: f64 },
}

impl Kernel {
    /// Gaussian kernel with bandwidth parameter `sigma2 > 0`.
    pub fn gaussian(sigma2: f64) -> Result<Self> {
        if !sigma2.is_finite() || sigma2 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth sigma2 must be a positive finite number, got {sigma2}"
            )));
        }
        Ok(Kernel::Gaussian { sigma2 })
    }

    /// Evaluates the kernel at a pair of points.
    ///
    /// ```
    /// let k = funcal::grid::Kernel::gaussian(0.5).unwrap();
    /// assert_eq!(k.eval(0.3, 0.3), 1.0);
    /// assert!((k.eval(0.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
    /// ```
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match *self {
            Kernel::Gaussian { sigma2 } => {
                let d = t - s;
                (-d * d / (2.0 * sigma2)).exp()
            }
        }
    }
}

/// Kernel evaluated on the grid product, `values[[j, l]] = K(s_j, t_l)`.
///
/// Precomputing the `J x L` table keeps the inner loops of the calibration
/// solvers free of transcendental calls.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: Array2<f64>,
}

impl KernelMatrix {
    /// Tabulates `kernel` over the grid product.
    pub fn new(kernel: &Kernel, grids: &Grids) -> Self {
        let values = Array2::from_shape_fn((grids.num_s(), grids.num_t()), |(j, l)| {
            kernel.eval(grids.s()[j], grids.t()[l])
        });
        Self { values }
    }

    /// The tabulated values, shape `J x L`.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Wraps an explicit table. Used by tests that need rescaled kernels.
    #[cfg(test)]
    pub(crate) fn from_values(values: Array2<f64>) -> Self {
        Self { values }
    }
}
