//! Target distributions expressed through their potential energy.
//!
//! A target is an unnormalized density `pi(x) = exp(-U(x))`; samplers and
//! diagnostics only ever see the potential `U` and its gradient. Two
//! families are built in: diagonal Gaussians and the exponential-family
//! potentials `U(x) = alpha * (kappa^2 + |x|^2)^(beta/2)`, whose tail
//! exponent `beta` controls how hard the tails push a chain back inward.

use thiserror::Error;

/// Error raised by potential and gradient evaluations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("input has dimension {got}, target expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains a non-finite coordinate")]
    NonFiniteInput,
    #[error("gradient is undefined at the origin for kappa = 0 and beta < 1")]
    SingularPoint,
    #[error("invalid target parameter: {0}")]
    InvalidParameter(String),
}

/// Tail description of a target, when known in closed form.
///
/// For `U(x) = alpha * (kappa^2 + |x|^2)^(beta/2)` this is the pair
/// `(alpha, beta)`. Diagnostics use it to cross-check empirical tail
/// scans against the analytic classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMeta {
    pub alpha: f64,
    pub beta: f64,
}

/// A differentiable potential on `R^d`.
pub trait Target: Send + Sync {
    /// Dimension of the state space.
    fn dim(&self) -> usize;

    /// Potential `U(x)`.
    fn potential(&self, x: &[f64]) -> Result<f64, TargetError>;

    /// Gradient of the potential, written into `out`.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), TargetError>;

    /// Gradient of the potential as a fresh vector.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, TargetError> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out)?;
        Ok(out)
    }

    /// Tail exponents, absent for black-box targets.
    fn tail_meta(&self) -> Option<TailMeta> {
        None
    }
}

fn check_input(dim: usize, x: &[f64]) -> Result<(), TargetError> {
    if x.len() != dim {
        return Err(TargetError::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TargetError::NonFiniteInput);
    }
    Ok(())
}

/// Gaussian with diagonal precision matrix: `U(x) = sum_i lambda_i x_i^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    precision: Vec<f64>,
}

impl GaussianTarget {
    /// Builds the target from per-coordinate precisions, all strictly positive.
    pub fn new(precision: Vec<f64>) -> Result<Self, TargetError> {
        if precision.is_empty() {
            return Err(TargetError::InvalidParameter(
                "precision vector must be non-empty".into(),
            ));
        }
        if precision.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(TargetError::InvalidParameter(
                "precision entries must be finite and positive".into(),
            ));
        }
        Ok(Self { precision })
    }

    /// Standard Gaussian in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self::new(vec![1.0; dim]).expect("unit precisions are valid")
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.precision.len()
    }

    fn potential(&self, x: &[f64]) -> Result<f64, TargetError> {
        check_input(self.dim(), x)?;
        Ok(0.5
            * x.iter()
                .zip(&self.precision)
                .map(|(xi, li)| li * xi * xi)
                .sum::<f64>())
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), TargetError> {
        check_input(self.dim(), x)?;
        check_output_len(self.dim(), out)?;
        for ((o, xi), li) in out.iter_mut().zip(x).zip(&self.precision) {
            *o = li * xi;
        }
        Ok(())
    }

    fn tail_meta(&self) -> Option<TailMeta> {
        // Isotropic case only: U(x) = (lambda/2) |x|^2 matches alpha = lambda/2, beta = 2.
        let first = self.precision[0];
        if self.precision.iter().all(|l| *l == first) {
            Some(TailMeta {
                alpha: first / 2.0,
                beta: 2.0,
            })
        } else {
            None
        }
    }
}

/// Exponential-family potential `U(x) = alpha * (kappa^2 + |x|^2)^(beta/2)`.
///
/// `beta` is the tail exponent: values below 1 give heavy tails with a
/// vanishing gradient, values in `[1, 2)` a bounded inward pull, 2 the
/// Gaussian boundary, and values above 2 tails so light that discrete
/// integrator steps overshoot.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFamilyTarget {
    alpha: f64,
    beta: f64,
    kappa: f64,
    dim: usize,
}

impl ExpFamilyTarget {
    pub fn new(alpha: f64, beta: f64, kappa: f64, dim: usize) -> Result<Self, TargetError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(TargetError::InvalidParameter(
                "alpha must be finite and positive".into(),
            ));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(TargetError::InvalidParameter(
                "beta must be finite and positive".into(),
            ));
        }
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(TargetError::InvalidParameter(
                "kappa must be finite and non-negative".into(),
            ));
        }
        if dim == 0 {
            return Err(TargetError::InvalidParameter(
                "dimension must be at least 1".into(),
            ));
        }
        Ok(Self {
            alpha,
            beta,
            kappa,
            dim,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn radius2(&self, x: &[f64]) -> f64 {
        self.kappa * self.kappa + x.iter().map(|v| v * v).sum::<f64>()
    }
}

impl Target for ExpFamilyTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, x: &[f64]) -> Result<f64, TargetError> {
        check_input(self.dim, x)?;
        Ok(self.alpha * self.radius2(x).powf(self.beta / 2.0))
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), TargetError> {
        check_input(self.dim, x)?;
        check_output_len(self.dim, out)?;
        let r2 = self.radius2(x);
        if r2 == 0.0 {
            if self.beta < 1.0 {
                return Err(TargetError::SingularPoint);
            }
            // beta >= 1 at the origin with kappa = 0: the gradient norm
            // alpha * beta * |x|^(beta - 1) tends to 0, except for beta = 1
            // where 0 is the symmetric subgradient choice.
            out.fill(0.0);
            return Ok(());
        }
        let scale = self.alpha * self.beta * r2.powf(self.beta / 2.0 - 1.0);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = scale * xi;
        }
        Ok(())
    }

    fn tail_meta(&self) -> Option<TailMeta> {
        Some(TailMeta {
            alpha: self.alpha,
            beta: self.beta,
        })
    }
}

/// Black-box target built from potential and gradient closures.
pub struct FnTarget<U, G>
where
    U: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    dim: usize,
    potential: U,
    gradient: G,
}

impl<U, G> FnTarget<U, G>
where
    U: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, potential: U, gradient: G) -> Self {
        Self {
            dim,
            potential,
            gradient,
        }
    }
}

impl<U, G> Target for FnTarget<U, G>
where
    U: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, x: &[f64]) -> Result<f64, TargetError> {
        check_input(self.dim, x)?;
        Ok((self.potential)(x))
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), TargetError> {
        check_input(self.dim, x)?;
        check_output_len(self.dim, out)?;
        (self.gradient)(x, out);
        Ok(())
    }
}

fn check_output_len(dim: usize, out: &[f64]) -> Result<(), TargetError> {
    if out.len() != dim {
        return Err(TargetError::DimensionMismatch {
            expected: dim,
            got: out.len(),
        });
    }
    Ok(())
}

/// Step used by [`grad_fd_check`] when the caller has no preference.
pub fn default_fd_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-5 * norm.max(1.0)
}

/// Largest deviation between the analytic gradient and a central
/// finite-difference estimate with step `h`, over all coordinates.
pub fn grad_fd_check<T: Target + ?Sized>(target: &T, x: &[f64], h: f64) -> Result<f64, TargetError> {
    if !h.is_finite() || h <= 0.0 {
        return Err(TargetError::InvalidParameter(
            "finite-difference step must be positive".into(),
        ));
    }
    let grad = target.gradient(x)?;
    let mut shifted = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        shifted[i] = x[i] + h;
        let up = target.potential(&shifted)?;
        shifted[i] = x[i] - h;
        let down = target.potential(&shifted)?;
        shifted[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_potential_and_gradient() {
        let t = GaussianTarget::new(vec![1.0, 4.0]).unwrap();
        let x = [1.0, 1.0];
        assert_eq!(t.potential(&x).unwrap(), 2.5);
        assert_eq!(t.gradient(&x).unwrap(), vec![1.0, 4.0]);
    }

    #[test]
    fn expfam_matches_closed_form() {
        let t = ExpFamilyTarget::new(1.0, 4.0, 0.0, 1).unwrap();
        assert_eq!(t.potential(&[2.0]).unwrap(), 16.0);
        assert_eq!(t.gradient(&[2.0]).unwrap(), vec![32.0]);

        let smooth = ExpFamilyTarget::new(0.5, 2.0, 1.0, 1).unwrap();
        assert_eq!(smooth.potential(&[0.0]).unwrap(), 0.5);
        assert_eq!(smooth.gradient(&[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn expfam_beta_two_kappa_zero_is_gaussian() {
        let e = ExpFamilyTarget::new(1.5, 2.0, 0.0, 3).unwrap();
        let g = GaussianTarget::new(vec![3.0, 3.0, 3.0]).unwrap();
        let x = [0.3, -1.2, 2.0];
        let ue = e.potential(&x).unwrap();
        let ug = g.potential(&x).unwrap();
        assert!((ue - ug).abs() <= 1e-12 * ug.abs());
        let ge = e.gradient(&x).unwrap();
        let gg = g.gradient(&x).unwrap();
        for (a, b) in ge.iter().zip(&gg) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let t = GaussianTarget::standard(2);
        assert_eq!(
            t.potential(&[1.0]),
            Err(TargetError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let t = GaussianTarget::standard(1);
        assert_eq!(t.potential(&[f64::NAN]), Err(TargetError::NonFiniteInput));
        assert_eq!(
            t.gradient(&[f64::INFINITY]),
            Err(TargetError::NonFiniteInput)
        );
    }

    #[test]
    fn heavy_tail_origin_is_singular() {
        let t = ExpFamilyTarget::new(1.0, 0.5, 0.0, 2).unwrap();
        assert_eq!(t.gradient(&[0.0, 0.0]), Err(TargetError::SingularPoint));
        // The potential itself stays finite at the excluded point.
        assert_eq!(t.potential(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn origin_gradient_vanishes_when_defined() {
        for beta in [1.0, 1.5, 2.0, 4.0] {
            let t = ExpFamilyTarget::new(1.0, beta, 0.0, 2).unwrap();
            assert_eq!(t.gradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(GaussianTarget::new(vec![]).is_err());
        assert!(GaussianTarget::new(vec![0.0]).is_err());
        assert!(GaussianTarget::new(vec![-1.0]).is_err());
        assert!(ExpFamilyTarget::new(0.0, 2.0, 1.0, 1).is_err());
        assert!(ExpFamilyTarget::new(1.0, -2.0, 1.0, 1).is_err());
        assert!(ExpFamilyTarget::new(1.0, 2.0, -1.0, 1).is_err());
        assert!(ExpFamilyTarget::new(1.0, 2.0, 1.0, 0).is_err());
    }

    #[test]
    fn fd_check_validates_step() {
        let t = GaussianTarget::standard(1);
        assert!(grad_fd_check(&t, &[1.0], 0.0).is_err());
        assert!(grad_fd_check(&t, &[1.0], f64::NAN).is_err());
    }

    #[test]
    fn fn_target_wraps_closures() {
        let t = FnTarget::new(
            1,
            |x: &[f64]| x[0].powi(4),
            |x: &[f64], out: &mut [f64]| out[0] = 4.0 * x[0].powi(3),
        );
        assert_eq!(t.potential(&[2.0]).unwrap(), 16.0);
        assert_eq!(t.gradient(&[2.0]).unwrap(), vec![32.0]);
        assert!(t.tail_meta().is_none());
    }
}
