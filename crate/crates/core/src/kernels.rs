//! Uncertain initial condition: mean profile and covariance kernels.


use crate::error::ensure;
use crate::Result;

/// Covariance kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// `σ² exp(−λc |x1 − x2|)`
    Exponential,
    /// `σ² exp(−(x1 − x2)²)`
    SquaredExponential,
    /// `σ² (1 − t |x1 − x2|) exp(−|x1 − x2|)`, with `t` stored in `corr_len`.
    Triangular,
    /// `σ² exp(−(x1 + x2)) exp(−|x1 − x2|)`
    UniformlyModulated,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Exponential,
        KernelKind::SquaredExponential,
        KernelKind::Triangular,
        KernelKind::UniformlyModulated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Exponential => "exponential",
            KernelKind::SquaredExponential => "squared_exponential",
            KernelKind::Triangular => "triangular",
            KernelKind::UniformlyModulated => "uniformly_modulated",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl core::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// A covariance kernel with its parameters.
///
/// `corr_len` is the decay rate λc for the exponential kernel and the shape
/// parameter `t` for the triangular kernel; the other two kinds ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sigma2: f64,
    pub corr_len: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, sigma2: f64, corr_len: f64) -> Result<Self> {
        let spec = Self {
            kind,
            sigma2,
            corr_len,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn exponential(sigma2: f64, corr_len: f64) -> Self {
        Self {
            kind: KernelKind::Exponential,
            sigma2,
            corr_len,
        }
    }

    /// Triangular kernel with unit prefactor and shape parameter
    /// `1 / (x_max − x_min)`, which keeps it nonnegative on the domain.
    pub fn triangular_for_domain(x_min: f64, x_max: f64) -> Self {
        Self {
            kind: KernelKind::Triangular,
            sigma2: 1.0,
            corr_len: 1.0 / (x_max - x_min),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sigma2 > 0.0 && self.sigma2.is_finite(),
            "kernel sigma2 must be positive, got {}",
            self.sigma2
        );
        ensure!(
            self.corr_len > 0.0 && self.corr_len.is_finite(),
            "kernel corr_len must be positive, got {}",
            self.corr_len
        );
        Ok(())
    }

    /// Covariance `C(x1, x2)`.
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let d = (x1 - x2).abs();
        match self.kind {
            KernelKind::Exponential => self.sigma2 * libm::exp(-self.corr_len * d),
            KernelKind::SquaredExponential => self.sigma2 * libm::exp(-d * d),
            KernelKind::Triangular => self.sigma2 * (1.0 - self.corr_len * d) * libm::exp(-d),
            KernelKind::UniformlyModulated => self.sigma2 * libm::exp(-(x1 + x2)) * libm::exp(-d),
        }
    }
}

/// How the fluctuation scale `s` enters the initial field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScalingMode {
    /// `u(x,0) = ū(x) + s·(G − Ḡ)`: only the zero-mean fluctuation is scaled.
    #[default]
    Fluctuation,
    /// `u(x,0) = s·G`: mean and fluctuation are both scaled.
    Full,
}

impl ScalingMode {
    pub fn name(self) -> &'static str {
        match self {
            ScalingMode::Fluctuation => "fluctuation",
            ScalingMode::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fluctuation" => Some(ScalingMode::Fluctuation),
            "full" => Some(ScalingMode::Full),
            _ => None,
        }
    }
}

/// Gaussian-process initial condition `G` with mean `u_b − atan(x − x0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub u_b: f64,
    pub x0: f64,
    pub s: f64,
    pub kernel: KernelSpec,
    pub scaling: ScalingMode,
}

impl InitialCondition {
    pub fn validate(&self, x_min: f64, x_max: f64) -> Result<()> {
        ensure!(self.s >= 0.0 && self.s.is_finite(), "ic.s must be >= 0, got {}", self.s);
        ensure!(
            (x_min..=x_max).contains(&self.x0),
            "ic.x0 = {} lies outside the domain [{x_min}, {x_max}]",
            self.x0
        );
        self.kernel.validate()
    }

    /// Mean of the Gaussian process, `u_b − atan(x − x0)`.
    pub fn process_mean(&self, x: f64) -> f64 {
        self.u_b - libm::atan(x - self.x0)
    }

    /// Mean of the initial field after scaling.
    pub fn mean_initial(&self, x: f64) -> f64 {
        match self.scaling {
            ScalingMode::Fluctuation => self.process_mean(x),
            ScalingMode::Full => self.s * self.process_mean(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::FRAC_PI_4;

    fn ic(u_b: f64, x0: f64) -> InitialCondition {
        InitialCondition {
            u_b,
            x0,
            s: 0.1,
            kernel: KernelSpec::exponential(0.25, 1.0),
            scaling: ScalingMode::Fluctuation,
        }
    }

    #[test]
    fn exponential_kernel_values() {
        let k = KernelSpec::exponential(0.25, 1.0);
        assert_eq!(k.eval(0.3, 0.3), 0.25);
        assert_abs_diff_eq!(k.eval(0.0, 1.0), 0.25 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k.eval(0.0, 1.0), 0.09197, epsilon = 1e-5);
    }

    #[test]
    fn squared_exponential_diagonal_is_variance() {
        let k = KernelSpec::new(KernelKind::SquaredExponential, 0.1, 1.0).unwrap();
        assert_eq!(k.eval(0.0, 0.0), 0.1);
    }

    #[test]
    fn triangular_default_shape_is_nonnegative() {
        let k = KernelSpec::triangular_for_domain(-1.0, 1.0);
        assert_eq!(k.corr_len, 0.5);
        assert!(k.eval(-1.0, 1.0) >= 0.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(KernelSpec::new(KernelKind::Exponential, 0.0, 1.0).is_err());
        assert!(KernelSpec::new(KernelKind::Exponential, 0.1, -1.0).is_err());
        let mut c = ic(0.0, 0.0);
        c.x0 = 3.0;
        assert!(c.validate(-1.0, 1.0).is_err());
    }

    #[test]
    fn mean_profile() {
        let c = ic(0.0, 0.0);
        assert_eq!(c.mean_initial(0.0), 0.0);
        assert_abs_diff_eq!(c.mean_initial(1.0), -FRAC_PI_4, epsilon = 1e-15);
        assert_abs_diff_eq!(c.mean_initial(-1.0), FRAC_PI_4, epsilon = 1e-15);
        let full = InitialCondition {
            scaling: ScalingMode::Full,
            ..c
        };
        assert_abs_diff_eq!(full.mean_initial(1.0), -0.1 * FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in KernelKind::ALL {
            assert_eq!(KernelKind::from_name(k.name()), Some(k));
        }
    }

    proptest::proptest! {
        #[test]
        fn kernels_symmetric_with_nonnegative_diagonal(
            x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, kind in 0usize..4
        ) {
            let k = KernelSpec { kind: KernelKind::ALL[kind], sigma2: 0.3, corr_len: 0.5 };
            proptest::prop_assert_eq!(k.eval(x1, x2), k.eval(x2, x1));
            proptest::prop_assert!(k.eval(x1, x1) >= 0.0);
        }

        #[test]
        fn mean_strictly_decreasing(a in -1.0f64..1.0, d in 1e-6f64..0.5) {
            let c = ic(0.3, 0.1);
            proptest::prop_assert!(c.mean_initial(a + d) < c.mean_initial(a));
        }
    }
}
