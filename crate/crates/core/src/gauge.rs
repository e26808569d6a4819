//! Gauges V = ½P + iZ, colored-noise correlation families and their damping
//! constants κ.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::{hermiticity_residual, spectral_norm, Mat, ScalarMatrix};
use crate::quad::adaptive_gk;

/// Tolerance on Z − Z† accepted by [`GaugeSpec::new`].
pub const GAUGE_HERMITICITY_TOL: f64 = 1e-12;

/// A constant Hermitian N×N gauge matrix Z.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeSpec {
    z: Mat,
}

impl GaugeSpec {
    pub fn new(z: Mat) -> Result<Self> {
        if z.nrows() != z.ncols() || z.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "gauge must be a non-empty square matrix, got {}x{}",
                z.nrows(),
                z.ncols()
            )));
        }
        let residual = hermiticity_residual(&z);
        if residual > GAUGE_HERMITICITY_TOL * (1.0 + spectral_norm(&z)) {
            return Err(Error::NotHermitian { what: "gauge Z", residual });
        }
        Ok(GaugeSpec { z })
    }

    /// Z = 0, i.e. V = ½P.
    pub fn symmetric(channels: usize) -> Self {
        GaugeSpec { z: Mat::zeros(channels, channels) }
    }

    pub fn channels(&self) -> usize {
        self.z.nrows()
    }

    pub fn z(&self) -> &Mat {
        &self.z
    }

    /// The channel block 𝖵 = ½ + i𝖹.
    pub fn channel_v(&self) -> Mat {
        let n = self.channels();
        Mat::identity(n, n) * C64::new(0.5, 0.0) + &self.z * C64::new(0.0, 1.0)
    }

    /// The full (N+1)×(N+1) matrix V.
    pub fn v(&self) -> ScalarMatrix {
        ScalarMatrix::from_channel_block(&self.channel_v()).expect("square")
    }
}

/// V = ½P + iZ.
pub fn build_v(g: &GaugeSpec) -> ScalarMatrix {
    g.v()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// C = δ_ij (1/2λ) e^{-|τ|/λ}.
    Ou,
    /// C = δ_ij ((1+ω²)/2λ) e^{-|τ|/λ} e^{iωτ/λ}.
    OuModulated,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Ou => "ou",
            FamilyKind::OuModulated => "ou-modulated",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "ou" => Some(FamilyKind::Ou),
            "ou-modulated" => Some(FamilyKind::OuModulated),
            _ => None,
        }
    }
}

/// Channel-diagonal stationary correlation family C_ij(τ, λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationFamily {
    pub kind: FamilyKind,
    pub omega: f64,
}

impl CorrelationFamily {
    pub fn ou() -> Self {
        CorrelationFamily { kind: FamilyKind::Ou, omega: 0.0 }
    }

    pub fn ou_modulated(omega: f64) -> Self {
        CorrelationFamily { kind: FamilyKind::OuModulated, omega }
    }

    /// Diagonal entry C_ii(τ, λ); off-diagonal entries vanish.
    pub fn diagonal(&self, tau: f64, lambda: f64) -> C64 {
        match self.kind {
            FamilyKind::Ou => C64::new((-tau.abs() / lambda).exp() / (2.0 * lambda), 0.0),
            FamilyKind::OuModulated => {
                let w = self.omega;
                let amp = (1.0 + w * w) / (2.0 * lambda) * (-tau.abs() / lambda).exp();
                C64::from_polar(amp, w * tau / lambda)
            }
        }
    }

    /// Largest |C_ii(τ, λ)| over τ, attained at τ = 0.
    pub fn peak(&self, lambda: f64) -> f64 {
        self.diagonal(0.0, lambda).norm()
    }

    /// Closed-form κ = ∫₀^∞ C_ii; independent of λ for both families.
    pub fn kappa_exact(&self) -> C64 {
        match self.kind {
            FamilyKind::Ou => C64::new(0.5, 0.0),
            FamilyKind::OuModulated => C64::new(0.5, 0.5 * self.omega),
        }
    }
}

pub fn correlation(fam: &CorrelationFamily, i: usize, j: usize, tau: f64, lambda: f64) -> Result<C64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("correlation time must be positive, got {lambda}")));
    }
    if i != j {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(fam.diagonal(tau, lambda))
}

/// One-sided integral ∫₀^∞ C_ii(τ, λ) dτ for a single λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSample {
    pub lambda: f64,
    pub value: C64,
    /// Quadrature error estimate on [0, 40λ].
    pub quad_error: f64,
    /// Bound on ∫_{40λ}^∞ |C|.
    pub tail_bound: f64,
}

/// Damping constant of a family: samples on a λ-grid and the extrapolated limit.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaLimit {
    /// κ as an N×N matrix (diagonal for the supported families).
    pub kappa: Mat,
    pub samples: Vec<KappaSample>,
}

pub fn kappa_sample(fam: &CorrelationFamily, lambda: f64) -> Result<KappaSample> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("correlation time must be positive, got {lambda}")));
    }
    let upper = 40.0 * lambda;
    let est = adaptive_gk(|s| fam.diagonal(s, lambda), 0.0, upper, 1e-12, 2000)?;
    let tail_bound = fam.peak(lambda) * lambda * (-40.0f64).exp();
    Ok(KappaSample { lambda, value: est.value, quad_error: est.error, tail_bound })
}

/// κ for `channels` channels, from quadrature at λ, λ/2, λ/4 and Richardson
/// extrapolation (first order in λ) to λ → 0.
pub fn kappa_limit(fam: &CorrelationFamily, channels: usize, lambda: f64) -> Result<KappaLimit> {
    let samples = [1.0, 0.5, 0.25]
        .iter()
        .map(|s| kappa_sample(fam, lambda * s))
        .collect::<Result<Vec<_>>>()?;
    let k1 = 2.0 * samples[1].value - samples[0].value;
    let k2 = 2.0 * samples[2].value - samples[1].value;
    let kappa = 2.0 * k2 - k1;
    let kappa = Mat::identity(channels, channels) * kappa;
    Ok(KappaLimit { kappa, samples })
}

/// Z from κ = ½ + iZ; requires κ + κ† = 1 within 1e-8.
pub fn gauge_from_kappa(kappa: &Mat) -> Result<GaugeSpec> {
    let n = kappa.nrows();
    if n == 0 || kappa.ncols() != n {
        return Err(Error::DimensionMismatch("κ must be a non-empty square matrix".into()));
    }
    let residual = spectral_norm(&(kappa + kappa.adjoint() - Mat::identity(n, n)));
    if residual > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "κ + κ† differs from the identity by {residual:.3e}"
        )));
    }
    let half = Mat::identity(n, n) * C64::new(0.5, 0.0);
    let z = (kappa - half) * C64::new(0.0, -1.0);
    let z = (&z + z.adjoint()) * C64::new(0.5, 0.0);
    Ok(GaugeSpec { z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{random_gauge, rng};

    #[test]
    fn build_v_examples() {
        let v = build_v(&GaugeSpec::symmetric(1));
        assert_eq!(v.get(1, 1), C64::new(0.5, 0.0));
        assert_eq!(v.get(0, 0), C64::new(0.0, 0.0));
        let g = GaugeSpec::new(Mat::from_element(1, 1, C64::new(0.25, 0.0))).unwrap();
        assert_eq!(build_v(&g).get(1, 1), C64::new(0.5, 0.25));
    }

    #[test]
    fn gauge_identities() {
        let mut r = rng(11);
        let g = random_gauge(&mut r, 3, 0.7);
        let v = g.v();
        let p = ScalarMatrix::p(3);
        assert!(spectral_norm(&(v.entries() + v.adjoint().entries() - p.entries())) < 1e-14);
        assert_eq!(v.matmul(&p).unwrap(), v);
        assert_eq!(p.matmul(&v).unwrap(), v);
        let cv = g.channel_v();
        let vvd = &cv * cv.adjoint();
        let vdv = cv.adjoint() * &cv;
        let expected = Mat::identity(3, 3) * C64::new(0.25, 0.0) + g.z() * g.z();
        assert!(spectral_norm(&(&vvd - &expected)) < 1e-14);
        assert!(spectral_norm(&(&vdv - &expected)) < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian_gauge() {
        let z = Mat::from_element(1, 1, C64::new(0.0, 0.3));
        assert!(matches!(GaugeSpec::new(z), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn correlation_values() {
        let ou = CorrelationFamily::ou();
        assert_eq!(correlation(&ou, 1, 1, 0.0, 0.5).unwrap(), C64::new(1.0, 0.0));
        assert_eq!(correlation(&ou, 1, 2, 0.0, 0.5).unwrap(), C64::new(0.0, 0.0));
        assert!(correlation(&ou, 1, 1, 0.0, 0.0).is_err());
        let m = CorrelationFamily::ou_modulated(1.3);
        for &tau in &[0.0, 0.1, 0.7, 2.0] {
            let a = m.diagonal(tau, 0.3);
            let b = m.diagonal(-tau, 0.3).conj();
            assert!((a - b).norm() < 1e-14 * a.norm().max(1.0));
        }
    }

    #[test]
    fn full_line_normalisation() {
        for fam in [CorrelationFamily::ou(), CorrelationFamily::ou_modulated(1.0)] {
            let k = kappa_sample(&fam, 0.2).unwrap();
            // ∫_{-∞}^{∞} C = κ + κ* by Hermitian symmetry
            assert!((k.value + k.value.conj() - C64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn kappa_matches_closed_forms() {
        let ou = kappa_limit(&CorrelationFamily::ou(), 1, 0.3).unwrap();
        assert!((ou.kappa[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-10);
        let fam = CorrelationFamily::ou_modulated(1.0);
        for &lam in &[0.4, 0.1, 0.01] {
            let s = kappa_sample(&fam, lam).unwrap();
            assert!((s.value - C64::new(0.5, 0.5)).norm() < 1e-10, "λ={lam}");
        }
        let lim = kappa_limit(&fam, 2, 0.2).unwrap();
        let k = &lim.kappa;
        assert!(spectral_norm(&(k + k.adjoint() - Mat::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn gauge_from_kappa_examples() {
        let half = Mat::identity(2, 2) * C64::new(0.5, 0.0);
        assert_eq!(gauge_from_kappa(&half).unwrap(), GaugeSpec::symmetric(2));
        let w = 0.8;
        let k = Mat::from_element(1, 1, C64::new(0.5, 0.5 * w));
        let g = gauge_from_kappa(&k).unwrap();
        assert!((g.z()[(0, 0)] - C64::new(w / 2.0, 0.0)).norm() < 1e-15);
        assert!((g.v().get(1, 1) - k[(0, 0)]).norm() < 1e-15);
        assert!(gauge_from_kappa(&Mat::from_element(1, 1, C64::new(0.7, 0.0))).is_err());
    }
}
