//! Unitarity conditions on Itô coefficients and the (W, L, H) parametrization.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::{hermiticity_residual, inverse_with_rcond, spectral_norm, Mat, OperatorMatrix, ScalarMatrix};

/// Scattering matrix W (Nd × Nd, block (i, j) = W_ij), coupling column L
/// (Nd × d, block i = L_i) and Hamiltonian H (d × d).
#[derive(Debug, Clone, PartialEq)]
pub struct HpParams {
    pub w: Mat,
    pub l: Mat,
    pub h: Mat,
}

impl HpParams {
    pub fn new(channels: usize, dim: usize, w: Mat, l: Mat, h: Mat) -> Result<Self> {
        let nd = channels * dim;
        if w.shape() != (nd, nd) || l.shape() != (nd, dim) || h.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch(format!(
                "W {:?}, L {:?}, H {:?} for N={channels}, d={dim}",
                w.shape(),
                l.shape(),
                h.shape()
            )));
        }
        Ok(HpParams { w, l, h })
    }

    /// W = 1, L = 0, H = 0.
    pub fn trivial(channels: usize, dim: usize) -> Self {
        let nd = channels * dim;
        HpParams { w: Mat::identity(nd, nd), l: Mat::zeros(nd, dim), h: Mat::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn channels(&self) -> usize {
        self.l.nrows() / self.h.nrows().max(1)
    }

    pub fn l_block(&self, i: usize) -> Mat {
        let d = self.dim();
        self.l.view(((i - 1) * d, 0), (d, d)).into_owned()
    }

    pub fn w_block(&self, i: usize, j: usize) -> Mat {
        let d = self.dim();
        self.w.view(((i - 1) * d, (j - 1) * d), (d, d)).into_owned()
    }

    /// max(‖W†W − 1‖, ‖WW† − 1‖).
    pub fn w_unitarity_residual(&self) -> f64 {
        let n = self.w.nrows();
        let id = Mat::identity(n, n);
        spectral_norm(&(self.w.adjoint() * &self.w - &id)).max(spectral_norm(&(&self.w * self.w.adjoint() - &id)))
    }

    pub fn h_hermiticity_residual(&self) -> f64 {
        hermiticity_residual(&self.h)
    }

    /// W unitary to 1e-10 and H Hermitian to 1e-12 (relative to ‖H‖).
    pub fn check(&self) -> Result<()> {
        let rw = self.w_unitarity_residual();
        if rw > 1e-10 {
            return Err(Error::NotUnitary { what: "W", residual: rw });
        }
        let rh = self.h_hermiticity_residual();
        if rh > 1e-12 * (1.0 + spectral_norm(&self.h)) {
            return Err(Error::NotHermitian { what: "H", residual: rh });
        }
        Ok(())
    }
}

/// G_ij = W_ij − δ_ij, G_i0 = L_i, G_0j = −Σ_k L_k†W_kj, G₀₀ = −½Σ_k L_k†L_k − iH.
pub fn ito_from_hp(p: &HpParams) -> Result<OperatorMatrix> {
    p.check()?;
    let (n, d) = (p.channels(), p.dim());
    let nd = n * d;
    let g00 = (p.l.adjoint() * &p.l) * C64::new(-0.5, 0.0) - &p.h * C64::new(0.0, 1.0);
    let row = -(p.l.adjoint() * &p.w);
    let cc = &p.w - Mat::identity(nd, nd);
    Ok(OperatorMatrix::from_parts(n, d, &g00, &row, &p.l, &cc))
}

/// (‖G + G† + G†PG‖, ‖G + G† + GPG†‖): isometry and co-isometry residuals.
pub fn unitarity_residuals(g: &OperatorMatrix) -> (f64, f64) {
    let p = ScalarMatrix::p(g.channels()).promote(g.dim());
    let gd = g.adjoint();
    let base = g + &gd;
    let iso = &base + &(&(&gd * &p) * g);
    let coiso = &base + &(&(g * &p) * &gd);
    (iso.op_norm(), coiso.op_norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpExtraction {
    pub params: HpParams,
    /// ‖i(G₀₀ + ½L†L) − H‖ before symmetrisation.
    pub anti_hermitian_residue: f64,
}

/// W_ij = G_ij + δ_ij, L_i = G_i0, H = i(G₀₀ + ½L†L) symmetrised. Requires the
/// unitarity residuals to be below 1e-8 (relative to (1 + ‖G‖)²).
pub fn hp_from_ito(g: &OperatorMatrix) -> Result<HpExtraction> {
    let (iso, coiso) = unitarity_residuals(g);
    let scale = (1.0 + g.op_norm()).powi(2);
    let worst = iso.max(coiso);
    if worst > 1e-8 * scale {
        return Err(Error::NotUnitary { what: "Ito coefficients", residual: worst });
    }
    let (n, d) = (g.channels(), g.dim());
    let nd = n * d;
    let w = g.channel_block() + Mat::identity(nd, nd);
    let l = g.vacuum_col();
    let raw = (g.block(0, 0) + (l.adjoint() * &l) * C64::new(0.5, 0.0)) * C64::new(0.0, 1.0);
    let h = (&raw + raw.adjoint()) * C64::new(0.5, 0.0);
    let anti_hermitian_residue = spectral_norm(&(&raw - &h));
    Ok(HpExtraction { params: HpParams { w, l, h }, anti_hermitian_residue })
}

fn check_n1(e: &OperatorMatrix) -> Result<()> {
    if e.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "single-channel formula applied to N={}",
            e.channels()
        )));
    }
    let r = e.hermiticity_residual();
    if r > 1e-12 * (1.0 + e.op_norm()) {
        return Err(Error::NotHermitian { what: "E", residual: r });
    }
    Ok(())
}

/// A = (1 + iκE₁₁)⁻¹.
fn resolvent_n1(e: &OperatorMatrix, kappa: C64) -> Result<Mat> {
    let d = e.dim();
    let m = Mat::identity(d, d) + e.block(1, 1) * (C64::new(0.0, 1.0) * kappa);
    Ok(inverse_with_rcond(&m, "1 + i kappa E11")?.0)
}

/// Closed-form (W, L, H) for a single-channel Hermitian family with damping κ:
/// W = (1 − iκ*E₁₁)A, L = −iAE₁₀, H = E₀₀ + E₀₁ Im{κA} E₁₀ with A = (1 + iκE₁₁)⁻¹.
pub fn hp_from_hamiltonian_n1(e: &OperatorMatrix, kappa: C64) -> Result<HpParams> {
    check_n1(e)?;
    let d = e.dim();
    let i = C64::new(0.0, 1.0);
    let a = resolvent_n1(e, kappa)?;
    let w = (Mat::identity(d, d) - e.block(1, 1) * (i * kappa.conj())) * &a;
    let l = (&a * e.block(1, 0)) * (-i);
    let ka = &a * kappa;
    let im_ka = (&ka - ka.adjoint()) * C64::new(0.0, -0.5);
    let h = e.block(0, 0) + e.block(0, 1) * im_ka * e.block(1, 0);
    HpParams::new(1, d, w, l, h)
}

/// F₁₁ = A, F₁₀ = −iκAE₁₀, F₀₁ = 0, F₀₀ = 1 for a single-channel family.
pub fn f_components_n1(e: &OperatorMatrix, kappa: C64) -> Result<OperatorMatrix> {
    check_n1(e)?;
    let d = e.dim();
    let a = resolvent_n1(e, kappa)?;
    let f10 = (&a * e.block(1, 0)) * (C64::new(0.0, -1.0) * kappa);
    Ok(OperatorMatrix::from_parts(1, d, &Mat::identity(d, d), &Mat::zeros(d, d), &f10, &a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversion::{hamiltonian_strat, strat_to_ito};
    use crate::ensemble::{random_hermitian, random_hermitian_family, random_matrix, random_unitary, rng, standard_ensemble};
    use crate::gauge::{gauge_from_kappa, GaugeSpec};
    use crate::operator::c;

    fn random_hp(seed: u64, n: usize, d: usize) -> HpParams {
        let mut r = rng(seed);
        HpParams::new(n, d, random_unitary(&mut r, n * d), random_matrix(&mut r, n * d, d), random_hermitian(&mut r, d))
            .unwrap()
    }

    fn gauge_for(kappa: C64) -> GaugeSpec {
        gauge_from_kappa(&Mat::from_element(1, 1, kappa)).unwrap()
    }

    #[test]
    fn trivial_params_give_zero() {
        let g = ito_from_hp(&HpParams::trivial(2, 3)).unwrap();
        assert_eq!(g, OperatorMatrix::zeros(2, 3));
        assert_eq!(unitarity_residuals(&g), (0.0, 0.0));
        let back = hp_from_ito(&g).unwrap().params;
        assert_eq!(back, HpParams::trivial(2, 3));
    }

    #[test]
    fn scalar_coupling() {
        let l = c(0.6, -0.8);
        let p = HpParams::new(1, 1, Mat::identity(1, 1), Mat::from_element(1, 1, l), Mat::zeros(1, 1)).unwrap();
        let g = ito_from_hp(&p).unwrap();
        assert!((g.flat()[(0, 0)] - c(-0.5 * l.norm_sqr(), 0.0)).norm() < 1e-16);
        assert_eq!(g.flat()[(1, 0)], l);
        assert_eq!(g.flat()[(0, 1)], -l.conj());
        assert_eq!(g.flat()[(1, 1)], c(0.0, 0.0));
    }

    #[test]
    fn random_params_round_trip() {
        for seed in 0..10 {
            let p = random_hp(seed, 2, 3);
            let g = ito_from_hp(&p).unwrap();
            let (a, b) = unitarity_residuals(&g);
            assert!(a < 1e-10 && b < 1e-10);
            let back = hp_from_ito(&g).unwrap();
            assert!(spectral_norm(&(&back.params.w - &p.w)) < 1e-9);
            assert!(spectral_norm(&(&back.params.l - &p.l)) < 1e-9);
            assert!(spectral_norm(&(&back.params.h - &p.h)) < 1e-9);
            assert!(back.anti_hermitian_residue < 1e-12);
        }
    }

    #[test]
    fn rejects_non_unitary_w() {
        let mut p = HpParams::trivial(1, 2);
        p.w *= c(1.1, 0.0);
        assert!(matches!(ito_from_hp(&p), Err(Error::NotUnitary { .. })));
    }

    #[test]
    fn hermitian_family_as_ito_is_detected() {
        let mut r = rng(31);
        let e = random_hermitian_family(&mut r, 1, 2, &GaugeSpec::symmetric(1), 0.4);
        let (a, b) = unitarity_residuals(&hamiltonian_strat(&e));
        assert!(a > 1e-3 && b > 1e-3);
        assert!(hp_from_ito(&hamiltonian_strat(&e)).is_err());
    }

    #[test]
    fn converted_families_are_unitary() {
        for m in standard_ensemble(32, 30) {
            let g = strat_to_ito(&hamiltonian_strat(&m.e), &m.gauge).unwrap().g;
            let (a, b) = unitarity_residuals(&g);
            let scale = 1.0 + g.op_norm();
            assert!(a < 1e-12 * scale * scale && b < 1e-12 * scale * scale);
            assert!(hp_from_ito(&g).unwrap().params.w_unitarity_residual() < 1e-10);
        }
    }

    #[test]
    fn closed_form_at_zero_scattering() {
        let mut r = rng(33);
        let mut e = random_hermitian_family(&mut r, 1, 2, &GaugeSpec::symmetric(1), 0.3);
        e.set_block(1, 1, &Mat::zeros(2, 2)).unwrap();
        let p = hp_from_hamiltonian_n1(&e, c(0.5, 0.0)).unwrap();
        assert!(spectral_norm(&(&p.w - Mat::identity(2, 2))) < 1e-15);
        assert!(spectral_norm(&(&p.l - e.block(1, 0) * c(0.0, -1.0))) < 1e-15);
        assert!(spectral_norm(&(&p.h - e.block(0, 0))) < 1e-15);
    }

    #[test]
    fn scalar_scattering_phase_is_unimodular() {
        let ev = 1.3;
        let e = OperatorMatrix::from_flat(1, 1, Mat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(ev, 0.0)]))
            .unwrap();
        let p = hp_from_hamiltonian_n1(&e, c(0.5, 0.0)).unwrap();
        let expected = c(1.0, -ev / 2.0) / c(1.0, ev / 2.0);
        assert!((p.w[(0, 0)] - expected).norm() < 1e-15);
        assert!((p.w[(0, 0)].norm() - 1.0).abs() < 1e-15);
        let f = f_components_n1(&e, c(0.5, 0.0)).unwrap();
        assert!((f.flat()[(1, 1)] - c(1.0, 0.0) / c(1.0, ev / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn closed_forms_match_generic_pipeline() {
        let mut r = rng(34);
        for &kappa in &[c(0.5, 0.0), c(0.5, 0.5), c(0.5, -0.3)] {
            let g = gauge_for(kappa);
            for _ in 0..5 {
                let e = random_hermitian_family(&mut r, 1, 2, &g, 0.45);
                let cr = strat_to_ito(&hamiltonian_strat(&e), &g).unwrap();
                let generic = hp_from_ito(&cr.g).unwrap().params;
                let closed = hp_from_hamiltonian_n1(&e, kappa).unwrap();
                assert!(spectral_norm(&(&generic.w - &closed.w)) < 1e-10);
                assert!(spectral_norm(&(&generic.l - &closed.l)) < 1e-10);
                assert!(spectral_norm(&(&generic.h - &closed.h)) < 1e-10);
                let f = f_components_n1(&e, kappa).unwrap();
                assert!((&f - &cr.f).op_norm() < 1e-10);
            }
        }
        let e0 = OperatorMatrix::zeros(1, 2);
        assert_eq!(f_components_n1(&e0, c(0.5, 0.0)).unwrap(), OperatorMatrix::identity(1, 2));
    }
}
