//! Evans–Hudson generators ℒ_{αβ} of the Heisenberg flow j_t(X) = U_t†XU_t.
//!
//! Three constructions are provided: directly from the Itô coefficients, as a
//! commutator sandwiched between F-matrix blocks, and the explicit
//! single-channel formulas in terms of (W, L, H). They agree on their common
//! domain; the tests and the acceptance suite check that numerically.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::{commutator, inverse_with_rcond, spectral_norm, Mat, OperatorMatrix};
use crate::unitarity::{hp_from_hamiltonian_n1, HpParams};

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSource {
    /// ℒ_{αβ}(X) = XG_{αβ} + G_{βα}†X + Σ_i G_{iα}†XG_{iβ}.
    Direct(OperatorMatrix),
    /// ℒ_{αβ}(X) = −i Σ_{μν} F_{μα}†[X, E_{μν}]F_{νβ}.
    Sandwich { e: OperatorMatrix, f: OperatorMatrix },
    /// Single channel, (W, L, H) from the closed form at damping κ.
    ExplicitN1 { kappa: C64, params: HpParams },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EhGenerator {
    source: GeneratorSource,
    channels: usize,
    dim: usize,
}

impl EhGenerator {
    pub fn direct(g: &OperatorMatrix) -> Self {
        EhGenerator { channels: g.channels(), dim: g.dim(), source: GeneratorSource::Direct(g.clone()) }
    }

    pub fn sandwich(e: &OperatorMatrix, f: &OperatorMatrix) -> Result<Self> {
        if e.channels() != f.channels() || e.dim() != f.dim() {
            return Err(Error::DimensionMismatch("E and F shapes differ".into()));
        }
        let r = e.hermiticity_residual();
        if r > 1e-10 * (1.0 + e.op_norm()) {
            return Err(Error::NotHermitian { what: "E", residual: r });
        }
        Ok(EhGenerator {
            channels: e.channels(),
            dim: e.dim(),
            source: GeneratorSource::Sandwich { e: e.clone(), f: f.clone() },
        })
    }

    pub fn explicit_n1(e: &OperatorMatrix, kappa: C64) -> Result<Self> {
        let params = hp_from_hamiltonian_n1(e, kappa)?;
        Ok(EhGenerator { channels: 1, dim: e.dim(), source: GeneratorSource::ExplicitN1 { kappa, params } })
    }

    pub fn source(&self) -> &GeneratorSource {
        &self.source
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, a: usize, b: usize, x: &Mat) -> Result<Mat> {
        if a > self.channels || b > self.channels {
            return Err(Error::DimensionMismatch(format!("index ({a},{b}) exceeds N={}", self.channels)));
        }
        if x.shape() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch(format!(
                "observable is {:?}, expected {}x{}",
                x.shape(),
                self.dim,
                self.dim
            )));
        }
        Ok(match &self.source {
            GeneratorSource::Direct(g) => direct_unchecked(g, a, b, x),
            GeneratorSource::Sandwich { e, f } => sandwich_unchecked(e, f, a, b, x),
            GeneratorSource::ExplicitN1 { params, .. } => explicit_unchecked(params, a, b, x),
        })
    }

    /// Dense d²×d² matrix of ℒ_{αβ} acting on column-stacked vec(X).
    pub fn superoperator(&self, a: usize, b: usize) -> Result<Mat> {
        let d = self.dim;
        let mut out = Mat::zeros(d * d, d * d);
        for col in 0..d {
            for row in 0..d {
                let mut basis = Mat::zeros(d, d);
                basis[(row, col)] = C64::new(1.0, 0.0);
                let image = self.apply(a, b, &basis)?;
                let k = col * d + row;
                for (idx, z) in image.iter().enumerate() {
                    out[(idx, k)] = *z;
                }
            }
        }
        Ok(out)
    }
}

fn direct_unchecked(g: &OperatorMatrix, a: usize, b: usize, x: &Mat) -> Mat {
    let mut out = x * g.block(a, b) + g.block(b, a).adjoint() * x;
    for i in 1..=g.channels() {
        out += g.block(i, a).adjoint() * x * g.block(i, b);
    }
    out
}

fn sandwich_unchecked(e: &OperatorMatrix, f: &OperatorMatrix, a: usize, b: usize, x: &Mat) -> Mat {
    let d = e.dim();
    let mut out = Mat::zeros(d, d);
    for mu in 0..=e.channels() {
        let left = f.block(mu, a).adjoint();
        for nu in 0..=e.channels() {
            out += &left * commutator(x, &e.block(mu, nu)) * f.block(nu, b);
        }
    }
    out * C64::new(0.0, -1.0)
}

fn explicit_unchecked(p: &HpParams, a: usize, b: usize, x: &Mat) -> Mat {
    let (w, l, h) = (&p.w, &p.l, &p.h);
    let half = C64::new(0.5, 0.0);
    match (a, b) {
        (1, 1) => w.adjoint() * x * w - x,
        (1, 0) => w.adjoint() * commutator(x, l),
        (0, 1) => -(commutator(x, &l.adjoint()) * w),
        _ => {
            (commutator(&l.adjoint(), x) * l) * half + (l.adjoint() * commutator(x, l)) * half
                - commutator(x, h) * C64::new(0.0, 1.0)
        }
    }
}

pub fn eh_direct(g: &OperatorMatrix, a: usize, b: usize, x: &Mat) -> Result<Mat> {
    EhGenerator::direct(g).apply(a, b, x)
}

pub fn eh_sandwich(e: &OperatorMatrix, f: &OperatorMatrix, a: usize, b: usize, x: &Mat) -> Result<Mat> {
    EhGenerator::sandwich(e, f)?.apply(a, b, x)
}

pub fn eh_explicit_n1(e: &OperatorMatrix, kappa: C64, a: usize, b: usize, x: &Mat) -> Result<Mat> {
    EhGenerator::explicit_n1(e, kappa)?.apply(a, b, x)
}

/// ‖ℒ_{αβ}(XY) − ℒ_{αβ}(X)Y − Xℒ_{αβ}(Y) − Σ_i ℒ_{αi}(X)ℒ_{iβ}(Y)‖.
pub fn dissipation_residual(gen: &EhGenerator, a: usize, b: usize, x: &Mat, y: &Mat) -> Result<f64> {
    let mut r = gen.apply(a, b, &(x * y))? - gen.apply(a, b, x)? * y - x * gen.apply(a, b, y)?;
    for i in 1..=gen.channels() {
        r -= gen.apply(a, i, x)? * gen.apply(i, b, y)?;
    }
    Ok(spectral_norm(&r))
}

/// ‖[X, A] + iκA[X, E₁₁]A‖ with A = (1 + iκE₁₁)⁻¹.
pub fn commutator_lemma_residual(x: &Mat, e11: &Mat, kappa: C64) -> Result<f64> {
    let d = e11.nrows();
    let ik = C64::new(0.0, 1.0) * kappa;
    let (a, _) = inverse_with_rcond(&(Mat::identity(d, d) + e11 * ik), "1 + i kappa E11")?;
    let r = commutator(x, &a) + (&a * commutator(x, e11) * &a) * ik;
    Ok(spectral_norm(&r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversion::{hamiltonian_strat, strat_to_ito};
    use crate::ensemble::{random_hermitian, random_hermitian_family, random_matrix, random_unitary, rng, standard_ensemble};
    use crate::gauge::GaugeSpec;
    use crate::operator::c;
    use crate::unitarity::ito_from_hp;

    fn max_diff(a: &Mat, b: &Mat) -> f64 {
        spectral_norm(&(a - b))
    }

    #[test]
    fn identity_is_preserved() {
        let mut r = rng(41);
        let p = HpParams::new(2, 2, random_unitary(&mut r, 4), random_matrix(&mut r, 4, 2), random_hermitian(&mut r, 2))
            .unwrap();
        let g = ito_from_hp(&p).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!(spectral_norm(&eh_direct(&g, a, b, &Mat::identity(2, 2)).unwrap()) < 1e-13);
                let x = random_matrix(&mut r, 2, 2);
                assert!(spectral_norm(&eh_direct(&OperatorMatrix::zeros(2, 2), a, b, &x).unwrap()) == 0.0);
            }
        }
    }

    #[test]
    fn diffusion_vacuum_generator() {
        // W = 1, L = R, H: ℒ₀₀(X) = −i[X,H] + ½[R†,X]R + ½R†[X,R]
        let mut r = rng(42);
        let rr = random_matrix(&mut r, 3, 3);
        let h = random_hermitian(&mut r, 3);
        let p = HpParams::new(1, 3, Mat::identity(3, 3), rr.clone(), h.clone()).unwrap();
        let g = ito_from_hp(&p).unwrap();
        let x = random_matrix(&mut r, 3, 3);
        let expected = commutator(&x, &h) * c(0.0, -1.0)
            + (commutator(&rr.adjoint(), &x) * &rr) * c(0.5, 0.0)
            + (rr.adjoint() * commutator(&x, &rr)) * c(0.5, 0.0);
        assert!(max_diff(&eh_direct(&g, 0, 0, &x).unwrap(), &expected) < 1e-13);
    }

    #[test]
    fn three_forms_agree() {
        let mut r = rng(43);
        for m in standard_ensemble(44, 30) {
            let cr = strat_to_ito(&hamiltonian_strat(&m.e), &m.gauge).unwrap();
            let d = m.e.dim();
            let direct = EhGenerator::direct(&cr.g);
            let sandwich = EhGenerator::sandwich(&m.e, &cr.f).unwrap();
            let explicit = if m.e.channels() == 1 {
                Some(EhGenerator::explicit_n1(&m.e, m.gauge.channel_v()[(0, 0)]).unwrap())
            } else {
                None
            };
            let x = random_matrix(&mut r, d, d);
            for a in 0..=m.e.channels() {
                for b in 0..=m.e.channels() {
                    let l1 = direct.apply(a, b, &x).unwrap();
                    let l2 = sandwich.apply(a, b, &x).unwrap();
                    let scale = 1.0 + spectral_norm(&l1);
                    assert!(max_diff(&l1, &l2) < 1e-11 * scale);
                    if let Some(ex) = &explicit {
                        assert!(max_diff(&l1, &ex.apply(a, b, &x).unwrap()) < 1e-11 * scale);
                    }
                    let adj = direct.apply(b, a, &x.adjoint()).unwrap();
                    assert!(max_diff(&l1.adjoint(), &adj) < 1e-11 * scale);
                }
            }
        }
    }

    #[test]
    fn commuting_observable_is_annihilated_by_sandwich() {
        let mut r = rng(45);
        let e = random_hermitian_family(&mut r, 2, 1, &GaugeSpec::symmetric(2), 0.3);
        let cr = strat_to_ito(&hamiltonian_strat(&e), &GaugeSpec::symmetric(2)).unwrap();
        let x = Mat::from_element(1, 1, c(2.5, 0.0));
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(spectral_norm(&eh_sandwich(&e, &cr.f, a, b, &x).unwrap()), 0.0);
            }
        }
    }

    #[test]
    fn pure_emission_single_channel() {
        // E₁₁ = 0, κ = ½: ℒ₁₀(X) = −i[X, E₁₀]
        let mut r = rng(46);
        let mut e = random_hermitian_family(&mut r, 1, 2, &GaugeSpec::symmetric(1), 0.3);
        e.set_block(1, 1, &Mat::zeros(2, 2)).unwrap();
        let x = random_matrix(&mut r, 2, 2);
        let cr = strat_to_ito(&hamiltonian_strat(&e), &GaugeSpec::symmetric(1)).unwrap();
        let expected = commutator(&x, &e.block(1, 0)) * c(0.0, -1.0);
        assert!(max_diff(&eh_sandwich(&e, &cr.f, 1, 0, &x).unwrap(), &expected) < 1e-14);
        assert!(max_diff(&eh_explicit_n1(&e, c(0.5, 0.0), 1, 0, &x).unwrap(), &expected) < 1e-14);
        assert_eq!(spectral_norm(&eh_explicit_n1(&OperatorMatrix::zeros(1, 2), c(0.5, 0.0), 0, 0, &x).unwrap()), 0.0);
    }

    #[test]
    fn bounded_position_coupling() {
        // E₀₁ = E₁₀ = R Hermitian, E₁₁ = 0, E₀₀ = H, κ = ½: ℒ₀₀(X) = −i[X,H] − ½[[X,R],R]
        let mut r = rng(47);
        let rr = random_hermitian(&mut r, 3);
        let h = random_hermitian(&mut r, 3);
        let e = OperatorMatrix::from_parts(1, 3, &h, &rr, &rr, &Mat::zeros(3, 3));
        let x = random_matrix(&mut r, 3, 3);
        let expected = commutator(&x, &h) * c(0.0, -1.0) - commutator(&commutator(&x, &rr), &rr) * c(0.5, 0.0);
        assert!(max_diff(&eh_explicit_n1(&e, c(0.5, 0.0), 0, 0, &x).unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn dissipation_identity() {
        let mut r = rng(48);
        assert_eq!(
            dissipation_residual(&EhGenerator::direct(&OperatorMatrix::zeros(1, 2)), 0, 0, &Mat::identity(2, 2), &Mat::identity(2, 2))
                .unwrap(),
            0.0
        );
        for m in standard_ensemble(49, 20) {
            let cr = strat_to_ito(&hamiltonian_strat(&m.e), &m.gauge).unwrap();
            let gen = EhGenerator::direct(&cr.g);
            let d = m.e.dim();
            let (x, y) = (random_matrix(&mut r, d, d), random_matrix(&mut r, d, d));
            for a in 0..=m.e.channels() {
                for b in 0..=m.e.channels() {
                    assert!(dissipation_residual(&gen, a, b, &x, &y).unwrap() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn commutator_lemma() {
        let mut r = rng(50);
        for kappa in [c(0.5, 0.0), c(0.5, 0.5)] {
            let e11 = random_hermitian(&mut r, 3) * c(0.6, 0.0);
            let x = random_matrix(&mut r, 3, 3);
            assert!(commutator_lemma_residual(&x, &e11, kappa).unwrap() < 1e-13);
        }
    }

    #[test]
    fn superoperator_matches_apply() {
        let mut r = rng(51);
        let p = HpParams::new(1, 2, random_unitary(&mut r, 2), random_matrix(&mut r, 2, 2), random_hermitian(&mut r, 2))
            .unwrap();
        let gen = EhGenerator::direct(&ito_from_hp(&p).unwrap());
        let x = random_matrix(&mut r, 2, 2);
        let s = gen.superoperator(1, 0).unwrap();
        let vx = nalgebra::DVector::from_iterator(4, x.iter().cloned());
        let image = gen.apply(1, 0, &x).unwrap();
        let vi = nalgebra::DVector::from_iterator(4, image.iter().cloned());
        assert!((s * vx - vi).norm() < 1e-14);
    }
}
