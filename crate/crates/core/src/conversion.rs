//! Itô ↔ Stratonovich conversion of coefficient matrices under a gauge V.
//!
//! The Itô coefficients G and the Stratonovich coefficients G₀ are related by
//! G = G₀ + G₀VG. Every inverse is taken on the Nd × Nd channel block, since
//! V = PVP confines the nontrivial part of (1 − VG₀P)⁻¹ to the channels.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::gauge::GaugeSpec;
use crate::operator::{hermiticity_residual, inverse_with_rcond, kron_identity, spectral_norm, Mat, OperatorMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// Reciprocal condition number of the inverted channel matrix.
    pub rcond: f64,
    /// ‖𝖵𝖦₀‖ on the channel block (‖𝖵𝖤‖ for Hamiltonian inputs).
    pub contraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionResult {
    pub g: OperatorMatrix,
    pub g0: OperatorMatrix,
    pub t: OperatorMatrix,
    pub f: OperatorMatrix,
    pub gauge: GaugeSpec,
    pub diagnostics: Diagnostics,
}

fn check_gauge(x: &OperatorMatrix, gauge: &GaugeSpec) -> Result<()> {
    if x.channels() != gauge.channels() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have N={} but gauge has N={}",
            x.channels(),
            gauge.channels()
        )));
    }
    Ok(())
}

fn embed_channel(channels: usize, dim: usize, cc: &Mat) -> OperatorMatrix {
    let zero_d = Mat::zeros(dim, dim);
    OperatorMatrix::from_parts(
        channels,
        dim,
        &zero_d,
        &Mat::zeros(dim, channels * dim),
        &Mat::zeros(channels * dim, dim),
        cc,
    )
}

/// G = G₀ + G₀(1 − PVG₀P)⁻¹VG₀.
pub fn strat_to_ito(g0: &OperatorMatrix, gauge: &GaugeSpec) -> Result<ConversionResult> {
    check_gauge(g0, gauge)?;
    let (n, d) = (g0.channels(), g0.dim());
    let vc = kron_identity(&gauge.channel_v(), d);
    let vg0 = &vc * g0.channel_block();
    let contraction = spectral_norm(&vg0);
    let m = Mat::identity(n * d, n * d) - vg0;
    let (minv, rcond) = inverse_with_rcond(&m, "1 - PVG0P")?;
    let tc = minv * &vc;
    let g_flat = g0.flat() + g0.channel_columns() * &tc * g0.channel_rows();
    let g = OperatorMatrix::from_flat(n, d, g_flat)?;
    let t = embed_channel(n, d, &tc);
    let f = &OperatorMatrix::identity(n, d) + &(&gauge.v().promote(d) * &g);
    Ok(ConversionResult {
        g,
        g0: g0.clone(),
        t,
        f,
        gauge: gauge.clone(),
        diagnostics: Diagnostics { rcond, contraction },
    })
}

/// G₀ = G − G(1 + PVGP)⁻¹VG.
pub fn ito_to_strat(g: &OperatorMatrix, gauge: &GaugeSpec) -> Result<ConversionResult> {
    check_gauge(g, gauge)?;
    let (n, d) = (g.channels(), g.dim());
    let vc = kron_identity(&gauge.channel_v(), d);
    let m = Mat::identity(n * d, n * d) + &vc * g.channel_block();
    let (minv, rcond) = inverse_with_rcond(&m, "1 + PVGP")?;
    let g0_flat = g.flat() - g.channel_columns() * &minv * &vc * g.channel_rows();
    let g0 = OperatorMatrix::from_flat(n, d, g0_flat)?;
    let contraction = spectral_norm(&(&vc * g0.channel_block()));
    let v = gauge.v().promote(d);
    let t = &v + &(&(&v * g) * &v);
    let f = &OperatorMatrix::identity(n, d) + &(&v * g);
    Ok(ConversionResult {
        g: g.clone(),
        g0,
        t,
        f,
        gauge: gauge.clone(),
        diagnostics: Diagnostics { rcond, contraction },
    })
}

/// T = (1 − VG₀P)⁻¹V.
pub fn t_matrix(g0: &OperatorMatrix, gauge: &GaugeSpec) -> Result<OperatorMatrix> {
    Ok(strat_to_ito(g0, gauge)?.t)
}

/// F = 1 + VG.
pub fn f_matrix(cr: &ConversionResult) -> OperatorMatrix {
    cr.f.clone()
}

/// Stratonovich coefficients under gauge b describing the same Itô G as
/// (G₀ₐ, gauge a); computed by pivoting through the Itô form.
pub fn change_gauge(g0_a: &OperatorMatrix, g_a: &GaugeSpec, g_b: &GaugeSpec) -> Result<ConversionResult> {
    let ito = strat_to_ito(g0_a, g_a)?;
    ito_to_strat(&ito.g, g_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeumannSum {
    /// Σ_{n=0}^{M} G₀(VG₀)ⁿ.
    pub sum: OperatorMatrix,
    pub order: usize,
    /// r = ‖PVG₀P‖.
    pub r: f64,
    /// ‖G₀‖ r^{M+1}/(1 − r).
    pub stated_bound: f64,
    /// ‖G₀‖ ‖VG₀‖ r^M/(1 − r), using (VG₀)ⁿ = (PVG₀P)ⁿ⁻¹VG₀.
    pub tail_bound: f64,
}

pub fn neumann_sum(g0: &OperatorMatrix, gauge: &GaugeSpec, order: usize) -> Result<NeumannSum> {
    check_gauge(g0, gauge)?;
    let d = g0.dim();
    let v = gauge.v().promote(d);
    let vg0 = &v * g0;
    let r = spectral_norm(&(kron_identity(&gauge.channel_v(), d) * g0.channel_block()));
    if r >= 1.0 {
        return Err(Error::ContractionViolated { norm: r });
    }
    let mut term = g0.clone();
    let mut sum = g0.clone();
    for _ in 0..order {
        term = &term * &vg0;
        sum = &sum + &term;
    }
    let n0 = g0.op_norm();
    let stated_bound = n0 * r.powi(order as i32 + 1) / (1.0 - r);
    let tail_bound = n0 * vg0.op_norm() * r.powi(order as i32) / (1.0 - r);
    Ok(NeumannSum { sum, order, r, stated_bound, tail_bound })
}

/// Relative residuals of the conversion identities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentityResiduals {
    /// G = G₀ + G₀VG
    pub self_consistency: f64,
    /// T = V + VGV
    pub t_definition: f64,
    /// (1 − VG₀P)T = V
    pub t_resolvent: f64,
    /// G₀T = GV
    pub g0_t: f64,
    /// TG₀ = VG
    pub t_g0: f64,
    /// G = G₀ + GVG₀
    pub g_left: f64,
    /// G = G₀ + G₀TG₀
    pub g_via_t: f64,
    /// F = 1 + TG₀ and G = G₀F
    pub f_forms: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        [self.self_consistency, self.t_definition, self.t_resolvent, self.g0_t, self.t_g0, self.g_left, self.g_via_t, self.f_forms]
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Maximum over the self-consistency relation and the five T-matrix identities.
    pub fn max_core(&self) -> f64 {
        [self.self_consistency, self.t_resolvent, self.g0_t, self.t_g0, self.g_left, self.g_via_t]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn identity_residuals(cr: &ConversionResult) -> IdentityResiduals {
    let (n, d) = (cr.g.channels(), cr.g.dim());
    let v = cr.gauge.v().promote(d);
    let p = crate::operator::ScalarMatrix::p(n).promote(d);
    let one = OperatorMatrix::identity(n, d);
    let (g, g0, t) = (&cr.g, &cr.g0, &cr.t);
    let ng = 1.0 + g.op_norm();
    let ng0 = 1.0 + g0.op_norm();
    let nt = 1.0 + t.op_norm();
    let nv = 1.0 + v.op_norm();
    let res = |a: OperatorMatrix, b: OperatorMatrix, scale: f64| (&a - &b).op_norm() / scale;

    let self_consistency = res(g.clone(), g0 + &(&(g0 * &v) * g), ng * ng0);
    let t_definition = res(t.clone(), &v + &(&(&v * g) * &v), nv * nv * ng);
    let lhs_t = &(&one - &(&(&v * g0) * &p)) * t;
    let t_resolvent = res(lhs_t, v.clone(), nv * ng0 * nt);
    let g0_t = res(g0 * t, g * &v, ng0 * nt + ng * nv);
    let t_g0 = res(t * g0, &v * g, ng0 * nt + ng * nv);
    let g_left = res(g.clone(), g0 + &(&(g * &v) * g0), ng * ng0 * nv);
    let g_via_t = res(g.clone(), g0 + &(&(g0 * t) * g0), ng0 * ng0 * nt);
    let f_alt = &one + &(t * g0);
    let f_forms = res(cr.f.clone(), f_alt, nt * ng0).max(res(g.clone(), g0 * &cr.f, ng0 * (1.0 + cr.f.op_norm())));
    IdentityResiduals { self_consistency, t_definition, t_resolvent, g0_t, t_g0, g_left, g_via_t, f_forms }
}

/// Residuals of the optical-theorem identities on the channel block for a
/// Hamiltonian input G₀ = −iE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalReport {
    /// 1 + ‖𝖳‖ + ‖𝖥‖²; residuals below are absolute.
    pub scale: f64,
    /// ‖𝖳 + 𝖳† − 𝖥𝖥†‖
    pub t_sum_minus_ffdag: f64,
    /// ‖𝖥𝖥† − 𝖥†𝖥‖
    pub ffdag_minus_fdagf: f64,
    /// smallest eigenvalue of (𝖳 + 𝖳†)/2
    pub min_eig_re_t: f64,
    /// ‖Im 𝖳 + 𝖳𝖤𝖳†‖
    pub im_t_plus_tet: f64,
    /// ‖Im 𝖳 − 𝖥𝖹𝖥† + 𝖳𝖤𝖳†‖, valid in every gauge.
    pub im_t_general: f64,
    /// ‖𝖳 + 𝖳† − 𝖥̃†𝖥̃‖ with 𝖥̃ = (1 + i𝖤𝖵)⁻¹, valid in every gauge.
    pub t_sum_minus_ftilde: f64,
    /// ‖G₀ + G₀†‖; zero for a Hamiltonian input.
    pub anti_hermiticity: f64,
}

pub fn optical_check(cr: &ConversionResult) -> OpticalReport {
    let d = cr.g.dim();
    let nd = cr.g.channels() * d;
    let i = C64::new(0.0, 1.0);
    let tc = cr.t.channel_block();
    let fc = cr.f.channel_block();
    let ec = cr.g0.channel_block() * i;
    let zc = kron_identity(cr.gauge.z(), d);
    let vc = kron_identity(&cr.gauge.channel_v(), d);
    let tsum = &tc + tc.adjoint();
    let ffd = &fc * fc.adjoint();
    let fdf = fc.adjoint() * &fc;
    let re_t = &tsum * C64::new(0.5, 0.0);
    let min_eig = if nd == 0 {
        0.0
    } else {
        re_t.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let im_t = (&tc - tc.adjoint()) * C64::new(0.0, -0.5);
    let tet = &tc * &ec * tc.adjoint();
    let fzf = &fc * &zc * fc.adjoint();
    let ftilde = inverse_with_rcond(&(Mat::identity(nd, nd) + &ec * &vc * i), "1 + iEV")
        .map(|(m, _)| spectral_norm(&(&tsum - m.adjoint() * &m)))
        .unwrap_or(f64::NAN);
    OpticalReport {
        scale: 1.0 + spectral_norm(&tc) + spectral_norm(&fc).powi(2),
        t_sum_minus_ffdag: spectral_norm(&(&tsum - &ffd)),
        ffdag_minus_fdagf: spectral_norm(&(&ffd - &fdf)),
        min_eig_re_t: min_eig,
        im_t_plus_tet: spectral_norm(&(&im_t + &tet)),
        im_t_general: spectral_norm(&(&im_t - &fzf + &tet)),
        t_sum_minus_ftilde: ftilde,
        anti_hermiticity: hermiticity_residual(&(cr.g0.flat() * i)),
    }
}

/// G₀ = −iE for a Hermitian family E.
pub fn hamiltonian_strat(e: &OperatorMatrix) -> OperatorMatrix {
    e.scale(C64::new(0.0, -1.0))
}
