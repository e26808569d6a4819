//! White-noise limit of colored-noise models.
//!
//! The limit side is computed from reduced propagators: matrix elements of the
//! QSDE solution between exponential vectors obey an ordinary ODE on the
//! initial space. The pre-limit side is the diagram expansion at finite λ.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::conversion::{hamiltonian_strat, strat_to_ito, ConversionResult};
use crate::diagrams::{prelimit_sum_at_vertices, tc_sum_at_vertices};
use crate::error::{Error, Result};
use crate::flow::EhGenerator;
use crate::gauge::{gauge_from_kappa, CorrelationFamily, GaugeSpec};
use crate::operator::{inverse_with_rcond, kron_identity, spectral_norm, Mat, OperatorMatrix};
use crate::quad::{adaptive_gk, QuadraturePlan};

/// Relative tolerance of the reduced-propagator integrator.
pub const ODE_TOL: f64 = 1e-10;
const MAX_DOUBLINGS: u32 = 18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub value: C64,
}

/// Piecewise-constant ℂᴺ-valued function; each channel is a list of disjoint
/// half-open segments [start, end) and vanishes elsewhere. Channel 0 is the
/// constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    segments: Vec<Vec<Segment>>,
}

impl TestFunction {
    pub fn zero(channels: usize) -> Self {
        TestFunction { segments: vec![Vec::new(); channels] }
    }

    /// Constant values on [0, t_end).
    pub fn constant(values: &[C64], t_end: f64) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&value| vec![Segment { start: 0.0, end: t_end, value }])
                .collect(),
        )
    }

    pub fn new(mut segments: Vec<Vec<Segment>>) -> Result<Self> {
        for (i, segs) in segments.iter_mut().enumerate() {
            segs.retain(|s| s.value != C64::new(0.0, 0.0));
            segs.sort_by(|a, b| a.start.total_cmp(&b.start));
            for s in segs.iter() {
                if !(s.start.is_finite() && s.end.is_finite() && s.start >= 0.0 && s.start < s.end) {
                    return Err(Error::InvalidArgument(format!(
                        "channel {}: segment [{}, {}) is not a finite interval in [0, ∞)",
                        i + 1,
                        s.start,
                        s.end
                    )));
                }
                if !(s.value.re.is_finite() && s.value.im.is_finite()) {
                    return Err(Error::InvalidArgument(format!("channel {}: non-finite value", i + 1)));
                }
            }
            if segs.windows(2).any(|w| w[1].start < w[0].end) {
                return Err(Error::InvalidArgument(format!("channel {}: overlapping segments", i + 1)));
            }
        }
        Ok(TestFunction { segments })
    }

    pub fn channels(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self, i: usize) -> &[Segment] {
        &self.segments[i - 1]
    }

    /// f_α(t) for α ∈ 0..=N.
    pub fn value(&self, alpha: usize, t: f64) -> C64 {
        if alpha == 0 {
            return C64::new(1.0, 0.0);
        }
        self.segments[alpha - 1]
            .iter()
            .find(|s| s.start <= t && t < s.end)
            .map_or(C64::new(0.0, 0.0), |s| s.value)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().flatten().flat_map(|s| [s.start, s.end]).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.segments.iter().flatten().map(|s| s.value.norm()).fold(0.0, f64::max)
    }

    /// ∫₀ᵀ Σᵢ fᵢ*(s) gᵢ(s) ds, exact for piecewise-constant functions.
    pub fn inner(&self, other: &TestFunction, t_end: f64) -> Result<C64> {
        check_channels(self.channels(), other.channels())?;
        let mut points = self.breakpoints();
        points.extend(other.breakpoints());
        let grid = interval_grid(points, t_end);
        let mut total = C64::new(0.0, 0.0);
        for w in grid.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let s: C64 = (1..=self.channels()).map(|i| self.value(i, mid).conj() * other.value(i, mid)).sum();
            total += s * (w[1] - w[0]);
        }
        Ok(total)
    }
}

fn check_channels(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("channel counts {a} and {b} differ")));
    }
    Ok(())
}

/// Sorted, deduplicated grid 0 = t₀ < … < t_k = T from interior breakpoints.
fn interval_grid(points: Vec<f64>, t_end: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = points.into_iter().filter(|&p| p > 0.0 && p < t_end).collect();
    grid.push(0.0);
    grid.push(t_end);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Time-dependent Itô coefficient matrix G(t), piecewise smooth between breakpoints.
pub trait CoefficientPath: Sync {
    fn channels(&self) -> usize;
    fn dim(&self) -> usize;
    /// G(t); on a breakpoint the value of the interval starting there.
    fn coefficients(&self, t: f64) -> Result<OperatorMatrix>;
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl CoefficientPath for OperatorMatrix {
    fn channels(&self) -> usize {
        OperatorMatrix::channels(self)
    }

    fn dim(&self) -> usize {
        OperatorMatrix::dim(self)
    }

    fn coefficients(&self, _t: f64) -> Result<OperatorMatrix> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// X' = A(t) X
    Left,
    /// X' = X A(t)
    Right,
}

fn rk4_interval<A>(a_at: &A, side: Side, x0: &Mat, t0: f64, t1: f64, steps: usize) -> Result<Mat>
where
    A: Fn(f64) -> Result<Mat>,
{
    let apply = |a: &Mat, x: &Mat| match side {
        Side::Left => a * x,
        Side::Right => x * a,
    };
    let h = (t1 - t0) / steps as f64;
    let hc = C64::new(h, 0.0);
    let half = C64::new(0.5, 0.0);
    let mut x = x0.clone();
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let a1 = a_at(t)?;
        let am = a_at(t + 0.5 * h)?;
        let a2 = a_at(t + h)?;
        let k1 = apply(&a1, &x) * hc;
        let k2 = apply(&am, &(&x + &k1 * half)) * hc;
        let k3 = apply(&am, &(&x + &k2 * half)) * hc;
        let k4 = apply(&a2, &(&x + &k3)) * hc;
        x += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(1.0 / 6.0, 0.0);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeStats {
    /// Total RK4 steps of the accepted solutions.
    pub steps: usize,
    /// Largest relative difference between the last two Richardson levels.
    pub max_relative_diff: f64,
}

/// Solves X' = A(t)X (Left) or X' = XA(t) (Right), X(0) = 1, interval by
/// interval, doubling the step count until successive solutions agree.
fn solve<A>(a_at: A, side: Side, n: usize, grid: &[f64]) -> Result<(Mat, OdeStats)>
where
    A: Fn(f64) -> Result<Mat>,
{
    let mut x = Mat::identity(n, n);
    let mut stats = OdeStats { steps: 0, max_relative_diff: 0.0 };
    let eye = Mat::identity(n, n);
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        // keep samples inside [t0, t1) so jumps at t1 belong to the next interval
        let right = t1.next_down().max(t0);
        let clamped = |t: f64| a_at(t.clamp(t0, right));
        let mut steps = 4;
        let mut coarse = rk4_interval(&clamped, side, &eye, t0, t1, steps)?;
        let mut doublings = 0;
        loop {
            steps *= 2;
            let fine = rk4_interval(&clamped, side, &eye, t0, t1, steps)?;
            let scale = spectral_norm(&fine).max(1.0);
            let diff = spectral_norm(&(&fine - &coarse)) / scale;
            if !diff.is_finite() {
                return Err(Error::Integrator(format!("non-finite solution on [{t0}, {t1}]")));
            }
            if diff < ODE_TOL {
                stats.steps += steps;
                stats.max_relative_diff = stats.max_relative_diff.max(diff);
                x = match side {
                    Side::Left => fine * x,
                    Side::Right => x * fine,
                };
                break;
            }
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::Integrator(format!(
                    "no convergence on [{t0}, {t1}] after {steps} steps (difference {diff:.3e})"
                )));
            }
            coarse = fine;
        }
    }
    Ok((x, stats))
}

fn full_grid<P: CoefficientPath + ?Sized>(path: &P, f: &TestFunction, g: &TestFunction, t_end: f64) -> Vec<f64> {
    let mut points = path.breakpoints();
    points.extend(f.breakpoints());
    points.extend(g.breakpoints());
    interval_grid(points, t_end)
}

fn check_path<P: CoefficientPath + ?Sized>(path: &P, f: &TestFunction, g: &TestFunction, t_end: f64) -> Result<()> {
    check_channels(path.channels(), f.channels())?;
    check_channels(path.channels(), g.channels())?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!("final time {t_end}")));
    }
    Ok(())
}

/// K(T) with ⟨u⊗ε(f)|U_T|v⊗ε(g)⟩ = ⟨u|K(T)|v⟩ · overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPropagator {
    pub k: Mat,
    /// exp ∫₀ᵀ Σᵢ fᵢ* gᵢ = ⟨ε(f)|ε(g)⟩ restricted to [0, T].
    pub overlap: C64,
    pub stats: OdeStats,
}

impl ReducedPropagator {
    pub fn element(&self, u: &DVector<C64>, v: &DVector<C64>) -> C64 {
        u.dotc(&(&self.k * v)) * self.overlap
    }

    pub fn full(&self) -> Mat {
        &self.k * self.overlap
    }
}

/// Solves K' = Σ f_α*(t) G_{αβ}(t) g_β(t) K, K(0) = 1.
pub fn reduced_propagator<P: CoefficientPath + ?Sized>(
    path: &P,
    f: &TestFunction,
    g: &TestFunction,
    t_end: f64,
) -> Result<ReducedPropagator> {
    check_path(path, f, g, t_end)?;
    let n_ch = path.channels();
    let grid = full_grid(path, f, g, t_end);
    let a_at = |t: f64| -> Result<Mat> {
        let gt = path.coefficients(t)?;
        let mut a = Mat::zeros(path.dim(), path.dim());
        for alpha in 0..=n_ch {
            let fa = f.value(alpha, t).conj();
            if fa == C64::new(0.0, 0.0) {
                continue;
            }
            for beta in 0..=n_ch {
                let w = fa * g.value(beta, t);
                if w != C64::new(0.0, 0.0) {
                    a += gt.block(alpha, beta) * w;
                }
            }
        }
        Ok(a)
    };
    let (k, stats) = solve(a_at, Side::Left, path.dim(), &grid)?;
    let overlap = f.inner(g, t_end)?.exp();
    Ok(ReducedPropagator { k, overlap, stats })
}

/// Superoperator S_T (d²×d², column-stacked) of the reduced Heisenberg flow
/// X ↦ ⟨ε(f)|j_T(X)|ε(g)⟩ / ⟨ε(f)|ε(g)⟩, from S' = S·Σ f_α* ℒ_{αβ} g_β.
pub fn reduced_flow<P: CoefficientPath + ?Sized>(
    path: &P,
    f: &TestFunction,
    g: &TestFunction,
    t_end: f64,
) -> Result<(Mat, OdeStats)> {
    check_path(path, f, g, t_end)?;
    let n_ch = path.channels();
    let d = path.dim();
    let grid = full_grid(path, f, g, t_end);
    let a_at = |t: f64| -> Result<Mat> {
        let gen = EhGenerator::direct(&path.coefficients(t)?);
        let mut a = Mat::zeros(d * d, d * d);
        for alpha in 0..=n_ch {
            for beta in 0..=n_ch {
                let w = f.value(alpha, t).conj() * g.value(beta, t);
                if w != C64::new(0.0, 0.0) {
                    a += gen.superoperator(alpha, beta)? * w;
                }
            }
        }
        Ok(a)
    };
    solve(a_at, Side::Right, d * d, &grid)
}

/// ‖Φ_T(1) − 1‖ for the diagonal flow f = g. Zero exactly when
/// ‖U_T(u⊗ε(f))‖² = ‖u‖²·exp∫|f|² for every u.
pub fn flow_unit_defect<P: CoefficientPath + ?Sized>(path: &P, f: &TestFunction, t_end: f64) -> Result<f64> {
    let d = path.dim();
    let (s, _) = reduced_flow(path, f, f, t_end)?;
    let one = Mat::identity(d, d);
    let vec_one = DVector::from_iterator(d * d, one.iter().copied());
    let image = &s * vec_one;
    let phi = Mat::from_iterator(d, d, image.iter().copied());
    Ok(spectral_norm(&(phi - one)))
}

/// Colored-noise model Υ_t = E_{αβ} ⊗ a_α†(t,λ)a_β(t,λ) with its limit QSDE.
#[derive(Debug, Clone, PartialEq)]
pub struct WzModel {
    e: OperatorMatrix,
    fam: CorrelationFamily,
    conversion: ConversionResult,
}

impl WzModel {
    /// Limit gauge fixed by the family: κ = ½ + iZ.
    pub fn new(e: OperatorMatrix, fam: CorrelationFamily) -> Result<Self> {
        let n = e.channels();
        let gauge = gauge_from_kappa(&(Mat::identity(n, n) * fam.kappa_exact()))?;
        Self::with_gauge(e, fam, gauge)
    }

    /// Limit computed under an arbitrary gauge, matched to the family or not.
    pub fn with_gauge(e: OperatorMatrix, fam: CorrelationFamily, gauge: GaugeSpec) -> Result<Self> {
        let residual = e.hermiticity_residual();
        if residual > 1e-10 * (1.0 + e.op_norm()) {
            return Err(Error::NotHermitian { what: "E", residual });
        }
        let conversion = strat_to_ito(&hamiltonian_strat(&e), &gauge)?;
        if conversion.diagnostics.contraction >= 1.0 {
            return Err(Error::ContractionViolated { norm: conversion.diagnostics.contraction });
        }
        Ok(WzModel { e, fam, conversion })
    }

    pub fn e(&self) -> &OperatorMatrix {
        &self.e
    }

    pub fn family(&self) -> &CorrelationFamily {
        &self.fam
    }

    pub fn gauge(&self) -> &GaugeSpec {
        &self.conversion.gauge
    }

    /// Itô coefficients of the limit QSDE.
    pub fn ito(&self) -> &OperatorMatrix {
        &self.conversion.g
    }

    pub fn conversion(&self) -> &ConversionResult {
        &self.conversion
    }
}

/// Vacuum element of a Dyson series truncated at `order` vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesElement {
    pub value: Mat,
    /// Contribution of each vertex count 0..=order.
    pub by_order: Vec<Mat>,
    pub std_error: f64,
}

fn assemble(by_order: Vec<Mat>, std_error: f64) -> SeriesElement {
    let value = by_order.iter().fold(Mat::zeros(by_order[0].nrows(), by_order[0].ncols()), |a, b| a + b);
    SeriesElement { value, by_order, std_error }
}

/// Pre-limit ⟨·⊗Ω|U_t^{(λ)}|·⊗Ω⟩ summed over all vacuum diagrams with ≤ `order` vertices.
pub fn prelimit_vacuum_element(
    m: &WzModel,
    lambda: f64,
    t: f64,
    order: usize,
    plan: &QuadraturePlan,
) -> Result<SeriesElement> {
    let mut by_order = Vec::with_capacity(order + 1);
    let mut var = 0.0;
    for n in 0..=order {
        if n == 0 {
            by_order.push(Mat::identity(m.e.dim(), m.e.dim()));
            continue;
        }
        let (s, se) = prelimit_sum_at_vertices(&m.e, &m.fam, lambda, t, n, plan)?;
        by_order.push(s);
        var += se * se;
    }
    Ok(assemble(by_order, var.sqrt()))
}

/// Limit values of the same truncation: TC diagrams only, contractions → V.
pub fn limit_truncated(m: &WzModel, t: f64, order: usize) -> Result<SeriesElement> {
    let v = m.gauge().v();
    let by_order = (0..=order).map(|n| tc_sum_at_vertices(&m.e, &v, t, n)).collect::<Result<Vec<_>>>()?;
    Ok(assemble(by_order, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub order: usize,
    pub err_abs: f64,
    pub err_rel: f64,
    /// Quadrature standard error of the pre-limit value.
    pub std_error: f64,
    /// Set when the row failed; the error fields are then NaN.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub limit: Mat,
    /// Errors non-increasing as λ decreases.
    pub monotone: bool,
    /// Least-squares slope of log err against log λ.
    pub fit_rate: Option<f64>,
}

/// Compares the order-`order` pre-limit vacuum element with the matching
/// truncation of the limit for each λ.
pub fn convergence_sweep(
    m: &WzModel,
    t: f64,
    lambdas: &[f64],
    order: usize,
    plan: &QuadraturePlan,
) -> Result<SweepTable> {
    let limit = limit_truncated(m, t, order)?.value;
    let scale = spectral_norm(&limit);
    let rows: Vec<SweepRow> = lambdas
        .par_iter()
        .map(|&lambda| match prelimit_vacuum_element(m, lambda, t, order, plan) {
            Ok(pre) => {
                let err_abs = spectral_norm(&(&pre.value - &limit));
                let err_rel = if scale > 0.0 { err_abs / scale } else { err_abs };
                SweepRow { lambda, order, err_abs, err_rel, std_error: pre.std_error, failure: None }
            }
            Err(e) => SweepRow {
                lambda,
                order,
                err_abs: f64::NAN,
                err_rel: f64::NAN,
                std_error: f64::NAN,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    let mut ok: Vec<&SweepRow> = rows.iter().filter(|r| r.failure.is_none()).collect();
    ok.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    let monotone = ok.len() == rows.len() && ok.windows(2).all(|w| w[1].err_abs <= w[0].err_abs);
    let pts: Vec<(f64, f64)> = ok
        .iter()
        .filter(|r| r.err_abs > 0.0)
        .map(|r| (r.lambda.ln(), r.err_abs.ln()))
        .collect();
    let fit_rate = log_log_slope(&pts);
    Ok(SweepTable { rows, limit, monotone, fit_rate })
}

fn log_log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// ∫ C_ii(t − s, λ) h_i(s) ds over the support of h.
fn convolve(fam: &CorrelationFamily, h: &TestFunction, i: usize, t: f64, lambda: f64) -> Result<C64> {
    let reach = 40.0 * lambda;
    let mut total = C64::new(0.0, 0.0);
    for s in h.segments(i) {
        let a = s.start.max(t - reach);
        let b = s.end.min(t + reach);
        if a >= b {
            continue;
        }
        // split at the kink s = t
        let pieces = if a < t && t < b { vec![(a, t), (t, b)] } else { vec![(a, b)] };
        for (lo, hi) in pieces {
            let est = adaptive_gk(|u| fam.diagonal(t - u, lambda), lo, hi, 1e-13, 4000)?;
            total += est.value * s.value;
        }
    }
    Ok(total)
}

/// Coefficients Ẽ(t, λ) of the interaction after moving the coherent states
/// ε(f), ε(g) into the fields; matrix elements between them become vacuum ones.
pub fn coherent_modified_e(m: &WzModel, f: &TestFunction, g: &TestFunction, t: f64, lambda: f64) -> Result<OperatorMatrix> {
    let n = m.e.channels();
    check_channels(n, f.channels())?;
    check_channels(n, g.channels())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("correlation time must be positive, got {lambda}")));
    }
    let d = m.e.dim();
    let phi = (1..=n).map(|i| convolve(&m.fam, f, i, t, lambda).map(|z| z.conj())).collect::<Result<Vec<_>>>()?;
    let gamma = (1..=n).map(|i| convolve(&m.fam, g, i, t, lambda)).collect::<Result<Vec<_>>>()?;
    let e = &m.e;
    let mut out = e.clone();
    for i in 1..=n {
        let mut col = e.block(i, 0);
        let mut row = e.block(0, i);
        for j in 1..=n {
            col += e.block(i, j) * gamma[j - 1];
            row += e.block(j, i) * phi[j - 1];
        }
        out.set_block(i, 0, &col)?;
        out.set_block(0, i, &row)?;
    }
    let mut b00 = e.block(0, 0);
    for i in 1..=n {
        b00 += e.block(i, 0) * phi[i - 1] + e.block(0, i) * gamma[i - 1];
        for j in 1..=n {
            b00 += e.block(i, j) * (phi[i - 1] * gamma[j - 1]);
        }
    }
    out.set_block(0, 0, &b00)?;
    debug_assert_eq!(out.dim(), d);
    Ok(out)
}

/// Vacuum generator −iẼ₀₀ − Ẽ₀·𝖳Ẽ·₀ of the modified coefficients under the model gauge.
pub fn coherent_vacuum_generator(m: &WzModel, f: &TestFunction, g: &TestFunction, t: f64, lambda: f64) -> Result<Mat> {
    let et = coherent_modified_e(m, f, g, t, lambda)?;
    let d = et.dim();
    let vc = kron_identity(&m.gauge().channel_v(), d);
    let nd = vc.nrows();
    let (inv, _) = inverse_with_rcond(
        &(Mat::identity(nd, nd) + et.channel_block() * &vc * C64::new(0.0, 1.0)),
        "1 + i𝖤𝖵",
    )?;
    let tt = &vc * inv;
    Ok(et.block(0, 0) * C64::new(0.0, -1.0) - et.vacuum_row() * tt * et.vacuum_col())
}

/// Single-channel diffusion model: E₁₀ = R, E₀₁ = R†, E₀₀ = H, E₁₁ = 0,
/// driven by the family with damping κ (κ = ½ gives OU, κ = (1 + iω)/2 the
/// modulated family).
pub fn build_diffusion_model(r: &Mat, h: &Mat, kappa: C64) -> Result<WzModel> {
    let d = h.nrows();
    if h.ncols() != d || r.shape() != (d, d) {
        return Err(Error::DimensionMismatch("R and H must be square of equal size".into()));
    }
    let residual = crate::operator::hermiticity_residual(h);
    if residual > 1e-12 * (1.0 + spectral_norm(h)) {
        return Err(Error::NotHermitian { what: "H", residual });
    }
    let fam = family_for_kappa(kappa)?;
    let zero = Mat::zeros(d, d);
    let e = OperatorMatrix::from_parts(1, d, h, &r.adjoint(), r, &zero);
    WzModel::new(e, fam)
}

/// Correlation family with the given damping constant.
pub fn family_for_kappa(kappa: C64) -> Result<CorrelationFamily> {
    if (kappa.re - 0.5).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("supported families have Re κ = ½, got {kappa}")));
    }
    Ok(if kappa.im == 0.0 { CorrelationFamily::ou() } else { CorrelationFamily::ou_modulated(2.0 * kappa.im) })
}

/// Counting-type model with Stratonovich coefficients E_{αβ}(t) = E·w_α*(t)w_β(t),
/// (w₀, w₁) = (f(t), 1). Its limit G(t) = X·w_α* w_β with X = −iE(1 + iκE)⁻¹.
/// Vacuum statistics are those of a Poisson process with rate |f(t)|².
#[derive(Debug, Clone, PartialEq)]
pub struct CountingModel {
    e: Mat,
    f: TestFunction,
    kappa: C64,
    x: Mat,
}

pub fn build_counting_model(e: &Mat, f: &TestFunction, kappa: C64) -> Result<CountingModel> {
    let d = e.nrows();
    if e.ncols() != d {
        return Err(Error::DimensionMismatch("E must be square".into()));
    }
    check_channels(1, f.channels())?;
    let (inv, _) = inverse_with_rcond(&(Mat::identity(d, d) + e * (C64::new(0.0, 1.0) * kappa)), "1 + iκE")?;
    let x = e * inv * C64::new(0.0, -1.0);
    Ok(CountingModel { e: e.clone(), f: f.clone(), kappa, x })
}

impl CountingModel {
    fn weights(&self, t: f64) -> [C64; 2] {
        [self.f.value(1, t), C64::new(1.0, 0.0)]
    }

    pub fn kappa(&self) -> C64 {
        self.kappa
    }

    /// Stratonovich coefficients E·w_α*(t)w_β(t).
    pub fn stratonovich(&self, t: f64) -> Result<OperatorMatrix> {
        let w = self.weights(t);
        OperatorMatrix::from_blocks(1, self.e.nrows(), |a, b| &self.e * (w[a].conj() * w[b]))
    }
}

impl CoefficientPath for CountingModel {
    fn channels(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.e.nrows()
    }

    fn coefficients(&self, t: f64) -> Result<OperatorMatrix> {
        let w = self.weights(t);
        OperatorMatrix::from_blocks(1, self.e.nrows(), |a, b| &self.x * (w[a].conj() * w[b]))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.f.breakpoints()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{random_hermitian, random_hermitian_family, random_matrix, rng};
    use crate::operator::c;
    use crate::unitarity::{hp_from_ito, ito_from_hp, HpParams};

    fn col(v: &[C64]) -> DVector<C64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn test_function_basics() {
        let f = TestFunction::new(vec![vec![
            Segment { start: 0.5, end: 1.0, value: c(2.0, 0.0) },
            Segment { start: 0.0, end: 0.5, value: c(0.0, 1.0) },
        ]])
        .unwrap();
        assert_eq!(f.value(0, 3.0), c(1.0, 0.0));
        assert_eq!(f.value(1, 0.5), c(2.0, 0.0));
        assert_eq!(f.value(1, 1.0), c(0.0, 0.0));
        assert!((f.inner(&f, 2.0).unwrap() - c(0.5 + 2.0, 0.0)).norm() < 1e-15);
        assert!((f.inner(&f, 0.25).unwrap() - c(0.25, 0.0)).norm() < 1e-15);
        let overlap = TestFunction::new(vec![vec![
            Segment { start: 0.0, end: 1.0, value: c(1.0, 0.0) },
            Segment { start: 0.5, end: 2.0, value: c(1.0, 0.0) },
        ]]);
        assert!(overlap.is_err());
        assert!(TestFunction::constant(&[c(f64::NAN, 0.0)], 1.0).is_err());
    }

    #[test]
    fn vacuum_propagator_is_exponential() {
        let mut r = rng(71);
        let g = GaugeSpec::symmetric(1);
        let e = random_hermitian_family(&mut r, 1, 2, &g, 0.4);
        let ito = strat_to_ito(&hamiltonian_strat(&e), &g).unwrap().g;
        let zero = TestFunction::zero(1);
        let k = reduced_propagator(&ito, &zero, &zero, 1.3).unwrap();
        let exact = (ito.block(0, 0) * c(1.3, 0.0)).exp();
        assert!(spectral_norm(&(k.k - exact)) < 1e-10);
        assert_eq!(k.overlap, c(1.0, 0.0));
    }

    #[test]
    fn zero_generator_and_scalar_oracle() {
        let zero_g = OperatorMatrix::zeros(2, 3);
        let f = TestFunction::constant(&[c(0.3, 0.1), c(-0.2, 0.0)], 2.0).unwrap();
        let k = reduced_propagator(&zero_g, &f, &f, 1.0).unwrap();
        assert!(spectral_norm(&(k.k - Mat::identity(3, 3))) < 1e-14);

        let mut r = rng(72);
        let gm = random_matrix(&mut r, 2, 2);
        let scalar = OperatorMatrix::from_flat(1, 1, gm.clone()).unwrap();
        let (fv, gv) = (c(0.4, -0.3), c(0.7, 0.2));
        let f = TestFunction::constant(&[fv], 5.0).unwrap();
        let g = TestFunction::constant(&[gv], 5.0).unwrap();
        let k = reduced_propagator(&scalar, &f, &g, 0.8).unwrap();
        let w = [c(1.0, 0.0), fv];
        let v = [c(1.0, 0.0), gv];
        let mut rate = c(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                rate += w[a].conj() * gm[(a, b)] * v[b];
            }
        }
        assert!((k.k[(0, 0)] - (rate * 0.8).exp()).norm() < 1e-10);
        assert!((k.overlap - (fv.conj() * gv * 0.8).exp()).norm() < 1e-14);
        let el = k.element(&col(&[c(1.0, 0.0)]), &col(&[c(1.0, 0.0)]));
        assert!((el - (rate * 0.8).exp() * k.overlap).norm() < 1e-10);
    }

    #[test]
    fn propagator_composes_over_piecewise_functions() {
        let mut r = rng(73);
        let g = GaugeSpec::symmetric(1);
        let e = random_hermitian_family(&mut r, 1, 2, &g, 0.4);
        let ito = strat_to_ito(&hamiltonian_strat(&e), &g).unwrap().g;
        let f = TestFunction::new(vec![vec![
            Segment { start: 0.0, end: 0.4, value: c(0.5, 0.0) },
            Segment { start: 0.4, end: 1.0, value: c(-0.3, 0.6) },
        ]])
        .unwrap();
        let k = reduced_propagator(&ito, &f, &f, 1.0).unwrap();
        let gen = |v: C64| {
            let w = [c(1.0, 0.0), v];
            let mut a = Mat::zeros(2, 2);
            for x in 0..2 {
                for y in 0..2 {
                    a += ito.block(x, y) * (w[x].conj() * w[y]);
                }
            }
            a
        };
        let exact = (gen(c(-0.3, 0.6)) * c(0.6, 0.0)).exp() * (gen(c(0.5, 0.0)) * c(0.4, 0.0)).exp();
        assert!(spectral_norm(&(k.k - exact)) < 1e-10);
    }

    #[test]
    fn unitary_flow_preserves_identity() {
        let mut r = rng(74);
        for (n, d) in [(1, 2), (2, 2)] {
            let w = crate::ensemble::random_unitary(&mut r, n * d);
            let l = random_matrix(&mut r, n * d, d);
            let h = random_hermitian(&mut r, d);
            let g = ito_from_hp(&HpParams::new(n, d, w, l, h).unwrap()).unwrap();
            let f = TestFunction::new(
                (0..n)
                    .map(|i| vec![Segment { start: 0.1 * i as f64, end: 0.7, value: c(0.4, -0.2 * i as f64) }])
                    .collect(),
            )
            .unwrap();
            assert!(flow_unit_defect(&g, &f, 1.0).unwrap() < 1e-8);
        }
        // a non-unitary generator breaks it
        let bad = OperatorMatrix::from_flat(1, 1, Mat::from_element(2, 2, c(0.3, 0.0))).unwrap();
        assert!(flow_unit_defect(&bad, &TestFunction::zero(1), 1.0).unwrap() > 1e-3);
    }

    #[test]
    fn model_requires_contraction_and_hermiticity() {
        let mut r = rng(75);
        let g = GaugeSpec::symmetric(1);
        let e = random_hermitian_family(&mut r, 1, 2, &g, 1.5);
        assert!(matches!(WzModel::new(e, CorrelationFamily::ou()), Err(Error::ContractionViolated { .. })));
        let mut e = random_hermitian_family(&mut r, 1, 2, &g, 0.3);
        e.set_block(0, 1, &random_matrix(&mut r, 2, 2)).unwrap();
        assert!(matches!(WzModel::new(e, CorrelationFamily::ou()), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn zero_model_sweep_is_exact() {
        let m = WzModel::new(OperatorMatrix::zeros(1, 2), CorrelationFamily::ou()).unwrap();
        let plan = QuadraturePlan::default();
        let pre = prelimit_vacuum_element(&m, 0.1, 1.0, 3, &plan).unwrap();
        assert_eq!(pre.value, Mat::identity(2, 2));
        let table = convergence_sweep(&m, 1.0, &[0.4, 0.2], 3, &plan).unwrap();
        assert!(table.rows.iter().all(|r| r.err_abs == 0.0));
        assert!(table.monotone);
        assert_eq!(table.fit_rate, None);
    }

    #[test]
    fn second_order_pair_limit() {
        // order 2 with E₁₁ = 0: pre-limit → 1 − iHt − ½H²t² − ½R†R·t as λ → 0
        let mut r = rng(76);
        let rr = random_matrix(&mut r, 2, 2) * c(0.3, 0.0);
        let h = random_hermitian(&mut r, 2) * c(0.3, 0.0);
        let m = build_diffusion_model(&rr, &h, c(0.5, 0.0)).unwrap();
        let plan = QuadraturePlan::default();
        let t = 1.0;
        let target = Mat::identity(2, 2) + &h * c(0.0, -t) - &h * &h * c(0.5 * t * t, 0.0)
            - rr.adjoint() * &rr * c(0.5 * t, 0.0);
        let lim = limit_truncated(&m, t, 2).unwrap().value;
        assert!(spectral_norm(&(&lim - &target)) < 1e-14);
        let errs: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&l| spectral_norm(&(prelimit_vacuum_element(&m, l, t, 2, &plan).unwrap().value - &target)))
            .collect();
        for w in errs.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 0.05, "{errs:?}");
        }
    }

    #[test]
    fn sweep_shrinks_and_detects_wrong_gauge() {
        let mut r = rng(77);
        let rr = random_matrix(&mut r, 1, 1) * c(0.5, 0.0);
        let h = random_hermitian(&mut r, 1) * c(0.5, 0.0);
        let plan = QuadraturePlan::default();
        let grid = [0.2, 0.1, 0.05];
        let m = build_diffusion_model(&rr, &h, c(0.5, 0.5)).unwrap();
        let good = convergence_sweep(&m, 1.0, &grid, 2, &plan).unwrap();
        assert!(good.monotone);
        assert!(good.fit_rate.unwrap() > 0.8);
        let wrong = WzModel::with_gauge(m.e().clone(), *m.family(), GaugeSpec::symmetric(1)).unwrap();
        let bad = convergence_sweep(&wrong, 1.0, &grid, 2, &plan).unwrap();
        assert!(bad.rows[2].err_abs > 10.0 * good.rows[2].err_abs);
    }

    #[test]
    fn diffusion_model_shifts_energy() {
        let mut r = rng(78);
        let rr = random_matrix(&mut r, 2, 2);
        let h = random_hermitian(&mut r, 2);
        let m = build_diffusion_model(&Mat::zeros(2, 2), &h, c(0.5, 0.0)).unwrap();
        assert!(spectral_norm(&(m.ito().block(0, 0) - &h * c(0.0, -1.0))) < 1e-14);
        for kappa in [c(0.5, 0.0), c(0.5, 0.5)] {
            let m = build_diffusion_model(&rr, &h, kappa).unwrap();
            let expected = &h * c(0.0, -1.0) - rr.adjoint() * &rr * kappa;
            assert!(spectral_norm(&(m.ito().block(0, 0) - expected)) < 1e-12);
            let hp = hp_from_ito(m.ito()).unwrap().params;
            let shifted = &h + rr.adjoint() * &rr * c(kappa.im, 0.0);
            assert!(spectral_norm(&(hp.h - shifted)) < 1e-12);
        }
        assert!(build_diffusion_model(&rr, &random_matrix(&mut r, 2, 2), c(0.5, 0.0)).is_err());
        assert!(family_for_kappa(c(0.3, 0.0)).is_err());
    }

    #[test]
    fn counting_model_matches_converter() {
        let mut r = rng(79);
        let e = random_hermitian(&mut r, 2) * c(0.5, 0.0);
        let f = TestFunction::new(vec![vec![
            Segment { start: 0.0, end: 0.3, value: c(0.7, 0.1) },
            Segment { start: 0.3, end: 1.0, value: c(-0.4, 0.5) },
        ]])
        .unwrap();
        for kappa in [c(0.5, 0.0), c(0.5, 0.5)] {
            let cm = build_counting_model(&e, &f, kappa).unwrap();
            let gauge = gauge_from_kappa(&Mat::from_element(1, 1, kappa)).unwrap();
            for &t in &[0.0, 0.2, 0.3, 0.65, 0.99, 1.5] {
                let generic = strat_to_ito(&hamiltonian_strat(&cm.stratonovich(t).unwrap()), &gauge).unwrap().g;
                let ours = cm.coefficients(t).unwrap();
                assert!(spectral_norm(&(generic.flat() - ours.flat())) < 1e-10);
            }
        }
        let scalar = build_counting_model(&Mat::from_element(1, 1, c(0.8, 0.0)), &TestFunction::constant(&[c(1.0, 0.0)], 1.0).unwrap(), c(0.5, 0.0)).unwrap();
        let g11 = scalar.coefficients(0.5).unwrap().block(1, 1)[(0, 0)];
        assert!((g11 - c(0.0, -0.8) / c(1.0, 0.4)).norm() < 1e-15);
    }

    #[test]
    fn counting_propagator_is_unitary_flow() {
        let mut r = rng(80);
        let e = random_hermitian(&mut r, 2) * c(0.6, 0.0);
        let f = TestFunction::new(vec![vec![Segment { start: 0.2, end: 0.8, value: c(0.9, -0.3) }]]).unwrap();
        let cm = build_counting_model(&e, &f, c(0.5, 0.0)).unwrap();
        let probe = TestFunction::constant(&[c(0.3, 0.2)], 1.0).unwrap();
        assert!(flow_unit_defect(&cm, &probe, 1.0).unwrap() < 1e-8);
    }

    #[test]
    fn coherent_modification() {
        let mut r = rng(81);
        let g = GaugeSpec::symmetric(2);
        let e = random_hermitian_family(&mut r, 2, 2, &g, 0.3);
        let m = WzModel::new(e.clone(), CorrelationFamily::ou()).unwrap();
        let zero = TestFunction::zero(2);
        assert_eq!(coherent_modified_e(&m, &zero, &zero, 0.5, 0.1).unwrap(), e);

        // convolution → g(t) for a function smooth around t
        let gv = [c(0.4, 0.3), c(-0.2, 0.5)];
        let fv = [c(0.1, -0.6), c(0.3, 0.0)];
        let gf = TestFunction::constant(&gv, 2.0).unwrap();
        let ff = TestFunction::constant(&fv, 2.0).unwrap();
        for fam in [CorrelationFamily::ou(), CorrelationFamily::ou_modulated(1.0)] {
            let conv = convolve(&fam, &gf, 1, 1.0, 0.01).unwrap();
            assert!((conv - gv[0]).norm() < 1e-12);
            // at the edge of the support only one side contributes
            let edge = convolve(&fam, &gf, 1, 0.0, 0.01).unwrap();
            assert!((edge - gv[0] * fam.kappa_exact().conj()).norm() < 1e-12);
        }

        // the vacuum generator of Ẽ tends to f_α* G_{αβ} g_β
        let ito = m.ito();
        let w = [c(1.0, 0.0), fv[0], fv[1]];
        let v = [c(1.0, 0.0), gv[0], gv[1]];
        let mut target = Mat::zeros(2, 2);
        for a in 0..3 {
            for b in 0..3 {
                target += ito.block(a, b) * (w[a].conj() * v[b]);
            }
        }
        let got = coherent_vacuum_generator(&m, &ff, &gf, 1.0, 0.01).unwrap();
        assert!(spectral_norm(&(got - target)) < 1e-10);
    }
}
