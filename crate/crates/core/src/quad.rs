//! Quadrature: Gauss–Legendre rules, adaptive Gauss–Kronrod for complex
//! integrands, and integration over the time-ordered simplex.

use std::collections::BinaryHeap;

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;

use crate::ensemble::rng;
use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += s * WGK[j];
        if j % 2 == 1 {
            gauss += s * WG[j / 2];
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: C64,
    pub error: f64,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: C64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive 7/15-point Gauss–Kronrod integration of a complex
/// integrand to absolute tolerance `tol`.
pub fn adaptive_gk<F: Fn(f64) -> C64>(f: F, a: f64, b: f64, tol: f64, max_intervals: usize) -> Result<QuadEstimate> {
    let (value, error) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value, error });
    let mut total_err = error;
    while total_err > tol {
        if heap.len() >= max_intervals {
            return Err(Error::Quadrature(format!(
                "error estimate {total_err:.3e} above {tol:.1e} after {max_intervals} intervals"
            )));
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        if !(v1 + v2).re.is_finite() || !(v1 + v2).im.is_finite() {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        heap.push(Piece { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, error: e2 });
        // Summed afresh: a running update cancels catastrophically when a
        // single huge estimate is replaced.
        total_err = heap.iter().map(|p| p.error).sum();
    }
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(QuadEstimate { value, error, intervals: heap.len() })
}

/// Controls for integrals over the simplex 0 ≤ t₁ ≤ … ≤ tₙ ≤ t.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraturePlan {
    /// Gauss–Legendre points per panel and dimension.
    pub gl_points: usize,
    /// Panels are at most this many correlation times wide.
    pub panel_width: f64,
    /// Largest simplex dimension handled by the tensor rule.
    pub max_tensor_dim: usize,
    pub qmc_points: usize,
    pub qmc_replicates: usize,
    pub seed: u64,
}

impl Default for QuadraturePlan {
    fn default() -> Self {
        QuadraturePlan {
            gl_points: 16,
            panel_width: 20.0,
            max_tensor_dim: 4,
            qmc_points: 1 << 17,
            qmc_replicates: 8,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexIntegral {
    pub value: C64,
    /// Standard error across randomised replicates; zero for the tensor rule.
    pub std_error: f64,
    pub evaluations: usize,
}

/// Integrates `f(times)` over the ordered simplex of dimension `n` in [0, t];
/// `times[k]` is the k-th earliest time. `scale` is the length scale (the
/// correlation time) that sets the panel width of the tensor rule.
pub fn integrate_simplex<F>(f: F, n: usize, t: f64, scale: f64, plan: &QuadraturePlan) -> Result<SimplexIntegral>
where
    F: Fn(&[f64]) -> C64 + Sync,
{
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("integration horizon {t}")));
    }
    if n == 0 {
        return Ok(SimplexIntegral { value: f(&[]), std_error: 0.0, evaluations: 1 });
    }
    if n <= plan.max_tensor_dim {
        let (x, w) = gauss_legendre(plan.gl_points);
        let width = (plan.panel_width * scale).max(f64::MIN_POSITIVE);
        let mut times = vec![0.0; n];
        let mut evals = 0usize;
        let value = nested(&f, n - 1, t, &mut times, &x, &w, width, &mut evals);
        if !value.re.is_finite() || !value.im.is_finite() {
            return Err(Error::Quadrature("non-finite simplex integral".into()));
        }
        return Ok(SimplexIntegral { value, std_error: 0.0, evaluations: evals });
    }
    qmc_simplex(&f, n, t, plan)
}

#[allow(clippy::too_many_arguments)]
fn nested<F: Fn(&[f64]) -> C64>(
    f: &F,
    level: usize,
    upper: f64,
    times: &mut [f64],
    x: &[f64],
    w: &[f64],
    width: f64,
    evals: &mut usize,
) -> C64 {
    if upper <= 0.0 {
        return C64::new(0.0, 0.0);
    }
    let panels = (upper / width).ceil().max(1.0) as usize;
    let h = upper / panels as f64;
    let mut acc = C64::new(0.0, 0.0);
    for p in 0..panels {
        let a = p as f64 * h;
        for (xi, wi) in x.iter().zip(w) {
            let s = a + 0.5 * h * (xi + 1.0);
            times[level] = s;
            let inner = if level == 0 {
                *evals += 1;
                f(times)
            } else {
                nested(f, level - 1, s, times, x, w, width, evals)
            };
            acc += inner * (0.5 * h * wi);
        }
    }
    acc
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Randomly shifted Halton points mapped onto the simplex by sorting.
fn qmc_simplex<F>(f: &F, n: usize, t: f64, plan: &QuadraturePlan) -> Result<SimplexIntegral>
where
    F: Fn(&[f64]) -> C64 + Sync,
{
    if n > PRIMES.len() {
        return Err(Error::InvalidArgument(format!("simplex dimension {n} too large")));
    }
    let reps = plan.qmc_replicates.max(2);
    let mut shift_rng = rng(plan.seed);
    let shifts: Vec<Vec<f64>> = (0..reps)
        .map(|_| (0..n).map(|_| shift_rng.random_range(0.0..1.0)).collect())
        .collect();
    let volume = t.powi(n as i32) / (1..=n).map(|k| k as f64).product::<f64>();
    let means: Vec<C64> = shifts
        .par_iter()
        .map(|shift| {
            let mut acc = C64::new(0.0, 0.0);
            let mut pt = vec![0.0; n];
            for i in 0..plan.qmc_points {
                for k in 0..n {
                    let u = radical_inverse(i as u64 + 1, PRIMES[k]) + shift[k];
                    pt[k] = t * (u - u.floor());
                }
                pt.sort_by(f64::total_cmp);
                acc += f(&pt);
            }
            acc / plan.qmc_points as f64 * volume
        })
        .collect();
    let mean: C64 = means.iter().sum::<C64>() / reps as f64;
    let var = means.iter().map(|m| (m - mean).norm_sqr()).sum::<f64>() / (reps as f64 - 1.0);
    let std_error = (var / reps as f64).sqrt();
    if !mean.re.is_finite() || !mean.im.is_finite() {
        return Err(Error::Quadrature("non-finite QMC estimate".into()));
    }
    Ok(SimplexIntegral { value: mean, std_error, evaluations: reps * plan.qmc_points })
}
