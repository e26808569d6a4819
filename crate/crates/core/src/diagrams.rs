//! Vacuum diagrams of the Wick-ordered Dyson series.
//!
//! A diagram on n time-ordered vertices is a set partition of {0,…,n−1}
//! (vertex 0 is the earliest). A singleton is a neutral vertex carrying E₀₀; a
//! block of size m ≥ 2 is a chain emission → (m−2) scatterings → absorption
//! joined by m−1 contractions. In the white-noise limit only time-consecutive
//! diagrams survive: every contraction collapses one simplex dimension and
//! contributes a factor V.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauge::CorrelationFamily;
use crate::operator::{kron_identity, spectral_norm, Mat, OperatorMatrix, ScalarMatrix};
use crate::quad::{integrate_simplex, QuadraturePlan};

/// Largest vertex count accepted by [`enumerate_vacuum_diagrams`].
pub const MAX_ENUMERATION_VERTICES: usize = 10;
/// Largest vertex count accepted by the pre-limit evaluator.
pub const MAX_PRELIMIT_VERTICES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Diagram {
    n: usize,
    /// Blocks sorted by first vertex, vertices ascending within each block.
    blocks: Vec<Vec<usize>>,
}

impl Diagram {
    pub fn new(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::InvalidArgument("empty block".into()));
            }
            b.sort_unstable();
            for &v in b.iter() {
                if v >= n || seen[v] {
                    return Err(Error::InvalidArgument(format!("blocks do not partition 0..{n}")));
                }
                seen[v] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(format!("blocks do not cover 0..{n}")));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Diagram { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Contractions (earlier vertex, later vertex) between consecutive chain members.
    pub fn links(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .flat_map(|b| b.windows(2).map(|w| (w[0], w[1])))
            .collect()
    }

    pub fn is_pairing(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 2)
    }
}

/// All set partitions of {0,…,n−1}, generated as restricted growth strings.
pub fn enumerate_vacuum_diagrams(n: usize) -> Result<Vec<Diagram>> {
    if n > MAX_ENUMERATION_VERTICES {
        return Err(Error::InvalidArgument(format!(
            "enumeration limited to n ≤ {MAX_ENUMERATION_VERTICES}, got {n}"
        )));
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Diagram { n: 0, blocks: Vec::new() });
        return Ok(out);
    }
    let mut a = vec![0usize; n];
    let mut maxes = vec![0usize; n];
    loop {
        let k = a.iter().max().copied().unwrap_or(0) + 1;
        let mut blocks = vec![Vec::new(); k];
        for (v, &label) in a.iter().enumerate() {
            blocks[label].push(v);
        }
        out.push(Diagram { n, blocks });
        // next restricted growth string
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            if a[i] <= maxes[i - 1] {
                a[i] += 1;
                let m = maxes[i - 1].max(a[i]);
                maxes[i] = m;
                for j in i + 1..n {
                    a[j] = 0;
                    maxes[j] = m;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// (2n₂)!/(2^{n₂} n₂!) = (2n₂ − 1)!!, the number of perfect pairings.
pub fn count_pairings_emission_absorption(n2: usize) -> Result<u128> {
    (1..=n2).try_fold(1u128, |acc, k| acc.checked_mul(2 * k as u128 - 1)).ok_or_else(|| {
        Error::InvalidArgument(format!("pairing count for n2 = {n2} overflows"))
    })
}

/// Every block occupies consecutive vertices.
pub fn is_time_consecutive(d: &Diagram) -> bool {
    d.blocks.iter().all(|b| b.windows(2).all(|w| w[1] == w[0] + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagramValue {
    /// Operator factor including the (−i)^n vertex phases and channel sums.
    pub operator: Mat,
    /// Scalar weight: simplex volume in the limit, simplex integral before it.
    pub weight: C64,
    /// Standard error of the weight (randomised quadrature only).
    pub std_error: f64,
    /// Set when the operator factor vanished and no quadrature was run.
    pub skipped: bool,
}

impl DiagramValue {
    pub fn value(&self) -> Mat {
        &self.operator * self.weight
    }

    fn zero(dim: usize) -> Self {
        DiagramValue { operator: Mat::zeros(dim, dim), weight: C64::new(0.0, 0.0), std_error: 0.0, skipped: true }
    }
}

fn minus_i_pow(m: usize) -> C64 {
    match m % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, -1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, 1.0),
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

fn check_ev(e: &OperatorMatrix, v: &ScalarMatrix) -> Result<()> {
    if e.channels() != v.channels() {
        return Err(Error::DimensionMismatch(format!(
            "E has N={} but V has N={}",
            e.channels(),
            v.channels()
        )));
    }
    Ok(())
}

/// Limit operator of one chain of `m` vertices: (−i)^m E₀·𝖵(𝖤𝖵)^{m−2}E·₀, or
/// −iE₀₀ for a neutral vertex.
pub fn chain_operator(e: &OperatorMatrix, v: &ScalarMatrix, m: usize) -> Result<Mat> {
    check_ev(e, v)?;
    if m == 0 {
        return Err(Error::InvalidArgument("chains have at least one vertex".into()));
    }
    if m == 1 {
        return Ok(e.block(0, 0) * minus_i_pow(1));
    }
    let vc = kron_identity(&v.channel_block(), e.dim());
    let ev = e.channel_block() * &vc;
    let mut inner = e.vacuum_row() * &vc;
    for _ in 0..m - 2 {
        inner *= &ev;
    }
    Ok(inner * e.vacuum_col() * minus_i_pow(m))
}

/// Value of a time-consecutive diagram in the white-noise limit. Blocks are
/// multiplied with later blocks on the left; the weight is t^K/K! for K blocks.
/// Non-consecutive diagrams vanish in the limit and return zero.
pub fn tc_limit_value(d: &Diagram, e: &OperatorMatrix, v: &ScalarMatrix, t: f64) -> Result<DiagramValue> {
    check_ev(e, v)?;
    let dim = e.dim();
    if !is_time_consecutive(d) {
        return Ok(DiagramValue::zero(dim));
    }
    let mut op = Mat::identity(dim, dim);
    for b in d.blocks() {
        op = chain_operator(e, v, b.len())? * op;
    }
    let k = d.blocks().len();
    Ok(DiagramValue {
        operator: op,
        weight: C64::new(t.powi(k as i32) / factorial(k), 0.0),
        std_error: 0.0,
        skipped: false,
    })
}

/// Channel-summed operator factor of any diagram, each contraction carrying
/// the scalar weight `link[(i, j)]` between the absorbed channel i at its later
/// vertex and the emitted channel j at its earlier vertex. Includes (−i)^n.
pub fn explicit_operator(d: &Diagram, e: &OperatorMatrix, link: &Mat) -> Result<Mat> {
    let n_ch = e.channels();
    if link.shape() != (n_ch, n_ch) {
        return Err(Error::DimensionMismatch("link weights must be N×N".into()));
    }
    let dim = e.dim();
    let links = d.links();
    let nl = links.len();
    // per vertex: index of its outgoing (to later) and incoming (from earlier) link
    let mut out_link = vec![None; d.n()];
    let mut in_link = vec![None; d.n()];
    for (k, &(early, late)) in links.iter().enumerate() {
        out_link[early] = Some(k);
        in_link[late] = Some(k);
    }
    let blocks: Vec<Mat> = (0..=n_ch)
        .flat_map(|a| (0..=n_ch).map(move |b| (a, b)))
        .map(|(a, b)| e.block(a, b))
        .collect();
    let block = |a: usize, b: usize| &blocks[a * (n_ch + 1) + b];

    let mut total = Mat::zeros(dim, dim);
    // labels[2k] = channel absorbed at the later vertex, labels[2k+1] = emitted at the earlier one
    let combos = n_ch.pow(2 * nl as u32);
    let mut labels = vec![0usize; 2 * nl];
    for code in 0..combos {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % n_ch;
            c /= n_ch;
        }
        let mut w = C64::new(1.0, 0.0);
        for k in 0..nl {
            w *= link[(labels[2 * k], labels[2 * k + 1])];
        }
        if w == C64::new(0.0, 0.0) {
            continue;
        }
        let mut op = Mat::identity(dim, dim);
        for vtx in 0..d.n() {
            let alpha = out_link[vtx].map_or(0, |k| labels[2 * k + 1] + 1);
            let beta = in_link[vtx].map_or(0, |k| labels[2 * k] + 1);
            op = block(alpha, beta) * op;
        }
        total += op * w;
    }
    Ok(total * minus_i_pow(d.n()))
}

/// Pre-limit value: the operator factor times ∫_{Δₙ(t)} Π_links c(t_late − t_early, λ).
pub fn prelimit_diagram_value(
    d: &Diagram,
    e: &OperatorMatrix,
    fam: &CorrelationFamily,
    lambda: f64,
    t: f64,
    plan: &QuadraturePlan,
) -> Result<DiagramValue> {
    if d.n() > MAX_PRELIMIT_VERTICES {
        return Err(Error::InvalidArgument(format!(
            "pre-limit evaluation limited to n ≤ {MAX_PRELIMIT_VERTICES}, got {}",
            d.n()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("correlation time must be positive, got {lambda}")));
    }
    let n_ch = e.channels();
    let operator = explicit_operator(d, e, &Mat::identity(n_ch, n_ch))?;
    if operator.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(DiagramValue::zero(e.dim()));
    }
    let weight = prelimit_weight(d, fam, lambda, t, plan)?;
    Ok(DiagramValue { operator, weight: weight.0, std_error: weight.1, skipped: false })
}

/// (∫_{Δₙ(t)} Π_links c(t_late − t_early, λ), standard error).
pub fn prelimit_weight(
    d: &Diagram,
    fam: &CorrelationFamily,
    lambda: f64,
    t: f64,
    plan: &QuadraturePlan,
) -> Result<(C64, f64)> {
    let links = d.links();
    let r = integrate_simplex(
        |s: &[f64]| {
            links
                .iter()
                .map(|&(early, late)| fam.diagonal(s[late] - s[early], lambda))
                .product::<C64>()
        },
        d.n(),
        t,
        lambda,
        plan,
    )?;
    Ok((r.value, r.std_error))
}

/// Sum of the limit values of all TC diagrams with exactly `n` vertices.
/// Uses compositions of n: A_K(n) = Σ_m B(m) A_{K−1}(n − m).
pub fn tc_sum_at_vertices(e: &OperatorMatrix, v: &ScalarMatrix, t: f64, n: usize) -> Result<Mat> {
    let dim = e.dim();
    if n == 0 {
        return Ok(Mat::identity(dim, dim));
    }
    let chains = (1..=n).map(|m| chain_operator(e, v, m)).collect::<Result<Vec<_>>>()?;
    // a[k][j]: sum over compositions of j into k parts
    let mut a = vec![vec![Mat::zeros(dim, dim); n + 1]; n + 1];
    a[0][0] = Mat::identity(dim, dim);
    for k in 1..=n {
        for j in k..=n {
            let mut acc = Mat::zeros(dim, dim);
            for m in 1..=j - k + 1 {
                acc += &chains[m - 1] * &a[k - 1][j - m];
            }
            a[k][j] = acc;
        }
    }
    let mut out = Mat::zeros(dim, dim);
    for (k, row) in a.iter().enumerate().skip(1) {
        out += &row[n] * C64::new(t.powi(k as i32) / factorial(k), 0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VacuumSeries {
    /// Σ_{K ≤ M} (t·B)^K / K!.
    pub value: Mat,
    /// Box operator B = Σ_m chain_operator(m), the resummed vacuum generator.
    pub box_operator: Mat,
    /// Partial sums for K = 0..=M.
    pub partial_sums: Vec<Mat>,
    /// ‖tB‖^{M+1}/(M+1)! · e^{‖tB‖}.
    pub truncation_bound: f64,
}

/// Resummed vacuum series grouped by effective order (number of blocks).
pub fn vacuum_series_sum(e: &OperatorMatrix, v: &ScalarMatrix, t: f64, order: usize) -> Result<VacuumSeries> {
    check_ev(e, v)?;
    let dim = e.dim();
    let vc = kron_identity(&v.channel_block(), dim);
    let ve = &vc * e.channel_block();
    let r = spectral_norm(&ve);
    if r >= 1.0 {
        return Err(Error::ContractionViolated { norm: r });
    }
    let mut box_op = chain_operator(e, v, 1)?;
    let ev = e.channel_block() * &vc * C64::new(0.0, -1.0);
    let mut inner = e.vacuum_row() * &vc * C64::new(-1.0, 0.0);
    let col = e.vacuum_col();
    for _ in 0..100_000 {
        let term = &inner * &col;
        let tn = spectral_norm(&term);
        box_op += term;
        if tn <= 1e-18 * (1.0 + spectral_norm(&box_op)) {
            break;
        }
        inner *= &ev;
    }
    let tb = &box_op * C64::new(t, 0.0);
    let mut term = Mat::identity(dim, dim);
    let mut value = term.clone();
    let mut partial_sums = vec![value.clone()];
    for k in 1..=order {
        term = &term * &tb * C64::new(1.0 / k as f64, 0.0);
        value += &term;
        partial_sums.push(value.clone());
    }
    let x = spectral_norm(&tb);
    let truncation_bound = x.powi(order as i32 + 1) / factorial(order + 1) * x.exp();
    Ok(VacuumSeries { value, box_operator: box_op, partial_sums, truncation_bound })
}

/// E^{2n₂} C^{n₂} max(t,1)^{n₂} / n₂!.
pub fn pule_bound(e_max: f64, c_max: f64, t: f64, n2: usize) -> f64 {
    e_max.powi(2 * n2 as i32) * c_max.powi(n2 as i32) * t.max(1.0).powi(n2 as i32) / factorial(n2)
}

/// Ξ = exp(a·b / (1 − a)) with a = ‖𝖵𝖤‖ and b = E·max(t, 1).
pub fn xi_bound(a: f64, b: f64) -> Result<f64> {
    if !(a < 1.0) || a < 0.0 || b < 0.0 {
        return Err(Error::ContractionViolated { norm: a });
    }
    Ok((a * b / (1.0 - a)).exp())
}

/// Sum of pre-limit values over all diagrams with exactly `n` vertices.
pub fn prelimit_sum_at_vertices(
    e: &OperatorMatrix,
    fam: &CorrelationFamily,
    lambda: f64,
    t: f64,
    n: usize,
    plan: &QuadraturePlan,
) -> Result<(Mat, f64)> {
    let dim = e.dim();
    let diagrams = enumerate_vacuum_diagrams(n)?;
    let values = diagrams
        .par_iter()
        .map(|d| prelimit_diagram_value(d, e, fam, lambda, t, plan))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Mat::zeros(dim, dim);
    let mut var = 0.0;
    for v in &values {
        total += v.value();
        var += (spectral_norm(&v.operator) * v.std_error).powi(2);
    }
    Ok((total, var.sqrt()))
}
