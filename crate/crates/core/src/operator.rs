//! Block operator matrices indexed by α, β ∈ {0,…,N} with d×d complex entries.
//!
//! An [`OperatorMatrix`] is stored as a single flat (N+1)d × (N+1)d matrix whose
//! (α, β) block occupies rows `α·d..(α+1)·d` and columns `β·d..(β+1)·d`. Index 0
//! is the vacuum (time) slot, indices 1..=N are the noise channels.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Dense complex matrix used for initial-space operators and scalar blocks.
pub type Mat = DMatrix<C64>;

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

/// Selector for the compressions P, Q and the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proj {
    /// Projection onto the channels 1..=N.
    P,
    /// Projection onto the vacuum slot 0.
    Q,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    channels: usize,
    dim: usize,
    flat: Mat,
}

impl OperatorMatrix {
    pub fn zeros(channels: usize, dim: usize) -> Self {
        let n = (channels + 1) * dim;
        OperatorMatrix { channels, dim, flat: Mat::zeros(n, n) }
    }

    pub fn identity(channels: usize, dim: usize) -> Self {
        let n = (channels + 1) * dim;
        OperatorMatrix { channels, dim, flat: Mat::identity(n, n) }
    }

    pub fn from_flat(channels: usize, dim: usize, flat: Mat) -> Result<Self> {
        let n = (channels + 1) * dim;
        if dim == 0 || flat.nrows() != n || flat.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "flat matrix is {}x{}, expected {n}x{n} for N={channels}, d={dim}",
                flat.nrows(),
                flat.ncols()
            )));
        }
        if flat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(OperatorMatrix { channels, dim, flat })
    }

    /// Builds the matrix block by block; every block must be d×d.
    pub fn from_blocks<F>(channels: usize, dim: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Mat,
    {
        let mut out = Self::zeros(channels, dim);
        for a in 0..=channels {
            for b in 0..=channels {
                out.set_block(a, b, &f(a, b))?;
            }
        }
        Ok(out)
    }

    /// Assembles from the vacuum block, the vacuum row (d × Nd), the vacuum column
    /// (Nd × d) and the channel block (Nd × Nd).
    pub fn from_parts(channels: usize, dim: usize, b00: &Mat, row: &Mat, col: &Mat, cc: &Mat) -> Self {
        let mut out = Self::zeros(channels, dim);
        let nd = channels * dim;
        out.flat.view_mut((0, 0), (dim, dim)).copy_from(b00);
        if nd > 0 {
            out.flat.view_mut((0, dim), (dim, nd)).copy_from(row);
            out.flat.view_mut((dim, 0), (nd, dim)).copy_from(col);
            out.flat.view_mut((dim, dim), (nd, nd)).copy_from(cc);
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn flat(&self) -> &Mat {
        &self.flat
    }

    pub fn into_flat(self) -> Mat {
        self.flat
    }

    pub fn block(&self, a: usize, b: usize) -> Mat {
        let d = self.dim;
        self.flat.view((a * d, b * d), (d, d)).into_owned()
    }

    pub fn set_block(&mut self, a: usize, b: usize, m: &Mat) -> Result<()> {
        let d = self.dim;
        if a > self.channels || b > self.channels {
            return Err(Error::DimensionMismatch(format!(
                "block index ({a},{b}) exceeds N={}",
                self.channels
            )));
        }
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "block ({a},{b}) is {}x{}, expected {d}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
        self.flat.view_mut((a * d, b * d), (d, d)).copy_from(m);
        Ok(())
    }

    /// The channel-channel part (rows and columns 1..=N), an Nd × Nd matrix.
    pub fn channel_block(&self) -> Mat {
        let (d, nd) = (self.dim, self.channels * self.dim);
        self.flat.view((d, d), (nd, nd)).into_owned()
    }

    /// Blocks (0, j) for j = 1..=N laid out as a d × Nd row.
    pub fn vacuum_row(&self) -> Mat {
        let (d, nd) = (self.dim, self.channels * self.dim);
        self.flat.view((0, d), (d, nd)).into_owned()
    }

    /// Blocks (i, 0) for i = 1..=N laid out as an Nd × d column.
    pub fn vacuum_col(&self) -> Mat {
        let (d, nd) = (self.dim, self.channels * self.dim);
        self.flat.view((d, 0), (nd, d)).into_owned()
    }

    /// All rows, channel columns only: (N+1)d × Nd.
    pub fn channel_columns(&self) -> Mat {
        let (d, n) = (self.dim, (self.channels + 1) * self.dim);
        self.flat.view((0, d), (n, n - d)).into_owned()
    }

    /// Channel rows, all columns: Nd × (N+1)d.
    pub fn channel_rows(&self) -> Mat {
        let (d, n) = (self.dim, (self.channels + 1) * self.dim);
        self.flat.view((d, 0), (n - d, n)).into_owned()
    }

    pub fn adjoint(&self) -> Self {
        OperatorMatrix { channels: self.channels, dim: self.dim, flat: self.flat.adjoint() }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.channels != other.channels || self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "(N={}, d={}) vs (N={}, d={})",
                self.channels, self.dim, other.channels, other.dim
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.with_flat(&self.flat * &other.flat))
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.with_flat(&self.flat + &other.flat))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.with_flat(&self.flat - &other.flat))
    }

    pub fn scale(&self, c: C64) -> Self {
        self.with_flat(&self.flat * c)
    }

    pub(crate) fn with_flat(&self, flat: Mat) -> Self {
        debug_assert_eq!(flat.nrows(), self.flat.nrows());
        OperatorMatrix { channels: self.channels, dim: self.dim, flat }
    }

    /// Compression `left · X · right` with left, right ∈ {P, Q, 1}.
    pub fn project(&self, left: Proj, right: Proj) -> Self {
        let mut out = self.clone();
        let d = self.dim;
        let n = self.flat.nrows();
        let zero_rows = |m: &mut Mat, p: Proj| match p {
            Proj::P => m.rows_mut(0, d).fill(C64::new(0.0, 0.0)),
            Proj::Q => m.rows_mut(d, n - d).fill(C64::new(0.0, 0.0)),
            Proj::One => {}
        };
        zero_rows(&mut out.flat, left);
        match right {
            Proj::P => out.flat.columns_mut(0, d).fill(C64::new(0.0, 0.0)),
            Proj::Q => out.flat.columns_mut(d, n - d).fill(C64::new(0.0, 0.0)),
            Proj::One => {}
        }
        out
    }

    /// Spectral norm of the flat matrix.
    pub fn op_norm(&self) -> f64 {
        spectral_norm(&self.flat)
    }

    /// max over (α, β) of the spectral norm of block (α, β).
    pub fn max_block_norm(&self) -> f64 {
        let mut best = 0.0_f64;
        for a in 0..=self.channels {
            for b in 0..=self.channels {
                best = best.max(spectral_norm(&self.block(a, b)));
            }
        }
        best
    }

    /// ‖X − X†‖.
    pub fn hermiticity_residual(&self) -> f64 {
        spectral_norm(&(&self.flat - self.flat.adjoint()))
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.try_add(rhs).expect("operator matrix shapes differ")
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.try_sub(rhs).expect("operator matrix shapes differ")
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.matmul(rhs).expect("operator matrix shapes differ")
    }
}

impl Neg for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn neg(self) -> OperatorMatrix {
        self.with_flat(-&self.flat)
    }
}

/// (N+1)×(N+1) matrix of complex scalars, identified with multiples of the
/// d×d identity when combined with an [`OperatorMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMatrix {
    channels: usize,
    entries: Mat,
}

impl ScalarMatrix {
    pub fn new(entries: Mat) -> Result<Self> {
        if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "scalar matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(ScalarMatrix { channels: entries.nrows() - 1, entries })
    }

    pub fn zeros(channels: usize) -> Self {
        ScalarMatrix { channels, entries: Mat::zeros(channels + 1, channels + 1) }
    }

    pub fn identity(channels: usize) -> Self {
        ScalarMatrix { channels, entries: Mat::identity(channels + 1, channels + 1) }
    }

    /// P = diag(0, 1, …, 1).
    pub fn p(channels: usize) -> Self {
        let mut m = Self::identity(channels);
        m.entries[(0, 0)] = C64::new(0.0, 0.0);
        m
    }

    /// Q = 1 − P = diag(1, 0, …, 0).
    pub fn q(channels: usize) -> Self {
        let mut m = Self::zeros(channels);
        m.entries[(0, 0)] = C64::new(1.0, 0.0);
        m
    }

    /// Embeds an N×N channel matrix with zero vacuum row and column.
    pub fn from_channel_block(block: &Mat) -> Result<Self> {
        if block.nrows() != block.ncols() {
            return Err(Error::DimensionMismatch("channel block must be square".into()));
        }
        let n = block.nrows();
        let mut m = Self::zeros(n);
        m.entries.view_mut((1, 1), (n, n)).copy_from(block);
        Ok(m)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn get(&self, a: usize, b: usize) -> C64 {
        self.entries[(a, b)]
    }

    pub fn channel_block(&self) -> Mat {
        let n = self.channels;
        self.entries.view((1, 1), (n, n)).into_owned()
    }

    pub fn adjoint(&self) -> Self {
        ScalarMatrix { channels: self.channels, entries: self.entries.adjoint() }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.channels != other.channels {
            return Err(Error::DimensionMismatch(format!(
                "N={} vs N={}",
                self.channels, other.channels
            )));
        }
        Ok(ScalarMatrix { channels: self.channels, entries: &self.entries * &other.entries })
    }

    /// Promotes to an operator matrix with blocks s_{αβ}·1_d.
    pub fn promote(&self, dim: usize) -> OperatorMatrix {
        let flat = self.entries.kronecker(&Mat::identity(dim, dim));
        OperatorMatrix { channels: self.channels, dim, flat }
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// ‖m − m†‖.
pub fn hermiticity_residual(m: &Mat) -> f64 {
    spectral_norm(&(m - m.adjoint()))
}

/// Inverse through pivoted LU, together with the reciprocal 1-norm condition
/// number. Fails when the reciprocal condition drops below [`RCOND_MIN`].
pub fn inverse_with_rcond(m: &Mat, what: &'static str) -> Result<(Mat, f64)> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{what} is not square")));
    }
    if m.nrows() == 0 {
        return Ok((m.clone(), 1.0));
    }
    let inv = match m.clone().lu().try_inverse() {
        Some(inv) => inv,
        None => return Err(Error::Singular { what, rcond: 0.0 }),
    };
    let rcond = 1.0 / (norm_1(m) * norm_1(&inv));
    if !rcond.is_finite() || rcond < RCOND_MIN {
        return Err(Error::Singular { what, rcond: if rcond.is_finite() { rcond } else { 0.0 } });
    }
    Ok((inv, rcond))
}

/// Maximum absolute column sum.
pub fn norm_1(m: &Mat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn commutator(a: &Mat, b: &Mat) -> Mat {
    a * b - b * a
}

/// `s ⊗ 1_d` for a scalar matrix s.
pub fn kron_identity(s: &Mat, dim: usize) -> Mat {
    s.kronecker(&Mat::identity(dim, dim))
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
