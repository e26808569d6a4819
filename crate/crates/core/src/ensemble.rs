//! Seeded random models used by the property tests, the acceptance suite and
//! the CLI's synthetic runs.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gauge::GaugeSpec;
use crate::operator::{kron_identity, spectral_norm, Mat, OperatorMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries with real and imaginary parts uniform on [-1, 1].
pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    DMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    })
}

pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> Mat {
    let a = random_matrix(rng, n, n);
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// exp(iH) for a random Hermitian H.
pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> Mat {
    let h = random_hermitian(rng, n);
    (h * C64::new(0.0, 1.0)).exp()
}

/// A Hermitian family E with ‖𝖵𝖤‖ equal to `contraction` under `gauge`.
pub fn random_hermitian_family<R: Rng>(
    rng: &mut R,
    channels: usize,
    dim: usize,
    gauge: &GaugeSpec,
    contraction: f64,
) -> OperatorMatrix {
    let n = (channels + 1) * dim;
    let h = random_hermitian(rng, n);
    let mut e = OperatorMatrix::from_flat(channels, dim, h).expect("shape");
    let vc = kron_identity(&gauge.channel_v(), dim);
    let cc = e.channel_block();
    let s = spectral_norm(&(&vc * &cc));
    if s > 0.0 {
        let scaled = cc * C64::new(contraction / s, 0.0);
        e = OperatorMatrix::from_parts(
            channels,
            dim,
            &e.block(0, 0),
            &e.vacuum_row(),
            &e.vacuum_col(),
            &scaled,
        );
    }
    e
}

/// Random Hermitian gauge with ‖Z‖ equal to `norm`.
pub fn random_gauge<R: Rng>(rng: &mut R, channels: usize, norm: f64) -> GaugeSpec {
    let z = random_hermitian(rng, channels);
    let s = spectral_norm(&z);
    let z = if s > 0.0 { z * C64::new(norm / s, 0.0) } else { z };
    GaugeSpec::new(z).expect("Hermitian by construction")
}

#[derive(Debug, Clone)]
pub struct RandomModel {
    pub e: OperatorMatrix,
    pub gauge: GaugeSpec,
    pub contraction: f64,
}

/// The standard test ensemble: d ≤ 4, N ≤ 3, ‖𝖵𝖤‖ ∈ [0.05, 0.5]; even members
/// use Z = 0, odd members a random Hermitian Z with ‖Z‖ ∈ [0.1, 1].
pub fn standard_ensemble(seed: u64, count: usize) -> Vec<RandomModel> {
    let mut r = rng(seed);
    (0..count)
        .map(|k| {
            let dim = r.random_range(1..=4);
            let channels = r.random_range(1..=3);
            let gauge = if k % 2 == 0 {
                GaugeSpec::symmetric(channels)
            } else {
                let norm = r.random_range(0.1..=1.0);
                random_gauge(&mut r, channels, norm)
            };
            let contraction = r.random_range(0.05..=0.5);
            let e = random_hermitian_family(&mut r, channels, dim, &gauge, contraction);
            RandomModel { e, gauge, contraction }
        })
        .collect()
}
