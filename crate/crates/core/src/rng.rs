//! Counter-based Gaussian streams keyed by a 64-bit seed.
//!
//! Every perturbation direction in the protocol is a pure function of a
//! [`Seed`] and a dimension, so the server and any client can regenerate the
//! same vector for any historical round without carrying generator state.
//!
//! The stream is fixed as follows so that other implementations can reproduce
//! it exactly:
//!
//! * Block `b` (a `u64`) is encrypted with Philox4x32-10 using counter
//!   `[lo32(b), hi32(b), 0, 0]` and key `[lo32(seed), hi32(seed)]`.
//! * The four output words form `a = w0 | w1 << 32` and `c = w2 | w3 << 32`.
//! * `u1 = ((a >> 11) + 1) * 2^-53` lies in `(0, 1]`, `u2 = (c >> 11) * 2^-53`
//!   lies in `[0, 1)`.
//! * Box-Muller: `rad = sqrt(-2 ln u1)`, element `2b = rad * cos(2 pi u2)`,
//!   element `2b + 1 = rad * sin(2 pi u2)`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RngError {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),
    #[error("seed grid coordinate out of range: round {round}, step {step}, perturbation {perturbation}")]
    GridOutOfRange {
        round: u64,
        step: u64,
        perturbation: u64,
    },
    #[error("seed collision at round {round}, step {step}, perturbation {perturbation}")]
    Collision {
        round: u64,
        step: u64,
        perturbation: u64,
    },
}

/// A 64-bit seed. Equal seeds give equal Gaussian vectors for equal dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// Two standard normal variates for block `block` of the stream keyed by `seed`.
#[inline]
pub fn gaussian_pair(seed: Seed, block: u64) -> (f64, f64) {
    let key = [seed.0 as u32, (seed.0 >> 32) as u32];
    let w = philox4x32_10([block as u32, (block >> 32) as u32, 0, 0], key);
    let a = u64::from(w[0]) | (u64::from(w[1]) << 32);
    let c = u64::from(w[2]) | (u64::from(w[3]) << 32);
    let u1 = ((a >> 11) + 1) as f64 * TWO_POW_M53;
    let u2 = (c >> 11) as f64 * TWO_POW_M53;
    let rad = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (rad * theta.cos(), rad * theta.sin())
}

/// Fills `out` with the first `out.len()` elements of the stream for `seed`.
pub fn fill_gaussian(seed: Seed, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    let mut block = 0u64;
    for pair in &mut chunks {
        let (a, b) = gaussian_pair(seed, block);
        pair[0] = a;
        pair[1] = b;
        block += 1;
    }
    if let [last] = chunks.into_remainder() {
        *last = gaussian_pair(seed, block).0;
    }
}

/// A length-`dim` vector of standard normal variates determined by `seed`.
pub fn gaussian_vector(seed: Seed, dim: usize) -> Result<Vec<f64>, RngError> {
    if dim == 0 {
        return Err(RngError::InvalidDimension(dim));
    }
    let mut out = vec![0.0; dim];
    fill_gaussian(seed, &mut out);
    Ok(out)
}

/// SplitMix64 finalizer. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Largest round index a schedule can address (exclusive).
pub const MAX_ROUNDS: u64 = 1 << 32;
/// Largest local step index a schedule can address (exclusive).
pub const MAX_STEPS: u64 = 1 << 16;
/// Largest perturbation index a schedule can address (exclusive).
pub const MAX_PERTURBATIONS: u64 = 1 << 16;

/// Derives the seed of every `(round, step, perturbation)` cell from one root.
///
/// `seed = mix64(mix64(root) ^ (round << 32 | step << 16 | perturbation))`.
/// The packing is injective inside the addressable grid and `mix64` is a
/// bijection, so distinct cells always get distinct seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSchedule {
    root: Seed,
    keyed_root: u64,
}

impl SeedSchedule {
    pub fn new(root: Seed) -> Self {
        Self {
            root,
            keyed_root: mix64(root.0),
        }
    }

    pub fn root(&self) -> Seed {
        self.root
    }

    pub fn derive(&self, round: u64, step: u64, perturbation: u64) -> Seed {
        debug_assert!(round < MAX_ROUNDS && step < MAX_STEPS && perturbation < MAX_PERTURBATIONS);
        let packed = (round << 32) | (step << 16) | perturbation;
        Seed(mix64(self.keyed_root ^ packed))
    }

    /// Checks that the grid `rounds x steps x perturbations` is addressable and
    /// collision free.
    pub fn check_grid(&self, rounds: u64, steps: u64, perturbations: u64) -> Result<(), RngError> {
        if rounds > MAX_ROUNDS || steps > MAX_STEPS || perturbations > MAX_PERTURBATIONS {
            return Err(RngError::GridOutOfRange {
                round: rounds,
                step: steps,
                perturbation: perturbations,
            });
        }
        let mut seen = HashSet::with_capacity((rounds * steps * perturbations) as usize);
        for round in 0..rounds {
            for step in 0..steps {
                for perturbation in 0..perturbations {
                    if !seen.insert(self.derive(round, step, perturbation)) {
                        return Err(RngError::Collision {
                            round,
                            step,
                            perturbation,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
