//! Deterministic, hierarchically derivable random streams.
//!
//! Every run owns a root stream keyed by its seed. Subsystems never share a
//! stream; they derive children by a `(label, index)` path, so the values a
//! component draws depend only on `(seed, path, draw counter)` and never on
//! scheduling or on how much randomness other components consumed. Two nodes
//! that derive the same path see the same values, which is how edge endpoints
//! agree on a shared projection without extra messages.
//!
//! The generator is ChaCha8 keyed by a SHA-256 hash of the seed and path, so
//! child streams are statistically unrelated to each other and to the parent.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::matrix::{vec_norm, Matrix};

const DOMAIN_TAG: &[u8] = b"powergossip.rng.v1";

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    path: Vec<(String, u64)>,
    chacha: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_path(seed, Vec::new())
    }

    fn with_path(seed: u64, path: Vec<(String, u64)>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(DOMAIN_TAG);
        hasher.update(seed.to_le_bytes());
        for (label, index) in &path {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
            hasher.update(index.to_le_bytes());
        }
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            seed,
            path,
            chacha: ChaCha8Rng::from_seed(key),
        }
    }

    /// Child stream at `(label, index)`. The child starts at position zero
    /// regardless of how much the parent has drawn.
    pub fn derive(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((label.to_string(), index));
        Self::with_path(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    pub fn next_u64(&mut self) -> u64 {
        self.chacha.next_u64()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.chacha.gen::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.chacha.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.standard_normal()).collect()
    }

    pub fn standard_normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = self.normal_vec(rows * cols);
        // Normal draws are always finite.
        Matrix::new(rows, cols, data).expect("normal draws are finite")
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.chacha.gen_range(0..n)
    }

    /// `k` distinct indices from `0..m`, returned in ascending order so that
    /// consumers accumulate in a stable order.
    pub fn sorted_sample(&mut self, m: usize, k: usize) -> Result<Vec<usize>> {
        if k > m {
            return Err(Error::invalid(format!(
                "cannot sample {k} distinct indices from 0..{m}"
            )));
        }
        let mut pool: Vec<usize> = (0..m).collect();
        for i in 0..k {
            let j = i + self.index(m - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        Ok(picked)
    }
}

/// Uniform sample from the unit sphere in `R^dim`: a normalized standard
/// normal vector. The returned norm is 1 up to 1e-12.
pub fn sample_unit_sphere(dim: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::invalid("unit sphere sample in dimension 0"));
    }
    loop {
        let v = rng.normal_vec(dim);
        let n = vec_norm(&v);
        // A norm this small has probability ~0; redraw rather than divide.
        if n > 1e-150 {
            return Ok(v.into_iter().map(|x| x / n).collect());
        }
    }
}
