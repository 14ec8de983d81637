//! Energy-ranked plus random frequency selection.

use serde::{Deserialize, Serialize};

use crate::hartley::Spectrum;
use crate::numerics::{Matrix, Rng};
use crate::{Error, Result};

/// How many positions to select and how they split between energy and chance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Total selected positions.
    pub n: usize,
    /// Energy ratio: `floor(delta * n)` positions come from the energy ranking.
    pub delta: f64,
    /// Seed for the random remainder.
    pub seed: u64,
}

impl SelectionConfig {
    pub fn new(n: usize, delta: f64, seed: u64) -> Self {
        Self { n, delta, seed }
    }

    /// Checks the config against a `d1 x d2` grid.
    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Contract(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if self.n == 0 {
            return Err(Error::Contract("n must be at least 1".into()));
        }
        let available = shape.0 * shape.1;
        if self.n > available {
            return Err(Error::Capacity {
                requested: self.n,
                available,
            });
        }
        Ok(())
    }

    /// `floor(delta * n)`. The 1e-9 slack absorbs binary representation
    /// error so that e.g. 0.29 * 100 counts as 29.
    pub fn energy_count(&self) -> usize {
        ((self.delta * self.n as f64 + 1e-9).floor() as usize).min(self.n)
    }

    pub fn random_count(&self) -> usize {
        self.n - self.energy_count()
    }
}

/// Selected frequency positions on a `d1 x d2` grid.
///
/// `energy_positions` are in rank order (highest energy first),
/// `random_positions` in draw order. The two lists are disjoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyMask {
    shape: (usize, usize),
    energy_positions: Vec<(usize, usize)>,
    random_positions: Vec<(usize, usize)>,
}

impl FrequencyMask {
    /// Builds a mask from explicit position lists, rejecting out-of-range or
    /// repeated positions.
    pub fn from_parts(
        shape: (usize, usize),
        energy_positions: Vec<(usize, usize)>,
        random_positions: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let (d1, d2) = shape;
        if d1 == 0 || d2 == 0 {
            return Err(Error::Dimension(format!("empty mask shape {d1}x{d2}")));
        }
        let mut seen = vec![false; d1 * d2];
        for &(u, v) in energy_positions.iter().chain(&random_positions) {
            if u >= d1 || v >= d2 {
                return Err(Error::Contract(format!("position ({u}, {v}) outside {d1}x{d2}")));
            }
            let idx = u * d2 + v;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::Contract(format!("position ({u}, {v}) selected twice")));
            }
        }
        Ok(Self {
            shape,
            energy_positions,
            random_positions,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.energy_positions.len() + self.random_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn energy_positions(&self) -> &[(usize, usize)] {
        &self.energy_positions
    }

    pub fn random_positions(&self) -> &[(usize, usize)] {
        &self.random_positions
    }

    /// All positions, energy set first. This is the canonical coefficient order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.energy_positions.iter().chain(&self.random_positions).copied()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.positions().any(|p| p == (u, v))
    }

    /// Dense 0/1 indicator.
    pub fn indicator(&self) -> Matrix {
        let mut m = Matrix::zeros(self.shape.0, self.shape.1);
        for (u, v) in self.positions() {
            m.set(u, v, 1.0);
        }
        m
    }

    /// FNV-1a over the ordered position list and shape, for audit trails.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.shape.0 as u64);
        h.write_u64(self.shape.1 as u64);
        h.write_u64(self.energy_positions.len() as u64);
        for (u, v) in self.positions() {
            h.write_u64(u as u64);
            h.write_u64(v as u64);
        }
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}

/// `E(u, v) = H(u, v)^2`.
pub fn energy_map(h: &Spectrum) -> Matrix {
    h.as_matrix().map(|x| x * x)
}

/// Row-major indices of the `k` highest-energy cells, highest first; ties go
/// to the lower index.
pub fn top_energy_indices(energy: &[f64], k: usize) -> Vec<usize> {
    let by_rank = |a: &usize, b: &usize| energy[*b].total_cmp(&energy[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..energy.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_rank);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_rank);
    idx
}

/// Chooses `cfg.n` positions from `h0`: the `floor(delta n)` highest-energy
/// cells, then the remainder uniformly without replacement from the rest.
pub fn select_frequencies(h0: &Spectrum, cfg: &SelectionConfig) -> Result<FrequencyMask> {
    let (d1, d2) = h0.shape();
    cfg.validate((d1, d2))?;
    let energy = energy_map(h0);
    let n_energy = cfg.energy_count();
    let n_random = cfg.random_count();

    let top = top_energy_indices(energy.as_slice(), n_energy);
    let mut taken = vec![false; d1 * d2];
    for &i in &top {
        taken[i] = true;
    }

    // Partial Fisher-Yates over the ascending complement.
    let mut pool: Vec<usize> = (0..d1 * d2).filter(|&i| !taken[i]).collect();
    let mut rng = Rng::new(cfg.seed);
    for i in 0..n_random {
        let j = i + rng.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(n_random);

    let to_pos = |i: usize| (i / d2, i % d2);
    Ok(FrequencyMask {
        shape: (d1, d2),
        energy_positions: top.into_iter().map(to_pos).collect(),
        random_positions: pool.into_iter().map(to_pos).collect(),
    })
}

/// Zeroes every entry outside the mask.
pub fn apply_mask(grad: &Spectrum, mask: &FrequencyMask) -> Result<Spectrum> {
    if grad.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "spectrum {:?} vs mask {:?}",
            grad.shape(),
            mask.shape()
        )));
    }
    let mut out = Spectrum::zeros(grad.rows(), grad.cols());
    for (u, v) in mask.positions() {
        out.set(u, v, grad.get(u, v));
    }
    Ok(out)
}
