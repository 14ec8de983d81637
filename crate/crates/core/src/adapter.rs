//! Spectral adapter layer and the LoRA baseline.
//!
//! An [`SshLayer`] keeps the base weight frozen and trains `n` Hartley
//! coefficients at the positions of its [`FrequencyMask`]. The effective
//! weight is
//!
//! ```text
//! W = W0 + alpha * idht2(M o dH)
//! ```
//!
//! and the exact gradient of a loss with respect to the stored coefficients is
//! `alpha / (d1 d2) * dht2(dL/dW)` gathered at the masked positions. The
//! `alpha / (d1 d2)` factor comes from the chain rule through the normalised
//! inverse transform.

use crate::hartley::{dht2, idht2, Spectrum};
use crate::numerics::{kaiming_init, matmul, Matrix, Rng};
use crate::spectrum::{select_frequencies, FrequencyMask, SelectionConfig};
use crate::{Error, Result};

/// The trainable coefficients `dH`, stored sparsely in mask order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDelta {
    shape: (usize, usize),
    positions: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl SpectralDelta {
    pub fn new(mask: &FrequencyMask, values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::Contract(format!(
                "{} coefficient values for a mask of {} positions",
                values.len(),
                mask.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("spectral coefficient is not finite".into()));
        }
        Ok(Self {
            shape: mask.shape(),
            positions: mask.positions().collect(),
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Scatter onto a dense `d1 x d2` grid, zeros elsewhere.
    pub fn densify(&self) -> Spectrum {
        let mut h = Spectrum::zeros(self.shape.0, self.shape.1);
        for (&(u, v), &x) in self.positions.iter().zip(&self.values) {
            h.set(u, v, x);
        }
        h
    }
}

/// Frozen base weight plus a sparse trainable Hartley delta.
///
/// Training methods take `&mut self`; callers serialise access per layer.
#[derive(Clone, Debug)]
pub struct SshLayer {
    w0: Matrix,
    mask: FrequencyMask,
    delta: SpectralDelta,
    alpha: f64,
    version: u64,
    cached_dw: Option<(u64, Matrix)>,
}

/// Selects frequencies from `dht2(w0)` and Kaiming-initialises the
/// coefficients with `fan_in = d2`.
pub fn ssh_init(w0: Matrix, cfg: &SelectionConfig, alpha: f64, init_rng: &mut Rng) -> Result<SshLayer> {
    let mask = select_frequencies(&dht2(&w0), cfg)?;
    let values = kaiming_init(init_rng, mask.len(), w0.cols())?;
    SshLayer::from_parts(w0, mask, values, alpha)
}

impl SshLayer {
    /// Assembles a layer from stored state (checkpoints, tests).
    pub fn from_parts(w0: Matrix, mask: FrequencyMask, values: Vec<f64>, alpha: f64) -> Result<Self> {
        if w0.shape() != mask.shape() {
            return Err(Error::Dimension(format!(
                "base weight {:?} vs mask {:?}",
                w0.shape(),
                mask.shape()
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::Numeric(format!("alpha = {alpha}")));
        }
        let delta = SpectralDelta::new(&mask, values)?;
        Ok(Self {
            w0,
            mask,
            delta,
            alpha,
            version: 0,
            cached_dw: None,
        })
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn mask(&self) -> &FrequencyMask {
        &self.mask
    }

    pub fn delta(&self) -> &SpectralDelta {
        &self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w0.shape()
    }

    pub fn trainable_params(&self) -> usize {
        self.delta.len()
    }

    /// Overwrites the coefficients (mask order) and invalidates the cache.
    pub fn set_coefficients(&mut self, values: Vec<f64>) -> Result<()> {
        self.delta = SpectralDelta::new(&self.mask, values)?;
        self.version += 1;
        Ok(())
    }

    fn has_delta(&self) -> bool {
        self.alpha != 0.0 && !self.delta.is_zero()
    }

    fn compute_delta_weight(&self) -> Matrix {
        idht2(&self.delta.densify()).scale(self.alpha)
    }

    /// Recomputes `alpha * idht2(densify(dH))` if the coefficients changed.
    fn refresh_cache(&mut self) {
        if !self.has_delta() {
            return;
        }
        let stale = !matches!(&self.cached_dw, Some((v, _)) if *v == self.version);
        if stale {
            self.cached_dw = Some((self.version, self.compute_delta_weight()));
        }
    }

    /// Memoised delta weight if the cache is current.
    pub fn cached_delta_weight(&self) -> Option<&Matrix> {
        match &self.cached_dw {
            Some((v, dw)) if *v == self.version => Some(dw),
            _ => None,
        }
    }

    /// `(W0 + alpha * idht2(dH)) * x`; `x` has `d2` rows, one column per sample.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.w0.cols() {
            return Err(Error::Dimension(format!(
                "input has {} rows, layer expects {}",
                x.rows(),
                self.w0.cols()
            )));
        }
        self.refresh_cache();
        match self.cached_delta_weight().filter(|_| self.has_delta()) {
            None => matmul(&self.w0, x),
            Some(dw) => matmul(&self.w0.add(dw)?, x),
        }
    }

    /// Effective weight; equals `W0` bit-for-bit when the delta is zero.
    pub fn merge_weights(&self) -> Matrix {
        if !self.has_delta() {
            return self.w0.clone();
        }
        let dw = match self.cached_delta_weight() {
            Some(dw) => dw.clone(),
            None => self.compute_delta_weight(),
        };
        self.w0.add(&dw).expect("delta weight shares the base shape")
    }

    /// Gradient with respect to the stored coefficients, in mask order, given
    /// `grad_w = dL/dW` of the effective weight.
    pub fn backward(&self, grad_w: &Matrix) -> Result<Vec<f64>> {
        if grad_w.shape() != self.w0.shape() {
            return Err(Error::Dimension(format!(
                "weight gradient {:?} vs layer {:?}",
                grad_w.shape(),
                self.w0.shape()
            )));
        }
        let (d1, d2) = self.w0.shape();
        let scale = self.alpha / (d1 * d2) as f64;
        let g = dht2(grad_w);
        Ok(self.delta.positions.iter().map(|&(u, v)| scale * g.get(u, v)).collect())
    }

    /// `dH <- dH - eta * grads`; the mask never changes.
    pub fn sgd_step(&mut self, grads: &[f64], eta: f64) -> Result<()> {
        if grads.len() != self.delta.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} coefficients",
                grads.len(),
                self.delta.len()
            )));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Contract(format!("learning rate must be >= 0, got {eta}")));
        }
        let updated: Vec<f64> = self.delta.values.iter().zip(grads).map(|(&h, &g)| h - eta * g).collect();
        if updated.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("coefficient update overflowed".into()));
        }
        self.delta.values = updated;
        self.version += 1;
        Ok(())
    }
}

/// `W = W0 + B A` with `B: d1 x r` (zero-initialised) and `A: r x d2`.
#[derive(Clone, Debug)]
pub struct LoraLayer {
    w0: Matrix,
    a: Matrix,
    b: Matrix,
}

pub fn lora_init(w0: Matrix, rank: usize, rng: &mut Rng) -> Result<LoraLayer> {
    let (d1, d2) = w0.shape();
    if rank == 0 || rank > d1.min(d2) {
        return Err(Error::Contract(format!(
            "LoRA rank {rank} outside 1..={} for a {d1}x{d2} weight",
            d1.min(d2)
        )));
    }
    let a = Matrix::new(rank, d2, kaiming_init(rng, rank * d2, d2)?)?;
    let b = Matrix::zeros(d1, rank);
    Ok(LoraLayer { w0, a, b })
}

/// Trainable parameters of one LoRA layer, `r (d1 + d2)`.
pub fn lora_param_count(d1: usize, d2: usize, rank: usize) -> usize {
    rank * (d1 + d2)
}

impl LoraLayer {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn trainable_params(&self) -> usize {
        lora_param_count(self.w0.rows(), self.w0.cols(), self.rank())
    }

    pub fn merge_weights(&self) -> Matrix {
        let ba = matmul(&self.b, &self.a).expect("factor shapes agree");
        self.w0.add(&ba).expect("delta shares the base shape")
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.w0.cols() {
            return Err(Error::Dimension(format!(
                "input has {} rows, layer expects {}",
                x.rows(),
                self.w0.cols()
            )));
        }
        matmul(&self.merge_weights(), x)
    }

    /// `(dL/dA, dL/dB) = (B^T G, G A^T)` for `G = dL/dW`.
    pub fn backward(&self, grad_w: &Matrix) -> Result<(Matrix, Matrix)> {
        if grad_w.shape() != self.w0.shape() {
            return Err(Error::Dimension(format!(
                "weight gradient {:?} vs layer {:?}",
                grad_w.shape(),
                self.w0.shape()
            )));
        }
        Ok((
            matmul(&self.b.transpose(), grad_w)?,
            matmul(grad_w, &self.a.transpose())?,
        ))
    }

    pub fn sgd_step(&mut self, grad_a: &Matrix, grad_b: &Matrix, eta: f64) -> Result<()> {
        let a = self.a.sub(&grad_a.scale(eta))?;
        let b = self.b.sub(&grad_b.scale(eta))?;
        if a.as_slice().iter().chain(b.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("LoRA update overflowed".into()));
        }
        self.a = a;
        self.b = b;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, Rng};
    use proptest::prelude::*;

    fn random_layer(seed: u64, d1: usize, d2: usize, n: usize, delta: f64, alpha: f64) -> SshLayer {
        let mut rng = Rng::new(seed);
        let w0 = Matrix::random_normal(&mut rng, d1, d2);
        ssh_init(w0, &SelectionConfig::new(n, delta, seed + 1), alpha, &mut rng).unwrap()
    }

    #[test]
    fn init_full_spectrum_and_tie_break() {
        let layer = random_layer(1, 3, 4, 12, 1.0, 1.0);
        assert_eq!(layer.mask().len(), 12);
        assert_eq!(layer.mask().indicator(), Matrix::filled(3, 4, 1.0));

        let layer = ssh_init(Matrix::zeros(4, 4), &SelectionConfig::new(4, 1.0, 0), 1.0, &mut Rng::new(0)).unwrap();
        assert_eq!(layer.mask().energy_positions(), &[(0, 0), (0, 1), (0, 2), (0, 3)]);
        assert!(layer.cached_delta_weight().is_none());
    }

    #[test]
    fn init_768_square_with_750_coefficients() {
        let mut rng = Rng::new(5);
        let w0 = Matrix::random_normal(&mut rng, 768, 768);
        let layer = ssh_init(w0, &SelectionConfig::new(750, 0.7, 5), 300.0, &mut rng).unwrap();
        assert_eq!(layer.trainable_params(), 750);
        assert_eq!(layer.delta().values().len(), 750);
        let bound = (6.0f64 / 768.0).sqrt();
        assert!(layer.delta().values().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_delta_and_zero_alpha_are_transparent() {
        let mut rng = Rng::new(2);
        let x = Matrix::random_normal(&mut rng, 6, 3);
        let mut layer = random_layer(2, 5, 6, 7, 0.5, 2.0);
        layer.set_coefficients(vec![0.0; 7]).unwrap();
        let base = matmul(layer.w0(), &x).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), base);
        assert_eq!(layer.merge_weights(), *layer.w0());

        let mut layer = random_layer(2, 5, 6, 7, 0.5, 0.0);
        assert_eq!(layer.forward(&x).unwrap(), base);
    }

    #[test]
    fn dc_coefficient_adds_constant() {
        let mut rng = Rng::new(3);
        let w0 = Matrix::random_normal(&mut rng, 4, 5);
        let mask = FrequencyMask::from_parts((4, 5), vec![(0, 0)], vec![]).unwrap();
        let mut layer = SshLayer::from_parts(w0.clone(), mask, vec![1.0], 1.0).unwrap();
        let x = Matrix::random_normal(&mut rng, 5, 2);
        let expected = matmul(&w0.add(&Matrix::filled(4, 5, 1.0 / 20.0)).unwrap(), &x).unwrap();
        assert!(layer.forward(&x).unwrap().sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn forward_shape_error() {
        let mut layer = random_layer(4, 3, 4, 2, 0.5, 1.0);
        assert!(matches!(layer.forward(&Matrix::zeros(3, 1)), Err(Error::Dimension(_))));
        assert!(layer.backward(&Matrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn cache_tracks_updates() {
        let mut layer = random_layer(5, 6, 6, 5, 0.4, 1.5);
        let x = Matrix::identity(6);
        layer.forward(&x).unwrap();
        let cached = layer.cached_delta_weight().unwrap().clone();
        assert_eq!(cached, layer.compute_delta_weight());
        layer.sgd_step(&[1.0; 5], 0.1).unwrap();
        assert!(layer.cached_delta_weight().is_none());
        let y = layer.forward(&x).unwrap();
        assert_eq!(y, layer.merge_weights());
        assert_ne!(layer.cached_delta_weight().unwrap(), &cached);
    }

    #[test]
    fn backward_zero_and_all_ones() {
        let layer = random_layer(6, 4, 6, 24, 1.0, 1.0);
        assert!(layer.backward(&Matrix::zeros(4, 6)).unwrap().iter().all(|&g| g == 0.0));

        // L = sum W: grad_w = ones, dht2(ones) = d1 d2 at DC and 0 elsewhere
        let grads = layer.backward(&Matrix::filled(4, 6, 1.0)).unwrap();
        for ((u, v), g) in layer.mask().positions().zip(grads) {
            let expected = if (u, v) == (0, 0) { 1.0 } else { 0.0 };
            assert!((g - expected).abs() < 1e-14, "({u},{v}) {g}");
        }
    }

    fn quadratic_loss(weights: &Matrix, target: &Matrix, w: &Matrix) -> f64 {
        let d = w.sub(target).unwrap();
        0.5 * weights.hadamard(&d).unwrap().hadamard(&d).unwrap().sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(7);
        for &n in &[1, 8, 32, 64] {
            let layer = random_layer(7 + n as u64, 8, 8, n, 0.5, 3.0);
            let target = Matrix::random_normal(&mut rng, 8, 8);
            let weights = Matrix::random_uniform(&mut rng, 8, 8, 0.5, 2.0);
            let w = layer.merge_weights();
            let grad_w = weights.hadamard(&w.sub(&target).unwrap()).unwrap();
            let analytic = layer.backward(&grad_w).unwrap();

            let at = Matrix::new(1, n, layer.delta().values().to_vec()).unwrap();
            let mut probe = layer.clone();
            let numeric = finite_diff_grad(
                |c| {
                    probe.set_coefficients(c.as_slice().to_vec()).unwrap();
                    quadratic_loss(&weights, &target, &probe.merge_weights())
                },
                &at,
                1e-5,
            )
            .unwrap();
            for (a, f) in analytic.iter().zip(numeric.as_slice()) {
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-8);
                assert!(rel < 1e-5, "n={n}: analytic {a} numeric {f}");
            }
        }
    }

    #[test]
    fn sgd_step_contracts() {
        let mut layer = random_layer(8, 4, 4, 5, 0.6, 1.0);
        let before = layer.delta().clone();
        layer.sgd_step(&[0.0; 5], 0.3).unwrap();
        assert_eq!(layer.delta(), &before);
        assert!(layer.sgd_step(&[0.0; 4], 0.3).is_err());
        assert!(layer.sgd_step(&[0.0; 5], -1.0).is_err());

        let grads = [0.5, -1.0, 2.0, 0.25, -0.75];
        let mut one = layer.clone();
        let mut three = layer.clone();
        one.sgd_step(&grads, 0.1).unwrap();
        three.sgd_step(&grads, 0.3).unwrap();
        for i in 0..5 {
            let d1 = one.delta().values()[i] - before.values()[i];
            let d3 = three.delta().values()[i] - before.values()[i];
            assert!((d3 - 3.0 * d1).abs() < 1e-15);
        }
        assert_eq!(one.mask(), layer.mask());
    }

    #[test]
    fn one_step_moves_toward_planted_target() {
        let mut rng = Rng::new(9);
        let (d1, d2) = (6, 6);
        let mut layer = random_layer(9, d1, d2, 10, 0.5, 1.0);
        let target_coeffs: Vec<f64> = (0..10).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let target_delta = SpectralDelta::new(layer.mask(), target_coeffs.clone()).unwrap();
        let w_star = layer.w0().add(&idht2(&target_delta.densify())).unwrap();

        let dist = |l: &SshLayer| -> Vec<f64> {
            l.delta().values().iter().zip(&target_coeffs).map(|(a, b)| (a - b).abs()).collect()
        };
        let before = dist(&layer);
        let grad_w = layer.merge_weights().sub(&w_star).unwrap();
        let grads = layer.backward(&grad_w).unwrap();
        // Hessian is I / (d1 d2) on the mask; any eta below 2 d1 d2 contracts.
        layer.sgd_step(&grads, 0.5 * (d1 * d2) as f64).unwrap();
        for (b, a) in before.iter().zip(dist(&layer)) {
            assert!(a < *b || *b == 0.0);
        }
    }

    #[test]
    fn full_mask_reproduces_any_delta() {
        let mut rng = Rng::new(10);
        let (d1, d2) = (5, 7);
        let mut layer = random_layer(10, d1, d2, d1 * d2, 1.0, 1.0);
        let target = Matrix::random_normal(&mut rng, d1, d2);
        let h = dht2(&target);
        let coeffs = layer.mask().positions().map(|(u, v)| h.get(u, v)).collect();
        layer.set_coefficients(coeffs).unwrap();
        let merged = layer.merge_weights();
        let expected = layer.w0().add(&target).unwrap();
        assert!(merged.sub(&expected).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn merge_matches_forward() {
        let mut rng = Rng::new(11);
        for &(d1, d2) in &[(3, 3), (4, 7), (8, 5)] {
            let mut layer = random_layer(11, d1, d2, d1 * d2 / 2, 0.5, 2.0);
            let x = Matrix::random_normal(&mut rng, d2, 4);
            let y = layer.forward(&x).unwrap();
            let via_merge = matmul(&layer.merge_weights(), &x).unwrap();
            assert!(y.sub(&via_merge).unwrap().max_abs() <= 1e-12);
        }
    }

    #[test]
    fn lora_baseline() {
        let mut rng = Rng::new(12);
        let w0 = Matrix::random_normal(&mut rng, 6, 8);
        let layer = lora_init(w0.clone(), 2, &mut rng).unwrap();
        let x = Matrix::random_normal(&mut rng, 8, 3);
        assert_eq!(layer.forward(&x).unwrap(), matmul(&w0, &x).unwrap());
        assert_eq!(layer.trainable_params(), 28);
        assert!(lora_init(w0.clone(), 0, &mut rng).is_err());
        assert!(lora_init(w0, 7, &mut rng).is_err());
        assert_eq!(lora_param_count(768, 768, 4) * 24, 147_456);
        assert_eq!(lora_param_count(4096, 4096, 16) * 64, 8_388_608);
    }

    #[test]
    fn lora_backward_matches_finite_differences() {
        let mut rng = Rng::new(13);
        let w0 = Matrix::random_normal(&mut rng, 4, 5);
        let mut layer = lora_init(w0, 2, &mut rng).unwrap();
        layer.b = Matrix::random_normal(&mut rng, 4, 2);
        let target = Matrix::random_normal(&mut rng, 4, 5);
        let loss = |l: &LoraLayer| 0.5 * l.merge_weights().sub(&target).unwrap().sum_squares();
        let grad_w = layer.merge_weights().sub(&target).unwrap();
        let (ga, gb) = layer.backward(&grad_w).unwrap();

        let mut probe = layer.clone();
        let na = finite_diff_grad(|a| { probe.a = a.clone(); loss(&probe) }, &layer.a, 1e-5).unwrap();
        let mut probe = layer.clone();
        let nb = finite_diff_grad(|b| { probe.b = b.clone(); loss(&probe) }, &layer.b, 1e-5).unwrap();
        assert!(ga.sub(&na).unwrap().max_abs() < 1e-7);
        assert!(gb.sub(&nb).unwrap().max_abs() < 1e-7);
        layer.sgd_step(&ga, &gb, 0.01).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn frozen_base_and_support(seed in any::<u64>(), steps in 1usize..20) {
            let mut rng = Rng::new(seed);
            let mut layer = random_layer(seed, 6, 5, 9, 0.5, 1.7);
            let w0 = layer.w0().clone();
            for _ in 0..steps {
                let x = Matrix::random_normal(&mut rng, 5, 2);
                layer.forward(&x).unwrap();
                let g = layer.backward(&Matrix::random_normal(&mut rng, 6, 5)).unwrap();
                layer.sgd_step(&g, rng.uniform(0.0, 2.0)).unwrap();
            }
            prop_assert_eq!(layer.w0(), &w0);
            let dense = layer.delta().densify();
            let ind = layer.mask().indicator();
            for (h, m) in dense.as_slice().iter().zip(ind.as_slice()) {
                prop_assert!(*m == 1.0 || *h == 0.0);
            }
        }
    }
}
