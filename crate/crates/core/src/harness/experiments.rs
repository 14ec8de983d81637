//! Training experiments: planted recovery, toy regression/classification,
//! energy-ratio sweeps and gradient checks.

use serde::Serialize;

use super::config::{stable_step_bound, Baseline, ExperimentConfig, Placement, Task};
use crate::adapter::{lora_init, ssh_init, LoraLayer, SpectralDelta, SshLayer};
use crate::hartley::{dht2, idht2};
use crate::numerics::{finite_diff_grad, matmul, Matrix, Rng};
use crate::spectrum::{energy_map, top_energy_indices, FrequencyMask, SelectionConfig};
use crate::{Error, Result};

/// Consecutive loss increases that abort a run.
pub const DIVERGENCE_STREAK: usize = 10;

/// Consecutive stalled epochs after which training stops early.
pub const STALL_PATIENCE: usize = 10;

/// Loss changes below this fraction of the previous loss count as a stall
/// (a plateau at a nonzero floor) and are not counted as increases.
pub const STALL_RELATIVE: f64 = 1e-13;

/// A loss this far below the initial loss counts as stalled at zero.
pub const CONVERGED_LOSS_RATIO: f64 = 1e-24;

/// Relative error above which a gradient check fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Finite-difference step used by the gradient check. The check losses are
/// exactly quadratic in the coefficients, so central differences carry no
/// truncation error and a larger step only shrinks the rounding term, which
/// at 1e-5 reaches 1e-4 relative on coefficients whose gradient is ~1e-5 of
/// the largest.
pub const GRADCHECK_EPSILON: f64 = 1e-3;

// RNG stream tags, one per independent random source of a run.
const STREAM_BASE: u64 = 0;
const STREAM_PLANT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_DATA: u64 = 3;
const STREAM_BASELINE: u64 = 4;

/// A frozen base weight and a target that differs from it by a sparse
/// Hartley perturbation, `W* = W0 + alpha * idht2(dH*)`.
#[derive(Clone, Debug)]
pub struct PlantedProblem {
    pub w0: Matrix,
    pub w_star: Matrix,
    pub support: Vec<(usize, usize)>,
    pub coefficients: Vec<f64>,
}

pub fn build_planted(cfg: &ExperimentConfig) -> Result<PlantedProblem> {
    let (d1, d2) = cfg.shape;
    let w0 = Matrix::random_normal(&mut Rng::derived(cfg.seed, STREAM_BASE), d1, d2);
    let h0 = dht2(&w0);
    let mut rng = Rng::derived(cfg.seed, STREAM_PLANT);
    let m = cfg.planted.support;

    let support: Vec<(usize, usize)> = match cfg.planted.placement {
        Placement::TopEnergy => top_energy_indices(energy_map(&h0).as_slice(), m)
            .into_iter()
            .map(|i| (i / d2, i % d2))
            .collect(),
        Placement::Random => {
            let mut pool: Vec<usize> = (0..d1 * d2).collect();
            for i in 0..m {
                let j = i + rng.below((pool.len() - i) as u64) as usize;
                pool.swap(i, j);
            }
            pool[..m].iter().map(|&i| (i / d2, i % d2)).collect()
        }
    };

    let coefficients: Vec<f64> = support
        .iter()
        .map(|&(u, v)| {
            let magnitude = cfg.planted.scale * rng.uniform(1.0, 2.0);
            let sign = match cfg.planted.placement {
                // same sign as H0 (scaled by alpha) so the cell's energy only grows
                Placement::TopEnergy => (h0.get(u, v) * cfg.alpha).signum(),
                Placement::Random => {
                    if rng.next_u64() & 1 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            if sign == 0.0 {
                magnitude
            } else {
                sign * magnitude
            }
        })
        .collect();

    let planted_mask = FrequencyMask::from_parts((d1, d2), support.clone(), Vec::new())?;
    let delta = SpectralDelta::new(&planted_mask, coefficients.clone())?;
    let w_star = w0.add(&idht2(&delta.densify()).scale(cfg.alpha))?;
    Ok(PlantedProblem {
        w0,
        w_star,
        support,
        coefficients,
    })
}

/// Fraction of the planted support covered by `mask`.
pub fn support_capture(mask: &FrequencyMask, support: &[(usize, usize)]) -> f64 {
    let hits = support.iter().filter(|&&(u, v)| mask.contains(u, v)).count();
    hits as f64 / support.len() as f64
}

/// Loss a masked learner cannot go below on the planted quadratic: the
/// energy of the planted cells outside the mask, `alpha^2 / (2 d1 d2) * sum dH*^2`.
pub fn planted_floor(problem: &PlantedProblem, mask: &FrequencyMask, alpha: f64) -> f64 {
    let (d1, d2) = mask.shape();
    let missed: f64 = problem
        .support
        .iter()
        .zip(&problem.coefficients)
        .filter(|(&(u, v), _)| !mask.contains(u, v))
        .fold(0.0, |acc, (_, c)| acc + c * c);
    0.5 * alpha * alpha * missed / (d1 * d2) as f64
}

/// What the loss is measured against.
enum Objective {
    Planted { w_star: Matrix },
    Regression { x: Matrix, y: Matrix },
    Classification { x: Matrix, labels: Vec<usize> },
}

impl Objective {
    /// `(loss, dL/dW)` at weight `w`.
    fn evaluate(&self, w: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            Objective::Planted { w_star } => {
                let diff = w.sub(w_star)?;
                Ok((0.5 * diff.sum_squares(), diff))
            }
            Objective::Regression { x, y } => {
                let b = x.cols() as f64;
                let residual = matmul(w, x)?.sub(y)?;
                let grad = matmul(&residual, &x.transpose())?.scale(1.0 / b);
                Ok((0.5 * residual.sum_squares() / b, grad))
            }
            Objective::Classification { x, labels } => {
                let b = x.cols();
                let logits = matmul(w, x)?;
                let classes = logits.rows();
                let mut dlogits = Matrix::zeros(classes, b);
                let mut loss = 0.0;
                for (j, &label) in labels.iter().enumerate() {
                    let max = (0..classes).map(|c| logits.get(c, j)).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = (0..classes).map(|c| (logits.get(c, j) - max).exp()).sum();
                    for c in 0..classes {
                        let p = (logits.get(c, j) - max).exp() / z;
                        let target = if c == label { 1.0 } else { 0.0 };
                        dlogits.set(c, j, (p - target) / b as f64);
                    }
                    loss -= logits.get(label, j) - max - z.ln();
                }
                Ok((loss / b as f64, matmul(&dlogits, &x.transpose())?))
            }
        }
    }

    fn accuracy(&self, w: &Matrix) -> Result<Option<f64>> {
        let Objective::Classification { x, labels } = self else {
            return Ok(None);
        };
        let logits = matmul(w, x)?;
        let correct = labels.iter().enumerate().filter(|&(j, &l)| argmax_column(&logits, j) == l).count();
        Ok(Some(correct as f64 / labels.len() as f64))
    }
}

fn argmax_column(m: &Matrix, j: usize) -> usize {
    (0..m.rows()).fold(0, |best, c| if m.get(c, j) > m.get(best, j) { c } else { best })
}

/// Anything trained by plain gradient descent on `dL/dW`.
enum Learner {
    Ssh(SshLayer),
    Lora(LoraLayer),
    Full(Matrix),
}

impl Learner {
    fn weight(&self) -> Matrix {
        match self {
            Learner::Ssh(l) => l.merge_weights(),
            Learner::Lora(l) => l.merge_weights(),
            Learner::Full(w) => w.clone(),
        }
    }

    fn step(&mut self, grad_w: &Matrix, eta: f64) -> Result<()> {
        match self {
            Learner::Ssh(l) => {
                let g = l.backward(grad_w)?;
                l.sgd_step(&g, eta)
            }
            Learner::Lora(l) => {
                let (ga, gb) = l.backward(grad_w)?;
                l.sgd_step(&ga, &gb, eta)
            }
            Learner::Full(w) => {
                *w = w.sub(&grad_w.scale(eta))?;
                Ok(())
            }
        }
    }

    fn trainable_params(&self) -> usize {
        match self {
            Learner::Ssh(l) => l.trainable_params(),
            Learner::Lora(l) => l.trainable_params(),
            Learner::Full(w) => w.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// Number of descent steps taken before this measurement.
    pub epoch: usize,
    pub loss: f64,
    /// `||W - W*||_F`.
    pub error: f64,
}

/// Full-batch descent with the divergence guard and early stop on stall.
fn train(
    learner: &mut Learner,
    objective: &Objective,
    w_star: &Matrix,
    eta: f64,
    epochs: usize,
) -> Result<Vec<EpochRecord>> {
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut rising = 0;
    let mut stalled = 0;
    for epoch in 0..=epochs {
        let w = learner.weight();
        let (loss, grad) = objective.evaluate(&w)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                streak: rising,
                loss,
            });
        }
        let error = w.sub(w_star)?.frobenius_norm();
        if let (Some(first), Some(prev)) = (history.first(), history.last()) {
            let (initial, prev) = (first.loss, prev.loss);
            let change = loss - prev;
            let noise = STALL_RELATIVE * prev.abs();
            let at_zero = loss <= CONVERGED_LOSS_RATIO * initial;
            rising = if change > noise { rising + 1 } else { 0 };
            stalled = if at_zero || change.abs() <= noise { stalled + 1 } else { 0 };
        }
        history.push(EpochRecord { epoch, loss, error });
        if rising >= DIVERGENCE_STREAK {
            return Err(Error::Diverged {
                epoch,
                streak: rising,
                loss,
            });
        }
        if epoch == epochs || stalled >= STALL_PATIENCE {
            break;
        }
        learner.step(&grad, eta)?;
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub kind: String,
    pub trainable_params: usize,
    pub eta: f64,
    pub final_loss: Option<f64>,
    pub final_error: Option<f64>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub task: Task,
    pub shape: (usize, usize),
    pub n: usize,
    pub delta: f64,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
    pub epochs_run: usize,
    pub trainable_params: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_error: f64,
    pub support_size: usize,
    pub support_captured: f64,
    pub mask_fingerprint: String,
    /// Mask contains the whole planted support.
    pub recoverable: bool,
    /// Best reachable planted loss for this mask (planted task only).
    pub predicted_floor: Option<f64>,
    pub accuracy: Option<f64>,
    pub baseline: Option<BaselineSummary>,
    pub passed: bool,
    pub check: String,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub summary: RunSummary,
    pub history: Vec<EpochRecord>,
    pub layer: SshLayer,
}

/// Largest eigenvalue of `X X^T / b` by power iteration.
fn input_curvature(x: &Matrix) -> Result<f64> {
    let gram = matmul(x, &x.transpose())?.scale(1.0 / x.cols() as f64);
    let mut v = Matrix::filled(gram.rows(), 1, 1.0);
    let mut lambda = 0.0;
    for _ in 0..100 {
        let next = matmul(&gram, &v)?;
        let norm = next.frobenius_norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        lambda = norm / v.frobenius_norm();
        v = next.scale(1.0 / norm);
    }
    Ok(lambda)
}

/// Planted recovery: train an SSH layer on `1/2 ||W - W*||_F^2`.
pub fn run_planted_recovery(cfg: &ExperimentConfig) -> Result<RunResult> {
    let mut cfg = cfg.clone();
    cfg.task = Task::PlantedRecovery;
    run_experiment(&cfg)
}

/// Runs `cfg.task` and, if configured, the baseline on the same problem.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (d1, d2) = cfg.shape;
    let problem = build_planted(cfg)?;

    let (objective, curvature) = match cfg.task {
        Task::PlantedRecovery => (
            Objective::Planted {
                w_star: problem.w_star.clone(),
            },
            1.0,
        ),
        Task::Regression | Task::ClassificationToy => {
            let x = Matrix::random_normal(&mut Rng::derived(cfg.seed, STREAM_DATA), d2, cfg.batch);
            let y = matmul(&problem.w_star, &x)?;
            let curvature = input_curvature(&x)?;
            let objective = if cfg.task == Task::Regression {
                Objective::Regression { x, y }
            } else {
                let labels = (0..cfg.batch).map(|j| argmax_column(&y, j)).collect();
                Objective::Classification { x, labels }
            };
            (objective, curvature)
        }
    };
    let eta = match cfg.eta {
        Some(eta) => eta,
        None => 0.25 * stable_step_bound(cfg.alpha, d1, d2) / curvature.max(f64::MIN_POSITIVE),
    };

    let layer = ssh_init(
        problem.w0.clone(),
        &cfg.selection,
        cfg.alpha,
        &mut Rng::derived(cfg.seed, STREAM_INIT),
    )?;
    let mask = layer.mask().clone();
    let mut learner = Learner::Ssh(layer);
    let trainable = learner.trainable_params();
    let history = train(&mut learner, &objective, &problem.w_star, eta, cfg.epochs)?;
    let Learner::Ssh(layer) = learner else {
        unreachable!("learner is the SSH layer")
    };

    let first = history.first().expect("at least one epoch recorded");
    let last = history.last().expect("at least one epoch recorded");
    let capture = support_capture(&mask, &problem.support);
    let recoverable = capture == 1.0;
    let predicted_floor = (cfg.task == Task::PlantedRecovery).then(|| planted_floor(&problem, &mask, cfg.alpha));
    let accuracy = objective.accuracy(&layer.merge_weights())?;

    let (passed, check) = match cfg.task {
        _ if eta == 0.0 => {
            let constant = history.iter().all(|r| r.loss == first.loss);
            (constant, "zero step keeps the loss constant".to_string())
        }
        Task::PlantedRecovery if recoverable => (
            last.error <= cfg.tolerance,
            format!("final error {:.3e} <= tolerance {:.1e}", last.error, cfg.tolerance),
        ),
        Task::PlantedRecovery => {
            let floor = predicted_floor.unwrap_or(0.0);
            let gap = (last.loss - floor).abs();
            (
                gap <= 1e-6 * first.loss.max(floor),
                format!("final loss {:.6e} vs predicted floor {:.6e}", last.loss, floor),
            )
        }
        _ => (
            last.loss < first.loss,
            format!("loss decreased from {:.6e} to {:.6e}", first.loss, last.loss),
        ),
    };

    let baseline = run_baseline(cfg, &problem, &objective, curvature)?;

    Ok(RunResult {
        summary: RunSummary {
            task: cfg.task,
            shape: cfg.shape,
            n: cfg.selection.n,
            delta: cfg.selection.delta,
            alpha: cfg.alpha,
            eta,
            seed: cfg.seed,
            epochs_run: last.epoch,
            trainable_params: trainable,
            initial_loss: first.loss,
            final_loss: last.loss,
            final_error: last.error,
            support_size: problem.support.len(),
            support_captured: capture,
            mask_fingerprint: format!("{:016x}", mask.fingerprint()),
            recoverable,
            predicted_floor,
            accuracy,
            baseline,
            passed,
            check,
        },
        history,
        layer,
    })
}

fn run_baseline(
    cfg: &ExperimentConfig,
    problem: &PlantedProblem,
    objective: &Objective,
    curvature: f64,
) -> Result<Option<BaselineSummary>> {
    let curvature = curvature.max(f64::MIN_POSITIVE);
    let (kind, mut learner, eta) = match cfg.baseline {
        Baseline::None => return Ok(None),
        Baseline::Full => ("full".to_string(), Learner::Full(problem.w0.clone()), 0.5 / curvature),
        Baseline::Lora(r) => {
            let layer = lora_init(problem.w0.clone(), r, &mut Rng::derived(cfg.seed, STREAM_BASELINE))?;
            // the B-gradient is scaled by A A^T; keep the step below its inverse
            let a_scale = 1.0 + layer.a().sum_squares();
            (format!("lora-r{r}"), Learner::Lora(layer), 0.5 / (curvature * a_scale))
        }
    };
    let trainable_params = learner.trainable_params();
    let summary = match train(&mut learner, objective, &problem.w_star, eta, cfg.epochs) {
        Ok(history) => {
            let last = history.last().expect("at least one epoch recorded");
            BaselineSummary {
                kind,
                trainable_params,
                eta,
                final_loss: Some(last.loss),
                final_error: Some(last.error),
                diverged: false,
            }
        }
        Err(Error::Diverged { .. }) => BaselineSummary {
            kind,
            trainable_params,
            eta,
            final_loss: None,
            final_error: None,
            diverged: true,
        },
        Err(e) => return Err(e),
    };
    Ok(Some(summary))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub delta: f64,
    pub n_energy: usize,
    pub final_error: f64,
    pub final_loss: f64,
    pub support_captured: f64,
    pub mask_fingerprint: String,
}

/// Planted recovery at each energy ratio, sharing seed and budget.
/// Points run on separate threads; rows come back sorted by `delta`.
pub fn run_delta_sweep(base: &ExperimentConfig, deltas: &[f64]) -> Result<Vec<SweepRow>> {
    if let Some(bad) = deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::Config(format!("delta {bad} outside [0, 1]")));
    }
    let results: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = deltas
            .iter()
            .map(|&delta| {
                scope.spawn(move || {
                    let mut cfg = base.clone();
                    cfg.selection.delta = delta;
                    let run = run_planted_recovery(&cfg)?;
                    Ok(SweepRow {
                        seed: cfg.seed,
                        delta,
                        n_energy: cfg.selection.energy_count(),
                        final_error: run.summary.final_error,
                        final_loss: run.summary.final_loss,
                        support_captured: run.summary.support_captured,
                        mask_fingerprint: run.summary.mask_fingerprint,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    Ok(rows)
}

/// Mean support capture per distinct `delta`, in ascending `delta` order.
pub fn mean_capture_by_delta(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let mut means: Vec<(f64, f64, usize)> = Vec::new();
    for r in sorted {
        match means.last_mut() {
            Some((d, sum, count)) if *d == r.delta => {
                *sum += r.support_captured;
                *count += 1;
            }
            _ => means.push((r.delta, r.support_captured, 1)),
        }
    }
    means.into_iter().map(|(d, sum, count)| (d, sum / count as f64)).collect()
}

/// Mean support capture never drops as `delta` grows.
pub fn capture_is_monotone(rows: &[SweepRow]) -> bool {
    mean_capture_by_delta(rows).windows(2).all(|w| w[1].1 >= w[0].1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub shape: (usize, usize),
    pub n: usize,
    pub trial: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<GradcheckCase>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Components this far below the layer's largest gradient are compared on
/// the largest gradient's scale; their own relative error is pure rounding.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// `|a - f| / max(|a|, |f|, GRADCHECK_FLOOR * scale, 1e-300)`, where `scale`
/// is the largest analytic gradient magnitude in the layer.
pub fn relative_gap(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR * scale).max(1e-300);
    (analytic - numeric).abs() / denom
}

/// Budgets checked per shape: 1, 8, half and all of the cells (deduplicated).
pub fn gradcheck_budgets(d1: usize, d2: usize) -> Vec<usize> {
    let total = d1 * d2;
    let mut ns: Vec<usize> = [1, 8, total / 2, total].into_iter().filter(|&n| n >= 1 && n <= total).collect();
    ns.sort_unstable();
    ns.dedup();
    ns
}

/// Compares [`SshLayer::backward`] with central differences on random layers
/// and random weighted quadratic losses.
pub fn run_gradcheck(shapes: &[(usize, usize)], trials: usize, seed: u64) -> Result<GradcheckReport> {
    if let Some(&(d1, d2)) = shapes.iter().find(|&&(d1, d2)| d1 == 0 || d2 == 0 || d1 > 16 || d2 > 16) {
        return Err(Error::Contract(format!("gradcheck shapes must be within 16x16, got {d1}x{d2}")));
    }
    let mut rng = Rng::new(seed);
    let mut cases = Vec::new();
    for &(d1, d2) in shapes {
        for trial in 0..trials {
            for n in gradcheck_budgets(d1, d2) {
                let w0 = Matrix::random_normal(&mut rng, d1, d2);
                let cfg = SelectionConfig::new(n, rng.next_f64(), rng.next_u64());
                let alpha = rng.uniform(0.5, 4.0);
                let mut layer = ssh_init(w0, &cfg, alpha, &mut rng)?;
                layer.set_coefficients((0..n).map(|_| rng.normal()).collect())?;

                let target = Matrix::random_normal(&mut rng, d1, d2);
                let weights = Matrix::random_uniform(&mut rng, d1, d2, 0.5, 2.0);
                let loss = |w: &Matrix| {
                    let d = w.sub(&target).expect("same shape");
                    0.5 * weights.hadamard(&d).expect("same shape").hadamard(&d).expect("same shape").sum()
                };
                let w = layer.merge_weights();
                let grad_w = weights.hadamard(&w.sub(&target)?)?;
                let analytic = layer.backward(&grad_w)?;

                let at = Matrix::new(1, n, layer.delta().values().to_vec())?;
                let mut probe = layer.clone();
                let numeric = finite_diff_grad(
                    |c| {
                        probe.set_coefficients(c.as_slice().to_vec()).expect("same length");
                        loss(&probe.merge_weights())
                    },
                    &at,
                    GRADCHECK_EPSILON,
                )?;
                let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                let worst = analytic
                    .iter()
                    .zip(numeric.as_slice())
                    .map(|(&a, &f)| relative_gap(a, f, scale))
                    .fold(0.0, f64::max);
                cases.push(GradcheckCase {
                    shape: (d1, d2),
                    n,
                    trial,
                    max_relative_error: worst,
                });
            }
        }
    }
    let max_relative_error = cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        passed: max_relative_error <= GRADCHECK_TOLERANCE,
        cases,
        max_relative_error,
        tolerance: GRADCHECK_TOLERANCE,
    })
}
