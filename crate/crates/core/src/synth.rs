//! Synthetic multi-task regression benchmark: linear models `yᵀ = xᵀ·U·A + ε`
//! whose task-structure matrix `A` has a controlled support ratio.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::sym_eig;
use crate::model::Dataset;
use crate::scalar::Real;

/// Independent random streams, so that each component of an instance only
/// depends on the seed and on the sizes it is drawn with.
#[derive(Clone, Copy)]
enum Stream {
    Basis = 1,
    Pattern = 2,
    Values = 3,
    Corruption = 4,
    TrainInputs = 5,
    TrainNoise = 6,
    TestInputs = 7,
    TestNoise = 8,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Input dimension.
    pub d: usize,
    #[serde(alias = "T")]
    pub tasks: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of the `T²` entries of `A` that are nonzero, diagonal included.
    pub support_ratio: f64,
    /// Variance of the output noise.
    pub noise_var: f64,
    pub seed: u64,
    /// Perturb every entry of `A` before generating outputs.
    pub corrupt: bool,
    /// Largest entry of `A` before corruption.
    pub peak: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 100,
            tasks: 10,
            n_train: 50,
            n_test: 100,
            support_ratio: 0.5,
            noise_var: 0.1,
            seed: 0,
            corrupt: true,
            peak: 1.0,
        }
    }
}

impl SynthConfig {
    /// Number of nonzero entries of the generated `A`: the diagonal plus
    /// `⌊(round(ratio·T²) − T)/2⌋` symmetric off-diagonal pairs.
    pub fn support_size(&self) -> usize {
        let t = self.tasks;
        let target = (self.support_ratio * (t * t) as f64).round() as usize;
        t + 2 * ((target.saturating_sub(t)) / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(invalid("tasks and sample counts must be positive"));
        }
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return Err(invalid(format!("peak must be positive, got {}", self.peak)));
        }
        if !(self.support_ratio > 0.0 && self.support_ratio <= 1.0) {
            return Err(invalid(format!("support ratio must lie in (0, 1], got {}", self.support_ratio)));
        }
        if self.d < self.tasks {
            return Err(invalid(format!(
                "input dimension {} is smaller than the task count {}",
                self.d, self.tasks
            )));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(invalid("noise variance must be nonnegative"));
        }
        let t = self.tasks as f64;
        if (self.support_ratio * t * t).round() < t {
            return Err(invalid(format!(
                "support ratio {} cannot cover the diagonal of {} tasks",
                self.support_ratio, self.tasks
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthInstance<T: Real> {
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    /// Sparse PSD structure before corruption.
    pub a_true: DMatrix<T>,
    /// The matrix actually used to generate outputs.
    pub a_corrupted: DMatrix<T>,
    /// `d × T` with orthonormal columns.
    pub u: DMatrix<T>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Symmetric sparse PSD matrix with exactly `cfg.support_size()` nonzeros.
///
/// Gaussian values on a random symmetric pattern (diagonal always present),
/// then the diagonal is shifted by the magnitude of the most negative
/// eigenvalue plus a margin, which keeps the off-diagonal support intact.
/// Finally the matrix is scaled so that its largest entry is `cfg.peak`.
fn sparse_psd(cfg: &SynthConfig) -> Result<DMatrix<f64>> {
    let t = cfg.tasks;
    let pairs: Vec<(usize, usize)> = (0..t).flat_map(|i| ((i + 1)..t).map(move |j| (i, j))).collect();
    let n_pairs = (cfg.support_size() - t) / 2;
    let mut pattern_rng = stream(cfg.seed, Stream::Pattern);
    let chosen = sample(&mut pattern_rng, pairs.len(), n_pairs);

    let mut values_rng = stream(cfg.seed, Stream::Values);
    let mut s = DMatrix::<f64>::zeros(t, t);
    for i in 0..t {
        s[(i, i)] = StandardNormal.sample(&mut values_rng);
    }
    let mut sorted: Vec<usize> = chosen.into_vec();
    sorted.sort_unstable();
    for idx in sorted {
        let (i, j) = pairs[idx];
        let v: f64 = StandardNormal.sample(&mut values_rng);
        s[(i, j)] = v;
        s[(j, i)] = v;
    }
    let min = sym_eig(&s)?.min_eigenvalue();
    let margin = 0.1 + 0.9 * values_rng.random::<f64>();
    let shift = (-min).max(0.0) + margin;
    for i in 0..t {
        s[(i, i)] += shift;
    }
    let peak = s.amax();
    Ok(s * (cfg.peak / peak))
}

/// Draws one benchmark instance. Deterministic in `cfg`.
pub fn generate<T: Real>(cfg: &SynthConfig) -> Result<SynthInstance<T>> {
    cfg.validate()?;
    let (d, t) = (cfg.d, cfg.tasks);

    let g = gaussian_matrix(&mut stream(cfg.seed, Stream::Basis), d, t);
    let u = g.qr().q();

    let a_true = sparse_psd(cfg)?;
    let a_corrupted = if cfg.corrupt {
        let nonzero: Vec<f64> = a_true.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
        let var = 0.1 * nonzero.iter().sum::<f64>() / nonzero.len() as f64;
        let normal = Normal::new(0.0, var.sqrt()).map_err(|e| invalid(e.to_string()))?;
        let mut rng = stream(cfg.seed, Stream::Corruption);
        let mut noisy = a_true.clone();
        for i in 0..t {
            for j in i..t {
                let z = normal.sample(&mut rng);
                noisy[(i, j)] += z;
                if i != j {
                    noisy[(j, i)] += z;
                }
            }
        }
        noisy
    } else {
        a_true.clone()
    };

    let weights = &u * &a_corrupted;
    let noise = Normal::new(0.0, cfg.noise_var.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let draw = |n: usize, inputs: Stream, outputs: Stream| -> Result<Dataset<T>> {
        let x = gaussian_matrix(&mut stream(cfg.seed, inputs), n, d);
        let mut rng = stream(cfg.seed, outputs);
        let eps = DMatrix::from_fn(n, t, |_, _| noise.sample(&mut rng));
        let y = &x * &weights + eps;
        Dataset::new(x.map(T::lit), y.map(T::lit))
    };
    let train = draw(cfg.n_train, Stream::TrainInputs, Stream::TrainNoise)?;
    let test = draw(cfg.n_test, Stream::TestInputs, Stream::TestNoise)?;

    Ok(SynthInstance {
        train,
        test,
        a_true: a_true.map(T::lit),
        a_corrupted: a_corrupted.map(T::lit),
        u: u.map(T::lit),
    })
}

/// Identifies one instance of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub tasks: usize,
    pub replicate: usize,
    pub seed: u64,
}

/// Seed of replicate `r`; replicate 0 reuses the base seed.
pub fn replicate_seed(base: u64, replicate: usize) -> u64 {
    base.wrapping_add((replicate as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Configurations of the Cartesian product `ratios × task counts × replicates`,
/// ordered ratio-major. All settings of one replicate share a seed.
///
/// Only the ratio range is checked here; combinations that cannot be
/// generated (a ratio too small to cover the diagonal) fail in [`generate`].
pub fn sweep_configs(base: &SynthConfig, ratios: &[f64], task_counts: &[usize], replicates: usize) -> Result<Vec<(SweepPoint, SynthConfig)>> {
    if let Some(bad) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(invalid(format!("support ratio must lie in (0, 1], got {bad}")));
    }
    let mut out = Vec::with_capacity(ratios.len() * task_counts.len() * replicates);
    for &ratio in ratios {
        for &tasks in task_counts {
            for replicate in 0..replicates {
                let seed = replicate_seed(base.seed, replicate);
                let cfg = SynthConfig {
                    support_ratio: ratio,
                    tasks,
                    seed,
                    ..base.clone()
                };
                out.push((
                    SweepPoint {
                        ratio,
                        tasks,
                        replicate,
                        seed,
                    },
                    cfg,
                ));
            }
        }
    }
    Ok(out)
}

/// Generates every instance of a sparsity sweep.
pub fn sparsity_sweep<T: Real>(
    base: &SynthConfig,
    ratios: &[f64],
    task_counts: &[usize],
    replicates: usize,
) -> Result<Vec<(SweepPoint, SynthInstance<T>)>> {
    sweep_configs(base, ratios, task_counts, replicates)?
        .into_iter()
        .map(|(point, cfg)| Ok((point, generate(&cfg)?)))
        .collect()
}
