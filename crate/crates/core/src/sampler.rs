//! Sample-path generation for Weyl polynomials and stationary Gaussian
//! processes, reporting how many paths stay positive on a grid.
//!
//! Every trial owns its random stream: the ChaCha key comes from
//! `(master_seed, stream_index)` and the ChaCha stream number is the trial
//! index. A batch is therefore a pure function of its parameters, whatever
//! the number of workers or the chunking, and turning early abort off only
//! draws more numbers from streams nobody else reads.

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::{build_corr_matrix_with_cap, weyl_log_variance, KernelSpec, DEFAULT_MATRIX_CAP};
use crate::series::log_factorial;

/// Weights below `exp(-WEIGHT_LOG_CUTOFF)` are dropped from the standardized
/// Weyl basis; with `sum w_i^2 = 1` the dropped mass is below 1e-15.
const WEIGHT_LOG_CUTOFF: f64 = 40.0;

/// Trials per work unit. Fixed, so chunking never depends on worker count.
const CHUNK_TRIALS: u64 = 2048;

pub const JITTER_LADDER: [f64; 5] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        RngStream { master_seed, stream_index }
    }

    fn key(&self) -> [u8; 32] {
        let mut state = self.master_seed;
        let mut mix = self.stream_index ^ 0xD1B5_4A32_D192_ED03;
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state) ^ splitmix64(&mut mix),
            splitmix64(&mut state) ^ splitmix64(&mut mix),
        ];
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        key
    }

    /// The generator for one trial of this stream.
    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(trial);
        rng
    }
}

/// A degree-`n` Weyl polynomial with the buffer width `alpha_n = sqrt(n) / log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylModel {
    pub n: u64,
    pub alpha_n: f64,
}

impl WeylModel {
    pub fn new(n: u64) -> Self {
        let nf = n as f64;
        WeylModel { n, alpha_n: nf.sqrt() / nf.ln() }
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    /// Largest `|x|` the sampler accepts: `sqrt(n) + 3 alpha_n`. Unbounded for
    /// the degenerate degrees 0 and 1, where `alpha_n` carries no meaning.
    pub fn max_abs_x(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            self.sqrt_n() + 3.0 * self.alpha_n
        }
    }

    /// Half-line window `[0, sqrt(n) + 3 alpha_n]`, or `[0, 0]` for `n = 0`.
    pub fn half_line_end(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.max_abs_x()
        }
    }
}

/// Survival counts of a batch of sampled paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    pub grid: GridSpec,
    pub stream: RngStream,
    pub survived: u64,
    pub trials: u64,
    /// Per-trial path minima in trial order, when requested.
    pub min_values: Option<Vec<f64>>,
}

impl PathBatch {
    /// Combines two batches over the same grid; counts add, minima append.
    pub fn merge(mut self, other: PathBatch) -> PathBatch {
        self.survived += other.survived;
        self.trials += other.trials;
        self.min_values = match (self.min_values, other.min_values) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            (a, b) => a.or(b),
        };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    /// Stop evaluating a trial at its first nonpositive grid value.
    pub early_abort: bool,
    /// Keep each path's minimum (forces full evaluation).
    pub record_minima: bool,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub workers: Option<usize>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { early_abort: true, record_minima: false, workers: None }
    }
}

struct TrialOutcome {
    survived: bool,
    min_value: f64,
}

/// A Gaussian vector indexed by grid points, generated point by point so a
/// trial can stop at its first nonpositive coordinate.
trait SequentialPaths: Sync {
    fn len(&self) -> usize;
    fn scratch(&self) -> Vec<f64>;
    /// Value at grid index `k`, drawing whatever randomness it needs.
    fn value_at(&self, k: usize, rng: &mut ChaCha8Rng, scratch: &mut Vec<f64>) -> f64;
    fn reset(&self, scratch: &mut Vec<f64>);
}

fn run_trial<P: SequentialPaths>(
    paths: &P,
    stream: &RngStream,
    trial: u64,
    early_abort: bool,
    scratch: &mut Vec<f64>,
) -> TrialOutcome {
    let mut rng = stream.trial_rng(trial);
    paths.reset(scratch);
    let mut min_value = f64::INFINITY;
    for k in 0..paths.len() {
        let v = paths.value_at(k, &mut rng, scratch);
        min_value = min_value.min(v);
        if v <= 0.0 && early_abort {
            return TrialOutcome { survived: false, min_value };
        }
    }
    TrialOutcome { survived: min_value > 0.0, min_value }
}

fn run_batch<P: SequentialPaths>(
    paths: &P,
    grid: GridSpec,
    trials: u64,
    stream: RngStream,
    opts: SampleOptions,
) -> Result<PathBatch> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let early_abort = opts.early_abort && !opts.record_minima;
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let work = |chunk: u64| -> PathBatch {
        let first = chunk * CHUNK_TRIALS;
        let last = (first + CHUNK_TRIALS).min(trials);
        let mut scratch = paths.scratch();
        let mut survived = 0;
        let mut minima = opts.record_minima.then(|| Vec::with_capacity((last - first) as usize));
        for trial in first..last {
            let outcome = run_trial(paths, &stream, trial, early_abort, &mut scratch);
            survived += outcome.survived as u64;
            if let Some(m) = minima.as_mut() {
                m.push(outcome.min_value);
            }
        }
        PathBatch { grid, stream, survived, trials: last - first, min_values: minima }
    };
    let run = || -> Vec<PathBatch> { (0..chunks).into_par_iter().map(work).collect() };
    let parts = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?
            .install(run),
        None => run(),
    };
    let empty = PathBatch { grid, stream, survived: 0, trials: 0, min_values: opts.record_minima.then(Vec::new) };
    Ok(parts.into_iter().fold(empty, PathBatch::merge))
}

/// Standardized Weyl paths `f_n(x) / sqrt(Var f_n(x))` on a grid.
///
/// At each grid point the basis `x^i / sqrt(i!)` is normalized by the
/// standard deviation and truncated to the window of indices where it is not
/// negligible.
pub struct WeylSampler {
    model: WeylModel,
    grid: GridSpec,
    offsets: Vec<usize>,
    lows: Vec<usize>,
    weights: Vec<f64>,
}

impl WeylSampler {
    pub fn new(model: WeylModel, grid: GridSpec) -> Result<Self> {
        let len = grid.len();
        if len > DEFAULT_MATRIX_CAP {
            return Err(Error::GridTooLarge { points: len, cap: DEFAULT_MATRIX_CAP });
        }
        let limit = model.max_abs_x();
        let reach = grid.start.abs().max(grid.point(len - 1).abs());
        if reach > limit * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "grid reaches |x| = {reach}, beyond sqrt(n) + 3 alpha_n = {limit} for n = {}",
                model.n
            )));
        }
        let n = model.n as usize;
        let mut offsets = Vec::with_capacity(len + 1);
        let mut lows = Vec::with_capacity(len);
        let mut weights = Vec::new();
        let mut log_terms = vec![0.0; n + 1];
        for x in grid.points() {
            offsets.push(weights.len());
            if x == 0.0 {
                lows.push(0);
                weights.push(1.0);
                continue;
            }
            let log_abs = x.abs().ln();
            let log_sd = 0.5 * weyl_log_variance(model.n, x);
            for (i, slot) in log_terms.iter_mut().enumerate() {
                *slot = i as f64 * log_abs - 0.5 * log_factorial(i as u64) - log_sd;
            }
            let keep = |lw: &f64| *lw > -WEIGHT_LOG_CUTOFF;
            let lo = log_terms.iter().position(keep).unwrap_or(0);
            let hi = log_terms.iter().rposition(keep).unwrap_or(0);
            lows.push(lo);
            for (i, lw) in log_terms.iter().enumerate().take(hi + 1).skip(lo) {
                let sign = if x < 0.0 && i % 2 == 1 { -1.0 } else { 1.0 };
                weights.push(sign * lw.exp());
            }
        }
        offsets.push(weights.len());
        Ok(WeylSampler { model, grid, offsets, lows, weights })
    }

    pub fn model(&self) -> WeylModel {
        self.model
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn sample(&self, trials: u64, stream: RngStream, opts: SampleOptions) -> Result<PathBatch> {
        run_batch(self, self.grid, trials, stream, opts)
    }

    /// The full standardized path of one trial.
    pub fn path(&self, stream: &RngStream, trial: u64) -> Vec<f64> {
        let mut rng = stream.trial_rng(trial);
        let mut scratch = self.scratch();
        (0..self.len()).map(|k| self.value_at(k, &mut rng, &mut scratch)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a.remainder().iter().zip(chunks_b.remainder()).map(|(x, y)| x * y).sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl SequentialPaths for WeylSampler {
    fn len(&self) -> usize {
        self.lows.len()
    }

    fn scratch(&self) -> Vec<f64> {
        Vec::with_capacity(self.model.n as usize + 1)
    }

    fn reset(&self, scratch: &mut Vec<f64>) {
        scratch.clear();
    }

    fn value_at(&self, k: usize, rng: &mut ChaCha8Rng, coeffs: &mut Vec<f64>) -> f64 {
        let w = &self.weights[self.offsets[k]..self.offsets[k + 1]];
        let lo = self.lows[k];
        let hi = lo + w.len();
        // Coefficients are drawn in index order, only as far as needed.
        while coeffs.len() < hi {
            coeffs.push(StandardNormal.sample(rng));
        }
        dot(w, &coeffs[lo..hi])
    }
}

/// Stationary Gaussian paths on `[0, T]` from a jittered Cholesky factor.
///
/// Row `k` of the factor expresses the value at point `k` through the
/// innovations of points `0..=k`, so generating left to right is sequential
/// conditional sampling.
pub struct StationarySampler {
    kernel: KernelSpec,
    grid: GridSpec,
    rows: Vec<f64>,
    jitter: f64,
}

impl StationarySampler {
    pub fn new(kernel: KernelSpec, grid: GridSpec) -> Result<Self> {
        if !kernel.is_stationary() {
            return Err(Error::InvalidParameter(format!("{} is not a stationary kernel", kernel.name())));
        }
        let matrix = build_corr_matrix_with_cap(kernel, &grid, DEFAULT_MATRIX_CAP)?;
        let (factor, jitter) = jittered_cholesky(matrix)?;
        let len = grid.len();
        let mut rows = Vec::with_capacity(len * (len + 1) / 2);
        for i in 0..len {
            for j in 0..=i {
                rows.push(factor[(i, j)]);
            }
        }
        Ok(StationarySampler { kernel, grid, rows, jitter })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    /// The diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample(&self, trials: u64, stream: RngStream, opts: SampleOptions) -> Result<PathBatch> {
        run_batch(self, self.grid, trials, stream, opts)
    }

    pub fn path(&self, stream: &RngStream, trial: u64) -> Vec<f64> {
        let mut rng = stream.trial_rng(trial);
        let mut scratch = self.scratch();
        (0..self.len()).map(|k| self.value_at(k, &mut rng, &mut scratch)).collect()
    }
}

/// Cholesky factor of `matrix + jitter I`, escalating through
/// [`JITTER_LADDER`].
pub fn jittered_cholesky(matrix: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    for &jitter in JITTER_LADDER.iter() {
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::FactorizationFailed { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
}

impl SequentialPaths for StationarySampler {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn scratch(&self) -> Vec<f64> {
        Vec::with_capacity(self.grid.len())
    }

    fn reset(&self, scratch: &mut Vec<f64>) {
        scratch.clear();
    }

    fn value_at(&self, k: usize, rng: &mut ChaCha8Rng, innovations: &mut Vec<f64>) -> f64 {
        while innovations.len() <= k {
            innovations.push(StandardNormal.sample(rng));
        }
        let start = k * (k + 1) / 2;
        dot(&self.rows[start..start + k + 1], &innovations[..=k])
    }
}

/// Counts Weyl paths positive at every grid point.
pub fn sample_weyl_signs(
    model: WeylModel,
    grid: GridSpec,
    trials: u64,
    stream: RngStream,
    opts: SampleOptions,
) -> Result<PathBatch> {
    WeylSampler::new(model, grid)?.sample(trials, stream, opts)
}

/// Counts stationary paths positive on the grid `0, step, ..., T`.
pub fn sample_stationary_signs(
    kernel: KernelSpec,
    horizon: f64,
    step: f64,
    trials: u64,
    stream: RngStream,
    opts: SampleOptions,
) -> Result<PathBatch> {
    let grid = GridSpec::new(0.0, horizon, step)?;
    StationarySampler::new(kernel, grid)?.sample(trials, stream, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> RngStream {
        RngStream::new(7, 3)
    }

    #[test]
    fn streams_differ_by_index_and_trial() {
        use rand::RngCore;
        let a = RngStream::new(1, 0).trial_rng(0).next_u64();
        let b = RngStream::new(1, 1).trial_rng(0).next_u64();
        let c = RngStream::new(1, 0).trial_rng(1).next_u64();
        let d = RngStream::new(1, 0).trial_rng(0).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, d);
    }

    #[test]
    fn weyl_weights_are_standardized() {
        let model = WeylModel::new(100);
        let grid = GridSpec::new(-12.0, 12.0, 0.5).unwrap();
        let s = WeylSampler::new(model, grid).unwrap();
        for k in 0..s.len() {
            let w = &s.weights[s.offsets[k]..s.offsets[k + 1]];
            let norm: f64 = w.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-12, "k={k} norm={norm}");
        }
    }

    #[test]
    fn degree_zero_is_a_coin() {
        let batch =
            sample_weyl_signs(WeylModel::new(0), GridSpec::point_grid(0.0), 20_000, stream(), SampleOptions::default())
                .unwrap();
        let p = batch.survived as f64 / batch.trials as f64;
        assert!((p - 0.5).abs() < 0.02);
    }

    #[test]
    fn grid_outside_window_rejected() {
        let model = WeylModel::new(64);
        let grid = GridSpec::new(0.0, 20.0, 0.05).unwrap();
        assert!(matches!(WeylSampler::new(model, grid), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn oversize_grid_rejected() {
        let grid = GridSpec::new(0.0, 300.0, 0.05).unwrap();
        assert!(matches!(StationarySampler::new(KernelSpec::GaussLimit, grid), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn weyl_kernel_rejected_by_stationary_sampler() {
        let grid = GridSpec::new(0.0, 1.0, 0.5).unwrap();
        assert!(StationarySampler::new(KernelSpec::WeylFinite { n: 4 }, grid).is_err());
    }

    #[test]
    fn merge_is_order_preserving() {
        let grid = GridSpec::point_grid(0.0);
        let a = PathBatch { grid, stream: stream(), survived: 1, trials: 2, min_values: Some(vec![1.0, -1.0]) };
        let b = PathBatch { grid, stream: stream(), survived: 0, trials: 1, min_values: Some(vec![-2.0]) };
        let m = a.merge(b);
        assert_eq!((m.survived, m.trials), (1, 3));
        assert_eq!(m.min_values.unwrap(), vec![1.0, -1.0, -2.0]);
    }

    #[test]
    fn zero_trials_rejected() {
        let r = sample_stationary_signs(KernelSpec::Sech, 0.0, 0.1, 0, stream(), SampleOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn gauss_fine_grid_needs_jitter_but_factors() {
        let grid = GridSpec::new(0.0, 25.0, 0.05).unwrap();
        let s = StationarySampler::new(KernelSpec::GaussLimit, grid).unwrap();
        assert!(s.jitter() >= 1e-12 && s.jitter() <= 1e-8);
    }
}
