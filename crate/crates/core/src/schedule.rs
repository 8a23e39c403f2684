//! Deterministic interpolation diffusion over arbitrary real tensors.
//!
//! The forward chain blends a target map `H` with a source map `N` in place
//! of Gaussian noise:
//!
//! ```text
//! H_t = sqrt(a_t) * H + sqrt(1 - a_t) * N
//! v_t = sqrt(a_t) * N - sqrt(1 - a_t) * H
//! ```
//!
//! with `a_t` the cumulative product of `1 - beta_s`. The pair `(H_t, v_t)`
//! determines `(H, N)` for any `0 < a_t < 1`:
//! `H = sqrt(a) H_t - sqrt(1-a) v` and `N = sqrt(1-a) H_t + sqrt(a) v`.
//!
//! Sampling starts from the source map itself and never draws random
//! numbers; only [`stochastic_forward`] does, for baseline comparisons.

use ndarray::{ArrayD, IxDyn, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::raster::RawMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    /// The denoiser predicts `v_t`.
    V,
    /// The denoiser predicts `H` directly.
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    /// `a_1 .. a_T`, strictly decreasing inside `(0, 1)`.
    alpha_bar: Vec<f64>,
    pub prediction: Prediction,
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 8.5e-4;
pub const DEFAULT_BETA_END: f64 = 0.012;

impl ScheduleParams {
    /// Betas linear in `sqrt(beta)` between the two endpoints.
    pub fn scaled_linear(steps: usize, beta_start: f64, beta_end: f64, prediction: Prediction) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("a schedule needs at least 2 steps"));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::invalid("betas must satisfy 0 < start <= end < 1"));
        }
        let (s, e) = (beta_start.sqrt(), beta_end.sqrt());
        let mut acc = 1.0;
        let alpha_bar = (0..steps)
            .map(|i| {
                let b = s + (e - s) * i as f64 / (steps - 1) as f64;
                acc *= 1.0 - b * b;
                acc
            })
            .collect();
        Self::from_alpha_bar(alpha_bar, prediction)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>, prediction: Prediction) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::Empty("alpha_bar"));
        }
        if alpha_bar.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::invalid("alpha_bar values must lie in (0, 1)"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("alpha_bar must be strictly decreasing"));
        }
        Ok(ScheduleParams {
            alpha_bar,
            prediction,
        })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    /// `a_t` for `1 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("t must be in 1..={}, got {t}", self.steps())));
        }
        Ok(self.alpha_bar[t - 1])
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self::scaled_linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END, Prediction::V)
            .expect("default schedule is valid")
    }
}

/// Target map `H` and source map `N` of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPair {
    pub target: ArrayD<f64>,
    pub source: ArrayD<f64>,
}

impl MapPair {
    pub fn new(target: ArrayD<f64>, source: ArrayD<f64>) -> Result<Self> {
        check_shapes(&target, &source)?;
        if target.iter().chain(source.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("map values must be finite"));
        }
        Ok(MapPair { target, source })
    }
}

fn check_shapes(a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `sqrt(a) * x + sqrt(1 - a) * y` for any `a` in `[0, 1]`.
pub fn blend(x: &ArrayD<f64>, y: &ArrayD<f64>, alpha_bar: f64) -> ArrayD<f64> {
    let (p, q) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Zip::from(x).and(y).map_collect(|&a, &b| p * a + q * b)
}

pub fn forward_interpolate(pair: &MapPair, t: usize, params: &ScheduleParams) -> Result<ArrayD<f64>> {
    Ok(blend(&pair.target, &pair.source, params.alpha_bar(t)?))
}

/// Gaussian-noise forward process `sqrt(a) H + sqrt(1-a) eps`, seeded.
pub fn stochastic_forward(target: &ArrayD<f64>, t: usize, params: &ScheduleParams, seed: u64) -> Result<ArrayD<f64>> {
    let a = params.alpha_bar(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ArrayD::from_shape_simple_fn(IxDyn(target.shape()), || StandardNormal.sample(&mut rng));
    Ok(blend(target, &noise, a))
}

pub fn v_target(pair: &MapPair, t: usize, params: &ScheduleParams) -> Result<ArrayD<f64>> {
    Ok(v_from_alpha(&pair.target, &pair.source, params.alpha_bar(t)?))
}

/// `sqrt(a) N - sqrt(1-a) H`.
pub fn v_from_alpha(target: &ArrayD<f64>, source: &ArrayD<f64>, alpha_bar: f64) -> ArrayD<f64> {
    let (p, q) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Zip::from(target).and(source).map_collect(|&h, &n| p * n - q * h)
}

/// `H = sqrt(a) H_t - sqrt(1-a) v`.
pub fn recover_target(h_t: &ArrayD<f64>, v: &ArrayD<f64>, alpha_bar: f64) -> ArrayD<f64> {
    let (p, q) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Zip::from(h_t).and(v).map_collect(|&x, &v| p * x - q * v)
}

/// `N = sqrt(1-a) H_t + sqrt(a) v`.
pub fn recover_source(h_t: &ArrayD<f64>, v: &ArrayD<f64>, alpha_bar: f64) -> ArrayD<f64> {
    let (p, q) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Zip::from(h_t).and(v).map_collect(|&x, &v| q * x + p * v)
}

/// `count` timesteps evenly spaced from `T` down to 1 (inclusive).
pub fn step_schedule(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(Error::invalid(format!("step count must be in 1..={total}")));
    }
    if count == 1 {
        return Ok(vec![total]);
    }
    let span = (total - 1) as f64;
    Ok((0..count)
        .map(|i| total - (span * i as f64 / (count - 1) as f64).round() as usize)
        .collect())
}

/// Deterministic sampler. `steps` are strictly decreasing timesteps; the
/// state starts at the source map and, after each prediction is turned into
/// an estimate `H_hat`, is re-interpolated to the next timestep. Returns the
/// last `H_hat`.
pub fn sample(
    mut denoiser: impl FnMut(&ArrayD<f64>, usize) -> ArrayD<f64>,
    source: &ArrayD<f64>,
    params: &ScheduleParams,
    steps: &[usize],
) -> Result<ArrayD<f64>> {
    if steps.is_empty() {
        return Err(Error::Empty("sampling steps"));
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("sampling steps must be strictly decreasing"));
    }
    let mut x = source.clone();
    let mut estimate = source.clone();
    for (k, &t) in steps.iter().enumerate() {
        let a = params.alpha_bar(t)?;
        let prediction = denoiser(&x, t);
        if prediction.shape() != source.shape() {
            return Err(Error::invalid(format!(
                "denoiser returned shape {:?}, expected {:?}",
                prediction.shape(),
                source.shape()
            )));
        }
        estimate = match params.prediction {
            Prediction::Target => prediction,
            Prediction::V => recover_target(&x, &prediction, a),
        };
        if let Some(&next) = steps.get(k + 1) {
            x = blend(&estimate, source, params.alpha_bar(next)?);
        }
    }
    Ok(estimate)
}

/// Prediction that maps the state `x` at step `t` exactly back to `target`.
/// On an interpolated state `x = blend(H, N, a)` the `V` form equals
/// `v_from_alpha(H, N, a)`; off the chain (the sampler's first state) it still
/// recovers `H`.
pub fn oracle_prediction(x: &ArrayD<f64>, t: usize, target: &ArrayD<f64>, params: &ScheduleParams) -> Result<ArrayD<f64>> {
    check_shapes(x, target)?;
    let a = params.alpha_bar(t)?;
    Ok(match params.prediction {
        Prediction::V => (x * a.sqrt() - target) / (1.0 - a).sqrt(),
        Prediction::Target => target.clone(),
    })
}

/// Largest absolute elementwise difference.
pub fn max_abs_difference(a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(Zip::from(a).and(b).fold(0.0, |m: f64, x, y| m.max((x - y).abs())))
}

/// `[height, width, channels]` array from a raw map.
pub fn array_from_raw(raw: &RawMap) -> ArrayD<f64> {
    ArrayD::from_shape_vec(
        IxDyn(&[raw.height, raw.width, raw.channels]),
        raw.data.iter().map(|&x| x as f64).collect(),
    )
    .expect("raw map payload matches its header")
}

pub fn raw_from_array(map: &ArrayD<f64>) -> Result<RawMap> {
    let &[height, width, channels] = map.shape() else {
        return Err(Error::invalid(format!("expected an H x W x C map, got {:?}", map.shape())));
    };
    Ok(RawMap {
        height,
        width,
        channels,
        data: map.iter().map(|&x| x as f32).collect(),
    })
}
