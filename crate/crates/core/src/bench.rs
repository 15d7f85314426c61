//! Forward-pass latency sampling and Welch's unequal-variance t-test.

use std::time::Instant;

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ThreeStreamModel;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencySample {
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std_ms: f64,
}

impl LatencySample {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        let (mean_ms, var) = mean_var(&samples_ms);
        LatencySample {
            samples_ms,
            mean_ms,
            std_ms: var.sqrt(),
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

pub const MIN_SAMPLES: usize = 30;

fn time_once(model: &ThreeStreamModel, clip: &Tensor) -> Result<f64> {
    let start = Instant::now();
    let p = model.predict(clip)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(p);
    Ok(elapsed)
}

/// Times single-clip evaluation-mode forward passes after `warmup`
/// discarded runs.
pub fn benchmark_latency(
    model: &ThreeStreamModel,
    clip: &Tensor,
    warmup: usize,
    samples: usize,
) -> Result<LatencySample> {
    if samples < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    for _ in 0..warmup {
        time_once(model, clip)?;
    }
    let timings = (0..samples)
        .map(|_| time_once(model, clip))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatencySample::from_samples(timings))
}

/// Interleaves trials of two models so drift affects both equally.
pub fn benchmark_pair(
    a: &ThreeStreamModel,
    b: &ThreeStreamModel,
    clip: &Tensor,
    warmup: usize,
    samples: usize,
) -> Result<(LatencySample, LatencySample)> {
    if samples < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    for _ in 0..warmup {
        time_once(a, clip)?;
        time_once(b, clip)?;
    }
    let (mut ta, mut tb) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        ta.push(time_once(a, clip)?);
        tb.push(time_once(b, clip)?);
    }
    Ok((LatencySample::from_samples(ta), LatencySample::from_samples(tb)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WelchT {
    pub t: f64,
    pub df: f64,
}

/// Welch's t statistic for `mean(a) − mean(b)` and the Welch–Satterthwaite
/// degrees of freedom. When both variances are zero and the means agree,
/// `t = 0` and `df = n_a + n_b − 2`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchT> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("welch_t_test needs at least two samples per side"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(WelchT {
                t: 0.0,
                df: (a.len() + b.len() - 2) as f64,
            });
        }
        return Err(Error::invalid("welch_t_test: zero variance with different means"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    Ok(WelchT { t, df })
}
