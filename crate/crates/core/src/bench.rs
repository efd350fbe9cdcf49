//! Frame-rate harness for the float baseline and the compact runtime.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::SegmentationModel;
use crate::par;
use crate::quant::QuantizedModel;
use crate::sonar::SonarImage;

pub const WARMUP_FRAMES: usize = 3;
pub const MIN_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Single,
    All,
}

impl Threads {
    fn limit(self) -> Option<usize> {
        match self {
            Threads::Single => Some(1),
            Threads::All => None,
        }
    }
}

/// What gets timed: the 64-bit network or the dequantized 32-bit runtime.
#[derive(Clone, Copy)]
pub enum BenchTarget<'a> {
    Baseline(&'a SegmentationModel<f64>),
    Quantized(&'a QuantizedModel),
}

impl BenchTarget<'_> {
    fn run(&self, image: &SonarImage) -> Result<()> {
        match self {
            BenchTarget::Baseline(m) => {
                let x = image.to_tensor::<f64>();
                let s = x.shape().to_vec();
                m.predict(&x.reshape([1, s[0], s[1], s[2]])?)?;
            }
            BenchTarget::Quantized(q) => {
                q.runtime().predict_image(image)?;
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self {
            BenchTarget::Baseline(_) => "float64",
            BenchTarget::Quantized(_) => "quantized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub label: &'static str,
    pub thread_count: usize,
    /// Seconds per timed frame, warm-up excluded.
    pub wall_times: Vec<f64>,
    pub median_seconds: f64,
    pub fps: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time `n_frames` single-image forward passes after a short warm-up,
/// cycling through `frames`.
pub fn benchmark(target: BenchTarget<'_>, frames: &[SonarImage], n_frames: usize, threads: Threads) -> Result<BenchReport> {
    if n_frames < MIN_FRAMES {
        return Err(Error::Parameter(format!("need at least {MIN_FRAMES} timed frames, got {n_frames}")));
    }
    if frames.is_empty() {
        return Err(Error::Parameter("no frames to benchmark".into()));
    }
    par::with_threads(threads.limit(), || {
        let thread_count = par::current_threads();
        for i in 0..WARMUP_FRAMES {
            target.run(&frames[i % frames.len()])?;
        }
        let mut wall_times = Vec::with_capacity(n_frames);
        for i in 0..n_frames {
            let t0 = Instant::now();
            target.run(&frames[i % frames.len()])?;
            wall_times.push(t0.elapsed().as_secs_f64());
        }
        let median_seconds = median(&wall_times);
        Ok(BenchReport {
            label: target.label(),
            thread_count,
            wall_times,
            median_seconds,
            fps: 1.0 / median_seconds,
        })
    })
}

/// Baseline against compact model at one thread setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threads: Threads,
    pub baseline: BenchReport,
    pub quantized: BenchReport,
    pub baseline_bytes: u64,
    pub quantized_bytes: u64,
}

impl Comparison {
    pub fn size_ratio(&self) -> f64 {
        self.baseline_bytes as f64 / self.quantized_bytes as f64
    }

    pub fn speedup(&self) -> f64 {
        self.quantized.fps / self.baseline.fps
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# threads={} ({:?})", self.quantized.thread_count, self.threads)?;
        writeln!(f, "model      bytes      fps")?;
        writeln!(f, "float64    {:<10} {:.3}", self.baseline_bytes, self.baseline.fps)?;
        writeln!(f, "quantized  {:<10} {:.3}", self.quantized_bytes, self.quantized.fps)?;
        write!(f, "size_ratio {:.3} speedup {:.3}", self.size_ratio(), self.speedup())
    }
}
