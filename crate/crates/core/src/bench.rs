//! Inference throughput and model footprint.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use mvkd_tensor::{no_grad, Init, Rng, Stream, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::models::{read_checkpoint_header, Model};

/// Monotonic time source.
pub trait Clock: Sync {
    fn now(&self) -> Duration;
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Advances by a fixed step on every reading.
pub struct FakeClock {
    step_nanos: u64,
    ticks: AtomicU64,
}

impl FakeClock {
    pub fn new(step: Duration) -> Self {
        FakeClock { step_nanos: step.as_nanos() as u64, ticks: AtomicU64::new(0) }
    }

    pub fn readings(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst)
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        let k = self.ticks.fetch_add(1, Ordering::SeqCst) + 1;
        Duration::from_nanos(k * self.step_nanos)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Host {
    pub cpu: String,
    pub threads: usize,
}

impl Host {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| std::env::consts::ARCH.to_string());
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        Host { cpu, threads }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub batch: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    /// Concurrent workers sharing one read-only model.
    pub workers: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { batch: 1, warmup_iters: 20, measured_iters: 100, workers: 1 }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.workers == 0 {
            return Err(Error::InvalidParameter("batch and workers must be positive".into()));
        }
        if self.measured_iters < 10 {
            return Err(Error::InvalidParameter(format!(
                "measured_iters must be at least 10, got {}",
                self.measured_iters
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_id: String,
    pub host: Host,
    pub batch: usize,
    pub workers: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub elapsed_s: f64,
    pub fps: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_p99_ms: f64,
    pub model_size_bytes: u64,
}

const CSV_HEADER: &str = "model_id,cpu,threads,batch,workers,warmup_iters,measured_iters,elapsed_s,fps,p50_ms,p95_ms,p99_ms,model_size_bytes";

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(io_err(path))
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},\"{}\",{},{},{},{},{},{},{},{},{},{},{}",
            self.model_id,
            self.host.cpu.replace('"', "'"),
            self.host.threads,
            self.batch,
            self.workers,
            self.warmup_iters,
            self.measured_iters,
            self.elapsed_s,
            self.fps,
            self.latency_p50_ms,
            self.latency_p95_ms,
            self.latency_p99_ms,
            self.model_size_bytes
        )
    }

    /// Appends one row, writing the header first if the file is new or empty.
    pub fn append_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        if fresh {
            writeln!(file, "{CSV_HEADER}").map_err(io_err(path))?;
        }
        writeln!(file, "{}", self.csv_row()).map_err(io_err(path))
    }
}

/// Nearest-rank percentile of sorted values: the `ceil(p/100 * n)`-th smallest.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `step`, which processes `opts.batch` frames per call. Warmup calls
/// never read the clock.
pub fn bench_step<S>(model_id: &str, model_size_bytes: u64, opts: BenchOptions, clock: &dyn Clock, step: S) -> Result<BenchReport>
where
    S: Fn() -> Result<()> + Sync,
{
    opts.validate()?;
    let worker = || -> Result<Vec<f64>> {
        for _ in 0..opts.warmup_iters {
            step()?;
        }
        Ok(Vec::with_capacity(opts.measured_iters))
    };
    // latencies between consecutive readings, starting from `prev`
    let measure = |lat: &mut Vec<f64>, mut prev: Duration| -> Result<Duration> {
        for _ in 0..opts.measured_iters {
            step()?;
            let t = clock.now();
            lat.push((t - prev).as_secs_f64() * 1e3);
            prev = t;
        }
        Ok(prev)
    };
    let (elapsed, mut latencies) = if opts.workers == 1 {
        let mut lat = worker()?;
        let start = clock.now();
        let end = measure(&mut lat, start)?;
        ((end - start).as_secs_f64(), lat)
    } else {
        let warmed: Vec<Vec<f64>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..opts.workers).map(|_| s.spawn(worker)).collect();
            handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect::<Result<_>>()
        })?;
        let start = clock.now();
        let lats: Vec<Vec<f64>> = std::thread::scope(|s| {
            let handles: Vec<_> = warmed
                .into_iter()
                .map(|mut lat| {
                    s.spawn(move || -> Result<Vec<f64>> {
                        measure(&mut lat, clock.now())?;
                        Ok(lat)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect::<Result<_>>()
        })?;
        ((clock.now() - start).as_secs_f64(), lats.concat())
    };
    latencies.sort_by(f64::total_cmp);
    let frames = (opts.measured_iters * opts.batch * opts.workers) as f64;
    Ok(BenchReport {
        model_id: model_id.to_string(),
        host: Host::detect(),
        batch: opts.batch,
        workers: opts.workers,
        warmup_iters: opts.warmup_iters,
        measured_iters: opts.measured_iters,
        elapsed_s: elapsed,
        fps: if elapsed > 0.0 { frames / elapsed } else { 0.0 },
        latency_p50_ms: percentile(&latencies, 50.0),
        latency_p95_ms: percentile(&latencies, 95.0),
        latency_p99_ms: percentile(&latencies, 99.0),
        model_size_bytes,
    })
}

/// Forward passes on a fixed random input of `input_size`.
pub fn bench_fps(model: &Model<f32>, input_size: (usize, usize), opts: BenchOptions, clock: &dyn Clock) -> Result<BenchReport> {
    opts.validate()?;
    let mut rng = Rng::new(0).substream(Stream::Aux, &[0]);
    let x = Tensor::create(
        &[opts.batch, 3, input_size.0, input_size.1],
        Init::Uniform { low: 0.0, high: 1.0, rng: &mut rng },
    )?;
    // surface a size mismatch before timing anything
    no_grad(|| model.forward(&x, false))?;
    let size = model.model_size_bytes()? as u64;
    bench_step(model.config().kind.as_str(), size, opts, clock, || {
        no_grad(|| model.forward(&x, false)).map(|_| ())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub param_count: u64,
    /// Raw f32 parameter bytes.
    pub payload_bytes: u64,
    /// Whole file including the header.
    pub total_file_bytes: u64,
}

pub fn size_report(path: impl AsRef<Path>) -> Result<SizeReport> {
    let (header, total) = read_checkpoint_header(path)?;
    Ok(SizeReport {
        param_count: header.param_count() as u64,
        payload_bytes: header.payload_bytes,
        total_file_bytes: total,
    })
}
