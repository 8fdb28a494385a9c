//! Step-time benchmark over image size, batch size and worker count.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{build_classifier, ClassifierConfig, Model};
use crate::tensor::{Exec, Graph, Sgd, Tensor};

/// Reference maxima quoted for context only: multi-CPU and GPU speedups at
/// 1024×1024, batch 8.
pub const REFERENCE_CPU_SPEEDUP: f64 = 3.0;
pub const REFERENCE_GPU_SPEEDUP: f64 = 9.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub batches: Vec<usize>,
    pub workers: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Steps whose estimated working set exceeds this are refused.
    pub memory_limit_bytes: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![256, 512, 1024],
            batches: vec![1, 2, 4, 8],
            workers: vec![1, num_cpus::get_physical().max(1)],
            runs: 5,
            warmup: 2,
            seed: 0,
            memory_limit_bytes: available_memory_bytes().map_or(8 << 30, |b| b / 10 * 8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub image_size: usize,
    pub batch_size: usize,
    pub workers: usize,
    pub median_seconds: f64,
    pub runs: usize,
    pub warmup: usize,
    /// SHA-256 over the loss, output and every parameter after one step.
    pub checksum: String,
}

/// `MemAvailable` from /proc/meminfo, where present.
pub fn available_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Rough peak bytes for one training step: activations and their gradients
/// for every layer, padded conv scratch, and parameters with gradients and
/// momentum.
pub fn estimate_step_bytes(cfg: &ClassifierConfig, batch: usize) -> u64 {
    let mut side = cfg.input_size as u64;
    let mut cin = 1u64;
    let mut act = 0u64;
    let mut params = 0u64;
    for (i, &ch) in cfg.channel_plan.iter().enumerate() {
        let ch = ch as u64;
        let padded = (side + 2) * (side + 2);
        act += batch as u64 * (cin * padded + 2 * ch * side * side);
        params += ch * (cin * 9 + 1);
        if cfg.pool_after.contains(&(i + 1)) {
            side /= 2;
            act += batch as u64 * ch * side * side * 2;
        }
        cin = ch;
    }
    params += cin * side * side + 1;
    4 * (3 * act + 4 * params)
}

/// Times one forward + backward + SGD step of `model` on seeded random input.
/// Every run starts from the same parameters so all runs (and all worker
/// counts) do identical arithmetic.
pub fn time_step(
    model: &Model,
    batch_size: usize,
    exec: &Exec,
    runs: usize,
    warmup: usize,
    seed: u64,
    memory_limit_bytes: u64,
) -> Result<BenchPoint> {
    if runs < 3 {
        return Err(Error::usage("at least 3 timed runs are required"));
    }
    if batch_size == 0 {
        return Err(Error::usage("batch size must be positive"));
    }
    let s = model.input_size();
    if let crate::model::ModelConfig::Classifier(cfg) = model.config() {
        let need = estimate_step_bytes(cfg, batch_size);
        if need > memory_limit_bytes {
            return Err(Error::Resource(format!(
                "image {s}x{s}, batch {batch_size} needs about {} MiB, limit {} MiB",
                need >> 20,
                memory_limit_bytes >> 20
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::new(
        vec![batch_size, 1, s, s],
        (0..batch_size * s * s).map(|_| rng.gen::<f32>()).collect(),
    )?;
    let target = Tensor::new(vec![batch_size, 1], (0..batch_size).map(|i| (i % 2) as f32).collect())?;
    let mut times = Vec::with_capacity(runs);
    let mut checksum = String::new();
    for r in 0..warmup + runs {
        let mut m = model.clone();
        let started = Instant::now();
        let (loss, out) = step(&mut m, &input, &target, exec)?;
        let elapsed = started.elapsed().as_secs_f64();
        if r == 0 {
            checksum = digest(loss, &out, &m);
        }
        if r >= warmup {
            times.push(elapsed.max(f64::MIN_POSITIVE));
        }
    }
    Ok(BenchPoint {
        image_size: s,
        batch_size,
        workers: exec.workers(),
        median_seconds: median(&times).expect("runs >= 3"),
        runs,
        warmup,
        checksum,
    })
}

fn step(model: &mut Model, input: &Tensor, target: &Tensor, exec: &Exec) -> Result<(f32, Tensor)> {
    let mut g = Graph::new(exec.clone());
    let x = g.constant(input.clone())?;
    let (pred, bindings) = model.forward(&mut g, x)?;
    let t = g.constant(target.clone())?;
    let loss = g.bce_loss(pred, t)?;
    let out = g.value(pred).clone();
    let l = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    model.accumulate_grads(&grads, &bindings)?;
    model.step(&mut Sgd::new(0.01, 0.9)?)?;
    Ok((l, out))
}

fn digest(loss: f32, out: &Tensor, model: &Model) -> String {
    let mut h = Sha256::new();
    h.update(loss.to_le_bytes());
    for v in out.data() {
        h.update(v.to_le_bytes());
    }
    for p in model.params() {
        for v in p.tensor.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the whole grid. Worker count is the innermost loop so each cell's
/// reference and multi-worker points are measured back to back.
pub fn run_grid(cfg: &BenchConfig, mut progress: impl FnMut(&BenchPoint)) -> Result<Vec<BenchPoint>> {
    if cfg.workers.is_empty() || cfg.sizes.is_empty() || cfg.batches.is_empty() {
        return Err(Error::usage("benchmark grid is empty"));
    }
    let execs = cfg.workers.iter().map(|&w| Exec::new(w)).collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for &size in &cfg.sizes {
        let model = build_classifier(&ClassifierConfig::new(size), cfg.seed)?;
        for &batch in &cfg.batches {
            for exec in &execs {
                let p = time_step(
                    &model,
                    batch,
                    exec,
                    cfg.runs,
                    cfg.warmup,
                    cfg.seed,
                    cfg.memory_limit_bytes,
                )?;
                progress(&p);
                points.push(p);
            }
        }
    }
    Ok(points)
}

pub fn times_csv(points: &[BenchPoint]) -> String {
    let mut out = String::from("image_size,batch_size,workers,median_seconds\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.image_size, p.batch_size, p.workers, p.median_seconds
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub image_size: usize,
    pub batch_size: usize,
    pub workers: usize,
    pub median_seconds: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupTable {
    pub rows: Vec<SpeedupRow>,
}

/// Ratio of each cell's single-worker median to every point's median.
pub fn speedup_report(points: &[BenchPoint]) -> Result<SpeedupTable> {
    let rows = points
        .iter()
        .map(|p| {
            let reference = points
                .iter()
                .find(|q| q.workers == 1 && q.image_size == p.image_size && q.batch_size == p.batch_size)
                .ok_or_else(|| {
                    Error::usage(format!(
                        "no single-worker reference for image {} batch {}",
                        p.image_size, p.batch_size
                    ))
                })?;
            let speedup = if p.workers == 1 {
                1.0
            } else {
                reference.median_seconds / p.median_seconds
            };
            Ok(SpeedupRow {
                image_size: p.image_size,
                batch_size: p.batch_size,
                workers: p.workers,
                median_seconds: p.median_seconds,
                speedup,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpeedupTable { rows })
}

impl SpeedupTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_size,batch_size,workers,median_seconds,speedup\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4}",
                r.image_size, r.batch_size, r.workers, r.median_seconds, r.speedup
            );
        }
        out
    }

    pub fn get(&self, image_size: usize, batch_size: usize, workers: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.image_size == image_size && r.batch_size == batch_size && r.workers == workers)
            .map(|r| r.speedup)
    }

    /// Human-readable summary with the reference maxima alongside.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let best = self.rows.iter().max_by(|a, b| a.speedup.total_cmp(&b.speedup));
        if let Some(b) = best {
            let _ = writeln!(
                out,
                "best measured speedup {:.2}x at image {} batch {} with {} workers",
                b.speedup, b.image_size, b.batch_size, b.workers
            );
        }
        let _ = writeln!(
            out,
            "reference context: multi-CPU max {REFERENCE_CPU_SPEEDUP:.1}x, GPU max {REFERENCE_GPU_SPEEDUP:.1}x at 1024x1024, batch 8"
        );
        for w in self.trend_warnings() {
            let _ = writeln!(out, "WARN {w}");
        }
        out
    }

    /// Cells where the largest image size scales worse than the smallest.
    pub fn trend_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        let sizes: Vec<usize> = self.rows.iter().map(|r| r.image_size).collect();
        let (Some(&lo), Some(&hi)) = (sizes.iter().min(), sizes.iter().max()) else {
            return warnings;
        };
        if lo == hi {
            return warnings;
        }
        for r in self.rows.iter().filter(|r| r.image_size == hi && r.workers > 1) {
            if let Some(small) = self.get(lo, r.batch_size, r.workers) {
                if r.speedup < small {
                    warnings.push(format!(
                        "batch {} workers {}: speedup {:.2} at image {hi} is below {:.2} at image {lo}",
                        r.batch_size, r.workers, r.speedup, small
                    ));
                }
            }
        }
        warnings
    }
}

/// Machine description attached to every benchmark run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub logical_cores: usize,
    pub physical_cores: usize,
    pub clock: String,
    pub os: String,
    pub arch: String,
    pub tool_version: String,
}

impl Environment {
    pub fn detect() -> Self {
        Self {
            logical_cores: num_cpus::get(),
            physical_cores: num_cpus::get_physical(),
            clock: "std::time::Instant (monotonic)".into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}
