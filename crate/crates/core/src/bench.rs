//! Desk-scale timing of the kernel variants on a synthetic instance.

use std::time::Instant;

use crate::kernels::{
    compute_unifrac, ComputeOptions, KernelConfig, KernelCounters, KernelVariant,
};
use crate::precision::Precision;
use crate::synthetic::Instance;
use crate::{Metric, UnifracError};

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub n_samples: usize,
    pub n_features: usize,
    pub density: f64,
    pub variants: Vec<KernelVariant>,
    pub repeat: usize,
    pub metric: Metric,
    pub precision: Precision,
    pub batch_capacity: usize,
    /// Defaults to the precision's tile width.
    pub step_size: Option<usize>,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n_samples: 256,
            n_features: 256,
            density: 0.1,
            variants: KernelVariant::ALL.to_vec(),
            repeat: 1,
            metric: Metric::WeightedUnnormalized,
            precision: Precision::Fp64,
            batch_capacity: crate::embed::DEFAULT_BATCH_CAPACITY,
            step_size: None,
            threads: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub variant: KernelVariant,
    /// Wall time of each repeat, in seconds.
    pub times: Vec<f64>,
    pub counters: KernelCounters,
    pub embedding_rows: usize,
    /// Stripe entries (`stripes * n_samples`).
    pub entries: usize,
}

impl BenchRow {
    pub fn min(&self) -> f64 {
        self.times.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn median(&self) -> f64 {
        let mut t = self.times.clone();
        t.sort_by(f64::total_cmp);
        let m = t.len() / 2;
        if t.len() % 2 == 1 {
            t[m]
        } else {
            (t[m - 1] + t[m]) / 2.0
        }
    }

    pub fn writes_per_entry(&self) -> f64 {
        self.counters.accumulator_writes as f64 / self.entries as f64
    }
}

pub fn run_bench(options: &BenchOptions) -> Result<Vec<BenchRow>, UnifracError> {
    if options.repeat == 0 {
        return Err(UnifracError::InvalidArgument(
            "repeat must be at least 1".into(),
        ));
    }
    if options.n_samples < 2 || options.n_features < 1 {
        return Err(UnifracError::InvalidArgument(
            "bench needs at least 2 samples and 1 feature".into(),
        ));
    }
    let instance = Instance::generate(
        options.seed,
        options.n_samples,
        options.n_features,
        options.density,
    );
    let mut rows = Vec::with_capacity(options.variants.len());
    for &variant in &options.variants {
        let mut config = KernelConfig::new(variant, options.metric, options.precision)
            .with_batch_capacity(options.batch_capacity);
        if let Some(step) = options.step_size {
            config = config.with_step_size(step);
        }
        let compute = ComputeOptions {
            config,
            range: None,
            threads: options.threads,
        };
        let mut times = Vec::with_capacity(options.repeat);
        let mut last = None;
        for _ in 0..options.repeat {
            let started = Instant::now();
            let (counters, rows_used, entries) = match options.precision {
                Precision::Fp32 => {
                    let out = compute_unifrac::<f32>(&instance.tree, &instance.table, &compute)?;
                    (
                        out.counters,
                        out.embedding_rows,
                        out.stripes.distances().len(),
                    )
                }
                Precision::Fp64 => {
                    let out = compute_unifrac::<f64>(&instance.tree, &instance.table, &compute)?;
                    (
                        out.counters,
                        out.embedding_rows,
                        out.stripes.distances().len(),
                    )
                }
            };
            times.push(started.elapsed().as_secs_f64());
            last = Some((counters, rows_used, entries));
        }
        let (counters, embedding_rows, entries) = last.expect("at least one repeat");
        rows.push(BenchRow {
            variant,
            times,
            counters,
            embedding_rows,
            entries,
        });
    }
    Ok(rows)
}
