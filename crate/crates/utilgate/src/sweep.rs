//! Calibration sweeps on a scoped worker pool.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use utilgate_core::{CalibrationTable, LabelBatch, LogitsBatch, Sweep, SweepPlan};

use crate::Error;

pub const THREADS_ENV: &str = "UTILGATE_THREADS";

/// Worker count from `UTILGATE_THREADS`, else the available parallelism.
pub fn worker_count() -> Result<usize, Error> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) => raw
            .trim()
            .parse::<NonZeroUsize>()
            .map(NonZeroUsize::get)
            .map_err(|_| Error::Usage(format!("{THREADS_ENV}={raw:?} is not a positive integer"))),
        Err(_) => Ok(thread::available_parallelism().map_or(1, NonZeroUsize::get)),
    }
}

/// Runs every cell of `plan` on `workers` threads. Each cell derives its own
/// seed, so the table does not depend on the worker count or scheduling.
pub fn run_sweep_parallel(
    logits: &LogitsBatch,
    labels: &LabelBatch,
    plan: &SweepPlan,
    workers: usize,
) -> Result<CalibrationTable, utilgate_core::Error> {
    let sweep = Sweep::prepare(logits, labels, plan)?;
    let cells = sweep.cell_count();
    let workers = workers.clamp(1, cells.max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<utilgate_core::Result<f64>>>> = Mutex::new(vec![None; cells]);

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= cells {
                    break;
                }
                let value = sweep.run_cell(index);
                results.lock().unwrap()[index] = Some(value);
            });
        }
    });

    // The first failing cell in cell order decides the error.
    let values = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|cell| cell.expect("every cell is visited"))
        .collect::<utilgate_core::Result<Vec<f64>>>()?;
    sweep.finish(values)
}
