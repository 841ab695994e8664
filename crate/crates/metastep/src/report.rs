//! Confidence intervals and long-format result tables.

use std::path::Path;

use anyhow::Result;
use metastep_core::eval::{CurveSummary, TaskCurve};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::csvio::{fmt_f64, CsvOut, LONG_HEADER};

/// Half-width of the two-sided 95% Student-t interval for a mean with the
/// given standard error over `samples` values; zero when `samples < 2`.
pub fn ci95_half_width(stderr: f64, samples: usize) -> f64 {
    if samples < 2 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (samples - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    t * stderr
}

/// Appends the rows of one run to a long-format table.
pub fn write_summary(out: &mut CsvOut, run: &str, s: &CurveSummary) -> Result<()> {
    let mut put = |step: usize, metric: &str, v: f64| out.row(&[run, &step.to_string(), metric, &fmt_f64(v)]);
    for step in 0..s.mean_return.len() {
        let half = ci95_half_width(s.stderr[step], s.tasks);
        put(step, "mean_return", s.mean_return[step])?;
        put(step, "stderr", s.stderr[step])?;
        put(step, "ci95_low", s.mean_return[step] - half)?;
        put(step, "ci95_high", s.mean_return[step] + half)?;
        put(step, "failure_rate", s.failure_rate[step])?;
        if let Some(h) = s.mean_h.get(step) {
            put(step, "mean_h", *h)?;
        }
    }
    Ok(())
}

pub fn write_curves(path: &Path, manifest_ref: &str, runs: &[(&str, &CurveSummary)]) -> Result<()> {
    let mut out = CsvOut::create(path, manifest_ref, &LONG_HEADER)?;
    for (run, s) in runs {
        write_summary(&mut out, run, s)?;
    }
    out.finish()
}

/// Per-task step sizes, `task,step,h`.
pub fn write_h_trace(path: &Path, manifest_ref: &str, curves: &[TaskCurve]) -> Result<()> {
    let mut out = CsvOut::create(path, manifest_ref, &["task", "step", "h"])?;
    for (task, c) in curves.iter().enumerate() {
        for (step, h) in c.step_sizes.iter().enumerate() {
            out.row(&[task.to_string(), step.to_string(), fmt_f64(*h)])?;
        }
    }
    out.finish()
}
