//! Median filtering, ACC magnitude and the EDA quality gate.

use serde::Serialize;

use crate::config::GateConfig;
use crate::error::{Error, Result};
use crate::types::{Channel, SensorTrace};

/// Window length in samples for a duration: rounded, then forced odd.
pub fn window_samples(window_seconds: f64, rate: f64) -> usize {
    let w = (window_seconds * rate).round().max(1.0) as usize;
    if w.is_multiple_of(2) {
        w + 1
    } else {
        w
    }
}

/// Centered sliding median over `window` samples (odd). Near the edges the
/// window shrinks symmetrically so it stays centered on the sample.
pub fn median_filter_values(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            let half = (window / 2).min(i).min(n - 1 - i);
            let lo = i - half;
            let hi = i + half + 1;
            buf.clear();
            buf.extend_from_slice(&values[lo..hi]);
            let mid = (buf.len() - 1) / 2;
            let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
            *m
        })
        .collect()
}

pub fn median_filter(trace: &SensorTrace, window_seconds: f64) -> Result<SensorTrace> {
    if trace.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{}: cannot filter an empty trace",
            trace.channel
        )));
    }
    if !(window_seconds > 0.0) {
        return Err(Error::validation("median window must be positive"));
    }
    let w = window_samples(window_seconds, trace.sample_rate);
    Ok(trace.with_values(median_filter_values(&trace.values, w)))
}

/// Euclidean norm of the three axes followed by a median filter of
/// `median_seconds`.
pub fn acc_magnitude(x: &SensorTrace, y: &SensorTrace, z: &SensorTrace, median_seconds: f64) -> Result<SensorTrace> {
    if x.len() != y.len() || x.len() != z.len() {
        return Err(Error::validation(format!(
            "ACC axes differ in length: {} / {} / {}",
            x.len(),
            y.len(),
            z.len()
        )));
    }
    if x.sample_rate != y.sample_rate || x.sample_rate != z.sample_rate {
        return Err(Error::validation("ACC axes differ in sample rate"));
    }
    let norm: Vec<f64> = x
        .values
        .iter()
        .zip(&y.values)
        .zip(&z.values)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect();
    let raw = SensorTrace {
        channel: Channel::AccMag,
        start_time: x.start_time,
        sample_rate: x.sample_rate,
        values: norm,
    };
    median_filter(&raw, median_seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub flat_fraction: f64,
    pub n_abrupt_drops: usize,
    pub quantization_flag: bool,
    pub accepted: bool,
    pub reasons: Vec<String>,
}

/// Marks maximal runs of `len >= min_len` samples satisfying `same_run`.
fn mark_runs(values: &[f64], min_len: usize, flat: &mut [bool], same_run: impl Fn(usize, usize) -> bool) {
    let n = values.len();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && same_run(start, end) {
            end += 1;
        }
        if end - start >= min_len {
            flat[start..end].iter_mut().for_each(|f| *f = true);
        }
        start = end;
    }
}

/// Screens a raw EDA trace for flat responses, abrupt drops and quantization.
pub fn eda_quality_gate(eda: &SensorTrace, cfg: &GateConfig) -> QualityReport {
    let v = &eda.values;
    let n = v.len();
    let run_len = (cfg.flat_run_seconds * eda.sample_rate).round().max(1.0) as usize;

    let mut flat = vec![false; n];
    // Near-zero contact loss.
    let low = |i: usize| v[i] < cfg.flat_level_us;
    let mut i = 0;
    while i < n {
        if low(i) {
            let mut j = i + 1;
            while j < n && low(j) {
                j += 1;
            }
            if j - i >= run_len {
                flat[i..j].iter_mut().for_each(|f| *f = true);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    // Zero-variance stretches.
    mark_runs(v, run_len, &mut flat, |s, e| v[e] == v[s]);
    let flat_fraction = if n == 0 {
        1.0
    } else {
        flat.iter().filter(|&&f| f).count() as f64 / n as f64
    };

    let n_abrupt_drops = v.windows(2).filter(|w| w[0] - w[1] > cfg.drop_threshold_us).count();

    let win = (cfg.quantization_window_seconds * eda.sample_rate).round().max(1.0) as usize;
    let mut distinct: Vec<usize> = v
        .chunks(win)
        .filter(|c| c.len() == win || n < win)
        .map(|c| {
            let mut s = c.to_vec();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s.len()
        })
        .collect();
    distinct.sort_unstable();
    let quantization_flag = match distinct.len() {
        0 => true,
        len => {
            let median = if len % 2 == 1 {
                distinct[len / 2] as f64
            } else {
                (distinct[len / 2 - 1] + distinct[len / 2]) as f64 / 2.0
            };
            median < cfg.min_distinct_values as f64
        }
    };

    let mut reasons = Vec::new();
    if flat_fraction > cfg.max_flat_fraction {
        reasons.push(format!("flat fraction {flat_fraction:.3} > {}", cfg.max_flat_fraction));
    }
    if n_abrupt_drops > cfg.max_drops {
        reasons.push(format!("{n_abrupt_drops} abrupt drops > {}", cfg.max_drops));
    }
    if quantization_flag {
        reasons.push("quantized signal".to_string());
    }
    QualityReport {
        flat_fraction,
        n_abrupt_drops,
        quantization_flag,
        accepted: reasons.is_empty(),
        reasons,
    }
}
