//! Slicing and re-gridding of uniformly sampled traces.

use crate::error::{Error, Result};
use crate::types::{SensorTrace, UtcSeconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Mean,
    Last,
}

/// Resamples `trace` over `[t0, t1)` onto a grid of `out_rate` Hz.
///
/// Each output sample aggregates the source samples inside its bin. Empty
/// bins are filled by linear interpolation between the neighbouring
/// non-empty bins (or the nearest one at the edges) as long as the empty run
/// is no longer than `max_gap_seconds`.
pub fn slice_resample(
    trace: &SensorTrace,
    t0: UtcSeconds,
    t1: UtcSeconds,
    out_rate: f64,
    aggregator: Aggregator,
    max_gap_seconds: f64,
) -> Result<SensorTrace> {
    slice_resample_many(&[trace], t0, t1, out_rate, aggregator, max_gap_seconds)
}

/// Like [`slice_resample`] but pools several traces of the same channel,
/// e.g. consecutive recording segments.
pub fn slice_resample_many(
    traces: &[&SensorTrace],
    t0: UtcSeconds,
    t1: UtcSeconds,
    out_rate: f64,
    aggregator: Aggregator,
    max_gap_seconds: f64,
) -> Result<SensorTrace> {
    if !(out_rate > 0.0) {
        return Err(Error::validation(format!(
            "output rate must be positive, got {out_rate}"
        )));
    }
    let Some(first) = traces.first() else {
        return Err(Error::EmptySlice { t0, t1 });
    };
    let n_bins = ((t1 - t0) * out_rate + 1e-9).floor();
    if !(n_bins >= 1.0) {
        return Err(Error::EmptySlice { t0, t1 });
    }
    let n_bins = n_bins as usize;

    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let mut ordered: Vec<&SensorTrace> = traces.to_vec();
    ordered.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));
    for trace in ordered {
        let rate = trace.sample_rate;
        let lo = ((t0 - trace.start_time) * rate - 1e-9).ceil().max(0.0) as usize;
        let hi = (((t1 - trace.start_time) * rate - 1e-9).ceil().max(0.0) as usize).min(trace.len());
        for i in lo..hi {
            let ts = trace.start_time + i as f64 / rate;
            let k = ((ts - t0) * out_rate + 1e-9).floor();
            if k < 0.0 || k >= n_bins as f64 {
                continue;
            }
            let k = k as usize;
            match aggregator {
                Aggregator::Mean => sums[k] += trace.values[i],
                Aggregator::Last => sums[k] = trace.values[i],
            }
            counts[k] += 1;
        }
    }

    let mut values: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| match (c, aggregator) {
            (0, _) => None,
            (c, Aggregator::Mean) => Some(s / c as f64),
            (_, Aggregator::Last) => Some(s),
        })
        .collect();
    let filled = fill_gaps(&mut values, out_rate, max_gap_seconds, t0, t1)?;
    Ok(SensorTrace {
        channel: first.channel,
        start_time: t0,
        sample_rate: out_rate,
        values: filled,
    })
}

fn fill_gaps(values: &mut [Option<f64>], rate: f64, max_gap_seconds: f64, t0: f64, t1: f64) -> Result<Vec<f64>> {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return Err(Error::EmptySlice { t0, t1 });
    };
    let check = |run: usize| -> Result<()> {
        let gap = run as f64 / rate;
        if gap > max_gap_seconds + 1e-9 {
            Err(Error::GapTooLong {
                gap_seconds: gap,
                limit_seconds: max_gap_seconds,
            })
        } else {
            Ok(())
        }
    };
    check(first)?;
    check(values.len() - 1 - last)?;
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > 1 {
            check(b - a - 1)?;
            let (va, vb) = (values[a].unwrap_or_default(), values[b].unwrap_or_default());
            for (k, slot) in values.iter_mut().enumerate().take(b).skip(a + 1) {
                let w = (k - a) as f64 / (b - a) as f64;
                *slot = Some(va + w * (vb - va));
            }
        }
    }
    let head = values[first];
    let tail = values[last];
    Ok(values
        .iter()
        .enumerate()
        .map(|(k, v)| match v {
            Some(v) => *v,
            None if k < first => head.unwrap_or_default(),
            None => tail.unwrap_or_default(),
        })
        .collect())
}
