//! Information-gain temporal segmentation and class boundary estimation.
//!
//! A multichannel nonnegative series is treated as a sequence of channel
//! "mass" distributions. The entropy of a segment is the Shannon entropy of
//! its per-channel share of the total mass; a segmentation is scored by how
//! much it lowers the length-weighted entropy relative to the whole series.

use serde::Serialize;

use crate::config::{ResampleConfig, SegmentationConfig};
use crate::error::{Error, Result};
use crate::resample::{slice_resample_many, Aggregator};
use crate::types::{SensorTrace, UtcSeconds};

const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationResult {
    /// Boundary sample indices, ascending; each lies strictly inside `(0, T)`.
    pub boundaries: Vec<usize>,
    /// Information gain in bits of the final segmentation.
    pub information_gain: f64,
    pub k: usize,
    /// Information gain after each boundary was added, in insertion order.
    pub gain_path: Vec<f64>,
}

/// Per-channel prefix sums so segment masses are O(1).
struct PrefixSums {
    sums: Vec<Vec<f64>>,
}

impl PrefixSums {
    fn new(channels: &[Vec<f64>]) -> Self {
        let sums = channels
            .iter()
            .map(|ch| {
                let mut acc = Vec::with_capacity(ch.len() + 1);
                acc.push(0.0);
                let mut s = 0.0;
                for &v in ch {
                    s += v;
                    acc.push(s);
                }
                acc
            })
            .collect();
        PrefixSums { sums }
    }

    fn entropy(&self, a: usize, b: usize) -> f64 {
        let masses: Vec<f64> = self.sums.iter().map(|p| p[b] - p[a]).collect();
        entropy_of(&masses)
    }
}

fn entropy_of(masses: &[f64]) -> f64 {
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return 0.0;
    }
    masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.log2()
        })
        .sum()
}

fn check_channels(x: &[Vec<f64>]) -> Result<usize> {
    let t = x.first().map_or(0, Vec::len);
    if x.is_empty() || t == 0 {
        return Err(Error::validation("segmentation needs at least one non-empty channel"));
    }
    if x.iter().any(|c| c.len() != t) {
        return Err(Error::validation("all channels must have the same length"));
    }
    if x.iter().flatten().any(|v| !(*v >= 0.0)) {
        return Err(Error::validation("channel values must be nonnegative"));
    }
    Ok(t)
}

/// Entropy in bits of the channel distribution over samples `[a, b)`.
/// An all-zero segment has entropy 0.
pub fn segment_entropy(x: &[Vec<f64>], a: usize, b: usize) -> Result<f64> {
    let t = check_channels(x)?;
    if b <= a || b > t {
        return Err(Error::validation(format!("invalid segment [{a}, {b}) for length {t}")));
    }
    let masses: Vec<f64> = x.iter().map(|c| c[a..b].iter().sum()).collect();
    Ok(entropy_of(&masses))
}

fn weighted_entropy(prefix: &PrefixSums, bounds: &[usize], t: usize) -> f64 {
    let mut edges = Vec::with_capacity(bounds.len() + 2);
    edges.push(0);
    edges.extend_from_slice(bounds);
    edges.push(t);
    edges
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / t as f64 * prefix.entropy(w[0], w[1]))
        .sum()
}

/// Greedy top-down segmentation: adds `k` boundaries one at a time, each
/// maximising the information gain given those already placed. Ties go to
/// the smallest index.
pub fn igts_topdown(x: &[Vec<f64>], k: usize) -> Result<SegmentationResult> {
    let t = check_channels(x)?;
    if k >= t {
        return Err(Error::validation(format!(
            "k = {k} boundaries need more than {t} samples"
        )));
    }
    let prefix = PrefixSums::new(x);
    let whole = prefix.entropy(0, t);

    let mut bounds: Vec<usize> = Vec::with_capacity(k);
    let mut gain_path = Vec::with_capacity(k);
    let mut current_gain = 0.0;
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for cand in 1..t {
            if bounds.binary_search(&cand).is_ok() {
                continue;
            }
            let mut trial = bounds.clone();
            let pos = trial.binary_search(&cand).unwrap_err();
            trial.insert(pos, cand);
            let gain = whole - weighted_entropy(&prefix, &trial, t);
            if best.is_none_or(|(_, g)| gain > g + TIE_TOLERANCE) {
                best = Some((cand, gain));
            }
        }
        let (cand, gain) = best.expect("k < T leaves a free candidate");
        let pos = bounds.binary_search(&cand).unwrap_err();
        bounds.insert(pos, cand);
        current_gain = gain.max(0.0);
        gain_path.push(current_gain);
    }

    Ok(SegmentationResult {
        boundaries: bounds,
        information_gain: current_gain,
        k,
        gain_path,
    })
}

/// Makes a single activity channel usable for entropy segmentation: the
/// channel is shifted to be nonnegative and paired with its complement so
/// that a change in level moves mass between the two channels.
pub fn prepare_activity_channels(series: &[f64], epsilon: f64) -> Vec<Vec<f64>> {
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = series.iter().map(|v| v - min + epsilon).collect();
    let complement = series.iter().map(|v| max - v + epsilon).collect();
    vec![shifted, complement]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySide {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryEstimate {
    pub side: BoundarySide,
    pub time: UtcSeconds,
    /// Participants whose data covered the search window.
    pub n_used: usize,
    /// True when nobody covered the window and the scheduled time was kept.
    pub fallback: bool,
    pub per_participant: Vec<UtcSeconds>,
}

/// Lower-middle median; `None` when empty.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Estimates when a class actually started or ended from the participants'
/// ACC magnitude around the scheduled time.
///
/// `acc_mags` holds, per participant, that participant's ACC magnitude
/// traces (one per recording segment).
pub fn class_boundary(
    acc_mags: &[Vec<&SensorTrace>],
    scheduled_t: UtcSeconds,
    side: BoundarySide,
    cfg: &SegmentationConfig,
    resample: &ResampleConfig,
) -> BoundaryEstimate {
    let t0 = scheduled_t - cfg.window_seconds;
    let t1 = scheduled_t + cfg.window_seconds;
    let mut estimates = Vec::new();
    for traces in acc_mags {
        if traces.is_empty() {
            continue;
        }
        let Ok(window) = slice_resample_many(traces, t0, t1, cfg.rate_hz, Aggregator::Mean, resample.max_gap_seconds)
        else {
            continue;
        };
        let channels = prepare_activity_channels(&window.values, cfg.epsilon);
        if let Ok(seg) = igts_topdown(&channels, 1) {
            estimates.push(t0 + seg.boundaries[0] as f64 / cfg.rate_hz);
        }
    }
    match lower_median(&estimates) {
        Some(time) => BoundaryEstimate {
            side,
            time,
            n_used: estimates.len(),
            fallback: false,
            per_participant: estimates,
        },
        None => {
            log::warn!("no ACC coverage around {scheduled_t}; keeping the scheduled {side:?} time");
            BoundaryEstimate {
                side,
                time: scheduled_t,
                n_used: 0,
                fallback: true,
                per_participant: Vec::new(),
            }
        }
    }
}
