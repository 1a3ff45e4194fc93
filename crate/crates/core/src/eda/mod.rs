//! EDA decomposition, normalization, SCR peaks and momentary arousal.

pub mod cvxeda;

use serde::Serialize;

use crate::config::{CvxEdaParams, Normalization};
use crate::error::{Error, Result};
use crate::types::{Channel, SensorTrace, UtcSeconds};

pub use cvxeda::CvxEdaSolution;

/// Sample rate the decomposition is defined for.
pub const EDA_RATE_HZ: f64 = 4.0;
const MIN_SAMPLES: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdaDecomposition {
    pub start_time: UtcSeconds,
    pub sample_rate: f64,
    pub mixed: Vec<f64>,
    pub tonic: Vec<f64>,
    pub phasic: Vec<f64>,
    pub driver: Vec<f64>,
    pub residual: Vec<f64>,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
}

impl EdaDecomposition {
    pub fn len(&self) -> usize {
        self.mixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixed.is_empty()
    }
}

/// Splits a median-filtered 4 Hz EDA trace into tonic and phasic parts.
pub fn cvxeda_decompose(eda: &SensorTrace, params: &CvxEdaParams) -> Result<EdaDecomposition> {
    if eda.channel != Channel::Eda {
        return Err(Error::validation(format!("expected an EDA trace, got {}", eda.channel)));
    }
    if (eda.sample_rate - EDA_RATE_HZ).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "EDA decomposition needs {EDA_RATE_HZ} Hz input, got {} Hz",
            eda.sample_rate
        )));
    }
    if eda.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "EDA decomposition needs at least {MIN_SAMPLES} samples, got {}",
            eda.len()
        )));
    }
    let sol = cvxeda::solve(&eda.values, 1.0 / eda.sample_rate, params)?;
    Ok(EdaDecomposition {
        start_time: eda.start_time,
        sample_rate: eda.sample_rate,
        mixed: eda.values.clone(),
        tonic: sol.tonic,
        phasic: sol.phasic,
        driver: sol.driver,
        residual: sol.residual,
        iterations: sol.iterations,
        objective_history: sol.objective_history,
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Rescales a series per `method`; a constant series maps to zeros.
pub fn normalize(values: &[f64], method: Normalization) -> Vec<f64> {
    match method {
        Normalization::ZScore => {
            let (mean, std) = mean_std(values);
            if std <= 1e-12 * mean.abs().max(1.0) {
                vec![0.0; values.len()]
            } else {
                values.iter().map(|v| (v - mean) / std).collect()
            }
        }
        Normalization::MinMax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            if !(span > 1e-12 * lo.abs().max(1.0)) {
                vec![0.0; values.len()]
            } else {
                values.iter().map(|v| (v - lo) / span).collect()
            }
        }
    }
}

/// Normalizes mixed, tonic and phasic per session. Driver and residual are
/// left in μS.
pub fn normalize_eda(decomp: &EdaDecomposition, method: Normalization) -> EdaDecomposition {
    EdaDecomposition {
        mixed: normalize(&decomp.mixed, method),
        tonic: normalize(&decomp.tonic, method),
        phasic: normalize(&decomp.phasic, method),
        ..decomp.clone()
    }
}

/// Strict local maxima of at least `min_amplitude`. A plateau counts once,
/// at its first index; series endpoints are never peaks.
pub fn detect_scr_peaks(signal: &[f64], min_amplitude: f64) -> Vec<(usize, f64)> {
    let n = signal.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if signal[i] > signal[i - 1] {
            let mut j = i;
            while j + 1 < n && signal[j + 1] == signal[i] {
                j += 1;
            }
            if j + 1 < n && signal[j + 1] < signal[i] && signal[i] >= min_amplitude {
                peaks.push((i, signal[i]));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArousalProfile {
    pub window_seconds: f64,
    pub labels: Vec<usize>,
    pub arousing: Vec<bool>,
    pub num_arouse: usize,
    pub num_unarouse: usize,
    pub ratio_arouse: f64,
    pub level_fractions: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Labels each full window of the session as arousing (contains a peak) or
/// not, and bins window maxima into `levels` session quantile bins. A
/// trailing partial window is ignored.
pub fn arousal_profile(
    phasic: &[f64],
    sample_rate: f64,
    peaks: &[(usize, f64)],
    window_seconds: f64,
    levels: usize,
) -> Result<ArousalProfile> {
    if levels < 2 {
        return Err(Error::validation("arousal profile needs at least 2 levels"));
    }
    let win = (window_seconds * sample_rate).round() as usize;
    if win == 0 {
        return Err(Error::validation("arousal window is shorter than one sample"));
    }
    let n_windows = phasic.len() / win;
    if n_windows == 0 {
        return Err(Error::InsufficientData(format!(
            "session of {:.1} s is shorter than one {window_seconds} s window",
            phasic.len() as f64 / sample_rate
        )));
    }

    let mut arousing = vec![false; n_windows];
    for &(idx, _) in peaks {
        if let Some(a) = arousing.get_mut(idx / win) {
            *a = true;
        }
    }
    let num_arouse = arousing.iter().filter(|&&a| a).count();
    let num_unarouse = n_windows - num_arouse;

    let maxima: Vec<f64> = phasic
        .chunks_exact(win)
        .map(|w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut sorted = maxima.clone();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..levels)
        .map(|k| quantile_sorted(&sorted, k as f64 / levels as f64))
        .collect();
    let labels: Vec<usize> = maxima
        .iter()
        .map(|m| edges.iter().filter(|&&e| *m > e).count())
        .collect();
    let mut level_fractions = vec![0.0; levels];
    for &l in &labels {
        level_fractions[l] += 1.0;
    }
    level_fractions.iter_mut().for_each(|f| *f /= n_windows as f64);

    Ok(ArousalProfile {
        window_seconds,
        labels,
        arousing,
        num_arouse,
        num_unarouse,
        ratio_arouse: num_arouse as f64 / num_unarouse.max(1) as f64,
        level_fractions,
    })
}
