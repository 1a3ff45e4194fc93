//! Per-session EDA, physical activity, skin temperature and room features.

use std::collections::BTreeMap;

use crate::config::EdaFeatureConfig;
use crate::eda::{arousal_profile, detect_scr_peaks, mean_std, ArousalProfile, EdaDecomposition};
use crate::types::{EnvTrace, SensorTrace, UtcSeconds};

/// Named features of one session; a missing feature is an absent key.
pub type FeatureMap = BTreeMap<String, f64>;

/// Trapezoidal area under `values` sampled at `rate` Hz, in unit·seconds.
type EnvField = fn(&crate::types::EnvSample) -> f64;

pub fn trapezoid_auc(values: &[f64], rate: f64) -> f64 {
    values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / rate
}

fn insert(map: &mut FeatureMap, name: impl Into<String>, value: Option<f64>) {
    if let Some(v) = value.filter(|v| v.is_finite()) {
        map.insert(name.into(), v);
    }
}

/// General and momentary EDA features. `raw` is the decomposition in μS
/// (used for areas), `norm` its normalized counterpart (used for the rest).
pub fn eda_session_features(
    raw: &EdaDecomposition,
    norm: &EdaDecomposition,
    cfg: &EdaFeatureConfig,
) -> (FeatureMap, Option<ArousalProfile>) {
    let mut out = FeatureMap::new();
    let parts = [
        ("eda", &norm.mixed, &raw.mixed),
        ("tonic", &norm.tonic, &raw.tonic),
        ("phasic", &norm.phasic, &raw.phasic),
    ];
    let mut phasic_peaks = Vec::new();
    for (prefix, normalized, microsiemens) in parts {
        let (avg, std) = mean_std(normalized);
        let peaks = detect_scr_peaks(normalized, cfg.min_peak_amplitude);
        let amp = (!peaks.is_empty()).then(|| peaks.iter().map(|p| p.1).sum::<f64>() / peaks.len() as f64);
        insert(&mut out, format!("{prefix}_avg"), Some(avg));
        insert(&mut out, format!("{prefix}_std"), Some(std));
        insert(&mut out, format!("{prefix}_n_p"), Some(peaks.len() as f64));
        insert(&mut out, format!("{prefix}_a_p"), amp);
        insert(
            &mut out,
            format!("{prefix}_auc"),
            Some(trapezoid_auc(microsiemens, raw.sample_rate)),
        );
        if prefix == "phasic" {
            phasic_peaks = peaks;
        }
    }

    let profile = arousal_profile(
        &norm.phasic,
        norm.sample_rate,
        &phasic_peaks,
        cfg.arousal_window_seconds,
        cfg.levels,
    )
    .ok();
    if let Some(p) = &profile {
        insert(&mut out, "num_arouse", Some(p.num_arouse as f64));
        insert(&mut out, "ratio_arouse", Some(p.ratio_arouse));
        for (k, f) in p.level_fractions.iter().enumerate() {
            insert(&mut out, format!("level_{k}"), Some(*f));
        }
    }
    (out, profile)
}

fn stats(values: impl Iterator<Item = f64>) -> Option<(f64, f64, f64)> {
    let (mut n, mut sum, mut lo, mut hi) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (n > 0).then(|| (sum / n as f64, hi, lo))
}

/// Room statistics over samples in `[t0, t1)`, skin temperature and
/// activity intensity. Each group is omitted when its input is absent.
pub fn context_features(
    env: Option<&EnvTrace>,
    st: Option<&SensorTrace>,
    acc_mag: Option<&SensorTrace>,
    window: (UtcSeconds, UtcSeconds),
) -> FeatureMap {
    let mut out = FeatureMap::new();
    if let Some(env) = env {
        let inside: Vec<_> = env
            .samples
            .iter()
            .filter(|s| s.timestamp >= window.0 && s.timestamp < window.1)
            .collect();
        let vars: [(&str, EnvField); 4] = [
            ("co2", |s| s.co2_ppm),
            ("temp", |s| s.temp_c),
            ("humid", |s| s.humidity_pct),
            ("sound", |s| s.sound_db),
        ];
        for (name, get) in vars {
            if let Some((mean, max, min)) = stats(inside.iter().map(|s| get(s))) {
                insert(&mut out, format!("mean_{name}"), Some(mean));
                insert(&mut out, format!("max_{name}"), Some(max));
                insert(&mut out, format!("min_{name}"), Some(min));
            }
        }
    }
    if let Some((mean, max, min)) = st.and_then(|t| stats(t.values.iter().copied())) {
        insert(&mut out, "sktemp_avg", Some(mean));
        insert(&mut out, "sktemp_max", Some(max));
        insert(&mut out, "sktemp_min", Some(min));
    }
    if let Some(acc) = acc_mag.filter(|t| !t.is_empty()) {
        let (mean, std) = mean_std(&acc.values);
        insert(&mut out, "acc_avg", Some(mean));
        insert(&mut out, "acc_std", Some(std));
    }
    out
}
