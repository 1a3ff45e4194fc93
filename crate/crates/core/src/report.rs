//! Report bundle and its plot-ready CSV companions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{nested_cv, regime_sweep, CvSettings, EvalReport, PredictorMetrics, Regime};
use crate::features::{assemble_dataset, Family, FeatureTable, Target};

const FORMAT: &str = "engage-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub format: String,
    pub settings: CvSettings,
    /// Nested CV on every sensor family, one report per target.
    pub main: Vec<EvalReport>,
    pub regimes: Vec<EvalReport>,
    pub notices: Vec<String>,
}

impl ReportBundle {
    pub fn new(settings: CvSettings, main: Vec<EvalReport>, regimes: Vec<EvalReport>, notices: Vec<String>) -> Self {
        ReportBundle {
            format: FORMAT.into(),
            settings,
            main,
            regimes,
            notices,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).unwrap_or_default();
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: ReportBundle =
            serde_json::from_str(text).map_err(|e| Error::parse("report.json", e.line(), e.to_string()))?;
        if b.format != FORMAT {
            return Err(Error::validation(format!("unsupported report format {:?}", b.format)));
        }
        Ok(b)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Nested CV on every sensor family for each target, then the regime
/// sweep. Regimes identical to a main run reuse its report.
pub fn evaluate_bundle(
    table: &FeatureTable,
    targets: &[Target],
    regimes: &[Regime],
    settings: &CvSettings,
    min_subject_sessions: usize,
) -> Result<ReportBundle> {
    let ds = assemble_dataset(table, &Family::ALL)?;
    let main = targets
        .iter()
        .map(|&t| nested_cv(&ds, t, settings))
        .collect::<Result<Vec<_>>>()?;
    let reuse = |r: &Regime| {
        main.iter()
            .find(|m| r.subject.is_none() && r.families == Family::ALL && m.regime.target == r.target)
            .cloned()
    };
    let fresh: Vec<Regime> = regimes.iter().filter(|r| reuse(r).is_none()).cloned().collect();
    let sweep = if fresh.is_empty() {
        if regimes.is_empty() {
            return Err(Error::validation("the regime list is empty"));
        }
        Default::default()
    } else {
        regime_sweep(table, &fresh, settings, min_subject_sessions)?
    };
    let mut computed = sweep.reports.into_iter();
    let mut reports = Vec::new();
    for r in regimes {
        match reuse(r) {
            Some(report) => reports.push(report),
            None => {
                // Skipped subject regimes have no report.
                let next = computed.as_slice().first().filter(|c| {
                    c.regime.target == r.target && c.regime.subject == r.subject && c.regime.families == r.families
                });
                if next.is_some() {
                    reports.extend(computed.next());
                }
            }
        }
    }
    Ok(ReportBundle::new(settings.clone(), main, reports, sweep.notices))
}

/// `target,predictor,mae,rmse` for the main reports.
pub fn table6_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("target,predictor,mae,rmse\n");
    for r in &bundle.main {
        for name in PredictorMetrics::NAMES {
            let m = r.metrics.get(name).expect("known predictor");
            out.push_str(&format!("{},{name},{},{}\n", r.regime.target, m.mae, m.rmse));
        }
    }
    out
}

/// One row per regime report.
pub fn regime_csv<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> String {
    let mut out = String::from("families,subject,target,n_rows,n_groups");
    for name in PredictorMetrics::NAMES {
        out.push_str(&format!(",{name}_mae,{name}_rmse"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.regime.families_label(),
            r.regime.subject.map(|s| s.name()).unwrap_or(""),
            r.regime.target,
            r.n_rows,
            r.n_groups
        ));
        for name in PredictorMetrics::NAMES {
            let m = r.metrics.get(name).expect("known predictor");
            out.push_str(&format!(",{},{}", m.mae, m.rmse));
        }
        out.push('\n');
    }
    out
}

/// Absolute model errors per participant and labelled session.
pub fn per_participant_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("target,participant_id,class_id,fold,y_true,y_pred,abs_error\n");
    for r in &bundle.main {
        let mut rows: Vec<_> = r.predictions.iter().collect();
        rows.sort_by(|a, b| (&a.participant_id, &a.class_id).cmp(&(&b.participant_id, &b.class_id)));
        for p in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.regime.target,
                p.participant_id,
                p.class_id,
                p.fold,
                p.y,
                p.model,
                (p.model - p.y).abs()
            ));
        }
    }
    out
}

/// Writes report.json, table6.csv, table7.csv (sensor regimes),
/// table8.csv (subject regimes), regime_table.csv and
/// per_participant_errors.csv into `dir`.
pub fn write_report_files(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sensor = bundle.regimes.iter().filter(|r| r.regime.subject.is_none());
    let subject = bundle.regimes.iter().filter(|r| r.regime.subject.is_some());
    let files = [
        ("report.json", bundle.to_json()),
        ("table6.csv", table6_csv(bundle)),
        ("table7.csv", regime_csv(sensor)),
        ("table8.csv", regime_csv(subject)),
        ("regime_table.csv", regime_csv(&bundle.regimes)),
        ("per_participant_errors.csv", per_participant_csv(bundle)),
    ];
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
