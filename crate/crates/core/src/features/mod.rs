//! The per-session feature registry, engagement labels, the `features.csv`
//! table and the modelling dataset.

pub mod session;
pub mod sync;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Subject, SurveyResponse};

pub use session::{context_features, eda_session_features, trapezoid_auc, FeatureMap};
pub use sync::{dtw_band, dtw_distance, dtw_sync, pearson_sync, peer_average};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "EDA")]
    Eda,
    #[serde(rename = "HRV")]
    Hrv,
    #[serde(rename = "ACC")]
    Acc,
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "ENV")]
    Env,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Eda, Family::Hrv, Family::Acc, Family::St, Family::Env];
    pub const WEARABLE: [Family; 4] = [Family::Eda, Family::Hrv, Family::Acc, Family::St];

    pub fn name(self) -> &'static str {
        match self {
            Family::Eda => "EDA",
            Family::Hrv => "HRV",
            Family::Acc => "ACC",
            Family::St => "ST",
            Family::Env => "ENV",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown sensor family {s:?}; expected one of EDA, HRV, ACC, ST, ENV"
                ))
            })
    }
}

const SIGNALS: [&str; 3] = ["eda", "tonic", "phasic"];
const ENV_VARS: [&str; 4] = ["co2", "temp", "humid", "sound"];

/// Feature names in table order, each tagged with its sensor family.
pub fn registry(levels: usize) -> Vec<(String, Family)> {
    let mut out = Vec::new();
    let mut eda = |name: String| out.push((name, Family::Eda));
    for stat in ["avg", "std", "n_p", "a_p", "auc"] {
        for s in SIGNALS {
            eda(format!("{s}_{stat}"));
        }
    }
    eda("num_arouse".into());
    eda("ratio_arouse".into());
    for k in 0..levels {
        eda(format!("level_{k}"));
    }
    for stat in ["pcct", "pccs", "dtwt", "dtws"] {
        for s in SIGNALS {
            eda(format!("{s}_{stat}"));
        }
    }
    for name in [
        "bpm",
        "meani",
        "sdnn",
        "lf_power",
        "hf_power",
        "ratio_lf_hf",
        "rmssd",
        "sdsd",
        "pnn50",
        "pnn20",
    ] {
        out.push((format!("hrv_{name}"), Family::Hrv));
    }
    for name in ["acc_avg", "acc_std", "acc_dtw_t", "acc_dtw_s", "acc_pcc_t", "acc_pcc_s"] {
        out.push((name.to_string(), Family::Acc));
    }
    for stat in ["avg", "max", "min"] {
        out.push((format!("sktemp_{stat}"), Family::St));
    }
    for var in ENV_VARS {
        for stat in ["mean", "max", "min"] {
            out.push((format!("{stat}_{var}"), Family::Env));
        }
    }
    out
}

/// Family of a registry name (any number of arousal levels).
pub fn family_of(name: &str) -> Option<Family> {
    if let Some(k) = name.strip_prefix("level_") {
        return (!k.is_empty() && k.bytes().all(|b| b.is_ascii_digit())).then_some(Family::Eda);
    }
    registry(0).into_iter().find(|(n, _)| n == name).map(|(_, f)| f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Behavioural,
    Emotional,
    Cognitive,
    Overall,
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::Behavioural,
        Target::Emotional,
        Target::Cognitive,
        Target::Overall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Behavioural => "behavioural",
            Target::Emotional => "emotional",
            Target::Cognitive => "cognitive",
            Target::Overall => "overall",
        }
    }

    /// A single target name, or `all` for every dimension.
    pub fn parse_list(s: &str) -> Result<Vec<Target>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Target::ALL.to_vec());
        }
        Ok(vec![s.parse()?])
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown target {s:?}; valid targets are behavioural, emotional, cognitive, overall, all"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementScores {
    pub behavioural: f64,
    pub emotional: f64,
    pub cognitive: f64,
    pub overall: f64,
}

impl EngagementScores {
    pub fn get(&self, target: Target) -> f64 {
        match target {
            Target::Behavioural => self.behavioural,
            Target::Emotional => self.emotional,
            Target::Cognitive => self.cognitive,
            Target::Overall => self.overall,
        }
    }
}

/// Scores in [1, 5] from the five Likert items; items 2 and 4 are reversed.
pub fn engagement_scores(survey: &SurveyResponse) -> EngagementScores {
    let [q1, q2, q3, q4, q5] = survey.items.map(f64::from);
    let (r2, r4) = (-q2, -q4);
    EngagementScores {
        behavioural: (q1 + r2) / 2.0 + 3.0,
        emotional: (q3 + r4) / 2.0 + 3.0,
        cognitive: q5 + 3.0,
        overall: (q1 + r2 + q3 + r4 + q5) / 5.0 + 3.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub participant_id: String,
    pub class_id: String,
    pub subject: Subject,
    pub features: FeatureMap,
    pub scores: Option<EngagementScores>,
}

/// Rows of per-session features with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

const KEY_COLUMNS: [&str; 3] = ["participant_id", "class_id", "subject"];

impl FeatureTable {
    /// Table over the registry columns, rows sorted by session key.
    pub fn new(levels: usize, mut rows: Vec<FeatureRow>) -> Self {
        rows.sort_by(|a, b| (&a.participant_id, &a.class_id).cmp(&(&b.participant_id, &b.class_id)));
        FeatureTable {
            feature_names: registry(levels).into_iter().map(|(n, _)| n).collect(),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = KEY_COLUMNS
            .iter()
            .copied()
            .chain(self.feature_names.iter().map(String::as_str))
            .chain(Target::ALL.iter().map(|t| t.name()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut cells = vec![
                row.participant_id.clone(),
                row.class_id.clone(),
                row.subject.to_string(),
            ];
            cells.extend(
                self.feature_names
                    .iter()
                    .map(|n| row.features.get(n).map(|v| v.to_string()).unwrap_or_default()),
            );
            cells.extend(
                Target::ALL
                    .iter()
                    .map(|t| row.scores.map(|s| s.get(*t).to_string()).unwrap_or_default()),
            );
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&path.display().to_string(), &text)
    }

    pub fn parse_csv(file: &str, content: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(content.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(file, 1, e.to_string()))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        let n = cols.len();
        let targets: Vec<&str> = Target::ALL.iter().map(|t| t.name()).collect();
        if n < KEY_COLUMNS.len() + targets.len() || cols[..3] != KEY_COLUMNS || cols[n - targets.len()..] != targets[..]
        {
            return Err(Error::parse(
                file,
                1,
                "header must start with participant_id,class_id,subject and end with behavioural,emotional,cognitive,overall",
            ));
        }
        let feature_names: Vec<String> = cols[3..n - targets.len()].iter().map(|s| s.to_string()).collect();
        for (i, name) in feature_names.iter().enumerate() {
            if family_of(name).is_none() {
                return Err(Error::parse(file, 1, format!("unknown feature column {name:?}")));
            }
            if feature_names[..i].contains(name) {
                return Err(Error::parse(file, 1, format!("duplicate feature column {name:?}")));
            }
        }

        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::parse(file, line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.len() != n {
                return Err(Error::parse(
                    file,
                    line,
                    format!("expected {n} fields, found {}", record.len()),
                ));
            }
            let number = |i: usize| -> Result<Option<f64>> {
                let cell = &record[i];
                if cell.is_empty() {
                    return Ok(None);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(Error::parse(
                        file,
                        line,
                        format!("column {}: {cell:?} is not a finite number", cols[i]),
                    )),
                }
            };
            let participant_id = record[0].to_string();
            let class_id = record[1].to_string();
            if participant_id.is_empty() || class_id.is_empty() {
                return Err(Error::parse(file, line, "empty session key"));
            }
            let subject: Subject = record[2]
                .parse()
                .map_err(|e: Error| Error::parse(file, line, e.to_string()))?;
            let mut features = FeatureMap::new();
            for (k, name) in feature_names.iter().enumerate() {
                if let Some(v) = number(3 + k)? {
                    features.insert(name.clone(), v);
                }
            }
            let score_cells: Vec<Option<f64>> = (n - 4..n).map(number).collect::<Result<_>>()?;
            let scores = match score_cells[..] {
                [Some(b), Some(e), Some(c), Some(o)] => {
                    if [b, e, c, o].iter().any(|v| !(1.0..=5.0).contains(v)) {
                        return Err(Error::parse(file, line, "engagement scores must lie in [1, 5]"));
                    }
                    Some(EngagementScores {
                        behavioural: b,
                        emotional: e,
                        cognitive: c,
                        overall: o,
                    })
                }
                [None, None, None, None] => None,
                _ => {
                    return Err(Error::parse(
                        file,
                        line,
                        "engagement scores must be all present or all empty",
                    ))
                }
            };
            rows.push(FeatureRow {
                participant_id,
                class_id,
                subject,
                features,
                scores,
            });
        }
        Ok(FeatureTable { feature_names, rows })
    }
}

/// Labelled rows restricted to a set of sensor families.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub families: Vec<Family>,
    pub x: Vec<Vec<Option<f64>>>,
    pub targets: Vec<EngagementScores>,
    pub groups: Vec<String>,
    pub class_ids: Vec<String>,
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn target(&self, t: Target) -> Vec<f64> {
        self.targets.iter().map(|s| s.get(t)).collect()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            families: self.families.clone(),
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
            class_ids: idx.iter().map(|&i| self.class_ids[i].clone()).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i]).collect(),
        }
    }

    pub fn filter_subject(&self, subject: Subject) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.subjects[i] == subject).collect();
        self.subset(&idx)
    }
}

/// Builds the modelling matrix from labelled rows, keeping the columns of
/// `families` only. Rows are ordered by session key.
pub fn assemble_dataset(table: &FeatureTable, families: &[Family]) -> Result<Dataset> {
    if families.is_empty() {
        return Err(Error::validation("no sensor family selected"));
    }
    let columns: Vec<String> = table
        .feature_names
        .iter()
        .filter(|n| family_of(n).is_some_and(|f| families.contains(&f)))
        .cloned()
        .collect();
    if columns.is_empty() {
        return Err(Error::validation("the selected families have no feature columns"));
    }
    let mut rows: Vec<&FeatureRow> = table.rows.iter().filter(|r| r.scores.is_some()).collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData("no session has engagement labels".into()));
    }
    rows.sort_by(|a, b| (&a.participant_id, &a.class_id).cmp(&(&b.participant_id, &b.class_id)));
    let mut fams: Vec<Family> = families.to_vec();
    fams.sort();
    fams.dedup();
    Ok(Dataset {
        x: rows
            .iter()
            .map(|r| columns.iter().map(|c| r.features.get(c).copied()).collect())
            .collect(),
        targets: rows.iter().filter_map(|r| r.scores).collect(),
        groups: rows.iter().map(|r| r.participant_id.clone()).collect(),
        class_ids: rows.iter().map(|r| r.class_id.clone()).collect(),
        subjects: rows.iter().map(|r| r.subject).collect(),
        feature_names: columns,
        families: fams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn survey(items: [i8; 5]) -> SurveyResponse {
        SurveyResponse::new("s01", "c1", 0.0, items, 30.0).unwrap()
    }

    #[test]
    fn registry_shape() {
        let r = registry(4);
        assert_eq!(r.len(), 64);
        let count = |f: Family| r.iter().filter(|(_, g)| *g == f).count();
        assert_eq!(
            (
                count(Family::Eda),
                count(Family::Hrv),
                count(Family::Acc),
                count(Family::St),
                count(Family::Env)
            ),
            (33, 10, 6, 3, 12)
        );
        for (name, fam) in &r {
            assert_eq!(family_of(name), Some(*fam), "{name}");
        }
        assert!(r.iter().any(|(n, _)| n == "tonic_a_p"));
        assert!(r.iter().any(|(n, _)| n == "mean_co2"));
        assert_eq!(family_of("level_12"), Some(Family::Eda));
        assert_eq!(family_of("level_"), None);
    }

    #[test]
    fn score_examples() {
        let s = engagement_scores(&survey([2, -2, 2, -2, 2]));
        assert_eq!(
            (s.behavioural, s.emotional, s.cognitive, s.overall),
            (5.0, 5.0, 5.0, 5.0)
        );
        let s = engagement_scores(&survey([0; 5]));
        assert_eq!(
            (s.behavioural, s.emotional, s.cognitive, s.overall),
            (3.0, 3.0, 3.0, 3.0)
        );
        let s = engagement_scores(&survey([1, 0, -1, 1, 2]));
        assert_eq!((s.behavioural, s.emotional, s.cognitive), (3.5, 2.0, 5.0));
        assert!((s.overall - 3.2).abs() < 1e-15);
    }

    #[test]
    fn target_parsing() {
        assert_eq!("Overall".parse::<Target>().unwrap(), Target::Overall);
        let err = "foo".parse::<Target>().unwrap_err().to_string();
        for t in ["behavioural", "emotional", "cognitive", "overall", "all"] {
            assert!(err.contains(t));
        }
    }

    fn row(pid: &str, class: &str, scored: bool) -> FeatureRow {
        let mut features = FeatureMap::new();
        features.insert("eda_avg".into(), 0.25);
        features.insert("hrv_bpm".into(), 71.5);
        features.insert("mean_co2".into(), 812.0);
        FeatureRow {
            participant_id: pid.into(),
            class_id: class.into(),
            subject: Subject::Maths,
            features,
            scores: scored.then_some(EngagementScores {
                behavioural: 3.5,
                emotional: 2.0,
                cognitive: 5.0,
                overall: 3.2,
            }),
        }
    }

    #[test]
    fn table_round_trip() {
        let t = FeatureTable::new(4, vec![row("s02", "c1", true), row("s01", "c2", false)]);
        let text = t.to_csv();
        let back = FeatureTable::parse_csv("features.csv", &text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.rows[0].participant_id, "s01");
    }

    #[test]
    fn table_rejects_bad_input() {
        let t = FeatureTable::new(4, vec![row("s01", "c1", true)]);
        let text = t.to_csv();
        let bad_col = text.replacen("eda_avg", "eda_mean", 1);
        assert!(FeatureTable::parse_csv("f", &bad_col).is_err());
        let nan = text.replacen("71.5", "NaN", 1);
        assert!(matches!(
            FeatureTable::parse_csv("f", &nan),
            Err(Error::Parse { line: 2, .. })
        ));
        let partial = text.replacen(",3.2\n", ",\n", 1);
        assert!(FeatureTable::parse_csv("f", &partial).is_err());
    }

    #[test]
    fn dataset_family_selection() {
        let t = FeatureTable::new(
            4,
            vec![row("s02", "c1", true), row("s01", "c2", false), row("s01", "c1", true)],
        );
        let d = assemble_dataset(&t, &[Family::Eda]).unwrap();
        assert_eq!(d.feature_names.len(), 33);
        assert!(d.feature_names.iter().all(|n| family_of(n) == Some(Family::Eda)));
        assert_eq!(d.len(), 2);
        assert_eq!(d.groups, vec!["s01", "s02"]);
        let all = assemble_dataset(&t, &Family::ALL).unwrap();
        assert_eq!(all.feature_names.len(), 64);
        // Missing teacher data stays missing until imputation.
        let pcct = all.feature_names.iter().position(|n| n == "eda_pcct").unwrap();
        assert_eq!(all.x[0][pcct], None);
        assert!(assemble_dataset(&t, &[]).is_err());
    }

    #[test]
    fn scores_exhaustive_range_and_monotonicity() {
        let mut all = Vec::new();
        for code in 0..3125u32 {
            let mut items = [0i8; 5];
            let mut c = code;
            for item in items.iter_mut() {
                *item = (c % 5) as i8 - 2;
                c /= 5;
            }
            all.push(items);
        }
        for items in all {
            let s = engagement_scores(&survey(items));
            for t in Target::ALL {
                assert!((1.0..=5.0).contains(&s.get(t)));
            }
            if items[0] < 2 {
                let mut up = items;
                up[0] += 1;
                let u = engagement_scores(&survey(up));
                assert!(u.behavioural >= s.behavioural && u.overall >= s.overall);
            }
        }
    }
}
