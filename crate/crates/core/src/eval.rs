//! Group-aware cross-validation, baselines and regime sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, GridConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::features::{assemble_dataset, Dataset, Family, FeatureTable, Target};
use crate::model::{
    baseline_average, baseline_random, fit_gbm, fit_linear, predict_gbm, predict_linear, top_k_features, GbmModel,
    GbmParams,
};
use crate::types::Subject;

/// Distinct groups shuffled by a seeded stream and dealt round-robin into
/// `k` folds.
pub fn make_group_folds(groups: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut distinct: Vec<String> = groups.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 {
        return Err(Error::validation("at least 2 folds are needed"));
    }
    if k > distinct.len() {
        return Err(Error::validation(format!(
            "{k} folds requested but only {} groups are available",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    distinct.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, g) in distinct.into_iter().enumerate() {
        folds[i % k].push(g);
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn score_predictions(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    if y.len() != y_hat.len() {
        return Err(Error::validation(format!(
            "{} targets but {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("no predictions to score".into()));
    }
    let n = y.len() as f64;
    let mae = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt();
    Ok(Metrics { mae, rmse })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub model: Metrics,
    pub linear: Metrics,
    pub average: Metrics,
    pub random: Metrics,
}

impl PredictorMetrics {
    pub const NAMES: [&'static str; 4] = ["model", "linear", "average", "random"];

    pub fn get(&self, name: &str) -> Option<Metrics> {
        match name {
            "model" => Some(self.model),
            "linear" => Some(self.linear),
            "average" => Some(self.average),
            "random" => Some(self.random),
            _ => None,
        }
    }

    fn score(y: &[f64], p: &Predictions) -> Result<Self> {
        Ok(PredictorMetrics {
            model: score_predictions(y, &p.model)?,
            linear: score_predictions(y, &p.linear)?,
            average: score_predictions(y, &p.average)?,
            random: score_predictions(y, &p.random)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    NestedCv,
    Loso,
}

/// What a report was computed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeTag {
    pub families: Vec<Family>,
    pub subject: Option<Subject>,
    pub target: Target,
}

impl RegimeTag {
    pub fn families_label(&self) -> String {
        self.families.iter().map(|f| f.name()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub mean_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub index: usize,
    pub test_groups: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub params: GbmParams,
    pub grid: Vec<GridScore>,
    pub selected_features: Vec<String>,
    pub metrics: PredictorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantErrors {
    pub participant_id: String,
    pub n: usize,
    pub median_abs_error: f64,
    pub metrics: PredictorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub participant_id: String,
    pub class_id: String,
    pub fold: usize,
    pub y: f64,
    pub model: f64,
    pub linear: f64,
    pub average: f64,
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub regime: RegimeTag,
    pub seed: u64,
    pub n_rows: usize,
    pub n_groups: usize,
    /// Where the top-k reduction happens: `per_outer_fold` or `none`.
    pub feature_selection: String,
    pub metrics: PredictorMetrics,
    pub folds: Vec<FoldReport>,
    pub participants: Vec<ParticipantErrors>,
    pub predictions: Vec<PredictionRecord>,
}

/// Settings shared by the evaluation protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub grid: GridConfig,
    pub min_samples_leaf: usize,
    pub top_k: usize,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
}

impl CvSettings {
    pub fn new(model: &ModelConfig, eval: &EvalConfig, seed: u64) -> Self {
        CvSettings {
            grid: model.grid.clone(),
            min_samples_leaf: model.min_samples_leaf,
            top_k: model.top_k_features,
            outer_folds: eval.outer_folds,
            inner_folds: eval.inner_folds,
            seed,
        }
    }
}

#[derive(Default)]
struct Predictions {
    model: Vec<f64>,
    linear: Vec<f64>,
    average: Vec<f64>,
    random: Vec<f64>,
}

/// Independent seed for one purpose and fold.
fn derive_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 20).wrapping_add(index as u64));
    rng.random()
}

const STREAM_OUTER: u64 = 1;
const STREAM_INNER: u64 = 2;
const STREAM_RANDOM: u64 = 3;
/// Inner-fold seed index of the final fit, past any outer-fold index.
const FINAL_FIT: usize = 1 << 16;

fn columns(x: &[Vec<Option<f64>>], cols: &[usize]) -> Vec<Vec<Option<f64>>> {
    x.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect()
}

fn split_rows(ds: &Dataset, test_groups: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
    let test: BTreeSet<&str> = test_groups.iter().map(|s| s.as_str()).collect();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (i, g) in ds.groups.iter().enumerate() {
        if test.contains(g.as_str()) {
            te.push(i);
        } else {
            tr.push(i);
        }
    }
    let train_groups: BTreeSet<&str> = tr.iter().map(|&i| ds.groups[i].as_str()).collect();
    if train_groups.iter().any(|g| test.contains(g)) {
        return Err(Error::validation("group leakage between train and test rows"));
    }
    Ok((tr, te))
}

fn gbm_params(num_leaves: usize, learning_rate: f64, n_rounds: usize, settings: &CvSettings) -> GbmParams {
    GbmParams {
        num_leaves,
        learning_rate,
        n_rounds,
        min_samples_leaf: settings.min_samples_leaf,
        seed: settings.seed,
    }
}

/// Inner grid search on `train`. Ties go to fewer rounds, then fewer leaves.
fn grid_search(
    ds: &Dataset,
    y: &[f64],
    train: &[usize],
    settings: &CvSettings,
    outer: usize,
) -> Result<(GbmParams, Vec<GridScore>)> {
    let sub = ds.subset(train);
    let sub_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let inner = make_group_folds(
        &sub.groups,
        settings.inner_folds,
        derive_seed(settings.seed, STREAM_INNER, outer),
    )?;

    let mut rounds = settings.grid.n_rounds.clone();
    rounds.sort_unstable();
    rounds.dedup();
    let mut leaves = settings.grid.num_leaves.clone();
    leaves.sort_unstable();
    leaves.dedup();
    let mut rates = settings.grid.learning_rate.clone();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let max_rounds = *rounds.last().expect("validated grid");

    // mae[(rounds, leaves, rate)] summed over inner folds.
    let mut sums = vec![vec![vec![0.0; rates.len()]; leaves.len()]; rounds.len()];
    for fold in &inner {
        let (tr, va) = split_rows(&sub, fold)?;
        let x_tr: Vec<_> = tr.iter().map(|&i| sub.x[i].clone()).collect();
        let y_tr: Vec<f64> = tr.iter().map(|&i| sub_y[i]).collect();
        let x_va: Vec<_> = va.iter().map(|&i| sub.x[i].clone()).collect();
        let y_va: Vec<f64> = va.iter().map(|&i| sub_y[i]).collect();
        for (li, &nl) in leaves.iter().enumerate() {
            for (ri, &lr) in rates.iter().enumerate() {
                let full = fit_gbm(
                    &sub.feature_names,
                    &x_tr,
                    &y_tr,
                    &gbm_params(nl, lr, max_rounds, settings),
                )?;
                for (ni, &nr) in rounds.iter().enumerate() {
                    let m = full.truncated(nr);
                    let p = predict_gbm(&m, &sub.feature_names, &x_va)?;
                    sums[ni][li][ri] += score_predictions(&y_va, &p)?.mae;
                }
            }
        }
    }

    let mut scores = Vec::new();
    let mut best: Option<(f64, GbmParams)> = None;
    for (ni, &nr) in rounds.iter().enumerate() {
        for (li, &nl) in leaves.iter().enumerate() {
            for (ri, &lr) in rates.iter().enumerate() {
                let mean_mae = sums[ni][li][ri] / inner.len() as f64;
                scores.push(GridScore {
                    num_leaves: nl,
                    learning_rate: lr,
                    n_rounds: nr,
                    mean_mae,
                });
                if best.is_none_or(|(b, _)| mean_mae < b) {
                    best = Some((mean_mae, gbm_params(nl, lr, nr, settings)));
                }
            }
        }
    }
    let (_, params) = best.expect("non-empty grid");
    Ok((params, scores))
}

enum Mode<'a> {
    Nested(&'a CvSettings),
    Fixed(GbmParams, u64),
}

fn run_folds(
    ds: &Dataset,
    target: Target,
    plan: &[Vec<String>],
    mode: Mode,
) -> Result<(Vec<FoldReport>, Vec<PredictionRecord>)> {
    let y = ds.target(target);
    let seed = match &mode {
        Mode::Nested(s) => s.seed,
        Mode::Fixed(_, seed) => *seed,
    };
    let mut folds = Vec::with_capacity(plan.len());
    let mut records: Vec<Option<PredictionRecord>> = vec![None; ds.len()];
    for (k, test_groups) in plan.iter().enumerate() {
        let (train, test) = split_rows(ds, test_groups)?;
        if test.is_empty() {
            continue;
        }
        let x_tr: Vec<_> = train.iter().map(|&i| ds.x[i].clone()).collect();
        let y_tr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let x_te: Vec<_> = test.iter().map(|&i| ds.x[i].clone()).collect();
        let y_te: Vec<f64> = test.iter().map(|&i| y[i]).collect();

        let (params, grid, model, names) = match &mode {
            Mode::Nested(settings) => {
                let (params, grid) = grid_search(ds, &y, &train, settings, k)?;
                let full = fit_gbm(&ds.feature_names, &x_tr, &y_tr, &params)?;
                let keep = top_k_features(&full, settings.top_k);
                let names: Vec<String> = keep.iter().map(|&c| ds.feature_names[c].clone()).collect();
                let reduced = fit_gbm(&names, &columns(&x_tr, &keep), &y_tr, &params)?;
                (params, grid, reduced, names)
            }
            Mode::Fixed(params, _) => {
                let model = fit_gbm(&ds.feature_names, &x_tr, &y_tr, params)?;
                (*params, Vec::new(), model, ds.feature_names.clone())
            }
        };
        let cols: Vec<usize> = names
            .iter()
            .map(|n| {
                ds.feature_names
                    .iter()
                    .position(|m| m == n)
                    .expect("selected from registry")
            })
            .collect();
        let preds = Predictions {
            model: predict_gbm(&model, &names, &columns(&x_te, &cols))?,
            linear: predict_linear(&fit_linear(&ds.feature_names, &x_tr, &y_tr)?, &ds.feature_names, &x_te)?,
            average: baseline_average(&y_tr)?.predict(test.len()),
            random: baseline_random(&y_tr, derive_seed(seed, STREAM_RANDOM, k))?.predict(test.len()),
        };
        for (j, &i) in test.iter().enumerate() {
            records[i] = Some(PredictionRecord {
                participant_id: ds.groups[i].clone(),
                class_id: ds.class_ids[i].clone(),
                fold: k,
                y: y[i],
                model: preds.model[j],
                linear: preds.linear[j],
                average: preds.average[j],
                random: preds.random[j],
            });
        }
        folds.push(FoldReport {
            index: k,
            test_groups: test_groups.clone(),
            n_train: train.len(),
            n_test: test.len(),
            params,
            grid,
            selected_features: if matches!(mode, Mode::Nested(_)) {
                names
            } else {
                Vec::new()
            },
            metrics: PredictorMetrics::score(&y_te, &preds)?,
        });
    }
    let records = records
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::validation("fold plan does not cover every row"))?;
    Ok((folds, records))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn collect(records: &[PredictionRecord]) -> (Vec<f64>, Predictions) {
    let y = records.iter().map(|r| r.y).collect();
    let p = Predictions {
        model: records.iter().map(|r| r.model).collect(),
        linear: records.iter().map(|r| r.linear).collect(),
        average: records.iter().map(|r| r.average).collect(),
        random: records.iter().map(|r| r.random).collect(),
    };
    (y, p)
}

fn build_report(
    ds: &Dataset,
    regime: RegimeTag,
    protocol: Protocol,
    seed: u64,
    folds: Vec<FoldReport>,
    predictions: Vec<PredictionRecord>,
) -> Result<EvalReport> {
    let (y, p) = collect(&predictions);
    let metrics = PredictorMetrics::score(&y, &p)?;
    let mut by_participant: BTreeMap<&str, Vec<PredictionRecord>> = BTreeMap::new();
    for r in &predictions {
        by_participant.entry(&r.participant_id).or_default().push(r.clone());
    }
    let participants = by_participant
        .into_iter()
        .map(|(pid, rows)| {
            let (y, p) = collect(&rows);
            Ok(ParticipantErrors {
                participant_id: pid.to_string(),
                n: rows.len(),
                median_abs_error: median(rows.iter().map(|r| (r.model - r.y).abs()).collect()),
                metrics: PredictorMetrics::score(&y, &p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        protocol,
        regime,
        seed,
        n_rows: ds.len(),
        n_groups: ds.groups.iter().collect::<BTreeSet<_>>().len(),
        feature_selection: match protocol {
            Protocol::NestedCv => "per_outer_fold".into(),
            Protocol::Loso => "none".into(),
        },
        metrics,
        folds,
        participants,
        predictions,
    })
}

fn regime_of(ds: &Dataset, target: Target) -> RegimeTag {
    let mut families: Vec<Family> = ds
        .families
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    families.sort_by_key(|f| Family::ALL.iter().position(|g| g == f));
    RegimeTag {
        families,
        subject: None,
        target,
    }
}

/// Outer group k-fold with an inner grid search and top-k retraining per
/// outer fold. Baselines are scored on the same folds.
pub fn nested_cv(ds: &Dataset, target: Target, settings: &CvSettings) -> Result<EvalReport> {
    settings.grid.validate()?;
    if settings.inner_folds < 2 {
        return Err(Error::validation("at least 2 inner folds are needed"));
    }
    let plan = make_group_folds(
        &ds.groups,
        settings.outer_folds,
        derive_seed(settings.seed, STREAM_OUTER, 0),
    )?;
    let (folds, preds) = run_folds(ds, target, &plan, Mode::Nested(settings))?;
    build_report(
        ds,
        regime_of(ds, target),
        Protocol::NestedCv,
        settings.seed,
        folds,
        preds,
    )
}

/// Final model on every row: inner grid search over all groups, then a
/// refit on the top-k features.
pub fn train_final(ds: &Dataset, target: Target, settings: &CvSettings) -> Result<(GbmModel, Vec<GridScore>)> {
    settings.grid.validate()?;
    let y = ds.target(target);
    let all: Vec<usize> = (0..ds.len()).collect();
    let (params, grid) = grid_search(ds, &y, &all, settings, FINAL_FIT)?;
    let full = fit_gbm(&ds.feature_names, &ds.x, &y, &params)?;
    let keep = top_k_features(&full, settings.top_k);
    if keep.is_empty() {
        return Ok((full, grid));
    }
    let names: Vec<String> = keep.iter().map(|&c| ds.feature_names[c].clone()).collect();
    Ok((fit_gbm(&names, &columns(&ds.x, &keep), &y, &params)?, grid))
}

/// Leave-one-participant-out with fixed hyperparameters.
pub fn loso_eval(ds: &Dataset, target: Target, params: &GbmParams, seed: u64) -> Result<EvalReport> {
    let groups: Vec<String> = ds.groups.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if groups.len() < 2 {
        return Err(Error::validation("leave-one-out needs at least 2 participants"));
    }
    let plan: Vec<Vec<String>> = groups.into_iter().map(|g| vec![g]).collect();
    let (folds, preds) = run_folds(ds, target, &plan, Mode::Fixed(*params, seed))?;
    build_report(ds, regime_of(ds, target), Protocol::Loso, seed, folds, preds)
}

/// One evaluation setting: sensor families, optional subject filter and
/// target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regime {
    pub families: Vec<Family>,
    pub subject: Option<Subject>,
    pub target: Target,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegimeEntry {
    families: Vec<String>,
    #[serde(default)]
    subject: Option<String>,
    #[serde(default = "default_target")]
    target: String,
}

fn default_target() -> String {
    "all".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegimeFile {
    #[serde(default)]
    regime: Vec<RegimeEntry>,
}

pub fn parse_families(names: &[String]) -> Result<Vec<Family>> {
    let mut out = Vec::new();
    for n in names {
        let group: Vec<Family> = match n.trim().to_ascii_lowercase().as_str() {
            "all" => Family::ALL.to_vec(),
            "wearable" => Family::WEARABLE.to_vec(),
            _ => vec![Family::from_str(n)?],
        };
        for f in group {
            if !out.contains(&f) {
                out.push(f);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::validation("a regime needs at least one sensor family"));
    }
    out.sort_by_key(|f| Family::ALL.iter().position(|g| g == f));
    Ok(out)
}

/// Parses a regime list such as
///
/// ```toml
/// [[regime]]
/// families = ["eda", "hrv"]
/// target = "all"
///
/// [[regime]]
/// families = ["all"]
/// subject = "maths"
/// ```
///
/// `target = "all"` expands to one regime per dimension.
pub fn parse_regimes(text: &str) -> Result<Vec<Regime>> {
    let file: RegimeFile = toml::from_str(text).map_err(|e| Error::validation(format!("regimes: {}", e.message())))?;
    let mut out = Vec::new();
    for entry in file.regime {
        let families = parse_families(&entry.families)?;
        let subject = entry.subject.as_deref().map(Subject::from_str).transpose()?;
        for target in Target::parse_list(&entry.target)? {
            out.push(Regime {
                families: families.clone(),
                subject,
                target,
            });
        }
    }
    Ok(out)
}

/// The sensor-combination rows used when no regime file is given.
pub fn default_regimes(targets: &[Target]) -> Vec<Regime> {
    let combos: [&[Family]; 5] = [
        &[Family::Eda],
        &[Family::Eda, Family::Hrv],
        &Family::WEARABLE,
        &[Family::Env],
        &Family::ALL,
    ];
    combos
        .iter()
        .flat_map(|fams| {
            targets.iter().map(|&target| Regime {
                families: fams.to_vec(),
                subject: None,
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<EvalReport>,
    /// Regimes that were skipped, with the reason.
    pub notices: Vec<String>,
}

/// Runs nested CV for every regime. Subject-filtered regimes with fewer
/// than `min_subject_sessions` labelled sessions are skipped with a notice.
pub fn regime_sweep(
    table: &FeatureTable,
    regimes: &[Regime],
    settings: &CvSettings,
    min_subject_sessions: usize,
) -> Result<SweepResult> {
    if regimes.is_empty() {
        return Err(Error::validation("the regime list is empty"));
    }
    let mut reports = Vec::new();
    let mut notices = Vec::new();
    for regime in regimes {
        let mut ds = assemble_dataset(table, &regime.families)?;
        if let Some(subject) = regime.subject {
            ds = ds.filter_subject(subject);
            if ds.len() < min_subject_sessions {
                let notice = format!(
                    "skipping {subject} / {} / {}: {} sessions, fewer than {min_subject_sessions}",
                    regime.families.iter().map(|f| f.name()).collect::<Vec<_>>().join("+"),
                    regime.target,
                    ds.len()
                );
                log::warn!("{notice}");
                notices.push(notice);
                continue;
            }
        }
        let mut report = nested_cv(&ds, regime.target, settings)?;
        report.regime.subject = regime.subject;
        report.regime.families = regime.families.clone();
        reports.push(report);
    }
    Ok(SweepResult { reports, notices })
}
