//! Panel and mobility data: loading, validation, feature derivation,
//! standardization, and synthetic generation.

pub mod cache;
pub mod csv_io;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{load_covid_csv, load_mobility_csv, write_covid_csv, write_mobility_csv};
pub use synthetic::{generate_synthetic_panel, GeneratorTruth, SyntheticConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate key (date {date}, fips {fips})")]
    DuplicateKey { date: NaiveDate, fips: String },
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("county {fips} has no case record on {date} (needed for inflow)")]
    MissingCaseData { fips: String, date: NaiveDate },
    #[error("feature {0:?} is constant over the conditioning range")]
    DegenerateFeature(String),
    #[error("horizon {horizon} too long for {t} observed days")]
    HorizonTooLong { horizon: usize, t: usize },
    #[error("data gaps detected:\n{report}")]
    DataGaps { report: String },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("bad panel cache: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One county-day of cumulative counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovidRecord {
    pub date: NaiveDate,
    pub fips: String,
    pub cum_cases: u64,
    pub cum_deaths: u64,
}

/// One origin→destination county-day of mobility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityRecord {
    pub date: NaiveDate,
    pub origin_fips: String,
    pub dest_fips: String,
    pub aggregated_visits: f64,
    pub mean_distance: f64,
    pub device_count: f64,
}

/// N target series over T days plus per-day covariates, with the index `t0`
/// splitting the conditioning range `[0, t0)` from the prediction range
/// `[t0, T)`. A fresh panel has `t0 == T` (everything is conditioning).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesPanel {
    pub node_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// N×T
    pub targets: Array2<f64>,
    /// T entries of N×P
    pub covariates: Vec<Array2<f64>>,
    pub feature_names: Vec<String>,
    pub t0: usize,
}

impl TimeSeriesPanel {
    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn t_len(&self) -> usize {
        self.targets.ncols()
    }

    pub fn p_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn horizon(&self) -> usize {
        self.t_len() - self.t0
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let (n, t) = self.targets.dim();
        if n != self.node_ids.len() {
            return Err(DataError::InvalidPanel(format!(
                "{} node ids for {} target rows",
                self.node_ids.len(),
                n
            )));
        }
        if self.dates.len() != t {
            return Err(DataError::InvalidPanel(format!(
                "{} dates for {} days",
                self.dates.len(),
                t
            )));
        }
        if self.covariates.len() != t {
            return Err(DataError::InvalidPanel(format!(
                "{} covariate matrices for {} days",
                self.covariates.len(),
                t
            )));
        }
        let p = self.p_dim();
        for (day, x) in self.covariates.iter().enumerate() {
            if x.dim() != (n, p) {
                return Err(DataError::InvalidPanel(format!(
                    "covariates for day {day} are {:?}, want ({n}, {p})",
                    x.dim()
                )));
            }
        }
        if self.t0 == 0 || self.t0 > t {
            return Err(DataError::InvalidPanel(format!(
                "t0 = {} outside (0, {t}]",
                self.t0
            )));
        }
        if self.targets.iter().any(|x| !x.is_finite())
            || self.covariates.iter().flatten().any(|x| !x.is_finite())
        {
            return Err(DataError::InvalidPanel("non-finite entries".into()));
        }
        Ok(())
    }

    /// Panel restricted to its first `len` days, with `t0` clamped.
    pub fn head(&self, len: usize) -> TimeSeriesPanel {
        assert!(len <= self.t_len() && len > 0);
        TimeSeriesPanel {
            node_ids: self.node_ids.clone(),
            dates: self.dates[..len].to_vec(),
            targets: self.targets.slice(ndarray::s![.., ..len]).to_owned(),
            covariates: self.covariates[..len].to_vec(),
            feature_names: self.feature_names.clone(),
            t0: self.t0.min(len),
        }
    }

    /// Panel restricted to the first `k` nodes.
    pub fn node_subset(&self, k: usize) -> TimeSeriesPanel {
        assert!(k >= 1 && k <= self.n_nodes());
        TimeSeriesPanel {
            node_ids: self.node_ids[..k].to_vec(),
            dates: self.dates.clone(),
            targets: self.targets.slice(ndarray::s![..k, ..]).to_owned(),
            covariates: self
                .covariates
                .iter()
                .map(|x| x.slice(ndarray::s![..k, ..]).to_owned())
                .collect(),
            feature_names: self.feature_names.clone(),
            t0: self.t0,
        }
    }
}

/// Split a panel so the prediction range covers the last `horizon` days.
pub fn split_ranges(panel: &TimeSeriesPanel, horizon: usize) -> Result<TimeSeriesPanel, DataError> {
    let t = panel.t_len();
    if horizon == 0 || horizon >= t {
        return Err(DataError::HorizonTooLong { horizon, t });
    }
    let mut out = panel.clone();
    out.t0 = t - horizon;
    Ok(out)
}

/// Mobility-weighted incoming case load: `inflow[i] = Σ_j visits(j→i) · cases(j)`,
/// over all records dated `date`.
pub fn derive_inflow(
    mobility: &[MobilityRecord],
    covid: &[CovidRecord],
    date: NaiveDate,
    node_ids: &[String],
) -> Result<Vec<f64>, DataError> {
    let cases: HashMap<&str, f64> = covid
        .iter()
        .filter(|r| r.date == date)
        .map(|r| (r.fips.as_str(), r.cum_cases as f64))
        .collect();
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut inflow = vec![0.0; node_ids.len()];
    for r in mobility.iter().filter(|r| r.date == date) {
        let Some(&dest) = index.get(r.dest_fips.as_str()) else {
            continue;
        };
        if !index.contains_key(r.origin_fips.as_str()) {
            continue;
        }
        let Some(&c) = cases.get(r.origin_fips.as_str()) else {
            return Err(DataError::MissingCaseData {
                fips: r.origin_fips.clone(),
                date,
            });
        };
        inflow[dest] += r.aggregated_visits * c;
    }
    Ok(inflow)
}

/// Standardize each covariate feature to zero mean and unit variance, with
/// statistics taken from the conditioning range only and applied everywhere.
/// Returns the per-feature (mean, population std) pairs for inversion.
pub fn standardize_covariates(
    panel: &TimeSeriesPanel,
) -> Result<(TimeSeriesPanel, Vec<(f64, f64)>), DataError> {
    let p = panel.p_dim();
    let n = panel.n_nodes();
    let cond_days = panel.t0;
    let count = (n * cond_days) as f64;

    let mut stats = Vec::with_capacity(p);
    for f in 0..p {
        let mut sum = 0.0;
        for day in 0..cond_days {
            sum += panel.covariates[day].column(f).sum();
        }
        let mean = sum / count;
        let mut ss = 0.0;
        for day in 0..cond_days {
            for &x in panel.covariates[day].column(f) {
                ss += (x - mean) * (x - mean);
            }
        }
        let std = (ss / count).sqrt();
        if std == 0.0 {
            return Err(DataError::DegenerateFeature(panel.feature_names[f].clone()));
        }
        stats.push((mean, std));
    }

    let mut out = panel.clone();
    for x in &mut out.covariates {
        for f in 0..p {
            let (mean, std) = stats[f];
            x.column_mut(f).mapv_inplace(|v| (v - mean) / std);
        }
    }
    Ok((out, stats))
}

/// Invert [`standardize_covariates`] with the returned statistics.
pub fn destandardize_covariates(panel: &TimeSeriesPanel, stats: &[(f64, f64)]) -> TimeSeriesPanel {
    let mut out = panel.clone();
    for x in &mut out.covariates {
        for (f, &(mean, std)) in stats.iter().enumerate() {
            x.column_mut(f).mapv_inplace(|v| v * std + mean);
        }
    }
    out
}

/// Which column of the covid file becomes the target series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetField {
    #[default]
    Cases,
    Deaths,
}

/// Covariate features derivable from the mobility stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Total outgoing visits per county per day.
    Visits,
    /// Previous-day mobility-weighted incoming case load. Lagged one day so
    /// a covariate never contains the same-day target it helps predict.
    Inflow,
    /// Device-weighted mean travel distance per origin county per day.
    Distance,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Visits => "visits",
            FeatureKind::Inflow => "inflow",
            FeatureKind::Distance => "distance",
        }
    }
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub target: TargetField,
    /// Convert cumulative counts to daily increments (drops the first day).
    pub difference: bool,
    /// Fill gaps by carrying the last observation forward instead of failing.
    pub forward_fill: bool,
    pub features: Vec<FeatureKind>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            target: TargetField::Cases,
            difference: false,
            forward_fill: false,
            features: vec![FeatureKind::Visits, FeatureKind::Inflow],
        }
    }
}

/// Assemble an unsplit panel from covid and mobility records.
///
/// Every county must cover every day of the file's date span; gaps are an
/// error (with a per-county report) unless `forward_fill` is set.
pub fn build_panel(
    covid: &[CovidRecord],
    mobility: &[MobilityRecord],
    opts: &IngestOptions,
) -> Result<TimeSeriesPanel, DataError> {
    if covid.is_empty() {
        return Err(DataError::InvalidPanel("no covid records".into()));
    }
    let node_ids: Vec<String> = covid
        .iter()
        .map(|r| r.fips.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let first = covid.iter().map(|r| r.date).min().expect("nonempty");
    let last = covid.iter().map(|r| r.date).max().expect("nonempty");
    let mut dates = Vec::new();
    let mut d = first;
    while d <= last {
        dates.push(d);
        d = d.succ_opt().expect("date overflow");
    }

    // values[node][day]
    let mut by_key: HashMap<(&str, NaiveDate), &CovidRecord> = HashMap::new();
    for r in covid {
        by_key.insert((r.fips.as_str(), r.date), r);
    }
    let mut gaps: BTreeMap<&str, Vec<NaiveDate>> = BTreeMap::new();
    let mut raw = Array2::zeros((node_ids.len(), dates.len()));
    for (i, fips) in node_ids.iter().enumerate() {
        let mut last_seen: Option<f64> = None;
        for (t, date) in dates.iter().enumerate() {
            match by_key.get(&(fips.as_str(), *date)) {
                Some(r) => {
                    let v = match opts.target {
                        TargetField::Cases => r.cum_cases as f64,
                        TargetField::Deaths => r.cum_deaths as f64,
                    };
                    raw[[i, t]] = v;
                    last_seen = Some(v);
                }
                None => {
                    if opts.forward_fill {
                        raw[[i, t]] = last_seen.unwrap_or(0.0);
                    } else {
                        gaps.entry(fips.as_str()).or_default().push(*date);
                    }
                }
            }
        }
    }
    if !gaps.is_empty() {
        let mut report = String::new();
        for (fips, days) in &gaps {
            report.push_str(&format!("  {fips}: {} missing day(s), first {}\n", days.len(), days[0]));
        }
        return Err(DataError::DataGaps { report });
    }

    let (targets, dates) = if opts.difference {
        if dates.len() < 2 {
            return Err(DataError::InvalidPanel("cannot difference a single day".into()));
        }
        let t = dates.len();
        let mut diff = Array2::zeros((node_ids.len(), t - 1));
        for i in 0..node_ids.len() {
            for k in 1..t {
                diff[[i, k - 1]] = raw[[i, k]] - raw[[i, k - 1]];
            }
        }
        (diff, dates[1..].to_vec())
    } else {
        (raw, dates)
    };

    let covariates = derive_features(&node_ids, &dates, &targets, mobility, covid, &opts.features)?;

    let panel = TimeSeriesPanel {
        node_ids,
        dates,
        feature_names: opts.features.iter().map(|f| f.name().to_string()).collect(),
        t0: targets.ncols(),
        targets,
        covariates,
    };
    panel.validate()?;
    Ok(panel)
}

/// Per-day covariate matrices for the requested features. Case loads for the
/// inflow feature come from the panel's own target matrix so the synthetic
/// and CSV paths derive features identically.
pub(crate) fn derive_features(
    node_ids: &[String],
    dates: &[NaiveDate],
    targets: &Array2<f64>,
    mobility: &[MobilityRecord],
    _covid: &[CovidRecord],
    features: &[FeatureKind],
) -> Result<Vec<Array2<f64>>, DataError> {
    let n = node_ids.len();
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let date_index: HashMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();

    // per-day aggregates from the mobility stream
    let mut visits_out = vec![vec![0.0; n]; dates.len()];
    let mut dist_num = vec![vec![0.0; n]; dates.len()];
    let mut dist_den = vec![vec![0.0; n]; dates.len()];
    // inflow[t][i] accumulated with same-day case loads, lagged below
    let mut inflow_same_day = vec![vec![0.0; n]; dates.len()];
    for r in mobility {
        let (Some(&o), Some(&t)) = (index.get(r.origin_fips.as_str()), date_index.get(&r.date))
        else {
            continue;
        };
        visits_out[t][o] += r.aggregated_visits;
        dist_num[t][o] += r.mean_distance * r.device_count;
        dist_den[t][o] += r.device_count;
        if let Some(&dst) = index.get(r.dest_fips.as_str()) {
            inflow_same_day[t][dst] += r.aggregated_visits * targets[[o, t]];
        }
    }

    let mut out = Vec::with_capacity(dates.len());
    for t in 0..dates.len() {
        let mut x = Array2::zeros((n, features.len()));
        for (f, kind) in features.iter().enumerate() {
            for i in 0..n {
                x[[i, f]] = match kind {
                    FeatureKind::Visits => visits_out[t][i],
                    FeatureKind::Inflow => inflow_same_day[t.saturating_sub(1)][i],
                    FeatureKind::Distance => {
                        if dist_den[t][i] > 0.0 {
                            dist_num[t][i] / dist_den[t][i]
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        out.push(x);
    }
    Ok(out)
}
