//! Mobility-derived dynamic graphs: per-day Pearson adjacency with a visit
//! threshold, row-normalized diffusion transition matrices, and the masked
//! diffusion convolution `(W ∘ Ã) X`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use thiserror::Error;

use crate::data::MobilityRecord;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("constant vector has no defined correlation")]
    ConstantVector,
    #[error("need at least {need} days of visit history, have {have}")]
    InsufficientHistory { need: usize, have: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pearson correlation coefficient with the population convention.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64, GraphError> {
    if x.len() != y.len() {
        return Err(GraphError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(GraphError::InsufficientHistory { need: 2, have: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(GraphError::ConstantVector);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Daily visit volumes laid out for adjacency construction: per-pair and
/// per-origin series over an ordered day axis.
pub struct VisitSeries {
    node_index: HashMap<String, usize>,
    pub dates: Vec<NaiveDate>,
    n_nodes: usize,
    /// visits[(i, j)][d] = aggregated visits i→j on day d
    pair_daily: HashMap<(usize, usize), Vec<f64>>,
    /// outgoing[i][d] = Σ_j visits i→j on day d (the per-node series the
    /// correlations are computed on)
    outgoing: Vec<Vec<f64>>,
}

impl VisitSeries {
    /// Organize raw mobility records against a fixed node order and day axis.
    /// Records for unknown nodes or days off the axis are ignored.
    pub fn build(records: &[MobilityRecord], node_ids: &[String], dates: &[NaiveDate]) -> Self {
        let node_index: HashMap<String, usize> = node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let date_index: HashMap<NaiveDate, usize> =
            dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();

        let mut pair_daily: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        let mut outgoing = vec![vec![0.0; dates.len()]; node_ids.len()];
        for r in records {
            let (Some(&i), Some(&j), Some(&d)) = (
                node_index.get(&r.origin_fips),
                node_index.get(&r.dest_fips),
                date_index.get(&r.date),
            ) else {
                continue;
            };
            let entry = pair_daily.entry((i, j)).or_insert_with(|| vec![0.0; dates.len()]);
            entry[d] += r.aggregated_visits;
            outgoing[i][d] += r.aggregated_visits;
        }
        Self {
            node_index,
            dates: dates.to_vec(),
            n_nodes: node_ids.len(),
            pair_daily,
            outgoing,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn visits_on_day(&self, i: usize, j: usize, day: usize) -> f64 {
        self.pair_daily.get(&(i, j)).map_or(0.0, |v| v[day])
    }

    /// Per-node total outgoing visits on each day of `days`.
    fn outgoing_window(&self, node: usize, days: std::ops::Range<usize>) -> &[f64] {
        &self.outgoing[node][days]
    }
}

/// Per-day weighted adjacency matrices plus the threshold they were built with.
pub struct DynamicAdjacency {
    pub node_ids: Vec<String>,
    pub per_day: Vec<Array2<f64>>,
    pub threshold: f64,
}

/// Adjacency for one day from the trailing window of visit history ending at
/// `day`. The edge i→j is kept when the day's visits i→j reach `threshold`;
/// its weight is the Pearson correlation of the two nodes' trailing outgoing
/// visit series. Node pairs whose window series are constant contribute no
/// edge. The diagonal is 1.
pub fn build_daily_adjacency(
    series: &VisitSeries,
    day: usize,
    window: usize,
    threshold: f64,
) -> Result<Array2<f64>, GraphError> {
    let have = (day + 1).min(window);
    if have < 2 {
        return Err(GraphError::InsufficientHistory { need: 2, have });
    }
    let range = (day + 1 - have)..(day + 1);
    let n = series.n_nodes();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        a[[i, i]] = 1.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            if series.visits_on_day(i, j, day) < threshold {
                continue;
            }
            let xi = series.outgoing_window(i, range.clone());
            let xj = series.outgoing_window(j, range.clone());
            match pearson_correlation(xi, xj) {
                Ok(rho) => a[[i, j]] = rho,
                Err(GraphError::ConstantVector) => {} // degenerate history, no edge
                Err(e) => return Err(e),
            }
        }
    }
    Ok(a)
}

/// Adjacency matrices for every day of the axis. Days with fewer than two
/// days of trailing history fall back to the self-loop-only identity.
pub fn build_dynamic_adjacency(
    series: &VisitSeries,
    window: usize,
    threshold: f64,
    node_ids: &[String],
) -> Result<DynamicAdjacency, GraphError> {
    let mut per_day = Vec::with_capacity(series.n_days());
    for day in 0..series.n_days() {
        let a = match build_daily_adjacency(series, day, window, threshold) {
            Ok(a) => a,
            Err(GraphError::InsufficientHistory { .. }) => Array2::eye(series.n_nodes()),
            Err(e) => return Err(e),
        };
        per_day.push(a);
    }
    Ok(DynamicAdjacency {
        node_ids: node_ids.to_vec(),
        per_day,
        threshold,
    })
}

impl DynamicAdjacency {
    /// Diffusion transition matrices for every day.
    pub fn to_transitions(&self) -> Vec<Array2<f64>> {
        self.per_day.iter().map(to_transition).collect()
    }

    /// Sparse triplet dump `day,i,j,weight` of all nonzero entries.
    pub fn write_triplets(&self, path: &Path) -> Result<(), GraphError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "day,i,j,weight")?;
        for (day, a) in self.per_day.iter().enumerate() {
            for ((i, j), &w) in a.indexed_iter() {
                if w != 0.0 {
                    writeln!(f, "{day},{i},{j},{w}")?;
                }
            }
        }
        Ok(())
    }
}

/// Row-normalized diffusion transition matrix `Ã = D⁻¹ clamp(A)`:
/// negative weights are clamped to zero first, then every row with mass is
/// divided by its sum. Rows with no nonnegative mass stay zero.
pub fn to_transition(a: &Array2<f64>) -> Array2<f64> {
    let mut t = a.mapv(|x| x.max(0.0));
    for mut row in t.rows_mut() {
        let sum: f64 = row.sum();
        if sum > 0.0 {
            row.mapv_inplace(|x| x / sum);
        }
    }
    t
}

/// Diffusion convolution `GC = (W ∘ Ã) X` with the learnable edge mask `W`.
pub fn diffusion_convolve(
    w: &Array2<f64>,
    tilde_a: &Array2<f64>,
    x: &Array2<f64>,
) -> Result<Array2<f64>, GraphError> {
    let n = tilde_a.nrows();
    if tilde_a.ncols() != n || w.dim() != (n, n) || x.nrows() != n {
        return Err(GraphError::ShapeMismatch(format!(
            "W {:?}, Ã {:?}, X {:?}",
            w.dim(),
            tilde_a.dim(),
            x.dim()
        )));
    }
    Ok((w * tilde_a).dot(x))
}
