//! Forecast tables on disk: `node,step,q10,q50,q90,mean` plus an optional
//! full sample dump `node,step,sample_idx,value`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::{ForecastArtifact, ModelError};
use crate::nn::NnError;

/// A forecast read back from disk, aligned on a (node, step) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTable {
    pub node_ids: Vec<String>,
    pub q10: Array2<f64>,
    pub q50: Array2<f64>,
    pub q90: Array2<f64>,
    pub mean: Array2<f64>,
}

pub fn write_forecast_csv(
    path: &Path,
    node_ids: &[String],
    artifact: &ForecastArtifact,
) -> Result<(), ModelError> {
    if node_ids.len() != artifact.n_nodes() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} node ids for {} forecast rows",
            node_ids.len(),
            artifact.n_nodes()
        )));
    }
    let mut out = String::from("node,step,q10,q50,q90,mean\n");
    for (i, id) in node_ids.iter().enumerate() {
        for t in 0..artifact.horizon() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                id,
                t + 1,
                artifact.q10[[i, t]],
                artifact.q50[[i, t]],
                artifact.q90[[i, t]],
                artifact.point[[i, t]],
            ));
        }
    }
    std::fs::write(path, out).map_err(NnError::Io)?;
    Ok(())
}

pub fn write_samples_csv(
    path: &Path,
    node_ids: &[String],
    artifact: &ForecastArtifact,
) -> Result<(), ModelError> {
    let mut out = String::from("node,step,sample_idx,value\n");
    for (i, id) in node_ids.iter().enumerate() {
        for t in 0..artifact.horizon() {
            for (s, traj) in artifact.samples.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", id, t + 1, s, traj[[i, t]]));
            }
        }
    }
    std::fs::write(path, out).map_err(NnError::Io)?;
    Ok(())
}

pub fn read_forecast_csv(path: &Path) -> Result<ForecastTable, ModelError> {
    let raw = std::fs::read_to_string(path).map_err(NnError::Io)?;
    let mut lines = raw.lines();
    let header = lines.next().unwrap_or_default();
    if header != "node,step,q10,q50,q90,mean" {
        return Err(ModelError::ShapeMismatch(format!(
            "unexpected forecast header {header:?}"
        )));
    }
    let mut per_node: BTreeMap<String, Vec<(usize, [f64; 4])>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(ModelError::ShapeMismatch(format!(
                "forecast line {} has {} fields",
                lineno + 2,
                fields.len()
            )));
        }
        let node = fields[0].to_string();
        let step: usize = fields[1]
            .parse()
            .map_err(|_| ModelError::ShapeMismatch(format!("bad step {:?}", fields[1])))?;
        let mut vals = [0.0; 4];
        for (k, f) in fields[2..].iter().enumerate() {
            vals[k] = f
                .parse()
                .map_err(|_| ModelError::ShapeMismatch(format!("bad value {f:?}")))?;
        }
        if !per_node.contains_key(&node) {
            order.push(node.clone());
        }
        per_node.entry(node).or_default().push((step, vals));
    }
    if order.is_empty() {
        return Err(ModelError::ShapeMismatch("empty forecast file".into()));
    }
    let horizon = per_node[&order[0]].len();
    let n = order.len();
    let mut q10 = Array2::zeros((n, horizon));
    let mut q50 = Array2::zeros((n, horizon));
    let mut q90 = Array2::zeros((n, horizon));
    let mut mean = Array2::zeros((n, horizon));
    for (i, id) in order.iter().enumerate() {
        let rows = &per_node[id];
        if rows.len() != horizon {
            return Err(ModelError::ShapeMismatch(format!(
                "node {id} has {} steps, expected {horizon}",
                rows.len()
            )));
        }
        for &(step, vals) in rows {
            if step == 0 || step > horizon {
                return Err(ModelError::ShapeMismatch(format!(
                    "node {id} step {step} outside 1..={horizon}"
                )));
            }
            let t = step - 1;
            q10[[i, t]] = vals[0];
            q50[[i, t]] = vals[1];
            q90[[i, t]] = vals[2];
            mean[[i, t]] = vals[3];
        }
    }
    Ok(ForecastTable {
        node_ids: order,
        q10,
        q50,
        q90,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forecast_csv_round_trips_exactly() {
        let artifact = ForecastArtifact {
            q10: array![[0.1, 0.2], [0.3, 0.4]],
            q50: array![[1.1, 1.2], [1.3, 1.4]],
            q90: array![[2.1, 2.2], [2.3, 2.4]],
            point: array![[1.05, 1.17], [1.33, 1.38]],
            samples: vec![array![[1.0, 1.0], [1.0, 1.0]]],
        };
        let ids = vec!["00001".to_string(), "00002".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forecast.csv");
        write_forecast_csv(&path, &ids, &artifact).unwrap();
        let table = read_forecast_csv(&path).unwrap();
        assert_eq!(table.node_ids, ids);
        assert_eq!(table.q10, artifact.q10);
        assert_eq!(table.q50, artifact.q50);
        assert_eq!(table.q90, artifact.q90);
        assert_eq!(table.mean, artifact.point);
    }
}
