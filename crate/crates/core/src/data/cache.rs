//! Self-describing binary panel cache. Little-endian throughout; floats are
//! stored as raw IEEE bits so round trips are exact.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;

use super::{DataError, TimeSeriesPanel};

const MAGIC: &[u8; 8] = b"DCPANEL\0";
const VERSION: u32 = 1;

pub fn save_panel(path: &Path, panel: &TimeSeriesPanel) -> Result<(), DataError> {
    panel.validate()?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let (n, t, p) = (panel.n_nodes(), panel.t_len(), panel.p_dim());
    for dim in [n, t, p, panel.t0] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for id in &panel.node_ids {
        write_str(&mut buf, id);
    }
    for name in &panel.feature_names {
        write_str(&mut buf, name);
    }
    for d in &panel.dates {
        write_str(&mut buf, &d.to_string());
    }
    for x in panel.targets.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for day in &panel.covariates {
        for x in day.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_panel(path: &Path) -> Result<TimeSeriesPanel, DataError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], DataError> {
        if *pos + n > raw.len() {
            return Err(DataError::BadCache("truncated file".into()));
        }
        let out = &raw[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };

    if take(&mut pos, 8)? != MAGIC {
        return Err(DataError::BadCache("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(DataError::BadCache(format!("unknown version {version}")));
    }
    let mut dim = || -> Result<usize, DataError> {
        Ok(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize)
    };
    let n = dim()?;
    let t = dim()?;
    let p = dim()?;
    let t0 = dim()?;

    let read_str = |pos: &mut usize| -> Result<String, DataError> {
        let len = u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize;
        String::from_utf8(take(pos, len)?.to_vec())
            .map_err(|_| DataError::BadCache("non-utf8 string".into()))
    };
    let node_ids: Vec<String> = (0..n).map(|_| read_str(&mut pos)).collect::<Result<_, _>>()?;
    let feature_names: Vec<String> = (0..p).map(|_| read_str(&mut pos)).collect::<Result<_, _>>()?;
    let dates: Vec<NaiveDate> = (0..t)
        .map(|_| {
            read_str(&mut pos).and_then(|s| {
                s.parse()
                    .map_err(|_| DataError::BadCache(format!("bad date {s:?}")))
            })
        })
        .collect::<Result<_, _>>()?;

    let read_f64 = |pos: &mut usize| -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
    };
    let mut targets = Vec::with_capacity(n * t);
    for _ in 0..n * t {
        targets.push(read_f64(&mut pos)?);
    }
    let targets = Array2::from_shape_vec((n, t), targets)
        .map_err(|e| DataError::BadCache(e.to_string()))?;
    let mut covariates = Vec::with_capacity(t);
    for _ in 0..t {
        let mut day = Vec::with_capacity(n * p);
        for _ in 0..n * p {
            day.push(read_f64(&mut pos)?);
        }
        covariates.push(
            Array2::from_shape_vec((n, p), day).map_err(|e| DataError::BadCache(e.to_string()))?,
        );
    }
    if pos != raw.len() {
        return Err(DataError::BadCache("trailing bytes".into()));
    }

    let panel = TimeSeriesPanel {
        node_ids,
        dates,
        targets,
        covariates,
        feature_names,
        t0,
    };
    panel.validate()?;
    Ok(panel)
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_panel, split_ranges, SyntheticConfig};

    #[test]
    fn panel_cache_round_trips_bit_exactly() {
        let (panel, _, _) = generate_synthetic_panel(&SyntheticConfig {
            n_nodes: 3,
            t_days: 20,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let panel = split_ranges(&panel, 7).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.dcpanel");
        save_panel(&path, &panel).unwrap();
        let loaded = load_panel(&path).unwrap();

        assert_eq!(loaded.node_ids, panel.node_ids);
        assert_eq!(loaded.dates, panel.dates);
        assert_eq!(loaded.feature_names, panel.feature_names);
        assert_eq!(loaded.t0, panel.t0);
        for (a, b) in loaded.targets.iter().zip(panel.targets.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (xa, xb) in loaded.covariates.iter().zip(&panel.covariates) {
            for (a, b) in xa.iter().zip(xb.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        // rewriting produces identical bytes
        let path2 = dir.path().join("panel2.dcpanel");
        save_panel(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dcpanel");
        std::fs::write(&path, b"not a panel").unwrap();
        assert!(matches!(load_panel(&path), Err(DataError::BadCache(_))));
    }
}
