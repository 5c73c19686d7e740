//! Readers and writers for the covid and mobility CSV formats.
//!
//! Covid files: `date,fips,cum_cases,cum_deaths` with ISO dates.
//! Mobility files: `date,origin_fips,dest_fips,aggregated_visits,mean_distance,device_count`.

use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;

use super::{CovidRecord, DataError, MobilityRecord};

const COVID_HEADER: [&str; 4] = ["date", "fips", "cum_cases", "cum_deaths"];
const MOBILITY_HEADER: [&str; 6] = [
    "date",
    "origin_fips",
    "dest_fips",
    "aggregated_visits",
    "mean_distance",
    "device_count",
];

fn check_header(found: &csv::StringRecord, want: &[&str]) -> Result<(), DataError> {
    for col in want {
        if !found.iter().any(|f| f == *col) {
            return Err(DataError::MissingColumn(col.to_string()));
        }
    }
    Ok(())
}

fn field<'a>(
    rec: &'a csv::StringRecord,
    header: &csv::StringRecord,
    name: &str,
    line: usize,
) -> Result<&'a str, DataError> {
    let idx = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    rec.get(idx).ok_or_else(|| DataError::MalformedRow {
        line,
        reason: format!("missing field {name}"),
    })
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate, DataError> {
    s.parse().map_err(|_| DataError::MalformedRow {
        line,
        reason: format!("bad date {s:?}"),
    })
}

fn parse_count(s: &str, name: &str, line: usize) -> Result<u64, DataError> {
    s.trim().parse().map_err(|_| DataError::MalformedRow {
        line,
        reason: format!("{name} must be a nonnegative integer, got {s:?}"),
    })
}

fn parse_nonneg(s: &str, name: &str, line: usize) -> Result<f64, DataError> {
    let v: f64 = s.trim().parse().map_err(|_| DataError::MalformedRow {
        line,
        reason: format!("{name} must be a number, got {s:?}"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(DataError::MalformedRow {
            line,
            reason: format!("{name} must be nonnegative and finite, got {v}"),
        });
    }
    Ok(v)
}

/// Load and validate a covid file; records come back sorted by (fips, date).
pub fn load_covid_csv(path: &Path) -> Result<Vec<CovidRecord>, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    check_header(&header, &COVID_HEADER)?;

    let mut seen: HashSet<(NaiveDate, String)> = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = rec?;
        let date = parse_date(field(&rec, &header, "date", line)?, line)?;
        let fips = field(&rec, &header, "fips", line)?.trim().to_string();
        if fips.is_empty() {
            return Err(DataError::MalformedRow {
                line,
                reason: "empty fips".into(),
            });
        }
        let cum_cases = parse_count(field(&rec, &header, "cum_cases", line)?, "cum_cases", line)?;
        let cum_deaths =
            parse_count(field(&rec, &header, "cum_deaths", line)?, "cum_deaths", line)?;
        if !seen.insert((date, fips.clone())) {
            return Err(DataError::DuplicateKey { date, fips });
        }
        out.push(CovidRecord {
            date,
            fips,
            cum_cases,
            cum_deaths,
        });
    }
    out.sort_by(|a, b| (a.fips.as_str(), a.date).cmp(&(b.fips.as_str(), b.date)));
    Ok(out)
}

pub fn write_covid_csv(path: &Path, records: &[CovidRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COVID_HEADER)?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            r.fips.clone(),
            r.cum_cases.to_string(),
            r.cum_deaths.to_string(),
        ])?;
    }
    w.flush().map_err(DataError::Io)?;
    Ok(())
}

/// Load and validate a mobility file; sorted by (date, origin, dest).
pub fn load_mobility_csv(path: &Path) -> Result<Vec<MobilityRecord>, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    check_header(&header, &MOBILITY_HEADER)?;

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let date = parse_date(field(&rec, &header, "date", line)?, line)?;
        let origin_fips = field(&rec, &header, "origin_fips", line)?.trim().to_string();
        let dest_fips = field(&rec, &header, "dest_fips", line)?.trim().to_string();
        let aggregated_visits = parse_nonneg(
            field(&rec, &header, "aggregated_visits", line)?,
            "aggregated_visits",
            line,
        )?;
        let mean_distance = parse_nonneg(
            field(&rec, &header, "mean_distance", line)?,
            "mean_distance",
            line,
        )?;
        let device_count = parse_nonneg(
            field(&rec, &header, "device_count", line)?,
            "device_count",
            line,
        )?;
        out.push(MobilityRecord {
            date,
            origin_fips,
            dest_fips,
            aggregated_visits,
            mean_distance,
            device_count,
        });
    }
    out.sort_by(|a, b| {
        (a.date, a.origin_fips.as_str(), a.dest_fips.as_str()).cmp(&(
            b.date,
            b.origin_fips.as_str(),
            b.dest_fips.as_str(),
        ))
    });
    Ok(out)
}

pub fn write_mobility_csv(path: &Path, records: &[MobilityRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MOBILITY_HEADER)?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            r.origin_fips.clone(),
            r.dest_fips.clone(),
            r.aggregated_visits.to_string(),
            r.mean_distance.to_string(),
            r.device_count.to_string(),
        ])?;
    }
    w.flush().map_err(DataError::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn covid_row_is_parsed_field_by_field() {
        let f = write_temp("date,fips,cum_cases,cum_deaths\n2020-05-01,51059,120,3\n");
        let recs = load_covid_csv(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].date.to_string(), "2020-05-01");
        assert_eq!(recs[0].fips, "51059");
        assert_eq!(recs[0].cum_cases, 120);
        assert_eq!(recs[0].cum_deaths, 3);
    }

    #[test]
    fn covid_negative_count_is_malformed() {
        let f = write_temp("date,fips,cum_cases,cum_deaths\n2020-05-01,51059,-1,3\n");
        assert!(matches!(
            load_covid_csv(f.path()),
            Err(DataError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn covid_bad_date_is_malformed() {
        let f = write_temp("date,fips,cum_cases,cum_deaths\n05/01/2020,51059,1,0\n");
        assert!(matches!(
            load_covid_csv(f.path()),
            Err(DataError::MalformedRow { .. })
        ));
    }

    #[test]
    fn covid_duplicate_key_rejected() {
        let f = write_temp(
            "date,fips,cum_cases,cum_deaths\n2020-05-01,51059,120,3\n2020-05-01,51059,121,3\n",
        );
        assert!(matches!(
            load_covid_csv(f.path()),
            Err(DataError::DuplicateKey { .. })
        ));
    }

    #[test]
    fn covid_missing_column_rejected() {
        let f = write_temp("date,fips,cum_cases\n2020-05-01,51059,120\n");
        assert!(matches!(
            load_covid_csv(f.path()),
            Err(DataError::MissingColumn(c)) if c == "cum_deaths"
        ));
    }

    #[test]
    fn covid_records_sorted_by_fips_then_date() {
        let f = write_temp(
            "date,fips,cum_cases,cum_deaths\n2020-05-02,51060,5,0\n2020-05-01,51059,1,0\n2020-05-01,51060,4,0\n",
        );
        let recs = load_covid_csv(f.path()).unwrap();
        let keys: Vec<_> = recs.iter().map(|r| (r.fips.clone(), r.date)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn covid_round_trips_through_write_and_read() {
        let f = write_temp(
            "date,fips,cum_cases,cum_deaths\n2020-05-01,51059,120,3\n2020-05-02,51059,125,3\n2020-05-01,51060,7,1\n",
        );
        let recs = load_covid_csv(f.path()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("covid.csv");
        write_covid_csv(&out, &recs).unwrap();
        let again = load_covid_csv(&out).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn mobility_round_trips_and_validates() {
        let f = write_temp(
            "date,origin_fips,dest_fips,aggregated_visits,mean_distance,device_count\n\
             2020-05-01,51059,51060,250,12.5,80\n",
        );
        let recs = load_mobility_csv(f.path()).unwrap();
        assert_eq!(recs[0].aggregated_visits, 250.0);

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("mobility.csv");
        write_mobility_csv(&out, &recs).unwrap();
        assert_eq!(load_mobility_csv(&out).unwrap(), recs);

        let bad = write_temp(
            "date,origin_fips,dest_fips,aggregated_visits,mean_distance,device_count\n\
             2020-05-01,51059,51060,-5,12.5,80\n",
        );
        assert!(matches!(
            load_mobility_csv(bad.path()),
            Err(DataError::MalformedRow { .. })
        ));
    }
}
