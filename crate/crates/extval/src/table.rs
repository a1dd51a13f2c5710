//! Tabular data structures shared across the pipeline: monthly block maxima
//! with covariate columns, and the uniform-margin table produced by the
//! probability integral transform.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ExtvalError, Result};
use crate::geo::LonLat;

/// One monthly block maximum at one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximaRow {
    pub site: String,
    pub lon: f64,
    pub lat: f64,
    pub month: u32,
    pub year: i32,
    pub maximum: f64,
}

/// Monthly block maxima indexed by (site, month, year), with covariate
/// columns aligned to the rows. Months that failed coverage are absent.
#[derive(Debug, Clone, Default)]
pub struct MaximaTable {
    rows: Vec<MaximaRow>,
    covariates: BTreeMap<String, Vec<f64>>,
}

impl MaximaTable {
    pub fn new(rows: Vec<MaximaRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !(1..=12).contains(&r.month) {
                return Err(ExtvalError::data(format!("month {} out of range", r.month)));
            }
            if !r.maximum.is_finite() || r.maximum < 0.0 {
                return Err(ExtvalError::data(format!(
                    "maximum must be finite and >= 0, got {} at {}/{}-{}",
                    r.maximum, r.site, r.year, r.month
                )));
            }
            if !seen.insert((r.site.clone(), r.month, r.year)) {
                return Err(ExtvalError::data(format!(
                    "duplicate (site, month, year): ({}, {}, {})",
                    r.site, r.month, r.year
                )));
            }
        }
        Ok(MaximaTable { rows, covariates: BTreeMap::new() })
    }

    pub fn rows(&self) -> &[MaximaRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.keys().cloned().collect()
    }

    pub fn add_covariate(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.rows.len() {
            return Err(ExtvalError::data(format!(
                "covariate {name} has {} values for {} rows",
                values.len(),
                self.rows.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ExtvalError::data(format!("covariate {name} has non-finite values")));
        }
        self.covariates.insert(name.to_string(), values);
        Ok(())
    }

    /// Resolve a covariate column by name. Row fields `month`, `year`, `lon`,
    /// `lat` are available implicitly.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.covariates.get(name) {
            return Ok(v.clone());
        }
        match name {
            "month" => Ok(self.rows.iter().map(|r| r.month as f64).collect()),
            "year" => Ok(self.rows.iter().map(|r| r.year as f64).collect()),
            "lon" => Ok(self.rows.iter().map(|r| r.lon).collect()),
            "lat" => Ok(self.rows.iter().map(|r| r.lat).collect()),
            _ => Err(ExtvalError::config(format!("unknown covariate: {name}"))),
        }
    }

    pub fn maxima(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.maximum).collect()
    }

    /// Distinct sites in first-appearance order with their coordinates.
    pub fn sites(&self) -> Vec<(String, LonLat)> {
        let mut out: Vec<(String, LonLat)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(s, _)| s == &r.site) {
                out.push((r.site.clone(), LonLat::new(r.lon, r.lat)));
            }
        }
        out
    }

    /// Sub-table with rows selected by a mask; covariates carried along.
    pub fn subset(&self, keep: &[bool]) -> Result<MaximaTable> {
        if keep.len() != self.rows.len() {
            return Err(ExtvalError::data("mask length mismatch"));
        }
        let rows: Vec<MaximaRow> = self
            .rows
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect();
        let mut t = MaximaTable { rows, covariates: BTreeMap::new() };
        for (name, vals) in &self.covariates {
            let v: Vec<f64> = vals
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(x, _)| *x)
                .collect();
            t.covariates.insert(name.clone(), v);
        }
        Ok(t)
    }

    /// Write as CSV with the covariate columns appended; `meta` lines are
    /// emitted as leading `#` comments.
    pub fn write_csv(&self, path: &Path, meta: &[String]) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for line in meta {
            writeln!(file, "# {line}")?;
        }
        let mut wtr = csv::Writer::from_writer(file);
        let cov_names = self.covariate_names();
        let mut header = vec![
            "site".to_string(),
            "lon".to_string(),
            "lat".to_string(),
            "month".to_string(),
            "year".to_string(),
            "maximum".to_string(),
        ];
        header.extend(cov_names.iter().cloned());
        wtr.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![
                r.site.clone(),
                format!("{}", r.lon),
                format!("{}", r.lat),
                format!("{}", r.month),
                format!("{}", r.year),
                format!("{}", r.maximum),
            ];
            for name in &cov_names {
                rec.push(format!("{}", self.covariates[name][i]));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read back a table written by [`write_csv`], covariates included.
    pub fn read_csv(path: &Path) -> Result<MaximaTable> {
        let file = std::fs::File::open(path)?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
        let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
        let fixed = ["site", "lon", "lat", "month", "year", "maximum"];
        for (i, want) in fixed.iter().enumerate() {
            if headers.get(i).map(|s| s.as_str()) != Some(*want) {
                return Err(ExtvalError::data(format!(
                    "maxima CSV must start with columns {fixed:?}, got {headers:?}"
                )));
            }
        }
        let cov_names: Vec<String> = headers[6..].to_vec();
        let mut rows = Vec::new();
        let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_names.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| ExtvalError::data(format!("bad number in column {}", headers[i])))
            };
            rows.push(MaximaRow {
                site: rec[0].to_string(),
                lon: parse(1)?,
                lat: parse(2)?,
                month: parse(3)? as u32,
                year: parse(4)? as i32,
                maximum: parse(5)?,
            });
            for (j, c) in covs.iter_mut().enumerate() {
                c.push(parse(6 + j)?);
            }
        }
        let mut t = MaximaTable::new(rows)?;
        for (name, vals) in cov_names.into_iter().zip(covs) {
            t.add_covariate(&name, vals)?;
        }
        Ok(t)
    }
}

/// Maxima transformed to uniform margins via the fitted GEV parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniformRow {
    pub site: String,
    pub month: u32,
    pub year: i32,
    pub u: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UniformTable {
    pub rows: Vec<UniformRow>,
}

const U_NUDGE: f64 = 1e-12;

impl UniformTable {
    /// Boundary values are nudged into the open interval.
    pub fn new(mut rows: Vec<UniformRow>) -> Result<Self> {
        for r in rows.iter_mut() {
            if !r.u.is_finite() || r.u < 0.0 || r.u > 1.0 {
                return Err(ExtvalError::data(format!(
                    "uniform value {} out of [0,1] at ({}, {}, {})",
                    r.u, r.site, r.year, r.month
                )));
            }
            r.u = r.u.clamp(U_NUDGE, 1.0 - U_NUDGE);
        }
        Ok(UniformTable { rows })
    }

    pub fn write_csv(&self, path: &Path, meta: &[String]) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for line in meta {
            writeln!(file, "# {line}")?;
        }
        let mut wtr = csv::Writer::from_writer(file);
        wtr.write_record(["site", "month", "year", "u"])?;
        for r in &self.rows {
            wtr.write_record(&[
                r.site.clone(),
                format!("{}", r.month),
                format!("{}", r.year),
                format!("{:.17e}", r.u),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<UniformTable> {
        let file = std::fs::File::open(path)?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(UniformRow {
                site: rec[0].to_string(),
                month: rec[1]
                    .trim()
                    .parse()
                    .map_err(|_| ExtvalError::data("bad month"))?,
                year: rec[2]
                    .trim()
                    .parse()
                    .map_err(|_| ExtvalError::data("bad year"))?,
                u: rec[3].trim().parse().map_err(|_| ExtvalError::data("bad u"))?,
            });
        }
        UniformTable::new(rows)
    }
}

/// Site pairs with adjusted distances: the unit of composite likelihood.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pair {
    pub site_a: String,
    pub site_b: String,
    pub distance_km: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if p.site_a == p.site_b {
                return Err(ExtvalError::data(format!("pair of a site with itself: {}", p.site_a)));
            }
            if !(p.distance_km.is_finite() && p.distance_km >= 0.0) {
                return Err(ExtvalError::data("pair distance must be finite and >= 0"));
            }
            let key = if p.site_a < p.site_b {
                (p.site_a.clone(), p.site_b.clone())
            } else {
                (p.site_b.clone(), p.site_a.clone())
            };
            if !seen.insert(key) {
                return Err(ExtvalError::data(format!(
                    "duplicate pair ({}, {})",
                    p.site_a, p.site_b
                )));
            }
        }
        Ok(PairSet { pairs })
    }

    /// All unordered pairs of the given sites with distances from `dist`.
    pub fn all_pairs<F>(sites: &[(String, LonLat)], mut dist: F) -> Result<PairSet>
    where
        F: FnMut(LonLat, LonLat) -> f64,
    {
        let mut pairs = Vec::new();
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                pairs.push(Pair {
                    site_a: sites[i].0.clone(),
                    site_b: sites[j].0.clone(),
                    distance_km: dist(sites[i].1, sites[j].1),
                    weight: 1.0,
                });
            }
        }
        PairSet::new(pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn median_distance(&self) -> f64 {
        let mut d: Vec<f64> = self.pairs.iter().map(|p| p.distance_km).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if d.is_empty() {
            return f64::NAN;
        }
        let m = d.len() / 2;
        if d.len() % 2 == 1 {
            d[m]
        } else {
            0.5 * (d[m - 1] + d[m])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<MaximaRow> {
        vec![
            MaximaRow { site: "a".into(), lon: 12.0, lat: 46.0, month: 1, year: 2000, maximum: 5.0 },
            MaximaRow { site: "a".into(), lon: 12.0, lat: 46.0, month: 2, year: 2000, maximum: 7.5 },
            MaximaRow { site: "b".into(), lon: 12.5, lat: 46.2, month: 1, year: 2000, maximum: 3.25 },
        ]
    }

    #[test]
    fn rejects_duplicates_and_bad_values() {
        let mut rows = sample_rows();
        rows.push(rows[0].clone());
        assert!(MaximaTable::new(rows).is_err());
        let bad = vec![MaximaRow { site: "x".into(), lon: 0.0, lat: 0.0, month: 13, year: 2000, maximum: 1.0 }];
        assert!(MaximaTable::new(bad).is_err());
        let neg = vec![MaximaRow { site: "x".into(), lon: 0.0, lat: 0.0, month: 3, year: 2000, maximum: -1.0 }];
        assert!(MaximaTable::new(neg).is_err());
    }

    #[test]
    fn covariates_and_columns() {
        let mut t = MaximaTable::new(sample_rows()).unwrap();
        t.add_covariate("anomaly", vec![0.1, 0.1, 0.2]).unwrap();
        assert_eq!(t.column("anomaly").unwrap(), vec![0.1, 0.1, 0.2]);
        assert_eq!(t.column("month").unwrap(), vec![1.0, 2.0, 1.0]);
        assert!(t.column("nope").is_err());
        assert!(t.add_covariate("short", vec![1.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = MaximaTable::new(sample_rows()).unwrap();
        t.add_covariate("anomaly", vec![0.125, 0.25, 0.5]).unwrap();
        let dir = std::env::temp_dir().join("extval_table_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("maxima.csv");
        t.write_csv(&path, &["tool=extval test".into()]).unwrap();
        let back = MaximaTable::read_csv(&path).unwrap();
        assert_eq!(back.rows(), t.rows());
        assert_eq!(back.column("anomaly").unwrap(), t.column("anomaly").unwrap());
    }

    #[test]
    fn uniform_table_nudges_boundaries() {
        let t = UniformTable::new(vec![
            UniformRow { site: "a".into(), month: 1, year: 2000, u: 0.0 },
            UniformRow { site: "a".into(), month: 2, year: 2000, u: 1.0 },
        ])
        .unwrap();
        assert!(t.rows[0].u > 0.0);
        assert!(t.rows[1].u < 1.0);
    }

    #[test]
    fn pairs_validate() {
        let sites = vec![
            ("a".to_string(), LonLat::new(12.0, 46.0)),
            ("b".to_string(), LonLat::new(12.5, 46.2)),
            ("c".to_string(), LonLat::new(12.9, 45.8)),
        ];
        let ps = PairSet::all_pairs(&sites, haversine_wrap).unwrap();
        assert_eq!(ps.len(), 3);
        assert!(ps.median_distance() > 0.0);
        let dup = PairSet::new(vec![
            Pair { site_a: "a".into(), site_b: "b".into(), distance_km: 1.0, weight: 1.0 },
            Pair { site_a: "b".into(), site_b: "a".into(), distance_km: 1.0, weight: 1.0 },
        ]);
        assert!(dup.is_err());
    }

    fn haversine_wrap(a: LonLat, b: LonLat) -> f64 {
        crate::geo::haversine(a, b)
    }
}
