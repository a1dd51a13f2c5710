//! Distances and spatial clustering: haversine, topographically adjusted
//! distance over a DEM, and seeded k-means for the spatial CV clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

use crate::error::{ExtvalError, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Self {
        LonLat { lon, lat }
    }
}

/// Great-circle distance in km.
pub fn haversine(a: LonLat, b: LonLat) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let s = (0.5 * dlat).sin().powi(2) + lat1.cos() * lat2.cos() * (0.5 * dlon).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().min(1.0).asin()
}

/// Regular lon/lat elevation grid.
#[derive(Debug, Clone)]
pub struct Dem {
    /// Elevations in metres, row-major with row 0 at the northern edge.
    elev: Vec<f64>,
    ncols: usize,
    nrows: usize,
    /// Lon/lat of the cell centre of the south-west corner cell.
    origin: LonLat,
    cell_size: f64,
}

impl Dem {
    pub fn new(elev: Vec<f64>, ncols: usize, nrows: usize, origin: LonLat, cell_size: f64) -> Result<Self> {
        if elev.len() != ncols * nrows {
            return Err(ExtvalError::config("DEM grid size mismatch"));
        }
        if elev.iter().any(|e| !e.is_finite()) {
            return Err(ExtvalError::config("DEM elevations must be finite"));
        }
        if cell_size <= 0.0 {
            return Err(ExtvalError::config("DEM cell size must be positive"));
        }
        Ok(Dem { elev, ncols, nrows, origin, cell_size })
    }

    /// Constant-elevation DEM covering a bounding box (mostly for tests).
    pub fn flat(origin: LonLat, ncols: usize, nrows: usize, cell_size: f64, elevation: f64) -> Self {
        Dem {
            elev: vec![elevation; ncols * nrows],
            ncols,
            nrows,
            origin,
            cell_size,
        }
    }

    /// Parse an ESRI ASCII grid (.asc).
    pub fn from_esri_ascii(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut ncols = None;
        let mut nrows = None;
        let mut xll = None;
        let mut yll = None;
        let mut cell = None;
        let mut nodata = -9999.0f64;
        let mut values: Vec<f64> = Vec::new();
        let mut header_done = false;
        for line in reader.lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if !header_done {
                let mut parts = trimmed.split_whitespace();
                let key = parts.next().unwrap_or("").to_ascii_lowercase();
                let val = parts.next();
                let numeric = val.and_then(|v| v.parse::<f64>().ok());
                match (key.as_str(), numeric) {
                    ("ncols", Some(v)) => ncols = Some(v as usize),
                    ("nrows", Some(v)) => nrows = Some(v as usize),
                    ("xllcorner", Some(v)) => xll = Some(v),
                    ("yllcorner", Some(v)) => yll = Some(v),
                    ("xllcenter", Some(v)) => xll = Some(v),
                    ("yllcenter", Some(v)) => yll = Some(v),
                    ("cellsize", Some(v)) => cell = Some(v),
                    ("nodata_value", Some(v)) => nodata = v,
                    _ => {
                        header_done = true;
                        for tok in trimmed.split_whitespace() {
                            values.push(tok.parse::<f64>().map_err(|_| {
                                ExtvalError::data(format!("bad DEM value: {tok}"))
                            })?);
                        }
                    }
                }
            } else {
                for tok in trimmed.split_whitespace() {
                    values.push(
                        tok.parse::<f64>()
                            .map_err(|_| ExtvalError::data(format!("bad DEM value: {tok}")))?,
                    );
                }
            }
        }
        let (ncols, nrows, xll, yll, cell) = match (ncols, nrows, xll, yll, cell) {
            (Some(a), Some(b), Some(c), Some(d), Some(e)) => (a, b, c, d, e),
            _ => return Err(ExtvalError::data("incomplete ESRI ASCII header")),
        };
        if values.len() != ncols * nrows {
            return Err(ExtvalError::data(format!(
                "ESRI grid has {} values, expected {}",
                values.len(),
                ncols * nrows
            )));
        }
        for v in values.iter_mut() {
            if *v == nodata {
                *v = 0.0;
            }
        }
        // ESRI corner registration: shift to cell centres.
        let origin = LonLat::new(xll + 0.5 * cell, yll + 0.5 * cell);
        Dem::new(values, ncols, nrows, origin, cell)
    }

    /// Parse a `lon,lat,elev_m` CSV laid out on a regular grid.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let mut pts: Vec<(f64, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(ExtvalError::data("DEM CSV needs lon,lat,elev_m columns"));
            }
            let lon: f64 = rec[0].trim().parse().map_err(|_| ExtvalError::data("bad lon"))?;
            let lat: f64 = rec[1].trim().parse().map_err(|_| ExtvalError::data("bad lat"))?;
            let ele: f64 = rec[2].trim().parse().map_err(|_| ExtvalError::data("bad elev"))?;
            pts.push((lon, lat, ele));
        }
        if pts.is_empty() {
            return Err(ExtvalError::data("empty DEM CSV"));
        }
        let mut lons: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let mut lats: Vec<f64> = pts.iter().map(|p| p.1).collect();
        lons.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lons.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        lats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lats.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let ncols = lons.len();
        let nrows = lats.len();
        if ncols * nrows != pts.len() {
            return Err(ExtvalError::data("DEM CSV is not a complete regular grid"));
        }
        let cell = if ncols > 1 {
            (lons[ncols - 1] - lons[0]) / (ncols - 1) as f64
        } else if nrows > 1 {
            (lats[nrows - 1] - lats[0]) / (nrows - 1) as f64
        } else {
            return Err(ExtvalError::data("DEM CSV needs at least a 1x2 grid"));
        };
        let mut elev = vec![f64::NAN; ncols * nrows];
        for (lon, lat, e) in pts {
            let col = ((lon - lons[0]) / cell).round() as usize;
            let row_from_south = ((lat - lats[0]) / cell).round() as usize;
            let row = nrows - 1 - row_from_south;
            elev[row * ncols + col] = e;
        }
        if elev.iter().any(|e| e.is_nan()) {
            return Err(ExtvalError::data("DEM CSV has holes in the grid"));
        }
        Dem::new(elev, ncols, nrows, LonLat::new(lons[0], lats[0]), cell)
    }

    pub fn contains(&self, p: LonLat) -> bool {
        let max_lon = self.origin.lon + (self.ncols - 1) as f64 * self.cell_size;
        let max_lat = self.origin.lat + (self.nrows - 1) as f64 * self.cell_size;
        p.lon >= self.origin.lon && p.lon <= max_lon && p.lat >= self.origin.lat && p.lat <= max_lat
    }

    /// Bilinear elevation lookup in metres.
    pub fn elevation(&self, p: LonLat) -> Result<f64> {
        if !self.contains(p) {
            return Err(ExtvalError::domain(format!(
                "point ({}, {}) outside DEM bounds",
                p.lon, p.lat
            )));
        }
        let fx = (p.lon - self.origin.lon) / self.cell_size;
        let fy = (p.lat - self.origin.lat) / self.cell_size;
        let x0 = (fx.floor() as usize).min(self.ncols - 1);
        let y0 = (fy.floor() as usize).min(self.nrows - 1);
        let x1 = (x0 + 1).min(self.ncols - 1);
        let y1 = (y0 + 1).min(self.nrows - 1);
        let tx = (fx - x0 as f64).clamp(0.0, 1.0);
        let ty = (fy - y0 as f64).clamp(0.0, 1.0);
        let at = |col: usize, row_from_south: usize| -> f64 {
            let row = self.nrows - 1 - row_from_south;
            self.elev[row * self.ncols + col]
        };
        let v00 = at(x0, y0);
        let v10 = at(x1, y0);
        let v01 = at(x0, y1);
        let v11 = at(x1, y1);
        Ok(v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty)
    }
}

/// Topographically adjusted distance: the great-circle chord sampled at
/// `step_km` spacing, with elevation differences folded in per segment:
/// sum over segments of sqrt(dh^2 + dz^2). Always >= haversine.
pub fn topo_distance(a: LonLat, b: LonLat, dem: &Dem, step_km: f64) -> Result<f64> {
    if !(step_km > 0.0) {
        return Err(ExtvalError::config("step must be positive"));
    }
    if !dem.contains(a) || !dem.contains(b) {
        return Err(ExtvalError::domain("endpoint outside DEM bounds"));
    }
    let total = haversine(a, b);
    if total == 0.0 {
        return Ok(0.0);
    }
    let n_seg = (total / step_km).ceil().max(1.0) as usize;
    let dh = total / n_seg as f64;
    // Spherical linear interpolation between the two unit vectors.
    let to_unit = |p: LonLat| -> [f64; 3] {
        let (lon, lat) = (p.lon.to_radians(), p.lat.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    };
    let ua = to_unit(a);
    let ub = to_unit(b);
    let omega = total / EARTH_RADIUS_KM;
    let sin_omega = omega.sin();
    let point_at = |t: f64| -> LonLat {
        if sin_omega < 1e-12 {
            return a;
        }
        let c1 = ((1.0 - t) * omega).sin() / sin_omega;
        let c2 = (t * omega).sin() / sin_omega;
        let v = [
            c1 * ua[0] + c2 * ub[0],
            c1 * ua[1] + c2 * ub[1],
            c1 * ua[2] + c2 * ub[2],
        ];
        let lat = v[2].asin().to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        LonLat::new(lon, lat)
    };
    let mut dist = 0.0;
    let mut prev_z = dem.elevation(a)? / 1000.0; // km
    for i in 1..=n_seg {
        let p = if i == n_seg { b } else { point_at(i as f64 / n_seg as f64) };
        let z = dem.elevation(p)? / 1000.0;
        let dz = z - prev_z;
        dist += (dh * dh + dz * dz).sqrt();
        prev_z = z;
    }
    Ok(dist)
}

/// K-means clustering: Lloyd's algorithm with k-means++ initialization,
/// `restarts` seeded restarts, best inertia kept. Deterministic for a seed.
pub fn kmeans(points: &[(f64, f64)], k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    if k == 0 || points.len() < k {
        return Err(ExtvalError::config(format!(
            "kmeans needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let distinct = {
        let mut seen: Vec<(f64, f64)> = Vec::new();
        for p in points {
            if !seen.iter().any(|q| q.0 == p.0 && q.1 == p.1) {
                seen.push(*p);
            }
        }
        seen.len()
    };
    let mut pts = points.to_vec();
    if distinct < k {
        log::warn!("kmeans: only {distinct} distinct points for k={k}; jittering duplicates");
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6a69_7474);
        for p in pts.iter_mut() {
            p.0 += rng.gen_range(-1e-9..1e-9);
            p.1 += rng.gen_range(-1e-9..1e-9);
        }
    }
    let mut best_labels = vec![0usize; pts.len()];
    let mut best_inertia = f64::INFINITY;
    for r in 0..restarts.max(1) {
        let (labels, inertia) = kmeans_once(&pts, k, seed.wrapping_add(r as u64));
        if inertia < best_inertia {
            best_inertia = inertia;
            best_labels = labels;
        }
    }
    Ok(best_labels)
}

pub fn kmeans_inertia(points: &[(f64, f64)], labels: &[usize], k: usize) -> f64 {
    let mut centers = vec![(0.0f64, 0.0f64); k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        centers[l].0 += p.0;
        centers[l].1 += p.1;
        counts[l] += 1;
    }
    for (c, &n) in centers.iter_mut().zip(&counts) {
        if n > 0 {
            c.0 /= n as f64;
            c.1 /= n as f64;
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| (p.0 - centers[l].0).powi(2) + (p.1 - centers[l].1).powi(2))
        .sum()
}

fn kmeans_once(points: &[(f64, f64)], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = points.len();
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);

    // k-means++ seeding.
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)]);
    let mut dist2: Vec<f64> = points.iter().map(|&p| d2(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            points[rng.gen_range(0..n)]
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            points[idx]
        };
        centers.push(next);
        for (i, &p) in points.iter().enumerate() {
            dist2[i] = dist2[i].min(d2(p, next));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..200 {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut bd = f64::INFINITY;
            for (c, &ctr) in centers.iter().enumerate() {
                let dd = d2(p, ctr);
                if dd < bd {
                    bd = dd;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (i, &p) in points.iter().enumerate() {
            let s = &mut sums[labels[i]];
            s.0 += p.0;
            s.1 += p.1;
            s.2 += 1;
        }
        for (c, s) in sums.iter().enumerate() {
            if s.2 > 0 {
                centers[c] = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            } else {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        d2(points[a], centers[labels[a]])
                            .partial_cmp(&d2(points[b], centers[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = points[far];
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(&p, &l)| d2(p, centers[l]))
        .sum();
    (labels, inertia)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn haversine_basic() {
        let a = LonLat::new(12.0, 46.0);
        assert_eq!(haversine(a, a), 0.0);
        // One degree of latitude.
        let b = LonLat::new(12.0, 47.0);
        let d = haversine(a, b);
        assert!((d - 111.195).abs() < 0.01, "got {d}");
        assert_abs_diff_eq!(d, haversine(b, a), epsilon = 1e-12);
    }

    #[test]
    fn flat_dem_matches_haversine() {
        let dem = Dem::flat(LonLat::new(10.0, 44.0), 60, 60, 0.1, 250.0);
        let a = LonLat::new(11.0, 45.0);
        let b = LonLat::new(12.3, 46.8);
        let h = haversine(a, b);
        let t = topo_distance(a, b, &dem, 0.1).unwrap();
        assert!((t - h).abs() / h < 1e-6, "topo {t} vs haversine {h}");
        assert!(t >= h);
    }

    #[test]
    fn constant_slope_is_pythagoras() {
        // Elevation rising linearly west-to-east: total rise over the path
        // combines with the horizontal run as sqrt(h^2 + z^2).
        let ncols = 201;
        let nrows = 41;
        let cell = 0.01;
        let origin = LonLat::new(10.0, 45.0);
        let mut elev = vec![0.0; ncols * nrows];
        let rise_per_deg = 40_000.0; // metres per degree of longitude
        for row in 0..nrows {
            for col in 0..ncols {
                elev[row * ncols + col] = rise_per_deg * (col as f64 * cell);
            }
        }
        let dem = Dem::new(elev, ncols, nrows, origin, cell).unwrap();
        let a = LonLat::new(10.2, 45.2);
        let b = LonLat::new(11.2, 45.2);
        let h = haversine(a, b);
        let z = rise_per_deg * 1.0 / 1000.0; // km of rise over one degree
        let want = (h * h + z * z).sqrt();
        let t = topo_distance(a, b, &dem, 0.05).unwrap();
        assert!((t - want).abs() / want < 1e-4, "topo {t} vs pythagoras {want}");
    }

    #[test]
    fn ridge_dem_refinement_oracle() {
        // A synthetic ridge across the path; refining the step by 100x
        // changes the distance by less than 0.1%.
        let ncols = 121;
        let nrows = 41;
        let cell = 0.01;
        let origin = LonLat::new(10.0, 45.0);
        let mut elev = vec![0.0; ncols * nrows];
        for row in 0..nrows {
            for col in 0..ncols {
                let lon = origin.lon + col as f64 * cell;
                // Gaussian ridge centred at lon 10.6.
                elev[row * ncols + col] = 1500.0 * (-((lon - 10.6) / 0.15).powi(2)).exp();
            }
        }
        let dem = Dem::new(elev, ncols, nrows, origin, cell).unwrap();
        let a = LonLat::new(10.1, 45.2);
        let b = LonLat::new(11.1, 45.2);
        let coarse = topo_distance(a, b, &dem, 0.1).unwrap();
        let fine = topo_distance(a, b, &dem, 0.001).unwrap();
        assert!(
            (coarse - fine).abs() / fine < 1e-3,
            "coarse {coarse} vs fine {fine}"
        );
        assert!(coarse >= haversine(a, b));
    }

    #[test]
    fn topo_distance_symmetric() {
        let dem = Dem::flat(LonLat::new(9.0, 44.0), 40, 40, 0.1, 100.0);
        let a = LonLat::new(9.5, 44.5);
        let b = LonLat::new(11.5, 46.5);
        let ab = topo_distance(a, b, &dem, 0.1).unwrap();
        let ba = topo_distance(b, a, &dem, 0.1).unwrap();
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
    }

    #[test]
    fn topo_distance_outside_dem_errors() {
        let dem = Dem::flat(LonLat::new(10.0, 45.0), 10, 10, 0.1, 0.0);
        assert!(topo_distance(LonLat::new(0.0, 0.0), LonLat::new(10.5, 45.5), &dem, 0.1).is_err());
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let mut pts = Vec::new();
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for &(cx, cy) in &centers {
            for _ in 0..25 {
                pts.push((cx + rng.gen_range(-0.5..0.5), cy + rng.gen_range(-0.5..0.5)));
            }
        }
        let labels = kmeans(&pts, 4, 42, 50).unwrap();
        // All points in one blob share a label; labels across blobs differ.
        for blob in 0..4 {
            let l0 = labels[blob * 25];
            assert!(labels[blob * 25..(blob + 1) * 25].iter().all(|&l| l == l0));
        }
        let mut uniq: Vec<usize> = labels.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 4);
    }

    #[test]
    fn kmeans_k1_and_determinism() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, -(i as f64))).collect();
        let l = kmeans(&pts, 1, 7, 50).unwrap();
        assert!(l.iter().all(|&x| x == 0));
        let a = kmeans(&pts, 3, 7, 50).unwrap();
        let b = kmeans(&pts, 3, 7, 50).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&pts, 11, 7, 1).is_err());
    }

    #[test]
    fn kmeans_restart_dominance() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64)> = (0..60)
            .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
            .collect();
        let best = kmeans(&pts, 4, 99, 50).unwrap();
        let best_inertia = kmeans_inertia(&pts, &best, 4);
        for s in 0..10u64 {
            let single = kmeans(&pts, 4, 99 + s, 1).unwrap();
            let inertia = kmeans_inertia(&pts, &single, 4);
            assert!(
                best_inertia <= inertia + 1e-9,
                "restart dominance violated: {best_inertia} > {inertia}"
            );
        }
    }

    #[test]
    fn esri_ascii_round_trip() {
        let dir = std::env::temp_dir().join("extval_geo_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("grid.asc");
        std::fs::write(
            &path,
            "ncols 3\nnrows 2\nxllcorner 10.0\nyllcorner 45.0\ncellsize 0.5\nNODATA_value -9999\n\
             100 200 300\n400 500 600\n",
        )
        .unwrap();
        let dem = Dem::from_esri_ascii(&path).unwrap();
        // Row 0 of the file is the northern row.
        let nw = dem.elevation(LonLat::new(10.25, 45.75)).unwrap();
        let sw = dem.elevation(LonLat::new(10.25, 45.25)).unwrap();
        assert_abs_diff_eq!(nw, 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sw, 400.0, epsilon = 1e-9);
    }
}
