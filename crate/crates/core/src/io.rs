//! Station CSV ingestion and trace persistence.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec, Priors, Site};
use crate::sampler::{ChainRun, ChainSettings, Draw, TraceLayout};

pub const STATION_HEADER: [&str; 7] = ["station_id", "lon", "lat", "alt", "year", "max", "direction"];

/// How the `direction` column is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConvention {
    /// Degrees the wind comes from, clockwise from North.
    #[default]
    Meteorological,
    /// Degrees counterclockwise from the first axis.
    Mathematical,
}

impl DirectionConvention {
    /// Degrees in this convention to radians in `[0, 2π)`, counterclockwise
    /// from the first axis.
    pub fn to_radians(self, degrees: f64) -> f64 {
        let d = match self {
            Self::Meteorological => 90.0 - degrees,
            Self::Mathematical => degrees,
        };
        wrap(d.to_radians())
    }

    pub fn from_radians(self, radians: f64) -> f64 {
        let d = radians.to_degrees();
        match self {
            Self::Meteorological => (90.0 - d).rem_euclid(360.0),
            Self::Mathematical => d.rem_euclid(360.0),
        }
    }
}

fn wrap(t: f64) -> f64 {
    let w = t.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Options for reading station files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadOptions {
    #[serde(default)]
    pub direction: DirectionConvention,
    /// Equirectangular projection of (lon, lat) before computing distances.
    #[serde(default)]
    pub project: bool,
}

/// A dataset together with the year of each replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct StationData {
    pub dataset: Dataset,
    pub years: Vec<i64>,
}

/// Sets each site's planar coordinates to `(lon cos φ₀, lat)`, with `φ₀` the
/// mean latitude, in degree units.
pub fn project_equirectangular(sites: &mut [Site]) {
    if sites.is_empty() {
        return;
    }
    let lat0 = sites.iter().map(|s| s.lat).sum::<f64>() / sites.len() as f64;
    let c = lat0.to_radians().cos();
    for s in sites {
        s.coords = [s.lon * c, s.lat];
    }
}

fn parse_field(value: &str, name: &str, line: u64) -> Result<Option<f64>> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(None);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        _ => Err(Error::Parse { line, msg: format!("invalid {name} '{v}'") }),
    }
}

fn required(value: Option<f64>, name: &str, line: u64) -> Result<f64> {
    value.ok_or_else(|| Error::Parse { line, msg: format!("missing {name}") })
}

/// Reads station rows `station_id,lon,lat,alt,year,max,direction`.
///
/// Sites keep their order of first appearance and replicates are the sorted
/// distinct years; a (station, year) pair absent from the file is missing.
pub fn read_stations<R: Read>(reader: R, opts: ReadOptions) -> Result<StationData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != STATION_HEADER.len() || header.iter().zip(STATION_HEADER).any(|(a, b)| a != b) {
        return Err(Error::Parse { line: 1, msg: format!("expected header {}", STATION_HEADER.join(",")) });
    }
    let mut sites: Vec<Site> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, i64), (Option<f64>, Option<f64>)> = HashMap::new();
    let mut years = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != STATION_HEADER.len() {
            return Err(Error::Parse { line, msg: format!("expected 7 fields, found {}", rec.len()) });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, msg: "empty station_id".into() });
        }
        let lon = required(parse_field(&rec[1], "lon", line)?, "lon", line)?;
        let lat = required(parse_field(&rec[2], "lat", line)?, "lat", line)?;
        let alt = parse_field(&rec[3], "alt", line)?.unwrap_or(0.0);
        let year: i64 = rec[4]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("invalid year '{}'", &rec[4]) })?;
        let max = parse_field(&rec[5], "max", line)?;
        let direction = parse_field(&rec[6], "direction", line)?;
        if let Some(d) = direction {
            if !(0.0..=360.0).contains(&d) {
                return Err(Error::Parse { line, msg: format!("direction {d} outside [0, 360]") });
            }
        }
        let j = match index.get(&id) {
            Some(&j) => {
                let s = &sites[j];
                if s.lon != lon || s.lat != lat || s.alt != alt {
                    return Err(Error::Parse { line, msg: format!("station '{id}' changes coordinates") });
                }
                j
            }
            None => {
                index.insert(id.clone(), sites.len());
                sites.push(Site::new(id.clone(), lon, lat, alt));
                sites.len() - 1
            }
        };
        let theta = direction.map(|d| opts.direction.to_radians(d));
        if cells.insert((j, year), (max, theta)).is_some() {
            return Err(Error::Parse { line, msg: format!("duplicate record for station '{id}' in {year}") });
        }
        years.insert(year);
    }
    if opts.project {
        project_equirectangular(&mut sites);
    }
    let years: Vec<i64> = years.into_iter().collect();
    let k = sites.len();
    let mut maxima = vec![vec![None; k]; years.len()];
    let mut angles = vec![vec![None; k]; years.len()];
    for (i, y) in years.iter().enumerate() {
        for j in 0..k {
            if let Some(&(m, t)) = cells.get(&(j, *y)) {
                maxima[i][j] = m;
                angles[i][j] = t;
            }
        }
    }
    Ok(StationData { dataset: Dataset::new(sites, maxima, angles)?, years })
}

pub fn read_stations_file(path: impl AsRef<Path>, opts: ReadOptions) -> Result<StationData> {
    read_stations(File::open(path)?, opts)
}

/// Writes one row per (site, replicate) with at least one observed value;
/// `years` defaults to `0..n`.
pub fn write_stations<W: Write>(
    writer: W,
    data: &Dataset,
    years: Option<&[i64]>,
    convention: DirectionConvention,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STATION_HEADER)?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (j, s) in data.sites.iter().enumerate() {
        for i in 0..data.n() {
            let (m, t) = (data.maximum(i, j), data.angle(i, j));
            if m.is_none() && t.is_none() {
                continue;
            }
            let year = years.map_or(i as i64, |y| y[i]);
            w.write_record([
                s.id.clone(),
                s.lon.to_string(),
                s.lat.to_string(),
                s.alt.to_string(),
                year.to_string(),
                fmt(m),
                fmt(t.map(|t| convention.from_radians(t))),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_stations_file(
    path: impl AsRef<Path>,
    data: &Dataset,
    years: Option<&[i64]>,
    convention: DirectionConvention,
) -> Result<()> {
    write_stations(File::create(path)?, data, years, convention)
}

/// Writes every chain's draws, one row per retained iteration, with a leading
/// `chain` column.
pub fn write_trace<W: Write>(writer: W, run: &ChainRun) -> Result<()> {
    let first = run
        .traces
        .iter()
        .find_map(|t| t.draws.first())
        .ok_or_else(|| Error::validation("trace has no draws"))?;
    let layout = TraceLayout::of(first);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["chain".to_string()];
    header.extend(layout.names());
    w.write_record(&header)?;
    for t in &run.traces {
        for d in &t.draws {
            let mut row = vec![t.chain.to_string()];
            row.extend(layout.to_row(d).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Trace read back from CSV: column names and rows (without the chain column).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceTable {
    pub names: Vec<String>,
    pub chains: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Recovers the layout from the column names.
    pub fn layout(&self) -> Result<TraceLayout> {
        let count = |prefix: &str| self.names.iter().filter(|n| n.starts_with(prefix)).count();
        let k = count("mu[");
        let layout = TraceLayout {
            k,
            n_beta: [count("beta_mu["), count("beta_sigma["), count("beta_xi[")],
            n_beta_theta: self.names.iter().any(|n| n == "tau_theta").then(|| count("beta_theta[")),
        };
        if layout.names() != self.names {
            return Err(Error::validation("trace columns do not follow the expected layout"));
        }
        Ok(layout)
    }

    pub fn draws(&self) -> Result<Vec<Draw>> {
        let layout = self.layout()?;
        self.rows.iter().map(|r| layout.from_row(r)).collect()
    }
}

pub fn read_trace<R: Read>(reader: R) -> Result<TraceTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("chain") {
        return Err(Error::Parse { line: 1, msg: "trace header must start with 'chain'".into() });
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut chains = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() + 1 {
            return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", names.len() + 1, rec.len()) });
        }
        chains.push(rec[0].parse().map_err(|_| Error::Parse { line, msg: "invalid chain index".into() })?);
        let row = rec
            .iter()
            .skip(1)
            .zip(&names)
            .map(|(v, n)| v.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("invalid {n} '{v}'") }))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(TraceTable { names, chains, rows })
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceTable> {
    read_trace(File::open(path)?)
}

/// Sidecar of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ModelSpec,
    pub priors: Priors,
    pub settings: ChainSettings,
    /// Post-burn-in acceptance rate per block, one map per chain.
    pub acceptance: Vec<Vec<(String, f64)>>,
    #[serde(default)]
    pub config_digest: Option<String>,
}

impl Manifest {
    pub fn new(spec: &ModelSpec, priors: &Priors, run: &ChainRun) -> Self {
        Self {
            spec: spec.clone(),
            priors: priors.clone(),
            settings: run.settings.clone(),
            acceptance: run.traces.iter().map(|t| t.acceptance.clone()).collect(),
            config_digest: None,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}
