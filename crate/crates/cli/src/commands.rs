//! Implementation of the subcommands.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use exang::extremes::gev_quantile;
use exang::inference::{circular_summary, predict_sites, summarize, waic, PosteriorSummary, PredictionDraws};
use exang::io::{self, DirectionConvention, Manifest, StationData, TraceTable};
use exang::simulator::{mse_study, simulate_dataset};
use exang::{run_chain, Dataset, Draw, Layer, Site};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// `trace.csv` → `trace.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn resolve(arg: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    arg.or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage(format!("no {what} path: pass --out or set output.{what} in the configuration")))
}

/// Writes to `path`, or to stdout when there is none.
fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn simulate(cfg: &RunConfig, out: Option<PathBuf>, truth: Option<PathBuf>, grid: Option<PathBuf>) -> CliResult<()> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("`simulation` section is required by simulate".into()))?;
    let out = resolve(out, &cfg.output.data, "data")?;
    let (data, t) = simulate_dataset(sim)?;
    let years: Vec<i64> = (1..=data.n() as i64).collect();
    io::write_stations_file(&out, &data, Some(&years), cfg.input.direction)?;
    let truth = truth.unwrap_or_else(|| sidecar(&out, "truth.json"));
    serde_json::to_writer_pretty(File::create(&truth)?, &t)?;
    if let Some(grid) = grid {
        let mut w = csv::Writer::from_path(grid)?;
        w.write_record(GRID_HEADER)?;
        for s in &t.holdout_sites {
            w.write_record([s.id.clone(), s.lon.to_string(), s.lat.to_string(), s.alt.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Prefixes I/O failures with the file they concern.
fn with_path<T>(path: &Path, r: exang::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        exang::Error::Io(e) => CliError::Usage(format!("{}: {e}", path.display())),
        other => CliError::Core(other),
    })
}

fn load_data(cfg: &RunConfig, path: &Path) -> CliResult<StationData> {
    with_path(path, io::read_stations_file(path, cfg.input))
}

pub fn fit(cfg: &RunConfig, data_path: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let out = resolve(out, &cfg.output.trace, "trace")?;
    let data = load_data(cfg, data_path)?.dataset;
    let priors = cfg.priors();
    let run = run_chain(&data, &cfg.model, &priors, &cfg.mcmc)?;
    io::write_trace(File::create(&out)?, &run)?;
    let mut manifest = Manifest::new(&cfg.model, &priors, &run);
    manifest.config_digest = Some(cfg.digest());
    manifest.write(sidecar(&out, "manifest.json"))?;
    for t in &run.traces {
        let rates: Vec<String> = t.acceptance.iter().map(|(b, r)| format!("{b} {r:.2}")).collect();
        eprintln!("chain {}: {} draws; acceptance {}", t.chain, t.draws.len(), rates.join(", "));
    }
    Ok(())
}

/// Draws of a trace file, checked against the model and the data.
fn load_draws(cfg: &RunConfig, path: &Path, data: &Dataset) -> CliResult<Vec<Draw>> {
    let table = with_path(path, io::read_trace_file(path))?;
    let layout = table.layout()?;
    let spec = &cfg.model;
    let betas = Layer::ALL.map(|l| spec.layer(l).terms.len());
    let angular = spec.angular.as_ref().map(|a| a.n_coef());
    if layout.k != data.k() || layout.n_beta != betas || layout.n_beta_theta != angular {
        return Err(CliError::Config(format!(
            "trace {} does not match the model and data ({} sites in the trace, {} in the data)",
            path.display(),
            layout.k,
            data.k()
        )));
    }
    let draws = table.draws()?;
    if draws.is_empty() {
        return Err(CliError::Config(format!("trace {} has no draws", path.display())));
    }
    Ok(draws)
}

const GRID_HEADER: [&str; 4] = ["station_id", "lon", "lat", "alt"];

#[derive(Deserialize)]
struct GridRow {
    station_id: String,
    lon: f64,
    lat: f64,
    #[serde(default)]
    alt: Option<f64>,
}

/// Query sites; projected like the data when the configuration asks for it.
fn load_grid(path: &Path, data: &Dataset, project: bool) -> CliResult<Vec<Site>> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut sites = Vec::new();
    for row in rdr.deserialize() {
        let r: GridRow = row?;
        sites.push(Site::new(r.station_id, r.lon, r.lat, r.alt.unwrap_or(f64::NAN)));
    }
    if sites.is_empty() {
        return Err(CliError::Config(format!("grid {} has no sites", path.display())));
    }
    if project {
        let lat0 = data.sites.iter().map(|s| s.lat).sum::<f64>() / data.k() as f64;
        let c = lat0.to_radians().cos();
        for s in &mut sites {
            s.coords = [s.lon * c, s.lat];
        }
    }
    Ok(sites)
}

fn prediction_record(
    p: &PredictionDraws,
    probs: &[f64],
    level: f64,
    convention: DirectionConvention,
    angular: bool,
) -> CliResult<Vec<(String, Value)>> {
    let s = &p.site;
    let mut rec = vec![
        ("station_id".to_string(), json!(s.id)),
        ("lon".into(), json!(s.lon)),
        ("lat".into(), json!(s.lat)),
        ("alt".into(), if s.alt.is_finite() { json!(s.alt) } else { Value::Null }),
    ];
    let mut push = |name: &str, summary: PosteriorSummary| {
        rec.push((format!("{name}_med"), json!(summary.median)));
        rec.push((format!("{name}_lo"), json!(summary.lo)));
        rec.push((format!("{name}_hi"), json!(summary.hi)));
    };
    for layer in Layer::ALL {
        push(layer.name(), PosteriorSummary::from_samples(p.layer(layer), level));
    }
    for &prob in probs {
        let q = (0..p.len()).map(|t| gev_quantile(prob, &p.gev(t))).collect::<exang::Result<Vec<_>>>()?;
        push(&format!("rl_{prob}"), PosteriorSummary::from_samples(&q, level));
    }
    if angular {
        let c = circular_summary(&p.theta)?;
        rec.push(("angle_mode".into(), json!(convention.from_radians(c.mode))));
        let disp = c.dispersion.to_degrees();
        rec.push(("angle_dispersion".into(), if disp.is_finite() { json!(disp) } else { Value::Null }));
        rec.push(("n_modes".into(), json!(c.n_modes)));
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub fn predict(
    cfg: &RunConfig,
    data_path: &Path,
    trace: &Path,
    grid: &Path,
    out: Option<PathBuf>,
    format: Format,
) -> CliResult<()> {
    let out = resolve(out, &cfg.output.predictions, "predictions")?;
    let data = load_data(cfg, data_path)?.dataset;
    let draws = load_draws(cfg, trace, &data)?;
    let sites = load_grid(grid, &data, cfg.input.project)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.prediction.seed);
    let preds = predict_sites(&draws, &data, &cfg.model, &sites, &mut rng)?;
    let opts = &cfg.prediction;
    let angular = cfg.model.angular.is_some();
    let records = preds
        .iter()
        .map(|p| prediction_record(p, &opts.return_levels, opts.level, cfg.input.direction, angular))
        .collect::<CliResult<Vec<_>>>()?;
    match format {
        Format::Json => {
            let rows: Vec<Map<String, Value>> = records.into_iter().map(|r| r.into_iter().collect()).collect();
            serde_json::to_writer_pretty(File::create(&out)?, &rows)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(records[0].iter().map(|(k, _)| k.as_str()))?;
            for r in &records {
                w.write_record(r.iter().map(|(_, v)| match v {
                    Value::String(s) => s.clone(),
                    Value::Null => String::new(),
                    other => other.to_string(),
                }))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn waic_cmd(cfg: &RunConfig, data_path: &Path, trace: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let data = load_data(cfg, data_path)?.dataset;
    let draws = load_draws(cfg, trace, &data)?;
    let report = waic(&draws, &data, &cfg.model)?;
    let out = out.or_else(|| cfg.output.waic.clone());
    let mut w = sink(out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    Ok(())
}

/// Median and equal-tailed 95% interval of every trace column.
pub fn summarize_trace(table: &TraceTable) -> Vec<exang::inference::ParamSummary> {
    summarize(&table.names, &table.rows)
}

pub fn summarize_cmd(trace: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let table = with_path(trace, io::read_trace_file(trace))?;
    if table.rows.is_empty() {
        return Err(CliError::Config(format!("trace {} has no draws", trace.display())));
    }
    let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
    w.write_record(["parameter", "median", "lo", "hi"])?;
    for s in summarize_trace(&table) {
        w.write_record([s.name, s.median.to_string(), s.lo.to_string(), s.hi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn mse(cfg: &RunConfig, out: Option<PathBuf>) -> CliResult<()> {
    let study = cfg
        .study
        .as_ref()
        .ok_or_else(|| CliError::Config("`study` section is required by mse".into()))?;
    let cells = mse_study(study)?;
    let out = out.or_else(|| cfg.output.study.clone());
    let mut w = sink(out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &cells)?;
    writeln!(w)?;
    Ok(())
}
