//! File formats: bivariate input series, segment JSON lines and the CSV
//! outputs. Every output CSV opens with a `# dyncop <kind> v<N>` line.

use dyncop::detect::{change_type, DetectionEvent, DetectionReport};
use dyncop::risk::{BacktestReport, Regime, RiskPoint};
use dyncop::sim::{schema_line, SCHEMA_VERSION};
use dyncop::{CopulaSpec, Error, Family};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub type Res<T> = Result<T, Error>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

pub fn open_in(path: &Path) -> Res<Box<dyn Read>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdin()));
    }
    Ok(Box::new(File::open(path).map_err(|e| io_err(path, e))?))
}

/// `None` or `-` writes to stdout.
pub fn open_out(path: Option<&Path>) -> Res<Box<dyn Write>> {
    match path {
        Some(p) if p.as_os_str() != "-" => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?))),
        _ => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

/// Two numeric columns, optionally preceded by a date column.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub dates: Option<Vec<String>>,
    pub values: Vec<[f64; 2]>,
}

impl Series {
    pub fn date(&self, i: usize) -> Option<String> {
        self.dates.as_ref().and_then(|d| d.get(i).cloned())
    }
}

/// Reads `date,asset1,asset2` (or `asset1,asset2`) with a header row.
/// Lines starting with `#` are skipped.
pub fn read_series(path: &Path) -> Res<Series> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(open_in(path)?);
    let width = rdr.headers().map_err(|e| io_err(path, e))?.len();
    if width != 2 && width != 3 {
        return Err(Error::Parse { line: 1, msg: format!("expected 2 or 3 columns, found {width}") });
    }
    let mut dates = (width == 3).then(Vec::new);
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse { line, msg: format!("expected {width} fields, found {}", rec.len()) });
        }
        let off = width - 2;
        let num = |j: usize| -> Res<f64> {
            let f = &rec[off + j];
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { line, msg: format!("'{f}' is not a finite number") }),
            }
        };
        values.push([num(0)?, num(1)?]);
        if let Some(d) = dates.as_mut() {
            d.push(rec[0].to_string());
        }
    }
    Ok(Series { dates, values })
}

pub fn write_series<W: Write>(w: W, dates: &[String], values: &[[f64; 2]]) -> Res<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "asset1", "asset2"])?;
    for (d, v) in dates.iter().zip(values) {
        out.write_record([d.clone(), v[0].to_string(), v[1].to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One line of the segments file. Positions are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub schema_version: u32,
    pub start: usize,
    pub end: usize,
    pub start_date: Option<String>,
    pub end_date: Option<String>,
    pub family: Family,
    pub params: Vec<f64>,
    pub change_type: String,
    pub loglik: f64,
    pub aic: f64,
    pub gof_statistic: Option<f64>,
    pub gof_pvalue: Option<f64>,
}

impl SegmentRecord {
    pub fn regime(&self) -> Res<Regime> {
        if self.start == 0 || self.end < self.start {
            return Err(Error::Parameter(format!("segment {}..{} is not a 1-based range", self.start, self.end)));
        }
        Ok(Regime { start: self.start - 1, end: self.end, spec: CopulaSpec::from_params(self.family, &self.params)? })
    }
}

pub fn segment_records(rep: &DetectionReport, series: &Series) -> Vec<SegmentRecord> {
    rep.segments
        .iter()
        .enumerate()
        .map(|(i, s)| SegmentRecord {
            schema_version: SCHEMA_VERSION,
            start: s.start + 1,
            end: s.end,
            start_date: series.date(s.start),
            end_date: series.date(s.end - 1),
            family: s.family(),
            params: s.fit.spec.params(),
            change_type: change_type(i.checked_sub(1).map(|j| &rep.segments[j]), s).to_string(),
            loglik: s.fit.loglik,
            aic: s.fit.aic,
            gof_statistic: s.gof.as_ref().map(|g| g.statistic),
            gof_pvalue: s.gof.as_ref().map(|g| g.pvalue),
        })
        .collect()
}

pub fn write_segments<W: Write>(mut w: W, records: &[SegmentRecord]) -> Res<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_regimes(path: &Path) -> Res<Vec<Regime>> {
    let rdr = BufReader::new(open_in(path)?);
    let mut out = Vec::new();
    for (i, line) in rdr.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SegmentRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("unsupported schema version {}", rec.schema_version),
            });
        }
        out.push(rec.regime()?);
    }
    Ok(out)
}

pub fn write_events<W: Write>(mut w: W, events: &[DetectionEvent], series: &Series) -> Res<()> {
    w.write_all(schema_line("events").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "detected_at",
        "detected_date",
        "change_point",
        "change_date",
        "limit",
        "statistic",
        "threshold",
        "window_start",
        "opens_segment",
    ])?;
    for e in events {
        out.write_record([
            (e.detected_at + 1).to_string(),
            series.date(e.detected_at).unwrap_or_default(),
            (e.change_point + 1).to_string(),
            series.date(e.change_point).unwrap_or_default(),
            e.crossed.to_string(),
            format!("{:.6}", e.statistic),
            format!("{:.6}", e.threshold),
            (e.window_start + 1).to_string(),
            e.opens_segment.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Risk rows. `sign` is -1 when loss columns were negated for plotting.
pub fn write_risk<W: Write>(mut w: W, points: &[RiskPoint], series: &Series, alpha: f64, sign: f64) -> Res<()> {
    w.write_all(schema_line("risk").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "t",
        "date",
        "alpha",
        "sign",
        "var",
        "es",
        "family",
        "params",
        "sigma1",
        "sigma2",
        "realized_loss",
    ])?;
    for p in points {
        let params: Vec<String> = p.spec_used.params().iter().map(|v| format!("{v:.6}")).collect();
        out.write_record([
            (p.t + 1).to_string(),
            series.date(p.t).unwrap_or_default(),
            alpha.to_string(),
            sign.to_string(),
            format!("{:.8}", sign * p.var_value),
            format!("{:.8}", sign * p.es_value),
            p.spec_used.family().to_string(),
            params.join(";"),
            format!("{:.8}", p.sigma_forecasts[0]),
            format!("{:.8}", p.sigma_forecasts[1]),
            p.realized_loss.map(|l| format!("{:.8}", sign * l)).unwrap_or_else(|| "NA".into()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns of a risk file needed for backtesting, in loss sign.
pub struct RiskColumns {
    pub alpha: f64,
    pub losses: Vec<f64>,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
}

pub fn read_risk(path: &Path) -> Res<RiskColumns> {
    #[derive(Deserialize)]
    struct Row {
        alpha: f64,
        sign: f64,
        var: f64,
        es: f64,
        realized_loss: String,
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(open_in(path)?);
    let mut cols = RiskColumns { alpha: f64::NAN, losses: Vec::new(), var: Vec::new(), es: Vec::new() };
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|e| io_err(path, e))?;
        let Ok(loss) = row.realized_loss.parse::<f64>() else { continue };
        cols.alpha = row.alpha;
        cols.losses.push(row.sign * loss);
        cols.var.push(row.sign * row.var);
        cols.es.push(row.sign * row.es);
    }
    Ok(cols)
}

pub fn write_backtest<W: Write>(mut w: W, rep: &BacktestReport, alpha: f64, es_resid: Option<f64>) -> Res<()> {
    w.write_all(schema_line("backtest").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "alpha", "exceedances", "expected", "kupiec_stat", "kupiec_pvalue", "es_residual_mean"])?;
    out.write_record([
        rep.n.to_string(),
        alpha.to_string(),
        rep.exceedances.to_string(),
        format!("{:.4}", rep.expected),
        format!("{:.6}", rep.kupiec_stat),
        format!("{:.6}", rep.kupiec_pvalue),
        es_resid.map(|v| format!("{v:.8}")).unwrap_or_else(|| "NA".into()),
    ])?;
    out.flush()?;
    Ok(())
}
