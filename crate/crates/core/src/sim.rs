//! Piecewise-copula scenarios and the detector comparison harness.
//!
//! Change points and detected positions in rows and summaries are 1-based
//! (the first observation of a new regime), so two blocks of 5000 have the
//! change point 5001. Delays are differences of positions and carry no
//! offset.

use crate::copula::{CopulaSpec, Family};
use crate::detect::{detect, DetectionReport, DetectorConfig, Method};
use crate::error::{Error, Result};
use crate::pseudo::pseudo_observations;
use crate::stats::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub spec: CopulaSpec,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub blocks: Vec<Block>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, seed: u64, blocks: Vec<Block>) -> Result<Self> {
        let s = Scenario { name: name.into(), seed, blocks };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Parameter(format!("scenario '{}' has no blocks", self.name)));
        }
        for b in &self.blocks {
            if b.len == 0 {
                return Err(Error::Parameter(format!("scenario '{}' has an empty block", self.name)));
            }
            b.spec.validate()?;
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Scenario { seed, ..self.clone() }
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    /// 1-based first observation of every block after the first.
    pub fn change_points(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(0, |acc, b| {
                *acc += b.len;
                Some(*acc + 1)
            })
            .take(self.blocks.len() - 1)
            .collect()
    }

    /// Spec of the block holding 1-based position `pos`.
    pub fn spec_at(&self, pos: usize) -> Option<CopulaSpec> {
        let mut end = 0;
        self.blocks.iter().find_map(|b| {
            end += b.len;
            (pos >= 1 && pos <= end).then_some(b.spec)
        })
    }

    /// Concatenated samples, block `i` drawn from seed `derive_seed(seed, i)`,
    /// and the 1-based true change points.
    pub fn generate(&self) -> Result<(Vec<[f64; 2]>, Vec<usize>)> {
        self.validate()?;
        let mut data = Vec::with_capacity(self.total_len());
        for (i, b) in self.blocks.iter().enumerate() {
            data.extend(b.spec.sample(b.len, derive_seed(self.seed, i as u64))?);
        }
        Ok((data, self.change_points()))
    }

    /// Plain-text form accepted by [`Scenario::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("name = {}\nseed = {}\n", self.name, self.seed);
        for b in &self.blocks {
            let params: Vec<String> = b.spec.params().iter().map(|p| p.to_string()).collect();
            let _ = write!(
                out,
                "\n[block]\nfamily = {}\nparams = {}\nlength = {}\n",
                b.spec.family(),
                params.join(", "),
                b.len
            );
        }
        out
    }

    /// Parses `key = value` lines. Top-level keys are `name` and `seed`;
    /// each `[block]` header starts a block with keys `family`, `params`
    /// (comma separated) and `length`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        Scenario::parse_with_default_seed(text, 0)
    }

    /// As [`Scenario::parse`], with `seed` used when the text sets none.
    pub fn parse_with_default_seed(text: &str, seed: u64) -> Result<Self> {
        #[derive(Default)]
        struct Partial {
            line: usize,
            family: Option<Family>,
            params: Option<Vec<f64>>,
            len: Option<usize>,
        }
        let err = |line: usize, msg: String| Error::Parse { line, msg };
        let mut name = None;
        let mut seed = seed;
        let mut partials: Vec<Partial> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.eq_ignore_ascii_case("[block]") {
                partials.push(Partial { line: line_no, ..Default::default() });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim()))
                .ok_or_else(|| err(line_no, format!("expected key = value, got '{line}'")))?;
            match (partials.last_mut(), key.as_str()) {
                (None, "name") => name = Some(value.to_string()),
                (None, "seed") => seed = value.parse().map_err(|_| err(line_no, format!("bad seed '{value}'")))?,
                (Some(p), "family") => p.family = Some(value.parse().map_err(|e: Error| err(line_no, e.to_string()))?),
                (Some(p), "params") => {
                    let ps: std::result::Result<Vec<f64>, _> =
                        value.split(',').map(|v| v.trim().parse::<f64>()).collect();
                    p.params = Some(ps.map_err(|_| err(line_no, format!("bad params '{value}'")))?);
                }
                (Some(p), "length") => {
                    p.len = Some(value.parse().map_err(|_| err(line_no, format!("bad length '{value}'")))?)
                }
                (_, k) => return Err(err(line_no, format!("unexpected key '{k}'"))),
            }
        }
        let blocks = partials
            .into_iter()
            .map(|p| {
                let missing = |what: &str| err(p.line, format!("block is missing '{what}'"));
                let family = p.family.ok_or_else(|| missing("family"))?;
                let params = p.params.ok_or_else(|| missing("params"))?;
                let len = p.len.ok_or_else(|| missing("length"))?;
                let spec = CopulaSpec::from_params(family, &params).map_err(|e| err(p.line, e.to_string()))?;
                Ok(Block { spec, len })
            })
            .collect::<Result<Vec<_>>>()?;
        Scenario::new(name.unwrap_or_else(|| "scenario".into()), seed, blocks)
    }
}

/// Dependence used in the two-family comparisons.
pub fn standard_spec(family: Family) -> CopulaSpec {
    match family {
        Family::Gaussian => CopulaSpec::Gaussian { rho: 0.5 },
        Family::StudentT => CopulaSpec::StudentT { rho: 0.5, nu: 2.2 },
        Family::Clayton => CopulaSpec::Clayton { theta: 0.5 },
    }
}

/// The six ordered family pairs of the two-block comparisons.
pub const FAMILY_PAIRS: [(Family, Family); 6] = [
    (Family::Gaussian, Family::StudentT),
    (Family::Clayton, Family::StudentT),
    (Family::Gaussian, Family::Clayton),
    (Family::Clayton, Family::Gaussian),
    (Family::StudentT, Family::Gaussian),
    (Family::StudentT, Family::Clayton),
];

pub fn two_block(a: CopulaSpec, b: CopulaSpec, len: usize, seed: u64) -> Scenario {
    let name = format!("{}-{}", a.family(), b.family());
    Scenario { name, seed, blocks: vec![Block { spec: a, len }, Block { spec: b, len }] }
}

/// Two blocks of 5000, change at 5001.
pub fn real_time_scenarios(seed: u64) -> Vec<Scenario> {
    FAMILY_PAIRS.iter().map(|&(a, b)| two_block(standard_spec(a), standard_spec(b), 5000, seed)).collect()
}

/// Two blocks of 4500, change at 4501.
pub fn retrospective_scenarios(seed: u64) -> Vec<Scenario> {
    FAMILY_PAIRS.iter().map(|&(a, b)| two_block(standard_spec(a), standard_spec(b), 4500, seed)).collect()
}

/// Nine-thousand-one-hundred-point series alternating Gaussian, Clayton and
/// Student-t regimes. The Clayton blocks cover 851..=2150 and 6181..=8040.
pub fn composite_scenario(seed: u64) -> Scenario {
    let g = CopulaSpec::Gaussian { rho: 0.7 };
    let c = CopulaSpec::Clayton { theta: 2.0 };
    let t = CopulaSpec::StudentT { rho: 0.7, nu: 3.0 };
    let blocks = [(g, 850), (c, 1300), (t, 1850), (g, 2180), (c, 1860), (t, 1060)]
        .into_iter()
        .map(|(spec, len)| Block { spec, len })
        .collect();
    Scenario { name: "composite".into(), seed, blocks }
}

pub fn stationary_scenario(spec: CopulaSpec, len: usize, seed: u64) -> Scenario {
    Scenario { name: format!("stationary-{}", spec.family()), seed, blocks: vec![Block { spec, len }] }
}

/// Family pairs of the delay-versus-parameter sweep.
pub const SWEEP_PAIRS: [(Family, Family); 4] = [
    (Family::Gaussian, Family::StudentT),
    (Family::StudentT, Family::Gaussian),
    (Family::Gaussian, Family::Clayton),
    (Family::Clayton, Family::Gaussian),
];

pub const SWEEP_GRID: [f64; 7] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

/// Both families share `param`: ρ for the elliptical ones, θ for Clayton.
/// Student-t keeps ν = 2.2.
pub fn sweep_spec(family: Family, param: f64) -> CopulaSpec {
    match family {
        Family::Gaussian => CopulaSpec::Gaussian { rho: param },
        Family::StudentT => CopulaSpec::StudentT { rho: param, nu: 2.2 },
        Family::Clayton => CopulaSpec::Clayton { theta: param },
    }
}

// ---------------------------------------------------------------------------
// comparison harness

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    /// `None` on rows of scenarios without change points, where any
    /// detection is a false alarm.
    pub true_cp: Option<usize>,
    pub detected_cp: Option<usize>,
    pub delay: Option<i64>,
    pub new_spec: Option<CopulaSpec>,
    /// Detections not attributed to any true change point in this run.
    pub false_alarms: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub scenario: String,
    pub method: Method,
    pub true_cp: Option<usize>,
    pub runs: usize,
    pub detected: usize,
    pub detection_rate: f64,
    /// Quantiles with misses counted as infinite delay; `None` when the
    /// quantile falls on a miss.
    pub median_delay: Option<f64>,
    pub q25_delay: Option<f64>,
    pub q75_delay: Option<f64>,
    pub mean_false_alarms: f64,
}

/// A detection: 1-based position and the spec of the regime it opens.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    pos: usize,
    spec: CopulaSpec,
}

/// Segment-opening detections. Real-time methods report the position at
/// which the alarm was raised, retrospective ones the segment start.
fn hits(method: Method, rep: &DetectionReport) -> Vec<Hit> {
    let seg_spec = |start: usize, at: usize| {
        rep.segments
            .iter()
            .find(|s| s.start == start)
            .or_else(|| rep.segments.iter().find(|s| s.start <= at && at < s.end))
            .map(|s| s.fit.spec)
    };
    if method.is_real_time() {
        rep.events
            .iter()
            .filter(|e| e.opens_segment)
            .filter_map(|e| seg_spec(e.change_point, e.detected_at).map(|spec| Hit { pos: e.detected_at + 1, spec }))
            .collect()
    } else {
        rep.segments.iter().skip(1).map(|s| Hit { pos: s.start + 1, spec: s.fit.spec }).collect()
    }
}

/// Matches detections to true change points. Real-time detections go to
/// the latest true change at or before them, provided it is the first
/// detection since that change. Retrospective boundaries go to the nearest
/// true change within half the distance to its neighbours. Returns the
/// matched hit per change and the number of unmatched detections.
fn attribute(method: Method, hits: &[Hit], cps: &[usize], t_len: usize) -> (Vec<Option<Hit>>, usize) {
    let mut matched = vec![None; cps.len()];
    let mut used = vec![false; hits.len()];
    for (k, &cp) in cps.iter().enumerate() {
        let next = cps.get(k + 1).copied().unwrap_or(t_len + 1);
        let found = if method.is_real_time() {
            hits.iter().position(|h| h.pos >= cp && h.pos < next)
        } else {
            let prev = if k == 0 { 1 } else { cps[k - 1] };
            let reach = (cp - prev).min(next - cp) / 2;
            hits.iter()
                .enumerate()
                .filter(|(i, h)| !used[*i] && h.pos.abs_diff(cp) <= reach)
                .min_by_key(|(_, h)| h.pos.abs_diff(cp))
                .map(|(i, _)| i)
        };
        if let Some(i) = found {
            used[i] = true;
            matched[k] = Some(hits[i]);
        }
    }
    // later real-time hits inside a matched regime are repeats, not alarms
    let false_alarms = used.iter().filter(|u| !**u).count();
    (matched, false_alarms)
}

fn run_one(scenario: &Scenario, method: Method, seed: u64, cfg: &DetectorConfig) -> Vec<ComparisonRow> {
    let sc = scenario.with_seed(seed);
    let base = ComparisonRow {
        scenario: sc.name.clone(),
        method,
        seed,
        true_cp: None,
        detected_cp: None,
        delay: None,
        new_spec: None,
        false_alarms: 0,
        error: None,
    };
    let cps = sc.change_points();
    let outcome = sc.generate().and_then(|(data, _)| {
        let ps = pseudo_observations(&data)?;
        let cfg = DetectorConfig { seed: derive_seed(seed, 1), ..cfg.clone() };
        detect(method, &ps, &cfg)
    });
    let rep = match outcome {
        Ok(rep) => rep,
        Err(e) => {
            let error = Some(e.to_string());
            if cps.is_empty() {
                return vec![ComparisonRow { error, ..base }];
            }
            return cps
                .iter()
                .map(|&cp| ComparisonRow { true_cp: Some(cp), error: error.clone(), ..base.clone() })
                .collect();
        }
    };
    let hits = hits(method, &rep);
    let (matched, false_alarms) = attribute(method, &hits, &cps, sc.total_len());
    if cps.is_empty() {
        let first = hits.first();
        return vec![ComparisonRow {
            detected_cp: first.map(|h| h.pos),
            new_spec: first.map(|h| h.spec),
            false_alarms,
            ..base
        }];
    }
    cps.iter()
        .zip(matched)
        .map(|(&cp, hit)| ComparisonRow {
            true_cp: Some(cp),
            detected_cp: hit.map(|h| h.pos),
            delay: hit.map(|h| h.pos as i64 - cp as i64),
            new_spec: hit.map(|h| h.spec),
            false_alarms,
            ..base.clone()
        })
        .collect()
}

/// Seeds `derive_seed(base, i)` for `i < n`; the scenario's own seed is the
/// single-seed mode.
pub fn replicate_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(base, i)).collect()
}

/// Runs every method on every scenario for each seed. Rows are ordered by
/// (scenario, method, seed, true change point) regardless of scheduling.
pub fn run_comparison(
    scenarios: &[Scenario],
    methods: &[Method],
    seeds: &[u64],
    cfg: &DetectorConfig,
) -> Result<Vec<ComparisonRow>> {
    if scenarios.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(Error::Parameter("comparison needs scenarios, methods and seeds".into()));
    }
    for s in scenarios {
        s.validate()?;
    }
    cfg.validate()?;
    let jobs: Vec<(&Scenario, Method, u64)> = scenarios
        .iter()
        .flat_map(|s| methods.iter().flat_map(move |&m| seeds.iter().map(move |&seed| (s, m, seed))))
        .collect();
    let rows: Vec<Vec<ComparisonRow>> = jobs.par_iter().map(|&(s, m, seed)| run_one(s, m, seed, cfg)).collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Type-7 quantile of delays with misses as `+∞`.
fn delay_quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let v = if frac == 0.0 { sorted[lo] } else { sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]) };
    v.is_finite().then_some(v)
}

/// Aggregates rows per (scenario, method, true change point), keeping
/// first-appearance order.
pub fn summarize(rows: &[ComparisonRow]) -> Vec<DelaySummary> {
    let mut keys: Vec<(String, Method, Option<usize>)> = Vec::new();
    for r in rows {
        let k = (r.scenario.clone(), r.method, r.true_cp);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(scenario, method, true_cp)| {
            let group: Vec<&ComparisonRow> =
                rows.iter().filter(|r| r.scenario == scenario && r.method == method && r.true_cp == true_cp).collect();
            let detected = group.iter().filter(|r| r.detected_cp.is_some()).count();
            let mut delays: Vec<f64> = group.iter().map(|r| r.delay.map_or(f64::INFINITY, |d| d as f64)).collect();
            delays.sort_by(f64::total_cmp);
            let runs = group.len();
            DelaySummary {
                scenario,
                method,
                true_cp,
                runs,
                detected,
                detection_rate: detected as f64 / runs as f64,
                median_delay: if true_cp.is_some() { delay_quantile(&delays, 0.5) } else { None },
                q25_delay: if true_cp.is_some() { delay_quantile(&delays, 0.25) } else { None },
                q75_delay: if true_cp.is_some() { delay_quantile(&delays, 0.75) } else { None },
                mean_false_alarms: group.iter().map(|r| r.false_alarms as f64).sum::<f64>() / runs as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pair: String,
    pub param: f64,
    pub method: Method,
    pub runs: usize,
    pub detection_rate: f64,
    pub median_delay: Option<f64>,
    pub q25_delay: Option<f64>,
    pub q75_delay: Option<f64>,
}

/// Delay against the shared dependence parameter for each family pair.
pub fn parameter_sweep(
    pairs: &[(Family, Family)],
    grid: &[f64],
    methods: &[Method],
    seeds: &[u64],
    block_len: usize,
    cfg: &DetectorConfig,
) -> Result<Vec<SweepRow>> {
    let mut scenarios = Vec::new();
    let mut labels = Vec::new();
    for &(a, b) in pairs {
        for &p in grid {
            let s = two_block(sweep_spec(a, p), sweep_spec(b, p), block_len, 0);
            let pair = s.name.clone();
            scenarios.push(Scenario { name: format!("{pair}@{p}"), ..s });
            labels.push((pair, p));
        }
    }
    let rows = run_comparison(&scenarios, methods, seeds, cfg)?;
    let summaries = summarize(&rows);
    Ok(summaries
        .into_iter()
        .map(|s| {
            let idx = scenarios.iter().position(|sc| sc.name == s.scenario).expect("summary of known scenario");
            SweepRow {
                pair: labels[idx].0.clone(),
                param: labels[idx].1,
                method: s.method,
                runs: s.runs,
                detection_rate: s.detection_rate,
                median_delay: s.median_delay,
                q25_delay: s.q25_delay,
                q75_delay: s.q75_delay,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// CSV output

/// First line of every CSV written here; readers skip `#` lines.
pub fn schema_line(kind: &str) -> String {
    format!("# dyncop {kind} v{SCHEMA_VERSION}\n")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

fn spec_columns(spec: Option<CopulaSpec>) -> [String; 2] {
    match spec {
        None => ["NA".into(), "NA".into()],
        Some(s) => {
            let p: Vec<String> = s.params().iter().map(|v| format!("{v:.6}")).collect();
            [s.family().to_string(), p.join(";")]
        }
    }
}

pub fn write_rows_csv<W: Write>(mut w: W, rows: &[ComparisonRow]) -> Result<()> {
    w.write_all(schema_line("comparison").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "scenario",
        "method",
        "seed",
        "true_cp",
        "detected_cp",
        "delay",
        "new_family",
        "new_params",
        "false_alarms",
        "error",
    ])?;
    for r in rows {
        let [fam, params] = spec_columns(r.new_spec);
        out.write_record([
            r.scenario.clone(),
            r.method.short_name().into(),
            r.seed.to_string(),
            opt(r.true_cp),
            opt(r.detected_cp),
            opt(r.delay),
            fam,
            params,
            r.false_alarms.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.1}")).unwrap_or_else(|| "NA".into())
}

pub fn write_summary_csv<W: Write>(mut w: W, summaries: &[DelaySummary]) -> Result<()> {
    w.write_all(schema_line("summary").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "scenario",
        "method",
        "true_cp",
        "runs",
        "detected",
        "detection_rate",
        "median_delay",
        "q25_delay",
        "q75_delay",
        "mean_false_alarms",
    ])?;
    for s in summaries {
        out.write_record([
            s.scenario.clone(),
            s.method.short_name().into(),
            opt(s.true_cp),
            s.runs.to_string(),
            s.detected.to_string(),
            format!("{:.4}", s.detection_rate),
            opt_f(s.median_delay),
            opt_f(s.q25_delay),
            opt_f(s.q75_delay),
            format!("{:.4}", s.mean_false_alarms),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    w.write_all(schema_line("sweep").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["pair", "param", "method", "runs", "detection_rate", "median_delay", "q25_delay", "q75_delay"])?;
    for r in rows {
        out.write_record([
            r.pair.clone(),
            format!("{:.2}", r.param),
            r.method.short_name().into(),
            r.runs.to_string(),
            format!("{:.4}", r.detection_rate),
            opt_f(r.median_delay),
            opt_f(r.q25_delay),
            opt_f(r.q75_delay),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::kendall_tau;

    #[test]
    fn two_blocks_change_at_5001() {
        let s = &real_time_scenarios(626)[0];
        assert_eq!(s.change_points(), vec![5001]);
        assert_eq!(s.total_len(), 10_000);
        assert_eq!(s.spec_at(5000), Some(standard_spec(Family::Gaussian)));
        assert_eq!(s.spec_at(5001), Some(standard_spec(Family::StudentT)));
        let one = stationary_scenario(CopulaSpec::Clayton { theta: 1.0 }, 300, 1);
        assert!(one.change_points().is_empty());
        assert_eq!(composite_scenario(0).change_points(), vec![851, 2151, 4001, 6181, 8041]);
        assert_eq!(composite_scenario(0).total_len(), 9100);
    }

    #[test]
    fn block_kendall_tau_matches_closed_form() {
        let s = composite_scenario(3);
        let (data, _) = s.generate().unwrap();
        let mut start = 0;
        for b in &s.blocks {
            let tau = kendall_tau(&data[start..start + b.len]);
            assert!((tau - b.spec.kendall_tau()).abs() < 0.05, "{:?}: {tau}", b.spec);
            start += b.len;
        }
    }

    #[test]
    fn text_round_trip_and_errors() {
        let s = composite_scenario(17);
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
        let text = "name = x # comment\nseed = 4\n[block]\nfamily = t\nparams = 0.3, 4\nlength = 10\n";
        let p = Scenario::parse(text).unwrap();
        assert_eq!(p.blocks[0].spec, CopulaSpec::StudentT { rho: 0.3, nu: 4.0 });
        assert!(matches!(
            Scenario::parse("[block]\nfamily = gaussian\nlength = 5\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(Scenario::parse("seed = x\n"), Err(Error::Parse { line: 1, .. })));
        let unseeded = "[block]\nfamily = clayton\nparams = 1\nlength = 5\n";
        assert_eq!(Scenario::parse_with_default_seed(unseeded, 8).unwrap().seed, 8);
        assert_eq!(Scenario::parse_with_default_seed(&format!("seed = 2\n{unseeded}"), 8).unwrap().seed, 2);
        assert!(Scenario::parse("[block]\nfamily = clayton\nparams = -1\nlength = 5\n").is_err());
        assert!(Scenario::parse("name = empty\n").is_err());
    }

    fn hit(pos: usize) -> Hit {
        Hit { pos, spec: CopulaSpec::Gaussian { rho: 0.1 } }
    }

    #[test]
    fn attribution_rules() {
        let cps = [1001, 2001];
        // real-time: first hit at or after each change, earlier hits are alarms
        let (m, fa) = attribute(Method::MovingWindow, &[hit(500), hit(1300), hit(1400), hit(2050)], &cps, 3000);
        assert_eq!(m.iter().map(|h| h.map(|h| h.pos)).collect::<Vec<_>>(), vec![Some(1300), Some(2050)]);
        assert_eq!(fa, 2);
        // retrospective: nearest within half the gap, either side
        let (m, fa) = attribute(Method::BottomUp, &[hit(950), hit(1600), hit(2010)], &cps, 3000);
        assert_eq!(m.iter().map(|h| h.map(|h| h.pos)).collect::<Vec<_>>(), vec![Some(950), Some(2010)]);
        assert_eq!(fa, 1);
    }

    #[test]
    fn misses_count_as_infinite_delay() {
        let v = [10.0, 20.0, f64::INFINITY];
        assert_eq!(delay_quantile(&v, 0.5), Some(20.0));
        assert_eq!(delay_quantile(&v, 0.75), None);
        assert_eq!(delay_quantile(&[10.0, f64::INFINITY], 0.5), None);
    }

    #[test]
    fn comparison_is_reproducible_and_ordered() {
        let sc = vec![
            two_block(CopulaSpec::Clayton { theta: 3.0 }, CopulaSpec::Gaussian { rho: -0.6 }, 600, 0),
            stationary_scenario(CopulaSpec::Gaussian { rho: 0.4 }, 800, 0),
        ];
        let methods = [Method::MovingWindow, Method::BottomUp];
        let seeds = replicate_seeds(9, 2);
        let cfg = DetectorConfig {
            n_window: 200,
            step: 50,
            n_min: 100,
            max_window: 200,
            growth: 25,
            bu_min: 100,
            ..Default::default()
        };
        let a = run_comparison(&sc, &methods, &seeds, &cfg).unwrap();
        let b = run_comparison(&sc, &methods, &seeds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|r| r.error.is_none()));
        for r in &a {
            if r.method.is_real_time() {
                assert!(r.delay.is_none_or(|d| d >= 0));
            }
        }
        let strong: Vec<_> = a.iter().filter(|r| r.true_cp == Some(601)).collect();
        assert!(strong.iter().all(|r| r.detected_cp.is_some()), "{strong:?}");
        let summary = summarize(&a);
        assert_eq!(summary.len(), 4);
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# dyncop comparison v1\nscenario,method,seed,true_cp"));
        assert_eq!(text.lines().count(), 2 + a.len());
    }

    #[test]
    fn failed_runs_become_rows_with_errors() {
        let sc = [stationary_scenario(CopulaSpec::Gaussian { rho: 0.4 }, 100, 0)];
        let rows = run_comparison(&sc, &[Method::MovingWindow], &[1], &DetectorConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_some() && rows[0].detected_cp.is_none());
    }
}
