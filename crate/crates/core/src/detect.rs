//! Change-point detection for piecewise copula models.
//!
//! Two retrospective detectors (binary segmentation, bottom-up merging) and
//! two real-time detectors (moving window, accelerated moving window). All
//! of them refit on re-ranked windows, so every tested sample is rank-based
//! on its own data.
//!
//! Indices are 0-based and ranges half-open. For the real-time detectors a
//! crossing on window `[s, e)` is reported with `detected_at = e - 1` and
//! `change_point = e - K`, the start of the retained data.

use crate::copula::{clamp_u, Evaluator, Family};
use crate::error::{Error, Result};
use crate::fit::{fit_copula_with, select_family, FitOptions, FitResult, MIN_FIT_LEN};
use crate::gof::{info_matrix_test, GofConfig, GofResult, DEFAULT_MC_DRAWS};
use crate::pseudo::{pseudo_observations, PseudoSample};
use crate::stats::{chi2_quantile, derive_seed};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Moving-window width N.
    pub n_window: usize,
    /// Roll step K, also the number of points kept after a crossing.
    pub step: usize,
    /// Initial accelerated window N_min.
    pub n_min: usize,
    /// Growth increment D.
    pub growth: usize,
    /// Maximum accelerated window L.
    pub max_window: usize,
    pub alpha_w: f64,
    pub alpha_c: f64,
    /// Initial bottom-up block size N*_min.
    pub bu_min: usize,
    /// Smallest block size the bottom-up shrink may reach.
    pub bu_floor: usize,
    pub bu_shrink: f64,
    /// Move each merged bottom-up boundary to the likelihood-best split nearby.
    pub bu_refine: bool,
    pub bu_merge_order: MergeOrder,
    /// Smallest leaf binary segmentation may produce.
    pub bs_min_leaf: usize,
    pub families: Vec<Family>,
    pub seed: u64,
    pub mc_draws: usize,
    /// Test Student-t fits with ν at a bound as if ν were fixed (1 dof).
    pub fixed_nu_at_bound: bool,
    /// Re-select the family by AIC after a WLL crossing. When off, the
    /// restarted window is refitted within the current family.
    pub aic_after_warning: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            n_window: 500,
            step: 120,
            n_min: 200,
            growth: 50,
            max_window: 500,
            alpha_w: 0.85,
            alpha_c: 0.95,
            bu_min: 100,
            bu_floor: 27,
            bu_shrink: 0.8,
            bu_refine: true,
            bu_merge_order: MergeOrder::LeftToRight,
            bs_min_leaf: 60,
            families: Family::ALL.to_vec(),
            seed: 0,
            mc_draws: DEFAULT_MC_DRAWS,
            fixed_nu_at_bound: false,
            aic_after_warning: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.step == 0 || self.step > self.n_window {
            return bad("step K must satisfy 0 < K <= N");
        }
        if self.n_min > self.max_window || self.step > self.n_min {
            return bad("window sizes must satisfy K <= N_min <= L");
        }
        if self.growth == 0 {
            return bad("growth D must be positive");
        }
        if !(0.0 < self.alpha_w && self.alpha_w < self.alpha_c && self.alpha_c < 1.0) {
            return bad("confidence levels must satisfy 0 < alpha_w < alpha_c < 1");
        }
        if self.n_min < MIN_FIT_LEN || self.bu_floor < MIN_FIT_LEN {
            return bad("windows and blocks must hold at least 20 points");
        }
        if self.bu_floor > self.bu_min || !(0.0 < self.bu_shrink && self.bu_shrink < 1.0) {
            return bad("bottom-up block sizes must satisfy floor <= N*_min and 0 < shrink < 1");
        }
        if self.bs_min_leaf < MIN_FIT_LEN {
            return bad("binary segmentation leaves must hold at least 20 points");
        }
        if self.families.is_empty() {
            return bad("family set is empty");
        }
        Ok(())
    }

    fn threshold(&self, dof: usize, alpha: f64) -> f64 {
        chi2_quantile(dof, alpha).expect("validated confidence level")
    }
}

/// Pairing rule inside one bottom-up merge layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeOrder {
    /// Scan left to right, merging each admissible non-overlapping pair.
    LeftToRight,
    /// Score all admissible pairs by pooled p-value and merge the best first.
    BestFirst,
}

impl FromStr for MergeOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "left-to-right" | "ltr" => Ok(MergeOrder::LeftToRight),
            "best-first" => Ok(MergeOrder::BestFirst),
            other => Err(Error::Parameter(format!("unknown merge order '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BinarySegmentation,
    MovingWindow,
    AcceleratedMovingWindow,
    BottomUp,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::BinarySegmentation, Method::MovingWindow, Method::AcceleratedMovingWindow, Method::BottomUp];

    pub fn short_name(self) -> &'static str {
        match self {
            Method::BinarySegmentation => "bs",
            Method::MovingWindow => "mw",
            Method::AcceleratedMovingWindow => "amw",
            Method::BottomUp => "bottom-up",
        }
    }

    pub fn is_real_time(self) -> bool {
        matches!(self, Method::MovingWindow | Method::AcceleratedMovingWindow)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "bs" | "binary" | "binary-segmentation" => Ok(Method::BinarySegmentation),
            "mw" | "moving-window" => Ok(Method::MovingWindow),
            "amw" | "accelerated-moving-window" => Ok(Method::AcceleratedMovingWindow),
            "bu" | "bottom-up" | "bottomup" => Ok(Method::BottomUp),
            other => Err(Error::Parameter(format!("unknown detection method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub fit: FitResult,
    /// Test of the window the fit was made on, when one was run.
    pub gof: Option<GofResult>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn family(&self) -> Family {
        self.fit.spec.family()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limit {
    Wll,
    Cll,
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Limit::Wll => "WLL",
            Limit::Cll => "CLL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub detected_at: usize,
    pub change_point: usize,
    pub crossed: Limit,
    pub statistic: f64,
    pub threshold: f64,
    pub window_start: usize,
    /// Whether the event starts a new segment. CLL crossings always do; a
    /// WLL crossing does once the refit at the restarted window switches
    /// family, reported as a second event when that window is complete.
    pub opens_segment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub segments: Vec<Segment>,
    pub events: Vec<DetectionEvent>,
    /// Non-fatal failures, e.g. a window whose fit or test could not be computed.
    pub diagnostics: Vec<String>,
}

impl DetectionReport {
    /// Interior segment boundaries.
    pub fn change_points(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    pub fn check_partition(&self, t_len: usize) -> Result<()> {
        let mut pos = 0;
        for s in &self.segments {
            if s.start != pos || s.end <= s.start {
                return Err(Error::Degenerate(format!("segments do not partition [0, {t_len})")));
            }
            pos = s.end;
        }
        if pos != t_len {
            return Err(Error::Degenerate(format!("segments do not partition [0, {t_len})")));
        }
        Ok(())
    }
}

/// How a segment differs from its predecessor.
pub fn change_type(prev: Option<&Segment>, seg: &Segment) -> &'static str {
    match prev {
        None => "initial",
        Some(p) if p.family() != seg.family() => "family",
        Some(_) => "parameter",
    }
}

pub fn detect(method: Method, ps: &PseudoSample, cfg: &DetectorConfig) -> Result<DetectionReport> {
    match method {
        Method::BinarySegmentation => binary_segmentation(ps, cfg),
        Method::MovingWindow => moving_window(ps, cfg),
        Method::AcceleratedMovingWindow => accelerated_moving_window(ps, cfg),
        Method::BottomUp => bottom_up(ps, cfg),
    }
}

fn window_seed(cfg: &DetectorConfig, start: usize, end: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, start as u64), end as u64)
}

fn gof_config(cfg: &DetectorConfig, fit: &FitResult, start: usize, end: usize) -> GofConfig {
    GofConfig {
        mc_draws: cfg.mc_draws,
        seed: window_seed(cfg, start, end),
        fixed_nu: cfg.fixed_nu_at_bound && fit.boundary_hit && fit.spec.family() == Family::StudentT,
    }
}

/// AIC selection plus test on an already ranked sample.
fn select_and_test(
    ps: &PseudoSample,
    cfg: &DetectorConfig,
    start: usize,
    end: usize,
) -> Result<(FitResult, GofResult)> {
    let fit = select_family(ps, &cfg.families)?;
    let gof = info_matrix_test(ps, &fit.spec, &gof_config(cfg, &fit, start, end))?;
    Ok((fit, gof))
}

/// Within-family refit plus test.
fn refit_and_test(
    ps: &PseudoSample,
    cfg: &DetectorConfig,
    current: &FitResult,
    start: usize,
    end: usize,
) -> Result<(FitResult, GofResult)> {
    let opts = FitOptions { warm_start: Some(current.spec) };
    let fit = fit_copula_with(ps, current.spec.family(), &opts)?;
    let gof = info_matrix_test(ps, &fit.spec, &gof_config(cfg, &fit, start, end))?;
    Ok((fit, gof))
}

// ---------------------------------------------------------------------------
// real-time detectors

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnlineKind {
    MovingWindow,
    Accelerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Calm,
    Alert,
}

#[derive(Debug, Clone)]
struct Regime {
    start: usize,
    fit: FitResult,
    gof: Option<GofResult>,
}

/// Incremental moving-window detector: feed data in batches, collect events.
#[derive(Debug, Clone)]
pub struct OnlineDetector {
    kind: OnlineKind,
    cfg: DetectorConfig,
    data: Vec<[f64; 2]>,
    start: usize,
    end: usize,
    phase: Phase,
    current: Option<FitResult>,
    /// A regime begins here and still needs its AIC fit.
    pending: Option<usize>,
    /// WLL crossing whose restarted window still needs its refit.
    warned: Option<DetectionEvent>,
    regimes: Vec<Regime>,
    events: Vec<DetectionEvent>,
    diagnostics: Vec<String>,
}

impl OnlineDetector {
    pub fn new(kind: OnlineKind, cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let first = match kind {
            OnlineKind::MovingWindow => cfg.n_window,
            OnlineKind::Accelerated => cfg.n_min,
        };
        Ok(OnlineDetector {
            kind,
            cfg,
            data: Vec::new(),
            start: 0,
            end: first,
            phase: Phase::Calm,
            current: None,
            pending: Some(0),
            warned: None,
            regimes: Vec::new(),
            events: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    /// Number of points received so far.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn events(&self) -> &[DetectionEvent] {
        &self.events
    }

    /// Appends raw observations and runs every window that is now complete.
    /// Returns the events raised by this batch.
    pub fn push_batch(&mut self, batch: &[[f64; 2]]) -> Result<Vec<DetectionEvent>> {
        if let Some(i) = batch.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite(self.data.len() + i));
        }
        let before = self.events.len();
        self.data.extend_from_slice(batch);
        while self.end <= self.data.len() {
            self.step_window();
        }
        Ok(self.events[before..].to_vec())
    }

    fn restart_len(&self) -> usize {
        match self.kind {
            OnlineKind::MovingWindow => self.cfg.n_window,
            OnlineKind::Accelerated => self.cfg.n_min,
        }
    }

    fn step_window(&mut self) {
        let (s, e) = (self.start, self.end);
        let ps = match pseudo_observations(&self.data[s..e]) {
            Ok(ps) => ps,
            Err(err) => {
                self.diagnostics.push(format!("window [{s}, {e}): {err}"));
                self.advance();
                return;
            }
        };
        let reselect = self.warned.is_some() && self.cfg.aic_after_warning;
        let tested = match (self.pending, &self.current) {
            (Some(_), _) | (None, None) => select_and_test(&ps, &self.cfg, s, e),
            (None, Some(_)) if reselect => select_and_test(&ps, &self.cfg, s, e),
            (None, Some(cur)) => refit_and_test(&ps, &self.cfg, cur, s, e),
        };
        let (fit, gof) = match tested {
            Ok(pair) => pair,
            Err(err) => {
                self.diagnostics.push(format!("window [{s}, {e}): {err}"));
                self.advance();
                return;
            }
        };
        if let Some(rs) = self.pending.take() {
            self.regimes.push(Regime { start: rs, fit: fit.clone(), gof: Some(gof.clone()) });
        }
        if let Some(warn) = self.warned.take() {
            let switched = self.current.as_ref().is_some_and(|c| c.spec.family() != fit.spec.family());
            if switched {
                self.regimes.push(Regime { start: warn.change_point, fit: fit.clone(), gof: Some(gof.clone()) });
                self.events.push(DetectionEvent { detected_at: e - 1, opens_segment: true, ..warn });
            }
        }
        self.current = Some(fit);

        let alpha = match (self.kind, self.phase) {
            (OnlineKind::Accelerated, Phase::Calm) => self.cfg.alpha_w,
            _ => self.cfg.alpha_c,
        };
        let threshold = self.cfg.threshold(gof.dof, alpha);
        if gof.statistic <= threshold {
            self.advance();
            return;
        }
        let k = self.cfg.step;
        let cp = e - k;
        let crossed = if alpha == self.cfg.alpha_c { Limit::Cll } else { Limit::Wll };
        let event = DetectionEvent {
            detected_at: e - 1,
            change_point: cp,
            crossed,
            statistic: gof.statistic,
            threshold,
            window_start: s,
            opens_segment: crossed == Limit::Cll,
        };
        self.events.push(event.clone());
        match crossed {
            Limit::Wll => {
                self.phase = Phase::Alert;
                self.warned = Some(event);
            }
            Limit::Cll => {
                self.phase = Phase::Calm;
                self.pending = Some(cp);
            }
        }
        self.start = cp;
        self.end = cp + self.restart_len();
    }

    fn advance(&mut self) {
        let width = self.end - self.start;
        match self.kind {
            OnlineKind::Accelerated if width < self.cfg.max_window => {
                self.end = (self.end + self.cfg.growth).min(self.start + self.cfg.max_window);
            }
            _ => {
                self.start += self.cfg.step;
                self.end += self.cfg.step;
            }
        }
    }

    /// Closes the stream and assembles the piecewise model over all data seen.
    pub fn finish(mut self) -> Result<DetectionReport> {
        let t_len = self.data.len();
        if let Some(rs) = self.pending.take() {
            let tail = &self.data[rs..];
            let fitted = pseudo_observations(tail).and_then(|ps| select_and_test(&ps, &self.cfg, rs, t_len));
            match (fitted, self.regimes.last()) {
                (Ok((fit, gof)), _) => self.regimes.push(Regime { start: rs, fit, gof: Some(gof) }),
                (Err(err), Some(_)) => {
                    self.diagnostics.push(format!(
                        "tail [{rs}, {t_len}) could not be fitted ({err}); merged into previous segment"
                    ));
                }
                (Err(_), None) => {
                    let needed = self.restart_len();
                    return Err(Error::InsufficientData { needed, got: t_len });
                }
            }
        }
        let mut segments = Vec::with_capacity(self.regimes.len());
        for (i, r) in self.regimes.iter().enumerate() {
            let end = self.regimes.get(i + 1).map_or(t_len, |n| n.start);
            segments.push(Segment { start: r.start, end, fit: r.fit.clone(), gof: r.gof.clone() });
        }
        let report = DetectionReport { segments, events: self.events, diagnostics: self.diagnostics };
        report.check_partition(t_len)?;
        Ok(report)
    }
}

fn run_online(kind: OnlineKind, ps: &PseudoSample, cfg: &DetectorConfig) -> Result<DetectionReport> {
    let first = match kind {
        OnlineKind::MovingWindow => cfg.n_window,
        OnlineKind::Accelerated => cfg.n_min,
    };
    if ps.t_len() < first {
        return Err(Error::InsufficientData { needed: first, got: ps.t_len() });
    }
    let mut det = OnlineDetector::new(kind, cfg.clone())?;
    det.push_batch(ps.points())?;
    det.finish()
}

pub fn moving_window(ps: &PseudoSample, cfg: &DetectorConfig) -> Result<DetectionReport> {
    run_online(OnlineKind::MovingWindow, ps, cfg)
}

pub fn accelerated_moving_window(ps: &PseudoSample, cfg: &DetectorConfig) -> Result<DetectionReport> {
    run_online(OnlineKind::Accelerated, ps, cfg)
}

// ---------------------------------------------------------------------------
// retrospective detectors

type Tested = Result<(FitResult, GofResult)>;

/// Memoised AIC fits and tests on re-ranked ranges of one sample.
struct RangeTester<'a> {
    ps: &'a PseudoSample,
    cfg: &'a DetectorConfig,
    fits: HashMap<(usize, usize), Result<FitResult>>,
    tests: HashMap<(usize, usize), Result<GofResult>>,
}

impl<'a> RangeTester<'a> {
    fn new(ps: &'a PseudoSample, cfg: &'a DetectorConfig) -> Self {
        RangeTester { ps, cfg, fits: HashMap::new(), tests: HashMap::new() }
    }

    fn fit(&mut self, start: usize, end: usize) -> Result<FitResult> {
        let (ps, cfg) = (self.ps, self.cfg);
        self.fits
            .entry((start, end))
            .or_insert_with(|| ps.rerank(start, end).and_then(|sub| select_family(&sub, &cfg.families)))
            .clone()
    }

    fn test(&mut self, start: usize, end: usize) -> Tested {
        let fit = self.fit(start, end)?;
        let (ps, cfg) = (self.ps, self.cfg);
        let gof = self
            .tests
            .entry((start, end))
            .or_insert_with(|| {
                ps.rerank(start, end)
                    .and_then(|sub| info_matrix_test(&sub, &fit.spec, &gof_config(cfg, &fit, start, end)))
            })
            .clone()?;
        Ok((fit, gof))
    }

    fn rejects(&self, gof: &GofResult) -> bool {
        gof.statistic > self.cfg.threshold(gof.dof, self.cfg.alpha_c)
    }
}

pub fn binary_segmentation(ps: &PseudoSample, cfg: &DetectorConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let t_len = ps.t_len();
    if t_len < 2 * cfg.bs_min_leaf {
        return Err(Error::InsufficientData { needed: 2 * cfg.bs_min_leaf, got: t_len });
    }
    let mut tester = RangeTester::new(ps, cfg);
    let mut diagnostics = Vec::new();
    let (fit, gof) = tester.test(0, t_len)?;
    let mut leaves = Vec::new();
    split(&mut tester, Segment { start: 0, end: t_len, fit, gof: Some(gof) }, &mut leaves, &mut diagnostics);

    // merge neighbours whose pooled refit keeps the family and passes the test
    loop {
        let mut merged = None;
        for i in 0..leaves.len().saturating_sub(1) {
            let (a, b) = (&leaves[i], &leaves[i + 1]);
            if a.family() != b.family() {
                continue;
            }
            if let Ok((fit, gof)) = tester.test(a.start, b.end) {
                if fit.spec.family() == a.family() && !tester.rejects(&gof) {
                    merged = Some((i, Segment { start: a.start, end: b.end, fit, gof: Some(gof) }));
                    break;
                }
            }
        }
        match merged {
            Some((i, seg)) => {
                leaves.splice(i..i + 2, [seg]);
            }
            None => break,
        }
    }
    let report = DetectionReport { segments: leaves, events: Vec::new(), diagnostics };
    report.check_partition(t_len)?;
    Ok(report)
}

fn split(tester: &mut RangeTester, seg: Segment, leaves: &mut Vec<Segment>, diag: &mut Vec<String>) {
    let rejected = seg.gof.as_ref().is_some_and(|g| tester.rejects(g));
    let half = seg.len() / 2;
    if !rejected || half < tester.cfg.bs_min_leaf {
        leaves.push(seg);
        return;
    }
    let mid = seg.start + half;
    let left = tester.test(seg.start, mid);
    let right = tester.test(mid, seg.end);
    match (left, right) {
        (Ok((lf, lg)), Ok((rf, rg))) => {
            split(tester, Segment { start: seg.start, end: mid, fit: lf, gof: Some(lg) }, leaves, diag);
            split(tester, Segment { start: mid, end: seg.end, fit: rf, gof: Some(rg) }, leaves, diag);
        }
        (l, r) => {
            let err = l.err().or(r.err()).expect("one side failed");
            diag.push(format!("split of [{}, {}) abandoned: {err}", seg.start, seg.end));
            leaves.push(seg);
        }
    }
}

/// Largest rejection count consistent with a correctly sized test at the
/// 95% level over `blocks` independent blocks.
fn allowed_rejections(blocks: usize, alpha_c: f64) -> u64 {
    let b = Binomial::new(1.0 - alpha_c, blocks as u64).expect("valid binomial");
    b.inverse_cdf(0.95)
}

fn block_bounds(t_len: usize, size: usize) -> Vec<(usize, usize)> {
    let count = (t_len / size).max(1);
    (0..count).map(|i| (i * size, if i + 1 == count { t_len } else { (i + 1) * size })).collect()
}

pub fn bottom_up(ps: &PseudoSample, cfg: &DetectorConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let t_len = ps.t_len();
    if t_len < 2 * cfg.bu_min {
        return Err(Error::InsufficientData { needed: 2 * cfg.bu_min, got: t_len });
    }
    let mut tester = RangeTester::new(ps, cfg);
    let mut diagnostics = Vec::new();

    let mut size = cfg.bu_min;
    let mut blocks: Vec<(usize, usize, Tested)>;
    loop {
        blocks = block_bounds(t_len, size).into_iter().map(|(a, b)| (a, b, tester.test(a, b))).collect();
        let rejected = blocks.iter().filter(|(_, _, r)| matches!(r, Ok((_, g)) if tester.rejects(g))).count() as u64;
        let next = ((size as f64 * cfg.bu_shrink).round() as usize).max(cfg.bu_floor);
        if rejected <= allowed_rejections(blocks.len(), cfg.alpha_c) || next == size {
            break;
        }
        diagnostics.push(format!("{rejected} of {} blocks of {size} rejected; shrinking to {next}", blocks.len()));
        size = next;
    }

    // blocks whose fit failed are folded into their left neighbour (or the right one at the start)
    let mut segs: Vec<Segment> = Vec::new();
    let mut orphan_start: Option<usize> = None;
    for (a, b, res) in blocks {
        match res {
            Ok((fit, gof)) => {
                let start = orphan_start.take().unwrap_or(a);
                segs.push(Segment { start, end: b, fit, gof: Some(gof) });
            }
            Err(err) => {
                diagnostics.push(format!("block [{a}, {b}) unfitted: {err}"));
                match segs.last_mut() {
                    Some(last) => last.end = b,
                    None => orphan_start = Some(orphan_start.unwrap_or(a)),
                }
            }
        }
    }
    if segs.is_empty() {
        return Err(Error::AllFitsFailed);
    }
    if let Some(s) = orphan_start {
        segs.last_mut().expect("non-empty").end = t_len.max(s);
    }

    let short = 2 * size;
    loop {
        let before = segs.len();
        segs = match cfg.bu_merge_order {
            MergeOrder::LeftToRight => merge_layer_ltr(&mut tester, segs, short),
            MergeOrder::BestFirst => merge_layer_best_first(&mut tester, segs, short),
        };
        if segs.len() == before {
            break;
        }
    }
    if cfg.bu_refine {
        refine_boundaries(ps, cfg, &mut segs, &mut diagnostics);
    }
    let report = DetectionReport { segments: segs, events: Vec::new(), diagnostics };
    report.check_partition(t_len)?;
    Ok(report)
}

fn merge_layer_ltr(tester: &mut RangeTester, segs: Vec<Segment>, short: usize) -> Vec<Segment> {
    let mut next = Vec::with_capacity(segs.len());
    let mut i = 0;
    while i < segs.len() {
        if i + 1 < segs.len() {
            if let Some(m) = try_merge(tester, &segs[i], &segs[i + 1], short) {
                next.push(m);
                i += 2;
                continue;
            }
        }
        next.push(segs[i].clone());
        i += 1;
    }
    next
}

/// Tail-greedy layer: every admissible neighbour pair is scored by its
/// pooled p-value and disjoint pairs are merged best first.
fn merge_layer_best_first(tester: &mut RangeTester, segs: Vec<Segment>, short: usize) -> Vec<Segment> {
    let mut cands: Vec<(usize, Segment)> = (0..segs.len().saturating_sub(1))
        .filter_map(|i| try_merge(tester, &segs[i], &segs[i + 1], short).map(|m| (i, m)))
        .collect();
    cands.sort_by(|a, b| pvalue(&b.1).total_cmp(&pvalue(&a.1)).then(a.0.cmp(&b.0)));
    let mut taken = vec![false; segs.len()];
    let mut merged: Vec<Option<Segment>> = vec![None; segs.len()];
    for (i, m) in cands {
        if !taken[i] && !taken[i + 1] {
            taken[i] = true;
            taken[i + 1] = true;
            merged[i] = Some(m);
        }
    }
    let mut next = Vec::with_capacity(segs.len());
    let mut i = 0;
    while i < segs.len() {
        match merged[i].take() {
            Some(m) => {
                next.push(m);
                i += 2;
            }
            None => {
                next.push(segs[i].clone());
                i += 1;
            }
        }
    }
    next
}

/// Shifts every interior boundary to the split maximising the two-segment
/// log-likelihood under the neighbours' fits, searching at most half of each
/// neighbour. Both neighbours are then refitted within their families.
fn refine_boundaries(ps: &PseudoSample, cfg: &DetectorConfig, segs: &mut [Segment], diag: &mut Vec<String>) {
    for i in 1..segs.len() {
        let (a, b) = (&segs[i - 1], &segs[i]);
        let cut = b.start;
        let lo = cut - (a.len() / 2).min(a.len().saturating_sub(cfg.bu_floor));
        let hi = cut + (b.len() / 2).min(b.len().saturating_sub(cfg.bu_floor));
        let (Ok(ea), Ok(eb)) = (Evaluator::new(&a.fit.spec), Evaluator::new(&b.fit.spec)) else {
            continue;
        };
        // gain(k) = Σ_{lo<=t<k} ln c_a - ln c_b, up to a constant in k
        let (mut gain, mut best, mut best_gain) = (0.0, cut, f64::NEG_INFINITY);
        for k in lo..=hi {
            if gain > best_gain || (gain == best_gain && k.abs_diff(cut) < best.abs_diff(cut)) {
                best = k;
                best_gain = gain;
            }
            if k < hi {
                let u = clamp_u(ps.points()[k]);
                gain += ea.log_density(u) - eb.log_density(u);
            }
        }
        if best == cut {
            continue;
        }
        let refit = |start: usize, end: usize, like: &Segment| -> Result<Segment> {
            let sub = ps.rerank(start, end)?;
            let (fit, gof) = refit_and_test(&sub, cfg, &like.fit, start, end)?;
            Ok(Segment { start, end, fit, gof: Some(gof) })
        };
        match (refit(a.start, best, a), refit(best, b.end, b)) {
            (Ok(na), Ok(nb)) => {
                segs[i - 1] = na;
                segs[i] = nb;
            }
            (Err(e), _) | (_, Err(e)) => {
                diag.push(format!("boundary {cut} kept: refit after moving to {best} failed: {e}"));
            }
        }
    }
}

fn pvalue(seg: &Segment) -> f64 {
    seg.gof.as_ref().map_or(0.0, |g| g.pvalue)
}

fn try_merge(tester: &mut RangeTester, a: &Segment, b: &Segment, short: usize) -> Option<Segment> {
    let target = if a.family() == b.family() {
        a.family()
    } else if a.len().min(b.len()) <= short {
        // a short neighbour may be absorbed when the pooled fit keeps the longer family
        if a.len() >= b.len() {
            a.family()
        } else {
            b.family()
        }
    } else {
        return None;
    };
    // family check first: the test is only worth running if AIC agrees
    let fit = tester.fit(a.start, b.end).ok()?;
    if fit.spec.family() != target {
        return None;
    }
    let (fit, gof) = tester.test(a.start, b.end).ok()?;
    if tester.rejects(&gof) {
        return None;
    }
    Some(Segment { start: a.start, end: b.end, fit, gof: Some(gof) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaSpec;

    fn two_block(a: CopulaSpec, b: CopulaSpec, n: usize, seed: u64) -> PseudoSample {
        let mut d = a.sample(n, seed).unwrap();
        d.extend(b.sample(n, seed + 1).unwrap());
        PseudoSample::from_uniforms(d).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig { alpha_w: 0.96, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig { n_min: 600, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig { step: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.short_name().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn allowed_rejections_is_binomial_quantile() {
        // 90 blocks at 5%: mean 4.5, 95% quantile 8
        assert_eq!(allowed_rejections(90, 0.95), 8);
        assert_eq!(allowed_rejections(1, 0.95), 0);
    }

    #[test]
    fn online_matches_batch_and_partitions() {
        let ps = two_block(CopulaSpec::Gaussian { rho: 0.5 }, CopulaSpec::Clayton { theta: 3.0 }, 900, 3);
        let cfg = DetectorConfig::default();
        let batch = accelerated_moving_window(&ps, &cfg).unwrap();
        let mut det = OnlineDetector::new(OnlineKind::Accelerated, cfg).unwrap();
        for chunk in ps.points().chunks(137) {
            det.push_batch(chunk).unwrap();
        }
        let online = det.finish().unwrap();
        assert_eq!(batch, online);
        online.check_partition(1800).unwrap();
        for ev in &online.events {
            assert!(ev.change_point <= ev.detected_at && ev.statistic > ev.threshold);
        }
    }

    #[test]
    fn moving_window_finds_strong_change() {
        let ps = two_block(CopulaSpec::Gaussian { rho: 0.2 }, CopulaSpec::Clayton { theta: 4.0 }, 1200, 5);
        let rep = moving_window(&ps, &DetectorConfig::default()).unwrap();
        let first = rep.events.iter().find(|e| e.detected_at >= 1200).expect("detection");
        assert!(first.detected_at < 1200 + 600, "{:?}", rep.events);
        assert!(rep.segments.iter().any(|s| s.family() == Family::Clayton));
    }

    #[test]
    fn short_series_are_rejected() {
        let ps = PseudoSample::from_uniforms(CopulaSpec::Gaussian { rho: 0.2 }.sample(150, 1).unwrap()).unwrap();
        let cfg = DetectorConfig::default();
        assert!(matches!(moving_window(&ps, &cfg), Err(Error::InsufficientData { .. })));
        assert!(matches!(bottom_up(&ps, &cfg), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn bottom_up_on_homogeneous_clayton_is_one_segment() {
        let ps = PseudoSample::from_uniforms(CopulaSpec::Clayton { theta: 2.0 }.sample(1000, 2).unwrap()).unwrap();
        let rep = bottom_up(&ps, &DetectorConfig::default()).unwrap();
        assert_eq!(rep.segments.len(), 1, "{:?}", rep.change_points());
        assert_eq!(rep.segments[0].family(), Family::Clayton);
    }

    #[test]
    fn binary_segmentation_partitions() {
        let ps = two_block(CopulaSpec::Clayton { theta: 4.0 }, CopulaSpec::Gaussian { rho: -0.3 }, 600, 9);
        let rep = binary_segmentation(&ps, &DetectorConfig::default()).unwrap();
        rep.check_partition(1200).unwrap();
        assert!(rep.segments.len() >= 2);
    }
}
