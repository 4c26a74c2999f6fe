mod config;
mod data;

use clap::{Args, Parser, Subcommand};
use config::{parse_list, Config};
use data::{Res, Series};
use dyncop::detect::{detect, DetectorConfig, MergeOrder, Method};
use dyncop::margins::{fit_garch21, log_returns};
use dyncop::risk::{backtest_var, es_exceedance_residual, rolling_risk, CopulaSource, RollingConfig};
use dyncop::sim::{
    composite_scenario, parameter_sweep, real_time_scenarios, replicate_seeds, retrospective_scenarios, run_comparison,
    standard_spec, stationary_scenario, summarize, write_rows_csv, write_summary_csv, write_sweep_csv, Scenario,
    SWEEP_GRID, SWEEP_PAIRS,
};
use dyncop::special::norm_quantile;
use dyncop::{pseudo_observations, select_family, CopulaSpec, Error, Family};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dyncop", version, about = "Dynamic copula change-point detection and portfolio risk")]
struct Cli {
    /// key = value file with defaults for any long option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all randomness (default from DYNCOP_SEED, else 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a piecewise-copula series from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// True change points, one 1-based position per line [default: <out>.truth]
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write copula uniforms instead of standard-normal scores.
        #[arg(long)]
        uniform: bool,
    },
    /// Segment a bivariate series into copula regimes.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        margins: MarginArgs,
        /// bs, mw, amw or bottom-up [default: bottom-up]
        #[arg(long)]
        method: Option<Method>,
        /// Segments as JSON lines [default: stdout]
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Limit crossings as CSV.
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        det: DetectorArgs,
    },
    /// Rolling one-day VaR and ES of an equally weighted portfolio.
    Risk {
        #[arg(long)]
        input: PathBuf,
        /// Columns are already log returns; prices otherwise.
        #[arg(long)]
        returns: bool,
        /// Segments file from `detect` (dynamic copula).
        #[arg(long, conflicts_with_all = ["static_fit", "copula"])]
        segments: Option<PathBuf>,
        /// One copula selected on the whole sample.
        #[arg(long = "static")]
        static_fit: bool,
        /// Fixed copula, e.g. `student_t:0.94,2.89`.
        #[arg(long, conflicts_with = "static_fit")]
        copula: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        n_sims: Option<usize>,
        /// Days between evaluations [default: 20]
        #[arg(long)]
        every: Option<usize>,
        #[arg(long)]
        min_history: Option<usize>,
        #[arg(long)]
        refit_every: Option<usize>,
        /// Portfolio value shares, e.g. `0.5,0.5`.
        #[arg(long)]
        weights: Option<String>,
        /// Report VaR, ES and realised loss as negative numbers.
        #[arg(long)]
        plot_sign: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kupiec coverage test and ES residual check of a risk file.
    Backtest {
        #[arg(long)]
        risk: PathBuf,
        /// Defaults to the level stored in the risk file.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run detectors over simulated scenarios and tabulate delays.
    Compare {
        /// Scenario files; repeatable.
        #[arg(long)]
        scenario: Vec<PathBuf>,
        /// Built-in scenario set: real-time, retrospective, composite or stationary.
        #[arg(long)]
        preset: Option<Preset>,
        /// Comma-separated methods [default: all four]
        #[arg(long)]
        methods: Option<String>,
        /// Number of seeds; 1 runs the base seed itself.
        #[arg(long)]
        seeds: Option<usize>,
        /// Per-run rows [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-scenario delay summary.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        det: DetectorArgs,
    },
    /// Median delay against the shared dependence parameter of two regimes.
    Sweep {
        /// Comma-separated methods [default: mw,amw]
        #[arg(long)]
        methods: Option<String>,
        /// Parameter grid [default: 0.2,...,0.8]
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Length of each regime [default: 5000]
        #[arg(long)]
        block_len: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        det: DetectorArgs,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Preset {
    RealTime,
    Retrospective,
    Composite,
    Stationary,
}

#[derive(Args)]
struct MarginArgs {
    /// Columns are already log returns; prices otherwise.
    #[arg(long)]
    returns: bool,
    /// Rank the returns directly instead of GARCH residuals.
    #[arg(long)]
    no_garch: bool,
}

#[derive(Args)]
struct DetectorArgs {
    /// Moving-window width.
    #[arg(long)]
    window: Option<usize>,
    /// Roll step.
    #[arg(long)]
    step: Option<usize>,
    /// Initial accelerated window.
    #[arg(long)]
    n_min: Option<usize>,
    /// Accelerated window growth.
    #[arg(long)]
    growth: Option<usize>,
    /// Largest accelerated window.
    #[arg(long)]
    max_window: Option<usize>,
    /// Warning confidence level.
    #[arg(long)]
    alpha_warning: Option<f64>,
    /// Critical confidence level.
    #[arg(long)]
    alpha_critical: Option<f64>,
    /// Initial bottom-up block size.
    #[arg(long)]
    bu_min: Option<usize>,
    /// Smallest bottom-up block size.
    #[arg(long)]
    bu_floor: Option<usize>,
    #[arg(long)]
    bu_shrink: Option<f64>,
    /// Keep merged bottom-up boundaries on the block grid.
    #[arg(long)]
    no_refine: bool,
    /// left-to-right or best-first.
    #[arg(long)]
    merge_order: Option<MergeOrder>,
    #[arg(long)]
    bs_min_leaf: Option<usize>,
    /// Comma-separated candidate families.
    #[arg(long)]
    families: Option<String>,
    /// Monte-Carlo draws for the test covariance.
    #[arg(long)]
    mc_draws: Option<usize>,
    /// Test Student-t fits with ν at a bound as one-parameter models.
    #[arg(long)]
    fixed_nu: bool,
    /// Re-select the family by AIC after a warning.
    #[arg(long)]
    aic_after_warning: bool,
}

impl DetectorArgs {
    fn resolve(&self, c: &Config, seed: u64) -> Res<DetectorConfig> {
        let d = DetectorConfig::default();
        let families = match c.pick(self.families.clone(), "families")? {
            Some(s) => parse_list::<Family>(&s)?,
            None => d.families.clone(),
        };
        let cfg = DetectorConfig {
            n_window: c.pick_or(self.window, "window", d.n_window)?,
            step: c.pick_or(self.step, "step", d.step)?,
            n_min: c.pick_or(self.n_min, "n-min", d.n_min)?,
            growth: c.pick_or(self.growth, "growth", d.growth)?,
            max_window: c.pick_or(self.max_window, "max-window", d.max_window)?,
            alpha_w: c.pick_or(self.alpha_warning, "alpha-warning", d.alpha_w)?,
            alpha_c: c.pick_or(self.alpha_critical, "alpha-critical", d.alpha_c)?,
            bu_min: c.pick_or(self.bu_min, "bu-min", d.bu_min)?,
            bu_floor: c.pick_or(self.bu_floor, "bu-floor", d.bu_floor)?,
            bu_shrink: c.pick_or(self.bu_shrink, "bu-shrink", d.bu_shrink)?,
            bu_refine: !c.switch(self.no_refine, "no-refine")?,
            bu_merge_order: c.pick_or(self.merge_order, "merge-order", d.bu_merge_order)?,
            bs_min_leaf: c.pick_or(self.bs_min_leaf, "bs-min-leaf", d.bs_min_leaf)?,
            families,
            seed,
            mc_draws: c.pick_or(self.mc_draws, "mc-draws", d.mc_draws)?,
            fixed_nu_at_bound: c.switch(self.fixed_nu, "fixed-nu")?,
            aic_after_warning: c.switch(self.aic_after_warning, "aic-after-warning")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn methods(c: &Config, flag: Option<String>, default: &[Method]) -> Res<Vec<Method>> {
    match c.pick(flag, "methods")? {
        Some(s) => parse_list(&s),
        None => Ok(default.to_vec()),
    }
}

fn seed_list(c: &Config, flag: Option<usize>, base: u64) -> Res<Vec<u64>> {
    match c.pick_or(flag, "seeds", 1)? {
        0 => Err(Error::Parameter("--seeds must be positive".into())),
        1 => Ok(vec![base]),
        n => Ok(replicate_seeds(base, n)),
    }
}

/// Returns, their dates, and pseudo-observations for the detectors.
struct Prepared {
    returns: Series,
    pseudo: dyncop::PseudoSample,
}

fn returns_of(input: &Path, already_returns: bool) -> Res<Series> {
    let s = data::read_series(input)?;
    if already_returns {
        return Ok(s);
    }
    let r1 = log_returns(&s.values.iter().map(|v| v[0]).collect::<Vec<_>>())?;
    let r2 = log_returns(&s.values.iter().map(|v| v[1]).collect::<Vec<_>>())?;
    Ok(Series {
        dates: s.dates.map(|d| d[1..].to_vec()),
        values: r1.into_iter().zip(r2).map(|(a, b)| [a, b]).collect(),
    })
}

fn column(s: &Series, i: usize) -> Vec<f64> {
    s.values.iter().map(|v| v[i]).collect()
}

fn prepare(input: &Path, already_returns: bool, garch: bool) -> Res<Prepared> {
    let returns = returns_of(input, already_returns)?;
    let obs: Vec<[f64; 2]> = if garch {
        let f1 = fit_garch21(&column(&returns, 0))?;
        let f2 = fit_garch21(&column(&returns, 1))?;
        f1.resid.iter().zip(&f2.resid).map(|(a, b)| [*a, *b]).collect()
    } else {
        returns.values.clone()
    };
    let pseudo = pseudo_observations(&obs)?;
    Ok(Prepared { returns, pseudo })
}

/// A seed from the flag or config file replaces the file's own; the
/// environment default applies only when the file sets none.
fn load_scenario(c: &Config, flag: Option<u64>, text: &str) -> Res<Scenario> {
    match c.pick(flag, "seed")? {
        Some(seed) => Ok(Scenario::parse(text)?.with_seed(seed)),
        None => Scenario::parse_with_default_seed(text, config::env_seed()?),
    }
}

fn parse_copula(s: &str) -> Res<CopulaSpec> {
    let (fam, params) =
        s.split_once(':').ok_or_else(|| Error::Parameter(format!("copula '{s}' should look like family:p1[,p2]")))?;
    CopulaSpec::from_params(fam.parse()?, &parse_list::<f64>(params)?)
}

fn run(cli: Cli) -> Res<()> {
    let c = Config::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Simulate { scenario, out, truth, uniform } => {
            let text =
                std::fs::read_to_string(&scenario).map_err(|e| Error::Io(format!("{}: {e}", scenario.display())))?;
            let sc = load_scenario(&c, cli.seed, &text)?;
            let (u, cps) = sc.generate()?;
            let values: Vec<[f64; 2]> = if uniform { u } else { u.iter().map(|p| p.map(norm_quantile)).collect() };
            let dates: Vec<String> = (1..=values.len()).map(|i| i.to_string()).collect();
            data::write_series(data::open_out(Some(&out))?, &dates, &values)?;
            let truth = truth.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".truth");
                p.into()
            });
            let mut w = data::open_out(Some(&truth))?;
            for cp in cps {
                writeln!(w, "{cp}")?;
            }
            w.flush()?;
        }
        Cmd::Detect { input, margins, method, segments, events, det } => {
            let seed = c.seed(cli.seed)?;
            let cfg = det.resolve(&c, seed)?;
            let method = c.pick_or(method, "method", Method::BottomUp)?;
            let returns = c.switch(margins.returns, "returns")?;
            let garch = !c.switch(margins.no_garch, "no-garch")?;
            let prep = prepare(&input, returns, garch)?;
            let rep = detect(method, &prep.pseudo, &cfg)?;
            for d in &rep.diagnostics {
                eprintln!("note: {d}");
            }
            let records = data::segment_records(&rep, &prep.returns);
            data::write_segments(data::open_out(segments.as_deref())?, &records)?;
            if let Some(p) = events {
                data::write_events(data::open_out(Some(&p))?, &rep.events, &prep.returns)?;
            }
        }
        Cmd::Risk {
            input,
            returns,
            segments,
            static_fit,
            copula,
            alpha,
            n_sims,
            every,
            min_history,
            refit_every,
            weights,
            plot_sign,
            out,
        } => {
            let d = RollingConfig::default();
            let weights = match c.pick(weights, "weights")? {
                Some(s) => {
                    let w = parse_list::<f64>(&s)?;
                    <[f64; 2]>::try_from(w).map_err(|_| Error::Parameter("--weights takes two values".into()))?
                }
                None => d.weights,
            };
            let cfg = RollingConfig {
                step: c.pick_or(every, "every", d.step)?,
                alpha: c.pick_or(alpha, "alpha", d.alpha)?,
                n_sims: c.pick_or(n_sims, "n-sims", d.n_sims)?,
                weights,
                seed: c.seed(cli.seed)?,
                min_history: c.pick_or(min_history, "min-history", d.min_history)?,
                refit_every: c.pick_or(refit_every, "refit-every", d.refit_every)?,
            };
            let already = c.switch(returns, "returns")?;
            let series = returns_of(&input, already)?;
            let regimes;
            let source = match (segments, copula) {
                (Some(p), _) => {
                    regimes = data::read_regimes(&p)?;
                    let covered = regimes.iter().map(|r| r.end).max().unwrap_or(0);
                    if covered != series.values.len() {
                        return Err(Error::Parameter(format!(
                            "segments cover {covered} returns but the input has {}",
                            series.values.len()
                        )));
                    }
                    CopulaSource::Dynamic(&regimes)
                }
                (None, Some(s)) => CopulaSource::Static(parse_copula(&s)?),
                (None, None) => {
                    if !static_fit {
                        return Err(Error::Parameter("risk needs --segments, --static or --copula".into()));
                    }
                    let prep = prepare(&input, already, true)?;
                    CopulaSource::Static(select_family(&prep.pseudo, &Family::ALL)?.spec)
                }
            };
            let points = rolling_risk(&series.values, source, &cfg)?;
            let sign = if c.switch(plot_sign, "plot-sign")? { -1.0 } else { 1.0 };
            data::write_risk(data::open_out(out.as_deref())?, &points, &series, cfg.alpha, sign)?;
        }
        Cmd::Backtest { risk, alpha, out } => {
            let cols = data::read_risk(&risk)?;
            let alpha = c.pick_or(alpha, "alpha", cols.alpha)?;
            let rep = backtest_var(&cols.losses, &cols.var, alpha)?;
            let resid = es_exceedance_residual(&cols.losses, &cols.var, &cols.es);
            data::write_backtest(data::open_out(out.as_deref())?, &rep, alpha, resid)?;
        }
        Cmd::Compare { scenario, preset, methods: m, seeds, out, summary, det } => {
            let mut scenarios = Vec::new();
            for p in &scenario {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                scenarios.push(load_scenario(&c, cli.seed, &text)?);
            }
            let base = match scenarios.first() {
                Some(s) => s.seed,
                None => c.seed(cli.seed)?,
            };
            match preset {
                Some(Preset::RealTime) => scenarios.extend(real_time_scenarios(base)),
                Some(Preset::Retrospective) => scenarios.extend(retrospective_scenarios(base)),
                Some(Preset::Composite) => scenarios.push(composite_scenario(base)),
                Some(Preset::Stationary) => {
                    scenarios.extend(Family::ALL.iter().map(|&f| stationary_scenario(standard_spec(f), 5000, base)))
                }
                None => {}
            }
            if scenarios.is_empty() {
                return Err(Error::Parameter("compare needs --scenario or --preset".into()));
            }
            let cfg = det.resolve(&c, base)?;
            let methods = methods(&c, m, &Method::ALL)?;
            let seeds = seed_list(&c, seeds, base)?;
            let rows = run_comparison(&scenarios, &methods, &seeds, &cfg)?;
            write_rows_csv(data::open_out(out.as_deref())?, &rows)?;
            if let Some(p) = summary {
                write_summary_csv(data::open_out(Some(&p))?, &summarize(&rows))?;
            }
        }
        Cmd::Sweep { methods: m, grid, seeds, block_len, out, det } => {
            let base = c.seed(cli.seed)?;
            let cfg = det.resolve(&c, base)?;
            let methods = methods(&c, m, &[Method::MovingWindow, Method::AcceleratedMovingWindow])?;
            let grid = match c.pick(grid, "grid")? {
                Some(s) => parse_list::<f64>(&s)?,
                None => SWEEP_GRID.to_vec(),
            };
            let seeds = seed_list(&c, seeds, base)?;
            let block_len = c.pick_or(block_len, "block-len", 5000)?;
            let rows = parameter_sweep(&SWEEP_PAIRS, &grid, &methods, &seeds, block_len, &cfg)?;
            write_sweep_csv(data::open_out(out.as_deref())?, &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
