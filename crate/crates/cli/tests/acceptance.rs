//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion.
//! Failures are reported but only change the exit status when
//! `ACCEPTANCE_STRICT=1` is set. Arguments select criteria by number, e.g.
//! `cargo test --test acceptance -- 1 7`.

use dyncop::detect::{DetectorConfig, Method};
use dyncop::gof::{info_matrix_test, GofConfig};
use dyncop::margins::{fit_garch21, simulate_garch21, GarchParams};
use dyncop::risk::{backtest_var, portfolio_loss, var_es_margins, MarginForecast};
use dyncop::sim::{
    composite_scenario, real_time_scenarios, replicate_seeds, retrospective_scenarios, run_comparison, ComparisonRow,
    Scenario,
};
use dyncop::special::norm_quantile;
use dyncop::stats::{chi2_quantile, derive_seed, kendall_tau, median};
use dyncop::{fit_copula, pseudo_observations, CopulaSpec, Family};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const BASE_SEED: u64 = 20_240_626;

fn chi2_anchors() -> Outcome {
    let cases = [(1, 0.95, 3.84), (1, 0.85, 2.07), (3, 0.95, 7.81), (3, 0.85, 5.32)];
    let got: Vec<f64> = cases.iter().map(|&(d, a, _)| chi2_quantile(d, a).unwrap()).collect();
    let pass = cases.iter().zip(&got).all(|(c, g)| (g - c.2).abs() <= 0.01);
    outcome(pass, format!("quantiles {got:.4?}"))
}

fn gof_size() -> Outcome {
    let spec = CopulaSpec::Gaussian { rho: 0.5 };
    let pvalues: Vec<f64> = (0..500u64)
        .map(|i| {
            let s = derive_seed(BASE_SEED, i);
            let ps = pseudo_observations(&spec.sample(1000, s).unwrap()).unwrap();
            let fit = fit_copula(&ps, Family::Gaussian).unwrap();
            info_matrix_test(&ps, &fit.spec, &GofConfig { seed: derive_seed(s, 1), ..Default::default() })
                .unwrap()
                .pvalue
        })
        .collect();
    let rate = |a: f64| pvalues.iter().filter(|&&p| p < a).count() as f64 / pvalues.len() as f64;
    let (r5, r15) = (rate(0.05), rate(0.15));
    let pass = (0.02..=0.12).contains(&r5) && (0.08..=0.25).contains(&r15);
    outcome(pass, format!("rejection {r5:.3} at 5%, {r15:.3} at 15% over 500 samples"))
}

fn power_monotone() -> Outcome {
    let g = CopulaSpec::Gaussian { rho: 0.5 };
    let c = CopulaSpec::Clayton { theta: 0.5 };
    let medians: Vec<f64> = [0.0, 0.25, 0.5, 0.75]
        .iter()
        .map(|&lam| {
            let k = (500.0 * lam) as usize;
            let stats: Vec<f64> = (0..100u64)
                .map(|i| {
                    let s = derive_seed(BASE_SEED + 3, i);
                    let mut d = g.sample(500 - k, derive_seed(s, 1)).unwrap();
                    if k > 0 {
                        d.extend(c.sample(k, derive_seed(s, 2)).unwrap());
                    }
                    let ps = pseudo_observations(&d).unwrap();
                    let fit = fit_copula(&ps, Family::Gaussian).unwrap();
                    info_matrix_test(&ps, &fit.spec, &GofConfig { seed: derive_seed(s, 3), ..Default::default() })
                        .unwrap()
                        .statistic
                })
                .collect();
            median(&stats)
        })
        .collect();
    let pass = medians.windows(2).all(|w| w[1] >= w[0]);
    outcome(pass, format!("median statistic at contamination 0/.25/.5/.75: {medians:.3?}"))
}

fn rows_for<'a>(rows: &'a [ComparisonRow], scenario: &str, method: Method) -> Vec<&'a ComparisonRow> {
    rows.iter().filter(|r| r.scenario == scenario && r.method == method).collect()
}

/// Median delay with misses as +inf.
fn median_delay(rows: &[&ComparisonRow]) -> f64 {
    median(&rows.iter().map(|r| r.delay.map_or(f64::INFINITY, |d| d as f64)).collect::<Vec<_>>())
}

fn fmt_delays(rows: &[&ComparisonRow]) -> String {
    rows.iter().map(|r| r.delay.map_or("NA".to_string(), |d| d.to_string())).collect::<Vec<_>>().join(",")
}

fn real_time_delays() -> Outcome {
    let all = real_time_scenarios(0);
    let pick = |name: &str| all.iter().find(|s| s.name == name).unwrap().clone();
    let scenarios = vec![pick("gaussian-student_t"), pick("clayton-gaussian")];
    let seeds = replicate_seeds(BASE_SEED + 4, 20);
    let methods = [Method::MovingWindow, Method::AcceleratedMovingWindow];
    let rows = run_comparison(&scenarios, &methods, &seeds, &DetectorConfig::default()).unwrap();

    let mw_gt = rows_for(&rows, "gaussian-student_t", Method::MovingWindow);
    let hits = mw_gt.iter().filter(|r| r.delay.is_some_and(|d| d > 0 && d <= 1500)).count();
    let part_a = hits >= 16;

    let mw_cg = rows_for(&rows, "clayton-gaussian", Method::MovingWindow);
    let amw_cg = rows_for(&rows, "clayton-gaussian", Method::AcceleratedMovingWindow);
    let (m_mw, m_amw) = (median_delay(&mw_cg), median_delay(&amw_cg));
    let part_b = m_amw < m_mw;
    outcome(
        part_a && part_b,
        format!(
            "gaussian->student_t MW delay in (0,1500] for {hits}/20 [{}]; clayton->gaussian median delay AMW {m_amw} vs MW {m_mw} (AMW [{}], MW [{}])",
            fmt_delays(&mw_gt),
            fmt_delays(&amw_cg),
            fmt_delays(&mw_cg)
        ),
    )
}

fn post_family(s: &Scenario) -> Family {
    s.blocks[1].spec.family()
}

fn retrospective_location() -> Outcome {
    let scenarios = retrospective_scenarios(0);
    let seeds = replicate_seeds(BASE_SEED + 5, 20);
    let rows = run_comparison(&scenarios, &[Method::BottomUp], &seeds, &DetectorConfig::default()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let (mut detected, mut right_family) = (0, 0);
    for s in &scenarios {
        let rs = rows_for(&rows, &s.name, Method::BottomUp);
        let near = rs.iter().filter(|r| r.delay.is_some_and(|d| d.abs() <= 200)).count();
        for r in rs.iter().filter(|r| r.detected_cp.is_some()) {
            detected += 1;
            right_family += usize::from(r.new_spec.map(|x| x.family()) == Some(post_family(s)));
        }
        pass &= near >= 16;
        parts.push(format!("{} {near}/20", s.name));
    }
    let share = right_family as f64 / detected.max(1) as f64;
    pass &= share >= 0.8;
    outcome(
        pass,
        format!("within 200 of 4501: {}; post-change family right in {right_family}/{detected}", parts.join(", ")),
    )
}

fn composite() -> Outcome {
    let sc = composite_scenario(BASE_SEED + 6);
    let methods = [Method::BottomUp, Method::MovingWindow, Method::AcceleratedMovingWindow];
    let rows = run_comparison(std::slice::from_ref(&sc), &methods, &[sc.seed], &DetectorConfig::default()).unwrap();
    let bu = rows_for(&rows, "composite", Method::BottomUp);
    let pass = bu.iter().all(|r| r.delay.is_some_and(|d| d.abs() <= 200));
    let describe = |m: Method| {
        let rs = rows_for(&rows, "composite", m);
        let alarms = rs.first().map_or(0, |r| r.false_alarms);
        format!("{} [{}] extra {alarms}", m.short_name(), fmt_delays(&rs))
    };
    outcome(
        pass,
        format!(
            "offsets at {:?}: {}; {}; {}",
            sc.change_points(),
            describe(Method::BottomUp),
            describe(Method::MovingWindow),
            describe(Method::AcceleratedMovingWindow)
        ),
    )
}

fn random_spec(family: Family, rng: &mut ChaCha8Rng) -> CopulaSpec {
    match family {
        Family::Gaussian => CopulaSpec::Gaussian { rho: rng.random_range(-0.9..0.9) },
        Family::StudentT => CopulaSpec::StudentT { rho: rng.random_range(-0.9..0.9), nu: rng.random_range(2.5..30.0) },
        Family::Clayton => CopulaSpec::Clayton { theta: rng.random_range(0.1..8.0) },
    }
}

fn with_params(spec: &CopulaSpec, p: &[f64]) -> CopulaSpec {
    CopulaSpec::from_params(spec.family(), p).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-2)
}

/// Analytic gradient and Hessian of the log-density in the parameters
/// against central differences of the log-density and of the gradient.
fn derivative_suite() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 7);
    let (mut ok, mut total) = (0, 0);
    for family in Family::ALL {
        for _ in 0..50 {
            let spec = random_spec(family, &mut rng);
            let u = [rng.random_range(0.02..0.98), rng.random_range(0.02..0.98)];
            let p = spec.params();
            let g = spec.log_density_grad(u).unwrap();
            let h = spec.log_density_hessian(u).unwrap();
            let mut good = true;
            for i in 0..p.len() {
                let step = 1e-5 * p[i].abs().max(1.0);
                let shifted = |d: f64| {
                    let mut q = p.clone();
                    q[i] += d;
                    with_params(&spec, &q)
                };
                let (sp, sm) = (shifted(step), shifted(-step));
                let fd = (sp.log_density(u).unwrap() - sm.log_density(u).unwrap()) / (2.0 * step);
                good &= close(g[i], fd);
                let gp = sp.log_density_grad(u).unwrap();
                let gm = sm.log_density_grad(u).unwrap();
                for j in 0..p.len() {
                    good &= close(h[(i, j)], (gp[j] - gm[j]) / (2.0 * step));
                }
            }
            total += 1;
            ok += usize::from(good);
        }
    }
    (ok, total)
}

fn copula_numerics() -> Outcome {
    let (ok, total) = derivative_suite();
    let specs = [
        CopulaSpec::Gaussian { rho: 0.5 },
        CopulaSpec::Gaussian { rho: -0.7 },
        CopulaSpec::StudentT { rho: 0.5, nu: 2.2 },
        CopulaSpec::StudentT { rho: 0.7, nu: 8.0 },
        CopulaSpec::Clayton { theta: 0.5 },
        CopulaSpec::Clayton { theta: 3.0 },
    ];
    let taus: Vec<(f64, f64)> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| (kendall_tau(&s.sample(100_000, derive_seed(BASE_SEED + 7, i as u64)).unwrap()), s.kendall_tau()))
        .collect();
    let tau_ok = taus.iter().all(|(e, t)| (e - t).abs() <= 0.03);
    // R2 low-discrepancy points
    let (a1, a2) = (0.754_877_666_246_692_7, 0.569_840_290_998_053_3);
    let ints: Vec<f64> = [
        CopulaSpec::Gaussian { rho: 0.5 },
        CopulaSpec::StudentT { rho: 0.5, nu: 5.0 },
        CopulaSpec::Clayton { theta: 1.0 },
    ]
    .iter()
    .map(|s| {
        let n = 1_000_000;
        (1..=n).map(|k| s.density([(0.5 + a1 * k as f64).fract(), (0.5 + a2 * k as f64).fract()]).unwrap()).sum::<f64>()
            / n as f64
    })
    .collect();
    let int_ok = ints.iter().all(|v| (v - 1.0).abs() <= 0.01);
    let worst_tau = taus.iter().map(|(e, t)| (e - t).abs()).fold(0.0, f64::max);
    outcome(
        ok == total && tau_ok && int_ok,
        format!("derivatives {ok}/{total} within 1e-3; worst Kendall tau error {worst_tau:.4}; density integrals {ints:.4?}"),
    )
}

fn garch_recovery() -> Outcome {
    let truth = GarchParams { mu: 5.8e-4, alpha0: 3.2e-6, alpha1: 0.027, alpha2: 0.112, beta1: 0.834 };
    let t = [truth.mu, truth.alpha0, truth.alpha1, truth.alpha2, truth.beta1];
    let mut good = 0;
    for i in 0..50u64 {
        let r = simulate_garch21(&truth, 3000, derive_seed(BASE_SEED + 8, i)).unwrap();
        let Ok(fit) = fit_garch21(&r) else { continue };
        let p = fit.params;
        let est = [p.mu, p.alpha0, p.alpha1, p.alpha2, p.beta1];
        good += usize::from((0..5).all(|k| (est[k] - t[k]).abs() <= 3.0 * fit.stderr[k]));
    }
    outcome(good >= 45, format!("all five parameters within 3 SE in {good}/50 series"))
}

fn risk_properties() -> Outcome {
    let w = [0.5, 0.5];
    let sigma = 0.01;
    let flat = [MarginForecast { mu: 0.0, sigma }; 2];
    let mut es_ok = true;
    for (i, spec) in [
        CopulaSpec::Gaussian { rho: 0.3 },
        CopulaSpec::StudentT { rho: 0.6, nu: 3.0 },
        CopulaSpec::Clayton { theta: 2.0 },
    ]
    .iter()
    .enumerate()
    {
        for alpha in [0.01, 0.05, 0.1] {
            for s in 0..5 {
                let (v, e) = var_es_margins(flat, spec, w, alpha, 10_000, derive_seed(i as u64, s)).unwrap();
                es_ok &= e >= v;
            }
        }
    }
    let (indep, _) = var_es_margins(flat, &CopulaSpec::Gaussian { rho: 0.0 }, w, 0.05, 100_000, 9).unwrap();
    let (como, _) = var_es_margins(flat, &CopulaSpec::Gaussian { rho: 0.999 }, w, 0.05, 100_000, 9).unwrap();
    let rho = 0.5;
    let (v, _) = var_es_margins(flat, &CopulaSpec::Gaussian { rho }, w, 0.05, 1_000_000, 11).unwrap();
    let closed = norm_quantile(0.95) * sigma * ((1.0 + rho) / 2.0).sqrt();
    let rel = (v - closed).abs() / closed;
    // calibrated backtests: realised losses come from the same model the VaR is computed under
    let model = CopulaSpec::StudentT { rho: 0.5, nu: 4.0 };
    let (model_var, _) = var_es_margins(flat, &model, w, 0.05, 1_000_000, 13).unwrap();
    let mut rejections = 0;
    for s in 0..200u64 {
        let u = model.sample(500, derive_seed(BASE_SEED + 9, s)).unwrap();
        let losses: Vec<f64> =
            u.iter().map(|u| portfolio_loss([1.0, 1.0], [0, 1].map(|i| sigma * norm_quantile(u[i])), w)).collect();
        let rep = backtest_var(&losses, &vec![model_var; 500], 0.05).unwrap();
        rejections += usize::from(rep.kupiec_pvalue < 0.05);
    }
    let size = rejections as f64 / 200.0;
    let pass = es_ok && como >= indep && rel <= 0.03 && (0.01..=0.12).contains(&size);
    outcome(
        pass,
        format!(
            "ES >= VaR {es_ok}; VaR independent {indep:.5} <= comonotone {como:.5}; normal VaR {v:.5} vs closed form {closed:.5} ({:.2}%); Kupiec size {size:.3}",
            100.0 * rel
        ),
    )
}

const SCENARIO: &str = "name = gc\nseed = 5\n\n[block]\nfamily = gaussian\nparams = 0.6\nlength = 600\n\n[block]\nfamily = clayton\nparams = 2\nlength = 600\n";

/// Runs every subcommand in `dir` and returns the bytes of every output.
fn cli_round(dir: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("sc.txt"), SCENARIO).unwrap();
    let small = ["--window", "200", "--step", "50", "--n-min", "100", "--max-window", "200", "--growth", "25"];
    let mut cmds: Vec<Vec<&str>> = vec![
        vec!["simulate", "--scenario", "sc.txt", "--out", "data.csv"],
        vec!["simulate", "--scenario", "sc.txt", "--out", "u.csv", "--uniform", "--seed", "9"],
    ];
    for (m, seg, ev) in [
        ("bs", "bs.jsonl", "bs.csv"),
        ("mw", "mw.jsonl", "mw.csv"),
        ("amw", "amw.jsonl", "amw.csv"),
        ("bottom-up", "bu.jsonl", "bu.csv"),
    ] {
        let mut c =
            vec!["detect", "--input", "data.csv", "--returns", "--method", m, "--segments", seg, "--events", ev];
        c.extend_from_slice(&small);
        cmds.push(c);
    }
    cmds.push(vec![
        "risk",
        "--input",
        "data.csv",
        "--returns",
        "--segments",
        "bu.jsonl",
        "--n-sims",
        "2000",
        "--min-history",
        "400",
        "--every",
        "10",
        "--out",
        "dyn.csv",
    ]);
    cmds.push(vec![
        "risk",
        "--input",
        "data.csv",
        "--returns",
        "--static",
        "--n-sims",
        "2000",
        "--min-history",
        "400",
        "--every",
        "10",
        "--plot-sign",
        "--out",
        "static.csv",
    ]);
    cmds.push(vec!["backtest", "--risk", "dyn.csv", "--out", "bt.csv"]);
    let mut cmp = vec!["compare", "--scenario", "sc.txt", "--methods", "mw,amw,bs,bottom-up", "--seeds", "2"];
    cmp.extend_from_slice(&small);
    cmp.extend_from_slice(&["--out", "cmp.csv", "--summary", "sum.csv"]);
    cmds.push(cmp);
    let mut sweep = vec!["sweep", "--grid", "0.4,0.8", "--block-len", "300", "--out", "sweep.csv"];
    sweep.extend_from_slice(&small);
    cmds.push(sweep);
    for c in &cmds {
        let out = Command::new(env!("CARGO_BIN_EXE_dyncop"))
            .current_dir(dir)
            .env_remove("DYNCOP_SEED")
            .args(c)
            .output()
            .unwrap();
        assert!(out.status.success(), "{c:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "sc.txt")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = cli_round(a.path());
    let second = cli_round(b.path());
    let differing: Vec<&str> = first.iter().zip(&second).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = first.len() == second.len() && differing.is_empty() && first.len() == 18;
    outcome(pass, format!("{} output files compared, differing: {differing:?}", first.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "chi-square anchors", chi2_anchors),
        (2, "GoF size", gof_size),
        (3, "GoF power monotone in contamination", power_monotone),
        (4, "real-time delays", real_time_delays),
        (5, "bottom-up change location", retrospective_location),
        (6, "composite scenario", composite),
        (7, "copula numerics", copula_numerics),
        (8, "GARCH recovery", garch_recovery),
        (9, "risk properties", risk_properties),
        (10, "CLI determinism", cli_determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "criterion {n:>2} {}: {name} ({:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
