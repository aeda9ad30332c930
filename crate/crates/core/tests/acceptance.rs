//! End-to-end acceptance checks. Runs as a plain binary so the per-check
//! PASS/FAIL lines are always printed; exits non-zero if any check fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use swgsim::coincidence::{analytic_pattern_probabilities, eq1_estimate, Eq1Params};
use swgsim::config::{ExperimentConfig, Scenario};
use swgsim::polarization::conditional_visibility;
use swgsim::runner::{self, RunOptions, RunSummary};

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn load(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(cfg: &ExperimentConfig, scenario: Scenario, workers: usize) -> (RunSummary, Duration) {
    let t = Instant::now();
    let opts = RunOptions {
        workers: Some(workers),
        ..Default::default()
    };
    let s = runner::run(cfg, scenario, &opts).unwrap_or_else(|e| panic!("{scenario:?}: {e}"));
    (s, t.elapsed())
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn ten_photon_ratio() -> Check {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (mu, eta) in [(0.01, 0.2), (0.05, 0.5), (0.1, 0.9)] {
        let p = Eq1Params { f: 76e6, mu, n: 5, eta };
        let r = eq1_estimate(&Eq1Params { eta: eta * 1.05, ..p }) / eq1_estimate(&p);
        worst = worst.max((r - 1.05f64.powi(10)).abs());
    }
    let el = t.elapsed();
    check(
        worst <= 1e-12 && el < Duration::from_secs(1),
        format!("ten-photon rate ratio at 1.05η: 1.05^10 = {:.6}, max error {worst:.1e}, {el:?}", 1.05f64.powi(10)),
    )
}

fn ghz_runs() -> (ExperimentConfig, RunSummary, Duration, RunSummary) {
    let cfg = load("ghz4_compare.toml");
    let (noisy, el) = run(&cfg, Scenario::Ghz4, workers());
    let mut quiet_cfg = cfg.clone();
    quiet_cfg.ghz4.noise = false;
    let (quiet, _) = run(&quiet_cfg, Scenario::Ghz4, workers());
    (cfg, noisy, el, quiet)
}

fn fourfold_improvement(cfg: &ExperimentConfig, s: &RunSummary, el: Duration) -> Check {
    let m = &s.metrics;
    let (analytic, ratio, se, z) = (
        m["analytic_ratio.++++"],
        m["ratio.++++"],
        m["ratio_se.++++"],
        m["ratio_z.++++"],
    );
    let pass = (1.28..=1.33).contains(&analytic)
        && z.abs() <= 3.0
        && cfg.ghz4.pulses >= 10_000_000
        && el < Duration::from_secs(180);
    check(
        pass,
        format!(
            "SWG/SPCM ++++ rate ratio {ratio:.4} ± {se:.4} vs PDE product {analytic:.4} (z = {z:+.2}; \
             +--+: {:.4} ± {:.4} vs {:.4}), {} pulses per arm, {:.1} s",
            m["ratio.+--+"],
            m["ratio_se.+--+"],
            m["analytic_ratio.+--+"],
            cfg.ghz4.pulses,
            el.as_secs_f64()
        ),
    )
}

fn visibility_calibration(noisy: &RunSummary, quiet: &RunSummary) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (set, target) in [("spcm", 0.687), ("swg", 0.689)] {
        let (v, se) = (noisy.metrics[&format!("{set}.visibility")], noisy.metrics[&format!("{set}.visibility_se")]);
        let shift = (v - quiet.metrics[&format!("{set}.visibility")]).abs();
        pass &= (v - target).abs() <= 3.0 * se && shift < 0.005;
        parts.push(format!("{set} V = {v:.4} ± {se:.4} (target {target}), noise shift {shift:.4}"));
    }
    check(pass, parts.join("; "))
}

fn characterization_closure() -> Check {
    let cfg = load("characterize_all.toml");
    let (s, el) = run(&cfg, Scenario::Characterize, workers());
    let (n, max_z) = (s.metrics["detectors"], s.metrics["max_z"]);
    check(
        n == 12.0 && max_z <= 3.0 && cfg.characterize.n_pulses >= 10_000_000 && el < Duration::from_secs(120),
        format!("{n} detector sets recovered, largest deviation {max_z:.2} SE, {:.1} s", el.as_secs_f64()),
    )
}

fn ideal_ghz() -> Check {
    let probs = analytic_pattern_probabilities(1.0).expect("analytic probabilities");
    let odd: f64 = probs.iter().filter(|(p, _)| p.minus_count() % 2 == 1).map(|(_, v)| *v).sum();
    let v = conditional_visibility(&probs).expect("visibility");
    check(
        odd <= 1e-12 && (v - 1.0).abs() <= 1e-9,
        format!("ideal GHZ: odd-parity probability {odd:.1e}, visibility 1 - {:.1e}", 1.0 - v),
    )
}

fn eq1_closure() -> Check {
    let cfg = load("scaling.toml");
    let (s, el) = run(&cfg, Scenario::Scaling, workers());
    let zs: Vec<(&String, &f64)> = s.metrics.iter().filter(|(k, _)| k.starts_with("mc.") && k.ends_with(".z")).collect();
    let max_z = zs.iter().map(|(_, z)| z.abs()).fold(0.0, f64::max);
    check(
        zs.len() == 8 && max_z <= 3.0,
        format!("{} Monte Carlo rates vs f·μⁿ·η²ⁿ, largest |z| {max_z:.2}, {:.1} s", zs.len(), el.as_secs_f64()),
    )
}

fn gate_chain() -> Check {
    let cfg = load("gatechain.toml");
    let (s, el) = run(&cfg, Scenario::Gatechain, workers());
    let m = &s.metrics;
    let pass = m["rejection_db"] >= 96.0
        && m["measured_rejection_db"] >= 96.0
        && m["injected"] == 100.0
        && m["clicks"] == m["injected"]
        && m["matched"] == m["injected"]
        && m["false_clicks"] == 0.0;
    check(
        pass,
        format!(
            "cascade rejection {:.1} dB (measured {:.1} dB); {} avalanches, {} clicks, {} matched, {} false, {:.1} s",
            m["rejection_db"],
            m["measured_rejection_db"],
            m["injected"],
            m["clicks"],
            m["matched"],
            m["false_clicks"],
            el.as_secs_f64()
        ),
    )
}

fn determinism() -> Check {
    let mut ghz = load("ghz4_compare.toml");
    ghz.ghz4.pulses = 20_000_000;
    ghz.source.mu = 0.1;
    let mut chr = load("characterize_all.toml");
    chr.characterize.n_pulses = 1_000_000;
    chr.characterize.dark_run_gates = Some(50_000_000);
    let mut sca = load("scaling.toml");
    sca.scaling.max_pulses = 50_000_000;
    let mut gc = load("gatechain.toml");
    gc.gatechain.n_gates = 2000;
    let mut differing = Vec::new();
    for (scenario, cfg) in [
        (Scenario::Ghz4, ghz),
        (Scenario::Characterize, chr),
        (Scenario::Scaling, sca),
        (Scenario::Gatechain, gc),
    ] {
        let (a, _) = run(&cfg, scenario, 1);
        let (b, _) = run(&cfg, scenario, 8);
        if a.metrics != b.metrics || a.config_hash != b.config_hash {
            differing.push(scenario.name());
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            "all four scenarios give identical metrics at 1 and 8 workers".to_string()
        } else {
            format!("metrics differ between 1 and 8 workers for {differing:?}")
        },
    )
}

fn main() {
    let (cfg, noisy, el, quiet) = ghz_runs();
    let results = [
        ("1 ten-photon ratio", ten_photon_ratio()),
        ("2 four-fold improvement", fourfold_improvement(&cfg, &noisy, el)),
        ("3 visibility calibration", visibility_calibration(&noisy, &quiet)),
        ("4 characterization closure", characterization_closure()),
        ("5 ideal GHZ analytics", ideal_ghz()),
        ("6 rate formula closure", eq1_closure()),
        ("7 gate-chain extraction", gate_chain()),
        ("8 determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, c) in &results {
        println!("{} criterion {name}: {}", if c.pass { "PASS" } else { "FAIL" }, c.detail);
        failed += usize::from(!c.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
