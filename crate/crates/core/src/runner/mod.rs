//! Scenario runner: resolves a validated config, runs one scenario on a
//! worker pool of the requested size, and writes CSV tables plus a JSON
//! summary. Metrics never depend on the worker count.

pub mod ghz;
pub mod scaling;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::characterization::{characterize, CharacterizationReport};
use crate::coincidence::{
    analytic_pattern_probabilities, eq1_estimate, improvement_ratio, visibility, visibility_stderr, Eq1Params,
    PatternCounts, PatternMapping,
};
use crate::config::{parse_compare, ExperimentConfig, Scenario, SetName};
use crate::detector::table::{self, DetectorKind};
use crate::detector::{DetectorId, DetectorParams, GateClock};
use crate::gatechain::{self, run_extraction};
use crate::polarization::{SignPattern, WaveplateSetting};
use crate::rng::{Domain, StreamKey};
use crate::{Error, Result};
use ghz::{simulate_ghz4, Ghz4Outcome, Ghz4Setup};
use scaling::{pulses_for, simulate_scaling};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Worker threads; all available cores when `None`.
    pub workers: Option<usize>,
    /// Overrides `ghz4.compare`.
    pub compare: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub elapsed_s: f64,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
}

/// A CSV table: file name, header and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Everything a scenario produces besides timing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOutput {
    pub metrics: BTreeMap<String, f64>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
    pub report: String,
}

impl ScenarioOutput {
    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }
}

/// The config with command-line overrides applied.
pub fn effective_config(cfg: &ExperimentConfig, scenario: Scenario, opts: &RunOptions) -> ExperimentConfig {
    let mut c = cfg.clone();
    if opts.seed.is_some() {
        c.seed = opts.seed;
    }
    if opts.compare.is_some() {
        c.ghz4.compare = opts.compare.clone();
    }
    if let Some(d) = &opts.out_dir {
        c.output.dir = Some(d.display().to_string());
    }
    c.scenario = Some(scenario);
    c
}

/// SHA-256 of the canonical JSON form, excluding the output location.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output.dir = None;
    let json = serde_json::to_string(&c).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Validates, runs and (when an output directory is set) writes artifacts.
pub fn run(cfg: &ExperimentConfig, scenario: Scenario, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = effective_config(cfg, scenario, opts);
    let issues = cfg.validate(scenario);
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let workers = opts
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::param("workers", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    let t0 = Instant::now();
    let out = pool.install(|| run_scenario(&cfg, scenario))?;
    let elapsed_s = t0.elapsed().as_secs_f64();

    let mut summary = RunSummary {
        scenario: scenario.name().to_string(),
        config_hash: config_hash(&cfg),
        seed: cfg.seed.expect("validated"),
        workers,
        elapsed_s,
        metrics: out.metrics,
        artifacts: Vec::new(),
        notes: out.notes,
    };
    if let Some(dir) = cfg.output.dir.as_deref() {
        write_artifacts(Path::new(dir), &out.tables, &out.report, &mut summary)?;
    }
    Ok(summary)
}

fn write_artifacts(dir: &Path, tables: &[Table], report: &str, summary: &mut RunSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in tables {
        std::fs::write(dir.join(&t.name), t.to_csv())?;
        summary.artifacts.push(t.name.clone());
    }
    if !report.is_empty() {
        std::fs::write(dir.join("summary.txt"), report)?;
        summary.artifacts.push("summary.txt".into());
    }
    summary.artifacts.push("summary.json".into());
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Runs a validated config on the current rayon pool.
pub fn run_scenario(cfg: &ExperimentConfig, scenario: Scenario) -> Result<ScenarioOutput> {
    let key = StreamKey::root(cfg.seed.ok_or_else(|| Error::param("seed", "required"))?);
    match scenario {
        Scenario::Ghz4 => run_ghz4(cfg, key),
        Scenario::Characterize => run_characterize(cfg, key),
        Scenario::Scaling => run_scaling(cfg, key),
        Scenario::Gatechain => run_gatechain(cfg, key),
    }
}

fn set_index(s: SetName) -> u64 {
    match s {
        SetName::Spcm => 1,
        SetName::Swg => 2,
        SetName::Custom => 3,
    }
}

/// Setup of one comparison arm. Arms are keyed by set name, so a set gives
/// the same counts alone or inside a comparison.
pub fn ghz4_arm(cfg: &ExperimentConfig, set: SetName, key: StreamKey) -> Result<(Ghz4Setup, StreamKey)> {
    let (detectors, clock) = cfg.detectors.resolve(set)?;
    let mut source = cfg.source;
    if let Some(&v) = cfg.ghz4.arm_coherence.get(&set) {
        source.coherence = v;
    }
    let g = &cfg.ghz4;
    let mut setup = Ghz4Setup::new(source, detectors, clock, g.pulses);
    setup.coupling = g.coupling;
    setup.window_gates = g.window_gates;
    setup.analyzers = g.analyzers.unwrap_or([WaveplateSetting::pm_basis(); 4]);
    if !g.noise {
        setup = setup.without_noise();
    }
    Ok((setup, key.derive(Domain::Arm, set_index(set))))
}

fn pde_map(p: &[DetectorParams]) -> BTreeMap<DetectorId, f64> {
    p.iter().enumerate().map(|(i, d)| (DetectorId::new(i as u8 + 1), d.pde)).collect()
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn run_ghz4(cfg: &ExperimentConfig, key: StreamKey) -> Result<ScenarioOutput> {
    let sets: Vec<SetName> = match &cfg.ghz4.compare {
        Some(c) => {
            let (a, b) = parse_compare(c)?;
            vec![a, b]
        }
        None => vec![cfg.detectors.set],
    };
    let mut out = ScenarioOutput::default();
    let mut counts_t = Table::new(
        "ghz4_counts.csv",
        &["set", "pattern", "detectors", "count", "per_minute", "analytic_conditional"],
    );
    let mut det_t = Table::new(
        "ghz4_detectors.csv",
        &["set", "detector", "label", "pde", "dcr_cps", "p_ap", "photon", "dark", "afterpulse"],
    );
    let mapping = PatternMapping::declared();
    let mut arms: Vec<(SetName, Ghz4Setup, Ghz4Outcome)> = Vec::new();
    for &set in &sets {
        let (setup, arm_key) = ghz4_arm(cfg, set, key)?;
        let o = simulate_ghz4(&setup, arm_key)?;
        let name = set.name();
        let analytic = analytic_pattern_probabilities(setup.source.coherence)?;
        for pat in PatternCounts::PATTERNS {
            let sp: SignPattern = pat.parse()?;
            let dets = mapping
                .detectors_for(&sp)
                .unwrap_or_default()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            counts_t.push(vec![
                name.into(),
                pat.into(),
                dets,
                o.counts.get(pat).to_string(),
                f(o.counts.per_minute(pat)),
                f(analytic.get(&sp).copied().unwrap_or(0.0)),
            ]);
            out.metric(format!("{name}.count.{pat}"), o.counts.get(pat) as f64);
        }
        for (i, (p, t)) in setup.detectors.iter().zip(&o.tallies).enumerate() {
            det_t.push(vec![
                name.into(),
                format!("D{}", i + 1),
                p.label.clone(),
                f(p.pde),
                f(p.dcr_cps),
                f(p.p_ap),
                t.photon.to_string(),
                t.dark.to_string(),
                t.afterpulse.to_string(),
            ]);
        }
        out.metric(format!("{name}.fourfolds"), o.counts.fourfolds() as f64);
        out.metric(format!("{name}.multi_click"), o.counts.multi_click_rejects as f64);
        out.metric(format!("{name}.truncated"), o.truncated as f64);
        out.metric(format!("{name}.coherence"), setup.source.coherence);
        match (visibility(&o.counts), visibility_stderr(&o.counts)) {
            (Ok(v), Ok(se)) => {
                out.metric(format!("{name}.visibility"), v);
                out.metric(format!("{name}.visibility_se"), se);
            }
            _ => out.notes.push(format!("{name}: no four-fold counts, visibility undefined")),
        }
        if o.truncated > 0 {
            out.notes.push(format!(
                "{name}: {} pulses exceeded {} pairs and were simulated as vacuum",
                o.truncated, setup.source.n_max
            ));
        }
        arms.push((set, setup, o));
    }

    let mut report = String::new();
    for (set, setup, o) in &arms {
        let _ = writeln!(
            report,
            "{:<6} pulses {}  ++++ {}  +-++ {}  ++-+ {}  +--+ {}  V = {}",
            set.name(),
            setup.pulses,
            o.counts.get("++++"),
            o.counts.get("+-++"),
            o.counts.get("++-+"),
            o.counts.get("+--+"),
            out.metrics
                .get(&format!("{}.visibility", set.name()))
                .map_or("n/a".to_string(), |v| format!("{v:.4}")),
        );
    }
    if let [(sa, a_setup, a), (sb, b_setup, b)] = arms.as_slice() {
        let mut ratio_t = Table::new(
            "ghz4_ratio.csv",
            &["pattern", "count_a", "count_b", "ratio", "ratio_se", "analytic", "z"],
        );
        let (pa, pb) = (pde_map(&a_setup.detectors), pde_map(&b_setup.detectors));
        for pat in ["++++", "+--+"] {
            let dets = mapping.detectors_for(&pat.parse()?).unwrap_or_default();
            let analytic = improvement_ratio(&pa, &pb, &dets)?;
            let (na, nb) = (a.counts.get(pat) as f64, b.counts.get(pat) as f64);
            out.metric(format!("analytic_ratio.{pat}"), analytic);
            if na > 0.0 && nb > 0.0 {
                // equal pulse numbers, so the count ratio is the rate ratio
                let ratio = (nb / b_setup.pulses as f64) / (na / a_setup.pulses as f64);
                let se = ratio * (1.0 / na + 1.0 / nb).sqrt();
                let z = (ratio - analytic) / se;
                out.metric(format!("ratio.{pat}"), ratio);
                out.metric(format!("ratio_se.{pat}"), se);
                out.metric(format!("ratio_z.{pat}"), z);
                ratio_t.push(vec![pat.into(), f(na), f(nb), f(ratio), f(se), f(analytic), f(z)]);
                let _ = writeln!(
                    report,
                    "{pat} rate ratio {}/{} = {ratio:.4} ± {se:.4}  (PDE product {analytic:.4}, z = {z:+.2})",
                    sb.name(),
                    sa.name()
                );
            }
        }
        out.tables.push(ratio_t);
    }
    out.tables.insert(0, counts_t);
    out.tables.insert(1, det_t);
    out.report = report;
    Ok(out)
}

/// A detector to characterize with its clock.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizeItem {
    pub params: DetectorParams,
    pub clock: GateClock,
}

/// Expands the configured detector names into parameter sets.
pub fn characterize_items(cfg: &ExperimentConfig) -> Result<Vec<CharacterizeItem>> {
    let names = if cfg.characterize.detectors.is_empty() {
        vec![cfg.detectors.set.name().to_string()]
    } else {
        cfg.characterize.detectors.clone()
    };
    let mut items = Vec::new();
    let mut push = |mut params: DetectorParams, clock: GateClock, bundled: bool| {
        if bundled {
            if let Some(d) = cfg.detectors.ap_decay_gates {
                params.ap_decay_gates = d;
            }
        }
        items.push(CharacterizeItem { params, clock });
    };
    for name in &names {
        match name.as_str() {
            "custom" => {
                let clock = cfg.detectors.custom_clock.unwrap_or_else(GateClock::swg);
                for p in &cfg.detectors.custom {
                    push(p.clone(), clock, false);
                }
            }
            n => match DetectorKind::parse(n) {
                Some(kind) => {
                    for p in table::detector_set(kind) {
                        push(p, kind.clock(), true);
                    }
                }
                None => {
                    let (kind, p) =
                        table::lookup(n).ok_or_else(|| Error::param("characterize.detectors", format!("unknown detector {n:?}")))?;
                    push(p, kind.clock(), true);
                }
            },
        }
    }
    Ok(items)
}

fn run_characterize(cfg: &ExperimentConfig, key: StreamKey) -> Result<ScenarioOutput> {
    let items = characterize_items(cfg)?;
    let setup = cfg.characterize.setup();
    let reports: Vec<CharacterizationReport> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| characterize(&it.params, &it.clock, &setup, key.derive(Domain::Arm, 100 + i as u64)))
        .collect::<Result<_>>()?;

    let mut out = ScenarioOutput::default();
    let mut t = Table::new(
        "characterization.csv",
        &[
            "label", "pde_true", "pde", "pde_se", "pde_z", "dcr_true", "dcr", "dcr_se", "dcr_z", "dcr_raw", "p_ap_true",
            "p_ap", "p_ap_se", "p_ap_z", "p_ap_clipped",
        ],
    );
    let mut h = Table::new("histogram.csv", &["label", "offset", "clicks", "live_gates"]);
    let mut report = String::new();
    let mut max_z: f64 = 0.0;
    for (it, r) in items.iter().zip(&reports) {
        let p = &it.params;
        let (zp, zd, za) = (r.pde.z(p.pde), r.dcr_cps.z(p.dcr_cps), r.p_ap.z(p.p_ap));
        t.push(vec![
            r.label.clone(),
            f(p.pde),
            f(r.pde.value),
            f(r.pde.stderr),
            f(zp),
            f(p.dcr_cps),
            f(r.dcr_cps.value),
            f(r.dcr_cps.stderr),
            f(zd),
            f(r.dcr_raw_cps.value),
            f(p.p_ap),
            f(r.p_ap.value),
            f(r.p_ap.stderr),
            f(za),
            r.p_ap_clipped.to_string(),
        ]);
        for (k, (c, l)) in r.histogram.clicks.iter().zip(&r.histogram.live_gates).enumerate() {
            h.push(vec![r.label.clone(), k.to_string(), c.to_string(), l.to_string()]);
        }
        for (name, e, z) in [("pde", r.pde, zp), ("dcr_cps", r.dcr_cps, zd), ("p_ap", r.p_ap, za)] {
            out.metric(format!("{}.{name}", r.label), e.value);
            out.metric(format!("{}.{name}_se", r.label), e.stderr);
            out.metric(format!("{}.{name}_z", r.label), z);
        }
        if r.p_ap_clipped {
            out.notes.push(format!("{}: afterpulse estimate clipped at zero", r.label));
        }
        max_z = max_z.max(r.max_z(p));
        let _ = writeln!(
            report,
            "{:<12} PDE {:.4} ± {:.4} (true {:.3})  DCR {:.1} ± {:.1} (true {:.0})  P_ap {:.4} ± {:.4} (true {:.3})",
            r.label, r.pde.value, r.pde.stderr, p.pde, r.dcr_cps.value, r.dcr_cps.stderr, p.dcr_cps, r.p_ap.value,
            r.p_ap.stderr, p.p_ap
        );
    }
    out.metric("max_z", max_z);
    out.metric("detectors", items.len() as f64);
    let _ = writeln!(report, "largest deviation: {max_z:.2} standard errors");
    out.tables = vec![t, h];
    out.report = report;
    Ok(out)
}

fn run_scaling(cfg: &ExperimentConfig, key: StreamKey) -> Result<ScenarioOutput> {
    let s = &cfg.scaling;
    let mut out = ScenarioOutput::default();
    let mut analytic = Table::new("scaling_analytic.csv", &["n", "mu", "eta", "rate", "ratio_at_factor", "ratio_at_2x"]);
    for n in 1..=s.analytic_n_max {
        for &mu in &s.mu {
            for &eta in &s.eta {
                let p = Eq1Params { f: s.f_hz, mu, n, eta };
                let base = eq1_estimate(&p);
                let ratio = |k: f64| eq1_estimate(&Eq1Params { eta: (eta * k).min(1.0), ..p }) / base;
                analytic.push(vec![n.to_string(), f(mu), f(eta), f(base), f(ratio(s.ratio_factor)), f(ratio(2.0))]);
            }
        }
        // the ratio does not depend on μ or η (as long as η·factor ≤ 1)
        out.metric(format!("eq1_ratio.n{n}"), s.ratio_factor.powi(2 * n as i32));
    }
    let mut mc = Table::new(
        "scaling_mc.csv",
        &["n", "mu", "eta", "pulses", "counts", "expected", "rate", "rate_se", "analytic_rate", "z"],
    );
    let mut report = String::new();
    let mut max_z: f64 = 0.0;
    let mut idx = 0u64;
    for &n in &s.mc_n {
        for &mu in &s.mu {
            for &eta in &s.eta {
                let p = Eq1Params { f: s.f_hz, mu, n, eta };
                let pulses = pulses_for(&p, s.target_counts, s.max_pulses);
                let r = simulate_scaling(&p, pulses, key.derive(Domain::Arm, 200 + idx))?;
                idx += 1;
                mc.push(vec![
                    n.to_string(),
                    f(mu),
                    f(eta),
                    pulses.to_string(),
                    r.counts.to_string(),
                    f(r.expected),
                    f(r.rate),
                    f(r.rate_se),
                    f(r.analytic_rate),
                    f(r.z),
                ]);
                out.metric(format!("mc.n{n}.mu{mu}.eta{eta}.z"), r.z);
                out.metric(format!("mc.n{n}.mu{mu}.eta{eta}.rate"), r.rate);
                max_z = max_z.max(r.z.abs());
                let _ = writeln!(
                    report,
                    "n={n} μ={mu} η={eta}: {:.4} ± {:.4} /s vs f·μⁿ·η²ⁿ = {:.4} /s (z = {:+.2}, {} pulses)",
                    r.rate, r.rate_se, r.analytic_rate, r.z, pulses
                );
                if pulses == s.max_pulses {
                    out.notes.push(format!("n={n} μ={mu} η={eta}: pulse budget capped at {pulses}"));
                }
            }
        }
    }
    out.metric("max_abs_z", max_z);
    out.tables = vec![analytic, mc];
    out.report = report;
    Ok(out)
}

fn run_gatechain(cfg: &ExperimentConfig, key: StreamKey) -> Result<ScenarioOutput> {
    let g = &cfg.gatechain;
    let keep = g.excerpt_gates > 0;
    let r = run_extraction(&g.chain, g.n_gates, g.gates_per_avalanche, key, keep)?;
    let mut out = ScenarioOutput::default();
    for (k, v) in [
        ("injected", r.injected_s.len() as f64),
        ("clicks", r.clicks_s.len() as f64),
        ("matched", r.matched as f64),
        ("missed", r.missed as f64),
        ("false_clicks", r.false_clicks as f64),
        ("rejection_db", r.rejection_db),
        ("measured_rejection_db", r.measured_rejection_db),
        ("feedthrough_peak_before_v", r.feedthrough_peak_before_v),
        ("feedthrough_peak_after_v", r.feedthrough_peak_after_v),
        ("avalanche_peak_after_v", r.avalanche_peak_after_v),
    ] {
        out.metric(k, v);
    }
    for (i, t) in r.filter_taps.iter().enumerate() {
        out.metric(format!("taps.{i}"), *t as f64);
    }

    let chain = gatechain::design_chain(&g.chain)?;
    let mut header = vec!["freq_hz".to_string()];
    header.extend((0..chain.len()).map(|i| format!("filter{i}_db")));
    header.push("cascade_db".into());
    let mut resp = Table {
        name: "response.csv".into(),
        header,
        rows: Vec::new(),
    };
    let top = (g.chain.sample_rate_hz / 2.0).min(1e9);
    let mut fq = 0.0;
    while fq <= top {
        let mut row = vec![f(fq)];
        row.extend(chain.iter().map(|c| f(c.magnitude_db(fq))));
        row.push(f(gatechain::cascade_response_db(&chain, fq)));
        resp.rows.push(row);
        fq += 1e6;
    }
    let mut clicks = Table::new("clicks.csv", &["kind", "time_s"]);
    for t in &r.injected_s {
        clicks.push(vec!["injected".into(), f(*t)]);
    }
    for t in &r.clicks_s {
        clicks.push(vec!["click".into(), f(*t)]);
    }
    out.tables = vec![resp, clicks];
    if let Some(st) = &r.stages {
        let n = ((g.excerpt_gates as f64 * g.chain.gate_period_s() * g.chain.sample_rate_hz) as usize).min(st.raw.len());
        let mut t = Table::new("stages.csv", &["time_s", "gate_v", "detector_v", "filtered_v"]);
        for i in 0..n {
            t.push(vec![f(st.raw.time(i)), f(st.gate.samples[i]), f(st.raw.samples[i]), f(st.filtered.samples[i])]);
        }
        out.tables.push(t);
    }
    out.report = format!(
        "{} gates, {} avalanches injected, {} clicks: {} matched, {} missed, {} false\n\
         cascade rejection at the gate frequency {:.1} dB (measured {:.1} dB), taps {:?}\n\
         feedthrough peak {:.3} V -> {:.2e} V, avalanche peak after filtering {:.3} V\n",
        r.n_gates,
        r.injected_s.len(),
        r.clicks_s.len(),
        r.matched,
        r.missed,
        r.false_clicks,
        r.rejection_db,
        r.measured_rejection_db,
        r.filter_taps,
        r.feedthrough_peak_before_v,
        r.feedthrough_peak_after_v,
        r.avalanche_peak_after_v,
    );
    Ok(out)
}
