//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 1-3 train full matrices and dominate the runtime.
//!
//! `MDLC_ACCEPTANCE_DIR` keeps the training output under that directory
//! instead of a temporary one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use mdlc_cli::config::RunConfig;
use mdlc_cli::matrix::CellStatus;
use mdlc_cli::verify::{ftrl_sim, kl_oracle, parse_grid, shrinkage_verify, DEFAULT_NORMS, KL_ORACLE_SAMPLES};
use mdlc_cli::{run_matrix, summarize_phase, SummaryTable};
use mdlc_core::agents::MethodKind;
use mdlc_core::checks::{environment_conformance, gradient_checks, GRADIENT_TOLERANCE};
use mdlc_core::ftrl::FtrlConfig;
use mdlc_core::shrinkage::{axis_mean, mse_monte_carlo, sure_risk, Estimator, PriorKind, Verdict};
use mdlc_core::{Result, RngStream};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const SEEDS: &str = "0..4";

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn out_dir(name: &str) -> (PathBuf, Option<tempfile::TempDir>) {
    match std::env::var_os("MDLC_ACCEPTANCE_DIR") {
        Some(root) => (PathBuf::from(root).join(name), None),
        None => {
            let t = tempfile::tempdir().expect("temporary directory");
            (t.path().to_path_buf(), Some(t))
        }
    }
}

fn train(experiment: &str, scale: f64, methods: &str, dir: &Path) -> Result<SummaryTable> {
    let cfg = RunConfig::from_value(&serde_json::json!({
        "experiment": experiment,
        "methods": methods,
        "seeds": SEEDS,
        "scale": scale,
        "parallelism": workers(),
    }))?;
    let manifest = run_matrix(&cfg, dir)?;
    if let Some(c) = manifest.cells.iter().find(|c| c.status == CellStatus::Failed) {
        return Err(mdlc_core::Error::contract(format!(
            "{} seed {} failed: {}",
            c.method,
            c.seed,
            c.error.as_deref().unwrap_or("")
        )));
    }
    summarize_phase(dir, 2)
}

/// (mean, se) of one method's phase-2 cumulative regret.
fn stats(t: &SummaryTable, m: MethodKind) -> (f64, f64) {
    t.row(m).map(|r| (r.mean, r.se)).unwrap_or((f64::NAN, f64::NAN))
}

fn ordering(t: &SummaryTable, with_po: bool) -> Outcome {
    let (md, md_se) = stats(t, MethodKind::Mdlc);
    let (rpo, rpo_se) = stats(t, MethodKind::Rpo);
    let gap_se = (md_se.powi(2) + rpo_se.powi(2)).sqrt();
    let beats_rpo = rpo - md >= gap_se;
    let mut detail = format!("MDL-C {md:.4e} ± {md_se:.2e}, RPO {rpo:.4e} ± {rpo_se:.2e}, gap {:.2} SE", (rpo - md) / gap_se);
    let mut pass = beats_rpo;
    if with_po {
        let (po, po_se) = stats(t, MethodKind::Po);
        let po_gap = (md_se.powi(2) + po_se.powi(2)).sqrt();
        let near_po = md <= po + po_gap;
        detail += &format!(", PO {po:.4e} ± {po_se:.2e}, MDL-C within PO + 1 SE: {near_po}");
        pass &= near_po;
    }
    outcome(pass, detail)
}

/// Gate values at the last logged phase-1 episode, per seed.
fn phase1_end_gates(dir: &Path, method: MethodKind) -> Result<BTreeMap<u64, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !(name.starts_with(&format!("{}_seed", method.name())) && name.ends_with("_gates.csv")) {
            continue;
        }
        let text = fs::read_to_string(&p)?;
        let mut last: Option<(u64, usize)> = None;
        let mut gates: Vec<f64> = Vec::new();
        for line in text.lines().skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            let bad = || mdlc_core::Error::contract(format!("{name}: malformed gate row"));
            if c.len() != 6 || c[2] != "1" {
                continue;
            }
            let seed: u64 = c[1].parse().map_err(|_| bad())?;
            let ep: usize = c[3].parse().map_err(|_| bad())?;
            let (idx, v): (usize, f64) = (c[4].parse().map_err(|_| bad())?, c[5].parse().map_err(|_| bad())?);
            if last.map_or(true, |(_, e)| ep > e) {
                last = Some((seed, ep));
                gates.clear();
            }
            if last == Some((seed, ep)) {
                if gates.len() <= idx {
                    gates.resize(idx + 1, f64::NAN);
                }
                gates[idx] = v;
            }
        }
        if let Some((seed, _)) = last {
            out.insert(seed, gates);
        }
    }
    Ok(out)
}

fn gate_signature(dir: &Path) -> Result<Outcome> {
    let mdlc = phase1_end_gates(dir, MethodKind::Mdlc)?;
    let rpo = phase1_end_gates(dir, MethodKind::Rpo)?;
    let ok_mdlc = mdlc.values().filter(|g| g.len() == 16 && g[15] < 0.2 && g[14] < 0.2 && g[0] > 0.8).count();
    let ok_rpo = rpo.values().filter(|g| g.len() == 16 && g[15] > 0.5).count();
    let fmt = |m: &BTreeMap<u64, Vec<f64>>| {
        m.iter()
            .map(|(s, g)| format!("s{s}[{:.2},{:.2},{:.2}]", g.first().unwrap_or(&f64::NAN), g.get(14).unwrap_or(&f64::NAN), g.get(15).unwrap_or(&f64::NAN)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok(outcome(
        ok_mdlc >= 4 && ok_rpo >= 4,
        format!(
            "MDL-C {ok_mdlc}/{} seeds, RPO goal gate open {ok_rpo}/{} seeds; gates [0,14,15] MDL-C {} | RPO {}",
            mdlc.len(),
            rpo.len(),
            fmt(&mdlc),
            fmt(&rpo)
        ),
    ))
}

fn estimator_risks() -> Result<Outcome> {
    let n = 100_000;
    let mut notes = Vec::new();
    let mut pass = true;
    for (i, d) in [2usize, 5, 10, 20].into_iter().enumerate() {
        let r = mse_monte_carlo(Estimator::MaximumLikelihood, &axis_mean(d, 1.0), n, &mut RngStream::new(40 + i as u64))?;
        let ok = (r.mse - d as f64).abs() <= 3.0 * r.ci;
        pass &= ok;
        notes.push(format!("ML d{d} {:.3}", r.mse));
    }
    let js = mse_monte_carlo(Estimator::JamesStein, &axis_mean(10, 0.0), n, &mut RngStream::new(50))?;
    let ok = (js.mse - 2.0).abs() <= js.ci;
    pass &= ok;
    notes.push(format!("JS0 {:.3} ± {:.3}", js.mse, js.ci));
    let mut worst: f64 = 0.0;
    for (i, est) in [Estimator::JamesStein, Estimator::Bayes { prior: PriorKind::Jeffreys }].into_iter().enumerate() {
        for (j, norm) in [0.5, 2.0, 5.0].into_iter().enumerate() {
            let seed = 60 + (i * 3 + j) as u64;
            let mc = mse_monte_carlo(est, &axis_mean(6, norm), n, &mut RngStream::new(seed))?;
            let sure = sure_risk(est, &axis_mean(6, norm), n, &mut RngStream::new(seed + 100))?;
            let ratio = (mc.mse - sure.mse).abs() / (mc.ci + sure.ci);
            worst = worst.max(ratio);
        }
    }
    pass &= worst <= 1.0;
    notes.push(format!("SURE vs MC worst {worst:.2} combined CI"));
    Ok(outcome(pass, notes.join(", ")))
}

fn domination() -> Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    for (prior, d) in [(PriorKind::Jeffreys, 6), (PriorKind::HalfCauchy, 12)] {
        let t = shrinkage_verify(prior, d, &DEFAULT_NORMS, 100_000, 0)?;
        pass &= t.verdict == Verdict::Dominates;
        let worst = t.rows.iter().map(|r| r.mse + r.ci).fold(f64::MIN, f64::max);
        notes.push(format!("{prior} d{d} {} (max upper bound {worst:.3} < {d})", t.verdict.as_str()));
    }
    Ok(outcome(pass, notes.join(", ")))
}

fn kl_fidelity() -> Result<Outcome> {
    let rows = kl_oracle(&parse_grid("-4:4:0.5")?, KL_ORACLE_SAMPLES, 0)?;
    let worst = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    let monotone = rows.iter().all(|r| r.monotone);
    Ok(outcome(worst <= 0.05 && monotone, format!("max |approx - MC| {worst:.4} over {} points, monotone {monotone}", rows.len())))
}

fn ftrl_rate() -> Result<Outcome> {
    let cfg = FtrlConfig::default();
    let c = ftrl_sim(&cfg, &[4, 16, 64], 10)?;
    let bound = (1.0 / cfg.epsilon).ln();
    let pass = (-0.75..=-0.25).contains(&c.slope) && c.max_state_loss <= bound;
    let means: Vec<String> = c.points.iter().map(|p| format!("K{} {:.3}", p.k, p.mean)).collect();
    Ok(outcome(
        pass,
        format!("slope {:.3}, max per-state loss {:.3} (bound {bound:.3}), {}", c.slope, c.max_state_loss, means.join(" ")),
    ))
}

fn numeric_substrate() -> Result<Outcome> {
    let report = gradient_checks()?;
    let worst = report
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("non-empty report");
    let grads_ok = report.iter().all(|c| c.max_rel_error < GRADIENT_TOLERANCE);

    let cfg = RunConfig::from_value(&serde_json::json!({
        "methods": MethodKind::ALL.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "seeds": "0..1",
        "episodes": [15, 15],
        "parallelism": workers(),
    }))?;
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    run_matrix(&cfg, a.path())?;
    run_matrix(&cfg, b.path())?;
    let mut compared = 0;
    let mut identical = true;
    for entry in fs::read_dir(a.path())? {
        let p = entry?.path();
        let name = p.file_name().expect("file name").to_owned();
        if p.extension().is_some_and(|e| e == "csv") {
            compared += 1;
            identical &= fs::read(&p)? == fs::read(b.path().join(&name))?;
        }
    }
    Ok(outcome(
        grads_ok && identical && compared == 2 * 2 * MethodKind::ALL.len(),
        format!(
            "{} gradient checks, worst {} {:.2e}; {compared} CSVs bit-identical across reruns: {identical}",
            report.len(),
            worst.name,
            worst.max_rel_error
        ),
    ))
}

fn environment() -> Result<Outcome> {
    let r = environment_conformance()?;
    Ok(outcome(
        r.passed() && r.free_cells == 104,
        format!("{} free cells, {} transitions checked, {} mismatches {:?}", r.free_cells, r.cases, r.mismatches.len(), r.mismatches.first()),
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u8, name: &str, t0: Instant, r: Result<Outcome>| {
        let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += usize::from(!o.pass);
        println!(
            "criterion {id} ({name}): {} [{:.0}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64(),
            o.detail
        );
    };

    let t = Instant::now();
    report(9, "environment conformance", t, environment());
    let t = Instant::now();
    report(8, "numeric substrate", t, numeric_substrate());
    let t = Instant::now();
    report(4, "estimator risks", t, estimator_risks());
    let t = Instant::now();
    report(5, "domination sweeps", t, domination());
    let t = Instant::now();
    report(6, "KL fidelity", t, kl_fidelity());
    let t = Instant::now();
    report(7, "FTRL rate", t, ftrl_rate());

    let t = Instant::now();
    let (gg_dir, _gg_tmp) = out_dir("goal-generalization");
    let gg = train("goal-generalization", 0.25, "PO,RPO,MDLC", &gg_dir);
    let gg_time = t.elapsed();
    let gates = gg.as_ref().map_err(|e| mdlc_core::Error::contract(e.to_string())).and_then(|_| gate_signature(&gg_dir));
    report(1, "goal-generalization regret ordering", t, gg.map(|s| ordering(&s, true)));
    let t3 = Instant::now() - gg_time;
    report(3, "gate signature", t3, gates);

    let t = Instant::now();
    let (cc_dir, _cc_tmp) = out_dir("contingency-change");
    let cc = train("contingency-change", 0.5, "RPO,MDLC", &cc_dir);
    report(2, "contingency-change regret ordering", t, cc.map(|s| ordering(&s, false)));

    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
