//! Verification subcommands: shrinkage risk sweeps, FTRL regret, KL oracle.

use std::fmt::Write as _;

use mdlc_core::ftrl::{regret_experiment, FtrlConfig, RegretCurve};
use mdlc_core::policy::{kl_oracle_table, KlOracleRow};
use mdlc_core::shrinkage::{domination_sweep, DominationTable, PriorKind};
use mdlc_core::{Error, Result, RngStream};

pub const SHRINKAGE_HEADER: &str = "estimator,prior,d,mean-norm,n,mse,ci,verdict";
pub const FTRL_HEADER: &str = "K,seed,avg-regret,barycenter-loss,prior-kl";
pub const KL_HEADER: &str = "log_alpha,approx_kl,mc_kl,abs_diff,monotone";

pub const DEFAULT_NORMS: [f64; 5] = [0.0, 1.0, 2.0, 5.0, 10.0];

/// Parses `lo:hi:step` into an inclusive grid.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::config(format!("grid: expected lo:hi:step, got '{text}'"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [lo, hi, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || hi < lo {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::config(format!("{what}: cannot parse '{s}'"))))
        .collect()
}

pub fn shrinkage_verify(prior: PriorKind, d: usize, norms: &[f64], n: usize, seed: u64) -> Result<DominationTable> {
    domination_sweep(prior, d, norms, n, &RngStream::new(seed).derive("shrinkage"))
}

pub fn shrinkage_csv(t: &DominationTable) -> String {
    let mut s = format!("{SHRINKAGE_HEADER}\n");
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.estimator,
            t.prior,
            r.d,
            r.mean_norm,
            r.n,
            r.mse,
            r.ci,
            t.verdict.as_str()
        );
    }
    s
}

pub fn ftrl_sim(cfg: &FtrlConfig, ks: &[usize], seeds: u64) -> Result<RegretCurve> {
    let seeds: Vec<u64> = (0..seeds).collect();
    regret_experiment(cfg, ks, &seeds)
}

pub fn ftrl_csv(c: &RegretCurve) -> String {
    let mut s = format!("{FTRL_HEADER}\n");
    for r in &c.runs {
        let _ = writeln!(s, "{},{},{},{},{}", r.k, r.seed, r.avg_regret, r.barycenter_loss, r.prior_kl);
    }
    for p in &c.points {
        let _ = writeln!(s, "{},mean,{},,", p.k, p.mean);
    }
    let _ = writeln!(s, "all,slope,{},,", c.slope);
    s
}

pub const KL_ORACLE_SAMPLES: usize = 10_000_000;

pub fn kl_oracle(grid: &[f64], samples: usize, seed: u64) -> Result<Vec<KlOracleRow>> {
    kl_oracle_table(grid, samples, seed)
}

pub fn kl_csv(rows: &[KlOracleRow]) -> String {
    let mut s = format!("{KL_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.log_alpha, r.approx, r.monte_carlo, r.abs_diff, r.monotone);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec() {
        let g = parse_grid("-4:4:0.5").unwrap();
        assert_eq!(g.len(), 17);
        assert_eq!((g[0], g[16]), (-4.0, 4.0));
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("a:b").is_err());
        assert_eq!(parse_list::<usize>("4,16,64", "k").unwrap(), vec![4, 16, 64]);
    }
}
