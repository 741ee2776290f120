//! Closed-form bandwidth next to the ledger of a simulated run.

use std::fmt::Write;

use dbp_eq::dbpnet::{
    bandwidth, make_dus, run_bcd_daisy, run_bdac, run_cdr_star, run_centralized_star, run_lrd_daisy, run_sdr_star,
    DbpError, Fabric, Topology,
};
use dbp_eq::equalizers::{BcdStop, RankRule};
use dbp_eq::scenario::{gen_realization, gen_symbols};
use dbp_eq::{Algorithm, SystemConfig};
use num_rational::Ratio;

pub struct Row {
    pub label: String,
    pub topology: &'static str,
    pub formula: Ratio<u64>,
    /// Per-symbol average from the fabric, or why the run failed.
    pub ledger: Result<Ratio<u64>, String>,
}

impl Row {
    pub fn matches(&self) -> bool {
        self.ledger.as_ref().is_ok_and(|l| *l == self.formula)
    }
}

/// Runs every protocol once on trial 0 and pairs its ledger with the
/// closed form.
pub fn table(cfg: &SystemConfig, sweeps: usize, rank: usize) -> Result<Vec<Row>, DbpError> {
    let real = gen_realization(cfg, 0);
    let y = gen_symbols(cfg, &real, 0).y;
    let (m, k, c, n, t, r, nc) =
        (cfg.m as u64, cfg.k as u64, cfg.c as u64, cfg.n as u64, sweeps as u64, rank as u64, cfg.n_coh as u64);
    let es = cfg.es;
    let mut rows = Vec::new();
    let mut add = |label: String, daisy: bool, formula: Ratio<u64>, run: &dyn Fn(&mut Fabric) -> Result<(), DbpError>| {
        let (topo, name) = if daisy { (Topology::daisy(cfg.c), "daisy") } else { (Topology::star(cfg.c), "star") };
        let mut fabric = Fabric::new(topo, cfg.n_coh);
        let ledger = run(&mut fabric).map(|_| fabric.ledger().per_symbol_average()).map_err(|e| e.to_string());
        rows.push(Row { label, topology: name, formula, ledger });
    };
    let dus = make_dus(&real, &y);
    add("lmmse".into(), false, bandwidth::centralized(m, k, n, nc), &|f| {
        run_centralized_star(f, &dus, es, Algorithm::Lmmse).map(drop)
    });
    add("zf".into(), false, bandwidth::zf(m, k, nc), &|f| run_centralized_star(f, &dus, es, Algorithm::Zf).map(drop));
    add("sdr".into(), false, bandwidth::dimensionality_reduction(c, k, n, nc), &|f| run_sdr_star(f, &dus, es).map(drop));
    add("cdr".into(), false, bandwidth::dimensionality_reduction(c, k, n, nc), &|f| run_cdr_star(f, &dus, es).map(drop));
    add("bdac".into(), false, bandwidth::bdac_star(c, k, nc), &|f| run_bdac(f, &dus, es).map(drop));
    add("bdac".into(), true, bandwidth::bdac_daisy(c, k, nc), &|f| run_bdac(f, &dus, es).map(drop));
    add(format!("bcd:T={t}"), true, bandwidth::bcd(c, k, n, t, nc), &|f| {
        run_bcd_daisy(f, &dus, es, BcdStop::sweeps(sweeps), false).map(drop)
    });
    add(format!("bcd-lrd:T={t},r={r}"), true, bandwidth::bcd_lrd(m, c, k, n, t, r, nc), &|f| {
        let mut dus = make_dus(&real, &y);
        run_lrd_daisy(f, &mut dus, RankRule::Fixed(rank))?;
        run_bcd_daisy(f, &dus, es, BcdStop::sweeps(sweeps), true).map(drop)
    });
    Ok(rows)
}

/// `362.667 (1088/3)`, or just the integer.
pub fn fmt_ratio(v: &Ratio<u64>) -> String {
    if v.is_integer() {
        v.numer().to_string()
    } else {
        format!("{:.3} ({}/{})", *v.numer() as f64 / *v.denom() as f64, v.numer(), v.denom())
    }
}

pub fn render(cfg: &SystemConfig, sweeps: usize, rank: usize, rows: &[Row]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "real entries per symbol: M={} K={} C={} N={} T={} r={} n_coh={}",
        cfg.m, cfg.k, cfg.c, cfg.n, sweeps, rank, cfg.n_coh
    )
    .unwrap();
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|row| {
            let ledger = match &row.ledger {
                Ok(v) => fmt_ratio(v),
                Err(e) => format!("FAIL ({e})"),
            };
            let verdict = match &row.ledger {
                Ok(_) if row.matches() => "yes".to_string(),
                Ok(v) if *v < row.formula => format!("no (-{})", fmt_ratio(&(row.formula - v))),
                Ok(v) => format!("no (+{})", fmt_ratio(&(v - row.formula))),
                Err(_) => "-".to_string(),
            };
            [row.label.clone(), row.topology.to_string(), fmt_ratio(&row.formula), ledger, verdict]
        })
        .collect();
    let header = ["algorithm", "topology", "formula", "ledger", "match"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    for row in std::iter::once(&header).chain(&cells) {
        let line: Vec<String> = row.iter().zip(widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    out
}
