//! Subcommand drivers. Each writes its tables into the output directory
//! and returns the lines of `summary.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geocount::continuation::{self, StepControl};
use geocount::jacobi;
use geocount::solver::{find_all, CensusOptions, GeodesicSet};
use geocount::weights::{
    count_function, degenerate_weight, set_weight, weigh, CountTable, DegenerateWeight, Perturbation,
};

use crate::config::RunConfig;

pub struct Output {
    dir: PathBuf,
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), summary: Vec::new(), warnings: Vec::new() })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn verdict(&mut self, label: &str, ok: bool, detail: impl std::fmt::Display) {
        let tag = if ok { "PASS" } else { "FAIL" };
        self.summary.push(format!("{tag} {label}: {detail}"));
    }

    /// Write `summary.txt` and `warnings.txt`.
    pub fn finish(&self) -> Result<()> {
        let mut summary = self.summary.join("\n");
        summary.push('\n');
        self.write("summary.txt", &summary)?;
        let mut warnings = self.warnings.join("\n");
        if !warnings.is_empty() {
            warnings.push('\n');
        }
        self.write("warnings.txt", &warnings)
    }
}

fn census_options(cfg: &RunConfig) -> CensusOptions {
    let mut opts = CensusOptions::with_mesh(cfg.mesh());
    if let Some(r) = cfg.tolerances.residual {
        opts.newton.tolerance = r;
    }
    opts
}

fn run_census(cfg: &RunConfig, out: &mut Output) -> Result<GeodesicSet> {
    let spec = cfg.metric.build()?;
    let bound = cfg.length_bound()?;
    let set = find_all(&spec, bound, &census_options(cfg))?;
    out.write("geodesics.csv", &set.to_csv())?;
    for (i, g) in set.geodesics.iter().enumerate() {
        out.write(&format!("loops/geodesic_{i:04}.txt"), &g.loop_.to_text())?;
    }
    let cert = &set.certificate;
    out.warnings.extend(cert.warnings.iter().cloned());
    if cert.degenerate_family {
        out.warnings.push("degenerate family: a continuum of closed geodesics shares one length".into());
    }
    out.summary.push(format!("geodesics {}", set.len()));
    out.summary.push(format!(
        "seeds {} converged {} diverged {} collapsed {}",
        cert.seeds, cert.converged, cert.diverged, cert.collapsed
    ));
    out.summary.push(format!("degenerate_family {}", cert.degenerate_family));
    let tol = cfg.tolerances.residual.unwrap_or(1e-8);
    let worst = set.geodesics.iter().map(|g| g.residual_norm * g.length).fold(0.0, f64::max);
    out.verdict("residuals", worst < tol, format_args!("max scaled residual {worst:.16e}"));
    Ok(set)
}

pub fn census(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    run_census(cfg, out).map(|_| ())
}

pub fn jacobi(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let set = run_census(cfg, out)?;
    let spec = &set.metric;
    let ids: Vec<usize> = match &cfg.run.geodesics {
        Some(ids) => ids.clone(),
        None => (0..set.len()).filter(|&i| set.geodesics[i].cover_degree == 1).collect(),
    };
    let mut csv = String::from("id,d,index,nullity,floquet_nullity,sector_index_sum,sector_nullity_sum,eigen_gap,tolerance\n");
    let mut sums_ok = true;
    let mut nullity_ok = true;
    for &id in &ids {
        let geo = set.geodesics.get(id).with_context(|| format!("no geodesic with id {id}"))?;
        let report = jacobi::analyze(spec, geo, cfg.d_max())?;
        for (d, r) in &report.per_degree {
            let fl = report.floquet_nullity[d];
            sums_ok &= r.sector_index_sum == r.index;
            nullity_ok &= fl == r.nullity;
            csv.push_str(&format!(
                "{id},{d},{},{},{fl},{},{},{:.16e},{:.16e}\n",
                r.index, r.nullity, r.sector_index_sum, r.sector_nullity_sum, r.eigen_gap, r.tolerance
            ));
            if r.ill_conditioned {
                out.warnings.push(format!("geodesic {id}, d = {d}: eigen gap below 10 tolerances"));
            }
        }
        out.write(&format!("reports/geodesic_{id:04}.txt"), &report.to_text())?;
    }
    out.write("jacobi.csv", &csv)?;
    out.verdict("sector sums", sums_ok, "Bloch sector index sums equal the direct index");
    out.verdict("nullity cross-check", nullity_ok, "kernel counts equal root-of-unity multiplier counts");
    Ok(())
}

fn records_csv(records: &[geocount::weights::WeightRecord]) -> String {
    let mut csv = String::from("id,d,iota1,iota2,eps1,eps2,n\n");
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.geodesic_id, r.cover_degree, r.index1, r.index2, r.epsilon1, r.epsilon2, r.n
        ));
    }
    csv
}

pub fn weights(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let set = run_census(cfg, out)?;
    let (records, _) = weigh(&set, &cfg.gamma()?, cfg.d_max())?;
    out.write("weights.csv", &records_csv(&records))?;
    out.summary.push(format!("weight {}", set_weight(&records)));
    Ok(())
}

fn write_table(out: &mut Output, table: &CountTable, cfg: &RunConfig) -> Result<()> {
    out.write("counts.csv", &table.to_csv())?;
    out.write("step_plot.txt", &table.step_plot_text())?;
    let final_count: i64 = table.rows.iter().map(|r| r.weight).sum();
    out.summary.push(format!("final {final_count}"));
    for &l in cfg.run.count_at.iter().flatten() {
        match count_function(table, l) {
            Ok(v) => out.summary.push(format!("pi({l:.16e}) {v}")),
            Err(e) => out.warnings.push(format!("pi({l}): {e}")),
        }
    }
    Ok(())
}

fn run_degenerate(cfg: &RunConfig, strategy_index: usize, reference: Option<&GeodesicSet>) -> Result<DegenerateWeight> {
    let strategies = cfg.strategies()?;
    let strategy = strategies[strategy_index];
    // Distinct seeds per strategy keep the draws independent.
    let seed = cfg.seed().wrapping_add(strategy_index as u64 * 0x1000_0000);
    let p = Perturbation::new(strategy, seed);
    Ok(degenerate_weight(&cfg.metric.build()?, &cfg.gamma()?, reference, &p, cfg.trials(), &census_options(cfg))?)
}

fn reference_census(cfg: &RunConfig) -> Result<Option<GeodesicSet>> {
    if cfg.run.ids.is_none() {
        return Ok(None);
    }
    Ok(Some(find_all(&cfg.metric.build()?, cfg.length_bound()?, &census_options(cfg))?))
}

pub fn count(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let bound = cfg.length_bound()?;
    match cfg.run.protocol.as_deref().unwrap_or("census") {
        "degenerate" => {
            let reference = reference_census(cfg)?;
            let dw = run_degenerate(cfg, 0, reference.as_ref())?;
            for t in &dw.trials {
                out.warnings.extend(t.warnings.iter().cloned());
            }
            write_table(out, &dw.count_table(bound), cfg)
        }
        _ => {
            let set = run_census(cfg, out)?;
            let (records, _) = weigh(&set, &cfg.gamma()?, cfg.d_max())?;
            out.write("weights.csv", &records_csv(&records))?;
            write_table(out, &CountTable::from_records(&set, &records, bound), cfg)
        }
    }
}

pub fn degenerate(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let reference = reference_census(cfg)?;
    let mut csv = String::from("strategy,trial,value,geodesics,attempts\n");
    let mut values = Vec::new();
    let strategies = cfg.strategies()?;
    for (k, s) in strategies.iter().enumerate() {
        let dw = run_degenerate(cfg, k, reference.as_ref())?;
        for (i, t) in dw.trials.iter().enumerate() {
            csv.push_str(&format!("{},{i},{},{},{}\n", s.name(), t.value, t.geodesics, t.attempts));
            out.warnings.extend(t.warnings.iter().map(|w| format!("{} trial {i}: {w}", s.name())));
        }
        out.summary.push(format!("weight {} {}", s.name(), dw.value));
        values.push(dw.value);
    }
    out.write("degenerate.csv", &csv)?;
    let agree = values.windows(2).all(|w| w[0] == w[1]);
    if !agree {
        out.finish()?;
        return Err(geocount::Error::AmbiguousWeight {
            values,
            diagnostics: "perturbation strategies disagree".into(),
        }
        .into());
    }
    out.verdict("agreement", true, format_args!("all strategies give {}", values[0]));
    Ok(())
}

pub fn continue_path(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let path = cfg.path()?;
    let start = path.at(0.0)?;
    let bound = cfg.length_bound()?;
    let set = find_all(&start, bound, &census_options(cfg))?;
    out.write("start_geodesics.csv", &set.to_csv())?;
    let ids: Vec<usize> = match &cfg.cont.start_ids {
        Some(ids) => ids.clone(),
        None => (0..set.len())
            .filter(|&i| set.geodesics[i].cover_degree == 1 && set.partners[i].is_none_or(|p| p > i))
            .collect(),
    };
    let starts = ids
        .iter()
        .map(|&i| set.geodesics.get(i).cloned().with_context(|| format!("no start geodesic {i}")))
        .collect::<Result<Vec<_>>>()?;
    let mut control = StepControl::default();
    if let Some(t) = cfg.tolerances.event {
        control.event_tolerance = t;
    }
    if let Some(h) = cfg.cont.initial_step {
        control.initial = h;
    }
    if let Some(h) = cfg.cont.max_step {
        control.max = h;
    }
    let sweep = continuation::sweep(&path, &starts, &control)?;
    out.write("trace.csv", &continuation::trace_csv(&sweep.branches, &sweep.events))?;
    out.write("events.csv", &continuation::events_csv(&sweep.events))?;
    for e in &sweep.events {
        out.warnings.extend(e.warnings.iter().map(|w| format!("event {}: {w}", e.id)));
        out.summary.push(format!("event {} {} t {:.16e}", e.id, e.kind.name(), e.t));
        out.verdict(
            &format!("local invariance event {}", e.id),
            continuation::local_invariance(e) && e.pattern_ok,
            format_args!("sum {} | {}", e.local_sum.0, e.local_sum.1),
        );
    }
    out.summary.push(format!("events {}", sweep.events.len()));
    if let Some((t, step)) = sweep.stall {
        out.warnings.push(format!("continuation stalled at t = {t}; partial traces written"));
        out.finish()?;
        return Err(geocount::Error::Stall { t, step }.into());
    }
    if let Some([lo, hi]) = cfg.run.window {
        let n = cfg.cont.grid.unwrap_or(5).max(2);
        let mut grid: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        // Keep grid points away from event parameters.
        for s in grid.iter_mut() {
            if sweep.events.iter().any(|e| (e.t - *s).abs() < 1e-3) {
                *s = (*s + 2e-3).min(1.0 - 1e-3);
            }
        }
        let gamma = geocount::weights::GammaSpec::Window(lo, hi);
        let report = continuation::verify_invariance(&path, &gamma, &grid, &census_options(cfg))?;
        let mut csv = String::from("s,weight\n");
        for (s, v) in &report.values {
            csv.push_str(&format!("{s:.16e},{}\n", v.map_or(String::new(), |v| v.to_string())));
        }
        out.write("invariance.csv", &csv)?;
        out.warnings.extend(report.notes.iter().cloned());
        let detail = match report.offending {
            Some((a, b)) => format!("weight changes between s = {a} and s = {b}"),
            None => format!("n = {:?}", report.values.iter().find_map(|v| v.1)),
        };
        out.verdict("window invariance", report.constant, detail);
    } else {
        out.verdict("invariance", sweep.local_invariance_holds(), "local sums agree across every event");
    }
    Ok(())
}
