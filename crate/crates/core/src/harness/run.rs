use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{aggregate, mse, nmse};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::pf::{kalman_filter, run_filter, Proposal};
use crate::proposals::{LearnedProposal, Registry};
use crate::ssm::{build_scenario, simulate_truth, ModelSpec, Scenario, Trajectory};
use crate::training::train;

/// One metric of one cell and outer seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub proposal: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: usize,
    pub metric: String,
    pub value: f64,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub proposal: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub metric: String,
    pub median: f64,
    pub std: f64,
    pub count: usize,
    pub failed: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    /// Kalman posterior means.
    Kalman,
    /// Simulated states.
    States,
}

impl Reference {
    pub fn name(self) -> &'static str {
        match self {
            Reference::Kalman => "kalman",
            Reference::States => "states",
        }
    }
}

/// Ground truth for a trajectory: Kalman means when the model is
/// linear-Gaussian, the simulated states otherwise.
pub fn ground_truth(model: &ModelSpec, traj: &Trajectory) -> Result<(Vec<Vec<f64>>, Reference)> {
    if model.is_linear_gaussian() {
        let means = kalman_filter(model, &traj.measurements)?.into_iter().map(|s| s.mean).collect();
        Ok((means, Reference::Kalman))
    } else {
        Ok((traj.states.clone(), Reference::States))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Metric names reported for `scenario`.
pub fn metric_names(scenario: Scenario) -> Vec<&'static str> {
    if scenario == Scenario::Sir {
        vec!["nmse", "mse_S", "mse_I", "mse_R"]
    } else {
        vec!["nmse"]
    }
}

/// Stable stream id of a proposal name.
fn name_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Average of the estimates of `runs` filter runs; failed runs are skipped
/// and counted.
pub fn averaged_estimate(
    model: &ModelSpec,
    proposal: &dyn Proposal,
    measurements: &[Vec<f64>],
    k: usize,
    threshold_ratio: f64,
    runs: usize,
    rng: &Rng,
) -> (Option<Vec<Vec<f64>>>, usize, Option<Error>) {
    let mut sum: Option<Vec<Vec<f64>>> = None;
    let mut ok = 0;
    let mut last_err = None;
    for i in 0..runs {
        match run_filter(model, proposal, measurements, k, threshold_ratio, &rng.substream(i as u64)) {
            Ok(out) => {
                ok += 1;
                match sum.as_mut() {
                    None => sum = Some(out.estimates),
                    Some(acc) => {
                        for (a, e) in acc.iter_mut().zip(&out.estimates) {
                            a.iter_mut().zip(e).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let avg = sum.map(|mut s| {
        s.iter_mut().flatten().for_each(|v| *v /= ok as f64);
        s
    });
    (avg, runs - ok, last_err)
}

struct Cell<'a> {
    scenario: Scenario,
    proposal: &'a str,
    n: usize,
    m: usize,
    t: usize,
    seed: usize,
}

impl Cell<'_> {
    fn row(&self, k: usize, metric: &str, value: f64, failed: bool) -> ResultRow {
        ResultRow {
            scenario: self.scenario.name().to_string(),
            proposal: self.proposal.to_string(),
            n: self.n,
            m: self.m,
            t: self.t,
            k,
            seed: self.seed,
            metric: metric.to_string(),
            value,
            failed,
        }
    }

    fn failed_rows(&self, k: usize) -> Vec<ResultRow> {
        metric_names(self.scenario).into_iter().map(|m| self.row(k, m, f64::NAN, true)).collect()
    }
}

fn build_proposal(
    registry: &Registry,
    name: &str,
    config: &ExperimentConfig,
    model: &ModelSpec,
    traj: &Trajectory,
    path: &[u64],
    train_log: &Path,
) -> Result<(Box<dyn Proposal>, Option<u64>)> {
    if !registry.is_learned(name)? {
        return Ok((registry.designed(name, model)?, None));
    }
    let arch_cfg = config.arch();
    let arch = registry.architecture(name, &arch_cfg)?;
    let mut init_rng = Rng::derive(config.seed, &[path, &[4]].concat());
    let mut proposal = LearnedProposal::initialized(arch, &arch_cfg, model, traj.horizon(), &mut init_rng)?;
    let mut tc = config.train.clone();
    tc.seed = Rng::derive(config.seed, &[path, &[2]].concat()).next_u64();
    let report = train(model, &traj.measurements, &mut proposal, &tc)?;
    log::info!("trained {name} in {:.1}s, final loss {:?}", report.wall_clock.as_secs_f64(), report.losses.last());
    report.write_log(fs::File::create(train_log)?)?;
    Ok((Box::new(proposal), Some(report.checksum)))
}

/// Runs every cell of `config`, writing `results.csv`, `aggregate.csv`,
/// plot data, training logs, the resolved `config.toml` and `metadata.toml`
/// under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let out = &config.out;
    fs::create_dir_all(out.join("train"))?;
    let registry = Registry::default();
    let scenario = config.scenario;
    let proposals = config.proposals();
    let ks = config.particles();
    let mut rows = Vec::new();
    let mut meta = String::new();
    writeln!(meta, "objective = \"sum of per-particle log joint densities\"").ok();
    writeln!(meta, "inner_average = \"filter estimates averaged over successful inner runs before the metric\"").ok();
    fs::write(out.join("config.toml"), config.to_toml()?)?;
    let mut meta_cells = String::new();
    let mut notes = BTreeMap::new();
    let mut trace: Option<(Vec<Vec<f64>>, Vec<(String, Vec<Vec<f64>>)>)> = None;

    for s in 0..config.seeds {
        for &n in &config.dims() {
            let model_seed = Rng::derive(config.seed, &[s as u64, n as u64]).next_u64();
            let model = build_scenario(scenario, n, config.snr_db, model_seed)?;
            let m = model.m;
            for &t in &config.horizons() {
                let traj = simulate_truth(&model, t, &mut Rng::derive(config.seed, &[s as u64, n as u64, t as u64, 1]))?;
                let (reference, source) = ground_truth(&model, &traj)?;
                writeln!(meta_cells, "\n[[cell]]\nseed = {s}\nN = {n}\nT = {t}\nreference = \"{}\"", source.name()).ok();
                for name in &proposals {
                    let cell = Cell { scenario, proposal: name, n, m, t, seed: s };
                    let path = [s as u64, n as u64, t as u64, name_id(name)];
                    let log_path = out.join("train").join(format!("{name}_N{n}_T{t}_seed{s}.csv"));
                    let built = build_proposal(&registry, name, config, &model, &traj, &path, &log_path);
                    let proposal = match built {
                        Ok((p, checksum)) => {
                            notes.extend(p.notes(&model));
                            if let Some(c) = checksum {
                                writeln!(meta_cells, "{}_checksum = \"{c:016x}\"", name.replace('-', "_")).ok();
                            }
                            p
                        }
                        Err(e) => {
                            log::warn!("{name} failed for seed {s}, N={n}, T={t}: {e}");
                            writeln!(meta_cells, "{}_error = {:?}", name.replace('-', "_"), e.to_string()).ok();
                            ks.iter().for_each(|&k| rows.extend(cell.failed_rows(k)));
                            continue;
                        }
                    };
                    for &k in &ks {
                        let rng = Rng::derive(config.seed, &[&path[..], &[3, k as u64]].concat());
                        let (est, failed_runs, err) = averaged_estimate(
                            &model,
                            proposal.as_ref(),
                            &traj.measurements,
                            k,
                            config.threshold_ratio,
                            config.inner,
                            &rng,
                        );
                        rows.push(cell.row(k, "failed_runs", failed_runs as f64, false));
                        let Some(est) = est else {
                            log::warn!(
                                "{name}: all {} runs failed for seed {s}, N={n}, T={t}, K={k}: {}",
                                config.inner,
                                err.map(|e| e.to_string()).unwrap_or_default()
                            );
                            rows.extend(cell.failed_rows(k));
                            continue;
                        };
                        match nmse(&est, &reference) {
                            Ok(v) => rows.push(cell.row(k, "nmse", v, false)),
                            Err(_) => rows.push(cell.row(k, "nmse", f64::NAN, true)),
                        }
                        if scenario == Scenario::Sir {
                            let per = mse(&est, &reference)?;
                            for (metric, v) in ["mse_S", "mse_I", "mse_R"].iter().zip(per) {
                                rows.push(cell.row(k, metric, v, false));
                            }
                            if s == 0 && k == ks[0] {
                                let tr = trace.get_or_insert_with(|| (traj.states.clone(), Vec::new()));
                                tr.1.push((name.clone(), est));
                            }
                        }
                    }
                }
            }
        }
    }

    for (k, v) in &notes {
        writeln!(meta, "{k} = {v:?}").ok();
    }
    fs::write(out.join("metadata.toml"), format!("{meta}\n{meta_cells}"))?;
    write_rows(&rows, &out.join("results.csv"))?;
    if let Some((states, series)) = trace {
        write_trace(&states, &series, &out.join("sir_trace.csv"))?;
    }
    let aggregates = write_report(&rows, out)?;
    Ok(ExperimentSummary { rows, aggregates })
}

fn write_rows(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(states: &[Vec<f64>], series: &[(String, Vec<Vec<f64>>)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "S".into(), "I".into(), "R".into()];
    header.extend(series.iter().map(|(name, _)| format!("{name}_I")));
    w.write_record(&header)?;
    for (t, x) in states.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(x.iter().map(|v| format!("{v:e}")));
        rec.extend(series.iter().map(|(_, e)| format!("{:e}", e[t][1])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`run_experiment`].
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Medians per cell over seeds; failed rows are counted, not aggregated.
pub fn aggregate_rows(rows: &[ResultRow]) -> Result<Vec<AggregateRow>> {
    type Key = (String, String, usize, usize, usize, usize, String);
    let mut cells: BTreeMap<Key, (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let key = (r.scenario.clone(), r.proposal.clone(), r.n, r.m, r.t, r.k, r.metric.clone());
        let entry = cells.entry(key).or_default();
        if r.failed {
            entry.1 += 1;
        } else {
            entry.0.push(r.value);
        }
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((scenario, proposal, n, m, t, k, metric), (values, failed)) in cells {
        let (median, std) = if values.is_empty() { (f64::NAN, f64::NAN) } else { aggregate(&values)? };
        out.push(AggregateRow { scenario, proposal, n, m, t, k, metric, median, std, count: values.len(), failed });
    }
    Ok(out)
}

/// Writes `aggregate.csv` and the `plot_*.csv` files for `rows` into `dir`.
pub fn write_report(rows: &[ResultRow], dir: &Path) -> Result<Vec<AggregateRow>> {
    let aggregates = aggregate_rows(rows)?;
    let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    for a in &aggregates {
        w.serialize(a)?;
    }
    w.flush()?;
    for (axis, file) in [("K", "plot_nmse_vs_K.csv"), ("T", "plot_nmse_vs_T.csv"), ("N", "plot_nmse_vs_N.csv")] {
        write_plot(&aggregates, axis, &dir.join(file))?;
    }
    Ok(aggregates)
}

fn write_plot(aggregates: &[AggregateRow], axis: &str, path: &PathBuf) -> Result<()> {
    let key = |a: &AggregateRow| match axis {
        "K" => (a.proposal.clone(), a.n, a.t, a.k),
        "T" => (a.proposal.clone(), a.n, a.k, a.t),
        _ => (a.proposal.clone(), a.t, a.k, a.n),
    };
    let mut sel: Vec<&AggregateRow> = aggregates.iter().filter(|a| a.metric == "nmse").collect();
    sel.sort_by_key(|a| key(a));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([axis, "proposal", "N", "T", "K", "median", "std", "failed"])?;
    for a in sel {
        let x = match axis {
            "K" => a.k,
            "T" => a.t,
            _ => a.n,
        };
        w.write_record([
            x.to_string(),
            a.proposal.clone(),
            a.n.to_string(),
            a.t.to_string(),
            a.k.to_string(),
            format!("{:e}", a.median),
            format!("{:e}", a.std),
            a.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the aggregate and plot files from `dir/results.csv`.
pub fn report(dir: &Path) -> Result<Vec<AggregateRow>> {
    let rows = read_rows(&dir.join("results.csv"))?;
    write_report(&rows, dir)
}
