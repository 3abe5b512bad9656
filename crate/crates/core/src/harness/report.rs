//! Ensemble reduction and output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ModelKind, RunConfig};
use super::ReplicateOutput;
use crate::stats::summarize;
use crate::trajectory::RunStatus;
use crate::Result;

/// One observation time of one readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub var: f64,
    pub var_lo: f64,
    pub var_hi: f64,
    pub n: usize,
}

impl ReportRow {
    fn from_samples(t: f64, xs: &[f64]) -> Self {
        match summarize(xs) {
            Ok(s) => Self {
                t,
                mean: s.mean,
                se: s.se,
                var: s.var,
                var_lo: s.var_ci.0,
                var_hi: s.var_ci.1,
                n: s.n,
            },
            // a single replicate has no spread estimate
            Err(_) => Self {
                t,
                mean: xs.first().copied().unwrap_or(f64::NAN),
                se: f64::NAN,
                var: f64::NAN,
                var_lo: f64::NAN,
                var_hi: f64::NAN,
                n: xs.len(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of `config`.
    pub config_hash: String,
    pub base_seed: u64,
    pub code_version: String,
    /// Canonical TOML of the run; parsing it reproduces the run.
    pub config: String,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            base_seed: cfg.base_seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.canonical(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub replicates: usize,
    /// Primary readout, one row per observation time.
    pub rows: Vec<ReportRow>,
    /// `probe_rows[i]` for probe `i`.
    pub probe_rows: Vec<Vec<ReportRow>>,
    pub stopped: usize,
    pub exploded: usize,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
}

fn column_rows(times: &[f64], get: impl Fn(usize) -> Vec<f64>) -> Vec<ReportRow> {
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| ReportRow::from_samples(t, &get(k)))
        .collect()
}

impl RunReport {
    pub fn from_ensemble(cfg: &RunConfig, outs: &[ReplicateOutput]) -> Self {
        let times = outs.first().map(|o| o.series.times.clone()).unwrap_or_default();
        let rows = column_rows(&times, |k| outs.iter().map(|o| o.series.total[k]).collect());
        let n_probes = outs.first().map(|o| o.series.probes.len()).unwrap_or(0);
        let probe_rows = (0..n_probes)
            .map(|i| column_rows(&times, |k| outs.iter().map(|o| o.series.probes[i][k]).collect()))
            .collect();
        let count = |s: RunStatus| outs.iter().filter(|o| o.series.status == s).count();
        let exploded = count(RunStatus::Exploded);
        Self {
            model: cfg.model,
            replicates: outs.len(),
            rows,
            probe_rows,
            stopped: count(RunStatus::Stopped),
            exploded,
            verdicts: vec![Verdict {
                name: "no replicate exploded".into(),
                pass: exploded == 0,
                detail: format!("{exploded} of {}", outs.len()),
            }],
            provenance: Provenance::of(cfg),
        }
    }

    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Rows as CSV with header `t,mean,se,var,var_lo,var_hi,n`.
pub fn rows_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("t,mean,se,var,var_lo,var_hi,n\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{},{}", r.t, r.mean, r.se, r.var, r.var_lo, r.var_hi, r.n).unwrap();
    }
    s
}

fn plot_script(csvs: &[PathBuf]) -> String {
    let names: Vec<String> = csvs
        .iter()
        .map(|p| format!("{:?}", p.file_name().unwrap().to_string_lossy()))
        .collect();
    format!(
        r#"# mean +- 2 SE and variance band per CSV; run from the output directory
import csv
import matplotlib.pyplot as plt

FILES = [{}]

fig, (ax_m, ax_v) = plt.subplots(1, 2, figsize=(10, 4))
for name in FILES:
    with open(name) as fh:
        rows = [{{k: float(v) for k, v in r.items()}} for r in csv.DictReader(fh)]
    t = [r["t"] for r in rows]
    m = [r["mean"] for r in rows]
    se = [r["se"] for r in rows]
    ax_m.plot(t, m, label=name)
    ax_m.fill_between(t, [a - 2 * b for a, b in zip(m, se)], [a + 2 * b for a, b in zip(m, se)], alpha=0.3)
    ax_v.plot(t, [r["var"] for r in rows], label=name)
    ax_v.fill_between(t, [r["var_lo"] for r in rows], [r["var_hi"] for r in rows], alpha=0.3)
ax_m.set_xlabel("t")
ax_m.set_ylabel("mean")
ax_v.set_xlabel("t")
ax_v.set_ylabel("variance")
ax_m.legend()
fig.tight_layout()
fig.savefig("summary.png", dpi=150)
"#,
        names.join(", ")
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub csv: PathBuf,
    pub probe_csvs: Vec<PathBuf>,
    pub json: PathBuf,
    pub plot: PathBuf,
}

fn model_stem(m: ModelKind) -> String {
    serde_json::to_value(m).unwrap().as_str().unwrap().to_string()
}

/// Writes `<model>.csv`, `<model>_probe<i>.csv`, `<model>_report.json` and
/// `plot.py` into `dir`.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<OutputFiles> {
    std::fs::create_dir_all(dir)?;
    let stem = model_stem(report.model);
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, rows_csv(&report.rows))?;
    let mut probe_csvs = Vec::new();
    for (i, rows) in report.probe_rows.iter().enumerate() {
        let p = dir.join(format!("{stem}_probe{i}.csv"));
        std::fs::write(&p, rows_csv(rows))?;
        probe_csvs.push(p);
    }
    let json = dir.join(format!("{stem}_report.json"));
    std::fs::write(&json, serde_json::to_string_pretty(report).expect("report serializes"))?;
    let plot = dir.join("plot.py");
    let mut all = vec![csv.clone()];
    all.extend(probe_csvs.iter().cloned());
    std::fs::write(&plot, plot_script(&all))?;
    Ok(OutputFiles {
        csv,
        probe_csvs,
        json,
        plot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::simulate;

    fn cfg() -> RunConfig {
        RunConfig::from_toml(
            "model = \"kr-feller\"\nreplicates = 20\nhorizon = 0.5\nn_obs = 5\nbase_seed = 3\n\
             [params]\na = 0.5\nb = 0.0\nlambda = 20.0\nx0 = 1.0\n",
        )
        .unwrap()
    }

    #[test]
    fn rows_follow_the_time_grid() {
        let r = simulate(&cfg()).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!((r.rows[0].t, r.rows[5].t), (0.0, 0.5));
        assert!(r.rows.iter().all(|x| x.n == 20));
        let csv = rows_csv(&r.rows);
        assert!(csv.starts_with("t,mean,se,var,var_lo,var_hi,n\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn provenance_reproduces_the_report() {
        let r = simulate(&cfg()).unwrap();
        let again = simulate(&RunConfig::from_toml(&r.provenance.config).unwrap()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn outputs_are_byte_identical_across_runs() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = write_outputs(&simulate(&cfg()).unwrap(), d1.path()).unwrap();
        let f2 = write_outputs(&simulate(&cfg()).unwrap(), d2.path()).unwrap();
        assert_eq!(std::fs::read(&f1.csv).unwrap(), std::fs::read(&f2.csv).unwrap());
        assert_eq!(std::fs::read(&f1.json).unwrap(), std::fs::read(&f2.json).unwrap());
        assert!(std::fs::read_to_string(&f1.plot).unwrap().contains("kr-feller.csv"));
    }
}
