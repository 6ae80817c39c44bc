//! Summaries rebuilt from a run directory's raw artifacts.
//!
//! Nothing here reads in-memory state from a run: `summary.csv` is computed
//! from `curves/*.csv`, the exploitability table from the per-seed reports.
//! Outputs:
//!
//! - `summary.csv`, `summary.json`: gap statistics per curve plus one
//!   aggregate row per method.
//! - `report/gap_curves.csv`, `report/bid_surface.csv`: long format.
//! - `report/exploitability_table.json`, `report/exploitability_bars.csv`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bidlab_core::learn::MA_WINDOW;
use bidlab_core::validity::{gap_statistics, AgentExploitability, ExploitabilityReport};
use bidlab_core::GapStatistics;
use serde::Serialize;
use serde_json::Value;

use crate::artifacts::{num, opt_usize, pct, read_csv, write_csv, write_json};
use crate::experiments::METADATA_FILE;
use crate::CliError;

pub const SUMMARY_HEADER: [&str; 14] = [
    "method",
    "mode",
    "algorithm",
    "seed",
    "episodes",
    "steady_state",
    "steady_mean",
    "steady_std",
    "episode_to_10pct",
    "episode_to_5pct",
    "best_ma_gap",
    "compliance_last10",
    "seeds_reaching_10pct",
    "seeds_reaching_5pct",
];

/// One line of the gap summary. Aggregate rows have `seed == "all"`, average
/// the per-seed statistics, and average the episode counts over seeds that
/// reached the threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub mode: String,
    pub algorithm: String,
    pub seed: String,
    pub episodes: usize,
    /// `mean±std` in percent.
    pub steady_state: String,
    pub steady_mean: f64,
    pub steady_std: f64,
    pub episode_to_10pct: Option<usize>,
    pub episode_to_5pct: Option<usize>,
    pub best_ma_gap: f64,
    pub compliance_last10: f64,
    pub seeds_reaching_10pct: String,
    pub seeds_reaching_5pct: String,
    pub source: String,
}

impl SummaryRow {
    fn csv(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.mode.clone(),
            self.algorithm.clone(),
            self.seed.clone(),
            self.episodes.to_string(),
            self.steady_state.clone(),
            num(self.steady_mean),
            num(self.steady_std),
            opt_usize(self.episode_to_10pct),
            opt_usize(self.episode_to_5pct),
            num(self.best_ma_gap),
            num(self.compliance_last10),
            self.seeds_reaching_10pct.clone(),
            self.seeds_reaching_5pct.clone(),
        ]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExploitabilityTable {
    pub seed: String,
    pub source: String,
    pub report: ExploitabilityReport,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ReportOutcome {
    pub rows: Vec<SummaryRow>,
    pub exploitability: Vec<ExploitabilityTable>,
    /// Artifacts the run's metadata promises but the directory lacks.
    pub missing: Vec<String>,
    pub warnings: Vec<String>,
}

/// A gap curve read back from disk.
#[derive(Clone, Debug)]
pub struct Curve {
    pub mode: String,
    pub algorithm: String,
    pub seed: u64,
    pub file: String,
    pub episode: Vec<usize>,
    pub gap: Vec<Option<f64>>,
    pub ma10: Vec<Option<f64>>,
}

/// Splits `{MODE}_{ALG}_seed{s}`.
pub fn parse_key(stem: &str) -> Option<(String, String, u64)> {
    let (prefix, seed) = stem.rsplit_once("_seed")?;
    let (mode, alg) = prefix.split_once('_')?;
    Some((mode.to_string(), alg.to_string(), seed.parse().ok()?))
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Runtime(format!("{}: no {name} column", path.display())))
}

fn parse_opt(s: &str, path: &Path) -> Result<Option<f64>, CliError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| CliError::Runtime(format!("{}: bad number {s:?}", path.display())))
}

pub fn read_curve(path: &Path) -> Result<Option<Curve>, CliError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let Some((mode, algorithm, seed)) = parse_key(stem) else {
        return Ok(None);
    };
    let (header, rows) = read_csv(path)?;
    let (ie, ig, im) = (
        column(&header, "episode", path)?,
        column(&header, "gap", path)?,
        column(&header, "ma10", path)?,
    );
    let mut c = Curve {
        mode,
        algorithm,
        seed,
        file: format!("curves/{stem}.csv"),
        episode: vec![],
        gap: vec![],
        ma10: vec![],
    };
    for r in &rows {
        c.episode.push(r[ie].parse().map_err(|_| {
            CliError::Runtime(format!("{}: bad episode {:?}", path.display(), r[ie]))
        })?);
        c.gap.push(parse_opt(&r[ig], path)?);
        c.ma10.push(parse_opt(&r[im], path)?);
    }
    Ok(Some(c))
}

fn steady(mean: f64, std: f64) -> String {
    format!("{}±{}", pct(mean), pct(std))
}

fn seed_row(method: &str, c: &Curve, s: &GapStatistics) -> SummaryRow {
    let reached = |x: Option<usize>| if x.is_some() { "1/1" } else { "0/1" }.to_string();
    SummaryRow {
        method: method.to_string(),
        mode: c.mode.clone(),
        algorithm: c.algorithm.clone(),
        seed: c.seed.to_string(),
        episodes: s.episodes,
        steady_state: steady(s.steady_state_mean, s.steady_state_std),
        steady_mean: s.steady_state_mean,
        steady_std: s.steady_state_std,
        episode_to_10pct: s.episode_to_10pct,
        episode_to_5pct: s.episode_to_5pct,
        best_ma_gap: s.best_ma_gap,
        compliance_last10: s.compliance_rate_last10,
        seeds_reaching_10pct: reached(s.episode_to_10pct),
        seeds_reaching_5pct: reached(s.episode_to_5pct),
        source: c.file.clone(),
    }
}

fn aggregate(method: &str, rows: &[SummaryRow]) -> SummaryRow {
    let n = rows.len() as f64;
    let mean = |f: fn(&SummaryRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let reach = |f: fn(&SummaryRow) -> Option<usize>| {
        let hit: Vec<usize> = rows.iter().filter_map(f).collect();
        let avg = (!hit.is_empty())
            .then(|| (hit.iter().sum::<usize>() as f64 / hit.len() as f64).round() as usize);
        (avg, format!("{}/{}", hit.len(), rows.len()))
    };
    let (e10, r10) = reach(|r| r.episode_to_10pct);
    let (e5, r5) = reach(|r| r.episode_to_5pct);
    let (m, s) = (mean(|r| r.steady_mean), mean(|r| r.steady_std));
    SummaryRow {
        method: method.to_string(),
        mode: rows[0].mode.clone(),
        algorithm: rows[0].algorithm.clone(),
        seed: "all".into(),
        episodes: rows.iter().map(|r| r.episodes).max().unwrap_or(0),
        steady_state: steady(m, s),
        steady_mean: m,
        steady_std: s,
        episode_to_10pct: e10,
        episode_to_5pct: e5,
        best_ma_gap: mean(|r| r.best_ma_gap),
        compliance_last10: mean(|r| r.compliance_last10),
        seeds_reaching_10pct: r10,
        seeds_reaching_5pct: r5,
        source: rows
            .iter()
            .map(|r| r.source.as_str())
            .collect::<Vec<_>>()
            .join(";"),
    }
}

/// Statistics for every curve, grouped by method in file order.
pub fn summarize(curves: &[Curve], warnings: &mut Vec<String>) -> Vec<SummaryRow> {
    let one_alg = curves
        .iter()
        .all(|c| curves.first().is_some_and(|f| f.algorithm == c.algorithm));
    let one_mode = curves
        .iter()
        .all(|c| curves.first().is_some_and(|f| f.mode == c.mode));
    let method = |c: &Curve| match (one_alg, one_mode) {
        (true, _) => c.mode.clone(),
        (false, true) => c.algorithm.clone(),
        (false, false) => format!("{}/{}", c.mode, c.algorithm),
    };
    let mut groups: BTreeMap<(String, String), Vec<SummaryRow>> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for c in curves {
        let gaps: Vec<f64> = c.gap.iter().flatten().copied().collect();
        if gaps.len() < c.gap.len() {
            warnings.push(format!(
                "{}: {} episodes without a defined gap skipped",
                c.file,
                c.gap.len() - gaps.len()
            ));
        }
        match gap_statistics(&gaps, MA_WINDOW) {
            Ok(s) => {
                let key = (c.mode.clone(), c.algorithm.clone());
                if !groups.contains_key(&key) {
                    order.push(key.clone());
                }
                groups
                    .entry(key)
                    .or_default()
                    .push(seed_row(&method(c), c, &s));
            }
            Err(e) => warnings.push(format!("{}: {e}", c.file)),
        }
    }
    let mut out = Vec::new();
    for key in order {
        let rows = &groups[&key];
        out.extend(rows.iter().cloned());
        out.push(aggregate(&rows[0].method, rows));
    }
    out
}

fn read_exploitability(path: &Path) -> Result<ExploitabilityReport, CliError> {
    let text = std::fs::read_to_string(path)?;
    let raw: ExploitabilityReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    // Recompute the derived columns from the profit pairs.
    let rows = raw
        .agents
        .into_iter()
        .map(|a| AgentExploitability {
            failure: a.failure,
            ..AgentExploitability::from_profits(
                a.agent_id,
                a.baseline_profit,
                a.br_profit,
                a.baseline_total_profit,
                a.br_profile_total_profit,
            )
        })
        .collect();
    Ok(ExploitabilityReport::from_rows(rows, raw.epsilon_pct))
}

/// Files a run with this metadata should have produced.
fn expected(meta: &Value) -> Vec<String> {
    let cfg = &meta["config"];
    let list = |k: &str| cfg[k].as_array().cloned().unwrap_or_default();
    let strs = |k: &str| {
        list(k)
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect::<Vec<_>>()
    };
    let seeds: Vec<u64> = list("seeds").iter().filter_map(Value::as_u64).collect();
    let t = cfg["bid_surface_period"].as_u64().unwrap_or(47);
    let mut out = Vec::new();
    match cfg["experiment"].as_str().unwrap_or_default() {
        "axis-a" | "axis-b" => {
            for m in strs("modes") {
                for a in strs("algorithms") {
                    for s in &seeds {
                        out.push(format!("curves/{m}_{a}_seed{s}.csv"));
                        out.push(format!("bids/{m}_{a}_seed{s}_t{t}.csv"));
                    }
                }
            }
        }
        "nc-check" => {
            for m in strs("modes") {
                out.extend(seeds.iter().map(|s| format!("nc/{m}_seed{s}.json")));
            }
        }
        "multi-agent" => out.extend(seeds.iter().map(|s| format!("multi/seed{s}/metrics.csv"))),
        "exploitability" => {
            out.extend(seeds.iter().map(|s| format!("exploitability_seed{s}.json")))
        }
        "oracle-audit" => out.push("audit/summary.json".into()),
        _ => {}
    }
    out
}

/// Rebuilds every summary under `dir`. Missing artifacts are listed in the
/// outcome; an empty directory yields empty summaries and a warning.
pub fn report_dir(dir: &Path) -> Result<ReportOutcome, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut out = ReportOutcome::default();
    let meta: Option<Value> = match std::fs::read_to_string(dir.join(METADATA_FILE)) {
        Ok(t) => Some(
            serde_json::from_str(&t)
                .map_err(|e| CliError::Runtime(format!("{METADATA_FILE}: {e}")))?,
        ),
        Err(_) => None,
    };
    if let Some(m) = &meta {
        out.missing = expected(m)
            .into_iter()
            .filter(|f| !dir.join(f).exists())
            .collect();
    }

    let mut curves = Vec::new();
    for p in sorted_files(&dir.join("curves"), "csv")? {
        match read_curve(&p)? {
            Some(c) => curves.push(c),
            None => out
                .warnings
                .push(format!("{}: unrecognized curve file name", p.display())),
        }
    }
    out.rows = summarize(&curves, &mut out.warnings);
    write_csv(
        &dir.join("report").join("gap_curves.csv"),
        &["mode", "algorithm", "seed", "episode", "gap", "ma10"],
        {
            curves.iter().flat_map(|c| {
                (0..c.episode.len()).map(move |i| {
                    vec![
                        c.mode.clone(),
                        c.algorithm.clone(),
                        c.seed.to_string(),
                        c.episode[i].to_string(),
                        c.gap[i].map(num).unwrap_or_default(),
                        c.ma10[i].map(num).unwrap_or_default(),
                    ]
                })
            })
        },
    )?;

    let mut surface = Vec::new();
    for p in sorted_files(&dir.join("bids"), "csv")? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((key, t)) = stem.rsplit_once("_t") else {
            continue;
        };
        let Some((mode, alg, seed)) = parse_key(key) else {
            continue;
        };
        let (_, rows) = read_csv(&p)?;
        for r in rows {
            let mut line = vec![mode.clone(), alg.clone(), seed.to_string(), t.to_string()];
            line.extend(r);
            surface.push(line);
        }
    }
    write_csv(
        &dir.join("report").join("bid_surface.csv"),
        &[
            "mode",
            "algorithm",
            "seed",
            "period",
            "episode",
            "segment",
            "q_start",
            "q_end",
            "price",
        ],
        surface,
    )?;

    for p in sorted_files(dir, "json")? {
        let name = p
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(seed) = name
            .strip_prefix("exploitability_seed")
            .and_then(|s| s.strip_suffix(".json"))
        {
            out.exploitability.push(ExploitabilityTable {
                seed: seed.to_string(),
                source: name.clone(),
                report: read_exploitability(&p)?,
            });
        }
    }
    if !out.exploitability.is_empty() {
        write_json(
            &dir.join("report").join("exploitability_table.json"),
            &out.exploitability,
        )?;
        write_csv(
            &dir.join("report").join("exploitability_bars.csv"),
            &["seed", "agent_id", "exploitability_pct", "delta_profit"],
            out.exploitability.iter().flat_map(|t| {
                t.report.agents.iter().map(|a| {
                    vec![
                        t.seed.clone(),
                        a.agent_id.to_string(),
                        num(a.exploitability_pct),
                        num(a.delta_profit),
                    ]
                })
            }),
        )?;
    }

    let nothing = curves.is_empty() && out.exploitability.is_empty() && meta.is_none();
    if nothing {
        out.warnings
            .push(format!("no run artifacts found in {}", dir.display()));
    } else if meta.is_none() {
        out.warnings.push(format!(
            "{METADATA_FILE} missing; cannot list missing artifacts"
        ));
    }
    for m in &out.missing {
        out.warnings.push(format!("missing artifact {m}"));
    }
    write_csv(
        &dir.join("summary.csv"),
        &SUMMARY_HEADER,
        out.rows.iter().map(SummaryRow::csv),
    )?;
    write_json(&dir.join("summary.json"), &out)?;
    Ok(out)
}
