//! Necessary-condition diagnostics for every configured mapping.

use bidlab_core::nc_verify::{nc_check, NcCheckConfig, NcReport, Verdict};
use bidlab_core::MapMode;
use rayon::prelude::*;

use super::JobFailure;
use crate::artifacts::{num, write_csv, write_json};
use crate::config::RunConfig;
use crate::CliError;

fn verdict(v: Verdict) -> String {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::NotApplicable => "n/a",
    }
    .to_string()
}

pub fn run(cfg: &RunConfig) -> Result<Vec<JobFailure>, CliError> {
    let jobs: Vec<(MapMode, u64)> = cfg
        .modes
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let map_cfg = cfg.single_node.map_config();
    let results: Vec<bidlab_core::Result<NcReport>> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            nc_check(
                mode,
                &map_cfg,
                &NcCheckConfig {
                    seed,
                    ..cfg.nc.clone()
                },
            )
        })
        .collect();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for (&(mode, seed), res) in jobs.iter().zip(results) {
        let key = format!("{mode}_seed{seed}");
        match res {
            Ok(r) => {
                write_json(&cfg.output_dir.join("nc").join(format!("{key}.json")), &r)?;
                rows.push(vec![
                    mode.to_string(),
                    seed.to_string(),
                    verdict(r.verdict.nc1),
                    verdict(r.verdict.nc2),
                    verdict(r.verdict.nc3),
                    r.nc2_multiplicity.distinct.to_string(),
                    num(r.nc3_min_abs_det),
                    r.nc3_degenerate_points.to_string(),
                ]);
            }
            Err(e) => failures.push(JobFailure {
                job: key,
                error: e.to_string(),
            }),
        }
    }
    write_csv(
        &cfg.output_dir.join("nc").join("summary.csv"),
        &[
            "mode",
            "seed",
            "nc1",
            "nc2",
            "nc3",
            "max_preimages",
            "min_abs_det",
            "degenerate_points",
        ],
        rows,
    )?;
    Ok(failures)
}
