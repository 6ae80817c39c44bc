//! Run configuration: a JSON file whose unspecified fields take documented
//! defaults. The resolved configuration is echoed into run metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bidlab_core::market_network::{NetworkConfig, NetworkMarket};
use bidlab_core::market_single::SingleNodeConfig;
use bidlab_core::nc_verify::NcCheckConfig;
use bidlab_core::{Algorithm, LearnerConfig, MapMode, NetworkCase};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Environment variable naming the directory run outputs are placed under.
pub const OUTPUT_ROOT_ENV: &str = "BIDLAB_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Mapping comparison under one learner (gap curves per mapping).
    AxisA,
    /// Learner comparison under one mapping.
    AxisB,
    NcCheck,
    MultiAgent,
    Exploitability,
    OracleAudit,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::AxisA => "axis-a",
            Experiment::AxisB => "axis-b",
            Experiment::NcCheck => "nc-check",
            Experiment::MultiAgent => "multi-agent",
            Experiment::Exploitability => "exploitability",
            Experiment::OracleAudit => "oracle-audit",
        }
    }

    /// Whether the experiment trains single-node learners and emits gap curves.
    pub fn is_gap_curve(self) -> bool {
        matches!(self, Experiment::AxisA | Experiment::AxisB)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| format!("unknown experiment {s:?}"))
    }
}

/// Oracle audit settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    /// Random `(D, γ)` instances compared against re-enumeration.
    pub instances: usize,
    /// Leading instances also solved by brute force.
    pub brute_force_instances: usize,
    pub price_step: f64,
    pub q_step: f64,
    /// Grid of the worked example at D = 530, γ = 1.
    pub example_price_step: f64,
    pub example_q_step: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            instances: 10_000,
            brute_force_instances: 1_000,
            price_step: 0.05,
            q_step: 0.5,
            example_price_step: 0.01,
            example_q_step: 0.1,
        }
    }
}

/// Exploitability assessment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploitConfig {
    /// 1-based agents to assess; all when empty.
    pub agents: Vec<usize>,
    pub n_restarts: usize,
    pub common_seeds: Vec<u64>,
    pub epsilon_pct: f64,
    pub warm_start: bool,
    /// Best-response training episodes; the baseline's count when absent.
    pub br_episodes: Option<usize>,
    /// Policies to assess instead of training a baseline profile.
    pub baseline_policies: Option<PathBuf>,
}

impl Default for ExploitConfig {
    fn default() -> Self {
        Self {
            agents: Vec::new(),
            n_restarts: 3,
            common_seeds: (1000..1010).collect(),
            epsilon_pct: 2.0,
            warm_start: true,
            br_episodes: None,
            baseline_policies: None,
        }
    }
}

/// The file as written. Sections are merged onto their defaults key by key.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    name: Option<String>,
    modes: Option<Vec<MapMode>>,
    algorithms: Option<Vec<Algorithm>>,
    seeds: Option<Vec<u64>>,
    episodes: Option<usize>,
    #[serde(default)]
    learner: Map<String, Value>,
    #[serde(default)]
    single_node: Map<String, Value>,
    #[serde(default)]
    network: Map<String, Value>,
    case_file: Option<PathBuf>,
    #[serde(default)]
    nc: Map<String, Value>,
    #[serde(default)]
    audit: Map<String, Value>,
    #[serde(default)]
    exploitability: Map<String, Value>,
    bid_surface_period: Option<usize>,
    threads: Option<usize>,
    output_dir: Option<PathBuf>,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub name: String,
    pub modes: Vec<MapMode>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// One resolved learner per algorithm; `seed` and `episodes` are set per job.
    pub learners: BTreeMap<Algorithm, LearnerConfig>,
    pub single_node: SingleNodeConfig,
    pub network: NetworkConfig,
    pub case_file: Option<PathBuf>,
    pub nc: NcCheckConfig,
    pub audit: AuditConfig,
    pub exploitability: ExploitConfig,
    /// Period whose bid curve is dumped every episode.
    pub bid_surface_period: usize,
    /// Worker threads; excluded from metadata since it does not change results.
    #[serde(skip)]
    pub threads: usize,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

/// 1-based line of the first occurrence of `"key"` in `text`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
}

fn at_line(text: &str, key: &str, msg: String) -> CliError {
    match line_of(text, key) {
        Some(l) => CliError::Config(format!("line {l}: {msg}")),
        None => CliError::Config(msg),
    }
}

/// Recursively overwrites `base` with `overrides`; keys absent from `base` are errors.
fn merge(
    base: &mut Value,
    overrides: &Map<String, Value>,
    path: &str,
    text: &str,
) -> Result<(), CliError> {
    let Value::Object(obj) = base else {
        return Err(CliError::Config(format!("{path} is not a section")));
    };
    for (k, v) in overrides {
        let here = format!("{path}.{k}");
        match obj.get_mut(k) {
            None => {
                let known: Vec<&str> = obj.keys().map(String::as_str).collect();
                return Err(at_line(
                    text,
                    k,
                    format!("unknown field {here}; expected one of {}", known.join(", ")),
                ));
            }
            Some(slot @ Value::Object(_)) if v.is_object() => {
                merge(slot, v.as_object().unwrap(), &here, text)?
            }
            Some(slot) => *slot = v.clone(),
        }
    }
    Ok(())
}

fn resolve<T: Serialize + DeserializeOwned>(
    base: &T,
    overrides: &Map<String, Value>,
    section: &str,
    text: &str,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(base).expect("defaults serialize");
    merge(&mut v, overrides, section, text)?;
    serde_json::from_value(v).map_err(|e| {
        let key = overrides
            .keys()
            .next()
            .map(String::as_str)
            .unwrap_or(section);
        at_line(text, key, format!("{section}: {e}"))
    })
}

impl RunConfig {
    /// Parses and validates a configuration. `name` defaults to `fallback_name`.
    pub fn parse(text: &str, fallback_name: &str) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        let exp = raw.experiment;
        let modes = raw.modes.clone().unwrap_or_else(|| match exp {
            Experiment::AxisA | Experiment::NcCheck => MapMode::ALL.to_vec(),
            _ => vec![MapMode::Dpmp],
        });
        let algorithms = raw.algorithms.unwrap_or_else(|| match exp {
            Experiment::AxisB => vec![Algorithm::Ppo, Algorithm::A2c, Algorithm::Ddpg],
            _ => vec![Algorithm::Ppo],
        });
        let seeds = raw.seeds.unwrap_or_else(|| match exp {
            Experiment::AxisA | Experiment::AxisB => vec![0, 1, 2],
            _ => vec![0],
        });
        let episodes = raw.episodes.unwrap_or(match exp {
            Experiment::MultiAgent | Experiment::Exploitability => 300,
            _ => 1000,
        });
        for key in ["episodes", "seed", "algorithm"] {
            if raw.learner.contains_key(key) {
                return Err(at_line(
                    text,
                    key,
                    format!("learner.{key} is set per job; use the top-level field"),
                ));
            }
        }
        let mut learners = BTreeMap::new();
        for &a in &algorithms {
            let cfg = resolve(
                &LearnerConfig::for_algorithm(a),
                &raw.learner,
                "learner",
                text,
            )?;
            cfg.check()
                .map_err(|e| at_line(text, "learner", format!("{a}: {e}")))?;
            learners.insert(a, cfg);
        }
        let single_node: SingleNodeConfig = resolve(
            &SingleNodeConfig::default(),
            &raw.single_node,
            "single_node",
            text,
        )?;
        let mut network: NetworkConfig =
            resolve(&NetworkConfig::default(), &raw.network, "network", text)?;
        // Network runs take their mapping from `modes` when given, else from the network section.
        let modes = if matches!(exp, Experiment::MultiAgent | Experiment::Exploitability) {
            match raw.modes.as_deref() {
                None => vec![network.mode],
                Some([m]) => {
                    network.mode = *m;
                    vec![*m]
                }
                Some(_) => {
                    return Err(at_line(
                        text,
                        "modes",
                        "network experiments take exactly one mode".into(),
                    ))
                }
            }
        } else {
            modes
        };
        if matches!(exp, Experiment::MultiAgent | Experiment::Exploitability)
            && algorithms.len() != 1
        {
            return Err(at_line(
                text,
                "algorithms",
                "network experiments take exactly one algorithm".into(),
            ));
        }
        let nc: NcCheckConfig = resolve(&NcCheckConfig::default(), &raw.nc, "nc", text)?;
        let audit: AuditConfig = resolve(&AuditConfig::default(), &raw.audit, "audit", text)?;
        let exploitability: ExploitConfig = resolve(
            &ExploitConfig::default(),
            &raw.exploitability,
            "exploitability",
            text,
        )?;
        let name = raw.name.unwrap_or_else(|| fallback_name.to_string());
        let threads = raw
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
        let output_dir = match (root, raw.output_dir) {
            (Some(root), Some(dir)) => root.join(dir),
            (Some(root), None) => root.join(&name),
            (None, Some(dir)) => dir,
            (None, None) => Path::new("results").join(&name),
        };
        let cfg = RunConfig {
            experiment: exp,
            name,
            modes,
            algorithms,
            seeds,
            episodes,
            learners,
            single_node,
            network,
            case_file: raw.case_file,
            nc,
            audit,
            exploitability,
            bid_surface_period: raw.bid_surface_period.unwrap_or(47),
            threads,
            output_dir,
        };
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        Self::parse(&text, stem).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn validate(&self, text: &str) -> Result<(), CliError> {
        let fail = |key: &str, msg: &str| Err(at_line(text, key, msg.to_string()));
        if self.seeds.is_empty() {
            return fail("seeds", "at least one seed is required");
        }
        if self.modes.is_empty() || self.algorithms.is_empty() {
            return fail("modes", "modes and algorithms must not be empty");
        }
        if self.episodes == 0
            && self.experiment != Experiment::NcCheck
            && self.experiment != Experiment::OracleAudit
        {
            return fail("episodes", "episodes must be positive");
        }
        if self.threads == 0 {
            return fail("threads", "threads must be positive");
        }
        if self.experiment.is_gap_curve() {
            bidlab_core::market_single::SingleNodeEnv::new(
                self.single_node.clone(),
                MapMode::Dpmp,
                1.0,
            )
            .map_err(|e| at_line(text, "single_node", e.to_string()))?;
            if self.bid_surface_period >= self.single_node.demand.periods {
                return fail(
                    "bid_surface_period",
                    "bid_surface_period must be a period of the episode",
                );
            }
        }
        if matches!(
            self.experiment,
            Experiment::MultiAgent | Experiment::Exploitability
        ) {
            NetworkMarket::new(self.case()?, self.network.clone(), 0)
                .map_err(|e| at_line(text, "network", e.to_string()))?;
            let e = &self.exploitability;
            if e.n_restarts == 0 || e.common_seeds.is_empty() {
                return fail(
                    "exploitability",
                    "n_restarts must be positive and common_seeds nonempty",
                );
            }
            let n = self.case()?.generators.len();
            if let Some(a) = e.agents.iter().find(|&&a| a == 0 || a > n) {
                return fail("agents", &format!("agent {a} outside 1..={n}"));
            }
            if let Some(p) = &e.baseline_policies {
                if !p.is_file() {
                    return fail(
                        "baseline_policies",
                        &format!("{} does not exist", p.display()),
                    );
                }
            }
        }
        if self.experiment == Experiment::NcCheck && self.nc.segments == 0 {
            return fail("segments", "nc.segments must be positive");
        }
        if self.experiment == Experiment::OracleAudit {
            let a = &self.audit;
            if !(a.price_step > 0.0
                && a.q_step > 0.0
                && a.example_price_step > 0.0
                && a.example_q_step > 0.0)
            {
                return fail("audit", "audit grid steps must be positive");
            }
            if a.brute_force_instances > a.instances {
                return fail(
                    "brute_force_instances",
                    "brute_force_instances cannot exceed instances",
                );
            }
        }
        Ok(())
    }

    /// The network case: the configured file or the bundled 39-bus system.
    pub fn case(&self) -> Result<NetworkCase, CliError> {
        match &self.case_file {
            None => Ok(NetworkCase::ieee39()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("case file {}: {e}", p.display())))?;
                NetworkCase::from_json(&text)
                    .map_err(|e| CliError::Config(format!("case file {}: {e}", p.display())))
            }
        }
    }

    /// The learner for one job.
    pub fn learner(&self, algorithm: Algorithm, seed: u64) -> LearnerConfig {
        LearnerConfig {
            seed,
            episodes: self.episodes,
            ..self.learners[&algorithm].clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_every_field() {
        let c = RunConfig::parse(r#"{"experiment": "axis-b"}"#, "b").unwrap();
        assert_eq!(
            c.algorithms,
            [Algorithm::Ppo, Algorithm::A2c, Algorithm::Ddpg]
        );
        assert_eq!(
            (c.seeds.as_slice(), c.episodes, c.bid_surface_period),
            (&[0, 1, 2][..], 1000, 47)
        );
        assert_eq!(c.learners[&Algorithm::A2c].minibatch, 8);
        assert_eq!(c.name, "b");
    }

    #[test]
    fn nested_overrides_keep_sibling_defaults() {
        let c = RunConfig::parse(
            r#"{"experiment": "axis-a", "single_node": {"demand": {"noise_std": 5.0}}, "learner": {"actor_lr": 1e-3}}"#,
            "a",
        )
        .unwrap();
        assert_eq!(c.single_node.demand.noise_std, 5.0);
        assert_eq!(c.single_node.demand.mean_level, 500.0);
        assert!(c.learners.values().all(|l| l.actor_lr == 1e-3));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text =
            "{\n  \"experiment\": \"axis-a\",\n  \"learner\": {\n    \"actor_rate\": 1\n  }\n}";
        let e = RunConfig::parse(text, "x").unwrap_err().to_string();
        assert!(e.contains("line 4") && e.contains("actor_rate"), "{e}");
        let e = RunConfig::parse("{\n  \"experiment\": \"axis-z\"\n}", "x")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = RunConfig::parse("{\n \"experiment\": \"axis-a\",\n \"seeds\": []\n}", "x")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = RunConfig::parse(r#"{"experiment": "axis-a", "learner": {"seed": 3}}"#, "x")
            .unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
    }
}
