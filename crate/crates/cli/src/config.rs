//! TOML experiment configs and their expansion into simulation points.

use serde::Deserialize;
use switchsim::sim::StoppingRule;
use switchsim::{PatternKind, SimConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub runs: Vec<RunGrid>,
    #[serde(default)]
    pub knees: Vec<KneeGrid>,
    pub sweep: Option<SweepBase>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub out: Option<String>,
}

fn default_seeds() -> u64 {
    1
}

/// One cartesian grid of simulation points.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunGrid {
    pub scheduler: Vec<String>,
    pub pattern: Vec<String>,
    pub n: Vec<usize>,
    pub load: Vec<f64>,
    /// mean burst sizes; 0 means Bernoulli i.i.d.
    #[serde(default)]
    pub burst: Vec<u64>,
    /// replications per point
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    pub max_slots: Option<u64>,
    pub min_slots_factor: Option<u64>,
    pub relative_precision: Option<f64>,
    pub confidence: Option<f64>,
    #[serde(default)]
    pub discard_warmup: bool,
}

/// A throughput-knee search grid.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KneeGrid {
    pub scheduler: Vec<String>,
    pub pattern: Vec<String>,
    pub n: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    pub min_slots_factor: Option<u64>,
}

fn default_tol() -> f64 {
    0.005
}

/// Base point for the sweep subcommands; the swept axis overrides one field.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBase {
    pub scheduler: Vec<String>,
    pub pattern: Vec<String>,
    pub n: usize,
    pub load: f64,
    #[serde(default)]
    pub burst: u64,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    /// axis values; each sweep subcommand has its own default
    pub grid: Option<Vec<u64>>,
    pub max_slots: Option<u64>,
    pub min_slots_factor: Option<u64>,
    pub relative_precision: Option<f64>,
}

/// A fully expanded simulation point with its CSV identity.
#[derive(Clone, Debug)]
pub struct RunPoint {
    pub scheduler: String,
    pub pattern: PatternKind,
    pub n: usize,
    pub load: f64,
    pub burst: u64,
    pub seed: u64,
    pub config: SimConfig,
}

pub fn source_spec(burst: u64) -> String {
    if burst == 0 {
        "bernoulli".to_string()
    } else {
        format!("onoff:burst={burst}")
    }
}

impl RunGrid {
    pub fn expand(&self, seed_base: u64, points: &mut Vec<RunPoint>) -> anyhow::Result<()> {
        let bursts: &[u64] = if self.burst.is_empty() { &[0] } else { &self.burst };
        for scheduler in &self.scheduler {
            for pattern in &self.pattern {
                let kind: PatternKind = pattern.parse()?;
                for &n in &self.n {
                    for &load in &self.load {
                        for &burst in bursts {
                            for rep in 0..self.seeds {
                                let idx = points.len() as u64;
                                let seed = seed_base
                                    .wrapping_add(idx.wrapping_mul(7919))
                                    .wrapping_add(rep);
                                let mut config = SimConfig::new(
                                    n,
                                    scheduler,
                                    &source_spec(burst),
                                    kind,
                                    load,
                                    seed,
                                );
                                let mut stopping = StoppingRule::default();
                                if let Some(v) = self.min_slots_factor {
                                    stopping.min_slots_factor = v;
                                }
                                if let Some(v) = self.relative_precision {
                                    stopping.relative_precision = v;
                                }
                                if let Some(v) = self.confidence {
                                    stopping.confidence = v;
                                }
                                if let Some(v) = self.max_slots {
                                    stopping.max_slots = v;
                                }
                                config.stopping = stopping;
                                config.discard_warmup = self.discard_warmup;
                                points.push(RunPoint {
                                    scheduler: scheduler.clone(),
                                    pattern: kind,
                                    n,
                                    load,
                                    burst,
                                    seed,
                                    config,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn parse_file(text: &str) -> anyhow::Result<ExperimentFile> {
    Ok(toml::from_str(text)?)
}
