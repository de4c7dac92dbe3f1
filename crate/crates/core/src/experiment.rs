//! One JSON document describing a whole experiment, and the lifecycle stages
//! that consume it. The top-level seed drives every random source.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    offline_buffer, train_offline, train_online, Checkpoint, ModelConfig, QModel, TrainConfig, TrainLogRow, TrainMode,
    Trainer,
};
use crate::envsim::{evaluate, evaluate_baseline, train_env, EnvMetricsReport, ForestConfig, ForestEnv, ForestModel};
use crate::error::{Error, Result};
use crate::evalrep::{compare_report, rollout_cases, rollout_cases_pkpd, GreedyPolicy, Report, Trajectory};
use crate::mg::ActionGrid;
use crate::mixers::{MixerConfig, MixerKind};
use crate::normalize::Normalizer;
use crate::pipeline::{apply_split, split_dataset, PipelineConfig, Split};
use crate::synth::{generate_dataset, Manifest, SynthConfig};
use crate::types::{CaseRecord, STATE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_cases: usize,
    #[serde(flatten)]
    pub config: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { n_cases: 100, config: SynthConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentsSection {
    pub mode: TrainMode,
    pub hidden: Vec<usize>,
    pub grid: ActionGrid,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for AgentsSection {
    fn default() -> Self {
        Self {
            mode: TrainMode::Online,
            hidden: vec![64, 64],
            grid: ActionGrid::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixerSection {
    pub kind: MixerKind,
    #[serde(flatten)]
    pub config: MixerConfig,
}

impl Default for MixerSection {
    fn default() -> Self {
        Self { kind: MixerKind::Vdn, config: MixerConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Also roll every policy out in the population PK/PD model.
    pub baseline_pkpd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synth: SynthSection,
    pub pipeline: PipelineConfig,
    pub envsim: ForestConfig,
    pub agents: AgentsSection,
    pub mixer: MixerSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthSection::default(),
            pipeline: PipelineConfig::default(),
            envsim: ForestConfig::default(),
            agents: AgentsSection::default(),
            mixer: MixerSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Copy the top-level seed into every stage and check each section.
    pub fn resolved(mut self) -> Result<Self> {
        self.envsim.seed = self.seed;
        self.agents.train.seed = self.seed;
        self.synth.config.validate()?;
        self.pipeline.validate()?;
        self.agents.train.validate()?;
        self.mixer.config.validate()?;
        ActionGrid::new(self.agents.grid.levels, self.agents.grid.max_ml.clone())?;
        if self.agents.grid.n_agents() != 2 {
            return Err(Error::config("the action grid needs one volume bound per drug"));
        }
        Ok(self)
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.mixer.kind, 2, self.agents.grid.levels, STATE_DIM);
        m.mixer = self.mixer.config;
        m.hidden = self.agents.hidden.clone();
        m
    }
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    generate_dataset(out, cfg.synth.n_cases, cfg.seed, &cfg.synth.config)
}

/// Train and test records of a preprocessed directory, using its `split.json`.
pub fn load_split(data: &Path) -> Result<(Vec<CaseRecord>, Vec<CaseRecord>)> {
    let records = crate::io::read_records_dir(&data.join("records"))?;
    let split: Split = crate::io::read_json(&data.join("split.json"))?;
    apply_split(&records, &split)
}

/// Run the pipeline on `input` into `out` and fix the case split there.
pub fn preprocess(cfg: &ExperimentConfig, input: &Path, out: &Path) -> Result<crate::pipeline::PipelineReport> {
    let report = crate::pipeline::run_dir(input, out, &cfg.pipeline)?;
    let records = crate::io::read_records_dir(&out.join("records"))?;
    crate::io::write_json(&out.join("split.json"), &split_dataset(&records, cfg.seed)?)?;
    Ok(report)
}

pub fn fit_env(cfg: &ExperimentConfig, train: &[CaseRecord]) -> Result<ForestModel> {
    train_env(train, &cfg.envsim)
}

/// Forest metrics, optionally beside the PK/PD baseline, with importances.
pub fn env_metrics(cfg: &ExperimentConfig, model: &ForestModel, records: &[CaseRecord], split: &str, baseline: bool) -> Result<EnvMetricsReport> {
    let mut methods = vec![evaluate(model, records)?];
    if baseline {
        methods.push(evaluate_baseline(records, &model.normalizer, &cfg.synth.config.pd)?);
    }
    let mut feature_importance: Vec<(String, f64)> =
        model.feature_names.iter().cloned().zip(model.feature_importance()).collect();
    feature_importance.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(EnvMetricsReport { split: split.to_string(), methods, feature_importance })
}

/// Online training rolls out in the forest over the training cases; offline
/// training only replays their logged transitions and ignores `env`.
pub fn train_agents(cfg: &ExperimentConfig, train: &[CaseRecord], env: Option<&ForestModel>) -> Result<(Checkpoint, Vec<TrainLogRow>)> {
    let grid = cfg.agents.grid.clone();
    let tc = &cfg.agents.train;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(QModel::new(cfg.model_config(), &mut rng)?, tc);
    let (norm, log) = match cfg.agents.mode {
        TrainMode::Online => {
            let model = env.ok_or_else(|| Error::config("online training needs an environment model"))?;
            let mut forest = ForestEnv::new(model, grid.clone(), train)?;
            let log = train_online(&mut trainer, &mut forest, tc)?;
            (model.normalizer.clone(), log)
        }
        TrainMode::Offline => {
            let norm = match env {
                Some(m) => m.normalizer.clone(),
                None => Normalizer::fit(train)?,
            };
            let buffer = offline_buffer(train, &norm, &grid)?;
            let log = train_offline(&mut trainer, &buffer, tc)?;
            (norm, log)
        }
    };
    Ok((Checkpoint::capture(&trainer, cfg.agents.mode, tc, &grid, &norm), log))
}

/// Method label of a checkpoint in reports.
pub fn checkpoint_label(c: &Checkpoint) -> String {
    format!("{}_{}", c.kind, c.mode)
}

/// Recorded behavior against every checkpoint rolled out in the forest on
/// `records`; with `pkpd` each checkpoint also gets a population PK/PD row.
pub fn evaluate_agents(
    cfg: &ExperimentConfig,
    env: &ForestModel,
    checkpoints: &[Checkpoint],
    records: &[CaseRecord],
    pkpd: bool,
) -> Result<Report> {
    let mut runs: Vec<(String, Vec<Trajectory>)> =
        vec![("behavior".to_string(), records.iter().map(Trajectory::from_record).collect())];
    for c in checkpoints {
        let model = c.model()?;
        let policy = GreedyPolicy { model: &model, normalizer: &c.normalizer };
        let label = checkpoint_label(c);
        if runs.iter().any(|(l, _)| *l == label) {
            return Err(Error::config(format!("checkpoint {label} given twice")));
        }
        runs.push((label.clone(), rollout_cases(env, &c.grid, &policy, records)?));
        if pkpd {
            runs.push((format!("{label}_pkpd"), rollout_cases_pkpd(&cfg.synth.config.pd, &c.grid, &policy, records)?));
        }
    }
    let refs: Vec<(&str, &[Trajectory])> = runs.iter().map(|(l, t)| (l.as_str(), t.as_slice())).collect();
    compare_report(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        let partial: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 4, "synth": {"n_cases": 7}, "mixer": {"kind": "qmix"}}"#).unwrap();
        assert_eq!(partial.synth.n_cases, 7);
        assert_eq!(partial.synth.config, SynthConfig::default());
        assert_eq!(partial.mixer.kind, MixerKind::Qmix);
        assert_eq!(partial.agents, AgentsSection::default());
    }

    #[test]
    fn resolve_propagates_seed() {
        let c = ExperimentConfig { seed: 9, ..Default::default() }.resolved().unwrap();
        assert_eq!((c.envsim.seed, c.agents.train.seed), (9, 9));
        let mut bad = ExperimentConfig::default();
        bad.agents.grid.max_ml = vec![1.0];
        assert!(bad.resolved().is_err());
    }
}
