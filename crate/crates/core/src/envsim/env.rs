//! The forest as a Markov-game environment.

use super::forest::ForestModel;
use crate::agents::reward;
use crate::error::{Error, Result};
use crate::mg::{ActionGrid, Environment, JointAction, StepOutcome};
use crate::types::{AnesthesiaState, CaseRecord, STATE_DIM, TARGET_FEATURE_INDEX};

/// Advance `state` by one 30 s step under `action`.
///
/// Cumulative volumes grow by the decoded doses, the nine dynamic indicators
/// come from the forest, and the profile is carried over unchanged.
pub fn step_environment(
    model: &ForestModel,
    state: &AnesthesiaState,
    action: &JointAction,
    grid: &ActionGrid,
) -> Result<(AnesthesiaState, f64)> {
    let norm = &model.normalizer;
    if !norm.is_fitted() {
        return Err(Error::config("environment model carries no fitted normalizer"));
    }
    let dose = grid.decode(action)?;
    let next_vol = [state.ppf_vol + dose[0], state.rftn_vol + dose[1]];
    let y = norm.denormalize_targets(&model.predict_transition(state, [dose[0], dose[1]])?)?;
    let mut f = state.features();
    for (k, &i) in TARGET_FEATURE_INDEX.iter().enumerate() {
        f[i] = y[k];
    }
    let mut next = AnesthesiaState::from_features(&f, state.t + 1);
    next.profile = state.profile;
    next.ppf_vol = next_vol[0];
    next.rftn_vol = next_vol[1];
    next.bis = next.bis.clamp(0.0, 100.0);
    for c in [&mut next.ppf_cp, &mut next.ppf_ce, &mut next.rftn_cp, &mut next.rftn_ce] {
        *c = c.max(0.0);
    }
    Ok((next, reward(next.bis)))
}

/// One episode per case: start from the case's first record and run for the
/// case's remaining length.
#[derive(Debug, Clone)]
pub struct Episode {
    pub case_id: String,
    pub initial: AnesthesiaState,
    pub horizon: usize,
}

impl Episode {
    pub fn from_record(rec: &CaseRecord) -> Result<Self> {
        let initial = *rec
            .steps
            .first()
            .ok_or_else(|| Error::config(format!("case {} has no steps", rec.case_id)))?;
        Ok(Self {
            case_id: rec.case_id.clone(),
            initial,
            horizon: rec.len() - 1,
        })
    }
}

pub struct ForestEnv<'a> {
    model: &'a ForestModel,
    grid: ActionGrid,
    episodes: Vec<Episode>,
    state: Option<AnesthesiaState>,
    steps_left: usize,
}

impl<'a> ForestEnv<'a> {
    pub fn new(model: &'a ForestModel, grid: ActionGrid, records: &[CaseRecord]) -> Result<Self> {
        if !model.normalizer.is_fitted() {
            return Err(Error::config("environment model carries no fitted normalizer"));
        }
        if model.n_features != STATE_DIM {
            return Err(Error::config("environment model was not fitted on anesthesia states"));
        }
        let episodes = records.iter().map(Episode::from_record).collect::<Result<Vec<_>>>()?;
        if episodes.is_empty() {
            return Err(Error::config("environment needs at least one initial state"));
        }
        Ok(Self {
            model,
            grid,
            episodes,
            state: None,
            steps_left: 0,
        })
    }

    pub fn state(&self) -> Option<&AnesthesiaState> {
        self.state.as_ref()
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn observe(&self, state: &AnesthesiaState) -> Result<Vec<f64>> {
        Ok(self.model.normalizer.normalize(state)?.to_vec())
    }
}

impl Environment for ForestEnv<'_> {
    fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    fn episode_label(&self, episode: usize) -> String {
        self.episodes[episode].case_id.clone()
    }

    fn horizon(&self, episode: usize) -> usize {
        self.episodes[episode].horizon
    }

    fn reset(&mut self, episode: usize) -> Result<Vec<f64>> {
        let ep = self
            .episodes
            .get(episode)
            .ok_or_else(|| Error::domain(format!("no episode {episode}")))?;
        self.state = Some(ep.initial);
        self.steps_left = ep.horizon;
        self.observe(&ep.initial)
    }

    fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
        let state = self.state.ok_or_else(|| Error::config("step before reset"))?;
        let (next, r) = step_environment(self.model, &state, action, &self.grid)?;
        self.steps_left = self.steps_left.saturating_sub(1);
        self.state = Some(next);
        Ok(StepOutcome {
            observation: self.observe(&next)?,
            reward: r,
            done: self.steps_left == 0,
        })
    }
}
