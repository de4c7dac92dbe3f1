//! Policy rollouts, CR / MDPE / MDAPE statistics and comparison reports.

pub mod boxstats;
pub mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{reward, QModel, BIS_TARGET};
use crate::envsim::baseline::{amounts_from_state, pkpd_baseline_step, population_pk};
use crate::envsim::{step_environment, ForestModel};
use crate::error::{Error, Result};
use crate::mg::{ActionGrid, JointAction, N_DRUGS};
use crate::normalize::Normalizer;
use crate::synth::PdParams;
use crate::types::{AnesthesiaState, CaseRecord};

pub use boxstats::{box_stats, BoxStats};
pub use report::{compare_report, read_aggregate_csv, read_per_case_csv, write_aggregate_csv, write_report, AggregateRow, CaseRow, Report};

/// Anything that maps a state to a joint dose.
pub trait Policy: Sync {
    fn act(&self, state: &AnesthesiaState) -> Result<JointAction>;
}

/// Greedy (epsilon = 0) decisions of a trained model.
pub struct GreedyPolicy<'a> {
    pub model: &'a QModel,
    pub normalizer: &'a Normalizer,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&self, state: &AnesthesiaState) -> Result<JointAction> {
        Ok(self.model.greedy(&self.normalizer.normalize(state)?))
    }
}

impl<F: Fn(&AnesthesiaState) -> Result<JointAction> + Sync> Policy for F {
    fn act(&self, state: &AnesthesiaState) -> Result<JointAction> {
        self(state)
    }
}

/// States visited, per-step infused volumes and rewards. `states` has one
/// more entry than `volumes` and `rewards`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub case_id: String,
    pub states: Vec<AnesthesiaState>,
    pub volumes: Vec<[f64; N_DRUGS]>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn bis_series(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.bis).collect()
    }

    pub fn cr(&self) -> f64 {
        cumulative_reward(&self.rewards)
    }

    /// A logged case read as a trajectory: doses are the volume increments
    /// and rewards come from each next BIS.
    pub fn from_record(rec: &CaseRecord) -> Self {
        let volumes = rec
            .steps
            .windows(2)
            .map(|w| [w[1].ppf_vol - w[0].ppf_vol, w[1].rftn_vol - w[0].rftn_vol])
            .collect();
        Self {
            case_id: rec.case_id.clone(),
            states: rec.steps.clone(),
            volumes,
            rewards: rec.steps.iter().skip(1).map(|s| reward(s.bis)).collect(),
        }
    }
}

/// Greedy rollout against the forest environment.
pub fn rollout<P: Policy + ?Sized>(
    env: &ForestModel,
    grid: &ActionGrid,
    policy: &P,
    case_id: &str,
    initial: &AnesthesiaState,
    horizon: usize,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        case_id: case_id.to_string(),
        states: vec![*initial],
        volumes: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
    };
    let mut state = *initial;
    for _ in 0..horizon {
        let action = policy.act(&state)?;
        let vol = grid.decode(&action)?;
        let (next, r) = step_environment(env, &state, &action, grid)?;
        traj.volumes.push([vol[0], vol[1]]);
        traj.rewards.push(r);
        traj.states.push(next);
        state = next;
    }
    Ok(traj)
}

/// Greedy rollout against the population-mean PK/PD model: vitals are held
/// at their initial values, BIS and concentrations follow the analytic model.
pub fn rollout_pkpd<P: Policy + ?Sized>(
    pd: &PdParams,
    grid: &ActionGrid,
    policy: &P,
    case_id: &str,
    initial: &AnesthesiaState,
    horizon: usize,
) -> Result<Trajectory> {
    let pk = population_pk(&initial.profile);
    let mut amounts = amounts_from_state(initial, &pk);
    let mut traj = Trajectory {
        case_id: case_id.to_string(),
        states: vec![*initial],
        volumes: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
    };
    let mut state = *initial;
    for _ in 0..horizon {
        let vol = grid.decode(&policy.act(&state)?)?;
        let p = pkpd_baseline_step(amounts, state.bis, [vol[0], vol[1]], &pk, pd)?;
        amounts = p.amounts;
        let mut next = state;
        next.t += 1;
        next.bis = p.bis;
        next.ppf_cp = p.cp[0];
        next.ppf_ce = p.ce[0];
        next.rftn_cp = p.cp[1];
        next.rftn_ce = p.ce[1];
        next.ppf_vol += vol[0];
        next.rftn_vol += vol[1];
        traj.volumes.push([vol[0], vol[1]]);
        traj.rewards.push(reward(next.bis));
        traj.states.push(next);
        state = next;
    }
    Ok(traj)
}

/// One rollout per record, from its first state for its own length, in parallel.
pub fn rollout_cases<P: Policy + ?Sized>(env: &ForestModel, grid: &ActionGrid, policy: &P, records: &[CaseRecord]) -> Result<Vec<Trajectory>> {
    records
        .par_iter()
        .map(|r| {
            let first = r.steps.first().ok_or_else(|| Error::domain(format!("case {} is empty", r.case_id)))?;
            rollout(env, grid, policy, &r.case_id, first, r.len() - 1)
        })
        .collect()
}

pub fn rollout_cases_pkpd<P: Policy + ?Sized>(pd: &PdParams, grid: &ActionGrid, policy: &P, records: &[CaseRecord]) -> Result<Vec<Trajectory>> {
    records
        .par_iter()
        .map(|r| {
            let first = r.steps.first().ok_or_else(|| Error::domain(format!("case {} is empty", r.case_id)))?;
            rollout_pkpd(pd, grid, policy, &r.case_id, first, r.len() - 1)
        })
        .collect()
}

pub fn cumulative_reward(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

/// Median with the mean of the central pair for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("median of an empty series"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median performance error of BIS against the target, in percent.
pub fn mdpe(bis: &[f64]) -> Result<f64> {
    let pe: Vec<f64> = bis.iter().map(|b| (b - BIS_TARGET) / BIS_TARGET * 100.0).collect();
    median(&pe)
}

/// Median absolute performance error of BIS against the target, in percent.
pub fn mdape(bis: &[f64]) -> Result<f64> {
    let ape: Vec<f64> = bis.iter().map(|b| (b - BIS_TARGET).abs() / BIS_TARGET * 100.0).collect();
    median(&ape)
}
