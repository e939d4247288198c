//! Offline Q-learning over (state, subgoal) pairs, and the goal-selection
//! policy used online.
//!
//! The network predicts the total remaining plan length through a subgoal:
//! the cost of reaching it plus the cost of finishing the game afterwards.
//! Rewards are plan lengths; reaching the final goal is worth -100 and
//! unreachable or dead-end subgoals 100, so low predictions mean good
//! subgoals and selection is an argmin. Targets are bootstrapped with a
//! periodically synced frozen copy of the network (fixed Q-targets) and a
//! discount of 1: target = r + min over g' in G(s') of Q(s', g').
//!
//! Values are scaled by `reward_scale` during optimization and unscaled at
//! prediction time.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{formulate_subgoals, GameState, Status, Subgoal, SubgoalPattern};
use crate::level::encode_observation;
use crate::nn::{
    backward, forward, optimize_step, AdamState, NetError, NetworkSpec, Parameters,
};

pub const WIN_REWARD: f64 = -100.0;
pub const DEAD_END_REWARD: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminalKind {
    None,
    FinalGoal,
    DeadEnd,
    Unreachable,
}

impl TerminalKind {
    pub fn is_terminal(self) -> bool {
        self != TerminalKind::None
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            TerminalKind::None => 0,
            TerminalKind::FinalGoal => 1,
            TerminalKind::DeadEnd => 2,
            TerminalKind::Unreachable => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<TerminalKind> {
        match code {
            0 => Some(TerminalKind::None),
            1 => Some(TerminalKind::FinalGoal),
            2 => Some(TerminalKind::DeadEnd),
            3 => Some(TerminalKind::Unreachable),
            _ => None,
        }
    }
}

/// One (s, g*, r, s') training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceSample {
    pub state: GameState,
    pub chosen: Subgoal,
    pub reward: f64,
    pub next_state: GameState,
    pub terminal: TerminalKind,
}

impl ExperienceSample {
    /// Checks the reward-assignment invariants.
    pub fn validate(&self) -> Result<(), LearnError> {
        let ok = match self.terminal {
            TerminalKind::FinalGoal => self.reward == WIN_REWARD,
            TerminalKind::DeadEnd => self.reward == DEAD_END_REWARD,
            TerminalKind::Unreachable => {
                self.reward == DEAD_END_REWARD && self.next_state == self.state
            }
            TerminalKind::None => self.reward >= 0.0 && self.reward.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(LearnError::InvalidSample)
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub gamma: f64,
    pub target_sync_period: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            gamma: 1.0,
            target_sync_period: 500,
            batch_size: 32,
            iterations: 2000,
            reward_scale: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("non-terminal next state formulates no candidate subgoals (engine bug)")]
    NoCandidateSubgoals,
    #[error("every candidate subgoal has been excluded")]
    AllCandidatesExcluded,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("sample violates the reward-assignment invariants")]
    InvalidSample,
    #[error("training loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Outcome of pursuing one chosen subgoal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubgoalOutcome {
    /// A plan was found and executed to completion; `cost` is its length.
    PlanExecuted { cost: u32 },
    /// The planner proved the subgoal unreachable.
    Unreachable,
}

/// Maps a subgoal outcome to its reward and terminal kind: plan length for
/// ordinary progress, -100 for winning, 100 for dying, reaching a state
/// with no candidate subgoals, or an unreachable subgoal.
pub fn reward_of(outcome: SubgoalOutcome, next_state: &GameState) -> (f64, TerminalKind) {
    match outcome {
        SubgoalOutcome::Unreachable => (DEAD_END_REWARD, TerminalKind::Unreachable),
        SubgoalOutcome::PlanExecuted { cost } => match next_state.status() {
            Status::Won => (WIN_REWARD, TerminalKind::FinalGoal),
            Status::Lost => (DEAD_END_REWARD, TerminalKind::DeadEnd),
            Status::Running => {
                let pattern = SubgoalPattern::for_game(next_state.game());
                if formulate_subgoals(next_state, &pattern).is_empty() {
                    (DEAD_END_REWARD, TerminalKind::DeadEnd)
                } else {
                    (cost as f64, TerminalKind::None)
                }
            }
        },
    }
}

/// Unscaled predicted plan length for (state, subgoal).
pub fn predict(params: &Parameters, state: &GameState, subgoal: Subgoal, reward_scale: f64) -> Result<f64, LearnError> {
    let obs = encode_observation(state, Some(subgoal)).expect("subgoal tile in bounds");
    Ok(forward(params, &obs)? / reward_scale)
}

/// The fixed-target training value for a sample, in unscaled units:
/// the reward alone for terminal samples, otherwise reward + gamma times the
/// cheapest predicted candidate at the next state.
pub fn bellman_target(
    sample: &ExperienceSample,
    target_params: &Parameters,
    config: &TrainConfig,
) -> Result<f64, LearnError> {
    if sample.terminal.is_terminal() {
        return Ok(sample.reward);
    }
    let pattern = SubgoalPattern::for_game(sample.next_state.game());
    let candidates = formulate_subgoals(&sample.next_state, &pattern);
    if candidates.is_empty() {
        return Err(LearnError::NoCandidateSubgoals);
    }
    let mut best = f64::INFINITY;
    for g in candidates {
        let v = predict(target_params, &sample.next_state, g, config.reward_scale)?;
        if v < best {
            best = v;
        }
    }
    Ok(sample.reward + config.gamma * best)
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: Parameters,
    pub loss_history: Vec<f64>,
}

/// Offline training: uniform minibatches, squared-difference loss against
/// fixed targets, target network synced every `target_sync_period` updates.
pub fn train(
    dataset: &[ExperienceSample],
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainResult, LearnError> {
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let n = dataset.len();
    // Encode every (s, g*) input once; candidate encodings at s' are needed
    // per target-network sync, so cache them too.
    let inputs: Vec<_> = dataset
        .iter()
        .map(|s| encode_observation(&s.state, Some(s.chosen)).expect("subgoal in bounds"))
        .collect();
    let candidates: Vec<Vec<_>> = dataset
        .iter()
        .map(|s| {
            if s.terminal.is_terminal() {
                return Ok(Vec::new());
            }
            let pattern = SubgoalPattern::for_game(s.next_state.game());
            let goals = formulate_subgoals(&s.next_state, &pattern);
            if goals.is_empty() {
                return Err(LearnError::NoCandidateSubgoals);
            }
            Ok(goals
                .into_iter()
                .map(|g| encode_observation(&s.next_state, Some(g)).expect("subgoal in bounds"))
                .collect())
        })
        .collect::<Result<_, _>>()?;

    let mut params = Parameters::init(spec);
    let mut target = params.clone();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut target_cache: HashMap<usize, f64> = HashMap::new();
    let mut loss_history = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let idx = rng.gen_range(0..n);
            let target_value = match target_cache.get(&idx) {
                Some(&v) => v,
                None => {
                    let sample = &dataset[idx];
                    let v = if sample.terminal.is_terminal() {
                        sample.reward
                    } else {
                        let mut best = f64::INFINITY;
                        for obs in &candidates[idx] {
                            let q = forward(&target, obs)? / config.reward_scale;
                            if q < best {
                                best = q;
                            }
                        }
                        sample.reward + config.gamma * best
                    };
                    target_cache.insert(idx, v);
                    v
                }
            };
            batch.push((&inputs[idx], target_value * config.reward_scale));
        }
        let (loss, grads) =
            backward(&mut params, &batch).map_err(|e| match e {
                NetError::NonFiniteLoss => LearnError::NonFiniteLoss { iteration: iter },
                other => LearnError::Net(other),
            })?;
        optimize_step(&mut params, &grads, &mut adam)?;
        loss_history.push(loss);
        if (iter + 1) % config.target_sync_period == 0 {
            target = params.clone();
            target_cache.clear();
        }
    }
    Ok(TrainResult { params, loss_history })
}

/// Picks the non-excluded candidate with the lowest predicted value; ties
/// break by row-major tile order. A single remaining candidate is returned
/// without evaluating the network.
pub fn select_goal(
    state: &GameState,
    candidates: &[Subgoal],
    params: &Parameters,
    excluded: &HashSet<Subgoal>,
) -> Result<Subgoal, LearnError> {
    let avail: Vec<Subgoal> =
        candidates.iter().copied().filter(|g| !excluded.contains(g)).collect();
    if avail.is_empty() {
        return Err(LearnError::AllCandidatesExcluded);
    }
    if avail.len() == 1 {
        return Ok(avail[0]);
    }
    let mut scored = Vec::with_capacity(avail.len());
    for g in avail {
        let obs = encode_observation(state, Some(g)).expect("subgoal in bounds");
        scored.push((forward(params, &obs)?, g));
    }
    Ok(argmin_subgoal(&scored))
}

/// Argmin with deterministic tie-breaking by (tile, kind).
pub(crate) fn argmin_subgoal(scored: &[(f64, Subgoal)]) -> Subgoal {
    let mut best = scored[0];
    for &(score, g) in &scored[1..] {
        let better = score < best.0
            || (score == best.0
                && (g.tile, g.kind) < (best.1.tile, best.1.kind));
        if better {
            best = (score, g);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Action, Ruleset};
    use crate::level::{parse_level, GameId, Pos};
    use crate::nn::{ConvLayerSpec, NetworkSpec};

    fn bd_state(text: &str) -> GameState {
        GameState::initial(&parse_level(text, GameId::BoulderDash).unwrap(), Ruleset::Mini)
    }

    fn tiny_spec(rows: usize, cols: usize, channels: usize, seed: u64) -> NetworkSpec {
        NetworkSpec {
            input_rows: rows,
            input_cols: cols,
            input_channels: channels,
            conv: vec![ConvLayerSpec { filters: 2, batch_norm: false }],
            fc: vec![4],
            seed,
        }
    }

    /// All-zero network whose head bias pins every prediction to
    /// `value` (in unscaled units, given `scale`).
    fn constant_net(spec: &NetworkSpec, value: f64, scale: f64) -> Parameters {
        let mut params = Parameters::init(spec);
        for i in 0..params.array_count() {
            for v in params.array_mut(i) {
                *v = 0.0;
            }
        }
        let last = params.array_count() - 1;
        params.array_mut(last)[0] = (value * scale) as f32;
        params
    }

    #[test]
    fn reward_of_plan_in_running_game() {
        let state = bd_state("wwwww\nwAx.w\nw.x.w\nw..ew\nwwwww\n");
        let next = state.step(Action::Right).unwrap();
        assert_eq!(
            reward_of(SubgoalOutcome::PlanExecuted { cost: 9 }, &next),
            (9.0, TerminalKind::None)
        );
    }

    #[test]
    fn reward_of_win_and_unreachable() {
        let state = bd_state("wwww\nwAew\nwwww\n");
        let won = state.step(Action::Right).unwrap();
        assert_eq!(
            reward_of(SubgoalOutcome::PlanExecuted { cost: 1 }, &won),
            (WIN_REWARD, TerminalKind::FinalGoal)
        );
        assert_eq!(
            reward_of(SubgoalOutcome::Unreachable, &state),
            (DEAD_END_REWARD, TerminalKind::Unreachable)
        );
    }

    #[test]
    fn reward_of_running_state_with_no_candidates_is_dead_end() {
        // One gem, requirement 1; collecting it while still far from the
        // exit leaves candidates = [final goal], so craft the opposite:
        // full rules, gems short of the requirement, no gems left.
        let level = parse_level("wwwww\nwAx.w\nw...w\nw..ew\nwwwww\n", GameId::BoulderDash).unwrap();
        let state = GameState::initial(&level, Ruleset::Full);
        let next = state.step(Action::Right).unwrap();
        assert_eq!(next.gems_collected(), 1);
        assert_eq!(
            reward_of(SubgoalOutcome::PlanExecuted { cost: 1 }, &next),
            (DEAD_END_REWARD, TerminalKind::DeadEnd)
        );
    }

    #[test]
    fn bellman_target_bootstraps_with_min_prediction() {
        let state = bd_state("wwwww\nwAx.w\nw.x.w\nw..ew\nwwwww\n");
        let next = state.step(Action::Right).unwrap();
        let config = TrainConfig::default();
        let spec = tiny_spec(5, 5, GameId::BoulderDash.channels(), 7);
        let target_net = constant_net(&spec, 20.0, config.reward_scale);
        let sample = ExperienceSample {
            state: state.clone(),
            chosen: Subgoal::tile(Pos::new(1, 2)),
            reward: 7.0,
            next_state: next,
            terminal: TerminalKind::None,
        };
        let target = bellman_target(&sample, &target_net, &config).unwrap();
        assert!((target - 27.0).abs() < 1e-6, "got {target}");
    }

    #[test]
    fn terminal_targets_equal_rewards() {
        let state = bd_state("wwww\nwAew\nwwww\n");
        let won = state.step(Action::Right).unwrap();
        let config = TrainConfig::default();
        let spec = tiny_spec(3, 4, GameId::BoulderDash.channels(), 7);
        let net = constant_net(&spec, 55.0, config.reward_scale);
        for (terminal, reward) in [
            (TerminalKind::FinalGoal, WIN_REWARD),
            (TerminalKind::DeadEnd, DEAD_END_REWARD),
            (TerminalKind::Unreachable, DEAD_END_REWARD),
        ] {
            let sample = ExperienceSample {
                state: state.clone(),
                chosen: Subgoal::final_goal(state.exit()),
                reward,
                next_state: if terminal == TerminalKind::Unreachable {
                    state.clone()
                } else {
                    won.clone()
                },
                terminal,
            };
            sample.validate().unwrap();
            assert_eq!(bellman_target(&sample, &net, &config).unwrap(), reward);
        }
    }

    #[test]
    fn argmin_picks_smallest_then_row_major() {
        let g1 = Subgoal::tile(Pos::new(0, 1));
        let g2 = Subgoal::tile(Pos::new(1, 1));
        let g3 = Subgoal::tile(Pos::new(2, 0));
        assert_eq!(argmin_subgoal(&[(12.0, g1), (7.0, g2), (30.0, g3)]), g2);
        // Ties break in row-major tile order.
        assert_eq!(argmin_subgoal(&[(5.0, g3), (5.0, g1), (5.0, g2)]), g1);
    }

    #[test]
    fn select_goal_skips_excluded_candidates() {
        let state = bd_state("wwwww\nwAx.w\nw.x.w\nw..ew\nwwwww\n");
        let spec = tiny_spec(5, 5, GameId::BoulderDash.channels(), 7);
        let net = constant_net(&spec, 10.0, 0.01);
        let g1 = Subgoal::tile(Pos::new(1, 2));
        let g2 = Subgoal::tile(Pos::new(2, 2));
        let candidates = vec![g1, g2];
        let mut excluded = HashSet::new();
        // Constant net scores tie; row-major order selects g1.
        assert_eq!(select_goal(&state, &candidates, &net, &excluded).unwrap(), g1);
        excluded.insert(g1);
        assert_eq!(select_goal(&state, &candidates, &net, &excluded).unwrap(), g2);
        excluded.insert(g2);
        assert!(matches!(
            select_goal(&state, &candidates, &net, &excluded),
            Err(LearnError::AllCandidatesExcluded)
        ));
    }

    #[test]
    fn singleton_candidate_needs_no_network_evaluation() {
        let state = bd_state("wwww\nwAew\nwwww\n");
        // Deliberately mismatched input dims: evaluating would fail.
        let wrong_spec = tiny_spec(9, 9, 3, 7);
        let net = Parameters::init(&wrong_spec);
        let only = Subgoal::final_goal(state.exit());
        let picked = select_goal(&state, &[only], &net, &HashSet::new()).unwrap();
        assert_eq!(picked, only);
    }

    #[test]
    fn trains_single_terminal_sample_to_its_reward() {
        let state = bd_state("wwww\nwAew\nwwww\n");
        let won = state.step(Action::Right).unwrap();
        let sample = ExperienceSample {
            state: state.clone(),
            chosen: Subgoal::final_goal(state.exit()),
            reward: WIN_REWARD,
            next_state: won,
            terminal: TerminalKind::FinalGoal,
        };
        let spec = tiny_spec(3, 4, GameId::BoulderDash.channels(), 5);
        let config = TrainConfig {
            iterations: 2500,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let result = train(&[sample.clone()], &spec, &config).unwrap();
        let q = predict(&result.params, &sample.state, sample.chosen, config.reward_scale).unwrap();
        assert!(
            (q - WIN_REWARD).abs() <= 0.05 * WIN_REWARD.abs(),
            "prediction {q} not within 5% of {WIN_REWARD}"
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let spec = tiny_spec(3, 4, GameId::BoulderDash.channels(), 5);
        assert!(matches!(
            train(&[], &spec, &TrainConfig::default()),
            Err(LearnError::EmptyDataset)
        ));
    }

    #[test]
    fn invalid_samples_fail_validation() {
        let state = bd_state("wwww\nwAew\nwwww\n");
        let sample = ExperienceSample {
            state: state.clone(),
            chosen: Subgoal::final_goal(state.exit()),
            reward: 99.0, // must be -100 for FinalGoal
            next_state: state,
            terminal: TerminalKind::FinalGoal,
        };
        assert!(matches!(sample.validate(), Err(LearnError::InvalidSample)));
    }
}
