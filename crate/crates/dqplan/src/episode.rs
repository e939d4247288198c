//! The planning-and-acting loop and random-exploration dataset collection.
//!
//! One episode: formulate candidate subgoals, select one (learned policy or
//! uniformly at random), plan to it with the weighted search, execute the
//! plan action by action, repeat. Subgoals the planner rejects are excluded
//! and the next-best candidate is selected; running out of candidates ends
//! the episode.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::files::mix_seed;
use crate::game::{formulate_subgoals, GameState, Ruleset, Status, Subgoal, SubgoalPattern};
use crate::learner::{reward_of, select_goal, ExperienceSample, SubgoalOutcome, TerminalKind};
use crate::level::{encode_observation, LevelGrid};
use crate::nn::Parameters;
use crate::game::Action;
use crate::search::{plan_to_subgoal, PlanError, SearchConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Win,
    Loss,
    StepLimit,
    NoCandidates,
}

#[derive(Clone)]
pub enum Policy<'a> {
    Dqp(&'a Parameters),
    Random(u64),
}

#[derive(Clone, Debug)]
pub struct EpisodeOptions {
    pub search: SearchConfig,
    pub step_limit: u32,
}

impl Default for EpisodeOptions {
    fn default() -> EpisodeOptions {
        EpisodeOptions { search: SearchConfig::weighted(200_000), step_limit: 2000 }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub total_actions: u32,
    pub actions: Vec<Action>,
    pub subgoal_trace: Vec<(Subgoal, u32)>,
    pub total_select_time: Duration,
    pub total_plan_time: Duration,
    pub total_nodes_expanded: u64,
}

pub fn run_episode(
    level: &LevelGrid,
    rules: Ruleset,
    policy: Policy,
    opts: &EpisodeOptions,
) -> EpisodeResult {
    run_episode_recording(level, rules, policy, opts, &mut |_| true)
}

/// Episode loop that also reports every (s, g*, r, s') sample produced by a
/// subgoal selection. The callback returns false to abort the episode
/// (used by collection caps).
pub fn run_episode_recording(
    level: &LevelGrid,
    rules: Ruleset,
    policy: Policy,
    opts: &EpisodeOptions,
    on_sample: &mut dyn FnMut(ExperienceSample) -> bool,
) -> EpisodeResult {
    let pattern = SubgoalPattern::for_game(level.game());
    let mut state = GameState::initial(level, rules);
    let mut rng = match &policy {
        Policy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        Policy::Dqp(_) => None,
    };
    let mut result = EpisodeResult {
        outcome: Outcome::StepLimit,
        total_actions: 0,
        actions: Vec::new(),
        subgoal_trace: Vec::new(),
        total_select_time: Duration::ZERO,
        total_plan_time: Duration::ZERO,
        total_nodes_expanded: 0,
    };

    'episode: loop {
        debug_assert_eq!(state.status(), Status::Running);
        let candidates = formulate_subgoals(&state, &pattern);
        if candidates.is_empty() {
            result.outcome = Outcome::NoCandidates;
            break;
        }
        let mut excluded: HashSet<Subgoal> = HashSet::new();

        // Select and plan, excluding rejected subgoals until one works out.
        let (goal, plan) = loop {
            let avail: Vec<Subgoal> =
                candidates.iter().copied().filter(|g| !excluded.contains(g)).collect();
            if avail.is_empty() {
                result.outcome = Outcome::NoCandidates;
                break 'episode;
            }
            let t0 = Instant::now();
            let goal = match (&policy, rng.as_mut()) {
                (Policy::Dqp(params), _) => select_goal(&state, &candidates, params, &excluded)
                    .expect("non-empty candidate list"),
                (Policy::Random(_), Some(rng)) => avail[rng.gen_range(0..avail.len())],
                _ => unreachable!(),
            };
            result.total_select_time += t0.elapsed();

            let t1 = Instant::now();
            let (planned, stats) = plan_to_subgoal(&state, goal, &opts.search);
            result.total_plan_time += t1.elapsed();
            result.total_nodes_expanded += stats.nodes_expanded;
            match planned {
                Ok(plan) => break (goal, plan),
                Err(PlanError::EhcStuck) | Err(PlanError::Unreachable) | Err(PlanError::BudgetExceeded) => {
                    // The planner notified it cannot achieve this subgoal;
                    // record the rejection and pick the next-best one.
                    let (reward, terminal) = reward_of(SubgoalOutcome::Unreachable, &state);
                    let sample = ExperienceSample {
                        state: state.clone(),
                        chosen: goal,
                        reward,
                        next_state: state.clone(),
                        terminal,
                    };
                    if !on_sample(sample) {
                        result.outcome = Outcome::NoCandidates;
                        break 'episode;
                    }
                    excluded.insert(goal);
                }
            }
        };

        let before = state.clone();
        for &action in &plan.actions {
            if result.total_actions >= opts.step_limit {
                result.outcome = Outcome::StepLimit;
                break 'episode;
            }
            state = state.step(action).expect("planned action must replay");
            result.total_actions += 1;
            result.actions.push(action);
        }
        result.subgoal_trace.push((goal, plan.cost()));

        let (reward, terminal) = reward_of(SubgoalOutcome::PlanExecuted { cost: plan.cost() }, &state);
        let sample = ExperienceSample {
            state: before,
            chosen: goal,
            reward,
            next_state: state.clone(),
            terminal,
        };
        let keep_going = on_sample(sample);
        match state.status() {
            Status::Won => {
                result.outcome = Outcome::Win;
                break;
            }
            Status::Lost => {
                result.outcome = Outcome::Loss;
                break;
            }
            Status::Running => {
                if terminal == TerminalKind::DeadEnd {
                    // Running but out of candidate subgoals.
                    result.outcome = Outcome::NoCandidates;
                    break;
                }
                if !keep_going {
                    result.outcome = Outcome::NoCandidates;
                    break;
                }
            }
        }
    }
    result
}

/// Runs random-exploration episodes on each level, keeping samples until
/// `unique_cap` unique (state, subgoal) pairs are collected or
/// `iteration_cap` subgoal selections have been spent, whichever comes
/// first. Uniqueness is keyed on the encoded observation of (s, g*).
pub fn collect_dataset(
    levels: &[LevelGrid],
    rules: Ruleset,
    unique_cap: usize,
    iteration_cap: usize,
    seed: u64,
    opts: &EpisodeOptions,
) -> Dataset {
    let mut dataset = Dataset::default();
    for (level_idx, level) in levels.iter().enumerate() {
        let level_seed = mix_seed(seed, level_idx as u64);
        let mut iterations = 0usize;
        let mut seen: HashSet<Vec<u8>> = HashSet::new();
        let mut uniques = 0usize;
        let mut episode = 0u64;
        while iterations < iteration_cap && uniques < unique_cap {
            let episode_seed = mix_seed(level_seed, episode);
            episode += 1;
            run_episode_recording(
                level,
                rules,
                Policy::Random(episode_seed),
                opts,
                &mut |sample| {
                    iterations += 1;
                    let key = encode_observation(&sample.state, Some(sample.chosen))
                        .expect("subgoal in bounds")
                        .as_bytes()
                        .to_vec();
                    if seen.insert(key) {
                        dataset.samples.push(sample);
                        uniques += 1;
                    }
                    iterations < iteration_cap && uniques < unique_cap
                },
            );
        }
    }
    dataset
}
