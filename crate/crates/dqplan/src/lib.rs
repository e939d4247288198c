//! Goal-selection learning and planning for deterministic tile games.
//!
//! The crate plays three deterministic tile games (BoulderDash, IceAndFire,
//! Catapults) with a planning-and-acting loop: formulate candidate subgoals
//! from the current state, select one (with a learned convolutional value
//! network or at random), plan to it with forward search, execute, repeat.
//! The network is trained offline with Q-learning on (state, subgoal,
//! reward, next state) samples gathered by random exploration, predicting
//! the total remaining plan length through a subgoal.

pub mod config;
pub mod dataset;
pub mod episode;
pub mod eval;
pub mod files;
pub mod game;
pub mod learner;
pub mod level;
pub mod levelgen;
pub mod nn;
pub mod pddl;
pub mod search;

pub use files::FileError;
pub use game::{
    classify_terminal, final_goal_attainable, formulate_subgoals, legal_actions, Action,
    CompoundSubgoal, EngineError, GameState, Ruleset, Status, Subgoal, SubgoalKind,
    SubgoalPattern, TerminalClass,
};
pub use level::{
    encode_observation, parse_level, serialize_level, EncodeError, GameId, LevelGrid, Object,
    Observation, ParseError, Pos,
};
pub use search::{
    heuristic, plan_full, plan_to_subgoal, Plan, PlanError, PlanStats, SearchConfig, Strategy,
};
