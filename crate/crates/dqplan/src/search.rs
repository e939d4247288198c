//! Forward state-space search over game states.
//!
//! Three strategies: `Optimal` (A* with an admissible heuristic, weight 1),
//! `Weighted` (best-first with f = g + w*h, default w = 5), and `Ehc`
//! (enforced hill climbing: breadth-first search for a strictly
//! heuristic-improving state, chained until the goal is generated).
//!
//! A tile subgoal counts as achieved when an action lands the avatar on the
//! subgoal tile, including landings in the middle of a catapult launch
//! chain. The final goal and full-game searches target a won state. Expansion
//! order and heap tie-breaking are fixed, so equal inputs produce identical
//! plans.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::game::{legal_actions, Action, GameState, Status, StepTrace, Subgoal, SubgoalKind};
use crate::level::{GameId, Object, Pos};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Optimal,
    Weighted,
    Ehc,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Optimal => "optimal",
            Strategy::Weighted => "weighted",
            Strategy::Ehc => "ehc",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        match name.to_ascii_lowercase().as_str() {
            "optimal" => Some(Strategy::Optimal),
            "weighted" => Some(Strategy::Weighted),
            "ehc" => Some(Strategy::Ehc),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub heuristic_weight: u32,
    pub node_budget: u64,
}

impl SearchConfig {
    pub fn optimal(node_budget: u64) -> SearchConfig {
        SearchConfig { strategy: Strategy::Optimal, heuristic_weight: 1, node_budget }
    }

    pub fn weighted(node_budget: u64) -> SearchConfig {
        SearchConfig::weighted_with(5, node_budget)
    }

    pub fn weighted_with(weight: u32, node_budget: u64) -> SearchConfig {
        SearchConfig { strategy: Strategy::Weighted, heuristic_weight: weight, node_budget }
    }

    pub fn ehc(node_budget: u64) -> SearchConfig {
        SearchConfig { strategy: Strategy::Ehc, heuristic_weight: 1, node_budget }
    }

    fn weight(&self) -> u64 {
        match self.strategy {
            Strategy::Optimal => 1,
            _ => self.heuristic_weight.max(1) as u64,
        }
    }
}

/// An executable action sequence; cost is the number of actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub actions: Vec<Action>,
}

impl Plan {
    pub fn empty() -> Plan {
        Plan { actions: Vec::new() }
    }

    pub fn cost(&self) -> u32 {
        self.actions.len() as u32
    }
}

#[derive(Clone, Debug, Default)]
pub struct PlanStats {
    pub nodes_expanded: u64,
    pub nodes_generated: u64,
    pub wall_time: Duration,
    pub timed_out: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("no plan exists: the goal is unreachable")]
    Unreachable,
    #[error("search exceeded its node budget")]
    BudgetExceeded,
    #[error("enforced hill climbing found no improving successor")]
    EhcStuck,
}

#[derive(Clone, Copy)]
enum Goal {
    Reach(Subgoal),
    Win,
}

impl Goal {
    fn hit(self, trace: &StepTrace, child: &GameState) -> bool {
        match self {
            Goal::Reach(sg) => match sg.kind {
                SubgoalKind::Tile => trace.entered_tile(sg.tile),
                SubgoalKind::FinalGoal => child.status() == Status::Won,
            },
            Goal::Win => child.status() == Status::Won,
        }
    }

    fn satisfied_at_root(self, state: &GameState) -> bool {
        match self {
            Goal::Reach(sg) => match sg.kind {
                SubgoalKind::Tile => state.avatar() == sg.tile,
                SubgoalKind::FinalGoal => state.status() == Status::Won,
            },
            Goal::Win => state.status() == Status::Won,
        }
    }
}

/// Grid facts that the heuristic needs but that never change mid-search.
struct HeuristicCtx {
    /// Catapult launches can cross the whole grid in one action, so plain
    /// Manhattan distance overestimates; clamp to 1 when catapults exist.
    launchy: bool,
}

impl HeuristicCtx {
    fn for_state(state: &GameState) -> HeuristicCtx {
        let launchy = state.game() == GameId::Catapults && has_any_catapult(state);
        HeuristicCtx { launchy }
    }

    fn to_tile(&self, avatar: Pos, tile: Pos) -> u32 {
        let d = avatar.manhattan(tile);
        if self.launchy {
            d.min(1)
        } else {
            d
        }
    }

    fn full(&self, state: &GameState) -> u32 {
        if state.game() == GameId::Catapults {
            return self.to_tile(state.avatar(), state.exit());
        }
        if crate::game::final_goal_attainable(state) {
            return state.avatar().manhattan(state.exit());
        }
        // At least one more required object must be collected before the
        // exit: bound by the best pickup-then-exit route.
        let needed = match state.game() {
            GameId::BoulderDash => Object::Gem,
            GameId::IceAndFire => Object::Coin,
            GameId::Catapults => unreachable!(),
        };
        let mut best = u32::MAX;
        for r in 0..state.rows() {
            for c in 0..state.cols() {
                let pos = Pos::new(r, c);
                if state.cell(pos).contains(needed) {
                    let via = state.avatar().manhattan(pos) + pos.manhattan(state.exit());
                    best = best.min(via);
                }
            }
        }
        best
    }
}

fn has_any_catapult(state: &GameState) -> bool {
    for r in 0..state.rows() {
        for c in 0..state.cols() {
            if matches!(
                state.cell(Pos::new(r, c)).object(),
                Some(Object::CatapultUp)
                    | Some(Object::CatapultRight)
                    | Some(Object::CatapultLeft)
                    | Some(Object::CatapultDown)
            ) {
                return true;
            }
        }
    }
    false
}

/// Estimated cost from a state to a subgoal tile: Manhattan distance,
/// clamped to 1 in Catapults levels where launches shortcut across the grid.
/// Zero exactly when the avatar stands on the tile.
pub fn heuristic(state: &GameState, subgoal: Subgoal) -> u32 {
    HeuristicCtx::for_state(state).to_tile(state.avatar(), subgoal.tile)
}

/// Plans to a single subgoal. See module docs for goal semantics.
pub fn plan_to_subgoal(
    state: &GameState,
    subgoal: Subgoal,
    config: &SearchConfig,
) -> (Result<Plan, PlanError>, PlanStats) {
    run(state, Goal::Reach(subgoal), config)
}

/// Plans the whole game to a won state, with no goal decomposition.
pub fn plan_full(state: &GameState, config: &SearchConfig) -> (Result<Plan, PlanError>, PlanStats) {
    run(state, Goal::Win, config)
}

fn run(state: &GameState, goal: Goal, config: &SearchConfig) -> (Result<Plan, PlanError>, PlanStats) {
    let start = Instant::now();
    let mut stats = PlanStats::default();
    let result = if goal.satisfied_at_root(state) {
        Ok(Plan::empty())
    } else {
        match config.strategy {
            Strategy::Optimal | Strategy::Weighted => best_first(state, goal, config, &mut stats),
            Strategy::Ehc => ehc(state, goal, config, &mut stats),
        }
    };
    stats.wall_time = start.elapsed();
    stats.timed_out = matches!(result, Err(PlanError::BudgetExceeded));
    (result, stats)
}

struct Node {
    state: GameState,
    g: u32,
    parent: u32,
    action: Action,
    goal_hit: bool,
}

const NO_PARENT: u32 = u32::MAX;

fn h_value(goal: Goal, state: &GameState, ctx: &HeuristicCtx) -> u32 {
    match goal {
        Goal::Reach(sg) => ctx.to_tile(state.avatar(), sg.tile),
        Goal::Win => ctx.full(state),
    }
}

fn extract_plan(nodes: &[Node], mut idx: u32) -> Plan {
    let mut actions = Vec::new();
    while nodes[idx as usize].parent != NO_PARENT {
        actions.push(nodes[idx as usize].action);
        idx = nodes[idx as usize].parent;
    }
    actions.reverse();
    Plan { actions }
}

fn best_first(
    start: &GameState,
    goal: Goal,
    config: &SearchConfig,
    stats: &mut PlanStats,
) -> Result<Plan, PlanError> {
    let ctx = HeuristicCtx::for_state(start);
    let w = config.weight();
    let mut nodes: Vec<Node> = Vec::new();
    // Heap orders by (f, insertion sequence); dedup keys carry a goal-hit
    // marker byte because the same state can be reached both by achieving
    // the goal (e.g. landing on the tile mid-chain) and without.
    let mut open: BinaryHeap<Reverse<(u64, u32, u32)>> = BinaryHeap::new();
    let mut best_g: HashMap<Vec<u8>, u32> = HashMap::new();

    let root_h = h_value(goal, start, &ctx);
    nodes.push(Node { state: start.clone(), g: 0, parent: NO_PARENT, action: Action::Up, goal_hit: false });
    let mut root_key = start.pack();
    root_key.push(0);
    best_g.insert(root_key, 0);
    open.push(Reverse((w * root_h as u64, 0, 0)));
    let mut seq: u32 = 1;

    while let Some(Reverse((_, _, idx))) = open.pop() {
        let (node_g, node_hit) = {
            let n = &nodes[idx as usize];
            (n.g, n.goal_hit)
        };
        {
            // Skip stale heap entries superseded by a cheaper path.
            let mut key = nodes[idx as usize].state.pack();
            key.push(node_hit as u8);
            if best_g.get(key.as_slice()).copied() != Some(node_g) {
                continue;
            }
        }
        if node_hit {
            return Ok(extract_plan(&nodes, idx));
        }
        if stats.nodes_expanded >= config.node_budget {
            return Err(PlanError::BudgetExceeded);
        }
        stats.nodes_expanded += 1;

        let actions = legal_actions(&nodes[idx as usize].state);
        for action in actions {
            let (child, trace) = nodes[idx as usize]
                .state
                .step_traced(action)
                .expect("legal action must apply");
            stats.nodes_generated += 1;
            let hit = goal.hit(&trace, &child);
            let g = node_g + 1;
            let mut key = child.pack();
            key.push(hit as u8);
            match best_g.get(key.as_slice()) {
                Some(&old) if old <= g => continue,
                _ => {}
            }
            best_g.insert(key, g);
            let h = if hit { 0 } else { h_value(goal, &child, &ctx) };
            let f = g as u64 + w * h as u64;
            nodes.push(Node { state: child, g, parent: idx, action, goal_hit: hit });
            open.push(Reverse((f, seq, (nodes.len() - 1) as u32)));
            seq += 1;
        }
    }
    Err(PlanError::Unreachable)
}

fn ehc(
    start: &GameState,
    goal: Goal,
    config: &SearchConfig,
    stats: &mut PlanStats,
) -> Result<Plan, PlanError> {
    let ctx = HeuristicCtx::for_state(start);
    let mut prefix: Vec<Action> = Vec::new();
    let mut current = start.clone();
    let mut current_h = h_value(goal, &current, &ctx);

    'climb: loop {
        let mut nodes: Vec<Node> = Vec::new();
        let mut queue: VecDeque<u32> = VecDeque::new();
        let mut seen: HashSet<Vec<u8>> = HashSet::new();
        nodes.push(Node { state: current.clone(), g: 0, parent: NO_PARENT, action: Action::Up, goal_hit: false });
        seen.insert(current.pack());
        queue.push_back(0);

        while let Some(idx) = queue.pop_front() {
            if stats.nodes_expanded >= config.node_budget {
                return Err(PlanError::BudgetExceeded);
            }
            stats.nodes_expanded += 1;
            for action in legal_actions(&nodes[idx as usize].state) {
                let (child, trace) = nodes[idx as usize]
                    .state
                    .step_traced(action)
                    .expect("legal action must apply");
                stats.nodes_generated += 1;
                if goal.hit(&trace, &child) {
                    nodes.push(Node {
                        state: child,
                        g: 0,
                        parent: idx,
                        action,
                        goal_hit: true,
                    });
                    let tail = extract_plan(&nodes, (nodes.len() - 1) as u32);
                    prefix.extend(tail.actions);
                    return Ok(Plan { actions: prefix });
                }
                if child.status() != Status::Running {
                    continue;
                }
                let child_h = h_value(goal, &child, &ctx);
                if child_h < current_h {
                    nodes.push(Node { state: child.clone(), g: 0, parent: idx, action, goal_hit: false });
                    let tail = extract_plan(&nodes, (nodes.len() - 1) as u32);
                    prefix.extend(tail.actions);
                    current = child;
                    current_h = child_h;
                    continue 'climb;
                }
                if seen.insert(child.pack()) {
                    nodes.push(Node { state: child, g: 0, parent: idx, action, goal_hit: false });
                    queue.push_back((nodes.len() - 1) as u32);
                }
            }
        }
        return Err(PlanError::EhcStuck);
    }
}
