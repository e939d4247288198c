//! Deterministic simulators for the three tile games.
//!
//! All three games share the same skeleton: the avatar moves one tile at a
//! time, collecting objects by entering their tiles, and wins by entering the
//! exit once the game's requirements are met. Game-specific rules:
//!
//! - BoulderDash: boulders block movement until broken with `Use`, which
//!   removes the boulder on the last-faced side without moving the avatar.
//!   The exit can only be entered once enough gems have been collected.
//! - IceAndFire: spikes are impassable; ice and fire tiles are impassable
//!   until the matching boots are collected. The exit opens once every
//!   required coin is collected.
//! - Catapults: stepping on a catapult launches the avatar in the catapult's
//!   direction; it flies until blocked by a wall (landing on the tile in
//!   front of it) or lands on another catapult, which relaunches it. Landing
//!   on water loses the game, as does a launch chain that revisits a
//!   (tile, direction) pair. The exit is always open.

use std::collections::HashSet;

use thiserror::Error;

use crate::level::{Cell, GameId, LevelGrid, Object, Pos};
use crate::search::{self, SearchConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Running,
    Won,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    Up,
    Down,
    Left,
    Right,
}

impl Dir {
    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::Up => (-1, 0),
            Dir::Down => (1, 0),
            Dir::Left => (0, -1),
            Dir::Right => (0, 1),
        }
    }
}

/// Primitive actions. `ALL` fixes the tie-breaking order used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Use,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Use];

    pub fn dir(self) -> Option<Dir> {
        match self {
            Action::Up => Some(Dir::Up),
            Action::Down => Some(Dir::Down),
            Action::Left => Some(Dir::Left),
            Action::Right => Some(Dir::Right),
            Action::Use => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Use => "use",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("action {0:?} is illegal in this state")]
    IllegalAction(Action),
    #[error("game is over")]
    GameOver,
}

/// How requirements scale: `Full` keeps the headline rules (9 gems, 10
/// coins); `Mini` scales them to the level content for small training grids
/// (half the gems, rounded up; all coins present).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ruleset {
    Full,
    Mini,
}

impl Ruleset {
    pub fn name(self) -> &'static str {
        match self {
            Ruleset::Full => "full",
            Ruleset::Mini => "mini",
        }
    }

    pub fn from_name(name: &str) -> Option<Ruleset> {
        match name.to_ascii_lowercase().as_str() {
            "full" => Some(Ruleset::Full),
            "mini" => Some(Ruleset::Mini),
            _ => None,
        }
    }
}

/// A subgoal: reach a tile, or reach the exit (the final goal).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubgoalKind {
    Tile,
    FinalGoal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Subgoal {
    pub kind: SubgoalKind,
    pub tile: Pos,
}

impl Subgoal {
    pub fn tile(tile: Pos) -> Subgoal {
        Subgoal { kind: SubgoalKind::Tile, tile }
    }

    pub fn final_goal(exit: Pos) -> Subgoal {
        Subgoal { kind: SubgoalKind::FinalGoal, tile: exit }
    }

    pub fn is_final(self) -> bool {
        self.kind == SubgoalKind::FinalGoal
    }
}

/// The candidate subgoal list G formulated from a state.
pub type CompoundSubgoal = Vec<Subgoal>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("subgoal pattern must list at least one object class")]
    Empty,
    #[error("object class {0:?} is not part of the {1} alphabet")]
    InvalidClass(Object, GameId),
}

/// Per-game list of object classes whose instances spawn subgoals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgoalPattern {
    game: GameId,
    classes: Vec<Object>,
}

impl SubgoalPattern {
    pub fn new(game: GameId, classes: Vec<Object>) -> Result<SubgoalPattern, PatternError> {
        if classes.is_empty() {
            return Err(PatternError::Empty);
        }
        for &c in &classes {
            if !game.objects().contains(&c) {
                return Err(PatternError::InvalidClass(c, game));
            }
        }
        Ok(SubgoalPattern { game, classes })
    }

    /// The canonical pattern for each game: gems; coins and both boots;
    /// the four catapult classes.
    pub fn for_game(game: GameId) -> SubgoalPattern {
        let classes = match game {
            GameId::BoulderDash => vec![Object::Gem],
            GameId::IceAndFire => vec![Object::Coin, Object::IceBoots, Object::FireBoots],
            GameId::Catapults => vec![
                Object::CatapultUp,
                Object::CatapultRight,
                Object::CatapultLeft,
                Object::CatapultDown,
            ],
        };
        SubgoalPattern { game, classes }
    }

    pub fn game(&self) -> GameId {
        self.game
    }

    pub fn classes(&self) -> &[Object] {
        &self.classes
    }
}

/// Tiles the avatar landed on during one action, in order: the move target
/// followed by every catapult-chain landing. `Use` produces an empty trace.
#[derive(Clone, Debug, Default)]
pub struct StepTrace {
    pub entered: Vec<Pos>,
}

impl StepTrace {
    pub fn entered_tile(&self, tile: Pos) -> bool {
        self.entered.contains(&tile)
    }
}

/// Full world state. Value-semantic: `step` returns a new state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GameState {
    game: GameId,
    rows: u16,
    cols: u16,
    cells: Vec<Cell>,
    avatar: Pos,
    exit: Pos,
    facing: Dir,
    gems_collected: u16,
    coins_collected: u16,
    has_ice_boots: bool,
    has_fire_boots: bool,
    gems_required: u16,
    coins_required: u16,
    status: Status,
}

impl GameState {
    pub fn initial(level: &LevelGrid, rules: Ruleset) -> GameState {
        let (gems_required, coins_required) = match (level.game(), rules) {
            (GameId::BoulderDash, Ruleset::Full) => (9, 0),
            (GameId::BoulderDash, Ruleset::Mini) => {
                (level.count_objects(Object::Gem).div_ceil(2) as u16, 0)
            }
            (GameId::IceAndFire, Ruleset::Full) => (0, 10),
            (GameId::IceAndFire, Ruleset::Mini) => (0, level.count_objects(Object::Coin) as u16),
            (GameId::Catapults, _) => (0, 0),
        };
        GameState {
            game: level.game(),
            rows: level.rows(),
            cols: level.cols(),
            cells: level.cells().to_vec(),
            avatar: level.avatar_start(),
            exit: level.exit(),
            facing: Dir::Right,
            gems_collected: 0,
            coins_collected: 0,
            has_ice_boots: false,
            has_fire_boots: false,
            gems_required,
            coins_required,
            status: Status::Running,
        }
    }

    pub fn game(&self) -> GameId {
        self.game
    }

    pub fn rows(&self) -> u16 {
        self.rows
    }

    pub fn cols(&self) -> u16 {
        self.cols
    }

    pub fn avatar(&self) -> Pos {
        self.avatar
    }

    pub fn exit(&self) -> Pos {
        self.exit
    }

    pub fn facing(&self) -> Dir {
        self.facing
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn gems_collected(&self) -> u16 {
        self.gems_collected
    }

    pub fn coins_collected(&self) -> u16 {
        self.coins_collected
    }

    pub fn gems_required(&self) -> u16 {
        self.gems_required
    }

    pub fn coins_required(&self) -> u16 {
        self.coins_required
    }

    pub fn has_ice_boots(&self) -> bool {
        self.has_ice_boots
    }

    pub fn has_fire_boots(&self) -> bool {
        self.has_fire_boots
    }

    pub fn cell(&self, pos: Pos) -> Cell {
        assert!(pos.row < self.rows && pos.col < self.cols, "cell {pos} out of bounds");
        self.cells[pos.row as usize * self.cols as usize + pos.col as usize]
    }

    fn cell_mut(&mut self, pos: Pos) -> &mut Cell {
        &mut self.cells[pos.row as usize * self.cols as usize + pos.col as usize]
    }

    /// Neighbouring tile in `dir`, or `None` if it falls off the grid.
    /// Out-of-bounds tiles behave as walls everywhere in the engine.
    pub fn neighbor(&self, pos: Pos, dir: Dir) -> Option<Pos> {
        let (dr, dc) = dir.delta();
        let r = pos.row as i32 + dr;
        let c = pos.col as i32 + dc;
        if r < 0 || c < 0 || r >= self.rows as i32 || c >= self.cols as i32 {
            None
        } else {
            Some(Pos::new(r as u16, c as u16))
        }
    }

    /// Whether a move onto `pos` is allowed (it may still be fatal).
    fn can_enter(&self, pos: Pos) -> bool {
        match self.cell(pos).object() {
            None => true,
            Some(Object::Wall) | Some(Object::Spikes) => false,
            Some(Object::Boulder) => false,
            Some(Object::Ice) => self.has_ice_boots,
            Some(Object::Fire) => self.has_fire_boots,
            Some(Object::Exit) => self.final_goal_open(),
            Some(Object::Gem) | Some(Object::Coin) | Some(Object::IceBoots)
            | Some(Object::FireBoots) => true,
            Some(Object::CatapultUp) | Some(Object::CatapultRight)
            | Some(Object::CatapultLeft) | Some(Object::CatapultDown) | Some(Object::Water) => {
                true
            }
        }
    }

    fn final_goal_open(&self) -> bool {
        match self.game {
            GameId::BoulderDash => self.gems_collected >= self.gems_required,
            GameId::IceAndFire => self.coins_collected >= self.coins_required,
            GameId::Catapults => true,
        }
    }

    pub fn is_action_legal(&self, action: Action) -> bool {
        if self.status != Status::Running {
            return false;
        }
        match action {
            Action::Use => {
                self.game == GameId::BoulderDash
                    && self
                        .neighbor(self.avatar, self.facing)
                        .is_some_and(|t| self.cell(t).contains(Object::Boulder))
            }
            _ => {
                let dir = action.dir().unwrap();
                self.neighbor(self.avatar, dir).is_some_and(|t| self.can_enter(t))
            }
        }
    }

    /// Applies `action`, returning the successor state.
    pub fn step(&self, action: Action) -> Result<GameState, EngineError> {
        self.step_traced(action).map(|(s, _)| s)
    }

    /// Applies `action`, also reporting which tiles were landed on.
    pub fn step_traced(&self, action: Action) -> Result<(GameState, StepTrace), EngineError> {
        if self.status != Status::Running {
            return Err(EngineError::GameOver);
        }
        if !self.is_action_legal(action) {
            return Err(EngineError::IllegalAction(action));
        }
        let mut next = self.clone();
        let mut trace = StepTrace::default();
        match action {
            Action::Use => {
                let target = next.neighbor(next.avatar, next.facing).unwrap();
                *next.cell_mut(target) = Cell::EMPTY;
            }
            _ => {
                let dir = action.dir().unwrap();
                if next.game == GameId::BoulderDash {
                    next.facing = dir;
                }
                let target = next.neighbor(next.avatar, dir).unwrap();
                next.resolve_entry(target, &mut trace);
            }
        }
        Ok((next, trace))
    }

    /// Moves the avatar onto `pos` and plays out all entry consequences,
    /// including catapult launch chains.
    fn resolve_entry(&mut self, mut pos: Pos, trace: &mut StepTrace) {
        let mut visited: HashSet<(Pos, Dir)> = HashSet::new();
        loop {
            self.avatar = pos;
            trace.entered.push(pos);
            let obj = self.cell(pos).object();
            match obj {
                Some(Object::Gem) => {
                    *self.cell_mut(pos) = Cell::EMPTY;
                    self.gems_collected += 1;
                    break;
                }
                Some(Object::Coin) => {
                    *self.cell_mut(pos) = Cell::EMPTY;
                    self.coins_collected += 1;
                    break;
                }
                Some(Object::IceBoots) => {
                    *self.cell_mut(pos) = Cell::EMPTY;
                    self.has_ice_boots = true;
                    break;
                }
                Some(Object::FireBoots) => {
                    *self.cell_mut(pos) = Cell::EMPTY;
                    self.has_fire_boots = true;
                    break;
                }
                Some(Object::Exit) => {
                    self.status = Status::Won;
                    break;
                }
                Some(Object::Water) => {
                    self.status = Status::Lost;
                    break;
                }
                Some(o) if catapult_dir(o).is_some() => {
                    let dir = catapult_dir(o).unwrap();
                    if !visited.insert((pos, dir)) {
                        // Launch chain revisits a (tile, direction) pair:
                        // the flight never ends, which loses the game.
                        self.status = Status::Lost;
                        break;
                    }
                    pos = self.launch(pos, dir);
                }
                _ => break,
            }
        }
    }

    /// Flight from `from` in `dir`: stops in front of the first wall (or the
    /// grid edge) or on the first catapult hit.
    pub(crate) fn launch(&self, from: Pos, dir: Dir) -> Pos {
        let mut last = from;
        let mut cur = from;
        loop {
            match self.neighbor(cur, dir) {
                None => return last,
                Some(next) => {
                    let obj = self.cell(next).object();
                    if obj == Some(Object::Wall) {
                        return last;
                    }
                    if obj.is_some_and(|o| catapult_dir(o).is_some()) {
                        return next;
                    }
                    last = next;
                    cur = next;
                }
            }
        }
    }

    /// Compact byte encoding of the mutable state, used for search
    /// duplicate detection and for the dataset file format.
    pub(crate) fn pack_into(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.avatar.row.to_le_bytes());
        buf.extend_from_slice(&self.avatar.col.to_le_bytes());
        buf.extend_from_slice(&self.exit.row.to_le_bytes());
        buf.extend_from_slice(&self.exit.col.to_le_bytes());
        buf.push(self.facing as u8);
        buf.extend_from_slice(&self.gems_collected.to_le_bytes());
        buf.extend_from_slice(&self.coins_collected.to_le_bytes());
        buf.push(self.has_ice_boots as u8);
        buf.push(self.has_fire_boots as u8);
        buf.extend_from_slice(&self.gems_required.to_le_bytes());
        buf.extend_from_slice(&self.coins_required.to_le_bytes());
        buf.push(match self.status {
            Status::Running => 0,
            Status::Won => 1,
            Status::Lost => 2,
        });
        buf.extend(self.cells.iter().map(|c| c.raw()));
    }

    pub(crate) fn pack(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.packed_len());
        self.pack_into(&mut buf);
        buf
    }

    pub(crate) fn packed_len(&self) -> usize {
        Self::packed_len_for(self.rows, self.cols)
    }

    pub(crate) fn packed_len_for(rows: u16, cols: u16) -> usize {
        20 + rows as usize * cols as usize
    }

    pub(crate) fn unpack(
        game: GameId,
        rows: u16,
        cols: u16,
        bytes: &[u8],
    ) -> Option<GameState> {
        if bytes.len() != Self::packed_len_for(rows, cols) {
            return None;
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let avatar = Pos::new(u16_at(0), u16_at(2));
        let exit = Pos::new(u16_at(4), u16_at(6));
        if avatar.row >= rows || avatar.col >= cols || exit.row >= rows || exit.col >= cols {
            return None;
        }
        let facing = match bytes[8] {
            0 => Dir::Up,
            1 => Dir::Down,
            2 => Dir::Left,
            3 => Dir::Right,
            _ => return None,
        };
        let status = match bytes[19] {
            0 => Status::Running,
            1 => Status::Won,
            2 => Status::Lost,
            _ => return None,
        };
        let mut cells = Vec::with_capacity(rows as usize * cols as usize);
        for &raw in &bytes[20..] {
            let cell = Cell::from_raw(raw)?;
            if let Some(obj) = cell.object() {
                if !game.objects().contains(&obj) {
                    return None;
                }
            }
            cells.push(cell);
        }
        Some(GameState {
            game,
            rows,
            cols,
            cells,
            avatar,
            exit,
            facing,
            gems_collected: u16_at(9),
            coins_collected: u16_at(11),
            has_ice_boots: bytes[13] != 0,
            has_fire_boots: bytes[14] != 0,
            gems_required: u16_at(15),
            coins_required: u16_at(17),
            status,
        })
    }
}

pub(crate) fn catapult_dir(obj: Object) -> Option<Dir> {
    match obj {
        Object::CatapultUp => Some(Dir::Up),
        Object::CatapultDown => Some(Dir::Down),
        Object::CatapultLeft => Some(Dir::Left),
        Object::CatapultRight => Some(Dir::Right),
        _ => None,
    }
}

/// Actions for which `step` succeeds, in the fixed tie-breaking order.
pub fn legal_actions(state: &GameState) -> Vec<Action> {
    Action::ALL.iter().copied().filter(|&a| state.is_action_legal(a)).collect()
}

/// Whether the final goal can be pursued directly (the exit is open).
pub fn final_goal_attainable(state: &GameState) -> bool {
    state.final_goal_open()
}

/// Generates the compound subgoal G for a state.
///
/// BoulderDash and IceAndFire: one tile subgoal per remaining pattern-class
/// object in row-major order, or exactly `[final goal]` once the
/// requirements are met. Catapults has no collection requirement, so the
/// final goal is always a candidate, listed after the catapult tiles.
pub fn formulate_subgoals(state: &GameState, pattern: &SubgoalPattern) -> CompoundSubgoal {
    assert_eq!(pattern.game(), state.game(), "pattern game must match state game");
    if state.game() != GameId::Catapults && final_goal_attainable(state) {
        return vec![Subgoal::final_goal(state.exit())];
    }
    let mut goals = Vec::new();
    for r in 0..state.rows() {
        for c in 0..state.cols() {
            let pos = Pos::new(r, c);
            if let Some(obj) = state.cell(pos).object() {
                if pattern.classes().contains(&obj) {
                    goals.push(Subgoal::tile(pos));
                }
            }
        }
    }
    if state.game() == GameId::Catapults {
        goals.push(Subgoal::final_goal(state.exit()));
    }
    goals
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminalClass {
    NotTerminal,
    Win,
    DeadEnd,
}

/// Classifies a state: `Win` if won, `DeadEnd` if lost or no formulated
/// subgoal is reachable (probed with the planner), `NotTerminal` otherwise.
/// A probe that exhausts its node budget counts as reachable-unknown and
/// yields `NotTerminal`.
pub fn classify_terminal(state: &GameState) -> TerminalClass {
    classify_terminal_with(state, &SearchConfig::weighted(200_000))
}

pub fn classify_terminal_with(state: &GameState, probe: &SearchConfig) -> TerminalClass {
    match state.status() {
        Status::Won => TerminalClass::Win,
        Status::Lost => TerminalClass::DeadEnd,
        Status::Running => {
            let pattern = SubgoalPattern::for_game(state.game());
            for goal in formulate_subgoals(state, &pattern) {
                match search::plan_to_subgoal(state, goal, probe).0 {
                    Ok(_) => return TerminalClass::NotTerminal,
                    Err(search::PlanError::Unreachable) => {}
                    Err(_) => return TerminalClass::NotTerminal,
                }
            }
            TerminalClass::DeadEnd
        }
    }
}
