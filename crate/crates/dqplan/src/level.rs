//! Level description files and observation encoding.
//!
//! A level file is plain text, one row per line, one character per tile:
//!
//! - BoulderDash: `w` wall, `o` boulder, `x` gem, `A` avatar, `e` exit
//! - IceAndFire: `w` wall, `s` spikes, `i` ice, `f` fire, `b` ice boots,
//!   `h` fire boots, `c` coin, `A` avatar, `e` exit
//! - Catapults: `w` wall, `u`/`r`/`l`/`d` directional catapults, `~` water,
//!   `A` avatar, `e` exit
//!
//! `.` and `-` both denote empty floor; the canonical serialized form uses `.`.
//!
//! Observation tensors are channels-last binary grids. Channel layout per game
//! (subgoal marker always last):
//!
//! - BoulderDash (15): wall, boulder, gem, exit, avatar,
//!   gems-collected thermometer (9), subgoal
//! - IceAndFire (22): wall, spikes, ice, fire, ice-boots, fire-boots, coin,
//!   exit, avatar, coins-collected thermometer (10), ice-boots-held,
//!   fire-boots-held, subgoal
//! - Catapults (9): wall, catapult-up/right/left/down, water, exit, avatar,
//!   subgoal
//!
//! Collected-object counters are broadcast over the whole grid as thermometer
//! channels: channel `k` of the thermometer is 1 everywhere iff at least `k+1`
//! objects have been collected.

use std::fmt;

use thiserror::Error;

use crate::game::{GameState, Subgoal};

/// Gem-counter thermometer width for BoulderDash (the full-rule requirement).
pub const GEM_THERMOMETER: usize = 9;
/// Coin-counter thermometer width for IceAndFire.
pub const COIN_THERMOMETER: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GameId {
    BoulderDash,
    IceAndFire,
    Catapults,
}

impl GameId {
    pub const ALL: [GameId; 3] = [GameId::BoulderDash, GameId::IceAndFire, GameId::Catapults];

    pub fn name(self) -> &'static str {
        match self {
            GameId::BoulderDash => "boulderdash",
            GameId::IceAndFire => "iceandfire",
            GameId::Catapults => "catapults",
        }
    }

    pub fn from_name(name: &str) -> Option<GameId> {
        match name.to_ascii_lowercase().as_str() {
            "boulderdash" => Some(GameId::BoulderDash),
            "iceandfire" => Some(GameId::IceAndFire),
            "catapults" => Some(GameId::Catapults),
            _ => None,
        }
    }

    /// Object classes that can occupy a tile, in channel order.
    pub fn objects(self) -> &'static [Object] {
        match self {
            GameId::BoulderDash => &[Object::Wall, Object::Boulder, Object::Gem, Object::Exit],
            GameId::IceAndFire => &[
                Object::Wall,
                Object::Spikes,
                Object::Ice,
                Object::Fire,
                Object::IceBoots,
                Object::FireBoots,
                Object::Coin,
                Object::Exit,
            ],
            GameId::Catapults => &[
                Object::Wall,
                Object::CatapultUp,
                Object::CatapultRight,
                Object::CatapultLeft,
                Object::CatapultDown,
                Object::Water,
                Object::Exit,
            ],
        }
    }

    pub fn object_from_char(self, ch: char) -> Option<Object> {
        self.objects().iter().copied().find(|o| o.glyph() == ch)
    }

    fn object_channel(self, obj: Object) -> Option<usize> {
        self.objects().iter().position(|&o| o == obj)
    }

    /// Number of broadcast channels (counters and held-item flags).
    fn broadcast_channels(self) -> usize {
        match self {
            GameId::BoulderDash => GEM_THERMOMETER,
            GameId::IceAndFire => COIN_THERMOMETER + 2,
            GameId::Catapults => 0,
        }
    }

    /// Total observation channels: objects + avatar + broadcasts + subgoal.
    pub fn channels(self) -> usize {
        self.objects().len() + 1 + self.broadcast_channels() + 1
    }
}

impl fmt::Display for GameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Object {
    Wall,
    Boulder,
    Gem,
    Exit,
    Spikes,
    Ice,
    Fire,
    IceBoots,
    FireBoots,
    Coin,
    CatapultUp,
    CatapultRight,
    CatapultLeft,
    CatapultDown,
    Water,
}

impl Object {
    pub const COUNT: usize = 15;

    pub fn glyph(self) -> char {
        match self {
            Object::Wall => 'w',
            Object::Boulder => 'o',
            Object::Gem => 'x',
            Object::Exit => 'e',
            Object::Spikes => 's',
            Object::Ice => 'i',
            Object::Fire => 'f',
            Object::IceBoots => 'b',
            Object::FireBoots => 'h',
            Object::Coin => 'c',
            Object::CatapultUp => 'u',
            Object::CatapultRight => 'r',
            Object::CatapultLeft => 'l',
            Object::CatapultDown => 'd',
            Object::Water => '~',
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Object> {
        use Object::*;
        const ALL: [Object; Object::COUNT] = [
            Wall,
            Boulder,
            Gem,
            Exit,
            Spikes,
            Ice,
            Fire,
            IceBoots,
            FireBoots,
            Coin,
            CatapultUp,
            CatapultRight,
            CatapultLeft,
            CatapultDown,
            Water,
        ];
        ALL.get(code as usize).copied()
    }
}

/// Contents of a single tile. The one-character-per-tile file format means a
/// cell holds at most one object; the avatar is tracked separately.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Cell(u8);

impl Cell {
    pub const EMPTY: Cell = Cell(0);

    pub fn of(obj: Object) -> Cell {
        Cell(obj as u8 + 1)
    }

    pub fn object(self) -> Option<Object> {
        if self.0 == 0 {
            None
        } else {
            Object::from_code(self.0 - 1)
        }
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, obj: Object) -> bool {
        self.object() == Some(obj)
    }

    /// Number of objects on the tile (excluding the avatar).
    pub fn count(self) -> usize {
        (self.0 != 0) as usize
    }

    pub(crate) fn raw(self) -> u8 {
        self.0
    }

    pub(crate) fn from_raw(raw: u8) -> Option<Cell> {
        if raw == 0 {
            Some(Cell(0))
        } else {
            Object::from_code(raw - 1).map(|_| Cell(raw))
        }
    }
}

impl fmt::Debug for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.object() {
            Some(o) => write!(f, "Cell({o:?})"),
            None => write!(f, "Cell(empty)"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: u16,
    pub col: u16,
}

impl Pos {
    pub fn new(row: u16, col: u16) -> Pos {
        Pos { row, col }
    }

    pub fn manhattan(self, other: Pos) -> u32 {
        let dr = (self.row as i32 - other.row as i32).unsigned_abs();
        let dc = (self.col as i32 - other.col as i32).unsigned_abs();
        dr + dc
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("grid is not rectangular: row {row} has {got} columns, expected {expected}")]
    NonRectangular { row: usize, got: usize, expected: usize },
    #[error("unknown character {ch:?} at ({row},{col})")]
    UnknownCharacter { row: usize, col: usize, ch: char },
    #[error("level must contain exactly one avatar, found {0}")]
    AvatarCountNotOne(usize),
    #[error("level must contain exactly one exit, found {0}")]
    ExitCountNotOne(usize),
}

/// A parsed, validated level layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelGrid {
    game: GameId,
    rows: u16,
    cols: u16,
    cells: Vec<Cell>,
    avatar_start: Pos,
    exit: Pos,
}

impl LevelGrid {
    /// Builds a grid from raw parts, enforcing the level invariants:
    /// rectangular cells, exactly one exit stored in `cells`, and an avatar
    /// start on empty floor.
    pub fn from_parts(
        game: GameId,
        rows: u16,
        cols: u16,
        cells: Vec<Cell>,
        avatar_start: Pos,
    ) -> Result<LevelGrid, ParseError> {
        if cells.len() != rows as usize * cols as usize || rows == 0 || cols == 0 {
            return Err(ParseError::NonRectangular {
                row: 0,
                got: cells.len(),
                expected: rows as usize * cols as usize,
            });
        }
        let exits: Vec<usize> = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.contains(Object::Exit))
            .map(|(i, _)| i)
            .collect();
        if exits.len() != 1 {
            return Err(ParseError::ExitCountNotOne(exits.len()));
        }
        let exit = Pos::new((exits[0] / cols as usize) as u16, (exits[0] % cols as usize) as u16);
        let in_bounds = avatar_start.row < rows && avatar_start.col < cols;
        if !in_bounds
            || !cells[avatar_start.row as usize * cols as usize + avatar_start.col as usize]
                .is_empty()
        {
            return Err(ParseError::AvatarCountNotOne(0));
        }
        Ok(LevelGrid { game, rows, cols, cells, avatar_start, exit })
    }

    /// Test-only constructor that skips validation.
    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(
        game: GameId,
        rows: u16,
        cols: u16,
        cells: Vec<Cell>,
        avatar_start: Pos,
        exit: Pos,
    ) -> LevelGrid {
        LevelGrid { game, rows, cols, cells, avatar_start, exit }
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

    pub fn avatar_start(&self) -> Pos {
        self.avatar_start
    }

    pub fn exit(&self) -> Pos {
        self.exit
    }

    pub fn cell(&self, pos: Pos) -> Cell {
        assert!(pos.row < self.rows && pos.col < self.cols, "cell {pos} out of bounds");
        self.cells[pos.row as usize * self.cols as usize + pos.col as usize]
    }

    pub(crate) fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn count_objects(&self, obj: Object) -> usize {
        self.cells.iter().filter(|c| c.contains(obj)).count()
    }

    pub fn positions_of(&self, obj: Object) -> Vec<Pos> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.cell(Pos::new(r, c)).contains(obj) {
                    out.push(Pos::new(r, c));
                }
            }
        }
        out
    }
}

/// Parses a level description. `.` and `-` both map to empty floor.
pub fn parse_level(text: &str, game: GameId) -> Result<LevelGrid, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let cols = lines.first().map_or(0, |l| l.chars().count());
    let mut cells = Vec::new();
    let mut avatars = Vec::new();
    let mut exits = 0usize;
    for (r, line) in lines.iter().enumerate() {
        let row_chars: Vec<char> = line.chars().collect();
        if row_chars.len() != cols {
            return Err(ParseError::NonRectangular { row: r, got: row_chars.len(), expected: cols });
        }
        for (c, ch) in row_chars.into_iter().enumerate() {
            match ch {
                '.' | '-' => cells.push(Cell::EMPTY),
                'A' => {
                    avatars.push(Pos::new(r as u16, c as u16));
                    cells.push(Cell::EMPTY);
                }
                _ => match game.object_from_char(ch) {
                    Some(obj) => {
                        if obj == Object::Exit {
                            exits += 1;
                        }
                        cells.push(Cell::of(obj));
                    }
                    None => return Err(ParseError::UnknownCharacter { row: r, col: c, ch }),
                },
            }
        }
    }
    if avatars.len() != 1 {
        return Err(ParseError::AvatarCountNotOne(avatars.len()));
    }
    if exits != 1 {
        return Err(ParseError::ExitCountNotOne(exits));
    }
    LevelGrid::from_parts(game, lines.len() as u16, cols as u16, cells, avatars[0])
}

/// Serializes a grid to canonical text: `.` floors, one trailing newline per
/// row, the avatar marker over its (empty) floor tile.
pub fn serialize_level(grid: &LevelGrid) -> String {
    let mut out = String::with_capacity((grid.cols as usize + 1) * grid.rows as usize);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let pos = Pos::new(r, c);
            let cell = grid.cell(pos);
            let ch = if pos == grid.avatar_start && cell.is_empty() {
                'A'
            } else {
                cell.object().map_or('.', Object::glyph)
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("subgoal tile {tile} lies outside the {rows}x{cols} grid")]
    SubgoalOutOfBounds { tile: Pos, rows: u16, cols: u16 },
}

/// Channels-last binary observation tensor; every entry is 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    rows: u16,
    cols: u16,
    channels: u16,
    data: Vec<u8>,
}

impl Observation {
    /// Builds an observation from raw 0/1 entries, row-major with channels
    /// last. For synthetic network inputs; game encodings come from
    /// [`encode_observation`].
    pub fn from_bits(rows: usize, cols: usize, channels: usize, data: Vec<u8>) -> Observation {
        assert_eq!(data.len(), rows * cols * channels, "data length must match dims");
        assert!(data.iter().all(|&b| b <= 1), "entries must be 0 or 1");
        Observation { rows: rows as u16, cols: cols as u16, channels: channels as u16, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows as usize, self.cols as usize, self.channels as usize)
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.data[(row * self.cols as usize + col) * self.channels as usize + channel]
    }

    /// Raw row-major (row, col, channel) bytes; used as the dataset
    /// uniqueness key.
    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Widens to the f64 network input layout.
    pub fn to_input(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64).collect()
    }
}

/// Encodes a state (and optionally a subgoal) as a one-hot observation
/// tensor. With no subgoal the marker channel is all zero.
pub fn encode_observation(
    state: &GameState,
    subgoal: Option<Subgoal>,
) -> Result<Observation, EncodeError> {
    let game = state.game();
    let (rows, cols) = (state.rows(), state.cols());
    if let Some(sg) = subgoal {
        if sg.tile.row >= rows || sg.tile.col >= cols {
            return Err(EncodeError::SubgoalOutOfBounds { tile: sg.tile, rows, cols });
        }
    }
    let channels = game.channels();
    let n_objects = game.objects().len();
    let avatar_ch = n_objects;
    let broadcast_base = n_objects + 1;
    let subgoal_ch = channels - 1;
    let mut data = vec![0u8; rows as usize * cols as usize * channels];

    let mut broadcast = vec![0u8; game.broadcast_channels()];
    match game {
        GameId::BoulderDash => {
            let lit = (state.gems_collected() as usize).min(GEM_THERMOMETER);
            broadcast[..lit].fill(1);
        }
        GameId::IceAndFire => {
            let lit = (state.coins_collected() as usize).min(COIN_THERMOMETER);
            broadcast[..lit].fill(1);
            broadcast[COIN_THERMOMETER] = state.has_ice_boots() as u8;
            broadcast[COIN_THERMOMETER + 1] = state.has_fire_boots() as u8;
        }
        GameId::Catapults => {}
    }

    for r in 0..rows as usize {
        for c in 0..cols as usize {
            let base = (r * cols as usize + c) * channels;
            if let Some(obj) = state.cell(Pos::new(r as u16, c as u16)).object() {
                let ch = game
                    .object_channel(obj)
                    .expect("cell object is valid for the game alphabet");
                data[base + ch] = 1;
            }
            for (k, &bit) in broadcast.iter().enumerate() {
                data[base + broadcast_base + k] = bit;
            }
        }
    }
    let av = state.avatar();
    data[(av.row as usize * cols as usize + av.col as usize) * channels + avatar_ch] = 1;
    if let Some(sg) = subgoal {
        let t = sg.tile;
        data[(t.row as usize * cols as usize + t.col as usize) * channels + subgoal_ch] = 1;
    }
    Ok(Observation { rows, cols, channels: channels as u16, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{GameState, Ruleset, Subgoal};

    const SMALL_BD: &str = "wwwww\nw.A.w\nwox.w\nw..ew\nwwwww\n";

    #[test]
    fn parses_objects_and_positions() {
        let grid = parse_level(SMALL_BD, GameId::BoulderDash).unwrap();
        assert_eq!(grid.rows(), 5);
        assert_eq!(grid.cols(), 5);
        assert_eq!(grid.avatar_start(), Pos::new(1, 2));
        assert_eq!(grid.exit(), Pos::new(3, 3));
        assert!(grid.cell(Pos::new(2, 1)).contains(Object::Boulder));
        assert!(grid.cell(Pos::new(2, 2)).contains(Object::Gem));
        assert!(grid.cell(Pos::new(1, 2)).is_empty());
    }

    #[test]
    fn dash_and_dot_both_mean_floor() {
        let a = parse_level("www\nwAw\nwew\n-..\n", GameId::BoulderDash).unwrap();
        let b = parse_level("www\nwAw\nwew\n...\n", GameId::BoulderDash).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_exit_is_rejected() {
        assert_eq!(parse_level("A", GameId::BoulderDash), Err(ParseError::ExitCountNotOne(0)));
    }

    #[test]
    fn avatar_count_must_be_one() {
        assert_eq!(
            parse_level("AAe", GameId::BoulderDash),
            Err(ParseError::AvatarCountNotOne(2))
        );
        assert_eq!(parse_level("..e", GameId::BoulderDash), Err(ParseError::AvatarCountNotOne(0)));
    }

    #[test]
    fn unknown_character_is_located() {
        assert_eq!(
            parse_level("wAew\nw..q", GameId::BoulderDash),
            Err(ParseError::UnknownCharacter { row: 1, col: 3, ch: 'q' })
        );
        // IceAndFire characters are not part of the BoulderDash alphabet.
        assert!(matches!(
            parse_level("Aec", GameId::BoulderDash),
            Err(ParseError::UnknownCharacter { ch: 'c', .. })
        ));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert_eq!(
            parse_level("www\nww\n", GameId::BoulderDash),
            Err(ParseError::NonRectangular { row: 1, got: 2, expected: 3 })
        );
    }

    #[test]
    fn serialize_smallest_grid() {
        let grid = LevelGrid::from_parts_unchecked(
            GameId::BoulderDash,
            1,
            1,
            vec![Cell::of(Object::Wall)],
            Pos::new(0, 0),
            Pos::new(0, 0),
        );
        assert_eq!(serialize_level(&grid), "w\n");
    }

    #[test]
    fn serialization_is_canonical() {
        let with_dashes = "wwwww\nw-A-w\nwox-w\nw--ew\nwwwww\n";
        let grid = parse_level(with_dashes, GameId::BoulderDash).unwrap();
        assert_eq!(serialize_level(&grid), SMALL_BD);
        let reparsed = parse_level(&serialize_level(&grid), GameId::BoulderDash).unwrap();
        assert_eq!(reparsed, grid);
    }

    #[test]
    fn alphabets_are_disjoint_per_game() {
        for game in GameId::ALL {
            for obj in game.objects() {
                assert_eq!(game.object_from_char(obj.glyph()), Some(*obj));
            }
        }
        assert_eq!(GameId::BoulderDash.object_from_char('~'), None);
        assert_eq!(GameId::Catapults.object_from_char('x'), None);
    }

    fn small_state() -> GameState {
        let grid = parse_level(SMALL_BD, GameId::BoulderDash).unwrap();
        GameState::initial(&grid, Ruleset::Mini)
    }

    #[test]
    fn wall_tile_has_exactly_one_object_bit() {
        let state = small_state();
        let obs = encode_observation(&state, None).unwrap();
        let n_objects = GameId::BoulderDash.objects().len();
        let ones: usize = (0..n_objects).map(|ch| obs.get(0, 0, ch) as usize).sum();
        assert_eq!(ones, 1);
        assert_eq!(obs.get(0, 0, 0), 1); // wall channel
    }

    #[test]
    fn subgoal_channel_is_one_hot() {
        let state = small_state();
        let obs = encode_observation(&state, Some(Subgoal::tile(Pos::new(2, 3)))).unwrap();
        let (rows, cols, channels) = obs.dims();
        let sg = channels - 1;
        let mut ones = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if obs.get(r, c, sg) == 1 {
                    ones.push((r, c));
                }
            }
        }
        assert_eq!(ones, vec![(2, 3)]);
        let bare = encode_observation(&state, None).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                assert_eq!(bare.get(r, c, sg), 0);
            }
        }
    }

    #[test]
    fn object_channel_sums_match_cell_counts() {
        let state = small_state();
        let obs = encode_observation(&state, None).unwrap();
        let n_objects = GameId::BoulderDash.objects().len();
        for r in 0..state.rows() {
            for c in 0..state.cols() {
                let pos = Pos::new(r, c);
                let expected = state.cell(pos).count() + (state.avatar() == pos) as usize;
                let got: usize = (0..=n_objects)
                    .map(|ch| obs.get(r as usize, c as usize, ch) as usize)
                    .sum();
                assert_eq!(got, expected, "tile {pos}");
            }
        }
    }

    #[test]
    fn counters_become_broadcast_thermometer_channels() {
        let grid = parse_level(SMALL_BD, GameId::BoulderDash).unwrap();
        let state = GameState::initial(&grid, Ruleset::Mini);
        // Collect the single gem: move down twice is blocked by the boulder,
        // so step right over the gem column: avatar (1,2) -> (2,2) has the gem.
        let state = state.step(crate::game::Action::Down).unwrap();
        assert_eq!(state.gems_collected(), 1);
        let obs = encode_observation(&state, None).unwrap();
        let base = GameId::BoulderDash.objects().len() + 1;
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(obs.get(r, c, base), 1);
                assert_eq!(obs.get(r, c, base + 1), 0);
            }
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = encode_observation(&small_state(), Some(Subgoal::tile(Pos::new(2, 2)))).unwrap();
        let b = encode_observation(&small_state(), Some(Subgoal::tile(Pos::new(2, 2)))).unwrap();
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn out_of_bounds_subgoal_is_rejected() {
        let err = encode_observation(&small_state(), Some(Subgoal::tile(Pos::new(9, 0))));
        assert_eq!(
            err,
            Err(EncodeError::SubgoalOutOfBounds { tile: Pos::new(9, 0), rows: 5, cols: 5 })
        );
    }

    #[test]
    fn channel_counts_per_game() {
        assert_eq!(GameId::BoulderDash.channels(), 15);
        assert_eq!(GameId::IceAndFire.channels(), 22);
        assert_eq!(GameId::Catapults.channels(), 9);
    }
}
