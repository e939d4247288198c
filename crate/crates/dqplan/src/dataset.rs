//! Experience dataset file format.
//!
//! Versioned record stream: magic `DQPD`, format byte, game id, grid dims
//! (uniform across the dataset), sample count, then per sample the packed
//! state, the chosen subgoal (kind byte + tile), the reward as a 64-bit
//! float, the packed next state, and a terminal-kind byte. A SHA-256
//! checksum trails the stream.

use std::path::Path;

use crate::files::{self, FileError, Reader};
use crate::game::{GameState, Subgoal, SubgoalKind};
use crate::learner::{ExperienceSample, TerminalKind};
use crate::level::{GameId, Pos};

const DATASET_MAGIC: &[u8; 4] = b"DQPD";
const DATASET_FORMAT: u8 = 1;

/// A collected dataset; all samples share one game and grid size.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<ExperienceSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn game(&self) -> Option<GameId> {
        self.samples.first().map(|s| s.state.game())
    }

    /// (rows, cols) of the shared grid size.
    pub fn dims(&self) -> Option<(u16, u16)> {
        self.samples.first().map(|s| (s.state.rows(), s.state.cols()))
    }

    fn check_uniform(&self) -> Result<(GameId, u16, u16), FileError> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| files::format_err("dataset holds no samples"))?;
        let key = (first.state.game(), first.state.rows(), first.state.cols());
        for s in &self.samples {
            for st in [&s.state, &s.next_state] {
                if (st.game(), st.rows(), st.cols()) != key {
                    return Err(files::format_err(
                        "dataset mixes games or grid sizes; one network input shape is required",
                    ));
                }
            }
        }
        Ok(key)
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), FileError> {
    let (game, rows, cols) = dataset.check_uniform()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.push(DATASET_FORMAT);
    buf.push(game_code(game));
    files::put_u16(&mut buf, rows);
    files::put_u16(&mut buf, cols);
    files::put_u64(&mut buf, dataset.samples.len() as u64);
    for s in &dataset.samples {
        s.state.pack_into(&mut buf);
        buf.push(match s.chosen.kind {
            SubgoalKind::Tile => 0,
            SubgoalKind::FinalGoal => 1,
        });
        files::put_u16(&mut buf, s.chosen.tile.row);
        files::put_u16(&mut buf, s.chosen.tile.col);
        files::put_f64(&mut buf, s.reward);
        s.next_state.pack_into(&mut buf);
        buf.push(s.terminal.code());
    }
    files::write_with_checksum(path, buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, FileError> {
    let buf = files::read_with_checksum(path)?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != DATASET_MAGIC {
        return Err(files::format_err("not a dataset file (bad magic)"));
    }
    if r.u8()? != DATASET_FORMAT {
        return Err(files::format_err("unsupported dataset format version"));
    }
    let game = game_from_code(r.u8()?)?;
    let rows = r.u16()?;
    let cols = r.u16()?;
    let count = r.u64()? as usize;
    let state_len = GameState::packed_len_for(rows, cols);
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let state = GameState::unpack(game, rows, cols, r.take(state_len)?)
            .ok_or_else(|| files::format_err("malformed state record"))?;
        let kind = match r.u8()? {
            0 => SubgoalKind::Tile,
            1 => SubgoalKind::FinalGoal,
            _ => return Err(files::format_err("bad subgoal kind byte")),
        };
        let tile = Pos::new(r.u16()?, r.u16()?);
        if tile.row >= rows || tile.col >= cols {
            return Err(files::format_err("subgoal tile out of bounds"));
        }
        let reward = r.f64()?;
        let next_state = GameState::unpack(game, rows, cols, r.take(state_len)?)
            .ok_or_else(|| files::format_err("malformed next-state record"))?;
        let terminal = TerminalKind::from_code(r.u8()?)
            .ok_or_else(|| files::format_err("bad terminal kind byte"))?;
        samples.push(ExperienceSample {
            state,
            chosen: Subgoal { kind, tile },
            reward,
            next_state,
            terminal,
        });
    }
    if !r.is_done() {
        return Err(files::format_err("trailing bytes after samples"));
    }
    Ok(Dataset { samples })
}

fn game_code(game: GameId) -> u8 {
    match game {
        GameId::BoulderDash => 0,
        GameId::IceAndFire => 1,
        GameId::Catapults => 2,
    }
}

fn game_from_code(code: u8) -> Result<GameId, FileError> {
    match code {
        0 => Ok(GameId::BoulderDash),
        1 => Ok(GameId::IceAndFire),
        2 => Ok(GameId::Catapults),
        _ => Err(files::format_err("bad game id byte")),
    }
}
