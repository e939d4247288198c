//! Procedural level generation with a solvability filter.
//!
//! Levels are sampled cell by cell (perimeter walls, then terrain by
//! density, then placed objects on random floor tiles) and kept only if the
//! full-game weighted search wins them within a node budget. Rejected
//! candidates are regenerated from the next attempt seed, so a fixed seed
//! yields a fixed level set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::files::mix_seed;
use crate::game::{GameState, Ruleset};
use crate::level::{Cell, GameId, LevelGrid, Object, Pos};
use crate::search::{plan_full, SearchConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("level dims must be at least 4x4, got {0}x{1}")]
    DimsTooSmall(u16, u16),
    #[error("gave up after {0} rejected candidates")]
    Exhausted(usize),
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub rows: u16,
    pub cols: u16,
    pub wall_density: f64,
    /// BoulderDash terrain and object knobs.
    pub boulder_density: f64,
    pub gems: usize,
    /// IceAndFire knobs; one pair of each boots is always placed.
    pub spike_density: f64,
    pub ice_density: f64,
    pub fire_density: f64,
    pub coins: usize,
    /// Catapults knobs.
    pub water_density: f64,
    pub catapults: usize,
    /// Ruleset used by the solvability filter.
    pub rules: Ruleset,
    pub filter_budget: u64,
    pub max_rejects: usize,
}

impl GenConfig {
    /// Small-grid training defaults per game.
    pub fn mini(game: GameId, rows: u16, cols: u16) -> GenConfig {
        let base = GenConfig {
            rows,
            cols,
            wall_density: 0.10,
            boulder_density: 0.0,
            gems: 0,
            spike_density: 0.0,
            ice_density: 0.0,
            fire_density: 0.0,
            coins: 0,
            water_density: 0.0,
            catapults: 0,
            rules: Ruleset::Mini,
            filter_budget: 300_000,
            max_rejects: 400,
        };
        match game {
            GameId::BoulderDash => GenConfig { boulder_density: 0.12, gems: 6, ..base },
            GameId::IceAndFire => GenConfig {
                spike_density: 0.05,
                ice_density: 0.10,
                fire_density: 0.10,
                coins: 5,
                ..base
            },
            GameId::Catapults => GenConfig {
                wall_density: 0.12,
                water_density: 0.14,
                catapults: 5,
                ..base
            },
        }
    }
}

/// Generates `count` solvable levels. Deterministic in `seed`.
pub fn generate_levels(
    game: GameId,
    count: usize,
    config: &GenConfig,
    seed: u64,
) -> Result<Vec<LevelGrid>, GenError> {
    if config.rows < 4 || config.cols < 4 {
        return Err(GenError::DimsTooSmall(config.rows, config.cols));
    }
    let mut levels = Vec::with_capacity(count);
    let mut rejects = 0usize;
    let mut attempt = 0u64;
    while levels.len() < count {
        if rejects > config.max_rejects {
            return Err(GenError::Exhausted(rejects));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, attempt));
        attempt += 1;
        let Some(level) = sample_level(game, config, &mut rng) else {
            rejects += 1;
            continue;
        };
        let state = GameState::initial(&level, config.rules);
        let budget = SearchConfig::weighted(config.filter_budget);
        if plan_full(&state, &budget).0.is_ok() {
            levels.push(level);
        } else {
            rejects += 1;
        }
    }
    Ok(levels)
}

fn sample_level(game: GameId, config: &GenConfig, rng: &mut ChaCha8Rng) -> Option<LevelGrid> {
    let (rows, cols) = (config.rows as usize, config.cols as usize);
    let mut cells = vec![Cell::EMPTY; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let border = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
            if border {
                cells[r * cols + c] = Cell::of(Object::Wall);
                continue;
            }
            let roll: f64 = rng.gen();
            let mut acc = config.wall_density;
            let obj = if roll < acc {
                Some(Object::Wall)
            } else if game == GameId::BoulderDash && roll < add(&mut acc, config.boulder_density) {
                Some(Object::Boulder)
            } else if game == GameId::IceAndFire && roll < add(&mut acc, config.spike_density) {
                Some(Object::Spikes)
            } else if game == GameId::IceAndFire && roll < add(&mut acc, config.ice_density) {
                Some(Object::Ice)
            } else if game == GameId::IceAndFire && roll < add(&mut acc, config.fire_density) {
                Some(Object::Fire)
            } else if game == GameId::Catapults && roll < add(&mut acc, config.water_density) {
                Some(Object::Water)
            } else {
                None
            };
            if let Some(obj) = obj {
                cells[r * cols + c] = Cell::of(obj);
            }
        }
    }

    let mut placed: Vec<Object> = vec![Object::Exit];
    match game {
        GameId::BoulderDash => placed.extend(std::iter::repeat(Object::Gem).take(config.gems)),
        GameId::IceAndFire => {
            placed.push(Object::IceBoots);
            placed.push(Object::FireBoots);
            placed.extend(std::iter::repeat(Object::Coin).take(config.coins));
        }
        GameId::Catapults => {
            for _ in 0..config.catapults {
                let dir = [
                    Object::CatapultUp,
                    Object::CatapultRight,
                    Object::CatapultLeft,
                    Object::CatapultDown,
                ][rng.gen_range(0..4)];
                placed.push(dir);
            }
        }
    }

    let mut floor: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_empty())
        .map(|(i, _)| i)
        .collect();
    if floor.len() < placed.len() + 1 {
        return None;
    }
    floor.shuffle(rng);
    for (slot, obj) in floor.iter().zip(&placed) {
        cells[*slot] = Cell::of(*obj);
    }
    let avatar_idx = floor[placed.len()];
    let avatar = Pos::new((avatar_idx / cols) as u16, (avatar_idx % cols) as u16);
    LevelGrid::from_parts(game, config.rows, config.cols, cells, avatar).ok()
}

fn add(acc: &mut f64, amount: f64) -> f64 {
    *acc += amount;
    *acc
}
