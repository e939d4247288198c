//! PDDL problem emission for single-subgoal planning.
//!
//! Problems pair with the static domain files shipped under `domains/`
//! (`boulderdash.pddl`, `iceandfire.pddl`, `catapults.pddl`). Each problem
//! describes the current state as typed `tileR_C` objects, four-directional
//! connectivity facts, per-tile object facts, and dynamic facts (facing,
//! boots held, exit openness, catapult launch outcomes). The goal is a
//! single `(goto tileR_C)` literal; `goto` is a sticky visited marker, so a
//! tile entered at any point of a plan satisfies it.
//!
//! Catapult launch chains are static per level; the emitter resolves each
//! chain to its final rest tile (`launches`) or marks the catapult as
//! deadly (water landing or an endless chain). Landings in the middle of a
//! chain are not modelled as `goto` credit, unlike the engine's trace.

use std::collections::HashSet;
use std::fmt::Write;

use crate::game::{GameState, Status, Subgoal};
use crate::level::{GameId, Object, Pos};

/// Emits a PDDL problem whose goal is reaching the subgoal tile.
pub fn emit_pddl_problem(state: &GameState, subgoal: Subgoal) -> String {
    assert_eq!(state.status(), Status::Running, "can only emit problems for running states");
    let game = state.game();
    let goal_tile = subgoal.tile;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "(define (problem {}-{}x{}-goal-{}-{})",
        game.name(),
        state.rows(),
        state.cols(),
        goal_tile.row,
        goal_tile.col
    );
    let _ = writeln!(out, "  (:domain {})", game.name());

    out.push_str("  (:objects");
    for r in 0..state.rows() {
        let _ = write!(out, "\n   ");
        for c in 0..state.cols() {
            let _ = write!(out, " {}", tile_name(Pos::new(r, c)));
        }
    }
    out.push_str(" - tile)\n");

    out.push_str("  (:init\n");
    let _ = writeln!(out, "    (at {})", tile_name(state.avatar()));
    let _ = writeln!(out, "    (goto {})", tile_name(state.avatar()));
    match game {
        GameId::BoulderDash => {
            let _ = writeln!(out, "    (facing-{})", dir_name(state));
            if crate::game::final_goal_attainable(state) {
                out.push_str("    (exit-open)\n");
            }
        }
        GameId::IceAndFire => {
            if state.has_ice_boots() {
                out.push_str("    (has-ice-boots)\n");
            }
            if state.has_fire_boots() {
                out.push_str("    (has-fire-boots)\n");
            }
            if crate::game::final_goal_attainable(state) {
                out.push_str("    (exit-open)\n");
            }
        }
        GameId::Catapults => {
            out.push_str("    (alive)\n");
        }
    }
    emit_connectivity(&mut out, state);
    emit_tile_facts(&mut out, state);
    if game == GameId::Catapults {
        emit_launch_facts(&mut out, state);
    }
    out.push_str("  )\n");
    let _ = writeln!(out, "  (:goal (goto {}))", tile_name(goal_tile));
    out.push_str(")\n");
    out
}

fn tile_name(pos: Pos) -> String {
    format!("tile{}_{}", pos.row, pos.col)
}

fn dir_name(state: &GameState) -> &'static str {
    match state.facing() {
        crate::game::Dir::Up => "up",
        crate::game::Dir::Down => "down",
        crate::game::Dir::Left => "left",
        crate::game::Dir::Right => "right",
    }
}

fn emit_connectivity(out: &mut String, state: &GameState) {
    for r in 0..state.rows() {
        for c in 0..state.cols() {
            let from = Pos::new(r, c);
            for (dir, name) in [
                (crate::game::Dir::Up, "up"),
                (crate::game::Dir::Down, "down"),
                (crate::game::Dir::Left, "left"),
                (crate::game::Dir::Right, "right"),
            ] {
                if let Some(to) = state.neighbor(from, dir) {
                    let _ = writeln!(
                        out,
                        "    (connected-{} {} {})",
                        name,
                        tile_name(from),
                        tile_name(to)
                    );
                }
            }
        }
    }
}

/// Whether a plain move may enter the tile right now. Tiles with dedicated
/// actions in the domain (boulders, ice, fire, boots, catapults, water) are
/// deliberately not `clear`.
fn is_clear(state: &GameState, obj: Option<Object>) -> bool {
    match obj {
        None => true,
        Some(Object::Gem) | Some(Object::Coin) => true,
        Some(Object::Exit) => crate::game::final_goal_attainable(state),
        _ => false,
    }
}

fn emit_tile_facts(out: &mut String, state: &GameState) {
    for r in 0..state.rows() {
        for c in 0..state.cols() {
            let pos = Pos::new(r, c);
            let obj = state.cell(pos).object();
            let name = tile_name(pos);
            if is_clear(state, obj) {
                let _ = writeln!(out, "    (clear {name})");
            }
            let fact = match obj {
                Some(Object::Wall) => Some("wall"),
                Some(Object::Boulder) => Some("boulder"),
                Some(Object::Gem) => Some("gem"),
                Some(Object::Exit) => Some("exit-tile"),
                Some(Object::Spikes) => Some("spikes"),
                Some(Object::Ice) => Some("ice"),
                Some(Object::Fire) => Some("fire"),
                Some(Object::IceBoots) => Some("ice-boots-at"),
                Some(Object::FireBoots) => Some("fire-boots-at"),
                Some(Object::Coin) => Some("coin"),
                Some(Object::Water) => Some("water"),
                Some(Object::CatapultUp)
                | Some(Object::CatapultRight)
                | Some(Object::CatapultLeft)
                | Some(Object::CatapultDown) => Some("catapult"),
                None => None,
            };
            if let Some(fact) = fact {
                let _ = writeln!(out, "    ({fact} {name})");
            }
        }
    }
}

enum ChainOutcome {
    Safe(Pos),
    Deadly,
}

/// Final outcome of stepping on a catapult: where the full launch chain
/// rests, or death (water landing or an endless chain).
fn resolve_chain(state: &GameState, start: Pos) -> ChainOutcome {
    let mut visited: HashSet<(Pos, crate::game::Dir)> = HashSet::new();
    let mut pos = start;
    loop {
        let Some(dir) = state.cell(pos).object().and_then(crate::game::catapult_dir) else {
            return if state.cell(pos).contains(Object::Water) {
                ChainOutcome::Deadly
            } else {
                ChainOutcome::Safe(pos)
            };
        };
        if !visited.insert((pos, dir)) {
            return ChainOutcome::Deadly;
        }
        pos = state.launch(pos, dir);
    }
}

fn emit_launch_facts(out: &mut String, state: &GameState) {
    for r in 0..state.rows() {
        for c in 0..state.cols() {
            let pos = Pos::new(r, c);
            if state.cell(pos).object().and_then(crate::game::catapult_dir).is_none() {
                continue;
            }
            match resolve_chain(state, pos) {
                ChainOutcome::Safe(land) => {
                    let _ = writeln!(out, "    (landing-safe {})", tile_name(pos));
                    let _ =
                        writeln!(out, "    (launches {} {})", tile_name(pos), tile_name(land));
                }
                ChainOutcome::Deadly => {
                    let _ = writeln!(out, "    (landing-deadly {})", tile_name(pos));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Ruleset;
    use crate::level::{parse_level, Cell, LevelGrid};

    fn state(text: &str, game: GameId, rules: Ruleset) -> GameState {
        GameState::initial(&parse_level(text, game).unwrap(), rules)
    }

    #[test]
    fn goal_section_names_the_subgoal_tile() {
        let s = state(
            "wwwww\nwA..w\nw.x.w\nw..ew\nwwwww\n",
            GameId::BoulderDash,
            Ruleset::Full,
        );
        let text = emit_pddl_problem(&s, Subgoal::tile(Pos::new(1, 3)));
        assert!(text.contains("(:goal (goto tile1_3))"), "{text}");
        assert!(text.contains("(:domain boulderdash)"));
        assert!(text.contains("(at tile1_1)"));
        assert!(text.contains("(facing-right)"));
        assert!(text.contains("(gem tile2_2)"));
        assert!(text.contains("(exit-tile tile3_3)"));
        // Nine gems are required but none collected: the exit is shut.
        assert!(!text.contains("(exit-open)"));
        assert!(!text.contains("(clear tile3_3)"));
    }

    #[test]
    fn degenerate_single_tile_problem_is_trivially_satisfied() {
        let grid = LevelGrid::from_parts_unchecked(
            GameId::BoulderDash,
            1,
            1,
            vec![Cell::EMPTY],
            Pos::new(0, 0),
            Pos::new(0, 0),
        );
        let s = GameState::initial(&grid, Ruleset::Mini);
        let text = emit_pddl_problem(&s, Subgoal::tile(Pos::new(0, 0)));
        assert!(text.contains("(:objects\n    tile0_0 - tile)"), "{text}");
        assert!(text.contains("(goto tile0_0)"));
        assert!(text.contains("(:goal (goto tile0_0))"));
        assert!(!text.contains("connected"));
    }

    #[test]
    fn connectivity_facts_cover_in_bound_neighbours() {
        let s = state("wwww\nwAew\nwwww\n", GameId::BoulderDash, Ruleset::Mini);
        let text = emit_pddl_problem(&s, Subgoal::final_goal(s.exit()));
        assert!(text.contains("(connected-right tile1_1 tile1_2)"));
        assert!(text.contains("(connected-up tile1_1 tile0_1)"));
        assert!(!text.contains("tile0_0 tile0_-1"));
    }

    #[test]
    fn catapult_launches_are_resolved_statically() {
        let s = state(
            "wwwww\nw...w\nw..ew\nwAu.w\nwwwww\n",
            GameId::Catapults,
            Ruleset::Full,
        );
        let text = emit_pddl_problem(&s, Subgoal::tile(Pos::new(3, 2)));
        assert!(text.contains("(catapult tile3_2)"));
        assert!(text.contains("(landing-safe tile3_2)"));
        assert!(text.contains("(launches tile3_2 tile1_2)"));
        assert!(text.contains("(alive)"));

        // A catapult pinned against the wall loops forever: deadly.
        let s = state("wwww\nwuAw\nw.ew\nwwww\n", GameId::Catapults, Ruleset::Full);
        let text = emit_pddl_problem(&s, Subgoal::tile(Pos::new(1, 1)));
        assert!(text.contains("(landing-deadly tile1_1)"));
        assert!(!text.contains("(launches tile1_1"));
    }

    #[test]
    fn water_landing_is_deadly() {
        let s = state("wwwww\nw...w\nwAr~w\nw..ew\nwwwww\n", GameId::Catapults, Ruleset::Full);
        let text = emit_pddl_problem(&s, Subgoal::tile(Pos::new(2, 2)));
        assert!(text.contains("(landing-deadly tile2_2)"));
        assert!(text.contains("(water tile2_3)"));
    }
}
