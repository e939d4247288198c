//! Command-line interface: generate levels, collect datasets, train the
//! goal-selection network, evaluate approaches, and plan single levels.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use dqplan::config::{parse_config, RunConfig};
use dqplan::dataset::{load_dataset, save_dataset};
use dqplan::episode::collect_dataset;
use dqplan::eval::{evaluate, Approach, EvalOptions};
use dqplan::learner::train;
use dqplan::levelgen::{generate_levels, GenConfig};
use dqplan::nn::{load_params, save_params, Parameters};
use dqplan::pddl::emit_pddl_problem;
use dqplan::{
    parse_level, plan_full, plan_to_subgoal, serialize_level, GameId, GameState, LevelGrid, Pos,
    Ruleset, SearchConfig, Strategy, Subgoal,
};

#[derive(Parser)]
#[command(name = "dqplan", version, about = "Subgoal-selection learning and planning for tile games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate solvable levels into a directory
    Gen(GenArgs),
    /// Collect a random-exploration experience dataset from levels
    Collect(CollectArgs),
    /// Train the goal-selection network on a dataset
    Train(TrainArgs),
    /// Evaluate approaches over a level suite
    Eval(EvalArgs),
    /// Plan a single level (full game or one subgoal)
    Plan(PlanArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    game: String,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    rows: u16,
    #[arg(long, default_value_t = 8)]
    cols: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for level_NNN.txt files
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mini")]
    ruleset: String,
    /// Objects to place (game-dependent default when omitted)
    #[arg(long)]
    gems: Option<usize>,
    #[arg(long)]
    coins: Option<usize>,
    #[arg(long)]
    catapults: Option<usize>,
    #[arg(long)]
    wall_density: Option<f64>,
    #[arg(long)]
    boulder_density: Option<f64>,
    #[arg(long)]
    water_density: Option<f64>,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    game: String,
    /// Directory of level .txt files
    #[arg(long)]
    levels: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mini")]
    ruleset: String,
    #[arg(long, default_value_t = 500)]
    unique_cap: usize,
    #[arg(long, default_value_t = 1000)]
    iter_cap: usize,
    /// Node budget per subgoal plan
    #[arg(long, default_value_t = 200_000)]
    budget: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Key-value config file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training seed from the config
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    game: String,
    #[arg(long)]
    levels: PathBuf,
    /// Trained parameters; required for the DQP approach
    #[arg(long)]
    params: Option<PathBuf>,
    /// Comma-separated: dqp,random,full-optimal,full-weighted,full-ehc
    #[arg(long, default_value = "dqp,random,full-optimal,full-weighted,full-ehc")]
    approaches: String,
    #[arg(long, default_value_t = 15)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = ["csv", "json-lines"])]
    format: String,
    #[arg(long, default_value = "mini")]
    ruleset: String,
    /// Node budget for the full-planner rows
    #[arg(long, default_value_t = 1_000_000)]
    budget: u64,
    /// Node budget per subgoal plan in episodes
    #[arg(long, default_value_t = 200_000)]
    episode_budget: u64,
    #[arg(long, default_value_t = 2000)]
    step_limit: u32,
    /// Report zeros for wall-clock fields, making output byte-reproducible
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    game: String,
    #[arg(long)]
    level: PathBuf,
    #[arg(long, default_value = "weighted", value_parser = ["optimal", "weighted", "ehc"])]
    strategy: String,
    #[arg(long, default_value_t = 1_000_000)]
    budget: u64,
    #[arg(long, default_value = "full")]
    ruleset: String,
    /// Plan to one tile, as `row,col`; the full game when omitted
    #[arg(long)]
    subgoal: Option<String>,
    /// Write the PDDL problem for the planned goal to this file
    #[arg(long)]
    emit_pddl: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    fn runtime(msg: impl std::fmt::Display) -> CliError {
        CliError::Runtime(msg.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(args) => cmd_gen(args),
        Command::Collect(args) => cmd_collect(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Plan(args) => cmd_plan(args),
    }
}

fn parse_game(name: &str) -> Result<GameId, CliError> {
    GameId::from_name(name)
        .ok_or_else(|| CliError::usage(format!("unknown game `{name}` (boulderdash, iceandfire, catapults)")))
}

fn parse_ruleset(name: &str) -> Result<Ruleset, CliError> {
    Ruleset::from_name(name)
        .ok_or_else(|| CliError::usage(format!("unknown ruleset `{name}` (full, mini)")))
}

fn load_levels_dir(dir: &Path, game: GameId) -> Result<Vec<(String, LevelGrid)>, CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::runtime)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::usage(format!("no .txt levels found in {}", dir.display())));
    }
    let mut levels = Vec::new();
    for path in entries {
        let text = fs::read_to_string(&path).map_err(CliError::runtime)?;
        let level = parse_level(&text, game)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        levels.push((name, level));
    }
    Ok(levels)
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let game = parse_game(&args.game)?;
    let rules = parse_ruleset(&args.ruleset)?;
    let mut config = GenConfig::mini(game, args.rows, args.cols);
    config.rules = rules;
    if let Some(g) = args.gems {
        config.gems = g;
    }
    if let Some(c) = args.coins {
        config.coins = c;
    }
    if let Some(c) = args.catapults {
        config.catapults = c;
    }
    if let Some(w) = args.wall_density {
        config.wall_density = w;
    }
    if let Some(b) = args.boulder_density {
        config.boulder_density = b;
    }
    if let Some(w) = args.water_density {
        config.water_density = w;
    }
    let levels = generate_levels(game, args.count, &config, args.seed).map_err(CliError::runtime)?;
    fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    for (i, level) in levels.iter().enumerate() {
        let path = args.out.join(format!("level_{i:03}.txt"));
        fs::write(&path, serialize_level(level)).map_err(CliError::runtime)?;
    }
    println!("wrote {} {} levels to {}", levels.len(), game, args.out.display());
    Ok(())
}

fn cmd_collect(args: CollectArgs) -> Result<(), CliError> {
    let game = parse_game(&args.game)?;
    let rules = parse_ruleset(&args.ruleset)?;
    let levels = load_levels_dir(&args.levels, game)?;
    let grids: Vec<LevelGrid> = levels.into_iter().map(|(_, l)| l).collect();
    let opts = dqplan::episode::EpisodeOptions {
        search: SearchConfig::weighted(args.budget),
        ..Default::default()
    };
    let dataset = collect_dataset(&grids, rules, args.unique_cap, args.iter_cap, args.seed, &opts);
    save_dataset(&dataset, &args.out).map_err(CliError::runtime)?;
    println!("collected {} samples into {}", dataset.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.dataset).map_err(CliError::runtime)?;
    if dataset.is_empty() {
        return Err(CliError::runtime("dataset holds no samples"));
    }
    let mut config: RunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::runtime)?;
            parse_config(&text).map_err(CliError::runtime)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let game = dataset.game().expect("non-empty");
    let (rows, cols) = dataset.dims().expect("non-empty");
    let spec = config.network.to_spec(rows as usize, cols as usize, game.channels());
    let result = train(&dataset.samples, &spec, &config.train).map_err(CliError::runtime)?;
    save_params(&result.params, &args.out).map_err(CliError::runtime)?;
    let early: f64 = result.loss_history.iter().take(100).sum::<f64>()
        / result.loss_history.len().min(100) as f64;
    let late: f64 = result.loss_history.iter().rev().take(100).sum::<f64>()
        / result.loss_history.len().min(100) as f64;
    println!(
        "trained {} iterations on {} samples; smoothed loss {:.5} -> {:.5}; wrote {}",
        result.loss_history.len(),
        dataset.len(),
        early,
        late,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let game = parse_game(&args.game)?;
    let rules = parse_ruleset(&args.ruleset)?;
    let mut approaches = Vec::new();
    for name in args.approaches.split(',') {
        let a = Approach::from_name(name.trim())
            .ok_or_else(|| CliError::usage(format!("unknown approach `{name}`")))?;
        approaches.push(a);
    }
    let params: Option<Parameters> = match (&args.params, approaches.contains(&Approach::Dqp)) {
        (Some(path), _) => Some(load_params(path).map_err(CliError::runtime)?),
        (None, true) => {
            return Err(CliError::usage("--params is required when evaluating the DQP approach"))
        }
        (None, false) => None,
    };
    let levels = load_levels_dir(&args.levels, game)?;
    let opts = EvalOptions {
        repetitions: args.repetitions,
        episode: dqplan::episode::EpisodeOptions {
            search: SearchConfig::weighted(args.episode_budget),
            step_limit: args.step_limit,
        },
        full_budget: args.budget,
        record_wall_time: !args.no_timing,
        seed: args.seed,
    };
    let report =
        evaluate(&levels, rules, &approaches, params.as_ref(), &opts).map_err(CliError::runtime)?;
    let rendered = match args.format.as_str() {
        "csv" => report.to_csv(),
        _ => report.to_json_lines(),
    };
    match &args.out {
        Some(path) => fs::write(path, rendered).map_err(CliError::runtime)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<(), CliError> {
    let game = parse_game(&args.game)?;
    let rules = parse_ruleset(&args.ruleset)?;
    let text = fs::read_to_string(&args.level).map_err(CliError::runtime)?;
    let level = parse_level(&text, game).map_err(CliError::runtime)?;
    let state = GameState::initial(&level, rules);
    let strategy = Strategy::from_name(&args.strategy).expect("validated by clap");
    let config = match strategy {
        Strategy::Optimal => SearchConfig::optimal(args.budget),
        Strategy::Weighted => SearchConfig::weighted(args.budget),
        Strategy::Ehc => SearchConfig::ehc(args.budget),
    };
    let subgoal = match &args.subgoal {
        Some(s) => {
            let (r, c) = s
                .split_once(',')
                .and_then(|(r, c)| Some((r.trim().parse::<u16>().ok()?, c.trim().parse::<u16>().ok()?)))
                .ok_or_else(|| CliError::usage("--subgoal must be `row,col`"))?;
            if r >= level.rows() || c >= level.cols() {
                return Err(CliError::usage("--subgoal tile lies outside the level"));
            }
            Some(Subgoal::tile(Pos::new(r, c)))
        }
        None => None,
    };
    if let Some(path) = &args.emit_pddl {
        let goal = subgoal.unwrap_or(Subgoal::final_goal(state.exit()));
        fs::write(path, emit_pddl_problem(&state, goal)).map_err(CliError::runtime)?;
        println!("wrote PDDL problem to {}", path.display());
    }
    let (result, stats) = match subgoal {
        Some(goal) => plan_to_subgoal(&state, goal, &config),
        None => plan_full(&state, &config),
    };
    let failure = match &result {
        Ok(plan) => {
            let words: Vec<&str> = plan.actions.iter().map(|a| a.name()).collect();
            println!("plan: {}", words.join(" "));
            println!("cost: {}", plan.cost());
            None
        }
        Err(e) => {
            println!("no plan: {e}");
            Some(e.to_string())
        }
    };
    println!("nodes_expanded: {}", stats.nodes_expanded);
    println!("nodes_generated: {}", stats.nodes_generated);
    println!("time_ms: {:.3}", stats.wall_time.as_secs_f64() * 1e3);
    match failure {
        Some(msg) => Err(CliError::Runtime(msg)),
        None => Ok(()),
    }
}
