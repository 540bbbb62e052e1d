use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selftune_core::config_io::{
    self, format_real, knob_sys_path, GlobalSysFile, GoalEntry, GoalFile, KnobEntry, GLOBAL_SYS_NAME,
};
use selftune_harness::{
    compare, load_scenario, parse_range, parse_seeds, profile_sys_files, run, scenario_for_plant,
    sweep, synthesize_file, write_trace, Error, Mode, Result, RunOutcome, DEFAULT_SWEEP_RANGE,
};
use selftune_sim::Scenario;

const GOAL_FILE_NAME: &str = "goals.conf";

#[derive(Parser)]
#[command(name = "selftune", version, about = "Profile, tune and compare self-tuning knobs on simulated plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Target {
    /// Preset name or path to a `key = value` override file.
    #[arg(long, conflicts_with = "plant")]
    scenario: Option<String>,
    /// Plant kind (bounded-queue, write-buffer, dual-queue); uses its default preset.
    #[arg(long)]
    plant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Target {
    fn load(&self) -> Result<Scenario> {
        let s = match (&self.scenario, &self.plant) {
            (Some(name), _) => load_scenario(name)?,
            (None, Some(plant)) => scenario_for_plant(plant)?,
            (None, None) => return Err(Error::Usage("one of --scenario or --plant is required".into())),
        };
        Ok(match self.seed {
            Some(seed) => s.with_seed(seed),
            None => s,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Profile each knob at fixed settings and write system files.
    Profile {
        #[command(flatten)]
        target: Target,
        /// Comma-separated settings (default: the preset's).
        #[arg(long, conflicts_with = "range")]
        settings: Option<String>,
        /// Settings as a:b:step.
        #[arg(long)]
        range: Option<String>,
        /// Samples per setting.
        #[arg(long)]
        reps: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize controller parameters for a knob system file.
    Synthesize {
        /// Knob system file holding samples.
        #[arg(long)]
        sys: PathBuf,
        /// Goal file supplying the knob metric's goal.
        #[arg(long, conflicts_with = "goal")]
        goals: Option<PathBuf>,
        #[arg(long)]
        goal: Option<f64>,
        /// Treat `--goal` as a hard constraint.
        #[arg(long, requires = "goal")]
        hard: bool,
        /// Where to write the result (default: overwrite `--sys`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario and emit a per-tick CSV trace.
    Run {
        #[command(flatten)]
        target: Target,
        /// smartconf, static:<value>, single-pole or no-virtual-goal.
        #[arg(long, default_value = "smartconf")]
        mode: String,
        #[arg(long)]
        ticks: Option<u64>,
        /// Trace destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every static setting in a range and report the best safe one.
    Sweep {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = DEFAULT_SWEEP_RANGE)]
        range: String,
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare modes across seeds.
    Compare {
        #[command(flatten)]
        target: Target,
        /// N (1..=N), a-b, or a comma list.
        #[arg(long, default_value = "50")]
        seeds: String,
        /// Comma-separated modes.
        #[arg(long = "mode", default_value = "smartconf,single-pole,no-virtual-goal")]
        modes: String,
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            config_io::parse_real(p.trim()).ok_or_else(|| Error::Usage(format!("bad setting '{p}'")))
        })
        .collect()
}

/// Write to `out`, or to stdout when absent.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => config_io::write_atomic(p, text)?,
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("stdout")))?,
    }
    Ok(())
}

fn summary_text(o: &RunOutcome) -> String {
    let s = &o.summary;
    let mut t = format!(
        "scenario={}\nmode={}\nseed={}\nticks={}\nviolations={}\nfirst_violation={}\nthroughput_cum={}\nmean_abs_error={}\n",
        o.scenario,
        o.mode,
        o.seed,
        s.ticks,
        s.violations,
        s.first_violation.map_or("none".to_string(), |t| t.to_string()),
        s.throughput_cum,
        s.mean_abs_error,
    );
    for (i, r) in o.reports.iter().enumerate() {
        t += &format!(
            "knob{}: alpha={} delta={} lambda={} pole={} virtual_goal={}\n",
            i + 1,
            r.alpha,
            r.delta,
            r.lambda,
            r.pole,
            r.virtual_goal
        );
    }
    t
}

fn cmd_profile(
    target: &Target,
    settings: Option<&str>,
    range: Option<&str>,
    reps: Option<u64>,
    out: &Path,
) -> Result<()> {
    let scenario = target.load()?;
    let settings = match (settings, range) {
        (Some(s), _) => Some(parse_list(s)?),
        (None, Some(r)) => Some(parse_range(r)?),
        _ => None,
    };
    let files = profile_sys_files(&scenario, settings.as_deref(), reps)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut global = GlobalSysFile {
        profiling_enabled: true,
        knobs: Vec::new(),
    };
    for f in &files {
        config_io::write_atomic(&knob_sys_path(out, &f.conf_name), &config_io::serialize_knob_sys(f))?;
        global.knobs.push(KnobEntry {
            conf_name: f.conf_name.clone(),
            metric: f.metric.clone(),
        });
        let syn = f.synthesized.expect("profiling synthesizes");
        println!(
            "{}: samples={} alpha={} delta={} lambda={} pole={} virtual_goal={}",
            f.conf_name,
            f.samples.len(),
            syn.alpha,
            syn.delta,
            syn.lambda,
            syn.pole,
            syn.virtual_goal
        );
    }
    config_io::write_atomic(&out.join(GLOBAL_SYS_NAME), &config_io::serialize_global_sys(&global))?;
    let goals = GoalFile {
        entries: vec![GoalEntry {
            metric: scenario.metric.clone(),
            goal: scenario.goal,
            hard: scenario.hard,
            super_hard: scenario.super_hard,
        }],
    };
    config_io::write_atomic(&out.join(GOAL_FILE_NAME), &config_io::serialize_goal_file(&goals))?;
    Ok(())
}

fn cmd_synthesize(
    sys: &Path,
    goals: Option<&Path>,
    goal: Option<f64>,
    hard: bool,
    out: Option<&Path>,
) -> Result<()> {
    if goals.is_none() && goal.is_none() {
        return Err(Error::Usage("one of --goals or --goal is required".into()));
    }
    let mut file = config_io::load_knob_sys(sys)?;
    let (goal, hard) = match (goals, goal) {
        (_, Some(g)) => (g, hard),
        (Some(path), None) => {
            let goals = config_io::load_goal_file(path)?;
            let e = goals.get(&file.metric).ok_or_else(|| {
                selftune_core::Error::Config(format!("{}: no goal for metric {}", path.display(), file.metric))
            })?;
            (e.goal, e.hard)
        }
        (None, None) => unreachable!("checked above"),
    };
    let r = synthesize_file(&mut file, goal, hard)?;
    config_io::write_atomic(out.unwrap_or(sys), &config_io::serialize_knob_sys(&file))?;
    println!(
        "alpha={} delta={} lambda={} pole={} virtual_goal={}",
        format_real(r.alpha),
        format_real(r.delta),
        format_real(r.lambda),
        format_real(r.pole),
        format_real(r.virtual_goal)
    );
    Ok(())
}

fn cmd_run(target: &Target, mode: &str, ticks: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mode: Mode = mode.parse()?;
    let scenario = target.load()?;
    let outcome = run(&scenario, mode, ticks)?;
    let summary = summary_text(&outcome);
    match out {
        Some(path) => {
            let f = File::create(path).map_err(io_err(path))?;
            write_trace(BufWriter::new(f), &outcome.trace)?;
            print!("{summary}");
        }
        None => {
            write_trace(io::stdout().lock(), &outcome.trace)?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn cmd_sweep(target: &Target, range: &str, ticks: Option<u64>, out: Option<&Path>) -> Result<()> {
    let values = parse_range(range)?;
    let scenario = target.load()?;
    let result = sweep(&scenario, &values, ticks)?;
    let mut text = String::from("value,violations,throughput_cum\n");
    for r in &result.rows {
        text += &format!("{},{},{}\n", r.value, r.violations, r.throughput_cum);
    }
    emit(out, &text)?;
    let best = match result.best_static {
        Some(b) => format!("best_static={} throughput_cum={}", b.value, b.throughput_cum),
        None => "best_static=none".to_string(),
    };
    if out.is_some() {
        println!("{best}");
    } else {
        eprintln!("{best}");
    }
    Ok(())
}

fn cmd_compare(target: &Target, seeds: &str, modes: &str, ticks: Option<u64>, out: Option<&Path>) -> Result<()> {
    let seeds = parse_seeds(seeds)?;
    let modes: Vec<Mode> = modes.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?;
    let scenario = target.load()?;
    let table = compare(&scenario, &seeds, &modes, ticks)?;
    emit(out, &table.to_csv())?;
    for a in &table.aggregates {
        let line = format!(
            "{}: violating_seeds={}/{} mean_throughput={}",
            a.mode, a.violating_seeds, a.seeds, a.mean_throughput
        );
        if out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile {
            target,
            settings,
            range,
            reps,
            out,
        } => cmd_profile(&target, settings.as_deref(), range.as_deref(), reps, &out),
        Command::Synthesize {
            sys,
            goals,
            goal,
            hard,
            out,
        } => cmd_synthesize(&sys, goals.as_deref(), goal, hard, out.as_deref()),
        Command::Run {
            target,
            mode,
            ticks,
            out,
        } => cmd_run(&target, &mode, ticks, out.as_deref()),
        Command::Sweep {
            target,
            range,
            ticks,
            out,
        } => cmd_sweep(&target, &range, ticks, out.as_deref()),
        Command::Compare {
            target,
            seeds,
            modes,
            ticks,
            out,
        } => cmd_compare(&target, &seeds, &modes, ticks, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("selftune: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
