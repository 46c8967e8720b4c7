use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpcsgp::harness::grid::{config_hash, execute_to};
use dpcsgp::harness::{analyze, run_grid, theoretical_schedule, Config, ExperimentGrid, ScheduleInputs};
use dpcsgp::topology::estimate_constants;
use dpcsgp::{Error, Result};

#[derive(Parser)]
#[command(name = "dpcsgp", version, about = "Private compressed stochastic gradient push simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its CSV and metadata sidecar.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the experiment grid described by the config's [grid] section.
    Grid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the step size, horizon and noise level from the utility theorem.
    Schedule {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long = "J")]
        j: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        c2: f64,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long = "L")]
        l: f64,
        /// Clipping bound used for the noise level.
        #[arg(long = "G", default_value_t = 1.0)]
        g: f64,
    },
    /// Summarise a directory of run outputs.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the mixing constants and every admissibility check.
    Constants {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run_one(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = Config::load(config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let resolved = cfg.resolve()?;
    std::fs::create_dir_all(out)?;
    let stem = format!("run_seed{}_{}", cfg.run.seed, config_hash(&cfg));
    let (records, meta) = execute_to(out, &stem, &resolved)?;
    if let Some(last) = records.last() {
        println!(
            "t={} loss={} grad_norm_sq={} bits={} test_acc={}",
            last.t,
            last.loss_avg,
            last.grad_norm_sq_avg,
            last.bits_cum,
            last.test_acc.map_or("-".to_string(), |a| a.to_string())
        );
    }
    println!("wrote {}", out.join(format!("{stem}.csv")).display());
    if let Some(f) = meta.failure {
        return Err(runtime(format!("run failed: {f}")));
    }
    Ok(())
}

fn runtime(msg: String) -> Error {
    Error::Io(std::io::Error::other(msg))
}

fn constants(config: &Path) -> Result<()> {
    let cfg = Config::load(config)?;
    let resolved = cfg.resolve()?;
    let meta = &resolved.metadata;
    let k = estimate_constants(&resolved.engine.mixing, cfg.topology.horizon)?;
    println!("nodes            {}", meta.n);
    println!("edges            {}", resolved.engine.mixing.graph().edge_count());
    println!("phi              {:?}", k.phi);
    println!("lambda           {}", k.lambda);
    println!("C                {}", k.c);
    println!("beta             {}", k.beta);
    println!("gamma            {}", k.gamma);
    println!("omega^2          {}", meta.omega_sq);
    if let Some(w) = &meta.omega_check {
        println!(
            "omega check      {} (rho = {}, threshold = {}, ratio = {})",
            if w.ok { "ok" } else { "violated" },
            w.rho,
            w.threshold,
            w.ratio
        );
    }
    println!("sigma^2          {}", meta.sigma_sq);
    match &meta.budget_check {
        dpcsgp::privacy::BudgetCheck::Ok => println!("epsilon check    ok"),
        dpcsgp::privacy::BudgetCheck::Warning(w) => println!("epsilon check    warning: {w}"),
    }
    let s = theoretical_schedule(&ScheduleInputs {
        epsilon: cfg.privacy.epsilon,
        delta: cfg.privacy.delta,
        j: meta.j,
        n: meta.n,
        d: meta.d,
        c1: cfg.privacy.c1,
        c2: cfg.privacy.c2,
        clip_g: cfg.privacy.clip_g,
        smoothness: meta.smoothness,
    })?;
    println!(
        "J check          {} (J = {}, required {})",
        if s.j_condition { "ok" } else { "violated" },
        meta.j,
        s.j_required
    );
    println!("theory schedule  T = {}, eta = {}, sigma^2 = {}", s.t, s.eta, s.sigma_sq);
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, seed, out } => run_one(&config, seed, &out),
        Command::Grid { config } => {
            let cfg = Config::load(&config)?;
            let mut grid = ExperimentGrid::from_config(&cfg)?;
            if grid.out.is_relative() {
                grid.out = config.parent().unwrap_or(Path::new(".")).join(&grid.out);
            }
            let report = run_grid(&grid)?;
            println!("executed {} runs, skipped {} completed runs", report.executed, report.skipped);
            for r in &report.summary.rows {
                println!(
                    "{}: runs={} failed={} loss={:.6}±{:.6} acc={:.4} bits={}",
                    r.cell, r.runs, r.failed, r.final_loss_mean, r.final_loss_std, r.final_acc_mean, r.bits_cum_mean
                );
            }
            for f in &report.failed {
                eprintln!("failed: {f}");
            }
            println!("wrote {}", grid.out.join("summary.csv").display());
            Ok(())
        }
        Command::Schedule { epsilon, delta, j, n, d, c2, c1, l, g } => {
            let s =
                theoretical_schedule(&ScheduleInputs { epsilon, delta, j, n, d, c1, c2, clip_g: g, smoothness: l })?;
            println!("T={}", s.t);
            println!("eta={}", s.eta);
            println!("sigma_sq={}", s.sigma_sq);
            println!("J_required={}", s.j_required);
            println!("J_condition={}", s.j_condition);
            println!("epsilon_condition={}", s.epsilon_condition);
            Ok(())
        }
        Command::Analyze { input, out } => {
            let summary = analyze(&input)?;
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("summary");
            let curves = out.with_file_name(format!("{stem}_curves.csv"));
            summary.write(&out, &curves)?;
            println!("wrote {} ({} cells) and {}", out.display(), summary.rows.len(), curves.display());
            Ok(())
        }
        Command::Constants { config } => constants(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
