use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lindisc::harness::{convergence_study, run_scenario, write_outputs, ConfigError, ScenarioConfig, Scheme};
use lindisc::verification::{run_suite, Suite};
use lindisc::{ChartPoint, Error};

const EXIT_NUMERIC: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "lindisc", version, about = "Feedback-linearizable discretizations of the sine example")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scheme and write a CSV.
    Simulate(Common),
    /// Run all schemes over a list of step sizes and tabulate error decades.
    Convergence(Common),
    /// Run numerical self-checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Default)]
struct Common {
    /// key=value file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    h: Option<String>,
    /// Comma-separated step sizes.
    #[arg(long = "h-list")]
    h_list: Option<String>,
    #[arg(long = "t-end")]
    t_end: Option<String>,
    /// Comma-separated initial state.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Comma-separated feedback gain.
    #[arg(long, allow_hyphen_values = true)]
    gain: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<String>,
    /// held or continuous
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        let overrides = [
            ("scheme", &self.scheme),
            ("h", &self.h),
            ("h_list", &self.h_list),
            ("t_end", &self.t_end),
            ("x0", &self.x0),
            ("gain", &self.gain),
            ("a", &self.a),
            ("baseline", &self.baseline),
            ("tol", &self.tol),
            ("seed", &self.seed),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("lindisc: {msg}");
    ExitCode::from(code)
}

fn error_code(e: &Error) -> u8 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_CONFIG
    }
}

fn simulate(cfg: &ScenarioConfig) -> ExitCode {
    let run = match run_scenario(cfg, cfg.scheme, cfg.h) {
        Ok(r) => r,
        Err(e) => return fail(error_code(&e), e),
    };
    match &cfg.out {
        Some(path) => match write_outputs(&run, path) {
            Ok(files) => {
                for f in files {
                    eprintln!("wrote {}", f.display());
                }
                println!("{}", run.summary());
            }
            Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", path.display())),
        },
        None => {
            print!("{}", run.to_csv());
            eprintln!("{}", run.summary());
        }
    }
    if run.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    }
}

fn convergence(cfg: &ScenarioConfig) -> ExitCode {
    let study = match convergence_study(cfg, &Scheme::ALL, &cfg.h_list) {
        Ok(s) => s,
        Err(e) => return fail(error_code(&e), e),
    };
    if let Some(dir) = &cfg.out {
        for run in &study.runs {
            let path = dir.join(format!("{}_h{:e}.csv", run.scheme, run.h));
            if let Err(e) = write_outputs(run, &path) {
                return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
            }
        }
    }
    print!("{}", study.render());
    if study.runs.iter().all(|r| r.succeeded()) && study.runs.len() == Scheme::ALL.len() * cfg.h_list.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    }
}

fn verify(cfg: &ScenarioConfig, suite: &str) -> ExitCode {
    let suite: Suite = match suite.parse() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let sys = match cfg.system() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let x0 = match ChartPoint::new(cfg.x0.clone()) {
        Ok(x) => x,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let checks = run_suite(suite, &sys, &cfg.gain, &x0, cfg.seed);
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("summary checks={} failed={}", checks.len(), failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let (common, suite) = match &cli.command {
        Command::Simulate(c) | Command::Convergence(c) => (c, None),
        Command::Verify { suite, common } => (common, Some(suite.as_str())),
    };
    let cfg = match common.resolve() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match (&cli.command, suite) {
        (Command::Simulate(_), _) => simulate(&cfg),
        (Command::Convergence(_), _) => convergence(&cfg),
        (_, Some(s)) => verify(&cfg, s),
        _ => unreachable!(),
    }
}
