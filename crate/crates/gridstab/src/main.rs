use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use gridstab::commands::{self, EpllArgs, GridAxis, SimulateArgs, SweepArgs, EXIT_ERROR};
use gridstab::config::{LoadConversion, QConventionConfig};
use gridstab::presets;
use gridstab::ScenarioConfig;

#[derive(Parser)]
#[command(name = "gridstab", version, about = "Stability analysis of droop-controlled inverter networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues of the linearized model at the operating point
    Eigs {
        #[command(flatten)]
        common: Common,
    },
    /// Stability margin over a grid of droop gains
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-5)]
        kp_min: f64,
        #[arg(long, default_value_t = 1e-3)]
        kp_max: f64,
        #[arg(long, default_value_t = 10)]
        kp_steps: usize,
        #[arg(long, default_value_t = 1e-5)]
        kv_min: f64,
        #[arg(long, default_value_t = 1e-3)]
        kv_max: f64,
        #[arg(long, default_value_t = 10)]
        kv_steps: usize,
        /// Filter poles in rad/s, comma separated; defaults to the configured value
        #[arg(long, value_delimiter = ',')]
        wf: Vec<f64>,
        /// Keep the base operating point instead of re-solving per cell
        #[arg(long)]
        freeze: bool,
        /// Also report the largest kp whose margin is at most this value
        #[arg(long, allow_hyphen_values = true)]
        target_margin: Option<f64>,
    },
    /// Time-domain simulation of the configured step events
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Track the synthesized voltage of this bus (1-based) with the E-PLL
        #[arg(long)]
        epll_bus: Option<usize>,
    },
    /// E-PLL response to a synthetic frequency and amplitude step
    Epll {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.5)]
        step_time: f64,
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        freq_step_hz: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        amp_step: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        initial_offset_hz: f64,
    },
    /// Consistency checks between the linear model and the simulator
    Verify {
        #[command(flatten)]
        common: Common,
        /// Assemble the linear model under the opposite reactive-power sign
        #[arg(long)]
        flip_convention: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Case1,
    Case2,
}

#[derive(Clone, Copy, ValueEnum)]
enum QConv {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum LoadConv {
    ThreePhaseTotal,
    PerPhase,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    q_convention: Option<QConv>,
    #[arg(long, value_enum)]
    load_conversion: Option<LoadConv>,
    #[arg(long)]
    kp: Option<f64>,
    #[arg(long)]
    kv: Option<f64>,
    #[arg(long)]
    omega_f: Option<f64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => ScenarioConfig::load(path)?,
            (None, Some(Preset::Case1)) => presets::case1(),
            (None, Some(Preset::Case2)) => presets::case2(),
            (None, None) => anyhow::bail!("one of --config or --preset is required"),
        };
        if let Some(q) = self.q_convention {
            cfg.options.q_convention = match q {
                QConv::A => QConventionConfig::A,
                QConv::B => QConventionConfig::B,
            };
        }
        if let Some(l) = self.load_conversion {
            cfg.options.load_conversion = match l {
                LoadConv::ThreePhaseTotal => LoadConversion::ThreePhaseTotal,
                LoadConv::PerPhase => LoadConversion::PerPhase,
            };
        }
        cfg.override_gains(self.kp, self.kv, self.omega_f);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GRIDSTAB_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("GRIDSTAB_THREADS={v:?} is not a count"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<commands::Outcome> {
    configure_threads()?;
    match cli.command {
        Command::Eigs { common } => commands::eigs(&common.load()?, &common.out),
        Command::Sweep { common, kp_min, kp_max, kp_steps, kv_min, kv_max, kv_steps, wf, freeze, target_margin } => {
            let cfg = common.load()?;
            let omega_f = if wf.is_empty() { vec![cfg.inverters[0].omega_f] } else { wf };
            let args = SweepArgs {
                kp: GridAxis { min: kp_min, max: kp_max, steps: kp_steps },
                kv: GridAxis { min: kv_min, max: kv_max, steps: kv_steps },
                omega_f,
                freeze,
                target_margin,
            };
            commands::sweep(&cfg, &args, &common.out)
        }
        Command::Simulate { common, duration, dt, epll_bus } => {
            let mut cfg = common.load()?;
            cfg.scenario.duration = duration.unwrap_or(cfg.scenario.duration);
            cfg.scenario.dt = dt.unwrap_or(cfg.scenario.dt);
            cfg.validate()?;
            commands::simulate(&cfg, &SimulateArgs { epll_bus }, &common.out)
        }
        Command::Epll { common, duration, step_time, freq_step_hz, amp_step, initial_offset_hz } => {
            let args = EpllArgs { duration, step_time, freq_step_hz, amp_step, initial_offset_hz };
            commands::epll(&common.load()?, &args, &common.out)
        }
        Command::Verify { common, flip_convention } => commands::verify(&common.load()?, flip_convention, &common.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            match serde_json::to_string_pretty(&outcome.report) {
                Ok(s) => println!("{s}"),
                Err(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
