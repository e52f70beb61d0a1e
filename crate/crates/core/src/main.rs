use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use meshwalk::cli::presets::preset;
use meshwalk::cli::{run_command, Command, RunConfig};
use meshwalk::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "meshwalk", version, about = "Noisy quantum walks on a two-band mesh lattice")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Run configuration (TOML, or a manifest.json from an earlier run).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Named configuration: fig2a, fig2b, fig2c, fig3a, fig3b, fig3c, fig4, supp-return.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Master seed of the noise streams.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    realizations: Option<usize>,

    /// Number of recorded time points (a period is two steps).
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Output directory; defaults to `$MESHWALK_OUT/<config>/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Root for default output directories.
    #[arg(long = "out-root", env = "MESHWALK_OUT", default_value = "output", hide = true)]
    out_root: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Band intensity from the 2D transform and per-momentum linewidths.
    Bands,
    /// Trajectory ensemble: mean amplitudes and intensities.
    Evolve,
    /// Averaged density-matrix propagation with recorded observables.
    Master,
    /// Edge states and their return probabilities.
    Edge,
    /// Decoherence-free momenta and noise-matrix residuals over k.
    Dfs,
    /// Built-in consistency checks; exit code 2 on failure.
    Verify,
    /// Grid over noise strength, schedule and coupling angle.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Bands => Command::Bands,
            Cmd::Evolve => Command::Evolve,
            Cmd::Master => Command::Master,
            Cmd::Edge => Command::Edge,
            Cmd::Dfs => Command::Dfs,
            Cmd::Verify => Command::Verify,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

fn load(cli: &Cli, cmd: Command) -> Result<(RunConfig, String)> {
    let (mut cfg, name) = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
            (RunConfig::load(path)?, stem)
        }
        (None, Some(p)) => (preset(p)?, p.clone()),
        // These two only read the protocol angles and the seed.
        (None, None) if matches!(cmd, Command::Verify | Command::Dfs) => (preset("fig4")?, "default".into()),
        (None, None) => return Err(Error::Config(format!("`{cmd}` needs --config or --preset"))),
    };
    if let Some(s) = cli.seed {
        cfg.noise.seed = s;
    }
    if let Some(r) = cli.realizations {
        cfg.run.realizations = r;
    }
    if let Some(s) = cli.steps {
        cfg.run.steps = s;
    }
    cfg.validate()?;
    Ok((cfg, name))
}

fn run(cli: &Cli) -> Result<()> {
    let cmd = Command::from(cli.command);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let (cfg, name) = load(cli, cmd)?;
    let out = match (&cli.out, &cfg.run.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => cli.out_root.join(&name).join(cmd.name()),
    };
    log::info!("{cmd}: writing to {}", out.display());
    let result = run_command(cmd, &cfg, &out);
    match &result {
        Ok(o) => o.messages.iter().for_each(|m| println!("{m}")),
        Err(Error::Verification(_)) => {
            // The report is on disk; show it before failing.
            if let Ok(text) = std::fs::read_to_string(out.join("verify.csv")) {
                for line in text.lines().skip(1) {
                    let f: Vec<&str> = line.split(',').collect();
                    println!("{} {}", f.get(1).unwrap_or(&""), f.first().unwrap_or(&""));
                }
            }
        }
        Err(_) => {}
    }
    result.map(|o| println!("wrote {} files to {}", o.files.len(), out.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
