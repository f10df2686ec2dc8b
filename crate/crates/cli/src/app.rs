//! Argument parsing and command dispatch. Exit codes: 0 success, 1 runtime
//! failure (artifacts written so far are kept), 2 invalid configuration or
//! arguments (nothing written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::experiments::{self, Outcome, VectorKind};
use crate::CliError;

pub const OUT_ENV: &str = "DNO_LAB_OUT";
const DEFAULT_OUT_ROOT: &str = "dno-lab-out";

#[derive(Debug, Parser)]
#[command(name = "dno-lab", version, about = "Direct noise optimization experiments on toy diffusion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment named in the config (dno, ode_vs_sde, reward_hacking, estimators).
    Run(Common),
    /// Optimize each seed and classify the final noise as Type-I/II/III or not stationary.
    Stationarity(Common),
    /// Regularized runs over the config's (k, b, gamma) grid.
    Sweep(Common),
    /// Evaluate the typicality indicator P(z) on synthetic or supplied vectors.
    Pz(PzArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Base seed (overrides seeds.base).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds (overrides seeds.count).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Output directory. Defaults to output.dir, then $DNO_LAB_OUT/<name>, then dno-lab-out/<name>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PzArgs {
    /// Vector length.
    #[arg(long, default_value_t = 16384)]
    pub n: usize,
    /// Subvector length.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Number of permutations.
    #[arg(long, default_value_t = 100)]
    pub q: usize,
    /// Synthetic families to evaluate (repeatable).
    #[arg(long, value_enum, default_values_t = [VectorKind::Gaussian, VectorKind::Zeros, VectorKind::Repeated])]
    pub kind: Vec<VectorKind>,
    /// Vectors per family.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// JSON file holding an array of vectors to evaluate instead of synthetic ones.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Output directory for a named experiment.
pub fn resolve_out_dir(flag: Option<&Path>, config_dir: Option<&Path>, name: &str) -> PathBuf {
    if let Some(dir) = flag.or(config_dir) {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(name),
        _ => PathBuf::from(DEFAULT_OUT_ROOT).join(name),
    }
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    match jobs {
        None => f(),
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
            pool.install(f)
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds.base = seed;
    }
    if let Some(count) = common.seeds {
        cfg.seeds.count = count;
    }
    Ok(cfg)
}

fn config_command(
    common: &Common,
    driver: fn(&ExperimentConfig, &Path) -> Result<Outcome, CliError>,
) -> Result<Outcome, CliError> {
    let cfg = load(common)?;
    let dir = resolve_out_dir(common.out.as_deref(), cfg.output.dir.as_deref(), &cfg.name());
    with_jobs(common.jobs, || driver(&cfg, &dir))
}

fn read_input_vectors(path: &Path) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let vectors: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: expected a JSON array of numeric arrays: {e}", path.display())))?;
    if vectors.is_empty() {
        return Err(CliError::Config(format!("{}: no vectors", path.display())));
    }
    Ok(vectors.into_iter().map(|v| ("input".to_string(), v)).collect())
}

fn pz_command(args: &PzArgs) -> Result<Outcome, CliError> {
    let vectors = match &args.input {
        Some(path) => read_input_vectors(path)?,
        None => {
            let mut v = Vec::new();
            for &kind in &args.kind {
                for trial in 0..args.trials {
                    v.push((
                        kind.name().to_string(),
                        experiments::synthetic_vector(kind, args.n, args.seed, trial as u64)?,
                    ));
                }
            }
            if v.is_empty() {
                return Err(CliError::Config("nothing to evaluate: --trials is 0".into()));
            }
            v
        }
    };
    let n = vectors[0].1.len();
    dno_core::probreg::Factorization::new(n, args.k)?;
    if args.q == 0 {
        return Err(CliError::Config("--q must be positive".into()));
    }
    let dir = resolve_out_dir(args.out.as_deref(), None, "pz");
    with_jobs(args.jobs, || {
        let rows = experiments::evaluate_pz(&vectors, args.k, args.q, args.seed)?;
        let mut kinds: Vec<&str> = Vec::new();
        for r in &rows {
            if !kinds.contains(&r.kind.as_str()) {
                kinds.push(&r.kind);
            }
        }
        for kind in kinds {
            let mut p: Vec<f64> = rows.iter().filter(|r| r.kind == kind).map(|r| r.log_p_z.exp()).collect();
            p.sort_by(f64::total_cmp);
            println!("{kind}: median P(z) = {:e} over {} vectors", p[p.len() / 2], p.len());
        }
        experiments::write_pz(&dir, &rows, n, args.k, args.q)
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(c) => config_command(c, experiments::run_experiment),
        Command::Stationarity(c) => config_command(c, experiments::run_stationarity),
        Command::Sweep(c) => config_command(c, experiments::run_sweep),
        Command::Pz(a) => pz_command(a),
    };
    match result {
        Ok(outcome) if outcome.failures.is_empty() => {
            eprintln!("wrote {}", outcome.dir.display());
            0
        }
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("run failed: {f}");
            }
            eprintln!("wrote partial results to {}", outcome.dir.display());
            1
        }
        Err(e) => {
            eprintln!("dno-lab: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dir_precedence() {
        let flag = PathBuf::from("a");
        let cfg = PathBuf::from("b");
        assert_eq!(resolve_out_dir(Some(&flag), Some(&cfg), "x"), flag);
        assert_eq!(resolve_out_dir(None, Some(&cfg), "x"), cfg);
    }

    #[test]
    fn bad_arguments_exit_with_two() {
        assert_eq!(main_with_args(["dno-lab", "run"]), 2);
        assert_eq!(main_with_args(["dno-lab", "frobnicate"]), 2);
        assert_eq!(main_with_args(["dno-lab", "run", "--config", "/nonexistent/config.json"]), 2);
    }
}
