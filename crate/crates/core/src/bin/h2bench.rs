use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use h2krylov::bench::{
    append_csv, build_operator, cmd_build, cmd_matmat, cmd_matvec, cmd_solve, write_csv, BenchError, CsvRecord,
    Geometry, KernelKind, PrecondKind, RunConfig, SolverKind, DEFAULT_MAX_N,
};

/// H²-matrix benchmarks on sphere point clouds. Comma-separated lists sweep a parameter.
#[derive(Parser)]
#[command(name = "h2bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the operator and report its structure.
    Build(Opts),
    /// Time single matrix-vector products over (n, threads).
    MatvecBench(Opts),
    /// Time blocked products against m single products over (n, threads, m).
    MatmatBench(Opts),
    /// Solve seeded systems A X = B and report iterations, errors and timings.
    Solve(Opts),
}

#[derive(Args)]
struct Opts {
    #[arg(long, value_delimiter = ',', default_value = "512")]
    n: Vec<usize>,
    #[arg(long, value_enum, default_value = "sphere")]
    geometry: Geometry,
    #[arg(long, value_enum, default_value = "laplace")]
    kernel: KernelKind,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    order: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    #[arg(long, default_value_t = 32)]
    leaf_size: usize,
    /// Right-hand sides; matmat-bench defaults to 1,10,50,100.
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long, default_value_t = 1e-6)]
    eps_slv: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    tau: Vec<f64>,
    #[arg(long, value_enum, default_value = "pcg")]
    solver: SolverKind,
    #[arg(long, value_enum, default_value = "ic")]
    precond: PrecondKind,
    #[arg(long, default_value_t = 30)]
    restart: usize,
    /// Worker threads; all cores when unset.
    #[arg(long, value_delimiter = ',', env = "H2_THREADS")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Append rows to this file as well as printing them.
    #[arg(long, visible_alias = "out")]
    csv: Option<PathBuf>,
    /// Cross-check results against dense oracles.
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_N)]
    max_n: usize,
}

impl Opts {
    /// Every sweep point, n outermost.
    fn configs(&self, default_m: &[usize]) -> Vec<RunConfig> {
        let ms = if self.m.is_empty() { default_m.to_vec() } else { self.m.clone() };
        let threads = if self.threads.is_empty() { vec![0] } else { self.threads.clone() };
        let mut out = Vec::new();
        for &n in &self.n {
            for &order in &self.order {
                for &t in &threads {
                    for &m in &ms {
                        for &tau in &self.tau {
                            out.push(RunConfig {
                                n,
                                geometry: self.geometry,
                                kernel: self.kernel,
                                kappa: self.kappa,
                                order,
                                eta: self.eta,
                                leaf_size: self.leaf_size,
                                m,
                                eps_slv: self.eps_slv,
                                tau,
                                solver: self.solver,
                                precond: self.precond,
                                restart: self.restart,
                                threads: t,
                                seed: self.seed,
                                verify: self.verify,
                                max_n: self.max_n,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn emit<R: CsvRecord>(rows: &[R], path: Option<&PathBuf>) -> Result<(), BenchError> {
    write_csv(io::stdout().lock(), rows)?;
    if let Some(p) = path {
        append_csv(p, rows)?;
    }
    Ok(())
}

/// Runs `f` on each config, rebuilding the operator only when construction
/// parameters change.
fn sweep<R>(
    configs: &[RunConfig],
    mut f: impl FnMut(&h2krylov::bench::Built, &RunConfig) -> Result<R, BenchError>,
) -> Result<Vec<R>, BenchError> {
    let key = |c: &RunConfig| (c.n, c.order);
    let mut rows = Vec::new();
    let mut current: Option<((usize, usize), h2krylov::bench::Built)> = None;
    for cfg in configs {
        if current.as_ref().map(|(k, _)| *k) != Some(key(cfg)) {
            current = Some((key(cfg), build_operator(cfg)?));
        }
        rows.push(f(&current.as_ref().unwrap().1, cfg)?);
    }
    Ok(rows)
}

fn run(cli: Cli) -> Result<ExitCode, BenchError> {
    match cli.command {
        Command::Build(o) => {
            let configs = o.configs(&[1]);
            configs.iter().try_for_each(RunConfig::validate)?;
            let rows = configs
                .iter()
                .filter(|c| c.threads == configs[0].threads && c.tau == configs[0].tau)
                .map(cmd_build)
                .collect::<Result<Vec<_>, _>>()?;
            emit(&rows, o.csv.as_ref())?;
        }
        Command::MatvecBench(o) => {
            let configs = o.configs(&[1]);
            configs.iter().try_for_each(RunConfig::validate)?;
            let configs: Vec<_> = configs.into_iter().filter(|c| c.tau == o.tau[0]).collect();
            let rows = sweep(&configs, cmd_matvec)?;
            emit(&rows, o.csv.as_ref())?;
        }
        Command::MatmatBench(o) => {
            let configs = o.configs(&[1, 10, 50, 100]);
            configs.iter().try_for_each(RunConfig::validate)?;
            let configs: Vec<_> = configs.into_iter().filter(|c| c.tau == o.tau[0]).collect();
            let rows = sweep(&configs, cmd_matmat)?;
            emit(&rows, o.csv.as_ref())?;
        }
        Command::Solve(o) => {
            let configs = o.configs(&[1]);
            configs.iter().try_for_each(RunConfig::validate_solve)?;
            let rows = sweep(&configs, cmd_solve)?;
            emit(&rows, o.csv.as_ref())?;
            if let Some(r) = rows.iter().find(|r| !r.all_converged()) {
                eprintln!("h2bench: {} of {} systems converged (n = {}, tau = {})", r.converged_count, r.m, r.n, r.tau);
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("h2bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
