//! `qmoney`: mint coins, run the bank, verify, attack, analyse games and check bounds.
//!
//! Exit codes: 0 success or valid, 1 counterfeit, violation or I/O failure,
//! 2 usage error, 3 protocol abort.

use std::fs;
use std::io::{IsTerminal as _, Write as _};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use qmoney_client::TcpTransport;
use qmoney_core::adversary::{run_attack_experiment, AttackConfig, AttackKind, BeliefUpdate, CSV_HEADER};
use qmoney_core::bounds::{run_chernoff_checks, run_mut_checks, run_set_checks, CheckSummary};
use qmoney_core::games::{game_gh, physical_value_search, product_game_trial, selective_value};
use qmoney_core::money::{BankDb, Coin, MoneyError, VerParams};
use qmoney_core::montecarlo::estimate;
use qmoney_core::protocol::{run_ver, HolderError, HonestHolder, InProcessTransport, Transport, VerError, DEFAULT_RETRY_CAP};
use qmoney_core::seed::derive_rng;
use qmoney_server::ServerConfig;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "qmoney", version, about = "Quantum money simulator with classical verification")]
struct Cli {
    /// Master seed; every run is a deterministic function of it.
    #[arg(long, env = "QM_SEED", default_value_t = 0, global = true)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mint one coin, appending its record to the bank database.
    Mint {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 6)]
        t: usize,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the bank's verification service.
    Serve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 6)]
        t: usize,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: SocketAddr,
    },
    /// Verify a coin against a local database or a remote bank.
    #[command(group(ArgGroup::new("bank").required(true).args(["db", "connect"])))]
    Verify {
        #[arg(long)]
        coin: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        connect: Option<String>,
        #[arg(long, default_value_t = 6)]
        t: usize,
        /// Defaults to the coin path with a `.transcript` suffix.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RETRY_CAP)]
        retry_cap: usize,
    },
    /// Run a counterfeiting experiment and print a CSV report.
    Attack {
        #[arg(long)]
        strategy: AttackKind,
        #[arg(long, default_value_t = 24)]
        k: usize,
        #[arg(long, default_value_t = 6)]
        t: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Auxiliary sessions for the adaptive attack; repeat for several rows.
        #[arg(long, default_values_t = [0])]
        budget: Vec<usize>,
        #[arg(long, value_enum, default_value_t = UpdateArg::EqualBlame)]
        update: UpdateArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyse the double-answer retrieval game.
    #[command(group(ArgGroup::new("what").required(true).multiple(true).args(["selective", "physical", "product"])))]
    Game {
        #[arg(long)]
        selective: bool,
        #[arg(long)]
        physical: bool,
        #[arg(long)]
        product: bool,
        #[arg(long, default_value_t = 64)]
        restarts: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
    },
    /// Randomized checks of the auxiliary lemmas and tail bounds.
    Bounds {
        #[arg(long, value_enum)]
        check: Vec<CheckArg>,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Samples per grid point for the tail checks.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateArg {
    EqualBlame,
    Marginal,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    Sets,
    Mutinfo,
    Chernoff,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("protocol abort: {0}")]
    Abort(String),
    #[error(transparent)]
    Failure(#[from] anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Abort(_) => 3,
            CliError::Failure(_) => 1,
        }
    }
}

fn params(k: usize, t: usize) -> Result<VerParams, CliError> {
    VerParams::new(k, t).map_err(|e| CliError::Usage(e.to_string()))
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_db(path: &Path, t: usize) -> Result<BankDb, CliError> {
    let text = read(path)?;
    BankDb::from_text_infer_k(&text, t).map_err(|e| match e {
        MoneyError::InvalidParams { .. } => CliError::Usage(e.to_string()),
        other => CliError::Failure(anyhow::Error::new(other).context(format!("parsing {}", path.display()))),
    })
}

fn cmd_mint(seed: u64, k: usize, t: usize, db_path: &Path, out: &Path) -> Result<ExitCode, CliError> {
    let p = params(k, t)?;
    let mut db = match fs::read_to_string(db_path) {
        Ok(text) if !text.trim().is_empty() => {
            BankDb::from_text(&text, p).with_context(|| format!("parsing {}", db_path.display()))?
        }
        Ok(_) => BankDb::new(p),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BankDb::new(p),
        Err(e) => return Err(anyhow::Error::new(e).context(format!("reading {}", db_path.display())).into()),
    };
    let mut rng = derive_rng(seed, "mint", db.len() as u64);
    let coin = db.mint(&mut rng).context("minting")?;
    write(out, &coin.to_text())?;
    write(db_path, &db.to_text())?;
    println!("minted coin {}", coin.id);
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(seed: u64, db_path: &Path, t: usize, listen: SocketAddr) -> Result<ExitCode, CliError> {
    let db = load_db(db_path, t)?;
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen).await.with_context(|| format!("binding {listen}"))?;
        tracing::info!(addr = %listener.local_addr()?, coins = db.len(), "serving");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        qmoney_server::serve_until(listener, std::sync::Arc::new(db), ServerConfig::new(seed), shutdown).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    seed: u64,
    coin_path: &Path,
    db: Option<&Path>,
    connect: Option<&str>,
    t: usize,
    transcript: Option<&Path>,
    retry_cap: usize,
) -> Result<ExitCode, CliError> {
    let mut coin = Coin::from_text(&read(coin_path)?).with_context(|| format!("parsing {}", coin_path.display()))?;
    let local_db;
    let mut transport: Box<dyn Transport + '_> = match (db, connect) {
        (Some(path), None) => {
            local_db = load_db(path, t)?;
            Box::new(InProcessTransport::new(&local_db, seed))
        }
        (None, Some(addr)) => Box::new(TcpTransport::connect(addr).with_context(|| format!("connecting to {addr}"))?),
        _ => return Err(CliError::Usage("exactly one of --db and --connect is required".into())),
    };
    let mut rng = derive_rng(seed, "holder", 0);
    let result = run_ver(transport.as_mut(), &mut HonestHolder::new(&mut coin), &mut rng, retry_cap);
    // registers collapse and usage marks change even when verification fails
    write(coin_path, &coin.to_text())?;
    let outcome = match result {
        Ok(o) => o,
        Err(VerError::Transport(e)) => return Err(CliError::Abort(e.to_string())),
        Err(e @ (VerError::Unexpected(_) | VerError::Holder(HolderError::Malformed(_)))) => {
            return Err(CliError::Abort(e.to_string()))
        }
        Err(e) => return Err(anyhow::Error::new(e).into()),
    };
    let transcript_path = transcript.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = coin_path.as_os_str().to_owned();
        p.push(".transcript");
        PathBuf::from(p)
    });
    write(&transcript_path, &outcome.transcript.to_text())?;
    if outcome.valid {
        println!("valid");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("counterfeit");
        Ok(ExitCode::from(1))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    seed: u64,
    kind: AttackKind,
    k: usize,
    t: usize,
    trials: u64,
    budgets: &[usize],
    update: UpdateArg,
    out: Option<&Path>,
) -> Result<ExitCode, CliError> {
    let p = params(k, t)?;
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let budgets: &[usize] = if kind == AttackKind::AdaptiveReplay { budgets } else { &[0] };
    let mut csv = format!("{CSV_HEADER}\n");
    for &budget in budgets {
        let mut cfg = AttackConfig::new(kind, p, budget);
        cfg.update = match update {
            UpdateArg::EqualBlame => BeliefUpdate::EqualBlame,
            UpdateArg::Marginal => BeliefUpdate::Marginal,
        };
        csv.push_str(&run_attack_experiment(&cfg, trials, seed).csv_row());
        csv.push('\n');
    }
    match out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_game(seed: u64, selective: bool, physical: bool, product: bool, restarts: usize, k: usize, trials: u64) -> Result<ExitCode, CliError> {
    if restarts == 0 {
        return Err(CliError::Usage("--restarts must be at least 1".into()));
    }
    let game = game_gh();
    if selective {
        println!("{:.9}", selective_value(&game));
    }
    if physical || product {
        let (value, strat) = physical_value_search(&game, restarts, &mut derive_rng(seed, "game/physical", 0));
        if physical {
            println!("physical {value:.12}");
            for (i, v) in strat.basis.vectors().iter().enumerate() {
                let amps: Vec<String> = v.amplitudes().iter().map(|c| format!("{:+.9}{:+.9}i", c.re, c.im)).collect();
                println!("outcome {i} answer {:?} vector [{}]", qmoney_core::games::DoubleAnswer::from_index(strat.assignment[i]), amps.join(", "));
            }
        }
        if product {
            if k == 0 || trials == 0 {
                return Err(CliError::Usage("--k and --trials must be at least 1".into()));
            }
            let est = estimate(trials, seed, "game/product", |rng, _| product_game_trial(k, &strat, rng));
            let bound = 0.75f64.powi(k as i32);
            println!("product k={k} trials={trials} rate={:.9} stderr={:.9} bound={bound:.9}", est.rate(), est.stderr());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report(name: &str, summary: &CheckSummary) -> bool {
    println!("{name}: {} instances, {} violations", summary.instances, summary.violations.len());
    for v in &summary.violations {
        println!("  violation {v}");
    }
    summary.passed()
}

fn cmd_bounds(seed: u64, checks: &[CheckArg], trials: u64, samples: u64) -> Result<ExitCode, CliError> {
    let all = [CheckArg::Sets, CheckArg::Mutinfo, CheckArg::Chernoff];
    let checks = if checks.is_empty() { &all[..] } else { checks };
    let mut ok = true;
    for check in checks {
        ok &= match check {
            CheckArg::Sets => report("sets", &run_set_checks(trials, seed)),
            CheckArg::Mutinfo => report("mutinfo", &run_mut_checks(trials, seed)),
            CheckArg::Chernoff => {
                if samples == 0 {
                    return Err(CliError::Usage("--samples must be at least 1".into()));
                }
                let rows = run_chernoff_checks(samples, seed);
                let bad: Vec<_> = rows.iter().filter(|r| !r.holds()).collect();
                println!("chernoff: {} grid points, {} violations", rows.len(), bad.len());
                for r in &rows {
                    println!("  {} {r}", if r.holds() { "ok" } else { "VIOLATION" });
                }
                bad.is_empty()
            }
        };
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Mint { k, t, db, out } => cmd_mint(seed, k, t, &db, &out),
        Command::Serve { db, t, listen } => cmd_serve(seed, &db, t, listen),
        Command::Verify { coin, db, connect, t, transcript, retry_cap } => {
            cmd_verify(seed, &coin, db.as_deref(), connect.as_deref(), t, transcript.as_deref(), retry_cap)
        }
        Command::Attack { strategy, k, t, trials, budget, update, out } => {
            cmd_attack(seed, strategy, k, t, trials, &budget, update, out.as_deref())
        }
        Command::Game { selective, physical, product, restarts, k, trials } => {
            cmd_game(seed, selective, physical, product, restarts, k, trials)
        }
        Command::Bounds { check, trials, samples } => cmd_bounds(seed, &check, trials, samples),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_target(false)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}
