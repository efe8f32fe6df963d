use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use ftm_node::owner::serve;
use ftm_node::{OwnerConfig, OwnerState};
use log::{error, info};

/// Data-owner server for federated trajectory matching.
#[derive(Parser, Debug)]
#[command(name = "ftm-owner", version)]
struct Args {
    /// Owner configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Build the grid index from the database, write it, and exit.
    #[arg(long)]
    build_index: bool,
    /// Override the configured database path.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Override the configured index path.
    #[arg(long)]
    index: Option<PathBuf>,
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let mut config = OwnerConfig::load(&args.config)?;
    if let Some(db) = args.db {
        config.db = db;
    }
    if let Some(index) = args.index {
        config.index = Some(index);
    }
    if args.build_index {
        if config.index.is_none() {
            return Err("--build-index needs an index path (config `index` or --index)".into());
        }
        let idx = OwnerState::build_and_persist(&config)?;
        info!(
            "wrote index with {} cells over {} trajectories",
            idx.grid_count(),
            idx.trajectory_count
        );
        return Ok(());
    }
    let state = OwnerState::from_config(&config)?;
    let listener = TcpListener::bind(config.listen)?;
    info!(
        "serving {} trajectories on {} (L={}, tau={})",
        state.db.len(),
        listener.local_addr()?,
        config.spec.cell_side,
        config.tau
    );
    serve(Arc::new(state), listener);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
