use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use kgloop_cli::api::{router, Service};
use kgloop_cli::commands::{self, Ctx, GraphSource};
use kgloop_cli::workspace::{load_config, Workspace};
use kgloop_core::closed_loop::Mode;

#[derive(Parser)]
#[command(name = "kgloop", version, about = "Closed-loop knowledge graph learning for depression detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// single configuration override, `key=value`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// working directory
    #[arg(long, default_value = "kgloop-work")]
    dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seed graph and corpus into the working directory
    Init {
        #[command(flatten)]
        common: Common,
        /// corpus file; the synthetic corpus when absent
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// graph snapshot
        #[arg(long, conflicts_with_all = ["entities", "triplets"])]
        graph: Option<PathBuf>,
        /// schema entity file, with --triplets
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long)]
        triplets: Option<PathBuf>,
        /// drop an existing loop state
        #[arg(long)]
        force: bool,
    },
    /// Seed the graph from period 0 and pretrain the embeddings
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        mode: Mode,
    },
    /// Score users with the current detector
    Detect {
        #[command(flatten)]
        common: Common,
        /// corpus file; the held-out users when absent
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Show conflicting evidence, optionally refining the embeddings
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        apply: bool,
    },
    /// Queue candidate triplets, optionally applying approved ones
    Expand {
        #[command(flatten)]
        common: Common,
        /// slice to mine; the last committed period when absent
        #[arg(long)]
        period: Option<u32>,
        #[arg(long)]
        apply: bool,
    },
    /// Run the remaining periods and export the report
    RunLoop {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        mode: Mode,
        /// report name; the mode name when absent
        #[arg(long)]
        run: Option<String>,
    },
    /// Entity importance weights
    Importance {
        #[command(flatten)]
        common: Common,
        /// one entity's trajectory over the periods
        #[arg(long)]
        entity: Option<String>,
    },
    /// Attention levels of one entity
    Attention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        entity: String,
    },
    /// Generate the synthetic corpus
    Synth {
        #[command(flatten)]
        common: Common,
        /// output file; the working directory's corpus when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the review API
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Export the committed state's report
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "latest")]
        run: String,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Init { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Detect { common, .. }
            | Command::Refine { common, .. }
            | Command::Expand { common, .. }
            | Command::RunLoop { common, .. }
            | Command::Importance { common, .. }
            | Command::Attention { common, .. }
            | Command::Synth { common, .. }
            | Command::Serve { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = cli.command.common();
    let ctx = Ctx {
        ws: Workspace::new(&common.dir),
        cfg: load_config(common.config.as_deref(), &common.overrides, common.seed)?,
    };
    let out = match &cli.command {
        Command::Init {
            corpus,
            graph,
            entities,
            triplets,
            force,
            ..
        } => {
            let source = GraphSource {
                snapshot: graph.as_deref(),
                entities: entities.as_deref(),
                triplets: triplets.as_deref(),
            };
            commands::init(&ctx, corpus.as_deref(), source, *force)?
        }
        Command::Pretrain { mode, .. } => commands::pretrain(&ctx, *mode)?,
        Command::Detect { corpus, .. } => commands::detect(&ctx, corpus.as_deref())?,
        Command::Refine { apply, .. } => commands::refine_cmd(&ctx, *apply)?,
        Command::Expand { period, apply, .. } => commands::expand(&ctx, *period, *apply)?,
        Command::RunLoop { mode, run, .. } => commands::run_loop(&ctx, *mode, run.as_deref())?,
        Command::Importance { entity, .. } => commands::importance(&ctx, entity.as_deref())?,
        Command::Attention { entity, .. } => commands::attention(&ctx, entity)?,
        Command::Synth { out, .. } => commands::synth(&ctx, out.as_deref())?,
        Command::Report { run, .. } => commands::report(&ctx, run)?,
        Command::Serve { addr, .. } => return serve(ctx.ws, *addr),
    };
    print!("{out}");
    Ok(())
}

#[tokio::main]
async fn serve(ws: Workspace, addr: SocketAddr) -> Result<()> {
    let app = router(Arc::new(Service::open(ws)?));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
