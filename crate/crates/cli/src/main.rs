use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rest_kg::ErrorCategory;

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "rest", version, about = "Edge-wise message passing for inductive relation prediction")]
struct Cli {
    /// Worker threads; 1 is the reference deterministic mode.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config entry, e.g. `--set dim=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write the best checkpoint.
    Train(ConfigArgs),
    /// Filtered ranking evaluation on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "model")]
        scorer: commands::ScorerKind,
    },
    /// Check the semiring recursion against brute-force walk oracles.
    Verify {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        max_nodes: usize,
        #[arg(long, default_value_t = 20)]
        max_edges: usize,
        #[arg(long, default_value_t = 4)]
        max_relations: usize,
        /// Message-passing layers.
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score candidate rule bodies with a trained checkpoint.
    Rulescore {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Head relation name; every base relation when omitted.
        #[arg(long)]
        head: Option<String>,
        #[arg(long, default_value_t = 3)]
        max_body_len: usize,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
    /// Time subgraph extraction with and without node labeling.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Use a generated graph `ENTITIES,RELATIONS,TRIPLES` instead of a dataset.
        #[arg(long, value_name = "E,R,T")]
        random: Option<String>,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Print the subgraph extracted around one triple as an edge list.
    Extract {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        head: String,
        #[arg(long)]
        relation: String,
        #[arg(long)]
        tail: String,
        /// Which graph to extract from.
        #[arg(long, default_value = "train")]
        graph: commands::GraphChoice,
    },
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 1,
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(4);
        }
    }
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::Train(cfg) => commands::train(&cfg, &mut out),
        Command::Eval { cfg, scorer } => commands::eval(&cfg, scorer, &mut out),
        Command::Verify {
            instances,
            max_nodes,
            max_edges,
            max_relations,
            k,
            seed,
        } => commands::verify(
            instances,
            rest_kg::rule_algebra::InstanceBounds {
                max_nodes,
                max_edges,
                max_relations,
            },
            k,
            seed,
            &mut out,
        ),
        Command::Rulescore {
            checkpoint,
            head,
            max_body_len,
            top_k,
        } => commands::rulescore(&checkpoint, head.as_deref(), max_body_len, top_k, &mut out),
        Command::Bench {
            cfg,
            random,
            queries,
            repeats,
        } => commands::bench(&cfg, random.as_deref(), queries, repeats, &mut out),
        Command::Extract {
            cfg,
            head,
            relation,
            tail,
            graph,
        } => commands::extract(&cfg, [&head, &relation, &tail], graph, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
