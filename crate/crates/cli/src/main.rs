use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use kgrank_core::backtest::{metrics_csv, text_table};
use kgrank_core::config::RunConfig;
use kgrank_core::kg::{load_graph, load_records, save_graph_json, save_records, TemporalKG};
use kgrank_core::market::make_phases;
use kgrank_core::optim::OptimizerConfig;
use kgrank_core::pipeline::{
    build_archive, load_dataset, read_report, run_backtest, run_training, save_archive, write_reports,
};
use kgrank_core::ranker::Variant;
use kgrank_core::synth::{generate, write_dataset, SynthConfig};
use kgrank_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "kgrank", version, about = "Knowledge-graph stock ranking: data, training and backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic market and graph with planted signals.
    Synth(SynthArgs),
    /// Build, filter or summarize a temporal knowledge graph.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Build the windowed dataset archive and print its counts.
    Ingest(RunArgs),
    /// Train every phase and write checkpoints.
    Train(RunArgs),
    /// Evaluate checkpoints and write the reports.
    Backtest(RunArgs),
    /// Print a report written by `backtest`.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// full, wo-tpp, wo-seq, wo-hk, lstm or transf.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relation type to delete before snapshotting; repeatable.
    #[arg(long)]
    remove: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(o) = &self.out {
            cfg.paths.out = Some(o.clone());
        }
        if !self.remove.is_empty() {
            cfg.remove = self.remove.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for prices, graph files and a ready-to-run config.
    #[arg(long)]
    out: PathBuf,
    /// TOML synthetic-data configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    assets: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum KgCommand {
    /// Convert node and relation JSON files to a record file.
    Build {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        relations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delete relation types from a graph.
    Filter {
        #[command(flatten)]
        source: GraphSource,
        #[arg(long, required = true)]
        remove: Vec<String>,
        /// Record file, or a directory receiving nodes.json and relations.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print graph statistics as JSON.
    Stats {
        #[command(flatten)]
        source: GraphSource,
    },
}

#[derive(Args, Debug)]
struct GraphSource {
    #[arg(long, conflicts_with_all = ["nodes", "relations"])]
    records: Option<PathBuf>,
    #[arg(long, requires = "relations")]
    nodes: Option<PathBuf>,
    #[arg(long, requires = "nodes")]
    relations: Option<PathBuf>,
}

impl GraphSource {
    fn load(&self) -> Result<TemporalKG> {
        match (&self.records, &self.nodes, &self.relations) {
            (Some(r), _, _) => load_records(r),
            (None, Some(n), Some(r)) => load_graph(n, r),
            _ => Err(Error::Config("give --records or both --nodes and --relations".into())),
        }
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `report.json` written by `backtest`.
    #[arg(long)]
    report: PathBuf,
    /// Print the long-format CSV instead of the table.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Kg(k) => cmd_kg(k),
        Command::Ingest(a) => cmd_ingest(&a.resolve()?),
        Command::Train(a) => cmd_train(&a.resolve()?),
        Command::Backtest(a) => cmd_backtest(&a.resolve()?),
        Command::Report(a) => cmd_report(&a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.assets {
        cfg.assets = n;
    }
    if let Some(d) = a.days {
        cfg.total_days = d;
    }
    cfg.validate()?;
    let data = generate(&cfg)?;
    create_dir(&a.out)?;
    let dir = fs::canonicalize(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    let paths = write_dataset(&data, &dir)?;

    // Desk-scale run configuration over the generated files.
    let mut run = RunConfig::default();
    run.seed = cfg.seed;
    run.paths.prices = Some(paths.prices.clone());
    run.paths.nodes = Some(paths.nodes.clone());
    run.paths.relations = Some(paths.relations.clone());
    run.paths.out = Some(dir.join("run"));
    run.data.min_rows = cfg.total_days;
    let max_delta = run.protocol.backtest.deltas.iter().copied().max().unwrap_or(1);
    let usable = cfg.total_days.saturating_sub(run.data.window + max_delta);
    run.protocol.phases = (1..=4)
        .rev()
        .find(|&n| make_phases(usable, n, &run.protocol.geometry).is_ok())
        .unwrap_or(1);
    run.model.hawkes_dim = 16;
    run.hawkes.dim = 16;
    run.hawkes.epochs = 3;
    run.hawkes.optimizer = OptimizerConfig::adam(1e-2);
    run.train.epochs = 5;
    run.train.optimizer = OptimizerConfig::adam(1e-3);
    let run_path = dir.join("run.toml");
    write_file(&run_path, &run.to_toml()?)?;

    let stats = data.kg.stats();
    println!(
        "synth: {} assets x {} days, {} entities, {} relations, {} planted events",
        cfg.assets,
        cfg.total_days,
        stats.entities,
        stats.relations,
        data.events.len()
    );
    println!("run config: {}", run_path.display());
    Ok(())
}

fn cmd_kg(cmd: KgCommand) -> Result<()> {
    match cmd {
        KgCommand::Build { nodes, relations, out } => {
            let kg = load_graph(&nodes, &relations)?;
            save_records(&kg, &out)?;
            print_stats(&kg);
        }
        KgCommand::Filter { source, remove, out } => {
            let kg = source.load()?;
            let before = kg.relations().len();
            let kg = kg.filter_relations(&remove)?;
            if out.is_dir() {
                save_graph_json(&kg, &out.join("nodes.json"), &out.join("relations.json"))?;
            } else {
                save_records(&kg, &out)?;
            }
            info!("removed {} relation instances", before - kg.relations().len());
            print_stats(&kg);
        }
        KgCommand::Stats { source } => print_stats(&source.load()?),
    }
    Ok(())
}

fn print_stats(kg: &TemporalKG) {
    println!("{}", serde_json::to_string_pretty(&kg.stats()).expect("stats serialize"));
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let archive = build_archive(cfg, &data)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let path = out.join("dataset.jsonl");
    save_archive(&archive, &path)?;
    let g = &archive.header.graph;
    let edges: usize = archive.days.iter().map(|d| d.edges.len()).sum();
    println!("assets\t{}", archive.header.tickers.len());
    println!("skipped_files\t{}", archive.header.skipped_files);
    println!("days\t{}", archive.days.len());
    println!("entities\t{}", g.entities);
    println!("relations\t{}", g.relations);
    println!("triples\t{}", g.triples);
    println!("quadruples\t{}", g.quadruples);
    println!("quintuples\t{}", g.quintuples);
    println!("entity_types\t{}", g.entity_types);
    println!("relation_types\t{}", g.relation_types);
    println!("snapshot_edges\t{edges}");
    println!("archive\t{}", path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let out = cfg.out_dir();
    let summaries = run_training(cfg, &data, &out)?;
    for s in &summaries {
        if s.resumed {
            println!("phase {:02} delta {:>2}: checkpoint up to date", s.phase, s.delta);
        } else {
            println!(
                "phase {:02} delta {:>2}: best epoch {} val NDCG {:.4}",
                s.phase, s.delta, s.best_epoch, s.best_val_ndcg
            );
        }
    }
    Ok(())
}

fn cmd_backtest(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let out = cfg.out_dir();
    let result = run_backtest(cfg, &data, &out)?;
    let written = write_reports(cfg, &result, &out)?;
    print!("{}", text_table(&result.report));
    for p in written {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let (run_config, report) = read_report(&a.report)?;
    println!("# run_config: {run_config}");
    if a.csv {
        print!("{}", metrics_csv(&report));
    } else {
        print!("{}", text_table(&report));
    }
    Ok(())
}
