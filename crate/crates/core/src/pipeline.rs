//! End-to-end orchestration: loading, dataset archive, per-phase Hawkes
//! pretraining and ranker training, prediction and backtesting.
//!
//! Phase day indices are offsets into the usable part of the calendar,
//! the days `W ..= T - 1 - max(Δ)` that have a full look-back window and
//! every horizon label.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::backtest::{
    evaluate_phase, metrics_csv, portfolio_csv, text_table, BacktestConfig, DayScores, MetricsReport, PhaseMetrics,
    PortfolioPoint,
};
use crate::config::{load_risk_free, RunConfig};
use crate::error::{Error, Result};
use crate::hawkes::HawkesModel;
use crate::kg::{load_graph, EntityId, GraphStats, RelationTypeId, TemporalKG, YearMonth};
use crate::market::{load_price_dir, make_phases, Market, PhaseSpec, PriceWindow};
use crate::params::{Checkpoint, ParamStore};
use crate::ranker::{train_phase, DayInput, HawkesInputs, PhaseFit, RankModel};
use crate::relational::AttentionReport;
use crate::tensor::Matrix;

/// Market, graph and the asset-to-entity map.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub market: Market,
    pub kg: TemporalKG,
    /// KG entity of each market asset.
    pub asset_entities: Vec<EntityId>,
    /// Price files rejected by the row threshold.
    pub skipped: Vec<(PathBuf, usize)>,
}

impl Dataset {
    /// Applies the removal list and maps assets to entities.
    pub fn new(market: Market, kg: TemporalKG, remove: &[String]) -> Result<Self> {
        let kg = if remove.is_empty() { kg } else { kg.filter_relations(remove)? };
        let asset_entities = map_assets(&kg, &market)?;
        Ok(Self {
            market,
            kg,
            asset_entities,
            skipped: Vec::new(),
        })
    }

    pub fn tickers(&self) -> Vec<String> {
        self.market.series().iter().map(|s| s.ticker.clone()).collect()
    }
}

/// Finds each asset's entity by its `ticker` property, falling back to an
/// entity named like the ticker.
pub fn map_assets(kg: &TemporalKG, market: &Market) -> Result<Vec<EntityId>> {
    let mut by_ticker = BTreeMap::new();
    for e in kg.entities().values() {
        if let Some(t) = e.property_str("ticker") {
            by_ticker.entry(t.to_ascii_uppercase()).or_insert(e.id);
        }
    }
    let mut by_name = BTreeMap::new();
    for e in kg.entities().values() {
        by_name.entry(e.name.to_ascii_uppercase()).or_insert(e.id);
    }
    market
        .series()
        .iter()
        .map(|s| {
            let key = s.ticker.to_ascii_uppercase();
            by_ticker
                .get(&key)
                .or_else(|| by_name.get(&key))
                .copied()
                .ok_or_else(|| Error::Integrity(format!("asset {} has no entity in the graph", s.ticker)))
        })
        .collect()
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let prices = cfg.require(&cfg.paths.prices, "prices")?;
    let nodes = cfg.require(&cfg.paths.nodes, "nodes")?;
    let relations = cfg.require(&cfg.paths.relations, "relations")?;
    let loaded = load_price_dir(prices, cfg.data.min_rows)?;
    for (path, rows) in &loaded.skipped {
        info!("skipped {} ({rows} rows < {})", path.display(), cfg.data.min_rows);
    }
    if loaded.series.is_empty() {
        return Err(Error::Data(format!("no usable price files in {}", prices.display())));
    }
    let market = Market::new(loaded.series)?;
    let kg = load_graph(nodes, relations)?;
    let mut data = Dataset::new(market, kg, &cfg.remove)?;
    data.skipped = loaded.skipped;
    Ok(data)
}

fn max_delta(cfg: &RunConfig) -> usize {
    cfg.protocol.backtest.deltas.iter().copied().max().unwrap_or(1)
}

/// First usable calendar day and the number of usable days.
pub fn usable_days(cfg: &RunConfig, market: &Market) -> Result<(usize, usize)> {
    let w = cfg.data.window;
    let need = w + max_delta(cfg) + 1;
    if market.num_days() < need {
        return Err(Error::Data(format!(
            "{} calendar days cannot hold a {w}-day window and {}-day horizon",
            market.num_days(),
            max_delta(cfg)
        )));
    }
    Ok((w, market.num_days() - need + 1))
}

/// Phases with calendar day indices.
pub fn phases(cfg: &RunConfig, market: &Market) -> Result<Vec<PhaseSpec>> {
    let (offset, total) = usable_days(cfg, market)?;
    let specs = make_phases(total, cfg.protocol.phases, &cfg.protocol.geometry)?;
    Ok(specs
        .into_iter()
        .map(|p| PhaseSpec {
            index: p.index,
            train: p.train.start + offset..p.train.end + offset,
            val: p.val.start + offset..p.val.end + offset,
            test: p.test.start + offset..p.test.end + offset,
        })
        .collect())
}

// ------------------------------------------------------------------ archive

pub const ARCHIVE_FORMAT: &str = "kgrank-archive";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format: String,
    pub version: u32,
    pub run_config: serde_json::Value,
    pub seed: u64,
    pub tickers: Vec<String>,
    pub asset_entities: Vec<EntityId>,
    pub graph: GraphStats,
    pub skipped_files: usize,
}

/// One day: the windows of every asset with complete data and the
/// relations valid that day as `(head, tail, relation)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveDay {
    pub day: usize,
    pub date: NaiveDate,
    pub windows: Vec<PriceWindow>,
    pub edges: Vec<(EntityId, EntityId, RelationTypeId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub header: ArchiveHeader,
    pub days: Vec<ArchiveDay>,
}

pub fn build_archive(cfg: &RunConfig, data: &Dataset) -> Result<Archive> {
    let (offset, total) = usable_days(cfg, &data.market)?;
    let deltas = &cfg.protocol.backtest.deltas;
    let days = (offset..offset + total)
        .map(|d| {
            let cs = data.market.cross_section(d, cfg.data.window, deltas, cfg.data.normalizer);
            let edges = data
                .kg
                .snapshot(cs.date)
                .edges()
                .map(|r| (r.head, r.tail, r.relation_type))
                .collect();
            ArchiveDay {
                day: d,
                date: cs.date,
                windows: cs.windows,
                edges,
            }
        })
        .collect();
    Ok(Archive {
        header: ArchiveHeader {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            run_config: cfg.to_json(),
            seed: cfg.seed,
            tickers: data.tickers(),
            asset_entities: data.asset_entities.clone(),
            graph: data.kg.stats(),
            skipped_files: data.skipped.len(),
        },
        days,
    })
}

/// Line-delimited: the header, then one line per day.
pub fn write_archive<W: Write>(archive: &Archive, mut out: W) -> Result<()> {
    let err = |e: serde_json::Error| Error::parse("archive", e);
    let io = |e: std::io::Error| Error::io("archive", e);
    writeln!(out, "{}", serde_json::to_string(&archive.header).map_err(err)?).map_err(io)?;
    for d in &archive.days {
        writeln!(out, "{}", serde_json::to_string(d).map_err(err)?).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_archive<R: BufRead>(input: R, context: &str) -> Result<Archive> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(context, "empty archive"))?
        .map_err(|e| Error::io(context, e))?;
    let header: ArchiveHeader = serde_json::from_str(&first).map_err(|e| Error::parse(context, e))?;
    if header.format != ARCHIVE_FORMAT || header.version != ARCHIVE_VERSION {
        return Err(Error::parse(
            context,
            format!("unsupported archive {} v{}", header.format, header.version),
        ));
    }
    let mut days = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        days.push(serde_json::from_str(&line).map_err(|e| Error::parse(context, format!("line {}: {e}", i + 2)))?);
    }
    Ok(Archive { header, days })
}

pub fn save_archive(archive: &Archive, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_archive(archive, std::io::BufWriter::new(f))
}

pub fn load_archive(path: &Path) -> Result<Archive> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_archive(BufReader::new(f), &path.display().to_string())
}

// ----------------------------------------------------------------- training

fn phase_seed(seed: u64, phase: usize, delta: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((phase as u64) << 32) ^ (delta as u64)
}

/// Hawkes embeddings fitted on the events that start no later than the
/// month of the phase's last training day.
pub fn pretrain_hawkes(cfg: &RunConfig, data: &Dataset, phase: &PhaseSpec) -> Result<HawkesInputs<f64>> {
    let d = cfg.model.hawkes_dim;
    let m = data.kg.num_relation_slots().max(1);
    if !cfg.variant.uses_hawkes() || d == 0 {
        return Ok(HawkesInputs::zeros(data.market.num_assets(), m, d));
    }
    let cutoff = YearMonth::of(data.market.calendar()[phase.train.end - 1]);
    let events: Vec<_> = data
        .kg
        .expand_monthly()
        .into_iter()
        .filter(|e| e.timestamp <= cutoff)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed(cfg.seed, phase.index, 0) ^ 0x4841_574B);
    let mut store = ParamStore::new();
    let model = HawkesModel::new(&data.kg, cfg.hawkes, &mut store, &mut rng)?;
    let report = model.train(&mut store, &events, &mut rng)?;
    info!(
        "phase {}: Hawkes fitted on {} events, final loss {:?}",
        phase.index,
        report.events,
        report.epoch_losses.last()
    );
    Ok(HawkesInputs {
        node: model.node_embeddings(&store, &data.asset_entities)?,
        relation: model.relation_embeddings(&store),
    })
}

/// Model inputs for the given calendar days at horizon `delta`.
pub fn day_inputs(
    cfg: &RunConfig,
    data: &Dataset,
    model: &RankModel,
    days: std::ops::Range<usize>,
    delta: usize,
) -> Vec<DayInput<f64>> {
    days.filter_map(|d| {
        let cs = data.market.cross_section(d, cfg.data.window, &[delta], cfg.data.normalizer);
        if cs.windows.is_empty() {
            return None;
        }
        let edges = model.rel.as_ref().map(|rel| rel.edges(&data.kg.snapshot(cs.date)));
        Some(DayInput {
            day: d,
            assets: cs.assets(),
            returns: cs.returns(delta),
            up: cs.windows.iter().map(|w| w.label(delta).is_some_and(|l| l.up)).collect(),
            windows: cs.windows.into_iter().map(|w| w.features).collect(),
            edges,
        })
    })
    .collect()
}

/// A trained ranker for one (phase, Δ).
#[derive(Clone, Debug)]
pub struct FittedPhase {
    pub phase: PhaseSpec,
    pub delta: usize,
    pub model: RankModel,
    pub store: ParamStore<f64>,
    pub hawkes: HawkesInputs<f64>,
    pub fit: PhaseFit,
}

fn build_model(cfg: &RunConfig, data: &Dataset, phase: usize, delta: usize) -> Result<(RankModel, ParamStore<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed(cfg.seed, phase, delta));
    let mut store = ParamStore::new();
    let model = RankModel::new(
        &data.kg,
        cfg.variant,
        cfg.model,
        &data.asset_entities,
        &mut store,
        &mut rng,
    )?;
    Ok((model, store))
}

pub fn fit_phase(
    cfg: &RunConfig,
    data: &Dataset,
    phase: &PhaseSpec,
    delta: usize,
    hawkes: &HawkesInputs<f64>,
    checkpoint: Option<&Path>,
) -> Result<FittedPhase> {
    let (model, mut store) = build_model(cfg, data, phase.index, delta)?;
    let train = day_inputs(cfg, data, &model, phase.train.clone(), delta);
    let val = day_inputs(cfg, data, &model, phase.val.clone(), delta);
    let tcfg = crate::ranker::TrainConfig {
        seed: phase_seed(cfg.seed, phase.index, delta),
        ..cfg.train
    };
    let fit = train_phase(&model, &mut store, &train, &val, hawkes, &tcfg, checkpoint)?;
    Ok(FittedPhase {
        phase: phase.clone(),
        delta,
        model,
        store,
        hawkes: hawkes.clone(),
        fit,
    })
}

/// Test-day scores and, for graph variants, attention on asset nodes.
pub fn predict_phase(cfg: &RunConfig, data: &Dataset, fitted: &FittedPhase) -> Result<(Vec<DayScores>, AttentionReport)> {
    let days = day_inputs(cfg, data, &fitted.model, fitted.phase.test.clone(), fitted.delta);
    let tickers = data.tickers();
    let mut report = AttentionReport::default();
    let mut out = Vec::with_capacity(days.len());
    for d in &days {
        let mut g = Graph::new();
        let fwd = fitted.model.forward(&mut g, &fitted.store, d, &fitted.hawkes, false)?;
        let scores = g.value(fwd.scores).to_f64_vec();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite scores on day {}", d.day)));
        }
        if let (Some(rel), Some(edges)) = (&fitted.model.rel, &d.edges) {
            let weights: Vec<(usize, Matrix<f64>)> =
                fwd.attention.iter().map(|(l, v)| (*l, g.value(*v).clone())).collect();
            let rows = fitted.model.rows_of(&d.assets);
            let assets: Vec<(usize, String)> =
                rows.into_iter().zip(d.assets.iter().map(|&a| tickers[a].clone())).collect();
            rel.record_attention(&mut report, edges, &weights, &assets);
        }
        let mut all = vec![None; data.market.num_assets()];
        for (&a, s) in d.assets.iter().zip(scores) {
            all[a] = Some(s);
        }
        out.push(DayScores { day: d.day, scores: all });
    }
    Ok((out, report))
}

fn checkpoint_path(out: &Path, phase: usize, delta: usize) -> PathBuf {
    out.join("checkpoints").join(format!("phase{phase:02}_delta{delta}.json"))
}

fn log_path(out: &Path, phase: usize, delta: usize) -> PathBuf {
    out.join("logs").join(format!("phase{phase:02}_delta{delta}.jsonl"))
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Outcome of evaluating all phases.
#[derive(Clone, Debug)]
pub struct BacktestOutput {
    pub report: MetricsReport,
    pub series: Vec<PortfolioPoint>,
    pub attention: AttentionReport,
    pub predictions: BTreeMap<(usize, usize), Vec<DayScores>>,
}

fn risk_free_table(cfg: &RunConfig) -> Result<BTreeMap<usize, f64>> {
    match &cfg.paths.risk_free {
        Some(p) => load_risk_free(p),
        None => Ok(BTreeMap::new()),
    }
}

fn assemble(
    cfg: &RunConfig,
    data: &Dataset,
    results: Vec<(usize, usize, Option<(Vec<DayScores>, AttentionReport)>)>,
) -> Result<BacktestOutput> {
    let rf = risk_free_table(cfg)?;
    let mut metrics: Vec<PhaseMetrics> = Vec::new();
    let mut series = Vec::new();
    let mut attention = AttentionReport::default();
    let mut predictions = BTreeMap::new();
    let mut absent = std::collections::BTreeSet::new();
    for (phase, delta, res) in results {
        let Some((preds, att)) = res else {
            absent.insert(phase);
            continue;
        };
        let bt = BacktestConfig {
            deltas: vec![delta],
            ..cfg.protocol.backtest.clone()
        };
        let rate = rf.get(&phase).copied().unwrap_or(cfg.protocol.risk_free);
        let r = evaluate_phase(&data.market, phase, &preds, &bt, rate)?;
        metrics.extend(r.metrics);
        series.extend(r.series);
        attention.merge(&att);
        predictions.insert((phase, delta), preds);
    }
    if metrics.is_empty() {
        return Err(Error::Data("no phase could be evaluated".into()));
    }
    let report = MetricsReport::new(metrics, absent.into_iter().collect())?;
    Ok(BacktestOutput {
        report,
        series,
        attention,
        predictions,
    })
}

/// Trains and evaluates every phase in memory, phases in parallel.
pub fn train_and_evaluate(cfg: &RunConfig, data: &Dataset) -> Result<BacktestOutput> {
    cfg.validate()?;
    let specs = phases(cfg, &data.market)?;
    let deltas = cfg.protocol.backtest.deltas.clone();
    let results = with_pool(cfg.threads, || {
        specs
            .par_iter()
            .map(|p| -> Result<Vec<(usize, usize, Option<(Vec<DayScores>, AttentionReport)>)>> {
                let hawkes = pretrain_hawkes(cfg, data, p)?;
                let mut out = Vec::new();
                for &delta in &deltas {
                    let fitted = fit_phase(cfg, data, p, delta, &hawkes, None)?;
                    out.push((p.index, delta, Some(predict_phase(cfg, data, &fitted)?)));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    assemble(cfg, data, results.into_iter().flatten().collect())
}

/// Per-phase summary of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub phase: usize,
    pub delta: usize,
    pub resumed: bool,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
}

/// Trains every phase and writes a checkpoint and a log per (phase, Δ).
/// Phases whose checkpoint already exists for the same configuration are
/// skipped.
pub fn run_training(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    for sub in ["checkpoints", "logs"] {
        let p = out.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let specs = phases(cfg, &data.market)?;
    let deltas = cfg.protocol.backtest.deltas.clone();
    let config_json = cfg.to_json();
    let results = with_pool(cfg.threads, || {
        specs
            .par_iter()
            .map(|p| -> Result<Vec<TrainSummary>> {
                let pending: Vec<usize> = deltas
                    .iter()
                    .copied()
                    .filter(|&d| !checkpoint_matches(&checkpoint_path(out, p.index, d), &config_json))
                    .collect();
                let mut summaries: Vec<TrainSummary> = deltas
                    .iter()
                    .filter(|d| !pending.contains(d))
                    .map(|&delta| TrainSummary {
                        phase: p.index,
                        delta,
                        resumed: true,
                        best_epoch: 0,
                        best_val_ndcg: f64::NAN,
                    })
                    .collect();
                if pending.is_empty() {
                    return Ok(summaries);
                }
                let hawkes = pretrain_hawkes(cfg, data, p)?;
                for delta in pending {
                    let ckpt = checkpoint_path(out, p.index, delta);
                    let fitted = fit_phase(cfg, data, p, delta, &hawkes, Some(&ckpt))?;
                    let meta = serde_json::json!({
                        "run_config": config_json,
                        "seed": cfg.seed,
                        "phase": p,
                        "delta": delta,
                        "fit": fitted.fit,
                        "hawkes_node": fitted.hawkes.node,
                        "hawkes_relation": fitted.hawkes.relation,
                    });
                    fitted.store.to_checkpoint(meta).save(&ckpt)?;
                    let mut log = serde_json::to_string(&serde_json::json!({
                        "run_config": config_json,
                        "seed": cfg.seed,
                    }))
                    .expect("json");
                    log.push('\n');
                    for e in &fitted.fit.log {
                        log.push_str(&serde_json::to_string(e).expect("json"));
                        log.push('\n');
                    }
                    let lp = log_path(out, p.index, delta);
                    fs::write(&lp, log).map_err(|e| Error::io(&lp, e))?;
                    summaries.push(TrainSummary {
                        phase: p.index,
                        delta,
                        resumed: false,
                        best_epoch: fitted.fit.best_epoch,
                        best_val_ndcg: fitted.fit.best_val_ndcg,
                    });
                }
                summaries.sort_by_key(|s| s.delta);
                Ok(summaries)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(results.into_iter().flatten().collect())
}

fn checkpoint_matches(path: &Path, config: &serde_json::Value) -> bool {
    path.exists()
        && Checkpoint::load(path)
            .map(|c| c.metadata.get("run_config") == Some(config))
            .unwrap_or(false)
}

/// Rebuilds the ranker of one (phase, Δ) from its checkpoint.
pub fn load_fitted(cfg: &RunConfig, data: &Dataset, phase: &PhaseSpec, delta: usize, path: &Path) -> Result<FittedPhase> {
    let ckpt = Checkpoint::load(path)?;
    let (model, mut store) = build_model(cfg, data, phase.index, delta)?;
    store.load_checkpoint(&ckpt)?;
    let matrix = |key: &str| -> Result<Matrix<f64>> {
        serde_json::from_value(ckpt.metadata.get(key).cloned().unwrap_or_default())
            .map_err(|e| Error::parse(path.display().to_string(), format!("{key}: {e}")))
    };
    let fit = serde_json::from_value(ckpt.metadata.get("fit").cloned().unwrap_or_default())
        .map_err(|e| Error::parse(path.display().to_string(), format!("fit: {e}")))?;
    Ok(FittedPhase {
        phase: phase.clone(),
        delta,
        model,
        store,
        hawkes: HawkesInputs {
            node: matrix("hawkes_node")?,
            relation: matrix("hawkes_relation")?,
        },
        fit,
    })
}

/// Evaluates every phase from its checkpoints; phases with a missing
/// checkpoint are reported absent.
pub fn run_backtest(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<BacktestOutput> {
    cfg.validate()?;
    let specs = phases(cfg, &data.market)?;
    let deltas = cfg.protocol.backtest.deltas.clone();
    let results = with_pool(cfg.threads, || {
        specs
            .par_iter()
            .map(|p| -> Result<Vec<_>> {
                let mut v = Vec::new();
                for &delta in &deltas {
                    let path = checkpoint_path(out, p.index, delta);
                    if !path.exists() {
                        warn!("phase {} Δ={delta}: no checkpoint at {}, phase absent", p.index, path.display());
                        v.push((p.index, delta, None));
                        continue;
                    }
                    let fitted = load_fitted(cfg, data, p, delta, &path)?;
                    v.push((p.index, delta, Some(predict_phase(cfg, data, &fitted)?)));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    assemble(cfg, data, results.into_iter().flatten().collect())
}

/// `# run_config: ...` and `# seed: ...` lines that prefix text artifacts.
pub fn provenance_header(cfg: &RunConfig) -> String {
    format!("# run_config: {}\n# seed: {}\n", cfg.to_json(), cfg.seed)
}

/// Writes `report.txt`, `metrics.csv`, `portfolio.csv`, `attention.csv` and
/// `report.json` into `out`.
pub fn write_reports(cfg: &RunConfig, result: &BacktestOutput, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let head = provenance_header(cfg);
    let files = [
        ("report.txt", format!("{head}{}", text_table(&result.report))),
        ("metrics.csv", format!("{head}{}", metrics_csv(&result.report))),
        ("portfolio.csv", format!("{head}{}", portfolio_csv(&result.series))),
        ("attention.csv", format!("{head}{}", result.attention.to_csv())),
        (
            "report.json",
            serde_json::to_string_pretty(&serde_json::json!({
                "run_config": cfg.to_json(),
                "seed": cfg.seed,
                "report": result.report,
            }))
            .map_err(|e| Error::parse("report", e))?,
        ),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Reads the report written by [`write_reports`].
pub fn read_report(path: &Path) -> Result<(serde_json::Value, MetricsReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let report = serde_json::from_value(v.get("report").cloned().unwrap_or_default())
        .map_err(|e| Error::parse(path.display().to_string(), e))?;
    Ok((v.get("run_config").cloned().unwrap_or_default(), report))
}
