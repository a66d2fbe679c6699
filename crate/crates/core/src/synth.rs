//! Deterministic synthetic markets and knowledge graphs with planted
//! relation-to-return effects.
//!
//! Daily log-returns are `drift + noise * (w z_sector + sqrt(1 - w²) z_i)`
//! plus planted effects: an event of a planted relation type on asset `i`
//! at day `t` adds `effect / lag` to each log-return on days `t+1 ..= t+lag`.
//! With `noise <= effect / 4` a single planted event dominates the
//! cross-section of the following `lag` days.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{
    nodes_to_json, relations_to_json, Entity, EntityId, EventTuple, RelationInstance, RelationTypeId, TemporalKG,
    YearMonth,
};
use crate::market::{write_price_csv, PriceSeries};

pub const SECTOR: &str = "SECTOR";
pub const CEO: &str = "CEO";
pub const SUPPLIER: &str = "SUPPLIER";
pub const DECLARES_DIVIDEND: &str = "DECLARES_DIVIDEND";
pub const INCREASE_YOY: &str = "INCREASE_YoY";
pub const NEWS_MENTION: &str = "NEWS_MENTION";

/// A relation type whose events shift future returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedRule {
    pub relation: String,
    /// Total log-return shift.
    pub effect: f64,
    /// Days over which the shift is spread.
    pub lag: usize,
    /// Expected events per day; the integer part is always drawn, the
    /// fraction with that probability.
    pub events_per_day: f64,
}

impl PlantedRule {
    pub fn dividend() -> Self {
        Self {
            relation: DECLARES_DIVIDEND.into(),
            effect: 0.05,
            lag: 1,
            events_per_day: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub assets: usize,
    pub total_days: usize,
    pub start_date: NaiveDate,
    /// Standard deviation of the daily log-return noise.
    pub noise: f64,
    pub drift: f64,
    /// Share of the noise driven by a common sector factor.
    pub sector_weight: f64,
    pub sectors: usize,
    pub rules: Vec<PlantedRule>,
    /// Expected distractor news events per day.
    pub news_per_day: f64,
    /// Probability per asset and day of a year-over-year increase interval.
    pub yoy_rate: f64,
    /// Additional static relation types with random company pairs.
    pub extra_relation_types: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            assets: 20,
            total_days: 800,
            start_date: NaiveDate::from_ymd_opt(2012, 1, 30).expect("valid date"),
            noise: 0.01,
            drift: 0.0,
            sector_weight: 0.5,
            sectors: 4,
            rules: vec![PlantedRule::dividend()],
            news_per_day: 1.0,
            yoy_rate: 0.002,
            extra_relation_types: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_days < 400 {
            return Err(Error::Config(format!("total_days {} is below 400", self.total_days)));
        }
        if self.assets < 2 {
            return Err(Error::Config("need at least two assets".into()));
        }
        if self.sectors == 0 {
            return Err(Error::Config("need at least one sector".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.drift.is_finite() {
            return Err(Error::Config("noise and drift must be finite, noise non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.sector_weight) {
            return Err(Error::Config("sector_weight must lie in [0, 1]".into()));
        }
        for r in &self.rules {
            if !r.effect.is_finite() || r.lag == 0 || !(r.events_per_day >= 0.0) {
                return Err(Error::Config(format!("bad planted rule {r:?}")));
            }
            if r.events_per_day > self.assets as f64 {
                return Err(Error::Config(format!("rule {} has more events than assets", r.relation)));
            }
        }
        Ok(())
    }
}

/// One generated event of a planted rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub day: usize,
    pub asset: usize,
    pub relation: String,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub config: SynthConfig,
    pub series: Vec<PriceSeries>,
    pub kg: TemporalKG,
    /// Company entity of each asset.
    pub asset_entities: Vec<EntityId>,
    pub events: Vec<PlantedEvent>,
}

/// Business days (Monday to Friday) starting at `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn draw_count<R: Rng>(rate: f64, rng: &mut R) -> usize {
    let base = rate.floor();
    base as usize + usize::from(rng.random::<f64>() < rate - base)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

struct Builder {
    entities: Vec<Entity>,
}

impl Builder {
    fn add(&mut self, labels: &[&str], name: &str) -> EntityId {
        let id = self.entities.len() as EntityId;
        self.entities.push(Entity::new(id, labels, name));
        id
    }
}

/// Generates prices and the matching knowledge graph.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.assets;
    let days = business_days(cfg.start_date, cfg.total_days);

    let mut names: BTreeSet<String> = [SECTOR, CEO, SUPPLIER, DECLARES_DIVIDEND, INCREASE_YOY, NEWS_MENTION]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(cfg.rules.iter().map(|r| r.relation.clone()));
    names.extend((0..cfg.extra_relation_types).map(|k| format!("RELATED_{k}")));
    let registry: BTreeMap<RelationTypeId, String> =
        names.iter().enumerate().map(|(i, s)| (i as RelationTypeId, s.clone())).collect();
    let rel_id = |name: &str| -> RelationTypeId {
        *registry.iter().find(|(_, v)| v.as_str() == name).expect("registered").0
    };

    let mut b = Builder { entities: Vec::new() };
    let tickers: Vec<String> = (0..n).map(|i| format!("S{i:03}")).collect();
    let companies: Vec<EntityId> = tickers
        .iter()
        .map(|t| {
            let id = b.add(&["Company"], &format!("{t} Corp"));
            b.entities[id as usize]
                .properties
                .insert("ticker".into(), serde_json::Value::String(t.clone()));
            id
        })
        .collect();
    let sectors: Vec<EntityId> = (0..cfg.sectors).map(|s| b.add(&["Sector"], &format!("Sector {s}"))).collect();
    let sector_of: Vec<usize> = (0..n).map(|i| i % cfg.sectors).collect();
    let persons: Vec<EntityId> = (0..n).map(|i| b.add(&["Person"], &format!("Person {i}"))).collect();
    let rule_targets: Vec<Vec<EntityId>> = cfg
        .rules
        .iter()
        .map(|r| {
            let label = if r.relation == DECLARES_DIVIDEND { "Dividend" } else { "Event" };
            tickers
                .iter()
                .map(|t| b.add(&[label], &format!("{} {t}", r.relation)))
                .collect()
        })
        .collect();
    let news: Vec<EntityId> = (0..3).map(|k| b.add(&["News"], &format!("Newswire {k}"))).collect();
    let revenue = b.add(&["Metric"], "Revenue");

    let mut relations = Vec::new();
    for i in 0..n {
        relations.push(RelationInstance::triple(companies[i], rel_id(SECTOR), sectors[sector_of[i]]));
        relations.push(RelationInstance::triple(persons[i], rel_id(CEO), companies[i]));
        let mut supplier = rng.random_range(0..n - 1);
        if supplier >= i {
            supplier += 1;
        }
        relations.push(RelationInstance::triple(companies[supplier], rel_id(SUPPLIER), companies[i]));
    }
    for k in 0..cfg.extra_relation_types {
        for _ in 0..n {
            let pair = sample(&mut rng, n, 2).into_vec();
            relations.push(RelationInstance::triple(
                companies[pair[0]],
                rel_id(&format!("RELATED_{k}")),
                companies[pair[1]],
            ));
        }
    }

    // planted events and their log-return shifts
    let mut shift = vec![vec![0.0f64; cfg.total_days]; n];
    let mut events = Vec::new();
    for t in 0..cfg.total_days {
        for (ri, rule) in cfg.rules.iter().enumerate() {
            let count = draw_count(rule.events_per_day, &mut rng);
            if count == 0 {
                continue;
            }
            let mut chosen = sample(&mut rng, n, count).into_vec();
            chosen.sort_unstable();
            for a in chosen {
                events.push(PlantedEvent {
                    day: t,
                    asset: a,
                    relation: rule.relation.clone(),
                });
                relations.push(RelationInstance::quadruple(
                    companies[a],
                    rel_id(&rule.relation),
                    rule_targets[ri][a],
                    days[t],
                ));
                for s in t + 1..=(t + rule.lag).min(cfg.total_days - 1) {
                    shift[a][s] += rule.effect / rule.lag as f64;
                }
            }
        }
        for _ in 0..draw_count(cfg.news_per_day, &mut rng) {
            let a = rng.random_range(0..n);
            let src = news[rng.random_range(0..news.len())];
            relations.push(RelationInstance::quadruple(src, rel_id(NEWS_MENTION), companies[a], days[t]));
        }
        for a in 0..n {
            if rng.random::<f64>() < cfg.yoy_rate {
                let end = days[t] + Days::new(90);
                relations.push(RelationInstance::quintuple(companies[a], rel_id(INCREASE_YOY), revenue, days[t], end));
            }
        }
    }

    let idio = (1.0 - cfg.sector_weight * cfg.sector_weight).sqrt();
    let mut series: Vec<PriceSeries> = tickers
        .iter()
        .enumerate()
        .map(|(i, t)| PriceSeries {
            asset_id: i,
            ticker: t.clone(),
            name: format!("{t} Corp"),
            dates: days.clone(),
            open: Vec::with_capacity(cfg.total_days),
            high: Vec::with_capacity(cfg.total_days),
            low: Vec::with_capacity(cfg.total_days),
            close: Vec::with_capacity(cfg.total_days),
            volume: Vec::with_capacity(cfg.total_days),
        })
        .collect();
    let mut last: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..100.0)).collect();
    for t in 0..cfg.total_days {
        let sector_shock: Vec<f64> = (0..cfg.sectors).map(|_| normal(&mut rng)).collect();
        for (i, s) in series.iter_mut().enumerate() {
            let z = cfg.sector_weight * sector_shock[sector_of[i]] + idio * normal(&mut rng);
            let r = if t == 0 { 0.0 } else { cfg.drift + cfg.noise * z + shift[i][t] };
            let open = last[i] * (cfg.noise * 0.25 * normal(&mut rng)).exp();
            let close = last[i] * r.exp();
            let wick = cfg.noise * 0.5;
            let high = open.max(close) * (wick * normal::<ChaCha8Rng>(&mut rng).abs()).exp();
            let low = open.min(close) * (-wick * normal::<ChaCha8Rng>(&mut rng).abs()).exp();
            let volume = (1e6 * (0.3 * normal(&mut rng)).exp()).round();
            s.open.push(open);
            s.high.push(high);
            s.low.push(low);
            s.close.push(close);
            s.volume.push(volume);
            last[i] = close;
        }
    }

    let kg = TemporalKG::new(b.entities, registry, relations)?;
    Ok(SynthData {
        config: cfg.clone(),
        series,
        kg,
        asset_entities: companies,
        events,
    })
}

/// Paths written by [`write_dataset`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthPaths {
    pub prices: PathBuf,
    pub nodes: PathBuf,
    pub relations: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `prices/<TICKER>-<name>.csv`, `nodes.json`, `relations.json` and
/// `synth.json` (config plus planted events) under `dir`.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<SynthPaths> {
    let paths = SynthPaths {
        prices: dir.join("prices"),
        nodes: dir.join("nodes.json"),
        relations: dir.join("relations.json"),
        manifest: dir.join("synth.json"),
    };
    fs::create_dir_all(&paths.prices).map_err(|e| Error::io(&paths.prices, e))?;
    for s in &data.series {
        let path = paths.prices.join(format!("{}-{}.csv", s.ticker, s.name.replace(' ', "_")));
        let mut buf = Vec::new();
        write_price_csv(s, &mut buf)?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    fs::write(&paths.nodes, nodes_to_json(&data.kg)).map_err(|e| Error::io(&paths.nodes, e))?;
    fs::write(&paths.relations, relations_to_json(&data.kg)).map_err(|e| Error::io(&paths.relations, e))?;
    let manifest = serde_json::json!({
        "config": data.config,
        "planted_events": data.events,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse("synth manifest", e))?;
    fs::write(&paths.manifest, text).map_err(|e| Error::io(&paths.manifest, e))?;
    Ok(paths)
}

/// Event stream for checking Hawkes separation: entities fall into
/// `groups` ordered groups, and a relation of type `r` only ever links a
/// head in group `g` to a tail in group `g + r + 1`. Groups behave like
/// points on a line and relation types like fixed offsets, so the pattern
/// is expressible as a translation.
#[derive(Clone, Debug)]
pub struct PlantedEventGraph {
    pub kg: TemporalKG,
    pub events: Vec<EventTuple>,
}

pub fn planted_event_graph(seed: u64, entities: usize, groups: usize, relations: usize, months: usize, per_month: usize) -> Result<PlantedEventGraph> {
    if groups <= relations || entities < 2 * groups || relations == 0 || months == 0 {
        return Err(Error::Config(
            "event graph needs more groups than relations, months and two entities per group".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ents: Vec<Entity> = (0..entities as EntityId)
        .map(|i| Entity::new(i, &["Node"], &format!("node {i}")))
        .collect();
    let registry: BTreeMap<RelationTypeId, String> =
        (0..relations as RelationTypeId).map(|r| (r, format!("REL_{r}"))).collect();
    let group_of = |e: usize| e % groups;
    let members = |g: usize| (0..entities).filter(move |&e| group_of(e) == g);
    let start = YearMonth { year: 2015, month: 1 };
    let mut rels = Vec::new();
    let mut events = Vec::new();
    for m in 0..months {
        let ym = YearMonth::from_index(start.index() + m as i64);
        let day = NaiveDate::from_ymd_opt(ym.year, ym.month, 1).expect("valid month");
        for _ in 0..per_month {
            let r = rng.random_range(0..relations);
            let heads: Vec<usize> = (0..entities).filter(|&e| group_of(e) + r + 1 < groups).collect();
            let h = heads[rng.random_range(0..heads.len())];
            let pool: Vec<usize> = members(group_of(h) + r + 1).collect();
            let t = pool[rng.random_range(0..pool.len())];
            rels.push(RelationInstance::quadruple(h as EntityId, r as RelationTypeId, t as EntityId, day));
            events.push(EventTuple {
                head: h as EntityId,
                head_type: "Node".into(),
                tail: t as EntityId,
                tail_type: "Node".into(),
                relation: r as RelationTypeId,
                timestamp: ym,
            });
        }
    }
    events.sort_by_key(|e| e.timestamp);
    let kg = TemporalKG::new(ents, registry, rels)?;
    Ok(PlantedEventGraph { kg, events })
}
