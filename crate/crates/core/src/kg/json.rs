//! Node and relation JSON files.
//!
//! Both files hold one record per node/relation, either as a JSON array or
//! one record per line. A record may be wrapped in a single-key envelope
//! (`{"n": {...}}` for nodes, `{"r": {...}}` for relations) as exported by
//! graph databases.
//!
//! Relation timestamps are read from `timestamp` and `expiry_timestamp`
//! (alias `expiry`), either at the top level of the record or inside
//! `properties`. Accepted forms are `YYYY-MM-DD`, a datetime starting with
//! a date, or integer unix seconds.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate};
use serde_json::{json, Map, Value};

use super::types::{next_day, Entity, EntityId, RelationInstance, RelationTypeId, TemporalKG, STATIC_SENTINEL};
use crate::error::{Error, Result};

const TIMESTAMP_KEYS: [&str; 1] = ["timestamp"];
const EXPIRY_KEYS: [&str; 2] = ["expiry_timestamp", "expiry"];

/// Splits a document into records: a JSON array, or one JSON value per
/// non-blank line.
fn records(text: &str, context: &str) -> Result<Vec<Value>> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if trimmed.starts_with('[') {
        return match serde_json::from_str::<Value>(text) {
            Ok(Value::Array(items)) => Ok(items),
            Ok(_) => Err(Error::parse(context, "expected a JSON array")),
            Err(e) => Err(Error::parse(context, e)),
        };
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(format!("{context} line {}", i + 1), e))
        })
        .collect()
}

fn unwrap_envelope(value: &Value, key: &str) -> Option<Map<String, Value>> {
    let obj = value.as_object()?;
    if obj.len() == 1 {
        if let Some(Value::Object(inner)) = obj.get(key) {
            return Some(inner.clone());
        }
    }
    Some(obj.clone())
}

fn record_error(context: &str, index: usize, message: impl ToString) -> Error {
    Error::parse(format!("{context} record {index}"), message)
}

fn as_id(value: Option<&Value>, field: &str, context: &str, index: usize) -> Result<u64> {
    match value {
        Some(Value::Number(n)) => n
            .as_u64()
            .ok_or_else(|| record_error(context, index, format!("{field} must be a non-negative integer"))),
        Some(Value::String(s)) => s
            .parse()
            .map_err(|_| record_error(context, index, format!("{field} {s:?} is not an integer"))),
        Some(_) => Err(record_error(context, index, format!("{field} must be an integer"))),
        None => Err(record_error(context, index, format!("missing {field}"))),
    }
}

fn value_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a node document.
pub fn parse_nodes_json(text: &str, context: &str) -> Result<Vec<Entity>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, value) in records(text, context)?.iter().enumerate() {
        let rec = unwrap_envelope(value, "n").ok_or_else(|| record_error(context, i, "not an object"))?;
        let id = as_id(rec.get("identity"), "identity", context, i)?;
        let labels: BTreeSet<String> = match rec.get("labels") {
            Some(Value::Array(ls)) => ls
                .iter()
                .map(|l| {
                    l.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| record_error(context, i, "labels must be strings"))
                })
                .collect::<Result<_>>()?,
            _ => return Err(record_error(context, i, "missing labels array")),
        };
        if labels.is_empty() {
            return Err(record_error(context, i, "labels is empty"));
        }
        let mut properties = match rec.get("properties") {
            Some(Value::Object(p)) => p.clone(),
            None | Some(Value::Null) => Map::new(),
            Some(_) => return Err(record_error(context, i, "properties must be an object")),
        };
        let name = match properties.remove("name") {
            Some(v) => value_to_string(&v).ok_or_else(|| record_error(context, i, "name must be a string"))?,
            None => String::new(),
        };
        let source_element_id = rec
            .get("elementId")
            .and_then(value_to_string)
            .unwrap_or_else(|| id.to_string());
        if !seen.insert(id) {
            return Err(Error::Integrity(format!(
                "{context} record {i}: duplicate identity {id}"
            )));
        }
        out.push(Entity {
            id,
            labels,
            name,
            source_element_id,
            properties,
        });
    }
    Ok(out)
}

pub fn load_nodes_json(path: &Path) -> Result<Vec<Entity>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_nodes_json(&text, &path.display().to_string())
}

/// Parses a timestamp field value. `None` for null.
pub fn parse_timestamp(v: &Value) -> std::result::Result<Option<NaiveDate>, String> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => {
            let s = s.trim();
            let date_part = s.get(..10).unwrap_or(s);
            NaiveDate::parse_from_str(date_part, "%Y-%m-%d")
                .map(Some)
                .map_err(|_| format!("unrecognized timestamp {s:?}"))
        }
        Value::Number(n) => {
            let secs = n.as_i64().ok_or_else(|| format!("timestamp {n} is not integer seconds"))?;
            DateTime::from_timestamp(secs, 0)
                .map(|dt| Some(dt.date_naive()))
                .ok_or_else(|| format!("timestamp {n} out of range"))
        }
        other => Err(format!("unrecognized timestamp {other}")),
    }
}

fn find_field<'a>(rec: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    let props = rec.get("properties").and_then(Value::as_object);
    keys.iter()
        .find_map(|k| rec.get(*k))
        .or_else(|| props.and_then(|p| keys.iter().find_map(|k| p.get(*k))))
}

/// Relations plus the relation-type registry they use. Type ids are
/// assigned in sorted name order.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationSet {
    pub relation_types: BTreeMap<RelationTypeId, String>,
    pub relations: Vec<RelationInstance>,
}

/// Parses a relation document against a known entity set.
///
/// Timestamp policy: an expiry is used when present; a timestamp without
/// expiry is valid for one day; no timestamp at all makes a static triple.
/// An expiry equal to the timestamp is read as a single-day validity.
pub fn parse_relations_json(text: &str, context: &str, entities: &[Entity]) -> Result<RelationSet> {
    let known: BTreeSet<EntityId> = entities.iter().map(|e| e.id).collect();
    struct Raw {
        head: EntityId,
        tail: EntityId,
        type_name: String,
        from: NaiveDate,
        to: Option<NaiveDate>,
        property_id: Option<String>,
    }
    let mut raws = Vec::new();
    for (i, value) in records(text, context)?.iter().enumerate() {
        let rec = unwrap_envelope(value, "r").ok_or_else(|| record_error(context, i, "not an object"))?;
        let head = as_id(rec.get("start"), "start", context, i)?;
        let tail = as_id(rec.get("end"), "end", context, i)?;
        let type_name = rec
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| record_error(context, i, "missing type"))?
            .to_string();
        for end in [head, tail] {
            if !known.contains(&end) {
                return Err(Error::Integrity(format!(
                    "{context} record {i}: endpoint {end} is not a known entity"
                )));
            }
        }
        let ts = match find_field(&rec, &TIMESTAMP_KEYS) {
            Some(v) => parse_timestamp(v).map_err(|m| record_error(context, i, m))?,
            None => None,
        };
        let expiry = match find_field(&rec, &EXPIRY_KEYS) {
            Some(v) => parse_timestamp(v).map_err(|m| record_error(context, i, m))?,
            None => None,
        };
        let (from, to) = match (ts, expiry) {
            (None, None) => (STATIC_SENTINEL, None),
            (Some(t), None) => (t, Some(next_day(t))),
            (t, Some(e)) => {
                let t = t.unwrap_or(STATIC_SENTINEL);
                if e < t {
                    return Err(record_error(context, i, format!("expiry {e} precedes timestamp {t}")));
                }
                (t, Some(if e == t { next_day(t) } else { e }))
            }
        };
        let property_id = rec
            .get("properties")
            .and_then(|p| p.get("id"))
            .and_then(value_to_string);
        raws.push(Raw {
            head,
            tail,
            type_name,
            from,
            to,
            property_id,
        });
    }

    let names: BTreeSet<&str> = raws.iter().map(|r| r.type_name.as_str()).collect();
    let relation_types: BTreeMap<RelationTypeId, String> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (i as RelationTypeId, n.to_string()))
        .collect();
    let id_of: BTreeMap<&str, RelationTypeId> = names.iter().enumerate().map(|(i, n)| (*n, i as RelationTypeId)).collect();
    let mut relations: Vec<RelationInstance> = raws
        .iter()
        .map(|r| RelationInstance {
            head: r.head,
            tail: r.tail,
            relation_type: id_of[r.type_name.as_str()],
            valid_from: r.from,
            valid_to: r.to,
            property_id: r.property_id.clone(),
        })
        .collect();
    relations.sort_by_key(|r| r.valid_from);
    Ok(RelationSet {
        relation_types,
        relations,
    })
}

pub fn load_relations_json(path: &Path, entities: &[Entity]) -> Result<RelationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_relations_json(&text, &path.display().to_string(), entities)
}

/// Loads a node file and a relation file into one graph.
pub fn load_graph(nodes: &Path, relations: &Path) -> Result<TemporalKG> {
    let entities = load_nodes_json(nodes)?;
    let rels = load_relations_json(relations, &entities)?;
    TemporalKG::new(entities, rels.relation_types, rels.relations)
}

pub(crate) fn node_record(e: &Entity) -> Value {
    let mut props = Map::new();
    props.insert("name".into(), Value::String(e.name.clone()));
    for (k, v) in &e.properties {
        props.insert(k.clone(), v.clone());
    }
    json!({
        "identity": e.id,
        "labels": e.labels,
        "properties": props,
        "elementId": e.source_element_id,
    })
}

/// One node record per line.
pub fn nodes_to_json(kg: &TemporalKG) -> String {
    let mut out = String::new();
    for e in kg.entities().values() {
        out.push_str(&node_record(e).to_string());
        out.push('\n');
    }
    out
}

/// One relation record per line, in chronological order. Temporal
/// relations always carry both timestamps so the interval is explicit.
pub fn relations_to_json(kg: &TemporalKG) -> String {
    let mut out = String::new();
    for (i, r) in kg.relations().iter().enumerate() {
        let mut props = Map::new();
        if let Some(pid) = &r.property_id {
            props.insert("id".into(), Value::String(pid.clone()));
        }
        if let Some(to) = r.valid_to {
            props.insert("timestamp".into(), Value::String(r.valid_from.to_string()));
            props.insert("expiry_timestamp".into(), Value::String(to.to_string()));
        }
        let rec = json!({
            "identity": i,
            "start": r.head,
            "end": r.tail,
            "type": kg.relation_type_name(r.relation_type).unwrap_or_default(),
            "properties": props,
            "elementId": i.to_string(),
            "startNodeElementId": kg.entity(r.head).map(|e| e.source_element_id.clone()),
            "endNodeElementId": kg.entity(r.tail).map(|e| e.source_element_id.clone()),
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

pub fn save_graph_json(kg: &TemporalKG, nodes: &Path, relations: &Path) -> Result<()> {
    fs::write(nodes, nodes_to_json(kg)).map_err(|e| Error::io(nodes, e))?;
    fs::write(relations, relations_to_json(kg)).map_err(|e| Error::io(relations, e))
}
