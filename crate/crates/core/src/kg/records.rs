//! Portable line-delimited graph format.
//!
//! ```text
//! {"format":"kgrank-tkg","version":1,"relation_types":[[0,"CEO"],...],"entities":2}
//! {"identity":1,"labels":["Company"],"properties":{"name":"Acme"},"elementId":"1"}
//! {"identity":2,...}
//! [1,2,0,"1970-01-01",null]
//! [1,2,3,"2020-03-02","2020-03-03"]
//! ```
//!
//! The header is followed by exactly `entities` node records (same shape as
//! the node JSON file), then one `[head, tail, relation_id, valid_from,
//! valid_to]` row per relation, sorted by `valid_from`. `valid_to` is null
//! for static triples. Output is fully deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::json::{node_record, parse_nodes_json};
use super::types::{EntityId, RelationInstance, RelationTypeId, TemporalKG};
use crate::error::{Error, Result};

pub const RECORDS_FORMAT: &str = "kgrank-tkg";
pub const RECORDS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    relation_types: Vec<(RelationTypeId, String)>,
    entities: usize,
}

type Row = (EntityId, EntityId, RelationTypeId, NaiveDate, Option<NaiveDate>);

pub fn write_records<W: Write>(kg: &TemporalKG, mut out: W) -> Result<()> {
    let header = Header {
        format: RECORDS_FORMAT.into(),
        version: RECORDS_VERSION,
        relation_types: kg.relation_types().iter().map(|(&k, v)| (k, v.clone())).collect(),
        entities: kg.entities().len(),
    };
    let io = |e| Error::io("<records>", e);
    let ser = |e: serde_json::Error| Error::parse("records", e);
    writeln!(out, "{}", serde_json::to_string(&header).map_err(ser)?).map_err(io)?;
    for e in kg.entities().values() {
        writeln!(out, "{}", node_record(e)).map_err(io)?;
    }
    for r in kg.relations() {
        let row: Row = r.key();
        writeln!(out, "{}", serde_json::to_string(&row).map_err(ser)?).map_err(io)?;
    }
    Ok(())
}

pub fn records_to_string(kg: &TemporalKG) -> String {
    let mut buf = Vec::new();
    write_records(kg, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8 output")
}

pub fn read_records<R: BufRead>(input: R, context: &str) -> Result<TemporalKG> {
    let mut lines = input.lines().enumerate();
    let line_err = |n: usize, m: String| Error::parse(format!("{context} line {}", n + 1), m);
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(context, "empty file"))?;
    let first = first.map_err(|e| Error::io(context, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| line_err(0, e.to_string()))?;
    if header.format != RECORDS_FORMAT {
        return Err(line_err(0, format!("unexpected format {:?}", header.format)));
    }
    if header.version != RECORDS_VERSION {
        return Err(line_err(0, format!("unsupported version {}", header.version)));
    }
    let relation_types: BTreeMap<_, _> = header.relation_types.into_iter().collect();

    let mut node_text = String::new();
    let mut relations = Vec::new();
    let mut nodes_seen = 0;
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if nodes_seen < header.entities {
            node_text.push_str(&line);
            node_text.push('\n');
            nodes_seen += 1;
            continue;
        }
        let (head, tail, relation_type, valid_from, valid_to): Row =
            serde_json::from_str(&line).map_err(|e| line_err(n, e.to_string()))?;
        relations.push(RelationInstance {
            head,
            tail,
            relation_type,
            valid_from,
            valid_to,
            property_id: None,
        });
    }
    if nodes_seen < header.entities {
        return Err(Error::parse(
            context,
            format!("header declares {} entities, found {nodes_seen}", header.entities),
        ));
    }
    let entities = parse_nodes_json(&node_text, context)?;
    TemporalKG::new(entities, relation_types, relations)
}

pub fn save_records(kg: &TemporalKG, path: &Path) -> Result<()> {
    fs::write(path, records_to_string(kg)).map_err(|e| Error::io(path, e))
}

pub fn load_records(path: &Path) -> Result<TemporalKG> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::types::Entity;

    #[test]
    fn round_trip_and_determinism() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let kg = TemporalKG::new(
            vec![Entity::new(1, &["Company"], "Acme"), Entity::new(2, &["Sector"], "Tech")],
            BTreeMap::from([(0, "SECTOR".to_string()), (1, "NEWS".to_string())]),
            vec![
                RelationInstance::quadruple(1, 1, 2, d("2020-03-02")),
                RelationInstance::triple(1, 0, 2),
            ],
        )
        .unwrap();
        let text = records_to_string(&kg);
        assert!(text.lines().nth(3).unwrap().starts_with("[1,2,0,\"1970-01-01\",null]"));
        let back = read_records(text.as_bytes(), "mem").unwrap();
        assert_eq!(back, kg);
        assert_eq!(records_to_string(&back), text);
    }

    #[test]
    fn wrong_header_rejected() {
        let err = read_records("{\"format\":\"x\",\"version\":1,\"relation_types\":[],\"entities\":0}\n".as_bytes(), "m");
        assert!(matches!(err, Err(Error::Parse { .. })));
    }
}
