mod common;

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use proptest::prelude::*;

use common::{date, toy_kg};
use kgrank_core::kg::{
    load_graph, load_records, nodes_to_json, parse_nodes_json, parse_relations_json, read_records, records_to_string,
    relations_to_json, save_graph_json, save_records, Entity, RelationInstance, RelationKind, TemporalKG,
    STATIC_SENTINEL,
};
use kgrank_core::Error;

fn relation_multiset(kg: &TemporalKG) -> Vec<(u64, u64, String, NaiveDate, Option<NaiveDate>)> {
    let mut v: Vec<_> = kg
        .relations()
        .iter()
        .map(|r| {
            let name = kg.relation_type_name(r.relation_type).unwrap().to_string();
            (r.head, r.tail, name, r.valid_from, r.valid_to)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn node_record_example() {
    let text = r#"[{"identity":0,"labels":["Person"],"properties":{"name":"Tommy Millner","id":114689399},"elementId":"4:abc:0"}]"#;
    let nodes = parse_nodes_json(text, "nodes").unwrap();
    assert_eq!(nodes.len(), 1);
    let e = &nodes[0];
    assert_eq!(e.id, 0);
    assert_eq!(e.labels.iter().collect::<Vec<_>>(), vec!["Person"]);
    assert_eq!(e.name, "Tommy Millner");
    assert_eq!(e.property_str("id").as_deref(), Some("114689399"));
}

#[test]
fn empty_node_array_and_duplicates() {
    assert!(parse_nodes_json("[]", "nodes").unwrap().is_empty());
    let dup = r#"[{"identity":5,"labels":["Company"],"properties":{"name":"A"}},
                  {"identity":5,"labels":["Company"],"properties":{"name":"B"}}]"#;
    assert!(matches!(parse_nodes_json(dup, "nodes"), Err(Error::Integrity(_))));
}

#[test]
fn relation_timestamp_rules() {
    let nodes = vec![Entity::new(1007, &["Company"], "Parent"), Entity::new(2591, &["Company"], "Child")];
    let text = r#"[
        {"identity":1,"start":1007,"end":2591,"type":"SUBSIDIARY","properties":{"id":"P355"}},
        {"identity":2,"start":1007,"end":2591,"type":"NEWS","properties":{"timestamp":"2020-03-02"}},
        {"identity":3,"start":2591,"end":1007,"type":"NEWS","properties":{"timestamp":"2020-01-15","expiry_timestamp":"2020-03-10"}}
    ]"#;
    let set = parse_relations_json(text, "rels", &nodes).unwrap();
    let by_type = |name: &str| -> Vec<&RelationInstance> {
        let id = set.relation_types.iter().find(|(_, n)| n.as_str() == name).unwrap().0;
        set.relations.iter().filter(|r| r.relation_type == *id).collect()
    };
    let sub = by_type("SUBSIDIARY");
    assert_eq!(sub[0].valid_from, STATIC_SENTINEL);
    assert_eq!(sub[0].kind(), RelationKind::Triple);
    assert_eq!(sub[0].property_id.as_deref(), Some("P355"));

    let news = by_type("NEWS");
    let quad = news.iter().find(|r| r.valid_from == date(2020, 3, 2)).unwrap();
    assert_eq!(quad.valid_to, Some(date(2020, 3, 3)));
    assert_eq!(quad.kind(), RelationKind::Quadruple);
    let quint = news.iter().find(|r| r.valid_from == date(2020, 1, 15)).unwrap();
    assert_eq!(quint.valid_to, Some(date(2020, 3, 10)));
    assert_eq!(quint.kind(), RelationKind::Quintuple);

    let froms: Vec<_> = set.relations.iter().map(|r| r.valid_from).collect();
    assert!(froms.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn dangling_endpoint_is_integrity_error() {
    let nodes = vec![Entity::new(1, &["Company"], "A")];
    let text = r#"[{"identity":1,"start":1,"end":99,"type":"SUPPLIER","properties":{}}]"#;
    assert!(matches!(parse_relations_json(text, "rels", &nodes), Err(Error::Integrity(_))));
}

#[test]
fn snapshot_interval_and_partition() {
    let (kg, _) = toy_kg();
    let snap = kg.snapshot(date(2020, 3, 2));
    assert_eq!(snap.static_edges.len(), 4);
    // supplier quintuples and the 2020-03-02 dividend
    assert_eq!(snap.temporal_edges.len(), 3);
    assert!(snap.static_edges.iter().all(|r| r.is_static()));
    assert!(snap.temporal_edges.iter().all(|r| !r.is_static()));

    let later = kg.snapshot(date(2021, 1, 15));
    assert!(later.temporal_edges.is_empty());
    assert_eq!(later.static_edges.len(), 4);
}

#[test]
fn filter_named_types() {
    let (kg, _) = toy_kg();
    let out = kg.filter_relations(&["DECLARES_DIVIDEND", "SUPPLIER"]).unwrap();
    assert_eq!(out.entities(), kg.entities());
    let expected: Vec<_> = kg
        .relations()
        .iter()
        .filter(|r| !matches!(kg.relation_type_name(r.relation_type), Some("DECLARES_DIVIDEND" | "SUPPLIER")))
        .cloned()
        .collect();
    assert_eq!(out.relations(), expected.as_slice());

    let none: [&str; 0] = [];
    assert_eq!(kg.filter_relations(&none).unwrap(), kg);

    let all: Vec<String> = kg.relation_types().values().cloned().collect();
    let empty = kg.filter_relations(&all).unwrap();
    assert!(empty.relations().is_empty());
    assert_eq!(empty.entities().len(), kg.entities().len());

    assert!(matches!(kg.filter_relations(&["NOPE"]), Err(Error::Validation(_))));
}

#[test]
fn expand_monthly_examples() {
    let entities = vec![Entity::new(1, &["Person", "Company"], "A"), Entity::new(2, &["Sector"], "B")];
    let registry = BTreeMap::from([(0, "R".to_string())]);
    let kg = TemporalKG::new(
        entities,
        registry,
        vec![
            RelationInstance::quintuple(1, 0, 2, date(2020, 1, 15), date(2020, 3, 10)),
            RelationInstance::quadruple(2, 0, 1, date(2021, 7, 31)),
            RelationInstance::triple(1, 0, 2),
        ],
    )
    .unwrap();
    let events = kg.expand_monthly();
    assert_eq!(events.len(), 4);
    let months: Vec<(i32, u32)> = events.iter().filter(|e| e.head == 1).map(|e| (e.timestamp.year, e.timestamp.month)).collect();
    assert_eq!(months, vec![(2020, 1), (2020, 2), (2020, 3)]);
    // smallest label wins
    assert!(events.iter().filter(|e| e.head == 1).all(|e| e.head_type == "Company"));
    let quad: Vec<_> = events.iter().filter(|e| e.head == 2).collect();
    assert_eq!(quad.len(), 1);
    assert_eq!(quad[0].tail_type, "Company");
}

#[test]
fn json_and_record_round_trip_on_disk() {
    let (kg, _) = toy_kg();
    let dir = tempfile::tempdir().unwrap();
    let (n, r) = (dir.path().join("nodes.json"), dir.path().join("relations.json"));
    save_graph_json(&kg, &n, &r).unwrap();
    let back = load_graph(&n, &r).unwrap();
    assert_eq!(back.entities(), kg.entities());
    assert_eq!(relation_multiset(&back), relation_multiset(&kg));

    let rec = dir.path().join("graph.tkg");
    save_records(&kg, &rec).unwrap();
    let again = load_records(&rec).unwrap();
    assert_eq!(again, kg);
    assert_eq!(records_to_string(&again), records_to_string(&kg));
}

#[test]
fn serialized_json_parses_back_in_memory() {
    let (kg, _) = toy_kg();
    let nodes = parse_nodes_json(&nodes_to_json(&kg), "n").unwrap();
    let rels = parse_relations_json(&relations_to_json(&kg), "r", &nodes).unwrap();
    let back = TemporalKG::new(nodes, rels.relation_types, rels.relations).unwrap();
    assert_eq!(relation_multiset(&back), relation_multiset(&kg));
}

#[test]
fn truncated_record_file_is_rejected() {
    let (kg, _) = toy_kg();
    let text = records_to_string(&kg);
    let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(read_records(cut.as_bytes(), "cut").is_err());
}

fn day(offset: i64) -> NaiveDate {
    date(2018, 1, 1) + chrono::Duration::days(offset)
}

fn months_by_scan(from: NaiveDate, to: NaiveDate) -> usize {
    let mut count = 0;
    let mut last = None;
    let mut d = from;
    while d < to {
        let key = (d.year(), d.month());
        if last != Some(key) {
            count += 1;
            last = Some(key);
        }
        d = d.succ_opt().unwrap();
    }
    count
}

fn random_graph() -> impl Strategy<Value = TemporalKG> {
    let rel = (0u64..5, 0u64..5, 0u32..3, 0i64..900, prop::option::of(1i64..200));
    prop::collection::vec(rel, 0..30).prop_map(|rows| {
        let entities: Vec<Entity> = (0..5).map(|i| Entity::new(i, &["Company"], &format!("E{i}"))).collect();
        let registry = BTreeMap::from([(0, "A".into()), (1, "B".into()), (2, "C".into())]);
        let relations = rows
            .into_iter()
            .map(|(h, t, r, from, len)| match len {
                None => RelationInstance::triple(h, r, t),
                Some(l) => RelationInstance::quintuple(h, r, t, day(from), day(from + l)),
            })
            .collect();
        TemporalKG::new(entities, registry, relations).unwrap()
    })
}

proptest! {
    #[test]
    fn snapshot_partitions_valid_relations(kg in random_graph(), at in 0i64..1100) {
        let at = day(at);
        let snap = kg.snapshot(at);
        let valid = kg.relations().iter().filter(|r| match r.valid_to {
            None => true,
            Some(to) => r.valid_from <= at && at < to,
        }).count();
        prop_assert_eq!(snap.len(), valid);
        prop_assert!(snap.static_edges.iter().all(|r| r.valid_to.is_none()));
        prop_assert!(snap.temporal_edges.iter().all(|r| r.valid_to.is_some()));
    }

    #[test]
    fn filter_is_idempotent_and_commutes_with_snapshot(kg in random_graph(), at in 0i64..1100, mask in 0u8..8) {
        let removed: Vec<&str> = ["A", "B", "C"].iter().enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| *n).collect();
        let once = kg.filter_relations(&removed).unwrap();
        prop_assert_eq!(&once.filter_relations(&removed).unwrap(), &once);

        let at = day(at);
        let ids: Vec<u32> = removed.iter().map(|n| kg.relation_type_id(n).unwrap()).collect();
        let lhs: Vec<_> = once.snapshot(at).edges().cloned().collect();
        let rhs: Vec<_> = kg.snapshot(at).edges().filter(|r| !ids.contains(&r.relation_type)).cloned().collect();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn monthly_expansion_matches_day_scan(from in 0i64..900, len in 1i64..400) {
        let entities = vec![Entity::new(0, &["Company"], "A"), Entity::new(1, &["Company"], "B")];
        let registry = BTreeMap::from([(0, "R".to_string())]);
        let (a, b) = (day(from), day(from + len));
        let kg = TemporalKG::new(entities, registry, vec![RelationInstance::quintuple(0, 0, 1, a, b)]).unwrap();
        prop_assert_eq!(kg.expand_monthly().len(), months_by_scan(a, b));
    }

    #[test]
    fn record_round_trip_is_exact(kg in random_graph()) {
        let text = records_to_string(&kg);
        let back = read_records(text.as_bytes(), "mem").unwrap();
        prop_assert_eq!(records_to_string(&back), text);
        prop_assert_eq!(back, kg);
    }
}
