//! Temporal knowledge graph: storage, file formats, snapshots and event
//! expansion.

mod json;
mod ops;
mod records;
mod types;

pub use json::{
    load_graph, load_nodes_json, load_relations_json, nodes_to_json, parse_nodes_json, parse_relations_json,
    parse_timestamp, relations_to_json, save_graph_json, RelationSet,
};
pub use ops::months_touched_by_scan;
pub use records::{load_records, read_records, records_to_string, save_records, write_records, RECORDS_FORMAT};
pub use types::{
    Entity, EntityId, EventTuple, GraphStats, RelationInstance, RelationKind, RelationTypeId, Snapshot, TemporalKG,
    YearMonth, STATIC_SENTINEL,
};
