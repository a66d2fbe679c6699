use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u64;
pub type RelationTypeId = u32;

/// `valid_from` of every static triple.
pub const STATIC_SENTINEL: NaiveDate = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub labels: BTreeSet<String>,
    pub name: String,
    pub source_element_id: String,
    /// Node properties other than `name`, kept verbatim.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub properties: serde_json::Map<String, serde_json::Value>,
}

impl Entity {
    pub fn new(id: EntityId, labels: &[&str], name: &str) -> Self {
        Self {
            id,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            name: name.to_string(),
            source_element_id: id.to_string(),
            properties: serde_json::Map::new(),
        }
    }

    /// Lexicographically smallest label; the entity's type for event tuples
    /// and node-type projections.
    pub fn primary_label(&self) -> &str {
        self.labels.iter().next().map(String::as_str).unwrap_or("")
    }

    pub fn property_str(&self, key: &str) -> Option<String> {
        match self.properties.get(key)? {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    /// Static `(h, r, t)`: always valid.
    Triple,
    /// Valid for a single day.
    Quadruple,
    /// Valid over an interval.
    Quintuple,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationInstance {
    pub head: EntityId,
    pub tail: EntityId,
    pub relation_type: RelationTypeId,
    pub valid_from: NaiveDate,
    /// Exclusive end; `None` is open-ended (static triples only).
    pub valid_to: Option<NaiveDate>,
    /// Source-specific relationship id (e.g. a Wikidata property).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_id: Option<String>,
}

impl RelationInstance {
    pub fn triple(head: EntityId, relation_type: RelationTypeId, tail: EntityId) -> Self {
        Self {
            head,
            tail,
            relation_type,
            valid_from: STATIC_SENTINEL,
            valid_to: None,
            property_id: None,
        }
    }

    pub fn quadruple(head: EntityId, relation_type: RelationTypeId, tail: EntityId, day: NaiveDate) -> Self {
        Self {
            head,
            tail,
            relation_type,
            valid_from: day,
            valid_to: Some(next_day(day)),
            property_id: None,
        }
    }

    pub fn quintuple(
        head: EntityId,
        relation_type: RelationTypeId,
        tail: EntityId,
        from: NaiveDate,
        to: NaiveDate,
    ) -> Self {
        Self {
            head,
            tail,
            relation_type,
            valid_from: from,
            valid_to: Some(to),
            property_id: None,
        }
    }

    /// Kind follows from the interval shape alone.
    pub fn kind(&self) -> RelationKind {
        match self.valid_to {
            None => RelationKind::Triple,
            Some(to) if to == next_day(self.valid_from) => RelationKind::Quadruple,
            Some(_) => RelationKind::Quintuple,
        }
    }

    pub fn is_static(&self) -> bool {
        self.valid_to.is_none()
    }

    /// Temporal relations are valid on `[valid_from, valid_to)`; static ones
    /// always.
    pub fn valid_at(&self, at: NaiveDate) -> bool {
        match self.valid_to {
            None => true,
            Some(to) => self.valid_from <= at && at < to,
        }
    }

    /// The portable-record projection `(head, tail, relation, from, to)`.
    pub fn key(&self) -> (EntityId, EntityId, RelationTypeId, NaiveDate, Option<NaiveDate>) {
        (self.head, self.tail, self.relation_type, self.valid_from, self.valid_to)
    }
}

pub(crate) fn next_day(d: NaiveDate) -> NaiveDate {
    d.checked_add_days(Days::new(1)).expect("date overflow")
}

/// Calendar month, used as the event timestamp for the Hawkes trainer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(d: NaiveDate) -> Self {
        Self {
            year: d.year(),
            month: d.month(),
        }
    }

    /// Months since year 0; differences give lags in months.
    pub fn index(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_index(i: i64) -> Self {
        Self {
            year: i.div_euclid(12) as i32,
            month: (i.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn succ(self) -> Self {
        Self::from_index(self.index() + 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// One month of a relation's validity, as seen by the Hawkes trainer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventTuple {
    pub head: EntityId,
    pub head_type: String,
    pub tail: EntityId,
    pub tail_type: String,
    pub relation: RelationTypeId,
    pub timestamp: YearMonth,
}

/// Relations valid at one instant, split into the static and temporal parts.
#[derive(Clone, Debug, Default)]
pub struct Snapshot<'a> {
    pub at: Option<NaiveDate>,
    pub static_edges: Vec<&'a RelationInstance>,
    pub temporal_edges: Vec<&'a RelationInstance>,
}

impl<'a> Snapshot<'a> {
    pub fn len(&self) -> usize {
        self.static_edges.len() + self.temporal_edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edges(&self) -> impl Iterator<Item = &'a RelationInstance> + '_ {
        self.static_edges.iter().chain(&self.temporal_edges).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub triples: usize,
    pub quadruples: usize,
    pub quintuples: usize,
    pub entities: usize,
    pub relations: usize,
    pub entity_types: usize,
    pub relation_types: usize,
}

/// Temporal knowledge graph: immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalKG {
    entities: BTreeMap<EntityId, Entity>,
    relation_types: BTreeMap<RelationTypeId, String>,
    relations: Vec<RelationInstance>,
}

impl TemporalKG {
    /// Validates endpoints, relation-type ids and intervals, then sorts
    /// relations chronologically.
    pub fn new(
        entities: impl IntoIterator<Item = Entity>,
        relation_types: BTreeMap<RelationTypeId, String>,
        relations: Vec<RelationInstance>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entities {
            if e.labels.is_empty() {
                return Err(Error::Integrity(format!("entity {} has no labels", e.id)));
            }
            if let Some(prev) = map.insert(e.id, e) {
                return Err(Error::Integrity(format!("duplicate entity identity {}", prev.id)));
            }
        }
        let mut names = BTreeSet::new();
        for name in relation_types.values() {
            if !names.insert(name.as_str()) {
                return Err(Error::Integrity(format!("relation type {name} registered twice")));
            }
        }
        for (i, r) in relations.iter().enumerate() {
            for end in [r.head, r.tail] {
                if !map.contains_key(&end) {
                    return Err(Error::Integrity(format!(
                        "relation {i} references unknown entity {end}"
                    )));
                }
            }
            if !relation_types.contains_key(&r.relation_type) {
                return Err(Error::Integrity(format!(
                    "relation {i} has unknown relation type id {}",
                    r.relation_type
                )));
            }
            if let Some(to) = r.valid_to {
                if to < r.valid_from {
                    return Err(Error::Integrity(format!(
                        "relation {i} ends ({to}) before it starts ({})",
                        r.valid_from
                    )));
                }
            }
        }
        let mut relations = relations;
        relations.sort_by(|a, b| {
            (a.valid_from, a.head, a.tail, a.relation_type, a.valid_to, &a.property_id)
                .cmp(&(b.valid_from, b.head, b.tail, b.relation_type, b.valid_to, &b.property_id))
        });
        Ok(Self {
            entities: map,
            relation_types,
            relations,
        })
    }

    pub fn entities(&self) -> &BTreeMap<EntityId, Entity> {
        &self.entities
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(&id)
    }

    pub fn relation_types(&self) -> &BTreeMap<RelationTypeId, String> {
        &self.relation_types
    }

    pub fn relation_type_id(&self, name: &str) -> Option<RelationTypeId> {
        self.relation_types
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(&id, _)| id)
    }

    pub fn relation_type_name(&self, id: RelationTypeId) -> Option<&str> {
        self.relation_types.get(&id).map(String::as_str)
    }

    /// Number of relation-type slots (max id + 1) for embedding tables.
    pub fn num_relation_slots(&self) -> usize {
        self.relation_types.keys().next_back().map_or(0, |&m| m as usize + 1)
    }

    /// Relations sorted ascending by `valid_from`.
    pub fn relations(&self) -> &[RelationInstance] {
        &self.relations
    }

    /// Distinct primary entity types, sorted.
    pub fn entity_types(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entities.values().map(Entity::primary_label).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let temporal = self.relations.iter().filter(|r| !r.is_static());
        let from = temporal.clone().map(|r| r.valid_from).min()?;
        let to = temporal.filter_map(|r| r.valid_to).max()?;
        Some((from, to))
    }

    pub fn stats(&self) -> GraphStats {
        let mut s = GraphStats {
            triples: 0,
            quadruples: 0,
            quintuples: 0,
            entities: self.entities.len(),
            relations: self.relations.len(),
            entity_types: self
                .entities
                .values()
                .flat_map(|e| e.labels.iter())
                .collect::<BTreeSet<_>>()
                .len(),
            relation_types: self.relation_types.len(),
        };
        for r in &self.relations {
            match r.kind() {
                RelationKind::Triple => s.triples += 1,
                RelationKind::Quadruple => s.quadruples += 1,
                RelationKind::Quintuple => s.quintuples += 1,
            }
        }
        s
    }

    pub(crate) fn with_relations(&self, relations: Vec<RelationInstance>) -> Self {
        Self {
            entities: self.entities.clone(),
            relation_types: self.relation_types.clone(),
            relations,
        }
    }
}
