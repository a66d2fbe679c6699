use std::collections::BTreeSet;

use chrono::NaiveDate;

use super::types::{next_day, EventTuple, Snapshot, TemporalKG, YearMonth};
use crate::error::{Error, Result};

impl TemporalKG {
    /// Static triples plus the temporal relations valid at `at`
    /// (`valid_from <= at < valid_to`).
    pub fn snapshot(&self, at: NaiveDate) -> Snapshot<'_> {
        let mut snap = Snapshot {
            at: Some(at),
            ..Default::default()
        };
        // relations are sorted by valid_from, so nothing past `at` can be valid
        let end = self.relations().partition_point(|r| r.valid_from <= at);
        for r in &self.relations()[..end] {
            if r.is_static() {
                snap.static_edges.push(r);
            } else if r.valid_at(at) {
                snap.temporal_edges.push(r);
            }
        }
        snap
    }

    /// Only the static subgraph.
    pub fn static_snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            at: None,
            static_edges: self.relations().iter().filter(|r| r.is_static()).collect(),
            temporal_edges: Vec::new(),
        }
    }

    /// Counterfactual graph with every relation of the named types removed.
    /// Entities and the relation-type registry are kept as they are.
    pub fn filter_relations<S: AsRef<str>>(&self, removed_types: &[S]) -> Result<TemporalKG> {
        let mut ids = BTreeSet::new();
        for name in removed_types {
            let name = name.as_ref();
            let id = self.relation_type_id(name).ok_or_else(|| {
                Error::Validation(format!("unknown relation type {name:?} in removal list"))
            })?;
            ids.insert(id);
        }
        let kept = self
            .relations()
            .iter()
            .filter(|r| !ids.contains(&r.relation_type))
            .cloned()
            .collect();
        Ok(self.with_relations(kept))
    }

    /// One event per relation per calendar month intersecting its validity
    /// interval. Static triples produce nothing.
    pub fn expand_monthly(&self) -> Vec<EventTuple> {
        let mut out = Vec::new();
        for r in self.relations() {
            let Some(to) = r.valid_to else { continue };
            if to <= r.valid_from {
                continue;
            }
            let last_day = to.pred_opt().expect("date underflow");
            let (first, last) = (YearMonth::of(r.valid_from), YearMonth::of(last_day));
            let head = &self.entities()[&r.head];
            let tail = &self.entities()[&r.tail];
            for idx in first.index()..=last.index() {
                out.push(EventTuple {
                    head: r.head,
                    head_type: head.primary_label().to_string(),
                    tail: r.tail,
                    tail_type: tail.primary_label().to_string(),
                    relation: r.relation_type,
                    timestamp: YearMonth::from_index(idx),
                });
            }
        }
        out.sort_by(|a, b| (a.timestamp, a.head, a.tail, a.relation).cmp(&(b.timestamp, b.head, b.tail, b.relation)));
        out
    }
}

/// Day-by-day count of distinct months touched by `[from, to)`.
#[doc(hidden)]
pub fn months_touched_by_scan(from: NaiveDate, to: NaiveDate) -> usize {
    let mut months = BTreeSet::new();
    let mut d = from;
    while d < to {
        months.insert(YearMonth::of(d));
        d = next_day(d);
    }
    months.len()
}
