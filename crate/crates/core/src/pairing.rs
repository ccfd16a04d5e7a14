//! Fixation-index assignment and construction of the paired text/image dataset.
//!
//! Indices are ranked per modality inside each (participant, page) session:
//! the k-th text first fixated in a session pairs with the k-th image first
//! fixated in the same session.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AttendedEvent, Modality};

/// How refixations on an already-indexed element are handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dedup {
    /// Only the first fixation on an element receives an index.
    #[default]
    FirstFixation,
    /// Every fixation receives a fresh index, so an element may hold several.
    EveryFixation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedAttention {
    pub participant_id: String,
    pub page_id: String,
    pub element_id: String,
    pub modality: Modality,
    pub fixation_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairRow {
    pub participant_id: String,
    pub page_id: String,
    pub fixation_index: u32,
    pub text_element: String,
    pub image_element: String,
}

/// Rows sorted by (participant, page, fixation index).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub rows: Vec<PairRow>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fixation_indices(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.fixation_index).collect()
    }
}

/// Rank elements by first fixation within each (participant, page, modality) stream.
///
/// Events must be onset-sorted within each session; sessions may interleave.
pub fn assign_fixation_indices(events: &[AttendedEvent], dedup: Dedup) -> Result<Vec<IndexedAttention>> {
    let mut last_onset: BTreeMap<(&str, &str), i64> = BTreeMap::new();
    let mut next_index: BTreeMap<(&str, &str, Modality), u32> = BTreeMap::new();
    let mut seen: HashSet<(&str, &str, &str)> = HashSet::new();
    let mut out = Vec::new();

    for ev in events {
        let session = (ev.participant_id.as_str(), ev.page_id.as_str());
        if let Some(prev) = last_onset.insert(session, ev.onset_ms) {
            if ev.onset_ms < prev {
                return Err(Error::UnsortedInput {
                    participant: ev.participant_id.clone(),
                    page: ev.page_id.clone(),
                });
            }
        }
        if dedup == Dedup::FirstFixation
            && !seen.insert((session.0, session.1, ev.element_id.as_str()))
        {
            continue;
        }
        let counter = next_index.entry((session.0, session.1, ev.modality)).or_insert(0);
        *counter += 1;
        out.push(IndexedAttention {
            participant_id: ev.participant_id.clone(),
            page_id: ev.page_id.clone(),
            element_id: ev.element_id.clone(),
            modality: ev.modality,
            fixation_index: *counter,
        });
    }
    Ok(out)
}

/// Pair the text and image holding the same fixation index in each session.
pub fn build_pairs(indexed: &[IndexedAttention]) -> PairedDataset {
    type Key<'a> = (&'a str, &'a str, u32);
    let mut texts: BTreeMap<Key, &str> = BTreeMap::new();
    let mut images: BTreeMap<Key, &str> = BTreeMap::new();
    for ia in indexed {
        let key = (ia.participant_id.as_str(), ia.page_id.as_str(), ia.fixation_index);
        let slot = match ia.modality {
            Modality::Text => &mut texts,
            Modality::Image => &mut images,
        };
        // Under EveryFixation an index is still unique per stream; keep the first.
        slot.entry(key).or_insert(ia.element_id.as_str());
    }
    let rows = texts
        .iter()
        .filter_map(|(key, text)| {
            images.get(key).map(|image| PairRow {
                participant_id: key.0.to_string(),
                page_id: key.1.to_string(),
                fixation_index: key.2,
                text_element: text.to_string(),
                image_element: image.to_string(),
            })
        })
        .collect();
    PairedDataset { rows }
}

/// Fixation-index set of one modality in one session.
pub fn fi_set(indexed: &[IndexedAttention], participant: &str, page: &str, modality: Modality) -> BTreeSet<u32> {
    indexed
        .iter()
        .filter(|ia| ia.participant_id == participant && ia.page_id == page && ia.modality == modality)
        .map(|ia| ia.fixation_index)
        .collect()
}
