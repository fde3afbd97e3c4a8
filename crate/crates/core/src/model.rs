//! Domain types shared across the crate: catalog, sessions, masks,
//! explanation views, recommendation lists and explanation records.
//!
//! All values are plain owned data, immutable after construction and
//! `Send + Sync`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense 0-based item identifier.
pub type ItemId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    item_count: usize,
    labels: Option<Vec<String>>,
}

impl Catalog {
    pub fn new(item_count: usize) -> Result<Self> {
        if item_count == 0 {
            return invalid("catalog must contain at least one item");
        }
        Ok(Catalog {
            item_count,
            labels: None,
        })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut catalog = Catalog::new(labels.len())?;
        catalog.labels = Some(labels);
        Ok(catalog)
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn label(&self, item: ItemId) -> Option<&str> {
        self.labels.as_ref()?.get(item).map(String::as_str)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        item < self.item_count
    }

    pub fn check_items(&self, items: &[ItemId]) -> Result<()> {
        check_items(items, self.item_count)
    }
}

pub(crate) fn check_items(items: &[ItemId], item_count: usize) -> Result<()> {
    match items.iter().find(|&&i| i >= item_count) {
        Some(i) => invalid(format!("item id {i} outside catalog of {item_count} items")),
        None => Ok(()),
    }
}

/// An ordered sequence of interactions. Duplicates are allowed and the
/// order is significant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub items: Vec<ItemId>,
}

impl Session {
    pub fn new(id: impl Into<String>, items: Vec<ItemId>) -> Self {
        Session {
            id: id.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Binary inclusion vector over the positions of one session.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mask {
    bits: Vec<u8>,
}

impl Mask {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return invalid("mask bits must be 0 or 1");
        }
        Ok(Mask { bits })
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Mask {
            bits: bits.iter().map(|&b| b as u8).collect(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Mask { bits: vec![0; len] }
    }

    pub fn ones(len: usize) -> Self {
        Mask { bits: vec![1; len] }
    }

    /// Bit `i` of `code` becomes position `i` of the mask.
    pub fn from_code(code: u64, len: usize) -> Self {
        Mask {
            bits: (0..len).map(|i| ((code >> i) & 1) as u8).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_set(&self, position: usize) -> bool {
        self.bits[position] == 1
    }

    /// Explanation complexity: the number of selected positions.
    pub fn complexity(&self) -> usize {
        mask_complexity(self)
    }
}

pub fn mask_complexity(mask: &Mask) -> usize {
    mask.bits.iter().map(|&b| b as usize).sum()
}

/// A session split by a mask into the selected sub-session (the
/// explanation) and the remainder, both in original order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplanationView {
    pub selected: Vec<ItemId>,
    pub remainder: Vec<ItemId>,
}

pub fn apply_mask(items: &[ItemId], mask: &Mask) -> Result<ExplanationView> {
    if items.len() != mask.len() {
        return invalid(format!(
            "mask length {} does not match session length {}",
            mask.len(),
            items.len()
        ));
    }
    let mut selected = Vec::with_capacity(mask.complexity());
    let mut remainder = Vec::with_capacity(items.len() - mask.complexity());
    for (&item, &bit) in items.iter().zip(mask.bits()) {
        if bit == 1 {
            selected.push(item);
        } else {
            remainder.push(item);
        }
    }
    Ok(ExplanationView {
        selected,
        remainder,
    })
}

/// Ranked top-K list. Scores are non-increasing, ties resolved by
/// ascending item id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecList {
    pub k: usize,
    pub entries: Vec<(ItemId, f64)>,
}

impl RecList {
    pub fn items(&self) -> Vec<ItemId> {
        self.entries.iter().map(|&(i, _)| i).collect()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.entries.iter().any(|&(i, _)| i == item)
    }

    pub fn top(&self) -> Option<ItemId> {
        self.entries.first().map(|&(i, _)| i)
    }
}

/// The four reward terms for one finished episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_fe: f64,
    pub r_cfe: f64,
    pub r_sp: f64,
    pub r_rank: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub item: ItemId,
    pub include_prob: f64,
    pub action: u8,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub session_id: String,
    pub items: Vec<ItemId>,
    pub target: ItemId,
    pub mask: Mask,
    pub factual_ok: bool,
    pub counterfactual_ok: bool,
    pub complexity: usize,
    /// 1-based rank of the target over the full catalog given the selected items.
    pub rank: usize,
    pub reward: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceStep>>,
}

impl ExplanationRecord {
    pub fn conditions_met(&self) -> bool {
        self.factual_ok && self.counterfactual_ok
    }

    pub fn view(&self) -> Result<ExplanationView> {
        apply_mask(&self.items, &self.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn toy_mask_splits_session() {
        // v1..v5 as ids 1..5
        let items = vec![1, 2, 3, 4, 5];
        let mask = Mask::from_bits(vec![1, 0, 0, 1, 1]).unwrap();
        let view = apply_mask(&items, &mask).unwrap();
        assert_eq!(view.selected, vec![1, 4, 5]);
        assert_eq!(view.remainder, vec![2, 3]);
        assert_eq!(mask.complexity(), 3);
    }

    #[test]
    fn degenerate_masks() {
        let items = vec![3, 1, 4, 1];
        let none = apply_mask(&items, &Mask::zeros(4)).unwrap();
        assert!(none.selected.is_empty());
        assert_eq!(none.remainder, items);
        let all = apply_mask(&items, &Mask::ones(4)).unwrap();
        assert_eq!(all.selected, items);
        assert!(all.remainder.is_empty());
        assert_eq!(Mask::zeros(3).complexity(), 0);
        assert_eq!(Mask::ones(4).complexity(), 4);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let err = apply_mask(&[1, 2, 3], &Mask::ones(2)).unwrap_err();
        assert!(matches!(err, crate::Error::InvalidArgument(_)));
        assert!(Mask::from_bits(vec![0, 2]).is_err());
    }

    #[test]
    fn catalog_bounds() {
        assert!(Catalog::new(0).is_err());
        let c = Catalog::new(3).unwrap();
        assert!(c.check_items(&[0, 2]).is_ok());
        assert!(c.check_items(&[0, 3]).is_err());
    }

    #[test]
    fn code_maps_bit_i_to_position_i() {
        assert_eq!(Mask::from_code(0b110, 3).bits(), &[0, 1, 1]);
    }

    proptest! {
        #[test]
        fn view_partitions_positions(items in prop::collection::vec(0usize..20, 0..16), seed in any::<u64>()) {
            let bits: Vec<u8> = (0..items.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            let mask = Mask::from_bits(bits.clone()).unwrap();
            let view = apply_mask(&items, &mask).unwrap();
            prop_assert_eq!(view.selected.len() + view.remainder.len(), items.len());
            prop_assert_eq!(view.selected.len(), mask.complexity());
            // merging back by mask reproduces the original order
            let (mut s, mut r) = (view.selected.iter(), view.remainder.iter());
            let merged: Vec<usize> = bits.iter().map(|&b| if b == 1 { *s.next().unwrap() } else { *r.next().unwrap() }).collect();
            prop_assert_eq!(merged, items.clone());
            prop_assert_eq!(apply_mask(&items, &mask).unwrap(), view);
        }
    }
}
