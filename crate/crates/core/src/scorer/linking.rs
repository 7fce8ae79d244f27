use std::collections::BTreeSet;

use crate::{Error, Result};

/// Per-mention candidate lists and their linking probabilities, stored flat. Slot `s` of
/// mention `m` lives at `starts[m] + s`. Mentions without candidates have empty rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkingMatrix {
    candidates: Vec<Vec<usize>>,
    starts: Vec<usize>,
    values: Vec<f64>,
}

impl LinkingMatrix {
    /// Layout only, with every probability set to zero.
    pub fn layout(candidates: Vec<Vec<usize>>) -> Result<Self> {
        let mut starts = Vec::with_capacity(candidates.len() + 1);
        let mut total = 0;
        for (m, row) in candidates.iter().enumerate() {
            let unique: BTreeSet<_> = row.iter().collect();
            if unique.len() != row.len() {
                return Err(Error::Input(format!("mention {m} lists a candidate twice")));
            }
            starts.push(total);
            total += row.len();
        }
        starts.push(total);
        Ok(Self {
            candidates,
            starts,
            values: vec![0.0; total],
        })
    }

    pub fn with_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Input(format!(
                "{} linking values for {} slots",
                values.len(),
                self.values.len()
            )));
        }
        self.values = values;
        Ok(self)
    }

    pub fn num_mentions(&self) -> usize {
        self.candidates.len()
    }

    pub fn num_slots(&self) -> usize {
        self.values.len()
    }

    pub fn candidates(&self, mention: usize) -> &[usize] {
        &self.candidates[mention]
    }

    /// `None` for a zero-candidate mention.
    pub fn row(&self, mention: usize) -> Option<&[f64]> {
        let (a, b) = (self.starts[mention], self.starts[mention + 1]);
        (a < b).then(|| &self.values[a..b])
    }

    pub fn is_absent(&self, mention: usize) -> bool {
        self.candidates[mention].is_empty()
    }

    pub fn slot(&self, mention: usize, entity: usize) -> Option<usize> {
        self.candidates[mention]
            .iter()
            .position(|&e| e == entity)
            .map(|s| self.starts[mention] + s)
    }

    /// `None` when `entity` is not a candidate of `mention`.
    pub fn probability(&self, mention: usize, entity: usize) -> Option<f64> {
        self.slot(mention, entity).map(|s| self.values[s])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Segment boundaries over the flat slots, skipping empty rows.
    pub fn segment_offsets(&self) -> Vec<usize> {
        let mut offsets: Vec<usize> = Vec::with_capacity(self.starts.len());
        for &s in &self.starts {
            if offsets.last() != Some(&s) {
                offsets.push(s);
            }
        }
        offsets
    }

    /// Entities of each slot, in slot order.
    pub fn slot_entities(&self) -> Vec<usize> {
        self.candidates.iter().flatten().copied().collect()
    }

    /// Mentions with at least one candidate.
    pub fn active_mentions(&self) -> Vec<usize> {
        (0..self.num_mentions()).filter(|&m| !self.is_absent(m)).collect()
    }

    /// Union of all candidate lists, ascending.
    pub fn entities(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// `(mention, slot)` pairs listing `entity`, by mention.
    pub fn mentions_of(&self, entity: usize) -> Vec<(usize, usize)> {
        (0..self.num_mentions())
            .filter_map(|m| self.slot(m, entity).map(|s| (m, s)))
            .collect()
    }
}
