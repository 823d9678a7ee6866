//! Ground-truth data model: tool identifiers, deduplicated trajectories and
//! trajectory datasets.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Separator between the API name and the tool name in a canonical id.
pub const ID_SEPARATOR: &str = "::";

/// Canonical tool identifier. Ordering and equality are byte-wise, which is
/// also the tie-breaking order used everywhere a score tie occurs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ToolId(String);

impl ToolId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("tool id must be non-empty"));
        }
        Ok(ToolId(id))
    }

    /// Joins an API name and a tool name with [`ID_SEPARATOR`].
    pub fn canonical(api: &str, tool: &str) -> Result<Self> {
        let mut id = String::with_capacity(api.len() + ID_SEPARATOR.len() + tool.len());
        id.push_str(api);
        id.push_str(ID_SEPARATOR);
        id.push_str(tool);
        ToolId::new(id)
    }

    /// For ids echoed back in errors, where the text came from a lookup key.
    pub(crate) fn unchecked(id: &str) -> Self {
        ToolId(id.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl Borrow<str> for ToolId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for ToolId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<&str> for ToolId {
    type Error = Error;

    fn try_from(value: &str) -> Result<Self> {
        ToolId::new(value.to_owned())
    }
}

impl TryFrom<String> for ToolId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        ToolId::new(value)
    }
}

/// Removes repeated tools, keeping the first occurrence of each.
pub fn dedup_first_occurrence(tools: impl IntoIterator<Item = ToolId>) -> Vec<ToolId> {
    let mut seen = BTreeSet::new();
    tools
        .into_iter()
        .filter(|tool| seen.insert(tool.clone()))
        .collect()
}

/// A query paired with the ordered, duplicate-free tool sequence that solved
/// it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    query: String,
    tools: Vec<ToolId>,
    source_index: usize,
}

impl Trajectory {
    /// Builds a trajectory from a raw invocation log, deduplicating it.
    /// Fails when the log is empty.
    pub fn new(
        query: impl Into<String>,
        raw_tools: impl IntoIterator<Item = ToolId>,
        source_index: usize,
    ) -> Result<Self> {
        let tools = dedup_first_occurrence(raw_tools);
        if tools.is_empty() {
            return Err(Error::invalid("trajectory has no tools"));
        }
        Ok(Trajectory {
            query: query.into(),
            tools,
            source_index,
        })
    }

    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn tools(&self) -> &[ToolId] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }
}

/// An immutable collection of trajectories and the union of their tools.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrajectoryDataset {
    trajectories: Vec<Trajectory>,
    vocabulary: BTreeSet<ToolId>,
}

/// Result of assembling a dataset from raw records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub dataset: TrajectoryDataset,
    /// Records dropped because their tool list was empty.
    pub skipped_empty: usize,
}

impl TrajectoryDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        let vocabulary = trajectories
            .iter()
            .flat_map(|t| t.tools.iter().cloned())
            .collect();
        TrajectoryDataset {
            trajectories,
            vocabulary,
        }
    }

    /// Assembles a dataset from `(query, raw tool list)` records. Records with
    /// an empty tool list are skipped and counted; `source_index` is the
    /// record's position in the input.
    pub fn from_records<I, T>(records: I) -> Result<Assembled>
    where
        I: IntoIterator<Item = (String, T)>,
        T: IntoIterator<Item = ToolId>,
    {
        let mut trajectories = Vec::new();
        let mut skipped_empty = 0;
        for (index, (query, tools)) in records.into_iter().enumerate() {
            match Trajectory::new(query, tools, index) {
                Ok(t) => trajectories.push(t),
                Err(_) => skipped_empty += 1,
            }
        }
        if trajectories.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Assembled {
            dataset: TrajectoryDataset::new(trajectories),
            skipped_empty,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn vocabulary(&self) -> &BTreeSet<ToolId> {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    /// Splits into `(train, validation)` with `round(n * validation_fraction)`
    /// trajectories (at least one, at most `n - 1`) drawn into validation by a
    /// seeded shuffle. Both parts keep the input order.
    pub fn split_train_validation(
        &self,
        validation_fraction: f64,
        seed: u64,
    ) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::invalid(alloc::format!(
                "validation fraction must lie in (0, 1), got {validation_fraction}"
            )));
        }
        let n = self.trajectories.len();
        if n < 2 {
            return Err(Error::invalid(
                "splitting needs at least two trajectories",
            ));
        }
        let validation_size = (libm::round(n as f64 * validation_fraction) as usize).clamp(1, n - 1);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::seeded(seed));
        let mut in_validation = alloc::vec![false; n];
        for &index in &order[..validation_size] {
            in_validation[index] = true;
        }

        let (mut train, mut validation) = (Vec::new(), Vec::new());
        for (trajectory, &held_out) in self.trajectories.iter().zip(&in_validation) {
            if held_out {
                validation.push(trajectory.clone());
            } else {
                train.push(trajectory.clone());
            }
        }
        Ok((TrajectoryDataset::new(train), TrajectoryDataset::new(validation)))
    }
}

impl<'a> IntoIterator for &'a TrajectoryDataset {
    type Item = &'a Trajectory;
    type IntoIter = core::slice::Iter<'a, Trajectory>;

    fn into_iter(self) -> Self::IntoIter {
        self.trajectories.iter()
    }
}

#[cfg(test)]
pub(crate) fn ids(names: &[&str]) -> Vec<ToolId> {
    names.iter().map(|n| ToolId::new(*n).unwrap()).collect()
}
