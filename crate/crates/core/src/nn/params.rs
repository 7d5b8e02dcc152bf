//! Flat parameter storage with a named layout.
//!
//! Every model in the crate, from a dense network to the identity realization
//! of the quadratic suite, exposes its parameters as a [`ParamVector`]: one
//! contiguous `f64` buffer plus an ordered list of named segments. Merging,
//! task-vector arithmetic and checkpointing all operate on this form.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named segment of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of uniquely named segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayoutEntry>", into = "Vec<LayoutEntry>")]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    offsets: Vec<usize>,
}

impl TryFrom<Vec<LayoutEntry>> for Layout {
    type Error = Error;

    fn try_from(entries: Vec<LayoutEntry>) -> Result<Self> {
        Layout::new(entries)
    }
}

impl From<Layout> for Vec<LayoutEntry> {
    fn from(layout: Layout) -> Self {
        layout.entries
    }
}

impl Layout {
    pub fn new(entries: Vec<LayoutEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for entry in &entries {
            if !seen.insert(entry.name.as_str()) {
                return Err(Error::Layout(format!(
                    "duplicate layer name `{}`",
                    entry.name
                )));
            }
        }
        let mut offsets = Vec::with_capacity(entries.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for entry in &entries {
            acc += entry.len();
            offsets.push(acc);
        }
        Ok(Self { entries, offsets })
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn range_at(&self, index: usize) -> Range<usize> {
        self.offsets[index]..self.offsets[index + 1]
    }

    pub fn range_of(&self, name: &str) -> Result<Range<usize>> {
        let idx = self
            .position(name)
            .ok_or_else(|| Error::Selector(name.to_string()))?;
        Ok(self.range_at(idx))
    }

    /// The layout restricted to `names`, kept in this layout's order.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Layout> {
        for name in names {
            if !self.contains(name.as_ref()) {
                return Err(Error::Selector(name.as_ref().to_string()));
            }
        }
        let keep: HashSet<&str> = names.iter().map(|n| n.as_ref()).collect();
        Layout::new(
            self.entries
                .iter()
                .filter(|e| keep.contains(e.name.as_str()))
                .cloned()
                .collect(),
        )
    }

    /// Name of the first entry at which two layouts disagree, if any.
    pub fn first_difference(&self, other: &Layout) -> Option<String> {
        let n = self.entries.len().max(other.entries.len());
        (0..n).find_map(|i| match (self.entries.get(i), other.entries.get(i)) {
            (Some(a), Some(b)) if a == b => None,
            (Some(a), _) => Some(a.name.clone()),
            (None, Some(b)) => Some(b.name.clone()),
            (None, None) => None,
        })
    }

    pub(crate) fn ensure_same(&self, other: &Layout) -> Result<()> {
        match self.first_difference(other) {
            None => Ok(()),
            Some(name) => Err(Error::Layout(format!(
                "layouts differ starting at layer `{name}`"
            ))),
        }
    }
}

/// Real-valued parameters with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if layout.total_len() != values.len() {
            return Err(Error::Layout(format!(
                "layout describes {} values but {} were given",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let range = self.layout.range_of(name)?;
        Ok(&self.values[range])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self.layout.range_of(name)?;
        Ok(&mut self.values[range])
    }

    /// Iterates `(entry, values)` pairs in layout order.
    pub fn segments(&self) -> impl Iterator<Item = (&LayoutEntry, &[f64])> {
        self.layout
            .entries()
            .iter()
            .enumerate()
            .map(move |(i, e)| (e, &self.values[self.layout.range_at(i)]))
    }

    /// Copy of the selected segments, in layout order.
    pub fn restrict<S: AsRef<str>>(&self, names: &[S]) -> Result<ParamVector> {
        let layout = self.layout.subset(names)?;
        let mut values = Vec::with_capacity(layout.total_len());
        for name in layout.names() {
            values.extend_from_slice(self.segment(name)?);
        }
        ParamVector::new(layout, values)
    }

    /// Overwrites the segment `name` with `values`.
    pub fn set_segment(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let dst = self.segment_mut(name)?;
        if dst.len() != values.len() {
            return Err(Error::shape(
                name,
                format!("expected {} values, got {}", dst.len(), values.len()),
            ));
        }
        dst.copy_from_slice(values);
        Ok(())
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.layout.ensure_same(&other.layout)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    /// Euclidean distance restricted to `names` (all segments when `None`).
    pub fn distance(&self, other: &ParamVector, names: Option<&[String]>) -> Result<f64> {
        self.layout.ensure_same(&other.layout)?;
        let sq = match names {
            None => sq_dist(&self.values, &other.values),
            Some(names) => {
                let mut acc = 0.0;
                for name in names {
                    acc += sq_dist(self.segment(name)?, other.segment(name)?);
                }
                acc
            }
        };
        Ok(sq.sqrt())
    }

    /// FNV-1a digest of the raw bit patterns. Equal digests on equal layouts
    /// mean the vectors are bit-identical (modulo hash collisions).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Layout {
        Layout::new(vec![
            LayoutEntry::new("a", vec![2, 3]),
            LayoutEntry::new("b", vec![4]),
        ])
        .unwrap()
    }

    #[test]
    fn total_len_counts_all_entries() {
        assert_eq!(layout().total_len(), 10);
        assert_eq!(layout().range_of("b").unwrap(), 6..10);
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Layout::new(vec![
            LayoutEntry::new("a", vec![1]),
            LayoutEntry::new("a", vec![2]),
        ]);
        assert!(matches!(err, Err(Error::Layout(_))));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            ParamVector::new(layout(), vec![0.0; 9]),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn restrict_keeps_layout_order() {
        let v = ParamVector::new(layout(), (0..10).map(f64::from).collect()).unwrap();
        let r = v.restrict(&["b", "a"]).unwrap();
        assert_eq!(r.layout().names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(r.values(), v.values());
        assert!(matches!(v.restrict(&["zz"]), Err(Error::Selector(_))));
    }

    #[test]
    fn first_difference_names_layer() {
        let other = Layout::new(vec![
            LayoutEntry::new("a", vec![2, 3]),
            LayoutEntry::new("c", vec![4]),
        ])
        .unwrap();
        assert_eq!(layout().first_difference(&other).as_deref(), Some("b"));
        assert_eq!(layout().first_difference(&layout()), None);
    }

    #[test]
    fn layout_serde_validates() {
        let json = r#"[{"name":"a","shape":[1]},{"name":"a","shape":[1]}]"#;
        assert!(serde_json::from_str::<Layout>(json).is_err());
        let l: Layout = serde_json::from_str(&serde_json::to_string(&layout()).unwrap()).unwrap();
        assert_eq!(l, layout());
    }
}
