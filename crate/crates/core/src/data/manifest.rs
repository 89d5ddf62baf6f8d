//! Labelled sample records and the stratified train/val/test split.

use std::path::Path;

use mvkd_tensor::{Rng, Stream};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown split {s:?}; expected train, val or test")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub source_id: String,
    pub label: usize,
    pub split: Split,
}

/// Class names (sorted), one entry per sample with its split, and the seed
/// and fractions that produced the split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<Entry>,
    pub seed: u64,
    /// Train, val and test fractions.
    pub split_fractions: [f64; 3],
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.2, 0.1];

/// Index of the split shuffle, kept apart from the per-epoch `[epoch]` ones.
const SPLIT_STREAM: u64 = u64::MAX;

impl DatasetManifest {
    /// A manifest with every entry in the train split.
    pub fn unsplit(class_names: Vec<String>, samples: Vec<(String, usize)>) -> Self {
        let entries = samples
            .into_iter()
            .map(|(source_id, label)| Entry {
                source_id,
                label,
                split: Split::Train,
            })
            .collect();
        DatasetManifest {
            class_names,
            entries,
            seed: 0,
            split_fractions: [1.0, 0.0, 0.0],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Positions of the entries in `split`, in entry order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    /// `counts[class][split]` in `Split::ALL` order.
    pub fn split_counts(&self) -> Vec<[usize; 3]> {
        let mut counts = vec![[0; 3]; self.num_classes()];
        for e in &self.entries {
            counts[e.label][e.split as usize] += 1;
        }
        counts
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }
}

/// Per-class counts `(train, val, test)` for a class of `n` items:
/// `floor(n * val)` to val, `floor(n * test)` to test, the rest to train.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> (usize, usize, usize) {
    // the epsilon keeps products like 30 * 0.1 = 3.0000000000000004 and
    // 0.7 * 10 = 6.999999999999999 on the integer they denote
    let take = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
    let val = take(fractions[1]);
    let test = take(fractions[2]);
    (n - val - test, val, test)
}

/// Stratified split: within each class a seeded shuffle, then the floor rule
/// of [`split_sizes`]. Counts depend only on class sizes; the seed only
/// changes membership.
pub fn split_dataset(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if fractions.iter().any(|&f| !(f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut out = manifest.clone();
    out.seed = seed;
    out.split_fractions = fractions;
    let root = Rng::new(seed);
    for class in 0..manifest.num_classes() {
        let mut members: Vec<usize> = (0..out.entries.len()).filter(|&i| out.entries[i].label == class).collect();
        if members.len() < 3 {
            return Err(Error::StratificationError(format!(
                "class {:?} has {} items; at least 3 are needed for a three-way split",
                manifest.class_names[class],
                members.len()
            )));
        }
        root.substream(Stream::Shuffle, &[SPLIT_STREAM, class as u64]).shuffle(&mut members);
        let (_, val, test) = split_sizes(members.len(), fractions);
        for (k, &i) in members.iter().enumerate() {
            out.entries[i].split = if k < val {
                Split::Val
            } else if k < val + test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_rule_examples() {
        assert_eq!(split_sizes(100, DEFAULT_FRACTIONS), (70, 20, 10));
        assert_eq!(split_sizes(107, DEFAULT_FRACTIONS), (76, 21, 10));
        assert_eq!(split_sizes(10, DEFAULT_FRACTIONS), (7, 2, 1));
        assert_eq!(split_sizes(30, DEFAULT_FRACTIONS), (21, 6, 3));
    }

    #[test]
    fn split_names_roundtrip() {
        for s in Split::ALL {
            assert_eq!(Split::parse(s.as_str()).unwrap(), s);
        }
        assert!(Split::parse("dev").is_err());
    }
}
