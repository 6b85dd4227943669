use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphSplit;

/// Sampled normal accounts per phishing account.
pub const NEGATIVES_PER_POSITIVE: usize = 3;
pub const TRAIN_FRACTION: f64 = 0.5;
pub const VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub split_index: usize,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub partition: BTreeMap<String, Part>,
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(account, is_phishing)` for every labeled account in `part`, in
    /// positives-then-negatives order.
    pub fn examples(&self, part: Part) -> Vec<(&str, bool)> {
        let pos = self.positives.iter().map(|a| (a.as_str(), true));
        let neg = self.negatives.iter().map(|a| (a.as_str(), false));
        pos.chain(neg).filter(|(a, _)| self.partition[*a] == part).collect()
    }

    pub fn count(&self, part: Part) -> usize {
        self.partition.values().filter(|&&p| p == part).count()
    }
}

/// Part sizes for `n` items: `round(0.5n)`, `round(0.2n)`, remainder.
pub fn part_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let val = ((n as f64 * VAL_FRACTION).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn assign<R: Rng + ?Sized>(ids: &[String], rng: &mut R, out: &mut BTreeMap<String, Part>) {
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(rng);
    let (train, val, _) = part_sizes(ids.len());
    for (i, id) in order.into_iter().enumerate() {
        let part = if i < train {
            Part::Train
        } else if i < train + val {
            Part::Val
        } else {
            Part::Test
        };
        out.insert(id.clone(), part);
    }
}

/// Labels every phishing account present in `split` and samples three times
/// as many normal accounts uniformly from the rest. Each class is split
/// 50/20/30 into train/val/test on its own.
pub fn sample_labels<R: Rng + ?Sized>(
    split: &GraphSplit,
    phishing: &BTreeSet<String>,
    rng: &mut R,
) -> Result<LabelSet> {
    let (positives, normal): (Vec<&String>, Vec<&String>) =
        split.node_ids.iter().partition(|id| phishing.contains(*id));
    if positives.is_empty() {
        return Err(Error::NoPositiveLabels(split.split_index));
    }
    let want = (NEGATIVES_PER_POSITIVE * positives.len()).min(normal.len());
    let mut picked: Vec<usize> = sample(rng, normal.len(), want).into_vec();
    picked.sort_unstable();
    let positives: Vec<String> = positives.into_iter().cloned().collect();
    let negatives: Vec<String> = picked.into_iter().map(|i| normal[i].clone()).collect();
    let mut partition = BTreeMap::new();
    assign(&positives, rng, &mut partition);
    assign(&negatives, rng, &mut partition);
    Ok(LabelSet {
        split_index: split.split_index,
        positives,
        negatives,
        partition,
    })
}
