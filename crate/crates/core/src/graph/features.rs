use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::TransactionRecord;

/// Number of per-node attributes.
pub const N_ATTRS: usize = 17;

/// One node's unnormalized attributes, in this column order:
///
/// | col | attribute |
/// |-----|-----------|
/// | 0 | is smart contract (0/1) |
/// | 1, 2 | in-degree, out-degree (distinct counterparties) |
/// | 3, 4 | number of in-, out-transactions |
/// | 5, 6, 7 | total, in, out amount |
/// | 8, 9 | mean in, out amount |
/// | 10, 11, 12 | time span of all, in, out transactions |
/// | 13, 14 | in, out frequency: count / max(span, 1) |
/// | 15, 16 | fraction of in-, out-counterparties with ≥ 2 transactions |
pub type RawAttributes = [f64; N_ATTRS];

/// Columns passed through `ln(1 + x)` before standardization: counts,
/// amounts (including mean amounts) and time spans.
pub const LOG_COLUMNS: [usize; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];

/// Per-column statistics of a normalization pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub log_columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Default)]
struct Side {
    count: u64,
    sum: u128,
    t_min: u64,
    t_max: u64,
    per_counterparty: HashMap<u32, u32>,
}

impl Side {
    fn add(&mut self, counterparty: u32, value: u128, ts: u64) {
        if self.count == 0 {
            self.t_min = ts;
            self.t_max = ts;
        } else {
            self.t_min = self.t_min.min(ts);
            self.t_max = self.t_max.max(ts);
        }
        self.count += 1;
        self.sum = self.sum.saturating_add(value);
        *self.per_counterparty.entry(counterparty).or_default() += 1;
    }

    fn span(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            self.t_max - self.t_min
        }
    }

    fn repeated_fraction(&self) -> f64 {
        if self.per_counterparty.is_empty() {
            return 0.0;
        }
        let repeated = self.per_counterparty.values().filter(|&&c| c >= 2).count();
        repeated as f64 / self.per_counterparty.len() as f64
    }
}

#[derive(Default)]
struct Acc {
    contract: bool,
    inbound: Side,
    outbound: Side,
}

/// Raw attribute rows for `node_ids`, computed from the transactions whose
/// endpoints are both listed. Self-transfers are ignored; a direction with no
/// transactions yields zeros for all of its columns.
pub fn compute_node_attributes(txs: &[TransactionRecord], node_ids: &[String]) -> Vec<RawAttributes> {
    let index: HashMap<&str, u32> = node_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let mut acc: Vec<Acc> = (0..node_ids.len()).map(|_| Acc::default()).collect();
    for t in txs {
        if t.from_account == t.to_account {
            continue;
        }
        let (Some(&u), Some(&v)) = (
            index.get(t.from_account.as_str()),
            index.get(t.to_account.as_str()),
        ) else {
            continue;
        };
        acc[u as usize].contract |= t.from_is_contract;
        acc[v as usize].contract |= t.to_is_contract;
        acc[u as usize].outbound.add(v, t.value, t.timestamp);
        acc[v as usize].inbound.add(u, t.value, t.timestamp);
    }
    acc.par_iter().map(attributes_of).collect()
}

fn attributes_of(a: &Acc) -> RawAttributes {
    let (i, o) = (&a.inbound, &a.outbound);
    let mean = |s: &Side| {
        if s.count == 0 {
            0.0
        } else {
            s.sum as f64 / s.count as f64
        }
    };
    let all_span = match (i.count, o.count) {
        (0, 0) => 0,
        (0, _) => o.span(),
        (_, 0) => i.span(),
        _ => i.t_max.max(o.t_max) - i.t_min.min(o.t_min),
    };
    let freq = |s: &Side| s.count as f64 / s.span().max(1) as f64;
    [
        a.contract as u8 as f64,
        i.per_counterparty.len() as f64,
        o.per_counterparty.len() as f64,
        i.count as f64,
        o.count as f64,
        i.sum.saturating_add(o.sum) as f64,
        i.sum as f64,
        o.sum as f64,
        mean(i),
        mean(o),
        all_span as f64,
        i.span() as f64,
        o.span() as f64,
        freq(i),
        freq(o),
        i.repeated_fraction(),
        o.repeated_fraction(),
    ]
}

/// Applies `ln(1 + x)` to [`LOG_COLUMNS`] and standardizes every column but
/// the contract flag to zero mean and unit (population) variance. Columns
/// with no variance become all zeros.
pub fn normalize_attributes(raw: &[RawAttributes]) -> (Vec<RawAttributes>, NormStats) {
    let n = raw.len();
    let mut out: Vec<RawAttributes> = raw.to_vec();
    for row in &mut out {
        for &c in &LOG_COLUMNS {
            row[c] = row[c].ln_1p();
        }
    }
    let mut means = vec![0.0; N_ATTRS];
    let mut stds = vec![1.0; N_ATTRS];
    if n > 0 {
        for c in 1..N_ATTRS {
            let mean = out.iter().map(|r| r[c]).sum::<f64>() / n as f64;
            let var = out.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n as f64;
            means[c] = mean;
            if var <= 1e-24 * mean.powi(2).max(1.0) {
                stds[c] = 0.0;
                out.iter_mut().for_each(|r| r[c] = 0.0);
            } else {
                let sd = var.sqrt();
                stds[c] = sd;
                out.iter_mut().for_each(|r| r[c] = (r[c] - mean) / sd);
            }
        }
    }
    (
        out,
        NormStats {
            log_columns: LOG_COLUMNS.to_vec(),
            mean: means,
            std: stds,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::tx;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn inbound_example() {
        let txs = [tx("A", "B", 2, 10), tx("A", "B", 4, 20), tx("C", "B", 1, 20)];
        let raw = compute_node_attributes(&txs, &ids(&["A", "B", "C"]));
        let b = raw[1];
        assert_eq!(b[1], 2.0);
        assert_eq!(b[3], 3.0);
        assert_eq!(b[6], 7.0);
        assert!((b[8] - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(b[11], 10.0);
        assert!((b[13] - 0.3).abs() < 1e-15);
        assert_eq!(b[15], 0.5);
        // no outbound transactions
        for c in [2, 4, 7, 9, 12, 14, 16] {
            assert_eq!(b[c], 0.0, "column {c}");
        }
    }

    #[test]
    fn empty_direction_is_zero() {
        let txs = [tx("A", "B", 2, 10), tx("A", "C", 4, 30)];
        let a = compute_node_attributes(&txs, &ids(&["A", "B", "C"]))[0];
        for c in [1, 3, 6, 8, 11, 13, 15] {
            assert_eq!(a[c], 0.0, "column {c}");
        }
        assert_eq!(a[2], 2.0);
        assert_eq!(a[10], 20.0);
        assert_eq!(a[14], 2.0 / 20.0);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn contract_flag_follows_role() {
        let mut t = tx("A", "B", 1, 1);
        t.to_is_contract = true;
        let raw = compute_node_attributes(&[t], &ids(&["A", "B"]));
        assert_eq!(raw[0][0], 0.0);
        assert_eq!(raw[1][0], 1.0);
    }

    #[test]
    fn zero_span_frequency_uses_unit_denominator() {
        let raw = compute_node_attributes(&[tx("A", "B", 1, 5), tx("C", "B", 1, 5)], &ids(&["A", "B", "C"]));
        assert_eq!(raw[1][13], 2.0);
    }

    #[test]
    fn normalize_constant_column_is_zero() {
        let raw = vec![[3.0; N_ATTRS]; 4];
        let (out, stats) = normalize_attributes(&raw);
        for r in &out {
            assert_eq!(r[0], 3.0);
            assert!(r[1..].iter().all(|&v| v == 0.0));
        }
        assert_eq!(stats.std[5], 0.0);
    }

    #[test]
    fn normalize_log_column_two_points() {
        let mut a = [0.0; N_ATTRS];
        let mut b = [0.0; N_ATTRS];
        a[3] = 0.0;
        b[3] = std::f64::consts::E - 1.0;
        let (out, _) = normalize_attributes(&[a, b]);
        assert!((out[0][3] + 1.0).abs() < 1e-12);
        assert!((out[1][3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boolean_column_passes_through() {
        let rows: Vec<RawAttributes> = (0..5)
            .map(|i| {
                let mut r = [i as f64; N_ATTRS];
                r[0] = (i % 2) as f64;
                r
            })
            .collect();
        let (out, _) = normalize_attributes(&rows);
        for (o, r) in out.iter().zip(&rows) {
            assert_eq!(o[0], r[0]);
        }
    }
}
