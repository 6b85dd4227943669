//! Transaction ingestion: parsing raw CSV/JSONL transfer files, dropping
//! failed and zero-value transfers, and cutting the ordered stream into
//! block-aligned temporal splits.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of the transaction CSV format, in column order.
pub const CSV_HEADER: [&str; 9] = [
    "block_number",
    "timestamp",
    "from",
    "to",
    "value",
    "success",
    "is_internal",
    "from_is_contract",
    "to_is_contract",
];

/// Default fraction of malformed lines tolerated before parsing aborts.
pub const DEFAULT_MALFORMED_THRESHOLD: f64 = 0.01;

/// One raw value transfer between two accounts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub block_number: u64,
    pub timestamp: u64,
    #[serde(rename = "from")]
    pub from_account: String,
    #[serde(rename = "to")]
    pub to_account: String,
    #[serde(with = "wei")]
    pub value: u128,
    pub success: bool,
    pub is_internal: bool,
    pub from_is_contract: bool,
    pub to_is_contract: bool,
}

impl TransactionRecord {
    /// Renders the record as one line of the CSV format (no trailing newline).
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.block_number,
            self.timestamp,
            self.from_account,
            self.to_account,
            self.value,
            self.success,
            self.is_internal,
            self.from_is_contract,
            self.to_is_contract
        )
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.from_account.is_empty() || self.to_account.is_empty() {
            return Err("empty account identifier".into());
        }
        Ok(())
    }
}

/// Wei amounts are written as bare integers in CSV. JSON producers commonly
/// quote them because they exceed 2^53, so both forms are accepted there.
mod wei {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        struct WeiVisitor;
        impl Visitor<'_> for WeiVisitor {
            type Value = u128;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative integer or decimal string")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<u128, E> {
                Ok(v as u128)
            }
            fn visit_u128<E: de::Error>(self, v: u128) -> Result<u128, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<u128, E> {
                u128::try_from(v).map_err(|_| E::custom("negative value"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<u128, E> {
                v.trim().parse().map_err(E::custom)
            }
        }
        d.deserialize_any(WeiVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            other => Err(Error::InvalidInput(format!("unknown format {other:?}"))),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputFormat::Csv => f.write_str("csv"),
            InputFormat::Jsonl => f.write_str("jsonl"),
        }
    }
}

/// Outcome of a parse: how many data lines were seen and which were rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub data_lines: usize,
    pub malformed: usize,
    /// First few rejections as (1-based line number, reason).
    pub examples: Vec<(usize, String)>,
}

impl ParseReport {
    const MAX_EXAMPLES: usize = 10;

    fn reject(&mut self, line: usize, reason: String) {
        self.malformed += 1;
        if self.examples.len() < Self::MAX_EXAMPLES {
            self.examples.push((line, reason));
        }
    }

    pub fn malformed_fraction(&self) -> f64 {
        if self.data_lines == 0 {
            0.0
        } else {
            self.malformed as f64 / self.data_lines as f64
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} of {} lines malformed ({:.2}%)",
            self.malformed,
            self.data_lines,
            100.0 * self.malformed_fraction()
        );
        for (line, reason) in &self.examples {
            s.push_str(&format!("; line {line}: {reason}"));
        }
        s
    }
}

fn parse_bool(field: &str) -> std::result::Result<bool, String> {
    match field.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(format!("bad boolean {other:?}")),
    }
}

fn parse_csv_record(rec: &csv::StringRecord) -> std::result::Result<TransactionRecord, String> {
    if rec.len() != CSV_HEADER.len() {
        return Err(format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len()));
    }
    let num = |i: usize| -> std::result::Result<u64, String> {
        rec[i]
            .trim()
            .parse::<u64>()
            .map_err(|e| format!("{}: {e}", CSV_HEADER[i]))
    };
    let tx = TransactionRecord {
        block_number: num(0)?,
        timestamp: num(1)?,
        from_account: rec[2].trim().to_string(),
        to_account: rec[3].trim().to_string(),
        value: rec[4]
            .trim()
            .parse::<u128>()
            .map_err(|e| format!("value: {e}"))?,
        success: parse_bool(&rec[5])?,
        is_internal: parse_bool(&rec[6])?,
        from_is_contract: parse_bool(&rec[7])?,
        to_is_contract: parse_bool(&rec[8])?,
    };
    tx.validate()?;
    Ok(tx)
}

/// Parses a transaction file, rejecting malformed lines.
///
/// Fails if the file cannot be read, the CSV header does not match
/// [`CSV_HEADER`], or the malformed fraction exceeds `malformed_threshold`.
pub fn parse_transactions(
    path: &Path,
    format: InputFormat,
    malformed_threshold: f64,
) -> Result<(Vec<TransactionRecord>, ParseReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let (txs, report) = match format {
        InputFormat::Csv => parse_csv(reader, path)?,
        InputFormat::Jsonl => parse_jsonl(reader, path)?,
    };
    if report.malformed_fraction() > malformed_threshold {
        return Err(Error::TooManyMalformed(Box::new(report)));
    }
    if report.malformed > 0 {
        log::warn!("{}: {}", path.display(), report.summary());
    }
    Ok((txs, report))
}

fn parse_csv<R: BufRead>(reader: R, path: &Path) -> Result<(Vec<TransactionRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut report = ParseReport::default();
    let mut txs = Vec::new();
    let mut records = rdr.records();

    match records.next() {
        None => return Ok((txs, report)),
        Some(Err(e)) => return Err(Error::InvalidInput(format!("{}: {e}", path.display()))),
        Some(Ok(header)) => {
            let names: Vec<&str> = header.iter().map(str::trim).collect();
            if names != CSV_HEADER {
                return Err(Error::InvalidInput(format!(
                    "{}: header {:?} does not match {:?}",
                    path.display(),
                    names,
                    CSV_HEADER
                )));
            }
        }
    }

    for (i, rec) in records.enumerate() {
        let line = i + 2;
        match rec {
            Ok(rec) => {
                if rec.len() == 1 && rec[0].trim().is_empty() {
                    continue;
                }
                report.data_lines += 1;
                match parse_csv_record(&rec) {
                    Ok(tx) => txs.push(tx),
                    Err(reason) => report.reject(line, reason),
                }
            }
            Err(e) => {
                report.data_lines += 1;
                report.reject(line, e.to_string());
            }
        }
    }
    Ok((txs, report))
}

fn parse_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<(Vec<TransactionRecord>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut txs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.data_lines += 1;
        match serde_json::from_str::<TransactionRecord>(&line) {
            Ok(tx) => match tx.validate() {
                Ok(()) => txs.push(tx),
                Err(reason) => report.reject(line_no, reason),
            },
            Err(e) => report.reject(line_no, e.to_string()),
        }
    }
    Ok((txs, report))
}

/// Keeps only successful transfers that moved a non-zero amount.
pub fn filter_transactions(txs: Vec<TransactionRecord>) -> Vec<TransactionRecord> {
    txs.into_iter().filter(|t| t.success && t.value > 0).collect()
}

/// Block-number cut points between consecutive splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_splits: usize,
    /// First block of splits 1..n_splits; strictly increasing.
    pub boundaries: Vec<u64>,
}

impl SplitPlan {
    /// Index of the split a block belongs to.
    pub fn split_of(&self, block: u64) -> usize {
        self.boundaries.partition_point(|&b| b <= block)
    }
}

/// Cuts a block-sorted stream into `n_splits` contiguous groups of roughly
/// equal transaction count. A block is never divided between two groups:
/// each group closes at the first block that brings it to the quota of the
/// transactions still unassigned divided by the groups still open.
pub fn split_by_block(
    txs: Vec<TransactionRecord>,
    n_splits: usize,
) -> Result<(SplitPlan, Vec<Vec<TransactionRecord>>)> {
    if n_splits == 0 {
        return Err(Error::InvalidInput("n_splits must be positive".into()));
    }
    if txs.windows(2).any(|w| w[0].block_number > w[1].block_number) {
        return Err(Error::InvalidInput(
            "transactions are not sorted by block number".into(),
        ));
    }

    // (block, count) runs
    let mut runs: Vec<(u64, usize)> = Vec::new();
    for t in &txs {
        match runs.last_mut() {
            Some((b, c)) if *b == t.block_number => *c += 1,
            _ => runs.push((t.block_number, 1)),
        }
    }
    if n_splits > runs.len() {
        return Err(Error::TooManySplits {
            splits: n_splits,
            blocks: runs.len(),
        });
    }

    let mut sizes = Vec::with_capacity(n_splits);
    let mut boundaries = Vec::with_capacity(n_splits - 1);
    let mut remaining = txs.len();
    let mut start = 0;
    for g in 0..n_splits - 1 {
        let open = n_splits - g;
        let quota = remaining as f64 / open as f64;
        let mut acc = 0usize;
        let mut j = start;
        loop {
            acc += runs[j].1;
            j += 1;
            if runs.len() - j == open - 1 || acc as f64 >= quota {
                break;
            }
        }
        sizes.push(acc);
        boundaries.push(runs[j].0);
        remaining -= acc;
        start = j;
    }
    sizes.push(remaining);

    let mut groups = Vec::with_capacity(n_splits);
    let mut it = txs.into_iter();
    for size in sizes {
        groups.push(it.by_ref().take(size).collect());
    }
    Ok((
        SplitPlan {
            n_splits,
            boundaries,
        },
        groups,
    ))
}

/// Writes `txs` as CSV with the standard header.
pub fn write_csv(path: &Path, txs: &[TransactionRecord]) -> Result<()> {
    let mut body = String::with_capacity(txs.len() * 160);
    body.push_str(&CSV_HEADER.join(","));
    body.push('\n');
    for t in txs {
        body.push_str(&t.to_csv_line());
        body.push('\n');
    }
    crate::util::write_file(path, body.as_bytes())
}

/// Parses several files, concatenates them and stable-sorts by block number.
pub fn load_stream(
    paths: &[impl AsRef<Path>],
    format: InputFormat,
    malformed_threshold: f64,
) -> Result<Vec<TransactionRecord>> {
    let mut all = Vec::new();
    for p in paths {
        let (txs, _) = parse_transactions(p.as_ref(), format, malformed_threshold)?;
        all.extend(txs);
    }
    all.sort_by_key(|t| t.block_number);
    Ok(all)
}
