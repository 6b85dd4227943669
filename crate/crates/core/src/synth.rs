//! Synthetic transaction streams with planted phishing motifs.
//!
//! Every split is a fixed-size batch of transactions over its own block
//! range. Normal accounts trade inside communities, with a few exchange-like
//! hubs and preferential (activity-weighted) partner choice. Each phishing
//! account is fresh: it receives a burst of small transfers from distinct
//! newly funded victim accounts, consolidates the takings in one to three
//! large transfers, and is never seen again. Collector accounts, which are
//! normal, show a similar fan-in and consolidation from established users;
//! unlike phishing accounts they may stay active over several splits.
//! A degree-biased share of each split's accounts carries into the next.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{compute_overlap, finalize_split};
use crate::ingest::{write_csv, TransactionRecord};
use crate::util;

const GENESIS: u64 = 1_500_000_000;
const SECONDS_PER_BLOCK: u64 = 12;
const WEI_PER_ETHER: f64 = 1e18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_splits: usize,
    /// Distinct active accounts per split.
    pub accounts_per_split: usize,
    pub txs_per_split: usize,
    /// Phishing accounts per split as a fraction of `accounts_per_split`.
    pub phishing_fraction: f64,
    pub target_overlap_ratio: f64,
    pub contract_fraction: f64,
    /// Log-normal parameters of normal transfer values, in ether.
    pub value_mu: f64,
    pub value_sigma: f64,
    pub blocks_per_split: u64,
    pub n_hubs: usize,
    pub community_size: usize,
    /// Probability a normal transfer stays inside the sender's community.
    pub community_prob: f64,
    /// Probability a normal transfer goes to or comes from a hub.
    pub hub_prob: f64,
    /// Probability a normal transfer repeats an earlier counterparty.
    pub repeat_prob: f64,
    pub min_victims: usize,
    pub max_victims: usize,
    /// Length of a phishing burst window as a fraction of the split.
    pub burst_fraction: f64,
    /// Median victim transfer relative to the median normal transfer.
    pub victim_value_scale: f64,
    /// Collector accounts per phishing account.
    pub decoy_ratio: f64,
    /// Probability a victim is an established account rather than a fresh one.
    pub victim_established_prob: f64,
    /// Probability a collector's sender is a fresh, hub-funded account.
    pub collector_fresh_sender_prob: f64,
    /// Upper bound on ordinary transfers made by phishing and collector
    /// accounts besides their motif.
    pub max_side_txs: usize,
    /// Probability a collector stays active into the next split.
    pub collector_persist_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_splits: 5,
            accounts_per_split: 2000,
            txs_per_split: 18_000,
            phishing_fraction: 0.03,
            target_overlap_ratio: 0.27,
            contract_fraction: 0.05,
            value_mu: -1.0,
            value_sigma: 1.5,
            blocks_per_split: 20_000,
            n_hubs: 8,
            community_size: 40,
            community_prob: 0.75,
            hub_prob: 0.08,
            repeat_prob: 0.4,
            min_victims: 4,
            max_victims: 14,
            burst_fraction: 0.08,
            victim_value_scale: 0.5,
            decoy_ratio: 16.0,
            victim_established_prob: 0.7,
            collector_fresh_sender_prob: 0.0,
            max_side_txs: 10,
            collector_persist_prob: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InfeasibleSynth(m.to_string()));
        if self.n_splits == 0 || self.accounts_per_split == 0 || self.txs_per_split == 0 {
            return bad("counts must be positive");
        }
        for (name, f) in [
            ("phishing_fraction", self.phishing_fraction),
            ("target_overlap_ratio", self.target_overlap_ratio),
            ("contract_fraction", self.contract_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return bad(&format!("{name} must lie in (0, 1)"));
            }
        }
        for (name, p) in [
            ("victim_established_prob", self.victim_established_prob),
            ("collector_fresh_sender_prob", self.collector_fresh_sender_prob),
            ("collector_persist_prob", self.collector_persist_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.decoy_ratio < 0.0 {
            return bad("decoy_ratio must be non-negative");
        }
        if self.min_victims < 2 || self.max_victims < self.min_victims {
            return bad("victim range must satisfy 2 ≤ min_victims ≤ max_victims");
        }
        if !(self.burst_fraction > 0.0 && self.burst_fraction < 0.5) {
            return bad("burst_fraction must lie in (0, 0.5)");
        }
        if self.blocks_per_split < 100 || self.value_sigma <= 0.0 || self.n_hubs == 0 {
            return bad("blocks_per_split ≥ 100, value_sigma > 0 and n_hubs ≥ 1 required");
        }
        Ok(())
    }

    /// Transfers at or above this value count as large.
    pub fn large_value_threshold(&self) -> f64 {
        // 75th percentile of the normal value distribution, in wei
        (self.value_mu + 0.674_49 * self.value_sigma).exp() * WEI_PER_ETHER
    }

    /// Longest timestamp window a phishing burst can occupy.
    pub fn burst_window_secs(&self) -> u64 {
        ((self.burst_fraction * self.blocks_per_split as f64).ceil() as u64 + 2) * SECONDS_PER_BLOCK
    }
}

/// Generated stream plus ground truth.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub splits: Vec<Vec<TransactionRecord>>,
    pub phishing: BTreeSet<String>,
    pub meta: SynthMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    /// Overlap ratio between consecutive finalized splits.
    pub measured_overlap: Vec<f64>,
    pub phishing_per_split: Vec<usize>,
    pub wcc_nodes_per_split: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Hub,
    Regular,
    Phishing,
    Victim,
    Cashout,
    Collector,
}

struct Account {
    id: String,
    contract: bool,
    activity: f64,
    community: usize,
    role: Role,
}

struct Event {
    t: f64,
    from: usize,
    to: usize,
    value: u128,
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    accounts: Vec<Account>,
    ids: HashSet<String>,
    n_communities: usize,
    normal_value: LogNormal<f64>,
    small_value: LogNormal<f64>,
}

impl Gen<'_> {
    fn new_account(&mut self, role: Role) -> usize {
        let id = loop {
            let hi: u32 = self.rng.random();
            let lo: u128 = self.rng.random();
            let id = format!("0x{hi:08x}{lo:032x}");
            if self.ids.insert(id.clone()) {
                break id;
            }
        };
        let contract = role == Role::Regular && self.rng.random_bool(self.cfg.contract_fraction);
        let activity = match role {
            Role::Hub => 30.0,
            _ => LogNormal::new(0.0, 0.8).unwrap().sample(&mut self.rng),
        };
        let community = self.rng.random_range(0..self.n_communities);
        self.accounts.push(Account {
            id,
            contract,
            activity,
            community,
            role,
        });
        self.accounts.len() - 1
    }

    fn wei(&mut self, ether: f64) -> u128 {
        ((ether * WEI_PER_ETHER).round() as u128).max(1)
    }

    fn normal(&mut self) -> u128 {
        let v = self.normal_value.sample(&mut self.rng);
        self.wei(v)
    }

    fn small(&mut self) -> u128 {
        let v = self.small_value.sample(&mut self.rng);
        self.wei(v)
    }
}

/// Activity-weighted sampler over a fixed account list.
struct Pool {
    members: Vec<usize>,
    index: WeightedIndex<f64>,
}

impl Pool {
    fn new(members: Vec<usize>, accounts: &[Account]) -> Option<Self> {
        let w: Vec<f64> = members.iter().map(|&a| accounts[a].activity).collect();
        let index = WeightedIndex::new(&w).ok()?;
        Some(Self { members, index })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.members[self.index.sample(rng)]
    }
}

/// Splits `total` into `k` positive parts, the first holding most of it.
fn consolidation_parts<R: Rng + ?Sized>(total: u128, k: usize, rng: &mut R) -> Vec<u128> {
    if k == 1 {
        return vec![total.max(1)];
    }
    let first = (total as f64 * rng.random_range(0.6..0.85)) as u128;
    let rest = total.saturating_sub(first);
    let mut parts = vec![first.max(1)];
    for i in 1..k {
        let share = if i + 1 == k { rest - (rest / (k as u128 - 1)) * (k as u128 - 2) } else { rest / (k as u128 - 1) };
        parts.push(share.max(1));
    }
    parts
}

/// A new account funded once, before `t`, by a hub or a regular account,
/// with a little more than `value`.
fn fresh_funded(
    g: &mut Gen,
    role: Role,
    value: u128,
    t: f64,
    hubs: &[usize],
    regulars: &Pool,
    events: &mut Vec<Event>,
) -> usize {
    let v = g.new_account(role);
    let funder = if g.rng.random_bool(0.7) {
        hubs[g.rng.random_range(0..hubs.len())]
    } else {
        regulars.draw(&mut g.rng)
    };
    let fund = (value as f64 * g.rng.random_range(1.05..1.6)) as u128;
    let t_fund = g.rng.random_range(0.0..t);
    events.push(Event { t: t_fund, from: funder, to: v, value: fund });
    v
}

/// One to three transfers moving `taken` from `from` to `to` shortly after
/// `t_end`; the first is at least a large transfer. Returns the amount moved
/// and the time of the last transfer.
fn sweep(g: &mut Gen, from: usize, to: usize, taken: u128, t_end: f64, events: &mut Vec<Event>) -> (u128, f64) {
    let k = g.rng.random_range(1..=3usize);
    let total = (taken as f64 * g.rng.random_range(0.92..0.99)) as u128;
    let mut parts = consolidation_parts(total, k, &mut g.rng);
    let floor = (g.cfg.large_value_threshold() * g.rng.random_range(1.2..2.0)) as u128;
    parts[0] = parts[0].max(floor);
    let mut t_last = t_end;
    for part in parts {
        let t = (t_end + g.rng.random_range(0.0..0.03)).min(0.999);
        t_last = t_last.max(t);
        events.push(Event { t, from, to, value: part });
    }
    (total, t_last)
}

/// Generates the whole stream. Deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n_regular_est = cfg.accounts_per_split;
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        accounts: Vec::new(),
        ids: HashSet::new(),
        n_communities: (n_regular_est / cfg.community_size.max(1)).max(1),
        normal_value: LogNormal::new(cfg.value_mu, cfg.value_sigma)
            .map_err(|e| Error::InfeasibleSynth(e.to_string()))?,
        small_value: LogNormal::new(cfg.value_mu + cfg.victim_value_scale.ln(), 0.5 * cfg.value_sigma)
            .map_err(|e| Error::InfeasibleSynth(e.to_string()))?,
    };
    let hubs: Vec<usize> = (0..cfg.n_hubs).map(|_| g.new_account(Role::Hub)).collect();

    let mut carried: Vec<usize> = Vec::new();
    let mut splits = Vec::with_capacity(cfg.n_splits);
    let mut phishing = BTreeSet::new();
    let mut phishing_per_split = Vec::new();

    for s in 0..cfg.n_splits {
        let n_phish = ((cfg.phishing_fraction * cfg.accounts_per_split as f64).round() as usize).max(1);
        let victims_per: Vec<usize> = (0..n_phish)
            .map(|_| g.rng.random_range(cfg.min_victims..=cfg.max_victims))
            .collect();
        let cash_fresh: Vec<bool> = (0..n_phish).map(|_| g.rng.random_bool(0.5)).collect();
        let n_victims: usize = victims_per.iter().sum();
        let n_cash = cash_fresh.iter().filter(|&&c| c).count();
        let n_collectors = (cfg.decoy_ratio * n_phish as f64).round() as usize;
        let mut carried_collectors: Vec<usize> = carried
            .iter()
            .copied()
            .filter(|&a| g.accounts[a].role == Role::Collector)
            .collect();
        carried_collectors.truncate(n_collectors);
        let mean_fan_in = (cfg.min_victims + cfg.max_victims) as f64 / 2.0;
        let fresh_victims = (n_victims as f64 * (1.0 - cfg.victim_established_prob)).round() as usize;
        let fresh_senders = (n_collectors as f64 * mean_fan_in * cfg.collector_fresh_sender_prob).round() as usize;
        let fixed = n_phish + fresh_victims + fresh_senders + n_cash + n_collectors + cfg.n_hubs;
        let carried_regular: Vec<usize> = carried
            .iter()
            .copied()
            .filter(|&a| g.accounts[a].role == Role::Regular)
            .collect();
        let n_regular = cfg
            .accounts_per_split
            .checked_sub(fixed)
            .filter(|&r| r > carried_regular.len() && r >= 2 * cfg.max_victims)
            .ok_or_else(|| {
                Error::InfeasibleSynth(format!(
                    "split {s}: {} accounts cannot host {n_phish} phishing motifs with {n_victims} victims",
                    cfg.accounts_per_split
                ))
            })?;
        let mut regulars = carried_regular.clone();
        while regulars.len() < n_regular {
            let a = g.new_account(Role::Regular);
            regulars.push(a);
        }

        let mut events: Vec<Event> = Vec::new();
        let all_regular = Pool::new(regulars.clone(), &g.accounts).expect("regular pool");
        let mut by_comm: HashMap<usize, Vec<usize>> = HashMap::new();
        for &r in &regulars {
            by_comm.entry(g.accounts[r].community).or_default().push(r);
        }
        let mut comm_keys: Vec<usize> = by_comm.keys().copied().collect();
        comm_keys.sort_unstable();
        let comm_pools: HashMap<usize, Pool> = comm_keys
            .iter()
            .filter_map(|&c| Pool::new(by_comm[&c].clone(), &g.accounts).map(|p| (c, p)))
            .collect();
        let mut partners: HashMap<usize, Vec<usize>> = HashMap::new();

        let mut side: Vec<usize> = Vec::new();
        // phishing motifs: fresh victims, each funded once, pay in a burst
        for p_i in 0..n_phish {
            let p = g.new_account(Role::Phishing);
            phishing.insert(g.accounts[p].id.clone());
            let t0 = g.rng.random_range(0.05..(0.93 - cfg.burst_fraction));
            let mut taken: u128 = 0;
            let mut used = HashSet::new();
            for _ in 0..victims_per[p_i] {
                let t_send = t0 + g.rng.random_range(0.0..cfg.burst_fraction);
                let value = g.small();
                let mut v = None;
                if g.rng.random_bool(cfg.victim_established_prob) {
                    // redraw on repeats so every victim is distinct
                    v = (0..20).map(|_| all_regular.draw(&mut g.rng)).find(|c| !used.contains(c));
                }
                let v = match v {
                    Some(v) => v,
                    None => fresh_funded(&mut g, Role::Victim, value, t_send, &hubs, &all_regular, &mut events),
                };
                used.insert(v);
                events.push(Event { t: t_send, from: v, to: p, value });
                taken += value;
            }
            side.push(p);
            let cashout = if cash_fresh[p_i] {
                g.new_account(Role::Cashout)
            } else {
                hubs[g.rng.random_range(0..hubs.len())]
            };
            let (total, t_last) = sweep(&mut g, p, cashout, taken, t0 + cfg.burst_fraction, &mut events);
            if g.accounts[cashout].role == Role::Cashout {
                let hub = hubs[g.rng.random_range(0..hubs.len())];
                let t = g.rng.random_range(t_last..1.0);
                let value = (total as f64 * 0.98) as u128;
                events.push(Event { t, from: cashout, to: hub, value: value.max(1) });
            }
        }
        phishing_per_split.push(n_phish);

        // collectors: fresh deposit-like accounts paid by established users,
        // swept to a hub
        let mut collectors = Vec::with_capacity(n_collectors);
        for i in 0..n_collectors {
            let c = match carried_collectors.get(i) {
                Some(&c) => c,
                None => g.new_account(Role::Collector),
            };
            collectors.push(c);
            let m = g.rng.random_range(cfg.min_victims..=cfg.max_victims);
            let dur = cfg.burst_fraction * g.rng.random_range(0.7..1.3);
            let t0 = g.rng.random_range(0.05..(0.93 - dur));
            let senders = sample(&mut g.rng, regulars.len(), m.min(regulars.len()));
            let mut taken = 0u128;
            for i in senders {
                let value = g.small();
                let t = t0 + g.rng.random_range(0.0..dur);
                let from = if g.rng.random_bool(cfg.collector_fresh_sender_prob) {
                    fresh_funded(&mut g, Role::Regular, value, t, &hubs, &all_regular, &mut events)
                } else {
                    regulars[i]
                };
                events.push(Event { t, from, to: c, value });
                taken += value;
            }
            side.push(c);
            let hub = hubs[g.rng.random_range(0..hubs.len())];
            sweep(&mut g, c, hub, taken, t0 + dur, &mut events);
        }

        for &a in &side {
            for _ in 0..g.rng.random_range(0..=cfg.max_side_txs) {
                let b = all_regular.draw(&mut g.rng);
                let (from, to) = if g.rng.random_bool(0.5) { (a, b) } else { (b, a) };
                let value = g.normal();
                let t = g.rng.random::<f64>();
                events.push(Event { t, from, to, value });
            }
        }

        let fixed_events = events.len();
        let coverage: Vec<usize> = regulars.iter().copied().chain(hubs.iter().copied()).collect();
        if fixed_events + coverage.len() > cfg.txs_per_split {
            return Err(Error::InfeasibleSynth(format!(
                "split {s}: {} transactions needed but txs_per_split is {}",
                fixed_events + coverage.len(),
                cfg.txs_per_split
            )));
        }

        let pick_partner = |g: &mut Gen, a: usize, partners: &HashMap<usize, Vec<usize>>| -> usize {
            if let Some(list) = partners.get(&a) {
                if !list.is_empty() && g.rng.random_bool(cfg.repeat_prob) {
                    return list[g.rng.random_range(0..list.len())];
                }
            }
            let r: f64 = g.rng.random();
            let b = if r < cfg.hub_prob {
                hubs[g.rng.random_range(0..hubs.len())]
            } else if r < cfg.hub_prob + cfg.community_prob {
                match comm_pools.get(&g.accounts[a].community) {
                    Some(pool) => pool.draw(&mut g.rng),
                    None => all_regular.draw(&mut g.rng),
                }
            } else {
                all_regular.draw(&mut g.rng)
            };
            if b == a {
                return all_regular.draw(&mut g.rng);
            }
            b
        };

        let push_normal = |g: &mut Gen, a: usize, b: usize, events: &mut Vec<Event>| {
            if a == b {
                return;
            }
            let (from, to) = if g.rng.random_bool(0.5) { (a, b) } else { (b, a) };
            let value = g.normal();
            let t = g.rng.random::<f64>();
            events.push(Event { t, from, to, value });
        };

        // every regular and hub trades at least once
        for &a in &coverage {
            let mut b = pick_partner(&mut g, a, &partners);
            let mut tries = 0;
            while b == a && tries < 10 {
                b = all_regular.draw(&mut g.rng);
                tries += 1;
            }
            push_normal(&mut g, a, b, &mut events);
            partners.entry(a).or_default().push(b);
            partners.entry(b).or_default().push(a);
        }
        while events.len() < cfg.txs_per_split {
            let a = all_regular.draw(&mut g.rng);
            let b = pick_partner(&mut g, a, &partners);
            if a == b {
                continue;
            }
            push_normal(&mut g, a, b, &mut events);
            partners.entry(a).or_default().push(b);
            partners.entry(b).or_default().push(a);
        }
        events.truncate(cfg.txs_per_split);

        // emit, ordered by time
        events.sort_by(|x, y| x.t.total_cmp(&y.t));
        let base = s as u64 * cfg.blocks_per_split + 1;
        let txs: Vec<TransactionRecord> = events
            .iter()
            .map(|e| {
                let block = base + ((e.t * cfg.blocks_per_split as f64) as u64).min(cfg.blocks_per_split - 1);
                let timestamp = GENESIS + block * SECONDS_PER_BLOCK + g.rng.random_range(0..SECONDS_PER_BLOCK);
                let (from, to) = (&g.accounts[e.from], &g.accounts[e.to]);
                TransactionRecord {
                    block_number: block,
                    timestamp,
                    from_account: from.id.clone(),
                    to_account: to.id.clone(),
                    value: e.value,
                    success: true,
                    is_internal: from.contract,
                    from_is_contract: from.contract,
                    to_is_contract: to.contract,
                }
            })
            .collect();

        // persistence into the next split, biased toward high-degree accounts
        let mut degree: HashMap<usize, HashSet<usize>> = HashMap::new();
        for e in &events {
            degree.entry(e.from).or_default().insert(e.to);
            degree.entry(e.to).or_default().insert(e.from);
        }
        let active = degree.len();
        let want = (cfg.target_overlap_ratio * active as f64).round() as usize;
        let mut keyed: Vec<(f64, usize)> = regulars
            .iter()
            .filter(|a| degree.contains_key(a))
            .map(|&a| {
                let w = degree[&a].len() as f64;
                let u: f64 = g.rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.ln() / w, a)
            })
            .collect();
        keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        carried = hubs.clone();
        for &c in &collectors {
            if g.rng.random_bool(cfg.collector_persist_prob) {
                carried.push(c);
            }
        }
        let want = want.max(carried.len());
        let room = want - carried.len();
        carried.extend(keyed.iter().take(room).map(|&(_, a)| a));
        splits.push(txs);
    }

    let mut measured_overlap = Vec::new();
    let mut wcc_nodes = Vec::new();
    let graphs: Vec<_> = splits
        .iter()
        .enumerate()
        .map(|(i, t)| finalize_split(i, t))
        .collect::<Result<_>>()?;
    for w in graphs.windows(2) {
        measured_overlap.push(compute_overlap(&w[0], &w[1]).1);
    }
    for gr in &graphs {
        wcc_nodes.push(gr.num_nodes());
    }
    Ok(SynthData {
        splits,
        phishing,
        meta: SynthMeta {
            config: cfg.clone(),
            measured_overlap,
            phishing_per_split,
            wcc_nodes_per_split: wcc_nodes,
        },
    })
}

/// Writes `split_<i>.csv` (1-based), `labels.txt` and `synth_meta.json`.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<()> {
    for (i, txs) in data.splits.iter().enumerate() {
        write_csv(&dir.join(format!("split_{}.csv", i + 1)), txs)?;
    }
    let mut labels = String::new();
    for id in &data.phishing {
        labels.push_str(id);
        labels.push('\n');
    }
    util::write_file(&dir.join("labels.txt"), labels.as_bytes())?;
    util::write_json(&dir.join("synth_meta.json"), &data.meta)
}

/// Reads a label file: one account id per line, blank lines ignored.
pub fn read_labels(path: &Path) -> Result<BTreeSet<String>> {
    Ok(util::read_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Motif thresholds checked by [`verify_motif`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotifCheck {
    pub min_senders: usize,
    pub window_secs: u64,
    /// Quantile of all transfer values a consolidation must reach.
    pub quantile: f64,
}

impl MotifCheck {
    pub fn for_config(cfg: &SynthConfig) -> Self {
        Self {
            min_senders: cfg.min_victims,
            window_secs: cfg.burst_window_secs(),
            quantile: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifReport {
    pub checked: usize,
    pub compliant: usize,
    pub violations: Vec<String>,
}

impl MotifReport {
    pub fn compliance(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.compliant as f64 / self.checked as f64
        }
    }
}

/// Checks that every labeled account received transfers from at least
/// `min_senders` distinct accounts inside one `window_secs` window and sent
/// at least one transfer at or above the `quantile` of all values.
pub fn verify_motif(txs: &[TransactionRecord], labels: &BTreeSet<String>, check: MotifCheck) -> MotifReport {
    let mut values: Vec<u128> = txs.iter().map(|t| t.value).collect();
    values.sort_unstable();
    let threshold = if values.is_empty() {
        0
    } else {
        values[((values.len() - 1) as f64 * check.quantile).round() as usize]
    };
    let mut inbound: HashMap<&str, Vec<(u64, &str)>> = HashMap::new();
    let mut max_out: HashMap<&str, u128> = HashMap::new();
    for t in txs {
        if labels.contains(&t.to_account) {
            inbound.entry(&t.to_account).or_default().push((t.timestamp, &t.from_account));
        }
        if labels.contains(&t.from_account) {
            let e = max_out.entry(&t.from_account).or_default();
            *e = (*e).max(t.value);
        }
    }
    let mut report = MotifReport {
        checked: labels.len(),
        compliant: 0,
        violations: Vec::new(),
    };
    for id in labels {
        let mut ins = inbound.remove(id.as_str()).unwrap_or_default();
        ins.sort_unstable();
        let mut best = 0;
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut lo = 0;
        for hi in 0..ins.len() {
            *counts.entry(ins[hi].1).or_default() += 1;
            while ins[hi].0 - ins[lo].0 > check.window_secs {
                let c = counts.get_mut(ins[lo].1).unwrap();
                *c -= 1;
                if *c == 0 {
                    counts.remove(ins[lo].1);
                }
                lo += 1;
            }
            best = best.max(counts.len());
        }
        let big = max_out.get(id.as_str()).copied().unwrap_or(0) >= threshold && threshold > 0;
        if best >= check.min_senders && big {
            report.compliant += 1;
        } else {
            report.violations.push(id.clone());
        }
    }
    report
}
