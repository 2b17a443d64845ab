//! Flow records, class tables, domain-name normalization, disjoint class
//! splits, and the semi-balanced sampling used for epoch construction and
//! database building.

use std::collections::BTreeSet;

use regex::Regex;
use thiserror::Error;

use crate::rng::DetRng;

/// Fixed packet-sequence length per flow.
pub const PACKET_SEQ_LEN: usize = 30;
/// Largest representable packet size in bytes.
pub const MAX_PKT_SIZE: u16 = 1500;

pub type ClassId = u32;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("empty domain")]
    EmptyDomain,
    #[error("bad rewrite rule on line {line}: {msg}")]
    BadRule { line: usize, msg: String },
    #[error("invalid packet sequence: {0}")]
    BadPacketSequence(String),
    #[error("invalid class table: {0}")]
    BadClassTable(String),
    #[error("split counts {requested} exceed {available} classes")]
    SplitTooLarge { requested: usize, available: usize },
    #[error("sample size {size} exceeds {available} records")]
    SampleTooLarge { size: usize, available: usize },
    #[error("query/database sizes {requested} exceed {available} records")]
    PartitionTooLarge { requested: usize, available: usize },
    #[error("stratified query split infeasible: {0}")]
    StratificationInfeasible(String),
}

/// Fixed-length per-flow packet record, zero-padded past `pkt_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketSequence {
    pub sizes: [u16; PACKET_SEQ_LEN],
    pub directions: [i8; PACKET_SEQ_LEN],
    pub ipts_ms: [f32; PACKET_SEQ_LEN],
    pub pkt_count: usize,
}

impl PacketSequence {
    pub fn new(
        sizes: [u16; PACKET_SEQ_LEN],
        directions: [i8; PACKET_SEQ_LEN],
        ipts_ms: [f32; PACKET_SEQ_LEN],
        pkt_count: usize,
    ) -> Result<Self, FlowError> {
        let seq = PacketSequence {
            sizes,
            directions,
            ipts_ms,
            pkt_count,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.pkt_count == 0 || self.pkt_count > PACKET_SEQ_LEN {
            return Err(FlowError::BadPacketSequence(format!(
                "pkt_count {} outside [1, {PACKET_SEQ_LEN}]",
                self.pkt_count
            )));
        }
        for i in 0..PACKET_SEQ_LEN {
            if i < self.pkt_count {
                if self.sizes[i] < 1 || self.sizes[i] > MAX_PKT_SIZE {
                    return Err(FlowError::BadPacketSequence(format!(
                        "packet {i} size {} outside [1, {MAX_PKT_SIZE}]",
                        self.sizes[i]
                    )));
                }
                if self.directions[i] != -1 && self.directions[i] != 1 {
                    return Err(FlowError::BadPacketSequence(format!(
                        "packet {i} direction {} not in {{-1, +1}}",
                        self.directions[i]
                    )));
                }
                if !(self.ipts_ms[i] >= 0.0) || !self.ipts_ms[i].is_finite() {
                    return Err(FlowError::BadPacketSequence(format!(
                        "packet {i} inter-packet time {} invalid",
                        self.ipts_ms[i]
                    )));
                }
            } else if self.sizes[i] != 0 || self.directions[i] != 0 || self.ipts_ms[i] != 0.0 {
                return Err(FlowError::BadPacketSequence(format!(
                    "padding position {i} is not zeroed"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub flow_id: u64,
    pub label: ClassId,
    pub pkts: PacketSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    pub count: usize,
}

/// Class id <-> name <-> frequency table; ids are dense `0..C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
}

impl ClassTable {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self, FlowError> {
        let mut names = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(FlowError::BadClassTable(format!(
                    "ids must be dense 0..C, entry {i} has id {}",
                    e.id
                )));
            }
            if e.count < 1 {
                return Err(FlowError::BadClassTable(format!(
                    "class {} has count {}",
                    e.id, e.count
                )));
            }
            if !names.insert(e.name.as_str()) {
                return Err(FlowError::BadClassTable(format!(
                    "duplicate class name {:?}",
                    e.name
                )));
            }
        }
        Ok(ClassTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.entries.get(id as usize).map(|e| e.name.as_str())
    }

    pub fn count(&self, id: ClassId) -> Option<usize> {
        self.entries.get(id as usize).map(|e| e.count)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    /// Restrict to a class subset, keeping ids and full-table counts.
    /// The result is sparse in ids; look entries up with [`ClassTable::find`].
    pub fn restricted(&self, ids: &BTreeSet<ClassId>) -> ClassTable {
        ClassTable {
            entries: self
                .entries
                .iter()
                .filter(|e| ids.contains(&e.id))
                .cloned()
                .collect(),
        }
    }

    /// Look up an entry by class id, including in sparse restricted tables.
    pub fn find(&self, id: ClassId) -> Option<&ClassEntry> {
        if let Some(e) = self.entries.get(id as usize) {
            if e.id == id {
                return Some(e);
            }
        }
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Disjoint train/validation/test class sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_classes: BTreeSet<ClassId>,
    pub val_classes: BTreeSet<ClassId>,
    pub test_classes: BTreeSet<ClassId>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn assert_disjoint(&self) {
        assert!(
            self.train_classes.is_disjoint(&self.val_classes)
                && self.train_classes.is_disjoint(&self.test_classes)
                && self.val_classes.is_disjoint(&self.test_classes),
            "split class sets overlap"
        );
    }
}

/// k-NN database and query samples drawn from one class set.
#[derive(Debug, Clone)]
pub struct EvalPartition {
    pub database: Vec<FlowRecord>,
    pub queries: Vec<FlowRecord>,
    pub lambda_db: f64,
}

/// Ordered first-match-wins domain rewrite rules.
#[derive(Debug, Clone)]
pub struct DomainRules {
    rules: Vec<(Regex, String)>,
}

impl DomainRules {
    pub fn empty() -> Self {
        DomainRules { rules: Vec::new() }
    }

    pub fn new(rules: Vec<(Regex, String)>) -> Self {
        DomainRules { rules }
    }

    /// Parse `pattern<TAB>replacement` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, FlowError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (pat, repl) = line.split_once('\t').ok_or(FlowError::BadRule {
                line: i + 1,
                msg: "expected pattern<TAB>replacement".into(),
            })?;
            let re = Regex::new(pat.trim()).map_err(|e| FlowError::BadRule {
                line: i + 1,
                msg: e.to_string(),
            })?;
            rules.push((re, repl.trim().to_string()));
        }
        Ok(DomainRules { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Map an SNI hostname to its class name: keep the rightmost four labels,
/// then rewrite with the first matching rule.
pub fn normalize_domain(sni: &str, rules: &DomainRules) -> Result<String, FlowError> {
    if sni.trim().is_empty() {
        return Err(FlowError::EmptyDomain);
    }
    let labels: Vec<&str> = sni.trim().split('.').collect();
    let keep = labels.len().min(4);
    let truncated = labels[labels.len() - keep..].join(".");
    for (re, replacement) in &rules.rules {
        if re.is_match(&truncated) {
            return Ok(replacement.clone());
        }
    }
    Ok(truncated)
}

/// Uniformly random disjoint class assignment, deterministic per seed.
pub fn split_classes(
    table: &ClassTable,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<SplitSpec, FlowError> {
    let (n_train, n_val, n_test) = counts;
    let c = table.len();
    let requested = n_train + n_val + n_test;
    if requested > c {
        return Err(FlowError::SplitTooLarge {
            requested,
            available: c,
        });
    }
    let mut ids: Vec<ClassId> = (0..c as ClassId).collect();
    let mut rng = DetRng::child(seed, "split");
    rng.shuffle(&mut ids);
    let train_classes: BTreeSet<ClassId> = ids[..n_train].iter().copied().collect();
    let val_classes: BTreeSet<ClassId> = ids[n_train..n_train + n_val].iter().copied().collect();
    let test_classes: BTreeSet<ClassId> =
        ids[n_train + n_val..requested].iter().copied().collect();
    let spec = SplitSpec {
        train_classes,
        val_classes,
        test_classes,
        seed,
    };
    spec.assert_disjoint();
    Ok(spec)
}

fn class_counts_within(records: &[FlowRecord]) -> std::collections::BTreeMap<ClassId, usize> {
    let mut counts = std::collections::BTreeMap::new();
    for r in records {
        *counts.entry(r.label).or_insert(0usize) += 1;
    }
    counts
}

/// Inclusion probabilities proportional to `weights`, scaled to sum to
/// `size` and clamped at 1 (over-heavy units become certain selections and
/// the remainder is rescaled).
fn inclusion_probabilities(weights: &[f64], size: usize) -> Vec<f64> {
    let n = weights.len();
    let mut certain = vec![false; n];
    let mut n_certain = 0usize;
    loop {
        let remaining = size - n_certain;
        if remaining == 0 {
            break;
        }
        let s: f64 = weights
            .iter()
            .zip(&certain)
            .filter(|(_, &c)| !c)
            .map(|(w, _)| *w)
            .sum();
        let scale = remaining as f64 / s;
        let mut changed = false;
        for i in 0..n {
            if !certain[i] && weights[i] * scale >= 1.0 {
                certain[i] = true;
                n_certain += 1;
                changed = true;
            }
        }
        if !changed {
            let mut pi = vec![0.0; n];
            for i in 0..n {
                pi[i] = if certain[i] { 1.0 } else { weights[i] * scale };
            }
            return pi;
        }
    }
    certain.into_iter().map(|c| if c { 1.0 } else { 0.0 }).collect()
}

/// Select indices of `size` records without replacement, weight
/// `N_C^-lambda` per record where `N_C` is its class count within `records`.
///
/// Systematic sampling over the per-record inclusion probabilities
/// `size * w_i / sum(w)`: expected class shares are exactly proportional to
/// class total weights, so `lambda = 0` keeps the source distribution and
/// `lambda = 1` equalizes per-class totals.
pub fn weighted_subsample_indices(
    records: &[FlowRecord],
    lambda: f64,
    size: usize,
    rng: &mut DetRng,
) -> Result<Vec<usize>, FlowError> {
    if size > records.len() {
        return Err(FlowError::SampleTooLarge {
            size,
            available: records.len(),
        });
    }
    if size == 0 {
        return Ok(Vec::new());
    }
    let counts = class_counts_within(records);
    let weights: Vec<f64> = records
        .iter()
        .map(|r| (counts[&r.label] as f64).powf(-lambda))
        .collect();
    let pi = inclusion_probabilities(&weights, size);

    // One systematic pass: thresholds u, u+1, ..., u+size-1 against the
    // cumulative probabilities. Each pi <= 1, so units are hit at most once.
    let n = records.len();
    let mut cum = vec![0.0f64; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + pi[i];
    }
    cum[n] = size as f64; // pin the float tail
    let u = rng.uniform();
    let mut chosen = Vec::with_capacity(size);
    let mut i = 0usize;
    for k in 0..size {
        let t = u + k as f64;
        while i < n && cum[i + 1] <= t {
            i += 1;
        }
        // Guard against duplicate hits from float rounding at pi == 1 edges.
        if let Some(&last) = chosen.last() {
            if last == i {
                i += 1;
            }
        }
        chosen.push(i.min(n - 1));
    }
    chosen.dedup();
    debug_assert_eq!(chosen.len(), size);
    Ok(chosen)
}

/// As [`weighted_subsample_indices`], returning cloned records in their
/// original relative order.
pub fn weighted_subsample(
    records: &[FlowRecord],
    lambda: f64,
    size: usize,
    seed: u64,
    stream: &str,
) -> Result<Vec<FlowRecord>, FlowError> {
    let mut rng = DetRng::child(seed, stream);
    let idx = weighted_subsample_indices(records, lambda, size, &mut rng)?;
    Ok(idx.into_iter().map(|i| records[i].clone()).collect())
}

/// Allocate `total` units proportionally to `weights` with largest-remainder
/// rounding; ties go to the lower index.
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total.saturating_sub(assigned) {
        alloc[order[i % order.len()]] += 1;
    }
    alloc
}

/// Split records into stratified queries plus a semi-balanced database.
///
/// Queries preserve the source class distribution (largest-remainder
/// quotas); the database is drawn from the remainder with weights
/// `N_C^-lambda_db`. Classes with a single sample go wholly to the database
/// side and a warning is logged.
pub fn prepare_eval(
    records: &[FlowRecord],
    q_size: usize,
    db_size: usize,
    lambda_db: f64,
    seed: u64,
) -> Result<EvalPartition, FlowError> {
    if q_size + db_size > records.len() {
        return Err(FlowError::PartitionTooLarge {
            requested: q_size + db_size,
            available: records.len(),
        });
    }

    // Bucket record indices per class, in input order.
    let mut buckets: std::collections::BTreeMap<ClassId, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        buckets.entry(r.label).or_default().push(i);
    }
    let mut eligible: Vec<(ClassId, usize)> = Vec::new();
    for (&cid, idxs) in &buckets {
        if idxs.len() < 2 {
            log::warn!("class {cid} has a single sample; placing it in the database only");
        } else {
            eligible.push((cid, idxs.len()));
        }
    }
    if eligible.is_empty() && q_size > 0 {
        return Err(FlowError::StratificationInfeasible(
            "no class has at least 2 samples".into(),
        ));
    }
    let capacity: usize = eligible.iter().map(|&(_, n)| n - 1).sum();
    if q_size > capacity {
        return Err(FlowError::StratificationInfeasible(format!(
            "query size {q_size} exceeds per-class capacity {capacity}"
        )));
    }

    // Largest-remainder quota per eligible class, capped at count-1 so every
    // class keeps a database representative; excess is reallocated.
    let mut alloc = vec![0usize; eligible.len()];
    let mut remaining = q_size;
    let mut open: Vec<usize> = (0..eligible.len()).collect();
    while remaining > 0 {
        let weights: Vec<f64> = open.iter().map(|&i| eligible[i].1 as f64).collect();
        let round = largest_remainder(&weights, remaining);
        let mut progressed = false;
        for (slot, &i) in open.iter().enumerate() {
            let cap = eligible[i].1 - 1;
            let take = round[slot].min(cap - alloc[i]);
            alloc[i] += take;
            remaining -= take;
            if take > 0 {
                progressed = true;
            }
        }
        open.retain(|&i| alloc[i] < eligible[i].1 - 1);
        if !progressed && remaining > 0 {
            return Err(FlowError::StratificationInfeasible(format!(
                "could not place {remaining} query samples"
            )));
        }
    }

    // Draw the per-class query members uniformly without replacement.
    let mut qrng = DetRng::child(seed, "eval:q");
    let mut in_query = vec![false; records.len()];
    for (slot, &(cid, _)) in eligible.iter().enumerate() {
        let idxs = &buckets[&cid];
        let want = alloc[slot];
        if want == 0 {
            continue;
        }
        let mut keyed: Vec<(f64, usize)> = idxs
            .iter()
            .map(|&i| (qrng.uniform(), i))
            .collect();
        keyed.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, i) in keyed[..want].iter() {
            in_query[i] = true;
        }
    }
    let queries: Vec<FlowRecord> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| in_query[*i])
        .map(|(_, r)| r.clone())
        .collect();
    let remainder: Vec<FlowRecord> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| !in_query[*i])
        .map(|(_, r)| r.clone())
        .collect();

    let mut dbrng = DetRng::child(seed, "eval:db");
    let db_idx = weighted_subsample_indices(&remainder, lambda_db, db_size, &mut dbrng)?;
    let database: Vec<FlowRecord> = db_idx.into_iter().map(|i| remainder[i].clone()).collect();

    Ok(EvalPartition {
        database,
        queries,
        lambda_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn flow(id: u64, label: ClassId) -> FlowRecord {
        let mut sizes = [0u16; PACKET_SEQ_LEN];
        let mut dirs = [0i8; PACKET_SEQ_LEN];
        let mut ipts = [0f32; PACKET_SEQ_LEN];
        for i in 0..4 {
            sizes[i] = 100 + i as u16;
            dirs[i] = if i % 2 == 0 { 1 } else { -1 };
            ipts[i] = i as f32;
        }
        FlowRecord {
            flow_id: id,
            label,
            pkts: PacketSequence::new(sizes, dirs, ipts, 4).unwrap(),
        }
    }

    fn records_with_counts(counts: &[usize]) -> Vec<FlowRecord> {
        let mut out = Vec::new();
        let mut id = 0u64;
        for (cid, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                out.push(flow(id, cid as ClassId));
                id += 1;
            }
        }
        out
    }

    #[test]
    fn domain_truncation_keeps_rightmost_four_labels() {
        let rules = DomainRules::empty();
        assert_eq!(normalize_domain("example.com", &rules).unwrap(), "example.com");
        assert_eq!(
            normalize_domain("x.y.z.w.example.com", &rules).unwrap(),
            "z.w.example.com"
        );
        assert_eq!(
            normalize_domain("a.b.c.d", &rules).unwrap(),
            "a.b.c.d"
        );
    }

    #[test]
    fn domain_rules_first_match_wins() {
        let rules = DomainRules::parse(
            "# unify mirrored tile hosts\n\
             ^[a-c]\\.tile\\.openstreetmap\\.org$\t$RND.tile.openstreetmap.org\n\
             ^[a-z0-9-]+-gcp\\.api\\.snapchat\\.com$\t$LOC-gcp.api.snapchat.com\n",
        )
        .unwrap();
        assert_eq!(
            normalize_domain("a.tile.openstreetmap.org", &rules).unwrap(),
            "$RND.tile.openstreetmap.org"
        );
        assert_eq!(
            normalize_domain("europe-west1-gcp.api.snapchat.com", &rules).unwrap(),
            "$LOC-gcp.api.snapchat.com"
        );
        assert_eq!(
            normalize_domain("www.muni.cz", &rules).unwrap(),
            "www.muni.cz"
        );
    }

    #[test]
    fn empty_domain_is_an_error() {
        assert!(matches!(
            normalize_domain("", &DomainRules::empty()),
            Err(FlowError::EmptyDomain)
        ));
    }

    fn table_of(c: usize) -> ClassTable {
        ClassTable::new(
            (0..c)
                .map(|i| ClassEntry {
                    id: i as ClassId,
                    name: format!("class{i:04}"),
                    count: 1,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let table = table_of(2000);
        let s = split_classes(&table, (1000, 500, 500), 7).unwrap();
        assert_eq!(s.train_classes.len(), 1000);
        assert_eq!(s.val_classes.len(), 500);
        assert_eq!(s.test_classes.len(), 500);
        s.assert_disjoint();
    }

    #[test]
    fn split_of_three_is_a_permutation() {
        let table = table_of(3);
        let s = split_classes(&table, (1, 1, 1), 3).unwrap();
        let mut all: Vec<ClassId> = s
            .train_classes
            .iter()
            .chain(&s.val_classes)
            .chain(&s.test_classes)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn split_is_deterministic() {
        let table = table_of(50);
        let a = split_classes(&table, (20, 10, 10), 99).unwrap();
        let b = split_classes(&table, (20, 10, 10), 99).unwrap();
        assert_eq!(a, b);
        let c = split_classes(&table, (20, 10, 10), 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_oversized_counts() {
        let table = table_of(5);
        assert!(split_classes(&table, (3, 2, 1), 0).is_err());
    }

    #[test]
    fn subsample_rejects_oversized_request() {
        let records = records_with_counts(&[3]);
        assert!(weighted_subsample(&records, 0.5, 4, 0, "s").is_err());
    }

    #[test]
    fn subsample_returns_distinct_records() {
        let records = records_with_counts(&[40, 10]);
        let picked = weighted_subsample(&records, 0.5, 25, 1, "s").unwrap();
        assert_eq!(picked.len(), 25);
        let mut ids: Vec<u64> = picked.iter().map(|r| r.flow_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 25);
    }

    #[test]
    fn lambda_one_flattens_shares() {
        // counts {400,100}, size 100: lambda=1 weights equalize class totals.
        let records = records_with_counts(&[400, 100]);
        let mut minority_total = 0usize;
        let runs = 300;
        for seed in 0..runs {
            let picked = weighted_subsample(&records, 1.0, 100, seed, "mc").unwrap();
            minority_total += picked.iter().filter(|r| r.label == 1).count();
        }
        let share = minority_total as f64 / (100 * runs) as f64;
        assert!((share - 0.5).abs() < 0.03, "minority share {share}");
    }

    #[test]
    fn lambda_zero_is_uniform() {
        let records = records_with_counts(&[400, 100]);
        let mut minority_total = 0usize;
        let runs = 300;
        for seed in 0..runs {
            let picked = weighted_subsample(&records, 0.0, 100, seed, "mc").unwrap();
            minority_total += picked.iter().filter(|r| r.label == 1).count();
        }
        let share = minority_total as f64 / (100 * runs) as f64;
        assert!((share - 0.2).abs() < 0.03, "minority share {share}");
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        let alloc = largest_remainder(&[1.0, 0.5, 1.0 / 3.0, 0.25], 400);
        assert_eq!(alloc.iter().sum::<usize>(), 400);
        assert_eq!(alloc, vec![192, 96, 64, 48]);
    }

    #[test]
    fn prepare_eval_stratifies_queries() {
        let records = records_with_counts(&[100, 100, 100, 100]);
        let part = prepare_eval(&records, 40, 40, 0.5, 5).unwrap();
        assert_eq!(part.queries.len(), 40);
        assert_eq!(part.database.len(), 40);
        for c in 0..4 {
            let n = part.queries.iter().filter(|r| r.label == c).count();
            assert_eq!(n, 10, "class {c}");
        }
        // No flow appears on both sides.
        let qids: BTreeSet<u64> = part.queries.iter().map(|r| r.flow_id).collect();
        assert!(part.database.iter().all(|r| !qids.contains(&r.flow_id)));
    }

    #[test]
    fn prepare_eval_sends_singletons_to_database() {
        let mut records = records_with_counts(&[50, 50]);
        records.push(flow(999, 2)); // singleton class
        let part = prepare_eval(&records, 20, 30, 0.5, 1).unwrap();
        assert!(part.queries.iter().all(|r| r.label != 2));
    }

    #[test]
    fn prepare_eval_rejects_oversized() {
        let records = records_with_counts(&[10, 10]);
        assert!(prepare_eval(&records, 15, 10, 0.5, 0).is_err());
    }
}
