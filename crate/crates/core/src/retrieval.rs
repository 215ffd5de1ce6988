//! Hamming-radius retrieval over packed ternary codes.
//!
//! Three strategies return the same id sets:
//!
//! * `LutExact`: one lookup of the query's bucket (`r = 0`).
//! * `LutProbe`: enumerate every code within distance `r` of the query and
//!   union the bucket hits. Each perturbed position takes one of its two
//!   alternative symbols (ternary alphabet) or its sign flip (binary
//!   alphabet), so the probe count is `sum_{j<=r} C(m, j) * a^j` with
//!   `a = 2` or `a = 1`.
//! * `BruteForce`: scan all packed codes with the word-parallel kernel.
//!
//! # Index file layout
//!
//! All integers little-endian:
//!
//! ```text
//! magic    b"SPHX"
//! version  u32 (= 1)
//! m        u32
//! alphabet u8 (0 = ternary, 1 = binary), 3 zero bytes
//! n        u64
//! codes    n * ceil(m / 32) u64 words, item order
//! buckets  u64 count, then per bucket: u32 length, length * u32 ids
//! ```
//!
//! Buckets are stored in order of their smallest id and list ids ascending.

use std::time::Instant;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::codes::{packed_distance, TernaryCode, SYMBOLS_PER_WORD};
use crate::error::{check_len, Error, Result};
use crate::io::Reader;

const MAGIC: &[u8; 4] = b"SPHX";
const VERSION: u32 = 1;

/// Per-item scan cost in probe units used when no calibration is run.
///
/// With this value, `r <= 3` probes and `r >= 4` scans for 59,000 codes of
/// length 48.
pub const FALLBACK_KAPPA: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alphabet {
    /// Symbols `{-1, 0, +1}`; two alternatives per probed position.
    Ternary,
    /// Dense `{-1, +1}` codes; probing only flips signs.
    Binary,
}

impl Alphabet {
    fn alternatives(self) -> u128 {
        match self {
            Alphabet::Ternary => 2,
            Alphabet::Binary => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LutExact,
    LutProbe,
    BruteForce,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::LutExact => "lut_exact",
            Strategy::LutProbe => "lut_probe",
            Strategy::BruteForce => "brute_force",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryPlan {
    pub strategy: Strategy,
    pub radius: u32,
    /// In probe units: probes for LUT strategies, `N * kappa` for scans.
    pub estimated_cost: f64,
}

/// Relative cost of scanning one item versus issuing one LUT probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub kappa: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            kappa: FALLBACK_KAPPA,
        }
    }
}

impl CostModel {
    /// Times the scan kernel and LUT probes on random codes of length `m`.
    pub fn calibrate(m: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 20_000;
        let codes: Vec<TernaryCode> = (0..n)
            .map(|_| TernaryCode::new((0..m).map(|_| rng.random_range(-1i8..=1)).collect()))
            .collect::<Result<_>>()?;
        let index = CodeIndex::build(&codes, Alphabet::Ternary)?;
        let queries: Vec<Vec<u64>> = codes.iter().take(64).map(TernaryCode::to_words).collect();

        let mut best_scan = f64::INFINITY;
        let mut best_probe = f64::INFINITY;
        for _ in 0..5 {
            let start = Instant::now();
            let mut sink = 0usize;
            for q in queries.iter().take(8) {
                sink += index.scan_words(q, 1).len();
            }
            let per_item = start.elapsed().as_secs_f64() / (8 * n) as f64;
            best_scan = best_scan.min(per_item);

            let start = Instant::now();
            let mut probes = 0u64;
            for q in &queries {
                let (ids, count) = index.probe_words(q, 1);
                sink += ids.len();
                probes += count;
            }
            let per_probe = start.elapsed().as_secs_f64() / probes as f64;
            best_probe = best_probe.min(per_probe);
            std::hint::black_box(sink);
        }
        if !(best_scan > 0.0 && best_probe > 0.0) {
            return Ok(Self::default());
        }
        Ok(Self {
            kappa: best_scan / best_probe,
        })
    }
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// `sum_{j <= r} C(m, j) * a^j`, saturating.
pub fn probe_count(m: usize, r: u32, alphabet: Alphabet) -> u128 {
    let a = alphabet.alternatives();
    (0..=r.min(m as u32) as u64)
        .map(|j| binomial(m as u64, j).saturating_mul(a.saturating_pow(j as u32)))
        .fold(0u128, u128::saturating_add)
}

/// Immutable LUT plus packed code array.
#[derive(Clone, Debug)]
pub struct CodeIndex {
    m: usize,
    words: usize,
    alphabet: Alphabet,
    codes: Vec<u64>,
    buckets: Vec<Vec<u32>>,
    lut: FxHashMap<Box<[u64]>, u32>,
    cost: CostModel,
}

impl PartialEq for CodeIndex {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
            && self.alphabet == other.alphabet
            && self.codes == other.codes
            && self.buckets == other.buckets
    }
}

impl CodeIndex {
    pub fn build(codes: &[TernaryCode], alphabet: Alphabet) -> Result<Self> {
        let m = codes.first().ok_or(Error::EmptyInput("codes to index"))?.len();
        let words = TernaryCode::words_for(m);
        let mut packed = vec![0u64; codes.len() * words];
        for (i, c) in codes.iter().enumerate() {
            check_len(m, c.len())?;
            if alphabet == Alphabet::Binary && c.nonzeros() != m {
                return Err(Error::InvalidArgument(format!(
                    "code {i} has zero symbols but the index alphabet is binary"
                )));
            }
            c.pack_into(&mut packed[i * words..(i + 1) * words]);
        }
        if codes.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many codes for u32 ids".into()));
        }
        let mut lut: FxHashMap<Box<[u64]>, u32> = FxHashMap::default();
        let mut buckets: Vec<Vec<u32>> = Vec::new();
        for (id, key) in packed.chunks_exact(words).enumerate() {
            let slot = *lut.entry(key.into()).or_insert_with(|| {
                buckets.push(Vec::new());
                (buckets.len() - 1) as u32
            });
            buckets[slot as usize].push(id as u32);
        }
        Ok(Self {
            m,
            words,
            alphabet,
            codes: packed,
            buckets,
            lut,
            cost: CostModel::default(),
        })
    }

    pub fn with_cost_model(mut self, cost: CostModel) -> Self {
        self.cost = cost;
        self
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost
    }

    pub fn code_len(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.words
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn buckets(&self) -> &[Vec<u32>] {
        &self.buckets
    }

    pub fn packed_code(&self, id: usize) -> &[u64] {
        &self.codes[id * self.words..(id + 1) * self.words]
    }

    pub fn code(&self, id: usize) -> Result<TernaryCode> {
        TernaryCode::from_words(self.packed_code(id), self.m)
    }

    fn check_query(&self, q: &TernaryCode, r: u32) -> Result<Vec<u64>> {
        check_len(self.m, q.len())?;
        if r as usize > self.m {
            return Err(Error::InvalidArgument(format!(
                "radius {r} exceeds code length {}",
                self.m
            )));
        }
        if self.alphabet == Alphabet::Binary && q.nonzeros() != self.m {
            return Err(Error::InvalidArgument(
                "binary index queried with a code containing zeros".into(),
            ));
        }
        Ok(q.to_words())
    }

    /// Cheapest strategy under the index's cost model.
    pub fn plan_query(&self, r: u32) -> QueryPlan {
        if r == 0 {
            return QueryPlan {
                strategy: Strategy::LutExact,
                radius: 0,
                estimated_cost: 1.0,
            };
        }
        let probes = probe_count(self.m, r, self.alphabet) as f64;
        let scan = self.len() as f64 * self.cost.kappa;
        if scan < probes {
            QueryPlan {
                strategy: Strategy::BruteForce,
                radius: r,
                estimated_cost: scan,
            }
        } else {
            QueryPlan {
                strategy: Strategy::LutProbe,
                radius: r,
                estimated_cost: probes,
            }
        }
    }

    /// Ids within Hamming distance `r` of `q`, ascending.
    pub fn query(&self, q: &TernaryCode, r: u32) -> Result<Vec<u32>> {
        self.query_with(q, r, self.plan_query(r).strategy)
    }

    pub fn query_with(&self, q: &TernaryCode, r: u32, strategy: Strategy) -> Result<Vec<u32>> {
        let words = self.check_query(q, r)?;
        Ok(match strategy {
            Strategy::LutExact => {
                if r != 0 {
                    return Err(Error::InvalidArgument(
                        "exact lookup only answers radius 0".into(),
                    ));
                }
                self.lookup(&words).to_vec()
            }
            Strategy::LutProbe => self.probe_words(&words, r).0,
            Strategy::BruteForce => self.scan_words(&words, r),
        })
    }

    /// Probe-based query that also reports how many LUT probes were issued.
    pub fn query_probe_counted(&self, q: &TernaryCode, r: u32) -> Result<(Vec<u32>, u64)> {
        let words = self.check_query(q, r)?;
        Ok(self.probe_words(&words, r))
    }

    fn lookup(&self, key: &[u64]) -> &[u32] {
        self.lut
            .get(key)
            .map_or(&[][..], |&slot| &self.buckets[slot as usize])
    }

    fn scan_words(&self, q: &[u64], r: u32) -> Vec<u32> {
        self.codes
            .chunks_exact(self.words)
            .enumerate()
            .filter(|(_, c)| packed_distance(c, q) <= r)
            .map(|(id, _)| id as u32)
            .collect()
    }

    fn probe_words(&self, q: &[u64], r: u32) -> (Vec<u32>, u64) {
        let mut probe = q.to_vec();
        let mut out = Vec::new();
        let mut count = 0u64;
        self.probe_from(&mut probe, 0, r, &mut out, &mut count);
        // Every probed code is distinct, so buckets never repeat.
        out.sort_unstable();
        (out, count)
    }

    fn probe_from(&self, probe: &mut [u64], start: usize, budget: u32, out: &mut Vec<u32>, count: &mut u64) {
        *count += 1;
        out.extend_from_slice(self.lookup(probe));
        if budget == 0 {
            return;
        }
        for pos in start..self.m {
            let word = pos / SYMBOLS_PER_WORD;
            let shift = 2 * (pos % SYMBOLS_PER_WORD);
            let original = (probe[word] >> shift) & 3;
            let alternatives: &[u64] = match (self.alphabet, original) {
                (Alphabet::Binary, 0b01) => &[0b10],
                (Alphabet::Binary, _) => &[0b01],
                (Alphabet::Ternary, 0b00) => &[0b01, 0b10],
                (Alphabet::Ternary, 0b01) => &[0b00, 0b10],
                (Alphabet::Ternary, _) => &[0b00, 0b01],
            };
            for &alt in alternatives {
                probe[word] = (probe[word] & !(3 << shift)) | (alt << shift);
                self.probe_from(probe, pos + 1, budget - 1, out, count);
            }
            probe[word] = (probe[word] & !(3 << shift)) | (original << shift);
        }
    }

    /// Distance from `q` to every indexed code, in id order.
    pub fn distances(&self, q: &TernaryCode) -> Result<Vec<u32>> {
        check_len(self.m, q.len())?;
        let words = q.to_words();
        Ok(self
            .codes
            .chunks_exact(self.words)
            .map(|c| packed_distance(c, &words))
            .collect())
    }

    /// The `limit` nearest ids by Hamming distance; ties by ascending id.
    pub fn rank_all(&self, q: &TernaryCode, limit: usize) -> Result<Vec<u32>> {
        if limit > self.len() {
            return Err(Error::InvalidArgument(format!(
                "limit {limit} exceeds database size {}",
                self.len()
            )));
        }
        let dist = self.distances(q)?;
        // Counting sort on distance keeps ids ascending within each distance.
        let mut by_distance: Vec<Vec<u32>> = vec![Vec::new(); self.m + 1];
        for (id, d) in dist.into_iter().enumerate() {
            by_distance[d as usize].push(id as u32);
        }
        Ok(by_distance.into_iter().flatten().take(limit).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.codes.len() * 8 + self.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.push(match self.alphabet {
            Alphabet::Ternary => 0,
            Alphabet::Binary => 1,
        });
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for w in &self.codes {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(self.buckets.len() as u64).to_le_bytes());
        for b in &self.buckets {
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            for id in b {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out
    }

    /// Parses and validates an index image produced by [`CodeIndex::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes, "index file");
        if rd.take(4)? != MAGIC {
            return Err(Error::Format("not an index file".into()));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let m = rd.u32()? as usize;
        let alphabet = match rd.take(4)?[0] {
            0 => Alphabet::Ternary,
            1 => Alphabet::Binary,
            other => return Err(Error::Format(format!("unknown alphabet tag {other}"))),
        };
        let n = rd.u64()? as usize;
        if m == 0 {
            return Err(Error::Format("zero code length".into()));
        }
        let words = TernaryCode::words_for(m);
        let total = n
            .checked_mul(words)
            .filter(|t| t.checked_mul(8).is_some_and(|b| b <= rd.remaining()))
            .ok_or_else(|| Error::Format("truncated code array".into()))?;
        let codes: Vec<u64> = (0..total).map(|_| rd.u64()).collect::<Result<_>>()?;
        for c in codes.chunks_exact(words) {
            let code = TernaryCode::from_words(c, m)?;
            if alphabet == Alphabet::Binary && code.nonzeros() != m {
                return Err(Error::Format("binary index holds a zero symbol".into()));
            }
        }

        let bucket_count = rd.u64()? as usize;
        let mut buckets = Vec::with_capacity(bucket_count.min(n));
        let mut lut = FxHashMap::default();
        let mut seen = vec![false; n];
        let mut last_first: Option<u32> = None;
        for slot in 0..bucket_count {
            let len = rd.u32()? as usize;
            if len == 0 || len > n {
                return Err(Error::Format("bad bucket length".into()));
            }
            let ids: Vec<u32> = (0..len).map(|_| rd.u32()).collect::<Result<_>>()?;
            if ids.windows(2).any(|w| w[0] >= w[1]) || last_first.is_some_and(|f| f >= ids[0]) {
                return Err(Error::Format("bucket directory is not in canonical order".into()));
            }
            last_first = Some(ids[0]);
            let key = &codes[ids[0] as usize * words..(ids[0] as usize + 1) * words];
            for &id in &ids {
                let id = id as usize;
                if id >= n || seen[id] {
                    return Err(Error::Format(format!("bucket id {id} invalid or repeated")));
                }
                seen[id] = true;
                if &codes[id * words..(id + 1) * words] != key {
                    return Err(Error::Format(format!("id {id} filed under a foreign code")));
                }
            }
            if lut.insert(Box::<[u64]>::from(key), slot as u32).is_some() {
                return Err(Error::Format("two buckets share a code".into()));
            }
            buckets.push(ids);
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("bucket directory misses ids".into()));
        }
        rd.finish()?;
        Ok(Self {
            m,
            words,
            alphabet,
            codes,
            buckets,
            lut,
            cost: CostModel::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use crate::codes::hamming_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_codes(n: usize, m: usize, seed: u64) -> Vec<TernaryCode> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| TernaryCode::new((0..m).map(|_| rng.random_range(-1i8..=1)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn identical_codes_share_one_bucket() {
        let c: TernaryCode = "+0-0".parse().unwrap();
        let idx = CodeIndex::build(&[c.clone(), c.clone(), c.clone()], Alphabet::Ternary).unwrap();
        assert_eq!(idx.buckets(), &[vec![0, 1, 2]]);
        assert_eq!(idx.query(&c, 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn distinct_codes_get_singleton_buckets() {
        let db: Vec<TernaryCode> = ["+00", "0+0", "00+", "---"].iter().map(|s| s.parse().unwrap()).collect();
        let idx = CodeIndex::build(&db, Alphabet::Ternary).unwrap();
        assert_eq!(idx.buckets().len(), 4);
        assert!(idx.buckets().iter().all(|b| b.len() == 1));
    }

    #[test]
    fn radius_edge_cases() {
        let db = random_codes(40, 10, 1);
        let idx = CodeIndex::build(&db, Alphabet::Ternary).unwrap();
        let absent: TernaryCode = "++++++++++".parse().unwrap();
        let expect0: Vec<u32> = (0..40).filter(|&i| db[i as usize] == absent).collect();
        assert_eq!(idx.query(&absent, 0).unwrap(), expect0);
        assert_eq!(idx.query(&absent, 10).unwrap(), (0..40).collect::<Vec<u32>>());
        assert!(idx.query(&absent, 11).is_err());
        assert!(idx.query(&"+".parse().unwrap(), 0).is_err());
        assert!(idx.query_with(&absent, 1, Strategy::LutExact).is_err());
    }

    #[test]
    fn probe_equals_scan_on_random_db() {
        let db = random_codes(200, 12, 2);
        let idx = CodeIndex::build(&db, Alphabet::Ternary).unwrap();
        for q in db.iter().take(30) {
            for r in 1..=3 {
                let (probe, count) = idx.query_probe_counted(q, r).unwrap();
                assert_eq!(probe, idx.query_with(q, r, Strategy::BruteForce).unwrap());
                assert_eq!(count as u128, probe_count(12, r, Alphabet::Ternary));
            }
        }
    }

    #[test]
    fn binary_mode_flips_signs_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let db: Vec<TernaryCode> = (0..100)
            .map(|_| TernaryCode::new((0..10).map(|_| if rng.random() { 1 } else { -1 }).collect()).unwrap())
            .collect();
        let idx = CodeIndex::build(&db, Alphabet::Binary).unwrap();
        for q in db.iter().take(10) {
            let (ids, count) = idx.query_probe_counted(q, 2).unwrap();
            assert_eq!(count, 1 + 10 + 45);
            assert_eq!(ids, idx.query_with(q, 2, Strategy::BruteForce).unwrap());
        }
        assert!(CodeIndex::build(&["+0".parse().unwrap()], Alphabet::Binary).is_err());
        assert!(idx.query(&TernaryCode::zeros(10), 1).is_err());
    }

    #[test]
    fn plan_examples() {
        let idx = CodeIndex::build(&random_codes(10, 64, 4), Alphabet::Ternary).unwrap();
        assert_eq!(idx.plan_query(0).strategy, Strategy::LutExact);
        let plan = idx.plan_query(2);
        assert_eq!(plan.strategy, Strategy::BruteForce);
        assert_eq!(probe_count(64, 2, Alphabet::Ternary), 1 + 128 + 2016 * 4);

        assert_eq!(probe_count(16, 1, Alphabet::Ternary), 33);
        let big = CodeIndex {
            codes: vec![0; 1_000_000],
            ..CodeIndex::build(&random_codes(1, 16, 5), Alphabet::Ternary).unwrap()
        };
        assert_eq!(big.len(), 1_000_000);
        assert_eq!(big.plan_query(1).strategy, Strategy::LutProbe);
    }

    #[test]
    fn fallback_cost_matches_reported_crossover() {
        let idx = CodeIndex {
            codes: vec![0; 59_000 * 2],
            ..CodeIndex::build(&random_codes(1, 48, 6), Alphabet::Ternary).unwrap()
        };
        for r in 1..=3 {
            assert_eq!(idx.plan_query(r).strategy, Strategy::LutProbe, "r={r}");
        }
        for r in 4..=8 {
            assert_eq!(idx.plan_query(r).strategy, Strategy::BruteForce, "r={r}");
        }
    }

    #[test]
    fn rank_all_orders_by_distance_then_id() {
        let db = random_codes(120, 9, 7);
        let idx = CodeIndex::build(&db, Alphabet::Ternary).unwrap();
        let q = &db[17];
        let ranked = idx.rank_all(q, 120).unwrap();
        let mut oracle: Vec<(u32, u32)> = db
            .iter()
            .enumerate()
            .map(|(i, c)| (hamming_distance(q, c).unwrap(), i as u32))
            .collect();
        oracle.sort();
        assert_eq!(ranked, oracle.iter().map(|p| p.1).collect::<Vec<_>>());
        assert_eq!(idx.rank_all(q, 5).unwrap(), ranked[..5]);
        let self_hits = db.iter().filter(|c| *c == q).count();
        assert!(ranked[..self_hits].iter().all(|&id| &db[id as usize] == q));
        assert!(idx.rank_all(q, 121).is_err());
    }

    #[test]
    fn file_image_round_trip_and_validation() {
        let db = random_codes(300, 40, 8);
        let idx = CodeIndex::build(&db, Alphabet::Ternary).unwrap();
        let bytes = idx.to_bytes();
        let back = CodeIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        assert!(CodeIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(CodeIndex::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CodeIndex::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn buckets_partition_ids(seed in 0u64..10_000, n in 1usize..200, m in 1usize..8) {
            let db = random_codes(n, m, seed);
            let idx = CodeIndex::build(&db, Alphabet::Ternary).unwrap();
            let mut all: Vec<u32> = idx.buckets().iter().flatten().copied().collect();
            prop_assert_eq!(all.len(), n);
            all.sort_unstable();
            prop_assert_eq!(all, (0..n as u32).collect::<Vec<_>>());
            for (i, c) in db.iter().enumerate() {
                prop_assert!(idx.query(c, 0).unwrap().contains(&(i as u32)));
            }
        }

        #[test]
        fn balls_are_nested(seed in 0u64..10_000, r1 in 0u32..4, dr in 0u32..3) {
            let db = random_codes(150, 10, seed);
            let idx = CodeIndex::build(&db, Alphabet::Ternary).unwrap();
            let q = &random_codes(1, 10, seed ^ 1)[0];
            let small = idx.query(q, r1).unwrap();
            let big = idx.query(q, r1 + dr).unwrap();
            prop_assert!(small.iter().all(|id| big.binary_search(id).is_ok()));
        }
    }
}
