//! Peeling transition kernels for the half-plane (`q_inf`) and the finite
//! Boltzmann disk (`q_L`, an h-transform of `q_inf` with a cemetery state),
//! plus the swallowed-volume sampler.
//!
//! Rows are materialized and cached up to a configurable perimeter; beyond
//! that `sample_step` falls back to an exact sequential scan of the row,
//! whose expected cost is O(1) because the outcome mass concentrates on
//! small `m`. Nothing is ever extrapolated: the scan evaluates the same
//! closed-form probabilities the materialized rows hold.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;

use crate::combin::{hurwitz_zeta, EnumCache, LOG_WEIGHT_BASE};
use crate::error::{Error, Result};

const LN_2: f64 = core::f64::consts::LN_2;

/// Which chain the kernel drives: the half-plane limit (no cemetery) or the
/// Boltzmann disk of boundary `L` (cemetery mass completes each row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Infinite,
    Finite(u64),
}

/// Outcome of one peeling step at perimeter `k`: a perimeter change
/// `k -> k - m` with `m` in `{-1, 0, ..., k-1}`, or the cemetery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Step(i64),
    Cemetery,
}

/// Harmonic function `h_L(j) = L / (L + j)`.
pub fn h_l(l: u64, j: u64) -> f64 {
    l as f64 / (l + j) as f64
}

#[derive(Debug)]
struct Row {
    /// Probabilities indexed by `m + 1` for `m = -1, ..., k-1`.
    probs: Vec<f64>,
    cemetery: f64,
    sampler: RowSampler,
}

#[derive(Debug)]
enum RowSampler {
    /// Cumulative probabilities over `probs` then cemetery.
    Cdf(Vec<f64>),
    Alias(AliasTable),
}

/// Vose alias table for O(1) draws from a fixed discrete law.
#[derive(Debug)]
struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut small: Vec<u32> = Vec::new();
        let mut large: Vec<u32> = Vec::new();
        for (i, &w) in scaled.iter().enumerate() {
            if w < 1.0 {
                small.push(i as u32);
            } else {
                large.push(i as u32);
            }
        }
        let mut prob = vec![1.0; n];
        let mut alias = vec![0u32; n];
        while let (Some(s), Some(l)) = (small.pop(), large.pop()) {
            prob[s as usize] = scaled[s as usize];
            alias[s as usize] = l;
            scaled[l as usize] -= 1.0 - scaled[s as usize];
            if scaled[l as usize] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        // Leftovers are 1.0 up to rounding.
        Self { prob, alias }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

/// Transition kernel with lazily materialized rows.
///
/// Immutable after construction (row initialization goes through
/// `OnceLock`), so a single table can be shared across workers.
#[derive(Debug)]
pub struct KernelTable {
    regime: Regime,
    enums: Arc<EnumCache>,
    materialize_limit: usize,
    rows: Vec<OnceLock<Row>>,
}

/// Rows up to this perimeter get cached samplers by default; larger rows are
/// scanned on the fly.
pub const DEFAULT_MATERIALIZE_LIMIT: usize = 512;

/// Rows at or below this perimeter use cumulative search; larger cached rows
/// get an alias table (the build cost only amortizes on big rows).
const CDF_ROW_MAX: usize = 64;

impl KernelTable {
    pub fn new(regime: Regime, enums: Arc<EnumCache>, materialize_limit: usize) -> Self {
        if let Regime::Finite(l) = regime {
            assert!(l >= 1);
        }
        let mut rows = Vec::with_capacity(materialize_limit + 1);
        rows.resize_with(materialize_limit + 1, OnceLock::new);
        Self {
            regime,
            enums,
            materialize_limit,
            rows,
        }
    }

    pub fn with_defaults(regime: Regime) -> Self {
        Self::new(regime, Arc::new(EnumCache::default()), DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn enums(&self) -> &Arc<EnumCache> {
        &self.enums
    }

    /// `q_inf(k, k-m) = 2 Z1(m+1) C1(k-m) / C1(k)`.
    pub fn q_inf(&self, k: u64, m: i64) -> Result<f64> {
        if k < 1 {
            return Err(Error::Domain("q_inf requires k >= 1".into()));
        }
        if m < -1 || m >= k as i64 {
            return Err(Error::Domain(format!(
                "q_inf outcome m = {m} outside [-1, {}]",
                k as i64 - 1
            )));
        }
        let target = (k as i64 - m) as u64;
        Ok((LN_2 + self.enums.log_z1((m + 1) as u64) + self.enums.log_c1(target)?
            - self.enums.log_c1(k)?)
            .exp())
    }

    /// `q_L(k, k-m) = (h_L(k-m) / h_L(k)) q_inf(k, k-m)` for the finite
    /// regime; equal to `q_inf` in the infinite regime.
    pub fn prob(&self, k: u64, m: i64) -> Result<f64> {
        let q = self.q_inf(k, m)?;
        Ok(match self.regime {
            Regime::Infinite => q,
            Regime::Finite(l) => {
                let target = (k as i64 - m) as u64;
                q * h_l(l, target) / h_l(l, k)
            }
        })
    }

    /// Cemetery mass of row `k`: `1 - sum_m q_L(k, k-m)` (identically 0 in
    /// the infinite regime up to rounding). Compensated summation keeps the
    /// cancellation error far below the `O(L^{-3/2})` signal.
    pub fn cemetery_prob(&self, k: u64) -> Result<f64> {
        if matches!(self.regime, Regime::Infinite) {
            return Ok(0.0);
        }
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for m in -1..k as i64 {
            let y = self.prob(k, m)? - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        Ok((1.0 - sum).max(0.0))
    }

    fn build_row(&self, k: u64) -> Result<Row> {
        let mut probs = Vec::with_capacity(k as usize + 1);
        for m in -1..k as i64 {
            probs.push(self.prob(k, m)?);
        }
        let cemetery = match self.regime {
            Regime::Infinite => 0.0,
            Regime::Finite(_) => (1.0 - probs.iter().sum::<f64>()).max(0.0),
        };
        let sampler = if (k as usize) <= CDF_ROW_MAX {
            let mut cdf = Vec::with_capacity(probs.len() + 1);
            let mut acc = 0.0;
            for &p in &probs {
                acc += p;
                cdf.push(acc);
            }
            cdf.push(acc + cemetery);
            RowSampler::Cdf(cdf)
        } else {
            let mut weights = probs.clone();
            weights.push(cemetery);
            RowSampler::Alias(AliasTable::new(&weights))
        };
        Ok(Row {
            probs,
            cemetery,
            sampler,
        })
    }

    fn row(&self, k: u64) -> Result<&Row> {
        let idx = k as usize;
        debug_assert!(idx >= 1 && idx <= self.materialize_limit);
        // OnceLock has no fallible init; errors here only arise from domain
        // bugs, so surface them eagerly.
        if self.rows[idx].get().is_none() {
            let row = self.build_row(k)?;
            let _ = self.rows[idx].set(row);
        }
        Ok(self.rows[idx].get().unwrap())
    }

    /// Draw one peeling outcome at perimeter `k`.
    pub fn sample_step(&self, k: u64, rng: &mut impl Rng) -> Result<StepOutcome> {
        if k < 1 {
            return Err(Error::Domain("sample_step requires k >= 1".into()));
        }
        if k as usize <= self.materialize_limit {
            let row = self.row(k)?;
            let idx = match &row.sampler {
                RowSampler::Cdf(cdf) => {
                    let u: f64 = rng.random::<f64>() * cdf.last().unwrap();
                    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
                }
                RowSampler::Alias(alias) => alias.sample(rng),
            };
            return Ok(if idx == row.probs.len() {
                StepOutcome::Cemetery
            } else {
                StepOutcome::Step(idx as i64 - 1)
            });
        }
        // Exact on-the-fly scan: mass concentrates near m = -1, so the
        // expected number of evaluated terms is O(1) independent of k.
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for m in -1..k as i64 {
            acc += self.prob(k, m)?;
            if u < acc {
                return Ok(StepOutcome::Step(m));
            }
        }
        Ok(match self.regime {
            // An infinite-regime row sums to 1 up to rounding; attribute the
            // leftover sliver to the last outcome.
            Regime::Infinite => StepOutcome::Step(k as i64 - 1),
            Regime::Finite(_) => StepOutcome::Cemetery,
        })
    }

    /// Write rows `1..=max_row` (forcing their construction) to a binary
    /// cache: versioned header, then per row the probabilities for
    /// `m = -1..k-1` and the cemetery mass, little-endian f64.
    pub fn save_cache(&self, path: &Path, max_row: u64) -> Result<()> {
        if max_row as usize > self.materialize_limit {
            return Err(Error::KernelCache(format!(
                "cannot cache {max_row} rows with materialize limit {}",
                self.materialize_limit
            )));
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&CACHE_VERSION.to_le_bytes())?;
        let (tag, l) = match self.regime {
            Regime::Infinite => (0u8, 0u64),
            Regime::Finite(l) => (1u8, l),
        };
        f.write_all(&[tag])?;
        f.write_all(&l.to_le_bytes())?;
        f.write_all(&max_row.to_le_bytes())?;
        for k in 1..=max_row {
            let row = self.row(k)?;
            for &p in &row.probs {
                f.write_all(&p.to_le_bytes())?;
            }
            f.write_all(&row.cemetery.to_le_bytes())?;
        }
        Ok(())
    }

    /// Load a cache written by [`save_cache`]; remaining rows above the
    /// cached range are still built lazily from the closed forms.
    pub fn load_cache(path: &Path, enums: Arc<EnumCache>, materialize_limit: usize) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::KernelCache("bad magic".into()));
        }
        let mut v4 = [0u8; 4];
        f.read_exact(&mut v4)?;
        if u32::from_le_bytes(v4) != CACHE_VERSION {
            return Err(Error::KernelCache("unsupported cache version".into()));
        }
        let mut tag = [0u8; 1];
        f.read_exact(&mut tag)?;
        let mut u8buf = [0u8; 8];
        f.read_exact(&mut u8buf)?;
        let l = u64::from_le_bytes(u8buf);
        let regime = match tag[0] {
            0 => Regime::Infinite,
            1 => Regime::Finite(l),
            _ => return Err(Error::KernelCache("bad regime tag".into())),
        };
        f.read_exact(&mut u8buf)?;
        let max_row = u64::from_le_bytes(u8buf);
        if max_row as usize > materialize_limit {
            return Err(Error::KernelCache(format!(
                "cache holds {max_row} rows, limit is {materialize_limit}"
            )));
        }
        let table = Self::new(regime, enums, materialize_limit);
        for k in 1..=max_row {
            let mut probs = Vec::with_capacity(k as usize + 1);
            for _ in 0..=k {
                f.read_exact(&mut u8buf)?;
                probs.push(f64::from_le_bytes(u8buf));
            }
            f.read_exact(&mut u8buf)?;
            let cemetery = f64::from_le_bytes(u8buf);
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || !(0.0..=1.0).contains(&cemetery) {
                return Err(Error::KernelCache(format!("row {k} out of [0,1]")));
            }
            let sampler = if (k as usize) <= CDF_ROW_MAX {
                let mut cdf = Vec::with_capacity(probs.len() + 1);
                let mut acc = 0.0;
                for &p in &probs {
                    acc += p;
                    cdf.push(acc);
                }
                cdf.push(acc + cemetery);
                RowSampler::Cdf(cdf)
            } else {
                let mut weights = probs.clone();
                weights.push(cemetery);
                RowSampler::Alias(AliasTable::new(&weights))
            };
            let _ = table.rows[k as usize].set(Row {
                probs,
                cemetery,
                sampler,
            });
        }
        Ok(table)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"PKTB";
const CACHE_VERSION: u32 = 1;

/// Swallowed-volume law: `K` is the internal-vertex count of a Boltzmann
/// disk with boundary `m + 1`, `P(K = k) = t(k) / Z1(m+1)` with
/// `t(k) = Card T1(m+1, k) (12 sqrt 3)^{-k}`.
///
/// Small boundaries get truncated CDFs with a matched `k^{-5/2}` power tail
/// (continuous inverse-CDF then floor; total-variation error below 1e-6).
/// The weights `t(k)` are unimodal in `k`, so larger boundaries use exact
/// rejection under a piecewise-constant envelope over dyadic blocks, again
/// with the matched power tail beyond the cap.
#[derive(Debug)]
pub struct VolumeSampler {
    enums: Arc<EnumCache>,
    cached: Vec<OnceLock<VolumeRow>>,
}

/// Boundaries up to here use the truncated-CDF sampler.
const VOLUME_CDF_BOUNDARY_MAX: u64 = 64;
/// Boundaries up to here keep their sampler cached; larger ones (rare: the
/// step law gives them mass ~ m^{-5/2}) rebuild the envelope per draw.
const VOLUME_CACHED_BOUNDARY_MAX: u64 = 1024;

#[derive(Debug)]
enum VolumeRow {
    Cdf(CdfVolumeRow),
    Env(EnvelopeVolumeRow),
}

#[derive(Debug)]
struct CdfVolumeRow {
    k_start: u64,
    /// Cumulative masses of `k_start, k_start+1, ...`, unnormalized.
    cdf: Vec<f64>,
    tail_start: u64,
    /// Envelope-free matched tail mass, same scale as `cdf`.
    tail_mass: f64,
}

#[derive(Debug)]
struct EnvelopeVolumeRow {
    blocks: Vec<EnvBlock>,
    /// Cumulative block weights followed by the tail weight.
    cum_weights: Vec<f64>,
    tail_start: u64,
    /// Log weight at the mode; heights and acceptance tests are relative to
    /// this shift.
    log_mode: f64,
}

#[derive(Debug)]
struct EnvBlock {
    lo: u64,
    hi: u64,
    /// `log t` shifted by the row's mode value.
    log_height: f64,
}

fn power_tail_draw(tail_start: u64, rng: &mut impl Rng) -> u64 {
    // Continuous density ~ x^{-5/2} on [tail_start - 1/2, inf), floored to
    // the nearest integer cell.
    let a = tail_start as f64 - 0.5;
    let x = a * (1.0 - rng.random::<f64>()).powf(-2.0 / 3.0);
    (x + 0.5).floor().max(tail_start as f64) as u64
}

impl VolumeSampler {
    pub fn new(enums: Arc<EnumCache>) -> Self {
        let mut cached = Vec::with_capacity(VOLUME_CACHED_BOUNDARY_MAX as usize);
        cached.resize_with(VOLUME_CACHED_BOUNDARY_MAX as usize, OnceLock::new);
        Self { enums, cached }
    }

    fn log_t(&self, l: u64, k: u64) -> f64 {
        match self.enums.log_card_t1(l, k) {
            Ok(v) => v - k as f64 * LOG_WEIGHT_BASE,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// `P(K = k)` for boundary `m + 1`.
    pub fn pmf(&self, m: u64, k: u64) -> Result<f64> {
        let l = m + 1;
        if l == 1 && k == 0 {
            return Ok(0.0);
        }
        Ok((self.enums.log_card_t1(l, k)? - k as f64 * LOG_WEIGHT_BASE - self.enums.log_z1(l))
            .exp())
    }

    fn build_cdf_row(&self, l: u64) -> CdfVolumeRow {
        let k_start = if l == 1 { 1 } else { 0 };
        let mut logs = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut mode = k_start;
        let mut k = k_start;
        loop {
            let v = self.log_t(l, k);
            if v > best {
                best = v;
                mode = k;
            }
            logs.push(v);
            // Stop well past the mode, once the terms are safely in their
            // power-law regime; the matched tail covers the rest.
            if k >= (8 * (mode + 2)).max(mode + 256) || k >= 1_000_000 {
                break;
            }
            k += 1;
        }
        let k_end = k;
        let mut cdf = Vec::with_capacity(logs.len());
        let mut acc = 0.0;
        for v in &logs {
            acc += (v - best).exp();
            cdf.push(acc);
        }
        // Tail fit t(k) ~ c k^{-5/2} from the final term.
        let c = (self.log_t(l, k_end) - best).exp() * (k_end as f64).powf(2.5);
        let tail_mass = c * hurwitz_zeta(2.5, k_end as f64 + 1.0);
        CdfVolumeRow {
            k_start,
            cdf,
            tail_start: k_end + 1,
            tail_mass,
        }
    }

    fn build_envelope_row(&self, l: u64) -> EnvelopeVolumeRow {
        let k_start = if l == 1 { 1 } else { 0 };
        let k_cap = 1_000_000u64.max(32 * l * l);
        // Ternary search for the mode of the unimodal log t.
        let (mut lo, mut hi) = (k_start, k_cap);
        while hi - lo > 2 {
            let m1 = lo + (hi - lo) / 3;
            let m2 = hi - (hi - lo) / 3;
            if self.log_t(l, m1) < self.log_t(l, m2) {
                lo = m1 + 1;
            } else {
                hi = m2;
            }
        }
        let mode = (lo..=hi)
            .max_by(|&a, &b| self.log_t(l, a).partial_cmp(&self.log_t(l, b)).unwrap())
            .unwrap();
        let log_mode = self.log_t(l, mode);

        // Dyadic block boundaries.
        let mut bounds = vec![k_start, k_start + 1];
        let mut b = k_start + 1;
        while b < k_cap {
            b = (b * 2).min(k_cap);
            bounds.push(b);
        }
        let mut blocks = Vec::new();
        let mut cum_weights = Vec::new();
        let mut acc = 0.0;
        for w in bounds.windows(2) {
            let (blo, bhi) = (w[0], w[1]);
            if bhi <= blo {
                continue;
            }
            // Unimodality: the block max sits at an endpoint unless the
            // block straddles the mode.
            let log_height = if blo <= mode && mode < bhi {
                0.0
            } else {
                self.log_t(l, blo).max(self.log_t(l, bhi - 1)) - log_mode
            };
            acc += log_height.exp() * (bhi - blo) as f64;
            blocks.push(EnvBlock {
                lo: blo,
                hi: bhi,
                log_height,
            });
            cum_weights.push(acc);
        }
        let c = (self.log_t(l, k_cap) - log_mode).exp() * (k_cap as f64).powf(2.5);
        acc += c * hurwitz_zeta(2.5, k_cap as f64 + 1.0);
        cum_weights.push(acc);
        EnvelopeVolumeRow {
            blocks,
            cum_weights,
            tail_start: k_cap + 1,
            log_mode,
        }
    }

    fn sample_cdf(&self, row: &CdfVolumeRow, rng: &mut impl Rng) -> u64 {
        let total = row.cdf.last().unwrap() + row.tail_mass;
        let u = rng.random::<f64>() * total;
        if u >= *row.cdf.last().unwrap() {
            return power_tail_draw(row.tail_start, rng);
        }
        row.k_start + row.cdf.partition_point(|&c| c <= u) as u64
    }

    fn sample_envelope(&self, l: u64, row: &EnvelopeVolumeRow, rng: &mut impl Rng) -> u64 {
        let total = *row.cum_weights.last().unwrap();
        loop {
            let u = rng.random::<f64>() * total;
            let idx = row.cum_weights.partition_point(|&c| c <= u);
            if idx == row.blocks.len() {
                return power_tail_draw(row.tail_start, rng);
            }
            let blk = &row.blocks[idx];
            let k = rng.random_range(blk.lo..blk.hi);
            // Acceptance in log space, shifted by the mode value so the
            // exponentials stay representable.
            if rng.random::<f64>().ln() < self.log_t(l, k) - row.log_mode - blk.log_height {
                return k;
            }
        }
    }

    /// Draw `K` for a swallowing event of size `m >= 0` (boundary `m + 1`).
    pub fn sample(&self, m: u64, rng: &mut impl Rng) -> u64 {
        let l = m + 1;
        if l <= VOLUME_CACHED_BOUNDARY_MAX {
            let row = self.cached[(l - 1) as usize].get_or_init(|| {
                if l <= VOLUME_CDF_BOUNDARY_MAX {
                    VolumeRow::Cdf(self.build_cdf_row(l))
                } else {
                    VolumeRow::Env(self.build_envelope_row(l))
                }
            });
            match row {
                VolumeRow::Cdf(r) => self.sample_cdf(r, rng),
                VolumeRow::Env(r) => self.sample_envelope(l, r, rng),
            }
        } else {
            let row = self.build_envelope_row(l);
            self.sample_envelope(l, &row, rng)
        }
    }
}

/// Free-function form matching the step rule's naming.
pub fn sample_swallowed_volume(vols: &VolumeSampler, m: u64, rng: &mut impl Rng) -> u64 {
    vols.sample(m, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use crate::stats;

    fn enums() -> Arc<EnumCache> {
        Arc::new(EnumCache::default())
    }

    fn inf_table() -> KernelTable {
        KernelTable::with_defaults(Regime::Infinite)
    }

    #[test]
    fn q_inf_known_values() {
        let t = inf_table();
        let v = t.q_inf(1, -1).unwrap();
        assert!((v - 3.0f64.sqrt() / 2.0).abs() < 1e-12, "{v}");
        for k in [1u64, 2, 5, 50, 1000] {
            let v = t.q_inf(k, -1).unwrap();
            let expect = (2.0 * k as f64 + 1.0) / (2.0 * 3.0f64.sqrt() * k as f64);
            assert!((v - expect).abs() < 1e-12, "k = {k}");
        }
        let v = t.q_inf(1_000_000, -1).unwrap();
        assert!((v - 1.0 / 3.0f64.sqrt()).abs() < 1e-6);
        assert!(t.q_inf(5, 5).is_err());
        assert!(t.q_inf(5, -2).is_err());
    }

    #[test]
    fn q_inf_rows_are_stochastic() {
        let t = inf_table();
        for k in 1..=500u64 {
            let sum: f64 = (-1..k as i64).map(|m| t.q_inf(k, m).unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9, "k = {k}: {sum}");
        }
    }

    #[test]
    fn q_l_known_values() {
        let t = KernelTable::with_defaults(Regime::Finite(1));
        let v = t.prob(1, -1).unwrap();
        // h_1(2)/h_1(1) * q_inf(1, -1) = (2/3) * sqrt(3)/2 = 1/sqrt(3).
        let expect = (2.0 / 3.0) * 3.0f64.sqrt() / 2.0;
        assert!((v - expect).abs() < 1e-12, "{v}");
        // Row 1 also carries the m = 0 event, q_L(1, 1) = 2 Z1(1) (the h
        // ratio is 1 there); the cemetery takes what is left.
        let q0 = t.prob(1, 0).unwrap();
        let c = t.cemetery_prob(1).unwrap();
        assert!((c - (1.0 - expect - q0)).abs() < 1e-12, "{c}");
    }

    #[test]
    fn finite_rows_sum_to_one_with_cemetery() {
        for l in [1u64, 10, 100] {
            let t = KernelTable::with_defaults(Regime::Finite(l));
            for k in 1..=200u64 {
                let sum: f64 = (-1..k as i64).map(|m| t.prob(k, m).unwrap()).sum();
                let total = sum + t.cemetery_prob(k).unwrap();
                assert!((total - 1.0).abs() < 1e-9, "L={l} k={k}: {total}");
            }
        }
    }

    #[test]
    fn h_transform_matches_annulus_ratio() {
        // Both stated forms of the finite kernel agree: the h-transform of
        // q_inf and the ratio 2 Z1(m+1) Z2(L, k-m) / Z2(L, k).
        let e = enums();
        for &l in &[1u64, 2, 3] {
            let t = KernelTable::new(Regime::Finite(l), e.clone(), 64);
            for k in 1..=4u64 {
                for m in -1..k as i64 {
                    let direct = t.prob(k, m).unwrap();
                    let target = (k as i64 - m) as u64;
                    let ratio = 2.0
                        * e.z1((m + 1) as u64)
                        * e.z2_series(l, target, 1e-7).unwrap()
                        / e.z2_series(l, k, 1e-7).unwrap();
                    assert!(
                        ((direct - ratio) / direct).abs() < 1e-4,
                        "L={l} k={k} m={m}: {direct} vs {ratio}"
                    );
                }
            }
        }
    }

    #[test]
    fn cemetery_vanishes_for_large_l() {
        let k = 5u64;
        let mut prev = f64::INFINITY;
        for l in [10u64, 100, 1000, 10_000] {
            let t = KernelTable::with_defaults(Regime::Finite(l));
            let c = t.cemetery_prob(k).unwrap();
            assert!(c < prev);
            prev = c;
        }
        // Fixed k decays like 1/L (the h ratio expands as 1 + m/L + ...),
        // far slower than the k ~ L rate but still vanishing.
        assert!(prev < 1e-3);
    }

    #[test]
    fn cemetery_asymptotic_trend() {
        // L^{3/2} q_L(L, dagger) approaches (sqrt(3 pi)/4) 2^{-3/2}... at
        // x = 1 the limit is (sqrt(3 pi)/4) / (1 * 2^{3/2}).
        let target = (3.0 * core::f64::consts::PI).sqrt() / 4.0 / 2.0f64.powf(1.5);
        let mut errs = Vec::new();
        for l in [100u64, 1000] {
            let t = KernelTable::with_defaults(Regime::Finite(l));
            let v = (l as f64).powf(1.5) * t.cemetery_prob(l).unwrap();
            errs.push((v - target).abs() / target);
        }
        assert!(errs[1] < errs[0], "errors {errs:?}");
        assert!(errs[1] < 0.15, "L=1000 deviation {}", errs[1]);
    }

    #[test]
    fn sampler_matches_row_probabilities() {
        let t = inf_table();
        let k = 10u64;
        let n = 1_000_000u64;
        let mut rng = replicate_rng(101, 0);
        let mut count_minus1 = 0u64;
        for _ in 0..n {
            match t.sample_step(k, &mut rng).unwrap() {
                StepOutcome::Step(m) => {
                    assert!((-1..k as i64).contains(&m));
                    if m == -1 {
                        count_minus1 += 1;
                    }
                }
                StepOutcome::Cemetery => panic!("no cemetery in infinite regime"),
            }
        }
        let p = t.q_inf(k, -1).unwrap();
        let se = stats::binomial_se(p, n);
        let phat = count_minus1 as f64 / n as f64;
        assert!((phat - p).abs() < 4.0 * se, "{phat} vs {p}");
    }

    #[test]
    fn sampler_chi_square_per_row() {
        // Exact-row goodness of fit for a CDF row, an alias row, and the
        // scan fallback.
        for &(k, limit) in &[(8u64, 512usize), (100, 512), (700, 512)] {
            let t = KernelTable::new(Regime::Finite(50), enums(), limit);
            let n = 200_000u64;
            let mut rng = replicate_rng(102, k);
            let span = (k + 2) as usize; // outcomes + cemetery
            let mut counts = vec![0u64; span];
            for _ in 0..n {
                match t.sample_step(k, &mut rng).unwrap() {
                    StepOutcome::Step(m) => counts[(m + 1) as usize] += 1,
                    StepOutcome::Cemetery => counts[span - 1] += 1,
                }
            }
            let mut probs: Vec<f64> = (-1..k as i64).map(|m| t.prob(k, m).unwrap()).collect();
            probs.push(t.cemetery_prob(k).unwrap());
            // Merge expected < 5 into the preceding bin.
            let mut merged: Vec<(f64, f64)> = Vec::new();
            let mut acc = (0.0, 0.0);
            for i in 0..span {
                acc.0 += counts[i] as f64;
                acc.1 += probs[i] * n as f64;
                if acc.1 >= 5.0 {
                    merged.push(acc);
                    acc = (0.0, 0.0);
                }
            }
            if acc.1 > 0.0 {
                if let Some(last) = merged.last_mut() {
                    last.0 += acc.0;
                    last.1 += acc.1;
                }
            }
            let stat: f64 = merged.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
            let thr = stats::chisq_critical(1e-3, merged.len() - 1);
            assert!(stat < thr, "k={k}: chi2 {stat} > {thr}");
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let t = inf_table();
        let draw = |seed| -> Vec<StepOutcome> {
            let mut rng = replicate_rng(7, seed);
            (0..100).map(|_| t.sample_step(20, &mut rng).unwrap()).collect()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn volume_pmf_known_values() {
        let v = VolumeSampler::new(enums());
        let z12 = 3.0 * 3.0f64.sqrt() / 4.0;
        assert!((v.pmf(1, 0).unwrap() - 1.0 / z12).abs() < 1e-12);
        let p1 = 3.0 / (12.0 * 3.0f64.sqrt()) / z12;
        assert!((v.pmf(1, 1).unwrap() - p1).abs() < 1e-12);
        assert!((p1 - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(v.pmf(0, 0).unwrap(), 0.0);
    }

    #[test]
    fn volume_weights_are_unimodal() {
        let v = VolumeSampler::new(enums());
        for &l in &[2u64, 10, 50, 200] {
            let mut sign_changes = 0;
            let mut prev_diff = 0.0f64;
            let k0 = if l == 1 { 1 } else { 0 };
            for k in k0 + 1..=20_000 {
                let d = v.log_t(l, k) - v.log_t(l, k - 1);
                if prev_diff != 0.0 && d.signum() != prev_diff.signum() {
                    sign_changes += 1;
                }
                prev_diff = d;
            }
            assert!(sign_changes <= 1, "l={l}: {sign_changes} sign changes");
        }
    }

    #[test]
    fn volume_sampler_matches_pmf_small_boundary() {
        let v = VolumeSampler::new(enums());
        let n = 500_000u64;
        let mut rng = replicate_rng(103, 0);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            *counts.entry(v.sample(1, &mut rng)).or_insert(0u64) += 1;
        }
        for k in 0..6u64 {
            let p = v.pmf(1, k).unwrap();
            let phat = *counts.get(&k).unwrap_or(&0) as f64 / n as f64;
            let se = stats::binomial_se(p, n).max(1e-6);
            assert!((phat - p).abs() < 4.5 * se, "k={k}: {phat} vs {p}");
        }
    }

    #[test]
    fn volume_sampler_matches_pmf_envelope_boundary() {
        // Boundary 101 goes through the envelope-rejection path.
        let v = VolumeSampler::new(enums());
        let n = 50_000u64;
        let mut rng = replicate_rng(104, 0);
        let m = 100u64;
        let draws: Vec<u64> = (0..n).map(|_| v.sample(m, &mut rng)).collect();
        // Compare coarse bin masses against the exact pmf.
        let edges = [0u64, 1000, 2000, 3000, 5000, 8000, 15_000, u64::MAX];
        for w in edges.windows(2) {
            let mass: f64 = (w[0]..w[1].min(200_000))
                .map(|k| v.pmf(m, k).unwrap())
                .sum();
            if !(0.02..=0.98).contains(&mass) {
                continue;
            }
            let obs = draws.iter().filter(|&&k| k >= w[0] && k < w[1]).count() as f64 / n as f64;
            let se = stats::binomial_se(mass, n);
            assert!(
                (obs - mass).abs() < 5.0 * se,
                "bin {w:?}: {obs} vs {mass}"
            );
        }
    }

    #[test]
    fn volume_mean_is_stable() {
        // Finite mean, infinite variance: two independent batches should
        // produce means in the same ballpark, nothing tighter.
        let v = VolumeSampler::new(enums());
        let batch = |seed: u64| {
            let mut rng = replicate_rng(105, seed);
            (0..500_000).map(|_| v.sample(1, &mut rng) as f64).sum::<f64>() / 500_000.0
        };
        let (a, b) = (batch(0), batch(1));
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() / a.max(b) < 0.5, "{a} vs {b}");
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kernel.bin");
        let t = KernelTable::new(Regime::Finite(7), enums(), 128);
        t.save_cache(&path, 100).unwrap();
        let loaded = KernelTable::load_cache(&path, enums(), 128).unwrap();
        assert_eq!(loaded.regime(), Regime::Finite(7));
        for k in 1..=100u64 {
            for m in -1..k as i64 {
                let a = t.row(k).unwrap().probs[(m + 1) as usize];
                let b = loaded.row(k).unwrap().probs[(m + 1) as usize];
                assert_eq!(a.to_bits(), b.to_bits(), "k={k} m={m}");
            }
            assert_eq!(
                t.row(k).unwrap().cemetery.to_bits(),
                loaded.row(k).unwrap().cemetery.to_bits()
            );
        }
    }

    #[test]
    fn cache_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(KernelTable::load_cache(&path, enums(), 64).is_err());
    }
}
