//! Lot construction and class-imbalance handling.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Geometric};

use crate::error::{invalid, Result};
use crate::registry::Registry;
use crate::rng::{self, Domain};

/// Per-class sample counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    counts: BTreeMap<usize, u64>,
}

impl ClassCounts {
    pub fn new(counts: BTreeMap<usize, u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(invalid("need at least two classes"));
        }
        if let Some((c, _)) = counts.iter().find(|(_, &n)| n == 0) {
            return Err(invalid(format!("class {c} has no samples")));
        }
        Ok(Self { counts })
    }

    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for &y in labels {
            *counts.entry(y).or_insert(0) += 1;
        }
        Self::new(counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, class: usize) -> Option<u64> {
        self.counts.get(&class).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts.iter().map(|(&c, &n)| (c, n))
    }
}

/// `w_c = M / (K * M_c)`, so that `sum_c M_c w_c = M`.
pub fn class_weights(counts: &ClassCounts) -> BTreeMap<usize, f64> {
    let m = counts.total() as f64;
    let k = counts.num_classes() as f64;
    counts.iter().map(|(c, n)| (c, m / (k * n as f64))).collect()
}

/// Class weight of every sample, in label order.
pub fn per_sample_class_weights(labels: &[usize]) -> Result<Vec<f64>> {
    let w = class_weights(&ClassCounts::from_labels(labels)?);
    Ok(labels.iter().map(|y| w[y]).collect())
}

/// Draws sample indices with replacement, sample `i` weighted `1/M_c` for
/// its class `c`, so every class is drawn equally often in expectation.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(labels: &[usize]) -> Result<Self> {
        let counts = ClassCounts::from_labels(labels)?;
        let weights: Vec<f64> = labels
            .iter()
            .map(|&y| 1.0 / counts.get(y).unwrap_or(1) as f64)
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| invalid(e.to_string()))?;
        Ok(Self { dist })
    }

    pub fn draw<R: Rng + ?Sized>(&self, n_draws: usize, rng: &mut R) -> Vec<usize> {
        (0..n_draws).map(|_| self.dist.sample(rng)).collect()
    }
}

pub fn weighted_sampler<R: Rng + ?Sized>(labels: &[usize], n_draws: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n_draws == 0 {
        return Ok(Vec::new());
    }
    Ok(WeightedSampler::new(labels)?.draw(n_draws, rng))
}

/// Each of `0..n` joins the lot independently with probability `q`.
pub fn poisson_lot<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    if q >= 1.0 {
        return (0..n).collect();
    }
    if q <= 0.0 {
        return Vec::new();
    }
    // skip ahead by geometric gaps instead of flipping n coins
    let gaps = Geometric::new(q).expect("q in (0, 1)");
    let mut lot = Vec::with_capacity((n as f64 * q * 1.2) as usize + 4);
    let mut i = gaps.sample(rng);
    while i < n as u64 {
        lot.push(i as usize);
        i = i.saturating_add(1).saturating_add(gaps.sample(rng));
    }
    lot
}

/// One non-empty lot from [`PoissonLots`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lot {
    pub epoch: usize,
    pub index: usize,
    pub members: Vec<usize>,
}

/// Iterator over Poisson-sampled lots: `round(1/q)` lots per epoch; empty
/// lots are skipped and counted.
pub struct PoissonLots<R> {
    n: usize,
    q: f64,
    epochs: usize,
    lots_per_epoch: usize,
    epoch: usize,
    index: usize,
    rng: R,
    skipped_empty: usize,
}

impl<R: Rng> PoissonLots<R> {
    pub fn skipped_empty(&self) -> usize {
        self.skipped_empty
    }

    pub fn lots_per_epoch(&self) -> usize {
        self.lots_per_epoch
    }
}

pub fn poisson_lots<R: Rng>(n: usize, q: f64, epochs: usize, rng: R) -> Result<PoissonLots<R>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("sampling rate must lie in (0, 1], got {q}")));
    }
    Ok(PoissonLots {
        n,
        q,
        epochs,
        lots_per_epoch: ((1.0 / q).round() as usize).max(1),
        epoch: 0,
        index: 0,
        rng,
        skipped_empty: 0,
    })
}

impl<R: Rng> Iterator for PoissonLots<R> {
    type Item = Lot;

    fn next(&mut self) -> Option<Lot> {
        while self.epoch < self.epochs {
            let (epoch, index) = (self.epoch, self.index);
            self.index += 1;
            if self.index == self.lots_per_epoch {
                self.index = 0;
                self.epoch += 1;
            }
            let members = poisson_lot(self.n, self.q, &mut self.rng);
            if members.is_empty() {
                self.skipped_empty += 1;
                continue;
            }
            return Some(Lot { epoch, index, members });
        }
        None
    }
}

/// Strategy for splitting an epoch into lots.
pub trait LotSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Nominal sampling rate `L / N`.
    fn sampling_rate(&self) -> f64;

    fn lots_per_epoch(&self) -> usize;

    /// All lots of `epoch`, possibly empty. Deterministic in `(seed, epoch)`.
    fn epoch_lots(&self, seed: u64, epoch: usize) -> Vec<Vec<usize>>;

    /// Whether the Poisson amplification assumed by the accountants holds.
    fn amplification_modeled(&self) -> bool;
}

/// Independent inclusion with probability `L / N`; lot `k` of epoch `e`
/// draws from its own stream.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    n: usize,
    q: f64,
}

impl PoissonSampler {
    pub fn new(n: usize, lot_size: usize) -> Result<Self> {
        check_sizes(n, lot_size)?;
        Ok(Self {
            n,
            q: lot_size as f64 / n as f64,
        })
    }
}

impl LotSampler for PoissonSampler {
    fn name(&self) -> &'static str {
        "poisson"
    }

    fn sampling_rate(&self) -> f64 {
        self.q
    }

    fn lots_per_epoch(&self) -> usize {
        ((1.0 / self.q).round() as usize).max(1)
    }

    fn epoch_lots(&self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        (0..self.lots_per_epoch())
            .map(|k| {
                let mut r = rng::stream(seed, Domain::Lots, &[epoch as u64, k as u64]);
                poisson_lot(self.n, self.q, &mut r)
            })
            .collect()
    }

    fn amplification_modeled(&self) -> bool {
        true
    }
}

/// Shuffle once per epoch and cut into `floor(N / L)` lots of exactly `L`.
#[derive(Debug, Clone)]
pub struct ShuffleSampler {
    n: usize,
    lot_size: usize,
}

impl ShuffleSampler {
    pub fn new(n: usize, lot_size: usize) -> Result<Self> {
        check_sizes(n, lot_size)?;
        Ok(Self { n, lot_size })
    }
}

impl LotSampler for ShuffleSampler {
    fn name(&self) -> &'static str {
        "shuffle"
    }

    fn sampling_rate(&self) -> f64 {
        self.lot_size as f64 / self.n as f64
    }

    fn lots_per_epoch(&self) -> usize {
        self.n / self.lot_size
    }

    fn epoch_lots(&self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng::stream(seed, Domain::Shuffle, &[epoch as u64]));
        order
            .chunks_exact(self.lot_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn amplification_modeled(&self) -> bool {
        false
    }
}

/// Lots of exactly `L` draws from a [`WeightedSampler`].
#[derive(Debug, Clone)]
pub struct WeightedLotSampler {
    n: usize,
    lot_size: usize,
    sampler: WeightedSampler,
}

impl WeightedLotSampler {
    pub fn new(labels: &[usize], lot_size: usize) -> Result<Self> {
        check_sizes(labels.len(), lot_size)?;
        Ok(Self {
            n: labels.len(),
            lot_size,
            sampler: WeightedSampler::new(labels)?,
        })
    }
}

impl LotSampler for WeightedLotSampler {
    fn name(&self) -> &'static str {
        "wrs"
    }

    fn sampling_rate(&self) -> f64 {
        self.lot_size as f64 / self.n as f64
    }

    fn lots_per_epoch(&self) -> usize {
        ((self.n as f64 / self.lot_size as f64).round() as usize).max(1)
    }

    fn epoch_lots(&self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        (0..self.lots_per_epoch())
            .map(|k| {
                let mut r = rng::stream(seed, Domain::Lots, &[epoch as u64, k as u64]);
                self.sampler.draw(self.lot_size, &mut r)
            })
            .collect()
    }

    fn amplification_modeled(&self) -> bool {
        false
    }
}

fn check_sizes(n: usize, lot_size: usize) -> Result<()> {
    if lot_size == 0 || lot_size > n {
        return Err(invalid(format!("lot size {lot_size} must lie in [1, {n}]")));
    }
    Ok(())
}

pub type SamplerFactory = Arc<dyn Fn(&[usize], usize) -> Result<Box<dyn LotSampler>> + Send + Sync>;

/// Registry with `poisson`, `shuffle` and `wrs`; factories take the training
/// labels and the lot size.
pub fn registry() -> Registry<SamplerFactory> {
    let mut reg: Registry<SamplerFactory> = Registry::new("sampler");
    reg.register(
        "poisson",
        Arc::new(|labels: &[usize], l| Ok(Box::new(PoissonSampler::new(labels.len(), l)?) as Box<dyn LotSampler>)),
    );
    reg.register(
        "shuffle",
        Arc::new(|labels: &[usize], l| Ok(Box::new(ShuffleSampler::new(labels.len(), l)?) as Box<dyn LotSampler>)),
    );
    reg.register(
        "wrs",
        Arc::new(|labels: &[usize], l| Ok(Box::new(WeightedLotSampler::new(labels, l)?) as Box<dyn LotSampler>)),
    );
    reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn counts(pairs: &[(usize, u64)]) -> ClassCounts {
        ClassCounts::new(pairs.iter().cloned().collect()).unwrap()
    }

    #[test]
    fn balanced_weights_are_one() {
        let w = class_weights(&counts(&[(0, 50), (1, 50)]));
        assert_eq!(w[&0], 1.0);
        assert_eq!(w[&1], 1.0);
    }

    #[test]
    fn weights_for_training_split_counts() {
        let c = counts(&[(0, 60031), (1, 93818)]);
        let w = class_weights(&c);
        assert_eq!(w[&0], 153849.0 / 120062.0);
        assert_eq!(w[&1], 153849.0 / 187636.0);
        // commonly quoted five-digit roundings
        assert!((w[&0] - 1.28143).abs() < 5e-5, "{}", w[&0]);
        assert!((w[&1] - 0.81989).abs() < 5e-5, "{}", w[&1]);
        assert!(w[&0] > w[&1]);
        let total: f64 = c.iter().map(|(k, n)| n as f64 * w[&k]).sum();
        assert!((total - c.total() as f64).abs() < 1e-8);
    }

    #[test]
    fn invalid_counts() {
        assert!(ClassCounts::new([(0, 5), (1, 0)].into_iter().collect()).is_err());
        assert!(ClassCounts::from_labels(&[1, 1, 1]).is_err());
    }

    #[test]
    fn weighted_sampler_balances_classes() {
        let labels: Vec<usize> = (0..1000).map(|i| usize::from(i >= 100)).collect();
        let draws = weighted_sampler(&labels, 100_000, &mut stream(3, Domain::Lots, &[])).unwrap();
        let minority = draws.iter().filter(|&&i| labels[i] == 0).count() as f64 / draws.len() as f64;
        assert!((minority - 0.5).abs() < 0.01, "{minority}");
        let again = weighted_sampler(&labels, 100_000, &mut stream(3, Domain::Lots, &[])).unwrap();
        assert_eq!(draws, again);
        assert!(weighted_sampler(&labels, 0, &mut stream(3, Domain::Lots, &[])).unwrap().is_empty());
    }

    #[test]
    fn balanced_weighted_sampler_is_uniform() {
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let draws = weighted_sampler(&labels, 50_000, &mut stream(9, Domain::Lots, &[])).unwrap();
        let mut hist = [0usize; 10];
        draws.iter().for_each(|&i| hist[i] += 1);
        for h in hist {
            assert!((h as f64 - 5000.0).abs() < 5.0 * (5000.0f64 * 0.9).sqrt(), "{hist:?}");
        }
    }

    #[test]
    fn full_rate_lot_is_everything() {
        let lots: Vec<Lot> = poisson_lots(7, 1.0, 3, stream(1, Domain::Lots, &[])).unwrap().collect();
        assert_eq!(lots.len(), 3);
        assert!(lots.iter().all(|l| l.members == (0..7).collect::<Vec<_>>()));
        assert!(poisson_lots(7, 0.0, 3, stream(1, Domain::Lots, &[])).is_err());
    }

    #[test]
    fn poisson_lot_sizes_match_binomial_mean() {
        let q = 0.01;
        let mut it = poisson_lots(10_000, q, 10, stream(5, Domain::Lots, &[])).unwrap();
        let sizes: Vec<usize> = it.by_ref().map(|l| l.members.len()).collect();
        assert_eq!(sizes.len() + it.skipped_empty(), 1000);
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        assert!((mean - 100.0).abs() < 3.0, "{mean}");
        let var = sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (sizes.len() - 1) as f64;
        assert!((var / 99.0 - 1.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn tiny_rate_skips_empty_lots() {
        let mut it = poisson_lots(10, 0.001, 1, stream(2, Domain::Lots, &[])).unwrap();
        let n = it.by_ref().count();
        assert_eq!(n + it.skipped_empty(), 1000);
        assert!(it.skipped_empty() > 900);
    }

    #[test]
    fn independent_streams_have_independent_inclusion() {
        // 2x2 contingency of (in lot A, in lot B) over many samples
        let n = 200_000;
        let q = 0.3;
        let a = poisson_lot(n, q, &mut stream(11, Domain::Lots, &[0]));
        let b = poisson_lot(n, q, &mut stream(12, Domain::Lots, &[0]));
        let mut in_a = vec![false; n];
        a.iter().for_each(|&i| in_a[i] = true);
        let mut table = [[0f64; 2]; 2];
        let mut in_b = vec![false; n];
        b.iter().for_each(|&i| in_b[i] = true);
        for i in 0..n {
            table[in_a[i] as usize][in_b[i] as usize] += 1.0;
        }
        let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
        let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
        let mut chi2 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let e = rows[r] * cols[c] / n as f64;
                chi2 += (table[r][c] - e).powi(2) / e;
            }
        }
        // chi-square(1) 99.9% quantile
        assert!(chi2 < 10.83, "{chi2}");
    }

    #[test]
    fn shuffle_lots_partition_the_epoch() {
        let s = ShuffleSampler::new(10, 3).unwrap();
        let lots = s.epoch_lots(1, 0);
        assert_eq!(lots.len(), 3);
        let mut all: Vec<usize> = lots.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 9);
        assert_ne!(s.epoch_lots(1, 0), s.epoch_lots(1, 1));
    }

    #[test]
    fn registry_samplers() {
        let labels: Vec<usize> = (0..100).map(|i| i % 3 % 2).collect();
        let reg = registry();
        for name in ["poisson", "shuffle", "wrs"] {
            let s = (reg.get(name).unwrap())(&labels, 10).unwrap();
            assert_eq!(s.name(), name);
            assert_eq!(s.epoch_lots(4, 2), s.epoch_lots(4, 2));
        }
        assert!((reg.get("poisson").unwrap())(&labels, 0).is_err());
    }
}
