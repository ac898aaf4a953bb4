//! Batch construction: class-aware P×K sampling over crops, and uniform
//! image-level sampling over scenes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Identities per batch.
    pub p: usize,
    /// Instances per identity.
    pub k: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { p: 16, k: 4, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::config("p", "need at least 2 identities per batch"));
        }
        if self.k < 2 {
            return Err(Error::config("k", "need at least 2 instances per identity"));
        }
        Ok(())
    }
}

/// Infinite stream of P×K batches, each a list of dataset indices grouped by
/// identity (K consecutive entries per identity).
///
/// An epoch shuffles the identity list and walks it P at a time; the last
/// batch of an epoch is topped up with identities drawn from the rest.
/// Identities with fewer than K instances contribute each instance once and
/// fill the remaining slots by drawing with replacement.
pub struct ClassAwareSampler {
    config: SamplerConfig,
    by_identity: Vec<(usize, Vec<usize>)>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ClassAwareSampler {
    pub fn new(labels: &[usize], config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &id) in labels.iter().enumerate() {
            groups.entry(id).or_default().push(i);
        }
        if groups.len() < config.p {
            return Err(Error::invalid(
                "class_aware_batches",
                format!("{} identities but P = {}", groups.len(), config.p),
            ));
        }
        let n = groups.len();
        Ok(ClassAwareSampler {
            config,
            by_identity: groups.into_iter().collect(),
            order: Vec::with_capacity(n),
            cursor: n,
            rng: rng_for(config.seed, stream::SAMPLER, 0),
        })
    }

    pub fn identities(&self) -> usize {
        self.by_identity.len()
    }

    /// Batches per epoch: `ceil(identities / P)`.
    pub fn batches_per_epoch(&self) -> usize {
        self.identities().div_ceil(self.config.p)
    }

    fn instances(&mut self, group: usize) -> Vec<usize> {
        let k = self.config.k;
        let pool = &self.by_identity[group].1;
        if pool.len() >= k {
            return pool.choose_multiple(&mut self.rng, k).copied().collect();
        }
        let mut picked = pool.clone();
        while picked.len() < k {
            picked.push(pool[self.rng.gen_range(0..pool.len())]);
        }
        picked.shuffle(&mut self.rng);
        picked
    }
}

impl Iterator for ClassAwareSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let n = self.by_identity.len();
        if self.cursor >= n {
            self.order = (0..n).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.p).min(n);
        let mut groups: Vec<usize> = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        if groups.len() < self.config.p {
            let mut rest: Vec<usize> = (0..n).filter(|g| !groups.contains(g)).collect();
            rest.shuffle(&mut self.rng);
            groups.extend(rest.into_iter().take(self.config.p - groups.len()));
        }
        let mut batch = Vec::with_capacity(self.config.batch_size());
        for g in groups {
            batch.extend(self.instances(g));
        }
        Some(batch)
    }
}

pub fn class_aware_batches(labels: &[usize], config: SamplerConfig) -> Result<ClassAwareSampler> {
    ClassAwareSampler::new(labels, config)
}

/// Infinite stream of batches of scene indices drawn uniformly with
/// replacement.
pub struct ImageLevelSampler {
    scenes: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Iterator for ImageLevelSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(
            (0..self.batch_size)
                .map(|_| self.rng.gen_range(0..self.scenes))
                .collect(),
        )
    }
}

pub fn image_level_batches(scenes: usize, batch_size: usize, seed: u64) -> Result<ImageLevelSampler> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    if scenes == 0 {
        return Err(Error::invalid("image_level_batches", "no scenes"));
    }
    Ok(ImageLevelSampler {
        scenes,
        batch_size,
        rng: rng_for(seed, stream::SAMPLER, 1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceStats {
    /// Samples seen per identity.
    pub counts: BTreeMap<usize, usize>,
    pub max_min_ratio: f64,
    pub coefficient_of_variation: f64,
}

/// Identity statistics over the first `num_batches` batches, where each
/// batch is given as the identities of its samples.
pub fn balance_report<I>(batches: I, num_batches: usize) -> Result<BalanceStats>
where
    I: IntoIterator<Item = Vec<usize>>,
{
    if num_batches == 0 {
        return Err(Error::invalid("balance_report", "need at least one batch"));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut seen = 0;
    for batch in batches.into_iter().take(num_batches) {
        seen += 1;
        for id in batch {
            *counts.entry(id).or_default() += 1;
        }
    }
    if seen == 0 || counts.is_empty() {
        return Err(Error::invalid("balance_report", "no samples"));
    }
    let values: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    Ok(BalanceStats {
        counts,
        max_min_ratio: max / min,
        coefficient_of_variation: var.sqrt() / mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[usize]) -> Vec<usize> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(id, &n)| std::iter::repeat_n(id, n))
            .collect()
    }

    #[test]
    fn batch_sizes() {
        let l = labels(&[5; 70]);
        for (p, want) in [(16, 64), (64, 256)] {
            let cfg = SamplerConfig { p, k: 4, seed: 0 };
            let b = class_aware_batches(&l, cfg).unwrap().next().unwrap();
            assert_eq!(b.len(), want);
        }
    }

    #[test]
    fn every_batch_has_p_identities_k_each() {
        let l = labels(&[1, 2, 3, 9, 4, 4, 2, 7, 5]);
        let cfg = SamplerConfig { p: 4, k: 3, seed: 11 };
        for batch in class_aware_batches(&l, cfg).unwrap().take(50) {
            let mut per: BTreeMap<usize, usize> = BTreeMap::new();
            for &i in &batch {
                *per.entry(l[i]).or_default() += 1;
            }
            assert_eq!(per.len(), 4);
            assert!(per.values().all(|&c| c == 3));
        }
    }

    #[test]
    fn short_identity_uses_every_instance() {
        let l = labels(&[2, 6, 6]);
        let cfg = SamplerConfig { p: 3, k: 4, seed: 5 };
        for batch in class_aware_batches(&l, cfg).unwrap().take(20) {
            let slots: Vec<usize> = batch.iter().copied().filter(|&i| l[i] == 0).collect();
            assert_eq!(slots.len(), 4);
            assert!(slots.contains(&0) && slots.contains(&1));
        }
    }

    #[test]
    fn epoch_visits_each_identity_once() {
        let l = labels(&[3; 10]);
        let cfg = SamplerConfig { p: 4, k: 2, seed: 1 };
        let s = class_aware_batches(&l, cfg).unwrap();
        assert_eq!(s.batches_per_epoch(), 3);
        let ids: Vec<usize> = s.take(3).flatten().map(|i| l[i]).collect();
        for id in 0..10 {
            assert!(ids.contains(&id));
        }
    }

    #[test]
    fn too_few_identities_rejected() {
        let cfg = SamplerConfig { p: 4, k: 2, seed: 0 };
        assert!(class_aware_batches(&labels(&[3, 3, 3]), cfg).is_err());
        assert!(SamplerConfig { p: 1, k: 4, seed: 0 }.validate().is_err());
    }

    #[test]
    fn image_level_shapes() {
        let b = image_level_batches(100, 16, 0).unwrap().next().unwrap();
        assert_eq!(b.len(), 16);
        assert!(image_level_batches(1, 3, 0)
            .unwrap()
            .take(5)
            .all(|b| b == vec![0, 0, 0]));
    }

    #[test]
    fn balance_of_single_batch() {
        let stats = balance_report(vec![vec![7, 7, 9, 9]], 1).unwrap();
        assert_eq!(stats.counts, BTreeMap::from([(7, 2), (9, 2)]));
        assert_eq!(stats.max_min_ratio, 1.0);
        assert_eq!(stats.coefficient_of_variation, 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let l = labels(&[3, 4, 5, 6]);
        let cfg = SamplerConfig { p: 2, k: 2, seed: 3 };
        let a: Vec<_> = class_aware_batches(&l, cfg).unwrap().take(10).collect();
        let b: Vec<_> = class_aware_batches(&l, cfg).unwrap().take(10).collect();
        assert_eq!(a, b);
    }
}
