//! Synthetic two-view data, client partitioning, and missing-modality masks.
//!
//! Every sample has a class-conditional Gaussian latent `u`. Each modality is
//! a view `tanh(M u) + noise` with a fixed mixing matrix `M` per modality, so
//! the two views of a sample are correlated through `u` and cross-modal
//! alignment is learnable.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_samples: usize,
    pub latent_dim: usize,
    pub non_shareable_dim: usize,
    pub shareable_dim: usize,
    pub non_shareable_noise: f64,
    pub shareable_noise: f64,
    /// Norm of every class center in latent space.
    pub separation: f64,
    /// Fraction of each class held out for evaluation.
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            num_samples: 4000,
            latent_dim: 8,
            non_shareable_dim: 32,
            shareable_dim: 32,
            non_shareable_noise: 0.5,
            shareable_noise: 0.5,
            separation: 3.0,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least two classes"));
        }
        if self.num_samples < self.num_classes {
            return Err(Error::config("num_samples", "need at least one sample per class"));
        }
        for (key, v) in [
            ("latent_dim", self.latent_dim),
            ("non_shareable_dim", self.non_shareable_dim),
            ("shareable_dim", self.shareable_dim),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        for (key, v) in [
            ("non_shareable_noise", self.non_shareable_noise),
            ("shareable_noise", self.shareable_noise),
            ("separation", self.separation),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(key, "must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config("test_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Samples with both modalities, labels and global ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub non_shareable: Tensor,
    pub shareable: Tensor,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        ids: Vec<u64>,
        labels: Vec<usize>,
        non_shareable: Tensor,
        shareable: Tensor,
        num_classes: usize,
    ) -> Result<Self> {
        let n = ids.len();
        if labels.len() != n || non_shareable.rows() != n || shareable.rows() != n {
            return Err(Error::shape(
                "dataset columns",
                &[n, n, n],
                &[labels.len(), non_shareable.rows(), shareable.rows()],
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Validation(format!("label {y} out of range")));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate sample id".into()));
        }
        Ok(Self {
            ids,
            labels,
            non_shareable,
            shareable,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            non_shareable: self.non_shareable.select_rows(indices),
            shareable: self.shareable.select_rows(indices),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Stratified split: `round(fraction * n_c)` samples of every class go to
    /// the second (held-out) set. Both sets keep ascending original order.
    pub fn stratified_split<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            idx.shuffle(rng);
            let k = libm::round(fraction * idx.len() as f64) as usize;
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    /// Builds one shard per index list.
    pub fn shards(&self, assignment: &[Vec<usize>]) -> Vec<ClientShard> {
        assignment
            .iter()
            .enumerate()
            .map(|(k, idx)| {
                let part = self.subset(idx);
                ClientShard {
                    client_id: k,
                    sample_ids: part.ids,
                    labels: part.labels,
                    non_shareable: part.non_shareable,
                    shareable: Some(part.shareable),
                }
            })
            .collect()
    }
}

/// Fixed mixing matrices and class centers of one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    centers: Vec<Vec<f64>>,
    non_shareable_mix: Vec<f64>,
    shareable_mix: Vec<f64>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl SyntheticGenerator {
    pub fn new<R: Rng + ?Sized>(spec: SyntheticSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let l = spec.latent_dim;
        let scale = 1.0 / libm::sqrt(l as f64);
        let mut mix = |rows: usize| -> Vec<f64> { (0..rows * l).map(|_| gaussian(rng) * scale).collect() };
        let non_shareable_mix = mix(spec.non_shareable_dim);
        let shareable_mix = mix(spec.shareable_dim);
        let centers = (0..spec.num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..l).map(|_| gaussian(rng)).collect();
                let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
                v.into_iter().map(|x| x / norm * spec.separation).collect()
            })
            .collect();
        Ok(Self {
            spec,
            centers,
            non_shareable_mix,
            shareable_mix,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Vec<f64> {
        self.centers[class].iter().map(|c| c + gaussian(rng)).collect()
    }

    fn view<R: Rng + ?Sized>(mix: &[f64], latent: &[f64], noise: f64, rng: &mut R) -> Vec<f64> {
        mix.chunks(latent.len())
            .map(|row| {
                let s: f64 = row.iter().zip(latent).map(|(m, u)| m * u).sum();
                let eps = if noise > 0.0 { noise * gaussian(rng) } else { 0.0 };
                libm::tanh(s) + eps
            })
            .collect()
    }

    /// `(non-shareable view, shareable view)` of one latent.
    pub fn render<R: Rng + ?Sized>(&self, latent: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let a = Self::view(&self.non_shareable_mix, latent, self.spec.non_shareable_noise, rng);
        let t = Self::view(&self.shareable_mix, latent, self.spec.shareable_noise, rng);
        (a, t)
    }

    /// Sample `i` has id `i` and label `i mod C`, so classes are balanced.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        let n = self.spec.num_samples;
        let c = self.spec.num_classes;
        let mut ns = Vec::with_capacity(n * self.spec.non_shareable_dim);
        let mut sh = Vec::with_capacity(n * self.spec.shareable_dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % c;
            let u = self.sample_latent(y, rng);
            let (a, t) = self.render(&u, rng);
            ns.extend(a);
            sh.extend(t);
            labels.push(y);
        }
        Dataset::new(
            (0..n as u64).collect(),
            labels,
            Tensor::matrix(n, self.spec.non_shareable_dim, ns)?,
            Tensor::matrix(n, self.spec.shareable_dim, sh)?,
            c,
        )
    }
}

pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    SyntheticGenerator::new(*spec, rng)?.generate(rng)
}

/// One edge device's data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub sample_ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub non_shareable: Tensor,
    /// Raw shareable-modality features; `None` when the device lacks it.
    pub shareable: Option<Tensor>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn has_shareable(&self) -> bool {
        self.shareable.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Dirichlet,
    SpeakerEqual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    /// Dirichlet concentration; smaller is more heterogeneous.
    #[serde(rename = "alpha")]
    pub concentration: f64,
    /// Fraction of devices that hold the shareable modality.
    #[serde(rename = "q")]
    pub shareable_fraction: f64,
    /// Every Dirichlet shard gets at least this many samples.
    pub min_shard_size: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Dirichlet,
            concentration: 1.0,
            shareable_fraction: 1.0,
            min_shard_size: 2,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.concentration.is_finite() || self.concentration <= 0.0 {
            return Err(Error::config("alpha", "Dirichlet concentration must be positive"));
        }
        if !(0.0..=1.0).contains(&self.shareable_fraction) {
            return Err(Error::config("q", "must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn partition<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        num_clients: usize,
        rng: &mut R,
    ) -> Result<Vec<ClientShard>> {
        self.validate()?;
        let assignment = match self.mode {
            PartitionMode::Dirichlet => dirichlet_assign(
                &data.labels,
                data.num_classes,
                num_clients,
                self.concentration,
                self.min_shard_size,
                rng,
            )?,
            PartitionMode::SpeakerEqual => equal_assign(data.len(), num_clients, rng)?,
        };
        Ok(data.shards(&assignment))
    }
}

const MAX_PARTITION_ATTEMPTS: usize = 100;

fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| Error::config("alpha", "invalid concentration"))?;
    for _ in 0..MAX_PARTITION_ATTEMPTS {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|g| g / sum).collect());
        }
    }
    Err(Error::Infeasible("Dirichlet draw kept underflowing".into()))
}

/// Label-skewed assignment of sample indices to `k` clients.
///
/// For each class a proportion vector is drawn from `Dir(alpha * 1_k)`;
/// clients that already hold at least `n / k` samples get proportion zero for
/// the remaining classes. The class's shuffled samples are cut at the
/// cumulative proportions. The whole draw is repeated (at most 100 times)
/// until every client holds `min_size` samples.
pub fn dirichlet_assign<R: Rng + ?Sized>(
    labels: &[usize],
    num_classes: usize,
    k: usize,
    alpha: f64,
    min_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k == 0 {
        return Err(Error::config("clients", "need at least one client"));
    }
    if k > n || k * min_size.max(1) > n {
        return Err(Error::Infeasible(format!(
            "{k} clients with at least {} samples each from {n} samples",
            min_size.max(1)
        )));
    }
    let by_class: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    let cap = n as f64 / k as f64;
    for _ in 0..MAX_PARTITION_ATTEMPTS {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut idx = members.clone();
            idx.shuffle(rng);
            let raw = dirichlet(alpha, k, rng)?;
            let mut p: Vec<f64> = raw
                .iter()
                .zip(&shards)
                .map(|(&p, s)| if (s.len() as f64) < cap { p } else { 0.0 })
                .collect();
            let total: f64 = p.iter().sum();
            if total > 0.0 {
                p.iter_mut().for_each(|v| *v /= total);
            } else {
                p = raw;
            }
            let mut start = 0;
            let mut acc = 0.0;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                let end = if j + 1 == k {
                    idx.len()
                } else {
                    ((acc * idx.len() as f64) as usize).min(idx.len())
                };
                let end = end.max(start);
                shards[j].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        if shards.iter().all(|s| s.len() >= min_size.max(1)) {
            for s in &mut shards {
                s.sort_unstable();
            }
            return Ok(shards);
        }
    }
    Err(Error::Infeasible(format!(
        "no Dirichlet({alpha}) draw gave every one of {k} clients {} samples in {MAX_PARTITION_ATTEMPTS} attempts",
        min_size.max(1)
    )))
}

pub fn dirichlet_partition<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<ClientShard>> {
    let spec = PartitionSpec {
        concentration: alpha,
        min_shard_size: 1,
        ..PartitionSpec::default()
    };
    spec.partition(data, k, rng)
}

/// Random split into `k` shards whose sizes differ by at most one.
pub fn equal_assign<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::Infeasible(format!("{k} equal shards from {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut shards = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        shards[pos % k].push(i);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

pub fn speaker_equal_partition<R: Rng + ?Sized>(data: &Dataset, k: usize, rng: &mut R) -> Result<Vec<ClientShard>> {
    Ok(data.shards(&equal_assign(data.len(), k, rng)?))
}

/// Keeps the shareable modality on exactly `round(q * K)` randomly chosen
/// shards and drops it everywhere else.
pub fn apply_missing_modality<R: Rng + ?Sized>(shards: &mut [ClientShard], q: f64, rng: &mut R) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config("q", "must be in [0, 1]"));
    }
    let k = shards.len();
    let keep = libm::round(q * k as f64) as usize;
    let mut flags = vec![false; k];
    for i in rand::seq::index::sample(rng, k, keep.min(k)) {
        flags[i] = true;
    }
    for (shard, keep) in shards.iter_mut().zip(flags) {
        if !keep {
            shard.shareable = None;
        }
    }
    Ok(())
}
