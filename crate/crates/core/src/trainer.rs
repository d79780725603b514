//! Triplet-loss metric learning: batch sampling, semi-hard mining, Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{encode_with_cache, encoder_backward, EncoderConfig};
use crate::error::{Error, Result};
use crate::feature::FeatureMatrix;
use crate::nn::Params;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub works_per_batch: usize,
    pub versions_per_work: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            margin: 0.3,
            works_per_batch: 16,
            versions_per_work: 4,
            epochs: 10,
            batches_per_epoch: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.works_per_batch * self.versions_per_work != self.batch_size {
            return Err(Error::InvalidArgument(format!(
                "batch size {} is not {} works x {} versions",
                self.batch_size, self.works_per_batch, self.versions_per_work
            )));
        }
        if !(self.margin > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("margin and learning rate must be positive".into()));
        }
        if self.works_per_batch < 2 || self.versions_per_work < 2 || self.batches_per_epoch == 0 {
            return Err(Error::InvalidArgument(
                "need at least 2 works and 2 versions per batch and one batch per epoch".into(),
            ));
        }
        Ok(())
    }
}

/// Draw `works_per_batch` distinct works (among those with at least two
/// tracks) and `versions_per_work` tracks of each. Works with fewer tracks
/// contribute every track once and fill the rest with replacement.
///
/// `labels[i]` is the work of track `i`; returns `(track, work)` pairs.
pub fn sample_batch(labels: &[u32], config: &TrainConfig, rng: &mut impl Rng) -> Result<Vec<(usize, u32)>> {
    let mut by_work: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &w) in labels.iter().enumerate() {
        by_work.entry(w).or_default().push(i);
    }
    let eligible: Vec<(u32, Vec<usize>)> = by_work.into_iter().filter(|(_, t)| t.len() >= 2).collect();
    if eligible.len() < config.works_per_batch {
        return Err(Error::NotEnoughWorks {
            needed: config.works_per_batch,
            found: eligible.len(),
        });
    }
    let chosen = rand::seq::index::sample(rng, eligible.len(), config.works_per_batch).into_vec();
    let mut batch = Vec::with_capacity(config.batch_size);
    for wi in chosen {
        let (work, tracks) = &eligible[wi];
        let k = config.versions_per_work;
        let mut picks: Vec<usize> = if tracks.len() >= k {
            tracks.choose_multiple(rng, k).cloned().collect()
        } else {
            let mut p = tracks.clone();
            while p.len() < k {
                p.push(tracks[rng.gen_range(0..tracks.len())]);
            }
            p
        };
        picks.shuffle(rng);
        batch.extend(picks.into_iter().map(|t| (t, *work)));
    }
    Ok(batch)
}

pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One triplet per ordered anchor-positive pair. The negative is the closest
/// one inside the band `d_ap < d_an < d_ap + margin`; failing that the
/// closest with `d_an > d_ap`; failing that the closest overall. Ties go to
/// the lowest index.
pub fn mine_semi_hard(embeddings: &[Vec<f64>], works: &[u32], margin: f64) -> Result<Vec<Triplet>> {
    let n = embeddings.len();
    if works.len() != n {
        return Err(Error::Shape("one work label per embedding required".into()));
    }
    if n == 0 || works.iter().all(|&w| w == works[0]) {
        return Err(Error::SingleWorkBatch);
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclidean(&embeddings[i], &embeddings[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || works[p] != works[a] {
                continue;
            }
            let dap = d[a * n + p];
            let mut band: Option<usize> = None;
            let mut farther: Option<usize> = None;
            let mut hardest: Option<usize> = None;
            let closer = |cur: Option<usize>, cand: usize| match cur {
                Some(c) if d[a * n + c] <= d[a * n + cand] => Some(c),
                _ => Some(cand),
            };
            for neg in 0..n {
                if works[neg] == works[a] {
                    continue;
                }
                let dan = d[a * n + neg];
                if dan > dap && dan < dap + margin {
                    band = closer(band, neg);
                }
                if dan > dap {
                    farther = closer(farther, neg);
                }
                hardest = closer(hardest, neg);
            }
            let negative = band.or(farther).or(hardest).unwrap();
            out.push(Triplet { anchor: a, positive: p, negative });
        }
    }
    Ok(out)
}

/// Mean hinge loss over `triplets`, the gradient with respect to every
/// embedding, and the number of triplets with positive loss.
pub fn batch_triplet_loss(embeddings: &[Vec<f64>], triplets: &[Triplet], margin: f64) -> (f64, Vec<Vec<f64>>, usize) {
    let mut grads: Vec<Vec<f64>> = embeddings.iter().map(|e| vec![0.0; e.len()]).collect();
    if triplets.is_empty() {
        return (0.0, grads, 0);
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    let mut active = 0;
    for t in triplets {
        let (a, p, n) = (&embeddings[t.anchor], &embeddings[t.positive], &embeddings[t.negative]);
        let dap = euclidean(a, p);
        let dan = euclidean(a, n);
        let l = triplet_loss(dap, dan, margin);
        if l <= 0.0 {
            continue;
        }
        total += l;
        active += 1;
        for k in 0..a.len() {
            let gp = if dap > 0.0 { (a[k] - p[k]) / dap * scale } else { 0.0 };
            let gn = if dan > 0.0 { (a[k] - n[k]) / dan * scale } else { 0.0 };
            grads[t.anchor][k] += gp - gn;
            grads[t.positive][k] -= gp;
            grads[t.negative][k] += gn;
        }
    }
    (total * scale, grads, active)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients are rejected before
/// anything is modified.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Shape("parameter, gradient and optimizer layouts differ".into()));
    }
    for g in &grads.tensors {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(g.name.clone()));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, g) in grads.tensors.iter().enumerate() {
        let m = &mut state.m.tensors[i].data;
        let v = &mut state.v.tensors[i].data;
        let w = &mut params.tensors[i].data;
        for k in 0..g.data.len() {
            let gk = g.data[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            w[k] -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub active_triplet_fraction: f64,
    pub updates: usize,
}

/// Per-sample backward passes are summed in fixed chunks, then the chunk sums
/// in order, so the result does not depend on the thread count.
const REDUCE_CHUNK: usize = 8;

/// One optimisation step on a batch. Returns `(mean loss, active, triplets)`.
fn train_step(
    features: &[FeatureMatrix],
    batch: &[(usize, u32)],
    config: &EncoderConfig,
    params: &mut Params,
    adam: &mut AdamState,
    train: &TrainConfig,
    step_seed: u64,
) -> Result<(f64, usize, usize)> {
    let caches = batch
        .par_iter()
        .enumerate()
        .map(|(i, &(track, _))| {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            encode_with_cache(&features[track], config, params, Some(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let embeddings: Vec<Vec<f64>> = caches.iter().map(|c| c.embedding().to_vec()).collect();
    let works: Vec<u32> = batch.iter().map(|b| b.1).collect();
    let triplets = mine_semi_hard(&embeddings, &works, train.margin)?;
    let (loss, upstream, active) = batch_triplet_loss(&embeddings, &triplets, train.margin);
    if active == 0 {
        return Ok((loss, 0, triplets.len()));
    }
    let chunk_sums: Vec<Params> = caches
        .par_chunks(REDUCE_CHUNK)
        .zip(upstream.par_chunks(REDUCE_CHUNK))
        .map(|(cs, us)| {
            let mut acc = params.zeros_like();
            for (c, u) in cs.iter().zip(us) {
                if u.iter().any(|&v| v != 0.0) {
                    acc.add_assign(&encoder_backward(c, config, params, u));
                }
            }
            acc
        })
        .collect();
    let mut grads = params.zeros_like();
    for g in &chunk_sums {
        grads.add_assign(g);
    }
    adam_step(params, &grads, adam, train.learning_rate)?;
    Ok((loss, active, triplets.len()))
}

/// Data-dependent initialisation: shift the dense bias so that the mean
/// pre-normalisation output over `features` is zero. Without it, a freshly
/// initialised ReLU stack maps every input close to the same direction.
pub fn center_output_bias(features: &[FeatureMatrix], config: &EncoderConfig, params: &mut Params) -> Result<()> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("no features to centre on".into()));
    }
    let outputs = features
        .par_iter()
        .map(|f| encode_with_cache(f, config, params, None).map(|c| c.pre_normalization()))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; config.output_dim];
    for z in &outputs {
        mean.iter_mut().zip(z).for_each(|(m, v)| *m += v);
    }
    let n = outputs.len() as f64;
    let b = params.get_mut(config.dense_bias_index());
    b.iter_mut().zip(&mean).for_each(|(b, m)| *b -= m / n);
    Ok(())
}

/// Train one encoder. `labels[i]` is the work of `features[i]`. `on_epoch` is
/// called after every epoch with the statistics and current weights, e.g. to
/// write a checkpoint.
pub fn train_feature_model(
    features: &[FeatureMatrix],
    labels: &[u32],
    config: &EncoderConfig,
    mut params: Params,
    train: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Params) -> Result<()>,
) -> Result<(Params, Vec<EpochStats>)> {
    train.validate()?;
    config.check_params(&params)?;
    if features.len() != labels.len() {
        return Err(Error::Shape("one work label per feature matrix required".into()));
    }
    if let Some(f) = features.iter().find(|f| f.kind != config.kind) {
        return Err(Error::InvalidArgument(format!("{} feature in a {} training set", f.kind, config.kind)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 1..=train.epochs {
        let (mut loss_sum, mut active, mut total, mut updates) = (0.0, 0usize, 0usize, 0usize);
        for _ in 0..train.batches_per_epoch {
            let batch = sample_batch(labels, train, &mut rng)?;
            let step_seed: u64 = rng.gen();
            let (l, a, t) = train_step(features, &batch, config, &mut params, &mut adam, train, step_seed)?;
            loss_sum += l;
            active += a;
            total += t;
            updates += usize::from(a > 0);
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / train.batches_per_epoch as f64,
            active_triplet_fraction: if total == 0 { 0.0 } else { active as f64 / total as f64 },
            updates,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4}, active {:.3}",
            config.kind,
            stats.mean_loss,
            stats.active_triplet_fraction
        );
        on_epoch(&stats, &params)?;
        history.push(stats);
    }
    Ok((params, history))
}
