//! The extract → train → embed → eval → oracle → pair commands.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::formats::{
    encode_checkpoint, metadata_get, read_checkpoint, read_embedding, read_feature, write_atomic, write_checkpoint,
    write_embedding, write_feature, Checkpoint, EmbeddingRecord,
};
use super::manifest::{write_manifest, DatasetManifest};
use crate::dsp::{self, load_audio, mel_spectrogram, CANONICAL_RATE_HZ};
use crate::encoder::{build_encoder_config, encode, mini_encoder_config, toy_encoder_config, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, optimal_metrics, oracle_contributions, oracle_distances, pair_report, pairwise_fused_distances,
    CliqueLabels, Contributions, DistanceMatrix, EvalReport, PairReport,
};
use crate::feature::{FeatureKind, FeatureMatrix, FeatureSet};
use crate::fusion::FusedEmbedding;
use crate::lyrics::{alr_forward, AlrModelConfig};
use crate::nn::Params;
use crate::rhythm::{extract_cqfp, CqfpParams};
use crate::trainer::{center_output_bias, train_feature_model, EpochStats, TrainConfig};

/// Frame hop of the mel spectrogram fed to the acoustic model.
pub const ALR_HOP_S: f64 = 0.01;

/// Encoder family: the full table architectures, their narrow variants, or
/// the shallow encoders of the synthetic experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Toy,
    Mini,
    Table,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Toy => "toy",
            Arch::Mini => "mini",
            Arch::Table => "table",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Arch::Toy),
            "mini" => Ok(Arch::Mini),
            "table" => Ok(Arch::Table),
            _ => Err(Error::InvalidArgument(format!("unknown encoder architecture {s:?}"))),
        }
    }
}

pub fn encoder_config(kind: FeatureKind, arch: Arch, output_dim: usize) -> EncoderConfig {
    match arch {
        Arch::Toy => toy_encoder_config(kind, output_dim),
        Arch::Mini => mini_encoder_config(kind, output_dim),
        Arch::Table => EncoderConfig {
            output_dim,
            ..build_encoder_config(kind)
        },
    }
}

fn feature_seed(seed: u64, kind: FeatureKind) -> u64 {
    seed ^ (kind.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Append zero frames when `m` is shorter than the encoder's valid stack needs.
pub fn pad_for_encoder(m: &FeatureMatrix, config: &EncoderConfig) -> FeatureMatrix {
    if config.pre_dense_shape(m.rows).is_ok() {
        return m.clone();
    }
    let need = (m.rows.max(1)..=m.rows.max(config.input_shape.0) * 4)
        .find(|&r| config.pre_dense_shape(r).is_ok())
        .unwrap_or(config.input_shape.0.max(m.rows));
    let mut p = FeatureMatrix::zeros(m.kind, need, m.cols);
    p.values[..m.values.len()].copy_from_slice(&m.values);
    p
}

fn missing_list(ids: &[&str]) -> String {
    const SHOW: usize = 10;
    let mut s = ids.iter().take(SHOW).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        let _ = write!(s, " and {} more", ids.len() - SHOW);
    }
    s
}

/// Read the `kind` feature of every track; all tracks must have it.
pub fn load_features(manifest: &DatasetManifest, kind: FeatureKind) -> Result<Vec<FeatureMatrix>> {
    let missing = manifest.missing_feature(kind);
    if !missing.is_empty() {
        return Err(Error::Missing(format!("no {kind} feature for tracks {}", missing_list(&missing))));
    }
    manifest
        .records
        .par_iter()
        .map(|r| {
            let path = r.feature_path(kind).expect("checked above");
            let m = read_feature(path)?;
            if m.kind != kind {
                return Err(Error::format(path, format!("holds a {} feature, expected {kind}", m.kind)));
            }
            Ok(m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub kinds: FeatureSet,
    pub arch: Arch,
    pub output_dim: usize,
    /// Centre the dense bias on the training set before the first step.
    pub center_init: bool,
    pub train: TrainConfig,
}

pub fn checkpoint_path(dir: &Path, kind: FeatureKind) -> PathBuf {
    dir.join(format!("{}.viwt", kind.name()))
}

pub fn encoder_checkpoint(config: &EncoderConfig, arch: Arch, params: Params) -> Checkpoint {
    Checkpoint {
        metadata: format!("model=encoder;kind={};arch={};output_dim={}", config.kind.name(), arch.name(), config.output_dim),
        params,
    }
}

pub fn load_encoder(path: &Path) -> Result<(EncoderConfig, Params)> {
    let c = read_checkpoint(path)?;
    let field = |k: &str| metadata_get(&c.metadata, k).ok_or_else(|| Error::format(path, format!("metadata lacks {k}")));
    if field("model")? != "encoder" {
        return Err(Error::format(path, "not an encoder checkpoint"));
    }
    let kind: FeatureKind = field("kind")?.parse()?;
    let arch: Arch = field("arch")?.parse()?;
    let dim: usize = field("output_dim")?.parse().map_err(|_| Error::format(path, "bad output_dim"))?;
    let config = encoder_config(kind, arch, dim);
    config.check_params(&c.params)?;
    Ok((config, c.params))
}

pub fn train_log_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,mean_loss,active_triplet_fraction\n");
    for e in history {
        let _ = writeln!(s, "{},{},{}", e.epoch, e.mean_loss, e.active_triplet_fraction);
    }
    s
}

/// Train one encoder per feature in `opts.kinds`. Writes `<kind>.viwt`,
/// per-epoch `<kind>.epochNN.viwt` and `<kind>_train.csv` under `out_dir`.
pub fn cmd_train(
    manifest: &DatasetManifest,
    opts: &TrainOptions,
    out_dir: &Path,
) -> Result<Vec<(FeatureKind, Vec<EpochStats>)>> {
    if opts.kinds.is_empty() {
        return Err(Error::InvalidArgument("no features selected for training".into()));
    }
    let labels = manifest.labels();
    let mut out = Vec::new();
    for kind in opts.kinds.iter() {
        let features = load_features(manifest, kind)?;
        let config = encoder_config(kind, opts.arch, opts.output_dim);
        config.validate()?;
        let features: Vec<FeatureMatrix> = features.iter().map(|m| pad_for_encoder(m, &config)).collect();
        let mut init = config.init_params(feature_seed(opts.train.seed, kind));
        if opts.center_init {
            center_output_bias(&features, &config, &mut init)?;
        }
        let train = TrainConfig {
            seed: feature_seed(opts.train.seed.wrapping_add(1), kind),
            ..opts.train.clone()
        };
        let (params, history) = train_feature_model(&features, labels.works(), &config, init, &train, |stats, p| {
            let path = out_dir.join(format!("{}.epoch{:02}.viwt", kind.name(), stats.epoch));
            write_checkpoint(&path, &encoder_checkpoint(&config, opts.arch, p.clone()))
        })?;
        write_checkpoint(&checkpoint_path(out_dir, kind), &encoder_checkpoint(&config, opts.arch, params))?;
        write_atomic(&out_dir.join(format!("{}_train.csv", kind.name())), train_log_csv(&history).as_bytes())?;
        out.push((kind, history));
    }
    Ok(out)
}

pub fn embedding_path(dir: &Path, track_id: &str) -> PathBuf {
    dir.join(format!("{track_id}.viem"))
}

/// Embed every track under each feature of `mask` with the checkpoints in
/// `models_dir`. Tracks lacking a feature get no block for it. Returns the
/// number of files written.
pub fn cmd_embed(manifest: &DatasetManifest, models_dir: &Path, mask: FeatureSet, out_dir: &Path) -> Result<usize> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty feature mask".into()));
    }
    let mut models = Vec::new();
    for kind in mask.iter() {
        let path = checkpoint_path(models_dir, kind);
        if !path.exists() {
            return Err(Error::Missing(format!("no {kind} checkpoint at {}", path.display())));
        }
        models.push(load_encoder(&path)?);
    }
    let dim = models[0].0.output_dim;
    if models.iter().any(|(c, _)| c.output_dim != dim) {
        return Err(Error::Shape("checkpoints disagree on the embedding dimension".into()));
    }
    manifest.records.par_iter().try_for_each(|r| {
        let mut rec = EmbeddingRecord::new(dim);
        for (config, params) in &models {
            let Some(path) = r.feature_path(config.kind) else { continue };
            let m = read_feature(path)?;
            if m.kind != config.kind {
                return Err(Error::format(path, format!("holds a {} feature, expected {}", m.kind, config.kind)));
            }
            let e = encode(&pad_for_encoder(&m, config), config, params, None)?;
            rec.parts[config.kind.index()] = Some(e.values);
        }
        write_embedding(&embedding_path(out_dir, &r.track_id), &rec)
    })?;
    Ok(manifest.len())
}

/// Read the embedding file of every manifest track from `dir`.
pub fn load_embeddings(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<FusedEmbedding>> {
    let missing: Vec<PathBuf> = manifest
        .records
        .iter()
        .map(|r| embedding_path(dir, &r.track_id))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    manifest
        .records
        .par_iter()
        .map(|r| {
            let rec = read_embedding(&embedding_path(dir, &r.track_id))?;
            let mut f = FusedEmbedding::new();
            for k in FeatureKind::ALL {
                if let Some(v) = &rec.parts[k.index()] {
                    f.insert(k, v.iter().map(|&x| f64::from(x)).collect())?;
                }
            }
            Ok(f)
        })
        .collect()
}

fn check_mask_present(embeddings: &[FusedEmbedding], mask: FeatureSet) -> Result<()> {
    for k in mask.iter() {
        if !embeddings.iter().any(|e| e.present().contains(k)) {
            return Err(Error::Missing(format!("no track has a {k} embedding")));
        }
    }
    Ok(())
}

fn push_metrics(s: &mut String, prefix: &str, r: &EvalReport) {
    let _ = writeln!(s, "{prefix}map,{}", r.map);
    let _ = writeln!(s, "{prefix}mt10,{}", r.mt10);
    let _ = writeln!(s, "{prefix}mr1,{}", r.mr1);
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub optimal: EvalReport,
    pub csv: String,
}

/// MAP, MT@10 and MR1 of the fused distances under `mask`, plus the optimal
/// bounds, written as a `metric,value` CSV.
pub fn cmd_eval(manifest: &DatasetManifest, emb_dir: &Path, mask: FeatureSet, report_path: &Path) -> Result<EvalOutcome> {
    let embeddings = load_embeddings(manifest, emb_dir)?;
    check_mask_present(&embeddings, mask)?;
    let labels = manifest.labels();
    let dist = pairwise_fused_distances(&embeddings, mask)?;
    let report = evaluate(&dist, &labels)?;
    let optimal = optimal_metrics(&labels)?;
    let mut csv = String::from("metric,value\n");
    push_metrics(&mut csv, "", &report);
    push_metrics(&mut csv, "optimal_", &optimal);
    write_atomic(report_path, csv.as_bytes())?;
    Ok(EvalOutcome { report, optimal, csv })
}

pub fn feature_matrices(embeddings: &[FusedEmbedding], mask: FeatureSet) -> Result<Vec<(FeatureKind, DistanceMatrix)>> {
    mask.iter()
        .map(|k| Ok((k, pairwise_fused_distances(embeddings, FeatureSet::from_iter([k]))?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub oracle: EvalReport,
    pub fused: EvalReport,
    pub per_feature: Vec<(FeatureKind, EvalReport)>,
    pub contributions: Contributions,
}

/// Number of pairs written to the distance scatter CSV.
pub const SCATTER_PAIRS: usize = 500;

/// Oracle metrics, contribution shares and a pair-distance scatter sample.
/// Writes `oracle_report.csv`, `contributions.csv` and `pair_distances.csv`
/// under `out_dir`.
pub fn cmd_oracle(
    manifest: &DatasetManifest,
    emb_dir: &Path,
    mask: FeatureSet,
    seed: u64,
    out_dir: &Path,
) -> Result<OracleOutcome> {
    if mask.len() < 2 {
        return Err(Error::InvalidArgument("the oracle needs at least two features".into()));
    }
    let embeddings = load_embeddings(manifest, emb_dir)?;
    check_mask_present(&embeddings, mask)?;
    let labels = manifest.labels();
    let per = feature_matrices(&embeddings, mask)?;
    let refs: Vec<&DistanceMatrix> = per.iter().map(|(_, m)| m).collect();
    let oracle = evaluate(&oracle_distances(&refs, &labels)?, &labels)?;
    let fused_dist = pairwise_fused_distances(&embeddings, mask)?;
    let fused = evaluate(&fused_dist, &labels)?;
    let per_feature = per
        .iter()
        .map(|(k, m)| Ok((*k, evaluate(m, &labels)?)))
        .collect::<Result<Vec<_>>>()?;
    let contributions = oracle_contributions(&refs, &labels)?;

    let mut report = String::from("metric,value\n");
    push_metrics(&mut report, "oracle_", &oracle);
    push_metrics(&mut report, "fused_", &fused);
    for (k, r) in &per_feature {
        push_metrics(&mut report, &format!("{}_", k.name()), r);
    }
    push_metrics(&mut report, "optimal_", &optimal_metrics(&labels)?);
    write_atomic(&out_dir.join("oracle_report.csv"), report.as_bytes())?;

    let mut contrib = String::from("feature,positive,negative,overall\n");
    let overall = contributions.overall();
    for (i, (k, _)) in per.iter().enumerate() {
        let _ = writeln!(
            contrib,
            "{},{},{},{}",
            k.name(),
            contributions.positive[i],
            contributions.negative[i],
            overall[i]
        );
    }
    write_atomic(&out_dir.join("contributions.csv"), contrib.as_bytes())?;

    let mut scatter = String::from("track_a,track_b,same_work");
    for (k, _) in &per {
        let _ = write!(scatter, ",d_{}", k.name());
    }
    scatter.push_str(",d_fused\n");
    for (a, b) in sample_pairs(&labels, SCATTER_PAIRS, seed) {
        let _ = write!(
            scatter,
            "{},{},{}",
            manifest.records[a].track_id,
            manifest.records[b].track_id,
            u8::from(labels.same_work(a, b))
        );
        for m in &refs {
            let _ = write!(scatter, ",{}", m.get(a, b));
        }
        let _ = writeln!(scatter, ",{}", fused_dist.get(a, b));
    }
    write_atomic(&out_dir.join("pair_distances.csv"), scatter.as_bytes())?;

    Ok(OracleOutcome {
        oracle,
        fused,
        per_feature,
        contributions,
    })
}

/// Up to `count` distinct unordered pairs `a < b`: half versions (as many as
/// exist), the rest non-versions, in a seeded random order.
pub fn sample_pairs(labels: &CliqueLabels, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| labels.same_work(a, b))
        .collect();
    let n_pos = positives.len().min(count / 2);
    let mut out: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, positives.len(), n_pos)
        .into_iter()
        .map(|i| positives[i])
        .collect();
    let total_neg = n * n.saturating_sub(1) / 2 - positives.len();
    let n_neg = (count - n_pos).min(total_neg);
    let mut seen = HashSet::new();
    while seen.len() < n_neg {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        if a != b && !labels.same_work(a, b) && seen.insert((a, b)) {
            out.push((a, b));
        }
    }
    out
}

/// Per-feature and per-mask distances between two tracks. With no masks,
/// the features both tracks share are fused.
pub fn cmd_pair(
    manifest: &DatasetManifest,
    emb_dir: &Path,
    track_a: &str,
    track_b: &str,
    masks: &[FeatureSet],
) -> Result<PairReport> {
    let ia = manifest.position(track_a).ok_or_else(|| Error::UnknownTrack(track_a.into()))?;
    let ib = manifest.position(track_b).ok_or_else(|| Error::UnknownTrack(track_b.into()))?;
    let sub = DatasetManifest {
        records: vec![manifest.records[ia].clone(), manifest.records[ib].clone()],
    };
    let embeddings = load_embeddings(&sub, emb_dir)?;
    let common = embeddings[0].present().intersect(embeddings[1].present());
    let per = feature_matrices(&embeddings, common)?;
    let refs: Vec<(FeatureKind, &DistanceMatrix)> = per.iter().map(|(k, m)| (*k, m)).collect();
    if masks.is_empty() {
        return pair_report(0, 1, &refs, &[common]);
    }
    pair_report(0, 1, &refs, masks)
}

pub fn format_pair_report(r: &PairReport) -> String {
    let mut s = String::from("features,distance\n");
    for (k, d) in &r.per_feature {
        let _ = writeln!(s, "{k},{d:.6}");
    }
    for (m, d) in &r.fused {
        let _ = writeln!(s, "{m},{d:.6}");
    }
    s
}

/// Model used to compute lyrics posteriorgrams.
#[derive(Debug, Clone, PartialEq)]
pub struct AlrModel {
    pub config: AlrModelConfig,
    pub params: Params,
}

impl AlrModel {
    pub fn checkpoint(&self) -> Checkpoint {
        let filters: Vec<String> = self.config.layers.iter().map(|l| l.filters.to_string()).collect();
        Checkpoint {
            metadata: format!("model=alr;filters={};dropout={}", filters.join(","), self.config.layers[0].dropout),
            params: self.params.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = read_checkpoint(path)?;
        if metadata_get(&c.metadata, "model") != Some("alr") {
            return Err(Error::format(path, "not an acoustic model checkpoint"));
        }
        let filters: Vec<usize> = metadata_get(&c.metadata, "filters")
            .unwrap_or("")
            .split(',')
            .map(|f| f.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, "bad filters metadata"))?;
        let filters: [usize; 8] = filters.try_into().map_err(|_| Error::format(path, "expected 8 filter counts"))?;
        let dropout: f64 = metadata_get(&c.metadata, "dropout")
            .unwrap_or("0")
            .parse()
            .map_err(|_| Error::format(path, "bad dropout metadata"))?;
        let config = AlrModelConfig::with_filters(filters, dropout);
        config.check_params(&c.params)?;
        Ok(AlrModel { config, params: c.params })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub cqfp: CqfpParams,
    pub alr: Option<AlrModel>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
}

fn extract_one(kind: FeatureKind, audio_path: &Path, opts: &ExtractOptions) -> Result<FeatureMatrix> {
    let audio = load_audio(audio_path)?;
    match kind {
        FeatureKind::Rh => Ok(extract_cqfp(&audio, &opts.cqfp)?.to_feature_matrix()),
        FeatureKind::Ly => {
            let model = opts.alr.as_ref().ok_or_else(|| Error::Missing("lyrics extraction needs acoustic model weights".into()))?;
            let audio = dsp::resample(&audio, CANONICAL_RATE_HZ)?;
            let mel = mel_spectrogram(&audio, model.config.n_mels, ALR_HOP_S)?;
            Ok(alr_forward(&mel, &model.config, &model.params, None)?.to_feature_matrix())
        }
        other => Err(Error::InvalidArgument(format!("{other} features are ingested, not extracted"))),
    }
}

/// Compute the `kind` feature (Rh or Ly) of every track with audio into
/// `out_dir`, skipping outputs whose recorded content hash is current, and
/// write `out_dir/manifest.tsv` pointing at the new files.
pub fn cmd_extract(
    manifest: &DatasetManifest,
    kind: FeatureKind,
    opts: &ExtractOptions,
    out_dir: &Path,
) -> Result<(DatasetManifest, ExtractSummary)> {
    if !matches!(kind, FeatureKind::Rh | FeatureKind::Ly) {
        return Err(Error::InvalidArgument(format!("{kind} features are ingested, not extracted")));
    }
    if kind == FeatureKind::Ly && opts.alr.is_none() {
        return Err(Error::Missing("lyrics extraction needs acoustic model weights".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out_dir = fs::canonicalize(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let settings = match kind {
        FeatureKind::Ly => {
            let m = opts.alr.as_ref().expect("checked above");
            let digest = Sha256::digest(encode_checkpoint(&m.checkpoint())?);
            format!("ly;hop={ALR_HOP_S};model={}", hex::encode(digest))
        }
        _ => format!("rh;{:?}", opts.cqfp),
    };
    enum Outcome {
        Computed(PathBuf),
        Skipped(PathBuf),
        Failed(String),
    }
    let outcomes: Vec<Outcome> = manifest
        .records
        .par_iter()
        .map(|r| {
            let Some(audio) = &r.audio_path else {
                return Outcome::Failed("no audio path".into());
            };
            let run = || -> Result<Outcome> {
                let bytes = fs::read(audio).map_err(|e| Error::io(audio, e))?;
                let mut h = Sha256::new();
                h.update(settings.as_bytes());
                h.update([0u8]);
                h.update(&bytes);
                let hash = hex::encode(h.finalize());
                let out = out_dir.join(format!("{}.{}.vife", r.track_id, kind.name()));
                let sidecar = out.with_extension("sha256");
                if out.exists() && fs::read_to_string(&sidecar).is_ok_and(|s| s.trim() == hash) {
                    return Ok(Outcome::Skipped(out));
                }
                let m = extract_one(kind, audio, opts)?;
                write_feature(&out, &m)?;
                write_atomic(&sidecar, format!("{hash}\n").as_bytes())?;
                Ok(Outcome::Computed(out))
            };
            run().unwrap_or_else(|e| Outcome::Failed(e.to_string()))
        })
        .collect();
    let mut updated = manifest.clone();
    let mut summary = ExtractSummary::default();
    for (rec, o) in updated.records.iter_mut().zip(outcomes) {
        match o {
            Outcome::Computed(p) => {
                summary.computed += 1;
                rec.feature_paths[kind.index()] = Some(p);
            }
            Outcome::Skipped(p) => {
                summary.skipped += 1;
                rec.feature_paths[kind.index()] = Some(p);
            }
            Outcome::Failed(e) => {
                log::error!("{}: {e}", rec.track_id);
                summary.failures.push((rec.track_id.clone(), e));
            }
        }
    }
    write_manifest(&out_dir.join("manifest.tsv"), &updated)?;
    Ok((updated, summary))
}
