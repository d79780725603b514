use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vi_core::feature::{parse_feature_list, FeatureKind, FeatureSet};
use vi_core::harness::pipeline::format_pair_report;
use vi_core::harness::{
    cmd_embed, cmd_eval, cmd_extract, cmd_oracle, cmd_pair, cmd_synth, cmd_train, load_manifest, prune,
    write_manifest, AlrModel, Arch, Config, DatasetManifest, ExclusionList, ExtractOptions,
    TrainOptions,
};
use vi_core::lyrics::AlrModelConfig;
use vi_core::rhythm::CqfpParams;
use vi_core::synth::{Informativeness, PlantedSpec};
use vi_core::trainer::TrainConfig;

#[derive(Parser)]
#[command(name = "vi", version, about = "Multi-feature version identification pipeline")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Plain-text `key = value` configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; the VI_SEED environment variable takes precedence.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Track ids to drop before anything else.
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Additional list of instrumental track ids to drop.
    #[arg(long)]
    instrumental: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute rh or ly features from audio.
    Extract {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        feature: FeatureKind,
        #[arg(long)]
        out: PathBuf,
        /// Acoustic model checkpoint for ly.
        #[arg(long)]
        alr_weights: Option<PathBuf>,
        /// Use a freshly initialised narrow acoustic model with this seed
        /// instead of trained weights (smoke tests only).
        #[arg(long, conflicts_with = "alr_weights")]
        alr_init_seed: Option<u64>,
    },
    /// Train one encoder per feature.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        features: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        output_dim: Option<usize>,
    },
    /// Write one embedding file per track.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        features: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAP, MT@10 and MR1 of the fused distances, with optimal bounds.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        features: String,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Oracle metrics, feature contributions and pair-distance scatter data.
    Oracle {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        features: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-feature and fused distances between two tracks.
    Pair {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        embeddings: PathBuf,
        track_a: String,
        track_b: String,
        /// Feature masks to fuse, e.g. `me,ha`; repeatable.
        #[arg(long = "features")]
        masks: Vec<String>,
    },
    /// Drop excluded tracks and write the reduced manifest.
    Prune {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a planted synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        works: usize,
        #[arg(long, default_value_t = 4)]
        versions: usize,
        /// Noise level of the informative features.
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Make me informative only for the first half of the works and ha
        /// only for the second half.
        #[arg(long)]
        split: bool,
        /// Also write click-track audio of this many seconds per track.
        #[arg(long)]
        audio_secs: Option<f64>,
    },
}

/// Failure with a specific exit status.
#[derive(Debug)]
struct ItemFailures(usize);

impl std::fmt::Display for ItemFailures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} item(s) failed", self.0)
    }
}

impl std::error::Error for ItemFailures {}

fn seed(cli_seed: Option<u64>, config: &Config) -> Result<u64> {
    if let Ok(s) = std::env::var("VI_SEED") {
        return s.trim().parse().with_context(|| format!("VI_SEED={s:?} is not an integer"));
    }
    Ok(match cli_seed {
        Some(s) => s,
        None => config.get_or("seed", 0u64)?,
    })
}

fn mask(s: &str) -> Result<FeatureSet> {
    let m = parse_feature_list(s)?;
    if m.is_empty() {
        bail!("empty feature list {s:?}");
    }
    Ok(m)
}

fn load_data(d: &DataArgs) -> Result<DatasetManifest> {
    let m = load_manifest(&d.manifest)?;
    if d.exclude.is_none() && d.instrumental.is_none() {
        return Ok(m);
    }
    let ex = match &d.exclude {
        Some(p) => ExclusionList::load(p)?,
        None => ExclusionList::default(),
    };
    let inst = d.instrumental.as_deref().map(ExclusionList::load).transpose()?;
    let (pruned, unknown) = prune(&m, &ex, inst.as_ref());
    if !unknown.is_empty() {
        log::warn!("{} exclusion id(s) not in the manifest", unknown.len());
    }
    log::info!("{} of {} tracks kept after pruning", pruned.len(), m.len());
    Ok(pruned)
}

fn train_options(
    config: &Config,
    kinds: FeatureSet,
    seed: u64,
    arch: Option<String>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    output_dim: Option<usize>,
) -> Result<TrainOptions> {
    let d = TrainConfig::default();
    let train = TrainConfig {
        learning_rate: learning_rate.map_or_else(|| config.get_or("learning_rate", d.learning_rate), Ok)?,
        batch_size: config.get_or("batch_size", d.batch_size)?,
        margin: config.get_or("margin", d.margin)?,
        works_per_batch: config.get_or("works_per_batch", d.works_per_batch)?,
        versions_per_work: config.get_or("versions_per_work", d.versions_per_work)?,
        epochs: epochs.map_or_else(|| config.get_or("epochs", d.epochs), Ok)?,
        batches_per_epoch: config.get_or("batches_per_epoch", d.batches_per_epoch)?,
        seed,
    };
    train.validate()?;
    let arch: Arch = match arch {
        Some(a) => a.parse()?,
        None => config.get_or("arch", "toy".to_string())?.parse()?,
    };
    Ok(TrainOptions {
        kinds,
        arch,
        output_dim: output_dim.map_or_else(|| config.get_or("output_dim", 16usize), Ok)?,
        center_init: config.get_or("center_init", true)?,
        train,
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = seed(cli.seed, &config)?;
    match cli.command {
        Command::Extract {
            data,
            feature,
            out,
            alr_weights,
            alr_init_seed,
        } => {
            let m = load_data(&data)?;
            let alr = match (alr_weights, alr_init_seed) {
                (Some(p), _) => Some(AlrModel::load(&p)?),
                (None, Some(s)) => {
                    let config = AlrModelConfig::with_filters([4, 4, 8, 8, 8, 8, 8, 8], 0.0);
                    let params = config.init_params(s);
                    Some(AlrModel { config, params })
                }
                (None, None) => None,
            };
            let defaults = CqfpParams::default();
            let cqfp = CqfpParams {
                target_frames: config.get_or("cqfp_target_frames", defaults.target_frames)?,
                ..defaults
            };
            let (_, summary) = cmd_extract(&m, feature, &ExtractOptions { cqfp, alr }, &out)?;
            println!(
                "{feature}: {} computed, {} up to date, {} failed",
                summary.computed,
                summary.skipped,
                summary.failures.len()
            );
            for (id, e) in &summary.failures {
                eprintln!("{id}: {e}");
            }
            if !summary.failures.is_empty() {
                return Err(ItemFailures(summary.failures.len()).into());
            }
        }
        Command::Train {
            data,
            features,
            out,
            arch,
            epochs,
            learning_rate,
            output_dim,
        } => {
            let m = load_data(&data)?;
            let opts = train_options(&config, mask(&features)?, seed, arch, epochs, learning_rate, output_dim)?;
            for (kind, history) in cmd_train(&m, &opts, &out)? {
                if let (Some(first), Some(last)) = (history.first(), history.last()) {
                    println!("{kind}: loss {:.4} -> {:.4} over {} epochs", first.mean_loss, last.mean_loss, history.len());
                }
            }
        }
        Command::Embed {
            data,
            models,
            features,
            out,
        } => {
            let m = load_data(&data)?;
            let n = cmd_embed(&m, &models, mask(&features)?, &out)?;
            println!("wrote {n} embedding files to {}", out.display());
        }
        Command::Eval {
            data,
            embeddings,
            features,
            out,
        } => {
            let m = load_data(&data)?;
            let r = cmd_eval(&m, &embeddings, mask(&features)?, &out)?;
            print!("{}", r.csv);
        }
        Command::Oracle {
            data,
            embeddings,
            features,
            out,
        } => {
            let m = load_data(&data)?;
            let r = cmd_oracle(&m, &embeddings, mask(&features)?, seed, &out)?;
            println!("oracle MAP {:.4}, fused MAP {:.4}", r.oracle.map, r.fused.map);
            for (k, e) in &r.per_feature {
                println!("{k} MAP {:.4}", e.map);
            }
            println!("reports written to {}", out.display());
        }
        Command::Pair {
            data,
            embeddings,
            track_a,
            track_b,
            masks,
        } => {
            let m = load_data(&data)?;
            let masks = masks.iter().map(|s| mask(s)).collect::<Result<Vec<_>>>()?;
            let r = cmd_pair(&m, &embeddings, &track_a, &track_b, &masks)?;
            print!("{}", format_pair_report(&r));
        }
        Command::Prune { data, out } => {
            let m = load_data(&data)?;
            write_manifest(&out, &m)?;
            println!("{} tracks written to {}", m.len(), out.display());
        }
        Command::Synth {
            out,
            works,
            versions,
            noise,
            split,
            audio_secs,
        } => {
            let mut spec = PlantedSpec {
                works,
                versions,
                ..PlantedSpec::standard(seed)
            };
            for f in spec.features.iter_mut().filter(|f| f.informative == Informativeness::All) {
                f.noise = noise;
                if split {
                    let half = works / 2;
                    f.informative = match f.kind {
                        FeatureKind::Me => Informativeness::Works(0..half),
                        _ => Informativeness::Works(half..works),
                    };
                }
            }
            let m = cmd_synth(&spec, audio_secs, &out)?;
            println!("{} tracks written to {}", m.len(), out.join("manifest.tsv").display());
        }
    }
    Ok(())
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ItemFailures>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_pool(cli.jobs).and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
