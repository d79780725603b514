//! Dataset manifests, file formats, configuration and the command pipeline.

pub mod config;
pub mod formats;
pub mod manifest;
pub mod pipeline;

use std::fs;
use std::path::Path;

use crate::dsp::write_wav_pcm16;
use crate::error::{Error, Result};
use crate::synth::{click_track, planted_dataset, PlantedSpec};

pub use config::Config;
pub use formats::{
    read_checkpoint, read_embedding, read_feature, write_atomic, write_checkpoint, write_embedding, write_feature,
    Checkpoint, EmbeddingRecord,
};
pub use manifest::{load_manifest, prune, write_manifest, DatasetManifest, ExclusionList, TrackRecord};
pub use pipeline::{
    cmd_embed, cmd_eval, cmd_extract, cmd_oracle, cmd_pair, cmd_train, AlrModel, Arch, ExtractOptions, ExtractSummary,
    TrainOptions,
};

/// Write a planted dataset under `out_dir`: one feature file per track and
/// feature, optional click-track audio of `audio_secs` seconds, and
/// `manifest.tsv`.
pub fn cmd_synth(spec: &PlantedSpec, audio_secs: Option<f64>, out_dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out_dir = fs::canonicalize(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let tracks = planted_dataset(spec)?;
    let mut records = Vec::with_capacity(tracks.len());
    for (i, t) in tracks.iter().enumerate() {
        let mut r = TrackRecord::new(&t.track_id, &t.work_id);
        for m in &t.features {
            let p = out_dir.join(format!("{}.{}.vife", t.track_id, m.kind.name()));
            write_feature(&p, m)?;
            r.feature_paths[m.kind.index()] = Some(p);
        }
        if let Some(secs) = audio_secs {
            // each work has its own tempo, versions vary it by a few percent
            let bpm = 80.0 + 4.0 * (t.work % 20) as f64;
            let version = (i % spec.versions) as f64;
            let audio = click_track(bpm * (1.0 + 0.03 * version), secs, spec.seed.wrapping_add(i as u64));
            let p = out_dir.join(format!("{}.wav", t.track_id));
            write_wav_pcm16(&p, &audio)?;
            r.audio_path = Some(p);
        }
        records.push(r);
    }
    let m = DatasetManifest { records };
    write_manifest(&out_dir.join("manifest.tsv"), &m)?;
    Ok(m)
}
