//! Batch generation of paired samples with speaker-disjoint splits.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::audio::{synth_audio_pair, AudioSceneConfig};
use super::scene::{simulate_events, SceneConfig};
use super::SynthError;
use crate::audio::save_wav_mono;
use crate::event::write_events;
use crate::train::{SampleEntry, SampleManifest, Split};
use crate::util::mix_seed;

/// Knobs for a generated dataset. Speaker pools are per split, and each pool
/// alternates between two voice registers — the low and high fundamental
/// bands of the audio config. A sample's target comes from either register
/// and its interferer from the other, so absolute pitch never reveals which
/// voice to keep; only the event stream does. Every speaker owns a fixed
/// sub-range of its register, so the same speaker sounds alike across
/// samples and splits never share voices.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub audio: AudioSceneConfig,
    pub scene: SceneConfig,
    pub train_speakers: usize,
    pub val_speakers: usize,
    pub test_speakers: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            audio: AudioSceneConfig::default(),
            scene: SceneConfig::default(),
            train_speakers: 25,
            val_speakers: 4,
            test_speakers: 4,
        }
    }
}

fn split_of(i: usize) -> Split {
    match i % 7 {
        5 => Split::Val,
        6 => Split::Test,
        _ => Split::Train,
    }
}

/// Speaker `k` of a pool: even indices sit in the low register, odd in the
/// high one; each register is carved into one slot per resident speaker.
fn speaker_slot(cfg: &AudioSceneConfig, pool: usize, k: usize) -> (f64, f64) {
    let band = if k % 2 == 0 { cfg.f0_target } else { cfg.f0_interf };
    let residents = if k % 2 == 0 { pool.div_ceil(2) } else { pool / 2 };
    let width = (band.1 - band.0) / residents.max(1) as f64;
    let slot = k / 2;
    (band.0 + slot as f64 * width, band.0 + (slot + 1) as f64 * width)
}

/// Generates `n` samples with the default scene and audio settings.
pub fn generate_dataset(
    n: usize,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<SampleManifest, SynthError> {
    generate_dataset_with(n, out_dir, seed, &DatasetConfig::default())
}

/// Generates `n` samples: for each, a mixture WAV, the clean target WAV,
/// and the event stream of a mouth driven by the target envelope. Writes
/// `manifest.json` alongside the sample files. Fully deterministic in
/// `seed`, including file bytes.
pub fn generate_dataset_with(
    n: usize,
    out_dir: impl AsRef<Path>,
    seed: u64,
    cfg: &DatasetConfig,
) -> Result<SampleManifest, SynthError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let entries: Vec<SampleEntry> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<SampleEntry, SynthError> {
            let sample_seed = mix_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let split = split_of(i);
            let (prefix, pool) = match split {
                Split::Train => ("tr", cfg.train_speakers),
                Split::Val => ("va", cfg.val_speakers),
                Split::Test => ("te", cfg.test_speakers),
            };
            // Both registers need a resident.
            let pool = pool.max(2);
            let target = rng.random_range(0..pool);
            let speaker_id = format!("{prefix}{target:02}");

            // The interferer is a same-split voice from the other register.
            let others = if target % 2 == 0 { pool / 2 } else { pool.div_ceil(2) };
            let interferer = 2 * rng.random_range(0..others) + (1 - target % 2);

            let audio_cfg = AudioSceneConfig {
                f0_target: speaker_slot(&cfg.audio, pool, target),
                f0_interf: speaker_slot(&cfg.audio, pool, interferer),
                seed: mix_seed(sample_seed, 1),
                ..cfg.audio.clone()
            };
            let pair = synth_audio_pair(&audio_cfg);

            let scene_cfg = SceneConfig { seed: mix_seed(sample_seed, 2), ..cfg.scene.clone() };
            let stream = simulate_events(&scene_cfg, &pair.envelope, audio_cfg.duration_s);

            let mix_wav = format!("s{i:04}_mix.wav");
            let clean_wav = format!("s{i:04}_clean.wav");
            let events = format!("s{i:04}.evt");
            save_wav_mono(&pair.mixture, out_dir.join(&mix_wav))?;
            save_wav_mono(&pair.clean, out_dir.join(&clean_wav))?;
            write_events(&stream, out_dir.join(&events))?;

            Ok(SampleEntry { mix_wav, clean_wav, events, speaker_id, split })
        })
        .collect::<Result<_, _>>()?;

    let manifest = SampleManifest::new(entries, out_dir);
    manifest
        .save(out_dir.join("manifest.json"))
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn quick_cfg() -> DatasetConfig {
        DatasetConfig {
            audio: AudioSceneConfig { duration_s: 1.0, ..Default::default() },
            ..Default::default()
        }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    }

    #[test]
    fn identical_bytes_across_runs() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset_with(10, d1.path(), 1, &quick_cfg()).unwrap();
        generate_dataset_with(10, d2.path(), 1, &quick_cfg()).unwrap();
        let (a, b) = (dir_bytes(d1.path()), dir_bytes(d2.path()));
        assert_eq!(a.len(), 31, "10 samples x 3 files + manifest");
        assert_eq!(a, b);

        let d3 = tempfile::tempdir().unwrap();
        generate_dataset_with(10, d3.path(), 2, &quick_cfg()).unwrap();
        assert_ne!(a, dir_bytes(d3.path()));
    }

    #[test]
    fn splits_follow_the_five_one_one_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset_with(14, dir.path(), 3, &quick_cfg()).unwrap();
        assert_eq!(m.split(Split::Train).len(), 10);
        assert_eq!(m.split(Split::Val).len(), 2);
        assert_eq!(m.split(Split::Test).len(), 2);
        for (i, e) in m.entries.iter().enumerate() {
            assert_eq!(e.split, split_of(i));
        }
    }

    #[test]
    fn speakers_are_split_disjoint_and_manifest_validates() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset_with(21, dir.path(), 4, &quick_cfg()).unwrap();
        m.validate().unwrap();
        let speakers = |s: Split| -> BTreeSet<String> {
            m.split(s).iter().map(|e| e.speaker_id.clone()).collect()
        };
        let (tr, va, te) = (speakers(Split::Train), speakers(Split::Val), speakers(Split::Test));
        assert!(tr.iter().all(|s| s.starts_with("tr")));
        assert!(va.iter().all(|s| s.starts_with("va")));
        assert!(te.iter().all(|s| s.starts_with("te")));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    }

    #[test]
    fn manifest_file_reloads_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset_with(3, dir.path(), 5, &quick_cfg()).unwrap();
        let loaded = SampleManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.entries.len(), 3);
        for (a, b) in m.entries.iter().zip(&loaded.entries) {
            assert_eq!(a.mix_wav, b.mix_wav);
            assert_eq!(a.speaker_id, b.speaker_id);
            assert_eq!(a.split, b.split);
        }
        loaded.validate().unwrap();
    }

    #[test]
    fn target_register_alternates_and_slots_stay_disjoint() {
        let cfg = quick_cfg();
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset_with(40, dir.path(), 6, &cfg).unwrap();
        let (mut low_targets, mut high_targets, mut repeats) = (0, 0, 0);
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (i, e) in m.entries.iter().enumerate() {
            let pool = match e.split {
                Split::Train => cfg.train_speakers,
                Split::Val => cfg.val_speakers,
                Split::Test => cfg.test_speakers,
            }
            .max(2);
            let speaker = e.speaker_id[2..].parse::<usize>().unwrap();
            let slot = speaker_slot(&cfg.audio, pool, speaker);

            // Re-derive this sample's audio to check the drawn f0s.
            let sample_seed = mix_seed(6, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            assert_eq!(rng.random_range(0..pool), speaker);
            let others = if speaker % 2 == 0 { pool / 2 } else { pool.div_ceil(2) };
            let interferer = 2 * rng.random_range(0..others) + (1 - speaker % 2);
            let islot = speaker_slot(&cfg.audio, pool, interferer);
            assert!(slot.1 <= islot.0 || islot.1 <= slot.0, "slots overlap: {slot:?} {islot:?}");

            let pair = synth_audio_pair(&AudioSceneConfig {
                f0_target: slot,
                f0_interf: islot,
                seed: mix_seed(sample_seed, 1),
                ..cfg.audio.clone()
            });
            assert!(pair.f0_target >= slot.0 && pair.f0_target <= slot.1);
            assert!(pair.f0_interf >= islot.0 && pair.f0_interf <= islot.1);

            match speaker % 2 {
                0 => low_targets += 1,
                _ => high_targets += 1,
            }
            if !seen.insert(&e.speaker_id) {
                repeats += 1;
            }
        }
        assert!(low_targets > 0 && high_targets > 0, "both registers must supply targets");
        assert!(repeats > 0, "40 draws from small pools must repeat a speaker");
    }
}
