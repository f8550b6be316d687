//! Glue between the dataset and the predictors: randomised benchmark
//! scenes, transmitter tracks for the identification model, mixed-length
//! training and ranked predictions for evaluation.
//!
//! Both learned models are trained once over all observation lengths: every
//! (epoch, sample) pair draws its own `T_o` from `1..=window`.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comm::BeamCodebook;
use crate::dataset::{simulate_scene, Dataset, SequenceConfig, SequenceSample, SimulationConfig};
use crate::error::{Error, Result};
use crate::models::{
    beam_hold_predict, normalize_state, predict_topk, prepare_map, train, E2eConfig, E2eInput, E2eModel, EpochLoss,
    FrameFeatures, FrameRef, TxIdConfig, TxIdModel,
};
use crate::nn::{Classifier, TrainConfig};
use crate::radar_dsp::ObjectState;
use crate::radar_synth::RadarWaveformConfig;
use crate::rng::{derive_seed, derive_seed2, stream, stream_rng};
use crate::scenario::{build_scene, Preset, ScenarioConfig, SpeedParams};
use crate::tracker::{identify_transmitter, track_step, TrackState, TrackerConfig};

/// Ranked list length produced by every predictor.
pub const RANKED: usize = 5;

/// Randomised drift-rich scenes drawn from seed families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seeds: Vec<u64>,
    pub scenes_per_seed: usize,
    pub duration_s: f64,
    pub presets: Vec<Preset>,
    pub max_clutter: usize,
    pub noise_var: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            scenes_per_seed: 15,
            duration_s: 10.0,
            presets: vec![Preset::Passing, Preset::LaneChange, Preset::Turn],
            max_clutter: 2,
            noise_var: 1e-3,
        }
    }
}

const MAX_SCENE_DRAWS: usize = 200;

fn draw_params(preset: Preset, d: f64, rng: &mut impl Rng) -> SpeedParams {
    let mut p = SpeedParams::default();
    match preset {
        Preset::Following => {
            p.gap_m = Some(rng.gen_range(8.0..35.0));
            p.lateral_m = Some(rng.gen_range(-4.0..4.0));
        }
        Preset::Passing => {
            p.gap_m = Some(rng.gen_range(12.0..35.0));
            p.overtake_speed_mps = Some(rng.gen_range(0.0..2.0));
            p.lateral_speed_mps = Some(rng.gen_range(0.8..2.5));
            p.from_left = Some(rng.gen_bool(0.5));
            p.cross_time_s = Some(rng.gen_range(0.3 * d..0.7 * d));
        }
        Preset::LaneChange => {
            let y0 = [-3.5, 0.0, 3.5][rng.gen_range(0..3)];
            let dy = if rng.gen_bool(0.5) { 3.5 } else { -3.5 };
            let dur = rng.gen_range(2.0..5.0);
            p.gap_m = Some(rng.gen_range(8.0..30.0));
            p.overtake_speed_mps = Some(rng.gen_range(-1.5..1.5));
            p.lateral_m = Some(y0);
            p.lateral_end_m = Some(y0 + dy);
            p.maneuver_duration_s = Some(dur);
            p.maneuver_start_s = Some(rng.gen_range(0.0..(d - dur).max(0.1)));
        }
        Preset::Turn => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            p.gap_m = Some(rng.gen_range(10.0..35.0));
            p.range_rate_mps = Some(rng.gen_range(-1.5..1.5));
            p.start_azimuth_rad = Some(rng.gen_range(-0.6..0.6));
            p.turn_rate_rad_s = Some(sign * rng.gen_range(0.03..0.15));
        }
    }
    p
}

/// Scene configurations for every seed family, in order. Draws that leave
/// the radar's valid region are redrawn.
pub fn benchmark_scenes(cfg: &BenchmarkConfig) -> Result<Vec<SimulationConfig>> {
    if cfg.presets.is_empty() || cfg.seeds.is_empty() || cfg.scenes_per_seed == 0 {
        return Err(Error::config("benchmark needs presets, seeds and scenes"));
    }
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for i in 0..cfg.scenes_per_seed {
            let mut rng = stream_rng(seed, stream::SCENES, i as u64);
            let mut drawn = None;
            for _ in 0..MAX_SCENE_DRAWS {
                let preset = cfg.presets[rng.gen_range(0..cfg.presets.len())];
                let mut sc = ScenarioConfig::new(preset, cfg.duration_s, derive_seed2(seed, stream::SCENES, i as u64));
                sc.speed_params = draw_params(preset, cfg.duration_s, &mut rng);
                sc.n_clutter = rng.gen_range(0..=cfg.max_clutter);
                if build_scene(&sc).is_ok() {
                    drawn = Some(sc);
                    break;
                }
            }
            let sc = drawn.ok_or_else(|| Error::config(format!("no valid scene drawn for seed {seed} scene {i}")))?;
            let mut sim = SimulationConfig::new(sc);
            sim.radar = RadarWaveformConfig {
                noise_var: cfg.noise_var,
                ..Default::default()
            };
            out.push(sim);
        }
    }
    Ok(out)
}

/// Sizes the global worker pool used for per-scene simulation. Must run
/// before any parallel work; `0` keeps the default (one thread per core).
pub fn init_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Simulates every scene (discarding raw cubes) and builds the split
/// dataset.
pub fn build_dataset(scenes: &[SimulationConfig], seq: &SequenceConfig, train_ratio: f64) -> Result<Dataset> {
    let records = scenes
        .par_iter()
        .map(|c| simulate_scene(c, |_| Ok(())))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_scenes(records, seq, train_ratio)
}

/// Transmitter state per frame. Identification happens on the first frame
/// with any detection; earlier frames yield `None`. When the tracker gives
/// up, the object nearest in angle to the last state is re-acquired, or the
/// last state is held on an empty frame.
pub fn track_transmitter(
    frames: &[&[ObjectState]],
    initial_beam: usize,
    cb: &BeamCodebook,
    cfg: &TrackerConfig,
) -> Result<Vec<Option<ObjectState>>> {
    let comm = cb.angle(initial_beam)?;
    let mut out = Vec::with_capacity(frames.len());
    let mut track: Option<TrackState> = None;
    for frame in frames {
        track = match track {
            None => match identify_transmitter(frame, comm) {
                Ok(k) => Some(TrackState::new(frame[k], frames.len())),
                Err(Error::NoObject) => None,
                Err(e) => return Err(e),
            },
            Some(prev) => match track_step(&prev, frame, cfg) {
                Ok(t) => Some(t),
                Err(Error::TrackLost { .. }) => match identify_transmitter(frame, prev.current.angle_rad) {
                    Ok(k) => Some(TrackState::new(frame[k], frames.len())),
                    Err(_) => Some(prev),
                },
                Err(e) => return Err(e),
            },
        };
        out.push(track.as_ref().map(|t| t.current));
    }
    Ok(out)
}

/// Normalised, flattened identification-model input for the last `t_obs`
/// frames of `s`. Frames before identification contribute zeros.
pub fn txid_input(
    ds: &Dataset,
    s: &SequenceSample,
    t_obs: usize,
    cb: &BeamCodebook,
    tracker: &TrackerConfig,
) -> Result<Vec<f32>> {
    let frames: Vec<&[ObjectState]> = s.frames(t_obs)?.map(|f| &ds.states[f][..]).collect();
    let track = track_transmitter(&frames, s.initial_beam(t_obs)?, cb, tracker)?;
    Ok(track
        .iter()
        .flat_map(|st| st.map_or([0.0; 3], |st| normalize_state(&st, &ds.manifest.radar)))
        .map(|v| v as f32)
        .collect())
}

/// Observation length used for sample `index` in `epoch`.
pub fn training_t_obs(seed: u64, epoch: usize, index: usize, max_t_obs: usize) -> usize {
    1 + (derive_seed2(derive_seed(seed, stream::T_OBS), epoch as u64, index as u64) % max_t_obs as u64) as usize
}

fn window_len(samples: &[SequenceSample]) -> Result<usize> {
    let n = samples
        .first()
        .ok_or_else(|| Error::Degenerate("no samples".into()))?
        .len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::shape("samples have different window lengths"));
    }
    Ok(n)
}

pub fn txid_config_for(ds: &Dataset) -> TxIdConfig {
    TxIdConfig {
        n_beams: ds.manifest.n_beams,
        ..Default::default()
    }
}

pub fn train_txid(
    ds: &Dataset,
    model_cfg: TxIdConfig,
    tc: &TrainConfig,
    tracker: &TrackerConfig,
) -> Result<(TxIdModel<f32>, Vec<EpochLoss>)> {
    let cb = ds.codebook()?;
    let samples = &ds.split.train;
    let n_obs = window_len(samples)?;
    let inputs: Vec<Vec<Vec<f32>>> = samples
        .iter()
        .map(|s| (1..=n_obs).map(|t| txid_input(ds, s, t, &cb, tracker)).collect())
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label() - 1).collect();
    let mut model = TxIdModel::<f32>::new(model_cfg, tc.seed);
    let history = train(&mut model, samples.len(), tc, 1, |m, epoch, batch, g| {
        let xs: Vec<&[f32]> = batch
            .iter()
            .map(|&i| &inputs[i][training_t_obs(tc.seed, epoch, i, n_obs) - 1][..])
            .collect();
        let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        m.loss_grad_batch(&xs, &ys, g)
    })?;
    Ok((model, history))
}

fn ranked(logits: &[Vec<f32>]) -> Result<Vec<Vec<usize>>> {
    logits.iter().map(|z| predict_topk(z, RANKED)).collect()
}

pub fn predict_txid(
    model: &TxIdModel<f32>,
    ds: &Dataset,
    samples: &[SequenceSample],
    t_obs: usize,
    tracker: &TrackerConfig,
) -> Result<Vec<Vec<usize>>> {
    let cb = ds.codebook()?;
    let inputs: Vec<Vec<f32>> = samples
        .iter()
        .map(|s| txid_input(ds, s, t_obs, &cb, tracker))
        .collect::<Result<_>>()?;
    let xs: Vec<&[f32]> = inputs.iter().map(|v| &v[..]).collect();
    ranked(&model.logits_batch(&xs)?)
}

pub fn predict_hold(samples: &[SequenceSample], t_obs: usize, n_beams: usize) -> Result<Vec<Vec<usize>>> {
    samples
        .iter()
        .map(|s| beam_hold_predict(s.initial_beam(t_obs)?, RANKED, n_beams))
        .collect()
}

/// Log-compressed, standardised maps for every frame.
pub fn prepared_maps(ds: &Dataset) -> Vec<Vec<f32>> {
    let (h, w) = (ds.manifest.map_height, ds.manifest.map_width);
    ds.maps.iter().map(|m| prepare_map::<f32, f32>(m, h, w, 0).0).collect()
}

pub fn e2e_config_for(ds: &Dataset) -> E2eConfig {
    E2eConfig {
        map_height: ds.manifest.map_height,
        map_width: ds.manifest.map_width,
        n_beams: ds.manifest.n_beams,
        ..Default::default()
    }
}

/// Training order shuffles blocks of `block` consecutive samples so
/// overlapping windows share convolution work inside a batch.
pub fn train_e2e(
    ds: &Dataset,
    maps: &[Vec<f32>],
    model_cfg: E2eConfig,
    tc: &TrainConfig,
    block: usize,
) -> Result<(E2eModel<f32>, Vec<EpochLoss>)> {
    let samples = &ds.split.train;
    let n_obs = window_len(samples)?;
    let mut model = E2eModel::<f32>::new(model_cfg, tc.seed)?;
    let history = train(&mut model, samples.len(), tc, block, |m, epoch, batch, g| {
        let xs: Vec<E2eInput<f32>> = batch
            .iter()
            .map(|&i| {
                let s = &samples[i];
                let t_obs = training_t_obs(tc.seed, epoch, i, n_obs);
                Ok(E2eInput {
                    frames: s
                        .frames(t_obs)?
                        .map(|f| FrameRef {
                            id: f as u64,
                            map: &maps[f][..],
                        })
                        .collect(),
                    initial_beam: s.initial_beam(t_obs)? - 1,
                })
            })
            .collect::<Result<_>>()?;
        let ys: Vec<usize> = batch.iter().map(|&i| samples[i].label() - 1).collect();
        m.loss_grad_batch(&xs, &ys, g)
    })?;
    Ok((model, history))
}

/// Conv features of every frame any of `samples` touches.
pub fn e2e_features(
    model: &E2eModel<f32>,
    maps: &[Vec<f32>],
    samples: &[SequenceSample],
) -> Result<HashMap<usize, FrameFeatures<f32>>> {
    let mut cache = HashMap::new();
    for s in samples {
        for f in s.frames(s.len())? {
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(f) {
                e.insert(model.frame_features(&maps[f])?);
            }
        }
    }
    Ok(cache)
}

pub fn predict_e2e(
    model: &E2eModel<f32>,
    features: &HashMap<usize, FrameFeatures<f32>>,
    samples: &[SequenceSample],
    t_obs: usize,
) -> Result<Vec<Vec<usize>>> {
    let seqs: Vec<(Vec<&FrameFeatures<f32>>, usize)> = samples
        .iter()
        .map(|s| {
            let frames = s
                .frames(t_obs)?
                .map(|f| features.get(&f).ok_or_else(|| Error::config(format!("frame {f} has no cached features"))))
                .collect::<Result<_>>()?;
            Ok((frames, s.initial_beam(t_obs)? - 1))
        })
        .collect::<Result<_>>()?;
    ranked(&model.logits_from_features(&seqs)?)
}
