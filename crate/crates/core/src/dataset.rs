//! Labelled scene simulation, sliding-window sequences, the time-based
//! train/test split and the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.json`, `frames.bin` (one real tensor
//! record per frame: the pooled range-Doppler magnitude map), `frames.csv`
//! (per-frame scene, time and optimal beam), `states.csv` (detected object
//! states per frame) and `labels.csv` (one row per kept sequence).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comm::{build_codebook, channel_vector, optimal_beam, ArrayConfig, BeamCodebook};
use crate::error::{Error, Result};
use crate::io::{read_real, write_real};
use crate::nn::{avgpool2, pooled_dims};
use crate::radar_dsp::{detect_objects, DetectionConfig, ObjectState};
use crate::radar_synth::{frame_seed, synth_frame_at, RadarFrameCube, RadarWaveformConfig};
use crate::scenario::{generate_timeline, ChannelPathModel, ObjectTruth, ScenarioConfig, SceneTimeline};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Gap inserted between consecutive scenes on the global dataset timeline.
pub const SCENE_GAP_S: f64 = 1.0;

fn default_beams() -> usize {
    64
}

fn default_pool() -> usize {
    1
}

/// Everything needed to render and label one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub radar: RadarWaveformConfig,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default = "default_beams")]
    pub n_beams: usize,
    #[serde(default)]
    pub detection: DetectionConfig,
    /// 2×2 pooling stages applied to range-Doppler maps before storage.
    #[serde(default = "default_pool")]
    pub map_pool_levels: usize,
}

impl SimulationConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            radar: RadarWaveformConfig::default(),
            array: ArrayConfig::default(),
            n_beams: default_beams(),
            detection: DetectionConfig::default(),
            map_pool_levels: default_pool(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.radar.validate()?;
        self.array.validate()?;
        if self.n_beams == 0 {
            return Err(Error::config("n_beams must be positive"));
        }
        Ok(())
    }

    pub fn codebook(&self) -> Result<BeamCodebook> {
        build_codebook(&self.array, self.n_beams)
    }

    /// Stored map height and width.
    pub fn map_dims(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.radar.n_samples, self.radar.n_chirps);
        for _ in 0..self.map_pool_levels {
            (h, w) = pooled_dims(h, w);
        }
        (h, w)
    }
}

/// Exhaustive-search beam for the transmitter's channel at timestep `step`.
pub fn optimal_beam_at(tx: &ObjectTruth, step: u64, seed: u64, array: &ArrayConfig, cb: &BeamCodebook) -> Result<usize> {
    let h = channel_vector(&ChannelPathModel::new(seed).channel(tx, step)?, array);
    Ok(optimal_beam(&h, cb)?.0)
}

/// Radar frame of every object plus the transmitter's optimal beam, per
/// timestep. Holds all cubes in memory; use [`simulate_scene`] for long
/// scenes.
pub fn label_frames(
    timeline: &SceneTimeline,
    radar: &RadarWaveformConfig,
    array: &ArrayConfig,
    cb: &BeamCodebook,
    seed: u64,
) -> Result<Vec<(RadarFrameCube, usize)>> {
    (0..timeline.len())
        .map(|t| {
            let cube = synth_frame_at(
                &timeline.objects_at(t),
                radar,
                frame_seed(seed, t as u64),
                timeline.timestamps_s[t],
            )?;
            let beam = optimal_beam_at(&timeline.transmitter[t], t as u64, seed, array, cb)?;
            Ok((cube, beam))
        })
        .collect()
}

/// What a scene leaves behind once its raw cube is discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: f64,
    pub beam: usize,
    /// Pooled range-Doppler magnitudes, row-major (range × Doppler).
    pub map: Vec<f32>,
    pub states: Vec<ObjectState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub config: SimulationConfig,
    pub timeline: SceneTimeline,
    pub frames: Vec<FrameRecord>,
}

/// Renders, labels and processes a scene one frame at a time. Each raw cube
/// is passed to `on_cube` and then dropped.
pub fn simulate_scene<F>(cfg: &SimulationConfig, mut on_cube: F) -> Result<SceneRecord>
where
    F: FnMut(&RadarFrameCube) -> Result<()>,
{
    cfg.validate()?;
    let cb = cfg.codebook()?;
    let timeline = generate_timeline(&cfg.scenario)?;
    let seed = cfg.scenario.seed;
    let mut frames = Vec::with_capacity(timeline.len());
    for t in 0..timeline.len() {
        let cube = synth_frame_at(
            &timeline.objects_at(t),
            &cfg.radar,
            frame_seed(seed, t as u64),
            timeline.timestamps_s[t],
        )?;
        on_cube(&cube)?;
        let det = detect_objects(&cube, &cfg.detection)?;
        let (mut h, mut w) = (det.map.n_range, det.map.n_doppler);
        let mut map = det.map.values;
        for _ in 0..cfg.map_pool_levels {
            map = avgpool2(&map, 1, h, w);
            (h, w) = pooled_dims(h, w);
        }
        frames.push(FrameRecord {
            t: timeline.timestamps_s[t],
            beam: optimal_beam_at(&timeline.transmitter[t], t as u64, seed, &cfg.array, &cb)?,
            map: map.into_iter().map(|v| v as f32).collect(),
            states: det.states,
        });
    }
    Ok(SceneRecord {
        config: cfg.clone(),
        timeline,
        frames,
    })
}

/// File name of the optional raw cube stream in a scene directory.
pub const SCENE_CUBES_FILE: &str = "cubes.bin";

/// Describes a scene directory: `scene.json`, `maps.bin` (pooled maps),
/// `frames.csv` (time and beam), `states.csv` (detections),
/// `timeline.csv` (ground truth) and optionally `cubes.bin` (raw `RBTK`
/// cubes, written by the caller).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format_version: u32,
    pub config: SimulationConfig,
    pub n_frames: usize,
    pub map_height: usize,
    pub map_width: usize,
    /// sha256 of every data file, by file name.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFrameRow {
    frame: usize,
    t: f64,
    beam: usize,
}

impl SceneRecord {
    /// Writes the scene directory. `extra_files` (name to sha256) lists
    /// files the caller has already written there, such as the cube stream.
    pub fn write(&self, dir: &Path, extra_files: BTreeMap<String, String>) -> Result<SceneManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (map_height, map_width) = self.config.map_dims();
        let mut files = extra_files;

        let mut bin = Vec::new();
        for f in &self.frames {
            write_real(&mut bin, &[map_height, map_width], &f.map).map_err(|e| Error::io(dir.join("maps.bin"), e))?;
        }
        files.insert("maps.bin".to_string(), write_file(&dir.join("maps.bin"), &bin)?);

        let rows: Vec<SceneFrameRow> = self
            .frames
            .iter()
            .enumerate()
            .map(|(frame, f)| SceneFrameRow { frame, t: f.t, beam: f.beam })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        files.insert("frames.csv".to_string(), write_file(&dir.join("frames.csv"), &buf)?);

        let rows: Vec<StateRow> = self
            .frames
            .iter()
            .enumerate()
            .flat_map(|(f, fr)| fr.states.iter().enumerate().map(move |(k, s)| StateRow::new(f, k, s)))
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        files.insert("states.csv".to_string(), write_file(&dir.join("states.csv"), &buf)?);

        let mut buf = Vec::new();
        self.timeline
            .write_csv(&mut buf)
            .map_err(|e| Error::io(dir.join("timeline.csv"), e))?;
        files.insert("timeline.csv".to_string(), write_file(&dir.join("timeline.csv"), &buf)?);

        let manifest = SceneManifest {
            format_version: DATASET_FORMAT_VERSION,
            config: self.config.clone(),
            n_frames: self.frames.len(),
            map_height,
            map_width,
            files,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_file(&dir.join("scene.json"), &json)?;
        Ok(manifest)
    }

    /// Reads a scene directory. The timeline is regenerated from the stored
    /// configuration; the cube stream is not loaded.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("scene.json");
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SceneManifest = serde_json::from_reader(BufReader::new(f))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported scene format version {}",
                path.display(),
                manifest.format_version
            )));
        }
        manifest.config.validate()?;
        let load = |name: &str| load_checked(dir, name, &manifest.files);

        let bin = load("maps.bin")?;
        let mut r = &bin[..];
        let mut maps = Vec::with_capacity(manifest.n_frames);
        while let Some((shape, data)) = read_real::<_, f32>(&mut r)? {
            if shape != [manifest.map_height, manifest.map_width] {
                return Err(Error::Format(format!("scene map shape {shape:?} differs from scene.json")));
            }
            maps.push(data);
        }
        let rows: Vec<SceneFrameRow> = read_csv(&load("frames.csv")?, "frames.csv")?;
        if rows.len() != maps.len() || maps.len() != manifest.n_frames || rows.iter().enumerate().any(|(i, r)| r.frame != i) {
            return Err(Error::Format("frames.csv does not match maps.bin".into()));
        }
        let mut states = vec![Vec::new(); rows.len()];
        for row in read_csv::<StateRow>(&load("states.csv")?, "states.csv")? {
            push_state(&mut states, row)?;
        }
        let timeline = generate_timeline(&manifest.config.scenario)?;
        if timeline.len() != rows.len() {
            return Err(Error::Format("scene configuration does not reproduce the stored frame count".into()));
        }
        let frames = rows
            .into_iter()
            .zip(maps)
            .zip(states)
            .map(|((r, map), states)| FrameRecord {
                t: r.t,
                beam: r.beam,
                map,
                states,
            })
            .collect();
        Ok(Self {
            config: manifest.config,
            timeline,
            frames,
        })
    }
}

/// Per-frame metadata on the global dataset timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame: usize,
    pub scene: usize,
    /// Global time, s.
    pub t: f64,
    pub beam: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub length: usize,
    pub stride: usize,
    /// Drop windows whose labels are all the same beam.
    pub keep_changing_only: bool,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            length: 10,
            stride: 1,
            keep_changing_only: false,
        }
    }
}

/// A window of consecutive frames of one scene. The label is the optimal
/// beam of the last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub id: usize,
    pub scene: usize,
    /// Global index of the first frame.
    pub start: usize,
    /// Optimal beam of every frame in the window.
    pub beams: Vec<usize>,
    pub t_start: f64,
    pub t_end: f64,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn label(&self) -> usize {
        *self.beams.last().expect("non-empty window")
    }

    fn check_obs(&self, t_obs: usize) -> Result<()> {
        if t_obs == 0 || t_obs > self.len() {
            return Err(Error::config(format!(
                "observation interval {t_obs} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Global frame indices of the last `t_obs` frames.
    pub fn frames(&self, t_obs: usize) -> Result<std::ops::Range<usize>> {
        self.check_obs(t_obs)?;
        let end = self.start + self.len();
        Ok(end - t_obs..end)
    }

    /// Optimal beam at the first of the last `t_obs` frames.
    pub fn initial_beam(&self, t_obs: usize) -> Result<usize> {
        self.check_obs(t_obs)?;
        Ok(self.beams[self.len() - t_obs])
    }
}

/// Sliding windows over the consecutive frames of one scene. Sample ids are
/// left at zero.
pub fn make_sequences(frames: &[FrameMeta], cfg: &SequenceConfig) -> Result<Vec<SequenceSample>> {
    if cfg.length == 0 || cfg.stride == 0 {
        return Err(Error::config("sequence length and stride must be positive"));
    }
    if frames.len() < cfg.length {
        return Err(Error::Degenerate(format!(
            "{} frames cannot hold a window of {}",
            frames.len(),
            cfg.length
        )));
    }
    for w in frames.windows(2) {
        if w[1].frame != w[0].frame + 1 || w[1].scene != w[0].scene || !(w[1].t > w[0].t) {
            return Err(Error::config("frames for windowing must be consecutive frames of one scene"));
        }
    }
    let mut out = Vec::new();
    for s in (0..=frames.len() - cfg.length).step_by(cfg.stride) {
        let win = &frames[s..s + cfg.length];
        let beams: Vec<usize> = win.iter().map(|f| f.beam).collect();
        if cfg.keep_changing_only && beams.iter().all(|&b| b == beams[0]) {
            continue;
        }
        out.push(SequenceSample {
            id: 0,
            scene: win[0].scene,
            start: win[0].frame,
            beams,
            t_start: win[0].t,
            t_end: win[cfg.length - 1].t,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    /// Train windows end before this time; test windows start at or after it.
    pub boundary_s: f64,
    /// Windows straddling the boundary.
    pub dropped: usize,
}

/// Single time boundary giving a train fraction as close to `ratio` as
/// possible; windows that straddle it are dropped. Ties go to the earliest
/// boundary.
pub fn split_by_time(samples: &[SequenceSample], ratio: f64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!("{} samples cannot be split", samples.len())));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then(a.t_end.total_cmp(&b.t_end))
            .then(a.start.cmp(&b.start))
    });
    let mut ends: Vec<f64> = sorted.iter().map(|s| s.t_end).collect();
    ends.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut best: Option<(f64, f64)> = None;
    for (i, s) in sorted.iter().enumerate() {
        let tau = s.t_start;
        if i > 0 && sorted[i - 1].t_start == tau {
            continue;
        }
        // test = starts at or after tau; train = ends strictly before tau
        let n_test = n - i;
        let n_train = ends.partition_point(|&e| e < tau);
        if n_train == 0 || n_test == 0 {
            continue;
        }
        let err = (n_train as f64 / (n_train + n_test) as f64 - ratio).abs();
        if best.map_or(true, |(e, _)| err < e - 1e-12) {
            best = Some((err, tau));
        }
    }
    let (_, tau) = best.ok_or_else(|| Error::Degenerate("no time boundary leaves both splits non-empty".into()))?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        boundary_s: tau,
        dropped: 0,
    };
    for s in sorted {
        if s.t_end < tau {
            split.train.push(s);
        } else if s.t_start >= tau {
            split.test.push(s);
        } else {
            split.dropped += 1;
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub frames: usize,
    pub sequences: usize,
    pub train: usize,
    pub test: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub radar: RadarWaveformConfig,
    pub array: ArrayConfig,
    pub n_beams: usize,
    pub detection: DetectionConfig,
    pub map_height: usize,
    pub map_width: usize,
    pub scenes: Vec<ScenarioConfig>,
    /// Global start time of every scene.
    pub scene_offsets_s: Vec<f64>,
    pub sequence: SequenceConfig,
    pub train_ratio: f64,
    pub boundary_s: f64,
    pub counts: DatasetCounts,
    /// sha256 of every data file, by file name.
    pub files: BTreeMap<String, String>,
}

/// Frames, detections and the split of a multi-scene dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<FrameMeta>,
    pub maps: Vec<Vec<f32>>,
    pub states: Vec<Vec<ObjectState>>,
    pub split: DatasetSplit,
}

impl Dataset {
    /// Places the scenes back to back on one timeline, windows each scene and
    /// splits by time. Scenes with fewer frames than a window are rejected.
    pub fn from_scenes(scenes: Vec<SceneRecord>, seq: &SequenceConfig, train_ratio: f64) -> Result<Self> {
        let first = scenes
            .first()
            .ok_or_else(|| Error::Degenerate("dataset needs at least one scene".into()))?
            .config
            .clone();
        let (map_height, map_width) = first.map_dims();
        let mut frames = Vec::new();
        let mut maps = Vec::new();
        let mut states = Vec::new();
        let mut samples = Vec::new();
        let mut offsets = Vec::new();
        let mut scene_cfgs = Vec::new();
        let mut offset = 0.0;
        for (si, scene) in scenes.into_iter().enumerate() {
            let c = &scene.config;
            if c.radar != first.radar || c.array != first.array || c.n_beams != first.n_beams || c.map_dims() != (map_height, map_width) {
                return Err(Error::config(format!("scene {si} uses a different radar, array or codebook")));
            }
            let base = frames.len();
            let mut metas = Vec::with_capacity(scene.frames.len());
            for (k, f) in scene.frames.into_iter().enumerate() {
                if f.map.len() != map_height * map_width {
                    return Err(Error::shape(format!("scene {si} frame {k} map has {} values", f.map.len())));
                }
                metas.push(FrameMeta {
                    frame: base + k,
                    scene: si,
                    t: offset + f.t,
                    beam: f.beam,
                });
                maps.push(f.map);
                states.push(f.states);
            }
            samples.extend(make_sequences(&metas, seq)?);
            frames.extend(metas);
            offsets.push(offset);
            scene_cfgs.push(c.scenario.clone());
            offset += c.scenario.duration_s + SCENE_GAP_S;
        }
        // An empty dataset is representable; callers decide whether it is an error.
        let mut split = if samples.is_empty() {
            DatasetSplit {
                train: Vec::new(),
                test: Vec::new(),
                boundary_s: offset,
                dropped: 0,
            }
        } else {
            split_by_time(&samples, train_ratio)?
        };
        for (i, s) in split.train.iter_mut().chain(split.test.iter_mut()).enumerate() {
            s.id = i;
        }
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            radar: first.radar.clone(),
            array: first.array.clone(),
            n_beams: first.n_beams,
            detection: first.detection.clone(),
            map_height,
            map_width,
            scenes: scene_cfgs,
            scene_offsets_s: offsets,
            sequence: seq.clone(),
            train_ratio,
            boundary_s: split.boundary_s,
            counts: DatasetCounts {
                frames: frames.len(),
                sequences: samples.len(),
                train: split.train.len(),
                test: split.test.len(),
                dropped: split.dropped,
            },
            files: BTreeMap::new(),
        };
        Ok(Self {
            manifest,
            frames,
            maps,
            states,
            split,
        })
    }

    pub fn codebook(&self) -> Result<BeamCodebook> {
        build_codebook(&self.manifest.array, self.manifest.n_beams)
    }

    /// Writes the dataset directory and returns the manifest with file hashes
    /// filled in.
    pub fn write(&mut self, dir: &Path) -> Result<&DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = BTreeMap::new();

        let mut bin = Vec::new();
        let shape = [self.manifest.map_height, self.manifest.map_width];
        for m in &self.maps {
            write_real(&mut bin, &shape, m).map_err(|e| Error::io(dir.join("frames.bin"), e))?;
        }
        files.insert("frames.bin".to_string(), write_file(&dir.join("frames.bin"), &bin)?);

        let mut buf = Vec::new();
        write_csv(&mut buf, &self.frames)?;
        files.insert("frames.csv".to_string(), write_file(&dir.join("frames.csv"), &buf)?);

        let rows: Vec<StateRow> = self
            .states
            .iter()
            .enumerate()
            .flat_map(|(f, st)| st.iter().enumerate().map(move |(k, s)| StateRow::new(f, k, s)))
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        files.insert("states.csv".to_string(), write_file(&dir.join("states.csv"), &buf)?);

        let rows: Vec<LabelRow> = self
            .split
            .train
            .iter()
            .map(|s| LabelRow::new(s, "train"))
            .chain(self.split.test.iter().map(|s| LabelRow::new(s, "test")))
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        files.insert("labels.csv".to_string(), write_file(&dir.join("labels.csv"), &buf)?);

        self.manifest.files = files;
        let mut json = serde_json::to_vec_pretty(&self.manifest)?;
        json.push(b'\n');
        write_file(&dir.join("manifest.json"), &json)?;
        Ok(&self.manifest)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(f))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported dataset format version {}",
                path.display(),
                manifest.format_version
            )));
        }
        let load = |name: &str| load_checked(dir, name, &manifest.files);

        let bin = load("frames.bin")?;
        let mut r = &bin[..];
        let mut maps = Vec::with_capacity(manifest.counts.frames);
        while let Some((shape, data)) = read_real::<_, f32>(&mut r)? {
            if shape != [manifest.map_height, manifest.map_width] {
                return Err(Error::Format(format!("frame map shape {shape:?} differs from manifest")));
            }
            maps.push(data);
        }

        let frames: Vec<FrameMeta> = read_csv(&load("frames.csv")?, "frames.csv")?;
        if frames.len() != maps.len() || frames.iter().enumerate().any(|(i, f)| f.frame != i) {
            return Err(Error::Format("frames.csv does not match frames.bin".into()));
        }

        let mut states = vec![Vec::new(); frames.len()];
        for row in read_csv::<StateRow>(&load("states.csv")?, "states.csv")? {
            push_state(&mut states, row)?;
        }

        let mut split = DatasetSplit {
            train: Vec::new(),
            test: Vec::new(),
            boundary_s: manifest.boundary_s,
            dropped: manifest.counts.dropped,
        };
        for row in read_csv::<LabelRow>(&load("labels.csv")?, "labels.csv")? {
            let end = row.start_frame + row.length;
            if row.length == 0 || end > frames.len() {
                return Err(Error::Format(format!("sequence {} exceeds the frame list", row.sequence_id)));
            }
            let win = &frames[row.start_frame..end];
            let s = SequenceSample {
                id: row.sequence_id,
                scene: row.scene,
                start: row.start_frame,
                beams: win.iter().map(|f| f.beam).collect(),
                t_start: win[0].t,
                t_end: win[row.length - 1].t,
            };
            if s.label() != row.beam || s.t_end != row.t {
                return Err(Error::Format(format!("sequence {} disagrees with frames.csv", row.sequence_id)));
            }
            match row.split.as_str() {
                "train" => split.train.push(s),
                "test" => split.test.push(s),
                other => return Err(Error::Format(format!("unknown split {other:?}"))),
            }
        }
        Ok(Self {
            manifest,
            frames,
            maps,
            states,
            split,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRow {
    frame: usize,
    k: usize,
    range_m: f64,
    velocity_mps: f64,
    angle_rad: f64,
    power: f64,
    range_bin: usize,
    doppler_bin: usize,
    angle_bin: usize,
}

impl StateRow {
    fn new(frame: usize, k: usize, s: &ObjectState) -> Self {
        Self {
            frame,
            k,
            range_m: s.range_m,
            velocity_mps: s.velocity_mps,
            angle_rad: s.angle_rad,
            power: s.power,
            range_bin: s.range_bin,
            doppler_bin: s.doppler_bin,
            angle_bin: s.angle_bin,
        }
    }

    fn state(&self) -> ObjectState {
        ObjectState {
            range_m: self.range_m,
            velocity_mps: self.velocity_mps,
            angle_rad: self.angle_rad,
            power: self.power,
            range_bin: self.range_bin,
            doppler_bin: self.doppler_bin,
            angle_bin: self.angle_bin,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    /// End time of the window.
    t: f64,
    beam: usize,
    sequence_id: usize,
    split: String,
    scene: usize,
    start_frame: usize,
    length: usize,
}

impl LabelRow {
    fn new(s: &SequenceSample, split: &str) -> Self {
        Self {
            t: s.t_end,
            beam: s.label(),
            sequence_id: s.id,
            split: split.to_string(),
            scene: s.scene,
            start_frame: s.start,
            length: s.len(),
        }
    }
}

fn write_csv<T: Serialize>(buf: &mut Vec<u8>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8], name: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("{name}: {e}"))))
        .collect()
}

fn push_state(states: &mut [Vec<ObjectState>], row: StateRow) -> Result<()> {
    let slot = states
        .get_mut(row.frame)
        .ok_or_else(|| Error::Format(format!("states.csv refers to frame {}", row.frame)))?;
    if row.k != slot.len() {
        return Err(Error::Format("states.csv rows out of order".into()));
    }
    slot.push(row.state());
    Ok(())
}

/// Reads `dir/name`, verifying its sha256 when `files` lists one.
fn load_checked(dir: &Path, name: &str, files: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let p = dir.join(name);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if let Some(want) = files.get(name) {
        if &hex::encode(Sha256::digest(&bytes)) != want {
            return Err(Error::Format(format!("{}: checksum mismatch", p.display())));
        }
    }
    Ok(bytes)
}

/// Writes `bytes` and returns their sha256.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<String> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
