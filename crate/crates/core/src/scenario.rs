//! Vehicle kinematics relative to the receiver, sampled at the capture rate.
//!
//! Coordinates are ground-plane, receiver-centered: `x` along the array
//! boresight, `y` to the left. Azimuth is `atan2(y, x)`. Positive radial
//! velocity means the object is receding.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{ChannelPath, ChannelState};
use crate::error::{Error, Result};
use crate::radar_synth::RadarWaveformConfig;
use crate::rng;

pub const DEFAULT_RCS_GAIN: f64 = 1.0e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Following,
    Passing,
    LaneChange,
    Turn,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Following,
        Preset::Passing,
        Preset::LaneChange,
        Preset::Turn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Following => "following",
            Preset::Passing => "passing",
            Preset::LaneChange => "lane_change",
            Preset::Turn => "turn",
        }
    }
}

/// Preset-specific kinematic parameters. Unset fields take the preset's
/// default; fields irrelevant to the chosen preset are ignored.
///
/// * following: `gap_m`, `lateral_m`
/// * passing: `gap_m` (longitudinal gap when crossing boresight),
///   `overtake_speed_mps`, `lateral_speed_mps`, `from_left`, `cross_time_s`
/// * lane_change: `gap_m`, `overtake_speed_mps`, `lateral_m`,
///   `lateral_end_m`, `maneuver_start_s`, `maneuver_duration_s`
/// * turn: `gap_m` (initial range), `range_rate_mps`, `start_azimuth_rad`,
///   `turn_rate_rad_s`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedParams {
    pub gap_m: Option<f64>,
    pub lateral_m: Option<f64>,
    pub lateral_end_m: Option<f64>,
    pub overtake_speed_mps: Option<f64>,
    pub lateral_speed_mps: Option<f64>,
    pub from_left: Option<bool>,
    pub cross_time_s: Option<f64>,
    pub maneuver_start_s: Option<f64>,
    pub maneuver_duration_s: Option<f64>,
    pub range_rate_mps: Option<f64>,
    pub start_azimuth_rad: Option<f64>,
    pub turn_rate_rad_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub duration_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub n_clutter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub speed_params: SpeedParams,
    #[serde(default = "default_rcs")]
    pub tx_rcs_gain: f64,
}

fn default_sample_rate() -> f64 {
    10.0
}

fn default_rcs() -> f64 {
    DEFAULT_RCS_GAIN
}

impl ScenarioConfig {
    pub fn new(preset: Preset, duration_s: f64, seed: u64) -> Self {
        Self {
            preset,
            duration_s,
            sample_rate_hz: default_sample_rate(),
            n_clutter: 0,
            seed,
            speed_params: SpeedParams::default(),
            tx_rcs_gain: DEFAULT_RCS_GAIN,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::config(format!("duration_s must be > 0, got {}", self.duration_s)));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::config(format!(
                "sample_rate_hz must be > 0, got {}",
                self.sample_rate_hz
            )));
        }
        if self.n_samples() == 0 {
            return Err(Error::config("scenario yields no samples"));
        }
        if !(self.tx_rcs_gain > 0.0) {
            return Err(Error::config("tx_rcs_gain must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub range_m: f64,
    pub radial_velocity_mps: f64,
    pub azimuth_rad: f64,
    pub rcs_gain: f64,
}

/// Analytic relative motion of one point scatterer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    /// `p(t) = p0 + v·t`.
    Linear { p0: [f64; 2], v: [f64; 2] },
    /// Constant longitudinal speed with a minimum-jerk lateral transition
    /// from `y0` to `y1` during `[t0, t0 + dur]` (zero lateral velocity and
    /// acceleration at both ends).
    LaneChange {
        x0: f64,
        vx: f64,
        y0: f64,
        y1: f64,
        t0: f64,
        dur: f64,
    },
    /// Range and azimuth both linear in time.
    Polar {
        r0: f64,
        range_rate: f64,
        phi0: f64,
        omega: f64,
    },
}

impl Trajectory {
    pub fn range_at(&self, t: f64) -> f64 {
        match *self {
            Trajectory::Polar { r0, range_rate, .. } => r0 + range_rate * t,
            _ => {
                let [x, y] = self.position(t);
                x.hypot(y)
            }
        }
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        match *self {
            Trajectory::Linear { p0, v } => [p0[0] + v[0] * t, p0[1] + v[1] * t],
            Trajectory::LaneChange { x0, vx, y0, y1, t0, dur } => {
                let u = ((t - t0) / dur).clamp(0.0, 1.0);
                let shape = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
                [x0 + vx * t, y0 + (y1 - y0) * shape]
            }
            Trajectory::Polar { r0, range_rate, phi0, omega } => {
                let r = r0 + range_rate * t;
                let phi = phi0 + omega * t;
                [r * phi.cos(), r * phi.sin()]
            }
        }
    }

    pub fn velocity(&self, t: f64) -> [f64; 2] {
        match *self {
            Trajectory::Linear { v, .. } => v,
            Trajectory::LaneChange { vx, y0, y1, t0, dur, .. } => {
                let vy = if t > t0 && t < t0 + dur {
                    let u = (t - t0) / dur;
                    (y1 - y0) / dur * 30.0 * u * u * (1.0 - u) * (1.0 - u)
                } else {
                    0.0
                };
                [vx, vy]
            }
            Trajectory::Polar { r0, range_rate, phi0, omega } => {
                let r = r0 + range_rate * t;
                let phi = phi0 + omega * t;
                let (s, c) = phi.sin_cos();
                [range_rate * c - r * omega * s, range_rate * s + r * omega * c]
            }
        }
    }

    pub fn truth(&self, t: f64, rcs_gain: f64) -> ObjectTruth {
        match *self {
            Trajectory::Polar { r0, range_rate, phi0, omega } => ObjectTruth {
                range_m: r0 + range_rate * t,
                radial_velocity_mps: range_rate,
                azimuth_rad: phi0 + omega * t,
                rcs_gain,
            },
            _ => {
                let [x, y] = self.position(t);
                let [vx, vy] = self.velocity(t);
                let r = x.hypot(y);
                ObjectTruth {
                    range_m: r,
                    radial_velocity_mps: if r > 0.0 { (x * vx + y * vy) / r } else { 0.0 },
                    azimuth_rad: y.atan2(x),
                    rcs_gain,
                }
            }
        }
    }
}

/// Region every rendered object must stay inside.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub min_range_m: f64,
    pub max_range_m: f64,
    pub max_speed_mps: f64,
    pub max_azimuth_rad: f64,
}

impl Bounds {
    /// Margins inside the default radar's unambiguous range and velocity.
    pub fn for_radar(radar: &RadarWaveformConfig, max_azimuth_rad: f64) -> Self {
        let d = radar.derived();
        Self {
            min_range_m: 1.0,
            max_range_m: 0.95 * d.max_range_m,
            max_speed_mps: 0.95 * d.max_velocity_mps,
            max_azimuth_rad,
        }
    }

    pub fn contains(&self, o: &ObjectTruth) -> bool {
        o.range_m >= self.min_range_m
            && o.range_m < self.max_range_m
            && o.radial_velocity_mps.abs() < self.max_speed_mps
            && o.azimuth_rad.abs() <= self.max_azimuth_rad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterObject {
    pub trajectory: Trajectory,
    pub rcs_gain: f64,
}

/// Fully resolved scene: analytic trajectories plus sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: ScenarioConfig,
    pub transmitter: Trajectory,
    pub clutter: Vec<ClutterObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTimeline {
    pub timestamps_s: Vec<f64>,
    pub transmitter: Vec<ObjectTruth>,
    /// `clutter[t]` holds every clutter object at timestep `t`, in a fixed
    /// object order.
    pub clutter: Vec<Vec<ObjectTruth>>,
}

impl SceneTimeline {
    pub fn len(&self) -> usize {
        self.timestamps_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_s.is_empty()
    }

    /// All objects visible at step `t`, transmitter first.
    pub fn objects_at(&self, t: usize) -> Vec<ObjectTruth> {
        let mut v = Vec::with_capacity(1 + self.clutter[t].len());
        v.push(self.transmitter[t]);
        v.extend_from_slice(&self.clutter[t]);
        v
    }

    /// CSV with one row per object per timestep.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,object,range_m,radial_velocity_mps,azimuth_rad,rcs_gain")?;
        for (i, t) in self.timestamps_s.iter().enumerate() {
            let tx = self.transmitter[i];
            writeln!(
                w,
                "{t:.6},tx,{:.9},{:.9},{:.9},{}",
                tx.range_m, tx.radial_velocity_mps, tx.azimuth_rad, tx.rcs_gain
            )?;
            for (k, c) in self.clutter[i].iter().enumerate() {
                writeln!(
                    w,
                    "{t:.6},clutter{k},{:.9},{:.9},{:.9},{}",
                    c.range_m, c.radial_velocity_mps, c.azimuth_rad, c.rcs_gain
                )?;
            }
        }
        Ok(())
    }
}

fn get(v: Option<f64>, default: f64) -> f64 {
    v.unwrap_or(default)
}

fn non_negative(name: &str, v: f64) -> Result<f64> {
    if v < 0.0 || !v.is_finite() {
        Err(Error::config(format!("{name} must be a non-negative speed, got {v}")))
    } else {
        Ok(v)
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        Err(Error::config(format!("{name} must be > 0, got {v}")))
    } else {
        Ok(v)
    }
}

fn transmitter_trajectory(cfg: &ScenarioConfig) -> Result<Trajectory> {
    let p = &cfg.speed_params;
    let d = cfg.duration_s;
    Ok(match cfg.preset {
        Preset::Following => Trajectory::Linear {
            p0: [positive("gap_m", get(p.gap_m, 10.0))?, get(p.lateral_m, 0.0)],
            v: [0.0, 0.0],
        },
        Preset::Passing => {
            // Overtaking vehicle ahead of the receiver drifting across the
            // lanes: crosses boresight at `cross_time_s` at distance `gap_m`.
            let gap = positive("gap_m", get(p.gap_m, 20.0))?;
            let u = non_negative("overtake_speed_mps", get(p.overtake_speed_mps, 0.5))?;
            let w = positive("lateral_speed_mps", get(p.lateral_speed_mps, 1.5))?;
            let tc = get(p.cross_time_s, 0.5 * d);
            let sign = if p.from_left.unwrap_or(true) { 1.0 } else { -1.0 };
            Trajectory::Linear {
                p0: [gap - u * tc, sign * w * tc],
                v: [u, -sign * w],
            }
        }
        Preset::LaneChange => {
            let dur = positive("maneuver_duration_s", get(p.maneuver_duration_s, 4.0))?;
            let y0 = get(p.lateral_m, 0.0);
            let y1 = get(p.lateral_end_m, 3.5);
            if y0 == y1 {
                return Err(Error::config("lane change needs distinct start and end offsets"));
            }
            Trajectory::LaneChange {
                x0: positive("gap_m", get(p.gap_m, 15.0))?,
                vx: get(p.overtake_speed_mps, 0.0),
                y0,
                y1,
                t0: get(p.maneuver_start_s, 0.25 * d),
                dur,
            }
        }
        Preset::Turn => Trajectory::Polar {
            r0: positive("gap_m", get(p.gap_m, 20.0))?,
            range_rate: get(p.range_rate_mps, 0.5),
            phi0: get(p.start_azimuth_rad, -0.5),
            omega: get(p.turn_rate_rad_s, 0.1),
        },
    })
}

const LANES_M: [f64; 5] = [-7.0, -3.5, 0.0, 3.5, 7.0];
const MAX_CLUTTER_TRIES: usize = 2000;

/// Resolves the preset and draws clutter. Fails if any sampled state leaves
/// the radar's unambiguous region or the transmitter leaves its sector.
pub fn build_scene(cfg: &ScenarioConfig) -> Result<Scene> {
    cfg.validate()?;
    let radar = RadarWaveformConfig::default();
    let tx_limit = match cfg.preset {
        Preset::Turn => FRAC_PI_2,
        _ => FRAC_PI_4,
    };
    let tx_bounds = Bounds::for_radar(&radar, tx_limit + 1e-12);
    let transmitter = transmitter_trajectory(cfg)?;
    let times = sample_times(cfg);
    for &t in &times {
        let o = transmitter.truth(t, cfg.tx_rcs_gain);
        if !tx_bounds.contains(&o) {
            return Err(Error::config(format!(
                "{} preset leaves the valid region at t={t:.2}s (range {:.2} m, velocity {:.2} m/s, azimuth {:.3} rad)",
                cfg.preset.name(),
                o.range_m,
                o.radial_velocity_mps,
                o.azimuth_rad
            )));
        }
    }

    let clutter_bounds = Bounds::for_radar(&radar, 80f64.to_radians());
    let mut rng = rng::stream_rng(cfg.seed, rng::stream::CLUTTER, 0);
    let mut clutter = Vec::with_capacity(cfg.n_clutter);
    for k in 0..cfg.n_clutter {
        let mut tries = 0;
        let obj = loop {
            tries += 1;
            if tries > MAX_CLUTTER_TRIES {
                return Err(Error::config(format!(
                    "could not place clutter object {k} inside the radar's field of view"
                )));
            }
            let lane = LANES_M[rng.gen_range(0..LANES_M.len())] + rng.gen_range(-0.5..0.5);
            let trajectory = Trajectory::Linear {
                p0: [rng.gen_range(5.0..45.0), lane],
                v: [rng.gen_range(-4.0..4.0), 0.0],
            };
            let rcs_gain = DEFAULT_RCS_GAIN * rng.gen_range(0.5..2.0);
            let ok = times.iter().all(|&t| {
                let o = trajectory.truth(t, rcs_gain);
                let [cx, cy] = trajectory.position(t);
                let [tx, ty] = transmitter.position(t);
                clutter_bounds.contains(&o) && (cx - tx).hypot(cy - ty) > 3.0
            });
            if ok {
                break ClutterObject { trajectory, rcs_gain };
            }
        };
        clutter.push(obj);
    }
    Ok(Scene {
        config: cfg.clone(),
        transmitter,
        clutter,
    })
}

pub fn sample_times(cfg: &ScenarioConfig) -> Vec<f64> {
    (0..cfg.n_samples())
        .map(|i| i as f64 / cfg.sample_rate_hz)
        .collect()
}

impl Scene {
    pub fn timeline(&self) -> SceneTimeline {
        let timestamps_s = sample_times(&self.config);
        let transmitter = timestamps_s
            .iter()
            .map(|&t| self.transmitter.truth(t, self.config.tx_rcs_gain))
            .collect();
        let clutter = timestamps_s
            .iter()
            .map(|&t| {
                self.clutter
                    .iter()
                    .map(|c| c.trajectory.truth(t, c.rcs_gain))
                    .collect()
            })
            .collect();
        SceneTimeline {
            timestamps_s,
            transmitter,
            clutter,
        }
    }
}

pub fn generate_timeline(cfg: &ScenarioConfig) -> Result<SceneTimeline> {
    Ok(build_scene(cfg)?.timeline())
}

/// Maps an object state to geometric channel paths: a line-of-sight path
/// with `|α| = g0 / range` and a seeded phase, plus an optional ground
/// bounce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPathModel {
    pub reference_gain: f64,
    pub seed: u64,
    pub ground_reflection: bool,
    pub antenna_height_m: f64,
    pub reflection_coefficient: f64,
}

impl ChannelPathModel {
    pub fn new(seed: u64) -> Self {
        Self {
            reference_gain: 1.0,
            seed,
            ground_reflection: false,
            antenna_height_m: 1.5,
            reflection_coefficient: -0.5,
        }
    }

    pub fn paths(&self, obj: &ObjectTruth, step: u64) -> Result<Vec<ChannelPath>> {
        if !(obj.range_m > 0.0) {
            return Err(Error::Degenerate(format!(
                "channel path at range {} m",
                obj.range_m
            )));
        }
        let mut rng = rng::stream_rng(self.seed, rng::stream::CHANNEL_PHASE, step);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let los = ChannelPath {
            gain: Complex64::from_polar(self.reference_gain / obj.range_m, phase),
            azimuth_rad: obj.azimuth_rad,
            elevation_rad: 0.0,
        };
        let mut out = vec![los];
        if self.ground_reflection {
            let h2 = 2.0 * self.antenna_height_m;
            let reflected = obj.range_m.hypot(h2);
            // extra phase is arbitrary at these path lengths; draw it too
            let extra = rng.gen_range(0.0..2.0 * PI);
            out.push(ChannelPath {
                gain: Complex64::from_polar(
                    self.reflection_coefficient.abs() * self.reference_gain / reflected,
                    phase + extra + if self.reflection_coefficient < 0.0 { PI } else { 0.0 },
                ),
                azimuth_rad: obj.azimuth_rad,
                elevation_rad: -(h2 / obj.range_m).atan(),
            });
        }
        Ok(out)
    }

    pub fn channel(&self, obj: &ObjectTruth, step: u64) -> Result<ChannelState> {
        ChannelState::new(self.paths(obj, step)?)
    }
}

/// Free-function form of [`ChannelPathModel::paths`] with default settings.
pub fn truth_to_channel_paths(obj: &ObjectTruth, seed: u64, step: u64) -> Result<Vec<ChannelPath>> {
    ChannelPathModel::new(seed).paths(obj, step)
}
