//! Transmitter identification and single-target tracking.
//!
//! The transmitter is picked on the first frame as the detected object whose
//! radar angle is closest to the steering angle of the known initial beam,
//! then followed by a weighted nearest-neighbour rule on (range, velocity).

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::comm::{beam_to_comm_angle, BeamCodebook};
use crate::error::{Error, Result};
use crate::radar_dsp::ObjectState;
use crate::radar_synth::RadarWaveformConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Range weight, 1/m.
    pub w_r: f64,
    /// Velocity weight, s/m.
    pub w_v: f64,
    pub max_coast_frames: usize,
}

impl TrackerConfig {
    /// Weights that express both distance terms in resolution cells.
    pub fn for_radar(radar: &RadarWaveformConfig) -> Self {
        let d = radar.derived();
        Self {
            w_r: 1.0 / d.range_res_m,
            w_v: 1.0 / d.velocity_res_mps,
            max_coast_frames: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.w_r) || !ok(self.w_v) || (self.w_r == 0.0 && self.w_v == 0.0) {
            return Err(Error::config("tracker weights must be non-negative and not both zero"));
        }
        Ok(())
    }

    fn distance(&self, a: &ObjectState, b: &ObjectState) -> f64 {
        self.w_r * (a.range_m - b.range_m).abs() + self.w_v * (a.velocity_mps - b.velocity_mps).abs()
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::for_radar(&RadarWaveformConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub current: ObjectState,
    pub frames_since_update: usize,
    /// Most recent states, oldest first, at most `capacity` long.
    pub history: VecDeque<ObjectState>,
    pub capacity: usize,
}

impl TrackState {
    pub fn new(initial: ObjectState, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let mut history = VecDeque::with_capacity(capacity);
        history.push_back(initial);
        Self {
            current: initial,
            frames_since_update: 0,
            history,
            capacity,
        }
    }

    fn push(&mut self, s: ObjectState) {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(s);
        self.current = s;
    }
}

fn argmin_by<F: Fn(&ObjectState) -> f64>(states: &[ObjectState], key: F) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in states.iter().enumerate() {
        let k = key(s);
        if best.map_or(true, |(_, b)| k < b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

/// `argmin_k |angle_k - comm_angle|`, ties to the lowest index.
pub fn identify_transmitter(states: &[ObjectState], comm_angle_rad: f64) -> Result<usize> {
    argmin_by(states, |s| (s.angle_rad - comm_angle_rad).abs()).ok_or(Error::NoObject)
}

/// One association step. An empty candidate list coasts on the previous
/// state; coasting beyond `max_coast_frames` loses the track.
pub fn track_step(prev: &TrackState, candidates: &[ObjectState], cfg: &TrackerConfig) -> Result<TrackState> {
    let mut next = prev.clone();
    match argmin_by(candidates, |c| cfg.distance(c, &prev.current)) {
        Some(i) => {
            next.frames_since_update = 0;
            next.push(candidates[i]);
        }
        None => {
            next.frames_since_update += 1;
            if next.frames_since_update > cfg.max_coast_frames {
                return Err(Error::TrackLost {
                    coasted: next.frames_since_update,
                });
            }
            let held = prev.current;
            next.push(held);
        }
    }
    Ok(next)
}

/// Per-frame tracker output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub state: ObjectState,
    pub coasted: bool,
}

/// Identification on the first frame, then [`track_step`] on every later
/// frame. One output per input frame.
pub fn track_sequence(
    frames: &[Vec<ObjectState>],
    initial_beam: usize,
    cb: &BeamCodebook,
    cfg: &TrackerConfig,
) -> Result<Vec<TrackPoint>> {
    cfg.validate()?;
    let first = frames
        .first()
        .ok_or_else(|| Error::config("tracker needs at least one frame"))?;
    let comm = beam_to_comm_angle(initial_beam, cb)?;
    let k = identify_transmitter(first, comm)?;
    let mut track = TrackState::new(first[k], frames.len());
    let mut out = Vec::with_capacity(frames.len());
    out.push(TrackPoint {
        state: first[k],
        coasted: false,
    });
    for frame in &frames[1..] {
        track = track_step(&track, frame, cfg)?;
        out.push(TrackPoint {
            state: track.current,
            coasted: track.frames_since_update > 0,
        });
    }
    Ok(out)
}

pub fn run_tracker(
    frames: &[Vec<ObjectState>],
    initial_beam: usize,
    cb: &BeamCodebook,
    cfg: &TrackerConfig,
) -> Result<Vec<ObjectState>> {
    Ok(track_sequence(frames, initial_beam, cb, cfg)?
        .into_iter()
        .map(|p| p.state)
        .collect())
}

/// CSV rows `t,range_m,velocity_mps,angle_rad,coast_flag`.
pub fn write_track_csv<W: Write>(mut w: W, timestamps_s: &[f64], track: &[TrackPoint]) -> std::io::Result<()> {
    writeln!(w, "t,range_m,velocity_mps,angle_rad,coast_flag")?;
    for (t, p) in timestamps_s.iter().zip(track) {
        writeln!(
            w,
            "{t:.6},{:.9},{:.9},{:.9},{}",
            p.state.range_m, p.state.velocity_mps, p.state.angle_rad, p.coasted as u8
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{build_codebook, ArrayConfig};
    use proptest::prelude::*;

    fn st(range_m: f64, velocity_mps: f64, angle_deg: f64) -> ObjectState {
        ObjectState {
            range_m,
            velocity_mps,
            angle_rad: angle_deg.to_radians(),
            power: 1.0,
            range_bin: 0,
            doppler_bin: 0,
            angle_bin: 0,
        }
    }

    #[test]
    fn identification_examples() {
        let s = [st(10.0, 0.0, -30.0), st(10.0, 0.0, 5.0), st(10.0, 0.0, 40.0)];
        assert_eq!(identify_transmitter(&s, 0.0).unwrap(), 1);
        assert_eq!(identify_transmitter(&s[..1], 1.0).unwrap(), 0);
        let tie = [st(10.0, 0.0, -10.0), st(10.0, 0.0, 10.0)];
        assert_eq!(identify_transmitter(&tie, 0.0).unwrap(), 0);
        assert!(matches!(identify_transmitter(&[], 0.0), Err(Error::NoObject)));
    }

    #[test]
    fn track_step_examples() {
        let cfg = TrackerConfig::default();
        let prev = TrackState::new(st(20.0, 3.0, 0.0), 10);
        let cands = [st(20.2, 3.1, 0.0), st(25.0, -2.0, 0.0)];
        // in bin units: 1.02 + 0.43 against 25.6 + 21.4
        let d0 = cfg.distance(&cands[0], &prev.current);
        let d1 = cfg.distance(&cands[1], &prev.current);
        assert!((d0 - (0.2 / 0.1952 + 0.1 / 0.2342)).abs() < 0.01, "{d0}");
        assert!((d1 - (5.0 / 0.1952 + 5.0 / 0.2342)).abs() < 0.1, "{d1}");
        assert_eq!(track_step(&prev, &cands, &cfg).unwrap().current, cands[0]);

        let far = [st(45.0, -10.0, 30.0)];
        assert_eq!(track_step(&prev, &far, &cfg).unwrap().current, far[0]);

        let coast = track_step(&prev, &[], &cfg).unwrap();
        assert_eq!(coast.current, prev.current);
        assert_eq!(coast.frames_since_update, 1);
    }

    #[test]
    fn coast_limit_loses_track() {
        let cfg = TrackerConfig::default();
        let mut t = TrackState::new(st(20.0, 3.0, 0.0), 10);
        for _ in 0..2 {
            t = track_step(&t, &[], &cfg).unwrap();
        }
        assert!(matches!(track_step(&t, &[], &cfg), Err(Error::TrackLost { coasted: 3 })));
    }

    #[test]
    fn history_is_bounded() {
        let cfg = TrackerConfig::default();
        let mut t = TrackState::new(st(20.0, 0.0, 0.0), 3);
        for i in 0..5 {
            t = track_step(&t, &[st(20.0 + i as f64, 0.0, 0.0)], &cfg).unwrap();
        }
        assert_eq!(t.history.len(), 3);
        assert_eq!(t.history.back().unwrap().range_m, 24.0);
    }

    #[test]
    fn run_tracker_follows_and_coasts() {
        let cb = build_codebook(&ArrayConfig::default(), 64).unwrap();
        let cfg = TrackerConfig::default();
        let tx = |i: usize| st(20.0 + 0.1 * i as f64, 1.0, 10.0);
        let clutter = |i: usize| st(30.0 - 0.5 * i as f64, -4.0, -20.0);
        let b = cb.nearest_beam(10f64.to_radians());
        let frames = vec![
            vec![clutter(0), tx(0)],
            vec![tx(1), clutter(1)],
            vec![],
            vec![clutter(3), tx(3)],
        ];
        let out = track_sequence(&frames, b, &cb, &cfg).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].state, tx(0));
        assert_eq!(out[1].state, tx(1));
        assert_eq!(out[2].state, tx(1));
        assert!(out[2].coasted);
        assert_eq!(out[3].state, tx(3));

        let single = run_tracker(&[vec![tx(0)]], 1, &cb, &cfg).unwrap();
        assert_eq!(single, vec![tx(0)]);
        assert!(matches!(run_tracker(&[vec![]], b, &cb, &cfg), Err(Error::NoObject)));
        assert!(matches!(
            run_tracker(&[vec![tx(0)]], 65, &cb, &cfg),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn invalid_weights() {
        for (w_r, w_v) in [(0.0, 0.0), (-1.0, 1.0), (1.0, f64::NAN)] {
            let cfg = TrackerConfig {
                w_r,
                w_v,
                max_coast_frames: 2,
            };
            assert!(cfg.validate().is_err());
        }
    }

    fn arb_state() -> impl Strategy<Value = ObjectState> {
        (1.0f64..45.0, -14.0f64..14.0, -80.0f64..80.0).prop_map(|(r, v, a)| st(r, v, a))
    }

    proptest! {
        #[test]
        fn identification_is_permutation_invariant(
            states in proptest::collection::vec(arb_state(), 1..8),
            comm in -1.0f64..1.0,
            rot in 0usize..8,
        ) {
            let k = identify_transmitter(&states, comm).unwrap();
            let mut rotated = states.clone();
            rotated.rotate_left(rot % states.len());
            let k2 = identify_transmitter(&rotated, comm).unwrap();
            // equal up to ties: the chosen angle distance is the same
            prop_assert_eq!(
                (states[k].angle_rad - comm).abs(),
                (rotated[k2].angle_rad - comm).abs()
            );
        }

        #[test]
        fn weight_scaling_keeps_selection(
            prev in arb_state(),
            cands in proptest::collection::vec(arb_state(), 1..8),
            scale in 0.01f64..100.0,
        ) {
            let cfg = TrackerConfig::default();
            let scaled = TrackerConfig { w_r: cfg.w_r * scale, w_v: cfg.w_v * scale, ..cfg.clone() };
            let t = TrackState::new(prev, 4);
            let a = track_step(&t, &cands, &cfg).unwrap().current;
            let b = track_step(&t, &cands, &scaled).unwrap().current;
            prop_assert_eq!(cfg.distance(&a, &prev), cfg.distance(&b, &prev));
        }
    }
}
