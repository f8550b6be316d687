use serde::{Deserialize, Serialize};

use super::{Clusters, Detection, RangeDopplerMap};

/// Source of angle spectra for a given (range, Doppler) cell. Shifted axis,
/// bin `n / 2` at boresight.
pub trait AngleSlice {
    fn n_angle(&self) -> usize;
    fn angle_slice(&self, range_bin: usize, doppler_bin: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub angle_rad: f64,
    pub power: f64,
    pub range_bin: usize,
    pub doppler_bin: usize,
    pub angle_bin: usize,
}

/// `asin(2 (bin - n/2) / n)`.
pub fn angle_of_bin(bin: usize, n_angle: usize) -> f64 {
    let n = n_angle as f64;
    (2.0 * (bin as f64 - (n_angle / 2) as f64) / n).clamp(-1.0, 1.0).asin()
}

/// One state per cluster, in cluster-id order. Each cluster is represented
/// by its strongest cell (ties to the lexicographically first cell); the
/// angle is the peak of that cell's angle spectrum (ties to the lowest bin).
pub fn estimate_states<A: AngleSlice + ?Sized>(
    clusters: &Clusters,
    detections: &[Detection],
    map: &RangeDopplerMap,
    angles: &A,
) -> Vec<ObjectState> {
    let derived = map.config.derived();
    let n_angle = angles.n_angle();
    (0..clusters.n_clusters)
        .filter_map(|c| {
            let rep = clusters.members(c).map(|i| &detections[i]).min_by(|a, b| {
                b.power
                    .partial_cmp(&a.power)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then((a.range_bin, a.doppler_bin).cmp(&(b.range_bin, b.doppler_bin)))
            })?;
            let slice = angles.angle_slice(rep.range_bin, rep.doppler_bin);
            let mut best = 0;
            for (k, &v) in slice.iter().enumerate() {
                if v > slice[best] {
                    best = k;
                }
            }
            Some(ObjectState {
                range_m: rep.range_bin as f64 * derived.range_res_m,
                velocity_mps: (rep.doppler_bin as f64 - (map.n_doppler / 2) as f64)
                    * derived.velocity_res_mps,
                angle_rad: angle_of_bin(best, n_angle),
                power: rep.power,
                range_bin: rep.range_bin,
                doppler_bin: rep.doppler_bin,
                angle_bin: best,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::radar_synth::synth_frame;
    use crate::scenario::ObjectTruth;

    #[test]
    fn angle_bin_mapping() {
        assert_eq!(angle_of_bin(32, 64), 0.0);
        assert!((angle_of_bin(48, 64) - std::f64::consts::FRAC_PI_6).abs() < 1e-12);
        assert!((angle_of_bin(0, 64) + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn single_object_state_within_one_resolution_cell() {
        let cfg = RadarWaveformConfig::default();
        let d = cfg.derived();
        let truth = ObjectTruth {
            range_m: 18.3,
            radial_velocity_mps: -3.1,
            azimuth_rad: 0.2,
            rcs_gain: 1e4,
        };
        let cube = synth_frame(&[truth], &cfg, 0).unwrap();
        let out = detect_objects(&cube, &DetectionConfig::default()).unwrap();
        assert_eq!(out.states.len(), 1);
        let s = out.states[0];
        assert!((s.range_m - truth.range_m).abs() <= d.range_res_m);
        assert!((s.velocity_mps - truth.radial_velocity_mps).abs() <= d.velocity_res_mps);
        // 64-bin grid in sine space: half a bin is 1/64
        assert!((s.angle_rad.sin() - truth.azimuth_rad.sin()).abs() <= 1.0 / 64.0 + 1e-12);
    }

    #[test]
    fn lazy_and_full_cube_give_same_states() {
        let cfg = RadarWaveformConfig {
            noise_var: 1e-9,
            ..Default::default()
        };
        let objs = [
            ObjectTruth {
                range_m: 12.0,
                radial_velocity_mps: 2.0,
                azimuth_rad: -0.3,
                rcs_gain: 1e4,
            },
            ObjectTruth {
                range_m: 30.0,
                radial_velocity_mps: -5.0,
                azimuth_rad: 0.4,
                rcs_gain: 1e4,
            },
        ];
        let cube = synth_frame(&objs, &cfg, 9).unwrap();
        let dc = DetectionConfig::default();
        let lazy = detect_objects(&cube, &dc).unwrap();
        let full = radar_cube(&cube, 64).unwrap();
        let eager = estimate_states(&lazy.clusters, &lazy.detections, &lazy.map, &full);
        assert_eq!(lazy.states, eager);
        assert_eq!(lazy.states.len(), 2);
    }

    #[test]
    fn random_single_objects_give_exactly_one_state() {
        use rand::Rng;
        let cfg = RadarWaveformConfig::default();
        let mut rng = crate::rng::stream_rng(5, 0, 0);
        let dc = DetectionConfig::default();
        for _ in 0..25 {
            let truth = ObjectTruth {
                range_m: rng.gen_range(2.0..45.0),
                radial_velocity_mps: rng.gen_range(-13.0..13.0),
                azimuth_rad: rng.gen_range(-0.78..0.78),
                rcs_gain: 1e4,
            };
            let out = detect_objects(&synth_frame(&[truth], &cfg, 0).unwrap(), &dc).unwrap();
            assert_eq!(out.states.len(), 1, "{truth:?}");
            let s = out.states[0];
            let ab = 32.0 + truth.azimuth_rad.sin() * 32.0;
            assert!((s.range_bin as f64 - cfg.range_bin(truth.range_m)).abs() <= 1.0);
            assert!((s.doppler_bin as f64 - cfg.doppler_bin(truth.radial_velocity_mps)).abs() <= 1.0);
            assert!((s.angle_bin as f64 - ab).abs() <= 1.0, "{truth:?} {s:?}");
        }
    }

    #[test]
    fn cfar_is_translation_covariant_for_an_impulse() {
        let cfg = RadarWaveformConfig::default();
        let at = |r: usize, d: usize| {
            let mut values = vec![0.0; 256 * 128];
            values[r * 128 + d] = 5.0;
            let map = RangeDopplerMap {
                values,
                n_range: 256,
                n_doppler: 128,
                config: cfg.clone(),
            };
            cfar_detect(&map, &CfarConfig::default()).unwrap()
        };
        let a = at(40, 30);
        let b = at(47, 61);
        assert_eq!(a.len(), 1);
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].range_bin - a[0].range_bin, b[0].doppler_bin - a[0].doppler_bin), (7, 31));
    }
}
