//! Classical radar processing: range-Doppler map and radar cube via
//! unnormalized forward FFTs, CA-CFAR, DBSCAN and per-object state
//! estimation.
//!
//! Axis conventions: range axis unshifted (bin 0 = zero range), Doppler and
//! angle axes shifted so that zero velocity / boresight sit at `n / 2`.

mod cfar;
mod dbscan;
mod states;

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radar_synth::{RadarFrameCube, RadarWaveformConfig};

pub use cfar::{cfar_detect, cfar_threshold_factor, CfarConfig, Detection};
pub use dbscan::{dbscan_cluster, retain_peak_clusters, Clusters, DbscanConfig};
pub use states::{angle_of_bin, estimate_states, AngleSlice, ObjectState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Option<Vec<f64>> {
        match self {
            Window::Rectangular => None,
            Window::Hann => Some(
                (0..n)
                    .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub range: Window,
    pub doppler: Window,
}

/// `fftshift` position of unshifted bin `k` on an axis of length `n`.
#[inline]
pub fn shifted(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}

/// Per-antenna complex range-Doppler spectra, `n_ant × n_range × n_doppler`,
/// Doppler axis shifted.
#[derive(Debug, Clone)]
pub struct AntennaSpectra {
    pub data: Vec<Complex64>,
    pub n_ant: usize,
    pub n_range: usize,
    pub n_doppler: usize,
    pub config: RadarWaveformConfig,
    angle_fft: Option<(usize, AngleFft)>,
}

#[derive(Clone)]
struct AngleFft(Arc<dyn Fft<f64>>);

impl std::fmt::Debug for AngleFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AngleFft({})", self.0.len())
    }
}

impl AntennaSpectra {
    #[inline]
    pub fn get(&self, ant: usize, r: usize, d: usize) -> Complex64 {
        self.data[(ant * self.n_range + r) * self.n_doppler + d]
    }

    /// Prepares the antenna-axis transform used by [`AngleSlice`].
    pub fn with_angle_bins(mut self, n_angle_bins: usize) -> Result<Self> {
        check_angle_bins(n_angle_bins, self.n_ant)?;
        let fft = FftPlanner::new().plan_fft_forward(n_angle_bins);
        self.angle_fft = Some((n_angle_bins, AngleFft(fft)));
        Ok(self)
    }

    fn angle_spectrum(&self, r: usize, d: usize) -> Vec<f64> {
        let (n, fft) = self
            .angle_fft
            .as_ref()
            .expect("call with_angle_bins before reading angle slices");
        let mut buf = vec![Complex64::new(0.0, 0.0); *n];
        for (a, slot) in buf.iter_mut().enumerate().take(self.n_ant) {
            *slot = self.get(a, r, d);
        }
        fft.0.process(&mut buf);
        let mut out = vec![0.0; *n];
        for (k, z) in buf.iter().enumerate() {
            out[shifted(k, *n)] = z.norm();
        }
        out
    }
}

fn check_angle_bins(n_angle_bins: usize, n_ant: usize) -> Result<()> {
    if n_angle_bins < n_ant {
        return Err(Error::config(format!(
            "{n_angle_bins} angle bins cannot hold {n_ant} antennas"
        )));
    }
    Ok(())
}

/// 2D FFT of every antenna's (sample, chirp) plane.
pub fn antenna_spectra(cube: &RadarFrameCube, window: &WindowConfig) -> AntennaSpectra {
    let (n_ant, n_s, n_c) = cube.dims();
    let mut planner = FftPlanner::new();
    let fft_d = planner.plan_fft_forward(n_c);
    let fft_r = planner.plan_fft_forward(n_s);
    let w_r = window.range.coefficients(n_s);
    let w_d = window.doppler.coefficients(n_c);

    let mut data = cube.data.clone();
    if w_r.is_some() || w_d.is_some() {
        for a in 0..n_ant {
            for s in 0..n_s {
                for c in 0..n_c {
                    let g = w_r.as_ref().map_or(1.0, |w| w[s]) * w_d.as_ref().map_or(1.0, |w| w[c]);
                    data[(a * n_s + s) * n_c + c] *= g;
                }
            }
        }
    }
    // slow-time (Doppler) transform: contiguous rows of n_c
    fft_d.process(&mut data);

    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    let mut col = vec![Complex64::new(0.0, 0.0); n_s];
    for a in 0..n_ant {
        let base = a * n_s * n_c;
        for c in 0..n_c {
            for s in 0..n_s {
                col[s] = data[base + s * n_c + c];
            }
            fft_r.process(&mut col);
            let dc = shifted(c, n_c);
            for s in 0..n_s {
                out[base + s * n_c + dc] = col[s];
            }
        }
    }
    AntennaSpectra {
        data: out,
        n_ant,
        n_range: n_s,
        n_doppler: n_c,
        config: cube.config.clone(),
        angle_fft: None,
    }
}

/// Non-negative `n_range × n_doppler` magnitudes summed over antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub values: Vec<f64>,
    pub n_range: usize,
    pub n_doppler: usize,
    pub config: RadarWaveformConfig,
}

impl RangeDopplerMap {
    #[inline]
    pub fn get(&self, r: usize, d: usize) -> f64 {
        self.values[r * self.n_doppler + d]
    }

    /// Matrix CSV: one row per range bin, one column per Doppler bin.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in 0..self.n_range {
            let row = &self.values[r * self.n_doppler..(r + 1) * self.n_doppler];
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

impl AntennaSpectra {
    pub fn range_doppler_map(&self) -> RangeDopplerMap {
        let plane = self.n_range * self.n_doppler;
        let mut values = vec![0.0; plane];
        for a in 0..self.n_ant {
            for (v, z) in values.iter_mut().zip(&self.data[a * plane..(a + 1) * plane]) {
                *v += z.norm();
            }
        }
        RangeDopplerMap {
            values,
            n_range: self.n_range,
            n_doppler: self.n_doppler,
            config: self.config.clone(),
        }
    }
}

/// `H^RD = Σ_a |FFT2(X_a)|`.
pub fn range_doppler_map(cube: &RadarFrameCube) -> RangeDopplerMap {
    antenna_spectra(cube, &WindowConfig::default()).range_doppler_map()
}

/// `|FFT3(X)|` with the antenna axis zero-padded to `n_angle`, stored
/// `n_range × n_angle × n_doppler`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    pub values: Vec<f64>,
    pub n_range: usize,
    pub n_angle: usize,
    pub n_doppler: usize,
}

impl RadarCube {
    #[inline]
    pub fn get(&self, r: usize, a: usize, d: usize) -> f64 {
        self.values[(r * self.n_angle + a) * self.n_doppler + d]
    }
}

pub fn radar_cube(cube: &RadarFrameCube, n_angle_bins: usize) -> Result<RadarCube> {
    let (n_ant, _, _) = cube.dims();
    check_angle_bins(n_angle_bins, n_ant)?;
    let spectra = antenna_spectra(cube, &WindowConfig::default()).with_angle_bins(n_angle_bins)?;
    let (nr, nd) = (spectra.n_range, spectra.n_doppler);
    let mut values = vec![0.0; nr * n_angle_bins * nd];
    for r in 0..nr {
        for d in 0..nd {
            for (a, v) in spectra.angle_spectrum(r, d).into_iter().enumerate() {
                values[(r * n_angle_bins + a) * nd + d] = v;
            }
        }
    }
    Ok(RadarCube {
        values,
        n_range: nr,
        n_angle: n_angle_bins,
        n_doppler: nd,
    })
}

impl AngleSlice for RadarCube {
    fn n_angle(&self) -> usize {
        self.n_angle
    }

    fn angle_slice(&self, range_bin: usize, doppler_bin: usize) -> Vec<f64> {
        (0..self.n_angle)
            .map(|a| self.get(range_bin, a, doppler_bin))
            .collect()
    }
}

impl AngleSlice for AntennaSpectra {
    fn n_angle(&self) -> usize {
        self.angle_fft.as_ref().map_or(0, |(n, _)| *n)
    }

    fn angle_slice(&self, range_bin: usize, doppler_bin: usize) -> Vec<f64> {
        self.angle_spectrum(range_bin, doppler_bin)
    }
}

/// Settings for the whole per-frame detection chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub cfar: CfarConfig,
    pub dbscan: DbscanConfig,
    pub n_angle_bins: usize,
    pub window: WindowConfig,
    /// Apply [`retain_peak_clusters`] after DBSCAN.
    pub peak_grouping: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            cfar: CfarConfig::default(),
            dbscan: DbscanConfig::default(),
            n_angle_bins: 64,
            window: WindowConfig::default(),
            peak_grouping: true,
        }
    }
}

/// Output of [`detect_objects`].
#[derive(Debug, Clone)]
pub struct FrameDetections {
    pub map: RangeDopplerMap,
    pub detections: Vec<Detection>,
    pub clusters: Clusters,
    pub states: Vec<ObjectState>,
}

/// Map → CFAR → DBSCAN → peak grouping → angle peak. The radar cube is only evaluated at
/// the cluster representatives' cells.
pub fn detect_objects(cube: &RadarFrameCube, cfg: &DetectionConfig) -> Result<FrameDetections> {
    let spectra = antenna_spectra(cube, &cfg.window).with_angle_bins(cfg.n_angle_bins)?;
    let map = spectra.range_doppler_map();
    let detections = cfar_detect(&map, &cfg.cfar)?;
    let mut clusters = dbscan_cluster(&detections, &cfg.dbscan);
    if cfg.peak_grouping {
        clusters = retain_peak_clusters(&clusters, &detections, &map);
    }
    let states = estimate_states(&clusters, &detections, &map, &spectra);
    Ok(FrameDetections {
        map,
        detections,
        clusters,
        states,
    })
}

/// CSV rows `t,k,range_m,velocity_mps,angle_rad,power`.
pub fn write_states_csv<W: Write>(mut w: W, frames: &[(f64, Vec<ObjectState>)]) -> std::io::Result<()> {
    writeln!(w, "t,k,range_m,velocity_mps,angle_rad,power")?;
    for (t, states) in frames {
        for (k, s) in states.iter().enumerate() {
            writeln!(
                w,
                "{t:.6},{k},{:.9},{:.9},{:.9},{:.9e}",
                s.range_m, s.velocity_mps, s.angle_rad, s.power
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_synth::synth_frame;
    use crate::scenario::ObjectTruth;
    use std::f64::consts::PI;

    fn small_cfg() -> RadarWaveformConfig {
        RadarWaveformConfig {
            n_ant: 8,
            n_samples: 16,
            n_chirps: 8,
            ..Default::default()
        }
    }

    fn random_cube(cfg: &RadarWaveformConfig, seed: u64) -> RadarFrameCube {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(seed, 0, 0);
        let data = (0..cfg.cube_len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        RadarFrameCube::from_data(cfg, data, 0.0).unwrap()
    }

    /// Direct triple sum; `n_angle` zero-padded antenna bins, all shifted
    /// axes undone by explicit index arithmetic.
    fn naive_cube(cube: &RadarFrameCube, n_angle: usize) -> Vec<Complex64> {
        let (na, ns, nc) = cube.dims();
        let mut out = vec![Complex64::new(0.0, 0.0); ns * n_angle * nc];
        for r in 0..ns {
            for a in 0..n_angle {
                for d in 0..nc {
                    let ka = (a + n_angle - n_angle / 2) % n_angle;
                    let kd = (d + nc - nc / 2) % nc;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for m in 0..na {
                        for s in 0..ns {
                            for c in 0..nc {
                                let ph = -2.0
                                    * PI
                                    * ((r * s) as f64 / ns as f64
                                        + (kd * c) as f64 / nc as f64
                                        + (ka * m) as f64 / n_angle as f64);
                                acc += cube.get(m, s, c) * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[(r * n_angle + a) * nc + d] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn radar_cube_matches_naive_dft() {
        let cfg = small_cfg();
        let cube = random_cube(&cfg, 1);
        let got = radar_cube(&cube, 16).unwrap();
        let want = naive_cube(&cube, 16);
        for (g, w) in got.values.iter().zip(&want) {
            assert!((g - w.norm()).abs() < 1e-9 * (1.0 + w.norm()));
        }
    }

    #[test]
    fn range_doppler_map_matches_naive_dft() {
        let cfg = small_cfg();
        let cube = random_cube(&cfg, 2);
        let map = range_doppler_map(&cube);
        let (na, ns, nc) = cube.dims();
        for r in 0..ns {
            for d in 0..nc {
                let kd = (d + nc - nc / 2) % nc;
                let mut total = 0.0;
                for m in 0..na {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for s in 0..ns {
                        for c in 0..nc {
                            let ph = -2.0 * PI * ((r * s) as f64 / ns as f64 + (kd * c) as f64 / nc as f64);
                            acc += cube.get(m, s, c) * Complex64::from_polar(1.0, ph);
                        }
                    }
                    total += acc.norm();
                }
                assert!((map.get(r, d) - total).abs() < 1e-9 * (1.0 + total));
            }
        }
    }

    #[test]
    fn parseval_per_antenna() {
        let cfg = small_cfg();
        let cube = random_cube(&cfg, 3);
        let spectra = antenna_spectra(&cube, &WindowConfig::default());
        let plane = cfg.n_samples * cfg.n_chirps;
        for a in 0..cfg.n_ant {
            let time: f64 = cube.data[a * plane..(a + 1) * plane].iter().map(|z| z.norm_sqr()).sum();
            let freq: f64 = spectra.data[a * plane..(a + 1) * plane].iter().map(|z| z.norm_sqr()).sum();
            assert!((freq - plane as f64 * time).abs() < 1e-9 * freq);
        }
    }

    #[test]
    fn zero_cube_gives_zero_maps() {
        let cfg = small_cfg();
        let cube = RadarFrameCube::zeros(&cfg, 0.0);
        assert!(range_doppler_map(&cube).values.iter().all(|&v| v == 0.0));
        assert!(radar_cube(&cube, 16).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stationary_object_sits_on_center_doppler_bin() {
        let cfg = RadarWaveformConfig::default();
        let o = ObjectTruth {
            range_m: 25.0,
            radial_velocity_mps: 0.0,
            azimuth_rad: 0.0,
            rcs_gain: 1e4,
        };
        let map = range_doppler_map(&synth_frame(&[o], &cfg, 0).unwrap());
        let (imax, _) = map
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_eq!(imax % map.n_doppler, 64);
    }

    #[test]
    fn angle_peak_positions() {
        let cfg = RadarWaveformConfig {
            n_samples: 32,
            n_chirps: 16,
            t_pri: 32.0 / 5e6,
            ..Default::default()
        };
        for (az, expect) in [(0.0, 32usize), (PI / 6.0, 48)] {
            let o = ObjectTruth {
                range_m: 1.0,
                radial_velocity_mps: 0.0,
                azimuth_rad: az,
                rcs_gain: 1.0,
            };
            let cube = synth_frame(&[o], &cfg, 0).unwrap();
            let rc = radar_cube(&cube, 64).unwrap();
            let map = range_doppler_map(&cube);
            let (imax, _) = map
                .values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            let slice = rc.angle_slice(imax / map.n_doppler, imax % map.n_doppler);
            let peak = (0..64).max_by(|&a, &b| slice[a].partial_cmp(&slice[b]).unwrap()).unwrap();
            assert_eq!(peak, expect, "az {az}");
        }
    }

    #[test]
    fn too_few_angle_bins_rejected() {
        let cube = RadarFrameCube::zeros(&small_cfg(), 0.0);
        assert!(matches!(radar_cube(&cube, 4), Err(Error::Config(_))));
    }

    #[test]
    fn lazy_slices_match_full_cube() {
        let cfg = small_cfg();
        let data: Vec<Complex64> = (0..cfg.cube_len())
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let cube = RadarFrameCube::from_data(&cfg, data, 0.0).unwrap();
        let full = radar_cube(&cube, 16).unwrap();
        let lazy = antenna_spectra(&cube, &WindowConfig::default())
            .with_angle_bins(16)
            .unwrap();
        for r in 0..16 {
            for d in 0..8 {
                assert_eq!(full.angle_slice(r, d), lazy.angle_slice(r, d));
            }
        }
    }

    #[test]
    fn hann_window_suppresses_far_sidelobes() {
        let cfg = RadarWaveformConfig::default();
        let o = ObjectTruth {
            range_m: 20.3,
            radial_velocity_mps: 1.1,
            azimuth_rad: 0.0,
            rcs_gain: 1e4,
        };
        let cube = synth_frame(&[o], &cfg, 0).unwrap();
        let rect = range_doppler_map(&cube);
        let hann = antenna_spectra(
            &cube,
            &WindowConfig {
                range: Window::Hann,
                doppler: Window::Hann,
            },
        )
        .range_doppler_map();
        let far = |m: &RangeDopplerMap| m.get(200, 10) / m.values.iter().cloned().fold(0.0, f64::max);
        assert!(far(&hann) < far(&rect) * 1e-2);
    }
}
