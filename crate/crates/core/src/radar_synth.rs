//! Raw FMCW IF frame synthesis for point scatterers.
//!
//! The de-chirped IF of one chirp for a scatterer at round-trip delay `τ` is
//! `√(ℰ_t ℰ_r) · exp(j2π[Sτt + f₀τ − (S/2)τ²])`. The delay is re-evaluated
//! per chirp (stop-and-hop), which produces the Doppler progression across
//! the frame, and each receive antenna adds `exp(jπ·m·sin θ)` for
//! half-wavelength spacing.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::ObjectTruth;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarWaveformConfig {
    /// Chirp start frequency, Hz.
    pub f0: f64,
    /// Chirp slope, Hz/s.
    pub slope: f64,
    /// ADC rate, samples/s.
    pub fs: f64,
    pub n_samples: usize,
    pub n_chirps: usize,
    pub n_ant: usize,
    /// Chirp repetition interval, s.
    pub t_pri: f64,
    pub tx_power: f64,
    /// Complex noise variance per IF sample.
    pub noise_var: f64,
}

impl Default for RadarWaveformConfig {
    fn default() -> Self {
        Self {
            f0: 77e9,
            slope: 15e12,
            fs: 5e6,
            n_samples: 256,
            n_chirps: 128,
            n_ant: 4,
            t_pri: 65e-6,
            tx_power: 1.0,
            noise_var: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub t_active_s: f64,
    pub bandwidth_hz: f64,
    pub t_frame_s: f64,
    pub range_res_m: f64,
    pub max_range_m: f64,
    pub velocity_res_mps: f64,
    pub max_velocity_mps: f64,
    pub wavelength_m: f64,
}

impl RadarWaveformConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f0", self.f0),
            ("slope", self.slope),
            ("fs", self.fs),
            ("t_pri", self.t_pri),
            ("tx_power", self.tx_power),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("radar {name} must be > 0, got {v}")));
            }
        }
        if self.n_samples == 0 || self.n_chirps == 0 || self.n_ant == 0 {
            return Err(Error::config("radar cube dimensions must be nonzero"));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::config("noise_var must be >= 0"));
        }
        let t_active = self.n_samples as f64 / self.fs;
        if t_active > self.t_pri * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "active chirp time {t_active:e} s exceeds t_pri {:e} s",
                self.t_pri
            )));
        }
        Ok(())
    }

    /// Range, velocity and timing figures implied by the waveform. Range
    /// uses complex IF sampling, so the full `n_samples` bins are unambiguous.
    pub fn derived(&self) -> DerivedParams {
        let t_active_s = self.n_samples as f64 / self.fs;
        let bandwidth_hz = self.slope * t_active_s;
        let range_res_m = SPEED_OF_LIGHT / (2.0 * bandwidth_hz);
        let wavelength_m = SPEED_OF_LIGHT / self.f0;
        let max_velocity_mps = wavelength_m / (4.0 * self.t_pri);
        DerivedParams {
            t_active_s,
            bandwidth_hz,
            t_frame_s: self.n_chirps as f64 * self.t_pri,
            range_res_m,
            max_range_m: self.n_samples as f64 * range_res_m,
            velocity_res_mps: 2.0 * max_velocity_mps / self.n_chirps as f64,
            max_velocity_mps,
            wavelength_m,
        }
    }

    pub fn cube_len(&self) -> usize {
        self.n_ant * self.n_samples * self.n_chirps
    }

    /// Fractional range bin of a scatterer (beat frequency over ADC rate).
    pub fn range_bin(&self, range_m: f64) -> f64 {
        self.slope * 2.0 * range_m / SPEED_OF_LIGHT / self.fs * self.n_samples as f64
    }

    /// Fractional Doppler bin on the centered axis (zero velocity at
    /// `n_chirps / 2`).
    pub fn doppler_bin(&self, velocity_mps: f64) -> f64 {
        let lambda = self.derived().wavelength_m;
        self.n_chirps as f64 / 2.0 + 2.0 * velocity_mps / lambda * self.t_pri * self.n_chirps as f64
    }
}

pub fn derived_params(cfg: &RadarWaveformConfig) -> DerivedParams {
    cfg.derived()
}

/// One radar frame: `n_ant × n_samples × n_chirps` complex IF samples,
/// antenna-major, chirp-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarFrameCube {
    pub data: Vec<Complex64>,
    pub config: RadarWaveformConfig,
    pub timestamp_s: f64,
}

impl RadarFrameCube {
    pub fn zeros(config: &RadarWaveformConfig, timestamp_s: f64) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); config.cube_len()],
            config: config.clone(),
            timestamp_s,
        }
    }

    pub fn from_data(config: &RadarWaveformConfig, data: Vec<Complex64>, timestamp_s: f64) -> Result<Self> {
        if data.len() != config.cube_len() {
            return Err(Error::shape(format!(
                "cube has {} samples, config expects {}",
                data.len(),
                config.cube_len()
            )));
        }
        Ok(Self {
            data,
            config: config.clone(),
            timestamp_s,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.config.n_ant, self.config.n_samples, self.config.n_chirps)
    }

    #[inline]
    pub fn index(&self, ant: usize, sample: usize, chirp: usize) -> usize {
        (ant * self.config.n_samples + sample) * self.config.n_chirps + chirp
    }

    #[inline]
    pub fn get(&self, ant: usize, sample: usize, chirp: usize) -> Complex64 {
        self.data[self.index(ant, sample, chirp)]
    }
}

fn check_object(obj: &ObjectTruth, cfg: &RadarWaveformConfig) -> Result<()> {
    let d = cfg.derived();
    if !(obj.range_m > 0.0 && obj.range_m < d.max_range_m) {
        return Err(Error::Aliasing(format!(
            "range {} m outside (0, {:.3}) m",
            obj.range_m, d.max_range_m
        )));
    }
    if !(obj.radial_velocity_mps.abs() < d.max_velocity_mps) {
        return Err(Error::Aliasing(format!(
            "velocity {} m/s outside ±{:.3} m/s",
            obj.radial_velocity_mps, d.max_velocity_mps
        )));
    }
    if !obj.azimuth_rad.is_finite() || !(obj.rcs_gain > 0.0) {
        return Err(Error::Aliasing("non-finite azimuth or non-positive rcs".into()));
    }
    Ok(())
}

/// `ℰ_r = rcs / R⁴`.
pub fn reflection_gain(obj: &ObjectTruth) -> f64 {
    obj.rcs_gain / obj.range_m.powi(4)
}

/// Adds the scatterer's contribution for one (antenna, chirp) pair into
/// `out[n * stride]`, `n = 0..n_samples`.
fn accumulate_chirp(
    obj: &ObjectTruth,
    cfg: &RadarWaveformConfig,
    amplitude: f64,
    chirp: usize,
    ant: usize,
    out: &mut [Complex64],
    stride: usize,
) {
    use std::f64::consts::PI;
    let range = obj.range_m + obj.radial_velocity_mps * chirp as f64 * cfg.t_pri;
    let tau = 2.0 * range / SPEED_OF_LIGHT;
    // constant part of the phase, in cycles; reduce before scaling by 2π
    let cycles = cfg.f0 * tau - 0.5 * cfg.slope * tau * tau;
    let phase0 = 2.0 * PI * cycles.fract() + PI * ant as f64 * obj.azimuth_rad.sin();
    let dphi = 2.0 * PI * cfg.slope * tau / cfg.fs;
    let step = Complex64::from_polar(1.0, dphi);
    let mut z = Complex64::from_polar(amplitude, phase0);
    for n in 0..cfg.n_samples {
        // resync periodically to keep recurrence drift below 1e-15
        if n % 64 == 0 && n > 0 {
            z = Complex64::from_polar(amplitude, phase0 + dphi * n as f64);
        }
        out[n * stride] += z;
        z *= step;
    }
}

/// IF samples of one chirp at one antenna for a single scatterer.
pub fn synth_chirp_if(
    obj: &ObjectTruth,
    cfg: &RadarWaveformConfig,
    chirp_index: usize,
    antenna_index: usize,
) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    check_object(obj, cfg)?;
    let amplitude = (cfg.tx_power * reflection_gain(obj)).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); cfg.n_samples];
    accumulate_chirp(obj, cfg, amplitude, chirp_index, antenna_index, &mut out, 1);
    Ok(out)
}

/// Superposition of all scatterers plus circular Gaussian noise of variance
/// `cfg.noise_var`, drawn from the stream keyed by `seed`.
pub fn synth_frame(objects: &[ObjectTruth], cfg: &RadarWaveformConfig, seed: u64) -> Result<RadarFrameCube> {
    synth_frame_at(objects, cfg, seed, 0.0)
}

pub fn synth_frame_at(
    objects: &[ObjectTruth],
    cfg: &RadarWaveformConfig,
    seed: u64,
    timestamp_s: f64,
) -> Result<RadarFrameCube> {
    cfg.validate()?;
    for o in objects {
        check_object(o, cfg)?;
    }
    let mut cube = RadarFrameCube::zeros(cfg, timestamp_s);
    let (n_ant, n_s, n_c) = cube.dims();
    for obj in objects {
        let amplitude = (cfg.tx_power * reflection_gain(obj)).sqrt();
        for a in 0..n_ant {
            let base = a * n_s * n_c;
            for c in 0..n_c {
                accumulate_chirp(obj, cfg, amplitude, c, a, &mut cube.data[base + c..], n_c);
            }
        }
    }
    if cfg.noise_var > 0.0 {
        let mut rng = rng::stream_rng(seed, rng::stream::RADAR_NOISE, 0);
        let sd = (cfg.noise_var / 2.0).sqrt();
        for z in cube.data.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(sd * re, sd * im);
        }
    }
    Ok(cube)
}

/// Per-frame noise seed for timestep `step` of a scenario.
pub fn frame_seed(scenario_seed: u64, step: u64) -> u64 {
    rng::derive_seed2(scenario_seed, rng::stream::RADAR_NOISE, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn obj(range_m: f64, v: f64, az: f64) -> ObjectTruth {
        ObjectTruth {
            range_m,
            radial_velocity_mps: v,
            azimuth_rad: az,
            rcs_gain: 1e4,
        }
    }

    /// Magnitude of a single-bin DFT of `x` at fractional-free bin `k`.
    fn dft_mag(x: &[Complex64], k: usize) -> f64 {
        let n = x.len() as f64;
        x.iter()
            .enumerate()
            .map(|(i, z)| z * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * i as f64 / n))
            .sum::<Complex64>()
            .norm()
    }

    fn peak_bin(x: &[Complex64]) -> usize {
        (0..x.len())
            .max_by(|&a, &b| dft_mag(x, a).partial_cmp(&dft_mag(x, b)).unwrap())
            .unwrap()
    }

    #[test]
    fn default_bandwidth_and_limits() {
        let d = RadarWaveformConfig::default().derived();
        assert!((d.t_active_s - 51.2e-6).abs() < 1e-18);
        assert!((d.bandwidth_hz - 768e6).abs() < 1e-3);
        // independent evaluation: c / (2 · 768 MHz) · 256
        let max_range = 299_792_458.0 / (2.0 * 768e6) * 256.0;
        assert!((d.max_range_m - max_range).abs() < 1e-9);
        assert!((d.max_range_m - 49.97).abs() < 0.01);
        let max_vel = (299_792_458.0 / 77e9) / (4.0 * 65e-6);
        assert!((d.max_velocity_mps - max_vel).abs() < 1e-12);
        assert!((d.max_velocity_mps * 3.6 - 53.9).abs() < 0.05);
        assert!((d.range_res_m - 0.1952).abs() < 1e-4);
        assert!((d.velocity_res_mps - 0.234).abs() < 1e-3);
    }

    #[test]
    fn doubling_pri_halves_max_velocity() {
        let a = RadarWaveformConfig::default();
        let b = RadarWaveformConfig {
            t_pri: 2.0 * a.t_pri,
            ..a.clone()
        };
        assert_eq!(b.derived().max_velocity_mps * 2.0, a.derived().max_velocity_mps);
    }

    #[test]
    fn beat_tone_lands_in_predicted_range_bin() {
        let cfg = RadarWaveformConfig::default();
        // S·2R/c = 3.0 MHz at 30 m → bin 3/5·256 = 153.6
        let x = synth_chirp_if(&obj(30.0, 0.0, 0.0), &cfg, 0, 0).unwrap();
        let k = peak_bin(&x);
        assert!(k == 153 || k == 154, "peak {k}");
        let x = synth_chirp_if(&obj(10.0, 0.0, 0.0), &cfg, 0, 0).unwrap();
        let k = peak_bin(&x);
        assert!(k == 51 || k == 52, "peak {k}");
        // 153.6 with c ≈ 3e8; exact c gives 153.71
        assert!((cfg.range_bin(30.0) - 153.6).abs() < 0.15);
    }

    #[test]
    fn empty_noiseless_frame_is_zero() {
        let cube = synth_frame(&[], &RadarWaveformConfig::default(), 1).unwrap();
        assert!(cube.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn doppler_bin_offset_for_5_mps() {
        let cfg = RadarWaveformConfig::default();
        let lambda = cfg.derived().wavelength_m;
        let offset = 2.0 * 5.0 / lambda * cfg.t_pri * 128.0;
        assert!((offset - 21.36).abs() < 0.01);
        let cube = synth_frame(&[obj(20.0, 5.0, 0.0)], &cfg, 0).unwrap();
        // slow-time samples at the target's range bin, one antenna
        let rb = cfg.range_bin(20.0).round() as usize;
        let mut slow = vec![Complex64::new(0.0, 0.0); 128];
        for s in 0..256 {
            let w = Complex64::from_polar(1.0, -2.0 * PI * rb as f64 * s as f64 / 256.0);
            for c in 0..128 {
                slow[c] += cube.get(0, s, c) * w;
            }
        }
        let k = peak_bin(&slow) as i64;
        let centered = if k >= 64 { k - 128 } else { k };
        assert_eq!(centered, offset.round() as i64);
    }

    #[test]
    fn superposition_holds() {
        let cfg = RadarWaveformConfig {
            n_samples: 32,
            n_chirps: 16,
            ..Default::default()
        };
        let cfg = RadarWaveformConfig {
            t_pri: cfg.n_samples as f64 / cfg.fs,
            ..cfg
        };
        let a = obj(1.2, 0.5, 0.3);
        let b = obj(3.3, -1.0, -0.7);
        let ab = synth_frame(&[a, b], &cfg, 0).unwrap();
        let fa = synth_frame(&[a], &cfg, 0).unwrap();
        let fb = synth_frame(&[b], &cfg, 0).unwrap();
        for i in 0..ab.data.len() {
            assert!((ab.data[i] - fa.data[i] - fb.data[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn chirp_energy() {
        let cfg = RadarWaveformConfig {
            tx_power: 2.5,
            ..Default::default()
        };
        let o = obj(17.0, 3.0, 0.2);
        let x = synth_chirp_if(&o, &cfg, 7, 2).unwrap();
        let e: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let expect = 2.5 * reflection_gain(&o) * 256.0;
        assert!(((e - expect) / expect).abs() < 1e-9);
    }

    #[test]
    fn antenna_phase_progression() {
        let cfg = RadarWaveformConfig::default();
        let o = obj(12.0, 0.0, 0.4);
        let x0 = synth_chirp_if(&o, &cfg, 0, 0).unwrap();
        let x2 = synth_chirp_if(&o, &cfg, 0, 2).unwrap();
        let rot = x2[5] / x0[5];
        let expect = Complex64::from_polar(1.0, 2.0 * PI * 0.4f64.sin());
        assert!((rot - expect).norm() < 1e-9);
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let cfg = RadarWaveformConfig {
            noise_var: 1.0,
            ..Default::default()
        };
        let a = synth_frame(&[], &cfg, 9).unwrap();
        let b = synth_frame(&[], &cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_frame(&[], &cfg, 10).unwrap();
        assert_ne!(a.data[0], c.data[0]);
        let p: f64 = a.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / a.data.len() as f64;
        assert!((p - 1.0).abs() < 0.02);
    }

    #[test]
    fn out_of_range_objects_refused() {
        let cfg = RadarWaveformConfig::default();
        assert!(matches!(synth_chirp_if(&obj(60.0, 0.0, 0.0), &cfg, 0, 0), Err(Error::Aliasing(_))));
        assert!(matches!(synth_chirp_if(&obj(10.0, 20.0, 0.0), &cfg, 0, 0), Err(Error::Aliasing(_))));
        assert!(matches!(synth_frame(&[obj(0.0, 0.0, 0.0)], &cfg, 0), Err(Error::Aliasing(_))));
    }

    #[test]
    fn invalid_waveform_rejected() {
        let cfg = RadarWaveformConfig {
            t_pri: 10e-6,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
