use serde::{Deserialize, Serialize};

use super::RangeDopplerMap;
use crate::error::{Error, Result};

/// Cell-averaging CFAR on squared map magnitudes. Windows are given as
/// `(range, doppler)` half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfarConfig {
    pub guard: (usize, usize),
    pub training: (usize, usize),
    pub pfa: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            guard: (2, 2),
            training: (4, 4),
            pfa: 1e-4,
        }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::config(format!("pfa must lie in (0, 1), got {}", self.pfa)));
        }
        if self.training.0 == 0 && self.training.1 == 0 {
            return Err(Error::config("CFAR needs at least one training cell"));
        }
        Ok(())
    }

    pub fn full_training_cells(&self) -> usize {
        let (gr, gd) = self.guard;
        let (tr, td) = self.training;
        (2 * (gr + tr) + 1) * (2 * (gd + td) + 1) - (2 * gr + 1) * (2 * gd + 1)
    }
}

/// `α = N (pfa^{-1/N} - 1)`: exact for exponentially distributed noise power.
pub fn cfar_threshold_factor(n_training: usize, pfa: f64) -> f64 {
    let n = n_training as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub range_bin: usize,
    pub doppler_bin: usize,
    /// Squared map magnitude at the cell.
    pub power: f64,
    pub threshold: f64,
}

/// Summed-area table with a zero first row and column.
struct Integral {
    sums: Vec<f64>,
    w: usize,
}

impl Integral {
    fn new(values: &[f64], h: usize, w: usize) -> Self {
        let mut sums = vec![0.0; (h + 1) * (w + 1)];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                let v = values[r * w + c];
                row += v * v;
                sums[(r + 1) * (w + 1) + c + 1] = sums[r * (w + 1) + c + 1] + row;
            }
        }
        Self { sums, w: w + 1 }
    }

    /// Sum over rows `r0..r1` and columns `c0..c1` (half-open).
    fn rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        self.sums[r1 * self.w + c1] - self.sums[r0 * self.w + c1] - self.sums[r1 * self.w + c0]
            + self.sums[r0 * self.w + c0]
    }
}

fn span(center: usize, half: usize, n: usize) -> (usize, usize) {
    (center.saturating_sub(half), (center + half + 1).min(n))
}

/// Detections in row-major cell order. Border cells use the truncated
/// window, with the mean and `α` both taken over the training cells that
/// actually exist.
pub fn cfar_detect(map: &RangeDopplerMap, cfg: &CfarConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let (nr, nd) = (map.n_range, map.n_doppler);
    let (gr, gd) = cfg.guard;
    let (tr, td) = cfg.training;
    if nr < 2 * (gr + tr) + 1 || nd < 2 * (gd + td) + 1 {
        return Err(Error::config(format!(
            "{nr}x{nd} map is smaller than the CFAR window"
        )));
    }
    let integral = Integral::new(&map.values, nr, nd);
    let mut alpha = vec![f64::NAN; cfg.full_training_cells() + 1];
    let mut out = Vec::new();
    for r in 0..nr {
        let (or0, or1) = span(r, gr + tr, nr);
        let (ir0, ir1) = span(r, gr, nr);
        for d in 0..nd {
            let (oc0, oc1) = span(d, gd + td, nd);
            let (ic0, ic1) = span(d, gd, nd);
            let count = (or1 - or0) * (oc1 - oc0) - (ir1 - ir0) * (ic1 - ic0);
            if count == 0 {
                continue;
            }
            let sum = integral.rect(or0, or1, oc0, oc1) - integral.rect(ir0, ir1, ic0, ic1);
            if alpha[count].is_nan() {
                alpha[count] = cfar_threshold_factor(count, cfg.pfa);
            }
            let threshold = alpha[count] * sum.max(0.0) / count as f64;
            let v = map.get(r, d);
            let power = v * v;
            if power > threshold {
                out.push(Detection {
                    range_bin: r,
                    doppler_bin: d,
                    power,
                    threshold,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_synth::RadarWaveformConfig;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map_from(values: Vec<f64>, nr: usize, nd: usize) -> RangeDopplerMap {
        RangeDopplerMap {
            values,
            n_range: nr,
            n_doppler: nd,
            config: RadarWaveformConfig::default(),
        }
    }

    #[test]
    fn default_training_count_and_factor() {
        let cfg = CfarConfig::default();
        assert_eq!(cfg.full_training_cells(), 144);
        let a = cfar_threshold_factor(144, 1e-4);
        // independent: N(exp(-ln(pfa)/N) - 1)
        let oracle = 144.0 * ((-(1e-4f64).ln() / 144.0).exp() - 1.0);
        assert!((a - oracle).abs() < 1e-9);
        assert!((a - 9.51).abs() < 0.01, "{a}");
    }

    #[test]
    fn integral_image_matches_brute_force_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (nr, nd) = (24, 20);
        let values: Vec<f64> = (0..nr * nd).map(|_| rng.gen_range(0.0..2.0)).collect();
        let map = map_from(values, nr, nd);
        let cfg = CfarConfig {
            pfa: 0.2,
            ..Default::default()
        };
        let dets = cfar_detect(&map, &cfg).unwrap();
        let mut brute = Vec::new();
        for r in 0..nr as i64 {
            for d in 0..nd as i64 {
                let (mut sum, mut n) = (0.0, 0usize);
                for rr in r - 6..=r + 6 {
                    for dd in d - 6..=d + 6 {
                        if rr < 0 || dd < 0 || rr >= nr as i64 || dd >= nd as i64 {
                            continue;
                        }
                        if (rr - r).abs() <= 2 && (dd - d).abs() <= 2 {
                            continue;
                        }
                        sum += map.get(rr as usize, dd as usize).powi(2);
                        n += 1;
                    }
                }
                let th = cfar_threshold_factor(n, 0.2) * sum / n as f64;
                if map.get(r as usize, d as usize).powi(2) > th {
                    brute.push((r as usize, d as usize, th));
                }
            }
        }
        assert_eq!(dets.len(), brute.len());
        for (det, (r, d, th)) in dets.iter().zip(&brute) {
            assert_eq!((det.range_bin, det.doppler_bin), (*r, *d));
            assert!((det.threshold - th).abs() <= 1e-9 * th.max(1.0));
        }
    }

    #[test]
    fn false_alarm_rate_on_exponential_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (nr, nd) = (128, 128);
        let cfg = CfarConfig {
            pfa: 1e-2,
            ..Default::default()
        };
        let (mut hits, mut trials) = (0usize, 0usize);
        for _ in 0..12 {
            let values: Vec<f64> = (0..nr * nd)
                .map(|_| {
                    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                    (-u.ln()).sqrt()
                })
                .collect();
            let map = map_from(values, nr, nd);
            let interior = |r: usize, d: usize| (6..nr - 6).contains(&r) && (6..nd - 6).contains(&d);
            hits += cfar_detect(&map, &cfg)
                .unwrap()
                .iter()
                .filter(|x| interior(x.range_bin, x.doppler_bin))
                .count();
            trials += (nr - 12) * (nd - 12);
        }
        let rate = hits as f64 / trials as f64;
        assert!((rate - 1e-2).abs() < 1.5e-3, "rate {rate}");
    }

    #[test]
    fn strong_target_detected_in_flat_floor() {
        let mut values = vec![1.0; 32 * 32];
        values[10 * 32 + 12] = 10.0;
        let dets = cfar_detect(&map_from(values, 32, 32), &CfarConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!((dets[0].range_bin, dets[0].doppler_bin), (10, 12));
        assert_eq!(dets[0].power, 100.0);
    }

    #[test]
    fn invalid_configs() {
        let map = map_from(vec![1.0; 8 * 8], 8, 8);
        assert!(cfar_detect(&map, &CfarConfig::default()).is_err());
        let big = map_from(vec![1.0; 32 * 32], 32, 32);
        for pfa in [0.0, 1.0, -1.0] {
            let cfg = CfarConfig {
                pfa,
                ..Default::default()
            };
            assert!(matches!(cfar_detect(&big, &cfg), Err(Error::Config(_))));
        }
    }
}
