use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{check_labels, relu_backward, relu_inplace, softmax_xent, Classifier, Dense, Lstm, Parameterized, Tensor};
use crate::radar_dsp::ObjectState;
use crate::radar_synth::RadarWaveformConfig;
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TxIdConfig {
    pub input_dim: usize,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
    pub n_beams: usize,
}

impl Default for TxIdConfig {
    fn default() -> Self {
        Self {
            input_dim: 3,
            lstm_hidden: 64,
            fc_hidden: 64,
            n_beams: 64,
        }
    }
}

/// `(r / r_max, v / v_max, a / (π/2))`.
pub fn normalize_state(s: &ObjectState, radar: &RadarWaveformConfig) -> [f64; 3] {
    let d = radar.derived();
    [
        s.range_m / d.max_range_m,
        s.velocity_mps / d.max_velocity_mps,
        s.angle_rad / std::f64::consts::FRAC_PI_2,
    ]
}

/// LSTM over normalised transmitter states, last hidden state through
/// FC + ReLU and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TxIdModel<T> {
    pub config: TxIdConfig,
    pub lstm: Lstm<T>,
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
}

impl<T: Scalar> TxIdModel<T> {
    pub fn new(config: TxIdConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, stream::INIT, 0);
        Self {
            lstm: Lstm::new(config.input_dim, config.lstm_hidden, &mut rng),
            fc1: Dense::new(config.lstm_hidden, config.fc_hidden, &mut rng),
            fc2: Dense::new(config.fc_hidden, config.n_beams, &mut rng),
            config,
        }
    }

    pub fn zeros(config: TxIdConfig) -> Self {
        Self {
            lstm: Lstm::zeros(config.input_dim, config.lstm_hidden),
            fc1: Dense::zeros(config.lstm_hidden, config.fc_hidden),
            fc2: Dense::zeros(config.fc_hidden, config.n_beams),
            config,
        }
    }

    /// Logits for one flattened `steps × input_dim` sequence.
    pub fn forward(&self, seq: &[T]) -> Result<Vec<T>> {
        Ok(self.logits_batch(&[seq])?.remove(0))
    }

    fn steps_of(&self, seq: &[T]) -> Result<usize> {
        let d = self.config.input_dim;
        if seq.is_empty() || seq.len() % d != 0 {
            return Err(Error::shape(format!(
                "transmitter sequence must be a non-empty multiple of {d} values, got {}",
                seq.len()
            )));
        }
        Ok(seq.len() / d)
    }

    /// Sample indices keyed by sequence length.
    fn groups(&self, xs: &[&[T]]) -> Result<BTreeMap<usize, Vec<usize>>> {
        let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, x) in xs.iter().enumerate() {
            g.entry(self.steps_of(x)?).or_default().push(i);
        }
        Ok(g)
    }

    fn time_major(&self, xs: &[&[T]], members: &[usize], steps: usize) -> Vec<T> {
        let d = self.config.input_dim;
        let mut out = Vec::with_capacity(steps * members.len() * d);
        for t in 0..steps {
            for &i in members {
                out.extend_from_slice(&xs[i][t * d..(t + 1) * d]);
            }
        }
        out
    }
}

impl<T: Scalar> Parameterized<T> for TxIdModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = self.lstm.params();
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.lstm.params_mut();
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.lstm.param_names().into_iter().map(|n| format!("lstm.{n}")).collect();
        v.extend(self.fc1.param_names().into_iter().map(|n| format!("fc1.{n}")));
        v.extend(self.fc2.param_names().into_iter().map(|n| format!("fc2.{n}")));
        v
    }
}

impl<T: Scalar> Classifier<T> for TxIdModel<T> {
    type Input<'a> = &'a [T];

    fn n_classes(&self) -> usize {
        self.config.n_beams
    }

    fn logits_batch(&self, xs: &[&[T]]) -> Result<Vec<Vec<T>>> {
        let mut out = vec![Vec::new(); xs.len()];
        for (steps, members) in self.groups(xs)? {
            let n = members.len();
            let seq = self.time_major(xs, &members, steps);
            let cache = self.lstm.forward_seq(&seq, steps, n)?;
            let mut a1 = self.fc1.forward(cache.last_hidden(self.config.lstm_hidden), n)?;
            relu_inplace(&mut a1);
            let z = self.fc2.forward(&a1, n)?;
            let b = self.config.n_beams;
            for (r, &i) in members.iter().enumerate() {
                out[i] = z[r * b..(r + 1) * b].to_vec();
            }
        }
        Ok(out)
    }

    fn loss_grad_batch(&self, xs: &[&[T]], labels: &[usize], grad: &mut Self) -> Result<T> {
        check_labels(xs.len(), labels)?;
        let scale = T::one() / T::of(xs.len().max(1) as f64);
        let b = self.config.n_beams;
        let hd = self.config.lstm_hidden;
        let mut total = T::zero();
        for (steps, members) in self.groups(xs)? {
            let n = members.len();
            let seq = self.time_major(xs, &members, steps);
            let cache = self.lstm.forward_seq(&seq, steps, n)?;
            let h = cache.last_hidden(hd).to_vec();
            let mut a1 = self.fc1.forward(&h, n)?;
            relu_inplace(&mut a1);
            let z = self.fc2.forward(&a1, n)?;
            let mut dz = vec![T::zero(); n * b];
            for (r, &i) in members.iter().enumerate() {
                let (l, g) = softmax_xent(&z[r * b..(r + 1) * b], labels[i])?;
                total += l;
                for (d, gv) in dz[r * b..(r + 1) * b].iter_mut().zip(g) {
                    *d = gv * scale;
                }
            }
            let mut da1 = self.fc2.backward(&a1, &dz, n, &mut grad.fc2, true)?.expect("dx requested");
            relu_backward(&a1, &mut da1);
            let dh = self.fc1.backward(&h, &da1, n, &mut grad.fc1, true)?.expect("dx requested");
            self.lstm.backward_seq(&seq, &cache, &dh, &mut grad.lstm, false)?;
        }
        Ok(total * scale)
    }
}
