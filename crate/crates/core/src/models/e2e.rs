use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    avgpool2, avgpool2_backward, check_labels, pooled_dims, relu_backward, relu_inplace, softmax_xent, Classifier,
    Conv2d, Dense, Lstm, Parameterized, Tensor,
};
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct E2eConfig {
    pub map_height: usize,
    pub map_width: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub lstm_hidden: usize,
    /// Hidden fully connected widths; a final layer to `n_beams` follows.
    pub fc_dims: Vec<usize>,
    pub n_beams: usize,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            map_height: 256,
            map_width: 128,
            channels: vec![8, 16, 32, 32, 32],
            kernel: 3,
            lstm_hidden: 128,
            fc_dims: vec![128, 64],
            n_beams: 64,
        }
    }
}

impl E2eConfig {
    /// Spatial dims after every pooling stage.
    fn stage_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.map_height, self.map_width)];
        for _ in &self.channels {
            let &(h, w) = dims.last().expect("non-empty");
            dims.push(pooled_dims(h, w));
        }
        dims
    }

    pub fn feature_dim(&self) -> usize {
        let &(h, w) = self.stage_dims().last().expect("non-empty");
        h * w * self.channels.last().copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.map_height == 0 || self.map_width == 0 || self.channels.is_empty() || self.n_beams == 0 {
            return Err(Error::config("e2e model needs non-empty maps, conv stages and beams"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("e2e kernel size must be odd"));
        }
        Ok(())
    }
}

/// 2×2 average pooling repeated `pool_levels` times, then `log10(1 + x)` and
/// per-map standardisation to zero mean and unit variance. A constant map
/// becomes all zeros. Returns the values and the pooled height and width.
pub fn prepare_map<S: Scalar, T: Scalar>(values: &[S], h: usize, w: usize, pool_levels: usize) -> (Vec<T>, usize, usize) {
    let (mut h, mut w) = (h, w);
    let mut v: Vec<f64> = values.iter().map(|x| x.as_f64()).collect();
    for _ in 0..pool_levels {
        v = avgpool2(&v, 1, h, w);
        (h, w) = pooled_dims(h, w);
    }
    for x in v.iter_mut() {
        *x = x.max(0.0).ln_1p() / std::f64::consts::LN_10;
    }
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let flat = sd <= 1e-12 * mean.abs().max(1.0);
    let out = v
        .iter()
        .map(|x| if flat { T::zero() } else { T::of((x - mean) / sd) })
        .collect();
    (out, h, w)
}

/// One preprocessed map. Frames with equal `id` inside a batch are assumed
/// identical and run through the convolution stack once.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a, T> {
    pub id: u64,
    pub map: &'a [T],
}

/// Map sequence (oldest first) plus the 0-based index of the beam at the
/// start of the sequence.
#[derive(Debug, Clone)]
pub struct E2eInput<'a, T> {
    pub frames: Vec<FrameRef<'a, T>>,
    pub initial_beam: usize,
}

/// Per-frame conv features, for evaluating many sequences that share frames.
#[derive(Debug, Clone)]
pub struct FrameFeatures<T>(pub Vec<T>);

/// Saved activations of one frame through the conv stack.
struct ConvTrace<T> {
    /// Input of every stage.
    inputs: Vec<Vec<T>>,
    /// Post-ReLU output of every stage, before pooling.
    acts: Vec<Vec<T>>,
}

/// Shared conv stack per time step → LSTM → concat one-hot(initial beam) →
/// fully connected stack (ReLU between layers) → logits.
#[derive(Debug, Clone, PartialEq)]
pub struct E2eModel<T> {
    pub config: E2eConfig,
    pub convs: Vec<Conv2d<T>>,
    pub lstm: Lstm<T>,
    pub fcs: Vec<Dense<T>>,
}

impl<T: Scalar> E2eModel<T> {
    pub fn new(config: E2eConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, stream::INIT, 0);
        let mut convs = Vec::new();
        let mut cin = 1;
        for &c in &config.channels {
            convs.push(Conv2d::new(cin, c, config.kernel, config.kernel, &mut rng)?);
            cin = c;
        }
        let lstm = Lstm::new(config.feature_dim(), config.lstm_hidden, &mut rng);
        let mut fcs = Vec::new();
        let mut din = config.lstm_hidden + config.n_beams;
        for &d in config.fc_dims.iter().chain(std::iter::once(&config.n_beams)) {
            fcs.push(Dense::new(din, d, &mut rng));
            din = d;
        }
        Ok(Self {
            config,
            convs,
            lstm,
            fcs,
        })
    }

    pub fn zeros(config: E2eConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.zero_params();
        Ok(m)
    }

    fn map_len(&self) -> usize {
        self.config.map_height * self.config.map_width
    }

    fn trace(&self, map: &[T]) -> Result<(Vec<T>, ConvTrace<T>)> {
        if map.len() != self.map_len() {
            return Err(Error::shape(format!(
                "e2e expects {}x{} maps, got {} values",
                self.config.map_height,
                self.config.map_width,
                map.len()
            )));
        }
        let dims = self.config.stage_dims();
        let mut x = map.to_vec();
        let mut tr = ConvTrace {
            inputs: Vec::with_capacity(self.convs.len()),
            acts: Vec::with_capacity(self.convs.len()),
        };
        for (s, conv) in self.convs.iter().enumerate() {
            let (h, w) = dims[s];
            let mut y = conv.forward(&x, h, w)?;
            relu_inplace(&mut y);
            let pooled = avgpool2(&y, conv.out_channels(), h, w);
            tr.inputs.push(std::mem::replace(&mut x, pooled));
            tr.acts.push(y);
        }
        Ok((x, tr))
    }

    /// Conv features of one preprocessed map.
    pub fn frame_features(&self, map: &[T]) -> Result<FrameFeatures<T>> {
        Ok(FrameFeatures(self.trace(map)?.0))
    }

    fn conv_backward(&self, tr: &ConvTrace<T>, dfeat: Vec<T>, grad: &mut Self) -> Result<()> {
        let dims = self.config.stage_dims();
        let mut d = dfeat;
        for s in (0..self.convs.len()).rev() {
            let (h, w) = dims[s];
            let conv = &self.convs[s];
            let mut dy = avgpool2_backward(&d, conv.out_channels(), h, w);
            relu_backward(&tr.acts[s], &mut dy);
            match conv.backward(&tr.inputs[s], &dy, h, w, &mut grad.convs[s], s > 0)? {
                Some(dx) => d = dx,
                None => break,
            }
        }
        Ok(())
    }

    /// Head input for `n` sequences of equal length: time-major features.
    fn head_forward(&self, seq: &[T], steps: usize, beams: &[usize]) -> Result<HeadTrace<T>> {
        let n = beams.len();
        let (hd, b) = (self.config.lstm_hidden, self.config.n_beams);
        for &beam in beams {
            if beam >= b {
                return Err(Error::IndexOutOfRange { index: beam + 1, max: b });
            }
        }
        let lstm = self.lstm.forward_seq(seq, steps, n)?;
        let h = lstm.last_hidden(hd);
        let mut x = vec![T::zero(); n * (hd + b)];
        for r in 0..n {
            x[r * (hd + b)..r * (hd + b) + hd].copy_from_slice(&h[r * hd..(r + 1) * hd]);
            x[r * (hd + b) + hd + beams[r]] = T::one();
        }
        let mut acts = vec![x];
        for (i, fc) in self.fcs.iter().enumerate() {
            let mut y = fc.forward(acts.last().expect("non-empty"), n)?;
            if i + 1 < self.fcs.len() {
                relu_inplace(&mut y);
            }
            acts.push(y);
        }
        Ok(HeadTrace { lstm, acts })
    }

    /// Returns the gradient w.r.t. the time-major feature sequence.
    fn head_backward(&self, seq: &[T], tr: &HeadTrace<T>, dlogits: Vec<T>, grad: &mut Self) -> Result<Vec<T>> {
        let n = tr.lstm.n;
        let (hd, b) = (self.config.lstm_hidden, self.config.n_beams);
        let mut d = dlogits;
        for i in (0..self.fcs.len()).rev() {
            if i + 1 < self.fcs.len() {
                relu_backward(&tr.acts[i + 1], &mut d);
            }
            d = self.fcs[i]
                .backward(&tr.acts[i], &d, n, &mut grad.fcs[i], true)?
                .expect("dx requested");
        }
        let mut dh = vec![T::zero(); n * hd];
        for r in 0..n {
            dh[r * hd..(r + 1) * hd].copy_from_slice(&d[r * (hd + b)..r * (hd + b) + hd]);
        }
        Ok(self
            .lstm
            .backward_seq(seq, &tr.lstm, &dh, &mut grad.lstm, true)?
            .expect("dx requested"))
    }

    /// Logits for sequences given precomputed frame features.
    pub fn logits_from_features(&self, seqs: &[(Vec<&FrameFeatures<T>>, usize)]) -> Result<Vec<Vec<T>>> {
        let fd = self.config.feature_dim();
        let b = self.config.n_beams;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (frames, _)) in seqs.iter().enumerate() {
            if frames.is_empty() {
                return Err(Error::shape("e2e needs at least one frame"));
            }
            groups.entry(frames.len()).or_default().push(i);
        }
        let mut out = vec![Vec::new(); seqs.len()];
        for (steps, members) in groups {
            let mut seq = Vec::with_capacity(steps * members.len() * fd);
            for t in 0..steps {
                for &i in &members {
                    seq.extend_from_slice(&seqs[i].0[t].0);
                }
            }
            let beams: Vec<usize> = members.iter().map(|&i| seqs[i].1).collect();
            let tr = self.head_forward(&seq, steps, &beams)?;
            let z = tr.acts.last().expect("non-empty");
            for (r, &i) in members.iter().enumerate() {
                out[i] = z[r * b..(r + 1) * b].to_vec();
            }
        }
        Ok(out)
    }
}

struct HeadTrace<T> {
    lstm: crate::nn::LstmCache<T>,
    /// Input of the first FC layer followed by every layer's output.
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> Parameterized<T> for E2eModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.lstm.params());
        v.extend(self.fcs.iter().flat_map(|f| f.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.lstm.params_mut());
        v.extend(self.fcs.iter_mut().flat_map(|f| f.params_mut()));
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            v.extend(c.param_names().into_iter().map(|n| format!("conv{i}.{n}")));
        }
        v.extend(self.lstm.param_names().into_iter().map(|n| format!("lstm.{n}")));
        for (i, f) in self.fcs.iter().enumerate() {
            v.extend(f.param_names().into_iter().map(|n| format!("fc{i}.{n}")));
        }
        v
    }
}

impl<T: Scalar> Classifier<T> for E2eModel<T> {
    type Input<'a> = E2eInput<'a, T>;

    fn n_classes(&self) -> usize {
        self.config.n_beams
    }

    fn logits_batch(&self, xs: &[E2eInput<'_, T>]) -> Result<Vec<Vec<T>>> {
        let mut cache: HashMap<u64, FrameFeatures<T>> = HashMap::new();
        for x in xs {
            for f in &x.frames {
                if !cache.contains_key(&f.id) {
                    cache.insert(f.id, self.frame_features(f.map)?);
                }
            }
        }
        let seqs: Vec<(Vec<&FrameFeatures<T>>, usize)> = xs
            .iter()
            .map(|x| (x.frames.iter().map(|f| &cache[&f.id]).collect(), x.initial_beam))
            .collect();
        self.logits_from_features(&seqs)
    }

    fn loss_grad_batch(&self, xs: &[E2eInput<'_, T>], labels: &[usize], grad: &mut Self) -> Result<T> {
        check_labels(xs.len(), labels)?;
        let fd = self.config.feature_dim();
        let b = self.config.n_beams;
        let scale = T::one() / T::of(xs.len().max(1) as f64);

        // unique frames in first-use order
        let mut slot: HashMap<u64, usize> = HashMap::new();
        let mut traces: Vec<(Vec<T>, ConvTrace<T>)> = Vec::new();
        for x in xs {
            for f in &x.frames {
                if !slot.contains_key(&f.id) {
                    slot.insert(f.id, traces.len());
                    traces.push(self.trace(f.map)?);
                }
            }
        }
        let mut dfeat: Vec<Vec<T>> = vec![vec![T::zero(); fd]; traces.len()];

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, x) in xs.iter().enumerate() {
            if x.frames.is_empty() {
                return Err(Error::shape("e2e needs at least one frame"));
            }
            groups.entry(x.frames.len()).or_default().push(i);
        }
        let mut total = T::zero();
        for (steps, members) in groups {
            let n = members.len();
            let mut seq = Vec::with_capacity(steps * n * fd);
            for t in 0..steps {
                for &i in &members {
                    seq.extend_from_slice(&traces[slot[&xs[i].frames[t].id]].0);
                }
            }
            let beams: Vec<usize> = members.iter().map(|&i| xs[i].initial_beam).collect();
            let tr = self.head_forward(&seq, steps, &beams)?;
            let z = tr.acts.last().expect("non-empty");
            let mut dz = vec![T::zero(); n * b];
            for (r, &i) in members.iter().enumerate() {
                let (l, g) = softmax_xent(&z[r * b..(r + 1) * b], labels[i])?;
                total += l;
                for (d, gv) in dz[r * b..(r + 1) * b].iter_mut().zip(g) {
                    *d = gv * scale;
                }
            }
            let dseq = self.head_backward(&seq, &tr, dz, grad)?;
            for t in 0..steps {
                for (r, &i) in members.iter().enumerate() {
                    let src = &dseq[(t * n + r) * fd..(t * n + r + 1) * fd];
                    for (a, &v) in dfeat[slot[&xs[i].frames[t].id]].iter_mut().zip(src) {
                        *a += v;
                    }
                }
            }
        }
        for ((_, tr), d) in traces.iter().zip(dfeat) {
            self.conv_backward(tr, d, grad)?;
        }
        Ok(total * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn toy() -> E2eConfig {
        E2eConfig {
            map_height: 16,
            map_width: 8,
            channels: vec![2, 3, 3, 2, 2],
            kernel: 3,
            lstm_hidden: 5,
            fc_dims: vec![6, 5],
            n_beams: 8,
        }
    }

    /// Default init attenuates the early conv gradients to ~1e-7, where
    /// central differences are dominated by rounding; scaled weights give a
    /// better-conditioned point to check at.
    fn boosted(mut m: E2eModel<f64>, s: f64) -> E2eModel<f64> {
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        m
    }

    fn maps(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 0, 0);
        (0..n).map(|_| (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect()
    }

    #[test]
    fn feature_dims() {
        assert_eq!(E2eConfig::default().feature_dim(), 8 * 4 * 32);
        let small = E2eConfig {
            map_height: 128,
            map_width: 64,
            ..Default::default()
        };
        assert_eq!(small.feature_dim(), 4 * 2 * 32);
        assert_eq!(toy().feature_dim(), 2);
    }

    #[test]
    fn zero_model_uniform_on_zero_maps() {
        let m = E2eModel::<f64>::zeros(toy()).unwrap();
        let z = vec![0.0; 128];
        let x = E2eInput {
            frames: vec![FrameRef { id: 0, map: &z }, FrameRef { id: 0, map: &z }],
            initial_beam: 3,
        };
        let l = m.logits_batch(&[x]).unwrap().remove(0);
        assert!(l.iter().all(|&v| v == l[0]));
    }

    #[test]
    fn order_sensitive() {
        let m = boosted(E2eModel::<f64>::new(toy(), 0).unwrap(), 3.0);
        let ms = maps(3, 128, 4);

        let mk = |order: [usize; 3]| E2eInput {
            frames: order.iter().map(|&i| FrameRef { id: i as u64, map: &ms[i] }).collect(),
            initial_beam: 1,
        };
        let a = m.logits_batch(&[mk([0, 1, 2])]).unwrap();
        let b = m.logits_batch(&[mk([2, 0, 1])]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_map_size_rejected() {
        let m = E2eModel::<f64>::new(toy(), 2).unwrap();
        let z = vec![0.0; 100];
        let x = E2eInput {
            frames: vec![FrameRef { id: 0, map: &z }],
            initial_beam: 0,
        };
        assert!(matches!(m.logits_batch(&[x]), Err(Error::Shape(_))));
    }

    #[test]
    fn full_model_gradient_check_with_shared_frames() {
        for seed in 0..3 {
            let m = boosted(E2eModel::<f64>::new(toy(), seed).unwrap(), 3.0);
            let ms = maps(5, 128, seed + 10);
            let xs = vec![
                E2eInput {
                    frames: (0..3).map(|i| FrameRef { id: i, map: &ms[i as usize] }).collect(),
                    initial_beam: 2,
                },
                E2eInput {
                    frames: (1..4).map(|i| FrameRef { id: i, map: &ms[i as usize] }).collect(),
                    initial_beam: 5,
                },
                E2eInput {
                    frames: vec![FrameRef { id: 4, map: &ms[4] }],
                    initial_beam: 0,
                },
            ];
            let cfg = GradCheckConfig {
                fraction: 1.0,
                seed,
                ..Default::default()
            };
            let err = grad_check(&m, &xs, &[1, 7, 3], &cfg);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn random_inputs_give_finite_logits() {
        let m = E2eModel::<f32>::new(toy(), 9).unwrap();
        let mut rng = stream_rng(9, 1, 0);
        for _ in 0..50 {
            let steps = rng.gen_range(1..=10);
            let ms: Vec<Vec<f32>> = (0..steps).map(|_| (0..128).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let x = E2eInput {
                frames: ms.iter().enumerate().map(|(i, v)| FrameRef { id: i as u64, map: &v[..] }).collect(),
                initial_beam: rng.gen_range(0..8),
            };
            assert!(m.logits_batch(&[x]).unwrap()[0].iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn prepare_map_standardises() {
        let values: Vec<f64> = (0..32).map(|i| (i * i) as f64).collect();
        let (v, h, w) = prepare_map::<f64, f64>(&values, 8, 4, 1);
        assert_eq!((h, w), (4, 2));
        let mean = v.iter().sum::<f64>() / 8.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        // first pooled cell: mean of 0, 1, 16, 25
        let raw = [0.0f64, 1.0, 16.0, 25.0].iter().sum::<f64>() / 4.0;
        let logs: Vec<f64> = (0..4)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| {
                let cell = |i: usize, j: usize| ((i * 4 + j) * (i * 4 + j)) as f64;
                let m = (cell(2 * r, 2 * c) + cell(2 * r, 2 * c + 1) + cell(2 * r + 1, 2 * c) + cell(2 * r + 1, 2 * c + 1)) / 4.0;
                (1.0 + m).log10()
            })
            .collect();
        assert!(((1.0 + raw).log10() - logs[0]).abs() < 1e-15);
        let lm = logs.iter().sum::<f64>() / 8.0;
        let lsd = (logs.iter().map(|x| (x - lm).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!((v[0] - (logs[0] - lm) / lsd).abs() < 1e-12);
        assert!(prepare_map::<f32, f32>(&[3.0; 32], 8, 4, 0).0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn regression_locked_logits() {
        let m = E2eModel::<f64>::new(toy(), 42).unwrap();
        let ms = maps(2, 128, 42);
        let x = E2eInput {
            frames: vec![FrameRef { id: 0, map: &ms[0] }, FrameRef { id: 1, map: &ms[1] }],
            initial_beam: 4,
        };
        let z = m.logits_batch(&[x]).unwrap().remove(0);
        for (a, b) in z.iter().zip(REFERENCE_LOGITS) {
            assert!((a - b).abs() < 1e-12, "{z:?}");
        }
    }

    #[allow(clippy::excessive_precision)]
    const REFERENCE_LOGITS: [f64; 8] = [
        -0.48920553068184636,
        -0.27482838526173226,
        0.47776625356123437,
        -0.007213586864015541,
        0.04975520190816082,
        -0.33409923333402863,
        -0.10594705544907418,
        0.2824188043124741,
    ];
}
