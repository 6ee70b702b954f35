//! Embedding ⊕ features → ReLU hidden layer → 4-output regression head.
//!
//! Input layout is `[embedding (dim), tok_len, word_char_len, rel_len]`.
//! Weight matrices are row-major with one row per input unit:
//! `w_hidden` is `(dim + 3) × hidden`, `w_out` is `hidden × 4`.

use rand::Rng;
use rand::RngCore;

use super::ModelError;

pub const N_FEATURES: usize = 3;
pub const N_OUTPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    dim: usize,
    hidden: usize,
    dropout_rate: f64,
    w_hidden: Vec<f64>,
    b_hidden: Vec<f64>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
    // bumped on every mutable parameter borrow; caches remember the value they saw
    generation: u64,
}

pub enum Mode<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

/// Activations from one forward call, enough for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    input: Vec<f64>,
    pre_activation: Vec<f64>,
    // post-ReLU, post-dropout
    hidden_out: Vec<f64>,
    // 0 for dropped units, 1/(1-p) for kept ones, 1 in infer mode
    dropout_scale: Vec<f64>,
}

impl ForwardCache {
    pub fn dropout_scale(&self) -> &[f64] {
        &self.dropout_scale
    }
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl FusionGrads {
    pub fn zeros_like(model: &FusionModel) -> Self {
        Self {
            w_hidden: vec![0.0; model.w_hidden.len()],
            b_hidden: vec![0.0; model.hidden],
            w_out: vec![0.0; model.w_out.len()],
            b_out: vec![0.0; N_OUTPUTS],
        }
    }

    pub fn fill_zero(&mut self) {
        for s in [&mut self.w_hidden, &mut self.b_hidden, &mut self.w_out, &mut self.b_out] {
            s.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in [&mut self.w_hidden, &mut self.b_hidden, &mut self.w_out, &mut self.b_out] {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Slices in parameter declaration order: `w_hidden, b_hidden, w_out, b_out`.
    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.w_hidden, &self.b_hidden, &self.w_out, &self.b_out]
    }
}

/// A mutable parameter tensor handed to an optimizer.
pub struct ParamSlot<'a> {
    pub values: &'a mut [f64],
    pub decay: bool,
}

impl FusionModel {
    /// All-zero parameters.
    pub fn zeros(dim: usize, hidden: usize, dropout_rate: f64) -> Result<Self, ModelError> {
        if hidden == 0 {
            return Err(ModelError::InvalidModel("hidden size must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::InvalidModel(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let n_in = dim + N_FEATURES;
        Ok(Self {
            dim,
            hidden,
            dropout_rate,
            w_hidden: vec![0.0; n_in * hidden],
            b_hidden: vec![0.0; hidden],
            w_out: vec![0.0; hidden * N_OUTPUTS],
            b_out: vec![0.0; N_OUTPUTS],
            generation: 0,
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn initialized<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut m = Self::zeros(dim, hidden, dropout_rate)?;
        let n_in = dim + N_FEATURES;
        let a = (6.0 / (n_in + hidden) as f64).sqrt();
        m.w_hidden.iter_mut().for_each(|w| *w = rng.gen_range(-a..=a));
        let a = (6.0 / (hidden + N_OUTPUTS) as f64).sqrt();
        m.w_out.iter_mut().for_each(|w| *w = rng.gen_range(-a..=a));
        Ok(m)
    }

    pub fn from_parts(
        dim: usize,
        hidden: usize,
        dropout_rate: f64,
        w_hidden: Vec<f64>,
        b_hidden: Vec<f64>,
        w_out: Vec<f64>,
        b_out: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let mut m = Self::zeros(dim, hidden, dropout_rate)?;
        let shapes = [
            (w_hidden.len(), m.w_hidden.len(), "w_hidden"),
            (b_hidden.len(), hidden, "b_hidden"),
            (w_out.len(), m.w_out.len(), "w_out"),
            (b_out.len(), N_OUTPUTS, "b_out"),
        ];
        for (found, expected, name) in shapes {
            if found != expected {
                return Err(ModelError::InvalidModel(format!(
                    "{name} has {found} values, expected {expected}"
                )));
            }
        }
        m.w_hidden = w_hidden;
        m.b_hidden = b_hidden;
        m.w_out = w_out;
        m.b_out = b_out;
        if !m.is_finite() {
            return Err(ModelError::InvalidModel("non-finite parameter".into()));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_inputs(&self) -> usize {
        self.dim + N_FEATURES
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn w_hidden(&self) -> &[f64] {
        &self.w_hidden
    }

    pub fn b_hidden(&self) -> &[f64] {
        &self.b_hidden
    }

    pub fn w_out(&self) -> &[f64] {
        &self.w_out
    }

    pub fn b_out(&self) -> &[f64] {
        &self.b_out
    }

    pub fn n_params(&self) -> usize {
        self.w_hidden.len() + self.b_hidden.len() + self.w_out.len() + self.b_out.len()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Slices in declaration order: `w_hidden, b_hidden, w_out, b_out`.
    pub fn param_slices(&self) -> [&[f64]; 4] {
        [&self.w_hidden, &self.b_hidden, &self.w_out, &self.b_out]
    }

    /// Mutable parameters for an optimizer; biases are flagged decay-exempt.
    /// Invalidates any outstanding forward cache.
    pub fn param_slots(&mut self) -> [ParamSlot<'_>; 4] {
        self.generation += 1;
        [
            ParamSlot { values: &mut self.w_hidden, decay: true },
            ParamSlot { values: &mut self.b_hidden, decay: false },
            ParamSlot { values: &mut self.w_out, decay: true },
            ParamSlot { values: &mut self.b_out, decay: false },
        ]
    }

    pub fn forward(
        &self,
        embedding: &[f64],
        features: [f64; N_FEATURES],
        mode: Mode<'_>,
    ) -> Result<([f64; N_OUTPUTS], ForwardCache), ModelError> {
        if embedding.len() != self.dim {
            return Err(ModelError::DimMismatch {
                expected: self.dim,
                found: embedding.len(),
            });
        }
        let mut input = Vec::with_capacity(self.n_inputs());
        input.extend_from_slice(embedding);
        input.extend_from_slice(&features);

        let h = self.hidden;
        let mut pre = self.b_hidden.clone();
        for (i, &x) in input.iter().enumerate() {
            // zero inputs contribute nothing; skipping them keeps zero embeddings cheap
            if x == 0.0 {
                continue;
            }
            let row = &self.w_hidden[i * h..(i + 1) * h];
            for (z, &w) in pre.iter_mut().zip(row) {
                *z += x * w;
            }
        }

        let dropout_scale: Vec<f64> = match mode {
            Mode::Infer => vec![1.0; h],
            Mode::Train(rng) => {
                if self.dropout_rate == 0.0 {
                    vec![1.0; h]
                } else {
                    let keep = 1.0 / (1.0 - self.dropout_rate);
                    (0..h)
                        .map(|_| {
                            if rng.gen::<f64>() < self.dropout_rate {
                                0.0
                            } else {
                                keep
                            }
                        })
                        .collect()
                }
            }
        };
        let hidden_out: Vec<f64> = pre
            .iter()
            .zip(&dropout_scale)
            .map(|(&z, &s)| if z > 0.0 { z * s } else { 0.0 })
            .collect();

        let mut out = [0.0; N_OUTPUTS];
        out.copy_from_slice(&self.b_out);
        for (j, &a) in hidden_out.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.w_out[j * N_OUTPUTS..(j + 1) * N_OUTPUTS];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += a * w;
            }
        }

        let cache = ForwardCache {
            generation: self.generation,
            input,
            pre_activation: pre,
            hidden_out,
            dropout_scale,
        };
        Ok((out, cache))
    }

    pub fn predict_one(&self, embedding: &[f64], features: [f64; N_FEATURES]) -> Result<[f64; N_OUTPUTS], ModelError> {
        self.forward(embedding, features, Mode::Infer).map(|(y, _)| y)
    }

    /// Gradients of `output · grad_out` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_out: [f64; N_OUTPUTS]) -> Result<FusionGrads, ModelError> {
        let mut grads = FusionGrads::zeros_like(self);
        self.accumulate_backward(cache, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into `grads`.
    pub fn accumulate_backward(
        &self,
        cache: &ForwardCache,
        grad_out: [f64; N_OUTPUTS],
        grads: &mut FusionGrads,
    ) -> Result<(), ModelError> {
        if cache.generation != self.generation
            || cache.input.len() != self.n_inputs()
            || cache.hidden_out.len() != self.hidden
        {
            return Err(ModelError::StaleCache);
        }
        let h = self.hidden;
        for (g, d) in grads.b_out.iter_mut().zip(grad_out) {
            *g += d;
        }
        let mut grad_pre = vec![0.0; h];
        for (j, gp) in grad_pre.iter_mut().enumerate() {
            let a = cache.hidden_out[j];
            let w_row = &self.w_out[j * N_OUTPUTS..(j + 1) * N_OUTPUTS];
            if a != 0.0 {
                let g_row = &mut grads.w_out[j * N_OUTPUTS..(j + 1) * N_OUTPUTS];
                for (g, d) in g_row.iter_mut().zip(grad_out) {
                    *g += a * d;
                }
            }
            if cache.pre_activation[j] > 0.0 && cache.dropout_scale[j] != 0.0 {
                let upstream: f64 = w_row.iter().zip(grad_out).map(|(w, d)| w * d).sum();
                *gp = upstream * cache.dropout_scale[j];
            }
        }
        for (g, d) in grads.b_hidden.iter_mut().zip(&grad_pre) {
            *g += d;
        }
        for (i, &x) in cache.input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let g_row = &mut grads.w_hidden[i * h..(i + 1) * h];
            for (g, d) in g_row.iter_mut().zip(&grad_pre) {
                *g += x * d;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;

    fn hand_model() -> FusionModel {
        // dim 2, hidden 2: inputs [e0, e1, tok, char, rel]
        FusionModel::from_parts(
            2,
            2,
            0.0,
            vec![0.5, -1.0, 0.25, 0.0, -0.5, 0.5, 0.1, 0.2, 1.0, -1.0],
            vec![0.1, -0.2],
            vec![1.0, 0.0, -1.0, 2.0, 0.5, 1.0, 0.0, -3.0],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_pass_bias_through() {
        let mut m = FusionModel::zeros(3, 4, 0.5).unwrap();
        m.param_slots()[3].values.copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let y = m.predict_one(&[0.3, -1.0, 2.0], [2.0, 6.0, 0.5]).unwrap();
        assert_eq!(y, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn hand_computed_forward() {
        let m = hand_model();
        let e = [1.0, 2.0];
        let f = [1.0, 3.0, 0.5];
        // z0 = 0.1 + 1*0.5 + 2*0.25 + 1*(-0.5) + 3*0.1 + 0.5*1.0 = 1.4
        // z1 = -0.2 + 1*(-1) + 2*0 + 1*0.5 + 3*0.2 + 0.5*(-1) = -0.6 -> relu 0
        // y = b_out + 1.4 * w_out[0]
        let y = m.predict_one(&e, f).unwrap();
        let expected = [1.0 + 1.4, 2.0, 3.0 - 1.4, 4.0 + 2.8];
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{y:?}");
        }
    }

    #[test]
    fn infer_is_repeatable() {
        let streams = SeedStreams::new(3);
        let m = FusionModel::initialized(4, 16, 0.5, &mut streams.stream("init")).unwrap();
        let a = m.predict_one(&[0.1, 0.2, -0.3, 0.4], [1.0, 5.0, 0.8]).unwrap();
        let b = m.predict_one(&[0.1, 0.2, -0.3, 0.4], [1.0, 5.0, 0.8]).unwrap();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn dim_mismatch() {
        let m = hand_model();
        assert!(matches!(
            m.predict_one(&[1.0], [1.0, 1.0, 1.0]),
            Err(ModelError::DimMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let m = hand_model();
        let (_, cache) = m.forward(&[1.0, 2.0], [1.0, 3.0, 0.5], Mode::Infer).unwrap();
        let g = m.backward(&cache, [0.0; 4]).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m = hand_model();
        let (_, cache) = m.forward(&[1.0, 2.0], [1.0, 3.0, 0.5], Mode::Infer).unwrap();
        m.param_slots()[0].values[0] += 1.0;
        assert!(matches!(m.backward(&cache, [1.0; 4]), Err(ModelError::StaleCache)));
        let other = FusionModel::zeros(1, 2, 0.0).unwrap();
        assert!(matches!(other.backward(&cache, [1.0; 4]), Err(ModelError::StaleCache)));
    }

    #[test]
    fn dropped_unit_receives_no_gradient() {
        let streams = SeedStreams::new(11);
        let mut b = FusionModel::initialized(3, 32, 0.5, &mut streams.stream("init")).unwrap();
        b.param_slots()[1].values.fill(1.0); // every unit active before dropout
        let mut rng = streams.stream("dropout");
        let (_, cache) = b.forward(&[0.5, -0.5, 0.25], [1.0, 4.0, 1.0], Mode::Train(&mut rng)).unwrap();
        let dropped: Vec<usize> = (0..32).filter(|&j| cache.dropout_scale()[j] == 0.0).collect();
        assert!(!dropped.is_empty() && dropped.len() < 32);
        let g = b.backward(&cache, [1.0, -2.0, 0.5, 3.0]).unwrap();
        for &j in &dropped {
            assert!(g.w_out[j * 4..(j + 1) * 4].iter().all(|&v| v == 0.0));
            assert_eq!(g.b_hidden[j], 0.0);
            for i in 0..b.n_inputs() {
                assert_eq!(g.w_hidden[i * 32 + j], 0.0);
            }
        }
        let kept = (0..32).find(|j| !dropped.contains(j)).unwrap();
        assert!(g.w_out[kept * 4..(kept + 1) * 4].iter().any(|&v| v != 0.0));
        assert!(cache.dropout_scale().iter().all(|&s| s == 0.0 || s == 2.0));
    }

    #[test]
    fn infer_mode_consumes_no_randomness() {
        let m = hand_model();
        let (y1, _) = m.forward(&[1.0, 2.0], [1.0, 3.0, 0.5], Mode::Infer).unwrap();
        let mut rng = SeedStreams::new(0).stream("dropout");
        // dropout 0 in train mode matches infer exactly
        let (y2, _) = m.forward(&[1.0, 2.0], [1.0, 3.0, 0.5], Mode::Train(&mut rng)).unwrap();
        assert_eq!(y1, y2);
    }
}
