//! Fully connected dueling Q-network with hand-written backpropagation.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// One affine layer, `y = x W + b` with `W` stored `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-limit..limit));
        Dense {
            w,
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// ReLU trunk followed by a scalar value head and an advantage head,
/// combined as `Q = V + A - mean(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub hidden: Vec<Dense>,
    pub value: Dense,
    pub advantage: Dense,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input batch, `acts[k]` the output of hidden layer `k`.
    pub acts: Vec<Array2<f64>>,
    pub q: Array2<f64>,
}

/// Result of one loss evaluation.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    /// `Q(s, a) - target` per sample.
    pub td_errors: Vec<f64>,
    pub grads: QNetwork,
}

pub fn huber(e: f64) -> f64 {
    if e.abs() <= 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

fn huber_grad(e: f64) -> f64 {
    e.clamp(-1.0, 1.0)
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], actions: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = inputs;
        for &h in hidden {
            layers.push(Dense::glorot(width, h, rng));
            width = h;
        }
        QNetwork {
            hidden: layers,
            value: Dense::glorot(width, 1, rng),
            advantage: Dense::glorot(width, actions, rng),
        }
    }

    /// Same shapes, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.inputs(), d.outputs());
        QNetwork {
            hidden: self.hidden.iter().map(z).collect(),
            value: z(&self.value),
            advantage: z(&self.advantage),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.value).inputs()
    }

    pub fn num_actions(&self) -> usize {
        self.advantage.outputs()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.hidden.iter().map(Dense::outputs).collect()
    }

    /// Layers in serialization order: trunk, value head, advantage head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain([&self.value, &self.advantage])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain([&mut self.value, &mut self.advantage])
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::num_params).sum()
    }

    /// All parameters in serialization order, each matrix row-major.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Inverse of [`QNetwork::params_flat`].
    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.num_params()),
                found: format!("{}", values.len()),
            });
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            l.w.iter_mut()
                .chain(l.b.iter_mut())
                .for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("observation of length {}", self.input_dim()),
                found: format!("length {width}"),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.hidden {
            let mut z = layer.apply(acts.last().unwrap().view());
            z.mapv_inplace(|v| v.max(0.0));
            acts.push(z);
        }
        let h = acts.last().unwrap().view();
        let v = self.value.apply(h);
        let mut a = self.advantage.apply(h);
        let mean = a.mean_axis(Axis(1)).expect("non-empty action set");
        Zip::from(a.rows_mut())
            .and(&mean)
            .and(v.column(0))
            .for_each(|mut row, &mu, &val| row.mapv_inplace(|x| x - mu + val));
        Ok(ForwardCache { acts, q: a })
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.q)
    }

    pub fn forward(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, observation.len()), observation).expect("contiguous slice");
        Ok(self.forward_batch(x)?.row(0).to_vec())
    }

    /// Mean importance-weighted Huber loss between `Q(s_i, a_i)` and
    /// `targets[i]`, with gradients for every parameter.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
        weights: &[f64],
    ) -> Result<Backward> {
        let batch = x.nrows();
        if batch == 0 || actions.len() != batch || targets.len() != batch || weights.len() != batch {
            return Err(Error::ShapeMismatch {
                expected: format!("{batch} actions, targets and weights (batch > 0)"),
                found: format!("{} / {} / {}", actions.len(), targets.len(), weights.len()),
            });
        }
        let na = self.num_actions();
        if let Some(&a) = actions.iter().find(|&&a| a >= na) {
            return Err(Error::InvalidArgument(format!("action {a} outside 0..{na}")));
        }
        let cache = self.forward_cached(x)?;
        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut td = Vec::with_capacity(batch);
        let mut g_q = Array2::<f64>::zeros((batch, na));
        for i in 0..batch {
            let e = cache.q[[i, actions[i]]] - targets[i];
            td.push(e);
            loss += weights[i] * huber(e) * scale;
            g_q[[i, actions[i]]] = weights[i] * huber_grad(e) * scale;
        }
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence {
                episode: 0,
                update: 0,
                detail: format!("non-finite loss {loss}"),
            });
        }

        // through Q = V + A - mean(A)
        let g_v = g_q.sum_axis(Axis(1));
        let mut g_a = g_q;
        let inv = 1.0 / na as f64;
        Zip::from(g_a.rows_mut())
            .and(&g_v)
            .for_each(|mut row, &sv| row.mapv_inplace(|g| g - sv * inv));
        let g_v = g_v.insert_axis(Axis(1));

        let mut grads = self.zeros_like();
        let h = cache.acts.last().unwrap();
        grads.value.w = h.t().dot(&g_v);
        grads.value.b = g_v.sum_axis(Axis(0));
        grads.advantage.w = h.t().dot(&g_a);
        grads.advantage.b = g_a.sum_axis(Axis(0));
        let mut g_h = g_v.dot(&self.value.w.t()) + g_a.dot(&self.advantage.w.t());

        for k in (0..self.hidden.len()).rev() {
            let out = &cache.acts[k + 1];
            Zip::from(&mut g_h).and(out).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
            let input = &cache.acts[k];
            grads.hidden[k].w = input.t().dot(&g_h);
            grads.hidden[k].b = g_h.sum_axis(Axis(0));
            if k > 0 {
                g_h = g_h.dot(&self.hidden[k].w.t());
            }
        }
        Ok(Backward {
            loss,
            td_errors: td,
            grads,
        })
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Largest value of every row.
pub fn row_max(q: &Array2<f64>) -> Vec<f64> {
    q.rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Copies observation rows into one contiguous batch.
pub fn stack_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f32]>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let mut out = Array2::zeros((n, width));
    for (i, r) in rows.enumerate() {
        out.slice_mut(s![i, ..])
            .iter_mut()
            .zip(r)
            .for_each(|(o, &v)| *o = v as f64);
    }
    out
}
