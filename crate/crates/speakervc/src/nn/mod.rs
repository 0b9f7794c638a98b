//! Minimal deterministic neural-network substrate: row-major matrices,
//! parameters with Adam state, and the layer set the models need (dense,
//! LSTM, dilated 1-D convolution, statistics pooling). Every layer
//! provides an explicit backward pass; training is single-threaded and
//! bit-reproducible given a seed.

use rand::Rng;
#[cfg(test)]
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Deterministic 8-lane unrolled dot product.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let base = i * 8;
        for (l, acc_l) in acc.iter_mut().enumerate() {
            *acc_l += a[base + l] * b[base + l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Trainable parameter bundle: weights, gradient accumulator and Adam
/// moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f32>,
    pub g: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Param {
    /// Uniform init in +-1/sqrt(cols).
    pub fn seeded(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (cols.max(1) as f32).sqrt();
        let w = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Param {
            rows,
            cols,
            w,
            g: vec![0.0; rows * cols],
            m: vec![0.0; rows * cols],
            v: vec![0.0; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            g: vec![0.0; rows * cols],
            m: vec![0.0; rows * cols],
            v: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn w_row(&self, r: usize) -> &[f32] {
        &self.w[r * self.cols..(r + 1) * self.cols]
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Adam optimizer; `step` applies and clears accumulated gradients.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: u64,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            for i in 0..p.w.len() {
                let g = p.g[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                p.w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.zero_grad();
        }
    }
}

const LEAKY_SLOPE: f32 = 0.1;

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected layer, y = W x + b, applied row-wise to sequences.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param, // out x in
    pub b: Param, // out x 1
}

impl Dense {
    pub fn seeded(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: Param::seeded(out_dim, in_dim, rng),
            b: Param::zeros(out_dim, 1),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward_vec(&self, x: &[f32]) -> Vec<f32> {
        (0..self.w.rows)
            .map(|o| dot(self.w.w_row(o), x) + self.b.w[o])
            .collect()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = Mat::zeros(x.rows, self.w.rows);
        for t in 0..x.rows {
            let xr = x.row(t);
            let yr = y.row_mut(t);
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = dot(self.w.w_row(o), xr) + self.b.w[o];
            }
        }
        y
    }

    /// Accumulates parameter gradients; returns dL/dx.
    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        let in_dim = self.w.cols;
        let mut dx = Mat::zeros(x.rows, in_dim);
        for t in 0..x.rows {
            let xr = x.row(t);
            let dyr = dy.row(t);
            for (o, &d) in dyr.iter().enumerate() {
                self.b.g[o] += d;
                axpy(d, xr, &mut self.w.g[o * in_dim..(o + 1) * in_dim]);
                axpy(d, self.w.w_row(o), dx.row_mut(t));
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
}

/// Single unidirectional LSTM layer.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub wx: Param, // 4h x in
    pub wh: Param, // 4h x h
    pub b: Param,  // 4h x 1
    pub hidden: usize,
}

/// Cached activations for one LSTM layer forward pass.
pub struct LstmCache {
    gates: Mat,  // T x 4h (post-nonlinearity i, f, g, o)
    cells: Mat,  // T x h
    tanh_c: Mat, // T x h
    hidden_seq: Mat,
}

impl LstmLayer {
    pub fn seeded(hidden: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = LstmLayer {
            wx: Param::seeded(4 * hidden, in_dim, rng),
            wh: Param::seeded(4 * hidden, hidden, rng),
            b: Param::zeros(4 * hidden, 1),
            hidden,
        };
        // forget-gate bias starts at 1
        for i in hidden..2 * hidden {
            layer.b.w[i] = 1.0;
        }
        layer
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LstmCache) {
        let t_len = x.rows;
        let h = self.hidden;
        let mut gates = Mat::zeros(t_len, 4 * h);
        let mut cells = Mat::zeros(t_len, h);
        let mut tanh_c = Mat::zeros(t_len, h);
        let mut out = Mat::zeros(t_len, h);
        let mut h_prev = vec![0.0f32; h];
        let mut c_prev = vec![0.0f32; h];
        for t in 0..t_len {
            let xr = x.row(t);
            let g_row = gates.row_mut(t);
            for (j, gj) in g_row.iter_mut().enumerate() {
                *gj = dot(self.wx.w_row(j), xr) + dot(self.wh.w_row(j), &h_prev) + self.b.w[j];
            }
            for j in 0..h {
                let i_g = sigmoid(g_row[j]);
                let f_g = sigmoid(g_row[h + j]);
                let g_g = g_row[2 * h + j].tanh();
                let o_g = sigmoid(g_row[3 * h + j]);
                g_row[j] = i_g;
                g_row[h + j] = f_g;
                g_row[2 * h + j] = g_g;
                g_row[3 * h + j] = o_g;
                let c = f_g * c_prev[j] + i_g * g_g;
                let tc = c.tanh();
                cells.row_mut(t)[j] = c;
                tanh_c.row_mut(t)[j] = tc;
                out.row_mut(t)[j] = o_g * tc;
            }
            h_prev.copy_from_slice(out.row(t));
            c_prev.copy_from_slice(cells.row(t));
        }
        let hidden_seq = out.clone();
        (
            out,
            LstmCache {
                gates,
                cells,
                tanh_c,
                hidden_seq,
            },
        )
    }

    /// BPTT backward; accumulates parameter gradients, returns dL/dx.
    pub fn backward(&mut self, x: &Mat, cache: &LstmCache, d_out: &Mat) -> Mat {
        let t_len = x.rows;
        let h = self.hidden;
        let in_dim = self.wx.cols;
        let mut dx = Mat::zeros(t_len, in_dim);
        let mut dh_next = vec![0.0f32; h];
        let mut dc_next = vec![0.0f32; h];
        let mut dz = vec![0.0f32; 4 * h];
        for t in (0..t_len).rev() {
            let gates = cache.gates.row(t);
            let tanh_c = cache.tanh_c.row(t);
            let c_prev: &[f32] = if t == 0 {
                &[]
            } else {
                cache.cells.row(t - 1)
            };
            let h_prev: &[f32] = if t == 0 {
                &[]
            } else {
                cache.hidden_seq.row(t - 1)
            };
            for j in 0..h {
                let dh = d_out.row(t)[j] + dh_next[j];
                let i_g = gates[j];
                let f_g = gates[h + j];
                let g_g = gates[2 * h + j];
                let o_g = gates[3 * h + j];
                let tc = tanh_c[j];
                let d_o = dh * tc;
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                let cp = if t == 0 { 0.0 } else { c_prev[j] };
                let d_i = dc * g_g;
                let d_f = dc * cp;
                let d_g = dc * i_g;
                dc_next[j] = dc * f_g;
                dz[j] = d_i * i_g * (1.0 - i_g);
                dz[h + j] = d_f * f_g * (1.0 - f_g);
                dz[2 * h + j] = d_g * (1.0 - g_g * g_g);
                dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }
            let xr = x.row(t);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (j, &dzj) in dz.iter().enumerate() {
                self.b.g[j] += dzj;
                axpy(dzj, xr, &mut self.wx.g[j * in_dim..(j + 1) * in_dim]);
                if t > 0 {
                    axpy(dzj, h_prev, &mut self.wh.g[j * h..(j + 1) * h]);
                    axpy(dzj, self.wh.w_row(j), &mut dh_next);
                } else {
                    axpy(dzj, self.wh.w_row(j), &mut dh_next);
                }
                axpy(dzj, self.wx.w_row(j), dx.row_mut(t));
            }
            if t == 0 {
                // dh_next flowing before t=0 is discarded
            }
        }
        dx
    }
}

/// Stacked unidirectional LSTM.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

pub struct LstmStackCache {
    inputs: Vec<Mat>,
    caches: Vec<LstmCache>,
}

impl Lstm {
    pub fn seeded(n_layers: usize, hidden: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let d = if l == 0 { in_dim } else { hidden };
            layers.push(LstmLayer::seeded(hidden, d, rng));
        }
        Lstm { layers }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LstmStackCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            inputs.push(cur.clone());
            let (out, cache) = layer.forward(&cur);
            caches.push(cache);
            cur = out;
        }
        (cur, LstmStackCache { inputs, caches })
    }

    pub fn backward(&mut self, cache: &LstmStackCache, d_out: &Mat) -> Mat {
        let mut grad = d_out.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            grad = layer.backward(&cache.inputs[idx], &cache.caches[idx], &grad);
        }
        grad
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| vec![&mut l.wx, &mut l.wh, &mut l.b])
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| vec![&l.wx, &l.wh, &l.b])
            .collect()
    }
}

/// Dilated same-length 1-D convolution over frame sequences (a TDNN
/// layer), with optional leaky ReLU (slope 0.1).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Param, // (k*out) x in, tap-major
    pub b: Param, // out x 1
    pub kernel: usize,
    pub dilation: usize,
    pub relu: bool,
    out_dim: usize,
    in_dim: usize,
}

impl Conv1d {
    pub fn seeded(
        out_dim: usize,
        in_dim: usize,
        kernel: usize,
        dilation: usize,
        relu: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut w = Param::seeded(kernel * out_dim, in_dim, rng);
        // scale down by kernel size so the fan-in matches
        let scale = 1.0 / (kernel as f32).sqrt();
        w.w.iter_mut().for_each(|v| *v *= scale);
        Conv1d {
            w,
            b: Param::zeros(out_dim, 1),
            kernel,
            dilation,
            relu,
            out_dim,
            in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        debug_assert_eq!(x.cols, self.in_dim);
        let t_len = x.rows;
        let half = (self.kernel / 2) as isize;
        let mut y = Mat::zeros(t_len, self.out_dim);
        for t in 0..t_len {
            let yr = y.row_mut(t);
            yr.copy_from_slice(&self.b.w);
            for j in 0..self.kernel {
                let u = t as isize + (j as isize - half) * self.dilation as isize;
                if u < 0 || u >= t_len as isize {
                    continue;
                }
                let xr = x.row(u as usize);
                for (o, yo) in yr.iter_mut().enumerate() {
                    *yo += dot(self.w.w_row(j * self.out_dim + o), xr);
                }
            }
            if self.relu {
                yr.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                });
            }
        }
        y
    }

    /// Backward from dL/dy; `y` must be the forward output (used for the
    /// ReLU mask). Accumulates parameter gradients, returns dL/dx.
    pub fn backward(&mut self, x: &Mat, y: &Mat, dy: &Mat) -> Mat {
        let t_len = x.rows;
        let half = (self.kernel / 2) as isize;
        let mut dx = Mat::zeros(t_len, self.in_dim);
        let mut drow = vec![0.0f32; self.out_dim];
        for t in 0..t_len {
            let dyr = dy.row(t);
            let yr = y.row(t);
            for o in 0..self.out_dim {
                let mut d = dyr[o];
                if self.relu && yr[o] <= 0.0 {
                    d *= LEAKY_SLOPE;
                }
                drow[o] = d;
                self.b.g[o] += d;
            }
            for j in 0..self.kernel {
                let u = t as isize + (j as isize - half) * self.dilation as isize;
                if u < 0 || u >= t_len as isize {
                    continue;
                }
                let xr = x.row(u as usize);
                let dxr = dx.row_mut(u as usize);
                for (o, &d) in drow.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = j * self.out_dim + o;
                    axpy(d, xr, &mut self.w.g[row * self.in_dim..(row + 1) * self.in_dim]);
                    axpy(d, self.w.w_row(row), dxr);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
}

/// Statistics pooling: per-channel mean and stddev over time.
pub struct StatsPool;

const STATS_EPS: f32 = 1e-5;

impl StatsPool {
    /// (T x C) -> 2C vector [mean || stddev].
    pub fn forward(x: &Mat) -> Vec<f32> {
        let t_len = x.rows.max(1);
        let c = x.cols;
        let mut out = vec![0.0f32; 2 * c];
        for t in 0..x.rows {
            axpy(1.0, x.row(t), &mut out[..c]);
        }
        out[..c].iter_mut().for_each(|v| *v /= t_len as f32);
        for t in 0..x.rows {
            let xr = x.row(t);
            for j in 0..c {
                let d = xr[j] - out[j];
                out[c + j] += d * d;
            }
        }
        for j in 0..c {
            out[c + j] = (out[c + j] / t_len as f32 + STATS_EPS).sqrt();
        }
        out
    }

    /// Backward from dL/d[mean||std]; returns dL/dx.
    pub fn backward(x: &Mat, pooled: &[f32], d_pooled: &[f32]) -> Mat {
        let t_len = x.rows.max(1) as f32;
        let c = x.cols;
        let mut dx = Mat::zeros(x.rows, c);
        for t in 0..x.rows {
            let xr = x.row(t);
            let dxr = dx.row_mut(t);
            for j in 0..c {
                let mean = pooled[j];
                let std = pooled[c + j];
                dxr[j] = d_pooled[j] / t_len + d_pooled[c + j] * (xr[j] - mean) / (t_len * std);
            }
        }
        dx
    }
}

/// Softmax cross-entropy over rows of `logits` against integer labels.
/// Returns (mean loss, dL/dlogits).
pub fn softmax_cross_entropy(logits: &Mat, labels: &[u32]) -> (f64, Mat) {
    assert_eq!(logits.rows, labels.len());
    let k = logits.cols;
    let mut dlogits = Mat::zeros(logits.rows, k);
    let mut loss = 0.0f64;
    let scale = 1.0 / logits.rows.max(1) as f32;
    for t in 0..logits.rows {
        let row = logits.row(t);
        let maxv = row.iter().cloned().fold(f32::MIN, f32::max);
        let mut denom = 0.0f64;
        for &v in row {
            denom += ((v - maxv) as f64).exp();
        }
        let label = labels[t] as usize;
        loss += denom.ln() - (row[label] - maxv) as f64;
        let drow = dlogits.row_mut(t);
        for j in 0..k {
            let p = (((row[j] - maxv) as f64).exp() / denom) as f32;
            drow[j] = (p - if j == label { 1.0 } else { 0.0 }) * scale;
        }
    }
    (loss / logits.rows.max(1) as f64, dlogits)
}

/// Mean absolute error over all elements. Returns (loss, dL/dpred).
pub fn l1_loss(pred: &Mat, target: &Mat) -> (f64, Mat) {
    assert_eq!(pred.rows, target.rows);
    assert_eq!(pred.cols, target.cols);
    let n = pred.data.len().max(1) as f64;
    let mut dpred = Mat::zeros(pred.rows, pred.cols);
    let mut loss = 0.0f64;
    for i in 0..pred.data.len() {
        let d = (pred.data[i] - target.data[i]) as f64;
        loss += d.abs();
        dpred.data[i] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        } / n as f32;
    }
    (loss / n, dpred)
}

/// Argmax accuracy of logits rows against labels.
pub fn argmax_accuracy(logits: &Mat, labels: &[u32]) -> f64 {
    if logits.rows == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    for t in 0..logits.rows {
        let row = logits.row(t);
        let arg = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if arg as u32 == labels[t] {
            hits += 1;
        }
    }
    hits as f64 / logits.rows as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_mat(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Mat {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
    }

    /// Scalar loss = weighted sum of outputs; checks dL/dparam and dL/dx
    /// against central finite differences.
    fn check_param_grad<F>(param_w: &mut Vec<f32>, analytic: &[f32], mut eval: F, tol: f32)
    where
        F: FnMut(&Vec<f32>) -> f32,
    {
        let h = 1e-2f32;
        let idxs: Vec<usize> = (0..param_w.len()).step_by((param_w.len() / 24).max(1)).collect();
        for &i in &idxs {
            let orig = param_w[i];
            param_w[i] = orig + h;
            let up = eval(param_w);
            param_w[i] = orig - h;
            let down = eval(param_w);
            param_w[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let diff = (numeric - analytic[i]).abs();
            let scale = numeric.abs().max(analytic[i].abs()).max(1.0);
            assert!(
                diff / scale < tol,
                "idx {i}: numeric {numeric}, analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut r = rng(1);
        let x = rand_mat(5, 7, &mut r);
        let weight = rand_mat(5, 4, &mut r); // loss weights, T x out
        let mut layer = Dense::seeded(4, 7, &mut r);
        let loss_of = |l: &Dense| -> f32 {
            let y = l.forward(&x);
            let mut s = 0.0;
            for t in 0..y.rows {
                s += dot(y.row(t), weight.row(t));
            }
            s
        };
        let y = layer.forward(&x);
        let dy = weight.clone();
        let dx = layer.backward(&x, &dy);
        let _ = y;

        let analytic_w = layer.w.g.clone();
        let mut w = layer.w.w.clone();
        let l2 = layer.clone();
        check_param_grad(
            &mut w,
            &analytic_w,
            |wv| {
                let mut l = l2.clone();
                l.w.w = wv.clone();
                loss_of(&l)
            },
            2e-2,
        );

        // input gradient
        let h = 1e-2f32;
        for i in (0..x.data.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let numeric = (loss_of_x(&layer, &xp, &weight) - loss_of_x(&layer, &xm, &weight))
                / (2.0 * h);
            let diff = (numeric - dx.data[i]).abs();
            assert!(diff < 2e-2 * numeric.abs().max(1.0), "dx idx {i}");
        }

        fn loss_of_x(l: &Dense, x: &Mat, weight: &Mat) -> f32 {
            let y = l.forward(x);
            let mut s = 0.0;
            for t in 0..y.rows {
                s += dot(y.row(t), weight.row(t));
            }
            s
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut r = rng(2);
        let x = rand_mat(6, 5, &mut r);
        let weight = rand_mat(6, 4, &mut r);
        let layer = LstmLayer::seeded(4, 5, &mut r);
        let loss_of = |l: &LstmLayer, x: &Mat| -> f32 {
            let (y, _) = l.forward(x);
            let mut s = 0.0;
            for t in 0..y.rows {
                s += dot(y.row(t), weight.row(t));
            }
            s
        };
        let mut work = layer.clone();
        let (_, cache) = work.forward(&x);
        let dx = work.backward(&x, &cache, &weight);

        let analytic_wx = work.wx.g.clone();
        let mut w = layer.wx.w.clone();
        check_param_grad(
            &mut w,
            &analytic_wx,
            |wv| {
                let mut l = layer.clone();
                l.wx.w = wv.clone();
                loss_of(&l, &x)
            },
            3e-2,
        );

        let analytic_wh = work.wh.g.clone();
        let mut w = layer.wh.w.clone();
        check_param_grad(
            &mut w,
            &analytic_wh,
            |wv| {
                let mut l = layer.clone();
                l.wh.w = wv.clone();
                loss_of(&l, &x)
            },
            3e-2,
        );

        let h = 1e-2f32;
        for i in (0..x.data.len()).step_by(4) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let numeric = (loss_of(&layer, &xp) - loss_of(&layer, &xm)) / (2.0 * h);
            let diff = (numeric - dx.data[i]).abs();
            assert!(
                diff < 3e-2 * numeric.abs().max(1.0),
                "dx idx {i}: numeric {numeric} analytic {}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut r = rng(3);
        let x = rand_mat(9, 6, &mut r);
        let weight = rand_mat(9, 5, &mut r);
        let layer = Conv1d::seeded(5, 6, 3, 2, true, &mut r);
        let loss_of = |l: &Conv1d, x: &Mat| -> f32 {
            let y = l.forward(x);
            let mut s = 0.0;
            for t in 0..y.rows {
                s += dot(y.row(t), weight.row(t));
            }
            s
        };
        let mut work = layer.clone();
        let y = work.forward(&x);
        let dx = work.backward(&x, &y, &weight);

        let analytic_w = work.w.g.clone();
        let mut w = layer.w.w.clone();
        check_param_grad(
            &mut w,
            &analytic_w,
            |wv| {
                let mut l = layer.clone();
                l.w.w = wv.clone();
                loss_of(&l, &x)
            },
            3e-2,
        );

        let h = 1e-2f32;
        for i in (0..x.data.len()).step_by(3) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let numeric = (loss_of(&layer, &xp) - loss_of(&layer, &xm)) / (2.0 * h);
            let diff = (numeric - dx.data[i]).abs();
            assert!(diff < 4e-2 * numeric.abs().max(1.0), "dx idx {i}");
        }
    }

    #[test]
    fn stats_pool_gradients_match_finite_differences() {
        let mut r = rng(4);
        let x = rand_mat(7, 3, &mut r);
        let weight: Vec<f32> = (0..6).map(|_| r.random_range(-1.0..1.0f32)).collect();
        let loss_of = |x: &Mat| -> f32 { dot(&StatsPool::forward(x), &weight) };
        let pooled = StatsPool::forward(&x);
        let dx = StatsPool::backward(&x, &pooled, &weight);
        let h = 1e-3f32;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let numeric = (loss_of(&xp) - loss_of(&xm)) / (2.0 * h);
            assert!(
                (numeric - dx.data[i]).abs() < 3e-2 * numeric.abs().max(0.5),
                "idx {i}: numeric {numeric} analytic {}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn softmax_ce_decreases_under_gradient_steps() {
        let mut r = rng(5);
        let x = rand_mat(64, 8, &mut r);
        // linearly separable labels so the loss can actually go down
        let rule = rand_mat(5, 8, &mut r);
        let labels: Vec<u32> = (0..64)
            .map(|t| {
                (0..5)
                    .max_by(|&a, &b| {
                        dot(rule.row(a), x.row(t))
                            .partial_cmp(&dot(rule.row(b), x.row(t)))
                            .unwrap()
                    })
                    .unwrap() as u32
            })
            .collect();
        let mut layer = Dense::seeded(5, 8, &mut r);
        let mut opt = Adam::new(0.05);
        let (first, _) = softmax_cross_entropy(&layer.forward(&x), &labels);
        let mut last = first;
        for _ in 0..50 {
            let y = layer.forward(&x);
            let (loss, dy) = softmax_cross_entropy(&y, &labels);
            layer.backward(&x, &dy);
            opt.step(&mut layer.params_mut());
            last = loss;
        }
        assert!(last < first * 0.5, "first {first}, last {last}");
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut r = rng(6);
            let x = rand_mat(16, 4, &mut r);
            let labels: Vec<u32> = (0..16).map(|_| r.random_range(0..3u32)).collect();
            let mut layer = Dense::seeded(3, 4, &mut r);
            let mut opt = Adam::new(0.01);
            for _ in 0..10 {
                let y = layer.forward(&x);
                let (_, dy) = softmax_cross_entropy(&y, &labels);
                layer.backward(&x, &dy);
                opt.step(&mut layer.params_mut());
            }
            layer.w.w
        };
        assert_eq!(run(), run());
    }
}
