//! Same-padded 1-D convolution and batch normalization.

use super::{NnError, Real, Tensor3};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

/// Stride-1 convolution whose output length equals its input length.
///
/// Zero padding is `(K - 1) / 2` on the left and the rest on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<R> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    /// `(out_ch, in_ch, kernel)` row-major.
    pub weight: Vec<R>,
    pub bias: Vec<R>,
}

impl<R: Real> Conv1d<R> {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            kernel,
            weight: vec![R::zero(); out_ch * in_ch * kernel],
            bias: vec![R::zero(); out_ch],
        }
    }

    /// He-uniform weights, zero bias.
    pub fn he_uniform(out_ch: usize, in_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let mut c = Self::zeros(out_ch, in_ch, kernel);
        let bound = (6.0 / (in_ch * kernel) as f64).sqrt();
        for w in &mut c.weight {
            *w = R::lit(rng.gen_range(-bound..bound));
        }
        c
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn check_input(&self, x: &Tensor3<R>) -> Result<(), NnError> {
        if x.channels() != self.in_ch {
            return Err(NnError::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Lays one item's `(in_ch, T)` plane out as `(in_ch * K, T)` columns.
    fn im2col(&self, x: &[R], len: usize, cols: &mut [R]) {
        let pl = self.pad_left() as isize;
        for i in 0..self.in_ch {
            let src = &x[i * len..(i + 1) * len];
            for k in 0..self.kernel {
                let row = &mut cols[(i * self.kernel + k) * len..(i * self.kernel + k + 1) * len];
                let shift = k as isize - pl;
                for (t, v) in row.iter_mut().enumerate() {
                    let s = t as isize + shift;
                    *v = if s >= 0 && (s as usize) < len {
                        src[s as usize]
                    } else {
                        R::zero()
                    };
                }
            }
        }
    }

    /// Adds `(in_ch * K, T)` column gradients back onto the input plane.
    fn col2im(&self, cols: &[R], len: usize, dx: &mut [R]) {
        let pl = self.pad_left() as isize;
        for i in 0..self.in_ch {
            let dst = &mut dx[i * len..(i + 1) * len];
            for k in 0..self.kernel {
                let row = &cols[(i * self.kernel + k) * len..(i * self.kernel + k + 1) * len];
                let shift = k as isize - pl;
                let lo = (-shift).max(0) as usize;
                let hi = (len as isize - shift).min(len as isize).max(0) as usize;
                for t in lo..hi {
                    dst[(t as isize + shift) as usize] += row[t];
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor3<R>) -> Result<Tensor3<R>, NnError> {
        self.check_input(x)?;
        let (batch, len) = (x.batch(), x.length());
        let mut y = Tensor3::zeros(batch, self.out_ch, len);
        let ik = self.in_ch * self.kernel;
        let mut cols = if self.kernel == 1 { Vec::new() } else { vec![R::zero(); ik * len] };
        for b in 0..batch {
            let yb = y.item_mut(b);
            for (o, row) in yb.chunks_mut(len).enumerate() {
                row.fill(self.bias[o]);
            }
            let src: &[R] = if self.kernel == 1 {
                x.item(b)
            } else {
                self.im2col(x.item(b), len, &mut cols);
                &cols
            };
            R::gemm(
                self.out_ch,
                ik,
                len,
                R::one(),
                &self.weight,
                (ik, 1),
                src,
                (len, 1),
                R::one(),
                yb,
                (len, 1),
            );
        }
        Ok(y)
    }

    /// Accumulates weight and bias gradients into `grad` and returns the
    /// input gradient when `want_dx` is set.
    pub fn backward(
        &self,
        x: &Tensor3<R>,
        dy: &Tensor3<R>,
        grad: &mut Conv1d<R>,
        want_dx: bool,
    ) -> Option<Tensor3<R>> {
        let (batch, len) = (x.batch(), x.length());
        let ik = self.in_ch * self.kernel;
        let mut dx = want_dx.then(|| Tensor3::zeros(batch, self.in_ch, len));
        let mut cols = if self.kernel == 1 { Vec::new() } else { vec![R::zero(); ik * len] };
        let mut dcols = if self.kernel == 1 || !want_dx {
            Vec::new()
        } else {
            vec![R::zero(); ik * len]
        };
        for b in 0..batch {
            let dyb = dy.item(b);
            for (o, row) in dyb.chunks(len).enumerate() {
                grad.bias[o] += row.iter().copied().sum::<R>();
            }
            let src: &[R] = if self.kernel == 1 {
                x.item(b)
            } else {
                self.im2col(x.item(b), len, &mut cols);
                &cols
            };
            // dW += dY (O x T) * cols^T (T x IK)
            R::gemm(
                self.out_ch,
                len,
                ik,
                R::one(),
                dyb,
                (len, 1),
                src,
                (1, len),
                R::one(),
                &mut grad.weight,
                (ik, 1),
            );
            if let Some(dx) = dx.as_mut() {
                // dcols = W^T (IK x O) * dY (O x T)
                if self.kernel == 1 {
                    R::gemm(
                        ik,
                        self.out_ch,
                        len,
                        R::one(),
                        &self.weight,
                        (1, ik),
                        dyb,
                        (len, 1),
                        R::zero(),
                        dx.item_mut(b),
                        (len, 1),
                    );
                } else {
                    R::gemm(
                        ik,
                        self.out_ch,
                        len,
                        R::one(),
                        &self.weight,
                        (1, ik),
                        dyb,
                        (len, 1),
                        R::zero(),
                        &mut dcols,
                        (len, 1),
                    );
                    self.col2im(&dcols, len, dx.item_mut(b));
                }
            }
        }
        dx
    }
}

/// Per-channel batch normalization over (batch, length).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<R> {
    pub gamma: Vec<R>,
    pub beta: Vec<R>,
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub momentum: R,
    pub eps: R,
}

/// What the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache<R> {
    pub xhat: Tensor3<R>,
    pub inv_std: Vec<R>,
    pub mean: Vec<R>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<R>,
}

impl<R: Real> BatchNorm1d<R> {
    pub fn new(channels: usize, momentum: R, eps: R) -> Self {
        Self {
            gamma: vec![R::one(); channels],
            beta: vec![R::zero(); channels],
            running_mean: vec![R::zero(); channels],
            running_var: vec![R::one(); channels],
            momentum,
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Forward pass without touching the running statistics. Train mode
    /// also returns the cache for [`BatchNorm1d::backward`].
    pub fn forward_stats(
        &self,
        x: &Tensor3<R>,
        mode: Mode,
    ) -> Result<(Tensor3<R>, Option<BnCache<R>>), NnError> {
        let [batch, ch, len] = x.shape();
        if ch != self.channels() {
            return Err(NnError::ShapeMismatch(format!(
                "batch norm over {} channels, got {ch}",
                self.channels()
            )));
        }
        let n = batch * len;
        if mode == Mode::Train && n < 2 {
            return Err(NnError::ShapeMismatch(
                "train-mode batch norm needs batch x length >= 2".into(),
            ));
        }
        let mut y = Tensor3::zeros(batch, ch, len);
        match mode {
            Mode::Infer => {
                for c in 0..ch {
                    let inv = R::one() / (self.running_var[c] + self.eps).sqrt();
                    let scale = self.gamma[c] * inv;
                    let shift = self.beta[c] - self.running_mean[c] * scale;
                    for b in 0..batch {
                        let off = (b * ch + c) * len;
                        for t in 0..len {
                            y.data_mut()[off + t] = x.data()[off + t] * scale + shift;
                        }
                    }
                }
                Ok((y, None))
            }
            Mode::Train => {
                let mut xhat = Tensor3::zeros(batch, ch, len);
                let mut inv_std = vec![R::zero(); ch];
                let mut means = vec![R::zero(); ch];
                let mut vars = vec![R::zero(); ch];
                let nr = R::lit(n as f64);
                for c in 0..ch {
                    let mut sum = R::zero();
                    for b in 0..batch {
                        let off = (b * ch + c) * len;
                        sum += x.data()[off..off + len].iter().copied().sum::<R>();
                    }
                    let mean = sum / nr;
                    let mut ss = R::zero();
                    for b in 0..batch {
                        let off = (b * ch + c) * len;
                        for &v in &x.data()[off..off + len] {
                            ss += (v - mean) * (v - mean);
                        }
                    }
                    let var = ss / nr;
                    let inv = R::one() / (var + self.eps).sqrt();
                    for b in 0..batch {
                        let off = (b * ch + c) * len;
                        for t in 0..len {
                            let h = (x.data()[off + t] - mean) * inv;
                            xhat.data_mut()[off + t] = h;
                            y.data_mut()[off + t] = self.gamma[c] * h + self.beta[c];
                        }
                    }
                    inv_std[c] = inv;
                    means[c] = mean;
                    vars[c] = ss / R::lit((n - 1) as f64);
                }
                Ok((
                    y,
                    Some(BnCache {
                        xhat,
                        inv_std,
                        mean: means,
                        var_unbiased: vars,
                    }),
                ))
            }
        }
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running(&mut self, cache: &BnCache<R>) {
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (R::one() - m) * self.running_mean[c] + m * cache.mean[c];
            self.running_var[c] = (R::one() - m) * self.running_var[c] + m * cache.var_unbiased[c];
        }
    }

    /// Gradient through a train-mode forward. Accumulates `gamma`/`beta`
    /// gradients into `grad` and returns the input gradient.
    pub fn backward(&self, cache: &BnCache<R>, dy: &Tensor3<R>, grad: &mut BatchNorm1d<R>) -> Tensor3<R> {
        let [batch, ch, len] = dy.shape();
        let nr = R::lit((batch * len) as f64);
        let mut dx = Tensor3::zeros(batch, ch, len);
        for c in 0..ch {
            let mut sum_dy = R::zero();
            let mut sum_dy_xhat = R::zero();
            for b in 0..batch {
                let off = (b * ch + c) * len;
                for t in 0..len {
                    let g = dy.data()[off + t];
                    sum_dy += g;
                    sum_dy_xhat += g * cache.xhat.data()[off + t];
                }
            }
            grad.gamma[c] += sum_dy_xhat;
            grad.beta[c] += sum_dy;
            let k = self.gamma[c] * cache.inv_std[c] / nr;
            for b in 0..batch {
                let off = (b * ch + c) * len;
                for t in 0..len {
                    let g = dy.data()[off + t];
                    let h = cache.xhat.data()[off + t];
                    dx.data_mut()[off + t] = k * (nr * g - sum_dy - h * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

/// Same-padded convolution of a `(B, in_ch, T)` batch.
pub fn conv1d_forward<R: Real>(x: &Tensor3<R>, layer: &Conv1d<R>) -> Result<Tensor3<R>, NnError> {
    layer.forward(x)
}

/// Batch normalization; train mode also updates the running statistics.
pub fn batchnorm_forward<R: Real>(
    x: &Tensor3<R>,
    layer: &mut BatchNorm1d<R>,
    mode: Mode,
) -> Result<Tensor3<R>, NnError> {
    let (y, cache) = layer.forward_stats(x, mode)?;
    if let Some(cache) = cache {
        layer.update_running(&cache);
    }
    Ok(y)
}

pub(crate) fn relu_in_place<R: Real>(x: &mut Tensor3<R>) {
    for v in x.data_mut() {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
}

/// Zeroes `grad` where the ReLU output was not positive.
pub(crate) fn relu_mask<R: Real>(out: &Tensor3<R>, grad: &mut Tensor3<R>) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        if o <= R::zero() {
            *g = R::zero();
        }
    }
}
