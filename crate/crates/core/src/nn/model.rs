//! Three residual blocks, global average pooling and a softmax head.

use super::layers::{relu_in_place, relu_mask};
use super::{BatchNorm1d, BnCache, Conv1d, Mode, NnError, Real, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Architecture and batch-norm settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Output channels of the three residual blocks.
    pub filters: [usize; 3],
    /// Kernel sizes of the three convolutions inside every block.
    pub kernels: [usize; 3],
    pub n_classes: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    /// 256/512/512 filters with 8/5/3 kernels.
    pub fn standard(n_classes: usize) -> Self {
        Self::with_filters([256, 512, 512], n_classes)
    }

    pub fn with_filters(filters: [usize; 3], n_classes: usize) -> Self {
        Self {
            filters,
            kernels: [8, 5, 3],
            n_classes,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Shortest input the network accepts: the largest kernel.
    pub fn min_length(&self) -> usize {
        self.kernels.iter().copied().max().unwrap_or(1)
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.filters.contains(&0) || self.kernels.contains(&0) {
            return Err(NnError::BadConfig("filters and kernels must be >= 1".into()));
        }
        if self.n_classes == 0 {
            return Err(NnError::BadConfig("need at least one class".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(NnError::BadConfig("bn_eps > 0 and bn_momentum in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The skip path of a residual block.
#[derive(Debug, Clone, PartialEq)]
pub enum Shortcut<R> {
    Identity,
    Project(Conv1d<R>, BatchNorm1d<R>),
}

/// `relu(bn3(conv3(relu(bn2(conv2(relu(bn1(conv1(x)))))))) + shortcut(x))`
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<R> {
    pub conv1: Conv1d<R>,
    pub bn1: BatchNorm1d<R>,
    pub conv2: Conv1d<R>,
    pub bn2: BatchNorm1d<R>,
    pub conv3: Conv1d<R>,
    pub bn3: BatchNorm1d<R>,
    pub shortcut: Shortcut<R>,
}

struct BlockCache<R> {
    x: Tensor3<R>,
    bn1: BnCache<R>,
    a1: Tensor3<R>,
    bn2: BnCache<R>,
    a2: Tensor3<R>,
    bn3: BnCache<R>,
    bn_sc: Option<BnCache<R>>,
    out: Tensor3<R>,
}

impl<R: Real> ResidualBlock<R> {
    fn new(in_ch: usize, out_ch: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let bn = |c| BatchNorm1d::new(c, R::lit(cfg.bn_momentum), R::lit(cfg.bn_eps));
        let [k1, k2, k3] = cfg.kernels;
        Self {
            conv1: Conv1d::he_uniform(out_ch, in_ch, k1, rng),
            bn1: bn(out_ch),
            conv2: Conv1d::he_uniform(out_ch, out_ch, k2, rng),
            bn2: bn(out_ch),
            conv3: Conv1d::he_uniform(out_ch, out_ch, k3, rng),
            bn3: bn(out_ch),
            shortcut: if in_ch == out_ch {
                Shortcut::Identity
            } else {
                Shortcut::Project(Conv1d::he_uniform(out_ch, in_ch, 1, rng), bn(out_ch))
            },
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.out_ch
    }

    fn forward(&self, x: Tensor3<R>, mode: Mode) -> Result<(Tensor3<R>, Option<BlockCache<R>>), NnError> {
        let z1 = self.conv1.forward(&x)?;
        let (mut a1, c1) = self.bn1.forward_stats(&z1, mode)?;
        relu_in_place(&mut a1);
        let z2 = self.conv2.forward(&a1)?;
        let (mut a2, c2) = self.bn2.forward_stats(&z2, mode)?;
        relu_in_place(&mut a2);
        let z3 = self.conv3.forward(&a2)?;
        let (mut out, c3) = self.bn3.forward_stats(&z3, mode)?;
        let c_sc = match &self.shortcut {
            Shortcut::Identity => {
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o += v;
                }
                None
            }
            Shortcut::Project(conv, bn) => {
                let (s, c) = bn.forward_stats(&conv.forward(&x)?, mode)?;
                for (o, &v) in out.data_mut().iter_mut().zip(s.data()) {
                    *o += v;
                }
                c
            }
        };
        relu_in_place(&mut out);
        let cache = match mode {
            Mode::Infer => None,
            Mode::Train => Some(BlockCache {
                x,
                bn1: c1.unwrap(),
                a1,
                bn2: c2.unwrap(),
                a2,
                bn3: c3.unwrap(),
                bn_sc: c_sc,
                out: out.clone(),
            }),
        };
        Ok((out, cache))
    }

    fn backward(
        &self,
        cache: &BlockCache<R>,
        dout: Tensor3<R>,
        grad: &mut ResidualBlock<R>,
        want_dx: bool,
    ) -> Option<Tensor3<R>> {
        let mut ds = dout;
        relu_mask(&cache.out, &mut ds);

        let dz3 = self.bn3.backward(&cache.bn3, &ds, &mut grad.bn3);
        let mut da2 = self.conv3.backward(&cache.a2, &dz3, &mut grad.conv3, true).unwrap();
        relu_mask(&cache.a2, &mut da2);
        let dz2 = self.bn2.backward(&cache.bn2, &da2, &mut grad.bn2);
        let mut da1 = self.conv2.backward(&cache.a1, &dz2, &mut grad.conv2, true).unwrap();
        relu_mask(&cache.a1, &mut da1);
        let dz1 = self.bn1.backward(&cache.bn1, &da1, &mut grad.bn1);
        let dx_main = self.conv1.backward(&cache.x, &dz1, &mut grad.conv1, want_dx);

        match (&self.shortcut, &mut grad.shortcut) {
            (Shortcut::Identity, _) => dx_main.map(|mut dx| {
                for (d, &g) in dx.data_mut().iter_mut().zip(ds.data()) {
                    *d += g;
                }
                dx
            }),
            (Shortcut::Project(conv, bn), Shortcut::Project(gconv, gbn)) => {
                let dzs = bn.backward(cache.bn_sc.as_ref().unwrap(), &ds, gbn);
                let dx_sc = conv.backward(&cache.x, &dzs, gconv, want_dx);
                match (dx_main, dx_sc) {
                    (Some(mut a), Some(b)) => {
                        for (d, &g) in a.data_mut().iter_mut().zip(b.data()) {
                            *d += g;
                        }
                        Some(a)
                    }
                    _ => None,
                }
            }
            _ => unreachable!("gradient buffer shaped like the model"),
        }
    }

    fn batch_norms(&self) -> Vec<&BatchNorm1d<R>> {
        let mut v = vec![&self.bn1, &self.bn2, &self.bn3];
        if let Shortcut::Project(_, bn) = &self.shortcut {
            v.push(bn);
        }
        v
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm1d<R>> {
        let mut v = vec![&mut self.bn1, &mut self.bn2, &mut self.bn3];
        if let Shortcut::Project(_, bn) = &mut self.shortcut {
            v.push(bn);
        }
        v
    }

    fn convs(&self) -> Vec<&Conv1d<R>> {
        let mut v = vec![&self.conv1, &self.conv2, &self.conv3];
        if let Shortcut::Project(conv, _) = &self.shortcut {
            v.push(conv);
        }
        v
    }
}

/// Activations kept by a train-mode forward pass.
pub struct ForwardCache<R> {
    blocks: Vec<BlockCache<R>>,
    pooled: Vec<R>,
    length: usize,
    /// Softmax output, `(batch, classes)` row-major.
    pub probs: Vec<R>,
}

/// The classifier: residual blocks, global average pooling, dense softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R> {
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub blocks: Vec<ResidualBlock<R>>,
    /// `(n_classes, filters[2])` row-major.
    pub head_weight: Vec<R>,
    pub head_bias: Vec<R>,
}

impl<R: Real> Model<R> {
    /// Seeded initialization: He-uniform convolutions, Glorot-uniform head,
    /// zero biases and betas, unit gammas.
    pub fn new(config: ModelConfig, class_names: Vec<String>, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        if class_names.len() != config.n_classes {
            return Err(NnError::BadConfig(format!(
                "{} class names for {} classes",
                class_names.len(),
                config.n_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 1;
        let mut blocks = Vec::with_capacity(3);
        for &f in &config.filters {
            blocks.push(ResidualBlock::new(in_ch, f, &config, &mut rng));
            in_ch = f;
        }
        let width = config.filters[2];
        let bound = (6.0 / (width + config.n_classes) as f64).sqrt();
        let head_weight = (0..config.n_classes * width)
            .map(|_| R::lit(rng.gen_range(-bound..bound)))
            .collect();
        Ok(Self {
            head_bias: vec![R::zero(); config.n_classes],
            config,
            class_names,
            blocks,
            head_weight,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn width(&self) -> usize {
        self.config.filters[2]
    }

    fn check_input(&self, x: &Tensor3<R>) -> Result<(), NnError> {
        if x.channels() != 1 {
            return Err(NnError::ShapeMismatch(format!(
                "expected 1 input channel, got {}",
                x.channels()
            )));
        }
        if x.length() < self.config.min_length() {
            return Err(NnError::ShapeMismatch(format!(
                "input length {} below minimum {}",
                x.length(),
                self.config.min_length()
            )));
        }
        Ok(())
    }

    fn head(&self, pooled: &[R], batch: usize) -> Vec<R> {
        let (c, w) = (self.n_classes(), self.width());
        let mut logits = vec![R::zero(); batch * c];
        for b in 0..batch {
            logits[b * c..(b + 1) * c].copy_from_slice(&self.head_bias);
        }
        R::gemm(batch, w, c, R::one(), pooled, (w, 1), &self.head_weight, (1, w), R::one(), &mut logits, (c, 1));
        logits
    }

    fn run(&self, x: &Tensor3<R>, mode: Mode) -> Result<(Vec<R>, Option<ForwardCache<R>>), NnError> {
        self.check_input(x)?;
        let (batch, len) = (x.batch(), x.length());
        let mut h = x.clone();
        let mut caches = Vec::new();
        for block in &self.blocks {
            let (out, cache) = block.forward(h, mode)?;
            caches.extend(cache);
            h = out;
        }
        let w = self.width();
        let inv_len = R::one() / R::lit(len as f64);
        let pooled: Vec<R> = h
            .data()
            .chunks(len)
            .map(|row| row.iter().copied().sum::<R>() * inv_len)
            .collect();
        debug_assert_eq!(pooled.len(), batch * w);
        let mut probs = self.head(&pooled, batch);
        softmax_rows(&mut probs, self.n_classes());
        let cache = (mode == Mode::Train).then(|| ForwardCache {
            blocks: caches,
            pooled,
            length: len,
            probs: probs.clone(),
        });
        Ok((probs, cache))
    }

    /// Class probabilities, `(batch, classes)` row-major.
    pub fn forward(&self, x: &Tensor3<R>, mode: Mode) -> Result<Vec<R>, NnError> {
        Ok(self.run(x, mode)?.0)
    }

    /// Train-mode forward keeping what [`Model::backward`] needs.
    pub fn forward_train(&self, x: &Tensor3<R>) -> Result<ForwardCache<R>, NnError> {
        Ok(self.run(x, Mode::Train)?.1.unwrap())
    }

    /// Moves the batch-norm running statistics towards the batch's.
    pub fn apply_running_stats(&mut self, cache: &ForwardCache<R>) {
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            let mut stats = vec![&bc.bn1, &bc.bn2, &bc.bn3];
            stats.extend(bc.bn_sc.as_ref());
            for (bn, c) in block.batch_norms_mut().into_iter().zip(stats) {
                bn.update_running(c);
            }
        }
    }

    /// Gradients of the mean cross-entropy over the batch, returned in a
    /// model-shaped buffer (running statistics unused).
    pub fn backward(&self, cache: &ForwardCache<R>, targets: &[usize]) -> Result<Model<R>, NnError> {
        let (c, w) = (self.n_classes(), self.width());
        let batch = cache.probs.len() / c;
        if targets.len() != batch || targets.iter().any(|&t| t >= c) {
            return Err(NnError::ShapeMismatch(format!(
                "{} targets for batch of {batch} over {c} classes",
                targets.len()
            )));
        }
        let mut grad = self.zeros_like();
        // d(mean CE)/d(logits) = (p - onehot) / B
        let inv_b = R::one() / R::lit(batch as f64);
        let mut dlogits = cache.probs.clone();
        for (b, &t) in targets.iter().enumerate() {
            dlogits[b * c + t] -= R::one();
        }
        for v in &mut dlogits {
            *v *= inv_b;
        }
        for b in 0..batch {
            for k in 0..c {
                grad.head_bias[k] += dlogits[b * c + k];
            }
        }
        // dW (C x W) = dlogits^T (C x B) * pooled (B x W)
        R::gemm(c, batch, w, R::one(), &dlogits, (1, c), &cache.pooled, (w, 1), R::zero(), &mut grad.head_weight, (w, 1));
        // dpooled (B x W) = dlogits (B x C) * W (C x W)
        let mut dpooled = vec![R::zero(); batch * w];
        R::gemm(batch, c, w, R::one(), &dlogits, (c, 1), &self.head_weight, (w, 1), R::zero(), &mut dpooled, (w, 1));

        let len = cache.length;
        let inv_len = R::one() / R::lit(len as f64);
        let mut dh = Tensor3::zeros(batch, w, len);
        for (row, &g) in dh.data_mut().chunks_mut(len).zip(&dpooled) {
            row.fill(g * inv_len);
        }
        for (k, block) in self.blocks.iter().enumerate().rev() {
            let want_dx = k > 0;
            let dx = block.backward(&cache.blocks[k], dh, &mut grad.blocks[k], want_dx);
            match dx {
                Some(d) => dh = d,
                None => break,
            }
        }
        Ok(grad)
    }

    /// Same architecture with every parameter zero.
    pub fn zeros_like(&self) -> Model<R> {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(R::zero());
        }
        z
    }

    /// Trainable parameters in declaration order: per block conv1 weight,
    /// conv1 bias, bn1 gamma, bn1 beta, the same for conv2/bn2 and
    /// conv3/bn3, then the projection conv and bn when present; finally the
    /// head weight and bias.
    pub fn params(&self) -> Vec<&[R]> {
        let mut out: Vec<&[R]> = Vec::new();
        for b in &self.blocks {
            let pairs = b.convs().into_iter().zip(b.batch_norms());
            for (conv, bn) in pairs {
                out.extend([&conv.weight[..], &conv.bias[..], &bn.gamma[..], &bn.beta[..]]);
            }
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [R]> {
        let mut out: Vec<&mut [R]> = Vec::new();
        for b in &mut self.blocks {
            let ResidualBlock { conv1, bn1, conv2, bn2, conv3, bn3, shortcut } = b;
            let mut layers = vec![(conv1, bn1), (conv2, bn2), (conv3, bn3)];
            if let Shortcut::Project(conv, bn) = shortcut {
                layers.push((conv, bn));
            }
            for (conv, bn) in layers {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Names matching [`Model::params`], for diagnostics.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            let mut layers = vec!["1", "2", "3"];
            if matches!(b.shortcut, Shortcut::Project(..)) {
                layers.push("sc");
            }
            for l in layers {
                for p in ["conv_w", "conv_b", "bn_gamma", "bn_beta"] {
                    out.push(format!("block{k}.{p}{l}"));
                }
            }
        }
        out.push("head.w".into());
        out.push("head.b".into());
        out
    }

    /// Persisted tensors in file order: the trainable parameters with every
    /// batch norm's running mean and variance following its beta.
    pub(crate) fn state_tensors(&self) -> Vec<&[R]> {
        let mut out: Vec<&[R]> = Vec::new();
        for b in &self.blocks {
            for (conv, bn) in b.convs().into_iter().zip(b.batch_norms()) {
                out.extend([
                    &conv.weight[..],
                    &conv.bias[..],
                    &bn.gamma[..],
                    &bn.beta[..],
                    &bn.running_mean[..],
                    &bn.running_var[..],
                ]);
            }
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub(crate) fn state_tensors_mut(&mut self) -> Vec<&mut [R]> {
        let mut out: Vec<&mut [R]> = Vec::new();
        for b in &mut self.blocks {
            let ResidualBlock { conv1, bn1, conv2, bn2, conv3, bn3, shortcut } = b;
            let mut layers = vec![(conv1, bn1), (conv2, bn2), (conv3, bn3)];
            if let Shortcut::Project(conv, bn) = shortcut {
                layers.push((conv, bn));
            }
            for (conv, bn) in layers {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Most probable class of one preprocessed series (ties go to the
    /// lowest index) and the probabilities in `class_names` order.
    pub fn predict(&self, x: &[f64]) -> Result<(String, Vec<f64>), NnError> {
        let probs = self.predict_batch(&[x])?.pop().unwrap();
        let k = argmax(&probs);
        Ok((self.class_names[k].clone(), probs))
    }

    /// Infer-mode probabilities for a batch of equal-length series.
    pub fn predict_batch(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>, NnError> {
        let x = Tensor3::from_series(xs)?;
        let probs = self.forward(&x, Mode::Infer)?;
        Ok(probs
            .chunks(self.n_classes())
            .map(|r| r.iter().map(|v| v.to_f64().unwrap()).collect())
            .collect())
    }

    /// Predicted class indices, evaluated in chunks of `batch_size`.
    pub fn classify(&self, xs: &[Vec<f64>], batch_size: usize) -> Result<Vec<usize>, NnError> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(batch_size.max(1)) {
            let refs: Vec<&[f64]> = chunk.iter().map(|v| v.as_slice()).collect();
            out.extend(self.predict_batch(&refs)?.iter().map(|p| argmax(p)));
        }
        Ok(out)
    }

    /// Converts the parameters to another element type.
    pub fn cast<S: Real>(&self) -> Model<S> {
        let mut out = Model::<S>::new(self.config.clone(), self.class_names.clone(), 0)
            .expect("config already validated");
        for (dst, src) in out.state_tensors_mut().into_iter().zip(self.state_tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = S::from_f64(s.to_f64().unwrap()).unwrap();
            }
        }
        out
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax in place.
pub fn softmax_rows<R: Real>(logits: &mut [R], classes: usize) {
    for row in logits.chunks_mut(classes) {
        let max = row.iter().copied().fold(R::neg_infinity(), R::max);
        let mut sum = R::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Mean over the batch of `-ln p[target]`, with probabilities clamped to at
/// least 1e-12.
pub fn cross_entropy<R: Real>(probs: &[R], targets: &[usize], classes: usize) -> Result<R, NnError> {
    if classes == 0 || probs.len() != targets.len() * classes || targets.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "{} probabilities for {} targets over {classes} classes",
            probs.len(),
            targets.len()
        )));
    }
    let floor = R::lit(1e-12);
    let mut total = R::zero();
    for (row, &t) in probs.chunks(classes).zip(targets) {
        if t >= classes {
            return Err(NnError::ShapeMismatch(format!("target {t} >= {classes}")));
        }
        // NaN must survive so divergence is detectable.
        let p = if row[t].is_nan() { row[t] } else { row[t].max(floor) };
        total -= p.ln();
    }
    Ok(total / R::lit(targets.len() as f64))
}
