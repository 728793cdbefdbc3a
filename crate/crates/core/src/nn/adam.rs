use super::Real;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
    pub t: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(shapes: &[&[R]]) -> Self {
        Self {
            m: shapes.iter().map(|p| vec![R::zero(); p.len()]).collect(),
            v: shapes.iter().map(|p| vec![R::zero(); p.len()]).collect(),
            t: 0,
        }
    }
}

impl Adam {
    /// One bias-corrected update of every tensor in `params`.
    pub fn step<R: Real>(&self, params: Vec<&mut [R]>, grads: &[&[R]], state: &mut AdamState<R>, lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), state.m.len());
        state.t += 1;
        let t = state.t as i32;
        let (b1, b2) = (R::lit(self.beta1), R::lit(self.beta2));
        let (one_b1, one_b2) = (R::one() - b1, R::one() - b2);
        let c1 = R::lit(1.0 - self.beta1.powi(t));
        let c2 = R::lit(1.0 - self.beta2.powi(t));
        let lr = R::lit(lr);
        let eps = R::lit(self.eps);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut state.m[k], &mut state.v[k]);
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
