use super::{NnError, Real};

/// Dense `(batch, channels, length)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<R> {
    shape: [usize; 3],
    data: Vec<R>,
}

impl<R: Real> Tensor3<R> {
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Self {
            shape: [batch, channels, length],
            data: vec![R::zero(); batch * channels * length],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<R>) -> Result<Self, NnError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(NnError::ShapeMismatch(format!("zero dimension in {shape:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equal-length single-channel series into a `(B, 1, N)` batch.
    pub fn from_series(series: &[&[f64]]) -> Result<Self, NnError> {
        let n = series.first().map_or(0, |s| s.len());
        if series.iter().any(|s| s.len() != n) {
            return Err(NnError::ShapeMismatch("series of unequal length".into()));
        }
        let data = series.iter().flat_map(|s| s.iter().map(|&v| R::lit(v))).collect();
        Self::from_vec([series.len(), 1, n], data)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn at(&self, b: usize, c: usize, t: usize) -> R {
        self.data[(b * self.shape[1] + c) * self.shape[2] + t]
    }

    /// The `(channels, length)` plane of one batch item.
    pub fn item(&self, b: usize) -> &[R] {
        let n = self.shape[1] * self.shape[2];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [R] {
        let n = self.shape[1] * self.shape[2];
        &mut self.data[b * n..(b + 1) * n]
    }
}
