use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

impl<T: Element> Graph<T> {
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    /// Each row is shifted by its maximum before exponentiation.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let zv = self.value(logits);
        let (n, k) = match zv.shape()[..] {
            [n, k] => (n, k),
            _ => {
                return Err(Error::dim(
                    "softmax_cross_entropy",
                    format!("logits must be N×K, got {:?}", zv.shape()),
                ))
            }
        };
        if labels.len() != n {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Input(format!("label {l} at row {i} outside [0, {k})")));
        }
        let mut probs = vec![T::zero(); n * k];
        let mut total = 0.0f64;
        for (r, row) in zv.data().chunks(k).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (j, &z) in row.iter().enumerate() {
                let e = (z - max).exp();
                probs[r * k + j] = e;
                denom = denom + e;
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p = *p / denom;
            }
            let log_sum = max.to_f64_lossy() + denom.to_f64_lossy().ln();
            total += log_sum - row[labels[r]].to_f64_lossy();
        }
        let loss = Tensor::scalar(T::from_f64_lossy(total / n as f64));
        let labels = labels.to_vec();
        self.push(
            "softmax_cross_entropy",
            loss,
            vec![logits],
            Box::new(move |dy, _| {
                let scale = dy.data()[0] / T::from_usize_lossy(n);
                let mut dz = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    dz[r * k + l] = dz[r * k + l] - T::one();
                }
                for v in &mut dz {
                    *v = *v * scale;
                }
                Ok(vec![Some(Tensor::new(vec![n, k], dz)?)])
            }),
        )
    }
}
