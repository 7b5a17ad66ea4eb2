use std::f64::consts::PI;

use crate::tensor::DenseMatrix;

/// Linear warm-up over the first `warmup` steps, then cosine decay to zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, warmup_fraction: f64, total: usize) -> Self {
        let warmup = ((warmup_fraction * total as f64).ceil() as usize).min(total);
        Self { base_lr, warmup, total }
    }

    /// Rate for 1-based step `t`.
    pub fn lr(&self, t: usize) -> f64 {
        if t <= self.warmup {
            return self.base_lr * t as f64 / self.warmup.max(1) as f64;
        }
        let span = (self.total - self.warmup).max(1) as f64;
        let progress = ((t - self.warmup) as f64 / span).min(1.0);
        0.5 * self.base_lr * (1.0 + (PI * progress).cos())
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamW {
    pub fn new(shapes: &[(usize, usize)], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<DenseMatrix> = shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect();
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update of every tensor. A `None` gradient counts as zero.
    ///
    /// # Panics
    /// If the number or shapes of tensors differ from construction.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[Option<DenseMatrix>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            assert_eq!(p.shape(), self.m[k].shape(), "parameter shape changed");
            let decay = 1.0 - lr * self.weight_decay;
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let w = p.data_mut();
            let g = grads.get(k).and_then(|g| g.as_ref());
            for i in 0..w.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                w[i] = w[i] * decay - lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = Schedule::new(1.0, 0.15, 100);
        assert_eq!(s.warmup, 15);
        assert!((s.lr(1) - 1.0 / 15.0).abs() < 1e-15);
        assert_eq!(s.lr(15), 1.0);
        assert!(s.lr(50) < s.lr(20));
        assert!(s.lr(100).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let g = DenseMatrix::from_rows(&[vec![2.0, -0.5]]).unwrap();
        let mut opt = AdamW::new(&[(1, 2)], 0.9, 0.999, 0.0, 0.0);
        opt.step(&mut [&mut w], &[Some(g)], 0.1);
        assert!((w.data()[0] - 0.9).abs() < 1e-12);
        assert!((w.data()[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut w = DenseMatrix::filled(1, 1, 2.0);
        let mut opt = AdamW::new(&[(1, 1)], 0.9, 0.999, 1e-8, 0.5);
        opt.step(&mut [&mut w], &[None], 0.1);
        assert!((w.data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn minimises_quadratic() {
        let mut w = DenseMatrix::filled(1, 3, 5.0);
        let mut opt = AdamW::new(&[(1, 3)], 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..2000 {
            let g = w.scale(2.0);
            opt.step(&mut [&mut w], &[Some(g)], 0.05);
        }
        assert!(w.max_abs() < 1e-2);
    }
}
