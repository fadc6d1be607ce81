//! Flat-parameter building blocks for the small networks used by the
//! encoder and learner: dense layers over row-major slices, Adam, gradient
//! clipping and a shape-checked JSON checkpoint format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = W x + b` for a row-major `rows x cols` matrix `w`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates the gradients of an affine map: `gw += dy x^T`, `gb += dy`,
/// `dx += W^T dy`.
pub fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: &mut [f64]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        gb[r] += d;
        let row = &w[r * cols..(r + 1) * cols];
        let grow = &mut gw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            grow[c] += d * x[c];
            dx[c] += d * row[c];
        }
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
pub fn init_uniform(buf: &mut [f64], fan_in: usize, rng: &mut RngStream) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in buf {
        *v = (2.0 * rng.uniform() - 1.0) * bound;
    }
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales every buffer so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= k;
            }
        }
    }
    norm
}

/// `target <- (1 - tau) target + tau source`.
pub fn soft_update(target: &mut [f64], source: &[f64], tau: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t = (1.0 - tau) * *t + tau * s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer bound to a different tensor size");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "rampsim-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<TensorRecord>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Takes the named tensor, requiring the exact expected shape.
    pub fn take(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::config(format!("checkpoint has no tensor `{name}`")))?;
        let n: usize = shape.iter().product();
        if t.shape != shape || t.data.len() != n {
            return Err(Error::config(format!(
                "checkpoint tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.data.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_and_backward_agree_with_hand_values() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut y = [0.0; 2];
        affine(&w, &[0.5, -0.5], &[1.0, 0.0, -1.0], &mut y);
        assert_eq!(y, [-1.5, -2.5]);
        let (mut gw, mut gb, mut dx) = ([0.0; 6], [0.0; 2], [0.0; 3]);
        affine_backward(&w, &[1.0, 0.0, -1.0], &[1.0, 2.0], &mut gw, &mut gb, &mut dx);
        assert_eq!(gw, [1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(gb, [1.0, 2.0]);
        assert_eq!(dx, [9.0, 12.0, 15.0]);
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut a = vec![3.0];
        let mut b = vec![4.0];
        let n = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((l2_norm(&[a[0], b[0]]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_shape_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        Checkpoint::new(vec![TensorRecord {
            name: "w".into(),
            shape: vec![2, 2],
            data: vec![1.0, 2.0, 3.0, 4.0],
        }])
        .save(&path)
        .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.take("w", &[2, 2]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(ck.take("w", &[4]).is_err());
        assert!(ck.take("b", &[2]).is_err());
    }
}
