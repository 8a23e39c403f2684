//! First-order adaptive-moment optimizer over flat parameter vectors.

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: AdamParams, len: usize) -> Result<Self> {
        params.validate()?;
        Ok(Adam {
            params,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        })
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update. Entries whose gradient and moments are all
    /// zero are skipped; they would not move anyway.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<()> {
        if x.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::SizeMismatch {
                what: "optimizer parameters",
                expected: self.m.len(),
                actual: x.len().min(grad.len()),
            });
        }
        self.update(|i| grad[i], |i, dx| x[i] += dx);
        Ok(())
    }

    /// [`Adam::step`] over 3-vectors; the state holds three scalars per entry.
    pub fn step_vec3(&mut self, x: &mut [Vec3], grad: &[Vec3]) -> Result<()> {
        if 3 * x.len() != self.m.len() || 3 * grad.len() != self.m.len() {
            return Err(Error::SizeMismatch {
                what: "optimizer parameters",
                expected: self.m.len(),
                actual: 3 * x.len().min(grad.len()),
            });
        }
        self.update(|i| grad[i / 3][i % 3], |i, dx| x[i / 3][i % 3] += dx);
        Ok(())
    }

    fn update(&mut self, grad: impl Fn(usize) -> f64, mut apply: impl FnMut(usize, f64)) {
        self.step += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for i in 0..self.m.len() {
            let g = grad(i);
            if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                continue;
            }
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            apply(i, -learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + epsilon));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(AdamParams::default(), 3).unwrap();
        let mut x = vec![1.0, 1.0, 1.0];
        opt.step(&mut x, &[2.0, -1e-3, 0.0]).unwrap();
        assert!((x[0] - 0.99).abs() < 1e-9);
        assert!((x[1] - 1.01).abs() < 1e-6);
        assert_eq!(x[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let params = AdamParams {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut opt = Adam::new(params, 2).unwrap();
        let mut x = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0), 20.0 * (x[1] + 0.5)];
            opt.step(&mut x, &g).unwrap();
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn vector_and_scalar_steps_agree() {
        let mut a = Adam::new(AdamParams::default(), 6).unwrap();
        let mut b = Adam::new(AdamParams::default(), 6).unwrap();
        let mut x = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let mut v = vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.4, 0.5, 0.6)];
        for k in 0..5 {
            let g: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) * (k as f64 + 1.0)).collect();
            let gv = vec![Vec3::new(g[0], g[1], g[2]), Vec3::new(g[3], g[4], g[5])];
            a.step(&mut x, &g).unwrap();
            b.step_vec3(&mut v, &gv).unwrap();
        }
        for i in 0..6 {
            assert_eq!(x[i], v[i / 3][i % 3]);
        }
    }

    #[test]
    fn rejects_bad_settings_and_sizes() {
        let bad = AdamParams {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(Adam::new(bad, 1).is_err());
        let mut opt = Adam::new(AdamParams::default(), 2).unwrap();
        assert!(opt.step(&mut [0.0], &[0.0]).is_err());
    }
}
