//! Bilinear rotation problem J(x, y) = scale * x^T y, identical at every
//! agent. The unique saddle sits at the origin and the gradient field is a
//! pure rotation, which makes simultaneous GDA spiral outward. Used for
//! divergence-contrast tests; declares no PL constant and has no finite
//! inner maximum, so the dual gap is undefined here.
//!
//! scale = 0 gives the degenerate zero-gradient instance used to isolate
//! the combination step of the distributed methods.

use super::{ProblemConstants, ProblemOracle, Sample};
use crate::linalg;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct BilinearProblem {
    m: usize,
    scale: f64,
    noise_sigma2: f64,
    weights: Vec<f64>,
}

impl BilinearProblem {
    pub fn new(m: usize, scale: f64, noise_sigma2: f64, num_agents: usize) -> Self {
        assert!(m > 0 && num_agents > 0);
        BilinearProblem {
            m,
            scale,
            noise_sigma2,
            weights: vec![1.0 / num_agents as f64; num_agents],
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl ProblemOracle for BilinearProblem {
    fn dims(&self) -> (usize, usize) {
        (self.m, self.m)
    }

    fn num_agents(&self) -> usize {
        self.weights.len()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn draw_sample(&self, _agent: usize, rng: &mut ChaCha12Rng) -> Sample {
        let id: u64 = rng.random();
        let normal = StandardNormal;
        let sd = (self.noise_sigma2 / self.m as f64).sqrt();
        let x: Vec<f64> = (0..self.m)
            .map(|_| {
                let v: f64 = normal.sample(rng);
                v * sd
            })
            .collect();
        let y: Vec<f64> = (0..self.m)
            .map(|_| {
                let v: f64 = normal.sample(rng);
                v * sd
            })
            .collect();
        Sample::Noise { id, x, y }
    }

    fn stoch_grad_x(&self, agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Noise { x: nx, .. } = sample else {
            panic!("bilinear problem expects noise samples");
        };
        let mut g = self.true_grad_x(agent, x, y);
        linalg::axpy(1.0, nx, &mut g);
        g
    }

    fn stoch_grad_y(&self, agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Noise { y: ny, .. } = sample else {
            panic!("bilinear problem expects noise samples");
        };
        let mut g = self.true_grad_y(agent, x, y);
        linalg::axpy(1.0, ny, &mut g);
        g
    }

    fn true_grad_x(&self, _agent: usize, _x: &[f64], y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| self.scale * v).collect()
    }

    fn true_grad_y(&self, _agent: usize, x: &[f64], _y: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.scale * v).collect()
    }

    fn global_risk(&self, x: &[f64], y: &[f64]) -> f64 {
        self.scale * linalg::dot(x, y)
    }

    fn constants(&self) -> ProblemConstants {
        ProblemConstants {
            l_f: self.scale.abs(),
            nu: None,
            sigma_sq: vec![self.noise_sigma2; self.weights.len()],
            heterogeneity: 0.0,
        }
    }

    fn inner_max(&self, _x: &[f64]) -> Option<(Vec<f64>, f64)> {
        // sup_y scale * x^T y is unbounded whenever scale * x != 0
        None
    }

    fn mc_loss(&self, _agent: usize, x: &[f64], y: &[f64], _n_samples: usize, _seed: u64) -> f64 {
        self.scale * linalg::dot(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_difference_check;

    #[test]
    fn gradients_are_cross_linear() {
        let p = BilinearProblem::new(2, 1.0, 0.0, 1);
        assert_eq!(p.true_grad_x(0, &[5.0, 5.0], &[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(p.true_grad_x(0, &[1.0, 0.0], &[1.0, 2.0]), vec![1.0, 2.0]);
        assert_eq!(p.true_grad_y(0, &[1.0, 2.0], &[9.0, 9.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn grad_x_independent_of_x() {
        let p = BilinearProblem::new(3, 2.5, 0.0, 1);
        let y = vec![0.3, -0.4, 0.9];
        let g1 = p.true_grad_x(0, &[0.0; 3], &y);
        let g2 = p.true_grad_x(0, &[7.0, -2.0, 1.0], &y);
        assert_eq!(g1, g2);
    }

    #[test]
    fn deterministic_gda_spirals_outward() {
        // hand simulation oracle: 100 GDA steps on J = x y from (1, 1)
        let p = BilinearProblem::new(1, 1.0, 0.0, 1);
        let mu = 0.1;
        let mut x = vec![1.0];
        let mut y = vec![1.0];
        let mut prev = (linalg::norm_sq(&x) + linalg::norm_sq(&y)).sqrt();
        for _ in 0..100 {
            let gx = p.true_grad_x(0, &x, &y);
            let gy = p.true_grad_y(0, &x, &y);
            linalg::axpy(-mu, &gx, &mut x);
            linalg::axpy(mu, &gy, &mut y);
            let now = (linalg::norm_sq(&x) + linalg::norm_sq(&y)).sqrt();
            assert!(now > prev, "norm must strictly increase");
            prev = now;
        }
    }

    #[test]
    fn zero_scale_gives_exact_zero_fd_error() {
        let p = BilinearProblem::new(2, 0.0, 0.0, 1);
        let check = finite_difference_check(&p, 0, &[0.4, 0.6], &[1.0, -1.0], 1e-4, 1, 0);
        assert_eq!(check.max_rel(), 0.0);
    }

    #[test]
    fn dual_is_unbounded() {
        let p = BilinearProblem::new(2, 1.0, 0.0, 1);
        assert!(p.inner_max(&[1.0, 0.0]).is_none());
    }
}
