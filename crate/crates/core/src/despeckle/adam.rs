use super::layers::{ConvGrad, Real};
use super::unet::UNet;

/// Adaptive-moment gradient descent with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(net: &UNet<T>) -> Self {
        let shapes: Vec<usize> = net
            .convs
            .iter()
            .flat_map(|c| [c.weight.len(), c.bias.len()])
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Applies one update with gradients `grads * grad_scale`.
    pub fn step(&mut self, net: &mut UNet<T>, grads: &[ConvGrad<T>], lr: f64, grad_scale: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = T::of(lr * c2.sqrt() / c1);
        let eps = T::of(self.eps * c2.sqrt());
        let gs = T::of(grad_scale);
        let one = T::one();
        let params = net
            .convs
            .iter_mut()
            .zip(grads)
            .flat_map(|(c, g)| [(&mut c.weight, &g.weight), (&mut c.bias, &g.bias)]);
        for ((p, g), (m, v)) in params.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i] * gs;
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                p[i] = p[i] - step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
