use ndarray::Zip;

use super::net::QNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: QNetwork,
    v: QNetwork,
}

impl Adam {
    pub fn new(net: &QNetwork, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: net.zeros_like(),
            v: net.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, net: &mut QNetwork, grads: &QNetwork) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let layers = net
            .layers_mut()
            .zip(grads.layers())
            .zip(self.m.layers_mut().zip(self.v.layers_mut()));
        for ((p, g), (m, v)) in layers {
            let step = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            };
            Zip::from(&mut p.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(step);
            Zip::from(&mut p.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(step);
        }
    }
}
