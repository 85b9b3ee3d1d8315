use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.dims())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(NnError::Shape(format!(
                "adam tracks {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.dims() != g.dims() || p.dims() != m.dims() {
                return Err(NnError::Shape(format!(
                    "adam: param {:?}, grad {:?}",
                    p.dims(),
                    g.dims()
                )));
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut adam = AdamState::new(&p, 0.1);
        for _ in 0..10 {
            adam.step(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = (w-3)^2, simulated directly.
        let mut p = vec![Tensor::zeros(&[1])];
        let mut adam = AdamState::new(&p, 0.1);
        let mut hit = None;
        for step in 1..=500 {
            let w = p[0].data()[0];
            let g = Tensor::from_vec(&[1], vec![2.0 * (w - 3.0)]).unwrap();
            adam.step(&mut p, &[g]).unwrap();
            if (p[0].data()[0] - 3.0).abs() < 1e-3 && hit.is_none() {
                hit = Some(step);
            }
        }
        assert!(hit.is_some());
        assert!((p[0].data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn partitioning_does_not_change_update() {
        let whole = Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = Tensor::from_vec(&[4], vec![1.0, -0.5, 0.25, 2.0]).unwrap();
        let mut a = vec![whole.clone()];
        let mut sa = AdamState::new(&a, 0.01);
        let mut b = vec![
            Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap(),
            Tensor::from_vec(&[2], vec![0.3, 0.4]).unwrap(),
        ];
        let mut sb = AdamState::new(&b, 0.01);
        let gb = [
            Tensor::from_vec(&[2], vec![1.0, -0.5]).unwrap(),
            Tensor::from_vec(&[2], vec![0.25, 2.0]).unwrap(),
        ];
        for _ in 0..5 {
            sa.step(&mut a, std::slice::from_ref(&g)).unwrap();
            sb.step(&mut b, &gb).unwrap();
        }
        let joined: Vec<f64> = b.iter().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(a[0].data(), joined.as_slice());
    }
}
