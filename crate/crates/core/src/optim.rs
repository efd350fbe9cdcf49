//! Pixel-wise binary cross-entropy and the RAdam optimizer.

use crate::autodiff::{bce_term, bce_term_grad};
use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::sonar::MaskImage;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.5e-4;
pub const DEFAULT_BATCH_SIZE: usize = 4;

/// Mean BCE together with the per-pixel terms it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub per_pixel: Vec<f64>,
}

/// BCE of a probability map against a mask of the same pixel count.
pub fn bce_loss<T: Float>(pred: &Tensor<T>, target: &MaskImage) -> Result<LossValue> {
    if pred.numel() != target.pixels().len() {
        return Err(Error::dim(format!(
            "prediction {:?} does not match a {}×{} mask",
            pred.shape(),
            target.width(),
            target.height()
        )));
    }
    let per_pixel: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.pixels())
        .map(|(&p, &y)| bce_term(p.as_f64(), y as f64))
        .collect();
    let loss = per_pixel.iter().sum::<f64>() / per_pixel.len() as f64;
    Ok(LossValue { loss, per_pixel })
}

/// Gradient of [`bce_loss`] with respect to each probability.
pub fn bce_loss_grad<T: Float>(pred: &Tensor<T>, target: &MaskImage) -> Result<Vec<f64>> {
    if pred.numel() != target.pixels().len() {
        return Err(Error::dim("prediction and mask sizes differ"));
    }
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.pixels())
        .map(|(&p, &y)| bce_term_grad(p.as_f64(), y as f64) / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// When false every step takes the un-rectified momentum branch.
    pub rectify: bool,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rectify: true,
        }
    }
}

impl RAdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// Maximum length of the approximated simple moving average.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powf(t as f64);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification term `r_t`, or `None` on the momentum branch.
    pub fn rectifier(&self, t: u64) -> Option<f64> {
        let rho = self.rho(t);
        let ri = self.rho_inf();
        (self.rectify && rho > 4.0)
            .then(|| ((rho - 4.0) * (rho - 2.0) * ri / ((ri - 4.0) * (ri - 2.0) * rho)).sqrt())
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Per-parameter moments and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdamState<T> {
    pub config: RAdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Float> RAdamState<T> {
    pub fn new(config: RAdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<T>)]) -> Result<()> {
        for (name, p) in params.iter() {
            match &p.grad {
                None => return Err(Error::MissingGrad(name.clone())),
                Some(g) if g.len() != p.numel() => {
                    return Err(Error::dim(format!("gradient of `{name}` has the wrong length")))
                }
                _ => {}
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, (_, p))| m.len() != p.numel()) {
            return Err(Error::dim("parameter set changed between optimizer steps"));
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as f64;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);
        let rect = c.rectifier(self.t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        for (k, (_, p)) in params.iter_mut().enumerate() {
            let grad = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + ob1 * g;
                v[i] = b2 * v[i] + ob2 * g * g;
                let m_hat = m[i].as_f64() / bias1;
                let update = match rect {
                    Some(r) => {
                        let v_hat = v[i].as_f64() / bias2;
                        c.lr * r * m_hat / (v_hat.sqrt() + c.eps)
                    }
                    None => c.lr * m_hat,
                };
                data[i] -= T::from_f64(update);
            }
            p.grad = Some(grad);
        }
        Ok(())
    }
}

/// Apply one RAdam update to `params` using their stored gradients.
pub fn radam_step<T: Float>(state: &mut RAdamState<T>, params: &mut [(String, &mut Tensor<T>)]) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_limits() {
        let c = RAdamConfig::default();
        assert!((c.rho_inf() - 1999.0).abs() < 1e-9);
        // Early steps take the momentum branch.
        assert!(c.rectifier(1).is_none());
        assert!(c.rectifier(4).is_none());
        assert!(c.rectifier(5).is_some());
        let late = c.rectifier(1_000_000).unwrap();
        assert!((late - 1.0).abs() < 1e-9);
    }

    #[test]
    fn missing_grad_is_reported() {
        let mut p = Tensor::<f64>::zeros([2]);
        let mut s = RAdamState::new(RAdamConfig::default()).unwrap();
        let err = s.step(&mut [("w".to_string(), &mut p)]).unwrap_err();
        assert!(matches!(err, Error::MissingGrad(n) if n == "w"));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn bce_values() {
        let p = Tensor::<f64>::full([1, 2, 2], 0.5);
        let y = MaskImage::from_raw(2, 2, vec![0, 1, 1, 0]).unwrap();
        let l = bce_loss(&p, &y).unwrap();
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&Tensor::<f64>::zeros([3]), &y).is_err());
    }
}
