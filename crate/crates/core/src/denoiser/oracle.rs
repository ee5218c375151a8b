use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserInput};
use crate::tensor::StateTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OracleMean {
    Constant(f64),
    /// Must match the window shape.
    Tensor(StateTensor),
}

/// Exact posterior mean for data drawn elementwise from `N(μ, s²)`:
/// `D(x; σ) = (s² x + σ² μ) / (s² + σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianOracle {
    pub mean: OracleMean,
    pub scale: f64,
}

impl GaussianOracle {
    pub fn new(mean: OracleMean, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Domain { what: "oracle scale", value: scale });
        }
        Ok(Self { mean, scale })
    }

    pub fn constant(mean: f64, scale: f64) -> Result<Self> {
        Self::new(OracleMean::Constant(mean), scale)
    }
}

impl Denoiser for GaussianOracle {
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<StateTensor> {
        input.validate()?;
        let x = &input.window.states;
        if let OracleMean::Tensor(m) = &self.mean {
            if !m.same_shape(x) {
                return Err(Error::input("oracle mean shape does not match the window"));
            }
        }
        let s2 = self.scale * self.scale;
        let mut out = x.clone();
        for a in 0..x.agents() {
            for (w, sigma) in input.sigmas.iter().enumerate() {
                let mu = match &self.mean {
                    OracleMean::Constant(c) => [*c; 3],
                    OracleMean::Tensor(m) => m.get(a, w),
                };
                let v2 = sigma * sigma;
                let cur = x.get(a, w);
                let s = out.get_mut(a, w);
                for c in 0..3 {
                    s[c] = (s2 * cur[c] + v2 * mu[c]) / (s2 + v2);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{SceneWindow, WindowFrame};
    use crate::schedule::LocalTimeVector;
    use crate::world::{AgentDims, MapPolylines};

    #[test]
    fn posterior_mean_matches_closed_form() {
        let states = StateTensor::from_flat(1, 2, &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let window = SceneWindow::new(states, LocalTimeVector::zeros(2), 0).unwrap();
        let map = MapPolylines::empty(4);
        let cond = [AgentDims::new(4.5, 2.0)];
        let sigmas = [0.0, 2.0];
        let frame = WindowFrame::stationary(1, 1);
        let input = DenoiserInput { window: &window, sigmas: &sigmas, frame: &frame, map: &map, cond: &cond };
        let d = GaussianOracle::constant(0.5, 1.0).unwrap().denoise(&input).unwrap();
        assert_eq!(d.get(0, 0), [1.0, 2.0, 3.0]);
        // (x + 4·0.5) / 5
        let want = [0.2, 0.4, 1.2];
        for c in 0..3 {
            assert!((d.get(0, 1)[c] - want[c]).abs() < 1e-15);
        }
        let bad = [0.0, f64::NAN];
        let input = DenoiserInput { sigmas: &bad, ..input };
        assert!(GaussianOracle::constant(0.0, 1.0).unwrap().denoise(&input).is_err());
        assert!(GaussianOracle::constant(0.0, 0.0).is_err());
    }
}
