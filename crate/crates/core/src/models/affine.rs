use super::{CallCounters, SegmentationModel};
use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::tensor::{Shape, TensorGrid};

/// `z_{k,i} = Σ_c W_{k,c} x_{c,i} + b_k`, applied independently per pixel.
#[derive(Debug, Clone)]
pub struct PixelAffineModel {
    input: Shape,
    num_classes: usize,
    /// Row-major `(K, C)`.
    weight: Vec<f64>,
    bias: Vec<f64>,
    counters: CallCounters,
}

impl PixelAffineModel {
    pub fn new(input: Shape, num_classes: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if num_classes < 2 || input.is_empty() {
            return Err(Error::Model(format!(
                "affine model needs K >= 2 and a non-empty input, got K = {num_classes}, input {input:?}"
            )));
        }
        if weight.len() != num_classes * input.channels || bias.len() != num_classes {
            return Err(Error::Model(format!(
                "affine parameters must be ({num_classes}, {}) and ({num_classes},), got {} and {}",
                input.channels,
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite affine parameter".into()));
        }
        Ok(Self {
            input,
            num_classes,
            weight,
            bias,
            counters: CallCounters::default(),
        })
    }

    /// Gaussian weights with scale `1/√C`, zero bias.
    pub fn random(input: Shape, num_classes: usize, seed: RngSeed) -> Result<Self> {
        let mut rng = seed.rng();
        let weight = rng.gaussian_vec(num_classes * input.channels, 1.0 / (input.channels as f64).sqrt());
        Self::new(input, num_classes, weight, vec![0.0; num_classes])
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

impl SegmentationModel for PixelAffineModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> Shape {
        self.input
    }

    fn forward(&self, x: &TensorGrid) -> Result<TensorGrid> {
        x.expect_shape(self.input)?;
        self.counters.tick_forward();
        let n = self.input.pixels();
        let c = self.input.channels;
        let mut out = vec![0.0; self.num_classes * n];
        for k in 0..self.num_classes {
            let row = &mut out[k * n..(k + 1) * n];
            row.fill(self.bias[k]);
            for ch in 0..c {
                let w = self.weight[k * c + ch];
                for (o, xv) in row.iter_mut().zip(x.channel(ch)) {
                    *o += w * xv;
                }
            }
        }
        TensorGrid::new(self.output_shape(), out)
    }

    fn vjp(&self, x: &TensorGrid, upstream: &TensorGrid) -> Result<TensorGrid> {
        x.expect_shape(self.input)?;
        upstream.expect_shape(self.output_shape())?;
        self.counters.tick_backward();
        let n = self.input.pixels();
        let c = self.input.channels;
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            let dst = &mut out[ch * n..(ch + 1) * n];
            for k in 0..self.num_classes {
                let w = self.weight[k * c + ch];
                for (o, u) in dst.iter_mut().zip(upstream.channel(k)) {
                    *o += w * u;
                }
            }
        }
        TensorGrid::new(self.input, out)
    }

    fn counters(&self) -> &CallCounters {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_copy_channels() {
        let s = Shape::new(3, 2, 2);
        let mut w = vec![0.0; 9];
        for k in 0..3 {
            w[k * 3 + k] = 1.0;
        }
        let m = PixelAffineModel::new(s, 3, w, vec![0.0; 3]).unwrap();
        let x = TensorGrid::from_fn(s, |c, r, col| if (r * 2 + col) % 3 == c { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(m.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn bias_decides_with_zero_weights() {
        let s = Shape::new(2, 3, 3);
        let m = PixelAffineModel::new(s, 2, vec![0.0; 4], vec![0.0, 1.0]).unwrap();
        let z = m.forward(&TensorGrid::filled(s, 0.4)).unwrap();
        for i in 0..9 {
            assert!(z.get(1, i / 3, i % 3) > z.get(0, i / 3, i % 3));
        }
    }

    #[test]
    fn vjp_closed_form_and_counters() {
        let s = Shape::new(2, 1, 3);
        let m = PixelAffineModel::new(s, 3, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0], vec![0.0; 3]).unwrap();
        let x = TensorGrid::filled(s, 0.5);
        let u = TensorGrid::new(Shape::new(3, 1, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let g = m.vjp(&x, &u).unwrap();
        assert_eq!(g.data(), &[1.0, -1.0, 0.0, 2.0, 0.5, 3.0]);
        let zero = m.vjp(&x, &TensorGrid::zeros(Shape::new(3, 1, 3))).unwrap();
        assert_eq!(zero.linf_norm(), 0.0);
        m.forward(&x).unwrap();
        assert_eq!((m.counters().forwards(), m.counters().backwards()), (1, 2));
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = Shape::new(2, 1, 1);
        assert!(PixelAffineModel::new(s, 3, vec![0.0; 5], vec![0.0; 3]).is_err());
        assert!(PixelAffineModel::new(s, 1, vec![0.0; 2], vec![0.0]).is_err());
        let m = PixelAffineModel::random(s, 3, RngSeed(0)).unwrap();
        assert!(m.forward(&TensorGrid::zeros(Shape::new(3, 1, 1))).is_err());
    }
}
