use super::{CallCounters, SegmentationModel};
use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::tensor::{Shape, TensorGrid};

/// Two 3×3 "same" convolutions with a softplus in between:
/// `z = W₂ ⋆ softplus(W₁ ⋆ x + b₁) + b₂`.
///
/// Kernels are row-major `(out, in, 3, 3)`.
#[derive(Debug, Clone)]
pub struct TinyConvModel {
    input: Shape,
    hidden: usize,
    num_classes: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    counters: CallCounters,
}

/// Gradients of `⟨upstream, f(x)⟩` with respect to every parameter and the
/// input.
#[derive(Debug, Clone)]
pub struct TinyConvGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub input: TensorGrid,
}

impl TinyConvGrads {
    /// `[w1, b1, w2, b2]`, matching [`TinyConvModel::parameters`].
    pub fn as_slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

#[inline]
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Zero-padded 3×3 correlation, `cin → cout` channels.
fn conv3x3(input: &[f64], cin: usize, h: usize, w: usize, kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let cout = bias.len();
    let n = h * w;
    let mut out = vec![0.0; cout * n];
    for o in 0..cout {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.fill(bias[o]);
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            let k = &kernel[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for dr in 0..3 {
                        let rr = r + dr;
                        if rr == 0 || rr > h {
                            continue;
                        }
                        for dc in 0..3 {
                            let cc = c + dc;
                            if cc == 0 || cc > w {
                                continue;
                            }
                            acc += k[dr * 3 + dc] * src[(rr - 1) * w + cc - 1];
                        }
                    }
                    dst[r * w + c] += acc;
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv3x3`] in its input.
fn conv3x3_adjoint(grad: &[f64], cout: usize, h: usize, w: usize, kernel: &[f64], cin: usize) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; cin * n];
    for o in 0..cout {
        let g = &grad[o * n..(o + 1) * n];
        for i in 0..cin {
            let dst = &mut out[i * n..(i + 1) * n];
            let k = &kernel[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for r in 0..h {
                for c in 0..w {
                    let gv = g[r * w + c];
                    if gv == 0.0 {
                        continue;
                    }
                    for dr in 0..3 {
                        let rr = r + dr;
                        if rr == 0 || rr > h {
                            continue;
                        }
                        for dc in 0..3 {
                            let cc = c + dc;
                            if cc == 0 || cc > w {
                                continue;
                            }
                            dst[(rr - 1) * w + cc - 1] += k[dr * 3 + dc] * gv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `⟨grad, conv3x3(input)⟩` in the kernel.
fn conv3x3_kernel_grad(input: &[f64], cin: usize, grad: &[f64], cout: usize, h: usize, w: usize) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; cout * cin * 9];
    for o in 0..cout {
        let g = &grad[o * n..(o + 1) * n];
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            let k = &mut out[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for dr in 0..3 {
                for dc in 0..3 {
                    let mut acc = 0.0;
                    for r in 0..h {
                        let rr = r + dr;
                        if rr == 0 || rr > h {
                            continue;
                        }
                        for c in 0..w {
                            let cc = c + dc;
                            if cc == 0 || cc > w {
                                continue;
                            }
                            acc += g[r * w + c] * src[(rr - 1) * w + cc - 1];
                        }
                    }
                    k[dr * 3 + dc] = acc;
                }
            }
        }
    }
    out
}

impl TinyConvModel {
    pub fn new(
        input: Shape,
        hidden: usize,
        num_classes: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if num_classes < 2 || hidden == 0 || input.is_empty() {
            return Err(Error::Model(format!(
                "conv model needs K >= 2, F >= 1 and a non-empty input, got K = {num_classes}, F = {hidden}, input {input:?}"
            )));
        }
        let c = input.channels;
        let expect = [hidden * c * 9, hidden, num_classes * hidden * 9, num_classes];
        let got = [w1.len(), b1.len(), w2.len(), b2.len()];
        if expect != got {
            return Err(Error::Model(format!(
                "conv parameter sizes must be {expect:?}, got {got:?}"
            )));
        }
        if [&w1, &b1, &w2, &b2].iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Model("non-finite conv parameter".into()));
        }
        Ok(Self {
            input,
            hidden,
            num_classes,
            w1,
            b1,
            w2,
            b2,
            counters: CallCounters::default(),
        })
    }

    /// Gaussian kernels with scale `1/√fan_in`, zero biases.
    pub fn random(input: Shape, hidden: usize, num_classes: usize, seed: RngSeed) -> Result<Self> {
        let mut rng = seed.rng();
        let c = input.channels;
        let w1 = rng.gaussian_vec(hidden * c * 9, 1.0 / ((c * 9) as f64).sqrt());
        let w2 = rng.gaussian_vec(num_classes * hidden * 9, 1.0 / ((hidden * 9) as f64).sqrt());
        Self::new(input, hidden, num_classes, w1, vec![0.0; hidden], w2, vec![0.0; num_classes])
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `[w1, b1, w2, b2]`.
    pub fn parameters(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Mutable `[w1, b1, w2, b2]`; callers must keep the values finite.
    pub fn parameters_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn hidden_pre(&self, x: &TensorGrid) -> Vec<f64> {
        let s = self.input;
        conv3x3(x.data(), s.channels, s.height, s.width, &self.w1, &self.b1)
    }

    fn head(&self, hidden: &[f64]) -> Result<TensorGrid> {
        let s = self.input;
        let z = conv3x3(hidden, self.hidden, s.height, s.width, &self.w2, &self.b2);
        TensorGrid::new(self.output_shape(), z)
            .map_err(|_| Error::Numerical("conv model produced non-finite logits".into()))
    }

    /// Parameter and input gradients of `⟨upstream, f(x)⟩`. Counts one
    /// backward call.
    pub fn gradients(&self, x: &TensorGrid, upstream: &TensorGrid) -> Result<TinyConvGrads> {
        self.backprop(x, upstream, true)
    }

    fn backprop(&self, x: &TensorGrid, upstream: &TensorGrid, params: bool) -> Result<TinyConvGrads> {
        x.expect_shape(self.input)?;
        upstream.expect_shape(self.output_shape())?;
        self.counters.tick_backward();
        let s = self.input;
        let (h, w, n) = (s.height, s.width, s.pixels());
        let pre = self.hidden_pre(x);
        let up = upstream.data();
        let g_hidden = conv3x3_adjoint(up, self.num_classes, h, w, &self.w2, self.hidden);
        let g_pre: Vec<f64> = g_hidden.iter().zip(&pre).map(|(g, a)| g * sigmoid(*a)).collect();
        let g_x = conv3x3_adjoint(&g_pre, self.hidden, h, w, &self.w1, s.channels);
        let input = TensorGrid::new(s, g_x)?;
        if !params {
            return Ok(TinyConvGrads {
                w1: Vec::new(),
                b1: Vec::new(),
                w2: Vec::new(),
                b2: Vec::new(),
                input,
            });
        }
        let act: Vec<f64> = pre.iter().map(|&a| softplus(a)).collect();
        let sum_blocks = |g: &[f64], k: usize| (0..k).map(|o| g[o * n..(o + 1) * n].iter().sum()).collect();
        Ok(TinyConvGrads {
            w1: conv3x3_kernel_grad(x.data(), s.channels, &g_pre, self.hidden, h, w),
            b1: sum_blocks(&g_pre, self.hidden),
            w2: conv3x3_kernel_grad(&act, self.hidden, up, self.num_classes, h, w),
            b2: sum_blocks(up, self.num_classes),
            input,
        })
    }
}

impl SegmentationModel for TinyConvModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> Shape {
        self.input
    }

    fn forward(&self, x: &TensorGrid) -> Result<TensorGrid> {
        x.expect_shape(self.input)?;
        self.counters.tick_forward();
        let act: Vec<f64> = self.hidden_pre(x).into_iter().map(softplus).collect();
        self.head(&act)
    }

    fn vjp(&self, x: &TensorGrid, upstream: &TensorGrid) -> Result<TensorGrid> {
        Ok(self.backprop(x, upstream, false)?.input)
    }

    fn counters(&self) -> &CallCounters {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(seed: u64) -> (TinyConvModel, TensorGrid) {
        let s = Shape::new(2, 5, 4);
        let m = TinyConvModel::random(s, 3, 3, RngSeed(seed)).unwrap();
        let mut rng = RngSeed(seed + 100).rng();
        let x = TensorGrid::new(s, rng.uniform_vec(s.len())).unwrap();
        (m, x)
    }

    fn inner(m: &TinyConvModel, x: &TensorGrid, u: &TensorGrid) -> f64 {
        m.forward(x).unwrap().dot(u).unwrap()
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn adjoint_identity() {
        // ⟨conv(a), b⟩ = ⟨a, conv*(b)⟩ on random data
        let mut rng = RngSeed(9).rng();
        let (cin, cout, h, w) = (2, 3, 4, 5);
        let k = rng.gaussian_vec(cout * cin * 9, 1.0);
        let a = rng.gaussian_vec(cin * h * w, 1.0);
        let b = rng.gaussian_vec(cout * h * w, 1.0);
        let ca = conv3x3(&a, cin, h, w, &k, &vec![0.0; cout]);
        let ctb = conv3x3_adjoint(&b, cout, h, w, &k, cin);
        let lhs: f64 = ca.iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(&ctb).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let kg = conv3x3_kernel_grad(&a, cin, &b, cout, h, w);
        let via_kernel: f64 = kg.iter().zip(&k).map(|(x, y)| x * y).sum();
        assert!((via_kernel - lhs).abs() < 1e-10);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let a: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(conv3x3(&a, 1, 3, 4, &k, &[0.0]), a);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (m, x) = setup(1);
        let mut rng = RngSeed(5).rng();
        let u = TensorGrid::new(m.output_shape(), rng.gaussian_vec(m.output_shape().len(), 1.0)).unwrap();
        let g = m.gradients(&x, &u).unwrap();
        let h = 1e-5;
        for p in 0..4 {
            let len = m.parameters()[p].len();
            for j in [0, len / 2, len - 1] {
                let mut plus = m.clone();
                plus.parameters_mut()[p][j] += h;
                let mut minus = m.clone();
                minus.parameters_mut()[p][j] -= h;
                let fd = (inner(&plus, &x, &u) - inner(&minus, &x, &u)) / (2.0 * h);
                let an = g.as_slices()[p][j];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "param {p}[{j}]: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_counted() {
        let (m, x) = setup(2);
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
        m.vjp(&x, &TensorGrid::zeros(m.output_shape())).unwrap();
        assert_eq!((m.counters().forwards(), m.counters().backwards()), (2, 1));
        assert_eq!(m.clone().counters().forwards(), 0);
    }

    #[test]
    fn rejects_wrong_sizes() {
        let s = Shape::new(1, 2, 2);
        assert!(TinyConvModel::new(s, 1, 2, vec![0.0; 8], vec![0.0], vec![0.0; 18], vec![0.0; 2]).is_err());
        assert!(TinyConvModel::new(s, 1, 2, vec![0.0; 9], vec![0.0], vec![0.0; 18], vec![f64::NAN; 2]).is_err());
    }
}
