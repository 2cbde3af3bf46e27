//! Small network building blocks on top of the tape.

use std::rc::Rc;

use super::params::{Bound, ParamId, ParamStore};
use super::{Matrix, RngStream, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Silu => x.silu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn apply_value(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Affine map `x·W + b` on row-major batches.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let weight = store.add_glorot(format!("{name}.w"), inputs, outputs, rng);
        let bias = store.add(format!("{name}.b"), Matrix::zeros(1, outputs));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(p.get(self.weight)).add(p.get(self.bias))
    }

    pub fn forward_value(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let mut y = x.matmul(store.get(self.weight));
        let b = store.get(self.bias);
        for i in 0..y.rows() {
            for (v, bj) in y.row_slice_mut(i).iter_mut().zip(b.as_slice()) {
                *v += bj;
            }
        }
        y
    }
}

/// Multi-layer perceptron with a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes` lists input, hidden and output widths.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], activation: Activation, rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("layers").outputs
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().fold(x, |h, (i, l)| {
            let y = l.forward(p, h);
            if i < last {
                self.activation.apply(y)
            } else {
                y
            }
        })
    }

    /// Tape-free evaluation for inference paths.
    pub fn forward_value(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward_value(store, &h);
            if i < last {
                h = h.map(|v| self.activation.apply_value(v));
            }
        }
        h
    }

    /// Scale the output layer weights (small initial outputs).
    pub fn scale_output(&self, store: &mut ParamStore, s: f64) {
        let w = self.layers.last().expect("layers").weight;
        let scaled = store.get(w).scale(s);
        *store.get_mut(w) = scaled;
    }
}

/// Geometry of a square feature map with channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub side: usize,
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// 2-D convolution on channel-major flattened images, one image per row.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: FeatureShape,
    pub output: FeatureShape,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: FeatureShape,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut RngStream,
    ) -> Self {
        let side = (input.side + 2 * padding - kernel) / stride + 1;
        let fan_in = input.channels * kernel * kernel;
        let weight = store.add_glorot(format!("{name}.w"), fan_in, out_channels, rng);
        let bias = store.add(format!("{name}.b"), Matrix::zeros(1, out_channels));
        Self { weight, bias, input, output: FeatureShape { channels: out_channels, side }, kernel, stride, padding }
    }

    fn patch_index(&self, batch: usize) -> Vec<Option<usize>> {
        let (ci, hi) = (self.input.channels, self.input.side as isize);
        let (k, ho) = (self.kernel, self.output.side);
        let per = self.input.len();
        let mut idx = Vec::with_capacity(batch * ho * ho * ci * k * k);
        for b in 0..batch {
            for oy in 0..ho {
                for ox in 0..ho {
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * self.stride + ky) as isize - self.padding as isize;
                                let x = (ox * self.stride + kx) as isize - self.padding as isize;
                                idx.push(if y >= 0 && y < hi && x >= 0 && x < hi {
                                    Some(b * per + c * (hi * hi) as usize + (y * hi + x) as usize)
                                } else {
                                    None
                                });
                            }
                        }
                    }
                }
            }
        }
        idx
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let batch = x.rows();
        assert_eq!(x.cols(), self.input.len(), "conv input width");
        let pixels = self.output.side * self.output.side;
        let fan_in = self.input.channels * self.kernel * self.kernel;
        let patches = x.gather_flat(Rc::new(self.patch_index(batch)), batch * pixels, fan_in);
        let out = patches.matmul(p.get(self.weight)).add(p.get(self.bias));
        let co = self.output.channels;
        let mut perm = Vec::with_capacity(batch * co * pixels);
        for b in 0..batch {
            for c in 0..co {
                for px in 0..pixels {
                    perm.push(Some((b * pixels + px) * co + c));
                }
            }
        }
        out.gather_flat(Rc::new(perm), batch, co * pixels)
    }
}

/// Nearest-neighbour 2x upsampling of channel-major images.
pub fn upsample2<'t>(x: Var<'t>, shape: FeatureShape) -> Var<'t> {
    let batch = x.rows();
    let s = shape.side;
    let s2 = 2 * s;
    let mut idx = Vec::with_capacity(batch * shape.channels * s2 * s2);
    for b in 0..batch {
        for c in 0..shape.channels {
            for y in 0..s2 {
                for xx in 0..s2 {
                    idx.push(Some(b * shape.len() + c * s * s + (y / 2) * s + xx / 2));
                }
            }
        }
    }
    x.gather_flat(Rc::new(idx), batch, shape.channels * s2 * s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_store_gradients;

    #[test]
    fn mlp_value_path_matches_tape() {
        let mut rng = RngStream::new(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 2], Activation::Silu, &mut rng);
        let x = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let tape = crate::numerics::Tape::new();
        let p = store.bind(&tape);
        let y = mlp.forward(&p, tape.constant(x.clone())).value();
        assert!(y.max_abs_diff(&mlp.forward_value(&store, &x)) < 1e-14);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = RngStream::new(1);
        let mut store = ParamStore::new();
        let shape = FeatureShape { channels: 2, side: 5 };
        let conv = Conv2d::new(&mut store, "c", shape, 3, 3, 2, 1, &mut rng);
        let x = Matrix::from_fn(2, shape.len(), |_, _| rng.normal());
        let tape = crate::numerics::Tape::new();
        let p = store.bind(&tape);
        let y = conv.forward(&p, tape.constant(x.clone())).value();
        let w = store.get(conv.weight);
        let ho = conv.output.side;
        assert_eq!(ho, 3);
        for b in 0..2 {
            for co in 0..3 {
                for oy in 0..ho {
                    for ox in 0..ho {
                        let mut acc = store.get(conv.bias)[(0, co)];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let yy = (oy * 2 + ky) as isize - 1;
                                    let xx = (ox * 2 + kx) as isize - 1;
                                    if (0..5).contains(&yy) && (0..5).contains(&xx) {
                                        let v = x[(b, ci * 25 + yy as usize * 5 + xx as usize)];
                                        acc += v * w[(ci * 9 + ky * 3 + kx, co)];
                                    }
                                }
                            }
                        }
                        assert!((y[(b, co * 9 + oy * 3 + ox)] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_and_upsample_gradients() {
        let mut rng = RngStream::new(2);
        let mut store = ParamStore::new();
        let shape = FeatureShape { channels: 1, side: 4 };
        let conv = Conv2d::new(&mut store, "c", shape, 2, 3, 1, 1, &mut rng);
        let x = store.add("x", Matrix::from_fn(2, 16, |_, _| rng.normal()));
        let report = check_store_gradients(&store, 1e-5, |_, p| {
            let h = conv.forward(p, p.get(x)).tanh();
            upsample2(h, conv.output).square().sum()
        });
        assert!(report.passes(1e-6), "{report:?}");
    }
}
