//! Multilayer perceptron with tanh hidden layers and a scalar linear output.
//!
//! Besides the usual forward/backward passes this provides the reverse pass through a
//! forward-mode tangent, which is what the force-matching gradient needs: forces are input
//! gradients of the network, so their weight-derivatives are mixed second derivatives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArchitecture {
    /// Input width first, scalar output last.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn new(n_inputs: usize, hidden: &[usize]) -> Result<Self> {
        let mut layer_sizes = vec![n_inputs];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let arch = Self { layer_sizes, activation: Activation::Tanh };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::Invalid("need at least one hidden layer".into()));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Invalid("layer sizes must be positive".into()));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::Invalid("output layer must have size 1".into()));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.layer_sizes)
    }
}

/// Placement of each layer's weights and biases in the flat parameter vector.
///
/// Layer `l` (1-based, mapping `sizes[l-1] -> sizes[l]`) stores its weight matrix row-major
/// followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub sizes: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        offsets.push(0);
        for l in 1..sizes.len() {
            offsets.push(off);
            off += sizes[l] * sizes[l - 1] + sizes[l];
        }
        Self { sizes: sizes.to_vec(), offsets, len: off }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    #[inline]
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        self.offsets[layer] + row * self.sizes[layer - 1] + col
    }

    #[inline]
    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        self.offsets[layer] + self.sizes[layer] * self.sizes[layer - 1] + row
    }

    #[inline]
    fn weights<'a>(&self, w: &'a [f64], layer: usize) -> &'a [f64] {
        let start = self.offsets[layer];
        &w[start..start + self.sizes[layer] * self.sizes[layer - 1]]
    }

    #[inline]
    fn bias<'a>(&self, w: &'a [f64], layer: usize) -> &'a [f64] {
        let start = self.bias_index(layer, 0);
        &w[start..start + self.sizes[layer]]
    }

    /// Total hidden width, the scratch size per atom for stored activations.
    pub fn hidden_width(&self) -> usize {
        self.sizes[1..self.sizes.len() - 1].iter().sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut w = vec![0.0; self.len];
        for l in 1..self.sizes.len() {
            let (fan_in, fan_out) = (self.sizes[l - 1], self.sizes[l]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for r in 0..fan_out {
                for c in 0..fan_in {
                    w[self.weight_index(l, r, c)] = rng.random_range(-bound..bound);
                }
            }
        }
        ParamVector(w)
    }
}

/// Flat network weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Forward pass; returns the output and fills `hidden` (length `layout.hidden_width()`).
pub fn forward(layout: &Layout, w: &[f64], x: &[f64], hidden: &mut [f64]) -> f64 {
    let n_layers = layout.n_layers();
    let mut off_prev = usize::MAX;
    let mut off = 0;
    for l in 1..n_layers {
        let (n_in, n_out) = (layout.sizes[l - 1], layout.sizes[l]);
        let wl = layout.weights(w, l);
        let bl = layout.bias(w, l);
        for r in 0..n_out {
            let row = &wl[r * n_in..(r + 1) * n_in];
            let mut z = bl[r];
            if l == 1 {
                for c in 0..n_in {
                    z += row[c] * x[c];
                }
            } else {
                for c in 0..n_in {
                    z += row[c] * hidden[off_prev + c];
                }
            }
            hidden[off + r] = z.tanh();
        }
        off_prev = off;
        off += n_out;
    }
    let n_in = layout.sizes[n_layers - 1];
    let wl = layout.weights(w, n_layers);
    let mut out = layout.bias(w, n_layers)[0];
    let last = &hidden[off_prev..off_prev + n_in];
    for c in 0..n_in {
        out += wl[c] * last[c];
    }
    out
}

/// Gradient of the output with respect to the input, given stored activations.
pub fn input_gradient(layout: &Layout, w: &[f64], hidden: &[f64], grad_x: &mut [f64]) {
    let n_layers = layout.n_layers();
    let hidden_offsets = hidden_offsets(layout);
    // adjoint of the last hidden layer
    let mut adj: Vec<f64> = layout.weights(w, n_layers).to_vec();
    for l in (1..n_layers).rev() {
        let (n_in, n_out) = (layout.sizes[l - 1], layout.sizes[l]);
        let a = &hidden[hidden_offsets[l]..hidden_offsets[l] + n_out];
        let wl = layout.weights(w, l);
        let mut next = vec![0.0; n_in];
        for r in 0..n_out {
            let dz = adj[r] * (1.0 - a[r] * a[r]);
            let row = &wl[r * n_in..(r + 1) * n_in];
            for c in 0..n_in {
                next[c] += row[c] * dz;
            }
        }
        adj = next;
    }
    grad_x.copy_from_slice(&adj);
}

fn hidden_offsets(layout: &Layout) -> Vec<usize> {
    // index by layer number; entry 0 unused
    let mut offs = vec![0; layout.sizes.len()];
    let mut off = 0;
    for l in 1..layout.n_layers() {
        offs[l] = off;
        off += layout.sizes[l];
    }
    offs
}

/// Accumulates into `grad` the weight-gradient of `c_out * out(x) + d/de [out(x + e v)]|_{e=0}`.
///
/// The second term is the directional derivative of the output along input tangent `v`; its
/// weight-gradient is obtained by reverse-mode differentiation through the tangent forward pass.
/// Pass an all-zero `v` (or `None`) for plain backpropagation.
pub fn accumulate_gradient(
    layout: &Layout,
    w: &[f64],
    x: &[f64],
    hidden: &[f64],
    c_out: f64,
    v: Option<&[f64]>,
    grad: &mut [f64],
) {
    let n_layers = layout.n_layers();
    let hoff = hidden_offsets(layout);
    let act = |l: usize| -> &[f64] {
        if l == 0 {
            x
        } else {
            &hidden[hoff[l]..hoff[l] + layout.sizes[l]]
        }
    };

    // tangent forward: zdot[l] = W_l adot[l-1], adot[l] = (1 - a_l^2) zdot[l]
    let mut zdot: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    let mut adot: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    if let Some(v) = v {
        adot[0] = v.to_vec();
        for l in 1..n_layers {
            let (n_in, n_out) = (layout.sizes[l - 1], layout.sizes[l]);
            let wl = layout.weights(w, l);
            let a = act(l);
            let mut zd = vec![0.0; n_out];
            let mut ad = vec![0.0; n_out];
            for r in 0..n_out {
                let row = &wl[r * n_in..(r + 1) * n_in];
                let mut s = 0.0;
                for c in 0..n_in {
                    s += row[c] * adot[l - 1][c];
                }
                zd[r] = s;
                ad[r] = (1.0 - a[r] * a[r]) * s;
            }
            zdot[l] = zd;
            adot[l] = ad;
        }
    }
    let tangent = v.is_some();

    // output layer
    let last = n_layers - 1;
    let n_in = layout.sizes[last];
    let a_last = act(last);
    for c in 0..n_in {
        let mut g = c_out * a_last[c];
        if tangent {
            g += adot[last][c];
        }
        grad[layout.weight_index(n_layers, 0, c)] += g;
    }
    grad[layout.bias_index(n_layers, 0)] += c_out;
    let wout = layout.weights(w, n_layers);
    let mut adj_a: Vec<f64> = wout.iter().map(|x| c_out * x).collect();
    let mut adj_ad: Vec<f64> = if tangent { wout.to_vec() } else { Vec::new() };

    for l in (1..n_layers).rev() {
        let (n_in, n_out) = (layout.sizes[l - 1], layout.sizes[l]);
        let a = act(l);
        let a_prev = act(l - 1);
        let mut adj_z = vec![0.0; n_out];
        let mut adj_zd = vec![0.0; n_out];
        for r in 0..n_out {
            let d = 1.0 - a[r] * a[r];
            let mut aa = adj_a[r];
            if tangent {
                adj_zd[r] = adj_ad[r] * d;
                aa += adj_ad[r] * zdot[l][r] * (-2.0 * a[r]);
            }
            adj_z[r] = aa * d;
        }
        for r in 0..n_out {
            let base = layout.weight_index(l, r, 0);
            for c in 0..n_in {
                let mut g = adj_z[r] * a_prev[c];
                if tangent {
                    g += adj_zd[r] * adot[l - 1][c];
                }
                grad[base + c] += g;
            }
            grad[layout.bias_index(l, r)] += adj_z[r];
        }
        if l > 1 {
            let wl = layout.weights(w, l);
            let mut na = vec![0.0; n_in];
            let mut nad = vec![0.0; if tangent { n_in } else { 0 }];
            for r in 0..n_out {
                let row = &wl[r * n_in..(r + 1) * n_in];
                for c in 0..n_in {
                    na[c] += row[c] * adj_z[r];
                    if tangent {
                        nad[c] += row[c] * adj_zd[r];
                    }
                }
            }
            adj_a = na;
            adj_ad = nad;
        }
    }
}
