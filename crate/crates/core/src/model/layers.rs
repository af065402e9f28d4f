use crate::ops::{group_norm_row, ConvParams, SEParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gain: vec![1.0; c],
            bias: vec![0.0; c],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `in x out` row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward_rows(&self, x: &[f32]) -> Vec<f32> {
        crate::ops::linear_rows(x, self.in_dim, &self.weight, &self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub groups: usize,
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl GroupNorm {
    pub const EPS: f32 = 1e-5;

    pub fn new(c: usize, groups: usize) -> Self {
        Self {
            groups,
            gain: vec![1.0; c],
            bias: vec![0.0; c],
        }
    }

    pub fn forward_rows(&self, x: &mut [f32]) {
        let c = self.gain.len();
        for row in x.chunks_exact_mut(c) {
            group_norm_row(row, self.groups, &self.gain, &self.bias, Self::EPS);
        }
    }
}

/// Role of a parameter tensor, which decides its initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    Weight { fan_in: usize },
    Gain,
    Bias,
}

/// Mutable view of one named parameter tensor.
pub struct ParamMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
    pub data: &'a mut Vec<f32>,
}

pub(crate) struct Collector<'a> {
    pub out: Vec<ParamMut<'a>>,
}

impl<'a> Collector<'a> {
    pub fn new() -> Self {
        Self { out: Vec::new() }
    }

    fn push(&mut self, name: String, dims: Vec<usize>, kind: ParamKind, data: &'a mut Vec<f32>) {
        self.out.push(ParamMut { name, dims, kind, data });
    }

    pub fn conv(&mut self, prefix: &str, p: &'a mut ConvParams) {
        let k = p.kernel_volume();
        let (ci, co) = (p.in_channels, p.out_channels);
        self.push(format!("{prefix}.weight"), vec![k, ci, co], ParamKind::Weight { fan_in: k * ci }, &mut p.weights);
        self.push(format!("{prefix}.bias"), vec![co], ParamKind::Bias, &mut p.bias);
    }

    pub fn layer_norm(&mut self, prefix: &str, n: &'a mut LayerNorm) {
        let c = n.gain.len();
        self.push(format!("{prefix}.gain"), vec![c], ParamKind::Gain, &mut n.gain);
        self.push(format!("{prefix}.bias"), vec![c], ParamKind::Bias, &mut n.bias);
    }

    pub fn group_norm(&mut self, prefix: &str, n: &'a mut GroupNorm) {
        let c = n.gain.len();
        self.push(format!("{prefix}.gain"), vec![c], ParamKind::Gain, &mut n.gain);
        self.push(format!("{prefix}.bias"), vec![c], ParamKind::Bias, &mut n.bias);
    }

    pub fn linear(&mut self, prefix: &str, l: &'a mut Linear) {
        let (i, o) = (l.in_dim, l.out_dim);
        self.push(format!("{prefix}.weight"), vec![i, o], ParamKind::Weight { fan_in: i }, &mut l.weight);
        self.push(format!("{prefix}.bias"), vec![o], ParamKind::Bias, &mut l.bias);
    }

    pub fn se(&mut self, prefix: &str, s: &'a mut SEParams) {
        let (c, h) = (s.channels, s.hidden);
        self.push(format!("{prefix}.w1"), vec![c, h], ParamKind::Weight { fan_in: c }, &mut s.w1);
        self.push(format!("{prefix}.b1"), vec![h], ParamKind::Bias, &mut s.b1);
        self.push(format!("{prefix}.w2"), vec![h, c], ParamKind::Weight { fan_in: h }, &mut s.w2);
        self.push(format!("{prefix}.b2"), vec![c], ParamKind::Bias, &mut s.b2);
    }
}
