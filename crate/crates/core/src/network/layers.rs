use serde::{Deserialize, Serialize};

use super::{NetworkError, Result};
use crate::activations::{ActivationKind, ShapeParam};
use crate::tensor::Tensor;

/// Fully connected layer. Accepts any batched input and flattens each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `fan_in x fan_out`.
    pub weights: Tensor,
    /// `[fan_out]`.
    pub bias: Tensor,
    pub activation: ActivationKind,
    /// One per output unit for adaptive kinds, empty otherwise.
    #[serde(default)]
    pub shape_params: Vec<ShapeParam>,
    #[serde(skip)]
    cache: Option<ActCache>,
}

/// Valid, stride-1 cross-correlation with one shape parameter per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2dLayer {
    /// `out_ch x in_ch x kh x kw`.
    pub kernels: Tensor,
    /// `[out_ch]`.
    pub bias: Tensor,
    pub activation: ActivationKind,
    #[serde(default)]
    pub shape_params: Vec<ShapeParam>,
    #[serde(skip)]
    cache: Option<ActCache>,
}

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MaxPool2dLayer {
    #[serde(skip)]
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct ActCache {
    input: Tensor,
    dx: Vec<f64>,
    dalpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense(DenseLayer),
    Conv2d(Conv2dLayer),
    MaxPool2d(MaxPool2dLayer),
}

/// Flat gradients of one layer, in the same order as the parameter buffers.
/// `shape` holds derivatives with respect to the unconstrained `a = ln alpha`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub shape: Vec<f64>,
}

/// Parameter groups checked and reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Weight,
    Bias,
    Shape,
}

impl ParamClass {
    pub const ALL: [ParamClass; 3] = [Self::Weight, Self::Bias, Self::Shape];
}

fn shape_params_for(kind: ActivationKind, units: usize) -> Vec<ShapeParam> {
    if kind.is_adaptive() {
        vec![ShapeParam::default(); units]
    } else {
        Vec::new()
    }
}

impl DenseLayer {
    pub fn new(fan_in: usize, fan_out: usize, activation: ActivationKind) -> Self {
        Self {
            weights: Tensor::zeros([fan_in, fan_out]).expect("positive dims"),
            bias: Tensor::zeros([fan_out]).expect("positive dims"),
            activation,
            shape_params: shape_params_for(activation, fan_out),
            cache: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weights.shape()[1]
    }

    fn forward(&self, input: &Tensor, keep: bool) -> Result<(Tensor, Option<ActCache>)> {
        let b = input.rows();
        let flat = input.clone().reshape([b, input.row_len()])?;
        let pre = flat.matmul(&self.weights)?.add_row(&self.bias)?;
        let units = self.fan_out();
        let alphas: Vec<f64> = self.shape_params.iter().map(|p| p.alpha()).collect();
        let kind = self.activation;
        let n = pre.len();
        let mut out = pre.into_data();
        let (mut dx, mut dalpha) = if keep {
            (vec![0.0; n], vec![0.0; if alphas.is_empty() { 0 } else { n }])
        } else {
            (Vec::new(), Vec::new())
        };
        for (i, v) in out.iter_mut().enumerate() {
            let alpha = alphas.get(i % units).copied().unwrap_or(1.0);
            let e = kind.eval(alpha, *v);
            *v = e.value;
            if keep {
                dx[i] = e.dx;
                if let Some(d) = dalpha.get_mut(i) {
                    *d = e.dalpha;
                }
            }
        }
        let out = Tensor::from_vec([b, units], out)?;
        let cache = keep.then_some(ActCache {
            input: flat,
            dx,
            dalpha,
        });
        Ok((out, cache))
    }

    fn backward(&self, grad_out: &Tensor, input_shape: &[usize], need_input: bool) -> Result<(Option<Tensor>, LayerGrad)> {
        let cache = self.cache.as_ref().ok_or(NetworkError::MissingCache)?;
        let units = self.fan_out();
        let g = grad_out.data();
        let delta: Vec<f64> = g.iter().zip(&cache.dx).map(|(g, d)| g * d).collect();
        let delta = Tensor::from_vec([grad_out.rows(), units], delta)?;
        let dw = cache.input.transpose()?.matmul(&delta)?;
        let db = delta.reduce_sum(0)?;
        let mut da = vec![0.0; self.shape_params.len()];
        if !da.is_empty() {
            for (i, (g, d)) in g.iter().zip(&cache.dalpha).enumerate() {
                da[i % units] += g * d;
            }
            for (d, p) in da.iter_mut().zip(&self.shape_params) {
                *d *= p.alpha();
            }
        }
        let grad_in = if need_input {
            Some(delta.matmul(&self.weights.transpose()?)?.reshape(input_shape.to_vec())?)
        } else {
            None
        };
        Ok((
            grad_in,
            LayerGrad {
                weights: dw.into_data(),
                bias: db.into_data(),
                shape: da,
            },
        ))
    }
}

impl Conv2dLayer {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, activation: ActivationKind) -> Self {
        Self {
            kernels: Tensor::zeros([out_ch, in_ch, kernel, kernel]).expect("positive dims"),
            bias: Tensor::zeros([out_ch]).expect("positive dims"),
            activation,
            shape_params: shape_params_for(activation, out_ch),
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    /// Per-sample output shape for a `[c, h, w]` input.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let (kh, kw) = self.kernel_hw();
        match input {
            [c, h, w] if *c == self.in_channels() && *h >= kh && *w >= kw => {
                Ok(vec![self.out_channels(), h - kh + 1, w - kw + 1])
            }
            [c, h, w] if *c == self.in_channels() => Err(format!(
                "kernel {kh}x{kw} larger than input {h}x{w}"
            )),
            _ => Err(format!(
                "expected [{}, h, w] input, got {input:?}",
                self.in_channels()
            )),
        }
    }

    /// Cross-correlation plus bias, before the activation.
    pub fn correlate(&self, input: &Tensor) -> Result<Tensor> {
        let (b, ic, h, w) = dims4(input)?;
        let (oc, kh, kw) = (self.out_channels(), self.kernel_hw().0, self.kernel_hw().1);
        if ic != self.in_channels() || h < kh || w < kw {
            return Err(NetworkError::Shape(format!(
                "conv kernels {:?} do not fit input {:?}",
                self.kernels.shape(),
                input.shape()
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let x = input.data();
        let k = self.kernels.data();
        let mut out = vec![0.0; b * oc * oh * ow];
        for n in 0..b {
            for o in 0..oc {
                let plane = &mut out[(n * oc + o) * oh * ow..(n * oc + o + 1) * oh * ow];
                plane.fill(self.bias.data()[o]);
                for c in 0..ic {
                    let src = &x[(n * ic + c) * h * w..(n * ic + c + 1) * h * w];
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let wv = k[((o * ic + c) * kh + ki) * kw + kj];
                            for oy in 0..oh {
                                let row = &src[(oy + ki) * w + kj..(oy + ki) * w + kj + ow];
                                for (dst, &s) in plane[oy * ow..(oy + 1) * ow].iter_mut().zip(row) {
                                    *dst += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_vec([b, oc, oh, ow], out)?)
    }

    fn forward(&self, input: &Tensor, keep: bool) -> Result<(Tensor, Option<ActCache>)> {
        let pre = self.correlate(input)?;
        let shape = pre.shape().to_vec();
        let plane = shape[2] * shape[3];
        let oc = shape[1];
        let kind = self.activation;
        let alphas: Vec<f64> = self.shape_params.iter().map(|p| p.alpha()).collect();
        let n = pre.len();
        let mut out = pre.into_data();
        let (mut dx, mut dalpha) = if keep {
            (vec![0.0; n], vec![0.0; if alphas.is_empty() { 0 } else { n }])
        } else {
            (Vec::new(), Vec::new())
        };
        for (i, v) in out.iter_mut().enumerate() {
            let alpha = alphas.get((i / plane) % oc).copied().unwrap_or(1.0);
            let e = kind.eval(alpha, *v);
            *v = e.value;
            if keep {
                dx[i] = e.dx;
                if let Some(d) = dalpha.get_mut(i) {
                    *d = e.dalpha;
                }
            }
        }
        let out = Tensor::from_vec(shape, out)?;
        let cache = keep.then(|| ActCache {
            input: input.clone(),
            dx,
            dalpha,
        });
        Ok((out, cache))
    }

    fn backward(&self, grad_out: &Tensor, need_input: bool) -> Result<(Option<Tensor>, LayerGrad)> {
        let cache = self.cache.as_ref().ok_or(NetworkError::MissingCache)?;
        let (b, ic, h, w) = dims4(&cache.input)?;
        let (_, oc, oh, ow) = dims4(grad_out)?;
        let (kh, kw) = self.kernel_hw();
        let plane = oh * ow;
        let g = grad_out.data();
        let delta: Vec<f64> = g.iter().zip(&cache.dx).map(|(g, d)| g * d).collect();

        let mut da = vec![0.0; self.shape_params.len()];
        if !da.is_empty() {
            for (i, (g, d)) in g.iter().zip(&cache.dalpha).enumerate() {
                da[(i / plane) % oc] += g * d;
            }
            for (d, p) in da.iter_mut().zip(&self.shape_params) {
                *d *= p.alpha();
            }
        }

        let x = cache.input.data();
        let k = self.kernels.data();
        let mut dk = vec![0.0; k.len()];
        let mut db = vec![0.0; oc];
        let mut dx_in = if need_input { vec![0.0; x.len()] } else { Vec::new() };
        for n in 0..b {
            for o in 0..oc {
                let dplane = &delta[(n * oc + o) * plane..(n * oc + o + 1) * plane];
                db[o] += dplane.iter().sum::<f64>();
                for c in 0..ic {
                    let base = (n * ic + c) * h * w;
                    let src = &x[base..base + h * w];
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let widx = ((o * ic + c) * kh + ki) * kw + kj;
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let row = &src[(oy + ki) * w + kj..(oy + ki) * w + kj + ow];
                                for (&d, &s) in dplane[oy * ow..(oy + 1) * ow].iter().zip(row) {
                                    acc += d * s;
                                }
                            }
                            dk[widx] += acc;
                            if need_input {
                                let wv = k[widx];
                                for oy in 0..oh {
                                    let start = base + (oy + ki) * w + kj;
                                    let dst = &mut dx_in[start..start + ow];
                                    for (t, &d) in dst.iter_mut().zip(&dplane[oy * ow..(oy + 1) * ow]) {
                                        *t += wv * d;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let grad_in = if need_input {
            Some(Tensor::from_vec(cache.input.shape().to_vec(), dx_in)?)
        } else {
            None
        };
        Ok((
            grad_in,
            LayerGrad {
                weights: dk,
                bias: db,
                shape: da,
            },
        ))
    }
}

impl MaxPool2dLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_shape(input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match input {
            [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
            _ => Err(format!("cannot 2x2-pool input {input:?}")),
        }
    }

    fn forward(&self, input: &Tensor, keep: bool) -> Result<(Tensor, Option<PoolCache>)> {
        let (b, c, h, w) = dims4(input)?;
        if h < 2 || w < 2 {
            return Err(NetworkError::Shape(format!(
                "cannot 2x2-pool input {:?}",
                input.shape()
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = input.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(if keep { out.capacity() } else { 0 });
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    if keep {
                        argmax.push(best);
                    }
                }
            }
        }
        let out = Tensor::from_vec([b, c, oh, ow], out)?;
        let cache = keep.then(|| PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        });
        Ok((out, cache))
    }

    fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NetworkError::MissingCache)?;
        let mut grad = Tensor::zeros(cache.input_shape.clone())?;
        let dst = grad.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            dst[idx] += g;
        }
        Ok(grad)
    }
}

fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[b, c, h, w] => Ok((b, c, h, w)),
        s => Err(NetworkError::Shape(format!("expected a [batch, c, h, w] tensor, got {s:?}"))),
    }
}

impl Layer {
    pub fn activation(&self) -> Option<ActivationKind> {
        match self {
            Layer::Dense(l) => Some(l.activation),
            Layer::Conv2d(l) => Some(l.activation),
            Layer::MaxPool2d(_) => None,
        }
    }

    pub fn shape_params(&self) -> &[ShapeParam] {
        match self {
            Layer::Dense(l) => &l.shape_params,
            Layer::Conv2d(l) => &l.shape_params,
            Layer::MaxPool2d(_) => &[],
        }
    }

    pub fn shape_params_mut(&mut self) -> &mut [ShapeParam] {
        match self {
            Layer::Dense(l) => &mut l.shape_params,
            Layer::Conv2d(l) => &mut l.shape_params,
            Layer::MaxPool2d(_) => &mut [],
        }
    }

    /// Weight matrix or kernel stack, if the layer has one.
    pub fn weights(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense(l) => Some(&l.weights),
            Layer::Conv2d(l) => Some(&l.kernels),
            Layer::MaxPool2d(_) => None,
        }
    }

    pub fn weights_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense(l) => Some(&mut l.weights),
            Layer::Conv2d(l) => Some(&mut l.kernels),
            Layer::MaxPool2d(_) => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense(l) => Some(&l.bias),
            Layer::Conv2d(l) => Some(&l.bias),
            Layer::MaxPool2d(_) => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense(l) => Some(&mut l.bias),
            Layer::Conv2d(l) => Some(&mut l.bias),
            Layer::MaxPool2d(_) => None,
        }
    }

    /// Number of parameters in `class`.
    pub fn param_count(&self, class: ParamClass) -> usize {
        match class {
            ParamClass::Weight => self.weights().map_or(0, Tensor::len),
            ParamClass::Bias => self.bias().map_or(0, Tensor::len),
            ParamClass::Shape => self.shape_params().len(),
        }
    }

    pub fn param(&self, class: ParamClass, i: usize) -> f64 {
        match class {
            ParamClass::Weight => self.weights().expect("layer has weights").data()[i],
            ParamClass::Bias => self.bias().expect("layer has bias").data()[i],
            ParamClass::Shape => self.shape_params()[i].0,
        }
    }

    pub fn set_param(&mut self, class: ParamClass, i: usize, value: f64) {
        match class {
            ParamClass::Weight => self.weights_mut().expect("layer has weights").data_mut()[i] = value,
            ParamClass::Bias => self.bias_mut().expect("layer has bias").data_mut()[i] = value,
            ParamClass::Shape => self.shape_params_mut()[i].0 = value,
        }
    }

    /// Per-sample output shape for the given per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense(l) => {
                let flat: usize = input.iter().product();
                if flat == l.fan_in() {
                    Ok(vec![l.fan_out()])
                } else {
                    Err(format!(
                        "dense layer expects {} inputs, got {input:?}",
                        l.fan_in()
                    ))
                }
            }
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::MaxPool2d(_) => MaxPool2dLayer::output_shape(input),
        }
    }

    pub(crate) fn forward(&mut self, input: &Tensor, keep: bool) -> Result<Tensor> {
        let out = match self {
            Layer::Dense(l) => {
                let (out, cache) = l.forward(input, keep)?;
                l.cache = cache;
                out
            }
            Layer::Conv2d(l) => {
                let (out, cache) = l.forward(input, keep)?;
                l.cache = cache;
                out
            }
            Layer::MaxPool2d(l) => {
                let (out, cache) = l.forward(input, keep)?;
                l.cache = cache;
                out
            }
        };
        Ok(out)
    }

    pub(crate) fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Layer::Dense(l) => l.forward(input, false)?.0,
            Layer::Conv2d(l) => l.forward(input, false)?.0,
            Layer::MaxPool2d(l) => l.forward(input, false)?.0,
        })
    }

    pub(crate) fn backward(
        &self,
        grad_out: &Tensor,
        input_shape: &[usize],
        need_input: bool,
    ) -> Result<(Option<Tensor>, LayerGrad)> {
        match self {
            Layer::Dense(l) => l.backward(grad_out, input_shape, need_input),
            Layer::Conv2d(l) => l.backward(grad_out, need_input),
            Layer::MaxPool2d(l) => Ok((Some(l.backward(grad_out)?), LayerGrad::default())),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Dense(l) => l.cache = None,
            Layer::Conv2d(l) => l.cache = None,
            Layer::MaxPool2d(l) => l.cache = None,
        }
    }

    pub(crate) fn has_cache(&self) -> bool {
        match self {
            Layer::Dense(l) => l.cache.is_some(),
            Layer::Conv2d(l) => l.cache.is_some(),
            Layer::MaxPool2d(l) => l.cache.is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_hand_example() {
        let mut conv = Conv2dLayer::new(1, 1, 2, ActivationKind::Identity);
        conv.kernels = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = conv.correlate(&x).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut conv = Conv2dLayer::new(1, 1, 1, ActivationKind::Identity);
        conv.kernels = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let x = Tensor::from_fn([2, 1, 3, 4], |i| i as f64 * 0.5 - 2.0).unwrap();
        let (out, _) = conv.forward(&x, false).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn kernel_larger_than_input() {
        let conv = Conv2dLayer::new(1, 1, 5, ActivationKind::Relu);
        let x = Tensor::zeros([1, 1, 4, 4]).unwrap();
        assert!(matches!(conv.correlate(&x), Err(NetworkError::Shape(_))));
        assert!(conv.output_shape(&[1, 4, 4]).unwrap_err().contains("larger"));
    }

    #[test]
    fn pool_routes_to_max() {
        let mut pool = Layer::MaxPool2d(MaxPool2dLayer::new());
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = pool.forward(&x, true).unwrap();
        assert_eq!(out.data(), &[4.0]);
        let g = Tensor::from_vec([1, 1, 1, 1], vec![1.5]).unwrap();
        let (gin, _) = pool.backward(&g, &[1, 1, 2, 2], true).unwrap();
        assert_eq!(gin.unwrap().data(), &[0.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn pool_ties_take_first_in_row_major_order() {
        let mut pool = Layer::MaxPool2d(MaxPool2dLayer::new());
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 7.0, 7.0, 7.0]).unwrap();
        pool.forward(&x, true).unwrap();
        let g = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let (gin, _) = pool.backward(&g, &[1, 1, 2, 2], true).unwrap();
        assert_eq!(gin.unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_floors_odd_sizes() {
        assert_eq!(MaxPool2dLayer::output_shape(&[6, 5, 7]).unwrap(), vec![6, 2, 3]);
    }

    #[test]
    fn shape_slots_follow_activation() {
        assert_eq!(DenseLayer::new(3, 4, ActivationKind::AdaptiveGumbel).shape_params.len(), 4);
        assert!(DenseLayer::new(3, 4, ActivationKind::Relu).shape_params.is_empty());
        assert_eq!(Conv2dLayer::new(1, 6, 5, ActivationKind::AdaptiveReluExp).shape_params.len(), 6);
    }
}
