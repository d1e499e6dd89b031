use rand::Rng;

use super::{decode, ForecastOutput, LayerShape, NetConfig, NetParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inverted-dropout multipliers for every hidden layer: `0` for dropped
/// units, `1/(1-p)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T> {
    pub layers: Vec<Vec<T>>,
}

/// Draws a mask for `cfg`, or `None` when dropout is disabled.
pub fn draw_mask<T: Scalar, R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Option<DropoutMask<T>> {
    if cfg.dropout_p <= 0.0 {
        return None;
    }
    let p = T::lit(cfg.dropout_p);
    let keep = T::one() / (T::one() - p);
    let widths = cfg.widths();
    let hidden = &widths[1..widths.len() - 1];
    Some(DropoutMask {
        layers: hidden
            .iter()
            .map(|&w| {
                (0..w)
                    .map(|_| if T::unit_uniform(rng) < p { T::zero() } else { keep })
                    .collect()
            })
            .collect(),
    })
}

/// Values retained for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Trace<T> {
    /// Input of every layer (the network input first).
    pub inputs: Vec<Vec<T>>,
    /// `tanh` of every hidden pre-activation, before the dropout mask.
    pub tanh: Vec<Vec<T>>,
    pub output: Vec<T>,
}

fn affine<T: Scalar>(params: &[T], layer: &LayerShape, x: &[T]) -> Vec<T> {
    let w = &params[layer.weights()];
    let b = &params[layer.bias()];
    (0..layer.outputs)
        .map(|o| {
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            b[o] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
        })
        .collect()
}

pub(crate) fn forward_trace<T: Scalar>(
    params: &[T],
    layers: &[LayerShape],
    x: &[T],
    mask: Option<&DropoutMask<T>>,
) -> Result<Trace<T>> {
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut tanh = Vec::with_capacity(last);
    let mut h = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let z = affine(params, layer, &h);
        inputs.push(std::mem::take(&mut h));
        if l == last {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalOverflow("non-finite network output".into()));
            }
            return Ok(Trace { inputs, tanh, output: z });
        }
        let t: Vec<T> = z.iter().map(|v| v.tanh()).collect();
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow(format!("non-finite activation in layer {l}")));
        }
        h = match mask {
            Some(m) => t.iter().zip(&m.layers[l]).map(|(&a, &k)| a * k).collect(),
            None => t.clone(),
        };
        tanh.push(t);
    }
    unreachable!("network has at least one layer")
}

/// Accumulates `∂objective/∂params` into `grad` given the output gradient.
pub(crate) fn backward<T: Scalar>(
    params: &[T],
    layers: &[LayerShape],
    trace: &Trace<T>,
    mask: Option<&DropoutMask<T>>,
    grad_out: &[T],
    grad: &mut [T],
) {
    let mut delta = grad_out.to_vec();
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let input = &trace.inputs[l];
        let w_range = layer.weights();
        let b_range = layer.bias();
        {
            let gw = &mut grad[w_range.clone()];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
        }
        for (g, &d) in grad[b_range].iter_mut().zip(&delta) {
            *g += d;
        }
        if l == 0 {
            break;
        }
        let w = &params[w_range];
        let mut back = vec![T::zero(); layer.inputs];
        for (o, &d) in delta.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            for (b, &wv) in back.iter_mut().zip(row) {
                *b += wv * d;
            }
        }
        let t = &trace.tanh[l - 1];
        delta = back
            .iter()
            .zip(t)
            .enumerate()
            .map(|(i, (&g, &a))| {
                let keep = mask.map_or(T::one(), |m| m.layers[l - 1][i]);
                g * keep * (T::one() - a * a)
            })
            .collect();
    }
}

/// Raw output activations for one input.
pub fn forward_raw<T: Scalar>(
    params: &NetParams<T>,
    cfg: &NetConfig,
    input: &[T],
    mask: Option<&DropoutMask<T>>,
) -> Result<Vec<T>> {
    params.check_shape(cfg)?;
    if input.len() != cfg.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "input has {} values, network expects {}",
            input.len(),
            cfg.input_dim()
        )));
    }
    Ok(forward_trace(&params.values, &cfg.layers(), input, mask)?.output)
}

/// Forecast for one encoded input. Without a mask the pass is
/// deterministic; with inverted dropout this is the expected-activation
/// network.
pub fn forward<T: Scalar>(
    params: &NetParams<T>,
    cfg: &NetConfig,
    input: &[T],
    mask: Option<&DropoutMask<T>>,
) -> Result<ForecastOutput<T>> {
    Ok(decode(&forward_raw(params, cfg, input, mask)?))
}
