//! Dense tanh MLP over a flat parameter slice, shared by the mapping model
//! and the forecaster.
//!
//! Layout per layer, in order: weights row-major `out x in`, then `out`
//! biases. Hidden layers use tanh, the output layer is linear times `gain`.

pub(crate) fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Offsets of each layer's weight block inside the flat slice.
fn layer_offsets(dims: &[usize]) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
    let mut offset = 0;
    dims.windows(2).map(move |w| {
        let start = offset;
        offset += w[0] * w[1] + w[1];
        (start, w[0], w[1])
    })
}

/// Activations of every layer, input included, as needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

pub(crate) fn forward(dims: &[usize], params: &[f64], input: &[f64], gain: f64) -> Trace {
    debug_assert_eq!(input.len(), dims[0]);
    debug_assert_eq!(params.len(), param_count(dims));
    let last = dims.len() - 2;
    let mut acts = Vec::with_capacity(dims.len());
    acts.push(input.to_vec());
    for (layer, (start, fan_in, fan_out)) in layer_offsets(dims).enumerate() {
        let w = &params[start..start + fan_in * fan_out];
        let b = &params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
        let x = acts.last().unwrap();
        let mut y = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let z = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b[o];
            y.push(if layer == last { gain * z } else { z.tanh() });
        }
        acts.push(y);
    }
    Trace { acts }
}

/// Reverse pass. Adds `dL/dparams` into `grad_params` and returns `dL/dinput`.
pub(crate) fn backward(
    dims: &[usize],
    params: &[f64],
    trace: &Trace,
    upstream: &[f64],
    gain: f64,
    grad_params: &mut [f64],
) -> Vec<f64> {
    debug_assert_eq!(upstream.len(), *dims.last().unwrap());
    let offsets: Vec<_> = layer_offsets(dims).collect();
    let last = offsets.len() - 1;
    // dL/dz for the current layer
    let mut delta: Vec<f64> = upstream.iter().map(|g| g * gain).collect();
    for layer in (0..=last).rev() {
        let (start, fan_in, fan_out) = offsets[layer];
        let x = &trace.acts[layer];
        let w_end = start + fan_in * fan_out;
        {
            let (gw, gb) = grad_params[start..w_end + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        let w = &params[start..w_end];
        let mut dx = vec![0.0; fan_in];
        for o in 0..fan_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            for (acc, wi) in dx.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                *acc += d * wi;
            }
        }
        if layer > 0 {
            // x is tanh output of the previous layer
            for (d, a) in dx.iter_mut().zip(x) {
                *d *= 1.0 - a * a;
            }
        }
        delta = dx;
    }
    delta
}
