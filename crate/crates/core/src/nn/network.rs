use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::layer::{Activation, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-6;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Anything that owns a list of learnable tensors.
///
/// Gradient containers use the same types as the parameters they mirror, so
/// `tensors()` of a gradient lines up index-by-index with `tensors_mut()` of
/// the parameters.
pub trait ParamTree {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Parameters of one [`Network`].
///
/// Every mutable access stamps a new generation, which lets `backward`
/// reject tapes recorded against older values.
#[derive(Debug, Clone)]
pub struct NetParams {
    tensors: Vec<Tensor>,
    generation: u64,
}

impl PartialEq for NetParams {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl NetParams {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self {
            tensors,
            generation: fresh_id(),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Zero tensors with the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        Self::new(
            self.tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        )
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }
}

impl ParamTree for NetParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.tensors.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.generation = fresh_id();
        self.tensors.iter_mut().collect()
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Dense { input: Tensor },
    Conv { input: Tensor },
    Norm { xhat: Tensor, inv_std: Vec<f64> },
    Act { input: Tensor, output: Tensor },
}

/// Activation record of one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    generation: u64,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    caches: Vec<Cache>,
}

/// Gradients returned by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: NetParams,
    pub input: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    s: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// A validated feed-forward stack of [`LayerSpec`]s.
#[derive(Debug, Clone)]
pub struct Network {
    id: u64,
    layers: Vec<LayerSpec>,
    /// Per-sample shape entering each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Checks that consecutive layers agree on shapes. `input_shape` excludes
    /// the batch dimension, e.g. `[3, 32, 32]` for a stacked image.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidLayer {
                index: 0,
                reason: format!("input shape {input_shape:?} must be non-empty and positive"),
            });
        }
        let mut shapes = vec![input_shape.to_vec()];
        for (index, layer) in layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let flat: usize = cur.iter().product();
            let bad = |reason: String| Error::InvalidLayer { index, reason };
            let next = match *layer {
                LayerSpec::Dense { input, output } => {
                    if input == 0 || output == 0 {
                        return Err(bad("dense sizes must be positive".into()));
                    }
                    if input != flat {
                        return Err(bad(format!(
                            "dense expects {input} inputs, previous layer yields {cur:?}"
                        )));
                    }
                    vec![output]
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
                        return Err(bad(
                            "conv2d channels, kernel and stride must be positive".into()
                        ));
                    }
                    if cur.len() != 3 || cur[0] != in_channels {
                        return Err(bad(format!(
                            "conv2d expects [{in_channels}, H, W], got {cur:?}"
                        )));
                    }
                    if cur[1] < kernel || cur[2] < kernel {
                        return Err(bad(format!("kernel {kernel} larger than input {cur:?}")));
                    }
                    vec![
                        out_channels,
                        (cur[1] - kernel) / stride + 1,
                        (cur[2] - kernel) / stride + 1,
                    ]
                }
                LayerSpec::LayerNorm { size } => {
                    if size != flat {
                        return Err(bad(format!("layer_norm of size {size} applied to {cur:?}")));
                    }
                    cur.clone()
                }
                LayerSpec::Activation(_) => cur.clone(),
            };
            shapes.push(next);
        }
        Ok(Self {
            id: fresh_id(),
            layers,
            shapes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn output_size(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// Fan-in scaled uniform weights, zero biases, unit layer-norm gains.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> NetParams {
        let mut tensors = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { input, output } => {
                    tensors.push(uniform(&[output, input], input, rng));
                    tensors.push(Tensor::zeros(&[output]));
                }
                LayerSpec::Conv2d { out_channels, .. } => {
                    let g = self.conv_geom(i);
                    tensors.push(uniform(&[out_channels, g.patch()], g.patch(), rng));
                    tensors.push(Tensor::zeros(&[out_channels]));
                }
                LayerSpec::LayerNorm { size } => {
                    tensors.push(Tensor::filled(&[size], 1.0));
                    tensors.push(Tensor::zeros(&[size]));
                }
                LayerSpec::Activation(_) => {}
            }
        }
        NetParams::new(tensors)
    }

    /// All-zero parameters (layer-norm gains included).
    pub fn zero_params(&self) -> NetParams {
        NetParams::new(
            self.param_shapes()
                .iter()
                .map(|s| Tensor::zeros(s))
                .collect(),
        )
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { input, output } => {
                    shapes.push(vec![output, input]);
                    shapes.push(vec![output]);
                }
                LayerSpec::Conv2d { out_channels, .. } => {
                    shapes.push(vec![out_channels, self.conv_geom(i).patch()]);
                    shapes.push(vec![out_channels]);
                }
                LayerSpec::LayerNorm { size } => {
                    shapes.push(vec![size]);
                    shapes.push(vec![size]);
                }
                LayerSpec::Activation(_) => {}
            }
        }
        shapes
    }

    fn conv_geom(&self, index: usize) -> ConvGeom {
        let LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } = self.layers[index]
        else {
            unreachable!("conv_geom on non-conv layer")
        };
        let inp = &self.shapes[index];
        let out = &self.shapes[index + 1];
        ConvGeom {
            cin: in_channels,
            cout: out_channels,
            k: kernel,
            s: stride,
            h: inp[1],
            w: inp[2],
            oh: out[1],
            ow: out[2],
        }
    }

    fn check_params(&self, params: &NetParams) -> Result<()> {
        let expected = self.param_shapes();
        if expected.len() != params.tensors.len() {
            return Err(Error::shape(
                "network parameter count",
                &[expected.len()],
                &[params.tensors.len()],
            ));
        }
        for (i, (e, t)) in expected.iter().zip(&params.tensors).enumerate() {
            if e.as_slice() != t.shape() {
                return Err(Error::shape(format!("parameter tensor {i}"), e, t.shape()));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let per_sample = &input.shape()[1..];
        let expected = self.input_shape();
        let ok = per_sample == expected
            || (!matches!(self.layers.first(), Some(LayerSpec::Conv2d { .. }))
                && per_sample.iter().product::<usize>() == expected.iter().product::<usize>());
        if input.shape().len() < 2 || !ok {
            let first = self.layers.first().map(|l| l.name()).unwrap_or("input");
            let mut want = vec![input.shape()[0]];
            want.extend_from_slice(expected);
            return Err(Error::shape(
                format!("input to layer 0 ({first})"),
                &want,
                input.shape(),
            ));
        }
        Ok(())
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, params: &NetParams, input: &Tensor) -> Result<Tensor> {
        Ok(self.run(params, input, false)?.0)
    }

    pub fn forward(&self, params: &NetParams, input: &Tensor) -> Result<(Tensor, Tape)> {
        let (out, caches) = self.run(params, input, true)?;
        let mut output_shape = vec![input.batch()];
        output_shape.extend_from_slice(self.output_shape());
        Ok((
            out,
            Tape {
                net_id: self.id,
                generation: params.generation,
                input_shape: input.shape().to_vec(),
                output_shape,
                caches,
            },
        ))
    }

    fn run(
        &self,
        params: &NetParams,
        input: &Tensor,
        record: bool,
    ) -> Result<(Tensor, Vec<Cache>)> {
        self.check_params(params)?;
        self.check_input(input)?;
        let batch = input.batch();
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        let mut p = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let y = match *layer {
                LayerSpec::Dense {
                    input: n_in,
                    output: n_out,
                } => {
                    let (w, b) = (&params.tensors[p], &params.tensors[p + 1]);
                    p += 2;
                    let y = dense_forward(&x, w, b, batch, n_in, n_out);
                    if record {
                        caches.push(Cache::Dense { input: x });
                    }
                    y
                }
                LayerSpec::Conv2d { .. } => {
                    let g = self.conv_geom(i);
                    let (k, b) = (&params.tensors[p], &params.tensors[p + 1]);
                    p += 2;
                    let y = conv_forward(&x, k, b, batch, g);
                    if record {
                        caches.push(Cache::Conv { input: x });
                    }
                    y
                }
                LayerSpec::LayerNorm { size } => {
                    let (gain, shift) = (&params.tensors[p], &params.tensors[p + 1]);
                    p += 2;
                    let (y, xhat, inv_std) = norm_forward(&x, gain, shift, batch, size);
                    if record {
                        caches.push(Cache::Norm { xhat, inv_std });
                    }
                    y
                }
                LayerSpec::Activation(act) => {
                    let y = x.map(|v| act.apply(v));
                    if record {
                        caches.push(Cache::Act {
                            input: x,
                            output: y.clone(),
                        });
                    }
                    y
                }
            };
            x = y;
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(self.output_shape());
        Ok((x.reshape(shape)?, caches))
    }

    /// Reverse pass; returns fresh gradient tensors.
    pub fn backward(
        &self,
        params: &NetParams,
        tape: &Tape,
        grad_output: &Tensor,
    ) -> Result<Gradients> {
        let mut acc = params.zeros_like();
        let input = self.backward_accumulate(params, tape, grad_output, &mut acc)?;
        Ok(Gradients { params: acc, input })
    }

    /// Reverse pass adding parameter gradients into `acc`; returns the input gradient.
    pub fn backward_accumulate(
        &self,
        params: &NetParams,
        tape: &Tape,
        grad_output: &Tensor,
        acc: &mut NetParams,
    ) -> Result<Tensor> {
        if tape.net_id != self.id {
            return Err(Error::TapeMismatch(
                "tape was recorded by a different network".into(),
            ));
        }
        if tape.generation != params.generation {
            return Err(Error::TapeMismatch(
                "parameters changed since the tape was recorded".into(),
            ));
        }
        if tape.caches.len() != self.layers.len() {
            return Err(Error::TapeMismatch("tape has no activation record".into()));
        }
        if grad_output.shape() != tape.output_shape.as_slice() {
            return Err(Error::shape(
                "output gradient",
                &tape.output_shape,
                grad_output.shape(),
            ));
        }
        self.check_params(acc)?;
        let batch = tape.input_shape[0];
        let acc_tensors = &mut acc.tensors;
        let mut dy = grad_output.clone();
        let mut p = params.tensors.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = &tape.caches[i];
            dy = match (*layer, cache) {
                (
                    LayerSpec::Dense {
                        input: n_in,
                        output: n_out,
                    },
                    Cache::Dense { input },
                ) => {
                    p -= 2;
                    let (gw, gb) = pair_mut(acc_tensors, p);
                    dense_backward(input, &params.tensors[p], &dy, gw, gb, batch, n_in, n_out)
                }
                (LayerSpec::Conv2d { .. }, Cache::Conv { input }) => {
                    p -= 2;
                    let g = self.conv_geom(i);
                    let (gk, gb) = pair_mut(acc_tensors, p);
                    conv_backward(input, &params.tensors[p], &dy, gk, gb, batch, g)
                }
                (LayerSpec::LayerNorm { size }, Cache::Norm { xhat, inv_std }) => {
                    p -= 2;
                    let (gg, gs) = pair_mut(acc_tensors, p);
                    norm_backward(xhat, inv_std, &params.tensors[p], &dy, gg, gs, batch, size)
                }
                (LayerSpec::Activation(act), Cache::Act { input, output }) => {
                    act_backward(act, input, output, &dy)
                }
                _ => {
                    return Err(Error::TapeMismatch(format!(
                        "layer {i} cache kind mismatch"
                    )))
                }
            };
        }
        dy.reshape(tape.input_shape.clone())
    }
}

fn pair_mut(v: &mut [Tensor], p: usize) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = v[p..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let limit = (3.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
    t
}

/// `C = A B + beta C` for row-major `A: m×k`, `B: k×n` given as raw strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a`, `b` and `c`; callers
    // derive them from tensor shapes checked in `Network::run`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dense_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Tensor {
    let mut y = vec![0.0; batch * n_out];
    for row in y.chunks_mut(n_out) {
        row.copy_from_slice(b.data());
    }
    gemm(
        batch,
        n_in,
        n_out,
        x.data(),
        n_in,
        1,
        w.data(),
        1,
        n_in,
        1.0,
        &mut y,
    );
    Tensor::new(vec![batch, n_out], y).expect("dense output shape")
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Tensor {
    let dyd = dy.data();
    gemm(
        n_out,
        batch,
        n_in,
        dyd,
        1,
        n_out,
        x.data(),
        n_in,
        1,
        1.0,
        gw.data_mut(),
    );
    let gbd = gb.data_mut();
    for row in dyd.chunks(n_out) {
        for (g, d) in gbd.iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut dx = vec![0.0; batch * n_in];
    gemm(
        batch,
        n_out,
        n_in,
        dyd,
        n_out,
        1,
        w.data(),
        n_in,
        1,
        0.0,
        &mut dx,
    );
    Tensor::new(vec![batch, n_in], dx).expect("dense input grad shape")
}

fn im2col(img: &[f64], g: ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..g.oh {
                    let src = (c * g.h + oy * g.s + ky) * g.w + kx;
                    for ox in 0..g.ow {
                        dst[oy * g.ow + ox] = img[src + ox * g.s];
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: ConvGeom, img: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..g.oh {
                    let dst = (c * g.h + oy * g.s + ky) * g.w + kx;
                    for ox in 0..g.ow {
                        img[dst + ox * g.s] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Tensor, k: &Tensor, b: &Tensor, batch: usize, g: ConvGeom) -> Tensor {
    let (pr, np) = (g.patch(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * np;
    let mut y = vec![0.0; batch * out_len];
    let mut cols = vec![0.0; pr * np];
    for n in 0..batch {
        im2col(&x.data()[n * in_len..(n + 1) * in_len], g, &mut cols);
        let out = &mut y[n * out_len..(n + 1) * out_len];
        for (o, chunk) in out.chunks_mut(np).enumerate() {
            chunk.fill(b.data()[o]);
        }
        gemm(g.cout, pr, np, k.data(), pr, 1, &cols, np, 1, 1.0, out);
    }
    Tensor::new(vec![batch, g.cout, g.oh, g.ow], y).expect("conv output shape")
}

fn conv_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &Tensor,
    gk: &mut Tensor,
    gb: &mut Tensor,
    batch: usize,
    g: ConvGeom,
) -> Tensor {
    let (pr, np) = (g.patch(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * np;
    let mut dx = vec![0.0; batch * in_len];
    let mut cols = vec![0.0; pr * np];
    let mut dcols = vec![0.0; pr * np];
    for n in 0..batch {
        im2col(&x.data()[n * in_len..(n + 1) * in_len], g, &mut cols);
        let dout = &dy.data()[n * out_len..(n + 1) * out_len];
        gemm(
            g.cout,
            np,
            pr,
            dout,
            np,
            1,
            &cols,
            1,
            np,
            1.0,
            gk.data_mut(),
        );
        for (o, chunk) in dout.chunks(np).enumerate() {
            gb.data_mut()[o] += chunk.iter().sum::<f64>();
        }
        gemm(
            pr,
            g.cout,
            np,
            k.data(),
            1,
            pr,
            dout,
            np,
            1,
            0.0,
            &mut dcols,
        );
        col2im_add(&dcols, g, &mut dx[n * in_len..(n + 1) * in_len]);
    }
    Tensor::new(vec![batch, g.cin, g.h, g.w], dx).expect("conv input grad shape")
}

fn norm_forward(
    x: &Tensor,
    gain: &Tensor,
    shift: &Tensor,
    batch: usize,
    size: usize,
) -> (Tensor, Tensor, Vec<f64>) {
    let mut xhat = vec![0.0; batch * size];
    let mut y = vec![0.0; batch * size];
    let mut inv_std = Vec::with_capacity(batch);
    for n in 0..batch {
        let row = &x.data()[n * size..(n + 1) * size];
        let mean = row.iter().sum::<f64>() / size as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / size as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..size {
            let h = (row[j] - mean) * inv;
            xhat[n * size + j] = h;
            y[n * size + j] = gain.data()[j] * h + shift.data()[j];
        }
    }
    (
        Tensor::new(vec![batch, size], y).expect("norm shape"),
        Tensor::new(vec![batch, size], xhat).expect("norm shape"),
        inv_std,
    )
}

#[allow(clippy::too_many_arguments)]
fn norm_backward(
    xhat: &Tensor,
    inv_std: &[f64],
    gain: &Tensor,
    dy: &Tensor,
    gg: &mut Tensor,
    gs: &mut Tensor,
    batch: usize,
    size: usize,
) -> Tensor {
    let mut dx = vec![0.0; batch * size];
    let mut dxhat = vec![0.0; size];
    let nf = size as f64;
    for n in 0..batch {
        let h = &xhat.data()[n * size..(n + 1) * size];
        let d = &dy.data()[n * size..(n + 1) * size];
        let mut sum = 0.0;
        let mut sum_h = 0.0;
        for j in 0..size {
            gg.data_mut()[j] += d[j] * h[j];
            gs.data_mut()[j] += d[j];
            dxhat[j] = d[j] * gain.data()[j];
            sum += dxhat[j];
            sum_h += dxhat[j] * h[j];
        }
        let scale = inv_std[n] / nf;
        for j in 0..size {
            dx[n * size + j] = scale * (nf * dxhat[j] - sum - h[j] * sum_h);
        }
    }
    Tensor::new(vec![batch, size], dx).expect("norm grad shape")
}

fn act_backward(act: Activation, x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(dy.data())
        .map(|((&xi, &yi), &di)| di * act.derivative(xi, yi))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("activation grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_dense(n: usize) -> (Network, NetParams) {
        let net = Network::new(&[n], vec![LayerSpec::dense(n, n)]).unwrap();
        let mut w = Tensor::zeros(&[n, n]);
        for i in 0..n {
            w.data_mut()[i * n + i] = 1.0;
        }
        (net, NetParams::new(vec![w, Tensor::zeros(&[n])]))
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let (net, params) = identity_dense(3);
        let x = Tensor::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        assert_eq!(net.predict(&params, &x).unwrap(), x);
    }

    #[test]
    fn tanh_and_softplus_at_zero() {
        let net = Network::new(&[1], vec![LayerSpec::activation(Activation::Tanh)]).unwrap();
        let p = net.zero_params();
        let x = Tensor::from_rows(&[[0.0]]).unwrap();
        let (y, tape) = net.forward(&p, &x).unwrap();
        assert_eq!(y.data(), &[0.0]);
        let g = net
            .backward(&p, &tape, &Tensor::from_rows(&[[1.0]]).unwrap())
            .unwrap();
        assert_eq!(g.input.data(), &[1.0]);

        let net = Network::new(&[1], vec![LayerSpec::activation(Activation::Softplus)]).unwrap();
        let y = net.predict(&net.zero_params(), &x).unwrap();
        assert!((y.data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bias_gradient_of_sum_is_ones() {
        let net = Network::new(&[4], vec![LayerSpec::dense(4, 3)]).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3, 0.4]]).unwrap();
        let (_, tape) = net.forward(&p, &x).unwrap();
        let g = net
            .backward(&p, &tape, &Tensor::filled(&[1, 3], 1.0))
            .unwrap();
        assert_eq!(g.params.get(1).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let net = Network::new(&[4], vec![LayerSpec::dense(4, 3)]).unwrap();
        let p = net.zero_params();
        let err = net.predict(&p, &Tensor::zeros(&[1, 5])).unwrap_err();
        assert!(err.to_string().contains("layer 0 (dense)"), "{err}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(Network::new(&[4], vec![LayerSpec::dense(3, 2)]).is_err());
        assert!(Network::new(&[4], vec![LayerSpec::dense(4, 0)]).is_err());
        assert!(Network::new(&[1, 8, 8], vec![LayerSpec::conv2d(1, 2, 0, 1)]).is_err());
        assert!(Network::new(&[1, 8, 8], vec![LayerSpec::conv2d(1, 2, 3, 0)]).is_err());
        assert!(Network::new(&[1, 2, 2], vec![LayerSpec::conv2d(1, 2, 3, 1)]).is_err());
    }

    #[test]
    fn stale_and_foreign_tapes_are_rejected() {
        let net = Network::new(&[2], vec![LayerSpec::dense(2, 2)]).unwrap();
        let other = Network::new(&[2], vec![LayerSpec::dense(2, 2)]).unwrap();
        let mut p = net.init_params(&mut ChaCha8Rng::seed_from_u64(2));
        let x = Tensor::zeros(&[1, 2]);
        let (_, tape) = net.forward(&p, &x).unwrap();
        let dy = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            other.backward(&p, &tape, &dy),
            Err(Error::TapeMismatch(_))
        ));
        p.tensors_mut()[0].data_mut()[0] += 1.0;
        assert!(matches!(
            net.backward(&p, &tape, &dy),
            Err(Error::TapeMismatch(_))
        ));
    }

    #[test]
    fn paper_conv_stack_on_32px_frames_has_integral_sizes() {
        let net = Network::new(
            &[3, 32, 32],
            vec![
                LayerSpec::conv2d(3, 16, 4, 2),
                LayerSpec::activation(Activation::Elu),
                LayerSpec::conv2d(16, 16, 3, 2),
            ],
        )
        .unwrap();
        assert_eq!(net.output_shape(), &[16, 7, 7]);
    }

    #[test]
    fn layer_norm_standardises_rows() {
        let net = Network::new(&[50], vec![LayerSpec::layer_norm(50)]).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..50).map(|_| rng.random_range(-3.0..5.0)).collect())
            .collect();
        let y = net.predict(&p, &Tensor::from_rows(&rows).unwrap()).unwrap();
        for i in 0..30 {
            let r = y.row(i);
            let mean = r.iter().sum::<f64>() / 50.0;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let net = Network::new(
            &[1, 9, 9],
            vec![
                LayerSpec::conv2d(1, 2, 3, 2),
                LayerSpec::activation(Activation::Elu),
                LayerSpec::dense(32, 4),
                LayerSpec::layer_norm(4),
            ],
        )
        .unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::new(
            vec![2, 1, 9, 9],
            (0..162).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let a = net.predict(&p, &x).unwrap();
        let b = net.predict(&p, &x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
