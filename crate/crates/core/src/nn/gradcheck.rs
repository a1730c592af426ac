//! Central finite differences, used as an independent oracle for the
//! analytic gradients.

use super::network::{NetParams, Network, ParamTree};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor of [`relative_error`]. Central differences of an O(1)
/// loss at step 1e-5 carry ~1e-11 of rounding noise, so relative error is
/// meaningless for gradient entries much smaller than this.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Fixed pseudo-random projection weights so the scalar loss does not
/// cancel symmetric gradient components.
pub fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|k| (0.7 * k as f64 + 0.3).cos() + 0.1).collect()
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn central_difference(x: &mut [f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(x);
        x[i] = orig - eps;
        let minus = f(x);
        x[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    out
}

fn projected_loss(net: &Network, params: &NetParams, input: &Tensor) -> Result<f64> {
    let y = net.predict(params, input)?;
    Ok(y.data()
        .iter()
        .zip(projection(y.len()))
        .map(|(a, b)| a * b)
        .sum())
}

/// Maximum relative error between backprop and central differences over
/// every parameter of `net`, for the loss `Σ wₖ yₖ` with fixed weights `w`.
pub fn finite_diff_check(
    net: &Network,
    params: &NetParams,
    input: &Tensor,
    eps: f64,
) -> Result<f64> {
    let (y, tape) = net.forward(params, input)?;
    let dy = Tensor::new(y.shape().to_vec(), projection(y.len()))?;
    let grads = net.backward(params, &tape, &dy)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (ti, analytic) in grads.params.tensors().into_iter().enumerate() {
        for j in 0..analytic.len() {
            let orig = probe.tensors()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = orig + eps;
            let plus = projected_loss(net, &probe, input)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig - eps;
            let minus = projected_loss(net, &probe, input)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Central-difference check of `analytic` against `loss` for any parameter
/// tree. Probes every `stride`-th scalar (1 = all of them).
pub fn finite_diff_tree<P, F>(
    params: &P,
    analytic: &P,
    eps: f64,
    stride: usize,
    mut loss: F,
) -> Result<f64>
where
    P: ParamTree + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .iter()
        .map(|t| t.data().to_vec())
        .collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut k = 0usize;
    for (ti, g) in grads.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            k += 1;
            if !(k - 1).is_multiple_of(stride.max(1)) {
                continue;
            }
            let orig = probe.tensors()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = orig + eps;
            let plus = loss(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig - eps;
            let minus = loss(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Same as [`finite_diff_check`] but for the gradient with respect to the input.
pub fn finite_diff_check_input(
    net: &Network,
    params: &NetParams,
    input: &Tensor,
    eps: f64,
) -> Result<f64> {
    let (y, tape) = net.forward(params, input)?;
    let dy = Tensor::new(y.shape().to_vec(), projection(y.len()))?;
    let grads = net.backward(params, &tape, &dy)?;
    let mut x = input.data().to_vec();
    let shape = input.shape().to_vec();
    let numeric = central_difference(&mut x, eps, |x| {
        let t = Tensor::new(shape.clone(), x.to_vec()).expect("probe shape");
        projected_loss(net, params, &t).expect("probe forward")
    });
    Ok(grads
        .input
        .data()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_net_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Network::new(&[5], vec![LayerSpec::dense(5, 3), LayerSpec::dense(3, 2)]).unwrap();
        let p = net.init_params(&mut rng);
        let x = random_input(vec![4, 5], &mut rng);
        // Central differences carry no truncation error on a linear map, so a
        // large step keeps cancellation noise well under the bound.
        let e = finite_diff_check(&net, &p, &x, 0.5).unwrap();
        assert!(e <= 1e-10, "{e}");
    }

    #[test]
    fn two_layer_elu_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::new(
            &[6],
            vec![
                LayerSpec::dense(6, 8),
                LayerSpec::activation(Activation::Elu),
                LayerSpec::dense(8, 3),
                LayerSpec::activation(Activation::Elu),
            ],
        )
        .unwrap();
        let p = net.init_params(&mut rng);
        let x = random_input(vec![3, 6], &mut rng);
        assert!(finite_diff_check(&net, &p, &x, 1e-5).unwrap() <= 1e-4);
        assert!(finite_diff_check_input(&net, &p, &x, 1e-5).unwrap() <= 1e-4);
    }

    #[test]
    fn strided_conv_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = Network::new(&[2, 10, 10], vec![LayerSpec::conv2d(2, 3, 4, 2)]).unwrap();
        let p = net.init_params(&mut rng);
        let x = random_input(vec![2, 2, 10, 10], &mut rng);
        assert!(finite_diff_check(&net, &p, &x, 1e-5).unwrap() <= 1e-4);
        assert!(finite_diff_check_input(&net, &p, &x, 1e-5).unwrap() <= 1e-4);
    }
}
