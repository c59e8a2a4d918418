//! f64 layer kernels for the compact classifier.
//!
//! Activations are (channels, height, width) arrays in standard layout; the
//! hot loops run over contiguous row slices so they vectorize. Everything is
//! single-threaded and deterministic.

use ndarray::{Array1, Array2, Array3, Array4};

/// 3x3 same-padding convolution (zero padding).
pub fn conv3x3_forward(input: &Array3<f64>, weight: &Array4<f64>, bias: &Array1<f64>) -> Array3<f64> {
    let (ic_n, h, w) = input.dim();
    let (oc_n, ic_w, kh, kw) = weight.dim();
    assert_eq!(ic_n, ic_w, "input channels mismatch");
    assert_eq!((kh, kw), (3, 3), "kernel must be 3x3");
    assert_eq!(bias.len(), oc_n);
    let inp = input.as_slice().expect("standard layout");
    let mut out = Array3::zeros((oc_n, h, w));
    let o = out.as_slice_mut().expect("standard layout");
    let plane = h * w;
    for oc in 0..oc_n {
        let out_base = oc * plane;
        let b = bias[oc];
        for v in &mut o[out_base..out_base + plane] {
            *v = b;
        }
        for ic in 0..ic_n {
            let in_base = ic * plane;
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let wgt = weight[[oc, ic, ky, kx]];
                    let y_lo = (-dy).max(0) as usize;
                    let y_hi = (h as isize - dy.max(0)) as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx.max(0)) as usize;
                    for y in y_lo..y_hi {
                        let src_row = in_base + (y as isize + dy) as usize * w;
                        let dst_row = out_base + y * w;
                        let src = &inp[(src_row as isize + x_lo as isize + dx) as usize
                            ..(src_row as isize + x_hi as isize + dx) as usize];
                        let dst = &mut o[dst_row + x_lo..dst_row + x_hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wgt * *s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of the same-padding 3x3 convolution.
///
/// Returns (d_input, d_weight, d_bias).
pub fn conv3x3_backward(
    input: &Array3<f64>,
    weight: &Array4<f64>,
    dout: &Array3<f64>,
) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
    let (ic_n, h, w) = input.dim();
    let (oc_n, _, _, _) = weight.dim();
    assert_eq!(dout.dim(), (oc_n, h, w));
    let inp = input.as_slice().expect("standard layout");
    let dout_s = dout.as_slice().expect("standard layout");
    let mut dinput = Array3::zeros((ic_n, h, w));
    let mut dweight = Array4::zeros(weight.dim());
    let mut dbias = Array1::zeros(oc_n);
    let din = dinput.as_slice_mut().expect("standard layout");
    let plane = h * w;
    for oc in 0..oc_n {
        let out_base = oc * plane;
        dbias[oc] = dout_s[out_base..out_base + plane].iter().sum();
        for ic in 0..ic_n {
            let in_base = ic * plane;
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let wgt = weight[[oc, ic, ky, kx]];
                    let y_lo = (-dy).max(0) as usize;
                    let y_hi = (h as isize - dy.max(0)) as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx.max(0)) as usize;
                    let mut grad_w = 0.0;
                    for y in y_lo..y_hi {
                        let src_row = in_base + (y as isize + dy) as usize * w;
                        let dst_row = out_base + y * w;
                        let lo = (src_row as isize + x_lo as isize + dx) as usize;
                        let hi = (src_row as isize + x_hi as isize + dx) as usize;
                        let src = &inp[lo..hi];
                        let gout = &dout_s[dst_row + x_lo..dst_row + x_hi];
                        // weight gradient: correlation of input with dout
                        let mut acc = 0.0;
                        for (s, g) in src.iter().zip(gout) {
                            acc += *s * *g;
                        }
                        grad_w += acc;
                        // input gradient: dout scattered through the weight
                        let dsrc = &mut din[lo..hi];
                        for (d, g) in dsrc.iter_mut().zip(gout) {
                            *d += wgt * *g;
                        }
                    }
                    dweight[[oc, ic, ky, kx]] = grad_w;
                }
            }
        }
    }
    (dinput, dweight, dbias)
}

/// In-place ReLU; returns the activated tensor.
pub fn relu_forward(mut x: Array3<f64>) -> Array3<f64> {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// ReLU backward using the forward output as the mask (derivative 0 at 0).
pub fn relu_backward(output: &Array3<f64>, dout: &Array3<f64>) -> Array3<f64> {
    let mut dx = dout.clone();
    for (d, o) in dx.iter_mut().zip(output.iter()) {
        if *o <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// 2x2 max pool with stride 2. Ties go to the first element in row-major
/// window order, which keeps backward deterministic.
///
/// Returns the pooled tensor and the flat input index of each winner.
pub fn maxpool2_forward(input: &Array3<f64>) -> (Array3<f64>, Vec<u32>) {
    let (c_n, h, w) = input.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even sides");
    let (oh, ow) = (h / 2, w / 2);
    let inp = input.as_slice().expect("standard layout");
    let mut out = Array3::zeros((c_n, oh, ow));
    let o = out.as_slice_mut().expect("standard layout");
    let mut winners = vec![0u32; c_n * oh * ow];
    for c in 0..c_n {
        let in_base = c * h * w;
        let out_base = c * oh * ow;
        for y in 0..oh {
            let r0 = in_base + (2 * y) * w;
            let r1 = r0 + w;
            for x in 0..ow {
                let idx = [r0 + 2 * x, r0 + 2 * x + 1, r1 + 2 * x, r1 + 2 * x + 1];
                let mut best = idx[0];
                let mut best_v = inp[idx[0]];
                for &i in &idx[1..] {
                    if inp[i] > best_v {
                        best_v = inp[i];
                        best = i;
                    }
                }
                o[out_base + y * ow + x] = best_v;
                winners[out_base + y * ow + x] = best as u32;
            }
        }
    }
    (out, winners)
}

/// Backward of 2x2 max pool: routes each gradient to its winner.
pub fn maxpool2_backward(
    dout: &Array3<f64>,
    winners: &[u32],
    input_dim: (usize, usize, usize),
) -> Array3<f64> {
    let mut dinput = Array3::zeros(input_dim);
    let din = dinput.as_slice_mut().expect("standard layout");
    let d = dout.as_slice().expect("standard layout");
    assert_eq!(d.len(), winners.len());
    for (g, &winner) in d.iter().zip(winners) {
        din[winner as usize] += *g;
    }
    dinput
}

/// Global average pool over each channel plane.
pub fn gap_forward(input: &Array3<f64>) -> Array1<f64> {
    let (c_n, h, w) = input.dim();
    let inp = input.as_slice().expect("standard layout");
    let plane = h * w;
    Array1::from_iter(
        (0..c_n).map(|c| inp[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64),
    )
}

pub fn gap_backward(dout: &Array1<f64>, input_dim: (usize, usize, usize)) -> Array3<f64> {
    let (c_n, h, w) = input_dim;
    assert_eq!(dout.len(), c_n);
    let plane = (h * w) as f64;
    let mut dinput = Array3::zeros(input_dim);
    for c in 0..c_n {
        dinput
            .slice_mut(ndarray::s![c, .., ..])
            .fill(dout[c] / plane);
    }
    dinput
}

/// Fully connected layer: `out = W x + b` with W shaped (k, c).
pub fn dense_forward(weight: &Array2<f64>, bias: &Array1<f64>, x: &Array1<f64>) -> Array1<f64> {
    let (k, c) = weight.dim();
    assert_eq!(x.len(), c);
    assert_eq!(bias.len(), k);
    let mut out = bias.clone();
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..c {
            acc += weight[[i, j]] * x[j];
        }
        out[i] += acc;
    }
    out
}

/// Backward of the dense layer. Returns (dx, dweight, dbias).
pub fn dense_backward(
    weight: &Array2<f64>,
    x: &Array1<f64>,
    dout: &Array1<f64>,
) -> (Array1<f64>, Array2<f64>, Array1<f64>) {
    let (k, c) = weight.dim();
    let mut dx = Array1::zeros(c);
    let mut dweight = Array2::zeros((k, c));
    for i in 0..k {
        let g = dout[i];
        for j in 0..c {
            dweight[[i, j]] = g * x[j];
            dx[j] += weight[[i, j]] * g;
        }
    }
    (dx, dweight, dout.clone())
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Array1<f64> = logits.mapv(|z| (z - max).exp());
    let sum = exps.sum();
    exps / sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_array3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    /// Textbook nested-loop convolution used as the oracle.
    fn conv_naive(input: &Array3<f64>, weight: &Array4<f64>, bias: &Array1<f64>) -> Array3<f64> {
        let (ic_n, h, w) = input.dim();
        let (oc_n, _, _, _) = weight.dim();
        let mut out = Array3::zeros((oc_n, h, w));
        for oc in 0..oc_n {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias[oc];
                    for ic in 0..ic_n {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let sy = y + ky - 1;
                                let sx = x + kx - 1;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += weight[[oc, ic, ky as usize, kx as usize]]
                                        * input[[ic, sy as usize, sx as usize]];
                                }
                            }
                        }
                    }
                    out[[oc, y as usize, x as usize]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let input = random_array3(&mut rng, (3, 10, 7));
            let weight = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.random_range(-1.0..1.0));
            let bias = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
            let fast = conv3x3_forward(&input, &weight, &bias);
            let slow = conv_naive(&input, &weight, &bias);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_array3(&mut rng, (2, 6, 5));
        let mut weight = Array4::from_shape_fn((3, 2, 3, 3), |_| rng.random_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        // scalar objective: weighted sum of outputs
        let coeff = random_array3(&mut rng, (3, 6, 5));
        let objective = |input: &Array3<f64>, weight: &Array4<f64>, bias: &Array1<f64>| {
            (conv3x3_forward(input, weight, bias) * &coeff).sum()
        };
        let (dinput, dweight, dbias) = conv3x3_backward(&input, &weight, &coeff);
        let eps = 1e-6;
        let mut input_p = input.clone();
        input_p[[1, 3, 2]] += eps;
        let mut input_m = input.clone();
        input_m[[1, 3, 2]] -= eps;
        let fd = (objective(&input_p, &weight, &bias) - objective(&input_m, &weight, &bias))
            / (2.0 * eps);
        assert!((dinput[[1, 3, 2]] - fd).abs() < 1e-6);

        let original = weight[[2, 1, 0, 2]];
        weight[[2, 1, 0, 2]] = original + eps;
        let up = objective(&input, &weight, &bias);
        weight[[2, 1, 0, 2]] = original - eps;
        let down = objective(&input, &weight, &bias);
        weight[[2, 1, 0, 2]] = original;
        assert!((dweight[[2, 1, 0, 2]] - (up - down) / (2.0 * eps)).abs() < 1e-6);

        let fd_bias: f64 = coeff.slice(ndarray::s![0, .., ..]).sum();
        assert!((dbias[0] - fd_bias).abs() < 1e-9);
    }

    #[test]
    fn maxpool_selects_first_winner_on_ties() {
        let mut input = Array3::zeros((1, 2, 2));
        input.fill(7.0);
        let (out, winners) = maxpool2_forward(&input);
        assert_eq!(out[[0, 0, 0]], 7.0);
        assert_eq!(winners, vec![0]);
        let dout = Array3::from_elem((1, 1, 1), 2.5);
        let dinput = maxpool2_backward(&dout, &winners, (1, 2, 2));
        assert_eq!(dinput[[0, 0, 0]], 2.5);
        assert_eq!(dinput[[0, 0, 1]], 0.0);
    }

    #[test]
    fn maxpool_routes_gradients_to_maxima() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_array3(&mut rng, (2, 8, 6));
        let (out, winners) = maxpool2_forward(&input);
        assert_eq!(out.dim(), (2, 4, 3));
        // every pooled value is the max of its window
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..3 {
                    let window = [
                        input[[c, 2 * y, 2 * x]],
                        input[[c, 2 * y, 2 * x + 1]],
                        input[[c, 2 * y + 1, 2 * x]],
                        input[[c, 2 * y + 1, 2 * x + 1]],
                    ];
                    let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(out[[c, y, x]], max);
                }
            }
        }
        let dout = random_array3(&mut rng, (2, 4, 3));
        let dinput = maxpool2_backward(&dout, &winners, (2, 8, 6));
        assert!((dinput.sum() - dout.sum()).abs() < 1e-12);
    }

    #[test]
    fn gap_and_dense_shapes_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let input = random_array3(&mut rng, (4, 6, 6));
        let pooled = gap_forward(&input);
        assert_eq!(pooled.len(), 4);
        assert!((pooled[0] - input.slice(ndarray::s![0, .., ..]).mean().unwrap()).abs() < 1e-12);
        let dpool = Array1::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let dinput = gap_backward(&dpool, (4, 6, 6));
        assert!((dinput[[1, 0, 0]] - (-2.0 / 36.0)).abs() < 1e-15);

        let weight = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let out = dense_forward(&weight, &bias, &pooled);
        let dout = Array1::from_vec(vec![0.3, -0.7, 1.1]);
        let (dx, dweight, dbias) = dense_backward(&weight, &pooled, &dout);
        let eps = 1e-6;
        let mut xp = pooled.clone();
        xp[2] += eps;
        let op = dense_forward(&weight, &bias, &xp);
        let fd: f64 = (0..3).map(|i| (op[i] - out[i]) / eps * dout[i]).sum();
        assert!((dx[2] - fd).abs() < 1e-6);
        assert!((dweight[[1, 2]] - dout[1] * pooled[2]).abs() < 1e-12);
        assert_eq!(dbias, dout);
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let probs = softmax(&Array1::from_vec(vec![1000.0, 1001.0, 999.0]));
        assert!((probs.sum() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|p| p.is_finite() && *p >= 0.0));
        let relu = relu_forward(Array3::from_shape_vec((1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap());
        assert_eq!(relu.as_slice().unwrap(), &[0.0, 0.0, 2.0]);
    }
}
