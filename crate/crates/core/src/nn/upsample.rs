use crate::nn::tensor::Tensor;

/// Source index pair and fractional weight for each output coordinate,
/// corner-aligned (output ends map onto input ends).
fn axis_table(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of every channel to `(out_h, out_w)` with corner
/// alignment. Equal sizes return an exact copy.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let rows = axis_table(h, out_h);
    let cols = axis_table(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let (src, dst) = (x.data(), out.data_mut());
    for p in 0..n * c {
        let s = &src[p * h * w..(p + 1) * h * w];
        let d = &mut dst[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let r0 = &s[y0 * w..(y0 + 1) * w];
            let r1 = &s[y1 * w..(y1 + 1) * w];
            let drow = &mut d[oy * out_w..(oy + 1) * out_w];
            for (v, &(x0, x1, fx)) in drow.iter_mut().zip(&cols) {
                let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                *v = top + fy * (bot - top);
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_upsample`]: maps an output gradient back to the
/// `(in_h, in_w)` input grid.
pub fn bilinear_upsample_backward(gy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let [n, c, out_h, out_w] = gy.shape();
    if (in_h, in_w) == (out_h, out_w) {
        return gy.clone();
    }
    let rows = axis_table(in_h, out_h);
    let cols = axis_table(in_w, out_w);
    let mut gx = Tensor::zeros([n, c, in_h, in_w]);
    let (src, dst) = (gy.data(), gx.data_mut());
    for p in 0..n * c {
        let g = &src[p * out_h * out_w..(p + 1) * out_h * out_w];
        let d = &mut dst[p * in_h * in_w..(p + 1) * in_h * in_w];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let grow = &g[oy * out_w..(oy + 1) * out_w];
            for (gv, &(x0, x1, fx)) in grow.iter().zip(&cols) {
                let top = gv * (1.0 - fy);
                let bot = gv * fy;
                d[y0 * in_w + x0] += top * (1.0 - fx);
                d[y0 * in_w + x1] += top * fx;
                d[y1 * in_w + x0] += bot * (1.0 - fx);
                d[y1 * in_w + x1] += bot * fx;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_bitwise_identity() {
        let x = Tensor::from_vec([1, 2, 2, 3], (0..12).map(|v| (v as f32).sqrt()).collect());
        assert_eq!(bilinear_upsample(&x, 2, 3), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::from_vec([1, 1, 3, 4], vec![0.7; 12]);
        let y = bilinear_upsample(&x, 9, 17);
        assert!(y.data().iter().all(|v| (*v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn backward_is_adjoint() {
        let x = Tensor::from_vec([1, 2, 3, 4], (0..24).map(|v| ((v * 7) % 5) as f32 - 2.0).collect());
        let gy = Tensor::from_vec([1, 2, 6, 10], (0..120).map(|v| ((v * 3) % 11) as f32 * 0.1).collect());
        let y = bilinear_upsample(&x, 6, 10);
        let gx = bilinear_upsample_backward(&gy, 3, 4);
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| (*a * *b) as f64).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| (*a * *b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
