//! Direct stride-1 convolution for layers with few output channels, where
//! im2col + gemm spends most of its time copying.
//!
//! Outputs are computed in tiles of 8 channels x 8 pixels held in vector
//! registers; the input is read from a zero-padded copy so the inner loops
//! carry no border tests. AVX2+FMA kernels are selected at run time, with a
//! portable fallback.

const LANES: usize = 8;
const CO_BLOCK: usize = 8;

/// A `(c, h, w)` sample with `pad` zeros on every side and extra zero
/// columns on the right so 8-wide reads past the last output stay in bounds.
pub struct Padded {
    pub data: Vec<f32>,
    pub c: usize,
    pub hp: usize,
    pub wp: usize,
}

impl Padded {
    pub fn new(x: &[f32], c: usize, h: usize, w: usize, k: usize) -> Self {
        let pad = k / 2;
        let hp = h + 2 * pad;
        let wp = w.div_ceil(LANES) * LANES + k - 1;
        let mut data = vec![0.0f32; c * hp * wp];
        for ci in 0..c {
            for y in 0..h {
                let src = &x[(ci * h + y) * w..(ci * h + y + 1) * w];
                let d0 = (ci * hp + y + pad) * wp + pad;
                data[d0..d0 + w].copy_from_slice(src);
            }
        }
        Self { data, c, hp, wp }
    }
}

/// Weights `(cout, cin, k, k)` regrouped as blocks of 8 output channels,
/// each `(cin, k, k, 8)`, zero-filled past `cout`.
pub fn pack_weights(w: &[f32], cout: usize, cin: usize, k: usize) -> Vec<f32> {
    let blocks = cout.div_ceil(CO_BLOCK);
    let kk = k * k;
    let mut out = vec![0.0f32; blocks * cin * kk * CO_BLOCK];
    for co in 0..cout {
        let (b, c) = (co / CO_BLOCK, co % CO_BLOCK);
        for ci in 0..cin {
            for t in 0..kk {
                out[((b * cin + ci) * kk + t) * CO_BLOCK + c] = w[(co * cin + ci) * kk + t];
            }
        }
    }
    out
}

/// Weights of the input-gradient convolution: `(cin, cout, k, k)` with the
/// kernel rotated by 180 degrees, packed like [`pack_weights`].
pub fn pack_transposed_flipped(w: &[f32], cout: usize, cin: usize, k: usize) -> Vec<f32> {
    let kk = k * k;
    let mut t = vec![0.0f32; cin * cout * kk];
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    t[((ci * cout + co) * k + ky) * k + kx] = w[((co * cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)];
                }
            }
        }
    }
    pack_weights(&t, cin, cout, k)
}

fn forward_body(xp: &Padded, packed: &[f32], cout: usize, k: usize, oh: usize, ow: usize, y: &mut [f32]) {
    let cin = xp.c;
    let kk = k * k;
    let plane = oh * ow;
    for b in 0..cout.div_ceil(CO_BLOCK) {
        let wb = &packed[b * cin * kk * CO_BLOCK..(b + 1) * cin * kk * CO_BLOCK];
        let nco = (cout - b * CO_BLOCK).min(CO_BLOCK);
        for oy in 0..oh {
            let mut x0 = 0;
            while x0 < ow {
                let mut acc = [[0.0f32; LANES]; CO_BLOCK];
                for ci in 0..cin {
                    for ky in 0..k {
                        let r0 = (ci * xp.hp + oy + ky) * xp.wp + x0;
                        let row = &xp.data[r0..r0 + LANES + k - 1];
                        for kx in 0..k {
                            let xin: &[f32; LANES] = row[kx..kx + LANES].try_into().unwrap();
                            let t = (ci * kk + ky * k + kx) * CO_BLOCK;
                            let wv: &[f32; CO_BLOCK] = wb[t..t + CO_BLOCK].try_into().unwrap();
                            for c in 0..CO_BLOCK {
                                for l in 0..LANES {
                                    acc[c][l] += wv[c] * xin[l];
                                }
                            }
                        }
                    }
                }
                let n = (ow - x0).min(LANES);
                for (c, a) in acc.iter().enumerate().take(nco) {
                    let o = (b * CO_BLOCK + c) * plane + oy * ow + x0;
                    y[o..o + n].copy_from_slice(&a[..n]);
                }
                x0 += LANES;
            }
        }
    }
}

fn weight_grad_body(xp: &Padded, gy: &[f32], cout: usize, k: usize, oh: usize, ow: usize, gw: &mut [f32]) {
    let cin = xp.c;
    let kk = k * k;
    let plane = oh * ow;
    let full = ow / LANES * LANES;
    for b in 0..cout.div_ceil(CO_BLOCK) {
        let co0 = b * CO_BLOCK;
        let nco = (cout - co0).min(CO_BLOCK);
        for oy in 0..oh {
            let grow = |c: usize| &gy[(co0 + c) * plane + oy * ow..(co0 + c) * plane + (oy + 1) * ow];
            let gyr: [&[f32]; CO_BLOCK] = std::array::from_fn(|c| if c < nco { grow(c) } else { grow(0) });
            for ci in 0..cin {
                for ky in 0..k {
                    let r0 = (ci * xp.hp + oy + ky) * xp.wp;
                    let row = &xp.data[r0..r0 + xp.wp];
                    for kx in 0..k {
                        let mut acc = [[0.0f32; LANES]; CO_BLOCK];
                        let mut x0 = 0;
                        while x0 < full {
                            let xin: &[f32; LANES] = row[x0 + kx..x0 + kx + LANES].try_into().unwrap();
                            for c in 0..CO_BLOCK {
                                let g: &[f32; LANES] = gyr[c][x0..x0 + LANES].try_into().unwrap();
                                for l in 0..LANES {
                                    acc[c][l] += g[l] * xin[l];
                                }
                            }
                            x0 += LANES;
                        }
                        for c in 0..nco {
                            let mut s: f32 = acc[c].iter().sum();
                            for x in full..ow {
                                s += gyr[c][x] * row[x + kx];
                            }
                            gw[((co0 + c) * cin + ci) * kk + ky * k + kx] += s;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn forward_avx2(xp: &Padded, packed: &[f32], cout: usize, k: usize, oh: usize, ow: usize, y: &mut [f32]) {
    use std::arch::x86_64::*;
    let cin = xp.c;
    let kk = k * k;
    let plane = oh * ow;
    let xd = xp.data.as_ptr();
    for b in 0..cout.div_ceil(CO_BLOCK) {
        let wb = packed.as_ptr().add(b * cin * kk * CO_BLOCK);
        let nco = (cout - b * CO_BLOCK).min(CO_BLOCK);
        for oy in 0..oh {
            let mut x0 = 0;
            while x0 < ow {
                let mut acc = [_mm256_setzero_ps(); CO_BLOCK];
                for ci in 0..cin {
                    for ky in 0..k {
                        let row = xd.add((ci * xp.hp + oy + ky) * xp.wp + x0);
                        let wr = wb.add((ci * kk + ky * k) * CO_BLOCK);
                        for kx in 0..k {
                            let xin = _mm256_loadu_ps(row.add(kx));
                            let wv = wr.add(kx * CO_BLOCK);
                            for (c, a) in acc.iter_mut().enumerate() {
                                *a = _mm256_fmadd_ps(_mm256_broadcast_ss(&*wv.add(c)), xin, *a);
                            }
                        }
                    }
                }
                let n = (ow - x0).min(LANES);
                let mut tmp = [0.0f32; LANES];
                for (c, a) in acc.iter().enumerate().take(nco) {
                    _mm256_storeu_ps(tmp.as_mut_ptr(), *a);
                    let o = (b * CO_BLOCK + c) * plane + oy * ow + x0;
                    y[o..o + n].copy_from_slice(&tmp[..n]);
                }
                x0 += LANES;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn weight_grad_avx2(xp: &Padded, gy: &[f32], cout: usize, k: usize, oh: usize, ow: usize, gw: &mut [f32]) {
    use std::arch::x86_64::*;
    let cin = xp.c;
    let kk = k * k;
    let plane = oh * ow;
    let full = ow / LANES * LANES;
    let xd = xp.data.as_ptr();
    for b in 0..cout.div_ceil(CO_BLOCK) {
        let co0 = b * CO_BLOCK;
        let nco = (cout - co0).min(CO_BLOCK);
        for oy in 0..oh {
            // rows past `nco` alias row 0; their sums are discarded
            let gyr: [*const f32; CO_BLOCK] =
                std::array::from_fn(|c| gy.as_ptr().add((co0 + if c < nco { c } else { 0 }) * plane + oy * ow));
            for ci in 0..cin {
                for ky in 0..k {
                    let row = xd.add((ci * xp.hp + oy + ky) * xp.wp);
                    for kx in 0..k {
                        let mut acc = [_mm256_setzero_ps(); CO_BLOCK];
                        let mut x0 = 0;
                        while x0 < full {
                            let xin = _mm256_loadu_ps(row.add(x0 + kx));
                            for (c, a) in acc.iter_mut().enumerate() {
                                *a = _mm256_fmadd_ps(_mm256_loadu_ps(gyr[c].add(x0)), xin, *a);
                            }
                            x0 += LANES;
                        }
                        let mut tmp = [0.0f32; LANES];
                        for (c, a) in acc.iter().enumerate().take(nco) {
                            _mm256_storeu_ps(tmp.as_mut_ptr(), *a);
                            let mut s: f32 = tmp.iter().sum();
                            for x in full..ow {
                                s += *gyr[c].add(x) * *row.add(x + kx);
                            }
                            gw[((co0 + c) * cin + ci) * kk + ky * k + kx] += s;
                        }
                    }
                }
            }
        }
    }
}

fn has_avx2_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `y[co] = sum over ci, ky, kx of w[co, ci, ky, kx] * x[ci] shifted`,
/// stride 1, `k / 2` zero padding; `y` is overwritten.
pub fn conv_forward(xp: &Padded, packed: &[f32], cout: usize, k: usize, oh: usize, ow: usize, y: &mut [f32]) {
    assert_eq!(y.len(), cout * oh * ow);
    assert!(xp.hp >= oh + k - 1 && xp.wp >= ow.div_ceil(LANES) * LANES + k - 1);
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the CPU supports the enabled target features.
        unsafe { forward_avx2(xp, packed, cout, k, oh, ow, y) };
        return;
    }
    forward_body(xp, packed, cout, k, oh, ow, y)
}

/// Accumulates `gw[co, ci, ky, kx] += sum over pixels of gy[co] * x[ci]`
/// shifted by `(ky, kx)`.
pub fn conv_weight_grad(xp: &Padded, gy: &[f32], cout: usize, k: usize, oh: usize, ow: usize, gw: &mut [f32]) {
    assert_eq!(gy.len(), cout * oh * ow);
    assert_eq!(gw.len(), cout * xp.c * k * k);
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the CPU supports the enabled target features.
        unsafe { weight_grad_avx2(xp, gy, cout, k, oh, ow, gw) };
        return;
    }
    weight_grad_body(xp, gy, cout, k, oh, ow, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portable_and_dispatched_kernels_agree() {
        let (cin, cout, k, h, w) = (3, 10, 3, 5, 13);
        let x: Vec<f32> = (0..cin * h * w).map(|i| ((i * 37 % 23) as f32 - 11.0) / 7.0).collect();
        let wt: Vec<f32> = (0..cout * cin * k * k).map(|i| ((i * 17 % 19) as f32 - 9.0) / 5.0).collect();
        let xp = Padded::new(&x, cin, h, w, k);
        let packed = pack_weights(&wt, cout, cin, k);
        let mut a = vec![0.0; cout * h * w];
        let mut b = vec![0.0; cout * h * w];
        conv_forward(&xp, &packed, cout, k, h, w, &mut a);
        forward_body(&xp, &packed, cout, k, h, w, &mut b);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-4 * (1.0 + v.abs()));
        }
        let mut ga = vec![0.0; wt.len()];
        let mut gb = vec![0.0; wt.len()];
        conv_weight_grad(&xp, &a, cout, k, h, w, &mut ga);
        weight_grad_body(&xp, &a, cout, k, h, w, &mut gb);
        for (u, v) in ga.iter().zip(&gb) {
            assert!((u - v).abs() <= 1e-3 * (1.0 + v.abs()));
        }
    }
}
