//! Segmentation losses in double precision with analytic gradients:
//! weighted cross-entropy, Lovász-softmax, a pooled boundary F-measure loss,
//! their weighted sum, and the auxiliary-head total.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AuxMode, OutputGrads, SegmentationOutput};
use crate::nn::Tensor;

/// Guard added to boundary precision/recall denominators.
pub const BOUNDARY_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the cross-entropy term.
    pub alpha: f64,
    /// Weight of the Lovász-softmax term.
    pub beta: f64,
    /// Weight of the boundary term.
    pub gamma: f64,
    /// Weight of each auxiliary-head loss.
    pub lambda_aux: f64,
    /// Odd max-pooling window used to extract boundaries.
    pub theta0: usize,
    /// Per-class cross-entropy weights. Empty means derive them from the
    /// dataset class frequencies (or use 1 when none are known).
    pub class_weights: Vec<f64>,
    /// Label that marks pixels excluded from every term.
    pub ignore_id: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.5,
            gamma: 1.0,
            lambda_aux: 1.0,
            theta0: 3,
            class_weights: Vec::new(),
            ignore_id: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_aux", self.lambda_aux),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss {name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.theta0 == 0 || self.theta0 % 2 == 0 {
            return Err(Error::Config(format!("theta0 must be odd and >= 1, got {}", self.theta0)));
        }
        if let Some(c) = num_classes {
            if !self.class_weights.is_empty() {
                if self.class_weights.len() != c {
                    return Err(Error::Config(format!(
                        "{} class weights for {c} classes",
                        self.class_weights.len()
                    )));
                }
                for (k, &w) in self.class_weights.iter().enumerate() {
                    if k as u32 != self.ignore_id && !(w > 0.0) {
                        return Err(Error::Config(format!("class weight {k} must be > 0, got {w}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn weight(&self, class: usize) -> f64 {
        self.class_weights.get(class).copied().unwrap_or(1.0)
    }

    fn is_ignored(&self, label: u32) -> bool {
        label == self.ignore_id
    }
}

/// Conditions under which a term is defined as 0 rather than computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    /// Every pixel carries the ignore label.
    pub all_ignored: bool,
    /// No class is present, so Lovász-softmax has nothing to average.
    pub no_present_class: bool,
    /// No class has a ground-truth boundary.
    pub no_boundary: bool,
}

impl LossFlags {
    fn merge(&mut self, o: LossFlags) {
        self.all_ignored |= o.all_ignored;
        self.no_present_class |= o.no_present_class;
        self.no_boundary |= o.no_boundary;
    }

    pub fn any(&self) -> bool {
        self.all_ignored || self.no_present_class || self.no_boundary
    }
}

/// Value of one term and its gradient with respect to the term's input.
#[derive(Clone, Debug)]
pub struct Term {
    pub value: f64,
    pub grad: Array3<f64>,
    pub flags: LossFlags,
}

fn check_shapes(x: &ArrayView3<f64>, target: &ArrayView2<u32>) -> Result<()> {
    let (_, h, w) = x.dim();
    if target.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "target is {:?} but the prediction is {h}x{w}",
            target.dim()
        )));
    }
    Ok(())
}

fn check_labels(target: &ArrayView2<u32>, c: usize, cfg: &LossConfig) -> Result<()> {
    if let Some(&bad) = target.iter().find(|&&t| !cfg.is_ignored(t) && t as usize >= c) {
        return Err(Error::Consistency(format!(
            "target label {bad} outside [0, {c}) and not the ignore label {}",
            cfg.ignore_id
        )));
    }
    Ok(())
}

/// Contiguous copy of a `(C, H, W)` map as `(c, plane, data)`.
fn planes(x: &ArrayView3<f64>) -> (usize, usize, Vec<f64>) {
    let (c, h, w) = x.dim();
    let data = match x.as_slice() {
        Some(s) => s.to_vec(),
        None => x.iter().copied().collect(),
    };
    (c, h * w, data)
}

fn labels_flat(target: &ArrayView2<u32>) -> Vec<u32> {
    match target.as_slice() {
        Some(s) => s.to_vec(),
        None => target.iter().copied().collect(),
    }
}

fn to_array(c: usize, h: usize, w: usize, data: Vec<f64>) -> Array3<f64> {
    Array3::from_shape_vec((c, h, w), data).expect("plane layout")
}

fn softmax_flat(c: usize, plane: usize, data: &mut [f64]) {
    for p in 0..plane {
        let mut m = f64::NEG_INFINITY;
        for k in 0..c {
            m = m.max(data[k * plane + p]);
        }
        let mut z = 0.0;
        for k in 0..c {
            let e = (data[k * plane + p] - m).exp();
            data[k * plane + p] = e;
            z += e;
        }
        let inv = 1.0 / z;
        for k in 0..c {
            data[k * plane + p] *= inv;
        }
    }
}

/// Per-pixel softmax over the class axis.
pub fn softmax(logits: &ArrayView3<f64>) -> Array3<f64> {
    let (_, h, w) = logits.dim();
    let (c, plane, mut data) = planes(logits);
    softmax_flat(c, plane, &mut data);
    to_array(c, h, w, data)
}

/// WCE value and logit gradient given logits and their softmax.
fn wce_flat(logits: &[f64], probs: &[f64], target: &[u32], c: usize, cfg: &LossConfig) -> (f64, Vec<f64>, LossFlags) {
    let plane = target.len();
    let mut grad = vec![0.0; c * plane];
    let n = target.iter().filter(|&&t| !cfg.is_ignored(t)).count();
    if n == 0 {
        let flags = LossFlags {
            all_ignored: true,
            ..Default::default()
        };
        return (0.0, grad, flags);
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for (p, &t) in target.iter().enumerate() {
        if cfg.is_ignored(t) {
            continue;
        }
        let t = t as usize;
        let wt = cfg.weight(t);
        // log-softmax straight from the logits for accuracy
        let m = (0..c).map(|k| logits[k * plane + p]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..c).map(|k| (logits[k * plane + p] - m).exp()).sum::<f64>().ln();
        total += wt * (lse - logits[t * plane + p]);
        for k in 0..c {
            let onehot = if k == t { 1.0 } else { 0.0 };
            grad[k * plane + p] = wt * (probs[k * plane + p] - onehot) * inv_n;
        }
    }
    (total * inv_n, grad, LossFlags::default())
}

/// Mean over non-ignored pixels of `w_t * -log softmax(logits)_t`.
/// Gradient is with respect to the logits.
pub fn weighted_cross_entropy(logits: &ArrayView3<f64>, target: &ArrayView2<u32>, cfg: &LossConfig) -> Result<Term> {
    check_shapes(logits, target)?;
    let (c, h, w) = logits.dim();
    check_labels(target, c, cfg)?;
    let (_, plane, data) = planes(logits);
    let mut probs = data.clone();
    softmax_flat(c, plane, &mut probs);
    let (value, grad, flags) = wce_flat(&data, &probs, &labels_flat(target), c, cfg);
    Ok(Term {
        value,
        grad: to_array(c, h, w, grad),
        flags,
    })
}

fn lovasz_flat(probs: &[f64], target: &[u32], c: usize, cfg: &LossConfig) -> (f64, Vec<f64>, LossFlags) {
    let plane = target.len();
    let mut grad = vec![0.0; c * plane];
    let valid: Vec<(u32, u32)> = target
        .iter()
        .enumerate()
        .filter(|(_, &t)| !cfg.is_ignored(t))
        .map(|(p, &t)| (p as u32, t))
        .collect();
    if valid.is_empty() {
        let flags = LossFlags {
            all_ignored: true,
            no_present_class: true,
            ..Default::default()
        };
        return (0.0, grad, flags);
    }
    let mut counts = vec![0usize; c];
    for &(_, t) in &valid {
        counts[t as usize] += 1;
    }
    let present: Vec<usize> = (0..c).filter(|&k| counts[k] > 0).collect();

    let mut total = 0.0;
    // (error, position in `valid`)
    let mut keyed: Vec<(f64, u32)> = Vec::with_capacity(valid.len());
    for &k in &present {
        let pk = &probs[k * plane..(k + 1) * plane];
        keyed.clear();
        keyed.extend(valid.iter().enumerate().map(|(v, &(p, t))| {
            let pr = pk[p as usize];
            (if t as usize == k { 1.0 - pr } else { pr }, v as u32)
        }));
        // descending error, ties by position (a stable order)
        keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let gts = counts[k] as f64;
        let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
        let mut prev_jac = 0.0;
        let mut class_loss = 0.0;
        let gk = &mut grad[k * plane..(k + 1) * plane];
        for &(err, v) in &keyed {
            let (p, t) = valid[v as usize];
            let fg = t as usize == k;
            if fg {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            let g = jac - prev_jac;
            prev_jac = jac;
            class_loss += err * g;
            gk[p as usize] += if fg { -g } else { g };
        }
        total += class_loss;
    }
    let inv = 1.0 / present.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (total * inv, grad, LossFlags::default())
}

/// Lovász-softmax over present classes. Gradient is with respect to `probs`.
pub fn lovasz_softmax(probs: &ArrayView3<f64>, target: &ArrayView2<u32>, cfg: &LossConfig) -> Result<Term> {
    check_shapes(probs, target)?;
    let (c, h, w) = probs.dim();
    check_labels(target, c, cfg)?;
    let (_, _, data) = planes(probs);
    let (value, grad, flags) = lovasz_flat(&data, &labels_flat(target), c, cfg);
    Ok(Term {
        value,
        grad: to_array(c, h, w, grad),
        flags,
    })
}

/// Flat index of the window maximum for every pixel, first maximum in
/// row-major window order; windows are clipped at the border.
///
/// Computed separably: the first maximum of each row segment, then the
/// first row whose segment maximum is strictly largest.
fn pool_argmax(a: &[f64], h: usize, w: usize, theta0: usize) -> Vec<usize> {
    let r = theta0 / 2;
    let mut hv = vec![0.0; h * w];
    let mut hx = vec![0usize; h * w];
    for i in 0..h {
        let row = &a[i * w..(i + 1) * w];
        for j in 0..w {
            let (x0, x1) = (j.saturating_sub(r), (j + r).min(w - 1));
            let (mut bx, mut bv) = (x0, row[x0]);
            for (x, &v) in row.iter().enumerate().take(x1 + 1).skip(x0 + 1) {
                if v > bv {
                    bv = v;
                    bx = x;
                }
            }
            hv[i * w + j] = bv;
            hx[i * w + j] = bx;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let (y0, y1) = (i.saturating_sub(r), (i + r).min(h - 1));
        for j in 0..w {
            let mut by = y0;
            let mut bv = hv[y0 * w + j];
            for y in y0 + 1..=y1 {
                if hv[y * w + j] > bv {
                    bv = hv[y * w + j];
                    by = y;
                }
            }
            out.push(by * w + hx[by * w + j]);
        }
    }
    out
}

/// `maxpool(1 - y)` minus `(1 - y)` for one plane, with the argmax used.
fn boundary_plane(y: &[f64], h: usize, w: usize, theta0: usize) -> (Vec<f64>, Vec<usize>) {
    let inv: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let arg = pool_argmax(&inv, h, w, theta0);
    let b = arg.iter().enumerate().map(|(p, &q)| inv[q] - inv[p]).collect();
    (b, arg)
}

/// `maxpool(1 - y) - (1 - y)` per channel with a `theta0` window, stride 1,
/// shape preserved.
pub fn boundary_map(y: &ArrayView3<f64>, theta0: usize) -> Array3<f64> {
    let (_, h, w) = y.dim();
    let (c, plane, data) = planes(y);
    let mut out = Vec::with_capacity(c * plane);
    for k in 0..c {
        out.extend(boundary_plane(&data[k * plane..(k + 1) * plane], h, w, theta0).0);
    }
    to_array(c, h, w, out)
}

fn boundary_flat(pred: &[f64], onehot: &[f64], c: usize, h: usize, w: usize, cfg: &LossConfig) -> (f64, Vec<f64>, LossFlags) {
    let plane = h * w;
    let mut grad = vec![0.0; c * plane];
    let mut total = 0.0;
    let mut counted = 0usize;
    let eps = BOUNDARY_EPS;
    for k in 0..c {
        if k as u32 == cfg.ignore_id {
            continue;
        }
        let (g, _) = boundary_plane(&onehot[k * plane..(k + 1) * plane], h, w, cfg.theta0);
        let sg: f64 = g.iter().sum();
        if sg <= 0.0 {
            continue;
        }
        let (pb, arg) = boundary_plane(&pred[k * plane..(k + 1) * plane], h, w, cfg.theta0);
        let sp: f64 = pb.iter().sum();
        let inter: f64 = pb.iter().zip(&g).map(|(a, b)| a * b).sum();
        let p = inter / (sp + eps);
        let r = inter / (sg + eps);
        let d = p + r + eps;
        let f = 2.0 * p * r / d;
        total += 1.0 - f;
        counted += 1;

        let df_dp = 2.0 * r * (r + eps) / (d * d);
        let df_dr = 2.0 * p * (p + eps) / (d * d);
        let base = df_dp * inter / ((sp + eps) * (sp + eps));
        let coef = df_dp / (sp + eps) + df_dr / (sg + eps);
        // pb = inv[argmax] - inv, inv = 1 - y
        let gk = &mut grad[k * plane..(k + 1) * plane];
        for (q, &src) in arg.iter().enumerate() {
            let dl_dpb = base - coef * g[q];
            gk[src] -= dl_dpb;
            gk[q] += dl_dpb;
        }
    }
    if counted == 0 {
        let flags = LossFlags {
            no_boundary: true,
            ..Default::default()
        };
        return (0.0, grad, flags);
    }
    let inv = 1.0 / counted as f64;
    grad.iter_mut().for_each(|v| *v *= inv);
    (total * inv, grad, LossFlags::default())
}

/// Class-averaged `1 - F1` between predicted and true boundary maps.
///
/// Precision and recall use soft overlaps of the boundary maps. Classes
/// without a true boundary and the ignore channel are skipped. The gradient
/// is with respect to `pred_probs`.
pub fn boundary_loss(pred_probs: &ArrayView3<f64>, target_onehot: &ArrayView3<f64>, cfg: &LossConfig) -> Result<Term> {
    if pred_probs.dim() != target_onehot.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred_probs.dim(),
            target_onehot.dim()
        )));
    }
    let (c, h, w) = pred_probs.dim();
    let (_, _, pred) = planes(pred_probs);
    let (_, _, onehot) = planes(target_onehot);
    let (value, grad, flags) = boundary_flat(&pred, &onehot, c, h, w, cfg);
    Ok(Term {
        value,
        grad: to_array(c, h, w, grad),
        flags,
    })
}

fn one_hot_flat(target: &[u32], num_classes: usize, ignore_id: u32) -> Vec<f64> {
    let plane = target.len();
    let mut out = vec![0.0; num_classes * plane];
    for (p, &t) in target.iter().enumerate() {
        if t != ignore_id && (t as usize) < num_classes {
            out[t as usize * plane + p] = 1.0;
        }
    }
    out
}

/// One-hot target with all-zero columns at ignored pixels.
pub fn one_hot(target: &ArrayView2<u32>, num_classes: usize, ignore_id: u32) -> Array3<f64> {
    let (h, w) = target.dim();
    to_array(num_classes, h, w, one_hot_flat(&labels_flat(target), num_classes, ignore_id))
}

/// Component values of the weighted loss on one prediction map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MainTerms {
    pub wce: f64,
    pub lovasz: f64,
    pub boundary: f64,
    pub main: f64,
}

impl MainTerms {
    pub fn combine(wce: f64, lovasz: f64, boundary: f64, cfg: &LossConfig) -> Self {
        Self {
            wce,
            lovasz,
            boundary,
            main: cfg.alpha * wce + cfg.beta * lovasz + cfg.gamma * boundary,
        }
    }
}

/// `alpha * wce + beta * lovasz + gamma * boundary` with one shared softmax.
/// Returns the terms, the gradient with respect to the logits and flags.
pub fn main_loss(logits: &ArrayView3<f64>, target: &ArrayView2<u32>, cfg: &LossConfig) -> Result<(MainTerms, Array3<f64>, LossFlags)> {
    check_shapes(logits, target)?;
    let (c, h, w) = logits.dim();
    check_labels(target, c, cfg)?;
    let (_, plane, x) = planes(logits);
    let labels = labels_flat(target);
    let mut probs = x.clone();
    softmax_flat(c, plane, &mut probs);

    let (wce, mut grad, mut flags) = wce_flat(&x, &probs, &labels, c, cfg);
    let (lov, lov_grad, lf) = lovasz_flat(&probs, &labels, c, cfg);

    // Ignored pixels take no part in boundaries of either map.
    let mut masked = probs.clone();
    for (p, &t) in labels.iter().enumerate() {
        if cfg.is_ignored(t) {
            for k in 0..c {
                masked[k * plane + p] = 0.0;
            }
        }
    }
    let onehot = one_hot_flat(&labels, c, cfg.ignore_id);
    let (bd, mut bd_grad, bf) = boundary_flat(&masked, &onehot, c, h, w, cfg);
    for (p, &t) in labels.iter().enumerate() {
        if cfg.is_ignored(t) {
            for k in 0..c {
                bd_grad[k * plane + p] = 0.0;
            }
        }
    }

    grad.iter_mut().for_each(|g| *g *= cfg.alpha);
    let dprob: Vec<f64> = lov_grad
        .iter()
        .zip(&bd_grad)
        .map(|(l, b)| cfg.beta * l + cfg.gamma * b)
        .collect();
    for p in 0..plane {
        let dot: f64 = (0..c).map(|k| dprob[k * plane + p] * probs[k * plane + p]).sum();
        for k in 0..c {
            let i = k * plane + p;
            grad[i] += probs[i] * (dprob[i] - dot);
        }
    }
    flags.merge(lf);
    flags.merge(bf);
    Ok((MainTerms::combine(wce, lov, bd, cfg), to_array(c, h, w, grad), flags))
}

/// Nearest-neighbor label downsampling: output pixel `(v, u)` takes
/// `target[v * stride][u * stride]`.
pub fn downsample_labels(target: &ArrayView2<u32>, stride: usize) -> Array2<u32> {
    if stride == 1 {
        return target.to_owned();
    }
    let (h, w) = target.dim();
    Array2::from_shape_fn((h / stride, w / stride), |(i, j)| target[[i * stride, j * stride]])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub wce: f64,
    pub lovasz: f64,
    pub boundary: f64,
    pub main: f64,
    pub aux_terms: Vec<f64>,
    pub total: f64,
    pub flags: LossFlags,
}

/// Loss of one sample: the main map plus every auxiliary map.
///
/// `main` and `aux` are `(C, H, W)` logits; for Plan A each auxiliary map is
/// compared against the target downsampled by its stride. Returns the
/// breakdown and the gradients with respect to every map.
pub fn total_loss(
    main: &ArrayView3<f64>,
    aux: &[(usize, ArrayView3<f64>)],
    target: &ArrayView2<u32>,
    cfg: &LossConfig,
    aux_mode: AuxMode,
) -> Result<(LossBreakdown, Array3<f64>, Vec<Array3<f64>>)> {
    if aux_mode == AuxMode::None && !aux.is_empty() {
        return Err(Error::Consistency(format!(
            "{} auxiliary outputs with auxiliary heads disabled",
            aux.len()
        )));
    }
    let (terms, gmain, mut flags) = main_loss(main, target, cfg)?;
    let mut aux_terms = Vec::with_capacity(aux.len());
    let mut aux_grads = Vec::with_capacity(aux.len());
    for (stride, logits) in aux {
        let t = match aux_mode {
            AuxMode::PlanA => downsample_labels(target, *stride),
            _ => {
                if *stride != 1 {
                    return Err(Error::Consistency(format!(
                        "full-resolution auxiliary output expected, got stride {stride}"
                    )));
                }
                target.to_owned()
            }
        };
        let (at, mut g, f) = main_loss(logits, &t.view(), cfg)?;
        flags.merge(f);
        g.mapv_inplace(|v| v * cfg.lambda_aux);
        aux_terms.push(at.main);
        aux_grads.push(g);
    }
    let total = terms.main + cfg.lambda_aux * aux_terms.iter().sum::<f64>();
    Ok((
        LossBreakdown {
            wce: terms.wce,
            lovasz: terms.lovasz,
            boundary: terms.boundary,
            main: terms.main,
            aux_terms,
            total,
            flags,
        },
        gmain,
        aux_grads,
    ))
}

fn sample_f64(t: &Tensor, n: usize) -> Array3<f64> {
    t.sample(n).mapv(|v| v as f64)
}

fn write_grad(dst: &mut Tensor, n: usize, g: &Array3<f64>, scale: f64) {
    for (d, v) in dst.sample_slice_mut(n).iter_mut().zip(g.iter()) {
        *d = (*v * scale) as f32;
    }
}

/// Batch loss: the mean of per-sample [`total_loss`], with gradients for
/// [`crate::model::CENet::backward`].
pub fn batch_loss(
    out: &SegmentationOutput,
    targets: &[Array2<u32>],
    cfg: &LossConfig,
    aux_mode: AuxMode,
) -> Result<(LossBreakdown, OutputGrads)> {
    let n = out.main.batch();
    if targets.len() != n {
        return Err(Error::Consistency(format!("{} targets for a batch of {n}", targets.len())));
    }
    let scale = 1.0 / n as f64;
    let mut grads = OutputGrads {
        main: Tensor::zeros(out.main.shape()),
        aux: out.aux.iter().map(|a| Tensor::zeros(a.logits.shape())).collect(),
    };
    let mut acc = LossBreakdown {
        aux_terms: vec![0.0; out.aux.len()],
        ..Default::default()
    };
    for b in 0..n {
        let main = sample_f64(&out.main, b);
        let aux: Vec<(usize, Array3<f64>)> = out.aux.iter().map(|a| (a.stride, sample_f64(&a.logits, b))).collect();
        let aux_views: Vec<(usize, ArrayView3<f64>)> = aux.iter().map(|(s, a)| (*s, a.view())).collect();
        let (br, gm, ga) = total_loss(&main.view(), &aux_views, &targets[b].view(), cfg, aux_mode)?;
        write_grad(&mut grads.main, b, &gm, scale);
        for (k, g) in ga.iter().enumerate() {
            write_grad(&mut grads.aux[k], b, g, scale);
        }
        acc.wce += br.wce * scale;
        acc.lovasz += br.lovasz * scale;
        acc.boundary += br.boundary * scale;
        acc.main += br.main * scale;
        acc.total += br.total * scale;
        for (a, v) in acc.aux_terms.iter_mut().zip(&br.aux_terms) {
            *a += v * scale;
        }
        acc.flags.merge(br.flags);
    }
    Ok((acc, grads))
}
