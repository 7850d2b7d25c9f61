//! Optical flow by contrast maximization.
//!
//! Events are transported linearly to a reference time with a candidate flow
//! and splatted into an image of warped events (IWE). The flow that makes
//! this image sharpest is found by gradient ascent over a coarse grid of
//! control points, refined coarse-to-fine. Gradients are analytic through the
//! bilinear splat.
//!
//! Flow is a displacement in pixels over the slice `[t0, t1]`. IWEs are
//! unsigned: every event contributes weight 1.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encode::{splat_iwe, SplatPoint};
use crate::error::{Error, Result};
use crate::flow::sample_grid;
use crate::store::Reader;
use crate::types::{EventStream, FlowField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Variance,
    GradMag,
    MultifocalNormalized,
}

/// Sharpness measure applied to a single IWE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseObjective {
    Variance,
    GradMag,
}

/// How per-reference ratios of the normalized objective are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalMean {
    Arithmetic,
    /// Dominated by the blurriest reference time, which penalizes flows
    /// that sharpen one reference by smearing another.
    Harmonic,
}

impl FocalMean {
    /// Combined value and its derivative with respect to each ratio.
    fn combine(self, ratios: &[f64]) -> (f64, Vec<f64>) {
        let n = ratios.len() as f64;
        match self {
            FocalMean::Arithmetic => (ratios.iter().sum::<f64>() / n, vec![1.0 / n; ratios.len()]),
            FocalMean::Harmonic => {
                if ratios.iter().any(|&r| r <= 0.0) {
                    return (0.0, vec![0.0; ratios.len()]);
                }
                let s: f64 = ratios.iter().map(|r| 1.0 / r).sum();
                let j = n / s;
                (j, ratios.iter().map(|r| j * j / (n * r * r)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefTime {
    T0,
    Midpoint,
    T1,
}

impl RefTime {
    pub fn resolve(self, t0: i64, t1: i64) -> f64 {
        match self {
            RefTime::T0 => t0 as f64,
            RefTime::Midpoint => 0.5 * (t0 as f64 + t1 as f64),
            RefTime::T1 => t1 as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Charbonnier {
    pub alpha: f64,
    pub eps: f64,
}

impl Default for Charbonnier {
    fn default() -> Self {
        Self {
            alpha: 0.45,
            eps: 1e-3,
        }
    }
}

impl Charbonnier {
    pub fn value(&self, x: f64) -> f64 {
        loss_charbonnier(x, self.alpha, self.eps)
    }

    fn derivative(&self, x: f64) -> f64 {
        2.0 * self.alpha * x * (x * x + self.eps * self.eps).powf(self.alpha - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaxConfig {
    /// Control points as `(rows, cols)`.
    pub patch_grid: (usize, usize),
    pub pyramid_levels: usize,
    pub max_iters: usize,
    /// Initial largest per-step change of a control value, pixels.
    pub step_size: f64,
    /// Stop once the step has been halved below this.
    pub min_step: f64,
    pub smoothness_weight: f64,
    /// Half-width in pixels of the integer translation search that seeds
    /// the coarsest level; 0 starts from zero flow.
    pub init_search_radius: usize,
    /// Pixels excluded at each image edge when scoring an IWE, so warping
    /// events off the frame does not create contrast. Capped at a quarter
    /// of the smaller image side.
    pub border_margin: usize,
    /// Gaussian blur of the IWE in pixels of the current level; 0 disables.
    pub iwe_blur_sigma: f64,
    pub objective: ObjectiveKind,
    /// Sharpness measure inside the normalized objective.
    pub base: BaseObjective,
    pub focal_mean: FocalMean,
    pub reference_times: Vec<RefTime>,
    pub charbonnier: Charbonnier,
}

impl Default for CmaxConfig {
    fn default() -> Self {
        Self {
            patch_grid: (8, 8),
            pyramid_levels: 3,
            max_iters: 250,
            step_size: 1.0,
            min_step: 1e-3,
            smoothness_weight: 3.0,
            init_search_radius: 6,
            border_margin: 6,
            iwe_blur_sigma: 0.5,
            objective: ObjectiveKind::MultifocalNormalized,
            base: BaseObjective::Variance,
            focal_mean: FocalMean::Harmonic,
            reference_times: vec![RefTime::T0, RefTime::T1],
            charbonnier: Charbonnier::default(),
        }
    }
}

impl CmaxConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.patch_grid.0 == 0 || self.patch_grid.1 == 0 {
            return bad("patch_grid must be at least (1, 1)");
        }
        if self.pyramid_levels == 0 || self.max_iters == 0 {
            return bad("pyramid_levels and max_iters must be >= 1");
        }
        if !(self.step_size > 0.0) || !(self.min_step > 0.0) {
            return bad("step sizes must be > 0");
        }
        if !(self.smoothness_weight >= 0.0) {
            return bad("smoothness_weight must be >= 0");
        }
        if !(self.iwe_blur_sigma >= 0.0 && self.iwe_blur_sigma.is_finite()) {
            return bad("iwe_blur_sigma must be >= 0");
        }
        if self.reference_times.is_empty() {
            return bad("reference_times must not be empty");
        }
        if !(self.charbonnier.eps > 0.0) {
            return bad("charbonnier eps must be > 0");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

/// Transports each event to `t_ref` with the flow sampled at its pixel:
/// `x' = x + u (t_ref - t) / (t1 - t0)`. Every point has weight 1.
pub fn warp_events(events: &EventStream, flow: &FlowField, t_ref: f64) -> Result<Vec<SplatPoint>> {
    if !(t_ref >= flow.t0 as f64 && t_ref <= flow.t1 as f64) {
        return Err(Error::OutOfRange(format!(
            "reference time {t_ref} outside [{}, {}]",
            flow.t0, flow.t1
        )));
    }
    let span = (flow.t1 - flow.t0) as f64;
    let shape = flow.shape();
    events
        .iter()
        .map(|(x, y, t, _)| {
            let (xi, yi) = (x as usize, y as usize);
            if yi >= shape.0 || xi >= shape.1 {
                return Err(Error::OutOfRange(format!("event at ({x}, {y}) outside flow")));
            }
            let tau = (t_ref - t as f64) / span;
            Ok(SplatPoint {
                x: x as f64 + flow.u[[yi, xi]] * tau,
                y: y as f64 + flow.v[[yi, xi]] * tau,
                weight: 1.0,
            })
        })
        .collect()
}

/// Population variance of all pixels.
pub fn objective_variance(iwe: &Array2<f64>) -> f64 {
    let n = iwe.len() as f64;
    let mean = iwe.sum() / n;
    iwe.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Mean over pixels of `Gx² + Gy²` with forward differences; the
/// difference leaving the image is zero.
pub fn objective_grad_mag(iwe: &Array2<f64>) -> f64 {
    let (h, w) = iwe.dim();
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let c = iwe[[y, x]];
            if x + 1 < w {
                acc += (iwe[[y, x + 1]] - c).powi(2);
            }
            if y + 1 < h {
                acc += (iwe[[y + 1, x]] - c).powi(2);
            }
        }
    }
    acc / (h * w) as f64
}

fn base_value(base: BaseObjective, iwe: &Array2<f64>) -> f64 {
    match base {
        BaseObjective::Variance => objective_variance(iwe),
        BaseObjective::GradMag => objective_grad_mag(iwe),
    }
}

/// Value and derivative with respect to every pixel.
fn base_with_grad(base: BaseObjective, iwe: &Array2<f64>) -> (f64, Array2<f64>) {
    let (h, w) = iwe.dim();
    let n = (h * w) as f64;
    match base {
        BaseObjective::Variance => {
            let mean = iwe.sum() / n;
            let grad = iwe.mapv(|v| 2.0 * (v - mean) / n);
            (objective_variance(iwe), grad)
        }
        BaseObjective::GradMag => {
            let mut grad = Array2::zeros((h, w));
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let c = iwe[[y, x]];
                    if x + 1 < w {
                        let d = iwe[[y, x + 1]] - c;
                        acc += d * d;
                        grad[[y, x + 1]] += 2.0 * d / n;
                        grad[[y, x]] -= 2.0 * d / n;
                    }
                    if y + 1 < h {
                        let d = iwe[[y + 1, x]] - c;
                        acc += d * d;
                        grad[[y + 1, x]] += 2.0 * d / n;
                        grad[[y, x]] -= 2.0 * d / n;
                    }
                }
            }
            (acc / n, grad)
        }
    }
}

/// Separable Gaussian blur with zero padding, truncated at 3 sigma. The
/// operator is symmetric, so it is also its own adjoint.
pub fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let (h, w) = img.dim();
    let pass = |src: &Array2<f64>, horizontal: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let d = j as isize - r;
                let (yy, xx) = if horizontal {
                    (y as isize, x as isize + d)
                } else {
                    (y as isize + d, x as isize)
                };
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    acc += k * src[[yy as usize, xx as usize]];
                }
            }
            acc
        })
    };
    pass(&pass(img, true), false)
}

fn scoring_margin(config: &CmaxConfig, shape: (usize, usize)) -> usize {
    config.border_margin.min(shape.0.min(shape.1).saturating_sub(1) / 4)
}

fn interior(img: &Array2<f64>, m: usize) -> ndarray::ArrayView2<'_, f64> {
    let (h, w) = img.dim();
    img.slice(ndarray::s![m..h - m, m..w - m])
}

fn scored_value(base: BaseObjective, img: &Array2<f64>, m: usize) -> f64 {
    base_value(base, &interior(img, m).to_owned())
}

/// Like `scored_value`, with the derivative over the full image.
fn scored_with_grad(base: BaseObjective, img: &Array2<f64>, m: usize) -> (f64, Array2<f64>) {
    let (j, dj) = base_with_grad(base, &interior(img, m).to_owned());
    let mut full = Array2::zeros(img.dim());
    let (h, w) = img.dim();
    full.slice_mut(ndarray::s![m..h - m, m..w - m]).assign(&dj);
    (j, full)
}

fn identity_points(events: &EventStream) -> Vec<SplatPoint> {
    events
        .iter()
        .map(|(x, y, _, _)| SplatPoint {
            x: x as f64,
            y: y as f64,
            weight: 1.0,
        })
        .collect()
}

/// Mean (as set by `config.focal_mean`) over reference times of
/// `base(IWE(flow)) / base(IWE(identity))`. Exactly 1 for zero flow.
pub fn objective_multifocal_normalized(events: &EventStream, flow: &FlowField, config: &CmaxConfig) -> Result<f64> {
    if config.reference_times.is_empty() {
        return Err(Error::InvalidInput("reference_times must not be empty".into()));
    }
    let shape = flow.shape();
    let sigma = config.iwe_blur_sigma;
    let m = scoring_margin(config, shape);
    let norm = scored_value(config.base, &gaussian_blur(&splat_iwe(&identity_points(events), shape), sigma), m);
    if events.is_empty() || !(norm > 0.0) {
        return Err(Error::DegenerateNormalizer);
    }
    let ratios = config
        .reference_times
        .iter()
        .map(|r| {
            let pts = warp_events(events, flow, r.resolve(flow.t0, flow.t1))?;
            Ok(scored_value(config.base, &gaussian_blur(&splat_iwe(&pts, shape), sigma), m) / norm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(config.focal_mean.combine(&ratios).0)
}

/// `(x² + eps²)^alpha`.
pub fn loss_charbonnier(x: f64, alpha: f64, eps: f64) -> f64 {
    (x * x + eps * eps).powf(alpha)
}

fn forward_diff_terms(h: usize, w: usize) -> usize {
    2 * (h * w.saturating_sub(1) + h.saturating_sub(1) * w)
}

/// Mean Charbonnier penalty over the forward differences of `u` and `v`
/// in both directions. A constant field scores `eps^(2 alpha)`.
pub fn loss_smoothness(flow: &FlowField, c: &Charbonnier) -> f64 {
    smoothness_with_grad(&flow.u, &flow.v, c, false).0
}

fn smoothness_with_grad(
    u: &Array2<f64>,
    v: &Array2<f64>,
    c: &Charbonnier,
    want_grad: bool,
) -> (f64, Option<(Array2<f64>, Array2<f64>)>) {
    let (h, w) = u.dim();
    let terms = forward_diff_terms(h, w);
    if terms == 0 {
        return (c.value(0.0), want_grad.then(|| (Array2::zeros((h, w)), Array2::zeros((h, w)))));
    }
    let n = terms as f64;
    let mut acc = 0.0;
    let mut grads = want_grad.then(|| (Array2::zeros((h, w)), Array2::zeros((h, w))));
    for (k, comp) in [u, v].into_iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let here = comp[[y, x]];
                for (ny, nx) in [(y, x + 1), (y + 1, x)] {
                    if ny >= h || nx >= w {
                        continue;
                    }
                    let d = comp[[ny, nx]] - here;
                    acc += c.value(d);
                    if let Some((gu, gv)) = grads.as_mut() {
                        let g = if k == 0 { gu } else { gv };
                        let dd = c.derivative(d) / n;
                        g[[ny, nx]] += dd;
                        g[[y, x]] -= dd;
                    }
                }
            }
        }
    }
    (acc / n, grads)
}

/// Mean Charbonnier of `gray_t0(p) - gray_t1(p + flow(p))`, sampling the
/// second image bilinearly with border clamping.
pub fn loss_photometric(gray_t0: &Array2<f64>, gray_t1: &Array2<f64>, flow: &FlowField, c: &Charbonnier) -> Result<f64> {
    let shape = flow.shape();
    for d in [gray_t0.dim(), gray_t1.dim()] {
        if d != shape {
            return Err(Error::ShapeMismatch { expected: shape, actual: d });
        }
    }
    let mut acc = 0.0;
    for ((y, x), &a) in gray_t0.indexed_iter() {
        let b = sample_grid(gray_t1, x as f64 + flow.u[[y, x]], y as f64 + flow.v[[y, x]]);
        acc += c.value(a - b);
    }
    Ok(acc / gray_t0.len() as f64)
}

/// Bilinear weights of the control points around image position `(x, y)`.
/// Control points span the image corners; a single row or column is
/// constant along that axis.
fn control_weights(x: f64, y: f64, grid: (usize, usize), shape: (usize, usize)) -> [(usize, f64); 4] {
    let axis = |p: f64, n: usize, extent: usize| -> (usize, usize, f64) {
        if n == 1 || extent <= 1 {
            return (0, 0, 0.0);
        }
        let g = (p * (n - 1) as f64 / (extent - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i0 = (g.floor() as usize).min(n - 2);
        (i0, i0 + 1, g - i0 as f64)
    };
    let (r0, r1, fy) = axis(y, grid.0, shape.0);
    let (c0, c1, fx) = axis(x, grid.1, shape.1);
    let idx = |r: usize, c: usize| r * grid.1 + c;
    [
        (idx(r0, c0), (1.0 - fx) * (1.0 - fy)),
        (idx(r0, c1), fx * (1.0 - fy)),
        (idx(r1, c0), (1.0 - fx) * fy),
        (idx(r1, c1), fx * fy),
    ]
}

fn control_position(k: usize, grid: (usize, usize), shape: (usize, usize)) -> (f64, f64) {
    let pos = |i: usize, n: usize, extent: usize| {
        if n == 1 {
            (extent as f64 - 1.0) / 2.0
        } else {
            i as f64 * (extent as f64 - 1.0) / (n - 1) as f64
        }
    };
    (pos(k % grid.1, grid.1, shape.1), pos(k / grid.1, grid.0, shape.0))
}

/// Dense flow from control values laid out as `[u_0 .. u_K, v_0 .. v_K]`.
pub fn dense_from_grid(params: &[f64], grid: (usize, usize), shape: (usize, usize), t0: i64, t1: i64) -> FlowField {
    let k = grid.0 * grid.1;
    assert_eq!(params.len(), 2 * k, "expected {} control values", 2 * k);
    let mut u = Array2::zeros(shape);
    let mut v = Array2::zeros(shape);
    for ((y, x), out) in u.indexed_iter_mut() {
        *out = control_weights(x as f64, y as f64, grid, shape)
            .iter()
            .map(|&(i, w)| w * params[i])
            .sum();
    }
    for ((y, x), out) in v.indexed_iter_mut() {
        *out = control_weights(x as f64, y as f64, grid, shape)
            .iter()
            .map(|&(i, w)| w * params[k + i])
            .sum();
    }
    FlowField { u, v, t0, t1 }
}

/// Contrast objective over one control grid, with
/// analytic gradients. Exposed for gradient checking.
pub struct ContrastProblem<'a> {
    events: &'a EventStream,
    shape: (usize, usize),
    t0: i64,
    t1: i64,
    grid: (usize, usize),
    config: &'a CmaxConfig,
    weights: Vec<[(usize, f64); 4]>,
    taus: Vec<Vec<f64>>,
    normalizer: f64,
    margin: usize,
}

impl<'a> ContrastProblem<'a> {
    pub fn new(
        events: &'a EventStream,
        shape: (usize, usize),
        t0: i64,
        t1: i64,
        grid: (usize, usize),
        config: &'a CmaxConfig,
    ) -> Result<Self> {
        config.validate()?;
        if events.is_empty() {
            return Err(Error::EmptySlice);
        }
        if t1 <= t0 {
            return Err(Error::InvalidInput(format!("empty interval [{t0}, {t1}]")));
        }
        if events.iter().any(|(x, y, _, _)| y as usize >= shape.0 || x as usize >= shape.1) {
            return Err(Error::OutOfRange("event outside the frame".into()));
        }
        let weights = events
            .iter()
            .map(|(x, y, _, _)| control_weights(x as f64, y as f64, grid, shape))
            .collect();
        let span = (t1 - t0) as f64;
        let taus = config
            .reference_times
            .iter()
            .map(|r| {
                let tr = r.resolve(t0, t1);
                events.ts.iter().map(|&t| (tr - t as f64) / span).collect()
            })
            .collect();
        let margin = scoring_margin(config, shape);
        let normalizer = match config.objective {
            ObjectiveKind::MultifocalNormalized => {
                let iwe = splat_iwe(&identity_points(events), shape);
                let n = scored_value(config.base, &gaussian_blur(&iwe, config.iwe_blur_sigma), margin);
                if !(n > 0.0) {
                    return Err(Error::DegenerateNormalizer);
                }
                n
            }
            _ => 1.0,
        };
        Ok(Self {
            events,
            shape,
            t0,
            t1,
            grid,
            config,
            weights,
            taus,
            normalizer,
            margin,
        })
    }

    pub fn num_params(&self) -> usize {
        2 * self.grid.0 * self.grid.1
    }

    fn base(&self) -> BaseObjective {
        match self.config.objective {
            ObjectiveKind::Variance => BaseObjective::Variance,
            ObjectiveKind::GradMag => BaseObjective::GradMag,
            ObjectiveKind::MultifocalNormalized => self.config.base,
        }
    }

    pub fn dense_flow(&self, params: &[f64]) -> FlowField {
        dense_from_grid(params, self.grid, self.shape, self.t0, self.t1)
    }

    pub fn value(&self, params: &[f64]) -> Result<f64> {
        self.evaluate(params, false).map(|(v, _)| v)
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluate(params, true)
            .map(|(v, g)| (v, g.unwrap_or_default()))
    }

    /// Contrast term alone, without the smoothness penalty.
    pub fn contrast(&self, params: &[f64]) -> f64 {
        let (u, v) = self.event_flow(params);
        let base = self.base();
        let ratios: Vec<f64> = self
            .taus
            .iter()
            .map(|tau| scored_value(base, &self.image(&self.points(&u, &v, tau)), self.margin) / self.normalizer)
            .collect();
        self.mean().combine(&ratios).0
    }

    fn mean(&self) -> FocalMean {
        match self.config.objective {
            ObjectiveKind::MultifocalNormalized => self.config.focal_mean,
            _ => FocalMean::Arithmetic,
        }
    }

    fn image(&self, pts: &[SplatPoint]) -> Array2<f64> {
        gaussian_blur(&splat_iwe(pts, self.shape), self.config.iwe_blur_sigma)
    }

    fn event_flow(&self, params: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.grid.0 * self.grid.1;
        let at = |w: &[(usize, f64); 4], off: usize| w.iter().map(|&(i, c)| c * params[off + i]).sum::<f64>();
        (
            self.weights.iter().map(|w| at(w, 0)).collect(),
            self.weights.iter().map(|w| at(w, k)).collect(),
        )
    }

    fn points(&self, u: &[f64], v: &[f64], tau: &[f64]) -> Vec<SplatPoint> {
        self.events
            .iter()
            .enumerate()
            .map(|(i, (x, y, _, _))| SplatPoint {
                x: x as f64 + u[i] * tau[i],
                y: y as f64 + v[i] * tau[i],
                weight: 1.0,
            })
            .collect()
    }

    fn evaluate(&self, params: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        if params.len() != self.num_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let k = self.grid.0 * self.grid.1;
        let (u, v) = self.event_flow(params);
        let base = self.base();
        let (ih, iw) = self.shape;

        let mut ratios = Vec::with_capacity(self.taus.len());
        let mut images = Vec::with_capacity(self.taus.len());
        for tau in &self.taus {
            let pts = self.points(&u, &v, tau);
            let iwe = self.image(&pts);
            if want_grad {
                let (j, dj) = scored_with_grad(base, &iwe, self.margin);
                ratios.push(j / self.normalizer);
                images.push((pts, gaussian_blur(&dj, self.config.iwe_blur_sigma)));
            } else {
                ratios.push(scored_value(base, &iwe, self.margin) / self.normalizer);
            }
        }
        let (mut value, coefs) = self.mean().combine(&ratios);
        let mut grad = want_grad.then(|| vec![0.0; 2 * k]);
        for ((tau, (pts, dj)), coef) in self.taus.iter().zip(&images).zip(&coefs) {
            let coef = coef / self.normalizer;
            if coef == 0.0 {
                continue;
            }
            let g = grad.as_mut().expect("gradient requested");
            for (i, p) in pts.iter().enumerate() {
                if !(p.x.is_finite() && p.y.is_finite()) {
                    continue;
                }
                let (x0, y0) = (p.x.floor(), p.y.floor());
                let (fx, fy) = (p.x - x0, p.y - y0);
                let corners = [
                    (x0, y0, -(1.0 - fy), -(1.0 - fx)),
                    (x0 + 1.0, y0, 1.0 - fy, -fx),
                    (x0, y0 + 1.0, -fy, 1.0 - fx),
                    (x0 + 1.0, y0 + 1.0, fy, fx),
                ];
                let (mut gx, mut gy) = (0.0, 0.0);
                for (cx, cy, dx, dy) in corners {
                    if cx < 0.0 || cy < 0.0 || cx >= iw as f64 || cy >= ih as f64 {
                        continue;
                    }
                    let d = dj[[cy as usize, cx as usize]];
                    gx += d * dx;
                    gy += d * dy;
                }
                let (du, dv) = (gx * tau[i] * coef, gy * tau[i] * coef);
                for &(c, w) in &self.weights[i] {
                    g[c] += w * du;
                    g[k + c] += w * dv;
                }
            }
        }

        let lambda = self.config.smoothness_weight;
        if lambda > 0.0 {
            let dense = self.dense_flow(params);
            let (sm, sg) = smoothness_with_grad(&dense.u, &dense.v, &self.config.charbonnier, want_grad);
            value -= lambda * sm;
            if let (Some(g), Some((gu, gv))) = (grad.as_mut(), sg) {
                for ((y, x), &du) in gu.indexed_iter() {
                    let dv = gv[[y, x]];
                    for (c, w) in control_weights(x as f64, y as f64, self.grid, self.shape) {
                        g[c] -= lambda * w * du;
                        g[k + c] -= lambda * w * dv;
                    }
                }
            }
        }
        if !value.is_finite() || grad.as_ref().is_some_and(|g| g.iter().any(|d| !d.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok((value, grad))
    }
}

/// Progress of one pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    pub grid: (usize, usize),
    /// Objective at the starting point, then after every accepted step.
    pub objective: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEstimate {
    pub flow: FlowField,
    pub levels: Vec<LevelTrace>,
    /// Finest-level objective at zero flow.
    pub zero_objective: f64,
    pub final_objective: f64,
}

fn level_grid(config: &CmaxConfig, level: usize) -> (usize, usize) {
    let shift = config.pyramid_levels - 1 - level;
    (
        (config.patch_grid.0 >> shift).max(1),
        (config.patch_grid.1 >> shift).max(1),
    )
}

fn upsample(params: &[f64], from: (usize, usize), to: (usize, usize), shape: (usize, usize)) -> Vec<f64> {
    let (kf, kt) = (from.0 * from.1, to.0 * to.1);
    let mut out = vec![0.0; 2 * kt];
    for j in 0..kt {
        let (x, y) = control_position(j, to, shape);
        for (i, w) in control_weights(x, y, from, shape) {
            out[j] += w * params[i];
            out[kt + j] += w * params[kf + i];
        }
    }
    out
}

fn ascend(problem: &ContrastProblem<'_>, start: Vec<f64>, config: &CmaxConfig, trace: &mut LevelTrace) -> Result<(Vec<f64>, f64)> {
    let mut params = start;
    let (mut value, mut grad) = problem.value_and_gradient(&params)?;
    trace.evaluations += 1;
    trace.objective.push(value);
    let mut step = config.step_size;
    for _ in 0..config.max_iters {
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 || step < config.min_step {
            break;
        }
        let candidate: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p + step * g / gmax).collect();
        let (v, g) = problem.value_and_gradient(&candidate)?;
        trace.evaluations += 1;
        if v > value {
            params = candidate;
            value = v;
            grad = g;
            trace.objective.push(value);
        } else {
            step *= 0.5;
        }
    }
    Ok((params, value))
}

/// Estimates the flow over `[t0, t1]` from the events of one slice.
/// Best uniform translation over an integer grid of half-width `radius`,
/// then refined by local searches at 1/2 and 1/4 pixel.
fn translation_search(problem: &ContrastProblem, radius: usize) -> Result<(Vec<f64>, f64, usize)> {
    let n = problem.num_params() / 2;
    let uniform = |du: f64, dv: f64| {
        let mut p = vec![du; n];
        p.resize(2 * n, dv);
        p
    };
    let r = radius as i64;
    let mut best = ((0.0, 0.0), f64::NEG_INFINITY);
    let mut evaluations = 0;
    let mut consider = |du: f64, dv: f64, best: &mut ((f64, f64), f64)| -> Result<()> {
        let value = problem.value(&uniform(du, dv))?;
        evaluations += 1;
        if value > best.1 {
            *best = ((du, dv), value);
        }
        Ok(())
    };
    for dv in -r..=r {
        for du in -r..=r {
            if du != 0 || dv != 0 {
                consider(du as f64, dv as f64, &mut best)?;
            }
        }
    }
    if radius > 0 {
        for h in [0.5, 0.25] {
            let (cu, cv) = best.0;
            for (a, b) in [(-1.0, -1.0), (0.0, -1.0), (1.0, -1.0), (-1.0, 0.0), (1.0, 0.0), (-1.0, 1.0), (0.0, 1.0), (1.0, 1.0)] {
                consider(cu + a * h, cv + b * h, &mut best)?;
            }
        }
    }
    Ok((uniform(best.0 .0, best.0 .1), best.1, evaluations))
}

pub fn estimate_flow(
    events: &EventStream,
    shape: (usize, usize),
    t0: i64,
    t1: i64,
    config: &CmaxConfig,
) -> Result<FlowEstimate> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::EmptySlice);
    }
    let mut levels = Vec::with_capacity(config.pyramid_levels);
    let mut prev: Option<(Vec<f64>, (usize, usize))> = None;
    let mut zero_objective = 0.0;
    let mut final_objective = 0.0;
    let mut params = Vec::new();
    let mut grid = (1, 1);
    for level in 0..config.pyramid_levels {
        grid = level_grid(config, level);
        let problem = ContrastProblem::new(events, shape, t0, t1, grid, config)?;
        let zeros = vec![0.0; problem.num_params()];
        let zero_value = problem.value(&zeros)?;
        let mut trace = LevelTrace {
            level,
            grid,
            objective: Vec::new(),
            evaluations: 1,
        };
        let start = match prev.take() {
            Some((p, from)) => {
                let up = upsample(&p, from, grid, shape);
                trace.evaluations += 1;
                if problem.value(&up)? >= zero_value {
                    up
                } else {
                    zeros
                }
            }
            None => {
                let (seed, seed_value, n) = translation_search(&problem, config.init_search_radius)?;
                trace.evaluations += n;
                if seed_value > zero_value {
                    seed
                } else {
                    zeros
                }
            }
        };
        let (best, value) = ascend(&problem, start, config, &mut trace)?;
        levels.push(trace);
        zero_objective = zero_value;
        final_objective = value;
        prev = Some((best.clone(), grid));
        params = best;
    }
    Ok(FlowEstimate {
        flow: dense_from_grid(&params, grid, shape, t0, t1),
        levels,
        zero_objective,
        final_objective,
    })
}

/// Per-interval record of [`estimate_intervals`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTrace {
    pub t0: i64,
    pub t1: i64,
    pub events: usize,
    /// `false` for intervals without events, which get zero flow.
    pub estimated: bool,
    pub zero_objective: Option<f64>,
    pub final_objective: Option<f64>,
    pub levels: Vec<LevelTrace>,
}

/// Estimates one flow field per `[t0, t1)` interval of `reader`.
pub fn estimate_intervals(
    reader: &Reader,
    intervals: &[(i64, i64)],
    config: &CmaxConfig,
) -> Result<(Vec<FlowField>, Vec<SliceTrace>)> {
    config.validate()?;
    let shape = reader.shape();
    let mut flows = Vec::with_capacity(intervals.len());
    let mut traces = Vec::with_capacity(intervals.len());
    for &(t0, t1) in intervals {
        let events = reader.read_events(reader.event_index_at(t0)?..reader.event_index_at(t1)?)?;
        let mut trace = SliceTrace {
            t0,
            t1,
            events: events.len(),
            estimated: false,
            zero_objective: None,
            final_objective: None,
            levels: Vec::new(),
        };
        if events.is_empty() {
            flows.push(FlowField::zeros(shape, t0, t1));
        } else {
            let est = estimate_flow(&events, shape, t0, t1, config)?;
            trace.estimated = true;
            trace.zero_objective = Some(est.zero_objective);
            trace.final_objective = Some(est.final_objective);
            trace.levels = est.levels;
            flows.push(est.flow);
        }
        traces.push(trace);
    }
    Ok((flows, traces))
}
