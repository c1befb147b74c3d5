//! Cyclic refinement of a flow pair and its fusion masks.
//!
//! The source is carried to the query pose and back again; the round trip
//! should reproduce the source. Flows and mask logits are refined by
//! gradient descent on that reconstruction error, alternating which
//! direction is updated on each pass.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::flowfield::{warp_adjoint, warp_bilinear, warp_gradient, FlowField};
use crate::losses::{tv_gradient, tv_of};
use crate::pipeline::{fuse_composite, inpaint_background, PersonBundle};
use crate::raster::{Image, Mask};
use crate::scalar::Real;

/// Logit magnitude used for binary masks; its sigmoid rounds to exactly 1.
pub const MASK_LOGIT: f64 = 40.0;
/// Maximum step halvings before a pass is rejected.
pub const MAX_HALVINGS: usize = 8;
/// Logit change per pixel of flow step.
pub const LOGIT_STEP_GAIN: f64 = 10.0;
/// Residuals this small count as exact matches in the L1 subgradient, so
/// rounding noise at a perfect alignment produces no gradient.
pub const L1_DEAD_ZONE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleConfig {
    pub k: usize,
    /// Largest flow update of one pass, in pixels.
    pub step_size: f64,
    pub tv_weight: f64,
    pub armijo_backtrack: bool,
    /// Standard deviation, in pixels, of the Gaussian applied to the flow
    /// gradient before stepping; 0 uses the raw gradient.
    pub gradient_smoothing: f64,
    /// Foreground dilation of the inpainted backgrounds.
    pub dilation: usize,
    pub inpaint_iterations: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            k: 20,
            step_size: 1.0,
            tv_weight: 0.1,
            armijo_backtrack: true,
            gradient_smoothing: 8.0,
            dilation: 5,
            inpaint_iterations: 2000,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter("step_size must be positive".into()));
        }
        if !(self.gradient_smoothing >= 0.0 && self.gradient_smoothing.is_finite()) {
            return Err(Error::InvalidParameter("gradient_smoothing must be non-negative".into()));
        }
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(Error::InvalidParameter("tv_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// One entry of the optimization log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    /// Accepted step, zero when the pass was rejected.
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleState<T> {
    /// Query-indexed flow into the source.
    pub flow_fwd: FlowField<T>,
    /// Source-indexed flow into the query.
    pub flow_bwd: FlowField<T>,
    /// Single-channel logits of the fusion mask on the query grid.
    pub mask_logits_fwd: Image<T>,
    /// Single-channel logits of the fusion mask on the source grid.
    pub mask_logits_bwd: Image<T>,
    /// Masks the TV term measures changes against.
    pub anchor_fwd: Mask<T>,
    pub anchor_bwd: Mask<T>,
    pub k: usize,
    pub step_size: f64,
    /// Symmetric objective before the first pass.
    pub initial_objective: Option<T>,
    /// Symmetric objective after every completed pass.
    pub loss_trace: Vec<T>,
    pub trace: Vec<TraceEntry>,
    /// Source carried to the query pose.
    pub query_composite: Option<Image<T>>,
    /// Source after the full round trip.
    pub source_reconstruction: Option<Image<T>>,
}

impl<T: Real> CycleState<T> {
    /// State whose masks start, and are anchored, at the given binary masks.
    pub fn new(
        flow_fwd: FlowField<T>,
        flow_bwd: FlowField<T>,
        mask_fwd: &Mask<T>,
        mask_bwd: &Mask<T>,
        config: &CycleConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_dims("backward flow", flow_fwd.dims(), flow_bwd.dims())?;
        check_dims("forward mask", flow_fwd.dims(), mask_fwd.dims())?;
        check_dims("backward mask", flow_fwd.dims(), mask_bwd.dims())?;
        Ok(Self {
            flow_fwd,
            flow_bwd,
            mask_logits_fwd: mask_logits(mask_fwd),
            mask_logits_bwd: mask_logits(mask_bwd),
            anchor_fwd: mask_fwd.clone(),
            anchor_bwd: mask_bwd.clone(),
            k: config.k,
            step_size: config.step_size,
            initial_objective: None,
            loss_trace: Vec::new(),
            trace: Vec::new(),
            query_composite: None,
            source_reconstruction: None,
        })
    }

    fn swapped(&self) -> Self {
        Self {
            flow_fwd: self.flow_bwd.clone(),
            flow_bwd: self.flow_fwd.clone(),
            mask_logits_fwd: self.mask_logits_bwd.clone(),
            mask_logits_bwd: self.mask_logits_fwd.clone(),
            anchor_fwd: self.anchor_bwd.clone(),
            anchor_bwd: self.anchor_fwd.clone(),
            k: self.k,
            step_size: self.step_size,
            initial_objective: None,
            loss_trace: Vec::new(),
            trace: Vec::new(),
            query_composite: None,
            source_reconstruction: None,
        }
    }
}

/// Logits whose sigmoid reproduces a binary mask; fractional values map
/// through the inverse sigmoid, clamped to the binary logits.
pub fn mask_logits<T: Real>(mask: &Mask<T>) -> Image<T> {
    let lim = T::lit(MASK_LOGIT);
    Image::from_fn(mask.width(), mask.height(), 1, |x, y, _| {
        let m = mask.get(x, y);
        if m <= T::zero() {
            -lim
        } else if m >= T::one() {
            lim
        } else {
            (m / (T::one() - m)).ln().max(-lim).min(lim)
        }
    })
}

/// Gradients of the one-direction objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleGradients<T> {
    pub flow_fwd: (Vec<T>, Vec<T>),
    pub flow_bwd: (Vec<T>, Vec<T>),
    pub logits_fwd: Vec<T>,
    pub logits_bwd: Vec<T>,
}

impl<T: Real> CycleGradients<T> {
    fn swapped(self) -> Self {
        Self {
            flow_fwd: self.flow_bwd,
            flow_bwd: self.flow_fwd,
            logits_fwd: self.logits_bwd,
            logits_bwd: self.logits_fwd,
        }
    }

    fn add(&mut self, o: &Self) {
        let add = |a: &mut Vec<T>, b: &Vec<T>| a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        add(&mut self.flow_fwd.0, &o.flow_fwd.0);
        add(&mut self.flow_fwd.1, &o.flow_fwd.1);
        add(&mut self.flow_bwd.0, &o.flow_bwd.0);
        add(&mut self.flow_bwd.1, &o.flow_bwd.1);
        add(&mut self.logits_fwd, &o.logits_fwd);
        add(&mut self.logits_bwd, &o.logits_bwd);
    }
}

/// Images and backgrounds a refinement runs against.
#[derive(Debug, Clone)]
pub struct CycleProblem<T> {
    pub source: Image<T>,
    pub query: Image<T>,
    pub source_background: Image<T>,
    pub query_background: Image<T>,
    pub tv_weight: T,
}

impl<T: Real> CycleProblem<T> {
    /// Backgrounds are inpainted under each dilated foreground.
    pub fn from_bundles(source: &PersonBundle<T>, query: &PersonBundle<T>, config: &CycleConfig) -> Result<Self> {
        check_dims("query bundle", source.dims(), query.dims())?;
        let bg = |b: &PersonBundle<T>| -> Result<Image<T>> {
            let hole = b.foreground.dilate(config.dilation);
            let half = T::lit(0.5);
            let hole = Mask::from_fn(hole.width(), hole.height(), |x, y| {
                if hole.get(x, y) >= half {
                    T::one()
                } else {
                    T::zero()
                }
            });
            inpaint_background(&b.image, &hole, config.inpaint_iterations)
        };
        Ok(Self {
            source: source.image.clone(),
            query: query.image.clone(),
            source_background: bg(source)?,
            query_background: bg(query)?,
            tv_weight: T::lit(config.tv_weight),
        })
    }

    fn swapped(&self) -> Self {
        Self {
            source: self.query.clone(),
            query: self.source.clone(),
            source_background: self.query_background.clone(),
            query_background: self.source_background.clone(),
            tv_weight: self.tv_weight,
        }
    }

    fn check(&self, state: &CycleState<T>) -> Result<()> {
        let d = self.source.dims();
        check_dims("query image", d, self.query.dims())?;
        check_dims("source background", d, self.source_background.dims())?;
        check_dims("query background", d, self.query_background.dims())?;
        check_dims("forward flow", d, state.flow_fwd.dims())?;
        check_dims("backward flow", d, state.flow_bwd.dims())?;
        check_dims("forward logits", d, state.mask_logits_fwd.dims())?;
        check_dims("backward logits", d, state.mask_logits_bwd.dims())?;
        check_dims("forward anchor", d, state.anchor_fwd.dims())?;
        check_dims("backward anchor", d, state.anchor_bwd.dims())?;
        Ok(())
    }

    /// Source → query → source objective and its gradients.
    pub fn objective(&self, state: &CycleState<T>) -> Result<(T, CycleGradients<T>)> {
        self.check(state)?;
        Ok(self.evaluate(state, true).0)
    }

    /// Objective of both cycle directions.
    pub fn symmetric_objective(&self, state: &CycleState<T>) -> Result<(T, CycleGradients<T>)> {
        self.check(state)?;
        let (a, mut ga) = self.evaluate(state, true).0;
        let (b, gb) = self.swapped().evaluate(&state.swapped(), true).0;
        ga.add(&gb.swapped());
        Ok((a + b, ga))
    }

    fn symmetric_value(&self, state: &CycleState<T>) -> T {
        self.evaluate(state, false).0 .0 + self.swapped().evaluate(&state.swapped(), false).0 .0
    }

    #[allow(clippy::type_complexity)]
    fn evaluate(&self, state: &CycleState<T>, grads: bool) -> ((T, CycleGradients<T>), (Image<T>, Image<T>)) {
        let (w, h) = self.source.dims();
        let c = self.source.channels();
        let m_f = sigmoid_mask(&state.mask_logits_fwd);
        let m_b = sigmoid_mask(&state.mask_logits_bwd);

        let a = warp_bilinear(&self.source, &state.flow_fwd, T::zero()).expect("checked dims");
        let o_hat = fuse_composite(&a, &m_f, &self.query_background).expect("checked dims");
        let cc = warp_bilinear(&o_hat, &state.flow_bwd, T::zero()).expect("checked dims");
        let o = fuse_composite(&cc, &m_b, &self.source_background).expect("checked dims");

        let n = T::lit((w * h * c) as f64);
        let mut l1 = T::zero();
        let mut l2 = T::zero();
        let mut g_o = Image::new(w, h, c);
        for (i, (&ov, &iv)) in o.as_slice().iter().zip(self.source.as_slice()).enumerate() {
            let r = ov - iv;
            l1 += r.abs();
            l2 += r * r;
            g_o.as_mut_slice()[i] = (dead_zone_sign(r) + T::lit(2.0) * r) / n;
        }
        let tv_f = masked_tv(&m_f, &state.anchor_fwd);
        let tv_b = masked_tv(&m_b, &state.anchor_bwd);
        let value = l1 / n + l2 / n + self.tv_weight * (tv_f + tv_b);

        let zero = CycleGradients {
            flow_fwd: (Vec::new(), Vec::new()),
            flow_bwd: (Vec::new(), Vec::new()),
            logits_fwd: Vec::new(),
            logits_bwd: Vec::new(),
        };
        if !grads {
            return ((value, zero), (o_hat, o));
        }

        // through the second composite
        let mut g_lb = vec![T::zero(); w * h];
        let mut g_c = Image::new(w, h, c);
        for i in 0..w * h {
            let m = m_b.as_slice()[i];
            let mut dm = T::zero();
            for k in 0..c {
                let j = i * c + k;
                let g = g_o.as_slice()[j];
                dm += g * (cc.as_slice()[j] - self.source_background.as_slice()[j]);
                g_c.as_mut_slice()[j] = g * m;
            }
            g_lb[i] = dm;
        }
        let fb = warp_gradient(&o_hat, &state.flow_bwd, &g_c).expect("checked dims");
        let g_ohat = warp_adjoint(&g_c, &state.flow_bwd).expect("checked dims");

        // through the first composite
        let mut g_lf = vec![T::zero(); w * h];
        let mut g_a = Image::new(w, h, c);
        for i in 0..w * h {
            let m = m_f.as_slice()[i];
            let mut dm = T::zero();
            for k in 0..c {
                let j = i * c + k;
                let g = g_ohat.as_slice()[j];
                dm += g * (a.as_slice()[j] - self.query_background.as_slice()[j]);
                g_a.as_mut_slice()[j] = g * m;
            }
            g_lf[i] = dm;
        }
        let ff = warp_gradient(&self.source, &state.flow_fwd, &g_a).expect("checked dims");

        let tvg_f = masked_tv_gradient(&m_f, &state.anchor_fwd);
        let tvg_b = masked_tv_gradient(&m_b, &state.anchor_bwd);
        for i in 0..w * h {
            let sf = m_f.as_slice()[i];
            let sb = m_b.as_slice()[i];
            g_lf[i] = (g_lf[i] + self.tv_weight * tvg_f[i]) * sf * (T::one() - sf);
            g_lb[i] = (g_lb[i] + self.tv_weight * tvg_b[i]) * sb * (T::one() - sb);
        }
        (
            (
                value,
                CycleGradients {
                    flow_fwd: (ff.gx, ff.gy),
                    flow_bwd: (fb.gx, fb.gy),
                    logits_fwd: g_lf,
                    logits_bwd: g_lb,
                },
            ),
            (o_hat, o),
        )
    }
}

fn dead_zone_sign<T: Real>(r: T) -> T {
    let eps = T::lit(L1_DEAD_ZONE);
    if r > eps {
        T::one()
    } else if r < -eps {
        -T::one()
    } else {
        T::zero()
    }
}

fn sigmoid_mask<T: Real>(logits: &Image<T>) -> Mask<T> {
    Mask::from_fn(logits.width(), logits.height(), |x, y| logits.get(x, y, 0).sigmoid())
}

fn masked_tv<T: Real>(m: &Mask<T>, anchor: &Mask<T>) -> T {
    tv_of(m.width(), m.height(), |x, y| m.get(x, y) - anchor.get(x, y))
}

fn masked_tv_gradient<T: Real>(m: &Mask<T>, anchor: &Mask<T>) -> Vec<T> {
    tv_gradient(m.width(), m.height(), |x, y| m.get(x, y) - anchor.get(x, y))
}

/// Source → query → source objective for a state over two bundles.
pub fn cycle_objective<T: Real>(
    state: &CycleState<T>,
    source: &PersonBundle<T>,
    query: &PersonBundle<T>,
    config: &CycleConfig,
) -> Result<(T, CycleGradients<T>)> {
    CycleProblem::from_bundles(source, query, config)?.objective(state)
}

/// Refines an initial flow pair between two bundles. Masks start at the
/// bundle foregrounds.
pub fn cycle_refine<T: Real>(
    source: &PersonBundle<T>,
    query: &PersonBundle<T>,
    init_fwd: &FlowField<T>,
    init_bwd: &FlowField<T>,
    config: &CycleConfig,
) -> Result<CycleState<T>> {
    let problem = CycleProblem::from_bundles(source, query, config)?;
    let state = CycleState::new(
        init_fwd.clone(),
        init_bwd.clone(),
        &query.foreground,
        &source.foreground,
        config,
    )?;
    refine(&problem, state, config)
}

/// Runs `config.k` alternating passes from `state`.
///
/// Even passes update the forward flow and mask, odd passes the backward
/// ones. Every pass follows the gradient of the symmetric objective with
/// respect to its variables, normalised so that no flow vector moves by
/// more than the step. With backtracking the step is halved until the
/// objective does not increase; after [`MAX_HALVINGS`] failures the pass
/// leaves the state unchanged.
pub fn refine<T: Real>(problem: &CycleProblem<T>, mut state: CycleState<T>, config: &CycleConfig) -> Result<CycleState<T>> {
    config.validate()?;
    problem.check(&state)?;
    state.k = config.k;
    state.step_size = config.step_size;
    state.loss_trace.clear();
    state.trace.clear();
    let (mut current, _) = problem.symmetric_objective(&state)?;
    if !current.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    state.initial_objective = Some(current);
    for pass in 0..config.k {
        let forward = pass % 2 == 0;
        let (_, grads) = problem.symmetric_objective(&state)?;
        let (gx, gy, gl, flow) = if forward {
            (&grads.flow_fwd.0, &grads.flow_fwd.1, &grads.logits_fwd, &state.flow_fwd)
        } else {
            (&grads.flow_bwd.0, &grads.flow_bwd.1, &grads.logits_bwd, &state.flow_bwd)
        };
        let sigma = config.gradient_smoothing;
        let gx = &smooth_on_valid(gx, flow, sigma);
        let gy = &smooth_on_valid(gy, flow, sigma);
        let flow_norm = gx
            .iter()
            .zip(gy.iter())
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(T::zero(), |m, v| m.max(v));
        let logit_norm = gl.iter().fold(T::zero(), |m, v| m.max(v.abs()));

        let mut step = config.step_size;
        let mut accepted = 0.0;
        if flow_norm > T::zero() || logit_norm > T::zero() {
            for _ in 0..=MAX_HALVINGS {
                let cand = stepped(&state, forward, gx, gy, gl, flow_norm, logit_norm, T::lit(step));
                let value = problem.symmetric_value(&cand);
                if !value.is_finite() {
                    return Err(Error::NonFinite { iteration: pass });
                }
                if !config.armijo_backtrack || value <= current {
                    state = cand;
                    current = value;
                    accepted = step;
                    break;
                }
                step *= 0.5;
            }
        }
        state.loss_trace.push(current);
        state.trace.push(TraceEntry {
            iteration: pass,
            objective: current.to_f64_lossy(),
            step_size: accepted,
        });
        log::debug!("cycle pass {pass}: objective {current} step {accepted}");
    }
    let (_, (o_hat, o)) = problem.evaluate(&state, false);
    state.query_composite = Some(o_hat);
    state.source_reconstruction = Some(o);
    Ok(state)
}

/// Normalised Gaussian convolution of a per-pixel field over the valid
/// pixels of `flow`; invalid pixels come out as zero.
fn smooth_on_valid<T: Real>(g: &[T], flow: &FlowField<T>, sigma: f64) -> Vec<T> {
    let (w, h) = flow.dims();
    let valid = flow.valid_slice();
    if sigma <= 0.0 {
        return g.iter().zip(valid).map(|(&v, &ok)| if ok { v } else { T::zero() }).collect();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<T> = (-r..=r).map(|i| T::lit((-(i * i) as f64 / (2.0 * sigma * sigma)).exp())).collect();
    let blur = |data: &[T]| -> Vec<T> {
        let pass = |src: &[T], horizontal: bool| -> Vec<T> {
            let mut out = vec![T::zero(); w * h];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for (k, &kv) in kernel.iter().enumerate() {
                        let o = k as isize - r;
                        let (xx, yy) = if horizontal { (x as isize + o, y as isize) } else { (x as isize, y as isize + o) };
                        if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                            acc += kv * src[yy as usize * w + xx as usize];
                        }
                    }
                    out[y * w + x] = acc;
                }
            }
            out
        };
        pass(&pass(data, true), false)
    };
    let masked: Vec<T> = g.iter().zip(valid).map(|(&v, &ok)| if ok { v } else { T::zero() }).collect();
    let weight: Vec<T> = valid.iter().map(|&ok| if ok { T::one() } else { T::zero() }).collect();
    let num = blur(&masked);
    let den = blur(&weight);
    (0..w * h)
        .map(|i| if valid[i] && den[i] > T::zero() { num[i] / den[i] } else { T::zero() })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn stepped<T: Real>(
    state: &CycleState<T>,
    forward: bool,
    gx: &[T],
    gy: &[T],
    gl: &[T],
    flow_norm: T,
    logit_norm: T,
    step: T,
) -> CycleState<T> {
    let mut next = state.clone();
    let (flow, logits) = if forward {
        (&mut next.flow_fwd, &mut next.mask_logits_fwd)
    } else {
        (&mut next.flow_bwd, &mut next.mask_logits_bwd)
    };
    let (w, h) = flow.dims();
    if flow_norm > T::zero() {
        let s = step / flow_norm;
        for y in 0..h {
            for x in 0..w {
                if let Some((dx, dy)) = flow.lookup(x, y) {
                    let i = y * w + x;
                    flow.set(x, y, Some((dx - s * gx[i], dy - s * gy[i])));
                }
            }
        }
    }
    if logit_norm > T::zero() {
        let s = step * T::lit(LOGIT_STEP_GAIN) / logit_norm;
        let lim = T::lit(MASK_LOGIT);
        for (l, &g) in logits.as_mut_slice().iter_mut().zip(gl) {
            *l = (*l - s * g).max(-lim).min(lim);
        }
    }
    next
}
