//! Stable and unstable leaf endpoints on the section near `γ(0)`, directed
//! distance along the switching curve, loop maps and the separation fit.
//!
//! Offsets far below the resolution of `O(1)` coordinates are handled by
//! carrying them along the leaf orbit with the variational equation until
//! they have grown to a representable size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::integrator::{
    flow_to_section, run, Control, Direction, IntegrateError, IntegratorOptions, PwStep, Section, Signal,
};
use crate::melnikov::{Melnikov, MelnikovError, MelnikovMode, MelnikovOptions};
use crate::quadrature::{integrate as quad, QuadOptions};
use crate::rk::{find_step, integrate_smooth, DenseStep, SmoothOptions};
use crate::spectral::{analyze_origin, derived_constants, ConstantsTable, SpectralError, SpectralReport};
use crate::system::{HomoclinicReference, PiecewiseSystem, Region, Vec2};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LeafError {
    #[error("bisection bracket fails: {0}")]
    BisectionBracketFails(String),
    #[error("hypotheses fail: {0}")]
    Hypotheses(String),
    #[error("shooting for the leaf endpoint did not converge: {0}")]
    Shooting(String),
    #[error("orbit left the homoclinic tube: {0}")]
    Escaped(String),
    #[error("no return to the section: {0}")]
    NoCrossing(String),
    #[error("d = {d:e} outside J0 = (0, {j0:e}]")]
    OutOfRegime { d: f64, j0: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Melnikov(#[from] MelnikovError),
    #[error("field evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

fn norm(x: Vec2) -> f64 {
    x[0].hypot(x[1])
}

/// Arc-length coordinates on the switching curve near `γ(0)`.
///
/// Points are written `C(σ) = γ(0) + σ t̂ + n(σ) n̂` with `G(C(σ)) = 0`; the
/// arc coordinate `s` is the signed arc length from `γ(0)`, increasing away
/// from the origin.
#[derive(Clone, Debug)]
pub struct SectionCoordinates {
    sys: PiecewiseSystem,
    pub gamma0: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
    /// `ℓ(γ(0))`.
    pub ell0: f64,
    pub half_width: f64,
    straight: bool,
}

impl SectionCoordinates {
    pub fn new(sys: &PiecewiseSystem, gamma0: Vec2, half_width: f64) -> Result<SectionCoordinates, LeafError> {
        let grad = sys.grad_switching(gamma0)?;
        let gn = norm(grad);
        if gn == 0.0 {
            return Err(LeafError::Invalid("switching gradient vanishes at γ(0)".into()));
        }
        let normal = [grad[0] / gn, grad[1] / gn];
        let (ell0, dir) = trace_from_origin(sys, gamma0)?;
        let mut tangent = [-normal[1], normal[0]];
        if tangent[0] * dir[0] + tangent[1] * dir[1] < 0.0 {
            tangent = [-tangent[0], -tangent[1]];
        }
        let mut sc = SectionCoordinates {
            sys: sys.clone(),
            gamma0,
            tangent,
            normal,
            ell0,
            half_width,
            straight: false,
        };
        let w = half_width.max(1e-3);
        sc.straight = [-w, 0.0, w]
            .iter()
            .map(|&s| sc.offset_slope(s))
            .collect::<Result<Vec<_>, _>>()?
            .iter()
            .all(|v| v.abs() < 1e-15)
            && sc.offset(w)?.abs() < 1e-15;
        Ok(sc)
    }

    fn offset(&self, sigma: f64) -> Result<f64, LeafError> {
        let mut n = 0.0;
        for _ in 0..50 {
            let p = self.raw_point(sigma, n);
            let g = self.sys.switching(p)?;
            let gr = self.sys.grad_switching(p)?;
            let dn = gr[0] * self.normal[0] + gr[1] * self.normal[1];
            if dn == 0.0 {
                return Err(LeafError::Invalid("switching curve folds over the section".into()));
            }
            let step = g / dn;
            n -= step;
            if step.abs() <= 1e-16 * (1.0 + n.abs()) {
                break;
            }
        }
        Ok(n)
    }

    fn raw_point(&self, sigma: f64, n: f64) -> Vec2 {
        [
            self.gamma0[0] + sigma * self.tangent[0] + n * self.normal[0],
            self.gamma0[1] + sigma * self.tangent[1] + n * self.normal[1],
        ]
    }

    fn offset_slope(&self, sigma: f64) -> Result<f64, LeafError> {
        let n = self.offset(sigma)?;
        let gr = self.sys.grad_switching(self.raw_point(sigma, n))?;
        let dt = gr[0] * self.tangent[0] + gr[1] * self.tangent[1];
        let dn = gr[0] * self.normal[0] + gr[1] * self.normal[1];
        Ok(-dt / dn)
    }

    fn arc(&self, sigma: f64) -> Result<f64, LeafError> {
        if self.straight || sigma == 0.0 {
            return Ok(sigma);
        }
        let mut f = |x: f64| -> Result<f64, LeafError> { Ok(self.offset_slope(x)?.hypot(1.0)) };
        Ok(quad(&mut f, 0.0, sigma, &QuadOptions::default())?.value)
    }

    /// Arc coordinate of a point of the curve.
    pub fn s_of(&self, p: Vec2) -> Result<f64, LeafError> {
        let sigma = (p[0] - self.gamma0[0]) * self.tangent[0] + (p[1] - self.gamma0[1]) * self.tangent[1];
        self.arc(sigma)
    }

    /// `ℓ(p)`, positive from the origin towards `γ(0)`.
    pub fn ell(&self, p: Vec2) -> Result<f64, LeafError> {
        Ok(self.ell0 + self.s_of(p)?)
    }

    /// Point with arc coordinate `s`.
    pub fn point_at(&self, s: f64) -> Result<Vec2, LeafError> {
        if self.straight {
            return Ok(self.raw_point(s, 0.0));
        }
        let mut sigma = s;
        for _ in 0..40 {
            let r = self.arc(sigma)? - s;
            let step = r / self.offset_slope(sigma)?.hypot(1.0);
            sigma -= step;
            if step.abs() <= 1e-16 * (1.0 + sigma.abs()) {
                break;
            }
        }
        Ok(self.raw_point(sigma, self.offset(sigma)?))
    }

    /// `D(q, p) = ℓ(p) − ℓ(q)`.
    pub fn directed_distance(&self, q: Vec2, p: Vec2) -> Result<f64, LeafError> {
        Ok(self.s_of(p)? - self.s_of(q)?)
    }

    /// Unit tangent at a curve point, oriented with increasing `ℓ`.
    pub fn tangent_at(&self, p: Vec2) -> Result<Vec2, LeafError> {
        let gr = self.sys.grad_switching(p)?;
        let n = norm(gr);
        let mut t = [-gr[1] / n, gr[0] / n];
        if t[0] * self.tangent[0] + t[1] * self.tangent[1] < 0.0 {
            t = [-t[0], -t[1]];
        }
        Ok(t)
    }
}

/// Follow the switching curve from the origin to `γ(0)`; returns the arc
/// length and the arrival direction.
fn trace_from_origin(sys: &PiecewiseSystem, gamma0: Vec2) -> Result<(f64, Vec2), LeafError> {
    let total = norm(gamma0);
    let h = total / 4000.0;
    let tangent = |p: Vec2, prev: Vec2| -> Result<Vec2, LeafError> {
        let g = sys.grad_switching(p)?;
        let n = norm(g);
        let mut t = [-g[1] / n, g[0] / n];
        if t[0] * prev[0] + t[1] * prev[1] < 0.0 {
            t = [-t[0], -t[1]];
        }
        Ok(t)
    };
    let mut p = [0.0, 0.0];
    let mut dir = tangent(p, gamma0)?;
    let mut len = 0.0;
    let mut best = total;
    for _ in 0..40_000 {
        let mut q = [p[0] + h * dir[0], p[1] + h * dir[1]];
        for _ in 0..20 {
            let g = sys.switching(q)?;
            let gr = sys.grad_switching(q)?;
            let gg = gr[0] * gr[0] + gr[1] * gr[1];
            q = [q[0] - g * gr[0] / gg, q[1] - g * gr[1] / gg];
            if g.abs() < 1e-15 {
                break;
            }
        }
        len += norm([q[0] - p[0], q[1] - p[1]]);
        dir = tangent(q, [q[0] - p[0], q[1] - p[1]])?;
        p = q;
        let dist = norm([gamma0[0] - p[0], gamma0[1] - p[1]]);
        if dist < 2.0 * h {
            let sign = if (gamma0[0] - p[0]) * dir[0] + (gamma0[1] - p[1]) * dir[1] >= 0.0 { 1.0 } else { -1.0 };
            return Ok((len + sign * dist, dir));
        }
        if dist > best + 10.0 * h && dist > 4.0 * total {
            break;
        }
        best = best.min(dist);
    }
    // The curve does not connect the origin to γ(0) within reach; fall back
    // to the chord.
    Ok((total, gamma0))
}

/// One time orientation of the problem: the system, its homoclinic loop and
/// the spectral data at the origin.
#[derive(Clone, Debug)]
pub struct Side {
    pub sys: PiecewiseSystem,
    pub hom: HomoclinicReference,
    pub report: SpectralReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Forward,
    Backward,
}

impl Orientation {
    pub fn other(self) -> Orientation {
        match self {
            Orientation::Forward => Orientation::Backward,
            Orientation::Backward => Orientation::Forward,
        }
    }

    /// Map a time between the original and the oriented clock.
    pub fn map_time(self, t: f64) -> f64 {
        match self {
            Orientation::Forward => t,
            Orientation::Backward => -t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafMethod {
    Shooting,
    Bisection,
    /// Bisection bracket refined by shooting, with a consistency check.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafOptions {
    pub rel_tol: f64,
    pub max_step: f64,
    /// Size at which a carried offset is handed to direct integration.
    pub eta: f64,
    /// The carry also ends once the offset reaches this fraction of `|x_s|`.
    pub handoff_ratio: f64,
    pub method: LeafMethod,
    /// Bisection stops at width `factor·ε`.
    pub bisection_factor: f64,
    /// Leaf length used when only the endpoint is needed.
    pub endpoint_horizon: f64,
}

impl Default for LeafOptions {
    fn default() -> Self {
        LeafOptions {
            rel_tol: 1e-12,
            max_step: 0.1,
            eta: 1e-4,
            handoff_ratio: 1e-6,
            method: LeafMethod::Shooting,
            bisection_factor: 1e-3,
            endpoint_horizon: 30.0,
        }
    }
}

impl LeafOptions {
    fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            max_step: self.max_step,
            ..IntegratorOptions::relative(self.rel_tol)
        }
    }
}

/// Shared, immutable data for leaf and loop-map computations at one `ε`.
#[derive(Clone, Debug)]
pub struct LoopContext {
    pub fwd: Side,
    pub bwd: Side,
    pub eps: f64,
    pub section: SectionCoordinates,
    pub consts: ConstantsTable,
    pub opts: LeafOptions,
}

impl LoopContext {
    /// Requires all spectral verdicts and Scenario 1.
    pub fn new(sys: &PiecewiseSystem, hom: &HomoclinicReference, eps: f64, opts: LeafOptions) -> Result<LoopContext, LeafError> {
        if !(eps >= 0.0) {
            return Err(LeafError::Invalid(format!("eps = {eps} must be non-negative")));
        }
        let report = analyze_origin(sys, Some(hom))?;
        let v = report.verdicts;
        if !v.all() {
            return Err(LeafError::Hypotheses(format!(
                "F0={} F1={} F2={} K={}",
                v.f0, v.f1, v.f2, v.k_transversality
            )));
        }
        if report.scenario != Some(1) {
            return Err(LeafError::Hypotheses(format!("scenario {:?} is not Scenario 1", report.scenario)));
        }
        let consts = derived_constants(&report);
        let rsys = sys.time_reversed();
        let rhom = hom.reversed();
        let rreport = analyze_origin(&rsys, Some(&rhom))?;
        let half_width = if eps > 0.0 { eps.sqrt() } else { 0.1 };
        let section = SectionCoordinates::new(sys, hom.gamma0, half_width)?;
        Ok(LoopContext {
            fwd: Side {
                sys: sys.clone(),
                hom: hom.clone(),
                report,
            },
            bwd: Side {
                sys: rsys,
                hom: rhom,
                report: rreport,
            },
            eps,
            section,
            consts,
            opts,
        })
    }

    pub fn side(&self, o: Orientation) -> &Side {
        match o {
            Orientation::Forward => &self.fwd,
            Orientation::Backward => &self.bwd,
        }
    }

    /// Upper end of `J0 = (0, ε^{(1+ν)/σ̲}]`.
    pub fn j0_max(&self, nu: f64) -> f64 {
        self.eps.powf((1.0 + nu) / self.consts.sigma_lo)
    }

    /// `T_b = |ln ε|/|λ_s^+|`.
    pub fn t_b(&self) -> f64 {
        self.eps.ln().abs() / self.fwd.report.lambda_s_plus.abs()
    }

    /// `T_a = |ln ε|/λ_u^-`.
    pub fn t_a(&self) -> f64 {
        self.eps.ln().abs() / self.fwd.report.lambda_u_minus
    }
}

#[derive(Clone, Debug)]
enum LeafKind {
    Homoclinic(HomoclinicReference),
    Numeric {
        steps: Vec<DenseStep<2>>,
        t_far: f64,
        x_far: Vec2,
        rate: f64,
    },
}

/// Orbit of a stable-leaf endpoint `P_s(τ)` for `t ≥ τ` (in the clock of its
/// side).
#[derive(Clone, Debug)]
pub struct LeafOrbit {
    pub tau: f64,
    pub point: Vec2,
    kind: LeafKind,
}

impl LeafOrbit {
    pub fn eval(&self, t: f64) -> Vec2 {
        match &self.kind {
            LeafKind::Homoclinic(h) => h.eval(t - self.tau),
            LeafKind::Numeric {
                steps,
                t_far,
                x_far,
                rate,
            } => {
                if t >= *t_far {
                    let s = (rate * (t - t_far)).exp();
                    [x_far[0] * s, x_far[1] * s]
                } else if t <= self.tau {
                    self.point
                } else {
                    find_step(steps, t).map(|s| s.eval(t)).unwrap_or(self.point)
                }
            }
        }
    }

    /// Time up to which the orbit is integrated (infinite for the exact loop).
    pub fn t_far(&self) -> f64 {
        match &self.kind {
            LeafKind::Homoclinic(_) => f64::INFINITY,
            LeafKind::Numeric { t_far, .. } => *t_far,
        }
    }

    /// Smallest stored node time at or after `t`, where the orbit is known
    /// without interpolation error.
    pub fn node_at_or_after(&self, t: f64) -> f64 {
        match &self.kind {
            LeafKind::Homoclinic(_) => t,
            LeafKind::Numeric { steps, t_far, .. } => match find_step(steps, t) {
                Some(s) if s.h < 0.0 => s.t0,
                Some(s) => s.t1(),
                None => t.min(*t_far),
            },
        }
    }

    /// First time the orbit is inside `B(0, r)` (scanned at step nodes and
    /// on a 0.01 grid).
    pub fn entry_time(&self, r: f64, limit: f64) -> Option<f64> {
        let mut t = self.tau;
        while t <= self.tau + limit {
            if norm(self.eval(t)) < r {
                return Some(t);
            }
            t += 0.01;
        }
        None
    }
}

/// `P_s(τ)` and its orbit by backward shooting from the local stable
/// direction; `horizon` is the length of the integrated part.
pub fn stable_leaf(side: &Side, tau: f64, eps: f64, horizon: f64, opts: &LeafOptions) -> Result<LeafOrbit, LeafError> {
    if eps == 0.0 || side.sys.is_unperturbed() {
        return Ok(LeafOrbit {
            tau,
            point: side.hom.gamma0,
            kind: LeafKind::Homoclinic(side.hom.clone()),
        });
    }
    let x_far = side.hom.eval(horizon);
    let iopts = opts.integrator();
    let g0 = side.hom.gamma0;
    let mut shift = 0.0;
    let mut last_err = f64::NAN;
    for _ in 0..30 {
        let t_far = tau + horizon + shift;
        let (ev, traj) = flow_to_section(
            &side.sys,
            t_far,
            x_far,
            eps,
            Direction::Backward,
            Section::OmegaZero,
            2.0 * horizon + 40.0,
            &iopts,
        )?;
        let err = tau - ev.time;
        if norm([ev.point[0] - g0[0], ev.point[1] - g0[1]]) > 0.25 * norm(g0) {
            return Err(LeafError::Shooting(format!(
                "leaf meets the switching curve at {:?}, far from γ(0)",
                ev.point
            )));
        }
        if err.abs() <= 1e-12 * (1.0 + tau.abs()) {
            return Ok(LeafOrbit {
                tau,
                point: ev.point,
                kind: LeafKind::Numeric {
                    steps: traj.steps.into_iter().map(|p| p.step).collect(),
                    t_far,
                    x_far,
                    rate: side.report.lambda_s_plus,
                },
            });
        }
        last_err = err;
        shift += err;
    }
    Err(LeafError::Shooting(format!("time mismatch {last_err:e} after 30 iterations")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fate {
    Loops,
    Escapes,
}

/// Forward fate of `x0` at time `tau`: crossing the switching curve near the
/// origin (looping) or leaving `B(0, r0)` through the outer exit cone.
pub fn fate(side: &Side, tau: f64, x0: Vec2, eps: f64, r0: f64, opts: &LeafOptions) -> Result<Fate, LeafError> {
    let r_in = 0.5 * norm(side.hom.gamma0);
    let budget = 200.0 / side.report.lambda_u_plus.min(side.report.lambda_s_plus.abs());
    let mut entered = false;
    let mut out: Option<Fate> = None;
    let res = run(&side.sys, eps, tau, x0, Some(Region::Plus), tau + budget, &opts.integrator(), false, &mut |sig| {
        match sig {
            Signal::Event(ev) => {
                if ev.from == Region::Plus && norm(ev.point) < r_in {
                    out = Some(Fate::Loops);
                    return Control::Stop;
                }
            }
            Signal::Step(ps) => {
                let n = norm(ps.step.eval(ps.step.t1()));
                if n < 0.5 * r0 {
                    entered = true;
                }
                if entered && n > r0 {
                    out = Some(Fate::Escapes);
                    return Control::Stop;
                }
            }
        }
        Control::Continue
    });
    match res {
        Ok(_) => out.ok_or_else(|| LeafError::BisectionBracketFails(format!("orbit from {x0:?} undecided within {budget}"))),
        Err(IntegrateError::DomainExit { .. }) => Ok(Fate::Escapes),
        Err(e) => Err(e.into()),
    }
}

/// Bisection for the stable leaf endpoint in arc length on `L⁰(√ε)`.
/// Returns `(arc coordinate, final width, iterations)`.
pub fn bisect_stable(ctx: &LoopContext, o: Orientation, tau: f64, opts: &LeafOptions) -> Result<(f64, f64, usize), LeafError> {
    let side = ctx.side(o);
    let eps = ctx.eps;
    if eps == 0.0 {
        return Ok((0.0, 0.0, 0));
    }
    let r0 = (10.0 * eps.sqrt()).clamp(0.05, 0.5);
    let w = ctx.section.half_width;
    let classify = |s: f64| -> Result<Fate, LeafError> {
        let p = ctx.section.point_at(s)?;
        fate(side, tau, p, eps, r0, opts)
    };
    let (mut lo, mut hi) = (-w, w);
    let f_lo = classify(lo)?;
    let f_hi = classify(hi)?;
    if f_lo == f_hi {
        return Err(LeafError::BisectionBracketFails(format!(
            "both ends of L0 ({lo:e}, {hi:e}) have fate {f_lo:?}"
        )));
    }
    let tol = opts.bisection_factor * eps;
    let mut it = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if classify(mid)? == f_lo {
            lo = mid;
        } else {
            hi = mid;
        }
        it += 1;
    }
    Ok((0.5 * (lo + hi), hi - lo, it))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafDiagnostics {
    pub method: LeafMethod,
    pub bisection_width: Option<f64>,
    pub bisection_iterations: Option<usize>,
    /// `|s_bisection − s_shooting|` for both leaves (max).
    pub discrepancy: Option<f64>,
    pub consistent: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafEndpoints {
    pub tau: f64,
    pub ps: Vec2,
    pub pu: Vec2,
    /// Arc coordinates relative to `γ(0)`.
    pub s_ps: f64,
    pub s_pu: f64,
    /// `D(P_s, P_u)`.
    pub separation: f64,
    pub diagnostics: LeafDiagnostics,
}

/// Leaf endpoint on one side: `(point, arc coordinate, bisection data)`.
fn endpoint(ctx: &LoopContext, o: Orientation, tau_side: f64, method: LeafMethod) -> Result<(Vec2, f64, Option<(f64, f64, usize)>), LeafError> {
    let opts = &ctx.opts;
    let side = ctx.side(o);
    let bis = match method {
        LeafMethod::Shooting => None,
        _ => {
            let (s, w, it) = bisect_stable(ctx, o, tau_side, opts)?;
            Some((s, w, it))
        }
    };
    match method {
        LeafMethod::Bisection => {
            let (s, _, _) = bis.unwrap();
            Ok((ctx.section.point_at(s)?, s, bis.map(|(s, w, i)| (s, w, i))))
        }
        _ => {
            let leaf = stable_leaf(side, tau_side, ctx.eps, opts.endpoint_horizon, opts)?;
            let s = ctx.section.s_of(leaf.point)?;
            Ok((leaf.point, s, bis))
        }
    }
}

/// `P_s(τ)`, `P_u(τ)` and their directed distance.
pub fn leaf_endpoints(ctx: &LoopContext, tau: f64, method: LeafMethod) -> Result<LeafEndpoints, LeafError> {
    let (ps, s_ps, bs) = endpoint(ctx, Orientation::Forward, tau, method)?;
    let (pu, s_pu, bu) = endpoint(ctx, Orientation::Backward, -tau, method)?;
    let mut diag = LeafDiagnostics {
        method,
        bisection_width: None,
        bisection_iterations: None,
        discrepancy: None,
        consistent: None,
    };
    if let (Some((a, wa, ia)), Some((b, wb, ib))) = (bs, bu) {
        diag.bisection_width = Some(wa.max(wb));
        diag.bisection_iterations = Some(ia.max(ib));
        if method == LeafMethod::Both {
            let disc = (a - s_ps).abs().max((b - s_pu).abs());
            diag.discrepancy = Some(disc);
            // The escape criterion is sharp up to the bracket width plus the
            // numerical thickness of the dichotomy.
            diag.consistent = Some(disc <= wa.max(wb) + 1e-9);
        }
    }
    Ok(LeafEndpoints {
        tau,
        ps,
        pu,
        s_ps,
        s_pu,
        separation: s_pu - s_ps,
        diagnostics: diag,
    })
}

/// A piece of a constructed orbit, in the clock of its side.
#[derive(Clone, Debug)]
pub enum Segment {
    /// The leaf orbit itself on `[t0, t1]`.
    Leaf { leaf: LeafOrbit, t0: f64, t1: f64 },
    /// `x_s(t) + d·v(t)` with `v` the variational solution along the leaf.
    Deviation {
        leaf: LeafOrbit,
        v: Vec<DenseStep<2>>,
        d: f64,
        t0: f64,
        t1: f64,
    },
    /// Direct event-located integration.
    Direct { steps: Vec<PwStep>, t0: f64, t1: f64 },
}

impl Segment {
    pub fn span(&self) -> (f64, f64) {
        match self {
            Segment::Leaf { t0, t1, .. } | Segment::Deviation { t0, t1, .. } | Segment::Direct { t0, t1, .. } => (*t0, *t1),
        }
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        match self {
            Segment::Leaf { leaf, .. } => leaf.eval(t),
            Segment::Deviation { leaf, v, d, .. } => {
                let x = leaf.eval(t);
                let w = find_step(v, t).map(|s| s.eval(t)).unwrap_or([0.0, 0.0]);
                [x[0] + d * w[0], x[1] + d * w[1]]
            }
            Segment::Direct { steps, .. } => {
                let idx = steps.partition_point(|s| s.step.t1() < t);
                let s = &steps[idx.min(steps.len() - 1)];
                s.step.eval(t)
            }
        }
    }

    /// Sample times: step nodes plus a uniform grid of spacing `h`.
    pub fn sample_times(&self, h: f64) -> Vec<f64> {
        let (t0, t1) = self.span();
        let mut ts: Vec<f64> = Vec::new();
        let n = ((t1 - t0) / h).ceil().max(1.0) as usize;
        for i in 0..=n {
            ts.push((t0 + (t1 - t0) * i as f64 / n as f64).min(t1));
        }
        if let Segment::Direct { steps, .. } = self {
            ts.extend(steps.iter().map(|s| s.step.t1()).filter(|&t| t > t0 && t < t1));
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMapOptions {
    /// Compute `d₁ = D(𝒫₁, P_s(𝒯₁))`.
    pub with_d1: bool,
    /// Compute `D(𝒫₁, P_u(𝒯₁))` and the bounds report.
    pub with_return: bool,
    /// Refuse `d` outside `J0`.
    pub strict: bool,
    /// `ν` for `J0`; `μ` for the bounds (default `μ0/2`).
    pub nu: f64,
    pub mu: Option<f64>,
    pub record: bool,
}

impl Default for LoopMapOptions {
    fn default() -> Self {
        LoopMapOptions {
            with_d1: true,
            with_return: true,
            strict: false,
            nu: 1.0,
            mu: None,
            record: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub mu: f64,
    pub in_regime: bool,
    /// `d^{σ+μ}` and `d^{σ−μ}` for the return offset.
    pub d_lo: f64,
    pub d_hi: f64,
    /// `[Σ∓μ]|ln d|` for the fly time.
    pub t_lo: f64,
    pub t_hi: f64,
    pub d_ok: bool,
    pub t_ok: bool,
    /// `‖𝒫½‖ ≤ d^{σ_half−μ}`.
    pub half_ok: bool,
    pub half_t_ok: bool,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct LoopMapResult {
    pub orientation: Orientation,
    pub ln_d: f64,
    /// Times in the original clock.
    pub tau: f64,
    pub t_half: f64,
    pub p_half: Vec2,
    pub t1: f64,
    pub p1: Vec2,
    /// `D(𝒫₁, P_s(𝒯₁))` (forward) or `D(𝒫₋₁, P_u(𝒯₋₁))` (backward).
    pub d1: Option<f64>,
    /// `D(𝒫₁, P_u(𝒯₁))` (forward) or `D(𝒫₋₁, P_s(𝒯₋₁))` (backward).
    pub d_return: Option<f64>,
    pub switch_time: f64,
    pub half_in_lin: bool,
    pub bounds: Option<BoundsReport>,
    /// Pieces in the side's clock.
    pub segments: Vec<Segment>,
}

impl LoopMapResult {
    pub fn d(&self) -> f64 {
        self.ln_d.exp()
    }
}

/// Leaf length needed to carry an offset `e^{ln_d}` up to `η`.
pub fn needed_horizon(side: &Side, ln_d: f64, eta: f64) -> f64 {
    let lu = side.report.lambda_u_plus.max(1e-3);
    ((eta.ln() - ln_d) / lu).max(0.0) + 20.0
}

/// Loop map on one side in that side's clock: launch at arc offset
/// `d = e^{ln_d}` inside `P_s(τ)` and follow one loop.
pub fn loop_map_side(
    ctx: &LoopContext,
    o: Orientation,
    ln_d: f64,
    tau_side: f64,
    leaf: Option<&LeafOrbit>,
    opts: &LoopMapOptions,
) -> Result<LoopMapResult, LeafError> {
    let side = ctx.side(o);
    let lo = &ctx.opts;
    let eps = ctx.eps;
    let d = ln_d.exp();
    if opts.strict {
        let j0 = ctx.j0_max(opts.nu);
        if !(d > 0.0 && d <= j0) {
            return Err(LeafError::OutOfRegime { d, j0 });
        }
    }
    let need = needed_horizon(side, ln_d, lo.eta);
    let own;
    let leaf = match leaf {
        Some(l) if l.t_far() - l.tau >= need => l,
        _ => {
            own = stable_leaf(side, tau_side, eps, need.max(lo.endpoint_horizon), lo)?;
            &own
        }
    };
    let mut segments = Vec::new();
    let (t_sw, x_sw) = if d >= lo.eta {
        let s_p = ctx.section.s_of(leaf.point)?;
        (tau_side, ctx.section.point_at(s_p - d)?)
    } else {
        let tan = ctx.section.tangent_at(leaf.point)?;
        let v0 = [-tan[0], -tan[1]];
        let mut rhs = |t: f64, v: &[f64; 2]| -> Result<[f64; 2], EvalError> {
            let j = side.sys.jacobian(Region::Plus, t, leaf.eval(t), eps)?;
            Ok([j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]])
        };
        let sopts = SmoothOptions {
            rel_tol: lo.rel_tol,
            abs_tol: 0.0,
            max_step: lo.max_step,
            max_steps: 2_000_000,
        };
        let t_end = leaf.t_far().min(tau_side + need + 50.0) - 1.0;
        // Hand over before the deviation is comparable to the leaf itself,
        // which keeps the perturbed point on the leaf's side of the section.
        let handoff = |t: f64, _v: [f64; 2]| lo.eta.min(lo.handoff_ratio * norm(leaf.eval(t)));
        let sol = integrate_smooth(&mut rhs, tau_side, v0, t_end, &sopts, &mut |s: &DenseStep<2>| {
            let v = s.eval(s.t1());
            d * norm(v) >= handoff(s.t1(), v)
        })
        .map_err(|e| LeafError::Invalid(format!("variational integration: {e}")))?;
        if d * norm(sol.y_end) < handoff(sol.t_end, sol.y_end) {
            return Err(LeafError::Invalid(format!(
                "leaf too short to carry d = {d:e} (reached {:e})",
                d * norm(sol.y_end)
            )));
        }
        let mut steps = sol.steps;
        let t_sw = leaf.node_at_or_after(sol.t_end);
        let mut v_sw = sol.y_end;
        if t_sw > sol.t_end {
            let tail = integrate_smooth(&mut rhs, sol.t_end, sol.y_end, t_sw, &sopts, &mut |_: &DenseStep<2>| false)
                .map_err(|e| LeafError::Invalid(format!("variational integration: {e}")))?;
            v_sw = tail.y_end;
            steps.extend(tail.steps);
        }
        let xs = leaf.eval(t_sw);
        let x = [xs[0] + d * v_sw[0], xs[1] + d * v_sw[1]];
        if opts.record {
            segments.push(Segment::Deviation {
                leaf: leaf.clone(),
                v: steps,
                d,
                t0: tau_side,
                t1: t_sw,
            });
        }
        (t_sw, x)
    };
    let r_in = 0.5 * norm(side.hom.gamma0);
    let lam = ctx.consts.lambda_lo.max(1e-3);
    let budget = (2.0 * ln_d.abs() + 60.0) / lam;
    let mut half: Option<(f64, Vec2)> = None;
    let mut ret: Option<(f64, Vec2)> = None;
    let mut bad: Option<String> = None;
    let end = run(&side.sys, eps, t_sw, x_sw, Some(Region::Plus), t_sw + budget, &lo.integrator(), opts.record, &mut |sig| {
        if let Signal::Event(ev) = sig {
            match (half, ev.from) {
                (None, Region::Plus) if norm(ev.point) < r_in => half = Some((ev.time, ev.point)),
                (Some(_), Region::Minus) => {
                    ret = Some((ev.time, ev.point));
                    return Control::Stop;
                }
                _ => {
                    bad = Some(format!("unexpected crossing at t={} x={:?}", ev.time, ev.point));
                    return Control::Stop;
                }
            }
        }
        Control::Continue
    })?;
    if let Some(b) = bad {
        return Err(LeafError::Escaped(b));
    }
    let (t_half, p_half) = half.ok_or_else(|| LeafError::NoCrossing(format!("no inner crossing by t={}", end.t)))?;
    let (t1, p1) = ret.ok_or_else(|| LeafError::NoCrossing(format!("no return to L0 by t={}", end.t)))?;
    let g0 = side.hom.gamma0;
    if norm([p1[0] - g0[0], p1[1] - g0[1]]) > 0.25 * norm(g0) {
        return Err(LeafError::Escaped(format!("return point {p1:?} far from γ(0)")));
    }
    if opts.record {
        segments.push(Segment::Direct {
            steps: end.traj.steps,
            t0: t_sw,
            t1,
        });
    }
    let s1 = ctx.section.s_of(p1)?;
    let d1 = if opts.with_d1 {
        let l = stable_leaf(side, t1, eps, lo.endpoint_horizon, lo)?;
        Some(ctx.section.s_of(l.point)? - s1)
    } else {
        None
    };
    let d_return = if opts.with_return {
        let other = ctx.side(o.other());
        let l = stable_leaf(other, -t1, eps, lo.endpoint_horizon, lo)?;
        Some(ctx.section.s_of(l.point)? - s1)
    } else {
        None
    };
    let delta = if eps > 0.0 { eps.sqrt() } else { 0.1 };
    let bounds = d_return.map(|dr| {
        let k = &ctx.consts;
        let (sigma, big, sigma_h, big_h) = match o {
            Orientation::Forward => (k.sigma_fwd, k.big_sigma_fwd, k.sigma_fwd_plus, k.big_sigma_fwd_plus),
            Orientation::Backward => (k.sigma_bwd, k.big_sigma_bwd, k.sigma_bwd_minus, k.big_sigma_bwd_minus),
        };
        let mu = opts.mu.unwrap_or(0.5 * k.mu0);
        let l = ln_d.abs();
        let d_lo = (ln_d * (sigma + mu)).exp();
        let d_hi = (ln_d * (sigma - mu)).exp();
        let t_lo = (big - mu) * l;
        let t_hi = (big + mu) * l;
        let fly = t1 - tau_side;
        let fly_h = t_half - tau_side;
        let d_ok = dr >= d_lo && dr <= d_hi;
        let t_ok = fly >= t_lo && fly <= t_hi;
        let half_ok = norm(p_half) <= (ln_d * (sigma_h - mu)).exp();
        let half_t_ok = fly_h >= (big_h - mu) * l && fly_h <= (big_h + mu) * l;
        BoundsReport {
            mu,
            in_regime: eps > 0.0 && d <= ctx.j0_max(opts.nu),
            d_lo,
            d_hi,
            t_lo,
            t_hi,
            d_ok,
            t_ok,
            half_ok,
            half_t_ok,
            pass: d_ok && t_ok && half_ok && half_t_ok,
        }
    });
    Ok(LoopMapResult {
        orientation: o,
        ln_d,
        tau: o.map_time(tau_side),
        t_half: o.map_time(t_half),
        p_half,
        t1: o.map_time(t1),
        p1,
        d1,
        d_return,
        switch_time: o.map_time(t_sw),
        half_in_lin: norm(p_half) < delta,
        bounds,
        segments,
    })
}

/// Loop map in the original clock (`τ`, `𝒯_{±1}` are original times).
pub fn loop_map(ctx: &LoopContext, d: f64, tau: f64, o: Orientation, opts: &LoopMapOptions) -> Result<LoopMapResult, LeafError> {
    if !(d > 0.0) {
        return Err(LeafError::Invalid(format!("d = {d} must be positive")));
    }
    loop_map_side(ctx, o, d.ln(), o.map_time(tau), None, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationSample {
    pub tau: f64,
    pub eps: f64,
    pub separation: f64,
    pub m_full: f64,
    pub m_simplified: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    pub mode: MelnikovMode,
    /// Least-squares `c` in `separation/ε ≈ c·M`.
    pub c: f64,
    pub correlation: f64,
    /// RMS of `separation/ε − c·M`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsFit {
    pub eps: f64,
    pub full: Option<ModeFit>,
    pub simplified: Option<ModeFit>,
    /// Sign changes of the sampled separation (linear interpolation).
    pub zeros: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationFit {
    pub per_eps: Vec<EpsFit>,
    pub best_mode: Option<MelnikovMode>,
    /// `max c / min c − 1` over `ε` for the best mode.
    pub c_spread: Option<f64>,
    pub degenerate: bool,
    pub samples: Vec<SeparationSample>,
}

fn fit_mode(mode: MelnikovMode, y: &[f64], m: &[f64]) -> Option<ModeFit> {
    let mm: f64 = m.iter().map(|v| v * v).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    if mm <= 1e-300 || yy <= 1e-300 {
        return None;
    }
    let ym: f64 = y.iter().zip(m).map(|(a, b)| a * b).sum();
    let c = ym / mm;
    let n = y.len() as f64;
    let (my, mmn) = (y.iter().sum::<f64>() / n, m.iter().sum::<f64>() / n);
    let cov: f64 = y.iter().zip(m).map(|(a, b)| (a - my) * (b - mmn)).sum();
    let vy: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    let vm: f64 = m.iter().map(|b| (b - mmn).powi(2)).sum();
    let correlation = cov / (vy * vm).sqrt();
    let residual = (y.iter().zip(m).map(|(a, b)| (a - c * b).powi(2)).sum::<f64>() / n).sqrt();
    Some(ModeFit {
        mode,
        c,
        correlation,
        residual,
    })
}

/// Sign changes of `v` sampled on `grid`, by linear interpolation.
pub fn sampled_zeros(grid: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..grid.len() {
        let (a, b) = (v[i - 1], v[i]);
        if a == 0.0 {
            out.push(grid[i - 1]);
        } else if a.signum() != b.signum() && b != 0.0 {
            out.push(grid[i - 1] + (grid[i] - grid[i - 1]) * a / (a - b));
        }
    }
    if v.last() == Some(&0.0) {
        out.push(*grid.last().unwrap());
    }
    out
}

/// Fit `D(P_s, P_u)(τ)/ε` against `M(τ)` in both modes for each `ε`.
pub fn separation_fit(
    sys: &PiecewiseSystem,
    hom: &HomoclinicReference,
    tau_grid: &[f64],
    eps_list: &[f64],
    opts: &LeafOptions,
) -> Result<SeparationFit, LeafError> {
    use rayon::prelude::*;
    let mf = Melnikov::new(sys, hom, MelnikovOptions::with_mode(MelnikovMode::FullTrace))?;
    let ms = Melnikov::new(sys, hom, MelnikovOptions::with_mode(MelnikovMode::SimplifiedTraceFree))?;
    let m_full: Vec<f64> = tau_grid.iter().map(|&t| mf.value(t).map(|v| v.value)).collect::<Result<_, _>>()?;
    let m_simp: Vec<f64> = tau_grid.iter().map(|&t| ms.value(t).map(|v| v.value)).collect::<Result<_, _>>()?;
    let mut per_eps = Vec::new();
    let mut samples = Vec::new();
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(LeafError::Invalid("fit requires positive eps".into()));
        }
        let ctx = LoopContext::new(sys, hom, eps, *opts)?;
        let seps: Vec<f64> = tau_grid
            .par_iter()
            .map(|&t| leaf_endpoints(&ctx, t, LeafMethod::Shooting).map(|e| e.separation))
            .collect::<Result<_, _>>()?;
        let y: Vec<f64> = seps.iter().map(|s| s / eps).collect();
        for (i, &t) in tau_grid.iter().enumerate() {
            samples.push(SeparationSample {
                tau: t,
                eps,
                separation: seps[i],
                m_full: m_full[i],
                m_simplified: m_simp[i],
            });
        }
        per_eps.push(EpsFit {
            eps,
            full: fit_mode(MelnikovMode::FullTrace, &y, &m_full),
            simplified: fit_mode(MelnikovMode::SimplifiedTraceFree, &y, &m_simp),
            zeros: sampled_zeros(tau_grid, &seps),
        });
    }
    let degenerate = per_eps.iter().any(|e| e.full.is_none() || e.simplified.is_none());
    let best_mode = if degenerate {
        None
    } else {
        // Higher mean correlation wins; on a tie the mode whose scale factor
        // is closer to one predicts the splitting directly.
        let score = |sel: &dyn Fn(&EpsFit) -> &ModeFit| {
            let n = per_eps.len() as f64;
            let corr = per_eps.iter().map(|e| sel(e).correlation).sum::<f64>() / n;
            let scale = per_eps.iter().map(|e| sel(e).c.abs().ln().abs()).sum::<f64>() / n;
            (corr, scale)
        };
        let (cf, sf) = score(&|e| e.full.as_ref().unwrap());
        let (cs, ss) = score(&|e| e.simplified.as_ref().unwrap());
        Some(if (cf - cs).abs() > 1e-4 {
            if cf > cs {
                MelnikovMode::FullTrace
            } else {
                MelnikovMode::SimplifiedTraceFree
            }
        } else if sf <= ss {
            MelnikovMode::FullTrace
        } else {
            MelnikovMode::SimplifiedTraceFree
        })
    };
    let c_spread = best_mode.map(|m| {
        let cs: Vec<f64> = per_eps
            .iter()
            .map(|e| match m {
                MelnikovMode::FullTrace => e.full.as_ref().unwrap().c,
                MelnikovMode::SimplifiedTraceFree => e.simplified.as_ref().unwrap().c,
            })
            .collect();
        let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo - 1.0
    });
    Ok(SeparationFit {
        per_eps,
        best_mode,
        c_spread,
        degenerate,
        samples,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melnikov::c1;
    use crate::system::{builtin_example, Params};

    fn ex1() -> (PiecewiseSystem, HomoclinicReference) {
        let (s, h) = builtin_example("ex1", &Params::new()).unwrap();
        (s, h.unwrap())
    }

    #[test]
    fn section_coordinates_on_ex1() {
        let (s, h) = ex1();
        let sc = SectionCoordinates::new(&s, h.gamma0, 0.03).unwrap();
        assert!((sc.ell0 - 1.0).abs() < 1e-9);
        assert!(sc.ell([1.0, 0.0]).unwrap() > 0.0);
        assert!((sc.s_of([1.02, 0.0]).unwrap() - 0.02).abs() < 1e-15);
        let p = sc.point_at(-0.01).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-15 && p[1] == 0.0);
        let (a, b) = ([0.98, 0.0], [1.01, 0.0]);
        let dab = sc.directed_distance(a, b).unwrap();
        assert!((dab + sc.directed_distance(b, a).unwrap()).abs() < 1e-16);
        assert!(dab > 0.0);
    }

    #[test]
    fn curved_section_arc_length() {
        // Ω⁰ = {y = x² − 1... shifted}: G = x^2 - 1 - y passes through (1, 0).
        let src = "[system]\nf_plus_x = \"y - x^2\"\nf_plus_y = \"x - 2*x^2\"\nf_minus_x = \"y + x^2\"\nf_minus_y = \"x - 2*x^2\"\nG = \"x^2 - x - y\"\n[perturbation]\ng_x = \"0\"\ng_y = \"0\"\n";
        let s = crate::system::parse_system(src).unwrap();
        let sc = SectionCoordinates::new(&s, [1.0, 0.0], 0.05).unwrap();
        // Arc length of y = x² − x from x=1 to 1.05.
        let exact = |x: f64| {
            let u = 2.0 * x - 1.0;
            0.25 * (u * u.hypot(1.0) + u.asinh())
        };
        let p = [1.05, 1.05f64 * 1.05 - 1.05];
        let want = exact(1.05) - exact(1.0);
        assert!((sc.s_of(p).unwrap() - want).abs() < 1e-10);
        let q = sc.point_at(want).unwrap();
        assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        // ℓ(γ(0)) equals the arc of the parabola from 0 to 1.
        assert!((sc.ell0 - (exact(1.0) - exact(0.0))).abs() < 1e-5, "{}", sc.ell0);
    }

    #[test]
    fn unperturbed_leaves_coincide() {
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 0.0, LeafOptions::default()).unwrap();
        for tau in [0.0, 0.3, -2.0] {
            let e = leaf_endpoints(&ctx, tau, LeafMethod::Both).unwrap();
            assert_eq!(e.ps, [1.0, 0.0]);
            assert_eq!(e.pu, [1.0, 0.0]);
            assert_eq!(e.separation, 0.0);
        }
    }

    #[test]
    fn shooting_and_bisection_agree() {
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 1e-3, LeafOptions::default()).unwrap();
        let e = leaf_endpoints(&ctx, 0.25, LeafMethod::Both).unwrap();
        assert_eq!(e.diagnostics.consistent, Some(true), "{:?}", e.diagnostics);
        assert!(e.diagnostics.bisection_width.unwrap() <= 1e-6);
        // Leaves stay on their sides of the section.
        assert!(s.switching(e.ps).unwrap().abs() < 1e-12);
        // First-order splitting at the extremum of M.
        assert!(e.separation > 0.5 * 1e-3 * c1() * 0.5, "{}", e.separation);
    }

    #[test]
    fn stable_leaf_reaches_origin_in_time() {
        let (s, h) = ex1();
        let eps = 1e-3;
        let ctx = LoopContext::new(&s, &h, eps, LeafOptions::default()).unwrap();
        let leaf = stable_leaf(&ctx.fwd, 0.1, eps, 40.0, &ctx.opts).unwrap();
        let tb = ctx.t_b();
        let t = leaf.entry_time(eps, 2.0 * tb).unwrap();
        assert!(t - 0.1 <= 1.5 * tb, "{t} vs {tb}");
        // Leaf stays in Ω⁺ ∪ Ω⁰ and close to γ⁺.
        for i in 1..400 {
            let tt = 0.1 + 0.1 * i as f64;
            let x = leaf.eval(tt);
            assert!(s.switching(x).unwrap() >= -1e-14);
            let g = h.eval(tt - 0.1);
            assert!(norm([x[0] - g[0], x[1] - g[1]]) < 5.0 * eps);
        }
    }

    #[test]
    fn reversal_symmetry_of_separation() {
        // ex1 is reversible under (x, y, t) ↦ (x, −y, −t), so D(P_s,P_u) is odd.
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 1e-3, LeafOptions::default()).unwrap();
        let a = leaf_endpoints(&ctx, 0.2, LeafMethod::Shooting).unwrap().separation;
        let b = leaf_endpoints(&ctx, -0.2, LeafMethod::Shooting).unwrap().separation;
        assert!((a + b).abs() < 1e-12 * (1.0 + a.abs()) + 1e-14, "{a} {b}");
    }

    #[test]
    fn fly_time_and_displacement_scaling() {
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 0.0, LeafOptions::default()).unwrap();
        let ds = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        let mut ld = Vec::new();
        for &d in &ds {
            let r = loop_map(&ctx, d, 0.3, Orientation::Forward, &LoopMapOptions::default()).unwrap();
            assert!(r.tau < r.t_half && r.t_half < r.t1);
            lx.push(d.ln().abs());
            ly.push(r.t1 - r.tau);
            ld.push(r.d_return.unwrap().ln() / d.ln());
            assert!(r.d_return.unwrap() > 0.0);
        }
        let slope = regression_slope(&lx, &ly);
        assert!((slope - ctx.consts.big_sigma_fwd).abs() < 0.1, "{slope}");
        assert!((ld.last().unwrap() - ctx.consts.sigma_fwd).abs() < 0.1, "{ld:?}");
    }

    #[test]
    fn deviation_method_matches_direct_integration() {
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 1e-3, LeafOptions::default()).unwrap();
        let o = LoopMapOptions {
            with_return: false,
            ..Default::default()
        };
        // Reference: direct integration at tight tolerance.
        let mut tight = ctx.clone();
        tight.opts.eta = 1e-8;
        tight.opts.rel_tol = 1e-14;
        let a = loop_map(&tight, 1e-7, 0.1, Orientation::Forward, &o).unwrap();
        let b = loop_map(&ctx, 1e-7, 0.1, Orientation::Forward, &o).unwrap();
        assert!(a.switch_time == 0.1 && b.switch_time > 1.0);
        assert!((a.t1 - b.t1).abs() < 1e-6, "{} {}", a.t1, b.t1);
        let (da, db) = (a.d1.unwrap(), b.d1.unwrap());
        assert!((da - db).abs() < 1e-5 * da.abs(), "{da:e} {db:e}");
    }

    #[test]
    fn tiny_offsets_follow_log_law() {
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 1e-3, LeafOptions::default()).unwrap();
        let o = LoopMapOptions {
            with_return: false,
            with_d1: false,
            ..Default::default()
        };
        let side = &ctx.fwd;
        let leaf = stable_leaf(side, 0.0, ctx.eps, needed_horizon(side, -90.0, ctx.opts.eta), &ctx.opts).unwrap();
        let a = loop_map_side(&ctx, Orientation::Forward, -60.0, 0.0, Some(&leaf), &o).unwrap();
        let b = loop_map_side(&ctx, Orientation::Forward, -90.0, 0.0, Some(&leaf), &o).unwrap();
        let slope = (b.t1 - a.t1) / 30.0;
        assert!((slope - 1.0).abs() < 0.05, "{slope}");
        assert!(norm(b.p_half) < 1e-15);
    }

    #[test]
    fn key_sign_law_on_returns() {
        // M(𝒯₁) ≤ −3c₁ ⇒ d₁ > 0 and M(𝒯₁) ≥ 3c₁ ⇒ d₁ < 0.
        let (s, h) = ex1();
        let eps = 1e-3;
        let ctx = LoopContext::new(&s, &h, eps, LeafOptions::default()).unwrap();
        let o = LoopMapOptions {
            with_return: false,
            ..Default::default()
        };
        let m = |t: f64| c1() * (2.0 * std::f64::consts::PI * t).sin();
        let mut seen = (false, false);
        for k in 0..12 {
            let ln_d = -14.0 - 0.09 * k as f64;
            let r = loop_map_side(&ctx, Orientation::Forward, ln_d, 0.0, None, &o).unwrap();
            let mv = m(r.t1);
            let d1 = r.d1.unwrap();
            if mv <= -0.3 * c1() {
                assert!(d1 > 0.0, "M={mv} d1={d1}");
                seen.0 = true;
            } else if mv >= 0.3 * c1() {
                assert!(d1 < 0.0, "M={mv} d1={d1}");
                seen.1 = true;
            }
        }
        assert!(seen.0 && seen.1);
    }

    #[test]
    fn backward_loop_map_mirrors_forward() {
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 0.0, LeafOptions::default()).unwrap();
        let f = loop_map(&ctx, 1e-6, 0.0, Orientation::Forward, &LoopMapOptions::default()).unwrap();
        let b = loop_map(&ctx, 1e-6, 0.0, Orientation::Backward, &LoopMapOptions::default()).unwrap();
        assert!((f.t1 + b.t1).abs() < 1e-8, "{} {}", f.t1, b.t1);
        assert!(b.t1 < b.t_half && b.t_half < b.tau);
        assert!((f.p1[0] - b.p1[0]).abs() < 1e-10);
    }

    #[test]
    fn strict_mode_rejects_out_of_regime() {
        let (s, h) = ex1();
        let ctx = LoopContext::new(&s, &h, 1e-3, LeafOptions::default()).unwrap();
        let o = LoopMapOptions {
            strict: true,
            ..Default::default()
        };
        assert!(matches!(
            loop_map(&ctx, 1e-6, 0.0, Orientation::Forward, &o),
            Err(LeafError::OutOfRegime { .. })
        ));
    }

    #[test]
    fn zero_perturbation_fit_is_degenerate() {
        let (s, h) = ex1();
        let z = s.with_perturbation("ex1-0", [crate::expr::Expr::num(0.0), crate::expr::Expr::num(0.0)]);
        let grid: Vec<f64> = (0..5).map(|i| i as f64 * 0.2).collect();
        let f = separation_fit(&z, &h, &grid, &[1e-3], &LeafOptions::default()).unwrap();
        assert!(f.degenerate);
        assert!(f.best_mode.is_none());
        assert!(f.samples.iter().all(|s| s.separation == 0.0));
    }

    #[test]
    fn regression_slope_exact() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        assert!((regression_slope(&x, &y) - 2.5).abs() < 1e-14);
        assert_eq!(sampled_zeros(&[0.0, 1.0, 2.0], &[-1.0, 1.0, 3.0]), vec![0.5]);
    }
}
