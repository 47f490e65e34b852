//! Event-located integration of the piecewise system.
//!
//! Each region uses its own smooth field; sign changes of `G` along the dense
//! output are bracketed and refined with Brent's method applied to the exact
//! Runge–Kutta step map, so the reported state on the switching curve has the
//! accuracy of a regular step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::rk::{self, DenseStep};
use crate::system::{PiecewiseSystem, Region, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub tol_event: f64,
    pub tol_trans: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            tol_event: 1e-12,
            tol_trans: 1e-8,
            max_step: 0.1,
            max_steps: 5_000_000,
        }
    }
}

impl IntegratorOptions {
    /// Purely relative error control, used for orbits that pass extremely
    /// close to the equilibrium.
    pub fn relative(rel_tol: f64) -> Self {
        IntegratorOptions {
            rel_tol,
            abs_tol: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Crossing,
    SlidingOnset,
    Tangency,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub time: f64,
    pub point: Vec2,
    pub from: Region,
    pub to: Region,
    /// `∇G·F⁺` at the point (perturbation included).
    pub trans_plus: f64,
    /// `∇G·F⁻` at the point.
    pub trans_minus: f64,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec2,
    pub region: Region,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub steps: usize,
    pub rejected: usize,
    pub max_error_ratio: f64,
}

/// Accepted step of the piecewise integration (single region).
#[derive(Clone, Debug)]
pub struct PwStep {
    pub region: Region,
    pub step: DenseStep<2>,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<CrossingEvent>,
    pub stats: IntegrationStats,
    pub steps: Vec<PwStep>,
}

impl Trajectory {
    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.t)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    pub fn end(&self) -> Option<Sample> {
        self.samples.last().copied()
    }

    /// Dense evaluation at `t` (inside the integrated span).
    pub fn state_at(&self, t: f64) -> Option<Vec2> {
        if self.steps.is_empty() {
            return None;
        }
        let forward = self.steps[0].step.h >= 0.0;
        let idx = self.steps.partition_point(|s| {
            if forward {
                s.step.t1() < t
            } else {
                s.step.t1() > t
            }
        });
        self.steps
            .get(idx)
            .filter(|s| s.step.contains(t))
            .map(|s| s.step.eval(t))
    }

    /// Append another trajectory that starts where this one ends.
    pub fn extend(&mut self, other: Trajectory) {
        let skip = usize::from(!self.samples.is_empty() && !other.samples.is_empty());
        self.samples.extend(other.samples.into_iter().skip(skip));
        self.events.extend(other.events);
        self.steps.extend(other.steps);
        self.stats.steps += other.stats.steps;
        self.stats.rejected += other.stats.rejected;
        self.stats.max_error_ratio = self.stats.max_error_ratio.max(other.stats.max_error_ratio);
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum IntegrateError {
    #[error("sliding detected at t={} on the switching curve", .0.time)]
    SlidingDetected(CrossingEvent),
    #[error("tangential contact at t={}", .0.time)]
    Tangency(CrossingEvent),
    #[error("left the domain at t={t} (x={x:?})")]
    DomainExit { t: f64, x: Vec2 },
    #[error("step size underflow at t={0}")]
    StepUnderflow(f64),
    #[error("step budget exhausted at t={0}")]
    TooManySteps(f64),
    #[error("no qualifying crossing within the time budget (reached t={0})")]
    NoCrossing(f64),
    #[error("field evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Signal passed to observers.
pub enum Signal<'a> {
    Step(&'a PwStep),
    Event(&'a CrossingEvent),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Outcome of a run.
#[derive(Clone, Debug)]
pub struct RunEnd {
    pub t: f64,
    pub x: Vec2,
    pub region: Region,
    pub stopped: bool,
    pub traj: Trajectory,
}

/// Classify the contact at a point of the switching curve.
pub fn classify_contact(
    sys: &PiecewiseSystem,
    t: f64,
    x: Vec2,
    eps: f64,
    from: Region,
    tol_trans: f64,
) -> Result<CrossingEvent, EvalError> {
    let gp = sys.field(Region::Plus, t, x, eps)?;
    let gm = sys.field(Region::Minus, t, x, eps)?;
    let grad = sys.grad_switching(x)?;
    let a = grad[0] * gp[0] + grad[1] * gp[1];
    let b = grad[0] * gm[0] + grad[1] * gm[1];
    let gn = grad[0].hypot(grad[1]);
    let an = a / (gn * gp[0].hypot(gp[1])).max(f64::MIN_POSITIVE);
    let bn = b / (gn * gm[0].hypot(gm[1])).max(f64::MIN_POSITIVE);
    // Leaving `from` requires G to move away from from's sign.
    let expected = -from.sign();
    let kind = if an.abs() <= tol_trans || bn.abs() <= tol_trans {
        EventKind::Tangency
    } else if a.signum() == b.signum() {
        if a.signum() == expected {
            EventKind::Crossing
        } else {
            EventKind::Tangency
        }
    } else {
        EventKind::SlidingOnset
    };
    Ok(CrossingEvent {
        time: t,
        point: x,
        from,
        to: from.other(),
        trans_plus: a,
        trans_minus: b,
        kind,
    })
}

/// Region an orbit enters when starting at `x`; for points on the switching
/// curve the departure direction decides.
pub fn starting_region(
    sys: &PiecewiseSystem,
    t: f64,
    x: Vec2,
    eps: f64,
    dir: Direction,
    opts: &IntegratorOptions,
) -> Result<Region, IntegrateError> {
    let g = sys.switching(x)?;
    let scale = x[0].abs().max(x[1].abs());
    if g.abs() > opts.tol_event * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
        return Ok(if g >= 0.0 { Region::Plus } else { Region::Minus });
    }
    let gp = sys.field(Region::Plus, t, x, eps)?;
    let gm = sys.field(Region::Minus, t, x, eps)?;
    let grad = sys.grad_switching(x)?;
    let a = (grad[0] * gp[0] + grad[1] * gp[1]) * dir.sign();
    let b = (grad[0] * gm[0] + grad[1] * gm[1]) * dir.sign();
    if a > 0.0 && b > 0.0 {
        Ok(Region::Plus)
    } else if a < 0.0 && b < 0.0 {
        Ok(Region::Minus)
    } else {
        let ev = classify_contact(sys, t, x, eps, Region::Plus, opts.tol_trans)?;
        if ev.kind == EventKind::SlidingOnset {
            Err(IntegrateError::SlidingDetected(ev))
        } else {
            Err(IntegrateError::Tangency(ev))
        }
    }
}

fn brent(mut f: impl FnMut(f64) -> Result<f64, EvalError>, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, xtol: f64) -> Result<(f64, f64), EvalError> {
    // Classical Brent with bracket [a, b], fa*fb <= 0. Returns (root, f(root)).
    if fa == 0.0 {
        return Ok((a, fa));
    }
    if fb == 0.0 {
        return Ok((b, fb));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok((b, fb));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b)?;
    }
    Ok((b, fb))
}

/// Root of a scalar function on a sign-changing bracket (Brent).
pub fn brent_root(
    f: impl FnMut(f64) -> Result<f64, EvalError>,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol: f64,
) -> Result<(f64, f64), EvalError> {
    brent(f, a, b, fa, fb, xtol)
}

/// Core driver: integrate from `(t0, x0)` towards `t_end`, switching regions
/// at transversal crossings. The observer may stop the run after any step or
/// event.
#[allow(clippy::too_many_arguments)]
pub fn run(
    sys: &PiecewiseSystem,
    eps: f64,
    t0: f64,
    x0: Vec2,
    region0: Option<Region>,
    t_end: f64,
    opts: &IntegratorOptions,
    record: bool,
    observer: &mut dyn FnMut(Signal<'_>) -> Control,
) -> Result<RunEnd, IntegrateError> {
    let dir = if t_end >= t0 {
        Direction::Forward
    } else {
        Direction::Backward
    };
    let ds = dir.sign();
    let mut region = match region0 {
        Some(r) => r,
        None => starting_region(sys, t0, x0, eps, dir, opts)?,
    };
    let mut t = t0;
    let mut x = x0;
    let mut traj = Trajectory::default();
    if record {
        traj.samples.push(Sample { t, x, region });
    }
    if t_end == t0 {
        return Ok(RunEnd { t, x, region, stopped: false, traj });
    }
    let mut k1 = sys.field(region, t, x, eps)?;
    let mut h = rk::initial_step(&x, &k1, opts.max_step, opts.abs_tol);
    // Armed once G has the region's sign inside the current step sequence.
    let mut armed = region.sign() * sys.switching(x)? > 0.0;
    let mut n = 0usize;
    while (t_end - t) * ds > 0.0 {
        n += 1;
        if n > opts.max_steps {
            return Err(IntegrateError::TooManySteps(t));
        }
        let hh = h.min(opts.max_step).min((t_end - t).abs()) * ds;
        let mut rhs = |tt: f64, y: &Vec2| sys.field(region, tt, *y, eps);
        let s = rk::step(&mut rhs, t, &x, &k1, hh)?;
        let ratio = rk::error_ratio(&s.err, &x, &s.y1, opts.rel_tol, opts.abs_tol);
        if ratio > 1.0 {
            traj.stats.rejected += 1;
            h = hh.abs() * rk::step_factor(ratio).min(1.0);
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(IntegrateError::StepUnderflow(t));
            }
            continue;
        }
        traj.stats.steps += 1;
        traj.stats.max_error_ratio = traj.stats.max_error_ratio.max(ratio);

        // Scan for a sign violation of G along the step.
        let sg = region.sign();
        let thetas = [0.25, 0.5, 0.75, 1.0];
        let mut prev = (0.0, if armed { sg * sys.switching(x)? } else { f64::NAN });
        let mut bracket = None;
        for &th in &thetas {
            let p = if th == 1.0 { s.y1 } else { rk::dense(&s.rc, th) };
            let v = sg * sys.switching(p)?;
            if armed && v <= 0.0 && prev.1 > 0.0 {
                bracket = Some((prev.0, th, prev.1, v));
                break;
            }
            if v > 0.0 {
                armed = true;
            }
            prev = (th, v);
        }

        if let Some((ta, tb, fa, fb)) = bracket {
            let mut phi = |th: f64| -> Result<f64, EvalError> {
                if th == 0.0 {
                    return Ok(sg * sys.switching(x)?);
                }
                let mut rhs = |tt: f64, y: &Vec2| sys.field(region, tt, *y, eps);
                let st = rk::step(&mut rhs, t, &x, &k1, th * hh)?;
                Ok(sg * sys.switching(st.y1)?)
            };
            let fa_exact = phi(ta)?;
            let fb_exact = phi(tb)?;
            let (lo, hi, flo, fhi) = if fa_exact > 0.0 && fb_exact <= 0.0 {
                (ta, tb, fa_exact, fb_exact)
            } else {
                (ta, tb, fa, fb)
            };
            let xtol = 4.0 * f64::EPSILON * t.abs().max(1.0) / hh.abs();
            let (th, _) = brent(&mut phi, lo, hi, flo, fhi, xtol)?;
            let he = th * hh;
            let st = {
                let mut rhs = |tt: f64, y: &Vec2| sys.field(region, tt, *y, eps);
                rk::step(&mut rhs, t, &x, &k1, he)?
            };
            let te = t + he;
            let xe = st.y1;
            let pw = PwStep {
                region,
                step: DenseStep {
                    t0: t,
                    h: he,
                    rc: st.rc,
                },
            };
            let from = if dir == Direction::Forward {
                region
            } else {
                region.other()
            };
            let mut ev = classify_contact(sys, te, xe, eps, from, opts.tol_trans)?;
            if dir == Direction::Backward {
                // Report in forward-time orientation; `from` is the region on
                // the earlier side.
                ev.from = region.other();
                ev.to = region;
                let forward_kind = classify_contact(sys, te, xe, eps, region.other(), opts.tol_trans)?;
                ev.kind = forward_kind.kind;
            }
            if ev.kind == EventKind::SlidingOnset {
                return Err(IntegrateError::SlidingDetected(ev));
            }
            if ev.kind == EventKind::Tangency {
                return Err(IntegrateError::Tangency(ev));
            }
            t = te;
            x = xe;
            region = region.other();
            if record {
                traj.steps.push(pw.clone());
                traj.samples.push(Sample { t, x, region });
                traj.events.push(ev);
            }
            if observer(Signal::Step(&pw)) == Control::Stop {
                return Ok(RunEnd { t, x, region, stopped: true, traj });
            }
            if observer(Signal::Event(&ev)) == Control::Stop {
                return Ok(RunEnd { t, x, region, stopped: true, traj });
            }
            k1 = sys.field(region, t, x, eps)?;
            armed = false;
            h = he.abs().max(1e-6 * opts.max_step);
            continue;
        }

        let pw = PwStep {
            region,
            step: DenseStep {
                t0: t,
                h: hh,
                rc: s.rc,
            },
        };
        t = if (t_end - (t + hh)) * ds <= 0.0 { t_end } else { t + hh };
        x = s.y1;
        k1 = s.k7;
        h = hh.abs() * rk::step_factor(ratio);
        if !sys.domain.contains(x) {
            return Err(IntegrateError::DomainExit { t, x });
        }
        if record {
            traj.samples.push(Sample { t, x, region });
            traj.steps.push(pw.clone());
        }
        if observer(Signal::Step(&pw)) == Control::Stop {
            return Ok(RunEnd { t, x, region, stopped: true, traj });
        }
    }
    Ok(RunEnd { t, x, region, stopped: false, traj })
}

/// Integrate from `t0` to `t1` recording samples and events.
pub fn integrate(
    sys: &PiecewiseSystem,
    t0: f64,
    x0: Vec2,
    t1: f64,
    eps: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory, IntegrateError> {
    if !sys.domain.contains(x0) {
        return Err(IntegrateError::DomainExit { t: t0, x: x0 });
    }
    Ok(run(sys, eps, t0, x0, None, t1, opts, true, &mut |_| Control::Continue)?.traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Section {
    /// Any transversal crossing of the switching curve.
    OmegaZero,
    /// Crossing within distance `delta` of the origin.
    NearOriginSegment { delta: f64 },
}

/// Default half-width of the near-origin segment.
pub fn default_delta(eps: f64) -> f64 {
    if eps > 0.0 {
        eps.sqrt()
    } else {
        0.1
    }
}

/// Default time budget `50/λ̲ · |ln ε|`.
pub fn default_budget(lambda_lo: f64, eps: f64) -> f64 {
    let l = if eps > 0.0 { eps.ln().abs() } else { f64::EPSILON.ln().abs() };
    50.0 / lambda_lo * l.max(1.0)
}

/// Flow until the first qualifying crossing of `section`.
#[allow(clippy::too_many_arguments)]
pub fn flow_to_section(
    sys: &PiecewiseSystem,
    t0: f64,
    x0: Vec2,
    eps: f64,
    dir: Direction,
    section: Section,
    budget: f64,
    opts: &IntegratorOptions,
) -> Result<(CrossingEvent, Trajectory), IntegrateError> {
    let mut hit: Option<CrossingEvent> = None;
    let t_end = t0 + dir.sign() * budget;
    let end = run(sys, eps, t0, x0, None, t_end, opts, true, &mut |sig| match sig {
        Signal::Event(ev) => {
            let ok = match section {
                Section::OmegaZero => true,
                Section::NearOriginSegment { delta } => ev.point[0].hypot(ev.point[1]) < delta,
            };
            if ok {
                hit = Some(*ev);
                Control::Stop
            } else {
                Control::Continue
            }
        }
        Signal::Step(_) => Control::Continue,
    })?;
    match hit {
        Some(ev) => Ok((ev, end.traj)),
        None => Err(IntegrateError::NoCrossing(end.t)),
    }
}
