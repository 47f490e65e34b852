//! Melnikov function `M(α)` and its derivative by truncated adaptive
//! quadrature along the homoclinic orbit.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::quadrature::{gk15, integrate_points, QuadOptions};
use crate::system::{HomoclinicReference, PiecewiseSystem, Region, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MelnikovMode {
    /// Integrand weighted by `exp(-∫₀ᵗ tr f_x(γ(s)) ds)`.
    FullTrace,
    /// Weight omitted.
    SimplifiedTraceFree,
}

impl std::str::FromStr for MelnikovMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "fulltrace" | "full-trace" => Ok(MelnikovMode::FullTrace),
            "simplified" | "tracefree" | "trace-free" | "simplifiedtracefree" => {
                Ok(MelnikovMode::SimplifiedTraceFree)
            }
            _ => Err(format!("unknown Melnikov mode `{s}` (expected `full` or `simplified`)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelnikovOptions {
    pub mode: MelnikovMode,
    /// Truncation `|t| ≤ t_cut`; `None` means `40/λ̲`.
    pub t_cut: Option<f64>,
    /// Slowest rate at the origin, used for the default truncation and the
    /// tail estimate.
    pub lambda_lo: f64,
    pub tol: f64,
}

impl Default for MelnikovOptions {
    fn default() -> Self {
        MelnikovOptions {
            mode: MelnikovMode::FullTrace,
            t_cut: None,
            lambda_lo: 1.0,
            tol: 1e-10,
        }
    }
}

impl MelnikovOptions {
    pub fn with_mode(mode: MelnikovMode) -> Self {
        MelnikovOptions {
            mode,
            ..Default::default()
        }
    }

    pub fn cut(&self) -> f64 {
        self.t_cut.unwrap_or(40.0 / self.lambda_lo)
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum MelnikovError {
    #[error("loop does not cross the switching curve transversally (∇G·f⁺ = {plus}, ∇G·f⁻ = {minus})")]
    Transversality { plus: f64, minus: f64 },
    #[error("error estimate {error:e} (truncation {truncation:e}) exceeds tolerance {tol:e}; raise the truncation time")]
    Truncation { error: f64, truncation: f64, tol: f64 },
    #[error("quadrature did not converge (estimate {0:e})")]
    Quadrature(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Memoized `∫₀ᵗ tr f_x(γ(s)) ds` on a uniform grid.
#[derive(Clone, Debug)]
struct TraceWeight {
    h: f64,
    /// `plus[k] = ∫₀^{kh} tr f_x⁺`, `minus[k] = ∫₀^{-kh} tr f_x⁻`.
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl TraceWeight {
    fn build(sys: &PiecewiseSystem, hom: &HomoclinicReference, t_cut: f64) -> Result<TraceWeight, EvalError> {
        let h = 0.05;
        let n = (t_cut / h).ceil() as usize + 2;
        let mut plus = vec![0.0; n + 1];
        let mut minus = vec![0.0; n + 1];
        let mut tr_p = |s: f64| sys.trace_f(Region::Plus, hom.eval(s));
        let mut tr_m = |s: f64| sys.trace_f(Region::Minus, hom.eval(s));
        for k in 0..n {
            let a = k as f64 * h;
            plus[k + 1] = plus[k] + gk15(&mut tr_p, a, a + h)?.0;
            minus[k + 1] = minus[k] + gk15(&mut tr_m, -a, -a - h)?.0;
        }
        Ok(TraceWeight { h, plus, minus })
    }

    fn integral(&self, sys: &PiecewiseSystem, hom: &HomoclinicReference, t: f64) -> Result<f64, EvalError> {
        let (table, region, sgn) = if t >= 0.0 {
            (&self.plus, Region::Plus, 1.0)
        } else {
            (&self.minus, Region::Minus, -1.0)
        };
        let k = ((t.abs() / self.h).floor() as usize).min(table.len() - 1);
        let a = sgn * k as f64 * self.h;
        if a == t {
            return Ok(table[k]);
        }
        let mut tr = |s: f64| sys.trace_f(region, hom.eval(s));
        Ok(table[k] + gk15(&mut tr, a, t)?.0)
    }
}

fn wedge(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Reusable evaluator for `M` and `M′` on one system.
#[derive(Clone, Debug)]
pub struct Melnikov<'a> {
    sys: &'a PiecewiseSystem,
    hom: &'a HomoclinicReference,
    pub opts: MelnikovOptions,
    pub c_plus: f64,
    pub c_minus: f64,
    trace: Option<TraceWeight>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelnikovValue {
    pub value: f64,
    /// Quadrature plus truncation estimate.
    pub error: f64,
    pub truncation: f64,
}

#[derive(Clone, Copy)]
enum Kernel {
    G,
    Gt,
}

impl<'a> Melnikov<'a> {
    pub fn new(
        sys: &'a PiecewiseSystem,
        hom: &'a HomoclinicReference,
        opts: MelnikovOptions,
    ) -> Result<Melnikov<'a>, MelnikovError> {
        let p = hom.gamma0;
        let grad = sys.grad_switching(p)?;
        let gn = grad[0].hypot(grad[1]);
        let fp = sys.f(Region::Plus, p)?;
        let fm = sys.f(Region::Minus, p)?;
        let kp = grad[0] * fp[0] + grad[1] * fp[1];
        let km = grad[0] * fm[0] + grad[1] * fm[1];
        if !(kp > 0.0 && km > 0.0) {
            return Err(MelnikovError::Transversality { plus: kp, minus: km });
        }
        let trace = match opts.mode {
            MelnikovMode::FullTrace => Some(TraceWeight::build(sys, hom, opts.cut())?),
            MelnikovMode::SimplifiedTraceFree => None,
        };
        Ok(Melnikov {
            sys,
            hom,
            opts,
            c_plus: gn / kp,
            c_minus: gn / km,
            trace,
        })
    }

    fn weight(&self, t: f64) -> Result<f64, EvalError> {
        match &self.trace {
            None => Ok(1.0),
            Some(tw) => Ok((-tw.integral(self.sys, self.hom, t)?).exp()),
        }
    }

    fn g_kernel(&self, kernel: Kernel, t: f64, x: Vec2) -> Result<Vec2, EvalError> {
        match kernel {
            Kernel::G => self.sys.g(t, x, 0.0),
            Kernel::Gt => match self.sys.g_t(t, x, 0.0) {
                Ok(v) => Ok(v),
                Err(_) => self.sys.g_t_fd(t, x, 0.0, 1e-6 * t.abs().max(1.0)),
            },
        }
    }

    fn integrand(&self, kernel: Kernel, alpha: f64, t: f64) -> Result<f64, EvalError> {
        let region = if t > 0.0 { Region::Plus } else { Region::Minus };
        let c = if t > 0.0 { self.c_plus } else { self.c_minus };
        let p = self.hom.eval(t);
        let f = self.sys.f(region, p)?;
        let g = self.g_kernel(kernel, t + alpha, p)?;
        Ok(c * self.weight(t)? * wedge(f, g))
    }

    fn tail(&self, kernel: Kernel, alpha: f64, t: f64) -> Result<f64, EvalError> {
        let region = if t > 0.0 { Region::Plus } else { Region::Minus };
        let c = if t > 0.0 { self.c_plus } else { self.c_minus };
        let p = self.hom.eval(t);
        let f = self.sys.f(region, p)?;
        let mut gmax: f64 = 0.0;
        for k in 0..16 {
            let s = t + t.signum() * 0.125 * k as f64;
            let g = self.g_kernel(kernel, s + alpha, self.hom.eval(s))?;
            gmax = gmax.max(g[0].hypot(g[1]));
        }
        Ok(2.0 * c * self.weight(t)?.abs() * f[0].hypot(f[1]) * gmax / self.opts.lambda_lo)
    }

    fn compute(&self, kernel: Kernel, alpha: f64) -> Result<MelnikovValue, MelnikovError> {
        let cut = self.opts.cut();
        let mut pts = vec![-cut];
        let mut k = -cut.floor() as i64 + 1;
        // Unit panels keep the decaying integrand well resolved from the start.
        while (k as f64) < cut {
            pts.push(k as f64);
            k += 1;
        }
        pts.push(cut);
        if -alpha > -cut && -alpha < cut && !pts.contains(&-alpha) {
            pts.push(-alpha);
        }
        pts.sort_by(f64::total_cmp);
        let q = QuadOptions {
            abs_tol: 0.1 * self.opts.tol,
            rel_tol: 1e-12,
            max_subdivisions: 2000.max(pts.len() * 4),
        };
        let mut f = |t: f64| self.integrand(kernel, alpha, t);
        let r = integrate_points(&mut f, &pts, &q)?;
        if !r.converged && r.error > self.opts.tol {
            return Err(MelnikovError::Quadrature(r.error));
        }
        let truncation = self.tail(kernel, alpha, cut)? + self.tail(kernel, alpha, -cut)?;
        let error = r.error + truncation;
        if error > self.opts.tol.max(1e-14) * 10.0 {
            return Err(MelnikovError::Truncation {
                error,
                truncation,
                tol: self.opts.tol,
            });
        }
        Ok(MelnikovValue {
            value: r.value,
            error,
            truncation,
        })
    }

    pub fn value(&self, alpha: f64) -> Result<MelnikovValue, MelnikovError> {
        self.compute(Kernel::G, alpha)
    }

    pub fn deriv(&self, alpha: f64) -> Result<MelnikovValue, MelnikovError> {
        self.compute(Kernel::Gt, alpha)
    }
}

/// `M(α)` with its error estimate.
pub fn melnikov_at(
    sys: &PiecewiseSystem,
    hom: &HomoclinicReference,
    alpha: f64,
    opts: &MelnikovOptions,
) -> Result<(f64, f64), MelnikovError> {
    let v = Melnikov::new(sys, hom, *opts)?.value(alpha)?;
    Ok((v.value, v.error))
}

/// `M′(α)` with its error estimate.
pub fn melnikov_deriv_at(
    sys: &PiecewiseSystem,
    hom: &HomoclinicReference,
    alpha: f64,
    opts: &MelnikovOptions,
) -> Result<(f64, f64), MelnikovError> {
    let v = Melnikov::new(sys, hom, *opts)?.deriv(alpha)?;
    Ok((v.value, v.error))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelnikovProfile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub derivs: Option<Vec<f64>>,
    pub errors: Vec<f64>,
    pub t_cut: f64,
    pub mode: MelnikovMode,
    pub step: f64,
}

impl MelnikovProfile {
    /// Profile from given samples (uniform grid), mainly for tests.
    pub fn from_samples(start: f64, step: f64, values: Vec<f64>, mode: MelnikovMode) -> MelnikovProfile {
        let grid = (0..values.len()).map(|i| start + step * i as f64).collect();
        let n = values.len();
        MelnikovProfile {
            grid,
            values,
            derivs: None,
            errors: vec![0.0; n],
            t_cut: f64::INFINITY,
            mode,
            step,
        }
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Linear interpolation of the sampled values.
    pub fn interp(&self, tau: f64) -> Option<f64> {
        if tau < self.start() || tau > self.end() {
            return None;
        }
        let u = (tau - self.start()) / self.step;
        let i = (u.floor() as usize).min(self.grid.len() - 2);
        let w = u - i as f64;
        Some(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Uniform grid `from, from + step, …` up to `to` (inclusive within round-off).
pub fn uniform_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| from + step * i as f64).collect()
}

/// Sample `M` (and optionally `M′`) on a uniform grid; grid points are
/// evaluated in parallel with results in grid order.
pub fn melnikov_profile(
    sys: &PiecewiseSystem,
    hom: &HomoclinicReference,
    range: (f64, f64),
    step: f64,
    opts: &MelnikovOptions,
    with_derivative: bool,
) -> Result<MelnikovProfile, MelnikovError> {
    assert!(step > 0.0, "profile step must be positive");
    let m = Melnikov::new(sys, hom, *opts)?;
    let grid = uniform_grid(range.0, range.1, step);
    let rows: Vec<(f64, f64, Option<f64>)> = grid
        .par_iter()
        .map(|&tau| {
            let v = m.value(tau)?;
            let d = if with_derivative {
                let d = m.deriv(tau)?;
                Some((d.value, d.error))
            } else {
                None
            };
            Ok((v.value, v.error.max(d.map_or(0.0, |d| d.1)), d.map(|d| d.0)))
        })
        .collect::<Result<_, MelnikovError>>()?;
    let values = rows.iter().map(|r| r.0).collect();
    let errors = rows.iter().map(|r| r.1).collect();
    let derivs = with_derivative.then(|| rows.iter().map(|r| r.2.unwrap()).collect());
    Ok(MelnikovProfile {
        grid,
        values,
        derivs,
        errors,
        t_cut: opts.cut(),
        mode: opts.mode,
        step,
    })
}

/// `2k/(4π² + k²) · sin(2πθ)`.
pub fn closed_form_a(k: f64, theta: f64) -> f64 {
    2.0 * k / (4.0 * PI * PI + k * k) * (2.0 * PI * theta).sin()
}

/// Amplitude of the trace-free Melnikov function of the first example.
pub fn c1() -> f64 {
    let p2 = PI * PI;
    (8.0 * p2 + 3.0) / ((4.0 * p2 + 9.0) * (p2 + 1.0))
}

/// `2A(3, θ) − A(2, θ)`.
pub fn closed_form_ex1(theta: f64) -> f64 {
    2.0 * closed_form_a(3.0, theta) - closed_form_a(2.0, theta)
}

/// Largest `|tr f_x^±(γ(t))|` over `|t| ≤ t_max`.
pub fn max_trace_along(sys: &PiecewiseSystem, hom: &HomoclinicReference, t_max: f64) -> Result<f64, EvalError> {
    let mut worst: f64 = 0.0;
    for i in 0..=4000 {
        let t = -t_max + 2.0 * t_max * i as f64 / 4000.0;
        let region = if t > 0.0 { Region::Plus } else { Region::Minus };
        worst = worst.max(sys.trace_f(region, hom.eval(t))?.abs());
    }
    Ok(worst)
}
