//! Dormand–Prince 5(4) stepping with the classical fourth-order continuous
//! extension. Generic over the state dimension.

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Result of one trial step.
#[derive(Clone, Debug)]
pub struct Step<const N: usize> {
    pub y1: [f64; N],
    /// Derivative at the new point (first stage of the next step).
    pub k7: [f64; N],
    pub err: [f64; N],
    /// Continuous-extension coefficients.
    pub rc: [[f64; N]; 5],
}

/// One DP5 step of size `h` from `(t, y)` with `k1 = f(t, y)`.
pub fn step<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
) -> Result<Step<N>, E> {
    let mut tmp = [0.0; N];
    for i in 0..N {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    let k2 = f(t + C2 * h, &tmp)?;
    for i in 0..N {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    let k3 = f(t + C3 * h, &tmp)?;
    for i in 0..N {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    let k4 = f(t + C4 * h, &tmp)?;
    for i in 0..N {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    let k5 = f(t + C5 * h, &tmp)?;
    for i in 0..N {
        tmp[i] = y[i]
            + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    let k6 = f(t + h, &tmp)?;
    let mut y1 = [0.0; N];
    for i in 0..N {
        y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    let k7 = f(t + h, &y1)?;
    let mut err = [0.0; N];
    let mut rc = [[0.0; N]; 5];
    for i in 0..N {
        err[i] = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let dy = y1[i] - y[i];
        let bspl = h * k1[i] - dy;
        rc[0][i] = y[i];
        rc[1][i] = dy;
        rc[2][i] = bspl;
        rc[3][i] = dy - h * k7[i] - bspl;
        rc[4][i] = h
            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Ok(Step { y1, k7, err, rc })
}

/// Evaluate the continuous extension at fraction `theta` of the step.
pub fn dense<const N: usize>(rc: &[[f64; N]; 5], theta: f64) -> [f64; N] {
    let th1 = 1.0 - theta;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = rc[0][i]
            + theta * (rc[1][i] + th1 * (rc[2][i] + theta * (rc[3][i] + th1 * rc[4][i])));
    }
    out
}

pub fn norm_inf<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Error ratio with a norm-based scale shared by all components.
pub fn error_ratio<const N: usize>(
    err: &[f64; N],
    y0: &[f64; N],
    y1: &[f64; N],
    rel_tol: f64,
    abs_tol: f64,
) -> f64 {
    let sc = abs_tol + rel_tol * norm_inf(y0).max(norm_inf(y1));
    let sc = sc.max(f64::MIN_POSITIVE);
    norm_inf(err) / sc
}

/// Step-size factor from an error ratio.
pub fn step_factor(ratio: f64) -> f64 {
    if ratio == 0.0 {
        5.0
    } else {
        (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
    }
}

/// A stored accepted step covering `[t0, t0 + h]`.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub rc: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = if self.h >= 0.0 {
            (self.t0, self.t0 + self.h)
        } else {
            (self.t0 + self.h, self.t0)
        };
        t >= a && t <= b
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        dense(&self.rc, (t - self.t0) / self.h)
    }
}

/// Locate the stored step covering `t` in a monotone list of steps.
pub fn find_step<const N: usize>(steps: &[DenseStep<N>], t: f64) -> Option<&DenseStep<N>> {
    if steps.is_empty() {
        return None;
    }
    let forward = steps[0].h >= 0.0;
    let idx = steps.partition_point(|s| if forward { s.t1() < t } else { s.t1() > t });
    steps.get(idx).filter(|s| s.contains(t))
}

/// Options for the smooth (event-free) integrator.
#[derive(Clone, Copy, Debug)]
pub struct SmoothOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        SmoothOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.1,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, thiserror::Error, PartialEq)]
pub enum SmoothError<E> {
    #[error("right-hand side failed: {0}")]
    Rhs(E),
    #[error("step size underflow at t={0}")]
    StepUnderflow(f64),
    #[error("step budget exhausted at t={0}")]
    TooManySteps(f64),
}

/// Solution of a smooth integration with every accepted step kept.
#[derive(Clone, Debug)]
pub struct SmoothSolution<const N: usize> {
    pub steps: Vec<DenseStep<N>>,
    pub t_end: f64,
    pub y_end: [f64; N],
}

impl<const N: usize> SmoothSolution<N> {
    pub fn eval(&self, t: f64) -> Option<[f64; N]> {
        find_step(&self.steps, t).map(|s| s.eval(t))
    }
}

/// Integrate a smooth system from `t0` to `t1`; `stop` may end the run early
/// after any accepted step (it receives the step and returns true to stop).
pub fn integrate_smooth<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    opts: &SmoothOptions,
    stop: &mut impl FnMut(&DenseStep<N>) -> bool,
) -> Result<SmoothSolution<N>, SmoothError<E>> {
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y).map_err(SmoothError::Rhs)?;
    let mut h = initial_step(&y, &k1, opts.max_step, opts.abs_tol);
    let mut steps = Vec::new();
    let mut n = 0usize;
    while (t1 - t) * dir > 0.0 {
        n += 1;
        if n > opts.max_steps {
            return Err(SmoothError::TooManySteps(t));
        }
        let hh = h.min(opts.max_step).min((t1 - t).abs()) * dir;
        let s = step(f, t, &y, &k1, hh).map_err(SmoothError::Rhs)?;
        let ratio = error_ratio(&s.err, &y, &s.y1, opts.rel_tol, opts.abs_tol);
        if ratio <= 1.0 {
            let ds = DenseStep {
                t0: t,
                h: hh,
                rc: s.rc,
            };
            t = if (t1 - (t + hh)) * dir <= 0.0 { t1 } else { t + hh };
            y = s.y1;
            k1 = s.k7;
            let halt = stop(&ds);
            steps.push(ds);
            h = hh.abs() * step_factor(ratio);
            if halt {
                break;
            }
        } else {
            h = hh.abs() * step_factor(ratio).min(1.0);
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(SmoothError::StepUnderflow(t));
            }
        }
    }
    Ok(SmoothSolution {
        steps,
        t_end: t,
        y_end: y,
    })
}

pub fn initial_step<const N: usize>(y: &[f64; N], f: &[f64; N], max_step: f64, abs_tol: f64) -> f64 {
    let fy = norm_inf(f);
    if fy == 0.0 {
        return max_step;
    }
    let yn = norm_inf(y).max(abs_tol);
    (0.01 * yn / fy).clamp(1e-8, max_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_consistency() {
        // Row sums equal nodes.
        let rows = [
            (A21, C2),
            (A31 + A32, C3),
            (A41 + A42 + A43, C4),
            (A51 + A52 + A53 + A54, C5),
            (A61 + A62 + A63 + A64 + A65, 1.0),
            (A71 + A73 + A74 + A75 + A76, 1.0),
        ];
        for (s, c) in rows {
            assert!((s - c).abs() < 1e-14);
        }
        // Error weights sum to zero; dense weights sum to zero.
        assert!((E1 + E3 + E4 + E5 + E6 + E7).abs() < 1e-15);
        assert!((D1 + D3 + D4 + D5 + D6 + D7).abs() < 1e-12);
        // Fifth-order quadrature conditions on b = a7.
        let b = [A71, 0.0, A73, A74, A75, A76];
        let c = [0.0, C2, C3, C4, C5, 1.0];
        for k in 0..5 {
            let s: f64 = b.iter().zip(c).map(|(bi, ci)| bi * ci.powi(k)).sum();
            assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "k={k}");
        }
    }

    fn exp_rhs(_t: f64, y: &[f64; 2]) -> Result<[f64; 2], ()> {
        Ok([y[1], -y[0]])
    }

    #[test]
    fn harmonic_oscillator_accuracy_and_dense_output() {
        let opts = SmoothOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let sol = integrate_smooth(&mut exp_rhs, 0.0, [0.0, 1.0], 10.0, &opts, &mut |_| false)
            .unwrap();
        assert!((sol.y_end[0] - 10f64.sin()).abs() < 1e-10);
        for k in 0..200 {
            let t = k as f64 * 0.05 + 0.013;
            let y = sol.eval(t).unwrap();
            assert!((y[0] - t.sin()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn backward_integration() {
        let sol = integrate_smooth(
            &mut |_t, y: &[f64; 1]| Ok::<_, ()>([y[0]]),
            0.0,
            [1.0],
            -5.0,
            &SmoothOptions {
                rel_tol: 1e-12,
                abs_tol: 0.0,
                ..Default::default()
            },
            &mut |_| false,
        )
        .unwrap();
        assert!((sol.y_end[0] - (-5f64).exp()).abs() < 1e-13);
        let mid = sol.eval(-2.5).unwrap()[0];
        assert!((mid - (-2.5f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn dense_order_is_at_least_four() {
        // Interpolation error at mid-step shrinks at least like h^5 on y' = y.
        let mut errs = Vec::new();
        for h in [0.2, 0.1] {
            let mut f = |_t: f64, y: &[f64; 1]| Ok::<_, ()>([y[0]]);
            let s = step(&mut f, 0.0, &[1.0], &[1.0], h).unwrap();
            let v = dense(&s.rc, 0.5)[0];
            errs.push((v - (0.5 * h).exp()).abs());
        }
        assert!(errs[0] / errs[1] > 20.0, "{errs:?}");
    }
}
