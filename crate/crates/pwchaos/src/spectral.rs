//! Linearization at the origin, hypothesis verdicts, scenario classification
//! and the derived constants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::system::{HomoclinicReference, PiecewiseSystem, Region, SystemError, Vec2};

/// Tolerance for an eigenvector being orthogonal to `∇G(0)`.
pub const F1_TOL: f64 = 1e-8;
/// Probe distance used for scenario classification.
pub const PROBE_RHO: f64 = 1e-3;
/// Number of polyline vertices sampling the homoclinic loop.
pub const LOOP_SAMPLES: usize = 2000;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("Jacobian of f^{region} at the origin has complex eigenvalues {re} ± {im}i")]
    ComplexEigenvalues { region: Region, re: f64, im: f64 },
    #[error("origin lies outside the domain box")]
    OriginOutsideDomain,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec2,
}

/// Which of the two admissible placements of the stable directions holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum F2Labeling {
    /// `v_s⁺ ∈ Π¹`, `v_s⁻ ∈ Π²`.
    AsStated,
    /// `v_s⁻ ∈ Π¹`, `v_s⁺ ∈ Π²`.
    Swapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub f0: bool,
    pub f1: bool,
    pub f2: bool,
    pub k_transversality: bool,
}

impl Verdicts {
    pub fn all(&self) -> bool {
        self.f0 && self.f1 && self.f2 && self.k_transversality
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda_s_plus: f64,
    pub lambda_u_plus: f64,
    pub lambda_s_minus: f64,
    pub lambda_u_minus: f64,
    pub v_s_plus: Vec2,
    pub v_u_plus: Vec2,
    pub v_s_minus: Vec2,
    pub v_u_minus: Vec2,
    pub grad_g0: Vec2,
    pub jacobian_plus: [[f64; 2]; 2],
    pub jacobian_minus: [[f64; 2]; 2],
    pub verdicts: Verdicts,
    pub f2_labeling: Option<F2Labeling>,
    /// 1 to 4, `None` when no homoclinic loop is available or the probes are
    /// inconclusive.
    pub scenario: Option<u8>,
    /// `∇G(γ(0))·f^±(γ(0))`.
    pub k_plus: Option<f64>,
    pub k_minus: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    pub sigma_fwd_plus: f64,
    pub sigma_fwd_minus: f64,
    pub sigma_fwd: f64,
    pub sigma_bwd_plus: f64,
    pub sigma_bwd_minus: f64,
    pub sigma_bwd: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub big_sigma_fwd_plus: f64,
    pub big_sigma_bwd_minus: f64,
    pub big_sigma_fwd: f64,
    pub big_sigma_bwd: f64,
    pub big_sigma_lo: f64,
    pub big_sigma_hi: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub k0: f64,
    pub nu0: f64,
    pub mu0: f64,
}

/// Real eigenpairs of a 2×2 matrix, ordered by increasing eigenvalue.
pub fn eigen2(m: [[f64; 2]; 2]) -> Result<[EigenPair; 2], (f64, f64)> {
    let [[a, b], [c, d]] = m;
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - det;
    if disc < 0.0 {
        return Err((half_tr, (-disc).sqrt()));
    }
    let root = disc.sqrt();
    // Avoid cancellation for the smaller-magnitude root.
    let big = if half_tr >= 0.0 { half_tr + root } else { half_tr - root };
    let small = if big != 0.0 { det / big } else { 0.0 };
    let (l1, l2) = if big <= small { (big, small) } else { (small, big) };
    let vec = |l: f64, other: f64| -> Vec2 {
        let r1 = [b, l - a];
        let r2 = [l - d, c];
        let n1 = r1[0].hypot(r1[1]);
        let n2 = r2[0].hypot(r2[1]);
        let v = if n1 >= n2 && n1 > 0.0 {
            [r1[0] / n1, r1[1] / n1]
        } else if n2 > 0.0 {
            [r2[0] / n2, r2[1] / n2]
        } else if l <= other {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        v
    };
    Ok([
        EigenPair {
            value: l1,
            vector: vec(l1, l2),
        },
        EigenPair {
            value: l2,
            vector: vec(l2, l1),
        },
    ])
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn neg(a: Vec2) -> Vec2 {
    [-a[0], -a[1]]
}

/// Angle swept counter-clockwise from `a` to `b`, in `[0, 2π)`.
pub fn ccw_angle(a: Vec2, b: Vec2) -> f64 {
    let mut t = b[1].atan2(b[0]) - a[1].atan2(a[0]);
    while t < 0.0 {
        t += 2.0 * PI;
    }
    while t >= 2.0 * PI {
        t -= 2.0 * PI;
    }
    t
}

/// Side of `w` relative to the polyline made of the rays through `from` and
/// `to`: `Some(1)` inside the open sector swept counter-clockwise from
/// `from` to `to`, `Some(2)` in the complementary open sector, `None` on a ray.
pub fn sector_side(from: Vec2, to: Vec2, w: Vec2, tol: f64) -> Option<u8> {
    let span = ccw_angle(from, to);
    let a = ccw_angle(from, w);
    if a <= tol || (a - span).abs() <= tol || (2.0 * PI - a) <= tol {
        None
    } else if a < span {
        Some(1)
    } else {
        Some(2)
    }
}

/// Winding number of the closed polygon `poly` around `p`.
pub fn winding_number(poly: &[Vec2], p: Vec2) -> i32 {
    let n = poly.len();
    let mut w = 0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                w += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            w -= 1;
        }
    }
    w
}

/// Closed polygon sampling the loop; the time span is chosen so the endpoints
/// sit far inside the probe radius.
pub fn loop_polygon(hom: &HomoclinicReference, lambda_lo: f64) -> Vec<Vec2> {
    let t_max = (PROBE_RHO.ln().abs() + 14.0) / lambda_lo;
    let mut poly = hom.polyline(LOOP_SAMPLES, t_max);
    poly.push([0.0, 0.0]);
    poly
}

fn scenario_of(u_inside: bool, s_inside: bool) -> u8 {
    match (u_inside, s_inside) {
        (false, false) => 1,
        (true, true) => 2,
        (true, false) => 3,
        (false, true) => 4,
    }
}

fn side_pairs(
    sys: &PiecewiseSystem,
    region: Region,
    fd_step: f64,
) -> Result<([[f64; 2]; 2], [EigenPair; 2]), SpectralError> {
    let j = sys.jacobian_f(region, [0.0, 0.0], fd_step)?;
    let e = eigen2(j).map_err(|(re, im)| SpectralError::ComplexEigenvalues { region, re, im })?;
    Ok((j, e))
}

/// Linearize at the origin with the given finite-difference step (only used
/// for non-polynomial fields).
pub fn analyze_origin_with(
    sys: &PiecewiseSystem,
    hom: Option<&HomoclinicReference>,
    fd_step: f64,
) -> Result<SpectralReport, SpectralError> {
    if !sys.domain.contains([0.0, 0.0]) {
        return Err(SpectralError::OriginOutsideDomain);
    }
    let mut notes = Vec::new();
    let (jp, ep) = side_pairs(sys, Region::Plus, fd_step)?;
    let (jm, em) = side_pairs(sys, Region::Minus, fd_step)?;
    let f_origin = [sys.f(Region::Plus, [0.0, 0.0])?, sys.f(Region::Minus, [0.0, 0.0])?];
    let fixed = f_origin.iter().all(|v| v[0].abs() <= 1e-12 && v[1].abs() <= 1e-12);
    let on_switch = sys.switching([0.0, 0.0])?.abs() <= 1e-12;
    let saddles = ep[0].value < 0.0 && ep[1].value > 0.0 && em[0].value < 0.0 && em[1].value > 0.0;
    let f0 = fixed && on_switch && saddles;
    if !fixed {
        notes.push("origin is not an equilibrium of both fields".into());
    }
    if !saddles {
        notes.push("origin is not a saddle of both fields".into());
    }

    let grad = sys.grad_switching([0.0, 0.0])?;
    let gn = grad[0].hypot(grad[1]);
    // Orient per F1: unstable/stable "+" vectors point into Ω⁺, "−" into Ω⁻.
    let mut f1 = gn > 0.0;
    let mut orient = |v: Vec2, want: f64, label: &str| -> Vec2 {
        let p = dot(grad, v) / gn.max(f64::MIN_POSITIVE);
        if p.abs() <= F1_TOL {
            f1 = false;
            notes.push(format!("{label} is orthogonal to grad G(0) (|cos| = {:.3e})", p.abs()));
            v
        } else if p.signum() == want {
            v
        } else {
            neg(v)
        }
    };
    let v_s_plus = orient(ep[0].vector, 1.0, "v_s+");
    let v_u_plus = orient(ep[1].vector, 1.0, "v_u+");
    let v_s_minus = orient(em[0].vector, -1.0, "v_s-");
    let v_u_minus = orient(em[1].vector, -1.0, "v_u-");

    let (f2, f2_labeling) = if f1 {
        let tol = 1e-12;
        let sp = sector_side(v_u_plus, v_u_minus, v_s_plus, tol);
        let sm = sector_side(v_u_plus, v_u_minus, v_s_minus, tol);
        match (sp, sm) {
            (Some(1), Some(2)) => (true, Some(F2Labeling::AsStated)),
            (Some(2), Some(1)) => (true, Some(F2Labeling::Swapped)),
            (Some(a), Some(_)) => {
                notes.push(format!("both stable directions lie in sector {a}"));
                (false, None)
            }
            _ => {
                notes.push("a stable direction lies on the unstable polyline".into());
                (false, None)
            }
        }
    } else {
        (false, None)
    };

    let lambda_lo = [ep[0].value.abs(), ep[1].value.abs(), em[0].value.abs(), em[1].value.abs()]
        .into_iter()
        .fold(f64::INFINITY, f64::min);

    // Homoclinic loop: given, or traced numerically when the directions allow.
    let traced;
    let hom = match hom {
        Some(h) => Some(h),
        None if f0 && f1 => match HomoclinicReference::numeric(sys, em[1].value, v_u_minus, ep[0].value, v_s_plus) {
            Ok(h) => {
                traced = h;
                Some(&traced)
            }
            Err(SystemError::Homoclinic(msg)) => {
                notes.push(format!("no homoclinic loop found: {msg}"));
                None
            }
            Err(e) => {
                notes.push(format!("no homoclinic loop found: {e}"));
                None
            }
        },
        None => None,
    };

    let (mut k_transversality, mut k_plus, mut k_minus, mut scenario) = (false, None, None, None);
    if let Some(h) = hom {
        let p = h.gamma0;
        let gp = sys.grad_switching(p)?;
        let a = dot(gp, sys.f(Region::Plus, p)?);
        let b = dot(gp, sys.f(Region::Minus, p)?);
        k_plus = Some(a);
        k_minus = Some(b);
        k_transversality = a > 0.0 && b > 0.0;
        if !k_transversality {
            notes.push("loop does not cross the switching curve transversally from minus to plus".into());
        }
        if f0 && lambda_lo > 0.0 {
            let poly = loop_polygon(h, lambda_lo);
            let pu = [PROBE_RHO * v_u_plus[0], PROBE_RHO * v_u_plus[1]];
            let ps = [PROBE_RHO * v_s_minus[0], PROBE_RHO * v_s_minus[1]];
            let u_in = winding_number(&poly, pu) != 0;
            let s_in = winding_number(&poly, ps) != 0;
            scenario = Some(scenario_of(u_in, s_in));
        }
    }

    Ok(SpectralReport {
        lambda_s_plus: ep[0].value,
        lambda_u_plus: ep[1].value,
        lambda_s_minus: em[0].value,
        lambda_u_minus: em[1].value,
        v_s_plus,
        v_u_plus,
        v_s_minus,
        v_u_minus,
        grad_g0: grad,
        jacobian_plus: jp,
        jacobian_minus: jm,
        verdicts: Verdicts {
            f0,
            f1,
            f2,
            k_transversality,
        },
        f2_labeling,
        scenario,
        k_plus,
        k_minus,
        notes,
    })
}

/// Linearize at the origin (finite-difference step `1e-6` for
/// non-polynomial fields).
pub fn analyze_origin(
    sys: &PiecewiseSystem,
    hom: Option<&HomoclinicReference>,
) -> Result<SpectralReport, SpectralError> {
    analyze_origin_with(sys, hom, 1e-6)
}

/// Constants derived from the eigenvalues.
pub fn derived_constants(r: &SpectralReport) -> ConstantsTable {
    let lu_p = r.lambda_u_plus;
    let ls_p = r.lambda_s_plus.abs();
    let lu_m = r.lambda_u_minus;
    let ls_m = r.lambda_s_minus.abs();
    let sigma_fwd_plus = ls_p / (lu_p + ls_p);
    let sigma_fwd_minus = (lu_m + ls_m) / lu_m;
    let sigma_bwd_plus = 1.0 / sigma_fwd_plus;
    let sigma_bwd_minus = 1.0 / sigma_fwd_minus;
    let sigma_lo = sigma_fwd_plus.min(sigma_bwd_minus);
    let sigma_hi = sigma_fwd_plus.max(sigma_bwd_minus);
    let big_sigma_fwd_plus = 1.0 / (lu_p + ls_p);
    let big_sigma_bwd_minus = 1.0 / (lu_m + ls_m);
    let big_sigma_fwd = (lu_m + ls_p) / (lu_m * (lu_p + ls_p));
    let big_sigma_bwd = (lu_m + ls_p) / (ls_p * (lu_m + ls_m));
    let big_sigma_lo = big_sigma_fwd.min(big_sigma_bwd);
    let big_sigma_hi = big_sigma_fwd.max(big_sigma_bwd);
    let lams = [lu_m, lu_p, ls_m, ls_p];
    let lambda_lo = lams.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_hi = lams.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ConstantsTable {
        sigma_fwd_plus,
        sigma_fwd_minus,
        sigma_fwd: sigma_fwd_plus * sigma_fwd_minus,
        sigma_bwd_plus,
        sigma_bwd_minus,
        sigma_bwd: sigma_bwd_plus * sigma_bwd_minus,
        sigma_lo,
        sigma_hi,
        big_sigma_fwd_plus,
        big_sigma_bwd_minus,
        big_sigma_fwd,
        big_sigma_bwd,
        big_sigma_lo,
        big_sigma_hi,
        lambda_lo,
        lambda_hi,
        k0: 3.0 * big_sigma_hi / (2.0 * sigma_lo),
        nu0: (3.0 * sigma_hi - 1.0).max(1.0),
        mu0: 0.25 * big_sigma_fwd_plus.min(big_sigma_bwd_minus).min(sigma_lo * sigma_lo),
    }
}

/// Integer gap `⌊K0(1+ν)|ln ε| + 2⌋` used for periodic time sequences.
pub fn ogap(k0: f64, nu: f64, eps: f64) -> f64 {
    (k0 * (1.0 + nu) * eps.ln().abs() + 2.0).floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin_example, parse_system, Params};
    use std::f64::consts::FRAC_1_SQRT_2 as R;

    fn ex1() -> (PiecewiseSystem, HomoclinicReference) {
        let (s, h) = builtin_example("ex1", &Params::new()).unwrap();
        (s, h.unwrap())
    }

    fn close(a: Vec2, b: Vec2) -> bool {
        (a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14
    }

    #[test]
    fn ex1_eigendata() {
        let (s, h) = ex1();
        let r = analyze_origin(&s, Some(&h)).unwrap();
        assert_eq!(r.lambda_u_plus, 1.0);
        assert_eq!(r.lambda_u_minus, 1.0);
        assert_eq!(r.lambda_s_plus, -1.0);
        assert_eq!(r.lambda_s_minus, -1.0);
        assert!(close(r.v_u_plus, [-R, -R]), "{:?}", r.v_u_plus);
        assert!(close(r.v_u_minus, [R, R]));
        assert!(close(r.v_s_plus, [R, -R]));
        assert!(close(r.v_s_minus, [-R, R]));
        assert!(r.verdicts.all(), "{:?}", r.notes);
        assert_eq!(r.f2_labeling, Some(F2Labeling::AsStated));
        assert_eq!(r.scenario, Some(1));
    }

    #[test]
    fn ex1_traced_loop_gives_same_report() {
        let (s, h) = ex1();
        let a = analyze_origin(&s, Some(&h)).unwrap();
        let b = analyze_origin(&s, None).unwrap();
        assert_eq!(a.scenario, b.scenario);
        assert_eq!(a.verdicts, b.verdicts);
    }

    #[test]
    fn axis_aligned_fields_fail_f1() {
        let src = r#"
[system]
f_plus_x = "x"
f_plus_y = "-y"
f_minus_x = "x"
f_minus_y = "-y"
G = "-y"
[perturbation]
g_x = "0"
g_y = "0"
"#;
        let s = parse_system(src).unwrap();
        let r = analyze_origin(&s, None).unwrap();
        assert!(r.verdicts.f0);
        assert!(!r.verdicts.f1);
        assert!(!r.verdicts.f2);
        assert!(r.notes.iter().any(|n| n.contains("orthogonal")));
    }

    #[test]
    fn complex_eigenvalues_are_errors() {
        let src = r#"
[system]
f_plus_x = "y"
f_plus_y = "-x"
f_minus_x = "y"
f_minus_y = "-x"
G = "-y"
[perturbation]
g_x = "0"
g_y = "0"
"#;
        let s = parse_system(src).unwrap();
        assert!(matches!(
            analyze_origin(&s, None),
            Err(SpectralError::ComplexEigenvalues { .. })
        ));
    }

    #[test]
    fn ex1_constants() {
        let (s, h) = ex1();
        let c = derived_constants(&analyze_origin(&s, Some(&h)).unwrap());
        assert_eq!(c.sigma_lo, 0.5);
        assert_eq!(c.sigma_hi, 0.5);
        assert_eq!(c.k0, 3.0);
        assert_eq!(c.nu0, 1.0);
        assert_eq!(c.mu0, 1.0 / 16.0);
        assert_eq!(c.sigma_fwd, 1.0);
        assert_eq!(c.sigma_bwd, 1.0);
        assert_eq!(c.big_sigma_fwd, 1.0);
        assert_eq!(c.sigma_fwd_plus, 0.5);
        assert_eq!(c.sigma_bwd_minus, 0.5);
        assert_eq!(ogap(c.k0, 1.0, 1e-3), 43.0);
    }

    #[test]
    fn time_scaling() {
        let (s, h) = ex1();
        let a = derived_constants(&analyze_origin(&s, Some(&h)).unwrap());
        let b = derived_constants(&analyze_origin(&s.time_scaled(2.0), Some(&h)).unwrap());
        assert_eq!(b.lambda_lo, 2.0 * a.lambda_lo);
        assert_eq!(b.sigma_fwd_plus, a.sigma_fwd_plus);
        assert_eq!(b.sigma_bwd, a.sigma_bwd);
        assert_eq!(b.big_sigma_fwd, a.big_sigma_fwd / 2.0);
        assert_eq!(b.big_sigma_bwd_minus, a.big_sigma_bwd_minus / 2.0);
        assert_eq!(b.k0, a.k0 / 2.0);
    }

    #[test]
    fn fd_step_halving_is_stable() {
        // A non-polynomial variant with the same linear part as ex1.
        let src = r#"
[system]
f_plus_x = "sin(y) - x^2"
f_plus_y = "x - 2*x^2"
f_minus_x = "sin(y) + x^2"
f_minus_y = "x - 2*x^2"
G = "-y"
[perturbation]
g_x = "0"
g_y = "0"
"#;
        let s = parse_system(src).unwrap();
        let a = analyze_origin_with(&s, None, 1e-6).unwrap();
        let b = analyze_origin_with(&s, None, 5e-7).unwrap();
        assert!((a.lambda_u_plus - b.lambda_u_plus).abs() < 1e-6);
        assert!((a.lambda_s_minus - b.lambda_s_minus).abs() < 1e-6);
    }

    #[test]
    fn winding_and_sectors() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(winding_number(&sq, [0.5, 0.5]), 1);
        assert_eq!(winding_number(&sq, [1.5, 0.5]), 0);
        assert_eq!(sector_side([1.0, 0.0], [0.0, 1.0], [1.0, 1.0], 1e-12), Some(1));
        assert_eq!(sector_side([1.0, 0.0], [0.0, 1.0], [-1.0, -1.0], 1e-12), Some(2));
        assert_eq!(sector_side([1.0, 0.0], [0.0, 1.0], [2.0, 0.0], 1e-12), None);
    }

    #[test]
    fn eigen_handles_diagonal_and_triangular() {
        let e = eigen2([[2.0, 0.0], [0.0, -3.0]]).unwrap();
        assert_eq!(e[0].value, -3.0);
        assert_eq!(e[1].value, 2.0);
        assert!(close([e[0].vector[0].abs(), e[0].vector[1].abs()], [0.0, 1.0]));
        let e = eigen2([[1.0, 5.0], [0.0, -1.0]]).unwrap();
        for p in e {
            let m = [[1.0, 5.0], [0.0, -1.0]];
            let v = p.vector;
            let mv = [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]];
            assert!((mv[0] - p.value * v[0]).abs() < 1e-14 && (mv[1] - p.value * v[1]).abs() < 1e-14);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reciprocal_rows(lu_p in 0.1f64..5.0, ls_p in 0.1f64..5.0, lu_m in 0.1f64..5.0, ls_m in 0.1f64..5.0) {
                let (s, h) = ex1();
                let mut r = analyze_origin(&s, Some(&h)).unwrap();
                r.lambda_u_plus = lu_p;
                r.lambda_s_plus = -ls_p;
                r.lambda_u_minus = lu_m;
                r.lambda_s_minus = -ls_m;
                let c = derived_constants(&r);
                prop_assert!((c.sigma_fwd_plus * c.sigma_bwd_plus - 1.0).abs() < 1e-14);
                prop_assert!((c.sigma_fwd_minus * c.sigma_bwd_minus - 1.0).abs() < 1e-14);
                prop_assert!(c.sigma_lo <= c.sigma_hi && c.sigma_hi < 1.0);
                prop_assert!(c.nu0 >= 1.0);
            }

            #[test]
            fn eigenpairs_satisfy_definition(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0) {
                let m = [[a, b], [c, d]];
                if let Ok(e) = eigen2(m) {
                    for p in e {
                        let v = p.vector;
                        prop_assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-12);
                        let mv = [a * v[0] + b * v[1], c * v[0] + d * v[1]];
                        let scale = 1.0 + a.abs() + b.abs() + c.abs() + d.abs();
                        // Near-defective matrices lose accuracy in the vector.
                        let gap = (e[1].value - e[0].value).abs();
                        prop_assume!(gap > 1e-3);
                        prop_assert!((mv[0] - p.value * v[0]).abs() < 1e-9 * scale / gap);
                        prop_assert!((mv[1] - p.value * v[1]).abs() < 1e-9 * scale / gap);
                    }
                }
            }
        }
    }
}
