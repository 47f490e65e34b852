//! Sign-change certificates for the Melnikov function, zero localization and
//! admissible time sequences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::melnikov::{MelnikovError, MelnikovProfile};
use crate::spectral::ConstantsTable;
use crate::system::PiecewiseSystem;

/// Minimal spacing between consecutive certified extrema.
pub const MIN_SPACING: f64 = 0.1;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum RecurrenceError {
    #[error("certificate fails on [{lo}, {hi}]: {reason}")]
    CertificateFails { lo: f64, hi: f64, reason: String },
    #[error("window exhausted: {0}")]
    WindowExhausted(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("sequence violates its gap condition at j={j}: gap {gap} <= required {required}")]
    GapViolation { j: i64, gap: f64, required: f64 },
    #[error(transparent)]
    Melnikov(#[from] MelnikovError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P1Certificate {
    pub c_bar: f64,
    /// `b_i` for `i = first_index, first_index + 1, …`; even indices carry
    /// `M < -c̄`, odd ones `M > c̄`.
    pub b: Vec<f64>,
    pub first_index: i64,
    pub window: (f64, f64),
}

impl P1Certificate {
    pub fn get(&self, i: i64) -> Option<f64> {
        usize::try_from(i - self.first_index).ok().and_then(|k| self.b.get(k).copied())
    }

    pub fn last_index(&self) -> i64 {
        self.first_index + self.b.len() as i64 - 1
    }

    /// Index `k` with `b_k < t < b_{k+1}`.
    pub fn pair_containing(&self, t: f64) -> Option<i64> {
        let k = self.b.partition_point(|&b| b < t);
        if k == 0 || k == self.b.len() {
            None
        } else {
            Some(self.first_index + k as i64 - 1)
        }
    }

    /// Extend by translation with `period` (which must be a multiple of two
    /// consecutive gaps) to cover `[lo, hi]`.
    pub fn periodic_extension(&self, period: f64, lo: f64, hi: f64) -> Result<P1Certificate, RecurrenceError> {
        // One period must span an even number of entries so signs repeat.
        let b0 = self.get(0).ok_or_else(|| RecurrenceError::Invalid("certificate lacks b_0".into()))?;
        let per: Vec<f64> = self.b.iter().copied().filter(|&b| b >= b0 && b < b0 + period - 1e-12).collect();
        if per.is_empty() || per.len() % 2 != 0 {
            return Err(RecurrenceError::Invalid(format!(
                "period {period} does not contain an even number of certified extrema"
            )));
        }
        let m = per.len() as i64;
        let mut b = Vec::new();
        let shift_lo = ((lo - b0) / period).floor() as i64 - 1;
        let shift_hi = ((hi - b0) / period).ceil() as i64 + 1;
        let mut first_index = None;
        for s in shift_lo..=shift_hi {
            for (i, &v) in per.iter().enumerate() {
                let val = v + s as f64 * period;
                if val >= lo - period && val <= hi + period {
                    if first_index.is_none() {
                        first_index = Some(s * m + i as i64);
                    }
                    b.push(val);
                }
            }
        }
        Ok(P1Certificate {
            c_bar: self.c_bar,
            b,
            first_index: first_index.unwrap_or(0),
            window: (lo - period, hi + period),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct P1Options {
    /// Each sub-window of this width must contain extrema of both signs.
    pub sub_window: f64,
    /// Time that receives index 0: `b_0` is the last negative extremum not
    /// after it.
    pub origin: f64,
}

impl Default for P1Options {
    fn default() -> Self {
        P1Options {
            sub_window: f64::INFINITY,
            origin: 0.0,
        }
    }
}

/// Extract alternating extrema beyond `±c̄` from a sampled profile.
pub fn verify_p1(profile: &MelnikovProfile, c_bar: f64, opts: &P1Options) -> Result<P1Certificate, RecurrenceError> {
    if !(c_bar > 0.0) {
        return Err(RecurrenceError::Invalid("c_bar must be positive".into()));
    }
    let (lo, hi) = (profile.start(), profile.end());
    // Excursions beyond the threshold, each reduced to its extreme sample.
    let mut ext: Vec<(f64, f64)> = Vec::new();
    let mut cur: Option<(f64, f64)> = None;
    for (&t, &v) in profile.grid.iter().zip(&profile.values) {
        let s = if v > c_bar {
            1.0
        } else if v < -c_bar {
            -1.0
        } else {
            0.0
        };
        match (&mut cur, s) {
            (Some(c), s) if s != 0.0 && c.1.signum() == s => {
                if v.abs() > c.1.abs() {
                    *c = (t, v);
                }
            }
            (c, s) => {
                if let Some(done) = c.take() {
                    ext.push(done);
                }
                if s != 0.0 {
                    *c = Some((t, v));
                }
            }
        }
    }
    if let Some(done) = cur {
        ext.push(done);
    }
    // Merge same-sign neighbours, enforce spacing greedily.
    let mut alt: Vec<(f64, f64)> = Vec::new();
    for e in ext {
        match alt.last_mut() {
            Some(last) if last.1.signum() == e.1.signum() => {
                if e.1.abs() > last.1.abs() {
                    *last = e;
                }
            }
            Some(last) if e.0 - last.0 < MIN_SPACING => {}
            _ => alt.push(e),
        }
    }
    let neg = alt.iter().filter(|e| e.1 < 0.0).count();
    if neg == 0 || neg == alt.len() {
        return Err(RecurrenceError::CertificateFails {
            lo,
            hi,
            reason: format!("no {} excursion beyond ±{c_bar}", if neg == 0 { "negative" } else { "positive" }),
        });
    }
    // Sub-window coverage.
    if opts.sub_window.is_finite() {
        let w = opts.sub_window;
        let mut a = lo;
        while a + w <= hi + 1e-12 {
            let has = |sgn: f64| alt.iter().any(|e| e.0 >= a && e.0 <= a + w && e.1.signum() == sgn);
            if !has(1.0) || !has(-1.0) {
                return Err(RecurrenceError::CertificateFails {
                    lo: a,
                    hi: a + w,
                    reason: "a sign class is absent".into(),
                });
            }
            a += 0.5 * w;
        }
    }
    // Index: b_0 is the last negative extremum at or before the origin.
    let zero_pos = alt
        .iter()
        .rposition(|e| e.1 < 0.0 && e.0 <= opts.origin)
        .or_else(|| alt.iter().position(|e| e.1 < 0.0))
        .unwrap();
    let first_index = -(zero_pos as i64);
    Ok(P1Certificate {
        c_bar,
        b: alt.iter().map(|e| e.0).collect(),
        first_index,
        window: (lo, hi),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroInfo {
    /// `k` with the zero in `]b_k, b_{k+1}[`.
    pub k: i64,
    pub pair: (f64, f64),
    pub bracket: (f64, f64),
    pub zero: f64,
    pub value: f64,
    pub slope: f64,
}

/// Refine one zero per consecutive certified pair. `m` evaluates `M`.
pub fn locate_zeros<E>(
    profile: &MelnikovProfile,
    cert: &P1Certificate,
    m: &(dyn Fn(f64) -> Result<f64, E> + Sync),
) -> Result<Vec<ZeroInfo>, E> {
    let mut out = Vec::new();
    for (i, w) in cert.b.windows(2).enumerate() {
        let (p, q) = (w[0], w[1]);
        // First sign change of the samples inside the pair, else the pair itself.
        let mut lo = p;
        let mut hi = q;
        let mut flo = m(p)?;
        let mut fhi = m(q)?;
        let mut prev: Option<(f64, f64)> = None;
        for (&t, &v) in profile.grid.iter().zip(&profile.values) {
            if t < p || t > q {
                continue;
            }
            if let Some((pt, pv)) = prev {
                if pv.signum() != v.signum() || v == 0.0 {
                    lo = pt;
                    hi = t;
                    flo = m(lo)?;
                    fhi = m(hi)?;
                    break;
                }
            }
            prev = Some((t, v));
        }
        if flo.signum() == fhi.signum() && flo != 0.0 && fhi != 0.0 {
            lo = p;
            hi = q;
            flo = m(p)?;
            fhi = m(q)?;
        }
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            let fm = m(mid)?;
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                flo = 0.0;
                fhi = 0.0;
                break;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
                fhi = fm;
            }
        }
        let (zero, value) = if flo.abs() <= fhi.abs() { (lo, flo) } else { (hi, fhi) };
        let h = 1e-5;
        let slope = (m(zero + h)? - m(zero - h)?) / (2.0 * h);
        out.push(ZeroInfo {
            k: cert.first_index + i as i64,
            pair: (p, q),
            bracket: (lo, hi),
            zero,
            value,
            slope,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceMode {
    /// Gap `> Λ¹ + K0(1+ν)|ln ε|`.
    TandKnu,
    /// Gap `> max(B_{j+1}, B_j) + K0(1+ν)|ln ε|`.
    TandKnunew,
}

impl std::str::FromStr for SequenceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tandknu" | "nu" | "bounded" => Ok(SequenceMode::TandKnu),
            "tandknunew" | "new" | "unbounded" => Ok(SequenceMode::TandKnunew),
            _ => Err(format!("unknown sequence mode `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceOptions {
    /// Level fraction for the brackets `a↑`, `a↓`.
    pub delta: f64,
    /// Half-width of a degenerate zero set (0 for isolated zeros).
    pub lambda0: f64,
    /// Largest admissible ε (exclusive).
    pub eps0: f64,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions {
            delta: 0.5,
            lambda0: 0.0,
            eps0: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSequence {
    /// `T_j` for `j = j_min, …`.
    pub t: Vec<f64>,
    pub j_min: i64,
    /// `(β_j, β′_j)`.
    pub brackets: Vec<(f64, f64)>,
    /// `B_j = β′_j − β_j`.
    pub gaps_b: Vec<f64>,
    pub mode: SequenceMode,
    pub nu: f64,
    pub eps: f64,
    pub k0: f64,
    pub c_bar: f64,
    pub lambda0: f64,
    pub lambda1: Option<f64>,
    /// Whether `Λ¹ < 1/10`.
    pub lambda1_small: Option<bool>,
    /// `C` with `|M′(T_{2j})| > C` on the selected zeros.
    pub slope_bound: Option<f64>,
    /// `(a↑_j, a↓_j)` for even indices, `None` when not found.
    pub level_brackets: Vec<Option<(f64, f64)>>,
    /// Linear lower envelope slope of `|M|` around the even zeros.
    pub omega_slope: Option<f64>,
}

impl TimeSequence {
    pub fn j_max(&self) -> i64 {
        self.j_min + self.t.len() as i64 - 1
    }

    fn idx(&self, j: i64) -> Option<usize> {
        usize::try_from(j - self.j_min).ok().filter(|&k| k < self.t.len())
    }

    pub fn get(&self, j: i64) -> Option<f64> {
        self.idx(j).map(|k| self.t[k])
    }

    pub fn bracket(&self, j: i64) -> Option<(f64, f64)> {
        self.idx(j).map(|k| self.brackets[k])
    }

    pub fn b_gap(&self, j: i64) -> Option<f64> {
        self.idx(j).map(|k| self.gaps_b[k])
    }

    /// Smallest consecutive gap `T_{j+1} − T_j` (infinite for fewer than two times).
    pub fn min_gap(&self) -> f64 {
        self.t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn log_term(&self) -> f64 {
        self.k0 * (1.0 + self.nu) * self.eps.ln().abs()
    }

    /// Required lower bound for `T_{j+1} − T_j`.
    pub fn required_gap(&self, j: i64) -> Option<f64> {
        let extra = match self.mode {
            SequenceMode::TandKnu => self.lambda1.unwrap_or(0.0),
            SequenceMode::TandKnunew => self.b_gap(j)?.max(self.b_gap(j + 1)?),
        };
        Some(extra + self.log_term())
    }

    /// Independent re-check of the gap inequalities with margin `margin`.
    pub fn check(&self, margin: f64) -> Result<(), RecurrenceError> {
        for j in self.j_min..self.j_max() {
            let gap = self.get(j + 1).unwrap() - self.get(j).unwrap();
            let required = self.required_gap(j).unwrap();
            if gap <= required + margin {
                return Err(RecurrenceError::GapViolation { j, gap, required });
            }
        }
        for k in 0..self.t.len() {
            let (a, b) = self.brackets[k];
            if !(a < self.t[k] && self.t[k] < b) {
                return Err(RecurrenceError::Invalid(format!("T_{} outside its bracket", self.j_min + k as i64)));
            }
        }
        Ok(())
    }

    /// Copy with indices shifted by `s`: `T'_j = T_{j+s}`.
    pub fn shifted(&self, s: i64) -> TimeSequence {
        let mut out = self.clone();
        out.j_min = self.j_min - s;
        out
    }

    /// `Δ` gap between two indices.
    pub fn span(&self, j0: i64, j1: i64) -> Option<f64> {
        Some(self.get(j1)? - self.get(j0)?)
    }
}

fn level_crossing(
    m: &(dyn Fn(f64) -> Result<f64, MelnikovError> + Sync),
    from: f64,
    dir: f64,
    level: f64,
    limit: f64,
) -> Result<Option<f64>, MelnikovError> {
    // March away from the zero until |M| reaches the level, then bisect.
    let step = 1e-3;
    let mut a = from;
    let mut fa = m(a)?.abs() - level;
    loop {
        let b = a + dir * step;
        if (b - limit) * dir > 0.0 {
            return Ok(None);
        }
        let fb = m(b)?.abs() - level;
        if fa < 0.0 && fb >= 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if m(mid)?.abs() - level < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(0.5 * (lo + hi)));
        }
        a = b;
        fa = fb;
    }
}

/// Fill in brackets, `Λ¹`, the slope bound and `(a↑, a↓)` for a chosen set
/// of times.
#[allow(clippy::too_many_arguments)]
fn assemble(
    t: Vec<f64>,
    j_min: i64,
    cert: &P1Certificate,
    zeros: &[ZeroInfo],
    eps: f64,
    nu: f64,
    mode: SequenceMode,
    consts: &ConstantsTable,
    opts: &SequenceOptions,
    m: Option<&(dyn Fn(f64) -> Result<f64, MelnikovError> + Sync)>,
) -> Result<TimeSequence, RecurrenceError> {
    let mut brackets = Vec::with_capacity(t.len());
    for (k, &tj) in t.iter().enumerate() {
        let i = cert.pair_containing(tj).ok_or_else(|| {
            RecurrenceError::WindowExhausted(format!("T_{} = {tj} not covered by the certificate", j_min + k as i64))
        })?;
        brackets.push((cert.get(i).unwrap(), cert.get(i + 1).unwrap()));
    }
    let gaps_b = brackets.iter().map(|(a, b)| b - a).collect();
    // Slopes at the even-index zeros.
    let mut slopes = Vec::new();
    for (k, &tj) in t.iter().enumerate() {
        if (j_min + k as i64).rem_euclid(2) == 0 {
            if let Some(z) = zeros.iter().find(|z| (z.zero - tj).abs() < 1e-6) {
                slopes.push(z.slope.abs());
            } else if let Some(m) = m {
                let h = 1e-5;
                slopes.push(((m(tj + h)? - m(tj - h)?) / (2.0 * h)).abs());
            }
        }
    }
    let min_slope = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let slope_bound = (min_slope.is_finite() && min_slope > 0.0).then_some(0.9 * min_slope);
    let lambda1 = slope_bound.map(|c| 2.0 * (cert.c_bar / c) * opts.delta);
    let mut level_brackets = Vec::with_capacity(t.len());
    let mut omega: Option<f64> = None;
    for (k, &tj) in t.iter().enumerate() {
        let even = (j_min + k as i64).rem_euclid(2) == 0;
        let lb = match (even, m) {
            (true, Some(m)) => {
                let (b_lo, b_hi) = brackets[k];
                let level = opts.delta * cert.c_bar;
                let up = level_crossing(m, tj - opts.lambda0, -1.0, level, b_lo)?;
                let down = level_crossing(m, tj + opts.lambda0, 1.0, level, b_hi)?;
                match (up, down) {
                    (Some(a), Some(b)) => {
                        // Linear lower envelope |M(T+h)| >= w|h| on the bracket.
                        for i in 1..=20 {
                            for (x, hh) in [(tj - (tj - a) * i as f64 / 20.0, (tj - a) * i as f64 / 20.0), (tj + (b - tj) * i as f64 / 20.0, (b - tj) * i as f64 / 20.0)] {
                                let w = m(x)?.abs() / hh;
                                omega = Some(omega.map_or(w, |o: f64| o.min(w)));
                            }
                        }
                        Some((a, b))
                    }
                    _ => None,
                }
            }
            _ => None,
        };
        level_brackets.push(lb);
    }
    let seq = TimeSequence {
        t,
        j_min,
        brackets,
        gaps_b,
        mode,
        nu,
        eps,
        k0: consts.k0,
        c_bar: cert.c_bar,
        lambda0: opts.lambda0,
        lambda1,
        lambda1_small: lambda1.map(|l| l < 0.1),
        slope_bound,
        level_brackets,
        omega_slope: omega,
    };
    Ok(seq)
}

fn check_inputs(eps: f64, nu: f64, consts: &ConstantsTable, opts: &SequenceOptions) -> Result<(), RecurrenceError> {
    if !(eps > 0.0 && eps < opts.eps0) {
        return Err(RecurrenceError::Invalid(format!("eps = {eps} outside (0, {})", opts.eps0)));
    }
    if nu < consts.nu0 {
        return Err(RecurrenceError::Invalid(format!("nu = {nu} below nu0 = {}", consts.nu0)));
    }
    if !(opts.delta > 0.0 && opts.delta < 1.0) {
        return Err(RecurrenceError::Invalid("delta must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Greedy selection of zeros with minimal admissible gaps, `T_0` being the
/// zero in `]b_0, b_1[`; `window_count` indices on each side of 0.
#[allow(clippy::too_many_arguments)]
pub fn build_time_sequence(
    cert: &P1Certificate,
    zeros: &[ZeroInfo],
    eps: f64,
    nu: f64,
    mode: SequenceMode,
    window_count: usize,
    consts: &ConstantsTable,
    opts: &SequenceOptions,
    m: Option<&(dyn Fn(f64) -> Result<f64, MelnikovError> + Sync)>,
) -> Result<TimeSequence, RecurrenceError> {
    check_inputs(eps, nu, consts, opts)?;
    let z0 = zeros
        .iter()
        .position(|z| z.k == 0)
        .ok_or_else(|| RecurrenceError::WindowExhausted("no zero between b_0 and b_1".into()))?;
    let log_term = consts.k0 * (1.0 + nu) * eps.ln().abs();
    // Λ¹ from the slopes of all candidate zeros (the selection only shrinks the set).
    let min_slope = zeros.iter().map(|z| z.slope.abs()).fold(f64::INFINITY, f64::min);
    let lambda1 = if min_slope > 0.0 && min_slope.is_finite() {
        2.0 * (cert.c_bar / (0.9 * min_slope)) * opts.delta
    } else {
        0.0
    };
    let b = |z: &ZeroInfo| z.pair.1 - z.pair.0;
    let need = |a: &ZeroInfo, c: &ZeroInfo| match mode {
        SequenceMode::TandKnu => lambda1 + log_term,
        SequenceMode::TandKnunew => b(a).max(b(c)) + log_term,
    };
    let margin = 1e-6;
    let mut fwd = vec![z0];
    while fwd.len() <= window_count {
        let cur = &zeros[*fwd.last().unwrap()];
        let next = (fwd.last().unwrap() + 1..zeros.len()).find(|&i| zeros[i].zero - cur.zero > need(cur, &zeros[i]) + margin);
        match next {
            Some(i) => fwd.push(i),
            None => {
                return Err(RecurrenceError::WindowExhausted(format!(
                    "only {} forward indices fit in the certified window",
                    fwd.len() - 1
                )))
            }
        }
    }
    let mut bwd = vec![z0];
    while bwd.len() <= window_count {
        let cur = &zeros[*bwd.last().unwrap()];
        let prev = (0..*bwd.last().unwrap()).rev().find(|&i| cur.zero - zeros[i].zero > need(&zeros[i], cur) + margin);
        match prev {
            Some(i) => bwd.push(i),
            None => {
                return Err(RecurrenceError::WindowExhausted(format!(
                    "only {} backward indices fit in the certified window",
                    bwd.len() - 1
                )))
            }
        }
    }
    let mut idx: Vec<usize> = bwd.iter().rev().copied().collect();
    idx.extend(fwd.iter().skip(1));
    let t: Vec<f64> = idx.iter().map(|&i| zeros[i].zero).collect();
    let sel: Vec<ZeroInfo> = idx.iter().map(|&i| zeros[i]).collect();
    let mut seq = assemble(t, -(window_count as i64), cert, &sel, eps, nu, mode, consts, opts, m)?;
    if mode == SequenceMode::TandKnu {
        seq.lambda1 = Some(lambda1);
        seq.lambda1_small = Some(lambda1 < 0.1);
    }
    seq.check(1e-9)?;
    Ok(seq)
}

/// `T_j = t0 + j·gap` for `|j| ≤ window_count`, with the even entries checked
/// to be zeros of `M` (within `zero_tol`).
#[allow(clippy::too_many_arguments)]
pub fn periodic_sequence(
    cert: &P1Certificate,
    t0: f64,
    gap: f64,
    eps: f64,
    nu: f64,
    mode: SequenceMode,
    window_count: usize,
    consts: &ConstantsTable,
    opts: &SequenceOptions,
    m: &(dyn Fn(f64) -> Result<f64, MelnikovError> + Sync),
    zero_tol: f64,
) -> Result<TimeSequence, RecurrenceError> {
    check_inputs(eps, nu, consts, opts)?;
    let n = window_count as i64;
    let t: Vec<f64> = (-n..=n).map(|j| t0 + j as f64 * gap).collect();
    for (k, &tj) in t.iter().enumerate() {
        let j = k as i64 - n;
        if j.rem_euclid(2) == 0 {
            let v = m(tj)?;
            if v.abs() > zero_tol {
                return Err(RecurrenceError::Invalid(format!("M(T_{j}) = {v:e} is not a zero")));
            }
        }
    }
    let b0 = cert.get(0).unwrap_or(f64::NAN);
    let b1 = cert.get(1).unwrap_or(f64::NAN);
    if !(t0 >= b0 && t0 <= b1) {
        return Err(RecurrenceError::Invalid(format!("T_0 = {t0} outside [b_0, b_1] = [{b0}, {b1}]")));
    }
    let seq = assemble(t, -n, cert, &[], eps, nu, mode, consts, opts, Some(m))?;
    seq.check(1e-9)?;
    Ok(seq)
}

/// Sample check that `g(t + period) = g(t)` for the perturbation.
pub fn is_periodic(sys: &PiecewiseSystem, period: f64) -> bool {
    for i in 0..200 {
        let t = -50.0 + 0.5123 * i as f64;
        let x = [0.3 + 0.01 * (i % 7) as f64, -0.2 + 0.03 * (i % 5) as f64];
        for eps in [0.0, 1e-3] {
            match (sys.g(t, x, eps), sys.g(t + period, x, eps)) {
                (Ok(a), Ok(b)) => {
                    if (a[0] - b[0]).abs() > 1e-12 * (1.0 + a[0].abs()) || (a[1] - b[1]).abs() > 1e-12 * (1.0 + a[1].abs()) {
                        return false;
                    }
                }
                _ => return false,
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melnikov::{c1, melnikov_profile, Melnikov, MelnikovMode, MelnikovOptions};
    use crate::spectral::{analyze_origin, derived_constants};
    use crate::system::{builtin_example, HomoclinicReference, Params};
    use std::f64::consts::PI;

    fn ex1() -> (PiecewiseSystem, HomoclinicReference) {
        let (s, h) = builtin_example("ex1", &Params::new()).unwrap();
        (s, h.unwrap())
    }

    fn consts(s: &PiecewiseSystem, h: &HomoclinicReference) -> ConstantsTable {
        derived_constants(&analyze_origin(s, Some(h)).unwrap())
    }

    fn closed(tau: f64) -> Result<f64, MelnikovError> {
        Ok(c1() * (2.0 * PI * tau).sin())
    }

    fn closed_profile(a: f64, b: f64, step: f64) -> MelnikovProfile {
        let n = ((b - a) / step).round() as usize;
        let v = (0..=n).map(|i| closed(a + step * i as f64).unwrap()).collect();
        MelnikovProfile::from_samples(a, step, v, MelnikovMode::SimplifiedTraceFree)
    }

    #[test]
    fn ex1_certificate() {
        let (s, h) = ex1();
        let o = MelnikovOptions::with_mode(MelnikovMode::SimplifiedTraceFree);
        let p = melnikov_profile(&s, &h, (-1.0, 1.0), 0.01, &o, false).unwrap();
        let c = verify_p1(&p, 0.1, &P1Options::default()).unwrap();
        for i in c.first_index..=c.last_index() {
            let want = -0.25 + 0.5 * i as f64;
            assert!((c.get(i).unwrap() - want).abs() < 1e-9, "b_{i} = {:?}", c.get(i));
        }
        assert_eq!(c.get(0), Some(-0.25));
        for w in c.b.windows(2) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_profile_fails() {
        let p = MelnikovProfile::from_samples(0.0, 0.1, vec![0.0; 50], MelnikovMode::FullTrace);
        assert!(matches!(
            verify_p1(&p, 0.05, &P1Options::default()),
            Err(RecurrenceError::CertificateFails { .. })
        ));
    }

    #[test]
    fn sub_window_requirement() {
        // Long quiet stretch in the middle.
        let v: Vec<f64> = (0..=400)
            .map(|i| {
                let t = i as f64 * 0.05;
                if (5.0..15.0).contains(&t) {
                    0.0
                } else {
                    (2.0 * PI * t).sin()
                }
            })
            .collect();
        let p = MelnikovProfile::from_samples(0.0, 0.05, v, MelnikovMode::FullTrace);
        assert!(verify_p1(&p, 0.5, &P1Options::default()).is_ok());
        let o = P1Options {
            sub_window: 4.0,
            ..Default::default()
        };
        assert!(matches!(verify_p1(&p, 0.5, &o), Err(RecurrenceError::CertificateFails { .. })));
    }

    #[test]
    fn ex1_zeros_and_slopes() {
        let p = closed_profile(-1.0, 1.0, 0.01);
        let c = verify_p1(&p, 0.1, &P1Options::default()).unwrap();
        let z = locate_zeros(&p, &c, &closed).unwrap();
        assert_eq!(z.len(), c.b.len() - 1);
        for zi in &z {
            let j = (zi.zero * 2.0).round();
            assert!((zi.zero - j / 2.0).abs() < 1e-9);
            assert!((zi.slope.abs() - 2.0 * PI * c1()).abs() < 1e-6);
            assert!(zi.value.abs() <= 1e-8 * c.c_bar);
        }
    }

    #[test]
    fn linear_function_zero() {
        let m = |t: f64| -> Result<f64, MelnikovError> { Ok(t) };
        let p = MelnikovProfile::from_samples(-1.0, 0.01, (0..=200).map(|i| -1.0 + 0.01 * i as f64).collect(), MelnikovMode::FullTrace);
        let c = P1Certificate {
            c_bar: 0.5,
            b: vec![-1.0, 1.0],
            first_index: 0,
            window: (-1.0, 1.0),
        };
        let z = locate_zeros(&p, &c, &m).unwrap();
        assert_eq!(z.len(), 1);
        assert!(z[0].zero.abs() < 1e-10);
        assert!((z[0].slope - 1.0).abs() < 1e-9);
    }

    #[test]
    fn periodic_sequence_with_gap_43() {
        let (s, h) = ex1();
        let k = consts(&s, &h);
        assert!(is_periodic(&s, 1.0));
        let p = closed_profile(-1.0, 1.0, 0.01);
        let c = verify_p1(&p, 0.05, &P1Options::default()).unwrap();
        let c = c.periodic_extension(1.0, -200.0, 200.0).unwrap();
        assert_eq!(c.get(0), Some(-0.25));
        assert_eq!(c.get(7), Some(3.25));
        let gap = crate::spectral::ogap(k.k0, 1.0, 1e-3);
        assert_eq!(gap, 43.0);
        let seq = periodic_sequence(&c, 0.0, gap, 1e-3, 1.0, SequenceMode::TandKnu, 3, &k, &SequenceOptions::default(), &closed, 1e-9).unwrap();
        assert_eq!(seq.get(2), Some(86.0));
        assert_eq!(seq.bracket(0), Some((-0.25, 0.25)));
        assert_eq!(seq.b_gap(1), Some(0.5));
        assert!(seq.lambda1_small.unwrap());
        let (a, b) = seq.level_brackets[3].unwrap();
        assert!(a < 0.0 && b > 0.0 && b - a <= seq.lambda1.unwrap());
        // Also fine under the second gap rule.
        periodic_sequence(&c, 0.0, gap, 1e-3, 1.0, SequenceMode::TandKnunew, 3, &k, &SequenceOptions::default(), &closed, 1e-9).unwrap();
        // 42 is too small: 6 ln 1000 ≈ 41.4 plus max(B) = 0.5.
        assert!(matches!(
            periodic_sequence(&c, 0.0, 41.5, 1e-3, 1.0, SequenceMode::TandKnunew, 2, &k, &SequenceOptions::default(), &|_| Ok(0.0), 1e-9),
            Err(RecurrenceError::GapViolation { .. })
        ));
    }

    #[test]
    fn greedy_sequence_is_minimal_and_admissible() {
        let (s, h) = ex1();
        let k = consts(&s, &h);
        let p = closed_profile(-1.0, 1.0, 0.01);
        let c = verify_p1(&p, 0.05, &P1Options::default()).unwrap().periodic_extension(1.0, -100.0, 100.0).unwrap();
        let pz = closed_profile(-101.0, 101.0, 0.01);
        let z = locate_zeros(&pz, &c, &closed).unwrap();
        let seq = build_time_sequence(&c, &z, 1e-3, 1.0, SequenceMode::TandKnu, 2, &k, &SequenceOptions::default(), Some(&closed)).unwrap();
        assert_eq!(seq.get(0).map(|t| t.abs() < 1e-9), Some(true));
        for j in -2..2 {
            let g = seq.get(j + 1).unwrap() - seq.get(j).unwrap();
            let req = seq.required_gap(j).unwrap();
            assert!(g > req && g <= req + 0.5 + 1e-6, "j={j} gap={g} req={req}");
        }
        seq.check(1e-9).unwrap();
        let again = build_time_sequence(&c, &z, 1e-3, 1.0, SequenceMode::TandKnu, 2, &k, &SequenceOptions::default(), Some(&closed)).unwrap();
        assert_eq!(seq, again);
    }

    #[test]
    fn large_eps_makes_consecutive_zeros_admissible() {
        let (s, h) = ex1();
        let k = consts(&s, &h);
        let p = closed_profile(-3.0, 3.0, 0.01);
        let c = verify_p1(&p, 0.05, &P1Options::default()).unwrap();
        let z = locate_zeros(&p, &c, &closed).unwrap();
        let eps = 0.95;
        assert!(k.k0 * 2.0 * f64::ln(eps).abs() < 0.5);
        let seq = build_time_sequence(&c, &z, eps, 1.0, SequenceMode::TandKnu, 3, &k, &SequenceOptions::default(), None).unwrap();
        for j in -3..3 {
            let g = seq.get(j + 1).unwrap() - seq.get(j).unwrap();
            assert!((g - 0.5).abs() < 1e-9, "{g}");
        }
    }

    #[test]
    fn window_exhaustion() {
        let (s, h) = ex1();
        let k = consts(&s, &h);
        let p = closed_profile(-3.0, 3.0, 0.01);
        let c = verify_p1(&p, 0.05, &P1Options::default()).unwrap();
        let z = locate_zeros(&p, &c, &closed).unwrap();
        assert!(matches!(
            build_time_sequence(&c, &z, 1e-3, 1.0, SequenceMode::TandKnu, 1, &k, &SequenceOptions::default(), None),
            Err(RecurrenceError::WindowExhausted(_))
        ));
    }

    #[test]
    fn exgen_certificate_and_zero() {
        let mut prm = Params::new();
        prm.insert("r".into(), "2".into());
        let (s, h) = builtin_example("exgen", &prm).unwrap();
        let h = h.unwrap();
        let o = MelnikovOptions::with_mode(MelnikovMode::SimplifiedTraceFree);
        let p = melnikov_profile(&s, &h, (-210.0, 210.0), 0.1, &o, false).unwrap();
        let c = verify_p1(&p, 1.0 / 6.0, &P1Options::default()).unwrap();
        let m = Melnikov::new(&s, &h, o).unwrap();
        let formula = |j: i64| {
            let u = PI * (2 * j - 1) as f64 / 2.0;
            (2 * j - 1).signum() as f64 * u * u
        };
        for j in -2..=3 {
            let bj = formula(j);
            let v = m.value(bj).unwrap().value;
            if j.rem_euclid(2) == 0 {
                assert!(v < -1.0 / 6.0, "M(b_{j}) = {v}");
            } else {
                assert!(v > 1.0 / 6.0, "M(b_{j}) = {v}");
            }
            let found = c.get(j).unwrap();
            let gap = formula(j + 1) - bj;
            assert!((found - bj).abs() < 0.25 * gap, "b_{j}: {found} vs {bj}");
        }
        let mf = |t: f64| m.value(t).map(|v| v.value);
        let z = locate_zeros(&p, &c, &mf).unwrap();
        let z0 = z.iter().find(|z| z.k == 0).unwrap();
        assert!(z0.zero.abs() < 1e-9);
        assert!((z0.slope - 0.023).abs() < 0.002);
        let k = consts(&s, &h);
        // Gaps grow with the index: B_0 = π²/2 and the next usable zero is (3π)².
        let seq = build_time_sequence(&c, &z, 0.5, 1.0, SequenceMode::TandKnunew, 1, &k, &SequenceOptions::default(), None).unwrap();
        let b0 = seq.bracket(0).unwrap();
        assert!((b0.1 - b0.0 - PI * PI / 2.0).abs() < 1.0);
        let (lo, hi) = (formula(3), formula(4));
        assert!(seq.get(1).unwrap() > lo && seq.get(1).unwrap() < hi, "{:?}", seq.t);
        assert!(-seq.get(-1).unwrap() > lo && -seq.get(-1).unwrap() < hi);
    }
}
