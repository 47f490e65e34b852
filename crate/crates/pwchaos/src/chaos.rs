//! Finite-window itinerary construction: chained loop-map searches forward
//! and backward in time, gluing over the initial time, shadowing checks and
//! finite-depth shift commutation.
//!
//! Offsets of order `e^{-T}` are far below double resolution at `O(1)`
//! coordinates, so a searched orbit is stored as a chain of stages. Each
//! stage starts on a leaf endpoint at the previous return time and is
//! solved so that its own return lands on the next leaf. The exact orbit
//! differs from the chain by the (unrepresentable) next-stage offsets; the
//! nested parameter intervals are reported through the chain rule.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leaves::{
    leaf_endpoints, loop_map_side, needed_horizon, stable_leaf, LeafError, LeafMethod, LeafOptions, LeafOrbit, LoopContext,
    LoopMapOptions, Orientation, Segment,
};
use crate::melnikov::{melnikov_profile, Melnikov, MelnikovError, MelnikovMode, MelnikovOptions};
use crate::recurrence::{periodic_sequence, verify_p1, P1Options, RecurrenceError, SequenceMode, SequenceOptions, TimeSequence};
use crate::spectral::ConstantsTable;
use crate::system::{HomoclinicReference, PiecewiseSystem, Region, Vec2};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ChaosError {
    #[error("hypotheses fail, refusing to search: {0}")]
    Hypotheses(String),
    #[error("bracket lost at stage {stage}: {detail}")]
    BracketLost { stage: usize, detail: String },
    #[error("no sign change of the glue function: g(b0) = {g_b0:e}, g(b1) = {g_b1:e}")]
    NoSignChange { g_b0: f64, g_b1: f64 },
    #[error("window j={j} has symbol 1 but no crossing of L0")]
    MissingCrossing { j: i64 },
    #[error("tolerance unmet: {0}")]
    ToleranceUnmet(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Leaf(#[from] LeafError),
    #[error(transparent)]
    Melnikov(#[from] MelnikovError),
    #[error(transparent)]
    Recurrence(#[from] RecurrenceError),
}

impl From<ChaosError> for String {
    fn from(e: ChaosError) -> String {
        e.to_string()
    }
}

fn norm(x: Vec2) -> f64 {
    x[0].hypot(x[1])
}

/// Binary symbols `e_j` for `j ∈ [j_min, j_min + len)`; zero outside.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolWindow {
    pub j_min: i64,
    pub symbols: Vec<u8>,
}

impl SymbolWindow {
    pub fn new(j_min: i64, symbols: Vec<u8>) -> Result<SymbolWindow, ChaosError> {
        if symbols.is_empty() {
            return Err(ChaosError::Invalid("empty symbol window".into()));
        }
        if symbols.iter().any(|&s| s > 1) {
            return Err(ChaosError::Invalid("symbols must be 0 or 1".into()));
        }
        Ok(SymbolWindow { j_min, symbols })
    }

    /// Parse an odd-length string of `0`/`1` centred on index 0.
    pub fn centered(text: &str) -> Result<SymbolWindow, ChaosError> {
        let symbols: Vec<u8> = text
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(ChaosError::Invalid(format!("bad symbol `{c}` in `{text}`"))),
            })
            .collect::<Result<_, _>>()?;
        if symbols.len() % 2 == 0 {
            return Err(ChaosError::Invalid(format!("`{text}` must have odd length")));
        }
        let m = (symbols.len() / 2) as i64;
        SymbolWindow::new(-m, symbols)
    }

    pub fn j_max(&self) -> i64 {
        self.j_min + self.symbols.len() as i64 - 1
    }

    pub fn get(&self, j: i64) -> u8 {
        usize::try_from(j - self.j_min)
            .ok()
            .and_then(|k| self.symbols.get(k).copied())
            .unwrap_or(0)
    }

    /// Indices with symbol 1 strictly after 0, increasing.
    pub fn forward_ones(&self) -> Vec<i64> {
        (1..=self.j_max()).filter(|&j| self.get(j) == 1).collect()
    }

    /// Indices with symbol 1 strictly before 0, decreasing.
    pub fn backward_ones(&self) -> Vec<i64> {
        (self.j_min..0).rev().filter(|&j| self.get(j) == 1).collect()
    }

    /// Shift `(σe)_j = e_{j+1}`.
    pub fn shift(&self) -> SymbolWindow {
        SymbolWindow {
            j_min: self.j_min - 1,
            symbols: self.symbols.clone(),
        }
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().map(|s| if *s == 1 { '1' } else { '0' }).collect()
    }

    /// All centred windows of length `2m + 1` with a 1 at the centre.
    pub fn all_centered(m: usize) -> Vec<SymbolWindow> {
        let n = 2 * m;
        (0..1u32 << n)
            .map(|bits| {
                let mut s: Vec<u8> = (0..n).map(|i| ((bits >> (n - 1 - i)) & 1) as u8).collect();
                s.insert(m, 1);
                SymbolWindow {
                    j_min: -(m as i64),
                    symbols: s,
                }
            })
            .collect()
    }
}

/// `d(e, e′) = Σ_m |e_m − e′_m| / 2^{|m|+1}` over the union of the windows.
pub fn metric(a: &SymbolWindow, b: &SymbolWindow) -> f64 {
    let lo = a.j_min.min(b.j_min);
    let hi = a.j_max().max(b.j_max());
    (lo..=hi)
        .map(|m| (a.get(m) as f64 - b.get(m) as f64).abs() / 2f64.powi(m.unsigned_abs() as i32 + 1))
        .sum()
}

/// Bracketed root by the Illinois variant of regula falsi. `fa` and `fb`
/// must have opposite signs.
pub fn illinois<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<(f64, f64, usize), E> {
    if fa == 0.0 {
        return Ok((a, fa, 0));
    }
    if fb == 0.0 {
        return Ok((b, fb, 0));
    }
    let mut side = 0i8;
    for it in 0..max_iter {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        if fc == 0.0 || (b - a).abs() <= xtol {
            return Ok((c, fc, it + 1));
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() <= xtol {
            let (x, fx) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
            return Ok((x, fx, it + 1));
        }
    }
    let (x, fx) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    Ok((x, fx, max_iter))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub nu: f64,
    /// Shadow tolerance for the property-C check.
    pub tol: f64,
    /// Hit targets inside a bracket, as fractions of its width from each end.
    pub inset: f64,
    /// Samples for the τ sweep of the glue function.
    pub sweep_samples: usize,
    /// τ tolerance of the glue bisection.
    pub tau_tol: f64,
    /// Sampling step for verification.
    pub sample_step: f64,
    /// Extra samples used to check monotonicity of the fly time.
    pub monotone_samples: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            nu: 1.0,
            tol: 0.05,
            inset: 0.05,
            sweep_samples: 32,
            tau_tol: 1e-12,
            sample_step: 0.01,
            monotone_samples: 4,
        }
    }
}

/// Everything a search needs at one `ε`.
#[derive(Clone, Debug)]
pub struct ChaosSetup {
    pub ctx: LoopContext,
    pub seq: TimeSequence,
    pub opts: SearchOptions,
}

impl ChaosSetup {
    /// Refuses when any spectral hypothesis fails or the scenario is not 1.
    pub fn new(
        sys: &PiecewiseSystem,
        hom: &HomoclinicReference,
        eps: f64,
        seq: TimeSequence,
        leaf_opts: LeafOptions,
        opts: SearchOptions,
    ) -> Result<ChaosSetup, ChaosError> {
        if !(eps > 0.0) {
            return Err(ChaosError::Invalid("eps must be positive".into()));
        }
        let ctx = LoopContext::new(sys, hom, eps, leaf_opts).map_err(|e| match e {
            LeafError::Hypotheses(s) => ChaosError::Hypotheses(s),
            other => ChaosError::Leaf(other),
        })?;
        Ok(ChaosSetup { ctx, seq, opts })
    }

    pub fn consts(&self) -> &ConstantsTable {
        &self.ctx.consts
    }

    fn bracket(&self, o: Orientation, j: i64) -> Result<(f64, f64), ChaosError> {
        let (a, b) = self
            .seq
            .bracket(j)
            .ok_or_else(|| ChaosError::Invalid(format!("sequence lacks index {j}")))?;
        Ok(match o {
            Orientation::Forward => (a, b),
            Orientation::Backward => (-b, -a),
        })
    }

    fn t(&self, j: i64) -> Result<f64, ChaosError> {
        self.seq
            .get(j)
            .ok_or_else(|| ChaosError::Invalid(format!("sequence lacks index {j}")))
    }
}

/// Periodic sequence `T_j = t0 + j·gap` with the certificate taken from one
/// period of the sampled Melnikov function.
#[allow(clippy::too_many_arguments)]
pub fn periodic_time_sequence(
    sys: &PiecewiseSystem,
    hom: &HomoclinicReference,
    consts: &ConstantsTable,
    eps: f64,
    nu: f64,
    t0: f64,
    gap: f64,
    period: f64,
    window_count: usize,
    mode: SequenceMode,
    c_bar: f64,
) -> Result<TimeSequence, ChaosError> {
    let mopts = MelnikovOptions::with_mode(MelnikovMode::FullTrace);
    let profile = melnikov_profile(sys, hom, (t0 - 1.5 * period, t0 + 1.5 * period), period / 200.0, &mopts, false)?;
    let cert = verify_p1(&profile, c_bar, &P1Options::default())?;
    let reach = gap * (window_count as f64 + 1.0) + period;
    let cert = cert.periodic_extension(period, t0 - reach, t0 + reach)?;
    let mel = Melnikov::new(sys, hom, mopts)?;
    let m = |t: f64| mel.value(t).map(|v| v.value);
    Ok(periodic_sequence(
        &cert,
        t0,
        gap,
        eps,
        nu,
        mode,
        window_count,
        consts,
        &SequenceOptions::default(),
        &m,
        1e-8,
    )?)
}

/// One solved stage, times in the original clock.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub orientation: Orientation,
    /// Symbol index `k` with target `T_{2k}`.
    pub symbol: i64,
    pub tau: f64,
    pub target: f64,
    pub bracket: (f64, f64),
    pub ln_d: f64,
    pub t_half: f64,
    pub t1: f64,
    pub p1: Vec2,
    /// Residual `D(𝒫₁, leaf endpoint)` at the solution.
    pub residual: f64,
    /// `∂/∂ ln d` of that offset.
    pub dphi_dlnd: f64,
    /// Offsets and Melnikov values at the two bracket-side samples.
    pub phi_ends: (f64, f64),
    pub m_ends: Option<(f64, f64)>,
    /// Sign law: the return offset has the sign opposite to `M` at both ends.
    pub sign_law: Option<bool>,
    pub monotone: bool,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GapCheck {
    pub from: f64,
    pub to: f64,
    pub gap: f64,
    pub required: f64,
    pub ok: bool,
}

/// Result of a forward or backward search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub orientation: Orientation,
    pub tau: f64,
    /// `ln d` of the first stage; `None` means `d = 0` (the leaf itself).
    pub ln_d: Option<f64>,
    pub stages: Vec<StageRecord>,
    /// `log10` widths of the nested parameter intervals, starting with `J0`
    /// and ending with the tail condition (no further loop before the
    /// horizon).
    pub nested_log10_widths: Vec<f64>,
    /// `log10 |∂d_k/∂d_0|` for `k = 0, …, stages`.
    pub log10_gain: Vec<f64>,
    pub horizon: f64,
    pub nested_ok: bool,
    pub gap_checks: Vec<GapCheck>,
    #[serde(skip)]
    pub pieces: Vec<Piece>,
}

impl SearchResult {
    pub fn d(&self) -> f64 {
        self.ln_d.map_or(0.0, f64::exp)
    }

    pub fn log10_width(&self) -> f64 {
        *self.nested_log10_widths.last().unwrap()
    }
}

/// A segment of a side computation with its original-clock span.
#[derive(Clone, Debug)]
pub struct Piece {
    pub orientation: Orientation,
    pub seg: PieceKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug)]
pub enum PieceKind {
    Seg(Segment),
    /// Leaf orbit from its base time to infinity (side clock).
    Leaf(LeafOrbit),
}

impl Piece {
    fn new(o: Orientation, seg: PieceKind) -> Piece {
        let (a, b) = match &seg {
            PieceKind::Seg(s) => s.span(),
            PieceKind::Leaf(l) => (l.tau, f64::INFINITY),
        };
        let (lo, hi) = match o {
            Orientation::Forward => (a, b),
            Orientation::Backward => (-b, -a),
        };
        Piece {
            orientation: o,
            seg,
            lo,
            hi,
        }
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        let ts = self.orientation.map_time(t);
        match &self.seg {
            PieceKind::Seg(s) => s.eval(ts),
            PieceKind::Leaf(l) => l.eval(ts),
        }
    }
}

/// Solve one stage on a side: from `tau_s` (side clock) with leaf `leaf`,
/// find `ln d` whose return lands in `(lo, hi)` exactly on the next leaf.
#[allow(clippy::too_many_arguments)]
fn solve_stage(
    setup: &ChaosSetup,
    o: Orientation,
    stage: usize,
    symbol: i64,
    tau_s: f64,
    leaf: &LeafOrbit,
    (lo, hi): (f64, f64),
    mel: Option<&Melnikov>,
) -> Result<(StageRecord, Vec<Segment>), ChaosError> {
    let ctx = &setup.ctx;
    let sopts = &setup.opts;
    let lm_opts = LoopMapOptions {
        with_d1: true,
        with_return: false,
        strict: false,
        nu: sopts.nu,
        mu: None,
        record: false,
    };
    let sigma = match o {
        Orientation::Forward => ctx.consts.big_sigma_fwd,
        Orientation::Backward => ctx.consts.big_sigma_bwd,
    };
    let mut evals = 0usize;
    let mut eval = |u: f64| -> Result<(f64, f64), ChaosError> {
        evals += 1;
        let r = loop_map_side(ctx, o, u, tau_s, Some(leaf), &lm_opts)?;
        // Back to the side clock for the fly time.
        Ok((o.map_time(r.t1), r.d1.unwrap()))
    };
    let w = hi - lo;
    let err = |detail: String| ChaosError::BracketLost { stage, detail };
    // Secant on the fly time, starting from the logarithmic law.
    let mut hit = |target: f64| -> Result<(f64, f64, f64), ChaosError> {
        let mut u0 = -(target - tau_s) / sigma;
        let (mut t0, mut p0) = eval(u0)?;
        let mut u1 = u0 - (target - t0) / sigma;
        for _ in 0..40 {
            let (t1, p1) = eval(u1)?;
            if (t1 - target).abs() <= 0.1 * sopts.inset * w {
                return Ok((u1, t1, p1));
            }
            let slope = if (u1 - u0).abs() > 1e-12 { (t1 - t0) / (u1 - u0) } else { -sigma };
            let slope = if slope < 0.0 { slope } else { -sigma };
            let next = u1 + (target - t1) / slope;
            u0 = u1;
            t0 = t1;
            p0 = p1;
            u1 = next.clamp(u0 - 10.0, u0 + 10.0);
        }
        let _ = p0;
        Err(err(format!("fly time did not reach {target} from τ={tau_s}")))
    };
    let (u_lo, t_lo, phi_lo) = hit(lo + sopts.inset * w)?;
    let (u_hi, t_hi, phi_hi) = hit(hi - sopts.inset * w)?;
    if !(t_lo < t_hi && u_hi < u_lo) {
        return Err(err(format!("fly time not decreasing in ln d: T({u_lo})={t_lo}, T({u_hi})={t_hi}")));
    }
    let mut monotone = true;
    let mut prev = t_hi;
    for i in 1..=sopts.monotone_samples {
        let u = u_hi + (u_lo - u_hi) * i as f64 / (sopts.monotone_samples + 1) as f64;
        let (t, _) = eval(u)?;
        if t > prev {
            monotone = false;
        }
        prev = t;
    }
    if prev < t_lo {
        monotone = false;
    }
    if phi_lo.signum() == phi_hi.signum() {
        return Err(err(format!(
            "return offset keeps its sign over the bracket: {phi_lo:e} at T={t_lo}, {phi_hi:e} at T={t_hi}"
        )));
    }
    let mut phi = |u: f64| eval(u).map(|(_, p)| p);
    let xtol = 4.0 * f64::EPSILON * u_lo.abs().max(u_hi.abs());
    let (u_star, res, _) = illinois(&mut phi, u_hi, phi_hi, u_lo, phi_lo, xtol, 200)?;
    let h = 1e-4;
    let dphi = (phi(u_star + h)? - phi(u_star - h)?) / (2.0 * h);
    let rec_opts = LoopMapOptions { record: true, ..lm_opts };
    let r = loop_map_side(ctx, o, u_star, tau_s, Some(leaf), &rec_opts)?;
    let m_ends = mel.and_then(|m| Some((m.value(t_lo).ok()?.value, m.value(t_hi).ok()?.value)));
    let sign_law = m_ends.map(|(ma, mb)| ma.signum() == -phi_lo.signum() && mb.signum() == -phi_hi.signum());
    let rec = StageRecord {
        orientation: o,
        symbol,
        tau: o.map_time(tau_s),
        target: setup.t(2 * symbol)?,
        bracket: setup.seq.bracket(2 * symbol).unwrap(),
        ln_d: u_star,
        t_half: r.t_half,
        t1: r.t1,
        p1: r.p1,
        residual: res,
        dphi_dlnd: dphi,
        phi_ends: (phi_lo, phi_hi),
        m_ends,
        sign_law,
        monotone,
        evaluations: evals,
    };
    Ok((rec, r.segments))
}

/// Chained search on one side for the ones in `ones` (original symbol
/// indices, in the side's time order), starting at original time `tau`.
fn search_side(setup: &ChaosSetup, o: Orientation, ones: &[i64], tau: f64, horizon: f64) -> Result<SearchResult, ChaosError> {
    let ctx = &setup.ctx;
    let side = ctx.side(o);
    let lopts = &ctx.opts;
    let j0max = ctx.j0_max(setup.opts.nu);
    let mel = Melnikov::new(&side.sys, &side.hom, MelnikovOptions::with_mode(MelnikovMode::FullTrace)).ok();
    // Gap conditions between consecutive selected times.
    let mut gap_checks = Vec::new();
    let mut prev_k = 0i64;
    let lt = 2.0 * ctx.consts.k0 * (1.0 + setup.opts.nu) * ctx.eps.ln().abs();
    for &k in ones {
        let (a, b) = (setup.t(2 * prev_k)?, setup.t(2 * k)?);
        let req = lt + setup.seq.b_gap(2 * k).unwrap_or(0.0) + setup.seq.b_gap(2 * prev_k).unwrap_or(0.0);
        let gap = (b - a).abs();
        gap_checks.push(GapCheck {
            from: a,
            to: b,
            gap,
            required: req,
            ok: gap >= req,
        });
        prev_k = k;
    }
    let mut tau_s = o.map_time(tau);
    let mut stages = Vec::new();
    let mut pieces = Vec::new();
    let mut widths = vec![j0max.log10()];
    let mut gain = vec![0.0];
    for (n, &k) in ones.iter().enumerate() {
        let target_s = o.map_time(setup.t(2 * k)?);
        let (lo, hi) = setup.bracket(o, 2 * k)?;
        let u_min = -(hi - tau_s) / 0.5f64.min(ctx.consts.big_sigma_lo) - 10.0;
        let horizon = needed_horizon(side, u_min, lopts.eta).max(target_s - tau_s + 40.0);
        let leaf = stable_leaf(side, tau_s, ctx.eps, horizon, lopts)?;
        let (rec, segs) = solve_stage(setup, o, n + 1, k, tau_s, &leaf, (lo, hi), mel.as_ref())?;
        let ln_ratio = rec.dphi_dlnd.abs().ln() - rec.ln_d;
        gain.push(gain.last().unwrap() + ln_ratio / std::f64::consts::LN_10);
        widths.push(j0max.log10() - gain.last().unwrap());
        tau_s = o.map_time(rec.t1);
        pieces.extend(segs.into_iter().map(|s| Piece::new(o, PieceKind::Seg(s))));
        stages.push(rec);
    }
    // Offsets below e^{-Σ·(remaining time)} do not loop again before the
    // horizon.
    let big = match o {
        Orientation::Forward => ctx.consts.big_sigma_fwd,
        Orientation::Backward => ctx.consts.big_sigma_bwd,
    };
    let remaining = (o.map_time(horizon) - tau_s).max(0.0);
    let tail = (-remaining / big / std::f64::consts::LN_10).min(j0max.log10());
    widths.push(tail - gain.last().unwrap());
    let final_leaf = stable_leaf(side, tau_s, ctx.eps, lopts.endpoint_horizon.max(60.0), lopts)?;
    pieces.push(Piece::new(o, PieceKind::Leaf(final_leaf)));
    let nested_ok = widths.windows(2).all(|w| w[1] < w[0]);
    Ok(SearchResult {
        orientation: o,
        tau,
        ln_d: stages.first().map(|s| s.ln_d),
        stages,
        nested_log10_widths: widths,
        log10_gain: gain,
        horizon,
        nested_ok,
        gap_checks,
        pieces,
    })
}

/// Forward search for the ones of `e` with `j ≥ 1`.
pub fn search_forward(setup: &ChaosSetup, e: &SymbolWindow, tau: f64) -> Result<SearchResult, ChaosError> {
    let horizon = setup.t(2 * e.j_max().max(0) + 1)?;
    search_side(setup, Orientation::Forward, &e.forward_ones(), tau, horizon)
}

/// Backward search for the ones of `e` with `j ≤ −1`, via the time-reversed
/// system.
pub fn search_backward(setup: &ChaosSetup, e: &SymbolWindow, tau: f64) -> Result<SearchResult, ChaosError> {
    let horizon = setup.t(2 * e.j_min.min(0) - 1)?;
    search_side(setup, Orientation::Backward, &e.backward_ones(), tau, horizon)
}

/// Orbit assembled from a backward and a forward search at the same time.
#[derive(Clone, Debug)]
pub struct GluedOrbit {
    pub tau: f64,
    pieces: Vec<Piece>,
}

impl GluedOrbit {
    pub fn new(tau: f64, backward: &SearchResult, forward: &SearchResult) -> GluedOrbit {
        let mut pieces: Vec<Piece> = backward.pieces.iter().chain(&forward.pieces).cloned().collect();
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        GluedOrbit { tau, pieces }
    }
}

/// Read access to an orbit for verification.
pub trait OrbitView: Sync {
    fn eval(&self, t: f64) -> Option<Vec2>;
    fn span(&self) -> (f64, f64);
}

impl OrbitView for GluedOrbit {
    fn eval(&self, t: f64) -> Option<Vec2> {
        // Pieces are sorted by start; the last one starting at or before t
        // and still covering it wins.
        let idx = self.pieces.partition_point(|p| p.lo <= t);
        self.pieces[..idx].iter().rev().find(|p| t <= p.hi).map(|p| p.eval(t))
    }

    fn span(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// The equilibrium at the origin.
pub struct ZeroOrbit;

impl OrbitView for ZeroOrbit {
    fn eval(&self, _t: f64) -> Option<Vec2> {
        Some([0.0, 0.0])
    }

    fn span(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Orbit given by a recorded piecewise trajectory.
pub struct TrajectoryView<'a>(pub &'a crate::integrator::Trajectory);

impl OrbitView for TrajectoryView<'_> {
    fn eval(&self, t: f64) -> Option<Vec2> {
        let steps = &self.0.steps;
        let forward = steps.first()?.step.h >= 0.0;
        let idx = steps.partition_point(|s| if forward { s.step.t1() < t } else { s.step.t1() > t });
        steps.get(idx).filter(|s| s.step.contains(t)).map(|s| s.step.eval(t))
    }

    fn span(&self) -> (f64, f64) {
        let s = &self.0.steps;
        match (s.first(), s.last()) {
            (Some(a), Some(b)) => {
                let (x, y) = (a.step.t0, b.step.t1());
                (x.min(y), x.max(y))
            }
            _ => (0.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub x: Vec2,
    /// Region before the crossing.
    pub from: Region,
}

/// Sampled orbit with its crossings of the switching curve.
#[derive(Clone, Debug)]
pub struct SampledOrbit {
    pub t: Vec<f64>,
    pub x: Vec<Vec2>,
    pub crossings: Vec<Crossing>,
}

/// Sample `orbit` on `[lo, hi]` with step `h` and locate sign changes of
/// `G` by bisection.
pub fn sample_orbit(sys: &PiecewiseSystem, orbit: &dyn OrbitView, lo: f64, hi: f64, h: f64) -> Result<SampledOrbit, ChaosError> {
    let (a, b) = orbit.span();
    if lo < a || hi > b {
        return Err(ChaosError::Invalid(format!("orbit spans [{a}, {b}], need [{lo}, {hi}]")));
    }
    let n = ((hi - lo) / h).ceil() as usize;
    let mut t = Vec::with_capacity(n + 1);
    let mut x = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let ti = (lo + h * i as f64).min(hi);
        let xi = orbit
            .eval(ti)
            .ok_or_else(|| ChaosError::Invalid(format!("orbit undefined at t={ti}")))?;
        t.push(ti);
        x.push(xi);
    }
    let g = |p: Vec2| sys.switching(p).map_err(LeafError::from);
    let mut crossings = Vec::new();
    for i in 1..t.len() {
        let (g0, g1) = (g(x[i - 1])?, g(x[i])?);
        if g0 == 0.0 || g0.signum() == g1.signum() || g1 == 0.0 && i + 1 < t.len() {
            continue;
        }
        let (mut a, mut b) = (t[i - 1], t[i]);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            let gm = g(orbit.eval(m).unwrap())?;
            if gm.signum() == g0.signum() {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-13 * (1.0 + m.abs()) {
                break;
            }
        }
        let tc = 0.5 * (a + b);
        crossings.push(Crossing {
            t: tc,
            x: orbit.eval(tc).unwrap(),
            from: if g0 > 0.0 { Region::Plus } else { Region::Minus },
        });
    }
    Ok(SampledOrbit { t, x, crossings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub j: i64,
    pub symbol: u8,
    pub window: (f64, f64),
    /// Crossing of `L⁰` used for `α_j` (symbol 1 only).
    pub crossing: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_bound: f64,
    pub alpha_ok: bool,
    /// Sup distance to the shifted loop (symbol 1) or to the origin (0).
    pub sup_distance: f64,
    pub l0_crossings: usize,
    pub inner_crossings: usize,
    pub min_norm: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCReport {
    pub tol: f64,
    pub windows: Vec<WindowReport>,
    pub pass: bool,
}

fn alpha_bound(seq: &TimeSequence, j: i64) -> f64 {
    let b = seq.b_gap(2 * j).unwrap_or(f64::INFINITY);
    match seq.mode {
        SequenceMode::TandKnu => seq.lambda1.unwrap_or(b),
        SequenceMode::TandKnunew => b,
    }
}

/// Property C on the windows `[T_{2j−1}, T_{2j+1}]` for `j` in `e`'s range.
#[allow(clippy::too_many_arguments)]
pub fn verify_property_c(
    sys: &PiecewiseSystem,
    orbit: &dyn OrbitView,
    seq: &TimeSequence,
    e: &SymbolWindow,
    hom: &HomoclinicReference,
    tol: f64,
    step: f64,
    require_crossings: bool,
) -> Result<PropertyCReport, ChaosError> {
    let (lo_j, hi_j) = (e.j_min, e.j_max());
    let t_of = |i: i64| {
        seq.get(i)
            .ok_or_else(|| ChaosError::Invalid(format!("sequence lacks index {i}")))
    };
    let lo = t_of(2 * lo_j - 1)?;
    let hi = t_of(2 * hi_j + 1)?;
    let sampled = sample_orbit(sys, orbit, lo, hi, step)?;
    let g0 = hom.gamma0;
    let r_l0 = 0.25 * norm(g0);
    let r_in = 0.5 * norm(g0);
    let mut windows = Vec::new();
    for j in lo_j..=hi_j {
        let (a, b) = (t_of(2 * j - 1)?, t_of(2 * j + 1)?);
        let tj = t_of(2 * j)?;
        let in_win = |t: f64| t >= a && t <= b;
        let l0: Vec<&Crossing> = sampled
            .crossings
            .iter()
            .filter(|c| in_win(c.t) && c.from == Region::Minus && norm([c.x[0] - g0[0], c.x[1] - g0[1]]) < r_l0)
            .collect();
        let inner = sampled
            .crossings
            .iter()
            .filter(|c| in_win(c.t) && c.from == Region::Plus && norm(c.x) < r_in)
            .count();
        let idx: Vec<usize> = (0..sampled.t.len()).filter(|&i| in_win(sampled.t[i])).collect();
        let min_norm = idx.iter().map(|&i| norm(sampled.x[i])).fold(f64::INFINITY, f64::min);
        let symbol = e.get(j);
        let bound = alpha_bound(seq, j);
        let (crossing, alpha, sup) = if symbol == 1 {
            let c = l0.iter().min_by(|p, q| (p.t - tj).abs().total_cmp(&(q.t - tj).abs()));
            match c {
                None => {
                    if require_crossings {
                        return Err(ChaosError::MissingCrossing { j });
                    }
                    (None, None, f64::INFINITY)
                }
                Some(c) => {
                    let alpha = c.t - tj;
                    let sup = idx
                        .iter()
                        .map(|&i| {
                            let gp = hom.eval(sampled.t[i] - c.t);
                            norm([sampled.x[i][0] - gp[0], sampled.x[i][1] - gp[1]])
                        })
                        .fold(0.0, f64::max);
                    (Some(c.t), Some(alpha), sup)
                }
            }
        } else {
            (None, None, idx.iter().map(|&i| norm(sampled.x[i])).fold(0.0, f64::max))
        };
        let alpha_ok = alpha.is_none_or(|a| a.abs() <= bound);
        let pass = sup <= tol && alpha_ok && (symbol == 0 || crossing.is_some());
        windows.push(WindowReport {
            j,
            symbol,
            window: (a, b),
            crossing,
            alpha,
            alpha_bound: bound,
            alpha_ok,
            sup_distance: sup,
            l0_crossings: l0.len(),
            inner_crossings: inner,
            min_norm,
            pass,
        });
    }
    let pass = windows.iter().all(|w| w.pass);
    Ok(PropertyCReport { tol, windows, pass })
}

/// Coding of an orbit on windows `j_lo..=j_hi`: 1 for a shadowed loop, 0
/// for a window spent near the origin, `None` otherwise.
pub fn code_orbit(
    sys: &PiecewiseSystem,
    orbit: &dyn OrbitView,
    seq: &TimeSequence,
    hom: &HomoclinicReference,
    j_lo: i64,
    j_hi: i64,
    tol: f64,
    step: f64,
) -> Result<Vec<Option<u8>>, ChaosError> {
    let probe = SymbolWindow::new(j_lo, vec![1; (j_hi - j_lo + 1) as usize])?;
    let ones = verify_property_c(sys, orbit, seq, &probe, hom, tol, step, false)?;
    let zeros = verify_property_c(sys, orbit, seq, &SymbolWindow::new(j_lo, vec![0; probe.symbols.len()])?, hom, tol, step, false)?;
    Ok(ones
        .windows
        .iter()
        .zip(&zeros.windows)
        .map(|(w1, w0)| {
            if w1.pass && w1.l0_crossings >= 1 {
                Some(1)
            } else if w0.pass {
                Some(0)
            } else {
                None
            }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlueDiagnostics {
    pub b0: f64,
    pub b1: f64,
    pub g_b0: f64,
    pub g_b1: f64,
    pub sep_b0: f64,
    pub sep_b1: f64,
    pub sweep: Vec<(f64, f64)>,
    pub bisection_steps: usize,
}

/// Measured gap behaviour between consecutive ones.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub from_j: i64,
    pub to_j: i64,
    pub min_norm: f64,
    /// `min ‖x‖ / ε`.
    pub c_measured: f64,
    pub inner_crossings: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItineraryResult {
    pub symbols: SymbolWindow,
    pub eps: f64,
    pub tau_star: f64,
    pub alpha0: f64,
    pub xi_star: Vec2,
    pub ln_d_plus: Option<f64>,
    pub ln_d_minus: Option<f64>,
    pub log10_width_plus: f64,
    pub log10_width_minus: f64,
    pub forward: SearchResult,
    pub backward: SearchResult,
    pub glue: GlueDiagnostics,
    pub property_c: PropertyCReport,
    pub alphas: BTreeMap<i64, f64>,
    pub sup_distances: BTreeMap<i64, f64>,
    pub gaps: Vec<GapReport>,
    pub verified: bool,
}

/// `d⁺(τ) − d̂⁻(τ)` with the leaf separation at `τ`.
fn glue_value(setup: &ChaosSetup, tau: f64, d_plus: f64, d_minus: f64) -> Result<(f64, f64), ChaosError> {
    let ep = leaf_endpoints(&setup.ctx, tau, LeafMethod::Shooting)?;
    Ok((d_plus - d_minus + ep.separation, ep.separation))
}

/// Glue forward and backward searches over the initial time bracket.
pub fn glue(setup: &ChaosSetup, e: &SymbolWindow) -> Result<ItineraryResult, ChaosError> {
    if e.get(0) != 1 {
        return Err(ChaosError::Invalid("the symbol at index 0 must be 1".into()));
    }
    let (b0, b1) = setup
        .seq
        .bracket(0)
        .ok_or_else(|| ChaosError::Invalid("sequence lacks index 0".into()))?;
    let fwd_b0 = search_forward(setup, e, b0)?;
    let bwd_b0 = search_backward(setup, e, b0)?;
    let fwd_b1 = search_forward(setup, e, b1)?;
    let bwd_b1 = search_backward(setup, e, b1)?;
    let (g_b0, sep_b0) = glue_value(setup, b0, fwd_b0.d(), bwd_b0.d())?;
    let (g_b1, sep_b1) = glue_value(setup, b1, fwd_b1.d(), bwd_b1.d())?;
    // Interpolated offsets between the endpoint searches; they are many
    // orders below the separation except at its zero.
    let dd = |tau: f64| {
        let s = (tau - b0) / (b1 - b0);
        (1.0 - s) * (fwd_b0.d() - bwd_b0.d()) + s * (fwd_b1.d() - bwd_b1.d())
    };
    let n = setup.opts.sweep_samples.max(2);
    let grid: Vec<f64> = (0..=n).map(|i| b0 + (b1 - b0) * i as f64 / n as f64).collect();
    let seps: Vec<f64> = grid
        .par_iter()
        .map(|&t| leaf_endpoints(&setup.ctx, t, LeafMethod::Shooting).map(|ep| ep.separation))
        .collect::<Result<_, _>>()?;
    let sweep: Vec<(f64, f64)> = grid.iter().zip(&seps).map(|(&t, &s)| (t, s + dd(t))).collect();
    let k = sweep
        .windows(2)
        .position(|w| w[0].1 == 0.0 || w[0].1.signum() != w[1].1.signum())
        .ok_or(ChaosError::NoSignChange { g_b0, g_b1 })?;
    let g = |t: f64| -> Result<f64, ChaosError> {
        let ep = leaf_endpoints(&setup.ctx, t, LeafMethod::Shooting)?;
        Ok(ep.separation + dd(t))
    };
    let (mut a, mut fa) = sweep[k];
    let (mut b, _) = sweep[k + 1];
    let mut steps = 0;
    while b - a > setup.opts.tau_tol && fa != 0.0 {
        let m = 0.5 * (a + b);
        let fm = g(m)?;
        steps += 1;
        if fm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let tau_star = 0.5 * (a + b);
    let forward = search_forward(setup, e, tau_star)?;
    let backward = search_backward(setup, e, tau_star)?;
    let ep = leaf_endpoints(&setup.ctx, tau_star, LeafMethod::Shooting)?;
    let xi_star = setup.ctx.section.point_at(ep.s_ps - forward.d())?;
    let orbit = GluedOrbit::new(tau_star, &backward, &forward);
    let hom = &setup.ctx.fwd.hom;
    let pc = verify_property_c(
        &setup.ctx.fwd.sys,
        &orbit,
        &setup.seq,
        e,
        hom,
        setup.opts.tol,
        setup.opts.sample_step,
        true,
    )?;
    let mut alphas = BTreeMap::new();
    let mut sups = BTreeMap::new();
    for w in &pc.windows {
        if let Some(a) = w.alpha {
            alphas.insert(w.j, a);
        }
        sups.insert(w.j, w.sup_distance);
    }
    let gaps = gap_reports(setup, &orbit, e)?;
    let t0 = setup.t(0)?;
    let verified = pc.pass && forward.nested_ok && backward.nested_ok;
    Ok(ItineraryResult {
        symbols: e.clone(),
        eps: setup.ctx.eps,
        tau_star,
        alpha0: tau_star - t0,
        xi_star,
        ln_d_plus: forward.ln_d,
        ln_d_minus: backward.ln_d,
        log10_width_plus: forward.log10_width(),
        log10_width_minus: backward.log10_width(),
        forward,
        backward,
        glue: GlueDiagnostics {
            b0,
            b1,
            g_b0,
            g_b1,
            sep_b0,
            sep_b1,
            sweep,
            bisection_steps: steps,
        },
        property_c: pc,
        alphas,
        sup_distances: sups,
        gaps,
        verified,
    })
}

/// Smallness and inner-crossing count between consecutive ones.
fn gap_reports(setup: &ChaosSetup, orbit: &GluedOrbit, e: &SymbolWindow) -> Result<Vec<GapReport>, ChaosError> {
    let ones: Vec<i64> = (e.j_min..=e.j_max()).filter(|&j| e.get(j) == 1).collect();
    let sys = &setup.ctx.fwd.sys;
    let r_in = 0.5 * norm(setup.ctx.fwd.hom.gamma0);
    let mut out = Vec::new();
    for w in ones.windows(2) {
        let (a, b) = (setup.t(2 * w[0])?, setup.t(2 * w[1])?);
        let s = sample_orbit(sys, orbit, a, b, setup.opts.sample_step)?;
        let min_norm = s.x.iter().map(|&x| norm(x)).fold(f64::INFINITY, f64::min);
        let inner = s.crossings.iter().filter(|c| c.from == Region::Plus && norm(c.x) < r_in).count();
        out.push(GapReport {
            from_j: w[0],
            to_j: w[1],
            min_norm,
            c_measured: min_norm / setup.ctx.eps,
            inner_crossings: inner,
        });
    }
    Ok(out)
}

/// `log10` of the distance between the initial offsets of two chains,
/// mapped back from the first stage where they differ.
pub fn chain_distance_log10(a: &SearchResult, b: &SearchResult) -> Option<f64> {
    let n = a.stages.len().max(b.stages.len());
    for k in 0..n {
        let (x, y) = (a.stages.get(k).map(|s| s.ln_d), b.stages.get(k).map(|s| s.ln_d));
        let ln_delta = match (x, y) {
            (Some(x), Some(y)) if (x - y).abs() <= 1e-6 * x.abs().max(1.0) => continue,
            (Some(x), Some(y)) => x.max(y) + (-(-(x - y).abs()).exp()).ln_1p(),
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => return None,
        };
        let gain = if a.stages.len() > k { a.log10_gain[k] } else { b.log10_gain[k] };
        return Some(ln_delta / std::f64::consts::LN_10 - gain);
    }
    None
}

fn separated(a: &SearchResult, b: &SearchResult) -> bool {
    chain_distance_log10(a, b).is_some_and(|d| d > a.log10_width().max(b.log10_width()))
}

/// Commutation of the coding with the shift on one glued orbit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommutationRow {
    pub symbols: String,
    /// `Ψ(ξ)` on `j ∈ [−depth−1, depth+1]`.
    pub coding: Vec<Option<u8>>,
    /// `Ψ(F(ξ))` with respect to the shifted sequence, on `j ∈ [−depth−1, depth]`.
    pub coding_image: Vec<Option<u8>>,
    /// `σ(Ψ(ξ))` on the same range.
    pub shifted_coding: Vec<Option<u8>>,
    pub coding_matches: bool,
    pub commutes: bool,
    pub xi_star: Vec2,
    pub ln_d_plus: Option<f64>,
    pub ln_d_minus: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BernoulliReport {
    pub depth: usize,
    pub eps: f64,
    pub rows: Vec<CommutationRow>,
    pub zero_fixed_point: bool,
    /// Distinct codings give distinct `(ln d⁺, ln d⁻)` beyond the widths.
    pub injective: bool,
    pub pass: bool,
}

/// Glue every centred window of length `2·depth + 1` and check
/// `Ψ∘F = σ∘Ψ` on the stored orbits.
pub fn bernoulli_check(setup: &ChaosSetup, depth: usize) -> Result<BernoulliReport, ChaosError> {
    if depth == 0 || depth > 3 {
        return Err(ChaosError::Invalid("depth must be 1, 2 or 3".into()));
    }
    let d = depth as i64;
    let sys = &setup.ctx.fwd.sys;
    let hom = &setup.ctx.fwd.hom;
    let tol = setup.opts.tol;
    let h = setup.opts.sample_step;
    let shifted = setup.seq.shifted(2);
    let windows = SymbolWindow::all_centered(depth);
    let results: Vec<ItineraryResult> = windows.par_iter().map(|e| glue(setup, e)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (e, r) in windows.iter().zip(&results) {
        let orbit = GluedOrbit::new(r.tau_star, &r.backward, &r.forward);
        let coding = code_orbit(sys, &orbit, &setup.seq, hom, -d - 1, d + 1, tol, h)?;
        let image = code_orbit(sys, &orbit, &shifted, hom, -d - 1, d, tol, h)?;
        let sigma: Vec<Option<u8>> = coding[1..].to_vec();
        let expect: Vec<Option<u8>> = (-d - 1..=d + 1).map(|j| Some(e.get(j))).collect();
        rows.push(CommutationRow {
            symbols: e.as_string(),
            coding_matches: coding == expect,
            commutes: image == sigma,
            coding,
            coding_image: image,
            shifted_coding: sigma,
            xi_star: r.xi_star,
            ln_d_plus: r.ln_d_plus,
            ln_d_minus: r.ln_d_minus,
        });
    }
    let zero = SymbolWindow::new(-d - 1, vec![0; (2 * d + 3) as usize])?;
    let z0 = code_orbit(sys, &ZeroOrbit, &setup.seq, hom, -d - 1, d + 1, tol, h)?;
    let z1 = code_orbit(sys, &ZeroOrbit, &shifted, hom, -d - 1, d, tol, h)?;
    let zero_fixed_point = z0.iter().all(|c| *c == Some(0)) && z1.iter().all(|c| *c == Some(0)) && zero.symbols.iter().all(|&s| s == 0);
    let mut injective = true;
    for i in 0..results.len() {
        for k in i + 1..results.len() {
            let (a, b) = (&results[i], &results[k]);
            if !(separated(&a.forward, &b.forward) || separated(&a.backward, &b.backward)) {
                injective = false;
            }
        }
    }
    let pass = zero_fixed_point && injective && rows.iter().all(|r| r.commutes && r.coding_matches);
    Ok(BernoulliReport {
        depth,
        eps: setup.ctx.eps,
        rows,
        zero_fixed_point,
        injective,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{analyze_origin, derived_constants};
    use crate::system::{builtin_example, Params};

    #[test]
    fn metric_hand_cases() {
        let a = SymbolWindow::centered("00100").unwrap();
        for m in -2i64..=2 {
            let mut b = a.clone();
            let k = (m + 2) as usize;
            b.symbols[k] ^= 1;
            assert_eq!(metric(&a, &b), 2f64.powi(-(m.abs() as i32) - 1));
        }
        assert_eq!(metric(&a, &a), 0.0);
        let all = SymbolWindow::centered("111").unwrap();
        let none = SymbolWindow::centered("000").unwrap();
        assert_eq!(metric(&all, &none), 0.25 + 0.5 + 0.25);
        // Different supports: missing entries count as 0.
        let far = SymbolWindow::new(3, vec![1]).unwrap();
        assert_eq!(metric(&none, &far), 1.0 / 16.0);
    }

    #[test]
    fn symbol_windows() {
        let e = SymbolWindow::centered("10110").unwrap();
        assert_eq!(e.j_min, -2);
        assert_eq!(e.forward_ones(), vec![1]);
        assert_eq!(e.backward_ones(), vec![-2]);
        let s = e.shift();
        for j in -4..4 {
            assert_eq!(s.get(j), e.get(j + 1));
        }
        assert!(SymbolWindow::centered("12").is_err());
        assert!(SymbolWindow::centered("10").is_err());
        let all = SymbolWindow::all_centered(1);
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|w| w.get(0) == 1 && w.symbols.len() == 3));
    }

    #[test]
    fn illinois_finds_roots() {
        let mut f = |x: f64| Ok::<_, ()>(x * x * x - 2.0);
        let (r, _, it) = illinois(&mut f, 0.0, -2.0, 2.0, 6.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13, "{r}");
        assert!(it < 60);
    }

    #[test]
    fn zero_orbit_codes_to_zero() {
        let (s, h) = builtin_example("ex1", &Params::new()).unwrap();
        let h = h.unwrap();
        let c = derived_constants(&analyze_origin(&s, Some(&h)).unwrap());
        let seq = periodic_time_sequence(&s, &h, &c, 1e-3, 1.0, 0.0, 43.0, 1.0, 4, SequenceMode::TandKnu, 0.05).unwrap();
        let e = SymbolWindow::centered("000").unwrap();
        let r = verify_property_c(&s, &ZeroOrbit, &seq, &e, &h, 0.0, 0.5, true).unwrap();
        assert!(r.pass);
        let code = code_orbit(&s, &ZeroOrbit, &seq, &h, -1, 1, 0.0, 0.5).unwrap();
        assert_eq!(code, vec![Some(0); 3]);
    }
}
