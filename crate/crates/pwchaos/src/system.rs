//! Piecewise-smooth planar systems `ẋ = f^±(x) + ε g(t, x, ε)` with switching
//! function `G`, their text configuration, the built-in examples and the
//! homoclinic reference orbit.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Env, EvalError, Expr, ParseError, Var};

pub type Vec2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Plus,
    Minus,
}

impl Region {
    /// Sign of `G` inside the region.
    pub fn sign(self) -> f64 {
        match self {
            Region::Plus => 1.0,
            Region::Minus => -1.0,
        }
    }

    pub fn other(self) -> Region {
        match self {
            Region::Plus => Region::Minus,
            Region::Minus => Region::Plus,
        }
    }

    pub fn of_value(g: f64) -> Option<Region> {
        if g > 0.0 {
            Some(Region::Plus)
        } else if g < 0.0 {
            Some(Region::Minus)
        } else {
            None
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Plus => "plus",
            Region::Minus => "minus",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for DomainBox {
    fn default() -> Self {
        DomainBox {
            x_min: -2.0,
            x_max: 2.0,
            y_min: -2.0,
            y_max: 2.0,
        }
    }
}

impl DomainBox {
    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Expression pair with its Jacobian rows, derived once.
#[derive(Clone, Debug)]
struct Field {
    comp: [Expr; 2],
    jac: [[Expr; 2]; 2],
    polynomial: bool,
}

impl Field {
    fn new(comp: [Expr; 2]) -> Field {
        let jac = [
            [comp[0].diff(Var::X), comp[0].diff(Var::Y)],
            [comp[1].diff(Var::X), comp[1].diff(Var::Y)],
        ];
        let polynomial = comp.iter().all(Expr::is_polynomial);
        Field {
            comp,
            jac,
            polynomial,
        }
    }

    fn eval(&self, env: &Env) -> Result<Vec2, EvalError> {
        Ok([self.comp[0].eval(env)?, self.comp[1].eval(env)?])
    }
}

#[derive(Clone, Debug)]
struct Inner {
    name: String,
    f_plus: Field,
    f_minus: Field,
    g: Field,
    g_t: [Expr; 2],
    switching: Expr,
    grad_g: [Expr; 2],
}

/// Immutable, cheaply clonable system description.
#[derive(Clone, Debug)]
pub struct PiecewiseSystem {
    inner: Arc<Inner>,
    pub domain: DomainBox,
    pub smoothness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// `|G(0, 0)|`.
    pub switching_at_origin: f64,
    /// Largest `‖g(t, 0, ε)‖` over the sample grid.
    pub perturbation_at_origin: f64,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.switching_at_origin <= 1e-12 && self.perturbation_at_origin <= 1e-12
    }
}

impl PiecewiseSystem {
    pub fn new(
        name: &str,
        f_plus: [Expr; 2],
        f_minus: [Expr; 2],
        g: [Expr; 2],
        switching: Expr,
        domain: DomainBox,
        smoothness: f64,
    ) -> PiecewiseSystem {
        let g_t = [g[0].diff(Var::T), g[1].diff(Var::T)];
        let grad_g = [switching.diff(Var::X), switching.diff(Var::Y)];
        PiecewiseSystem {
            inner: Arc::new(Inner {
                name: name.to_string(),
                f_plus: Field::new(f_plus),
                f_minus: Field::new(f_minus),
                g: Field::new(g),
                g_t,
                switching,
                grad_g,
            }),
            domain,
            smoothness,
        }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    fn side(&self, region: Region) -> &Field {
        match region {
            Region::Plus => &self.inner.f_plus,
            Region::Minus => &self.inner.f_minus,
        }
    }

    pub fn f_exprs(&self, region: Region) -> &[Expr; 2] {
        &self.side(region).comp
    }

    pub fn g_exprs(&self) -> &[Expr; 2] {
        &self.inner.g.comp
    }

    pub fn switching_expr(&self) -> &Expr {
        &self.inner.switching
    }

    /// `f^region(x)`.
    pub fn f(&self, region: Region, x: Vec2) -> Result<Vec2, EvalError> {
        self.side(region).eval(&Env::new(x[0], x[1], 0.0, 0.0))
    }

    /// `g(t, x, ε)`.
    pub fn g(&self, t: f64, x: Vec2, eps: f64) -> Result<Vec2, EvalError> {
        self.inner.g.eval(&Env::new(x[0], x[1], t, eps))
    }

    /// `∂g/∂t (t, x, ε)`.
    pub fn g_t(&self, t: f64, x: Vec2, eps: f64) -> Result<Vec2, EvalError> {
        let env = Env::new(x[0], x[1], t, eps);
        Ok([self.inner.g_t[0].eval(&env)?, self.inner.g_t[1].eval(&env)?])
    }

    /// `∂g/∂t` by a central difference, for checking the symbolic form.
    pub fn g_t_fd(&self, t: f64, x: Vec2, eps: f64, h: f64) -> Result<Vec2, EvalError> {
        let a = self.g(t + h, x, eps)?;
        let b = self.g(t - h, x, eps)?;
        Ok([(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)])
    }

    /// Full right-hand side in a region.
    pub fn field(&self, region: Region, t: f64, x: Vec2, eps: f64) -> Result<Vec2, EvalError> {
        let f = self.f(region, x)?;
        if eps == 0.0 {
            return Ok(f);
        }
        let g = self.g(t, x, eps)?;
        Ok([f[0] + eps * g[0], f[1] + eps * g[1]])
    }

    pub fn switching(&self, x: Vec2) -> Result<f64, EvalError> {
        self.inner.switching.eval(&Env::new(x[0], x[1], 0.0, 0.0))
    }

    pub fn grad_switching(&self, x: Vec2) -> Result<Vec2, EvalError> {
        let env = Env::new(x[0], x[1], 0.0, 0.0);
        Ok([self.inner.grad_g[0].eval(&env)?, self.inner.grad_g[1].eval(&env)?])
    }

    /// Region containing `x`, `None` on the switching curve.
    pub fn region_of(&self, x: Vec2) -> Result<Option<Region>, EvalError> {
        Ok(Region::of_value(self.switching(x)?))
    }

    pub fn is_polynomial(&self, region: Region) -> bool {
        self.side(region).polynomial
    }

    /// Jacobian of `f^region` at `x`; symbolic for polynomial fields, central
    /// differences with step `fd_step` otherwise.
    pub fn jacobian_f(&self, region: Region, x: Vec2, fd_step: f64) -> Result<[[f64; 2]; 2], EvalError> {
        let side = self.side(region);
        if side.polynomial {
            let env = Env::new(x[0], x[1], 0.0, 0.0);
            let mut j = [[0.0; 2]; 2];
            for (r, row) in side.jac.iter().enumerate() {
                for (c, e) in row.iter().enumerate() {
                    j[r][c] = e.eval(&env)?;
                }
            }
            Ok(j)
        } else {
            self.jacobian_f_fd(region, x, fd_step)
        }
    }

    pub fn jacobian_f_fd(&self, region: Region, x: Vec2, h: f64) -> Result<[[f64; 2]; 2], EvalError> {
        let mut j = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let fp = self.f(region, xp)?;
            let fm = self.f(region, xm)?;
            for r in 0..2 {
                j[r][c] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Symbolic Jacobian of the full field `f^region + ε g` in `x`.
    pub fn jacobian(&self, region: Region, t: f64, x: Vec2, eps: f64) -> Result<[[f64; 2]; 2], EvalError> {
        let env = Env::new(x[0], x[1], t, eps);
        let side = self.side(region);
        let mut j = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] = side.jac[r][c].eval(&env)?;
                if eps != 0.0 {
                    j[r][c] += eps * self.inner.g.jac[r][c].eval(&env)?;
                }
            }
        }
        Ok(j)
    }

    /// `tr f_x^region(x)`.
    pub fn trace_f(&self, region: Region, x: Vec2) -> Result<f64, EvalError> {
        let env = Env::new(x[0], x[1], 0.0, 0.0);
        let side = self.side(region);
        Ok(side.jac[0][0].eval(&env)? + side.jac[1][1].eval(&env)?)
    }

    /// True when `g` vanishes identically (as an expression).
    pub fn is_unperturbed(&self) -> bool {
        self.inner
            .g
            .comp
            .iter()
            .all(|e| matches!(e, Expr::Num(v) if *v == 0.0))
    }

    /// Copy with a different perturbation.
    pub fn with_perturbation(&self, name: &str, g: [Expr; 2]) -> PiecewiseSystem {
        PiecewiseSystem::new(
            name,
            self.inner.f_plus.comp.clone(),
            self.inner.f_minus.comp.clone(),
            g,
            self.inner.switching.clone(),
            self.domain,
            self.smoothness,
        )
    }

    /// Copy with both fields multiplied by `c` (time rescaling).
    pub fn time_scaled(&self, c: f64) -> PiecewiseSystem {
        let scale = |f: &Field| {
            [
                Expr::Bin(crate::expr::BinOp::Mul, Box::new(Expr::num(c)), Box::new(f.comp[0].clone())),
                Expr::Bin(crate::expr::BinOp::Mul, Box::new(Expr::num(c)), Box::new(f.comp[1].clone())),
            ]
        };
        PiecewiseSystem::new(
            &format!("{}*{c}", self.inner.name),
            scale(&self.inner.f_plus),
            scale(&self.inner.f_minus),
            self.inner.g.comp.clone(),
            self.inner.switching.clone(),
            self.domain,
            self.smoothness,
        )
    }

    /// Time-reversed system: `G̃ = −G`, `f̃^± = −f^∓` and `g̃(t, x) = −g(−t, x)`,
    /// so that `x̃(t) = x(−t)` solves it whenever `x` solves the original.
    pub fn time_reversed(&self) -> PiecewiseSystem {
        let neg = |e: &Expr| match e {
            Expr::Num(v) => Expr::Num(-v + 0.0),
            _ => Expr::Neg(Box::new(e.clone())),
        };
        let minus_t = Expr::Neg(Box::new(Expr::var(Var::T)));
        let i = &self.inner;
        PiecewiseSystem::new(
            &format!("{}~rev", i.name),
            [neg(&i.f_minus.comp[0]), neg(&i.f_minus.comp[1])],
            [neg(&i.f_plus.comp[0]), neg(&i.f_plus.comp[1])],
            [
                neg(&i.g.comp[0].substitute(Var::T, &minus_t)),
                neg(&i.g.comp[1].substitute(Var::T, &minus_t)),
            ],
            neg(&i.switching),
            self.domain,
            self.smoothness,
        )
    }

    /// Check `G(0) = 0` and `g(t, 0, ε) = 0` on a sample grid.
    pub fn invariants(&self) -> Result<InvariantReport, EvalError> {
        let s0 = self.switching([0.0, 0.0])?.abs();
        let mut worst: f64 = 0.0;
        for i in 0..41 {
            let t = -10.0 + 0.5 * i as f64 + 0.123;
            for &eps in &[0.0, 1e-3, 0.1] {
                let g = self.g(t, [0.0, 0.0], eps)?;
                worst = worst.max(g[0].hypot(g[1]));
            }
        }
        Ok(InvariantReport {
            switching_at_origin: s0,
            perturbation_at_origin: worst,
        })
    }
}

/// Same system up to expression structure (used to compare configs with
/// built-ins).
impl PartialEq for PiecewiseSystem {
    fn eq(&self, other: &Self) -> bool {
        let a = &self.inner;
        let b = &other.inner;
        a.f_plus.comp == b.f_plus.comp
            && a.f_minus.comp == b.f_minus.comp
            && a.g.comp == b.g.comp
            && a.switching == b.switching
            && self.domain == other.domain
            && self.smoothness == other.smoothness
    }
}

/// `f^region(x) + ε g(t, x, ε)`, refusing points outside the domain box.
pub fn eval_field(
    sys: &PiecewiseSystem,
    region: Region,
    x: Vec2,
    t: f64,
    eps: f64,
) -> Result<Vec2, SystemError> {
    if !sys.domain.contains(x) {
        return Err(SystemError::OutsideDomain(x));
    }
    Ok(sys.field(region, t, x, eps)?)
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SystemError {
    #[error("point {0:?} lies outside the domain box")]
    OutsideDomain(Vec2),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown example `{0}`")]
    UnknownExample(String),
    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParameter { name: String, msg: String },
    #[error("homoclinic construction failed: {0}")]
    Homoclinic(String),
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown identifier `{name}` in `{key}` at line {line}, column {col}")]
    UnknownIdentifier {
        key: String,
        name: String,
        line: usize,
        col: usize,
    },
    #[error("`{key}` may not depend on `{var}`")]
    ForbiddenVariable { key: String, var: String },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error("system invariant violated: {0}")]
    Invariant(String),
}

mod schema {
    use serde::Deserialize;
    use toml::Spanned;

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct File {
        pub system: Option<System>,
        pub perturbation: Option<Perturbation>,
        pub domain: Option<Domain>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct System {
        pub name: Option<String>,
        pub f_plus_x: Option<Spanned<String>>,
        pub f_plus_y: Option<Spanned<String>>,
        pub f_minus_x: Option<Spanned<String>>,
        pub f_minus_y: Option<Spanned<String>>,
        #[serde(rename = "G")]
        pub g: Option<Spanned<String>>,
        pub r: Option<f64>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Perturbation {
        pub g_x: Option<Spanned<String>>,
        pub g_y: Option<Spanned<String>>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Domain {
        #[serde(rename = "box")]
        pub bounds: Option<Vec<f64>>,
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn parse_slot(
    src: &str,
    key: &str,
    slot: Option<toml::Spanned<String>>,
    allow_t: bool,
) -> Result<Expr, ConfigError> {
    let spanned = slot.ok_or_else(|| ConfigError::MissingKey(key.to_string()))?;
    let span = spanned.span();
    let text = spanned.into_inner();
    // Column inside the expression maps onto the file after the opening quote.
    let at = |col: usize| {
        let start = span.start + 1;
        let byte = text
            .char_indices()
            .nth(col.saturating_sub(1))
            .map_or(text.len(), |(b, _)| b);
        line_col(src, start + byte)
    };
    let e = Expr::parse(&text).map_err(|err| match err {
        ParseError::Syntax { col, msg } => {
            let (line, col) = at(col);
            ConfigError::Syntax {
                line,
                col,
                msg: format!("in `{key}`: {msg}"),
            }
        }
        ParseError::UnknownIdentifier { name, col } => {
            let (line, col) = at(col);
            ConfigError::UnknownIdentifier {
                key: key.to_string(),
                name,
                line,
                col,
            }
        }
    })?;
    let forbidden: &[Var] = if allow_t { &[] } else { &[Var::T, Var::Eps] };
    for &v in forbidden {
        if e.depends_on(v) {
            return Err(ConfigError::ForbiddenVariable {
                key: key.to_string(),
                var: v.name().to_string(),
            });
        }
    }
    Ok(e)
}

/// Parse a system from its TOML configuration.
pub fn parse_system(text: &str) -> Result<PiecewiseSystem, ConfigError> {
    let file: schema::File = toml::from_str(text).map_err(|e| {
        let (line, col) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Syntax {
            line,
            col,
            msg: e.message().to_string(),
        }
    })?;
    let sys = file
        .system
        .ok_or_else(|| ConfigError::MissingKey("system".into()))?;
    let pert = file
        .perturbation
        .ok_or_else(|| ConfigError::MissingKey("perturbation".into()))?;
    let f_plus = [
        parse_slot(text, "f_plus_x", sys.f_plus_x, false)?,
        parse_slot(text, "f_plus_y", sys.f_plus_y, false)?,
    ];
    let f_minus = [
        parse_slot(text, "f_minus_x", sys.f_minus_x, false)?,
        parse_slot(text, "f_minus_y", sys.f_minus_y, false)?,
    ];
    let switching = parse_slot(text, "G", sys.g, false)?;
    let g = [
        parse_slot(text, "g_x", pert.g_x, true)?,
        parse_slot(text, "g_y", pert.g_y, true)?,
    ];
    let r = sys.r.unwrap_or(2.0);
    if !(r > 1.0) {
        return Err(ConfigError::InvalidValue {
            key: "r".into(),
            msg: format!("smoothness order must exceed 1, got {r}"),
        });
    }
    let domain = match file.domain.and_then(|d| d.bounds) {
        None => DomainBox::default(),
        Some(b) => {
            if b.len() != 4 || !(b[0] < b[1] && b[2] < b[3]) {
                return Err(ConfigError::InvalidValue {
                    key: "box".into(),
                    msg: "expected [x_min, x_max, y_min, y_max] with min < max".into(),
                });
            }
            DomainBox {
                x_min: b[0],
                x_max: b[1],
                y_min: b[2],
                y_max: b[3],
            }
        }
    };
    let name = sys.name.unwrap_or_else(|| "config".to_string());
    let out = PiecewiseSystem::new(&name, f_plus, f_minus, g, switching, domain, r);
    let inv = out
        .invariants()
        .map_err(|e| ConfigError::Invariant(e.to_string()))?;
    if inv.switching_at_origin > 1e-12 {
        return Err(ConfigError::Invariant(format!(
            "G(0,0) = {:e}, the origin must lie on the switching curve",
            inv.switching_at_origin
        )));
    }
    if inv.perturbation_at_origin > 1e-12 {
        return Err(ConfigError::Invariant(format!(
            "g(t,0,eps) reaches {:e}, the perturbation must vanish at the origin",
            inv.perturbation_at_origin
        )));
    }
    Ok(out)
}

pub type Params = BTreeMap<String, String>;

const EX1_F_PLUS: [&str; 2] = ["y - x^2", "x - 2*x^2"];
const EX1_F_MINUS: [&str; 2] = ["y + x^2", "x - 2*x^2"];
const EX1_G: &str = "-y";

/// Names accepted by [`builtin_example`].
pub const BUILTIN_NAMES: [&str; 6] = ["ex1", "ex_quasiperiodic", "exgen0", "exgen", "exgen2", "unperturbed"];

fn parse_fixed(s: &str) -> Expr {
    Expr::parse(s).expect("built-in expression parses")
}

fn param_expr(params: &Params, key: &str, default: &str) -> Result<Expr, SystemError> {
    let src = params.get(key).map_or(default, String::as_str);
    let e = Expr::parse(src).map_err(|e| SystemError::InvalidParameter {
        name: key.to_string(),
        msg: e.to_string(),
    })?;
    for v in [Var::X, Var::Y, Var::Eps] {
        if e.depends_on(v) {
            return Err(SystemError::InvalidParameter {
                name: key.to_string(),
                msg: format!("may depend on t only, found `{}`", v.name()),
            });
        }
    }
    Ok(e)
}

fn sample_t(i: usize) -> f64 {
    // Irregular deterministic grid over [-200, 200].
    let u = (i as f64 * 0.618_033_988_749_894_9).fract();
    400.0 * u - 200.0
}

/// Build one of the named examples with shared fields `f^±`, `G` and
/// perturbation `g = (x·h(t), 0)`.
pub fn builtin_example(
    name: &str,
    params: &Params,
) -> Result<(PiecewiseSystem, Option<HomoclinicReference>), SystemError> {
    let (h, r): (Option<Expr>, f64) = match name {
        "ex1" => (Some(parse_fixed("sin(2*pi*t)")), 2.0),
        "ex_quasiperiodic" => (Some(parse_fixed("sin(t) + sin(2*pi*t)")), 2.0),
        "unperturbed" => (None, 2.0),
        "exgen0" => {
            let noise = param_expr(params, "noise", "cos(sqrt(2)*t)")?;
            for i in 0..2000 {
                let t = sample_t(i);
                let v = noise.eval(&Env::new(0.0, 0.0, t, 0.0))?;
                if v.abs() > 1.0 + 1e-12 {
                    return Err(SystemError::InvalidParameter {
                        name: "noise".into(),
                        msg: format!("|R({t})| = {} exceeds 1", v.abs()),
                    });
                }
            }
            let h = Expr::Bin(
                crate::expr::BinOp::Add,
                Box::new(parse_fixed("3*sin(2*pi*t)")),
                Box::new(noise),
            );
            (Some(h), 2.0)
        }
        "exgen" => {
            let r_src = params.get("r").map_or("2", String::as_str);
            let r: f64 = r_src.trim().parse().map_err(|_| SystemError::InvalidParameter {
                name: "r".into(),
                msg: format!("`{r_src}` is not a number"),
            })?;
            if r.fract() != 0.0 || r < 2.0 {
                return Err(SystemError::InvalidParameter {
                    name: "r".into(),
                    msg: format!("must be an integer >= 2, got {r}"),
                });
            }
            let h = parse_fixed(&format!("sign(t)*sin(sqrt(abs(t)))^{}", 2 * r as i64 + 1));
            (Some(h), r)
        }
        "exgen2" => {
            let h = param_expr(params, "noise", "sin(sign(t)*abs(t)^(1/3))")?;
            for i in 0..2000 {
                let t = sample_t(i);
                let a = h.eval(&Env::new(0.0, 0.0, t, 0.0))?;
                let b = h.eval(&Env::new(0.0, 0.0, -t, 0.0))?;
                if (a + b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(SystemError::InvalidParameter {
                        name: "noise".into(),
                        msg: format!("h must be odd, h({t}) + h({}) = {}", -t, a + b),
                    });
                }
            }
            (Some(h), 2.0)
        }
        _ => return Err(SystemError::UnknownExample(name.to_string())),
    };
    let g = match h {
        Some(h) => [
            Expr::Bin(crate::expr::BinOp::Mul, Box::new(Expr::var(Var::X)), Box::new(h)),
            Expr::num(0.0),
        ],
        None => [Expr::num(0.0), Expr::num(0.0)],
    };
    let sys = PiecewiseSystem::new(
        name,
        [parse_fixed(EX1_F_PLUS[0]), parse_fixed(EX1_F_PLUS[1])],
        [parse_fixed(EX1_F_MINUS[0]), parse_fixed(EX1_F_MINUS[1])],
        g,
        parse_fixed(EX1_G),
        DomainBox::default(),
        r,
    );
    Ok((sys, Some(HomoclinicReference::analytic_ex1())))
}

/// Numerically traced homoclinic branch, times shifted so that the crossing
/// of the switching curve happens at `t = 0`.
#[derive(Clone, Debug)]
struct Branch {
    steps: Vec<crate::rk::DenseStep<2>>,
    /// Covered span, `t_far` is the end nearest the equilibrium.
    t_far: f64,
    x_far: Vec2,
    lambda: f64,
    region: Region,
}

impl Branch {
    fn eval(&self, t: f64) -> Vec2 {
        let beyond = if self.t_far < 0.0 { t < self.t_far } else { t > self.t_far };
        if beyond {
            let s = (self.lambda * (t - self.t_far)).exp();
            return [self.x_far[0] * s, self.x_far[1] * s];
        }
        let forward = self.steps.first().is_some_and(|s| s.h > 0.0);
        let idx = self.steps.partition_point(|s| if forward { s.t1() < t } else { s.t1() > t });
        let s = &self.steps[idx.min(self.steps.len() - 1)];
        s.eval(t)
    }
}

#[derive(Clone, Debug)]
enum HomKind {
    Ex1,
    Numeric { unstable: Branch, stable: Branch },
    Reversed(Box<HomoclinicReference>),
}

/// Homoclinic orbit `γ` with `γ(t) ∈ Ω⁻` for `t < 0`, `γ(0) ∈ Ω⁰` and
/// `γ(t) ∈ Ω⁺` for `t > 0`.
#[derive(Clone, Debug)]
pub struct HomoclinicReference {
    kind: HomKind,
    pub gamma0: Vec2,
}

impl HomoclinicReference {
    pub fn analytic_ex1() -> HomoclinicReference {
        HomoclinicReference {
            kind: HomKind::Ex1,
            gamma0: [1.0, 0.0],
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.kind, HomKind::Ex1)
    }

    pub fn region(&self, t: f64) -> Option<Region> {
        if t < 0.0 {
            Some(Region::Minus)
        } else if t > 0.0 {
            Some(Region::Plus)
        } else {
            None
        }
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        match &self.kind {
            HomKind::Ex1 => {
                if t <= 0.0 {
                    let e = t.exp();
                    [e, e - e * e]
                } else {
                    let e = (-t).exp();
                    [e, -e + e * e]
                }
            }
            HomKind::Numeric { unstable, stable } => {
                if t < 0.0 {
                    unstable.eval(t)
                } else if t > 0.0 {
                    stable.eval(t)
                } else {
                    self.gamma0
                }
            }
            HomKind::Reversed(inner) => inner.eval(-t),
        }
    }

    /// The same loop traversed backwards, for [`PiecewiseSystem::time_reversed`].
    pub fn reversed(&self) -> HomoclinicReference {
        match &self.kind {
            HomKind::Reversed(inner) => (**inner).clone(),
            _ => HomoclinicReference {
                kind: HomKind::Reversed(Box::new(self.clone())),
                gamma0: self.gamma0,
            },
        }
    }

    /// `γ̇(t)`; one-sided from the side selected by `t`'s sign (`t = 0` gives
    /// the left derivative).
    pub fn deriv(&self, sys: &PiecewiseSystem, t: f64) -> Result<Vec2, EvalError> {
        match &self.kind {
            HomKind::Ex1 => Ok(if t <= 0.0 {
                let e = t.exp();
                [e, e - 2.0 * e * e]
            } else {
                let e = (-t).exp();
                [-e, e - 2.0 * e * e]
            }),
            HomKind::Numeric { .. } | HomKind::Reversed(_) => {
                let region = if t > 0.0 { Region::Plus } else { Region::Minus };
                sys.f(region, self.eval(t))
            }
        }
    }

    /// Build `γ` numerically from the unstable direction of `f⁻` and the
    /// stable direction of `f⁺` at the origin.
    pub fn numeric(
        sys: &PiecewiseSystem,
        lambda_u_minus: f64,
        v_u_minus: Vec2,
        lambda_s_plus: f64,
        v_s_plus: Vec2,
    ) -> Result<HomoclinicReference, SystemError> {
        use crate::integrator::{flow_to_section, Direction, IntegratorOptions, Section};
        let s0 = 1e-9;
        let opts = IntegratorOptions {
            max_step: 0.02,
            ..IntegratorOptions::relative(1e-12)
        };
        let shoot = |v: Vec2, dir: Direction, lambda: f64| -> Result<(crate::integrator::CrossingEvent, Branch), SystemError> {
            let x0 = [s0 * v[0], s0 * v[1]];
            let budget = 60.0 / lambda.abs();
            let (ev, traj) = flow_to_section(sys, 0.0, x0, 0.0, dir, Section::OmegaZero, budget, &opts)
                .map_err(|e| SystemError::Homoclinic(e.to_string()))?;
            let shift = ev.time;
            let steps: Vec<_> = traj
                .steps
                .iter()
                .map(|p| crate::rk::DenseStep {
                    t0: p.step.t0 - shift,
                    h: p.step.h,
                    rc: p.step.rc,
                })
                .collect();
            // Reverse so the branch starts at the equilibrium end and steps are
            // ordered in the direction of integration.
            let region = traj.samples.first().map(|s| s.region).unwrap_or(Region::Minus);
            Ok((
                ev,
                Branch {
                    steps,
                    t_far: -shift,
                    x_far: x0,
                    lambda,
                    region,
                },
            ))
        };
        let (ev_u, unstable) = shoot(v_u_minus, Direction::Forward, lambda_u_minus)?;
        let (ev_s, stable) = shoot(v_s_plus, Direction::Backward, lambda_s_plus)?;
        if unstable.region != Region::Minus || stable.region != Region::Plus {
            return Err(SystemError::Homoclinic(
                "eigen-directions do not start in the expected regions".into(),
            ));
        }
        let d = (ev_u.point[0] - ev_s.point[0]).hypot(ev_u.point[1] - ev_s.point[1]);
        let scale = 1.0 + ev_u.point[0].hypot(ev_u.point[1]);
        if d > 1e-6 * scale {
            return Err(SystemError::Homoclinic(format!(
                "branches meet the switching curve at {:?} and {:?} (gap {d:e})",
                ev_u.point, ev_s.point
            )));
        }
        Ok(HomoclinicReference {
            kind: HomKind::Numeric { unstable, stable },
            gamma0: ev_u.point,
        })
    }

    /// Polyline sampling of the loop on `[-t_max, t_max]`.
    pub fn polyline(&self, n: usize, t_max: f64) -> Vec<Vec2> {
        (0..n)
            .map(|i| {
                let t = -t_max + 2.0 * t_max * i as f64 / (n - 1) as f64;
                self.eval(t)
            })
            .collect()
    }
}

/// Largest `‖γ̇(t) − f^region(γ(t))‖` over the grid.
pub fn homoclinic_residual(
    sys: &PiecewiseSystem,
    hom: &HomoclinicReference,
    grid: &[f64],
) -> Result<f64, EvalError> {
    let mut worst: f64 = 0.0;
    for &t in grid {
        let region = if t > 0.0 { Region::Plus } else { Region::Minus };
        let p = hom.eval(t);
        let d = hom.deriv(sys, t)?;
        let f = sys.f(region, p)?;
        worst = worst.max((d[0] - f[0]).hypot(d[1] - f[1]));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const EX1_CFG: &str = r#"
[system]
f_plus_x = "y - x^2"
f_plus_y = "x - 2*x^2"
f_minus_x = "y + x^2"
f_minus_y = "x - 2*x^2"
G = "-y"

[perturbation]
g_x = "x*sin(2*pi*t)"
g_y = "0"

[domain]
box = [-2.0, 2.0, -2.0, 2.0]
"#;

    fn ex1() -> (PiecewiseSystem, HomoclinicReference) {
        let (s, h) = builtin_example("ex1", &Params::new()).unwrap();
        (s, h.unwrap())
    }

    #[test]
    fn config_matches_builtin() {
        let parsed = parse_system(EX1_CFG).unwrap();
        let (b, _) = ex1();
        assert_eq!(parsed, b);
    }

    #[test]
    fn zero_perturbation_config() {
        let src = EX1_CFG.replace("x*sin(2*pi*t)", "0");
        let sys = parse_system(&src).unwrap();
        assert!(sys.is_unperturbed());
        assert_eq!(sys.g(1.3, [0.4, -0.2], 0.1).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn missing_key_reported() {
        let src = EX1_CFG.replace("f_minus_x = \"y + x^2\"\n", "");
        assert_eq!(parse_system(&src), Err(ConfigError::MissingKey("f_minus_x".into())));
    }

    #[test]
    fn unknown_identifier_has_position() {
        let src = EX1_CFG.replace("y - x^2", "y - z^2");
        match parse_system(&src) {
            Err(ConfigError::UnknownIdentifier { name, line, col, .. }) => {
                assert_eq!(name, "z");
                assert_eq!(line, 3);
                // `f_plus_x = "` is 12 characters, then `y - ` precedes z.
                assert_eq!(col, 17);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let src = EX1_CFG.replace("x - 2*x^2\"\nf_minus_x", "x - 2*)\"\nf_minus_x");
        match parse_system(&src) {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        match parse_system("[system\nf = 1") {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn time_in_autonomous_field_rejected() {
        let src = EX1_CFG.replace("y - x^2", "y - x^2 + t");
        assert!(matches!(parse_system(&src), Err(ConfigError::ForbiddenVariable { .. })));
    }

    #[test]
    fn invariant_violations_rejected() {
        let src = EX1_CFG.replace("G = \"-y\"", "G = \"1 - y\"");
        assert!(matches!(parse_system(&src), Err(ConfigError::Invariant(_))));
        let src = EX1_CFG.replace("x*sin(2*pi*t)", "sin(2*pi*t)");
        assert!(matches!(parse_system(&src), Err(ConfigError::Invariant(_))));
    }

    #[test]
    fn field_values() {
        let (s, _) = ex1();
        assert_eq!(eval_field(&s, Region::Minus, [1.0, 0.0], 0.37, 0.0).unwrap(), [1.0, -1.0]);
        assert_eq!(eval_field(&s, Region::Plus, [0.0, 0.0], 2.0, 0.0).unwrap(), [0.0, 0.0]);
        assert_eq!(eval_field(&s, Region::Plus, [1.0, 0.0], 0.0, 0.0).unwrap(), [-1.0, -1.0]);
        assert!(matches!(
            eval_field(&s, Region::Plus, [3.0, 0.0], 0.0, 0.0),
            Err(SystemError::OutsideDomain(_))
        ));
    }

    #[test]
    fn builtins() {
        let (s, _) = ex1();
        assert_eq!(s.g_exprs()[0].to_string(), "x*sin(2.0*pi*t)");
        let mut p = Params::new();
        p.insert("r".into(), "2".into());
        let (s, _) = builtin_example("exgen", &p).unwrap();
        let t: f64 = -2.7;
        let want = -(t.abs().sqrt().sin()).powi(5) * 0.5;
        assert!((s.g(t, [0.5, 0.1], 0.0).unwrap()[0] - want).abs() < 1e-15);
        assert_eq!(s.g(0.0, [0.5, 0.1], 0.0).unwrap()[0], 0.0);
        let (u, _) = builtin_example("unperturbed", &p).unwrap();
        assert!(u.is_unperturbed());
        p.insert("r".into(), "2.5".into());
        assert!(builtin_example("exgen", &p).is_err());
        assert!(matches!(builtin_example("nope", &p), Err(SystemError::UnknownExample(_))));
        let mut q = Params::new();
        q.insert("noise".into(), "2*cos(t)".into());
        assert!(builtin_example("exgen0", &q).is_err());
        q.insert("noise".into(), "cos(t)".into());
        assert!(builtin_example("exgen2", &q).is_err());
        q.insert("noise".into(), "sin(t)^3".into());
        assert!(builtin_example("exgen2", &q).is_ok());
        for n in BUILTIN_NAMES {
            assert!(builtin_example(n, &Params::new()).is_ok(), "{n}");
        }
    }

    #[test]
    fn residual_on_both_branches() {
        let (s, h) = ex1();
        let neg: Vec<f64> = (1..=50).map(|i| -0.1 * i as f64).collect();
        let pos: Vec<f64> = (1..=50).map(|i| 0.1 * i as f64).collect();
        assert!(homoclinic_residual(&s, &h, &neg).unwrap() < 1e-9);
        assert!(homoclinic_residual(&s, &h, &pos).unwrap() < 1e-9);
        let detuned = PiecewiseSystem::new(
            "detuned",
            [Expr::parse("y - x^2 + 0.1").unwrap(), Expr::parse("x - 2*x^2").unwrap()],
            [Expr::parse("y + x^2").unwrap(), Expr::parse("x - 2*x^2").unwrap()],
            [Expr::num(0.0), Expr::num(0.0)],
            Expr::parse("-y").unwrap(),
            DomainBox::default(),
            2.0,
        );
        let r = homoclinic_residual(&detuned, &h, &pos).unwrap();
        assert!(r > 1e-3 && (r - 0.1).abs() < 1e-12, "{r}");
    }

    #[test]
    fn homoclinic_regions_and_decay() {
        let (s, h) = ex1();
        for i in 1..300 {
            let t = 0.1 * i as f64;
            assert_eq!(s.region_of(h.eval(-t)).unwrap(), Some(Region::Minus));
            assert_eq!(s.region_of(h.eval(t)).unwrap(), Some(Region::Plus));
        }
        assert_eq!(s.switching(h.eval(0.0)).unwrap(), 0.0);
        assert!(h.eval(30.0)[0].hypot(h.eval(30.0)[1]) < 1e-12);
        assert!(h.eval(-30.0)[0].hypot(h.eval(-30.0)[1]) < 1e-12);
    }

    #[test]
    fn ex1_symmetry() {
        let (_, h) = ex1();
        for i in 0..200 {
            let t = 0.05 * i as f64;
            let a = h.eval(t);
            let b = h.eval(-t);
            assert!((a[0] - b[0]).abs() <= 1e-14);
            assert!((a[1] + b[1]).abs() <= 1e-14);
        }
    }

    #[test]
    fn numeric_homoclinic_matches_analytic() {
        let (s, h) = ex1();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let num = HomoclinicReference::numeric(&s, 1.0, [r, r], -1.0, [r, -r]).unwrap();
        assert!((num.gamma0[0] - 1.0).abs() < 1e-7 && num.gamma0[1].abs() < 1e-12);
        for i in -60..=60 {
            let t = 0.1 * i as f64;
            let a = num.eval(t);
            let b = h.eval(t);
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-7, "t={t}: {a:?} vs {b:?}");
        }
        let far = num.eval(-40.0);
        assert!(far[0].hypot(far[1]) < 1e-12);
    }

    #[test]
    fn time_scaling_multiplies_field() {
        let (s, _) = ex1();
        let s2 = s.time_scaled(2.0);
        let x = [0.3, -0.2];
        let a = s.f(Region::Plus, x).unwrap();
        let b = s2.f(Region::Plus, x).unwrap();
        assert_eq!([2.0 * a[0], 2.0 * a[1]], b);
    }

    #[test]
    fn jacobian_symbolic_matches_fd() {
        let (s, _) = ex1();
        let x = [0.3, -0.7];
        for r in [Region::Plus, Region::Minus] {
            let a = s.jacobian_f(r, x, 1e-6).unwrap();
            let b = s.jacobian_f_fd(r, x, 1e-6).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-8);
                }
            }
        }
        assert_eq!(s.trace_f(Region::Plus, [0.5, 0.0]).unwrap(), -1.0);
        assert_eq!(s.trace_f(Region::Minus, [0.5, 0.0]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn region_consistency(x in -2.0f64..2.0, y in -2.0f64..2.0, t in -10.0f64..10.0, eps in 0.0f64..0.1) {
            let (s, _) = ex1();
            let p = [x, y];
            let g = s.switching(p).unwrap();
            prop_assume!(g != 0.0);
            let region = if g > 0.0 { Region::Plus } else { Region::Minus };
            let src = if g > 0.0 { EX1_F_PLUS } else { EX1_F_MINUS };
            let env = Env::new(x, y, t, eps);
            let fx = Expr::parse(src[0]).unwrap().eval(&env).unwrap();
            let fy = Expr::parse(src[1]).unwrap().eval(&env).unwrap();
            let gx = x * (2.0 * std::f64::consts::PI * t).sin();
            let v = eval_field(&s, region, p, t, eps).unwrap();
            prop_assert!((v[0] - (fx + eps * gx)).abs() <= 1e-15 * (1.0 + v[0].abs()));
            prop_assert_eq!(v[1], fy);
        }
    }

    #[test]
    fn time_reversal_maps_solutions() {
        let (s, h) = ex1();
        let r = s.time_reversed();
        let hr = h.reversed();
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).filter(|t| *t != 0.0).collect();
        assert!(homoclinic_residual(&r, &hr, &grid).unwrap() < 1e-12);
        assert_eq!(hr.gamma0, h.gamma0);
        assert_eq!(r.region_of([0.3, -0.1]).unwrap(), Some(Region::Minus));
        for (t, x) in [(0.3, [0.2, -0.4]), (-1.7, [0.5, 0.1])] {
            for reg in [Region::Plus, Region::Minus] {
                let a = r.field(reg, t, x, 0.01).unwrap();
                let b = s.field(reg.other(), -t, x, 0.01).unwrap();
                assert!((a[0] + b[0]).abs() < 1e-15 && (a[1] + b[1]).abs() < 1e-15);
            }
        }
        assert_eq!(hr.reversed().eval(2.0), h.eval(2.0));
    }
}
