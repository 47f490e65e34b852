use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use pwchaos::acceptance;
use pwchaos::chaos::{bernoulli_check, glue, periodic_time_sequence, ChaosSetup, GluedOrbit, OrbitView, SearchOptions, SymbolWindow};
use pwchaos::integrator::{integrate, IntegratorOptions};
use pwchaos::leaves::{loop_map, LeafOptions, LoopContext, LoopMapOptions, Orientation};
use pwchaos::melnikov::{melnikov_profile, MelnikovMode, MelnikovOptions};
use pwchaos::recurrence::{
    build_time_sequence, is_periodic, locate_zeros, verify_p1, P1Options, SequenceMode, SequenceOptions, TimeSequence,
};
use pwchaos::spectral::{analyze_origin, derived_constants, ogap, ConstantsTable, SpectralReport};
use pwchaos::system::{builtin_example, parse_system, HomoclinicReference, Params, PiecewiseSystem};

#[derive(Parser, Serialize)]
#[command(name = "pwchaos", version, about = "Melnikov analysis and chaotic itineraries for piecewise-smooth planar systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Reserved; recorded in the manifest, never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "PWCHAOS_THREADS")]
    threads: Option<usize>,
    /// Write the main output here instead of standard output.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Write the run manifest here (default: next to the output, or
    /// standard error when printing to standard output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone)]
struct SystemArgs {
    /// Config file, or `builtin:NAME` for a built-in example.
    config: String,
    /// Built-in example parameter `key=value` (repeatable).
    #[arg(long = "param", value_parser = parse_kv)]
    params: Vec<(String, String)>,
}

#[derive(Args, Serialize, Clone)]
struct SequenceArgs {
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    /// `tandknu` or `tandknunew`.
    #[arg(long, default_value = "tandknu")]
    mode: String,
    /// Level `c̄` for the recurrence certificate.
    #[arg(long, default_value_t = 0.05)]
    c_bar: f64,
    /// Fixed gap `T_{j+1} − T_j` for periodic perturbations; the greedy
    /// minimal-gap selection is used when absent.
    #[arg(long)]
    gap: Option<f64>,
    /// Period of the perturbation, used with `--gap`.
    #[arg(long, default_value_t = 1.0)]
    period: f64,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Eigendata, hypothesis verdicts, scenario and constants (JSON).
    Analyze {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
    },
    /// Integrate one orbit (CSV: t, x, y, region, eventFlag).
    Integrate {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        x0: (f64, f64),
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long, allow_hyphen_values = true)]
        t1: f64,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Sample the Melnikov function (CSV: tau, M, Mprime, err).
    Melnikov {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// `full` or `simplified`.
        #[arg(long, default_value = "full")]
        mode: String,
        #[arg(long)]
        deriv: bool,
    },
    /// Admissible time sequence (JSON: T, brackets, B, lambda1, ogapActual).
    Sequence {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        seq: SequenceArgs,
        /// Indices on each side of 0.
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Loop map over log-spaced offsets (CSV: d, tHalf, t1, d1, boundLo, boundHi, pass).
    Loopmap {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        tau: f64,
        #[arg(long, default_value_t = 1e-8)]
        dmin: f64,
        #[arg(long, default_value_t = 1e-4)]
        dmax: f64,
        #[arg(long, default_value_t = 9)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        /// Exponent slack of the bounds (default half of mu0).
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        backward: bool,
    },
    /// Glue an orbit for a symbol window (JSON) and dump its trajectory (CSV).
    Shadow {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        seq: SequenceArgs,
        /// Symbols with the centre at index 0, e.g. `10101`.
        #[arg(long)]
        symbols: String,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        /// Trajectory CSV (t, x, y).
        #[arg(long, default_value = "shadow_trajectory.csv")]
        trajectory: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        sample_step: f64,
    },
    /// Glue one symbol window at several `ε` and report the measured
    /// `|α₀|` and shadow distance envelopes (JSON).
    Envelope {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, default_value = "111")]
        symbols: String,
        #[arg(long, value_delimiter = ',', default_value = "1e-3,5e-4,2.5e-4")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long, default_value = "tandknu")]
        mode: String,
        #[arg(long, default_value_t = 0.05)]
        c_bar: f64,
        /// Period of the perturbation; the gap at each `ε` is the smallest
        /// multiple of it not below the admissible minimum. Without it the
        /// greedy sequence is used.
        #[arg(long)]
        period: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Commutation of the coding with the shift (JSON table).
    Bernoulli {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        seq: SequenceArgs,
        #[arg(long, default_value_t = 1)]
        depth: usize,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Run only these criteria.
        #[arg(long)]
        only: Vec<u8>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze { .. } => "analyze",
            Command::Integrate { .. } => "integrate",
            Command::Melnikov { .. } => "melnikov",
            Command::Sequence { .. } => "sequence",
            Command::Loopmap { .. } => "loopmap",
            Command::Shadow { .. } => "shadow",
            Command::Envelope { .. } => "envelope",
            Command::Bernoulli { .. } => "bernoulli",
            Command::Selftest { .. } => "selftest",
        }
    }

    fn system_args(&self) -> Option<&SystemArgs> {
        match self {
            Command::Analyze { sys, .. }
            | Command::Integrate { sys, .. }
            | Command::Melnikov { sys, .. }
            | Command::Sequence { sys, .. }
            | Command::Loopmap { sys, .. }
            | Command::Shadow { sys, .. }
            | Command::Envelope { sys, .. }
            | Command::Bernoulli { sys, .. } => Some(sys),
            Command::Selftest { .. } => None,
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    parameters: serde_json::Value,
    config_hash: Option<String>,
    tool_version: String,
    wall_time_seconds: f64,
    outputs: Vec<String>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected a,b, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(a)?, p(b)?))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Loaded {
    sys: PiecewiseSystem,
    hom: Option<HomoclinicReference>,
    hash: String,
}

fn load_system(a: &SystemArgs) -> Result<Loaded> {
    if let Some(name) = a.config.strip_prefix("builtin:") {
        let params: Params = a.params.iter().cloned().collect();
        let (sys, hom) = builtin_example(name, &params)?;
        let key = format!("{name}:{params:?}");
        return Ok(Loaded {
            sys,
            hom,
            hash: sha256_hex(key.as_bytes()),
        });
    }
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config))?;
    let sys = parse_system(&text).with_context(|| format!("parsing {}", a.config))?;
    let hom = homoclinic_for(&sys)?;
    Ok(Loaded {
        sys,
        hom,
        hash: sha256_hex(text.as_bytes()),
    })
}

/// Analytic loop when the unperturbed part is the first example's, traced
/// otherwise.
fn homoclinic_for(sys: &PiecewiseSystem) -> Result<Option<HomoclinicReference>> {
    let (ex1, _) = builtin_example("ex1", &Params::new())?;
    if ex1.with_perturbation(sys.name(), sys.g_exprs().clone()) == *sys {
        return Ok(Some(HomoclinicReference::analytic_ex1()));
    }
    let r = analyze_origin(sys, None)?;
    if !(r.verdicts.f0 && r.verdicts.f1) {
        return Ok(None);
    }
    Ok(HomoclinicReference::numeric(sys, r.lambda_u_minus, r.v_u_minus, r.lambda_s_plus, r.v_s_plus).ok())
}

fn require_hom(l: &Loaded) -> Result<&HomoclinicReference> {
    l.hom
        .as_ref()
        .ok_or_else(|| anyhow!("no homoclinic loop available for this system"))
}

fn report_and_consts(l: &Loaded) -> Result<(SpectralReport, ConstantsTable)> {
    let r = analyze_origin(&l.sys, l.hom.as_ref())?;
    let c = derived_constants(&r);
    Ok((r, c))
}

fn make_sequence(l: &Loaded, a: &SequenceArgs, count: usize) -> Result<TimeSequence> {
    let hom = require_hom(l)?;
    let (_, consts) = report_and_consts(l)?;
    let mode: SequenceMode = a.mode.parse().map_err(|e: String| anyhow!(e))?;
    if let Some(gap) = a.gap {
        if !is_periodic(&l.sys, a.period) {
            bail!("--gap needs a perturbation with period {}", a.period);
        }
        return Ok(periodic_time_sequence(
            &l.sys, hom, &consts, a.eps, a.nu, 0.0, gap, a.period, count, mode, a.c_bar,
        )?);
    }
    let opts = MelnikovOptions::with_mode(MelnikovMode::FullTrace);
    let reach = (count as f64 + 1.0) * ogap(consts.k0, a.nu, a.eps) + 5.0;
    // Coarse samples only locate the extrema and sign changes; zeros are refined on `M`.
    let profile = melnikov_profile(&l.sys, hom, (-reach, reach), 0.05, &opts, false)?;
    let cert = verify_p1(&profile, a.c_bar, &P1Options::default())?;
    let mel = pwchaos::melnikov::Melnikov::new(&l.sys, hom, opts)?;
    let m = |t: f64| mel.value(t).map(|v| v.value);
    let zeros = locate_zeros(&profile, &cert, &m)?;
    Ok(build_time_sequence(
        &cert,
        &zeros,
        a.eps,
        a.nu,
        mode,
        count,
        &consts,
        &SequenceOptions::default(),
        Some(&m),
    )?)
}

fn chaos_setup(l: &Loaded, a: &SequenceArgs, count: usize, tol: f64) -> Result<ChaosSetup> {
    let hom = require_hom(l)?;
    // Refuse before the (comparatively costly) sequence construction.
    let (r, _) = report_and_consts(l)?;
    if !r.verdicts.all() || r.scenario != Some(1) {
        bail!(
            "hypotheses fail, refusing to search: verdicts {:?}, scenario {:?}",
            r.verdicts,
            r.scenario
        );
    }
    let seq = make_sequence(l, a, count)?;
    let opts = SearchOptions {
        nu: a.nu,
        tol,
        ..Default::default()
    };
    Ok(ChaosSetup::new(&l.sys, hom, a.eps, seq, LeafOptions::default(), opts)?)
}

fn csv_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(csv_f).unwrap_or_default()
}

struct Out {
    primary: String,
    /// Extra files written by the command.
    files: Vec<String>,
    hash: Option<String>,
    ok: bool,
}

fn run_command(cli: &Cli) -> Result<Out> {
    let loaded = cli.command.system_args().map(load_system).transpose()?;
    let l = || loaded.as_ref().expect("system loaded");
    let mut files = Vec::new();
    let mut ok = true;
    let primary = match &cli.command {
        Command::Analyze { eps, nu, .. } => {
            let (r, c) = report_and_consts(l())?;
            let inv = l().sys.invariants()?;
            serde_json::to_string_pretty(&json!({
                "system": l().sys.name(),
                "report": r,
                "constants": c,
                "invariants": inv,
                "eps": eps,
                "nu": nu,
                "ogap": ogap(c.k0, *nu, *eps),
                "homoclinic": l().hom.as_ref().map(|h| h.gamma0),
            }))?
        }
        Command::Integrate { x0, t0, t1, eps, .. } => {
            let tr = integrate(&l().sys, *t0, [x0.0, x0.1], *t1, *eps, &IntegratorOptions::default())?;
            let mut rows: Vec<(f64, String)> = Vec::new();
            for s in &tr.samples {
                rows.push((s.t, format!("{},{},{},{},0", csv_f(s.t), csv_f(s.x[0]), csv_f(s.x[1]), s.region)));
            }
            for e in &tr.events {
                rows.push((e.time, format!("{},{},{},{},1", csv_f(e.time), csv_f(e.point[0]), csv_f(e.point[1]), e.to)));
            }
            let dir = (t1 - t0).signum();
            rows.sort_by(|a, b| (dir * a.0).total_cmp(&(dir * b.0)));
            let mut s = String::from("t,x,y,region,eventFlag\n");
            for (_, r) in rows {
                s.push_str(&r);
                s.push('\n');
            }
            s
        }
        Command::Melnikov {
            from, to, step, mode, deriv, ..
        } => {
            let mode: MelnikovMode = mode.parse().map_err(|e: String| anyhow!(e))?;
            if !(*step > 0.0) || to < from {
                bail!("need --from <= --to and a positive --step");
            }
            let p = melnikov_profile(&l().sys, require_hom(l())?, (*from, *to), *step, &MelnikovOptions::with_mode(mode), *deriv)?;
            let mut s = String::from("tau,M,Mprime,err\n");
            for i in 0..p.grid.len() {
                let d = p.derivs.as_ref().map(|d| d[i]);
                s.push_str(&format!("{},{},{},{}\n", csv_f(p.grid[i]), csv_f(p.values[i]), csv_opt(d), csv_f(p.errors[i])));
            }
            s
        }
        Command::Sequence { seq, count, .. } => {
            let q = make_sequence(l(), seq, *count)?;
            serde_json::to_string_pretty(&json!({
                "T": q.t,
                "jMin": q.j_min,
                "brackets": q.brackets,
                "B": q.gaps_b,
                "lambda1": q.lambda1,
                "ogapActual": q.min_gap(),
                "mode": q.mode,
                "eps": q.eps,
                "nu": q.nu,
            }))?
        }
        Command::Loopmap {
            eps,
            tau,
            dmin,
            dmax,
            samples,
            nu,
            mu,
            backward,
            ..
        } => {
            if !(*dmin > 0.0 && dmax >= dmin) || *samples == 0 {
                bail!("need 0 < --dmin <= --dmax and --samples >= 1");
            }
            let ctx = LoopContext::new(&l().sys, require_hom(l())?, *eps, LeafOptions::default())?;
            let o = if *backward { Orientation::Backward } else { Orientation::Forward };
            let opts = LoopMapOptions {
                nu: *nu,
                mu: *mu,
                ..Default::default()
            };
            let mut s = String::from("d,tHalf,t1,d1,boundLo,boundHi,pass\n");
            for i in 0..*samples {
                let u = if *samples == 1 { 0.0 } else { i as f64 / (*samples - 1) as f64 };
                let d = (dmin.ln() + u * (dmax.ln() - dmin.ln())).exp();
                let r = loop_map(&ctx, d, *tau, o, &opts)?;
                let b = r.bounds;
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    csv_f(d),
                    csv_f(r.t_half),
                    csv_f(r.t1),
                    csv_opt(r.d1),
                    csv_opt(b.map(|b| b.d_lo)),
                    csv_opt(b.map(|b| b.d_hi)),
                    b.is_some_and(|b| b.pass)
                ));
            }
            s
        }
        Command::Shadow {
            seq,
            symbols,
            tol,
            trajectory,
            sample_step,
            ..
        } => {
            let e = SymbolWindow::centered(symbols)?;
            let reach = e.j_min.abs().max(e.j_max()) as usize;
            let setup = chaos_setup(l(), seq, 2 * reach + 3, *tol)?;
            let r = glue(&setup, &e)?;
            ok = r.verified;
            let orbit = GluedOrbit::new(r.tau_star, &r.backward, &r.forward);
            let lo = setup.seq.get(2 * e.j_min - 1).ok_or_else(|| anyhow!("sequence too short"))?;
            let hi = setup.seq.get(2 * e.j_max() + 1).ok_or_else(|| anyhow!("sequence too short"))?;
            let n = ((hi - lo) / sample_step).floor() as usize;
            let mut csv = String::from("t,x,y\n");
            for i in 0..=n {
                let t = lo + i as f64 * sample_step;
                if let Some(x) = orbit.eval(t) {
                    csv.push_str(&format!("{},{},{}\n", csv_f(t), csv_f(x[0]), csv_f(x[1])));
                }
            }
            fs::write(trajectory, csv).with_context(|| format!("writing {}", trajectory.display()))?;
            files.push(trajectory.display().to_string());
            serde_json::to_string_pretty(&r)?
        }
        Command::Envelope {
            symbols,
            eps,
            nu,
            mode,
            c_bar,
            period,
            tol,
            ..
        } => {
            let e = SymbolWindow::centered(symbols)?;
            let reach = e.j_min.abs().max(e.j_max()) as usize;
            let (_, consts) = report_and_consts(l())?;
            let mut rows = Vec::new();
            for &eps in eps {
                let gap = period.map(|p| (ogap(consts.k0, *nu, eps) / p).ceil() * p);
                let a = SequenceArgs {
                    eps,
                    nu: *nu,
                    mode: mode.clone(),
                    c_bar: *c_bar,
                    gap,
                    period: period.unwrap_or(1.0),
                };
                let setup = chaos_setup(l(), &a, 2 * reach + 3, *tol)?;
                let row = match glue(&setup, &e) {
                    Ok(r) => {
                        let sup = r.sup_distances.values().fold(0.0_f64, |m, &v| m.max(v));
                        json!({
                            "eps": eps,
                            "gap": setup.seq.min_gap(),
                            "verified": r.verified,
                            "alpha0": r.alpha0,
                            "alpha0OverEps": r.alpha0 / eps,
                            "supDistance": sup,
                            "supOverEps": sup / eps,
                            "error": null,
                        })
                    }
                    Err(err) => json!({ "eps": eps, "gap": setup.seq.min_gap(), "verified": false, "error": err.to_string() }),
                };
                rows.push(row);
            }
            let largest = rows
                .iter()
                .filter(|r| r["verified"] == true)
                .filter_map(|r| r["eps"].as_f64())
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            ok = largest.is_some();
            serde_json::to_string_pretty(&json!({
                "symbols": e.as_string(),
                "rows": rows,
                "largestPassingEps": largest,
            }))?
        }
        Command::Bernoulli { seq, depth, tol, .. } => {
            let setup = chaos_setup(l(), seq, 2 * depth + 6, *tol)?;
            let r = bernoulli_check(&setup, *depth)?;
            ok = r.pass;
            serde_json::to_string_pretty(&r)?
        }
        Command::Selftest { only } => {
            let ids: Vec<u8> = if only.is_empty() {
                acceptance::criteria().iter().map(|c| c.0).collect()
            } else {
                only.clone()
            };
            let mut outcomes = Vec::new();
            for id in ids {
                let o = acceptance::run(id).ok_or_else(|| anyhow!("unknown criterion {id}"))?;
                eprintln!("{}", o.line());
                ok &= o.pass;
                outcomes.push(o);
            }
            serde_json::to_string_pretty(&outcomes)?
        }
    };
    let mut primary = primary;
    if !primary.ends_with('\n') {
        primary.push('\n');
    }
    let hash = loaded.map(|l| l.hash);
    Ok(Out { primary, files, hash, ok })
}

fn write_manifest(cli: &Cli, hash: Option<String>, seconds: f64, outputs: Vec<String>) -> Result<()> {
    let m = RunManifest {
        subcommand: cli.command.name().to_string(),
        parameters: serde_json::to_value(cli)?,
        config_hash: hash,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: seconds,
        outputs,
    };
    let text = serde_json::to_string_pretty(&m)?;
    let target = cli
        .manifest
        .clone()
        .or_else(|| cli.output.as_ref().map(|o| manifest_beside(o)));
    match target {
        Some(p) => fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn manifest_beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": format!("thread pool: {e}") }));
            return ExitCode::from(1);
        }
    }
    let start = Instant::now();
    let result = run_command(&cli).and_then(|out| {
        let mut outputs = out.files.clone();
        match &cli.output {
            Some(p) => {
                fs::write(p, &out.primary).with_context(|| format!("writing {}", p.display()))?;
                outputs.insert(0, p.display().to_string());
            }
            None => {
                let mut so = std::io::stdout().lock();
                so.write_all(out.primary.as_bytes())?;
                so.flush()?;
            }
        }
        write_manifest(&cli, out.hash.clone(), start.elapsed().as_secs_f64(), outputs)?;
        Ok(out.ok)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!(
                "{}",
                json!({ "subcommand": cli.command.name(), "error": chain.first(), "causes": &chain[1..] })
            );
            ExitCode::from(1)
        }
    }
}
