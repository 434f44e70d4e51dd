use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use laser_coherence::bounds::{
    bound_chain, default_cutoff, g_asymmetry, heisenberg_bound, msse_leading, msse_parts, msse_quadrature_with,
    sql_bound, HeterodyneSetup,
};
use laser_coherence::coherence::{
    coherence_quadrature, coherence_report, optimize_loss_profile, sweep_and_fit, sweep, FitAxis, SOLVE_TOL,
    SWEEP_CSV_HEADER,
};
use laser_coherence::control::{reconstruct_generator, Precision, Which, CONTROL_CSV_HEADER};
use laser_coherence::discrete::{channel_equivalence, discrete_report};
use laser_coherence::glauber::{delta_g1_profile, max_delta_g2, G1_CSV_HEADER};
use laser_coherence::solve::SolveMethod;
use laser_coherence::superop::build_liouvillian;
use laser_coherence::{build_model, Error, LaserModel};

/// Heisenberg-limited laser models: coherence, Glauber functions, bounds
/// and control synthesis.
///
/// Times and rates are in units where the beam flux is 1; `--flux`
/// rescales all model rates to a different flux. Coherence values do not
/// depend on this choice.
#[derive(Parser, Serialize)]
#[command(name = "laser-coherence", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize)]
struct Common {
    /// Cap on worker threads (default: hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write data here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format (default depends on the subcommand).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Seed for randomized restarts.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Beam flux defining the time unit.
    #[arg(long, global = true, default_value_t = 1.0)]
    flux: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Auto,
    Gmres,
    Lu,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AxisArg {
    Dim,
    Mu,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum WhichArg {
    Gain,
    Loss,
    Both,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PrecisionArg {
    Double,
    Extended,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "lowercase", tag = "command")]
enum Command {
    /// Build a model of the sin⁴ family and print it.
    Model {
        #[arg(long)]
        dim: usize,
        /// Also export the Liouvillian in Matrix Market format.
        #[arg(long)]
        matrix_market: Option<PathBuf>,
    },
    /// Coherence of one model.
    Coherence {
        #[arg(long)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        #[arg(long, default_value_t = SOLVE_TOL)]
        tol: f64,
        /// Cross-check against the time integral of G¹.
        #[arg(long)]
        quadrature: bool,
        /// Integration horizon in units of 1/linewidth.
        #[arg(long, default_value_t = 40.0)]
        horizon: f64,
    },
    /// Coherence over a list of dimensions, optionally with a power-law fit.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        fit: bool,
        /// Fit window on mu as `lo,hi`; `inf` leaves the upper end open.
        #[arg(long, default_value = "50,inf")]
        window: String,
        #[arg(long, value_enum, default_value_t = AxisArg::Dim)]
        axis: AxisArg,
    },
    /// First-order deviation curve on [0, smax/linewidth].
    G1 {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 10.0)]
        smax: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Largest second-order deviation over the window box.
    G2max {
        #[arg(long)]
        dim: usize,
        /// Odd lattice size per axis.
        #[arg(long, default_value_t = 9)]
        grid: usize,
        /// Polish the best lattice point with Nelder–Mead.
        #[arg(long)]
        refine: bool,
    },
    /// Finite time-step picture at coupling gamma.
    Discrete {
        #[arg(long)]
        dim: usize,
        /// Defaults to sqrt(dt) when only --dt is given.
        #[arg(long, required_unless_present = "dt")]
        gamma: Option<f64>,
        /// Also compare with the gain/loss unitaries at this time step.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Heisenberg and SQL bounds, and the bound chain if a coherence is known.
    Bounds {
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        coherence: Option<f64>,
        /// Take mu and the coherence from this model.
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Heterodyne filtering/retrofiltering MSE.
    Msse {
        #[arg(long)]
        linewidth: f64,
        /// Dimensionless window; defaults to sqrt(3/2).
        #[arg(long, conflicts_with = "tau")]
        sigma: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        /// Also evaluate the 4-D quadrature oracle.
        #[arg(long)]
        quadrature: bool,
        #[arg(long, default_value_t = 24)]
        order: usize,
    },
    /// G-asymmetry of a phase-diffusing beam.
    Asymmetry {
        #[arg(long, value_delimiter = ',', required = true)]
        nbar: Vec<f64>,
        /// Truncation of the photon-number sum (default 50·nbar).
        #[arg(long)]
        cutoff: Option<u64>,
    },
    /// Vandermonde control synthesis of the gain/loss generators.
    Control {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, value_enum, default_value_t = WhichArg::Both)]
        which: WhichArg,
        /// Default: double up to dim 12, extended above.
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
    },
    /// Maximize the coherence over loss profiles.
    Optimize {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
    },
}

enum Failure {
    Core(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

struct Output<'a> {
    common: &'a Common,
    header: String,
}

impl Output<'_> {
    fn format(&self, default: Format) -> Format {
        self.common.format.unwrap_or(default)
    }

    /// Writes the data with the config header and prints the summary.
    fn emit(&self, body: &str, summary: &str) -> Outcome {
        let text = format!("{}\n{}\n", self.header, body.trim_end());
        match &self.common.out {
            Some(path) => {
                fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
                println!("{summary}");
            }
            None => {
                print!("{text}");
                eprintln!("{summary}");
            }
        }
        Ok(())
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable output")
}

fn model_in_units(dim: usize, flux: f64) -> Result<LaserModel, Error> {
    build_model(dim)?.with_flux(flux)
}

fn parse_window(s: &str) -> Result<(f64, f64), Error> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parse = |p: &str| -> Result<f64, Error> {
        match p {
            "inf" | "+inf" | "" => Ok(f64::INFINITY),
            _ => p
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("cannot parse window bound '{p}'"))),
        }
    };
    if parts.len() != 2 {
        return Err(Error::Validation(format!("window must be 'lo,hi', got '{s}'")));
    }
    let lo = if parts[0].is_empty() { 0.0 } else { parse(parts[0])? };
    let hi = parse(parts[1])?;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::Validation(format!("window needs 0 <= lo < hi, got [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

fn run(cli: &Cli) -> Outcome {
    let common = &cli.common;
    if !(common.flux > 0.0 && common.flux.is_finite()) {
        return Err(Error::Validation(format!("--flux must be positive, got {}", common.flux)).into());
    }
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Io(format!("thread pool: {e}")))?;
    }
    let header = format!(
        "# laser-coherence {} {}",
        env!("CARGO_PKG_VERSION"),
        serde_json::to_string(cli).expect("config serializes")
    );
    let out = Output { common, header };
    let flux = common.flux;

    match &cli.command {
        Command::Model { dim, matrix_market } => {
            let m = model_in_units(*dim, flux)?;
            if let Some(path) = matrix_market {
                build_liouvillian(&m)
                    .write_matrix_market(path)
                    .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
            }
            let body = match out.format(Format::Json) {
                Format::Json => m.to_json(),
                Format::Csv => {
                    let mut s = String::from("n,gain,loss,steady\n");
                    for n in 0..m.dim {
                        s.push_str(&format!("{n},{:e},{:e},{:e}\n", m.g(n), m.l(n), m.steady[n]));
                    }
                    s
                }
            };
            out.emit(&body, &format!("model dim={} mu={} flux={}", m.dim, m.mu, m.flux))
        }
        Command::Coherence {
            dim,
            method,
            tol,
            quadrature,
            horizon,
        } => {
            let m = model_in_units(*dim, flux)?;
            let method = match method {
                MethodArg::Auto => None,
                MethodArg::Gmres => Some(SolveMethod::Gmres),
                MethodArg::Lu => Some(SolveMethod::BlockLu),
            };
            let rep = coherence_report(&m, method, *tol)?;
            let m = m.with_coherence(rep.coherence);
            let quad = if *quadrature {
                Some(coherence_quadrature(&m, *horizon)?)
            } else {
                None
            };
            let linewidth = m.linewidth.expect("set above");
            let body = match out.format(Format::Json) {
                Format::Json => pretty(&json!({
                    "dim": m.dim,
                    "mu": m.mu,
                    "flux": m.flux,
                    "coherence": rep.coherence,
                    "linewidth": linewidth,
                    "method": rep.method,
                    "residual": rep.residual,
                    "iterations": rep.iterations,
                    "quadrature": quad,
                })),
                Format::Csv => format!(
                    "dim,mu,coherence,flux,linewidth,method,residual,quadrature\n{},{},{:.15e},{:.15e},{:.15e},{},{:e},{}",
                    m.dim,
                    m.mu,
                    rep.coherence,
                    m.flux,
                    linewidth,
                    serde_json::to_value(rep.method).expect("enum").as_str().unwrap_or(""),
                    rep.residual,
                    quad.as_ref().map(|q| format!("{:.15e}", q.coherence)).unwrap_or_default()
                ),
            };
            out.emit(&body, &format!("coherence dim={} C={:.10e}", m.dim, rep.coherence))
        }
        Command::Sweep { dims, fit, window, axis } => {
            let window = parse_window(window)?;
            if dims.iter().any(|&d| d < 2) {
                return Err(Error::Validation("every dimension must be at least 2".into()).into());
            }
            let axis = match axis {
                AxisArg::Dim => FitAxis::Dim,
                AxisArg::Mu => FitAxis::Mu,
            };
            eprintln!("sweeping {} dimensions (largest {})", dims.len(), dims.iter().max().unwrap_or(&0));
            let t0 = Instant::now();
            let (rows, fitted) = if *fit {
                let (r, f) = sweep_and_fit(dims, window, axis)?;
                (r, Some(f))
            } else {
                (sweep(dims)?, None)
            };
            eprintln!("sweep finished in {:.2?}", t0.elapsed());
            let rows: Vec<_> = rows
                .into_iter()
                .map(|mut r| {
                    // rates scale with the flux; the coherence does not
                    r.linewidth *= flux / r.flux;
                    r.flux = flux;
                    r
                })
                .collect();
            let default = if fitted.is_some() { Format::Json } else { Format::Csv };
            let body = match out.format(default) {
                Format::Csv => {
                    let mut s = format!("{SWEEP_CSV_HEADER}\n");
                    for r in &rows {
                        s.push_str(&r.csv_line());
                        s.push('\n');
                    }
                    s
                }
                Format::Json => match &fitted {
                    Some(f) => {
                        let mut v = serde_json::to_value(f).expect("fit serializes");
                        v["rows"] = serde_json::to_value(&rows).expect("rows serialize");
                        pretty(&v)
                    }
                    None => pretty(&json!({ "rows": rows })),
                },
            };
            let summary = match &fitted {
                Some(f) => format!(
                    "sweep {} dims; exponent={:.4} coefficient={:.5} (other axis {:.4})",
                    rows.len(),
                    f.exponent,
                    f.coefficient,
                    f.other_axis_exponent.unwrap_or(f64::NAN)
                ),
                None => format!("sweep {} dims", rows.len()),
            };
            out.emit(&body, &summary)
        }
        Command::G1 { dim, smax, points } => {
            let m = model_in_units(*dim, flux)?;
            let p = delta_g1_profile(&m, *smax, *points)?;
            let body = match out.format(Format::Csv) {
                Format::Csv => {
                    let mut s = format!("{G1_CSV_HEADER}\n");
                    for x in &p.samples {
                        s.push_str(&x.csv_line());
                        s.push('\n');
                    }
                    s
                }
                Format::Json => pretty(&p),
            };
            out.emit(&body, &format!("g1 dim={dim} max_delta={:.6e}", p.max_delta))
        }
        Command::G2max { dim, grid, refine } => {
            let m = model_in_units(*dim, flux)?;
            eprintln!("scanning {grid}^4 lattice at dim {dim}{}", if *refine { " with refinement" } else { "" });
            let t0 = Instant::now();
            let r = max_delta_g2(&m, *grid, *refine)?;
            eprintln!("scan finished in {:.2?}", t0.elapsed());
            let body = match out.format(Format::Json) {
                Format::Json => r.to_json(),
                Format::Csv => {
                    let a = r.argmax;
                    format!(
                        "dim,tau,s,s_prime,t_prime,t,delta,corner_delta\n{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                        r.dim, r.tau, a[0], a[1], a[2], a[3], r.delta, r.corner_delta
                    )
                }
            };
            out.emit(
                &body,
                &format!("g2max dim={dim} delta={:.6e} C^-1/2={:.6e}", r.delta, r.coherence.powf(-0.5)),
            )
        }
        Command::Discrete { dim, gamma, dt } => {
            let m = model_in_units(*dim, flux)?;
            let gamma = gamma.or(dt.map(f64::sqrt)).expect("clap requires gamma or dt");
            let rep = discrete_report(&m, gamma)?;
            let choi = dt.map(|dt| channel_equivalence(&m, dt)).transpose()?;
            let body = match out.format(Format::Json) {
                Format::Json => {
                    let mut v = serde_json::to_value(&rep).expect("report serializes");
                    if let Some(c) = choi {
                        v["channel_distance"] = json!(c);
                        v["dt"] = json!(dt);
                    }
                    pretty(&v)
                }
                Format::Csv => format!(
                    "dim,gamma,isometry_residual,fixed_point_residual,liouvillian_residual,discrete_coherence,one_site_term,channel_distance\n{},{:e},{:e},{:e},{:e},{:.15e},{:e},{}",
                    rep.dim,
                    rep.gamma,
                    rep.isometry_residual,
                    rep.fixed_point_residual,
                    rep.liouvillian_residual,
                    rep.discrete_coherence,
                    rep.one_site_term,
                    choi.map(|c| format!("{c:e}")).unwrap_or_default()
                ),
            };
            out.emit(
                &body,
                &format!("discrete dim={dim} gamma={gamma} C_disc={:.10e}", rep.discrete_coherence),
            )
        }
        Command::Bounds { mu, coherence, dim } => {
            let (mu, c) = match (dim, mu) {
                (Some(d), None) => {
                    let m = model_in_units(*d, flux)?;
                    let rep = coherence_report(&m, None, SOLVE_TOL)?;
                    (m.mu, Some(coherence.unwrap_or(rep.coherence)))
                }
                (None, Some(mu)) => (*mu, *coherence),
                (Some(_), Some(_)) => {
                    return Err(Error::Validation("give either --mu or --dim, not both".into()).into())
                }
                (None, None) => return Err(Error::Validation("bounds needs --mu or --dim".into()).into()),
            };
            if !(mu > 0.0) {
                return Err(Error::Validation(format!("mu must be positive, got {mu}")).into());
            }
            let h = heisenberg_bound(mu);
            let q = sql_bound(mu);
            let chain = c.map(|c| bound_chain(mu, c)).transpose()?;
            let body = match out.format(Format::Json) {
                Format::Json => pretty(&json!({ "mu": mu, "heisenberg": h, "sql": q, "chain": chain })),
                Format::Csv => {
                    let mut s = String::from("mu,heisenberg,sql,coherence,lhs,rhs,slack,satisfied\n");
                    s.push_str(&format!("{mu},{h:.10e},{q:.10e}"));
                    match chain {
                        Some(b) => s.push_str(&format!(
                            ",{:.10e},{:.10e},{:.10e},{:.10e},{}",
                            b.coherence, b.lhs, b.rhs, b.slack, b.satisfied
                        )),
                        None => s.push_str(",,,,,"),
                    }
                    s
                }
            };
            let mut summary = format!("heisenberg={h:.1} sql={q:.1}");
            if let Some(b) = chain {
                summary.push_str(&format!(" slack={:.3} satisfied={}", b.slack, b.satisfied));
            }
            out.emit(&body, &summary)
        }
        Command::Msse {
            linewidth,
            sigma,
            tau,
            quadrature,
            order,
        } => {
            let setup = match tau {
                Some(t) => HeterodyneSetup::new(flux, *linewidth, *t)?,
                None => HeterodyneSetup::from_sigma(flux, *linewidth, sigma.unwrap_or(1.5f64.sqrt()))?,
            };
            let parts = msse_parts(&setup);
            let quad = if *quadrature {
                Some(msse_quadrature_with(&setup, *order, 1e-8)?)
            } else {
                None
            };
            let leading = msse_leading(&setup);
            let body = match out.format(Format::Json) {
                Format::Json => pretty(&json!({
                    "setup": setup,
                    "s_dag_s": parts.s_dag_s,
                    "s_squared": parts.s_squared,
                    "msse": parts.msse,
                    "leading": leading,
                    "quadrature": quad,
                })),
                Format::Csv => format!(
                    "flux,linewidth,tau,sigma,msse,leading,quadrature\n{},{},{:.15e},{:.15e},{:.15e},{:.15e},{}",
                    setup.flux,
                    setup.linewidth,
                    setup.tau,
                    setup.sigma,
                    parts.msse,
                    leading,
                    quad.map(|q| format!("{:.15e}", q.parts.msse)).unwrap_or_default()
                ),
            };
            out.emit(&body, &format!("msse={:.10e} leading={:.10e}", parts.msse, leading))
        }
        Command::Asymmetry { nbar, cutoff } => {
            let mut rows = Vec::new();
            for &n in nbar {
                rows.push(g_asymmetry(n, cutoff.unwrap_or_else(|| default_cutoff(n)))?);
            }
            let body = match out.format(Format::Csv) {
                Format::Csv => {
                    let mut s = String::from("nbar,cutoff,value,tail_bound\n");
                    for r in &rows {
                        s.push_str(&format!("{},{},{:.15e},{:e}\n", r.nbar, r.cutoff, r.value, r.tail_bound));
                    }
                    s
                }
                Format::Json => pretty(&rows),
            };
            out.emit(&body, &format!("asymmetry over {} values", rows.len()))
        }
        Command::Control { dims, which, precision } => {
            let kinds: &[Which] = match which {
                WhichArg::Gain => &[Which::Gain],
                WhichArg::Loss => &[Which::Loss],
                WhichArg::Both => &[Which::Gain, Which::Loss],
            };
            let precision = precision.map(|p| match p {
                PrecisionArg::Double => Precision::Double,
                PrecisionArg::Extended => Precision::Extended,
            });
            let mut rows = Vec::new();
            for &d in dims {
                let m = build_model(d)?;
                for &w in kinds {
                    rows.push(reconstruct_generator(&m, w, precision)?);
                }
            }
            let body = match out.format(Format::Csv) {
                Format::Csv => {
                    let mut s = format!("{CONTROL_CSV_HEADER}\n");
                    for r in &rows {
                        s.push_str(&r.csv_line());
                        s.push('\n');
                    }
                    s
                }
                Format::Json => pretty(&rows),
            };
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            out.emit(&body, &format!("control {} generators, max residual {worst:.3e}", rows.len()))
        }
        Command::Optimize { dim, budget } => {
            eprintln!("optimizing {} loss rates with budget {budget}", dim.saturating_sub(1));
            let t0 = Instant::now();
            let r = optimize_loss_profile(*dim, *budget, None, common.seed)?;
            eprintln!("optimization finished in {:.2?}", t0.elapsed());
            let summary = format!(
                "optimize dim={dim} C={:.6e} fidelity={:.4} converged={}",
                r.coherence, r.fidelity, r.converged
            );
            let model = r.model.with_flux(flux)?;
            let body = match out.format(Format::Json) {
                Format::Json => pretty(&json!({
                    "dim": dim,
                    "coherence": r.coherence,
                    "fidelity": r.fidelity,
                    "evaluations": r.evaluations,
                    "converged": r.converged,
                    "model": model,
                })),
                Format::Csv => {
                    let mut s = String::from("n,loss,steady\n");
                    for n in 0..model.dim {
                        s.push_str(&format!("{n},{:e},{:e}\n", model.l(n), model.steady[n]));
                    }
                    s
                }
            };
            out.emit(&body, &summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to stdout and errors with usage to stderr
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
