use std::fs;

use serde::Serialize;

use nullctl_core::bessel::bessel_oracle;
use nullctl_core::carleman::{
    empirical_carleman_ratio, random_initial_datum, s_grid, select_parameters, sigma_profile, weight_psi_phi,
    CarlemanParameters, RatioRow,
};
use nullctl_core::config::ConfigDocument;
use nullctl_core::control::{
    estimate_observability_constant, modal_state, simulate_forward, state_norm, synthesize_null_control,
    verify_null_control, ControlField, SynthesisOptions, VerificationReport,
};
use nullctl_core::error::Error;
use nullctl_core::kalman::{
    adjoint_mode_trajectory, dichotomy_scan, kernel_witness, truncated_norm_constants, Dichotomy, KalmanReport,
    NormConstants,
};
use nullctl_core::model::{Interval, SystemSpec};
use nullctl_core::operator::{assemble_operator, DiscreteOperator};
use nullctl_core::spectral::{compute_spectrum, SpectralBasis};

use crate::output::OutputDir;
use crate::{Command, Common, Failure};

struct Context {
    doc: ConfigDocument,
    spec: SystemSpec,
    out: OutputDir,
}

fn load(command: Command, common: &Common) -> Result<Context, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Schema("--config PATH is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
    let mut doc = ConfigDocument::parse(&text)?;
    if let Some(nx) = common.nx {
        doc.grid.nx = nx;
    }
    if let Some(nt) = common.nt {
        doc.grid.nt = nt;
    }
    if let Some(tol) = common.tol {
        doc.kalman.tol = tol;
    }
    if common.project_out_deficient {
        doc.control.project_out_deficient = true;
    }
    if let Some(modes) = common.modes {
        match command {
            Command::Spectrum => doc.spectrum.modes = modes,
            Command::Kalman | Command::Witness => doc.kalman.modes = modes,
            Command::Synthesize | Command::Simulate { .. } | Command::Observe => doc.control.modes = modes,
            Command::Carleman | Command::Validate => {}
        }
    }
    let spec = doc.system_spec()?;
    let out = OutputDir::create(&common.out)?;
    Ok(Context { doc, spec, out })
}

fn finish(ctx: Context, command: Command, common: &Common) -> Result<(), Failure> {
    let mut params = serde_json::to_value(&ctx.doc).map_err(|e| Failure::Io(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut params {
        map.insert("seed".into(), common.seed.into());
    }
    ctx.out.finish(command.name(), common.config.as_deref(), params)
}

pub fn run(command: Command, common: &Common) -> Result<(), Failure> {
    let mut ctx = load(command, common)?;
    // Outputs written before a mathematical obstruction is reported are
    // still listed in the manifest.
    let result = match command {
        Command::Validate => validate(&mut ctx),
        Command::Spectrum => spectrum(&mut ctx),
        Command::Kalman => kalman(&mut ctx),
        Command::Witness => witness(&mut ctx),
        Command::Synthesize => synthesize(&mut ctx),
        Command::Simulate { controlled } => simulate(&mut ctx, controlled),
        Command::Observe => observe(&mut ctx),
        Command::Carleman => carleman(&mut ctx, common.seed),
    };
    finish(ctx, command, common)?;
    result
}

fn basis(ctx: &Context, count: usize) -> Result<(DiscreteOperator, SpectralBasis), Failure> {
    let op = assemble_operator(&ctx.spec)?;
    let basis = compute_spectrum(&op, count)?;
    Ok((op, basis))
}

#[derive(Serialize)]
struct ValidateSummary {
    n: usize,
    m: usize,
    class: String,
    boundary: String,
    alpha: Option<f64>,
    unknowns: usize,
    nt: usize,
}

fn validate(ctx: &mut Context) -> Result<(), Failure> {
    let op = assemble_operator(&ctx.spec)?;
    let resolved = ctx.doc.to_toml()?;
    ctx.out.write("resolved.toml", resolved.as_bytes())?;
    let summary = ValidateSummary {
        n: ctx.spec.n(),
        m: ctx.spec.m(),
        class: format!("{:?}", ctx.spec.coefficient.class),
        boundary: format!("{:?}", ctx.spec.bc),
        alpha: ctx.spec.coefficient.power_law_exponent(),
        unknowns: op.len(),
        nt: ctx.spec.grid.nt,
    };
    ctx.out.write_json("validate.json", &summary)?;
    println!("configuration valid: n = {}, m = {}, {} unknowns", summary.n, summary.m, summary.unknowns);
    Ok(())
}

#[derive(Serialize)]
struct EigenRow {
    p: usize,
    lambda: f64,
    oracle: Option<f64>,
    rel_error: Option<f64>,
}

fn spectrum(ctx: &mut Context) -> Result<(), Failure> {
    let count = ctx.doc.spectrum.modes;
    let (op, basis) = basis(ctx, count)?;
    let alpha = ctx.spec.coefficient.power_law_exponent();
    let rows = (1..=count)
        .map(|p| {
            let lambda = basis.lambda(p);
            let oracle = match alpha {
                Some(a) => Some(bessel_oracle(a, p, ctx.spec.bc)?),
                None => None,
            };
            Ok(EigenRow {
                p,
                lambda,
                oracle,
                rel_error: oracle.map(|o| (lambda - o).abs() / o),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    ctx.out.write_csv("eigenvalues.csv", &rows)?;

    let mut table = String::from("x");
    for p in 1..=count {
        table.push_str(&format!(",phi{p}"));
    }
    table.push('\n');
    for (i, x) in op.nodes().iter().enumerate() {
        table.push_str(&format!("{x:.12e}"));
        for p in 1..=count {
            table.push_str(&format!(",{:.12e}", basis.mode(p)[i]));
        }
        table.push('\n');
    }
    ctx.out.write("eigenfunctions.csv", table.as_bytes())?;
    for r in &rows {
        match r.oracle {
            Some(o) => println!("{:>4} {:.10e} oracle {:.10e} rel {:.2e}", r.p, r.lambda, o, r.rel_error.unwrap()),
            None => println!("{:>4} {:.10e}", r.p, r.lambda),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct KalmanSummary<'a> {
    dichotomy: Dichotomy,
    deficient_modes: &'a [usize],
    scan_horizon: usize,
    tol: f64,
    generic_rank: usize,
    state_dim: usize,
    structurally_deficient: bool,
    possible_beyond_horizon: &'a [f64],
    norm_constants: NormConstants,
}

fn scan(ctx: &mut Context, basis: &SpectralBasis, modes: usize) -> Result<KalmanReport, Failure> {
    let report = dichotomy_scan(&ctx.spec, basis, modes, ctx.doc.kalman.tol)?;
    let constants = truncated_norm_constants(&ctx.spec, basis, modes)?;
    ctx.out.write_csv("kalman.csv", &report.records)?;
    ctx.out.write_json(
        "kalman.json",
        &KalmanSummary {
            dichotomy: report.dichotomy,
            deficient_modes: &report.deficient_modes,
            scan_horizon: report.scan_horizon,
            tol: report.tol,
            generic_rank: report.generic_rank,
            state_dim: report.state_dim,
            structurally_deficient: report.structurally_deficient(),
            possible_beyond_horizon: &report.possible_beyond_horizon,
            norm_constants: constants,
        },
    )?;
    Ok(report)
}

fn kalman(ctx: &mut Context) -> Result<(), Failure> {
    let modes = ctx.doc.kalman.modes;
    let (_, basis) = basis(ctx, modes)?;
    let report = scan(ctx, &basis, modes)?;
    println!("dichotomy: {:?}", report.dichotomy);
    println!("deficient modes: {:?}", report.deficient_modes);
    Ok(())
}

#[derive(Serialize)]
struct WitnessSummary {
    mode: usize,
    lambda: f64,
    z_t: Vec<f64>,
    residual: f64,
    observation: f64,
    invariance_defect: f64,
    sup_observation: f64,
    initial_norm: f64,
}

#[derive(Serialize)]
struct AdjointRow {
    t: f64,
    observation: f64,
    norm: f64,
}

fn witness(ctx: &mut Context) -> Result<(), Failure> {
    let modes = ctx.doc.kalman.modes;
    let (_, basis) = basis(ctx, modes)?;
    let report = scan(ctx, &basis, modes)?;
    let p0 = match ctx.doc.kalman.witness_mode.or(report.deficient_modes.first().copied()) {
        Some(p) => p,
        None => return Err(Error::NoWitness(format!("every mode up to {modes} has full rank")).into()),
    };
    let w = kernel_witness(&ctx.spec, &basis, p0, ctx.doc.kalman.tol)?;
    let lambda = basis.lambda(p0);
    let traj = adjoint_mode_trajectory(&ctx.spec, lambda, &w.z_t, ctx.spec.horizon, ctx.spec.grid.nt)?;
    let rows: Vec<AdjointRow> = traj
        .times
        .iter()
        .zip(&traj.observation)
        .zip(&traj.states)
        .map(|((t, o), z)| AdjointRow {
            t: *t,
            observation: *o,
            norm: z.norm(),
        })
        .collect();
    ctx.out.write_csv("adjoint.csv", &rows)?;
    ctx.out.write_json(
        "witness.json",
        &WitnessSummary {
            mode: p0,
            lambda,
            z_t: w.z_t.iter().copied().collect(),
            residual: w.residual,
            observation: w.observation,
            invariance_defect: w.invariance_defect,
            sup_observation: traj.sup_observation,
            initial_norm: traj.initial_norm,
        },
    )?;
    println!(
        "witness at mode {p0}: |K^T z| = {:.3e}, sup |B^T z(t)| = {:.3e}, |z(0)| = {:.3e}",
        w.residual, traj.sup_observation, traj.initial_norm
    );
    Ok(())
}

fn initial_state(ctx: &Context, basis: &SpectralBasis) -> Result<Vec<Vec<f64>>, Error> {
    let terms: Vec<(usize, usize, f64)> = ctx
        .doc
        .control
        .initial
        .iter()
        .map(|t| (t.component, t.mode, t.amplitude))
        .collect();
    modal_state(basis, ctx.spec.n(), &terms)
}

struct Synthesized {
    op: DiscreteOperator,
    basis: SpectralBasis,
    y0: Vec<Vec<f64>>,
    control: ControlField,
}

/// Scan, then synthesize. A deficient scan stops here unless projection
/// was requested.
fn synthesis(ctx: &mut Context) -> Result<Synthesized, Failure> {
    let modes = ctx.doc.control.modes;
    let (op, basis) = basis(ctx, modes)?;
    let report = scan(ctx, &basis, modes)?;
    if !report.deficient_modes.is_empty() && !ctx.doc.control.project_out_deficient {
        return Err(Error::NotControllable {
            modes: report.deficient_modes,
        }
        .into());
    }
    let y0 = initial_state(ctx, &basis)?;
    let opts = SynthesisOptions {
        nt: ctx.spec.grid.nt,
        project_out_deficient: ctx.doc.control.project_out_deficient,
        rank_tol: ctx.doc.kalman.tol,
    };
    let control = synthesize_null_control(&ctx.spec, &basis, &y0, ctx.spec.horizon, modes, &opts)?;
    Ok(Synthesized { op, basis, y0, control })
}

fn control_csv(control: &ControlField, stride: usize) -> String {
    let mut out = String::from("t,x");
    for j in 0..control.m {
        out.push_str(&format!(",v{}", j + 1));
    }
    out.push('\n');
    let nt = control.nt();
    for (k, (t, row)) in control.times.iter().zip(&control.values).enumerate() {
        if k % stride != 0 && k != nt {
            continue;
        }
        for (i, x) in control.xs.iter().enumerate() {
            out.push_str(&format!("{t:.9e},{x:.9e}"));
            for j in 0..control.m {
                out.push_str(&format!(",{:.12e}", row[i * control.m + j]));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct SynthesisSummary<'a> {
    modes: usize,
    energy: f64,
    truncated_residual: f64,
    full_residual: f64,
    gramian_sigma_min: f64,
    gramian_sigma_max: f64,
    gramian_equilibrated_ratio: f64,
    uncontrolled_modes: &'a [usize],
    verification: &'a VerificationReport,
}

fn synthesize(ctx: &mut Context) -> Result<(), Failure> {
    let Synthesized { op, basis, y0, control } = synthesis(ctx)?;
    let verification = verify_null_control(&ctx.spec, &op, &basis, &y0, &control)?;
    let stride = ctx.doc.control.stride.max(1);
    ctx.out.write("control.csv", control_csv(&control, stride).as_bytes())?;
    ctx.out.write_json(
        "synthesis.json",
        &SynthesisSummary {
            modes: control.modes,
            energy: control.energy,
            truncated_residual: control.truncated_residual,
            full_residual: verification.residual,
            gramian_sigma_min: control.gramian_sigma_min,
            gramian_sigma_max: control.gramian_sigma_max,
            gramian_equilibrated_ratio: control.gramian_equilibrated_ratio,
            uncontrolled_modes: &control.uncontrolled_modes,
            verification: &verification,
        },
    )?;
    println!(
        "energy {:.6e}, truncated residual {:.3e}, full residual {:.3e}, gramian sigma_min {:.3e}",
        control.energy, control.truncated_residual, verification.residual, control.gramian_sigma_min
    );
    Ok(())
}

#[derive(Serialize)]
struct NormRow {
    t: f64,
    norm: f64,
}

fn simulate(ctx: &mut Context, controlled: bool) -> Result<(), Failure> {
    let stride = ctx.doc.control.stride.max(1);
    let nt = ctx.spec.grid.nt;
    let (op, y0, control) = if controlled {
        let s = synthesis(ctx)?;
        (s.op, s.y0, Some(s.control))
    } else {
        let max_mode = ctx.doc.control.initial.iter().map(|t| t.mode).max().unwrap_or(1);
        let (op, basis) = basis(ctx, max_mode)?;
        let y0 = initial_state(ctx, &basis)?;
        (op, y0, None)
    };
    let traj = simulate_forward(&ctx.spec, &op, &y0, control.as_ref(), nt, stride)?;
    ctx.out.write("trajectory.csv", traj.snapshots_csv(op.nodes()).as_bytes())?;
    let rows: Vec<NormRow> = traj
        .times
        .iter()
        .zip(&traj.norms)
        .map(|(t, n)| NormRow { t: *t, norm: *n })
        .collect();
    ctx.out.write_csv("norms.csv", &rows)?;
    let y0n = state_norm(&op, &y0);
    let ytn = state_norm(&op, &traj.final_state);
    println!("|Y(0)| = {y0n:.6e}, |Y(T)| = {ytn:.6e}");
    Ok(())
}

fn observe(ctx: &mut Context) -> Result<(), Failure> {
    let modes = ctx.doc.control.modes;
    let (_, basis) = basis(ctx, modes)?;
    let report = estimate_observability_constant(&ctx.spec, &basis, ctx.spec.horizon, modes, ctx.spec.grid.nt)?;
    ctx.out.write_json("observability.json", &report)?;
    match report.constant {
        Some(c) if !report.divergent => {
            println!("observability constant {c:.6e} over {modes} modes");
            Ok(())
        }
        _ => {
            println!("observability constant diverges; kernel modes {:?}", report.kernel_modes);
            Err(Error::NotControllable {
                modes: report.kernel_modes,
            }
            .into())
        }
    }
}

#[derive(Serialize)]
struct CarlemanRow {
    sample: usize,
    s: f64,
    lhs: f64,
    rhs: f64,
    ratio: f64,
    cutoff_error: f64,
}

#[derive(Serialize)]
struct CarlemanSummary {
    parameters: CarlemanParameters,
    omega0: Interval,
    s_min: f64,
    m0_max_psi: f64,
    m0_min_abs_psi_omega: Option<f64>,
    phi_max: f64,
    sup_ratio: f64,
}

fn carleman(ctx: &mut Context, seed: u64) -> Result<(), Failure> {
    let section = ctx.doc.carleman.clone();
    let omega = ctx.spec.omega;
    let omega0 = match section.omega0 {
        Some([lo, hi]) => Interval::new(lo, hi),
        None => {
            let c = 0.5 * (omega.lo + omega.hi);
            let w = omega.length() / 6.0;
            Interval::new(c - w, c + w)
        }
    };
    let sigma = sigma_profile(omega0)?;
    let params = select_parameters(&sigma)?;
    let a = &ctx.spec.coefficient;
    let grid = &ctx.spec.grid;
    let op = DiscreteOperator::from_parts(a, ctx.spec.bc, grid.nx, grid.grading)?;
    let weights = weight_psi_phi(a, &params, &sigma, &op.grid, ctx.spec.horizon, Some(omega))?;
    let s_min = section.s_min.unwrap_or_else(|| weights.natural_s());
    let ss = s_grid(s_min, 4.0 * s_min, section.s_points.max(1));
    let mut rows = Vec::new();
    for sample in 0..section.samples {
        let u0 = random_initial_datum(&op.grid, op.bc, seed.wrapping_add(sample as u64));
        let table: Vec<RatioRow> =
            empirical_carleman_ratio(&op, section.potential, &u0, None, &weights, grid.nt, &ss)?;
        rows.extend(table.into_iter().map(|r| CarlemanRow {
            sample,
            s: r.s,
            lhs: r.lhs,
            rhs: r.rhs,
            ratio: r.ratio,
            cutoff_error: r.cutoff_error,
        }));
    }
    let sup_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    ctx.out.write_csv("carleman.csv", &rows)?;
    ctx.out.write_json(
        "carleman.json",
        &CarlemanSummary {
            parameters: params,
            omega0,
            s_min,
            m0_max_psi: weights.m0_max_psi,
            m0_min_abs_psi_omega: weights.m0_min_abs_psi_omega,
            phi_max: weights.phi_max(),
            sup_ratio,
        },
    )?;
    println!(
        "c = {}, rho = {:.6}, lambda = {:.6} in ({:.6}, {:.6}); sup ratio {sup_ratio:.6e}",
        params.c, params.rho, params.lambda, params.lambda_interval.lo, params.lambda_interval.hi
    );
    if rows.iter().any(|r| !r.ratio.is_finite()) {
        return Err(Error::Numerical("non-finite Carleman ratio".into()).into());
    }
    Ok(())
}
