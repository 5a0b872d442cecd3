//! End-to-end checks against closed-form oracles and structural
//! properties. Every test prints one `PASS` or `FAIL` line.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nullctl_core::bessel::{bessel_eigenvalues, bessel_oracle};
use nullctl_core::carleman::{
    empirical_carleman_ratio, lambda_interval, random_initial_datum, s_grid, select_parameters, sigma_profile,
    weight_psi_phi,
};
use nullctl_core::control::{
    controllability_gramian, estimate_observability_constant, galerkin_truncate, modal_state,
    observability_from_gramian, simulate_forward, synthesize_null_control, verify_null_control, SynthesisOptions,
};
use nullctl_core::kalman::{
    adjoint_mode_trajectory, dichotomy_scan, kernel_witness, mode_matrix_of, mode_rank_report,
    scaled_kalman_matrix, Dichotomy,
};
use nullctl_core::model::{BoundaryRegime, DiffusionCoefficient, Grading, GridSpec, Interval, SystemSpec};
use nullctl_core::operator::{assemble_operator, hardy_poincare_constant, DiscreteOperator};
use nullctl_core::spectral::{compute_spectrum, SpectralBasis};

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

#[allow(clippy::too_many_arguments)]
fn system(
    alpha: f64,
    d: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    omega: (f64, f64),
    horizon: f64,
    nx: usize,
    grading: Grading,
) -> SystemSpec {
    SystemSpec::new(
        DiffusionCoefficient::power_law(alpha).unwrap(),
        d,
        a,
        b,
        Interval::new(omega.0, omega.1),
        horizon,
        None,
        GridSpec { nx, nt: 1000, grading },
    )
    .unwrap()
}

fn cascade_d() -> DMatrix<f64> {
    mat(2, 2, &[1.0, 0.0, 0.0, 2.0])
}

fn cascade_a() -> DMatrix<f64> {
    mat(2, 2, &[0.0, 0.0, 1.0, 0.0])
}

#[test]
fn spectral_oracle_agreement() {
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for alpha in [0.25, 0.5, 1.0, 1.5] {
        let a = DiffusionCoefficient::power_law(alpha).unwrap();
        let bc = a.class.boundary_regime();
        let op = DiscreteOperator::from_parts(&a, bc, 8000, Grading::Power { gamma: 2.0 }).unwrap();
        let basis = compute_spectrum(&op, 10).unwrap();
        let exact = bessel_eigenvalues(alpha, 10, bc).unwrap();
        let err = basis
            .lambdas
            .iter()
            .zip(&exact)
            .map(|(l, e)| (l - e).abs() / e)
            .fold(0.0, f64::max);
        worst = worst.max(err);
        detail.push_str(&format!("alpha {alpha}: max rel {err:.2e}; "));
    }
    let a = DiffusionCoefficient::power_law(0.01).unwrap();
    let op = DiscreteOperator::from_parts(&a, BoundaryRegime::Dirichlet, 8000, Grading::Power { gamma: 2.0 }).unwrap();
    let l1 = compute_spectrum(&op, 1).unwrap().lambdas[0];
    let pi2 = std::f64::consts::PI.powi(2);
    let cont = (l1 - pi2).abs() / pi2;
    detail.push_str(&format!("alpha 0.01: |lambda_1 - pi^2|/pi^2 = {cont:.2e}"));
    report("spectral oracle agreement", worst <= 1e-3 && cont <= 0.02, detail);
}

#[test]
fn kalman_analytic_cases() {
    let spec = |b: DMatrix<f64>| system(0.5, cascade_d(), cascade_a(), b, (0.3, 0.8), 0.5, 1000, Grading::Uniform);
    let s0 = spec(mat(2, 1, &[1.0, 0.0]));
    let op = assemble_operator(&s0).unwrap();
    let basis = compute_spectrum(&op, 100).unwrap();
    let l1 = basis.lambda(1);

    let full = dichotomy_scan(&s0, &basis, 100, 1e-8).unwrap();
    let none = dichotomy_scan(&spec(mat(2, 1, &[0.0, 1.0])), &basis, 100, 1e-8).unwrap();
    let one = dichotomy_scan(&spec(mat(2, 1, &[1.0, 1.0 / l1])), &basis, 100, 1e-8).unwrap();

    let ok_full = full.deficient_modes.is_empty();
    let ok_none = none.deficient_modes == (1..=100).collect::<Vec<_>>() && none.dichotomy == Dichotomy::DeficientEverywhere;
    let ok_one = one.deficient_modes == vec![1] && one.dichotomy == Dichotomy::FullRankTail { p0: 1 };
    report(
        "kalman analytic cases",
        ok_full && ok_none && ok_one,
        format!(
            "B=(1,0): {} deficient; B=(0,1): {} deficient, {:?}; B=(1,1/l1): {:?}, {:?}",
            full.deficient_modes.len(),
            none.deficient_modes.len(),
            none.dichotomy,
            one.deficient_modes,
            one.dichotomy
        ),
    );
}

/// Smallest normalized singular value of `[L^T - conj(mu) I ; B^T]` over
/// the eigenvalues `mu` of `L`: the eigenvector form of the rank test.
fn hautus_score(l: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = l.nrows();
    let m = b.ncols();
    let mut score = f64::INFINITY;
    for mu in l.complex_eigenvalues().iter() {
        let stacked = DMatrix::<Complex<f64>>::from_fn(n + m, n, |i, j| {
            if i < n {
                let v = Complex::new(l[(j, i)], 0.0);
                if i == j {
                    v - mu.conj()
                } else {
                    v
                }
            } else {
                Complex::new(b[(j, i - n)], 0.0)
            }
        });
        let sv = stacked.svd(false, false).singular_values;
        let top = sv.max();
        let bottom = sv.min();
        score = score.min(if top > 0.0 { bottom / top } else { 0.0 });
    }
    score
}

/// `max_S |det K_S| / |adj K_S|_F` over square column subsets `K_S`,
/// relative to `|K|_F`. Each term is `1 / |K_S^{-1}|_F`, computed from
/// determinants alone.
fn determinant_score(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let cols = k.ncols();
    let norm = k.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let minor = |m: &DMatrix<f64>, i: usize, j: usize| m.clone().remove_row(i).remove_column(j).determinant();
    let mut best: f64 = 0.0;
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let ks = DMatrix::from_fn(n, n, |i, j| k[(i, subset[j])]);
        let det = ks.determinant().abs();
        let adj = if n == 1 {
            1.0
        } else {
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| minor(&ks, i, j).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        if adj > 0.0 {
            best = best.max(det / adj);
        }
        // next n-subset of 0..cols in lexicographic order
        let mut i = n;
        while i > 0 && subset[i - 1] == cols - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        subset[i - 1] += 1;
        for j in i..n {
            subset[j] = subset[j - 1] + 1;
        }
    }
    best / norm
}

struct RankTally {
    total: usize,
    deficient: usize,
    disagree: usize,
    banded: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Ensemble {
    /// Continuous distinct diffusion entries, dense `B`; roughly a third
    /// of the systems get a component that is neither actuated nor
    /// coupled to the others.
    Generic,
    /// Sparse `A` and `B`, continuous diffusion entries.
    Sparse,
    /// Sparse integer `A` and `B`, diffusion entries in {1, 2, 3}.
    SparseRepeated,
}

fn rank_ensemble(seed: u64, total: usize, kind: Ensemble) -> RankTally {
    let tol = 1e-8;
    let lambdas = bessel_eigenvalues(0.5, 50, BoundaryRegime::Dirichlet).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = RankTally {
        total,
        deficient: 0,
        disagree: 0,
        banded: 0,
    };
    for _ in 0..total {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| match kind {
            Ensemble::SparseRepeated => rng.random_range(1..=3) as f64,
            _ => rng.random_range(0.5..3.0),
        }));
        let mut entry = |dense: bool| -> f64 {
            if !dense && rng.random_bool(0.5) {
                0.0
            } else if kind == Ensemble::SparseRepeated {
                rng.random_range(-2..=2) as f64
            } else {
                rng.random_range(-2.0..2.0)
            }
        };
        let dense = kind == Ensemble::Generic;
        let mut a = DMatrix::from_fn(n, n, |_, _| entry(dense));
        let mut b = DMatrix::from_fn(n, m, |_, _| entry(dense));
        if dense && rng.random_bool(0.3) {
            let k = rng.random_range(0..n);
            b.row_mut(k).fill(0.0);
            for j in 0..n {
                if j != k {
                    a[(k, j)] = 0.0;
                }
            }
        }

        let (mut s1, mut s2, mut s3) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for &lambda in &lambdas {
            let l = mode_matrix_of(&d, &a, lambda);
            let scale = lambda.max(1.0);
            let ks = scaled_kalman_matrix(&l, &b, scale);
            s1 = s1.min(mode_rank_report(&ks, tol).ratio());
            s2 = s2.min(hautus_score(&(l / scale), &b));
            s3 = s3.min(determinant_score(&ks));
        }
        let decisions = [s1 >= tol, s2 >= tol, s3 >= tol];
        let band = 1e-10..=1e-6;
        let in_band = band.contains(&s1) || band.contains(&s2) || band.contains(&s3);
        if in_band {
            tally.banded += 1;
        } else if decisions.iter().any(|&x| x != decisions[0]) {
            tally.disagree += 1;
        }
        if !decisions[0] {
            tally.deficient += 1;
        }
    }
    tally
}

#[test]
fn rank_tests_agree() {
    let t = rank_ensemble(2024, 100, Ensemble::Generic);
    let occupancy = t.banded as f64 / t.total as f64;
    // When a component is reached only through A, or diffusion entries
    // repeat, the margins decay like a power of lambda and the three
    // scores decay at different rates. Reported, not asserted.
    for (label, kind) in [("sparse", Ensemble::Sparse), ("sparse, repeated diffusion", Ensemble::SparseRepeated)] {
        let r = rank_ensemble(2024, 100, kind);
        println!(
            "INFO rank tests on {label} systems: {} deficient, {} disagreements, band occupancy {:.2}",
            r.deficient,
            r.disagree,
            r.banded as f64 / r.total as f64
        );
    }
    report(
        "rank tests agree",
        t.disagree == 0 && occupancy < 0.05,
        format!(
            "{} systems, {} deficient, {} disagreements, band occupancy {occupancy:.2}",
            t.total, t.deficient, t.disagree
        ),
    );
}

#[test]
fn cascade_null_control() {
    let spec = system(0.5, cascade_d(), cascade_a(), mat(2, 1, &[1.0, 0.0]), (0.3, 0.8), 0.5, 2000, Grading::Uniform);
    let op = assemble_operator(&spec).unwrap();
    let basis = compute_spectrum(&op, 16).unwrap();
    let y0 = modal_state(&basis, 2, &[(1, 1, 1.0)]).unwrap();
    let opts = SynthesisOptions { nt: 2000, ..Default::default() };
    let control = synthesize_null_control(&spec, &basis, &y0, 0.5, 16, &opts).unwrap();
    let v = verify_null_control(&spec, &op, &basis, &y0, &control).unwrap();
    report(
        "cascade null control",
        v.residual <= 1e-3 && control.truncated_residual <= 1e-8 && control.gramian_sigma_min > 0.0,
        format!(
            "full residual {:.3e}, truncated residual {:.3e}, gramian sigma_min {:.3e}, energy {:.4}",
            v.residual, control.truncated_residual, control.gramian_sigma_min, control.energy
        ),
    );
}

#[test]
fn deficient_counterexample() {
    let spec = system(0.5, cascade_d(), cascade_a(), mat(2, 1, &[0.0, 1.0]), (0.3, 0.8), 0.5, 1000, Grading::Uniform);
    let op = assemble_operator(&spec).unwrap();
    let basis = compute_spectrum(&op, 8).unwrap();
    let w = kernel_witness(&spec, &basis, 1, 1e-8).unwrap();
    let traj = adjoint_mode_trajectory(&spec, basis.lambda(1), &w.z_t, 0.5, 1000).unwrap();
    let obs = estimate_observability_constant(&spec, &basis, 0.5, 8, 400).unwrap();
    let y0 = modal_state(&basis, 2, &[(1, 1, 1.0)]).unwrap();
    let synth = synthesize_null_control(&spec, &basis, &y0, 0.5, 8, &SynthesisOptions::default());
    let rejected = matches!(&synth, Err(e) if e.is_mathematical());
    report(
        "deficient counterexample",
        w.residual <= 1e-12
            && traj.sup_observation <= 1e-10
            && traj.initial_norm > 0.0
            && obs.divergent
            && obs.constant.is_none()
            && rejected,
        format!(
            "|K^T z| {:.1e}, sup |B^T z| {:.1e}, |z(0)| {:.3e}, divergent {}, synthesis rejected as not controllable {}",
            w.residual, traj.sup_observation, traj.initial_norm, obs.divergent, rejected
        ),
    );
}

#[test]
fn hardy_poincare_constant_converges() {
    let mut pass = true;
    let mut detail = String::new();
    for alpha in [0.25, 0.5] {
        let a = DiffusionCoefficient::power_law(alpha).unwrap();
        let consts: Vec<f64> = [1000, 2000, 4000]
            .iter()
            .map(|&nx| {
                let op =
                    DiscreteOperator::from_parts(&a, BoundaryRegime::Dirichlet, nx, Grading::Geometric { decades: 60.0 })
                        .unwrap();
                hardy_poincare_constant(&op).unwrap()
            })
            .collect();
        let exact = 4.0 / (1.0 - alpha).powi(2);
        let rel = (consts[2] - exact).abs() / exact;
        let monotone = consts.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
        pass &= rel <= 0.05 && monotone;
        detail.push_str(&format!("alpha {alpha}: {consts:.4?} vs {exact:.4}, rel {rel:.2e}; "));
    }
    report("hardy-poincare constant", pass, detail);
}

#[test]
fn free_decay_accuracy() {
    let spec = system(
        0.5,
        mat(1, 1, &[1.0]),
        mat(1, 1, &[0.0]),
        mat(1, 1, &[1.0]),
        (0.3, 0.8),
        0.1,
        2000,
        Grading::Power { gamma: 2.0 },
    );
    let op = assemble_operator(&spec).unwrap();
    let basis = compute_spectrum(&op, 2).unwrap();
    let y0 = modal_state(&basis, 1, &[(1, 1, 1.0)]).unwrap();
    let tr = simulate_forward(&spec, &op, &y0, None, 1000, 1000).unwrap();
    let lam = bessel_oracle(0.5, 1, BoundaryRegime::Dirichlet).unwrap();
    let ratio = tr.norms[1000] / tr.norms[0];
    let target = (-lam * 0.1).exp();

    let y1 = modal_state(&basis, 1, &[(1, 1, 1.0), (1, 2, 0.5)]).unwrap();
    let end = |nt: usize| simulate_forward(&spec, &op, &y1, None, nt, nt).unwrap().final_state[0].clone();
    let (a, b, c) = (end(20), end(40), end(80));
    let diff = |u: &[f64], v: &[f64]| op.norm(&u.iter().zip(v).map(|(x, y)| x - y).collect::<Vec<_>>());
    let rate = diff(&a, &b) / diff(&b, &c);
    report(
        "free decay accuracy",
        (ratio - target).abs() <= 1e-3 && (rate - 4.0).abs() < 0.3,
        format!("|Y(T)|/|Y0| = {ratio:.6}, exp(-lambda_1 T) = {target:.6}, Richardson ratio {rate:.3}"),
    );
}

#[test]
fn carleman_parameter_feasibility() {
    let sigma = sigma_profile(Interval::new(0.45, 0.55)).unwrap();
    let p = select_parameters(&sigma).unwrap();
    let sup = p.sigma_sup;
    let e1 = (p.rho * sup).exp();
    let e2 = (2.0 * p.rho * sup).exp();
    let inequalities = p.c > 5.0
        && p.rho > 4.0 * std::f64::consts::LN_2 / sup
        && e2 / (p.c - 1.0) < p.lambda
        && p.lambda < 4.0 / (3.0 * p.c) * (e2 - e1);
    let hand = lambda_interval(6.0, 2.8, 1.0).unwrap();
    let hand_ok = (hand.lo - 54.09).abs() < 0.01 && (hand.hi - 56.44).abs() < 0.01;

    let a = DiffusionCoefficient::power_law(0.5).unwrap();
    let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 / 10_000.0).collect();
    let w = weight_psi_phi(&a, &p, &sigma, &grid, 0.5, None).unwrap();
    let signs = w.psi.iter().all(|v| *v < 0.0) && w.big_psi.iter().all(|v| *v < 0.0);
    report(
        "carleman parameter feasibility",
        inequalities && hand_ok && signs && (sup - 1.0).abs() < 1e-12,
        format!(
            "c = {}, rho = {:.5}, lambda = {:.4} in ({:.4}, {:.4}); at rho = 2.8: ({:.2}, {:.2}); psi, Psi < 0: {signs}",
            p.c, p.rho, p.lambda, p.lambda_interval.lo, p.lambda_interval.hi, hand.lo, hand.hi
        ),
    );
}

fn carleman_sup_ratio(nx: usize) -> (f64, bool) {
    let a = DiffusionCoefficient::power_law(0.5).unwrap();
    let op = DiscreteOperator::from_parts(&a, BoundaryRegime::Dirichlet, nx, Grading::Uniform).unwrap();
    let sigma = sigma_profile(Interval::new(0.45, 0.55)).unwrap();
    let p = select_parameters(&sigma).unwrap();
    let w = weight_psi_phi(&a, &p, &sigma, &op.grid, 0.5, Some(Interval::new(0.3, 0.8))).unwrap();
    let s0 = w.natural_s();
    let ss = s_grid(s0, 4.0 * s0, 8);
    let mut sup: f64 = 0.0;
    let mut finite = true;
    for seed in 0..5 {
        let u0 = random_initial_datum(&op.grid, op.bc, seed);
        for row in empirical_carleman_ratio(&op, 0.0, &u0, None, &w, nx, &ss).unwrap() {
            finite &= row.ratio.is_finite() && row.rhs > 0.0;
            sup = sup.max(row.ratio);
        }
    }
    (sup, finite)
}

#[test]
fn carleman_ratio_stability() {
    let (coarse, f1) = carleman_sup_ratio(1000);
    let (fine, f2) = carleman_sup_ratio(2000);
    let change = (fine - coarse).abs() / coarse;
    report(
        "carleman ratio stability",
        f1 && f2 && change <= 0.2,
        format!("sup ratio {coarse:.6e} (N = 1000), {fine:.6e} (N = 2000), change {change:.2e}"),
    );
}

fn random_spec(rng: &mut ChaCha8Rng, deficient: bool) -> SystemSpec {
    let n = rng.random_range(if deficient { 2..=3 } else { 1..=3 });
    let m = rng.random_range(1..=2);
    let diag = [1.0, 1.5, 2.0, 3.0];
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 });
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut b = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.5..1.5));
    if deficient {
        // the last component is fed by nothing
        for j in 0..n {
            if j != n - 1 {
                a[(n - 1, j)] = 0.0;
            }
        }
        b.row_mut(n - 1).fill(0.0);
    }
    system(0.5, d, a, b, (0.3, 0.8), 0.5, 300, Grading::Uniform)
}

fn duality(spec: &SystemSpec, basis: &SpectralBasis, modes: usize) -> (bool, bool, f64) {
    let ts = galerkin_truncate(spec, basis, modes).unwrap();
    let gram = controllability_gramian(&ts, spec.horizon, 200).unwrap();
    let obs = observability_from_gramian(&ts, &gram, spec.horizon).unwrap();
    let finite = obs.constant.is_some_and(f64::is_finite) && !obs.divergent;
    (finite, !gram.is_singular() && gram.sigma_min > 0.0, gram.equilibrated_ratio)
}

#[test]
fn observability_controllability_duality() {
    let modes = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut controllable_ok = 0;
    let mut tried = 0;
    let mut worst_ratio = f64::INFINITY;
    while tried < 20 {
        let spec = random_spec(&mut rng, false);
        let op = assemble_operator(&spec).unwrap();
        let basis = compute_spectrum(&op, modes).unwrap();
        if !dichotomy_scan(&spec, &basis, modes, 1e-8).unwrap().deficient_modes.is_empty() {
            continue;
        }
        tried += 1;
        let (finite, definite, ratio) = duality(&spec, &basis, modes);
        worst_ratio = worst_ratio.min(ratio);
        if finite && definite {
            controllable_ok += 1;
        }
    }
    let mut deficient_ok = 0;
    let constructed = 5;
    for _ in 0..constructed {
        let spec = random_spec(&mut rng, true);
        let op = assemble_operator(&spec).unwrap();
        let basis = compute_spectrum(&op, modes).unwrap();
        let (finite, definite, _) = duality(&spec, &basis, modes);
        if !finite && !definite {
            deficient_ok += 1;
        }
    }
    report(
        "observability-controllability duality",
        controllable_ok == 20 && deficient_ok == constructed,
        format!(
            "controllable: {controllable_ok}/20 finite constant with definite Gramian (worst equilibrated ratio {worst_ratio:.2e}); \
             deficient: {deficient_ok}/{constructed} divergent with singular Gramian"
        ),
    );
}
