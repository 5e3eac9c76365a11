//! Uniaxial cyclic loading driver.
//!
//! The axial stretch follows a prescribed cyclic program while the lateral
//! stretch is solved from the stress-free side condition sigma_22 = 0
//! (transverse isotropy makes sigma_33 = sigma_22). Elastic steps need a
//! one-dimensional Newton solve; plastic steps couple the lateral stretch
//! with the full return-mapping system in one Newton loop.

use crate::constitutive::{
    cauchy_stress, compute_mandel, n_unknowns, plastic_residual, yield_value, Dissipation,
    PlasticState, SolverSettings,
};
use crate::diff::{Dual, Scalar, MAX_DIRS};
use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::potentials::Bound;
use crate::tensor::Tensor2;
use serde::{Deserialize, Serialize};

/// Cyclic uniaxial loading program in axial stretch. The path starts at the
/// undeformed state, ramps to `1 + amplitude`, then oscillates between
/// `1 + amplitude` and `1 - amplitude` for `cycles` full cycles.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LoadingProgram {
    /// stretch amplitude; the path spans [1 - amplitude, 1 + amplitude]
    pub amplitude: f64,
    pub cycles: usize,
    /// increments per branch (a branch is the initial ramp or one reversal)
    pub steps_per_branch: usize,
    /// largest admissible stretch increment per step
    pub max_increment: f64,
}

impl Default for LoadingProgram {
    fn default() -> Self {
        LoadingProgram {
            amplitude: 0.05,
            cycles: 5,
            steps_per_branch: 25,
            max_increment: 0.02,
        }
    }
}

impl LoadingProgram {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude < 0.9) {
            return Err(Error::InvalidAmplitude(format!(
                "amplitude must lie in (0, 0.9), got {}",
                self.amplitude
            )));
        }
        if self.steps_per_branch == 0 {
            return Err(Error::InvalidParameter("steps_per_branch must be >= 1".into()));
        }
        let reversal_inc = 2.0 * self.amplitude / self.steps_per_branch as f64;
        if reversal_inc > self.max_increment + 1e-15 {
            return Err(Error::InvalidParameter(format!(
                "stretch increment {reversal_inc:.3e} exceeds max_increment {:.3e}",
                self.max_increment
            )));
        }
        Ok(())
    }

    /// The sequence of axial stretches, starting at 1.
    pub fn lambda_path(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.steps_per_branch;
        let mut path = Vec::with_capacity(1 + n * (1 + 2 * self.cycles));
        path.push(1.0);
        let ramp = |from: f64, to: f64, path: &mut Vec<f64>| {
            for i in 1..=n {
                path.push(from + (to - from) * i as f64 / n as f64);
            }
        };
        let hi = 1.0 + self.amplitude;
        let lo = 1.0 - self.amplitude;
        ramp(1.0, hi, &mut path);
        for _ in 0..self.cycles {
            ramp(hi, lo, &mut path);
            ramp(lo, hi, &mut path);
        }
        Ok(path)
    }
}

fn uniaxial_f<S: Scalar>(lambda_ax: S, lambda_lat: S) -> Tensor2<S> {
    Tensor2::diag(lambda_ax, lambda_lat.clone(), lambda_lat)
}

/// Residual of one step in the unified form used both by the driver Newton
/// and by sensitivity propagation. For an elastic step the unknown vector is
/// `[lambda_lat]` with residual `[sigma_22 / scale]`; for a plastic step it
/// is `[lambda_lat, x..]` with the side condition prepended to the
/// return-mapping residual. Returns (residual, packed next state, sigma_11).
pub fn step_residual<S: Scalar>(
    b: &Bound<'_, S>,
    lambda_ax: S,
    z: &[S],
    prev: &PlasticState<S>,
    plastic: bool,
) -> Result<(Vec<S>, Vec<S>, S)> {
    let scale = S::from_f64(b.set.stress_scale);
    let f = uniaxial_f(lambda_ax, z[0].clone());
    if !plastic {
        assert_eq!(z.len(), 1);
        let sigma = cauchy_stress(b, &f, prev)?;
        return Ok((
            vec![sigma.0[4].clone() / scale],
            prev.pack(),
            sigma.0[0].clone(),
        ));
    }
    assert_eq!(z.len(), 1 + n_unknowns(prev.n_back()));
    let (res_x, aux) = plastic_residual(b, &f, &z[1..], prev)?;
    let sigma = cauchy_stress(b, &f, &aux.state)?;
    let mut res = Vec::with_capacity(z.len());
    res.push(sigma.0[4].clone() / scale);
    res.extend(res_x);
    Ok((res, aux.state.pack(), sigma.0[0].clone()))
}

/// Outcome of one converged uniaxial step.
pub struct UniaxialStep {
    pub z: Vec<f64>,
    pub state: PlasticState<f64>,
    pub sigma11: f64,
    pub phi: f64,
    pub plastic: bool,
    pub dissipation: Dissipation,
    pub iterations: usize,
}

fn newton_coupled(
    b: &Bound<'_, f64>,
    lambda_ax: f64,
    z0: Vec<f64>,
    prev: &PlasticState<f64>,
    plastic: bool,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, usize)> {
    let m = z0.len();
    assert!(m <= MAX_DIRS);
    let mut z = z0;
    let bd = b.lift_dual::<MAX_DIRS>();
    let lam_d = Dual::constant(lambda_ax);
    let prevd = prev.map(|&v| Dual::constant(v));

    let (mut res, _, _) = step_residual(b, lambda_ax, &z, prev, plastic)?;
    let mut rnorm = inf_norm(&res);
    for iter in 0..settings.max_iters {
        if rnorm < settings.tol {
            return Ok((z, iter));
        }
        let seeded: Vec<Dual<f64, MAX_DIRS>> = z
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::seeded(v, i, m))
            .collect();
        let (res_d, _, _) = step_residual(&bd, lam_d.clone(), &seeded, &prevd, plastic)?;
        let mut jac = vec![0.0; m * m];
        for (r, rd) in res_d.iter().enumerate() {
            jac[r * m..(r + 1) * m].copy_from_slice(&rd.derivs(m));
        }
        let lu = Lu::factor(&jac, m).ok_or(Error::SingularJacobian { step: iter })?;
        let dz = lu.solve(&res);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.max_backtracks {
            let mut zt: Vec<f64> = z.iter().zip(&dz).map(|(v, d)| v - t * d).collect();
            if plastic && zt[1] < 0.0 {
                zt[1] = 0.0;
            }
            match step_residual(b, lambda_ax, &zt, prev, plastic) {
                Ok((rt, _, _)) if inf_norm(&rt).is_finite() && inf_norm(&rt) < rnorm => {
                    rnorm = inf_norm(&rt);
                    res = rt;
                    z = zt;
                    accepted = true;
                    break;
                }
                _ => t *= 0.5,
            }
        }
        if !accepted {
            return Err(Error::NoConvergence {
                step: iter,
                iterations: settings.max_iters,
                residual: rnorm,
            });
        }
    }
    if rnorm < settings.tol {
        return Ok((z, settings.max_iters));
    }
    Err(Error::NoConvergence {
        step: settings.max_iters,
        iterations: settings.max_iters,
        residual: rnorm,
    })
}

/// One driver step: solve the lateral stretch elastically, check the yield
/// condition at the trial state, and fall back to the coupled
/// elastic-plastic solve if it is violated.
pub fn step_uniaxial(
    b: &Bound<'_, f64>,
    lambda_ax: f64,
    lambda_lat_guess: f64,
    prev: &PlasticState<f64>,
    settings: &SolverSettings,
) -> Result<UniaxialStep> {
    let (z_el, iters_el) =
        newton_coupled(b, lambda_ax, vec![lambda_lat_guess], prev, false, settings)
            .map_err(|_| Error::LateralNoConvergence { step: 0 })?;
    let f_trial = uniaxial_f(lambda_ax, z_el[0]);
    let trial = compute_mandel(b, &f_trial, prev)?;
    let phi_trial = yield_value(b, &trial);
    if phi_trial <= settings.tol * b.set.stress_scale {
        let sigma = cauchy_stress(b, &f_trial, prev)?;
        return Ok(UniaxialStep {
            z: z_el,
            state: prev.clone(),
            sigma11: sigma.0[0],
            phi: phi_trial,
            plastic: false,
            dissipation: Dissipation::zero(),
            iterations: iters_el,
        });
    }
    let n = n_unknowns(prev.n_back());
    let mut z0 = vec![0.0; 1 + n];
    z0[0] = z_el[0];
    z0[n] = prev.k;
    let (z, iterations) = newton_coupled(b, lambda_ax, z0, prev, true, settings)?;
    let f = uniaxial_f(lambda_ax, z[0]);
    let (_, aux) = plastic_residual(b, &f, &z[1..], prev)?;
    let sigma = cauchy_stress(b, &f, &aux.state)?;
    let dissipation = crate::constitutive::dissipation_increment(b, &aux, &z[1]);
    Ok(UniaxialStep {
        sigma11: sigma.0[0],
        phi: aux.phi,
        state: aux.state,
        z,
        plastic: true,
        dissipation,
        iterations,
    })
}

/// One solved increment of a simulation, including everything needed to
/// re-linearize the step afterwards (for sensitivities).
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub lambda_axial: f64,
    pub plastic: bool,
    /// converged unknown vector of [`step_residual`]
    pub z: Vec<f64>,
    /// packed state entering the step
    pub s_prev: Vec<f64>,
    pub sigma11: f64,
    pub phi: f64,
    pub dissipation: Dissipation,
    /// true if this record lands on a program point (substeps in between
    /// carry false)
    pub on_program_point: bool,
}

pub struct SimResult {
    /// program stretches, including the initial unit stretch
    pub lambda: Vec<f64>,
    /// axial Cauchy stress at the program points (GPa)
    pub sigma11: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub final_state: PlasticState<f64>,
}

const MAX_BISECTIONS: usize = 8;

fn advance(
    b: &Bound<'_, f64>,
    lambda_from: f64,
    lambda_to: f64,
    lambda_lat: &mut f64,
    state: &mut PlasticState<f64>,
    settings: &SolverSettings,
    records: &mut Vec<StepRecord>,
    depth: usize,
) -> Result<f64> {
    match step_uniaxial(b, lambda_to, *lambda_lat, state, settings) {
        Ok(step) => {
            records.push(StepRecord {
                lambda_axial: lambda_to,
                plastic: step.plastic,
                z: step.z.clone(),
                s_prev: state.pack(),
                sigma11: step.sigma11,
                phi: step.phi,
                dissipation: step.dissipation,
                on_program_point: false,
            });
            *lambda_lat = step.z[0];
            *state = step.state;
            Ok(step.sigma11)
        }
        Err(e) if depth < MAX_BISECTIONS => {
            let mid = 0.5 * (lambda_from + lambda_to);
            if !mid.is_finite() || (mid - lambda_from).abs() < 1e-12 {
                return Err(e);
            }
            advance(b, lambda_from, mid, lambda_lat, state, settings, records, depth + 1)?;
            advance(b, mid, lambda_to, lambda_lat, state, settings, records, depth + 1)
        }
        Err(e) => Err(e),
    }
}

/// Run a full loading program from the virgin state.
pub fn run_program(
    b: &Bound<'_, f64>,
    program: &LoadingProgram,
    settings: &SolverSettings,
) -> Result<SimResult> {
    let path = program.lambda_path()?;
    run_path(b, &path, settings)
}

/// Run an explicit stretch path from the virgin state. The first entry must
/// be the undeformed stretch 1.
pub fn run_path(
    b: &Bound<'_, f64>,
    path: &[f64],
    settings: &SolverSettings,
) -> Result<SimResult> {
    if path.first() != Some(&1.0) {
        return Err(Error::InvalidParameter("stretch path must start at 1".into()));
    }
    let mut state = PlasticState::virgin(b.set.n_back);
    let mut lambda_lat = 1.0;
    let mut records = Vec::new();
    let mut sigma11 = Vec::with_capacity(path.len());
    sigma11.push(0.0);
    for w in path.windows(2) {
        let s = advance(
            b,
            w[0],
            w[1],
            &mut lambda_lat,
            &mut state,
            settings,
            &mut records,
            0,
        )?;
        if let Some(last) = records.last_mut() {
            last.on_program_point = true;
        }
        sigma11.push(s);
    }
    Ok(SimResult {
        lambda: path.to_vec(),
        sigma11,
        records,
        final_state: state,
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Framework, PhenomenologicalParams, PotentialSet};

    fn params() -> PhenomenologicalParams {
        PhenomenologicalParams {
            g: 26.0,
            k_bulk: 56.0,
            y0: 0.3,
            h_iso: 2.0,
            h_kin: 5.0,
            r_sat: 0.2,
            gamma: 10.0,
            m_kin_inf: 0.1,
            ow_m: 2.0,
            delta: 0.5,
        }
    }

    #[test]
    fn path_shape_and_bounds() {
        let p = LoadingProgram {
            amplitude: 0.04,
            cycles: 3,
            steps_per_branch: 10,
            max_increment: 0.01,
        };
        let path = p.lambda_path().unwrap();
        assert_eq!(path.len(), 1 + 10 * (1 + 2 * 3));
        assert_eq!(path[0], 1.0);
        let max = path.iter().cloned().fold(f64::MIN, f64::max);
        let min = path.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 1.04).abs() < 1e-12);
        assert!((min - 0.96).abs() < 1e-12);
        for w in path.windows(2) {
            assert!((w[1] - w[0]).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn invalid_programs_are_rejected() {
        let mut p = LoadingProgram::default();
        p.amplitude = 0.0;
        assert!(p.lambda_path().is_err());
        p.amplitude = 1.2;
        assert!(p.lambda_path().is_err());
        let p = LoadingProgram {
            amplitude: 0.1,
            cycles: 1,
            steps_per_branch: 2,
            max_increment: 0.01,
        };
        assert!(p.lambda_path().is_err());
    }

    /// Hand-built Neo-Hookean uniaxial solution: Kirchhoff stress
    /// tau = G dev(J^-2/3 b) + K (J - 1) J I with b = F F^t, solved for the
    /// lateral stretch by bisection on sigma_22 = 0.
    fn elastic_oracle(g: f64, k: f64, lam: f64) -> (f64, f64) {
        let sigma = |ll: f64| -> (f64, f64) {
            let j = lam * ll * ll;
            let jm23 = j.powf(-2.0 / 3.0);
            let tr_b = lam * lam + 2.0 * ll * ll;
            let tau_ax = g * jm23 * (lam * lam - tr_b / 3.0) + k * (j - 1.0) * j;
            let tau_lat = g * jm23 * (ll * ll - tr_b / 3.0) + k * (j - 1.0) * j;
            (tau_ax / j, tau_lat / j)
        };
        let (mut a, mut b) = (0.5, 1.5);
        assert!(sigma(a).1 < 0.0 && sigma(b).1 > 0.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if sigma(m).1 < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let ll = 0.5 * (a + b);
        (sigma(ll).0, ll)
    }

    #[test]
    fn elastic_uniaxial_matches_independent_solution() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let b = set.bind_f64();
        let settings = SolverSettings::default();
        let mut state = PlasticState::virgin(1);
        let mut lat = 1.0;
        for &lam in &[1.0005, 1.001, 1.002, 1.003] {
            let step = step_uniaxial(&b, lam, lat, &state, &settings).unwrap();
            assert!(!step.plastic, "lambda {lam} yielded");
            let (s11, ll) = elastic_oracle(26.0, 56.0, lam);
            assert!((step.sigma11 - s11).abs() < 1e-8, "{} vs {s11}", step.sigma11);
            assert!((step.z[0] - ll).abs() < 1e-8);
            lat = step.z[0];
            state = step.state;
        }
    }

    #[test]
    fn perfect_plasticity_reaches_analytic_plateau() {
        let mut p = params();
        p.h_iso = 0.0;
        p.h_kin = 0.0;
        p.r_sat = 0.0;
        let set = PotentialSet::phenomenological(Framework::Af, p).unwrap();
        let b = set.bind_f64();
        let program = LoadingProgram {
            amplitude: 0.05,
            cycles: 0,
            steps_per_branch: 25,
            max_increment: 0.02,
        };
        let sim = run_program(&b, &program, &SolverSettings::default()).unwrap();
        assert!(sim.records.iter().any(|r| r.plastic));
        // on the plateau tau_11 = Y0, so sigma_11 = Y0 / J with
        // 3 K (J - 1) J = Y0
        let y0 = 0.3;
        let k = 56.0;
        let j = 0.5 * (1.0 + (1.0 + 4.0 * y0 / (3.0 * k)).sqrt());
        let want = y0 / j;
        let got = *sim.sigma11.last().unwrap();
        assert!(
            (got - want).abs() < 1e-3 * want,
            "plateau {got} vs {want}"
        );
    }

    #[test]
    fn cyclic_run_dissipates_and_respects_kkt() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let b = set.bind_f64();
        let program = LoadingProgram {
            amplitude: 0.03,
            cycles: 2,
            steps_per_branch: 15,
            max_increment: 0.02,
        };
        let sim = run_program(&b, &program, &SolverSettings::default()).unwrap();
        let mut total = 0.0;
        let mut plastic_steps = 0;
        for r in &sim.records {
            if r.plastic {
                plastic_steps += 1;
                assert!(r.phi.abs() < 1e-8, "phi not on yield surface: {}", r.phi);
                assert!(r.z[1] >= 0.0);
            } else {
                assert!(r.phi <= 1e-10);
            }
            assert!(r.dissipation.total() >= -1e-12);
            total += r.dissipation.total();
        }
        assert!(plastic_steps > 10);
        assert!(total > 0.0);
        // reversal re-yields in compression
        let min_sigma = sim.sigma11.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min_sigma < -0.2);
    }

    #[test]
    fn halving_steps_converges() {
        let set = PotentialSet::phenomenological(Framework::Ow, params()).unwrap();
        let b = set.bind_f64();
        let settings = SolverSettings::default();
        let run = |steps: usize| {
            let program = LoadingProgram {
                amplitude: 0.03,
                cycles: 1,
                steps_per_branch: steps,
                max_increment: 0.02,
            };
            *run_program(&b, &program, &settings).unwrap().sigma11.last().unwrap()
        };
        let coarse = run(10);
        let fine = run(20);
        let finer = run(40);
        let e1 = (fine - coarse).abs();
        let e2 = (finer - fine).abs();
        assert!(e2 < e1, "no refinement: {e1} vs {e2}");
        assert!(e2 / finer.abs() < 5e-3);
    }

    #[test]
    fn recorded_solutions_re_solve_their_residuals() {
        let set = PotentialSet::phenomenological(Framework::Bc, params()).unwrap();
        let b = set.bind_f64();
        let program = LoadingProgram {
            amplitude: 0.03,
            cycles: 1,
            steps_per_branch: 8,
            max_increment: 0.02,
        };
        let sim = run_program(&b, &program, &SolverSettings::default()).unwrap();
        for r in &sim.records {
            let prev = PlasticState::unpack(&r.s_prev, set.n_back);
            let (res, s_next, s11) =
                step_residual(&b, r.lambda_axial, &r.z, &prev, r.plastic).unwrap();
            assert!(inf_norm(&res) < 1e-9);
            assert!((s11 - r.sigma11).abs() < 1e-12);
            assert_eq!(s_next.len(), prev.n_flat());
        }
    }

    #[test]
    fn network_model_runs_a_full_program() {
        let set = PotentialSet::with_networks(Framework::FourNn, params(), 9, &[8, 8], 0.4)
            .unwrap();
        let b = set.bind_f64();
        let program = LoadingProgram {
            amplitude: 0.03,
            cycles: 1,
            steps_per_branch: 12,
            max_increment: 0.02,
        };
        let sim = run_program(&b, &program, &SolverSettings::default()).unwrap();
        assert!(sim.sigma11.iter().all(|s| s.is_finite()));
        assert!(sim.records.iter().any(|r| r.plastic));
    }
}
