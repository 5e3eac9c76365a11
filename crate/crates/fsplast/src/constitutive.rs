//! Finite-strain constitutive core: multiplicative kinematics, Mandel
//! stresses, the yield function and the implicit return mapping.
//!
//! Internal variables per material point: the plastic deformation gradient
//! Fp, one kinematic deformation gradient per back-stress, and the scalar
//! isotropic hardening variable k. The stress update solves a fully implicit
//! system via Newton's method; the unknowns are the plastic multiplier
//! increment, the exponential-map arguments of Fp and each Fkin, and the
//! updated hardening variable.

use crate::diff::{Dual, Scalar, MAX_DIRS};
use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::potentials::{fy_vonmises, tensor_grad, Bound};
use crate::tensor::Tensor2;
use serde::{Deserialize, Serialize};

/// Internal state of one material point.
#[derive(Clone, Debug)]
pub struct PlasticState<S: Scalar> {
    pub fp: Tensor2<S>,
    pub fkin: Vec<Tensor2<S>>,
    pub k: S,
}

impl<S: Scalar> PlasticState<S> {
    pub fn virgin(n_back: usize) -> Self {
        PlasticState {
            fp: Tensor2::identity(),
            fkin: vec![Tensor2::identity(); n_back],
            k: S::zero(),
        }
    }

    pub fn n_back(&self) -> usize {
        self.fkin.len()
    }

    pub fn n_flat(&self) -> usize {
        10 + 9 * self.n_back()
    }

    pub fn pack(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.n_flat());
        v.extend(self.fp.0.iter().cloned());
        for f in &self.fkin {
            v.extend(f.0.iter().cloned());
        }
        v.push(self.k.clone());
        v
    }

    pub fn unpack(flat: &[S], n_back: usize) -> Self {
        assert_eq!(flat.len(), 10 + 9 * n_back);
        let t = |off: usize| Tensor2(std::array::from_fn(|i| flat[off + i].clone()));
        PlasticState {
            fp: t(0),
            fkin: (0..n_back).map(|i| t(9 + 9 * i)).collect(),
            k: flat[9 + 9 * n_back].clone(),
        }
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> PlasticState<T> {
        PlasticState {
            fp: Tensor2(std::array::from_fn(|i| f(&self.fp.0[i]))),
            fkin: self
                .fkin
                .iter()
                .map(|t| Tensor2(std::array::from_fn(|i| f(&t.0[i]))))
                .collect(),
            k: f(&self.k),
        }
    }

    pub fn values(&self) -> PlasticState<f64> {
        self.map(|s| s.value())
    }
}

/// Driving stresses at one configuration.
pub struct MandelSet<S: Scalar> {
    /// Mandel stress Fe^t tau Fe^-t expressed as 2 Ce dPsi/dCe
    pub m: Tensor2<S>,
    /// back-stresses, one per kinematic variable
    pub mkin: Vec<Tensor2<S>>,
    /// isotropic hardening stress
    pub kappa: S,
    pub fe: Tensor2<S>,
    pub ce: Tensor2<S>,
}

impl<S: Scalar> MandelSet<S> {
    /// Relative (effective) stress entering the yield function.
    pub fn m_red(&self) -> Tensor2<S> {
        let mut r = self.m.clone();
        for b in &self.mkin {
            r = r.sub(b);
        }
        r
    }
}

pub fn compute_mandel<S: Scalar>(
    b: &Bound<'_, S>,
    f: &Tensor2<S>,
    st: &PlasticState<S>,
) -> Result<MandelSet<S>> {
    let fp_inv = st.fp.inv()?;
    let fe = f.matmul(&fp_inv);
    let ce = fe.transpose().matmul(&fe);
    let dpsi = b.d_psi_el_dce(&ce)?;
    let m = ce.matmul(&dpsi).scale(S::from_f64(2.0));
    let mut mkin = Vec::with_capacity(st.fkin.len());
    for fk in &st.fkin {
        let fk_inv = fk.inv()?;
        let ckin = fk_inv.transpose().matmul(&fk_inv);
        mkin.push(b.mandel_kin(&ckin)?);
    }
    Ok(MandelSet {
        m,
        mkin,
        kappa: b.kappa_of_k(st.k.clone()),
        fe,
        ce,
    })
}

/// Yield function value f_y(M_red) - (Y0 + phi_iso(kappa)).
pub fn yield_value<S: Scalar>(b: &Bound<'_, S>, mand: &MandelSet<S>) -> S {
    fy_vonmises(&mand.m_red()) - (b.y0.clone() + b.phi_iso(mand.kappa.clone()))
}

/// Kirchhoff stress tau = 2 Fe dPsi/dCe Fe^t.
pub fn kirchhoff_stress<S: Scalar>(
    b: &Bound<'_, S>,
    f: &Tensor2<S>,
    st: &PlasticState<S>,
) -> Result<Tensor2<S>> {
    let fp_inv = st.fp.inv()?;
    let fe = f.matmul(&fp_inv);
    let ce = fe.transpose().matmul(&fe);
    let dpsi = b.d_psi_el_dce(&ce)?;
    Ok(fe.matmul(&dpsi).matmul(&fe.transpose()).scale(S::from_f64(2.0)))
}

/// Cauchy stress sigma = tau / det F.
pub fn cauchy_stress<S: Scalar>(
    b: &Bound<'_, S>,
    f: &Tensor2<S>,
    st: &PlasticState<S>,
) -> Result<Tensor2<S>> {
    let j = f.det();
    if j.value() <= 0.0 {
        return Err(Error::SingularTensor { det: j.value() });
    }
    Ok(kirchhoff_stress(b, f, st)?.scale(S::one() / j))
}

/// Everything the caller of one implicit evaluation might need besides the
/// residual vector.
pub struct StepAux<S: Scalar> {
    pub state: PlasticState<S>,
    pub mandel: MandelSet<S>,
    pub phi: S,
    pub nu: Tensor2<S>,
    pub fy_red: S,
    pub flows: Vec<Tensor2<S>>,
}

/// Number of return-mapping unknowns for `n_back` back-stresses:
/// [dlambda, A_p (9), A_kin per back-stress (9 each), k_next].
pub fn n_unknowns(n_back: usize) -> usize {
    11 + 9 * n_back
}

/// Residual of the fully implicit plastic step. Unknowns `x` as in
/// [`n_unknowns`]; the state update is
/// Fp' = exp(A_p) Fp, Fkin' = exp(A_kin) Fkin,
/// and the residual enforces
/// A_p = dl nu, A_kin = dl (-nu + dphi_kin/dMkin),
/// k' = k + dl dphi_iso/dkappa, phi(M', kappa') = 0,
/// all evaluated at the end-of-step configuration.
pub fn plastic_residual<S: Scalar>(
    b: &Bound<'_, S>,
    f: &Tensor2<S>,
    x: &[S],
    prev: &PlasticState<S>,
) -> Result<(Vec<S>, StepAux<S>)> {
    let n_back = prev.n_back();
    assert_eq!(x.len(), n_unknowns(n_back));
    let dlam = x[0].clone();
    let a_p = Tensor2(std::array::from_fn(|i| x[1 + i].clone()));
    let a_kin: Vec<Tensor2<S>> = (0..n_back)
        .map(|j| Tensor2(std::array::from_fn(|i| x[10 + 9 * j + i].clone())))
        .collect();
    let k_next = x[10 + 9 * n_back].clone();

    let fp_next = a_p.expm()?.matmul(&prev.fp);
    let fkin_next: Vec<Tensor2<S>> = a_kin
        .iter()
        .zip(&prev.fkin)
        .map(|(a, fk)| Ok(a.expm()?.matmul(fk)))
        .collect::<Result<_>>()?;
    let state = PlasticState {
        fp: fp_next,
        fkin: fkin_next,
        k: k_next.clone(),
    };

    let mandel = compute_mandel(b, f, &state)?;
    let m_red = mandel.m_red();
    let fy_red = fy_vonmises(&m_red);
    if !fy_red.value().is_finite() {
        return Err(Error::NonFinite("effective stress"));
    }
    let nu = tensor_grad(|m| fy_vonmises(m), &m_red);
    let flows: Vec<Tensor2<S>> = mandel
        .mkin
        .iter()
        .map(|mk| b.phi_kin_flow(mk, &nu, fy_red.clone()))
        .collect::<Result<_>>()?;

    let phi = fy_red.clone() - (b.y0.clone() + b.phi_iso(mandel.kappa.clone()));
    let hard_rate = b.d_phi_iso_dkappa(mandel.kappa.clone());
    let scale = S::from_f64(b.set.stress_scale);

    let mut res = Vec::with_capacity(x.len());
    res.push(phi.clone() / scale);
    for i in 0..9 {
        res.push(a_p.0[i].clone() - dlam.clone() * nu.0[i].clone());
    }
    for (a, flow) in a_kin.iter().zip(&flows) {
        for i in 0..9 {
            res.push(
                a.0[i].clone() - dlam.clone() * (flow.0[i].clone() - nu.0[i].clone()),
            );
        }
    }
    res.push(k_next - prev.k.clone() - dlam * hard_rate);

    Ok((
        res,
        StepAux {
            state,
            mandel,
            phi,
            nu,
            fy_red,
            flows,
        },
    ))
}

/// Incremental dissipation split into its three nonnegative contributions.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Dissipation {
    pub plastic: f64,
    pub kinematic: f64,
    pub isotropic: f64,
}

impl Dissipation {
    pub fn zero() -> Self {
        Dissipation {
            plastic: 0.0,
            kinematic: 0.0,
            isotropic: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.plastic + self.kinematic + self.isotropic
    }
}

/// D = dl [(M - sum Mkin) : nu + sum Mkin_i : flow_i + kappa dphi_iso/dkappa].
pub fn dissipation_increment<S: Scalar>(
    b: &Bound<'_, S>,
    aux: &StepAux<S>,
    dlam: &S,
) -> Dissipation {
    let dl = dlam.value();
    let plastic = aux.mandel.m_red().ddot(&aux.nu).value() * dl;
    let kinematic: f64 = aux
        .mandel
        .mkin
        .iter()
        .zip(&aux.flows)
        .map(|(mk, fl)| mk.ddot(fl).value() * dl)
        .sum();
    let kappa = aux.mandel.kappa.clone();
    let isotropic = (kappa.clone() * b.d_phi_iso_dkappa(kappa)).value() * dl;
    Dissipation {
        plastic,
        kinematic,
        isotropic,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverSettings {
    /// convergence tolerance on the residual infinity norm
    pub tol: f64,
    pub max_iters: usize,
    /// backtracking halvings per Newton iteration
    pub max_backtracks: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-9,
            max_iters: 50,
            max_backtracks: 10,
        }
    }
}

pub struct ReturnMapResult {
    pub state: PlasticState<f64>,
    /// converged unknown vector (empty for an elastic step)
    pub x: Vec<f64>,
    pub plastic: bool,
    /// yield value at the end of the step
    pub phi: f64,
    pub sigma: Tensor2<f64>,
    pub dissipation: Dissipation,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

/// Newton solve of [`plastic_residual`] for a prescribed total deformation
/// gradient. Assumes the trial state violates the yield condition.
pub fn solve_plastic_step(
    b: &Bound<'_, f64>,
    f: &Tensor2<f64>,
    prev: &PlasticState<f64>,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, StepAux<f64>, usize)> {
    let n = n_unknowns(prev.n_back());
    assert!(n <= MAX_DIRS, "too many back-stresses for the dual capacity");
    let mut x = vec![0.0; n];
    x[n - 1] = prev.k;

    let bd = b.lift_dual::<MAX_DIRS>();
    let fd = Tensor2(std::array::from_fn(|i| Dual::constant(f.0[i])));
    let prevd = prev.map(|&v| Dual::constant(v));

    let (res0, _) = plastic_residual(b, f, &x, prev)?;
    let mut rnorm = inf_norm(&res0);
    let mut res = res0;

    for iter in 0..settings.max_iters {
        if rnorm < settings.tol {
            let (_, aux) = plastic_residual(b, f, &x, prev)?;
            return Ok((x, aux, iter));
        }
        let seeded: Vec<Dual<f64, MAX_DIRS>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::seeded(v, i, n))
            .collect();
        let (res_d, _) = plastic_residual(&bd, &fd, &seeded, &prevd)?;
        let mut jac = vec![0.0; n * n];
        for (r, rd) in res_d.iter().enumerate() {
            let row = rd.derivs(n);
            jac[r * n..(r + 1) * n].copy_from_slice(&row);
        }
        let lu = Lu::factor(&jac, n).ok_or(Error::SingularJacobian { step: iter })?;
        let dx = lu.solve(&res);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.max_backtracks {
            let mut xt: Vec<f64> = x.iter().zip(&dx).map(|(v, d)| v - t * d).collect();
            if xt[0] < 0.0 {
                xt[0] = 0.0;
            }
            match plastic_residual(b, f, &xt, prev) {
                Ok((rt, _)) if inf_norm(&rt).is_finite() && inf_norm(&rt) < rnorm => {
                    rnorm = inf_norm(&rt);
                    res = rt;
                    x = xt;
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
        let (_, aux) = plastic_residual(b, f, &x, prev)?;
        return Ok((x, aux, settings.max_iters));
    }
    Err(Error::NoConvergence {
        step: settings.max_iters,
        iterations: settings.max_iters,
        residual: rnorm,
    })
}

/// Full stress update for a prescribed deformation gradient: elastic
/// predictor, plastic corrector when the trial state lies outside the
/// elastic domain.
pub fn return_map(
    b: &Bound<'_, f64>,
    f: &Tensor2<f64>,
    prev: &PlasticState<f64>,
    settings: &SolverSettings,
) -> Result<ReturnMapResult> {
    let trial = compute_mandel(b, f, prev)?;
    let phi_trial = yield_value(b, &trial);
    if phi_trial <= settings.tol * b.set.stress_scale {
        let sigma = cauchy_stress(b, f, prev)?;
        return Ok(ReturnMapResult {
            state: prev.clone(),
            x: Vec::new(),
            plastic: false,
            phi: phi_trial,
            sigma,
            dissipation: Dissipation::zero(),
            iterations: 0,
        });
    }
    let (x, aux, iterations) = solve_plastic_step(b, f, prev, settings)?;
    let sigma = cauchy_stress(b, f, &aux.state)?;
    let dissipation = dissipation_increment(b, &aux, &x[0]);
    Ok(ReturnMapResult {
        phi: aux.phi,
        state: aux.state,
        x,
        plastic: true,
        sigma,
        dissipation,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Framework, PhenomenologicalParams, PotentialSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn shear(gamma: f64) -> Tensor2<f64> {
        let mut f = Tensor2::identity();
        f.0[1] = gamma;
        f
    }

    fn march(set: &PotentialSet, gammas: &[f64]) -> Vec<ReturnMapResult> {
        let b = set.bind_f64();
        let settings = SolverSettings::default();
        let mut state = PlasticState::virgin(set.n_back);
        gammas
            .iter()
            .map(|&g| {
                let r = return_map(&b, &shear(g), &state, &settings).unwrap();
                state = r.state.clone();
                r
            })
            .collect()
    }

    #[test]
    fn state_pack_round_trip() {
        let st = PlasticState {
            fp: Tensor2::diag(1.1, 0.9, 1.0),
            fkin: vec![Tensor2::identity(), Tensor2::diag(0.99, 1.02, 0.99)],
            k: 0.03,
        };
        let flat = st.pack();
        assert_eq!(flat.len(), st.n_flat());
        let back = PlasticState::<f64>::unpack(&flat, 2);
        assert_eq!(back.pack(), flat);
    }

    #[test]
    fn small_shear_stays_elastic() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let r = &march(&set, &[0.001])[0];
        assert!(!r.plastic);
        assert!(r.phi < 0.0);
        assert_eq!(r.x.len(), 0);
        assert_eq!(r.state.k, 0.0);
        assert_eq!(r.state.fp.0, Tensor2::<f64>::identity().0);
        assert!(r.dissipation.total() == 0.0);
    }

    #[test]
    fn plastic_step_satisfies_kkt_and_preserves_plastic_volume() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let r = &march(&set, &[0.03])[0];
        assert!(r.plastic);
        assert!(r.x[0] > 0.0);
        assert!(r.phi.abs() < 1e-9 * set.stress_scale * 10.0, "phi = {}", r.phi);
        assert!((r.state.fp.det() - 1.0).abs() < 1e-12);
        assert!(r.state.k > 0.0);
    }

    #[test]
    fn converged_residual_is_small() {
        let set = PotentialSet::phenomenological(Framework::Ow, params()).unwrap();
        let b = set.bind_f64();
        let prev = PlasticState::virgin(1);
        let r = return_map(&b, &shear(0.04), &prev, &SolverSettings::default()).unwrap();
        let (res, _) = plastic_residual(&b, &shear(0.04), &r.x, &prev).unwrap();
        assert!(inf_norm(&res) < 1e-9);
    }

    #[test]
    fn dissipation_terms_nonnegative_for_every_framework() {
        let p = params();
        let sets = [
            PotentialSet::phenomenological(Framework::Af, p).unwrap(),
            PotentialSet::phenomenological(Framework::Ow, p).unwrap(),
            PotentialSet::phenomenological(Framework::Bc, p).unwrap(),
            PotentialSet::with_networks(Framework::TwoNn, p, 5, &[8, 8], 0.4).unwrap(),
            PotentialSet::with_networks(Framework::FourNn, p, 6, &[8, 8], 0.4).unwrap(),
        ];
        let gammas: Vec<f64> = (1..=12).map(|i| 0.005 * i as f64).collect();
        for set in &sets {
            for r in march(set, &gammas) {
                assert!(r.dissipation.plastic >= -1e-12, "{}", set.framework.name());
                assert!(r.dissipation.kinematic >= -1e-12, "{}", set.framework.name());
                assert!(r.dissipation.isotropic >= -1e-12, "{}", set.framework.name());
            }
        }
    }

    #[test]
    fn mandel_stress_symmetric_on_symmetric_path() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let b = set.bind_f64();
        let rs = march(&set, &[0.02, 0.04]);
        let mand = compute_mandel(&b, &shear(0.04), &rs[1].state).unwrap();
        let asym = mand.m.sub(&mand.m.transpose()).norm();
        assert!(asym < 1e-10 * mand.m.norm().max(1.0));
        for mk in &mand.mkin {
            assert!(mk.sub(&mk.transpose()).norm() < 1e-10);
        }
    }

    #[test]
    fn response_is_objective_under_superposed_rotation() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let b = set.bind_f64();
        let settings = SolverSettings::default();
        let skew = Tensor2([0.0, 0.3, -0.2, -0.3, 0.0, 0.5, 0.2, -0.5, 0.0]);
        let q = skew.expm().unwrap();
        assert!((q.matmul(&q.transpose()).sub(&Tensor2::identity())).norm() < 1e-12);

        let prev = PlasticState::virgin(1);
        let f = shear(0.04);
        let qf = q.matmul(&f);
        let r1 = return_map(&b, &f, &prev, &settings).unwrap();
        let r2 = return_map(&b, &qf, &prev, &settings).unwrap();
        let rotated = q.matmul(&r1.sigma).matmul(&q.transpose());
        for i in 0..9 {
            assert!((r2.sigma.0[i] - rotated.0[i]).abs() < 1e-9);
        }
        // internal state lives in the intermediate configuration
        for i in 0..9 {
            assert!((r2.state.fp.0[i] - r1.state.fp.0[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn two_half_strength_backstresses_match_one() {
        let single = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let mut p2 = params();
        p2.h_kin /= 2.0;
        p2.m_kin_inf /= 2.0;
        let mut double = PotentialSet::phenomenological(Framework::Af, p2).unwrap();
        double.n_back = 2;
        let gammas: Vec<f64> = (1..=10).map(|i| 0.006 * i as f64).collect();
        let r1 = march(&single, &gammas);
        let r2 = march(&double, &gammas);
        for (a, b) in r1.iter().zip(&r2) {
            for i in 0..9 {
                assert!(
                    (a.sigma.0[i] - b.sigma.0[i]).abs() < 1e-9,
                    "{} vs {}",
                    a.sigma.0[i],
                    b.sigma.0[i]
                );
            }
        }
    }

    #[test]
    fn bc_with_full_mixing_reproduces_af() {
        let af = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let mut p = params();
        p.delta = 1.0;
        let bc = PotentialSet::phenomenological(Framework::Bc, p).unwrap();
        let gammas: Vec<f64> = (1..=10).map(|i| 0.006 * i as f64).collect();
        let ra = march(&af, &gammas);
        let rb = march(&bc, &gammas);
        for (a, b) in ra.iter().zip(&rb) {
            for i in 0..9 {
                assert!((a.sigma.0[i] - b.sigma.0[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unloading_after_plastic_step_is_elastic() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let b = set.bind_f64();
        let settings = SolverSettings::default();
        let r1 = return_map(&b, &shear(0.04), &PlasticState::virgin(1), &settings).unwrap();
        assert!(r1.plastic);
        let r2 = return_map(&b, &shear(0.035), &r1.state, &settings).unwrap();
        assert!(!r2.plastic);
    }

    #[test]
    fn random_plastic_states_keep_dissipation_nonnegative() {
        let set = PotentialSet::phenomenological(Framework::Bc, params()).unwrap();
        let b = set.bind_f64();
        let settings = SolverSettings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut checked = 0;
        for _ in 0..60 {
            let mut f = Tensor2::identity();
            for i in 0..9 {
                f.0[i] += rng.gen_range(-0.03..0.03);
            }
            if f.det() <= 0.5 {
                continue;
            }
            if let Ok(r) = return_map(&b, &f, &PlasticState::virgin(1), &settings) {
                if r.plastic {
                    assert!(r.dissipation.total() >= -1e-12);
                    checked += 1;
                }
            }
        }
        assert!(checked > 20, "only {checked} plastic samples");
    }
}
