//! Parameter identification from uniaxial stress-strain data.
//!
//! The loss is the mean squared axial-stress error over the program points
//! of a simulated loading path. Gradients with respect to all raw
//! parameters are exact: each converged step is an implicit function of the
//! parameters and of the state entering it, so one linearized pass per step
//! (backwards through the simulation) propagates adjoints without ever
//! differentiating through the Newton iterations themselves.

use crate::constitutive::{PlasticState, SolverSettings};
use crate::diff::{Dual, Scalar, Tape, MAX_DIRS};
use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::potentials::PotentialSet;
use crate::driver::{run_path, step_residual, StepRecord};
use serde::{Deserialize, Serialize};

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            a: pred.len(),
            b: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidParameter("empty series".into()));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Root-mean-square error normalized by the target range.
pub fn nrmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    let mse = mse_loss(pred, target)?;
    let max = target.iter().cloned().fold(f64::MIN, f64::max);
    let min = target.iter().cloned().fold(f64::MAX, f64::min);
    let range = max - min;
    if range <= 0.0 {
        return Err(Error::InvalidParameter("degenerate target range".into()));
    }
    Ok(mse.sqrt() / range)
}

/// Adjoint pass for one converged step. Returns the parameter gradient
/// contribution added into `theta_bar` and the adjoint of the incoming
/// state.
fn step_backward(
    set: &PotentialSet,
    raw: &[f64],
    rec: &StepRecord,
    a: f64,
    s_bar: &[f64],
    theta_bar: &mut [f64],
) -> Result<Vec<f64>> {
    let prev = PlasticState::unpack(&rec.s_prev, set.n_back);
    let m = rec.z.len();
    let ns = rec.s_prev.len();
    assert!(m <= MAX_DIRS && ns <= MAX_DIRS);

    let b = set.bind(raw);
    let bd = b.lift_dual::<MAX_DIRS>();

    // pass 1: derivatives with respect to the step unknowns
    let z_seeded: Vec<Dual<f64, MAX_DIRS>> = rec
        .z
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::seeded(v, i, m))
        .collect();
    let prev_c = prev.map(|&v| Dual::constant(v));
    let (res_d, snext_d, sig_d) = step_residual(
        &bd,
        Dual::constant(rec.lambda_axial),
        &z_seeded,
        &prev_c,
        rec.plastic,
    )?;
    let mut u = vec![0.0; m];
    let dh_dz = sig_d.derivs(m);
    for j in 0..m {
        u[j] = a * dh_dz[j];
    }
    for (i, sn) in snext_d.iter().enumerate() {
        if s_bar[i] != 0.0 {
            let row = sn.derivs(m);
            for j in 0..m {
                u[j] += s_bar[i] * row[j];
            }
        }
    }
    let mut jac = vec![0.0; m * m];
    for (r, rd) in res_d.iter().enumerate() {
        jac[r * m..(r + 1) * m].copy_from_slice(&rd.derivs(m));
    }
    let lu = Lu::factor(&jac, m).ok_or(Error::SingularJacobian { step: 0 })?;
    let w = lu.solve_transposed(&u);

    // pass 2: reverse sweep over the raw parameters of
    // psi = a sigma11 - w . R at frozen unknowns and state
    let tape = Tape::new();
    let raw_vars: Vec<_> = raw.iter().map(|&v| tape.var(v)).collect();
    let bv = set.bind(&raw_vars);
    let z_c: Vec<_> = rec.z.iter().map(|&v| Scalar::from_f64(v)).collect();
    let prev_v = prev.map(|&v| Scalar::from_f64(v));
    let (res_v, _, sig_v) = step_residual(
        &bv,
        Scalar::from_f64(rec.lambda_axial),
        &z_c,
        &prev_v,
        rec.plastic,
    )?;
    let mut psi = sig_v * Scalar::from_f64(a);
    for (rv, &wi) in res_v.into_iter().zip(&w) {
        psi = psi - rv * Scalar::from_f64(wi);
    }
    for (tb, g) in theta_bar.iter_mut().zip(tape.gradient(psi, &raw_vars)) {
        *tb += g;
    }

    // pass 3: derivatives with respect to the incoming state
    let s_seeded =
        PlasticState::unpack(
            &rec.s_prev
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::<f64, MAX_DIRS>::seeded(v, i, ns))
                .collect::<Vec<_>>(),
            set.n_back,
        );
    let z_c2: Vec<Dual<f64, MAX_DIRS>> = rec.z.iter().map(|&v| Dual::constant(v)).collect();
    let (res_s, snext_s, sig_s) = step_residual(
        &bd,
        Dual::constant(rec.lambda_axial),
        &z_c2,
        &s_seeded,
        rec.plastic,
    )?;
    let mut s_bar_prev = vec![0.0; ns];
    let dh_ds = sig_s.derivs(ns);
    for j in 0..ns {
        s_bar_prev[j] = a * dh_ds[j];
    }
    for (i, sn) in snext_s.iter().enumerate() {
        if s_bar[i] != 0.0 {
            let row = sn.derivs(ns);
            for j in 0..ns {
                s_bar_prev[j] += s_bar[i] * row[j];
            }
        }
    }
    for (i, rv) in res_s.iter().enumerate() {
        if w[i] != 0.0 {
            let row = rv.derivs(ns);
            for j in 0..ns {
                s_bar_prev[j] -= w[i] * row[j];
            }
        }
    }
    Ok(s_bar_prev)
}

/// Loss and exact gradient with respect to every raw parameter for one
/// loading path. `targets` must align with `path` (axial Cauchy stress per
/// program point, including the traction-free initial point).
pub fn loss_and_grad(
    set: &PotentialSet,
    raw: &[f64],
    path: &[f64],
    targets: &[f64],
    settings: &SolverSettings,
) -> Result<(f64, Vec<f64>)> {
    if path.len() != targets.len() {
        return Err(Error::LengthMismatch {
            a: path.len(),
            b: targets.len(),
        });
    }
    let b = set.bind(raw);
    let sim = run_path(&b, path, settings)?;
    let n_cmp = (path.len() - 1) as f64;
    let loss = sim.sigma11[1..]
        .iter()
        .zip(&targets[1..])
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n_cmp;

    // map program-point records to their target index
    let mut point_idx = Vec::with_capacity(sim.records.len());
    let mut k = 0usize;
    for r in &sim.records {
        if r.on_program_point {
            k += 1;
            point_idx.push(Some(k));
        } else {
            point_idx.push(None);
        }
    }

    let mut theta_bar = vec![0.0; raw.len()];
    let ns = 10 + 9 * set.n_back;
    let mut s_bar = vec![0.0; ns];
    for (r, idx) in sim.records.iter().zip(&point_idx).rev() {
        let a = match idx {
            Some(k) => 2.0 * (sim.sigma11[*k] - targets[*k]) / n_cmp,
            None => 0.0,
        };
        s_bar = step_backward(set, raw, r, a, &s_bar, &mut theta_bar)?;
    }
    for (g, &t) in theta_bar.iter_mut().zip(&set.trainable_mask()) {
        if !t {
            *g = 0.0;
        }
    }
    Ok((loss, theta_bar))
}

/// Adam optimizer with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            theta[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// loss assigned to epochs whose forward solve fails, as a multiple of
    /// the initial loss
    pub penalty_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.02,
            penalty_factor: 1e3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_loss: f64,
    pub best_epoch: usize,
    pub best_raw: Vec<f64>,
    pub final_loss: f64,
    pub history: Vec<f64>,
    pub failed_epochs: usize,
}

/// Run Adam on the trainable raw parameters; the best-loss snapshot is kept
/// independently of the final iterate.
pub fn train(
    set: &PotentialSet,
    path: &[f64],
    targets: &[f64],
    settings: &SolverSettings,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut raw = set.flat_raw();
    let mut opt = Adam::new(raw.len(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_raw = raw.clone();
    let mut failed_epochs = 0;
    let mut penalty = f64::NAN;
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let (loss, grad) = match loss_and_grad(set, &raw, path, targets, settings) {
            Ok(v) => v,
            Err(_) => {
                failed_epochs += 1;
                let loss = if penalty.is_finite() { penalty } else { 1e6 };
                (loss, vec![0.0; raw.len()])
            }
        };
        if !penalty.is_finite() && loss.is_finite() {
            penalty = cfg.penalty_factor * loss.max(1e-12);
        }
        history.push(loss);
        final_loss = loss;
        if loss < best_loss {
            best_loss = loss;
            best_epoch = epoch;
            best_raw = raw.clone();
        }
        opt.step(&mut raw, &grad);
    }
    Ok(TrainReport {
        best_loss,
        best_epoch,
        best_raw,
        final_loss,
        history,
        failed_epochs,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: TrainReport,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MultiSeedStats {
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn multi_seed(
    make_set: impl Fn(u64) -> Result<PotentialSet>,
    seeds: &[u64],
    path: &[f64],
    targets: &[f64],
    settings: &SolverSettings,
    cfg: &TrainConfig,
) -> Result<Vec<SeedOutcome>> {
    seeds
        .iter()
        .map(|&seed| {
            let set = make_set(seed)?;
            let report = train(&set, path, targets, settings, cfg)?;
            Ok(SeedOutcome { seed, report })
        })
        .collect()
}

/// Population statistics of the per-seed best losses.
pub fn summarize(outcomes: &[SeedOutcome]) -> MultiSeedStats {
    let losses: Vec<f64> = outcomes.iter().map(|o| o.report.best_loss).collect();
    let n = losses.len() as f64;
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    MultiSeedStats {
        best,
        mean,
        std: var.sqrt(),
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub nrmse_train: f64,
    pub nrmse_holdout: f64,
}

/// Simulate the full path with the given raw parameters and score the
/// training segment and the held-out remainder separately.
pub fn evaluate_extrapolation(
    set: &PotentialSet,
    raw: &[f64],
    full_path: &[f64],
    full_targets: &[f64],
    n_train_points: usize,
) -> Result<ExtrapolationReport> {
    if full_path.len() != full_targets.len() {
        return Err(Error::LengthMismatch {
            a: full_path.len(),
            b: full_targets.len(),
        });
    }
    if n_train_points == 0 || n_train_points >= full_path.len() {
        return Err(Error::InvalidParameter(format!(
            "n_train_points {n_train_points} out of range for {} points",
            full_path.len()
        )));
    }
    let b = set.bind(raw);
    let sim = run_path(&b, full_path, &SolverSettings::default())?;
    Ok(ExtrapolationReport {
        nrmse_train: nrmse(&sim.sigma11[..n_train_points], &full_targets[..n_train_points])?,
        nrmse_holdout: nrmse(&sim.sigma11[n_train_points..], &full_targets[n_train_points..])?,
    })
}

/// Multiplicatively perturb every trainable phenomenological parameter by a
/// factor drawn uniformly from [1 - rel, 1 + rel].
pub fn perturb_phenomenological(set: &PotentialSet, seed: u64, rel: f64) -> PotentialSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    let names: Vec<String> = out
        .phenom
        .iter()
        .filter(|s| s.trainable)
        .map(|s| s.name.clone())
        .collect();
    for name in names {
        let v = out.phenom_value(&name);
        let factor = 1.0 + rng.gen_range(-rel..rel);
        let mut nv = v * factor;
        if name == "delta" {
            nv = nv.clamp(0.01, 0.99);
        }
        out.set_phenom_value(&name, nv);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::LoadingProgram;
    use crate::potentials::{Framework, PhenomenologicalParams};

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

    fn short_program() -> LoadingProgram {
        LoadingProgram {
            amplitude: 0.025,
            cycles: 1,
            steps_per_branch: 8,
            max_increment: 0.02,
        }
    }

    fn synth_targets(set: &PotentialSet, path: &[f64]) -> Vec<f64> {
        run_path(&set.bind_f64(), path, &SolverSettings::default())
            .unwrap()
            .sigma11
    }

    #[test]
    fn mse_loss_values_and_length_check() {
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 1.0]).unwrap(), 2.5);
        assert!(matches!(
            mse_loss(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn adam_first_step_has_signed_lr_magnitude() {
        let mut opt = Adam::new(3, 0.1);
        let mut theta = vec![1.0, -2.0, 0.5];
        let grad = vec![5.0, -0.3, 1e-12];
        let before = theta.clone();
        opt.step(&mut theta, &grad);
        assert!((theta[0] - (before[0] - 0.1)).abs() < 1e-7);
        assert!((theta[1] - (before[1] + 0.1)).abs() < 1e-6);
        // negligible gradient moves the parameter negligibly
        assert!((theta[2] - before[2]).abs() < 1e-4);
    }

    fn check_gradient(set: &PotentialSet, indices: &[usize], rel_tol: f64) {
        let program = short_program();
        let path = program.lambda_path().unwrap();
        // targets from shifted parameters so residual errors are nonzero
        let mut gen = set.clone();
        let raw0 = gen.flat_raw();
        gen.set_flat_raw(&raw0.iter().map(|r| r + 0.05).collect::<Vec<_>>());
        let targets = synth_targets(&gen, &path);

        let raw = set.flat_raw();
        let settings = SolverSettings::default();
        let (_, grad) = loss_and_grad(set, &raw, &path, &targets, &settings).unwrap();
        let mask = set.trainable_mask();
        let h = 1e-6;
        for &i in indices {
            assert!(mask[i], "index {i} not trainable");
            let mut rp = raw.clone();
            rp[i] += h;
            let (lp, _) = loss_and_grad(set, &rp, &path, &targets, &settings).unwrap();
            let mut rm = raw.clone();
            rm[i] -= h;
            let (lm, _) = loss_and_grad(set, &rm, &path, &targets, &settings).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-10);
            let diff = (grad[i] - fd).abs();
            assert!(
                diff / scale < rel_tol || diff < 1e-9,
                "param {i}: adjoint {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences_af() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        // y0, h_iso, h_kin, r_sat, gamma, m_kin_inf
        check_gradient(&set, &[2, 3, 4, 5, 6, 7], 1e-5);
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences_ow() {
        let set = PotentialSet::phenomenological(Framework::Ow, params()).unwrap();
        check_gradient(&set, &[2, 7, 8], 1e-5);
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences_networks() {
        let set = PotentialSet::with_networks(Framework::FourNn, params(), 4, &[6, 6], 0.4)
            .unwrap();
        let n = set.n_flat();
        let probe: Vec<usize> = (0..8).map(|i| 10 + i * (n - 11) / 8).collect();
        check_gradient(&set, &probe, 5e-4);
    }

    #[test]
    fn elastic_only_path_has_zero_hardening_gradient() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let program = LoadingProgram {
            amplitude: 0.002,
            cycles: 1,
            steps_per_branch: 4,
            max_increment: 0.02,
        };
        let path = program.lambda_path().unwrap();
        let targets = vec![0.0; path.len()];
        let (loss, grad) =
            loss_and_grad(&set, &set.flat_raw(), &path, &targets, &SolverSettings::default())
                .unwrap();
        assert!(loss > 0.0);
        for i in [3, 4, 5, 6, 7] {
            assert_eq!(grad[i], 0.0, "hardening parameter {i} influenced elastic path");
        }
    }

    #[test]
    fn training_recovers_a_perturbed_self_fit() {
        let truth = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let program = short_program();
        let path = program.lambda_path().unwrap();
        let targets = synth_targets(&truth, &path);
        let init = perturb_phenomenological(&truth, 7, 0.2);
        let cfg = TrainConfig {
            epochs: 120,
            lr: 0.03,
            penalty_factor: 1e3,
        };
        let report = train(&init, &path, &targets, &SolverSettings::default(), &cfg).unwrap();
        assert!(report.history[0] > 0.0);
        assert!(
            report.best_loss < 1e-3 * report.history[0],
            "loss only went from {} to {}",
            report.history[0],
            report.best_loss
        );
        assert!(report.failed_epochs == 0);
        assert_eq!(report.history.len(), cfg.epochs);
    }

    #[test]
    fn multi_seed_statistics() {
        let outcomes = vec![
            SeedOutcome {
                seed: 0,
                report: TrainReport {
                    best_loss: 2.0,
                    best_epoch: 0,
                    best_raw: vec![],
                    final_loss: 2.0,
                    history: vec![],
                    failed_epochs: 0,
                },
            },
            SeedOutcome {
                seed: 1,
                report: TrainReport {
                    best_loss: 4.0,
                    best_epoch: 0,
                    best_raw: vec![],
                    final_loss: 4.0,
                    history: vec![],
                    failed_epochs: 0,
                },
            },
        ];
        let stats = summarize(&outcomes);
        assert_eq!(stats.best, 2.0);
        assert_eq!(stats.mean, 3.0);
        assert_eq!(stats.std, 1.0);
    }

    #[test]
    fn extrapolation_report_scores_both_segments() {
        let set = PotentialSet::phenomenological(Framework::Af, params()).unwrap();
        let program = LoadingProgram {
            amplitude: 0.025,
            cycles: 2,
            steps_per_branch: 6,
            max_increment: 0.02,
        };
        let path = program.lambda_path().unwrap();
        let targets = synth_targets(&set, &path);
        let n_train = 1 + 6 * 3;
        let rep =
            evaluate_extrapolation(&set, &set.flat_raw(), &path, &targets, n_train).unwrap();
        assert!(rep.nrmse_train < 1e-10);
        assert!(rep.nrmse_holdout < 1e-10);
        assert!(evaluate_extrapolation(&set, &set.flat_raw(), &path, &targets[1..], n_train)
            .is_err());
    }

    #[test]
    fn perturbation_respects_constraints() {
        let set = PotentialSet::phenomenological(Framework::Bc, params()).unwrap();
        let p = perturb_phenomenological(&set, 3, 0.5);
        assert!(p.phenom_value("y0") > 0.0);
        let d = p.phenom_value("delta");
        assert!(d > 0.0 && d < 1.0);
        assert!((p.phenom_value("g") - 26.0).abs() < 1e-9);
        assert!((p.phenom_value("y0") - 0.3).abs() > 1e-4);
    }
}
