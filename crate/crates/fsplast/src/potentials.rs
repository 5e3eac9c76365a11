//! Energy and dissipation potentials behind a single interface.
//!
//! The elastic free energy is always compressible Neo-Hookean. The four
//! hardening potentials (isotropic/kinematic free energy, isotropic/
//! kinematic dissipation) are either phenomenological forms with a handful
//! of material constants or constraint-satisfying networks. The Ohno-Wang
//! model only defines the derivative of its kinematic dissipation potential,
//! so the constitutive core consumes kinematic dissipation through a flow
//! interface that either differentiates a scalar potential or returns the
//! rate directly.
//!
//! All trainable quantities live in one flat raw-parameter vector;
//! positivity and interval constraints are enforced by reparameterization
//! ([`Transform`]), so an optimizer can move freely in raw space.

use crate::diff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::icnn::{ConstrainedNet, ConstraintClass};
use crate::tensor::Tensor2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Framework {
    #[serde(rename = "AF")]
    Af,
    #[serde(rename = "OW")]
    Ow,
    #[serde(rename = "BC")]
    Bc,
    #[serde(rename = "2NN")]
    TwoNn,
    #[serde(rename = "4NN")]
    FourNn,
}

impl Framework {
    pub fn name(self) -> &'static str {
        match self {
            Framework::Af => "AF",
            Framework::Ow => "OW",
            Framework::Bc => "BC",
            Framework::TwoNn => "2NN",
            Framework::FourNn => "4NN",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "AF" | "af" => Ok(Framework::Af),
            "OW" | "ow" => Ok(Framework::Ow),
            "BC" | "bc" => Ok(Framework::Bc),
            "2NN" | "2nn" => Ok(Framework::TwoNn),
            "4NN" | "4nn" => Ok(Framework::FourNn),
            other => Err(Error::InvalidParameter(format!("unknown framework {other:?}"))),
        }
    }

    pub fn uses_dissipation_nets(self) -> bool {
        matches!(self, Framework::TwoNn | Framework::FourNn)
    }

    pub fn uses_energy_nets(self) -> bool {
        matches!(self, Framework::FourNn)
    }
}

/// Raw-to-effective reparameterizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// strictly positive
    Exp,
    /// nonnegative
    Softplus,
    /// (0, 1)
    Sigmoid,
}

impl Transform {
    pub fn apply<S: Scalar>(self, raw: S) -> S {
        match self {
            Transform::Identity => raw,
            Transform::Exp => raw.exp(),
            Transform::Softplus => raw.softplus(),
            Transform::Sigmoid => {
                if raw.value() > 0.0 {
                    S::one() / (S::one() + (-raw).exp())
                } else {
                    let e = raw.exp();
                    e.clone() / (S::one() + e)
                }
            }
        }
    }

    /// Raw value whose effective value is `v` (up to rounding). For
    /// Softplus, `v = 0` maps to a deeply negative raw that underflows to an
    /// exact effective zero.
    pub fn invert(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Exp => v.ln(),
            Transform::Softplus => {
                if v <= 0.0 {
                    -800.0
                } else if v > 30.0 {
                    v
                } else {
                    (v.exp_m1()).ln()
                }
            }
            Transform::Sigmoid => {
                let v = v.clamp(1e-12, 1.0 - 1e-12);
                (v / (1.0 - v)).ln()
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub transform: Transform,
    pub raw: f64,
    pub trainable: bool,
}

/// Phenomenological material constants (effective values, GPa where
/// applicable).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PhenomenologicalParams {
    /// shear modulus
    pub g: f64,
    /// bulk modulus
    pub k_bulk: f64,
    /// initial yield limit
    pub y0: f64,
    /// isotropic hardening modulus
    pub h_iso: f64,
    /// kinematic hardening modulus
    pub h_kin: f64,
    /// saturation stress of the Voce dissipation potential
    pub r_sat: f64,
    /// Voce steepness (1/GPa)
    pub gamma: f64,
    /// back-stress saturation value
    pub m_kin_inf: f64,
    /// Ohno-Wang exponent
    pub ow_m: f64,
    /// Burlet-Cailletaud mixing weight in [0, 1]
    pub delta: f64,
}

impl PhenomenologicalParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [("g", self.g), ("k_bulk", self.k_bulk), ("y0", self.y0)];
        for (n, v) in pos {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{n} must be > 0, got {v}")));
            }
        }
        let nonneg = [
            ("h_iso", self.h_iso),
            ("h_kin", self.h_kin),
            ("r_sat", self.r_sat),
            ("gamma", self.gamma),
            ("ow_m", self.ow_m),
        ];
        for (n, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{n} must be >= 0, got {v}")));
            }
        }
        if !(self.m_kin_inf > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "m_kin_inf must be > 0, got {}",
                self.m_kin_inf
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!(
                "delta must be in [0,1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

const PHENOM_NAMES: [(&str, Transform); 10] = [
    ("g", Transform::Exp),
    ("k_bulk", Transform::Exp),
    ("y0", Transform::Exp),
    ("h_iso", Transform::Softplus),
    ("h_kin", Transform::Softplus),
    ("r_sat", Transform::Softplus),
    ("gamma", Transform::Softplus),
    ("m_kin_inf", Transform::Exp),
    ("ow_m", Transform::Softplus),
    ("delta", Transform::Sigmoid),
];

pub const N_PHENOM: usize = PHENOM_NAMES.len();

/// The complete potential set of one framework: selector, phenomenological
/// constants, optional networks, and the nondimensionalization scales used
/// for network inputs/outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialSet {
    pub framework: Framework,
    pub n_back: usize,
    /// stress nondimensionalization (GPa)
    pub stress_scale: f64,
    /// strain-like nondimensionalization for energy-network inputs
    pub strain_scale: f64,
    pub phenom: Vec<ParamSpec>,
    pub psi_iso_net: Option<ConstrainedNet>,
    pub psi_kin_net: Option<ConstrainedNet>,
    pub phi_iso_net: Option<ConstrainedNet>,
    pub phi_kin_net: Option<ConstrainedNet>,
}

impl PotentialSet {
    pub fn phenomenological(framework: Framework, p: PhenomenologicalParams) -> Result<Self> {
        p.validate()?;
        if framework.uses_dissipation_nets() {
            return Err(Error::InvalidParameter(
                "2NN/4NN need networks; use with_networks".into(),
            ));
        }
        Ok(PotentialSet {
            framework,
            n_back: 1,
            stress_scale: 0.1,
            strain_scale: 0.01,
            phenom: Self::phenom_specs(framework, p, true),
            psi_iso_net: None,
            psi_kin_net: None,
            phi_iso_net: None,
            phi_kin_net: None,
        })
    }

    /// Build a 2NN or 4NN set. The phenomenological block still carries the
    /// elastic constants (and for 2NN the trainable hardening moduli).
    pub fn with_networks(
        framework: Framework,
        p: PhenomenologicalParams,
        seed: u64,
        hidden: &[usize],
        init_std: f64,
    ) -> Result<Self> {
        p.validate()?;
        if !framework.uses_dissipation_nets() {
            return Err(Error::InvalidParameter(
                "AF/OW/BC carry no networks; use phenomenological".into(),
            ));
        }
        let dims1: Vec<usize> = [&[1usize][..], hidden, &[1]].concat();
        let dims2: Vec<usize> = [&[2usize][..], hidden, &[1]].concat();
        let energy_nets = framework.uses_energy_nets();
        Ok(PotentialSet {
            framework,
            n_back: 1,
            stress_scale: 0.1,
            strain_scale: 0.01,
            phenom: Self::phenom_specs(framework, p, true),
            psi_iso_net: energy_nets.then(|| {
                ConstrainedNet::init(seed, ConstraintClass::ConvexMonotone, &dims1, init_std)
            }),
            psi_kin_net: energy_nets.then(|| {
                ConstrainedNet::init(
                    seed.wrapping_add(1),
                    ConstraintClass::ConvexMonotone,
                    &dims2,
                    init_std,
                )
            }),
            phi_iso_net: Some(ConstrainedNet::init(
                seed.wrapping_add(2),
                ConstraintClass::PositiveMonotone,
                &dims1,
                init_std,
            )),
            phi_kin_net: Some(ConstrainedNet::init(
                seed.wrapping_add(3),
                ConstraintClass::PositiveConvexMonotone,
                &dims2,
                init_std,
            )),
        })
    }

    fn phenom_specs(
        framework: Framework,
        p: PhenomenologicalParams,
        y0_trainable: bool,
    ) -> Vec<ParamSpec> {
        let vals = [
            p.g, p.k_bulk, p.y0, p.h_iso, p.h_kin, p.r_sat, p.gamma, p.m_kin_inf, p.ow_m, p.delta,
        ];
        PHENOM_NAMES
            .iter()
            .zip(vals)
            .map(|(&(name, transform), v)| {
                let trainable = match name {
                    "g" | "k_bulk" => false,
                    "y0" => y0_trainable,
                    "h_iso" | "h_kin" => !framework.uses_energy_nets(),
                    "r_sat" | "gamma" => !framework.uses_dissipation_nets(),
                    "m_kin_inf" => !framework.uses_dissipation_nets(),
                    "ow_m" => framework == Framework::Ow,
                    "delta" => framework == Framework::Bc,
                    _ => unreachable!(),
                };
                ParamSpec {
                    name: name.to_string(),
                    transform,
                    raw: transform.invert(v),
                    trainable,
                }
            })
            .collect()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        for s in &mut self.phenom {
            if s.name == name {
                s.trainable = trainable;
            }
        }
    }

    pub fn phenom_value(&self, name: &str) -> f64 {
        let s = self.phenom.iter().find(|s| s.name == name).unwrap();
        s.transform.apply(s.raw)
    }

    pub fn set_phenom_value(&mut self, name: &str, v: f64) {
        let s = self.phenom.iter_mut().find(|s| s.name == name).unwrap();
        s.raw = s.transform.invert(v);
    }

    fn nets(&self) -> [&Option<ConstrainedNet>; 4] {
        [
            &self.psi_iso_net,
            &self.psi_kin_net,
            &self.phi_iso_net,
            &self.phi_kin_net,
        ]
    }

    pub fn n_flat(&self) -> usize {
        N_PHENOM
            + self
                .nets()
                .iter()
                .map(|n| n.as_ref().map_or(0, |n| n.raw.len()))
                .sum::<usize>()
    }

    /// All raw parameters as one flat vector: phenomenological block first,
    /// then each network in declaration order.
    pub fn flat_raw(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.phenom.iter().map(|s| s.raw).collect();
        for net in self.nets().into_iter().flatten() {
            v.extend_from_slice(&net.raw);
        }
        v
    }

    pub fn set_flat_raw(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_flat());
        for (s, &r) in self.phenom.iter_mut().zip(flat) {
            s.raw = r;
        }
        let mut i = N_PHENOM;
        for net in [
            &mut self.psi_iso_net,
            &mut self.psi_kin_net,
            &mut self.phi_iso_net,
            &mut self.phi_kin_net,
        ]
        .into_iter()
        .flatten()
        {
            let n = net.raw.len();
            net.raw.copy_from_slice(&flat[i..i + n]);
            i += n;
        }
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut m: Vec<bool> = self.phenom.iter().map(|s| s.trainable).collect();
        for net in self.nets().into_iter().flatten() {
            m.extend(std::iter::repeat(true).take(net.raw.len()));
        }
        m
    }

    pub fn bind<S: Scalar>(&self, raw: &[S]) -> Bound<'_, S> {
        Bound::new(self, raw)
    }

    pub fn bind_f64(&self) -> Bound<'_, f64> {
        Bound::new(self, &self.flat_raw())
    }
}

#[derive(Clone, Debug)]
enum KinFlowKind {
    Af,
    Ow,
    Bc,
    Net,
}

/// A potential set bound to one concrete parameter vector of scalar type
/// `S`. Effective parameters, network reparameterizations and the
/// reference-state normalization constants are computed once here.
pub struct Bound<'a, S: Scalar> {
    pub set: &'a PotentialSet,
    pub g: S,
    pub k_bulk: S,
    pub y0: S,
    pub h_iso: S,
    pub h_kin: S,
    pub r_sat: S,
    pub gamma: S,
    pub m_kin_inf: S,
    pub ow_m: S,
    pub delta: S,
    kin_flow: KinFlowKind,
    psi_iso_eff: Option<Vec<S>>,
    psi_kin_eff: Option<Vec<S>>,
    phi_iso_eff: Option<Vec<S>>,
    phi_kin_eff: Option<Vec<S>>,
    /// (value, derivative) of the isotropic energy net at k = 0
    psi_iso_ref: Option<(S, S)>,
    /// (value, d/dI1, d/dI2) of the kinematic energy net at the reference
    psi_kin_ref: Option<(S, S, S)>,
    /// value of the isotropic dissipation net at kappa = 0
    phi_iso_ref: Option<S>,
    /// value of the kinematic dissipation net at zero back-stress
    phi_kin_ref: Option<S>,
}

/// Derivative of a scalar-valued tensor function at `at`, treating the nine
/// components as independent (the natural extensions of trace/det make this
/// agree with the symmetric-calculus derivative at symmetric arguments).
pub fn tensor_grad<S, F>(mut f: F, at: &Tensor2<S>) -> Tensor2<S>
where
    S: Scalar,
    F: FnMut(&Tensor2<Dual<S, 9>>) -> Dual<S, 9>,
{
    let seeded = Tensor2(std::array::from_fn(|i| {
        Dual::seeded_s(at.0[i].clone(), i, 9)
    }));
    let out = f(&seeded);
    let d = out.deriv_scalars(9);
    Tensor2(std::array::from_fn(|i| d[i].clone()))
}

fn scalar_deriv<S, F>(f: F, at: S) -> (S, S)
where
    S: Scalar,
    F: Fn(Dual<S, 1>) -> Dual<S, 1>,
{
    let out = f(Dual::seeded_s(at, 0, 1));
    let d = out.deriv_scalars(1);
    (out.v, d[0].clone())
}

// ---------------------------------------------------------------------------
// Standalone potential forms (the building blocks; `Bound` delegates here).
// ---------------------------------------------------------------------------

/// Compressible Neo-Hookean free energy
/// G/2 [tr(C / det(C)^(1/3)) - 3] + K/2 [sqrt(det C) - 1]^2.
pub fn psi_el_neohooke<S: Scalar>(ce: &Tensor2<S>, g: S, k_bulk: S) -> Result<S> {
    let det = ce.det();
    if det.value() <= 0.0 {
        return Err(Error::SingularTensor { det: det.value() });
    }
    let det_third = (det.clone().ln() * S::from_f64(-1.0 / 3.0)).exp();
    let iso = g * S::from_f64(0.5) * (ce.trace() * det_third - S::from_f64(3.0));
    let j = det.sqrt() - S::one();
    let vol = k_bulk * S::from_f64(0.5) * j.clone() * j;
    Ok(iso + vol)
}

/// Quadratic isotropic free energy H_iso k^2 / 2.
pub fn psi_iso_quadratic<S: Scalar>(k: S, h_iso: S) -> S {
    h_iso * S::from_f64(0.5) * k.clone() * k
}

/// Isochoric Neo-Hookean kinematic free energy
/// H_kin/2 [tr(c / det(c)^(1/3)) - 3].
pub fn psi_kin_neohooke<S: Scalar>(ckin: &Tensor2<S>, h_kin: S) -> Result<S> {
    let det = ckin.det();
    if det.value() <= 0.0 {
        return Err(Error::SingularTensor { det: det.value() });
    }
    let det_third = (det.ln() * S::from_f64(-1.0 / 3.0)).exp();
    Ok(h_kin * S::from_f64(0.5) * (ckin.trace() * det_third - S::from_f64(3.0)))
}

/// Voce saturating isotropic dissipation potential R [1 - exp(-gamma kappa)].
pub fn phi_iso_voce<S: Scalar>(kappa: S, r_sat: S, gamma: S) -> S {
    r_sat * (S::one() - (-(gamma * kappa)).exp())
}

/// Armstrong-Frederick kinematic dissipation potential
/// (3/4) Mkin_dev : Mkin_dev^t / M_inf.
pub fn phi_kin_af<S: Scalar>(mkin: &Tensor2<S>, m_inf: S) -> Result<S> {
    if m_inf.value() <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "m_kin_inf must be > 0, got {}",
            m_inf.value()
        )));
    }
    let dev = mkin.dev();
    Ok(S::from_f64(0.75) * dev.ddot(&dev.transpose()) / m_inf)
}

/// Modified Burlet-Cailletaud kinematic dissipation potential,
/// (3/(4 M_inf)) [delta dev:dev + (1 - delta) (Mkin : eta_v)^2]; reduces to
/// Armstrong-Frederick at delta = 1 for deviatoric back-stress.
pub fn phi_kin_bc<S: Scalar>(
    mkin: &Tensor2<S>,
    eta_v: &Tensor2<S>,
    m_inf: S,
    delta: S,
) -> Result<S> {
    if m_inf.value() <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "m_kin_inf must be > 0, got {}",
            m_inf.value()
        )));
    }
    let dev = mkin.dev();
    let radial = mkin.ddot(eta_v);
    let val = delta.clone() * dev.ddot(&dev.transpose())
        + (S::one() - delta) * radial.clone() * radial;
    Ok(S::from_f64(0.75) * val / m_inf)
}

/// Ohno-Wang back-stress evolution direction (the model defines the
/// derivative of its kinematic dissipation potential, not the potential):
/// (3/2)(Mkin_dev / M_inf)(f_y(M_red)/M_inf)^m < nu : Mkin_dev / f_y(M_red) >.
pub fn ow_flow<S: Scalar>(
    mkin: &Tensor2<S>,
    nu: &Tensor2<S>,
    fy_red: S,
    m_inf: S,
    m_exp: S,
) -> Result<Tensor2<S>> {
    let dev = mkin.dev();
    let loading = nu.ddot(&dev);
    if loading.value() <= 0.0 {
        return Ok(Tensor2::zero());
    }
    if fy_red.value() <= 0.0 {
        // bracket argument positive with a vanishing effective stress
        return Err(Error::DivisionByZero);
    }
    let bracket = (loading / fy_red.clone()).max0();
    let power = (fy_red / m_inf.clone()).powf(m_exp);
    Ok(dev.scale(S::from_f64(1.5) / m_inf * power * bracket))
}

/// Von Mises effective stress sqrt(3/2 dev : dev^t); positive homogeneous of
/// degree one.
pub fn fy_vonmises<S: Scalar>(mred: &Tensor2<S>) -> S {
    let dev = mred.dev();
    (S::from_f64(1.5) * dev.ddot(&dev.transpose())).sqrt()
}

/// Isotropic invariants of the kinematic deformation tensor: tr c, tr c^2.
pub fn invariants_kin_energy<S: Scalar>(ckin: &Tensor2<S>) -> (S, S) {
    (ckin.trace(), ckin.matmul(ckin).trace())
}

/// Invariants of the back-stress for the dissipation network:
/// Mkin : Mkin and (Mkin : eta_v)^2 with eta_v = nu / ||nu||.
pub fn invariants_kin_dissipation<S: Scalar>(
    mkin: &Tensor2<S>,
    nu: &Tensor2<S>,
) -> Result<(S, S)> {
    let norm = nu.norm();
    if norm.value() <= 1e-300 {
        return Err(Error::ZeroFlowDirection);
    }
    let radial = mkin.ddot(nu) / norm;
    Ok((mkin.ddot(mkin), radial.clone() * radial))
}

// ---------------------------------------------------------------------------
// Bound evaluation
// ---------------------------------------------------------------------------

impl<'a, S: Scalar> Bound<'a, S> {
    pub fn new(set: &'a PotentialSet, raw: &[S]) -> Self {
        assert_eq!(raw.len(), set.n_flat());
        let eff =
            |i: usize| -> S { set.phenom[i].transform.apply(raw[i].clone()) };
        let mut offset = N_PHENOM;
        let mut net_eff = |net: &Option<ConstrainedNet>| -> Option<Vec<S>> {
            net.as_ref().map(|n| {
                let e = n.effective(&raw[offset..offset + n.raw.len()]);
                offset += n.raw.len();
                e
            })
        };
        let psi_iso_eff = net_eff(&set.psi_iso_net);
        let psi_kin_eff = net_eff(&set.psi_kin_net);
        let phi_iso_eff = net_eff(&set.phi_iso_net);
        let phi_kin_eff = net_eff(&set.phi_kin_net);

        let kin_flow = if set.phi_kin_net.is_some() {
            KinFlowKind::Net
        } else {
            match set.framework {
                Framework::Af => KinFlowKind::Af,
                Framework::Ow => KinFlowKind::Ow,
                Framework::Bc => KinFlowKind::Bc,
                _ => KinFlowKind::Net,
            }
        };

        // reference normalization constants
        let psi_iso_ref = set.psi_iso_net.as_ref().map(|n| {
            let eff2: Vec<Dual<S, 1>> = psi_iso_eff
                .as_ref()
                .unwrap()
                .iter()
                .map(|e| Dual::constant(e.clone()))
                .collect();
            let x = Dual::seeded_s(S::zero(), 0, 1);
            let out = n.forward_eff(&eff2, &[x]);
            let d = out.deriv_scalars(1);
            (out.v, d[0].clone())
        });
        let psi_kin_ref = set.psi_kin_net.as_ref().map(|n| {
            let eff2: Vec<Dual<S, 9>> = psi_kin_eff
                .as_ref()
                .unwrap()
                .iter()
                .map(|e| Dual::constant(e.clone()))
                .collect();
            let x = [
                Dual::seeded_s(S::zero(), 0, 2),
                Dual::seeded_s(S::zero(), 1, 2),
            ];
            let out = n.forward_eff(&eff2, &x);
            let d = out.deriv_scalars(2);
            (out.v, d[0].clone(), d[1].clone())
        });
        let phi_iso_ref = set.phi_iso_net.as_ref().map(|n| {
            n.forward_eff(phi_iso_eff.as_ref().unwrap(), &[S::zero()])
        });
        let phi_kin_ref = set.phi_kin_net.as_ref().map(|n| {
            n.forward_eff(phi_kin_eff.as_ref().unwrap(), &[S::zero(), S::zero()])
        });

        Bound {
            set,
            g: eff(0),
            k_bulk: eff(1),
            y0: eff(2),
            h_iso: eff(3),
            h_kin: eff(4),
            r_sat: eff(5),
            gamma: eff(6),
            m_kin_inf: eff(7),
            ow_m: eff(8),
            delta: eff(9),
            kin_flow,
            psi_iso_eff,
            psi_kin_eff,
            phi_iso_eff,
            phi_kin_eff,
            psi_iso_ref,
            psi_kin_ref,
            phi_iso_ref,
            phi_kin_ref,
        }
    }

    fn stress_scale(&self) -> S {
        S::from_f64(self.set.stress_scale)
    }

    fn strain_scale(&self) -> S {
        S::from_f64(self.set.strain_scale)
    }

    pub fn psi_el(&self, ce: &Tensor2<S>) -> Result<S> {
        psi_el_neohooke(ce, self.g.clone(), self.k_bulk.clone())
    }

    pub fn d_psi_el_dce(&self, ce: &Tensor2<S>) -> Result<Tensor2<S>> {
        let g = Dual::constant(self.g.clone());
        let k = Dual::constant(self.k_bulk.clone());
        let mut err = None;
        let grad = tensor_grad(
            |c| match psi_el_neohooke(c, g.clone(), k.clone()) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    Dual::from_f64(f64::NAN)
                }
            },
            ce,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(grad),
        }
    }

    pub fn psi_iso(&self, k: S) -> S {
        match (&self.set.psi_iso_net, &self.psi_iso_eff) {
            (Some(net), Some(eff)) => {
                let (v0, d0) = self.psi_iso_ref.clone().unwrap();
                let kt = k / self.strain_scale();
                let raw = net.forward_eff(eff, &[kt.clone()]);
                self.stress_scale() * self.strain_scale() * (raw - v0 - d0 * kt)
            }
            _ => psi_iso_quadratic(k, self.h_iso.clone()),
        }
    }

    /// Isotropic hardening stress kappa = d psi_iso / d k.
    pub fn kappa_of_k(&self, k: S) -> S {
        scalar_deriv(
            |kd| {
                let b = self.lift_dual::<1>();
                b.psi_iso(kd)
            },
            k,
        )
        .1
    }

    pub fn psi_kin(&self, ckin: &Tensor2<S>) -> Result<S> {
        match (&self.set.psi_kin_net, &self.psi_kin_eff) {
            (Some(net), Some(eff)) => {
                let (i1, i2) = invariants_kin_energy(ckin);
                let (v0, d1, d2) = self.psi_kin_ref.clone().unwrap();
                let s1 = (i1 - S::from_f64(3.0)) / self.strain_scale();
                let s2 = (i2 - S::from_f64(3.0)) / self.strain_scale();
                let raw = net.forward_eff(eff, &[s1.clone(), s2.clone()]);
                Ok(self.stress_scale()
                    * self.strain_scale()
                    * (raw - v0 - d1 * s1 - d2 * s2))
            }
            _ => psi_kin_neohooke(ckin, self.h_kin.clone()),
        }
    }

    /// Back-stress Mkin = 2 c_kin dPsi_kin/dc_kin.
    pub fn mandel_kin(&self, ckin: &Tensor2<S>) -> Result<Tensor2<S>> {
        let b = self.lift_dual::<9>();
        let mut err = None;
        let grad = tensor_grad(
            |c| match b.psi_kin(c) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    Dual::from_f64(f64::NAN)
                }
            },
            ckin,
        );
        if let Some(e) = err {
            return Err(e);
        }
        Ok(ckin.matmul(&grad).scale(S::from_f64(2.0)))
    }

    pub fn phi_iso(&self, kappa: S) -> S {
        match (&self.set.phi_iso_net, &self.phi_iso_eff) {
            (Some(net), Some(eff)) => {
                let v0 = self.phi_iso_ref.clone().unwrap();
                let kt = kappa / self.stress_scale();
                self.stress_scale() * (net.forward_eff(eff, &[kt]) - v0)
            }
            _ => phi_iso_voce(kappa, self.r_sat.clone(), self.gamma.clone()),
        }
    }

    pub fn d_phi_iso_dkappa(&self, kappa: S) -> S {
        scalar_deriv(
            |kd| {
                let b = self.lift_dual::<1>();
                b.phi_iso(kd)
            },
            kappa,
        )
        .1
    }

    /// Scalar kinematic dissipation potential where one exists (AF, BC,
    /// network); `None` for Ohno-Wang, which is rate-form only.
    pub fn phi_kin_value(
        &self,
        mkin: &Tensor2<S>,
        eta_v: Option<&Tensor2<S>>,
    ) -> Result<Option<S>> {
        match self.kin_flow {
            KinFlowKind::Af => Ok(Some(phi_kin_af(mkin, self.m_kin_inf.clone())?)),
            KinFlowKind::Bc => {
                let eta = eta_v.ok_or(Error::ZeroFlowDirection)?;
                Ok(Some(phi_kin_bc(
                    mkin,
                    eta,
                    self.m_kin_inf.clone(),
                    self.delta.clone(),
                )?))
            }
            KinFlowKind::Net => {
                let net = self.set.phi_kin_net.as_ref().unwrap();
                let eff = self.phi_kin_eff.as_ref().unwrap();
                let eta = eta_v.ok_or(Error::ZeroFlowDirection)?;
                let norm2 = self.stress_scale().powi(2);
                let i1 = mkin.ddot(mkin) / norm2.clone();
                let radial = mkin.ddot(eta);
                let i2 = radial.clone() * radial / norm2;
                let v0 = self.phi_kin_ref.clone().unwrap();
                Ok(Some(
                    self.stress_scale() * (net.forward_eff(eff, &[i1, i2]) - v0),
                ))
            }
            KinFlowKind::Ow => Ok(None),
        }
    }

    /// d phi_kin / d Mkin, the kinematic part of the flow rule. `nu` is the
    /// plastic flow direction and `fy_red` the current effective stress
    /// (both needed by OW and by the radial invariant).
    pub fn phi_kin_flow(
        &self,
        mkin: &Tensor2<S>,
        nu: &Tensor2<S>,
        fy_red: S,
    ) -> Result<Tensor2<S>> {
        match self.kin_flow {
            KinFlowKind::Ow => ow_flow(
                mkin,
                nu,
                fy_red,
                self.m_kin_inf.clone(),
                self.ow_m.clone(),
            ),
            _ => {
                let nu_norm = nu.norm();
                if nu_norm.value() <= 1e-300 {
                    return Err(Error::ZeroFlowDirection);
                }
                let eta = nu.scale(S::one() / nu_norm);
                let b = self.lift_dual::<9>();
                let eta_d = Tensor2(std::array::from_fn(|i| Dual::constant(eta.0[i].clone())));
                let mut err = None;
                let grad = tensor_grad(
                    |m| match b.phi_kin_value(m, Some(&eta_d)) {
                        Ok(Some(v)) => v,
                        Ok(None) => unreachable!(),
                        Err(e) => {
                            err = Some(e);
                            Dual::from_f64(f64::NAN)
                        }
                    },
                    mkin,
                );
                match err {
                    Some(e) => Err(e),
                    None => Ok(grad),
                }
            }
        }
    }

    /// Rebind every effective parameter as a dual-number constant so that
    /// nested derivatives (e.g. of a potential inside the residual) reuse
    /// the already-transformed parameters.
    pub fn lift_dual<const N: usize>(&self) -> Bound<'a, Dual<S, N>> {
        fn c<S: Scalar, const N: usize>(x: &S) -> Dual<S, N> {
            Dual::constant(x.clone())
        }
        fn cv<S: Scalar, const N: usize>(x: &Option<Vec<S>>) -> Option<Vec<Dual<S, N>>> {
            x.as_ref().map(|v| v.iter().map(c).collect())
        }
        Bound {
            set: self.set,
            g: c(&self.g),
            k_bulk: c(&self.k_bulk),
            y0: c(&self.y0),
            h_iso: c(&self.h_iso),
            h_kin: c(&self.h_kin),
            r_sat: c(&self.r_sat),
            gamma: c(&self.gamma),
            m_kin_inf: c(&self.m_kin_inf),
            ow_m: c(&self.ow_m),
            delta: c(&self.delta),
            kin_flow: self.kin_flow.clone(),
            psi_iso_eff: cv(&self.psi_iso_eff),
            psi_kin_eff: cv(&self.psi_kin_eff),
            phi_iso_eff: cv(&self.phi_iso_eff),
            phi_kin_eff: cv(&self.phi_kin_eff),
            psi_iso_ref: self.psi_iso_ref.as_ref().map(|(a, b)| (c(a), c(b))),
            psi_kin_ref: self
                .psi_kin_ref
                .as_ref()
                .map(|(a, b, d)| (c(a), c(b), c(d))),
            phi_iso_ref: self.phi_iso_ref.as_ref().map(c),
            phi_kin_ref: self.phi_kin_ref.as_ref().map(c),
        }
    }
}
