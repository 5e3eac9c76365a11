//! Python bindings: a thin wrapper around the model, the uniaxial driver
//! and the training loop.

use fsplast::constitutive::SolverSettings;
use fsplast::driver::{run_path, run_program, LoadingProgram};
use fsplast::potentials::{Framework, PhenomenologicalParams, PotentialSet};
use fsplast::training::{self, TrainConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: fsplast::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_params(d: std::collections::HashMap<String, f64>) -> PyResult<PhenomenologicalParams> {
    let get = |k: &str| {
        d.get(k)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("missing parameter '{k}'")))
    };
    Ok(PhenomenologicalParams {
        g: get("g")?,
        k_bulk: get("k_bulk")?,
        y0: get("y0")?,
        h_iso: get("h_iso")?,
        h_kin: get("h_kin")?,
        r_sat: get("r_sat")?,
        gamma: get("gamma")?,
        m_kin_inf: get("m_kin_inf")?,
        ow_m: get("ow_m")?,
        delta: get("delta")?,
    })
}

fn parse_program(
    amplitude: f64,
    cycles: usize,
    steps_per_branch: usize,
    max_increment: f64,
) -> LoadingProgram {
    LoadingProgram {
        amplitude,
        cycles,
        steps_per_branch,
        max_increment,
    }
}

/// A potential set: elastic law plus the four hardening potentials, either
/// phenomenological or network-based.
#[pyclass]
#[derive(Clone)]
struct Model {
    set: PotentialSet,
    solver: SolverSettings,
}

#[pymethods]
impl Model {
    /// Build a phenomenological model (framework "AF", "OW" or "BC").
    #[staticmethod]
    fn phenomenological(
        framework: &str,
        params: std::collections::HashMap<String, f64>,
    ) -> PyResult<Self> {
        let fw = Framework::parse(framework).map_err(err)?;
        let set = PotentialSet::phenomenological(fw, parse_params(params)?).map_err(err)?;
        Ok(Model {
            set,
            solver: SolverSettings::default(),
        })
    }

    /// Build a network-based model (framework "2NN" or "4NN").
    #[staticmethod]
    #[pyo3(signature = (framework, params, seed=0, hidden=vec![8, 8], init_std=0.4))]
    fn with_networks(
        framework: &str,
        params: std::collections::HashMap<String, f64>,
        seed: u64,
        hidden: Vec<usize>,
        init_std: f64,
    ) -> PyResult<Self> {
        let fw = Framework::parse(framework).map_err(err)?;
        let set = PotentialSet::with_networks(fw, parse_params(params)?, seed, &hidden, init_std)
            .map_err(err)?;
        Ok(Model {
            set,
            solver: SolverSettings::default(),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let set: PotentialSet =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Model {
            set,
            solver: SolverSettings::default(),
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.set).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn framework(&self) -> String {
        self.set.framework.name().to_string()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.set.n_flat()
    }

    #[getter]
    fn n_trainable(&self) -> usize {
        self.set.trainable_mask().iter().filter(|t| **t).count()
    }

    fn get_param(&self, name: &str) -> f64 {
        self.set.phenom_value(name)
    }

    fn set_param(&mut self, name: &str, value: f64) {
        self.set.set_phenom_value(name, value);
    }

    fn raw_parameters(&self) -> Vec<f64> {
        self.set.flat_raw()
    }

    fn set_raw_parameters(&mut self, raw: Vec<f64>) {
        self.set.set_flat_raw(&raw);
    }

    /// Simulate a cyclic program; returns (stretches, axial stresses in GPa).
    #[pyo3(signature = (amplitude, cycles, steps_per_branch, max_increment=0.02))]
    fn simulate(
        &self,
        amplitude: f64,
        cycles: usize,
        steps_per_branch: usize,
        max_increment: f64,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let program = parse_program(amplitude, cycles, steps_per_branch, max_increment);
        let b = self.set.bind_f64();
        let sim = run_program(&b, &program, &self.solver).map_err(err)?;
        Ok((sim.lambda, sim.sigma11))
    }

    /// Simulate an explicit stretch path (must start at 1.0).
    fn simulate_path(&self, path: Vec<f64>) -> PyResult<Vec<f64>> {
        let b = self.set.bind_f64();
        let sim = run_path(&b, &path, &self.solver).map_err(err)?;
        Ok(sim.sigma11)
    }

    /// Fit the trainable parameters to (path, targets); mutates the model
    /// and returns the loss history.
    #[pyo3(signature = (path, targets, epochs=200, lr=0.02))]
    fn fit(
        &mut self,
        path: Vec<f64>,
        targets: Vec<f64>,
        epochs: usize,
        lr: f64,
    ) -> PyResult<Vec<f64>> {
        let tc = TrainConfig {
            epochs,
            lr,
            ..TrainConfig::default()
        };
        let report =
            training::train(&self.set, &path, &targets, &self.solver, &tc).map_err(err)?;
        self.set.set_flat_raw(&report.best_raw);
        Ok(report.history)
    }

    /// Loss and gradient with respect to the raw parameter vector.
    fn loss_and_grad(&self, path: Vec<f64>, targets: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        training::loss_and_grad(&self.set, &self.set.flat_raw(), &path, &targets, &self.solver)
            .map_err(err)
    }
}

/// Stretch path for a symmetric cyclic program.
#[pyfunction]
#[pyo3(signature = (amplitude, cycles, steps_per_branch, max_increment=0.02))]
fn lambda_path(
    amplitude: f64,
    cycles: usize,
    steps_per_branch: usize,
    max_increment: f64,
) -> PyResult<Vec<f64>> {
    parse_program(amplitude, cycles, steps_per_branch, max_increment)
        .lambda_path()
        .map_err(err)
}

#[pyfunction]
fn mse(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    training::mse_loss(&pred, &target).map_err(err)
}

#[pyfunction]
fn nrmse(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    training::nrmse(&pred, &target).map_err(err)
}

#[pymodule]
fn fsplast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(lambda_path, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    Ok(())
}
