//! Command-line front end: dataset generation, simulation, training,
//! evaluation and model checking.

use clap::{Parser, Subcommand};
use fsplast::config::ExperimentConfig;
use fsplast::constitutive::PlasticState;
use fsplast::dataio::{
    generate_synthetic, read_manifest, read_series, write_manifest, write_series,
    DatasetManifest, Series, SCHEMA_VERSION,
};
use fsplast::driver::run_path;
use fsplast::potentials::PotentialSet;
use fsplast::training::{
    evaluate_extrapolation, multi_seed, nrmse, summarize, train, SeedOutcome,
};
use fsplast::{Error, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "fsplast", version, about = "finite-strain elastoplasticity with trainable hardening potentials")]
struct Cli {
    /// worker threads for multi-seed training (0 = all cores)
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the configured program and write a synthetic dataset with a
    /// reproduction manifest
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured loading program and write the full response series
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// simulate a previously trained model instead of the configured one
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fit the configured model to a dataset over one or more seeds
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model against a dataset
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// number of leading points treated as the training segment
        #[arg(long)]
        train_points: Option<usize>,
    },
    /// Print summary statistics of a dataset
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Verify model invariants (constraints, dissipation, consistency)
    Check {
        #[arg(long)]
        config: PathBuf,
        /// check a trained model instead of the configured initialization
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Re-create a dataset from its manifest and compare byte for byte
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn load_model(path: &Path) -> Result<PotentialSet> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn save_model(path: &Path, set: &PotentialSet) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(set)? + "\n")?;
    Ok(())
}

fn cmd_generate(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config)?;
    let set = cfg.build_set(cfg.model.net.seed)?;
    std::fs::create_dir_all(out)?;
    let series = generate_synthetic(&set, &cfg.program, cfg.noise_std, cfg.noise_seed)?;
    write_series(&out.join("series.csv"), &series)?;
    let manifest = DatasetManifest {
        schema: SCHEMA_VERSION,
        model: set,
        program: cfg.program,
        noise_std: cfg.noise_std,
        noise_seed: cfg.noise_seed,
        series_file: "series.csv".into(),
    };
    write_manifest(&out.join("manifest.json"), &manifest)?;
    cfg.write_snapshot(&out.join("config.toml"))?;
    println!(
        "wrote {} points to {}",
        series.rows.len(),
        out.join("series.csv").display()
    );
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path, model: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config)?;
    let set = match model {
        Some(p) => load_model(p)?,
        None => cfg.build_set(cfg.model.net.seed)?,
    };
    let b = set.bind_f64();
    let path = cfg.program.lambda_path()?;
    let sim = run_path(&b, &path, &cfg.solver)?;
    std::fs::create_dir_all(out)?;

    let mut series = Series::from_columns(&sim.lambda, &sim.sigma11)?;
    series.rows[0].k = Some(0.0);
    series.rows[0].delta_lambda = Some(0.0);
    series.rows[0].fy = Some(0.0);
    let mut idx = 1;
    for r in sim.records.iter().filter(|r| r.on_program_point) {
        let row = &mut series.rows[idx];
        let st = PlasticState::<f64>::unpack(&r.s_prev, set.n_back);
        let k = if r.plastic { r.z[r.z.len() - 1] } else { st.k };
        row.k = Some(k);
        row.delta_lambda = Some(if r.plastic { r.z[1] } else { 0.0 });
        row.fy = Some(r.phi + b.y0 + b.phi_iso(b.kappa_of_k(k)));
        idx += 1;
    }
    write_series(&out.join("series.csv"), &series)?;
    cfg.write_snapshot(&out.join("config.toml"))?;

    #[derive(Serialize)]
    struct SimStats {
        points: usize,
        plastic_steps: usize,
        total_dissipation: f64,
        min_dissipation_increment: f64,
        peak_stress: f64,
    }
    let stats = SimStats {
        points: series.rows.len(),
        plastic_steps: sim.records.iter().filter(|r| r.plastic).count(),
        total_dissipation: sim.records.iter().map(|r| r.dissipation.total()).sum(),
        min_dissipation_increment: sim
            .records
            .iter()
            .map(|r| r.dissipation.total())
            .fold(f64::MAX, f64::min),
        peak_stress: sim.sigma11.iter().cloned().fold(0.0, |a, b| a.max(b.abs())),
    };
    std::fs::write(
        out.join("stats.json"),
        serde_json::to_string_pretty(&stats)? + "\n",
    )?;
    println!(
        "{} points, {} plastic steps, peak |sigma11| {:.4} GPa",
        stats.points, stats.plastic_steps, stats.peak_stress
    );
    Ok(())
}

fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_train(config: &Path, data: &Path, out: &Path, jobs: usize) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config)?;
    let series = read_series(data)?;
    let lambda = series.lambdas();
    let sigma = series.stresses();
    let n = lambda.len();
    let n_train = ((n as f64 * cfg.train.train_fraction).round() as usize).clamp(2, n);
    let path = &lambda[..n_train];
    let targets = &sigma[..n_train];
    let tc = cfg.train_config();
    std::fs::create_dir_all(out)?;
    cfg.write_snapshot(&out.join("config.toml"))?;

    let run_seed = |seed: u64| -> Result<SeedOutcome> {
        let set = cfg.build_set(seed)?;
        let report = train(&set, path, targets, &cfg.solver, &tc)?;
        Ok(SeedOutcome { seed, report })
    };
    let outcomes: Vec<SeedOutcome> = if jobs == 1 || cfg.train.seeds.len() == 1 {
        multi_seed(
            |seed| cfg.build_set(seed),
            &cfg.train.seeds,
            path,
            targets,
            &cfg.solver,
            &tc,
        )?
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(if jobs == 0 { 0 } else { jobs })
            .build()
            .map_err(|e| Error::Other(e.to_string()))?;
        pool.install(|| {
            cfg.train
                .seeds
                .par_iter()
                .map(|&s| run_seed(s))
                .collect::<Result<Vec<_>>>()
        })?
    };

    let stats = summarize(&outcomes);
    let mut best: Option<&SeedOutcome> = None;
    println!("seed   best_mse      final_mse     best_epoch  failed");
    for o in &outcomes {
        println!(
            "{:<6} {:<13.6e} {:<13.6e} {:<11} {}",
            o.seed, o.report.best_loss, o.report.final_loss, o.report.best_epoch,
            o.report.failed_epochs
        );
        let dir = out.join(format!("seed_{}", o.seed));
        std::fs::create_dir_all(&dir)?;
        write_loss_history(&dir.join("loss_history.csv"), &o.report.history)?;
        let mut set = cfg.build_set(o.seed)?;
        set.set_flat_raw(&o.report.best_raw);
        save_model(&dir.join("model.json"), &set)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&o.report)? + "\n",
        )?;
        if best.map_or(true, |b| o.report.best_loss < b.report.best_loss) {
            best = Some(o);
        }
    }
    let best = best.ok_or_else(|| Error::Other("no seeds trained".into()))?;
    let mut best_set = cfg.build_set(best.seed)?;
    best_set.set_flat_raw(&best.report.best_raw);
    save_model(&out.join("model.json"), &best_set)?;

    let holdout = if n_train < n {
        Some(evaluate_extrapolation(
            &best_set,
            &best_set.flat_raw(),
            &lambda,
            &sigma,
            n_train,
        )?)
    } else {
        None
    };

    #[derive(Serialize)]
    struct TrainStats {
        best_mse: f64,
        mean_mse: f64,
        std_mse: f64,
        best_seed: u64,
        n_train_points: usize,
        n_points: usize,
        nrmse_train: Option<f64>,
        nrmse_holdout: Option<f64>,
        per_seed: Vec<(u64, f64)>,
    }
    let b = best_set.bind_f64();
    let sim_train = run_path(&b, path, &cfg.solver)?;
    let nrmse_train = nrmse(&sim_train.sigma11, targets).ok();
    let stats_out = TrainStats {
        best_mse: stats.best,
        mean_mse: stats.mean,
        std_mse: stats.std,
        best_seed: best.seed,
        n_train_points: n_train,
        n_points: n,
        nrmse_train,
        nrmse_holdout: holdout.map(|h| h.nrmse_holdout),
        per_seed: outcomes
            .iter()
            .map(|o| (o.seed, o.report.best_loss))
            .collect(),
    };
    std::fs::write(
        out.join("stats.json"),
        serde_json::to_string_pretty(&stats_out)? + "\n",
    )?;
    println!("---");
    println!(
        "best {:.6e} (seed {})  mean {:.6e}  std {:.6e}",
        stats.best, best.seed, stats.mean, stats.std
    );
    if let Some(t) = nrmse_train {
        println!("nrmse train {:.4}", t);
    }
    if let Some(h) = holdout {
        println!("nrmse holdout {:.4}", h.nrmse_holdout);
    }
    Ok(())
}

fn cmd_evaluate(model: &Path, data: &Path, train_points: Option<usize>) -> Result<()> {
    let set = load_model(model)?;
    let series = read_series(data)?;
    let lambda = series.lambdas();
    let sigma = series.stresses();
    let n_train = train_points.unwrap_or(lambda.len() - 1).min(lambda.len() - 1);
    let rep = evaluate_extrapolation(&set, &set.flat_raw(), &lambda, &sigma, n_train)?;
    println!("nrmse train   {:.6}", rep.nrmse_train);
    println!("nrmse holdout {:.6}", rep.nrmse_holdout);
    Ok(())
}

fn cmd_stats(data: &Path) -> Result<()> {
    let series = read_series(data)?;
    let lambda = series.lambdas();
    let sigma = series.stresses();
    let (lmin, lmax) = lambda
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let (smin, smax) = sigma
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let mean_abs = sigma.iter().map(|s| s.abs()).sum::<f64>() / sigma.len() as f64;
    println!("points          {}", series.rows.len());
    println!("lambda range    [{lmin}, {lmax}]");
    println!("sigma11 range   [{smin}, {smax}] GPa");
    println!("mean |sigma11|  {mean_abs} GPa");
    Ok(())
}

fn cmd_check(config: &Path, model: Option<&Path>) -> Result<bool> {
    let cfg = ExperimentConfig::from_path(config)?;
    let set = match model {
        Some(p) => load_model(p)?,
        None => cfg.build_set(cfg.model.net.seed)?,
    };
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "pass" } else { "FAIL" });
        all_ok &= ok;
    };

    for (name, net) in [
        ("psi_iso network constraints", &set.psi_iso_net),
        ("psi_kin network constraints", &set.psi_kin_net),
        ("phi_iso network constraints", &set.phi_iso_net),
        ("phi_kin network constraints", &set.phi_kin_net),
    ] {
        if let Some(n) = net {
            report(name, n.constraints_hold());
        }
    }

    let b = set.bind_f64();
    match run_path(&b, &cfg.program.lambda_path()?, &cfg.solver) {
        Ok(sim) => {
            report(
                "dissipation nonnegative",
                sim.records.iter().all(|r| {
                    r.dissipation.plastic >= -1e-10
                        && r.dissipation.kinematic >= -1e-10
                        && r.dissipation.isotropic >= -1e-10
                }),
            );
            report(
                "yield consistency",
                sim.records
                    .iter()
                    .all(|r| if r.plastic { r.phi.abs() < 1e-7 } else { r.phi <= 1e-9 }),
            );
            report(
                "multiplier nonnegative",
                sim.records.iter().all(|r| !r.plastic || r.z[1] >= 0.0),
            );
            report(
                "plastic incompressibility",
                (PlasticState::<f64>::unpack(
                    &sim.records.last().unwrap().s_prev,
                    set.n_back,
                )
                .fp
                .det()
                    - 1.0)
                    .abs()
                    < 1e-8,
            );
            report(
                "finite stresses",
                sim.sigma11.iter().all(|s| s.is_finite()),
            );
        }
        Err(e) => {
            println!("FAIL simulation ({e})");
            all_ok = false;
        }
    }
    Ok(all_ok)
}

fn cmd_verify(manifest: &Path) -> Result<bool> {
    let m = read_manifest(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let series_path = dir.join(&m.series_file);
    let on_disk = std::fs::read(&series_path)?;
    let regen = generate_synthetic(&m.model, &m.program, m.noise_std, m.noise_seed)?;
    let tmp = tempdir_bytes(&regen)?;
    let ok = on_disk == tmp;
    println!(
        "{} {} ({} bytes)",
        if ok { "pass" } else { "FAIL" },
        series_path.display(),
        on_disk.len()
    );
    Ok(ok)
}

fn tempdir_bytes(series: &Series) -> Result<Vec<u8>> {
    let dir = std::env::temp_dir();
    let path = dir.join(format!("fsplast-verify-{}.csv", std::process::id()));
    write_series(&path, series)?;
    let bytes = std::fs::read(&path)?;
    let _ = std::fs::remove_file(&path);
    Ok(bytes)
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Generate { config, out } => cmd_generate(config, out).map(|_| true),
        Cmd::Simulate { config, out, model } => {
            cmd_simulate(config, out, model.as_deref()).map(|_| true)
        }
        Cmd::Train { config, data, out } => {
            cmd_train(config, data, out, cli.jobs).map(|_| true)
        }
        Cmd::Evaluate {
            model,
            data,
            train_points,
        } => cmd_evaluate(model, data, *train_points).map(|_| true),
        Cmd::Stats { data } => cmd_stats(data).map(|_| true),
        Cmd::Check { config, model } => cmd_check(config, model.as_deref()),
        Cmd::Verify { manifest } => cmd_verify(manifest),
    };
    match outcome {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
