//! Experiment driver: tabulates the impossibility bounds, reproduces the
//! simulated and image-data robustness curves at desk scale, and runs the
//! verification suites.
//!
//! Exit codes: 0 success, 1 experiment or invariant failure, 2 usage/IO
//! error.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{parse_q, ConfigMap};
use nflb_core::blowup::blowup_report_rows;
use nflb_core::bounds::{
    basic_nfl_bound, bound_report, toy_adv_acc, toy_mutual_information, toy_std_acc,
};
use nflb_core::classifiers::LinearClassifier;
use nflb_core::drobust::dr_error_curve;
use nflb_core::experiments::{
    blowup_case_matrix, run_image_sweep, run_simulate, toy_labeled_sampler, verify_suites,
    SUITE_NAMES,
};
use nflb_core::idx::{validate_manifest, ImageDataset};
use nflb_core::scalar::LqExponent;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nflb",
    about = "Impossibility bounds for adversarial robustness: tabulation, simulation, verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the critical tolerance, accuracy-decay curve, and distance
    /// bound for one configuration.
    Bounds(BoundsArgs),
    /// Closed-form analysis of the two-class toy problem.
    Toy(ToyArgs),
    /// Simulated-data experiment: train the perceptron, sweep the attack,
    /// emit the robustness-curve CSV.
    Simulate(SimulateArgs),
    /// Image-data experiment on user-supplied IDX files (same CSV schema).
    Mnist(MnistArgs),
    /// Exact verification of the blowup lemma across the case matrix;
    /// emits the violation-report CSV.
    Blowup(BlowupArgs),
    /// Distributional-robustness curve for a linear classifier.
    Drobust(DrobustArgs),
    /// Run the invariant suites and report pass/fail per suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Standard (clean) class-conditional error in (0, 1].
    #[arg(long)]
    err: f64,
    /// T2 noise scale.
    #[arg(long)]
    sigma: f64,
    /// Ambient dimension (with --q selects the flat-space forms).
    #[arg(long)]
    p: Option<usize>,
    /// Threat-model exponent: a number in [1, inf) or "inf".
    #[arg(long)]
    q: Option<String>,
    /// Number of grid points for the printed curve.
    #[arg(long, default_value_t = 20)]
    grid_steps: usize,
    /// Upper end of the curve grid (default: four times the critical
    /// tolerance).
    #[arg(long)]
    eps_max: Option<f64>,
}

#[derive(Args)]
struct ToyArgs {
    /// Total feature count (one label-copy feature plus p-1 noisy ones).
    #[arg(long, default_value_t = 1001)]
    p: usize,
    /// Feature scale; defaults to the value giving standard accuracy
    /// 1 - delta.
    #[arg(long)]
    eta: Option<f64>,
    /// Accuracy slack used when eta is derived.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// Flat key = value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    eps_min: Option<f64>,
    #[arg(long)]
    eps_max: Option<f64>,
    #[arg(long)]
    eps_steps: Option<usize>,
    /// Threat exponent ("inf" or a number >= 1).
    #[arg(long)]
    q: Option<String>,
    /// Curve class: -1/+1 (toy labels) or their displayed forms 0/1.
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    attack_steps: Option<usize>,
    #[arg(long)]
    attack_step_fraction: Option<f64>,
    #[arg(long)]
    attack_restarts: Option<usize>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct MnistArgs {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// Optional "filename<TAB>byte_size" manifest validated against the
    /// files' directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Cap on training samples (0 = all).
    #[arg(long)]
    train_limit: Option<usize>,
    /// Cap on attacked test samples (0 = all).
    #[arg(long)]
    test_limit: Option<usize>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct BlowupArgs {
    /// Grid points per case.
    #[arg(long, default_value_t = 50)]
    grid_points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DrobustArgs {
    /// Classifier family; only exact linear margins are accepted.
    #[arg(long, default_value = "linear")]
    classifier: String,
    /// Number of samples the empirical instance is built from.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run a single suite by name.
    #[arg(long)]
    suite: Option<String>,
    /// Fault injection: multiply the noise scale fed to the dominance
    /// bounds (0.5 must make the suite fail).
    #[arg(long, default_value_t = 1.0)]
    sigma_scale: f64,
}

// Exit-code conventions live here so every failure path is explicit.
enum Outcome {
    Ok,
    ExperimentFailure(String),
    UsageOrIo(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Bounds(a) => cmd_bounds(a),
        Command::Toy(a) => cmd_toy(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Mnist(a) => cmd_mnist(a),
        Command::Blowup(a) => cmd_blowup(a),
        Command::Drobust(a) => cmd_drobust(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Outcome::Ok => ExitCode::SUCCESS,
        Outcome::ExperimentFailure(msg) => {
            eprintln!("nflb: {msg}");
            ExitCode::from(1)
        }
        Outcome::UsageOrIo(msg) => {
            eprintln!("nflb: {msg}");
            ExitCode::from(2)
        }
    }
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn merged_config(overrides: &OverrideArgs) -> Result<ConfigMap, String> {
    let mut map = match &overrides.config {
        Some(path) => ConfigMap::load(path).map_err(|e| e.to_string())?,
        None => ConfigMap::default(),
    };
    macro_rules! put {
        ($key:literal, $field:expr) => {
            if let Some(v) = &$field {
                map.set($key, v.to_string());
            }
        };
    }
    put!("seed", overrides.seed);
    put!("p", overrides.p);
    put!("eta", overrides.eta);
    put!("sigma", overrides.sigma);
    put!("n_train", overrides.n_train);
    put!("n_test", overrides.n_test);
    put!("eps_min", overrides.eps_min);
    put!("eps_max", overrides.eps_max);
    put!("eps_steps", overrides.eps_steps);
    put!("q", overrides.q);
    put!("class", overrides.class);
    put!("epochs", overrides.epochs);
    put!("learning_rate", overrides.learning_rate);
    put!("batch_size", overrides.batch_size);
    put!("hidden", overrides.hidden);
    put!("attack_steps", overrides.attack_steps);
    put!("attack_step_fraction", overrides.attack_step_fraction);
    put!("attack_restarts", overrides.attack_restarts);
    Ok(map)
}

const CURVE_HEADER: &str = "epsilon,n,acc_hat,ci_lo,ci_hi,bound,err_std,eps_crit";

fn curve_csv(curve: &nflb_core::attacks::RobustnessCurve) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for pt in &curve.points {
        s.push_str(&format!(
            "{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            pt.eps, pt.n, pt.acc_hat, pt.ci.lo, pt.ci.hi, pt.bound, curve.err_std, curve.eps_crit
        ));
    }
    s
}

fn cmd_bounds(a: BoundsArgs) -> Outcome {
    let q = match a.q.as_deref().map(parse_q).transpose() {
        Ok(q) => q,
        Err(e) => return Outcome::UsageOrIo(e),
    };
    let (p, q) = match (a.p, q) {
        (Some(p), Some(q)) => (Some(p), Some(q)),
        (None, None) => (None, None),
        (Some(p), None) => (Some(p), Some(LqExponent::Infinity)),
        (None, Some(_)) => {
            return Outcome::UsageOrIo("--q needs --p to select the flat-space forms".into())
        }
    };
    let eps_crit = match (p, q) {
        (Some(p), Some(q)) => nflb_core::bounds::critical_epsilon_q(a.err, a.sigma, p, q),
        _ => nflb_core::bounds::critical_epsilon(a.err, a.sigma),
    };
    let eps_crit = match eps_crit {
        Ok(v) => v,
        Err(e) => return Outcome::UsageOrIo(format!("{e}")),
    };
    let hi = a.eps_max.unwrap_or(4.0 * eps_crit.max(1e-12));
    let steps = a.grid_steps.max(2);
    let grid: Vec<f64> = (0..steps)
        .map(|i| hi * i as f64 / (steps - 1) as f64)
        .collect();
    match bound_report(a.err, a.sigma, p, q, &grid) {
        Ok(report) => {
            println!("eps_crit {:.6}", report.eps_crit);
            println!("dist_bound {:.6}", report.dist_bound);
            println!("epsilon,acc_bound");
            for (eps, b) in &report.curve {
                println!("{eps:.6},{b:.6}");
            }
            Outcome::Ok
        }
        Err(e) => Outcome::UsageOrIo(format!("{e}")),
    }
}

fn cmd_toy(a: ToyArgs) -> Outcome {
    if a.p < 2 {
        return Outcome::UsageOrIo("p must be at least 2".into());
    }
    let eta = a
        .eta
        .unwrap_or_else(|| (2.0 * (1.0 / a.delta).ln() / (a.p as f64 - 1.0)).sqrt());
    let std = match toy_std_acc(a.p, eta) {
        Ok(v) => v,
        Err(e) => return Outcome::UsageOrIo(format!("{e}")),
    };
    println!("p {} eta {:.6}", a.p, eta);
    println!(
        "std_acc exact {:.6} lower_bound {:.6}",
        std.exact, std.bound
    );
    println!("epsilon,adv_acc_exact,adv_acc_upper_bound");
    for mult in [1.0, 1.25, 1.5, 2.0, 3.0, 4.0] {
        let eps = mult * eta;
        match toy_adv_acc(a.p, eta, eps) {
            Ok(v) => println!("{:.6},{:.6},{:.6}", eps, v.exact, v.bound),
            Err(e) => return Outcome::UsageOrIo(format!("{e}")),
        }
    }
    println!(
        "mutual_information_per_feature_nats {:.6} (<= eta^2 = {:.6})",
        toy_mutual_information(eta),
        eta * eta
    );
    match basic_nfl_bound(a.delta) {
        Ok(b) => println!(
            "basic_nfl_adv_acc_bound {:.6} vacuous {}",
            b.value, b.vacuous
        ),
        Err(e) => return Outcome::UsageOrIo(format!("{e}")),
    }
    Outcome::Ok
}

fn cmd_simulate(a: SimulateArgs) -> Outcome {
    let map = match merged_config(&a.overrides) {
        Ok(m) => m,
        Err(e) => return Outcome::UsageOrIo(e),
    };
    let cfg = match config::simulate_config(&map) {
        Ok(c) => c,
        Err(e) => return Outcome::UsageOrIo(e.to_string()),
    };
    match run_simulate(&cfg) {
        Ok(out) => {
            eprintln!(
                "class {} clean_acc {:.6} n {} eps_crit {:.6}",
                out.class_display, out.clean_acc, out.n_class, out.curve.eps_crit
            );
            match write_output(&a.overrides.out, &curve_csv(&out.curve)) {
                Ok(()) => Outcome::Ok,
                Err(e) => Outcome::UsageOrIo(e),
            }
        }
        Err(e) => Outcome::ExperimentFailure(format!("{e}")),
    }
}

fn cmd_mnist(a: MnistArgs) -> Outcome {
    if let Some(manifest) = &a.manifest {
        let text = match std::fs::read_to_string(manifest) {
            Ok(t) => t,
            Err(e) => return Outcome::UsageOrIo(format!("{}: {e}", manifest.display())),
        };
        let dir = manifest
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        if let Err(e) = validate_manifest(&text, &dir) {
            return Outcome::UsageOrIo(format!("{e}"));
        }
    }
    let train = match ImageDataset::load(&a.train_images, &a.train_labels, "train") {
        Ok(d) => d,
        Err(e) => return Outcome::UsageOrIo(format!("{e}")),
    };
    let test = match ImageDataset::load(&a.test_images, &a.test_labels, "test") {
        Ok(d) => d,
        Err(e) => return Outcome::UsageOrIo(format!("{e}")),
    };
    let map = match merged_config(&a.overrides) {
        Ok(m) => m,
        Err(e) => return Outcome::UsageOrIo(e),
    };
    let mut cfg = match config::image_sweep_config(&map) {
        Ok(c) => c,
        Err(e) => return Outcome::UsageOrIo(e.to_string()),
    };
    if let Some(v) = a.train_limit {
        cfg.train_limit = v;
    }
    if let Some(v) = a.test_limit {
        cfg.test_limit = v;
    }
    match run_image_sweep(&train, &test, &cfg) {
        Ok(out) => {
            eprintln!(
                "clean_acc {:.6} attacked {} eps_crit {:.6}",
                out.clean_acc, out.n_attacked, out.curve.eps_crit
            );
            match write_output(&a.overrides.out, &curve_csv(&out.curve)) {
                Ok(()) => Outcome::Ok,
                Err(e) => Outcome::UsageOrIo(e),
            }
        }
        Err(e) => Outcome::ExperimentFailure(format!("{e}")),
    }
}

fn cmd_blowup(a: BlowupArgs) -> Outcome {
    let cases = match blowup_case_matrix() {
        Ok(c) => c,
        Err(e) => return Outcome::UsageOrIo(format!("{e}")),
    };
    let mut csv = String::from("case_id,epsilon,exact_mass,bound,slack\n");
    let mut violations = 0usize;
    for case in &cases {
        let grid = case.default_grid(a.grid_points);
        match blowup_report_rows(case, &grid) {
            Ok(rows) => {
                for r in rows {
                    if r.slack < -1e-12 {
                        violations += 1;
                    }
                    csv.push_str(&format!(
                        "{},{:.6},{:.6},{:.6},{:.3e}\n",
                        case.id, r.eps, r.exact, r.bound, r.slack
                    ));
                }
            }
            Err(e) => return Outcome::UsageOrIo(format!("{e}")),
        }
    }
    if let Err(e) = write_output(&a.out, &csv) {
        return Outcome::UsageOrIo(e);
    }
    if violations > 0 {
        return Outcome::ExperimentFailure(format!(
            "{violations} blowup-lemma violations (see report)"
        ));
    }
    eprintln!("{} cases, no violations", cases.len());
    Outcome::Ok
}

fn cmd_drobust(a: DrobustArgs) -> Outcome {
    if a.classifier != "linear" {
        return Outcome::UsageOrIo(
            "only linear classifiers are supported: attack-based distances are censored, \
             the transport solver needs exact ones"
                .into(),
        );
    }
    let map = match merged_config(&a.overrides) {
        Ok(m) => m,
        Err(e) => return Outcome::UsageOrIo(e),
    };
    let cfg = match config::simulate_config(&map) {
        Ok(c) => c,
        Err(e) => return Outcome::UsageOrIo(e.to_string()),
    };
    let n = a.n.unwrap_or(10_000);
    let sampler = toy_labeled_sampler(cfg.p, cfg.eta);
    let h = LinearClassifier::toy_averaging(cfg.p);
    let class_idx = usize::from(cfg.class_sign > 0);
    let err_exact = 1.0 - match toy_std_acc(cfg.p, cfg.eta) {
        Ok(t) => t.exact,
        Err(e) => return Outcome::UsageOrIo(format!("{e}")),
    };
    let eps_crit =
        match nflb_core::bounds::critical_epsilon_q(err_exact, cfg.sigma, cfg.p, cfg.q) {
            Ok(v) => v,
            Err(e) => return Outcome::UsageOrIo(format!("{e}")),
        };
    let hi = cfg.eps_max.unwrap_or(4.0 * eps_crit);
    let steps = cfg.eps_steps.max(2);
    let grid: Vec<f64> = (0..steps)
        .map(|i| cfg.eps_min + (hi - cfg.eps_min) * i as f64 / (steps - 1) as f64)
        .collect();
    match dr_error_curve(&h, &sampler, class_idx, cfg.q, &grid, n, cfg.sigma, cfg.seed) {
        Ok(curve) => {
            let mut csv = String::from("eps,err_adv,err_dr,bound,lambda_star\n");
            for pt in &curve {
                csv.push_str(&format!(
                    "{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    pt.eps, pt.err_adv, pt.err_dr, pt.bound, pt.lambda_star
                ));
            }
            match write_output(&a.overrides.out, &csv) {
                Ok(()) => Outcome::Ok,
                Err(e) => Outcome::UsageOrIo(e),
            }
        }
        Err(e) => Outcome::ExperimentFailure(format!("{e}")),
    }
}

fn cmd_verify(a: VerifyArgs) -> Outcome {
    if let Some(suite) = &a.suite {
        if !SUITE_NAMES.contains(&suite.as_str()) {
            return Outcome::UsageOrIo(format!(
                "unknown suite {suite}; available: {}",
                SUITE_NAMES.join(", ")
            ));
        }
    }
    let results = verify_suites(a.suite.as_deref(), a.sigma_scale);
    let mut all_pass = true;
    for r in &results {
        println!(
            "suite {}: {} ({})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
        all_pass &= r.passed;
    }
    if all_pass {
        Outcome::Ok
    } else {
        Outcome::ExperimentFailure("one or more suites failed".into())
    }
}
