//! Command implementations.
//!
//! Primary output (trajectories, JSON, tables) goes to `--out` or stdout;
//! diagnostics go to stderr. File writes are atomic: content lands in a
//! sibling temp file which is renamed over the target.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use qpflow_core::oracle::{self, DEFAULT_BUDGET};
use qpflow_core::parser::parse_system;
use qpflow_core::{
    lv_taylor_coefficients, qp_taylor_coefficients, taylor_solve, QpSystem, Trajectory,
};

use crate::rk::rk_reference;
use crate::{
    CanonicalizeArgs, Cli, CliError, CoeffsArgs, Command, OutputFormat, SolveArgs, TensorArgs,
    VerifyArgs,
};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Canonicalize(args) => cmd_canonicalize(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Tensor(args) => cmd_tensor(&args),
        Command::Coeffs(args) => cmd_coeffs(&args),
    }
}

fn load_system(path: &Path) -> Result<QpSystem, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_system(&text)?)
}

fn check_order(order: usize) -> Result<(), CliError> {
    if !(4..=60).contains(&order) {
        return Err(CliError::Input(format!(
            "order must lie in 4..=60, got {order}"
        )));
    }
    Ok(())
}

fn check_positive(value: f64, what: &str) -> Result<(), CliError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(CliError::Input(format!(
            "{what} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

fn atomic_write(path: &Path, content: &str) -> Result<(), CliError> {
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    let io_err =
        |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut file = fs::File::create(&tmp).map_err(io_err)?;
    file.write_all(content.as_bytes()).map_err(io_err)?;
    file.sync_all().map_err(io_err)?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err)
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => atomic_write(path, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn enumeration_budget() -> Result<u64, CliError> {
    match std::env::var("QPFLOW_BUDGET") {
        Ok(raw) => raw.parse().map_err(|_| {
            CliError::Input(format!("QPFLOW_BUDGET must be a positive integer, got '{raw}'"))
        }),
        Err(_) => Ok(DEFAULT_BUDGET),
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    // Matrix products leave -0.0 entries behind; emit them as plain zeros.
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|&v| if v == 0.0 { 0.0 } else { v }).collect())
        .collect()
}

#[derive(Serialize)]
struct TrajectoryJson {
    method: String,
    order: usize,
    tol: f64,
    accepted: usize,
    rejected: usize,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

fn trajectory_json(trajectory: &Trajectory) -> String {
    let meta = trajectory.meta();
    let raw = TrajectoryJson {
        method: meta.method.clone(),
        order: meta.order,
        tol: meta.tol,
        accepted: meta.accepted,
        rejected: meta.rejected,
        times: trajectory.times().to_vec(),
        states: trajectory
            .states()
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&raw).expect("plain data serializes");
    out.push('\n');
    out
}

pub fn cmd_solve(args: &SolveArgs) -> Result<(), CliError> {
    check_positive(args.t_end, "--t-end")?;
    check_positive(args.tol, "--tol")?;
    check_order(args.order)?;
    let sys = load_system(&args.system)?;
    let solution = taylor_solve(&sys, args.t_end, args.tol, args.order)?;
    let radius = solution.initial_radius_estimate()?;
    let meta = solution.trajectory().meta();
    eprintln!("initial_radius_estimate: {radius:.6e}");
    eprintln!("accepted_steps: {}", meta.accepted);
    eprintln!("rejected_steps: {}", meta.rejected);
    let content = match args.format {
        OutputFormat::Csv => solution.trajectory().to_csv(),
        OutputFormat::Json => trajectory_json(solution.trajectory()),
    };
    write_output(&args.out, &content)
}

#[derive(Serialize)]
struct LvJson {
    #[serde(rename = "N")]
    dim: usize,
    #[serde(rename = "M")]
    interactions: Vec<Vec<f64>>,
    u0: Vec<f64>,
    #[serde(rename = "BA")]
    invariant: Vec<Vec<f64>>,
}

pub fn cmd_canonicalize(args: &CanonicalizeArgs) -> Result<(), CliError> {
    let sys = load_system(&args.system)?;
    let content = if args.square {
        let canonical = sys.square_canonicalize()?;
        canonical.to_json()
    } else {
        let embedding = sys.to_lotka_volterra();
        let lv = embedding.lv();
        let raw = LvJson {
            dim: lv.dim(),
            interactions: matrix_rows(lv.interaction_matrix()),
            u0: lv.initial_state().iter().copied().collect(),
            invariant: matrix_rows(&sys.invariant_matrix()),
        };
        let mut out = serde_json::to_string_pretty(&raw).expect("plain data serializes");
        out.push('\n');
        out
    };
    write_output(&args.out, &content)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    check_positive(args.t_end, "--t-end")?;
    check_positive(args.tol, "--tol")?;
    check_order(args.order)?;
    let sys = load_system(&args.system)?;

    let taylor = taylor_solve(&sys, args.t_end, args.tol, args.order)?;
    let reference = rk_reference(&sys, args.t_end, args.tol)?;

    let mut worst = 0.0f64;
    for (t, rk_state) in reference.times().iter().zip(reference.states()) {
        let taylor_state = taylor.evaluate(*t)?;
        for i in 0..sys.dim() {
            let scale = taylor_state[i].abs().max(rk_state[i].abs());
            if scale > 0.0 {
                worst = worst.max((taylor_state[i] - rk_state[i]).abs() / scale);
            }
        }
    }

    // 10x the shared tolerance, floored at 1e-8: the Runge-Kutta reference
    // accumulates a few tens of local errors over orbit-scale horizons.
    let threshold = (10.0 * args.tol).max(1e-8);
    println!("taylor_steps: {}", taylor.trajectory().meta().accepted);
    println!("rk_steps: {}", reference.meta().accepted);
    println!("max_relative_deviation: {worst:.6e}");
    println!("threshold: {threshold:.6e}");
    if worst < threshold {
        println!("verdict: PASS");
        Ok(())
    } else {
        println!("verdict: FAIL");
        Err(CliError::Verify(format!(
            "taylor and runge-kutta trajectories deviate by {worst:.6e} (threshold {threshold:.6e})"
        )))
    }
}

fn advance(tuple: &mut [usize], base: usize) -> bool {
    for slot in tuple.iter_mut().rev() {
        *slot += 1;
        if *slot < base {
            return true;
        }
        *slot = 0;
    }
    false
}

pub fn cmd_tensor(args: &TensorArgs) -> Result<(), CliError> {
    let budget = enumeration_budget()?;
    let scan = oracle::tensor_nonzero_enumerate(args.dim, args.order, args.index, budget)?;

    let mut csv = String::from("i");
    for m in 1..=args.order {
        csv.push_str(&format!(",i{m}"));
    }
    for m in 1..=args.order {
        csv.push_str(&format!(",j{m}"));
    }
    csv.push_str(",value\n");
    for (idx, value) in scan {
        csv.push_str(&idx.i().to_string());
        for x in idx.upper().iter().chain(idx.lower()) {
            csv.push_str(&format!(",{x}"));
        }
        csv.push_str(&format!(",{value}\n"));
    }
    write_output(&args.out, &csv)?;

    // Row-sum identity: for every upper tuple, summing over the lower
    // indices collapses the tensor to k!.
    let expected: u64 = (1..=args.order as u64).product();
    let mut upper = vec![0usize; args.order];
    loop {
        let total = oracle::tensor_sum_over_lower(args.index, &upper, args.dim, budget)?;
        if total != expected {
            return Err(CliError::Verify(format!(
                "row-sum check failed at upper tuple {upper:?}: {total} != {expected}"
            )));
        }
        if !advance(&mut upper, args.dim) {
            break;
        }
    }
    eprintln!("row_sum_check: PASS (every lower-index sum equals {expected})");
    Ok(())
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|m| m as f64).product()
}

pub fn cmd_coeffs(args: &CoeffsArgs) -> Result<(), CliError> {
    if args.order > 60 {
        return Err(CliError::Input(format!(
            "coefficient order must be at most 60, got {}",
            args.order
        )));
    }
    let budget = enumeration_budget()?;
    let sys = load_system(&args.system)?;
    let embedding = sys.to_lotka_volterra();
    let lv = embedding.lv();

    let qp_bundle = qp_taylor_coefficients(&sys, args.order)?;
    if args.format == OutputFormat::Json {
        return write_output(&args.out, &qp_bundle.to_json());
    }
    let lv_bundle = lv_taylor_coefficients(lv, args.order)?;

    let mut table = String::from("variable,k,recursion,oracle,rel_dev\n");
    let mut push_rows = |name: &str, dim: usize, coeff: &dyn Fn(usize, usize) -> f64, oracle_value: &dyn Fn(
        usize,
        usize,
    )
        -> Result<f64, oracle::OracleError>| {
        for i in 0..dim {
            for k in 0..=args.order {
                let recursed = factorial(k) * coeff(i, k);
                match oracle_value(i, k) {
                    Ok(direct) => {
                        let scale = recursed.abs().max(direct.abs());
                        let dev = if scale == 0.0 {
                            0.0
                        } else {
                            (recursed - direct).abs() / scale
                        };
                        table.push_str(&format!(
                            "{name}{},{k},{recursed:.16e},{direct:.16e},{dev:.3e}\n",
                            i + 1
                        ));
                    }
                    Err(_) => {
                        table.push_str(&format!(
                            "{name}{},{k},{recursed:.16e},budget-exceeded,\n",
                            i + 1
                        ));
                    }
                }
            }
        }
    };

    let interactions = lv.interaction_matrix().clone();
    let u0 = lv.initial_state().clone();
    push_rows(
        "u",
        lv.dim(),
        &|i, k| lv_bundle.coeff(i, k),
        &|i, k| oracle::direct_lv_coefficient(&interactions, &u0, i, k, budget),
    );
    let (a, b, x0) = (
        sys.coefficient_matrix().clone(),
        sys.exponent_matrix().clone(),
        sys.initial_state().clone(),
    );
    push_rows(
        "x",
        sys.dim(),
        &|i, k| qp_bundle.coeff(i, k),
        &|i, k| oracle::direct_qp_coefficient(&a, &b, &x0, i, k, budget),
    );

    write_output(&args.out, &table)
}
