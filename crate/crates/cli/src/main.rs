//! Command-line surface for the state-space laboratory: discretization
//! comparison, scan equivalence, selective-kernel drift, ERF heatmaps,
//! complexity benchmarks, and loss/metric reports.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 numeric/acceptance failure,
//! 64 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mambalab_core::act;
use mambalab_core::erf::{
    contribution, cross_profile, erf_image, synth_cracks, BlockGraph, GraphBlock,
};
use mambalab_core::linalg::norm_inf;
use mambalab_core::loss::{bce, dice_loss, mi_dice, mi_iou, LossWeights};
use mambalab_core::pgm::{pgm_read, pgm_write};
use mambalab_core::scan::{build_kernel, scan_conv, scan_recurrent};
use mambalab_core::selective::{kernel_drift, SelectiveParams};
use mambalab_core::ssm::{discretize, ContinuousSsm, DiscreteSsm, DiscretizeMethod};
use mambalab_core::tensor::tensor_read;
use mambalab_core::vision::{CrackMambaWeights, VanillaVssWeights, VssWeights};
use mambalab_core::{Error, Rng, Tensor};

const EXIT_IO: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "mambalab", version, about = "state-space model laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare discretization errors over a list of step sizes.
    DiscCompare(DiscCompareArgs),
    /// Check recurrent/convolutional scan equivalence on random systems.
    ScanEquiv(ScanEquivArgs),
    /// Report per-index kernel taps of a selective scan.
    Drift(DriftArgs),
    /// Compute an effective-receptive-field heatmap for a block.
    Erf(ErfArgs),
    /// Count kernel-precomputation multiplications against the model.
    Bench(BenchArgs),
    /// Report mean image-wise IoU and Dice for tensor files.
    Metrics(MetricsArgs),
    /// Report the weighted BCE + Dice + side-BCE loss for tensor files.
    Loss(LossArgs),
}

#[derive(Args)]
struct DiscCompareArgs {
    /// Comma-separated positive step sizes, descending.
    #[arg(long = "dt-list")]
    dt_list: String,
    /// Integration horizon.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScanEquivArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    l: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long, default_value_t = 8)]
    l: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Use a constant-parameter (input-independent) configuration.
    #[arg(long)]
    constant: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct ErfArgs {
    /// Block whose receptive field is measured.
    #[arg(long, value_parser = ["identity", "dwconv", "ss2d", "vanilla-vss", "vss", "crackmamba"])]
    block: String,
    /// Directory of PGM input images.
    #[arg(long, conflicts_with = "synth")]
    images: Option<PathBuf>,
    /// Number of synthetic crack images to generate instead.
    #[arg(long)]
    synth: Option<usize>,
    /// Side length of synthetic images (odd, for cross profiling).
    #[arg(long, default_value_t = 33)]
    size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output PGM heatmap path.
    #[arg(long)]
    out: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmarked operation.
    #[arg(long, default_value = "krylov", value_parser = ["krylov"])]
    op: String,
    /// Comma-separated state dimensions.
    #[arg(long = "n-list")]
    n_list: String,
    /// Comma-separated sequence lengths.
    #[arg(long = "l-list")]
    l_list: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct MetricsArgs {
    /// Prediction tensor file.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth tensor file.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long = "side-pred")]
    side_pred: PathBuf,
    #[arg(long = "side-gt")]
    side_gt: PathBuf,
    /// Comma-separated weights a1,a2,a3.
    #[arg(long, default_value = "1,1,0.1")]
    alpha: String,
}

/// Failure that carries the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_IO,
            _ => EXIT_NUMERIC,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = match cli.command {
        Command::DiscCompare(a) => cmd_disc_compare(&a),
        Command::ScanEquiv(a) => cmd_scan_equiv(&a),
        Command::Drift(a) => cmd_drift(&a),
        Command::Erf(a) => cmd_erf(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Loss(a) => cmd_loss(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    if s.trim().is_empty() {
        return Err(Failure::usage(format!("{what} must not be empty")));
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| Failure::usage(format!("bad {what} entry '{p}'")))
        })
        .collect()
}

/// Nine-significant-digit scientific notation, locale-independent.
fn csv_num(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    })
}

// ---------------------------------------------------------------------------
// disc-compare

fn cmd_disc_compare(args: &DiscCompareArgs) -> Result<(), Failure> {
    let dts: Vec<f64> = parse_list(&args.dt_list, "dt-list")?;
    if dts.iter().any(|&dt| dt <= 0.0) {
        return Err(Failure::usage("dt values must be positive"));
    }
    if dts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Failure::usage("dt values must be descending"));
    }
    let t = args.horizon;
    if t <= 0.0 {
        return Err(Failure::usage("horizon must be positive"));
    }
    // scalar test system h' = -h + 1, constant input, exact
    // solution h(T) = 1 - exp(-T)
    let sys = ContinuousSsm::scalar(-1.0, 1.0, 1.0);
    let exact = 1.0 - (-t).exp();
    let mut errs: Vec<[f64; 4]> = Vec::new();
    let mut csv = String::from("dt,err_euler,err_bilinear,err_zoh,err_zoh_approx\n");
    for &dt in &dts {
        let steps = (t / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - t).abs() > 1e-9 {
            return Err(Failure::usage(format!("dt {dt} does not divide horizon {t}")));
        }
        let mut row = [0.0; 4];
        for (i, method) in DiscretizeMethod::ALL.iter().enumerate() {
            let d = discretize(&sys, dt, *method)?;
            let x = vec![1.0; steps];
            let (y, _) = scan_recurrent(&d, &x, None)?;
            row[i] = (y[steps - 1] - exact).abs();
        }
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_num(dt),
            csv_num(row[0]),
            csv_num(row[1]),
            csv_num(row[2]),
            csv_num(row[3])
        ));
        errs.push(row);
    }
    write_file(&args.out, &csv)?;
    println!("wrote {}", args.out.display());
    // convergence-order bands over consecutive halvings
    for (i, pair) in errs.windows(2).enumerate() {
        let step_ratio = dts[i] / dts[i + 1];
        if (step_ratio - 2.0).abs() > 1e-9 {
            continue; // bands are defined for halvings only
        }
        let euler = pair[0][0] / pair[1][0];
        let bilinear = pair[0][1] / pair[1][1];
        println!(
            "halving {}: euler_ratio={euler:.6} bilinear_ratio={bilinear:.6}",
            i + 1
        );
        if !(1.8..=2.2).contains(&euler) {
            return Err(Failure::numeric(format!("euler ratio {euler} outside [1.8, 2.2]")));
        }
        if !(3.6..=4.4).contains(&bilinear) {
            return Err(Failure::numeric(format!(
                "bilinear ratio {bilinear} outside [3.6, 4.4]"
            )));
        }
    }
    for row in &errs {
        if row[2] >= 1e-12 {
            return Err(Failure::numeric(format!("zoh error {} >= 1e-12", row[2])));
        }
    }
    println!("bands ok");
    Ok(())
}

// ---------------------------------------------------------------------------
// scan-equiv

fn random_stable(rng: &mut Rng, n: usize) -> DiscreteSsm {
    let mut abar: Vec<f64> = (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let norm = norm_inf(&abar, n);
    if norm > 0.99 {
        let s = 0.99 / norm;
        for v in &mut abar {
            *v *= s;
        }
    }
    DiscreteSsm {
        abar,
        bbar: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        cbar: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        n,
        dt: 1.0,
        method: DiscretizeMethod::ZohApprox,
    }
}

fn cmd_scan_equiv(args: &ScanEquivArgs) -> Result<(), Failure> {
    if args.n == 0 || args.n > 64 {
        return Err(Failure::usage("n must be in 1..=64"));
    }
    if args.l == 0 || args.l > 4096 {
        return Err(Failure::usage("l must be in 1..=4096"));
    }
    if args.trials == 0 {
        return Err(Failure::usage("trials must be positive"));
    }
    println!("seed={}", args.seed);
    let mut rng = Rng::new(args.seed);
    let mut worst = 0.0f64;
    for _ in 0..args.trials {
        let sys = random_stable(&mut rng, args.n);
        let x: Vec<f64> = (0..args.l).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (yr, _) = scan_recurrent(&sys, &x, None)?;
        let bundle = build_kernel(&sys, args.l)?;
        let yc = scan_conv(&bundle, &x)?;
        let err = yr
            .iter()
            .zip(&yc)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    println!("trials={} max_abs_err={}", args.trials, csv_num(worst));
    if worst < args.tol {
        println!("equivalence ok (tol={})", csv_num(args.tol));
        Ok(())
    } else {
        Err(Failure::numeric(format!(
            "max error {worst} exceeds tolerance {}",
            args.tol
        )))
    }
}

// ---------------------------------------------------------------------------
// drift

fn cmd_drift(args: &DriftArgs) -> Result<(), Failure> {
    if args.l < 2 || args.d == 0 {
        return Err(Failure::usage("need l >= 2 and d >= 1"));
    }
    println!("seed={}", args.seed);
    let mut rng = Rng::new(args.seed);
    let p = if args.constant {
        SelectiveParams::constant(args.d, 2, -0.5, 1.0, 1.0, act::softplus_inverse(0.5))
    } else {
        SelectiveParams::random(&mut rng, args.d, 2, 0.5)
    };
    let x = Tensor::new(
        vec![args.l, args.d],
        (0..args.l * args.d).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )?;
    let drift = kernel_drift(&p, &x)?;
    for k in 0..args.l {
        let taps: Vec<String> = (0..args.d)
            .map(|di| csv_num(drift.first_taps.at(&[k, di])))
            .collect();
        println!("k={k} first_tap=[{}]", taps.join(","));
    }
    for k in 0..args.l - 1 {
        let taps: Vec<String> = (0..args.d)
            .map(|di| csv_num(drift.second_taps.at(&[k, di])))
            .collect();
        println!("k={} second_tap=[{}]", k + 1, taps.join(","));
    }
    println!("unified={}", drift.unified);
    Ok(())
}

// ---------------------------------------------------------------------------
// erf

fn erf_graph(block: &str, rng: &mut Rng) -> BlockGraph {
    match block {
        "identity" => BlockGraph::new(vec![GraphBlock::Identity]),
        "dwconv" => BlockGraph::new(vec![GraphBlock::DwConv {
            kernel: vec![1.0; 9],
            bias: vec![0.0],
        }]),
        "ss2d" => {
            // decaying constant-parameter routes: every state contracts
            // by exp(-0.25) per step, which makes the cross shape visible
            let delta = act::softplus_inverse(0.25);
            let routes: [SelectiveParams; 4] =
                std::array::from_fn(|_| SelectiveParams::constant(1, 1, -1.0, 1.0, 1.0, delta));
            BlockGraph::new(vec![GraphBlock::Ss2d(Box::new(routes))])
        }
        "vanilla-vss" => BlockGraph::new(vec![GraphBlock::VanillaVss(Box::new(
            VanillaVssWeights::random(rng, 1, 2, 0.3),
        ))]),
        "vss" => BlockGraph::new(vec![GraphBlock::Vss(Box::new(VssWeights::random(
            rng, 1, 2, 0.3,
        )))]),
        "crackmamba" => BlockGraph::new(vec![GraphBlock::CrackMamba(Box::new(
            CrackMambaWeights::random(rng, 1, 2, 0.3),
        ))]),
        _ => unreachable!("validated by clap"),
    }
}

fn cmd_erf(args: &ErfArgs) -> Result<(), Failure> {
    println!("seed={}", args.seed);
    let mut rng = Rng::new(args.seed);
    let graph = erf_graph(&args.block, &mut rng);
    let images: Vec<Tensor> = if let Some(dir) = &args.images {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Failure {
                code: EXIT_IO,
                message: format!("{}: {e}", dir.display()),
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Failure::usage(format!("no .pgm files in {}", dir.display())));
        }
        let mut imgs = Vec::with_capacity(paths.len());
        for p in paths {
            imgs.push(pgm_read(&p)?);
        }
        imgs
    } else {
        let count = args
            .synth
            .ok_or_else(|| Failure::usage("need --images or --synth"))?;
        if count == 0 {
            return Err(Failure::usage("--synth count must be positive"));
        }
        synth_cracks(&mut rng, count, args.size, 2, 0.2)?
            .into_iter()
            .map(|(img, _)| img)
            .collect()
    };
    for img in &images {
        let dims = img.dims();
        if dims.len() != 3 || dims[1] % 2 == 0 || dims[2] % 2 == 0 {
            return Err(Failure::usage(
                "images must be (1,H,W) with odd H and W for cross profiling",
            ));
        }
    }
    let cm = contribution(&graph, &images)?;
    let a = erf_image(&cm)?;
    pgm_write(&a, &args.out)?;
    let mut csv = String::new();
    let (h, w) = (a.dims()[0], a.dims()[1]);
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| csv_num(a.at(&[y, x]))).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&args.csv, &csv)?;
    let p = cross_profile(&a)?;
    println!(
        "crossMean={} offCrossMean={} centerIsMax={}",
        csv_num(p.cross_mean),
        csv_num(p.off_cross_mean),
        p.center_is_max
    );
    println!("wrote {} and {}", args.out.display(), args.csv.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bench

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let ns: Vec<usize> = parse_list(&args.n_list, "n-list")?;
    let ls: Vec<usize> = parse_list(&args.l_list, "l-list")?;
    if ns.iter().any(|&n| n == 0) || ls.iter().any(|&l| l == 0) {
        return Err(Failure::usage("n and l must be positive"));
    }
    println!("seed={}", args.seed);
    let mut rng = Rng::new(args.seed);
    let mut csv = String::from("n,l,mul_count,predicted,match\n");
    let mut all_match = true;
    for &n in &ns {
        for &l in &ls {
            let sys = random_stable(&mut rng, n);
            let bundle = build_kernel(&sys, l)?;
            let predicted = (n * n * (l - 1) + n * l) as u64;
            let ok = bundle.mul_count == predicted;
            all_match &= ok;
            csv.push_str(&format!("{n},{l},{},{predicted},{ok}\n", bundle.mul_count));
        }
    }
    write_file(&args.out, &csv)?;
    println!("wrote {}", args.out.display());
    if all_match {
        println!("all counts match");
        Ok(())
    } else {
        Err(Failure::numeric("multiplication count mismatch"))
    }
}

// ---------------------------------------------------------------------------
// metrics / loss

fn read_tensor(path: &Path) -> Result<Tensor, Failure> {
    tensor_read(path).map_err(Failure::from)
}

fn cmd_metrics(args: &MetricsArgs) -> Result<(), Failure> {
    if !(0.0 < args.threshold && args.threshold < 1.0) {
        return Err(Failure::usage("threshold must be in (0,1)"));
    }
    let pred = read_tensor(&args.pred)?;
    let gt = read_tensor(&args.gt)?;
    let w = LossWeights::default();
    let iou = mi_iou(
        std::slice::from_ref(&pred),
        std::slice::from_ref(&gt),
        args.threshold,
        w.eps_metric,
    )?;
    let dice = mi_dice(&[pred], &[gt], w.eps_metric)?;
    println!("mi_iou={iou:.6}");
    println!("mi_dice={dice:.6}");
    Ok(())
}

fn cmd_loss(args: &LossArgs) -> Result<(), Failure> {
    let alphas: Vec<f64> = parse_list(&args.alpha, "alpha")?;
    if alphas.len() != 3 || alphas.iter().any(|&a| a < 0.0) {
        return Err(Failure::usage("alpha needs three nonnegative values"));
    }
    let pred = read_tensor(&args.pred)?;
    let gt = read_tensor(&args.gt)?;
    let side_pred = read_tensor(&args.side_pred)?;
    let side_gt = read_tensor(&args.side_gt)?;
    let w = LossWeights {
        alpha1: alphas[0],
        alpha2: alphas[1],
        alpha3: alphas[2],
        ..LossWeights::default()
    };
    let b = bce(&pred, &gt)?;
    let d = dice_loss(&pred, &gt, w.eps_dice)?;
    let s = bce(&side_pred, &side_gt)?;
    let total = w.alpha1 * b + w.alpha2 * d + w.alpha3 * s;
    println!("bce={b:.6}");
    println!("dice={d:.6}");
    println!("side_bce={s:.6}");
    println!("total={total:.6}");
    Ok(())
}
