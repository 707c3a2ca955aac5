use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eprlab::config::ExperimentConfig;
use eprlab::criteria::{classify, CriterionReport, VarianceMeasurement};
use eprlab::fit::{extract_variances, fit_pattern, Extraction, FitResult, FitStatus};
use eprlab::io::{read_json, read_scan, write_curve, write_json, write_scan};
use eprlab::oracle::{amplitude_image_oracle, amplitude_interference_oracle, QuadratureSettings};
use eprlab::patterns::{blurred_pattern, image_blur_sigma, interference_blur_sigma, PatternCurve, PatternKind};
use eprlab::pipeline::{fit_detectors, reproduce, rows, scan_seed, IdealCurves, RowSpec, Stage};
use eprlab::synth::synthesize;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

/// Oracle/model agreement reported by `predict --oracle`.
const ORACLE_GAP_LIMIT: f64 = 0.05;

#[derive(Parser)]
#[command(name = "eprlab", version, about = "Position-momentum entanglement laboratory")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arm {
    Image,
    Interference,
}

impl From<Arm> for PatternKind {
    fn from(a: Arm) -> Self {
        match a {
            Arm::Image => PatternKind::Image,
            Arm::Interference => PatternKind::Interference,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the ideal curve to OUTPUT and the blurred prediction next to it.
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        arm: Arm,
        #[arg(long)]
        output: PathBuf,
        /// Also write the amplitude-integral prediction and report its gap.
        #[arg(long)]
        oracle: bool,
        /// 1 = source state, 2 = after storage.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        row: u8,
    },
    /// Write a Poisson coincidence scan (CSV plus JSON sidecar).
    Synthesize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        arm: Arm,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        row: u8,
    },
    /// Fit one or two scans; with both arms, also extract the variances.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(required = true, num_args = 1..=2)]
        datasets: Vec<PathBuf>,
    },
    /// Classify a variance measurement.
    Criteria {
        measurement: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run both rows end to end over several seeds.
    Reproduce {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        no_noise: bool,
        #[arg(long)]
        storage_off: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            eprlab::config::ConfigError::Io(io) => Failure::new(EXIT_IO, io),
            other => Failure::new(EXIT_CONFIG, other),
        }),
        None => Ok(ExperimentConfig::default()),
    }
}

fn io_fail(e: impl ToString) -> Failure {
    Failure::new(EXIT_IO, e)
}

fn row_spec(config: &ExperimentConfig, row: u8) -> Result<RowSpec, Failure> {
    let [r1, r2] = rows(config, true).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    Ok(if row == 1 { r1 } else { r2 })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("curve");
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn ideal_for(ideals: &IdealCurves, arm: PatternKind) -> &PatternCurve {
    match arm {
        PatternKind::Image => &ideals.image,
        PatternKind::Interference => &ideals.interference,
    }
}

fn ideals(config: &ExperimentConfig) -> Result<IdealCurves, Failure> {
    IdealCurves::new(config).map_err(|e| Failure::new(EXIT_CONFIG, e))
}

fn cmd_predict(config: &ExperimentConfig, arm: PatternKind, output: &Path, oracle: bool, row: u8) -> Outcome {
    let spec = row_spec(config, row)?;
    let ideals = ideals(config)?;
    let ideal = ideal_for(&ideals, arm);
    let a = &config.apertures;
    let (sigma, detector) = match arm {
        PatternKind::Image => (image_blur_sigma(&spec.state, &config.optics), a.image_detector),
        PatternKind::Interference => (interference_blur_sigma(&spec.state, &config.optics), a.fiber),
    };
    let blurred = blurred_pattern(ideal, sigma, &detector).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    write_curve(ideal, output).map_err(io_fail)?;
    write_curve(&blurred, &sibling(output, "blurred")).map_err(io_fail)?;
    if oracle {
        let q = QuadratureSettings::default();
        let curve = match arm {
            PatternKind::Image => amplitude_image_oracle(&spec.state, &a.object, &a.image_detector, ideal.grid(), &q),
            PatternKind::Interference => {
                amplitude_interference_oracle(&spec.state, &a.object, &config.optics, &a.fiber, ideal.grid(), &q)
            }
        }
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
        write_curve(&curve, &sibling(output, "oracle")).map_err(io_fail)?;
        let gap = curve.sup_distance(&blurred).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
        let report = serde_json::json!({
            "arm": arm.as_str(),
            "oracle_sup_gap": gap,
            "limit": ORACLE_GAP_LIMIT,
            "within_limit": gap <= ORACLE_GAP_LIMIT,
        });
        println!("{report}");
    }
    Ok(())
}

fn cmd_synthesize(config: &ExperimentConfig, arm: PatternKind, output: &Path, row: u8) -> Outcome {
    let spec = row_spec(config, row)?;
    let ideals = ideals(config)?;
    let a = &config.apertures;
    let (curve, budget) = match arm {
        PatternKind::Image => (
            blurred_pattern(&ideals.image, image_blur_sigma(&spec.state, &config.optics), &a.image_detector),
            spec.image_budget,
        ),
        PatternKind::Interference => (
            blurred_pattern(&ideals.interference, interference_blur_sigma(&spec.state, &config.optics), &a.fiber),
            spec.interference_budget,
        ),
    };
    let curve = curve.map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let positions = config.scans.positions(arm, spec.stored);
    let seed = scan_seed(config.seed, spec.index, 0, arm);
    let mut scan = synthesize(&curve, &budget, &positions, config.budgets.duration(arm, spec.stored), seed)
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    scan.meta.insert("root_seed".into(), config.seed.into());
    scan.meta.insert("row".into(), row.into());
    let mv = spec.state.marginal_variances();
    scan.meta.insert("var_x_minus_mm2".into(), mv.var_x_minus.into());
    scan.meta.insert("var_p_plus_per_mm2".into(), mv.var_p_plus.into());
    write_scan(&scan, output).map_err(io_fail)
}

#[derive(Serialize)]
struct FitReport {
    image: Option<FitResult>,
    interference: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extraction: Option<Extraction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    measurement: Option<VarianceMeasurement>,
}

fn cmd_fit(config: &ExperimentConfig, datasets: &[PathBuf], output: &Path) -> Outcome {
    let ideals = ideals(config)?;
    let (image_det, fiber_det, widths) = fit_detectors(config);
    let mut report = FitReport {
        image: None,
        interference: None,
        extraction: None,
        measurement: None,
    };
    for path in datasets {
        let scan = read_scan(path).map_err(io_fail)?;
        let det = match scan.arm {
            PatternKind::Image => &image_det,
            PatternKind::Interference => &fiber_det,
        };
        let fit = fit_pattern(&scan, ideal_for(&ideals, scan.arm), det, None)
            .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
        let slot = match scan.arm {
            PatternKind::Image => &mut report.image,
            PatternKind::Interference => &mut report.interference,
        };
        if slot.is_some() {
            return Err(Failure::new(EXIT_IO, format!("two {} scans given", scan.arm.as_str())));
        }
        *slot = Some(fit);
    }
    let unconverged: Vec<&str> = [("image", &report.image), ("interference", &report.interference)]
        .into_iter()
        .filter_map(|(name, f)| f.as_ref().filter(|f| f.status != FitStatus::Converged).map(|_| name))
        .collect();
    if let (Some(i), Some(f), true) = (&report.image, &report.interference, unconverged.is_empty()) {
        let x = extract_variances(i, f, &config.optics, &widths).map_err(|e| Failure::new(EXIT_NOT_CONVERGED, e))?;
        if x.image_clamped || x.interference_clamped {
            eprintln!("warning: detector resolution exceeds a fitted blur; variance clamped to zero");
        }
        report.measurement = x.measurement("fit").ok();
        report.extraction = Some(x);
    }
    write_json(&report, output).map_err(io_fail)?;
    if !unconverged.is_empty() {
        return Err(Failure::new(
            EXIT_NOT_CONVERGED,
            format!("fit did not converge: {}", unconverged.join(", ")),
        ));
    }
    Ok(())
}

fn cmd_criteria(measurement: &Path, output: Option<&Path>) -> Outcome {
    let value: serde_json::Value = read_json(measurement).map_err(io_fail)?;
    let inner = value.get("measurement").cloned().unwrap_or(value);
    let m: VarianceMeasurement =
        serde_json::from_value(inner).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", measurement.display())))?;
    let report: CriterionReport = classify(&m);
    match output {
        Some(p) => write_json(&report, p).map_err(io_fail),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            Ok(())
        }
    }
}

fn cmd_reproduce(config: &ExperimentConfig, seeds: usize, noise: bool, storage: bool, output: Option<&Path>) -> Outcome {
    let summary = reproduce(config, seeds, noise, storage).map_err(|e| {
        let code = match e.stage {
            Stage::Fit => EXIT_NOT_CONVERGED,
            Stage::State => EXIT_CONFIG,
            _ => EXIT_IO,
        };
        Failure::new(code, e)
    })?;
    println!(
        "{:<5} {:>9} {:>9} {:>9} {:>10} {:>10} {:>12} {:>7}",
        "row", "product", "truth", "reference", "var_x_mm2", "var_p_mm-2", "regime", "hits"
    );
    for r in &summary.rows {
        println!(
            "{:<5} {:>9.4} {:>9.4} {:>9.3} {:>10.4} {:>10.4} {:>12} {:>4}/{:<2}",
            r.label,
            r.median_product,
            r.true_product,
            r.reference_product,
            r.median_var_x_minus_mm2,
            r.median_var_p_plus_per_mm2,
            r.expected_regime.as_str(),
            r.regime_hits,
            r.replicates
        );
    }
    println!("{}", if summary.pass { "PASS" } else { "FAIL" });
    if let Some(p) = output {
        write_json(&summary, p).map_err(io_fail)?;
    }
    if summary.pass {
        Ok(())
    } else {
        Err(Failure::new(EXIT_ACCEPTANCE, "acceptance tolerances not met"))
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    }
    match cli.command {
        Command::Predict {
            config,
            arm,
            output,
            oracle,
            row,
        } => cmd_predict(&load_config(config.as_deref())?, arm.into(), &output, oracle, row),
        Command::Synthesize {
            config,
            arm,
            output,
            seed,
            row,
        } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            cmd_synthesize(&c, arm.into(), &output, row)
        }
        Command::Fit {
            config,
            output,
            datasets,
        } => cmd_fit(&load_config(config.as_deref())?, &datasets, &output),
        Command::Criteria { measurement, output } => cmd_criteria(&measurement, output.as_deref()),
        Command::Reproduce {
            config,
            seeds,
            no_noise,
            storage_off,
            seed,
            output,
        } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            cmd_reproduce(&c, seeds, !no_noise, !storage_off, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
