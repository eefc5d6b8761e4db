use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nma_core::analysis::{
    batch_run, compare_models, dataset_files, exclude_and_refit, leave_one_out, load_dataset, loo_csv, BatchOptions,
    ComparisonReport, LooOutcome,
};
use nma_core::dataset::{group_designs, EffectMeasure, NetworkDataset};
use nma_core::heterogeneity::PValue;
use nma_core::models::{ModelKind, TauMethod, DEFAULT_CI_LEVEL};
use nma_core::report::{
    fit_report, forest_data, format_sig3, network_data, render_forest_svg, render_network_svg, ComparisonSummary,
    FitReport, QReport, SvgOptions,
};

#[derive(Parser)]
#[command(name = "nma", version, about = "Network meta-analysis: fixed, random and multiplicative effects")]
struct Cli {
    /// Print a human-readable summary instead of JSON/CSV.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Dataset file (.csv or .json).
    file: PathBuf,

    /// Effect measure; overrides the file's own and is needed for CSV ratios.
    #[arg(long, value_parser = parse_measure)]
    measure: Option<EffectMeasure>,

    /// Reference treatment for the parameterisation.
    #[arg(long)]
    reference: Option<String>,
}

impl Input {
    fn load(&self) -> Result<NetworkDataset> {
        load_dataset(&self.file, self.measure, self.reference.as_deref())
            .with_context(|| format!("reading {}", self.file.display()))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Fe,
    Re,
    Me,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Forest,
    Network,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset and summarise its network.
    Validate {
        #[command(flatten)]
        input: Input,
    },
    /// Fit one model and print its report.
    Fit {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long, default_value = "dl", value_parser = parse_tau)]
        tau_method: TauMethod,
        #[arg(long, default_value_t = DEFAULT_CI_LEVEL, value_parser = parse_unit)]
        ci_level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split Cochran's Q into heterogeneity and inconsistency.
    Qdecomp {
        #[command(flatten)]
        input: Input,
        /// Also write the per-study table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the multiplicative and random-effects models by AIC.
    Compare {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "dl", value_parser = parse_tau)]
        tau_method: TauMethod,
        /// Study id to drop before refitting; repeatable.
        #[arg(long)]
        exclude: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refit with each study left out in turn.
    Loo {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "dl", value_parser = parse_tau)]
        tau_method: TauMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Screen and compare every dataset in a directory.
    Batch {
        dir: PathBuf,
        #[arg(long, default_value_t = 0.05, value_parser = parse_unit)]
        alpha: f64,
        #[arg(long, default_value = "dl", value_parser = parse_tau)]
        tau_method: TauMethod,
        /// Measure for CSV files, which do not declare one.
        #[arg(long, value_parser = parse_measure)]
        measure: Option<EffectMeasure>,
        #[arg(long, env = "NMA_SEED_JOBS", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
        /// Write the histogram JSON here.
        #[arg(long)]
        histogram: Option<PathBuf>,
        /// Write summary.csv, summary.json and histogram.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a forest plot or network graph as SVG.
    Plot {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Comparator for forest plots, defaulting to the reference; unused for networks.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value = "dl", value_parser = parse_tau)]
        tau_method: TauMethod,
        #[arg(long, default_value_t = DEFAULT_CI_LEVEL, value_parser = parse_unit)]
        ci_level: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_measure(s: &str) -> std::result::Result<EffectMeasure, String> {
    s.parse().map_err(|_| format!("expected MD, logOR or logRR, got `{s}`"))
}

fn parse_tau(s: &str) -> std::result::Result<TauMethod, String> {
    s.parse().map_err(|_| format!("expected dl or reml, got `{s}`"))
}

fn parse_unit(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a number strictly between 0 and 1, got `{s}`")),
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    s
}

fn p_text(p: PValue) -> String {
    match p {
        PValue::Value(p) => format!("{p:.3e}"),
        PValue::Untestable => "untestable".into(),
    }
}

fn validate_text(ds: &NetworkDataset) -> String {
    let designs = group_designs(ds);
    let mut s = String::new();
    let _ = writeln!(s, "dataset    {} ({})", ds.name(), ds.measure());
    let _ = writeln!(s, "studies    {}", ds.m());
    let _ = writeln!(s, "treatments {} (reference {})", ds.n(), ds.reference());
    let _ = writeln!(s, "designs    {}", designs.len());
    let _ = writeln!(s, "network    connected");
    for d in designs {
        let _ = writeln!(s, "  {:<50} {}", d.label(), d.members.len());
    }
    s
}

fn fit_text(r: &FitReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} ({}, reference {})", r.dataset, r.measure, r.reference);
    for m in &r.models {
        let _ = write!(s, "\n{}  logLik {:.3}  AIC {:.3}", m.kind, m.log_lik, m.aic);
        if let Some(t) = m.hetero.tau2 {
            let _ = write!(s, "  tau2 {t:.4}");
        }
        if let Some(p) = m.hetero.phi {
            let _ = write!(s, "  phi {p:.4}");
        }
        s.push('\n');
        for (t, e) in &m.d_hat {
            let _ = writeln!(
                s,
                "  {t:<40} {:>9.4}  se {:.4}  [{:.4}, {:.4}]",
                e.est, e.se, e.ci_lo, e.ci_hi
            );
        }
    }
    s
}

fn q_text(q: &QReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Q_total {:.2}", q.total);
    let _ = writeln!(s, "Q_het   {:.2}  df {}  p {}", q.het, q.df_het, p_text(q.p_het));
    let _ = writeln!(s, "Q_inc   {:.2}  df {}  p {}", q.inc, q.df_inc, p_text(q.p_inc));
    for d in &q.per_design {
        let _ = writeln!(s, "  {:<50} {:>8.2}", d.design, d.q_het_c);
    }
    s
}

fn compare_text(c: &ComparisonSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} ({}): m {}, n {}, C {}", c.dataset, c.measure, c.m, c.n, c.designs);
    if let Some(sens) = &c.sensitivity {
        let _ = writeln!(s, "excluded {}", sens.excluded.join(", "));
    }
    let _ = writeln!(s, "Q_het {:.2} (df {}, p {})", c.q_het, c.df_het, p_text(c.p_het));
    let _ = writeln!(s, "tau2 ({}) {:.4}  phi {:.4}", c.tau_method, c.tau2, c.phi);
    let _ = writeln!(s, "AIC  RE {:.3}  ME {:.3}", c.aic_re, c.aic_me);
    let verdict = c.classification.map_or("untestable", |k| k.as_str());
    let _ = writeln!(s, "delta AIC (ME - RE) {:.2}: {verdict}", c.delta_aic);
    if let Some(sens) = &c.sensitivity {
        let _ = writeln!(
            s,
            "change vs all studies: Q_het {:+.2}, delta AIC {:+.2}",
            sens.delta_q_het, sens.delta_delta_aic
        );
    }
    s
}

fn compare(input: &Input, tau: TauMethod) -> Result<(NetworkDataset, ComparisonReport)> {
    let ds = input.load()?;
    let report = compare_models(&ds, tau).with_context(|| format!("fitting {}", ds.name()))?;
    Ok((ds, report))
}

fn run(cli: Cli) -> Result<()> {
    let pretty = cli.pretty;
    match cli.command {
        Command::Validate { input } => {
            let ds = input.load()?;
            let text = if pretty {
                validate_text(&ds)
            } else {
                json(&serde_json::json!({
                    "dataset": ds.name(),
                    "measure": ds.measure(),
                    "m": ds.m(),
                    "n": ds.n(),
                    "C": group_designs(&ds).len(),
                    "reference": ds.reference().as_str(),
                    "treatments": ds.treatments(),
                    "connected": true,
                }))
            };
            emit(None, &text)?;
        }
        Command::Fit {
            input,
            model,
            tau_method,
            ci_level,
            out,
        } => {
            let (ds, report) = compare(&input, tau_method)?;
            let report = report.with_ci_level(ci_level)?;
            let kind = match model {
                Model::Fe => ModelKind::Fe,
                Model::Re => tau_method.re_kind(),
                Model::Me => ModelKind::Me,
            };
            let rep = fit_report(&ds, &report, &[kind])?;
            emit(out.as_deref(), &if pretty { fit_text(&rep) } else { json(&rep) })?;
        }
        Command::Qdecomp { input, csv, out } => {
            let (ds, report) = compare(&input, TauMethod::Dl)?;
            let q = QReport::new(&ds, &report.q);
            if let Some(path) = csv {
                emit(Some(&path), &q.per_study_csv())?;
            }
            emit(out.as_deref(), &if pretty { q_text(&q) } else { json(&q) })?;
        }
        Command::Compare {
            input,
            tau_method,
            exclude,
            out,
        } => {
            let summary = if exclude.is_empty() {
                ComparisonSummary::new(&compare(&input, tau_method)?.1)
            } else {
                let ds = input.load()?;
                let ids: Vec<&str> = exclude.iter().map(String::as_str).collect();
                let rec = exclude_and_refit(&ds, &ids, tau_method)
                    .with_context(|| format!("refitting {} without {}", ds.name(), exclude.join(", ")))?;
                ComparisonSummary::with_sensitivity(&rec)
            };
            emit(out.as_deref(), &if pretty { compare_text(&summary) } else { json(&summary) })?;
        }
        Command::Loo { input, tau_method, out } => {
            let ds = input.load()?;
            let entries = leave_one_out(&ds, tau_method).with_context(|| format!("fitting {}", ds.name()))?;
            let text = if pretty {
                let mut s = String::new();
                for e in &entries {
                    let _ = match &e.outcome {
                        LooOutcome::Refit(r) => writeln!(
                            s,
                            "{:<12} Q_het {:>8.2} ({:+.2})  delta AIC {:>7.2} ({:+.2})  {}",
                            e.study_id,
                            r.refit.q.q_het,
                            r.delta_q_het,
                            r.refit.delta_aic,
                            r.delta_delta_aic,
                            r.refit.classification.map_or("untestable", |c| c.as_str())
                        ),
                        LooOutcome::Skipped(why) => writeln!(s, "{:<12} skipped: {why}", e.study_id),
                    };
                }
                s
            } else {
                loo_csv(&entries)
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Batch {
            dir,
            alpha,
            tau_method,
            measure,
            jobs,
            histogram,
            out,
        } => {
            let files = dataset_files(&dir)
                
                .with_context(|| format!("listing {}", dir.display()))?;
            let summary = batch_run(
                &files,
                &BatchOptions {
                    alpha,
                    tau_method,
                    jobs: jobs.into(),
                    measure,
                },
            );
            if let Some(path) = histogram {
                emit(Some(&path), &summary.histogram_json())?;
            }
            if let Some(out) = out {
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                emit(Some(&out.join("summary.csv")), &summary.to_csv())?;
                emit(Some(&out.join("summary.json")), &summary.rows_json())?;
                emit(Some(&out.join("histogram.json")), &summary.histogram_json())?;
            } else if pretty {
                let mut s = String::new();
                for r in &summary.rows {
                    let _ = match (&r.error, r.delta_aic) {
                        (Some(e), _) => writeln!(s, "{:<24} error: {e}", r.name),
                        (None, Some(d)) => writeln!(
                            s,
                            "{:<24} {:<6} Q_het {:>8} {:<13} delta AIC {:>7.2} {}",
                            r.name,
                            r.measure.map_or("", |m| m.as_str()),
                            r.q_het.map(format_sig3).unwrap_or_default(),
                            r.screen.map_or("", |s| s.as_str()),
                            d,
                            r.classification.map_or("", |c| c.as_str())
                        ),
                        (None, None) => Ok(()),
                    };
                }
                emit(None, &s)?;
            } else {
                emit(None, &summary.to_csv())?;
            }
        }
        Command::Plot {
            input,
            kind,
            target,
            tau_method,
            ci_level,
            out,
        } => {
            let (ds, report) = compare(&input, tau_method)?;
            let report = report.with_ci_level(ci_level)?;
            let svg = match kind {
                PlotKind::Forest => {
                    let target = target.unwrap_or_else(|| ds.reference().to_string());
                    let rows = forest_data(&ds, &report.re, &report.me, &report.q, &target)
                        ?;
                    let opts = SvgOptions {
                        title: Some(format!("{}: {} vs {target}", ds.name(), ds.measure())),
                        ..SvgOptions::default()
                    };
                    render_forest_svg(&rows, &opts)
                }
                PlotKind::Network => {
                    let opts = SvgOptions {
                        title: Some(ds.name().to_string()),
                        ..SvgOptions::default()
                    };
                    render_network_svg(&network_data(&ds), &opts)
                }
            };
            emit(Some(&out), &svg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
