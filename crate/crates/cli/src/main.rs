//! `dpadam`: train, sweep and calibrate differentially private classifiers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpadam_core::accountant::{curve_to_csv, rho_epsilon_curve, DEFAULT_DELTA};
use dpadam_core::harness::{
    default_values, parse_kv, plan_privacy, run_experiment, run_sweep, synth_dataset, to_columnar, RunConfig,
    RunOutcome, SweepParam, SweepReport, SynthSpec, Variant, DEFAULT_SYNTH,
};
use dpadam_core::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dpadam", version, about = "Differentially private AdamW experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Directory for report.csv, report.txt and privacy.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Sweep one hyperparameter, running the DP and ADP variants per value.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// epsilon, clip, noise_multiplier, optimizer, imbalance or trainable_layers.
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults to the parameter's standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Find the noise multiplier for the configured epsilon target.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write privacy.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the rho-to-epsilon curve as CSV.
    Curve {
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        rho_max: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset in the columnar `label,f0,...` format.
    Synth {
        #[arg(long, default_value_t = DEFAULT_SYNTH.n)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_SYNTH.dim)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_SYNTH.class_ratio)]
        class_ratio: f64,
        #[arg(long, default_value_t = DEFAULT_SYNTH.separation)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags mirroring the run configuration. Values are parsed by the
/// configuration itself so flags and config files accept the same text.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat key=value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    /// `synthetic` or a path to a columnar file.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    class_ratio: Option<String>,
    #[arg(long)]
    separation: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lot_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    /// Per-sample clip norm; `inf` disables clipping.
    #[arg(long)]
    clip: Option<String>,
    /// Target epsilon; the noise multiplier is calibrated to reach it.
    #[arg(long, conflicts_with = "sigma")]
    epsilon: Option<String>,
    /// Explicit noise multiplier.
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    adaptive: Option<String>,
    #[arg(long)]
    decay: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    accountant: Option<String>,
    #[arg(long)]
    sampler: Option<String>,
    /// none, wrs or cw.
    #[arg(long)]
    imbalance: Option<String>,
    #[arg(long)]
    trainable_layers: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    epsilon_cap: Option<String>,
    #[arg(long)]
    check_clipping: Option<String>,
    #[arg(long)]
    private: Option<String>,
}

impl RunArgs {
    fn flags(&self) -> Vec<(&'static str, &str)> {
        let all: [(&'static str, &Option<String>); 25] = [
            ("model", &self.model),
            ("hidden", &self.hidden),
            ("data", &self.data),
            ("n", &self.n),
            ("dim", &self.dim),
            ("class-ratio", &self.class_ratio),
            ("separation", &self.separation),
            ("epochs", &self.epochs),
            ("lot-size", &self.lot_size),
            ("learning-rate", &self.learning_rate),
            ("clip", &self.clip),
            ("epsilon", &self.epsilon),
            ("sigma", &self.sigma),
            ("optimizer", &self.optimizer),
            ("adaptive", &self.adaptive),
            ("decay", &self.decay),
            ("weight-decay", &self.weight_decay),
            ("accountant", &self.accountant),
            ("sampler", &self.sampler),
            ("imbalance", &self.imbalance),
            ("trainable-layers", &self.trainable_layers),
            ("seed", &self.seed),
            ("delta", &self.delta),
            ("epsilon-cap", &self.epsilon_cap),
            ("check-clipping", &self.check_clipping),
        ];
        let mut out: Vec<_> = all.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect();
        if let Some(p) = &self.private {
            out.push(("private", p.as_str()));
        }
        out
    }

    /// Defaults, then the config file, then flags. A flag choosing
    /// `epsilon` or `sigma` replaces whichever the file chose.
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)?;
            let pairs = parse_kv(&text)?;
            cfg.apply_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        }
        cfg.apply_pairs(self.flags())?;
        Ok(cfg)
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn privacy_json(out: &RunOutcome, cfg: &RunConfig) -> serde_json::Value {
    match &out.privacy {
        Some(p) => json!({
            "epsilon": p.epsilon,
            "delta": p.delta,
            "accountant": p.accountant,
            "detail": p.detail,
        }),
        None => json!({
            "epsilon": null,
            "delta": cfg.delta,
            "accountant": "none",
            "detail": { "reason": "no noise added" },
        }),
    }
}

fn run_csv(cfg: &RunConfig, out: &RunOutcome) -> String {
    let e = &out.eval;
    let c = e.confusion;
    let eps = out.privacy.as_ref().map(|p| p.epsilon.to_string()).unwrap_or_default();
    let mut s = String::from(
        "config_hash,seed,model,optimizer,accountant,adaptive,accuracy,precision,recall,f1,roc_auc,tn,fp,fn,tp,\
         epsilon,delta,nominal_epsilon,sigma0,final_sigma,wall_time_secs\n",
    );
    let _ = writeln!(
        s,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        out.config_hash,
        cfg.seed,
        cfg.model,
        cfg.optimizer,
        cfg.accountant,
        cfg.adaptive,
        e.accuracy,
        e.precision,
        e.recall,
        e.f1,
        e.roc_auc,
        c.tn,
        c.fp,
        c.fn_,
        c.tp,
        eps,
        cfg.delta,
        out.nominal_epsilon,
        out.sigma0,
        out.final_sigma,
        out.wall_time_secs
    );
    s
}

fn run_text(cfg: &RunConfig, out: &RunOutcome) -> String {
    let e = &out.eval;
    let mut s = String::new();
    let _ = writeln!(s, "config {} (seed {})", out.config_hash, cfg.seed);
    let _ = writeln!(s, "model {}, optimizer {}, adaptive {}", cfg.model, cfg.optimizer, cfg.adaptive);
    let _ = writeln!(s, "accuracy  {:>8.2}%", 100.0 * e.accuracy);
    let _ = writeln!(s, "precision {:>8.2}%", 100.0 * e.precision);
    let _ = writeln!(s, "recall    {:>8.2}%", 100.0 * e.recall);
    let _ = writeln!(s, "f1        {:>8.2}%", 100.0 * e.f1);
    let _ = writeln!(s, "roc auc   {:>8.2}%", 100.0 * e.roc_auc);
    let c = e.confusion.as_matrix();
    let _ = writeln!(s, "confusion [[{}, {}], [{}, {}]]", c[0][0], c[0][1], c[1][0], c[1][1]);
    match &out.privacy {
        Some(p) => {
            let _ = writeln!(
                s,
                "privacy   epsilon {:.4} at delta {:e} ({}){}",
                p.epsilon,
                p.delta,
                p.accountant,
                if out.nominal_epsilon { ", nominal" } else { "" }
            );
        }
        None => {
            let _ = writeln!(s, "privacy   none (no noise added)");
        }
    }
    let _ = writeln!(s, "sigma     {:.6} -> {:.6}", out.sigma0, out.final_sigma);
    if let Some((projected, cap)) = out.halted {
        let _ = writeln!(s, "halted    next epoch would reach epsilon {projected:.4} > cap {cap}");
    }
    let _ = writeln!(s, "wall time {:.2}s", out.wall_time_secs);
    s
}

fn sweep_privacy_json(rep: &SweepReport, base: &RunConfig) -> serde_json::Value {
    let mut rows = Vec::new();
    for row in &rep.rows {
        for v in Variant::BOTH {
            let s = row.variant(v);
            rows.push(json!({
                "epsilon": s.achieved_epsilon,
                "delta": base.delta,
                "accountant": s.accountant,
                "detail": {
                    "parameter": rep.parameter.as_str(),
                    "value": row.value,
                    "variant": v.as_str(),
                    "nominal": s.nominal_epsilon,
                    "config_hash": s.config_hash,
                },
            }));
        }
    }
    serde_json::Value::Array(rows)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { run, out } => {
            let cfg = run.build()?;
            let outcome = run_experiment(&cfg)?;
            let text = run_text(&cfg, &outcome);
            write_file(&out, "report.csv", &run_csv(&cfg, &outcome))?;
            write_file(&out, "report.txt", &text)?;
            write_file(&out, "privacy.json", &serde_json::to_string_pretty(&privacy_json(&outcome, &cfg))?)?;
            print!("{text}");
        }
        Command::Sweep {
            run,
            param,
            values,
            seeds,
            out,
        } => {
            let cfg = run.build()?;
            let parameter = SweepParam::parse(&param)?;
            let values = if values.is_empty() { default_values(parameter) } else { values };
            let rep = run_sweep(&cfg, parameter, &values, &seeds)?;
            let text = rep.to_text();
            write_file(&out, "report.csv", &rep.to_csv()?)?;
            write_file(&out, "report.txt", &text)?;
            write_file(&out, "privacy.json", &serde_json::to_string_pretty(&sweep_privacy_json(&rep, &cfg))?)?;
            print!("{text}");
        }
        Command::Calibrate { run, out } => {
            let cfg = run.build()?;
            let plan = plan_privacy(&cfg)?;
            let body = json!({
                "epsilon": plan.report.epsilon,
                "delta": plan.report.delta,
                "accountant": plan.report.accountant,
                "detail": plan.report.detail,
            });
            if let Some(dir) = out {
                write_file(&dir, "privacy.json", &serde_json::to_string_pretty(&body)?)?;
            }
            println!(
                "sigma0={} epsilon={} delta={} accountant={}{}",
                plan.sigma0,
                plan.report.epsilon,
                plan.report.delta,
                plan.report.accountant,
                if plan.nominal_epsilon { " nominal=true" } else { "" }
            );
        }
        Command::Curve {
            delta,
            rho_max,
            points,
            out,
        } => {
            if points < 2 || !(rho_max > 0.0) {
                return Err(Error::InvalidArgument("curve needs at least two points and rho-max > 0".into()));
            }
            let grid: Vec<f64> = (0..points).map(|i| rho_max * i as f64 / (points - 1) as f64).collect();
            let csv = curve_to_csv(&rho_epsilon_curve(delta, &grid)?);
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Synth {
            n,
            dim,
            class_ratio,
            separation,
            seed,
            out,
        } => {
            let spec = SynthSpec {
                n,
                dim,
                class_ratio,
                separation,
            };
            let d = synth_dataset(spec, seed)?;
            // one file holding every split, in train, valid, test order
            let mut text = to_columnar(&d.train);
            for b in [&d.valid, &d.test] {
                text.extend(to_columnar(b).lines().skip(1).map(|l| format!("{l}\n")));
            }
            fs::write(&out, text)?;
            println!(
                "wrote {} samples ({} train, {} valid, {} test) to {}",
                n,
                d.train.len(),
                d.valid.len(),
                d.test.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.code(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
