use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use normloss::experiment::{alpha_beta_grid, parse_config, run_experiment, ExperimentConfig, OUTPUT_ROOT_ENV};
use normloss::gradients::gradient_sweep;
use normloss::noise::symmetric_bound;
use normloss::theory::{simplex_grid, symmetric_risk_report, verify_lemma2_hypotheses, verify_lemma3};
use normloss::{Error, Loss, LossSpec, ProbVector, Result, Rng};

#[derive(Parser)]
#[command(name = "normloss", version, about = "Normalized robust losses for noisy labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured loss and write CSV histories and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare analytic logit gradients with central differences.
    Gradcheck {
        /// Loss spec, or `all` for every default loss and four APL pairs.
        #[arg(long)]
        loss: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a robustness lemma numerically.
    Verify {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        lemma: u8,
        #[arg(long)]
        loss: String,
        /// Symmetric noise rate (lemma 1).
        #[arg(long, default_value_t = 0.4)]
        eta: f64,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Simplex grid spacing (lemma 2).
        #[arg(long, default_value_t = 0.1)]
        grid_step: f64,
        /// Random predictions per check (lemmas 1 and 3).
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep APL weights, selecting on a noisy validation hold-out.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0])]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0, 100.0])]
        betas: Vec<f64>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let config = parse_config(path)?;
    Ok(match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => config.with_output_root(&PathBuf::from(root)),
        None => config,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn cmd_run(config: PathBuf) -> Result<bool> {
    let config = load_config(&config)?;
    let result = run_experiment(&config)?;
    println!(
        "{:<40} {:>10} {:>8} {:>8} {:>8}",
        "loss", "final%", "std", "best%", "gap"
    );
    for r in &result.rows {
        println!(
            "{:<40} {:>10} {:>8} {:>8} {:>8}",
            r.loss,
            pct(r.final_acc_mean),
            pct(r.final_acc_std),
            pct(r.best_acc_mean),
            pct(r.robustness_gap)
        );
    }
    println!("wrote {}", config.output_dir.display());
    Ok(true)
}

fn gradcheck_losses(spec: &str) -> Result<Vec<Loss>> {
    if spec != "all" {
        return Ok(vec![spec.parse()?]);
    }
    let mut out: Vec<Loss> = LossSpec::all_default().into_iter().map(Loss::from).collect();
    for s in [
        "apl:nce+mae",
        "apl:nce+rce",
        "apl:nfl+mae",
        "apl:nfl+rce",
    ] {
        out.push(s.parse()?);
    }
    Ok(out)
}

fn cmd_gradcheck(loss: &str, k: usize, trials: usize, seed: u64) -> Result<bool> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need K >= 2, got {k}")));
    }
    let mut ok = true;
    println!(
        "{:<40} {:>4} {:>7} {:>9} {:>12}  status",
        "loss", "K", "trials", "failures", "worst_rel"
    );
    for l in gradcheck_losses(loss)? {
        let sweep = gradient_sweep(&l, k, trials, seed)?;
        ok &= sweep.passed();
        println!(
            "{:<40} {:>4} {:>7} {:>9} {:>12.3e}  {}",
            sweep.loss,
            sweep.k,
            sweep.trials,
            sweep.failures,
            sweep.worst_rel_err,
            if sweep.passed() { "PASS" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn random_set(k: usize, n: usize, seed: u64) -> Result<(Vec<ProbVector>, Vec<usize>)> {
    let mut rng = Rng::new(seed);
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        probs.push(ProbVector::from_weights(&rng.simplex_point(k))?);
        labels.push(rng.below(k));
    }
    Ok((probs, labels))
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(lemma: u8, loss: &str, eta: f64, k: usize, grid_step: f64, samples: usize, seed: u64) -> Result<bool> {
    let loss: Loss = loss.parse()?;
    if k < 2 {
        return Err(Error::InvalidInput(format!("need K >= 2, got {k}")));
    }
    match lemma {
        1 => {
            if !(0.0..symmetric_bound(k)).contains(&eta) {
                return Err(Error::Config(format!(
                    "noise rate {eta} must lie in [0, (K-1)/K) for K={k}"
                )));
            }
            let (probs, labels) = random_set(k, samples.max(1), seed)?;
            let r = symmetric_risk_report(&probs, &labels, &loss, eta)?;
            println!("loss               {loss}");
            println!("K                  {k}");
            println!("eta                {eta}");
            println!("clean risk         {:.15}", r.clean_risk);
            println!("noisy (enumerated) {:.15}", r.noisy_risk_enumerated);
            println!("noisy (predicted)  {:.15}", r.noisy_risk_predicted);
            println!("residual           {:.3e}", r.residual);
            println!("sum spread         {:.3e}", r.constant_sum_spread);
            println!("status             {}", if r.passed() { "PASS" } else { "FAIL" });
            Ok(r.passed())
        }
        2 => {
            let grid = simplex_grid(k, grid_step)?;
            let check = verify_lemma2_hypotheses(&loss, &grid)?;
            println!("loss       {loss}");
            println!("K          {k}");
            println!("bound      0 <= L(p,k) <= {}", check.bound);
            println!("checked    {} (point, class) pairs", check.checked);
            println!("violations {}", check.violations.len());
            for v in check.violations.iter().take(10) {
                println!("  p={:?} k={} L={:.6}", grid[v.point].as_slice(), v.class, v.value);
            }
            if check.violations.len() > 10 {
                println!("  ... {} more", check.violations.len() - 10);
            }
            println!("status     {}", if check.holds() { "holds" } else { "violated" });
            // violations are a finding to report, not a failure of the run
            Ok(true)
        }
        _ => {
            let Loss::Combined(apl) = &loss else {
                return Err(Error::Config(format!("lemma 3 needs an APL loss, got `{loss}`")));
            };
            let (probs, _) = random_set(k, samples.max(1), seed)?;
            let spread = verify_lemma3(apl, &probs)?;
            let c = normloss::theory::constant_sum(&loss, &probs[0])?;
            println!("loss       {loss}");
            println!("K          {k}");
            println!("sum        {c:.15}");
            println!("spread     {spread:.3e}");
            let ok = spread <= normloss::theory::RESIDUAL_TOL;
            println!("status     {}", if ok { "PASS" } else { "FAIL" });
            Ok(ok)
        }
    }
}

fn cmd_grid(config: PathBuf, alphas: &[f64], betas: &[f64]) -> Result<bool> {
    let config = load_config(&config)?;
    let rows = alpha_beta_grid(&config, alphas, betas)?;
    println!(
        "{:>8} {:>8} {:>8} {:>8} {:>8}",
        "alpha", "beta", "val%", "test%", "best"
    );
    for r in &rows {
        println!(
            "{:>8} {:>8} {:>8} {:>8} {:>8}",
            r.alpha,
            r.beta,
            r.summary.val_acc_mean.map(pct).unwrap_or_default(),
            pct(r.summary.final_acc_mean),
            if r.best { "*" } else { "" }
        );
    }
    println!("wrote {}", config.output_dir.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Gradcheck { loss, k, trials, seed } => cmd_gradcheck(&loss, k, trials, seed),
        Command::Verify {
            lemma,
            loss,
            eta,
            k,
            grid_step,
            samples,
            seed,
        } => cmd_verify(lemma, &loss, eta, k, grid_step, samples, seed),
        Command::Grid { config, alphas, betas } => cmd_grid(config, &alphas, &betas),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", serde_json::json!({"error": {"kind": "check_failed", "message": "one or more checks failed"}}));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(2)
        }
    }
}
