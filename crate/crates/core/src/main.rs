use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use risloc::channel::Scenario;
use risloc::harness::{
    export, grid_bounds, random_pose, run_campaign, run_trial_at, run_validation, trial_seed, CampaignConfig,
    RisMode, TrialSetup,
};
use risloc::sampler::NutsConfig;
use risloc::SeededRng;

/// RIS-aided 6D pose estimation: bounds, sampling trials and campaigns.
#[derive(Debug, Parser)]
#[command(name = "risloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print PEB/REB over the 5×5×2 pose grid (no sampling).
    Bounds(Common),
    /// Run a single trial and print the estimate and diagnostics.
    Trial(Common),
    /// Run the full (σ², RIS) grid and export the results.
    Campaign(Common),
    /// Run the Jacobian, tensor and NUTS oracle suites.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML campaign configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to a single CE error variance.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Disable the RIS path.
    #[arg(long)]
    no_ris: bool,
    /// Trials per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Desk-scale sampler: one chain, 500 tuning + 500 draws.
    #[arg(long)]
    fast: bool,
}

impl Common {
    fn config(&self) -> risloc::Result<CampaignConfig> {
        let mut cfg = match &self.config {
            Some(p) => CampaignConfig::load(p)?,
            None => CampaignConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.root_seed = s;
        }
        if let Some(s) = self.sigma2 {
            cfg.sigma2_list = vec![s];
        }
        if self.no_ris {
            cfg.ris_modes = vec![RisMode::Off];
        }
        if let Some(n) = self.trials {
            cfg.n_trials = n;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.fast {
            cfg.nuts = NutsConfig { seed: cfg.nuts.seed, ..NutsConfig::fast() };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn bounds(cfg: &CampaignConfig) -> risloc::Result<()> {
    println!("sigma2,ris,x,y,z,alpha,beta,gamma,peb,reb,peb_pinv,reb_pinv,fim_rank");
    for &(sigma2, mode) in &cfg.cells() {
        let sc: Scenario = cfg.scenario.with_ris(mode.enabled());
        for (p, b) in grid_bounds(&sc, sigma2)? {
            let z = p.to_array();
            println!(
                "{sigma2},{},{},{},{},{},{},{},{},{},{},{},{}",
                mode.label(),
                z[0],
                z[1],
                z[2],
                z[3],
                z[4],
                z[5],
                b.peb,
                b.reb,
                b.peb_pinv(),
                b.reb_pinv(),
                b.fim_rank
            );
        }
    }
    Ok(())
}

fn trial(cfg: &CampaignConfig) -> risloc::Result<()> {
    let mut rng = SeededRng::seed_from_u64(trial_seed(cfg.root_seed, u64::MAX, 0));
    let truth = random_pose(&cfg.scenario, cfg.prior.epsilon, &mut rng)?;
    let setup = TrialSetup::from(cfg);
    for (cell, &(sigma2, mode)) in cfg.cells().iter().enumerate() {
        let r = run_trial_at(&truth, sigma2, mode.enabled(), &setup, trial_seed(cfg.root_seed, cell as u64, 0))?;
        println!("sigma2 = {sigma2:e}, RIS {}", mode.label());
        println!("  truth     {:?}", truth.to_array());
        if let Some(e) = &r.estimate {
            println!("  estimate  {:?}", e.pose_mean.to_array());
        }
        println!(
            "  position error {} m (PEB {}), rotation error {} rad (REB {})",
            r.position_error().map_or("-".into(), |v| format!("{v:.4e}")),
            r.peb,
            r.rotation_error().map_or("-".into(), |v| format!("{v:.4e}")),
            r.reb
        );
        println!(
            "  R-hat max {:.4}, divergences {}, mean accept {:.3}, step size {:.3e}, {:.2} s",
            r.rhat_max, r.divergences, r.accept_mean, r.step_size, r.wall_time
        );
        if let Some(f) = &r.failure {
            println!("  sampler failure: {f}");
        }
    }
    Ok(())
}

fn campaign(cfg: &CampaignConfig) -> risloc::Result<()> {
    let table = run_campaign(cfg)?;
    for path in export(&table, &cfg.output_dir)? {
        println!("wrote {}", path.display());
    }
    for s in table.summaries() {
        println!(
            "{:8} RIS {:3} sigma2 {:>6}: p90 {:.4e}, median {:.4e}, mean bound {:.4e} (n = {}, failures = {})",
            s.metric.label(),
            s.ris.label(),
            risloc::harness::sigma2_label(s.sigma2),
            s.p90,
            s.median,
            s.mean_bound,
            s.n,
            s.failures
        );
    }
    Ok(())
}

fn validate(cfg: &CampaignConfig) -> bool {
    let mut ok = true;
    for c in run_validation(cfg.root_seed) {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Bounds(common) | Command::Trial(common) | Command::Campaign(common) | Command::Validate(common)) =
        &cli.command;
    let cfg = match common.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Bounds(_) => bounds(&cfg),
        Command::Trial(_) => trial(&cfg),
        Command::Campaign(_) => campaign(&cfg),
        Command::Validate(_) => {
            return if validate(&cfg) { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
