use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use packattack::attack::{stealth_score, AttackSpec, VehicleState};
use packattack::data::DataDir;
use packattack::runner::{
    baseline_of, compare, compare_paired, comparison_csv, daily_series_csv, run_batch, run_with_baseline, to_json,
    RunError, ScenarioReport,
};
use packattack::scenario::{ConfigError, Scenario};
use serde_json::Value;

#[derive(Parser)]
#[command(
    name = "packattack",
    version,
    about = "EV battery pack degradation under cyberattacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (and its attack-free baseline) and write the report.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write the daily series as CSV.
        #[arg(long)]
        daily_csv: Option<PathBuf>,
    },
    /// Tabulate attack reports against a baseline report.
    Compare {
        baseline: PathBuf,
        #[arg(required = true)]
        attacks: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Arguments alternate baseline, attack, baseline, attack, ... (one baseline per attack).
        #[arg(long)]
        paired: bool,
    },
    /// Run a scenario over a grid of values for one numeric field.
    Sweep {
        /// Dotted path into the scenario JSON, e.g. `attack.overcharge_offset`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        scenario: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the stealth table of an attack (an attack spec or a scenario with one).
    Stealth { attack: PathBuf },
}

/// Exit code for a failure: 2 for bad inputs, 3 when the simulation itself failed.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return if e.is_config() { 2 } else { 3 };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
    }
    2
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    Scenario::from_json(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_report(path: &Path) -> anyhow::Result<ScenarioReport> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| ConfigError::Invalid(e.to_string()))
        .with_context(|| format!("report {}", path.display()))
}

fn simulate(scenario: &Path, output: Option<&Path>, daily_csv: Option<&Path>) -> anyhow::Result<()> {
    let s = load_scenario(scenario)?;
    let report = run_with_baseline(&s, &DataDir::from_env())?;
    write_or_print(output, &to_json(&report)?)?;
    if let Some(p) = daily_csv {
        std::fs::write(p, daily_series_csv(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn compare_cmd(baseline: &Path, attacks: &[PathBuf], output: Option<&Path>, paired: bool) -> anyhow::Result<()> {
    let rows = if paired {
        let mut files = vec![baseline.to_path_buf()];
        files.extend_from_slice(attacks);
        if files.len() % 2 != 0 {
            bail!(ConfigError::Invalid("--paired needs baseline/attack pairs".into()));
        }
        let pairs = files
            .chunks(2)
            .map(|c| Ok((load_report(&c[0])?, load_report(&c[1])?)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        compare_paired(&pairs)?
    } else {
        let base = load_report(baseline)?;
        let reports = attacks
            .iter()
            .map(|p| load_report(p))
            .collect::<anyhow::Result<Vec<_>>>()?;
        compare(&base, &reports)?
    };
    write_or_print(output, &comparison_csv(&rows)?)
}

fn set_path(root: &mut Value, path: &str, value: f64) -> anyhow::Result<()> {
    let mut node = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        let obj = node.as_object_mut().ok_or_else(|| {
            anyhow!(ConfigError::Invalid(format!(
                "`{path}`: `{key}` is not inside an object"
            )))
        })?;
        if keys.peek().is_none() {
            let number = serde_json::Number::from_f64(value)
                .ok_or_else(|| anyhow!(ConfigError::Invalid(format!("value {value} is not finite"))))?;
            // Integer fields (days, seeds) must stay integers.
            let v = if value.fract() == 0.0 && obj.get(key).is_some_and(|v| v.is_u64()) {
                Value::from(value as u64)
            } else {
                Value::Number(number)
            };
            obj.insert(key.to_string(), v);
            return Ok(());
        }
        node = obj
            .get_mut(key)
            .ok_or_else(|| anyhow!(ConfigError::Invalid(format!("`{path}`: no field `{key}`"))))?;
    }
    unreachable!("split yields at least one key")
}

fn sweep(param: &str, values: &[f64], scenario: &Path, output: Option<&Path>) -> anyhow::Result<()> {
    let template: Value = serde_json::from_str(&read(scenario)?)
        .map_err(|e| ConfigError::Invalid(e.to_string()))
        .with_context(|| format!("in {}", scenario.display()))?;
    let mut attacks = Vec::new();
    for &v in values {
        let mut doc = template.clone();
        set_path(&mut doc, param, v)?;
        let mut s = Scenario::from_json(&doc.to_string()).with_context(|| format!("{param} = {v}"))?;
        if s.attack.is_none() {
            bail!(ConfigError::Invalid("sweep needs a scenario with an attack".into()));
        }
        s.name = format!(
            "{}{param}={v}",
            if s.name.is_empty() {
                String::new()
            } else {
                format!("{} ", s.name)
            }
        );
        attacks.push(s);
    }
    // Baselines are shared unless the swept field changes them.
    let mut baselines: Vec<Scenario> = Vec::new();
    let mut base_of = Vec::new();
    for s in &attacks {
        let mut b = baseline_of(s);
        b.name = "baseline".into();
        let k = baselines.iter().position(|x| *x == b).unwrap_or_else(|| {
            baselines.push(b);
            baselines.len() - 1
        });
        base_of.push(k);
    }
    let data = DataDir::from_env();
    let all: Vec<Scenario> = attacks.iter().cloned().chain(baselines.iter().cloned()).collect();
    let reports = run_batch(&all, &data).into_iter().collect::<Result<Vec<_>, _>>()?;
    let (attack_reports, base_reports) = reports.split_at(attacks.len());
    let pairs: Vec<_> = attack_reports
        .iter()
        .zip(&base_of)
        .map(|(a, &k)| (base_reports[k].clone(), a.clone()))
        .collect();
    write_or_print(output, &comparison_csv(&compare_paired(&pairs)?)?)
}

fn stealth(path: &Path) -> anyhow::Result<()> {
    let text = read(path)?;
    let spec = match serde_json::from_str::<AttackSpec>(&text) {
        Ok(spec) => spec,
        Err(_) => Scenario::from_json(&text)
            .with_context(|| format!("{} is neither an attack spec nor a scenario", path.display()))?
            .attack
            .ok_or_else(|| anyhow!(ConfigError::Invalid("scenario has no attack".into())))?,
    };
    let score = stealth_score(&spec.components).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let names: Vec<String> = spec.components.iter().map(|c| format!("{c:?}")).collect();
    println!("components: {}", names.join(", "));
    println!("{:<12} stealth", "state");
    for state in [VehicleState::Parked, VehicleState::Stationary, VehicleState::Driving] {
        println!("{:<12} {}", format!("{state:?}"), score.get(state).label());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate {
            scenario,
            output,
            daily_csv,
        } => simulate(scenario, output.as_deref(), daily_csv.as_deref()),
        Command::Compare {
            baseline,
            attacks,
            output,
            paired,
        } => compare_cmd(baseline, attacks, output.as_deref(), *paired),
        Command::Sweep {
            param,
            values,
            scenario,
            output,
        } => sweep(param, values, scenario, output.as_deref()),
        Command::Stealth { attack } => stealth(attack),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
