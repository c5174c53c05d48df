use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sae_core::mspe::MspeMethod;
use sae_core::sim::{estimate_dataset, EstimateOutput, Registries, Study};
use sae_core::target::TargetFunction;
use serde::Serialize;

use crate::config::{EstimateConfig, Mode, RunConfig};
use crate::error::CliError;
use crate::input::{read_input, InputData};
use crate::output::{fmt_f64, pretty_study, write_study, CsvTable, OutputDir};

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    /// Raw `SAE_SEED` value.
    pub seed_env: Option<String>,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    version: &'a str,
    mode: Mode,
    seed: u64,
    threads: usize,
    started_unix: f64,
    finished_unix: f64,
    elapsed_secs: f64,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Validates, runs and writes every output. Returns the terminal summary.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<String, CliError> {
    let registries = Registries::default();
    let issues = config.validate(&registries);
    if !issues.is_empty() {
        return Err(CliError::Invalid(issues));
    }
    let seed = config.effective_seed(options.seed_env.as_deref())?;
    let threads = options.threads.or(config.threads);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Threads(e.to_string()))?;

    let started = unix_now();
    let clock = Instant::now();
    let out = OutputDir::create(&config.output_dir, &config.formats)?;
    let summary = match config.mode {
        Mode::Simulate => {
            let mut study_config = config.study.clone().expect("validated");
            study_config.seed = seed;
            let study = Study::new(study_config, &registries)?;
            let records = pool.install(|| study.run());
            let tables = study.tables(&records);
            write_study(&out, &tables, seed)?;
            pretty_study(&tables)
        }
        Mode::Estimate => {
            let e = config.estimate.as_ref().expect("validated");
            let (input, result) = pool.install(|| estimate(e, &registries, seed))?;
            write_estimate(&out, &input, &result)?;
            pretty_estimate(&input, &result)
        }
    };
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        mode: config.mode,
        seed,
        threads: pool.current_num_threads(),
        started_unix: started,
        finished_unix: unix_now(),
        elapsed_secs: clock.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("plain struct") + "\n";
    out.write_file("metadata.json", text.as_bytes())?;
    out.finish()?;
    Ok(summary)
}

fn estimate(e: &EstimateConfig, registries: &Registries, seed: u64) -> Result<(InputData, EstimateOutput), CliError> {
    // Checked once with p = 0 for the name; rebuilt with the real p.
    let kind = registries.models.build(&e.model, 0)?.kind();
    let input = read_input(&e.input, kind)?;
    let model = registries.models.build(&e.model, input.data.designs[0].x.len())?;
    let fitter = match &e.fitter {
        Some(name) => registries.fitters.build(name, &e.fit)?,
        None => registries.fitters.default_for(&e.model, &e.fit)?,
    };
    let xi = registries.xi.build(&e.xi)?;
    let h = TargetFunction::from_name(&e.target).expect("validated");
    let methods = e
        .methods
        .iter()
        .map(|n| registries.mspe.get(n))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&dyn MspeMethod> = methods.iter().map(|m| m.as_ref()).collect();
    let result = estimate_dataset(
        &input.data,
        model.as_ref(),
        fitter.as_ref(),
        &h,
        xi.as_ref(),
        &e.mspe,
        &refs,
        seed,
    )?;
    Ok((input, result))
}

#[derive(Debug, Serialize)]
struct EbpRow<'a> {
    area: &'a str,
    beta_hat: f64,
    method: &'static str,
    tail_fallback: bool,
}

#[derive(Debug, Serialize)]
struct EbpFile<'a> {
    fit: &'a sae_core::estimators::FitResult,
    j_resamples: usize,
    bandwidth: f64,
    areas: Vec<EbpRow<'a>>,
}

#[derive(Debug, Serialize)]
struct MspeRow<'a> {
    area: &'a str,
    method: &'a str,
    beta_hat: f64,
    mspe: f64,
    m1: f64,
    m2: f64,
    negative: bool,
    stencil_shrunk: bool,
    tilt: Option<&'a sae_core::mspe::TiltOutcome>,
}

fn write_estimate(out: &OutputDir, input: &InputData, result: &EstimateOutput) -> Result<(), CliError> {
    let ebp = &result.ebp;
    let rows: Vec<EbpRow> = input
        .areas
        .iter()
        .enumerate()
        .map(|(i, a)| EbpRow {
            area: a,
            beta_hat: ebp.beta_hat[i],
            method: ebp.method[i].tag(),
            tail_fallback: ebp.tail_fallback.get(i).copied().unwrap_or(false),
        })
        .collect();
    let mut csv = CsvTable::new(&["area", "beta_hat", "method", "tail_fallback"]);
    for r in &rows {
        csv.push(vec![
            r.area.into(),
            fmt_f64(r.beta_hat),
            r.method.into(),
            r.tail_fallback.to_string(),
        ]);
    }
    let file = EbpFile {
        fit: &result.fit,
        j_resamples: ebp.j_resamples,
        bandwidth: ebp.bandwidth,
        areas: rows,
    };
    out.write_table("ebp", &csv, &file)?;

    let mut rows = Vec::new();
    for report in &result.reports {
        for (i, a) in report.areas.iter().enumerate() {
            rows.push(MspeRow {
                area: &input.areas[i],
                method: &report.method,
                beta_hat: ebp.beta_hat[i],
                mspe: a.mspe,
                m1: a.m1,
                m2: a.m2,
                negative: a.negative,
                stencil_shrunk: a.stencil_shrunk,
                tilt: a.tilt.as_ref(),
            });
        }
    }
    let mut csv = CsvTable::new(&[
        "area",
        "method",
        "beta_hat",
        "mspe",
        "m1",
        "m2",
        "negative",
        "stencil_shrunk",
        "tilt_accepted",
        "tilt_gate",
        "tilt_b_star",
    ]);
    for r in &rows {
        let (accepted, gate, b) = match r.tilt {
            Some(t) => (t.accepted.to_string(), fmt_f64(t.gate), fmt_f64(t.b_star_i)),
            None => (String::new(), String::new(), String::new()),
        };
        csv.push(vec![
            r.area.into(),
            r.method.into(),
            fmt_f64(r.beta_hat),
            fmt_f64(r.mspe),
            fmt_f64(r.m1),
            fmt_f64(r.m2),
            r.negative.to_string(),
            r.stencil_shrunk.to_string(),
            accepted,
            gate,
            b,
        ]);
    }
    out.write_table("mspe", &csv, &rows)
}

fn pretty_estimate(input: &InputData, result: &EstimateOutput) -> String {
    let mut s = format!("{:<12}{:>12}", "area", "ebp");
    for r in &result.reports {
        s += &format!("{:>12}", r.method);
    }
    s.push('\n');
    for (i, area) in input.areas.iter().enumerate() {
        s += &format!("{:<12}{:>12.4}", area, result.ebp.beta_hat[i]);
        for r in &result.reports {
            s += &format!("{:>12.4}", r.areas[i].mspe);
        }
        s.push('\n');
    }
    s
}
