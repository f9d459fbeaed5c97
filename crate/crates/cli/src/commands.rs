use std::path::{Path, PathBuf};

use attn_align::analytic::{
    analyze_lengths, approx_pmax, curve_to_csv, encoder_average_vector, gaussian_samples, qq_check,
    reports_from_csv, reports_to_csv, run_oracle_suite, temperature_curve, FitScope, GaussianFit,
    LengthReport, OracleConfig, TemperatureRow,
};
use attn_align::calibration::{calibrate_with, CalibrationOptions};
use attn_align::encoder::{
    init_encoder, random_sequences, read_sequences, sequences_to_jsonl, EncoderConfig,
    EncoderWeights, TokenId,
};
use attn_align::rpe_bias::{bias_profile, profile_to_csv, tables_from_json};
use attn_align::tasks::{
    dispersed_attention_demo, gen_lines, gen_passkey, tasks_to_jsonl, Passkey,
};
use log::warn;
use serde_json::json;

use crate::args::*;
use crate::output::{emit, sibling, write_atomic};
use crate::CliError;

/// Below this many samples the oracle tolerances are not expected to hold.
const MIN_ORACLE_SAMPLES: usize = 1000;

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::PredictTau(a) => predict_tau(a),
        Command::Analyze(a) => analyze(a),
        Command::Oracle(a) => oracle(a),
        Command::Demo(a) => demo(a),
        Command::BucketTable(a) => bucket_table(a),
        Command::Qq(a) => qq(a),
        Command::Init(a) => init(a),
        Command::Gen(a) => gen(a),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn load_model(path: &Path) -> Result<EncoderWeights, CliError> {
    Ok(EncoderWeights::from_json(&read_text(path)?)?)
}

fn load_seqs(path: &Path) -> Result<Vec<Vec<TokenId>>, CliError> {
    let seqs = read_sequences(read_text(path)?.as_bytes())?;
    if seqs.is_empty() {
        return Err(CliError::Usage(format!("{}: no sequences", path.display())));
    }
    Ok(seqs)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(attn_align::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let short = load_seqs(&a.short_seqs)?;
    let long = load_seqs(&a.long_seqs)?;
    let result = calibrate_with(
        &model,
        &short,
        &long,
        a.mode,
        CalibrationOptions { refine: a.refine },
    )?;
    if !result.monotone {
        warn!("statistic is not monotone over the temperature grid");
    }
    match (a.common.format, &a.common.out) {
        (Some(Format::Csv), out) => emit(out.as_deref(), &result.grid_csv()),
        (_, Some(out)) => {
            write_atomic(out, &format!("{}\n", result.to_json()?))?;
            write_atomic(&sibling(out, "grid.csv"), &result.grid_csv())
        }
        (_, None) => emit(None, &format!("{}\n", result.to_json()?)),
    }
}

/// Training fit, measured or derived `p_max_tr`, and extrapolation fits.
fn predict_inputs(a: &PredictArgs) -> Result<(GaussianFit, f64, Vec<GaussianFit>), CliError> {
    if let Some(path) = &a.analysis {
        let reports = reports_from_csv(&read_text(path)?)?;
        let train_len = match a.l_tr {
            Some(l) => l,
            None => reports
                .iter()
                .map(|r| r.length)
                .min()
                .ok_or_else(|| CliError::Usage(format!("{}: no rows", path.display())))?,
        };
        let find = |l: usize| -> Result<&LengthReport, CliError> {
            reports.iter().find(|r| r.length == l).ok_or_else(|| {
                CliError::Usage(format!("{}: no row for length {l}", path.display()))
            })
        };
        let train = find(train_len)?;
        let ex = match &a.lengths {
            Some(ls) => ls
                .iter()
                .map(|&l| find(l).map(LengthReport::fit))
                .collect::<Result<_, _>>()?,
            None => reports
                .iter()
                .filter(|r| r.length >= train_len)
                .map(LengthReport::fit)
                .collect(),
        };
        return Ok((train.fit(), a.pmax_tr.unwrap_or(train.p_max), ex));
    }

    let missing = |flag: &str| CliError::Usage(format!("predict-tau needs {flag} (or --analysis)"));
    let l_tr = a.l_tr.ok_or_else(|| missing("--l-tr"))?;
    let lengths = a.lengths.clone().ok_or_else(|| missing("--lengths"))?;
    let sigma = a.sigma.ok_or_else(|| missing("--sigma"))?;
    let sigma_tr = a.sigma_tr.unwrap_or(sigma);
    let l_max = a.lmax.unwrap_or(0.0);
    let p_max_tr = match (a.pmax_tr, a.lmax) {
        (Some(p), _) => p,
        (None, Some(l_max)) => approx_pmax(l_tr, sigma_tr, l_max, 1.0)?.value,
        (None, None) => return Err(missing("--pmax-tr or --lmax")),
    };
    let ex = lengths
        .iter()
        .map(|&l| GaussianFit::new(sigma, l_max, l))
        .collect();
    Ok((GaussianFit::new(sigma_tr, l_max, l_tr), p_max_tr, ex))
}

fn predict_tau(a: PredictArgs) -> Result<(), CliError> {
    let (train, p_max_tr, ex) = predict_inputs(&a)?;
    let rows = temperature_curve(&train, p_max_tr, &ex);
    let text = match a.common.format {
        Some(Format::Json) => to_json(&rows.iter().map(row_json).collect::<Vec<_>>())?,
        _ => curve_to_csv(&rows),
    };
    emit(a.common.out.as_deref(), &text)
}

fn row_json(r: &TemperatureRow) -> serde_json::Value {
    json!({
        "L_ex": r.l_ex,
        "tau_prop1": r.tau_prop1,
        "tau_prop2": r.tau_prop2,
        "tau_log": r.tau_log,
    })
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let paths: Vec<PathBuf> = a
        .seqs
        .iter()
        .chain(a.short_seqs.iter())
        .chain(a.long_seqs.iter())
        .cloned()
        .collect();
    if paths.is_empty() {
        return Err(CliError::Usage(
            "analyze needs --seqs, --short-seqs or --long-seqs".into(),
        ));
    }
    let mut seqs = Vec::new();
    for p in &paths {
        seqs.extend(load_seqs(p)?);
    }
    let scope = if a.all_layers {
        FitScope::AllLayers
    } else {
        FitScope::Layer(0)
    };
    let reports = analyze_lengths(&model, &seqs, a.tau, scope)?;
    let text = match a.common.format {
        Some(Format::Json) => to_json(&reports)?,
        _ => reports_to_csv(&reports),
    };
    emit(a.common.out.as_deref(), &text)
}

/// The deliberately wrong entropy formula behind `--sabotage-entropy`.
fn sabotaged_entropy(length: usize, sigma: f64, tau: f64) -> f64 {
    (length as f64).ln() - sigma * sigma / (tau * tau)
}

fn oracle(a: OracleArgs) -> Result<(), CliError> {
    if a.samples < MIN_ORACLE_SAMPLES {
        eprintln!(
            "warning: {} samples is too few for the tolerances to be guaranteed",
            a.samples
        );
    }
    let mut config = OracleConfig {
        sigma: a.sigma,
        tau: a.tau,
        samples: a.samples,
        seed: a.common.seed,
        ..OracleConfig::default()
    };
    if a.sabotage_entropy {
        config.entropy_formula = sabotaged_entropy;
    }
    let suite = run_oracle_suite(&config)?;
    let text = match a.common.format {
        Some(Format::Json) => to_json(&suite)?,
        _ => suite
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}: measured {:.6} reference {:.6} error {:.3e} tolerance {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.reference,
                    c.error,
                    c.tolerance
                )
            })
            .collect(),
    };
    emit(a.common.out.as_deref(), &text)?;
    match suite.checks.iter().find(|c| !c.passed) {
        None => Ok(()),
        Some(c) => Err(CliError::Verification(format!(
            "{} off by {:.3e} (tolerance {})",
            c.name, c.error, c.tolerance
        ))),
    }
}

fn demo(a: DemoArgs) -> Result<(), CliError> {
    let curve = dispersed_attention_demo(a.gap, a.sigma, &a.lengths)?;
    let text = match a.common.format {
        Some(Format::Json) => to_json(&curve)?,
        _ => curve.to_csv(),
    };
    emit(a.common.out.as_deref(), &text)
}

fn bucket_table(a: BucketArgs) -> Result<(), CliError> {
    let tables = tables_from_json(&read_text(&a.model)?)?;
    let table = tables.get(a.head).ok_or_else(|| {
        CliError::Usage(format!(
            "head {} out of range ({} heads)",
            a.head,
            tables.len()
        ))
    })?;
    let profile = bias_profile(table, a.query, a.length)?;
    let text = match a.common.format {
        Some(Format::Json) => to_json(&profile)?,
        _ => profile_to_csv(&profile),
    };
    emit(a.common.out.as_deref(), &text)
}

fn qq(a: QqArgs) -> Result<(), CliError> {
    let samples = match (&a.model, &a.seqs) {
        (Some(model), Some(seqs)) => {
            let model = load_model(model)?;
            let seqs = load_seqs(seqs)?;
            encoder_average_vector(&model, &seqs, 1.0, FitScope::Layer(0))?
                .values()
                .to_vec()
        }
        _ => gaussian_samples(a.samples, a.sigma, a.common.seed),
    };
    let report = qq_check(&samples)?;
    eprintln!("linearity {:.6}", report.linearity);
    let text = match a.common.format {
        Some(Format::Json) => to_json(&json!({
            "linearity": report.linearity,
            "points": report.points,
        }))?,
        _ => report.to_csv(),
    };
    emit(a.common.out.as_deref(), &text)
}

fn init(a: InitArgs) -> Result<(), CliError> {
    let config = EncoderConfig {
        num_layers: a.layers,
        num_heads: a.heads,
        d_model: a.d_model,
        d_kv: a.d_kv,
        d_ff: a.d_ff,
        vocab_size: a.vocab,
        seed: a.common.seed,
    };
    let weights = init_encoder(&config)?;
    emit(
        a.common.out.as_deref(),
        &format!("{}\n", weights.to_json()?),
    )
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let seed = a.common.seed;
    let text = match a.kind {
        GenKind::Random => sequences_to_jsonl(&random_sequences(a.count, a.length, a.vocab, seed))?,
        GenKind::Passkey => {
            let key = Passkey::from_digits(a.passkey);
            let tasks: Vec<_> = (0..a.count as u64)
                .map(|i| gen_passkey(&key, a.length, seed.wrapping_add(i)))
                .collect();
            tasks_to_jsonl(&tasks)?
        }
        GenKind::Lines => {
            let tasks = (0..a.count as u64)
                .map(|i| gen_lines(a.length, seed.wrapping_add(i)))
                .collect::<Result<Vec<_>, _>>()?;
            tasks_to_jsonl(&tasks)?
        }
    };
    emit(a.common.out.as_deref(), &text)
}
