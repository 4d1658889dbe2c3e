use std::path::Path;
use std::str::FromStr;

use serde_json::json;
use ssanet_core::arch::{build_variant, gradcheck_network, ArchConfig, VariantId};
use ssanet_core::data::{
    self, generate_dataset, load_dataset, make_split, DatasetSplit, SampleRecord, SynthConfig,
};
use ssanet_core::engine::{primitive_suite, GradCheckConfig, GradCheckReport, Primitive, Shape};
use ssanet_core::spectral::{self, GaussianSpec, Signal};
use ssanet_core::train::{
    ablation_sweep, evaluate_with, load_checkpoint, save_checkpoint, train as run_training,
    write_ablation_csv, EvalOptions, TrainConfig,
};
use ssanet_core::Error;

use crate::output::Outputs;
use crate::{AblateArgs, EvalArgs, GradcheckArgs, SpectrumArgs, SynthArgs, TrainArgs};

/// Input size of the whole-network gradient check.
const NETWORK_CHECK_INPUT: Shape = Shape {
    n: 1,
    c: 1,
    h: 16,
    w: 16,
};

fn log_config(command: &str, config: serde_json::Value) {
    log::info!("{command} resolved config: {config}");
}

fn eval_threads() -> Result<usize, Error> {
    match std::env::var("SSANET_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!(
                "SSANET_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn profile_config(name: &str) -> Result<ArchConfig, Error> {
    match name {
        "desk" => Ok(ArchConfig::desk()),
        "resnet34" => Ok(ArchConfig::resnet34()),
        other => Err(Error::Usage(format!(
            "unknown profile {other:?} (expected desk or resnet34)"
        ))),
    }
}

/// Loads a dataset and splits off the first `train_count` records
/// (default: two thirds).
fn load_split(dir: &Path, train_count: Option<usize>) -> Result<DatasetSplit, Error> {
    let records = load_dataset(dir)?;
    let n_train = train_count.unwrap_or((records.len() * 2 / 3).max(1));
    Ok(make_split(records, n_train)?)
}

fn channels(records: &[SampleRecord]) -> usize {
    records.first().map_or(1, |r| r.image.shape().c)
}

pub fn spectrum(a: &SpectrumArgs) -> Result<(), Error> {
    log_config(
        "spectrum",
        json!({"length": a.length, "sigma": a.sigma, "seed": a.seed, "out": a.out}),
    );
    let gauss = GaussianSpec::with_sigma(a.sigma)?;
    let noise = Signal::white_noise(a.seed, a.length)?;
    let input = spectral::gaussian_blur(&noise, &gauss)?;
    let report = spectral::approximation_report(&input, &gauss)?;
    let decimated = spectral::decimate(&input, 2)?;
    let signals = [
        ("signal", input.clone()),
        ("gaussian", spectral::gaussian_blur(&input, &gauss)?),
        ("comb", spectral::comb_subsample(&input, 2)?),
        ("upsampled", spectral::zero_insert(&decimated, 2)?),
        ("ssa", spectral::ssa_downscale(&input)?),
        ("decimated", decimated),
    ];
    let mut out = Outputs::default();
    out.dir(&a.out)?;
    for (name, sig) in &signals {
        let spec = spectral::dft(sig);
        if spec
            .bins()
            .iter()
            .any(|b| !b.re.is_finite() || !b.im.is_finite())
        {
            return Err(Error::Numerical(format!(
                "spectrum of {name} is not finite"
            )));
        }
        let mut buf = Vec::new();
        sig.write_csv(&mut buf)
            .map_err(|e| Error::io(name.to_string(), e))?;
        out.write(a.out.join(format!("{name}.csv")), buf)?;
        let mut buf = Vec::new();
        spec.write_csv(&mut buf)
            .map_err(|e| Error::io(name.to_string(), e))?;
        out.write(a.out.join(format!("{name}_spectrum.csv")), buf)?;
    }
    let mut json = serde_json::to_value(report).expect("report serializes");
    json["length"] = json!(a.length);
    json["sigma"] = json!(a.sigma);
    json["seed"] = json!(a.seed);
    out.write(
        a.out.join("report.json"),
        serde_json::to_string_pretty(&json).unwrap(),
    )?;
    println!(
        "dist_ssa_gauss {:.6} dist_comb_gauss {:.6}",
        report.dist_ssa_gauss, report.dist_comb_gauss
    );
    out.commit();
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<(), Error> {
    let cfg = SynthConfig {
        image_size: a.size,
        seed: a.seed,
        ..SynthConfig::default()
    };
    log_config("synth", json!({"n": a.n, "config": cfg, "out": a.out}));
    if a.n == 0 {
        return Err(Error::Usage("--n must be positive".into()));
    }
    let records = generate_dataset(&cfg, a.n)?;
    let mut out = Outputs::default();
    out.dir(&a.out)?;
    for sub in ["images", "masks", "fov"] {
        out.dir(&a.out.join(sub))?;
        for r in &records {
            out.file(a.out.join(sub).join(format!("{}.pgm", r.id)));
        }
    }
    data::write_dataset(&a.out, &records)?;
    let fractions: Vec<f64> = records.iter().map(SampleRecord::vessel_fraction).collect();
    log::info!(
        "wrote {} records; vessel fraction in FOV {:.4}..{:.4}",
        records.len(),
        fractions.iter().copied().fold(f64::INFINITY, f64::min),
        fractions.iter().copied().fold(0.0, f64::max)
    );
    out.commit();
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), Error> {
    let variant = VariantId::from_str(&a.variant)?;
    let split = load_split(&a.data, a.train_count)?;
    let cfg = TrainConfig {
        variant,
        arch: profile_config(&a.profile)?.with_input_channels(channels(&split.train)),
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        batch: a.batch,
        seed: a.seed,
        flips: !a.no_flips,
        crop: a.crop,
    };
    log_config(
        "train",
        json!({"config": cfg, "data": a.data, "train_count": split.train.len(), "out": a.out, "history": a.history}),
    );
    let (ckpt, history) = run_training(&cfg, &split)?;
    let mut out = Outputs::default();
    if let Some(parent) = a.out.parent() {
        out.dir(parent)?;
    }
    save_checkpoint(&ckpt, &out.file(a.out.clone()))?;
    if let Some(path) = &a.history {
        let mut buf = Vec::new();
        history
            .write_csv(&mut buf)
            .map_err(|e| Error::io("history", e))?;
        out.write(path.clone(), buf)?;
    }
    if let Some(last) = history.loss.last() {
        log::info!("final epoch loss {last:.6} after {} steps", ckpt.step);
    }
    out.commit();
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), Error> {
    let threads = eval_threads()?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    if let Some(profile) = &a.profile {
        ckpt.ensure_config(
            &profile_config(profile)?.with_input_channels(ckpt.config.input_channels),
        )?;
    }
    let records = load_dataset(&a.data)?;
    if a.train_count >= records.len() {
        return Err(Error::Usage(format!(
            "--train-count {} leaves no test records out of {}",
            a.train_count,
            records.len()
        )));
    }
    let test = &records[a.train_count..];
    log_config(
        "eval",
        json!({"ckpt": a.ckpt, "variant": ckpt.variant, "config": ckpt.config, "data": a.data,
               "test_count": test.len(), "threads": threads, "out": a.out}),
    );
    let report = evaluate_with(
        &ckpt,
        test,
        &EvalOptions {
            threads,
            ..EvalOptions::default()
        },
    )?;
    let mut out = Outputs::default();
    out.dir(&a.out)?;
    out.dir(&a.out.join("per_image"))?;
    for name in ["curve.csv", "summary.json", "per_image.json"] {
        out.file(a.out.join(name));
    }
    for (id, _) in &report.per_image {
        out.file(a.out.join("per_image").join(format!("{id}.csv")));
    }
    report
        .write_dir(&a.out)
        .map_err(|e| Error::io(format!("writing {}", a.out.display()), e))?;
    let s = report.pooled.summary();
    if ![s.pr_auc, s.roc_auc, s.best_dice]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::Numerical(
            "evaluation produced non-finite metrics".into(),
        ));
    }
    out.commit();
    println!("{} {} {}", s.pr_auc, s.roc_auc, s.best_dice);
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<(), Error> {
    let variants = a
        .variants
        .iter()
        .map(|v| VariantId::from_str(v.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if variants.is_empty() {
        return Err(Error::Usage(
            "--variants must name at least one variant".into(),
        ));
    }
    let threads = eval_threads()?;
    let split = load_split(&a.data, a.train_count)?;
    let template = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        arch: ArchConfig::desk().with_input_channels(channels(&split.train)),
        ..TrainConfig::default()
    };
    log_config(
        "ablate",
        json!({"variants": variants, "template": template, "data": a.data,
               "train_count": split.train.len(), "threads": threads, "out": a.out}),
    );
    let rows = ablation_sweep(
        &variants,
        &template,
        &split,
        &EvalOptions {
            threads,
            ..EvalOptions::default()
        },
    );
    let mut buf = Vec::new();
    write_ablation_csv(&rows, &mut buf).map_err(|e| Error::io("ablation table", e))?;
    let mut out = Outputs::default();
    if let Some(parent) = a.out.parent() {
        out.dir(parent)?;
    }
    out.write(a.out.clone(), buf)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!(
            "{failed} of {} variants failed; see the marked rows",
            rows.len()
        );
    }
    out.commit();
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Error> {
    let cfg = GradCheckConfig {
        samples_per_param: a.samples,
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let mut primitives = Vec::new();
    let mut network = a.ops.is_empty();
    if a.ops.is_empty() {
        primitives.extend(Primitive::ALL);
    }
    for name in &a.ops {
        let name = name.trim();
        if name == "network" {
            network = true;
            continue;
        }
        let found = Primitive::matching(name);
        if found.is_empty() {
            let known: Vec<&str> = Primitive::ALL.iter().map(|p| p.name()).collect();
            return Err(Error::Usage(format!(
                "unknown op {name:?}; known: {}, network",
                known.join(", ")
            )));
        }
        for p in found {
            if !primitives.contains(&p) {
                primitives.push(p);
            }
        }
    }
    log_config(
        "gradcheck",
        json!({"ops": primitives.iter().map(|p| p.name()).collect::<Vec<_>>(), "network": network,
               "epsilon": cfg.epsilon, "samples_per_param": cfg.samples_per_param,
               "tolerance": cfg.tolerance, "seed": cfg.seed}),
    );
    let mut rows: Vec<(String, GradCheckReport)> = Vec::new();
    for p in primitives {
        rows.push((p.name().to_string(), primitive_suite(p, &cfg)?));
    }
    if network {
        let spec = build_variant(VariantId::MsresnetSsa2, &ArchConfig::desk())?;
        rows.push((
            "network_ssa2_desk".into(),
            gradcheck_network(&spec, NETWORK_CHECK_INPUT, &cfg)?,
        ));
    }
    println!(
        "{:<20} {:>14} {:>8}  status",
        "op", "max_rel_error", "checked"
    );
    let mut failures = Vec::new();
    for (name, report) in &rows {
        let ok = report.passed(cfg.tolerance);
        println!(
            "{:<20} {:>14.3e} {:>8}  {}",
            name,
            report.max_rel_error(),
            report.checked(),
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failures.push(name.clone());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed for {} (tolerance {:e})",
            failures.join(", "),
            cfg.tolerance
        )))
    }
}
