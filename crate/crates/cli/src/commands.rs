use std::fmt;
use std::fs;
use std::path::Path;

use pathogenx::config::KeyValues;
use pathogenx::data::{
    generate_synthetic, load_manifest, load_manifest_images, read_manifest, save_dataset,
    PatientRecord, SynthConfig,
};
use pathogenx::diagnostics::{gradient_suite, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
use pathogenx::model::PathoGenX;
use pathogenx::survival::{c_index, correlation_report, KmReport};
use pathogenx::train::{
    ablation_alignment, cross_validate, load_checkpoint, predict_checkpoint, save_checkpoint,
    write_ablation_csv, write_cv_csv, write_log_csv, Checkpoint, GenomicCox, LogRow, MeanMil,
    Method, SurvivalModel, TrainConfig, Trainer,
};
use pathogenx::{Error, Tensor};

use crate::{
    ConfigArgs, CorrelateArgs, CrossvalArgs, EvalArgs, GenerateArgs, GradcheckArgs, KmArgs,
    TrainArgs,
};

pub enum Failure {
    Lib(Error),
    Gradcheck(Vec<&'static str>),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Lib(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Gradcheck(ops) => write!(f, "gradient check failed for {}", ops.join(", ")),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| io_error(path, e).into())
}

/// `key = value` lines naming the command, its inputs and its resolved
/// configuration.
fn header_lines(command: &str, inputs: &[(&str, &Path)], config: &str) -> Vec<String> {
    let mut lines = vec![format!("pathogenx {command}")];
    lines.extend(inputs.iter().map(|(k, p)| format!("{k} = {}", p.display())));
    lines.extend(config.lines().map(str::to_string));
    lines
}

fn header(command: &str, inputs: &[(&str, &Path)], config: &str) -> Vec<u8> {
    header_lines(command, inputs, config)
        .iter()
        .flat_map(|l| format!("# {l}\n").into_bytes())
        .collect()
}

fn resolve<C: KeyValues>(
    mut base: C,
    args: &ConfigArgs,
    flags: &[(&str, Option<String>)],
) -> Outcome<C> {
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        base.apply_text(&text, path)?;
    }
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        base.set(k.trim(), v.trim())?;
    }
    let seed = args.seed.map(|s| s.to_string());
    for (k, v) in flags.iter().chain([&("seed", seed)]) {
        if let Some(v) = v {
            base.set(k, v)?;
        }
    }
    Ok(base)
}

fn train_flags(
    method: Option<Method>,
    epochs: Option<usize>,
) -> [(&'static str, Option<String>); 2] {
    [
        ("method", method.map(|m| m.to_string())),
        ("epochs", epochs.map(|e| e.to_string())),
    ]
}

/// Records for training `method`; image-only methods never open genomic
/// files.
fn training_records(manifest: &Path, method: Method) -> Outcome<Vec<PatientRecord>> {
    Ok(match method {
        Method::MeanMil => load_manifest_images(manifest)?,
        _ => load_manifest(manifest)?,
    })
}

pub fn generate(a: &GenerateArgs) -> Outcome {
    let cfg = resolve(SynthConfig::default(), &a.config, &[])?;
    cfg.validate()?;
    let records = generate_synthetic(&cfg)?;
    let comments = header_lines("generate", &[], &cfg.to_text());
    let manifest = save_dataset(&a.out_dir, &records, &comments)?;
    println!("wrote {} patients to {}", records.len(), manifest.display());
    Ok(())
}

fn fit<M: SurvivalModel>(
    cfg: TrainConfig,
    data: &[PatientRecord],
    resume: Option<Checkpoint>,
) -> Outcome<(Checkpoint, Vec<LogRow>)> {
    let mut trainer = match resume {
        Some(ckpt) => Trainer::<M>::from_checkpoint(&ckpt)?,
        None => Trainer::<M>::new(cfg, data)?,
    };
    let rows = trainer.fit(data)?;
    Ok((trainer.checkpoint(), rows))
}

pub fn train(a: &TrainArgs) -> Outcome {
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let base = resume
        .as_ref()
        .map_or_else(TrainConfig::default, |c| c.config.clone());
    let cfg = resolve(base, &a.config, &train_flags(a.method, a.epochs))?;
    cfg.validate()?;
    let data = training_records(&a.manifest, cfg.method)?;
    let resume = resume.map(|c| Checkpoint {
        config: cfg.clone(),
        ..c
    });
    let (ckpt, rows) = match cfg.method {
        Method::PathoGenX => fit::<PathoGenX>(cfg, &data, resume)?,
        Method::MeanMil => fit::<MeanMil>(cfg, &data, resume)?,
        Method::GenomicCox => fit::<GenomicCox>(cfg, &data, resume)?,
    };
    save_checkpoint(&a.out, &ckpt)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        p.into()
    });
    let mut log = header(
        "train",
        &[("manifest", &a.manifest)],
        &ckpt.config.to_text(),
    );
    write_log_csv(&mut log, &rows).expect("write to memory");
    write_file(&log_path, &log)?;
    if let Some(last) = rows.last() {
        println!("epoch {} total loss {}", last.epoch, last.total);
    }
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let data = load_manifest_images(&a.manifest)?;
    let risks = predict_checkpoint(&ckpt, &data)?;
    let outcomes: Vec<_> = data.iter().map(|r| r.outcome).collect();
    let c = c_index(&risks, &outcomes)?;
    let mut out = header(
        "eval",
        &[("manifest", &a.manifest), ("checkpoint", &a.checkpoint)],
        &ckpt.config.to_text(),
    );
    out.extend(b"patient_id,risk\n");
    for (r, risk) in data.iter().zip(&risks) {
        out.extend(format!("{},{risk}\n", r.id).into_bytes());
    }
    out.extend(format!("# c_index = {c}\n").into_bytes());
    write_file(&a.report, &out)?;
    println!("c_index = {c}");
    Ok(())
}

pub fn crossval(a: &CrossvalArgs) -> Outcome {
    let cfg = resolve(
        TrainConfig::default(),
        &a.config,
        &train_flags(a.method, a.epochs),
    )?;
    cfg.validate()?;
    let method = if a.ablation {
        Method::PathoGenX
    } else {
        cfg.method
    };
    let data = training_records(&a.manifest, method)?;
    let mut out = header(
        if a.ablation {
            "crossval --ablation"
        } else {
            "crossval"
        },
        &[("manifest", &a.manifest)],
        &format!("{}folds = {}\n", cfg.to_text(), a.folds),
    );
    if a.ablation {
        let rows = ablation_alignment(&data, &cfg, a.folds)?;
        write_ablation_csv(&mut out, &rows).expect("write to memory");
        for r in &rows {
            println!(
                "{}: {:.4} ± {:.4}",
                r.alignment, r.report.mean, r.report.std
            );
        }
    } else {
        let report = cross_validate(&data, &cfg, a.folds)?;
        write_cv_csv(&mut out, &report).expect("write to memory");
        println!("{}: {:.4} ± {:.4}", report.method, report.mean, report.std);
    }
    write_file(&a.out, &out)
}

/// `patient_id,risk` rows; `#` lines and blank lines are skipped.
fn read_risks(path: &Path) -> Outcome<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let fail = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        detail,
    };
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match rows.next() {
        Some((_, "patient_id,risk")) => {}
        Some((n, h)) => {
            return Err(fail(n, format!("expected header patient_id,risk, found {h:?}")).into())
        }
        None => return Err(fail(0, "no header".into()).into()),
    }
    let mut out = Vec::new();
    for (n, line) in rows {
        let (id, risk) = line
            .split_once(',')
            .ok_or_else(|| fail(n, format!("expected patient_id,risk, got {line:?}")))?;
        let risk: f64 = risk
            .trim()
            .parse()
            .map_err(|_| fail(n, format!("risk is not a number: {risk:?}")))?;
        out.push((id.trim().to_string(), risk));
    }
    Ok(out)
}

pub fn km(a: &KmArgs) -> Outcome {
    let risks = read_risks(&a.risks)?;
    let entries = read_manifest(&a.manifest)?;
    let mut matched = Vec::with_capacity(entries.len());
    for e in &entries {
        let risk = risks
            .iter()
            .find(|(id, _)| *id == e.id)
            .ok_or_else(|| Error::Config(format!("no risk for patient {}", e.id)))?;
        matched.push(risk.1);
    }
    let outcomes: Vec<_> = entries.iter().map(|e| e.outcome).collect();
    let report = KmReport::from_risks(&matched, &outcomes)?;
    let mut out = header("km", &[("risks", &a.risks), ("manifest", &a.manifest)], "");
    report.write_csv(&mut out).expect("write to memory");
    write_file(&a.out, &out)?;
    println!("chi2 = {} p = {}", report.test.chi2, report.test.p);
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    let entries = gradient_suite(a.seed, a.inject_fault)?;
    let config = format!(
        "seed = {}\nstep = {GRADCHECK_STEP}\ntolerance = {GRADCHECK_TOLERANCE}\n",
        a.seed
    );
    print!(
        "{}",
        String::from_utf8(header("gradcheck", &[], &config)).expect("ASCII")
    );
    println!("op,max_rel_error,status");
    for e in &entries {
        let status = if e.passed() { "pass" } else { "FAIL" };
        println!("{},{:.3e},{status}", e.name, e.report.max_rel_error);
    }
    let failing: Vec<_> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| e.name)
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gradcheck(failing))
    }
}

pub fn correlate(a: &CorrelateArgs) -> Outcome {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = Trainer::<PathoGenX>::from_checkpoint(&ckpt)?.model;
    let data = load_manifest(&a.manifest)?;
    let genomic = data
        .iter()
        .map(|r| {
            r.genomic
                .as_ref()
                .ok_or_else(|| Error::MissingGenomic(r.id.clone()))
        })
        .collect::<Result<Vec<&Tensor>, _>>()?;
    let bags: Vec<&Tensor> = data.iter().map(|r| &r.bag).collect();
    let inferred = model.infer(&bags)?;
    let g_l = model.project(&genomic)?;
    let cls: Vec<Tensor> = inferred.iter().map(|i| i.class_token.clone()).collect();
    let translated: Vec<Tensor> = inferred.into_iter().map(|i| i.translated).collect();
    let before = correlation_report(&cls, &g_l)?;
    let after = correlation_report(&translated, &g_l)?;
    let mut out = header(
        "correlate",
        &[("manifest", &a.manifest), ("checkpoint", &a.checkpoint)],
        &ckpt.config.to_text(),
    );
    out.extend(b"embedding,mean_abs_r\n");
    out.extend(
        format!(
            "class_token,{}\ntranslated,{}\n",
            before.mean_abs, after.mean_abs
        )
        .into_bytes(),
    );
    write_file(&a.out, &out)?;
    println!(
        "mean |r| class_token {:.4} translated {:.4}",
        before.mean_abs, after.mean_abs
    );
    Ok(())
}
