use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use signkit::keypoint::{read_sequence, validate_manifest, DatasetManifest};
use signkit::model::{save_tensors, verify_paper_architecture, Model, ModelSpec};
use signkit::preprocess::{expand_dataset, preprocess_pipeline, AugmentSpec, PipelineConfig};
use signkit::serve::{bench_latency, infer_windows, Prediction, SessionConfig};
use signkit::synth::{synth_dataset, SynthConfig};
use signkit::tensor::Tensor;
use signkit::train::{
    augmented_rows, evaluate, grid_search, holdout_split, kfold_cv, train as fit, Dataset, EvalReport, GridSpace,
    TrainConfig, TrainError,
};

use crate::{Arch, Format, Global, PipelineArgs, TrainArgs};

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: Option<ModelSpec>,
    pub pipeline: PipelineConfig,
    pub augment: Option<AugmentSpec>,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    match &g.config {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn seed(g: &Global, cfg: &RunConfig) -> u64 {
    g.seed.unwrap_or(cfg.train.seed)
}

fn layout_for(keypoints: usize) -> Option<&'static str> {
    match keypoints {
        63 => Some("compact63"),
        522 => Some("paper522"),
        543 => Some("holistic543"),
        _ => None,
    }
}

fn pipeline(cfg: &RunConfig, args: &PipelineArgs, keypoints: Option<usize>) -> PipelineConfig {
    let mut p = cfg.pipeline.clone();
    if let Some(l) = &args.layout {
        p.layout = Some(l.clone());
    }
    if p.layout.is_none() {
        p.layout = keypoints.and_then(layout_for).map(str::to_string);
    }
    if let Some(f) = args.frames {
        p.frames = f;
    }
    p
}

fn model_spec(cfg: &RunConfig, arch: Arch, classes: usize) -> ModelSpec {
    let mut spec = cfg.model.clone().unwrap_or_else(|| match arch {
        Arch::Scaled => ModelSpec::scaled(classes),
        Arch::Full => ModelSpec::default(),
    });
    spec.classes = classes;
    spec
}

fn train_config(g: &Global, cfg: &RunConfig, args: &TrainArgs, pipeline: &PipelineConfig) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.seed = seed(g, cfg);
    if let Some(v) = args.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr {
        t.lr0 = v;
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    t.timing |= args.timing;
    let _ = pipeline;
    t
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
    validate_manifest(&m)?;
    Ok(m)
}

/// Everything a training-style command needs, resolved from config and flags.
struct Setup {
    manifest: DatasetManifest,
    data: Dataset,
    spec: ModelSpec,
    pipeline: PipelineConfig,
    train: TrainConfig,
    cfg: RunConfig,
}

fn setup(g: &Global, manifest: &Path, targs: &TrainArgs, pargs: &PipelineArgs) -> Result<Setup> {
    let cfg = load_config(g)?;
    let manifest = load_manifest(manifest)?;
    let spec = model_spec(&cfg, targs.arch, manifest.classes.len());
    let pipeline = pipeline(&cfg, pargs, Some(spec.keypoints));
    let train = train_config(g, &cfg, targs, &pipeline);
    train.validate()?;
    spec.validate()?;
    let data = Dataset::from_manifest(&manifest, &pipeline)?;
    let shape = data.x.shape();
    ensure!(
        shape[1] == spec.frames && shape[2] == spec.keypoints,
        "preprocessed inputs are {} frames x {} landmarks, the model expects {} x {}",
        shape[1],
        shape[2],
        spec.frames,
        spec.keypoints
    );
    Ok(Setup {
        manifest,
        data,
        spec,
        pipeline,
        train,
        cfg,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn report_csv(r: &EvalReport) -> String {
    let r = r.rounded();
    let mut s = String::from("class,precision,recall,f1,support\n");
    for m in &r.classes {
        let _ = writeln!(s, "{},{},{},{},{}", m.name, m.precision, m.recall, m.f1, m.support);
    }
    let _ = writeln!(
        s,
        "macro,{},{},{},{}",
        r.macro_precision, r.macro_recall, r.macro_f1, r.samples
    );
    let _ = writeln!(s, "accuracy,,,{},{}", r.accuracy, r.samples);
    s
}

fn print_report(g: &Global, r: &EvalReport) {
    match g.format.unwrap_or(Format::Json) {
        Format::Json => println!("{}", r.to_json()),
        Format::Csv => print!("{}", report_csv(r)),
    }
}

fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    write(&dir.join("report.json"), r.to_json() + "\n")?;
    write(&dir.join("confusion.csv"), r.confusion_csv())
}

pub fn synth(g: &Global, out: &Path, classes: usize, per_class: usize, jitter: f64, layout: String) -> Result<()> {
    let cfg = SynthConfig {
        classes,
        per_class,
        seed: g.seed.unwrap_or(0),
        jitter,
        layout,
    };
    let m = synth_dataset(&cfg, out)?;
    println!(
        "{}",
        serde_json::json!({
            "sequences": m.sequences.len(),
            "classes": m.classes,
            "manifest": out.join("manifest.json"),
        })
    );
    Ok(())
}

pub fn preprocess(g: &Global, manifest: &Path, out: &Path, pargs: &PipelineArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let m = load_manifest(manifest)?;
    let p = pipeline(&cfg, pargs, None);
    let data = Dataset::from_manifest(&m, &p)?;
    let labels = Tensor::from_vec(&[data.len()], data.labels.iter().map(|&l| l as f64).collect())?;
    save_tensors(out, &[("x".into(), &data.x), ("labels".into(), &labels)])?;
    println!(
        "{}",
        serde_json::json!({ "samples": data.len(), "shape": data.x.shape() })
    );
    Ok(())
}

pub fn augment(g: &Global, manifest: &Path, out: &Path, copies: Option<usize>, pargs: &PipelineArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let m = load_manifest(manifest)?;
    let mut spec = cfg.augment.clone().unwrap_or_default();
    spec.seed = seed(g, &cfg);
    if let Some(c) = copies {
        spec.copies_per_sequence = c;
    }
    let p = pipeline(&cfg, pargs, None);
    let expanded = expand_dataset(&m, &spec, &p, out)?;
    expanded.save(out.join("manifest.json"))?;
    println!("{}", serde_json::json!({ "sequences": expanded.sequences.len() }));
    Ok(())
}

pub fn train(g: &Global, manifest: &Path, out: &Path, targs: &TrainArgs, pargs: &PipelineArgs) -> Result<()> {
    let s = setup(g, manifest, targs, pargs)?;
    fs::create_dir_all(out)?;
    let split = holdout_split(&s.data, s.train.seed)?;
    let fit_data = match &s.cfg.augment {
        Some(a) if a.copies_per_sequence > 0 => {
            let spec = AugmentSpec {
                seed: s.train.seed,
                ..a.clone()
            };
            augmented_rows(&s.manifest, &split.fit, &spec, &s.pipeline)?
        }
        _ => s.data.subset(&split.fit),
    };
    let model = Model::build(s.spec.clone(), s.train.seed)?
        .with_class_names(s.manifest.classes.clone())?
        .with_pipeline(s.pipeline.clone());
    let effective = RunConfig {
        train: s.train.clone(),
        model: Some(s.spec.clone()),
        pipeline: s.pipeline.clone(),
        augment: s.cfg.augment.clone(),
    };
    write(&out.join("config.json"), json(&effective))?;
    write(&out.join("split.json"), json(&split))?;
    let outcome = match fit(model, &fit_data, &s.data.subset(&split.val), &s.train) {
        Ok(o) => o,
        Err(TrainError::Divergence { epoch, last_finite }) => {
            write(&out.join("history.csv"), last_finite.history.to_csv())?;
            last_finite.model.save(&out.join("last_finite.sgkp"))?;
            bail!("training diverged in epoch {epoch}; last finite state saved");
        }
        Err(e) => return Err(e.into()),
    };
    write(&out.join("history.csv"), outcome.history.to_csv())?;
    outcome.model.save(&out.join("best.sgkp"))?;
    let report = evaluate(&outcome.model, &s.data.subset(&split.test))?;
    write_report(out, &report)?;
    eprintln!(
        "trained {} epochs (best {}), test accuracy {:.1}%",
        outcome.history.records.len(),
        outcome.history.best_epoch,
        report.accuracy
    );
    print_report(g, &report);
    Ok(())
}

pub fn eval(g: &Global, model: &Path, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let model = Model::load(model).with_context(|| format!("loading {}", model.display()))?;
    let m = load_manifest(manifest)?;
    ensure!(
        m.classes == model.class_names,
        "manifest classes {:?} differ from the model's {:?}",
        m.classes,
        model.class_names
    );
    let data = Dataset::from_manifest(&m, &model.pipeline)?;
    let report = evaluate(&model, &data)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_report(dir, &report)?;
    }
    print_report(g, &report);
    Ok(())
}

pub fn cv(g: &Global, manifest: &Path, out: &Path, k: usize, targs: &TrainArgs, pargs: &PipelineArgs) -> Result<()> {
    let s = setup(g, manifest, targs, pargs)?;
    let mut r = kfold_cv(&s.data, k, &s.spec, &s.pipeline, &s.train)?;
    for f in &mut r.folds {
        f.report = f.report.rounded();
    }
    fs::create_dir_all(out)?;
    write(&out.join("cv.json"), json(&r))?;
    match g.format.unwrap_or(Format::Json) {
        Format::Json => print!("{}", json(&r)),
        Format::Csv => {
            println!("fold,macro_f1,accuracy,epochs,best_epoch");
            for f in &r.folds {
                println!(
                    "{},{},{},{},{}",
                    f.fold, f.report.macro_f1, f.report.accuracy, f.epochs, f.best_epoch
                );
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn grid(
    g: &Global,
    manifest: &Path,
    out: &Path,
    lr0: Vec<f64>,
    kernel: Vec<usize>,
    units: Vec<usize>,
    targs: &TrainArgs,
    pargs: &PipelineArgs,
) -> Result<()> {
    let s = setup(g, manifest, targs, pargs)?;
    let space = GridSpace { lr0, kernel, units };
    let results = grid_search(&s.data, &space, &s.spec, &s.pipeline, &s.train)?;
    fs::create_dir_all(out)?;
    write(&out.join("grid.json"), json(&results))?;
    match g.format.unwrap_or(Format::Json) {
        Format::Json => print!("{}", json(&results)),
        Format::Csv => {
            println!("rank,lr0,kernel,units,val_macro_f1,val_loss,epochs");
            for r in &results {
                println!(
                    "{},{},{},{},{},{},{}",
                    r.rank, r.point.lr0, r.point.kernel, r.point.units, r.val_macro_f1, r.val_loss, r.epochs
                );
            }
        }
    }
    Ok(())
}

pub fn verify_arch(g: &Global) -> Result<()> {
    let audit = verify_paper_architecture();
    match g.format {
        None => print!("{}", audit.render_table()),
        Some(Format::Json) => print!("{}", json(&audit)),
        Some(Format::Csv) => {
            println!("layer,table_shape,computed_shape,table_params,computed_params");
            let shape = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            for r in &audit.rows {
                println!(
                    "{},{},{},{},{}",
                    r.name,
                    shape(&r.expected_shape),
                    shape(&r.computed_shape),
                    r.expected_params,
                    r.computed_params
                );
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct InferLine<'a> {
    window_end: i64,
    label: &'a str,
    probs: &'a [f64],
}

pub fn infer(
    g: &Global,
    model: &Path,
    input: &Path,
    window: usize,
    stride: usize,
    whole: bool,
    out: Option<&Path>,
) -> Result<()> {
    let model = Model::load(model).with_context(|| format!("loading {}", model.display()))?;
    let seq = read_sequence(input).with_context(|| format!("reading {}", input.display()))?;
    let preds: Vec<Prediction> = if whole {
        let x = preprocess_pipeline(&seq, &model.pipeline)?;
        let shape = x.shape().to_vec();
        let probs = model
            .predict(&x.reshape(&[1, shape[0], shape[1], shape[2]])?)?
            .into_data();
        let class_index = signkit::train::argmax(&probs);
        vec![Prediction {
            window_end: seq.frames()[seq.len() - 1].t(),
            label: model.class_names[class_index].clone(),
            class_index,
            probs,
            latency_ms: 0.0,
        }]
    } else {
        infer_windows(&model, &seq, SessionConfig { window, stride })?
    };
    let mut text = String::new();
    match g.format.unwrap_or(Format::Json) {
        Format::Json => {
            for p in &preds {
                let line = InferLine {
                    window_end: p.window_end,
                    label: &p.label,
                    probs: &p.probs,
                };
                let _ = writeln!(text, "{}", serde_json::to_string(&line)?);
            }
        }
        Format::Csv => {
            let _ = writeln!(text, "window_end,label,{}", model.class_names.join(","));
            for p in &preds {
                let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(text, "{},{},{}", p.window_end, p.label, probs.join(","));
            }
        }
    }
    match out {
        Some(path) => write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn bench(
    g: &Global,
    model: Option<&Path>,
    classes: usize,
    n: usize,
    window: usize,
    out: Option<&Path>,
) -> Result<()> {
    let model = match model {
        Some(p) => Model::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Model::build(ModelSpec::scaled(classes), g.seed.unwrap_or(0))?,
    };
    let r = bench_latency(&model, window, n, g.seed.unwrap_or(0))?;
    let text = json(&serde_json::json!({
        "keypoints": model.spec().keypoints,
        "parameters": model.param_count(),
        "window": window,
        "latency": r,
    }));
    if let Some(p) = out {
        write(p, &text)?;
    }
    print!("{text}");
    Ok(())
}
