use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Map, Value as Json};

use kbqa_core::dataset::{dataset_to_jsonl, parse_dataset, Category, QAExample};
use kbqa_core::discriminator::{Mode, Prediction};
use kbqa_core::eval::{ablation_table, evaluate_dataset, run_ablation_with};
use kbqa_core::kb::{
    load_kb, load_kb_parts, perturb_kb, validate_parts, write_kb, KnowledgeBase, PerturbationPlan,
};
use kbqa_core::pipeline::{Ablation, Components, Pipeline, PipelineConfig};
use kbqa_core::scorer::{
    train as fit, tune_threshold as tune, LinearScorer, Threshold, FEATURE_DIM,
};
use kbqa_core::sexpr::{build_sketch_inventory, SketchInventory};
use kbqa_core::synth::{fact_gap_plan, label_generalization, schema_gap_plan, seeded_world};
use kbqa_core::training;

use crate::config::Config;
use crate::usage;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// `#` lines naming the command and echoing the effective config.
fn header(c: &Config, command: &str) -> String {
    let mut out = format!("# kbqa {command}\n");
    for line in c.echo() {
        out.push_str(&format!("# {line}\n"));
    }
    out
}

/// Writes to `output` when set, stdout otherwise.
fn emit(c: &Config, body: &str) -> Result<()> {
    match c.get("output") {
        Some(p) => write(Path::new(p), body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn kb(c: &Config) -> Result<KnowledgeBase> {
    let dir = c.input("kb-dir")?;
    Ok(load_kb(&dir)?)
}

fn dataset(c: &Config, key: &str) -> Result<Vec<QAExample>> {
    let path = c.input(key)?;
    parse_dataset(&read(&path)?)
        .map_err(|e| anyhow!("{}:{}: {}", path.display(), e.line, e.message))
}

fn model(c: &Config, key: &str) -> Result<LinearScorer> {
    let path = c.input(key)?;
    let (m, _) =
        LinearScorer::from_model_text(&read(&path)?).with_context(|| path.display().to_string())?;
    if m.dim() != FEATURE_DIM {
        return Err(anyhow!(
            "{}: dimension {} but the featurizer produces {FEATURE_DIM}",
            path.display(),
            m.dim()
        ));
    }
    Ok(m)
}

fn inventory(c: &Config) -> Result<SketchInventory> {
    let path = c.input("inventory")?;
    SketchInventory::from_text(&read(&path)?).with_context(|| path.display().to_string())
}

fn threshold_file(path: &Path) -> Result<Threshold> {
    let text = read(path)?;
    let mut tau = None;
    let mut t = Threshold::fixed(f64::NAN);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || anyhow!("{}:{}: malformed line `{line}`", path.display(), i + 1);
        let (k, v) = line.split_once('=').ok_or_else(bad)?;
        match k {
            "tau" => tau = Some(v.parse::<f64>().map_err(|_| bad())?),
            "metric" => t.tuned_metric = v.to_string(),
            "value" => t.tuned_value = v.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        }
    }
    t.tau = tau.ok_or_else(|| anyhow!("{}: no tau line", path.display()))?;
    Ok(t)
}

/// The NK threshold: fixed tau, else the tuned file. Only the
/// unanswerability mode needs one.
fn threshold(c: &Config) -> Result<Option<Threshold>> {
    if let Some(tau) = c.fixed_tau()? {
        return Ok(Some(Threshold::fixed(tau)));
    }
    if c.mode()? != Mode::Unanswerability {
        return Ok(None);
    }
    threshold_file(&c.input("threshold")?).map(Some)
}

struct Models {
    retriever: LinearScorer,
    sketch: LinearScorer,
    types: LinearScorer,
    relations: LinearScorer,
    discriminator: LinearScorer,
    inventory: SketchInventory,
}

impl Models {
    /// Everything upstream of the discriminator; `final_stage` loads that too.
    fn load(c: &Config, final_stage: bool) -> Result<Self> {
        let discriminator = if final_stage {
            model(c, "model.discriminator")?
        } else {
            LinearScorer::zeros(FEATURE_DIM)
        };
        Ok(Models {
            retriever: model(c, "model.retriever")?,
            sketch: model(c, "model.sketch")?,
            types: model(c, "model.types")?,
            relations: model(c, "model.relations")?,
            discriminator,
            inventory: inventory(c)?,
        })
    }

    fn components<'a>(&'a self, threshold: Option<&'a Threshold>) -> Components<'a> {
        Components {
            retriever: &self.retriever,
            sketch_ranker: &self.sketch,
            type_scorer: &self.types,
            relation_scorer: &self.relations,
            discriminator: &self.discriminator,
            inventory: &self.inventory,
            threshold,
        }
    }
}

fn pool(c: &Config) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs()?)
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

/// Predictions in input order regardless of the worker count.
fn predict_all(
    workers: &rayon::ThreadPool,
    kb: &KnowledgeBase,
    components: Components<'_>,
    config: &PipelineConfig,
    examples: &[QAExample],
) -> Vec<Prediction> {
    let pipeline = Pipeline::new(kb, components, config.clone());
    workers.install(|| examples.par_iter().map(|e| pipeline.predict(e)).collect())
}

fn predictions_jsonl(c: &Config, command: &str, preds: &[Prediction]) -> String {
    let mut out = header(c, command);
    for p in preds {
        out.push_str(&p.to_json_line());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------

pub fn kb_validate(c: &Config) -> Result<()> {
    let dir = c.input("kb-dir")?;
    let parts = load_kb_parts(&dir)?;
    let report = validate_parts(&parts);
    println!("{} violations", report.violations.len());
    for v in &report.violations {
        println!("  {v}");
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(anyhow!(
            "{}: {} integrity violations",
            dir.display(),
            report.violations.len()
        ))
    }
}

pub fn generate(c: &Config) -> Result<()> {
    let out = c.required("output")?;
    let n: usize = c.parse("generate.questions")?;
    let w = seeded_world(c.seed()?, n);
    let total = w.examples.len();
    let (train_end, dev_end) = (total * 6 / 10, total * 8 / 10);
    let train = &w.examples[..train_end];
    let mut dev = w.examples[train_end..dev_end].to_vec();
    let mut test = w.examples[dev_end..].to_vec();
    label_generalization(train, &mut dev);
    label_generalization(train, &mut test);

    let kb_dir = out.join("kb");
    write_kb(&w.kb, &kb_dir)?;
    let head = header(c, "generate");
    for name in ["types.tsv", "relations.tsv", "entities.tsv", "facts.tsv"] {
        let path = kb_dir.join(name);
        let body = read(&path)?;
        write(&path, &format!("{head}{body}"))?;
    }
    for (name, set) in [
        ("train.jsonl", train),
        ("dev.jsonl", &dev[..]),
        ("test.jsonl", &test[..]),
    ] {
        write(&out.join(name), &format!("{head}{}", dataset_to_jsonl(set)))?;
    }
    let fact_plan = fact_gap_plan(&w.kb, &test, test.len() / 4);
    write(
        &out.join("fact_gap_plan.jsonl"),
        &format!("{head}{}", fact_plan.to_jsonl()),
    )?;
    let schema_plan = schema_gap_plan(&test, test.len() / 4);
    write(
        &out.join("schema_gap_plan.jsonl"),
        &format!("{head}{}", schema_plan.to_jsonl()),
    )?;
    eprintln!(
        "wrote {} (train {}, dev {}, test {})",
        out.display(),
        train.len(),
        dev.len(),
        test.len()
    );
    Ok(())
}

pub fn perturb(c: &Config) -> Result<()> {
    let source = kb(c)?;
    let examples = dataset(c, "dataset")?;
    let plan_path = c.input("plan")?;
    let plan = PerturbationPlan::from_jsonl(&read(&plan_path)?, c.seed()?)
        .map_err(|e| anyhow!("{}:{}: {}", plan_path.display(), e.line, e.message))?;
    let out_kb = c.required("out-kb-dir")?;
    let out = c.required("output")?;
    let (reduced, relabeled) = perturb_kb(&source, &examples, &plan)?;
    write_kb(&reduced, &out_kb)?;
    write(
        &out,
        &format!(
            "{}{}",
            header(c, "perturb"),
            dataset_to_jsonl(&relabeled.examples)
        ),
    )?;
    for cat in Category::ALL {
        let n = relabeled
            .examples
            .iter()
            .filter(|e| e.category == cat)
            .count();
        if n > 0 {
            eprintln!("{:<22} {n}", cat.as_str());
        }
    }
    Ok(())
}

pub fn train(c: &Config, component: &str) -> Result<()> {
    let out = c.required("output")?;
    let base = kb(c)?;
    let examples = dataset(c, "dataset")?;
    let mut train_cfg = c.train(None)?;
    let data = match component {
        "retriever" => training::retriever_data(&examples, &base, &c.pipeline()?.retriever),
        "sketch" => {
            let golds = examples.iter().filter_map(|e| e.gold_lf.form());
            let inv =
                build_sketch_inventory(golds).map_err(|e| anyhow!("sketch inventory: {e}"))?;
            let inv_path = c.required("inventory")?;
            write(
                &inv_path,
                &format!("{}{}", header(c, "train sketch"), inv.to_text()),
            )?;
            training::sketch_data(&examples, &inv)
        }
        "types" => training::type_data(&examples, &base),
        "relations" => training::relation_data(&examples, &base),
        "discriminator" => {
            train_cfg.negatives_per_example = Some(c.parse("discriminator.negatives")?);
            let upstream = Models::load(c, false)?;
            let pipeline = Pipeline::new(&base, upstream.components(None), c.pipeline()?);
            training::discriminator_data(&examples, &base, &pipeline)
        }
        other => return Err(usage(format!("unknown component `{other}`"))),
    };
    if data.is_empty() {
        return Err(anyhow!(
            "no training instances for {component} in the dataset"
        ));
    }
    let outcome = fit(&data, &train_cfg)?;
    let final_loss = outcome.loss_trace.last().copied().unwrap_or(f64::NAN);
    let preamble: Vec<String> = header(c, &format!("train {component}"))
        .lines()
        .map(|l| l.trim_start_matches("# ").to_string())
        .chain([format!("instances={} final_loss={final_loss}", data.len())])
        .collect();
    write(
        &out,
        &outcome.model.to_model_text(data.objective(), &preamble),
    )?;
    eprintln!(
        "{component}: {} instances, final loss {final_loss:.6}",
        data.len()
    );
    Ok(())
}

pub fn tune_threshold(c: &Config) -> Result<()> {
    let base = kb(c)?;
    let dev = dataset(c, "dataset")?;
    let models = Models::load(c, true)?;
    let config = PipelineConfig {
        mode: Mode::Unanswerability,
        ..c.pipeline()?
    };
    let preds = predict_all(&pool(c)?, &base, models.components(None), &config, &dev);
    let points = training::threshold_points(&dev, &preds);
    let t = tune(&points, "em").ok_or_else(|| anyhow!("empty dev set"))?;
    let body = format!(
        "{}tau={}\nmetric={}\nvalue={}\n",
        header(c, "tune-threshold"),
        t.tau,
        t.tuned_metric,
        t.tuned_value
    );
    emit(c, &body)?;
    eprintln!("{t}");
    Ok(())
}

pub fn predict(c: &Config) -> Result<()> {
    let base = kb(c)?;
    let examples = dataset(c, "dataset")?;
    let models = Models::load(c, true)?;
    let th = threshold(c)?;
    let preds = predict_all(
        &pool(c)?,
        &base,
        models.components(th.as_ref()),
        &c.pipeline()?,
        &examples,
    );
    emit(c, &predictions_jsonl(c, "predict", &preds))?;
    let failed = preds.iter().filter(|p| p.error.is_some()).count();
    eprintln!("{} predictions, {failed} failed", preds.len());
    Ok(())
}

fn with_config(c: &Config, mut report: Json) -> Json {
    let settings: Map<String, Json> = c
        .echo()
        .into_iter()
        .filter_map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), Json::String(v.to_string())))
        })
        .collect();
    if let Json::Object(m) = &mut report {
        m.insert("config".into(), Json::Object(settings));
    }
    report
}

pub fn evaluate(c: &Config) -> Result<()> {
    let golds = dataset(c, "dataset")?;
    let path = c.input("predictions")?;
    let preds = kbqa_core::discriminator::parse_predictions(&read(&path)?)
        .map_err(|e| anyhow!("{}:{}: {}", path.display(), e.line, e.message))?;
    let report = evaluate_dataset(&preds, &golds)?;
    print!("{}", report.to_table());
    if let Some(out) = c.get("output") {
        let body = serde_json::to_string_pretty(&with_config(c, report.to_json()))?;
        write(Path::new(out), &(body + "\n"))?;
    }
    Ok(())
}

pub fn ablate(c: &Config) -> Result<()> {
    let base_kb = kb(c)?;
    let examples = dataset(c, "dataset")?;
    let models = Models::load(c, true)?;
    let th = threshold(c)?;
    let requested = c.disabled();
    let base = PipelineConfig {
        disabled: BTreeSet::new(),
        ..c.pipeline()?
    };
    // one combination with everything requested, or each component alone
    let combos: Vec<BTreeSet<Ablation>> = if requested.is_empty() {
        Ablation::ALL.iter().map(|a| BTreeSet::from([*a])).collect()
    } else {
        vec![requested]
    };
    let workers = pool(c)?;
    let components = models.components(th.as_ref());
    let runs = run_ablation_with(&examples, &base, &combos, |cfg| {
        predict_all(&workers, &base_kb, components, cfg, &examples)
    })?;
    print!("{}", ablation_table(&runs));
    if let Some(out) = c.get("output") {
        let all: Map<String, Json> = runs
            .iter()
            .map(|(name, run)| {
                (
                    name.clone(),
                    json!({ "coverage": run.coverage, "report": run.report.to_json() }),
                )
            })
            .collect();
        let body = serde_json::to_string_pretty(&with_config(c, json!({ "runs": all })))?;
        write(Path::new(out), &(body + "\n"))?;
    }
    Ok(())
}
