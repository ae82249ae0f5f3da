use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::{set, FileConfig};
use super::*;
use crate::bench::{bench_models, parse_external_timings, speedup_table, BenchConfig};
use crate::data::{
    build_vocab, load_embeddings, read_conll, read_conll_tokens, read_split_manifest, sample_splits, write_conll,
    write_split_manifest, EmbeddingTable, Sentence, SyntheticNer, TagSet, Vocab,
};
use crate::distill::{train_baseline, train_distilled, DistillConfig, TeacherStore, TrainOutcome, TrainSetup};
use crate::error::Result;
use crate::eval::{evaluate_ids, run_experiment_grid, GridJob, Variant};
use crate::rng::derive_seed;
use crate::tagger::{load_checkpoint, save_checkpoint, ModelBundle};

pub(super) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::SampleSplits(a) => sample(&a),
        Command::Train(a) => train(&a, None),
        Command::Distill(a) => train(&a.train, Some(&a)),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict(&a),
        Command::ExportLogits(a) => export(&a),
        Command::Bench(a) => bench(&a),
        Command::Grid(a) => grid(&a),
    }
}

fn input(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Usage(format!("input file {} does not exist", path.display())))
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn apply_model(file: &mut FileConfig, m: &ModelFlags) {
    let d = &mut file.model;
    set(&mut d.word_dim, m.word_dim);
    set(&mut d.char_dim, m.char_dim);
    set(&mut d.char_filters, m.char_filters);
    set(&mut d.char_window, m.char_window);
    set(&mut d.lstm_hidden, m.lstm_hidden);
    set(&mut d.classifier, m.classifier);
    d.teacher_sized |= m.teacher_sized;
    if m.embeddings.is_some() {
        d.embeddings = m.embeddings.clone();
    }
}

fn apply_optim(t: &mut DistillConfig, o: &OptimFlags) {
    set(&mut t.epochs, o.epochs);
    set(&mut t.batch_size, o.batch_size);
    set(&mut t.lr, o.lr);
    set(&mut t.dropout, o.dropout);
    set(&mut t.seed, o.seed);
    set(&mut t.eval_batch_size, o.eval_batch_size);
}

fn apply_objective(t: &mut DistillConfig, o: &ObjectiveFlags) {
    set(&mut t.temperature, o.temperature);
    set(&mut t.task_weight, o.task_weight);
    set(&mut t.distill_weight, o.distill_weight);
    set(&mut t.scale_by_t2, o.scale_by_t2);
    set(&mut t.kl_direction, o.kl_direction);
    set(&mut t.mix, o.mix);
    set(&mut t.labeled_fraction, o.labeled_fraction);
}

/// `O` plus B/I labels for every type seen in `sets`. When a teacher file
/// is given its label order is authoritative and must cover those types.
fn model_tagset(sets: &[&TagSet], teacher: Option<&TeacherStore>) -> Result<TagSet> {
    let types: BTreeSet<String> = sets.iter().flat_map(|t| t.entity_types()).collect();
    let Some(teacher) = teacher else {
        return Ok(TagSet::from_types(&types));
    };
    let labels = &teacher.header().tagset;
    let ts = TagSet::new(labels.iter()).map_err(|e| Error::Alignment(format!("teacher tag set: {e}")))?;
    teacher.check_tagset(&ts)?;
    let known: BTreeSet<String> = ts.entity_types().into_iter().collect();
    if let Some(t) = types.iter().find(|t| !known.contains(*t)) {
        return Err(Error::Alignment(format!(
            "entity type {t:?} is missing from the teacher tag set"
        )));
    }
    Ok(ts)
}

fn relabel(sentences: &mut [Sentence], from: &TagSet, to: &TagSet) -> Result<()> {
    for s in sentences {
        s.relabel(from, to).map_err(|e| match e {
            Error::Lookup(m) => Error::Alignment(m),
            other => other,
        })?;
    }
    Ok(())
}

fn embeddings(file: &FileConfig, vocab: &Vocab) -> Result<Option<EmbeddingTable>> {
    match &file.model.embeddings {
        Some(p) => Ok(Some(load_embeddings(
            input(p)?,
            vocab,
            file.model.word_dim,
            file.train.seed,
        )?)),
        None => Ok(None),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let gen = SyntheticNer::new(a.pool_size, a.seed);
    let tagset = SyntheticNer::tagset();
    for (i, (name, n)) in [("train", a.train), ("dev", a.dev), ("test", a.test)]
        .into_iter()
        .enumerate()
    {
        let sentences = gen.sentences(n, derive_seed(a.seed, 0x5e17, i as u64));
        let path = a.out_dir.join(format!("{name}.conll"));
        write_text(Some(&path), &write_conll(&sentences, &tagset)?)?;
        eprintln!("wrote {n} sentences to {}", path.display());
    }
    Ok(())
}

fn sample(a: &SampleSplitsArgs) -> Result<()> {
    let (corpus, _) = read_conll(input(&a.train)?, None)?;
    let splits = sample_splits(&corpus, &a.sizes, a.seeds, a.seed)?;
    write_text(a.out.as_deref(), &write_split_manifest(&splits)?)?;
    eprintln!("{} splits over {} sentences", splits.len(), corpus.len());
    Ok(())
}

fn train(a: &TrainArgs, distill: Option<&DistillArgs>) -> Result<()> {
    let mut file = FileConfig::load(a.config.config.as_deref())?;
    apply_model(&mut file, &a.model);
    apply_optim(&mut file.train, &a.optim);
    if let Some(d) = distill {
        apply_objective(&mut file.train, &d.objective);
    }

    let (corpus, corpus_tags) = read_conll(input(&a.labeled)?, None)?;
    let (mut labeled, mut unlabeled) = match (&a.split.split_manifest, a.split.split_index) {
        (Some(m), Some(i)) => {
            let text = std::fs::read_to_string(input(m)?).map_err(|e| Error::io(m, e))?;
            let splits = read_split_manifest(&text)?;
            let spec = splits.get(i).ok_or_else(|| {
                Error::Usage(format!(
                    "--split-index {i} but the manifest has {} splits",
                    splits.len()
                ))
            })?;
            spec.partition(&corpus)?
        }
        _ => (corpus.clone(), Vec::new()),
    };
    let teacher = match distill {
        None => None,
        Some(d) => {
            if let Some(path) = &d.unlabeled {
                let offset = corpus.iter().map(|s| s.id + 1).max().unwrap_or(0);
                let extra = read_conll_tokens(input(path)?)?;
                unlabeled.extend(extra.into_iter().map(|mut s| {
                    s.id += offset;
                    s
                }));
            } else if a.split.split_manifest.is_none() {
                return Err(Error::Usage("distill needs --unlabeled or --split-manifest".into()));
            }
            let path = d
                .teacher_logits
                .as_ref()
                .ok_or_else(|| Error::Usage("distill needs --teacher-logits".into()))?;
            Some(TeacherStore::read(input(path)?)?)
        }
    };
    let (mut dev, dev_tags) = read_conll(input(&a.dev)?, None)?;
    let tagset = model_tagset(&[&corpus_tags, &dev_tags], teacher.as_ref())?;
    relabel(&mut labeled, &corpus_tags, &tagset)?;
    relabel(&mut dev, &dev_tags, &tagset)?;

    let text: Vec<Sentence> = labeled.iter().chain(&unlabeled).chain(&dev).cloned().collect();
    let vocab = build_vocab(&text, None);
    let emb = embeddings(&file, &vocab)?;
    let tagger = file
        .model
        .tagger_config(vocab.num_words(), vocab.num_chars(), tagset.len(), file.train.dropout);
    let setup = TrainSetup {
        tagger: &tagger,
        vocab: &vocab,
        tagset: &tagset,
        embeddings: emb.as_ref(),
    };
    let command = if distill.is_some() { "distill" } else { "train" };
    let echo = json!({
        "command": command,
        "labeled": a.labeled,
        "dev": a.dev,
        "split_manifest": a.split.split_manifest,
        "split_index": a.split.split_index,
        "unlabeled": distill.and_then(|d| d.unlabeled.clone()),
        "teacher_logits": distill.and_then(|d| d.teacher_logits.clone()),
        "config": file,
    });
    let TrainOutcome { mut report, model } = match distill {
        None => train_baseline(&setup, &labeled, &dev, &file.train, None)?,
        Some(_) => train_distilled(&setup, &labeled, &unlabeled, teacher.as_ref(), &dev, &file.train, None)?,
    };
    let training = model.provenance.clone();
    let model = model.with_provenance(json!({ "run": echo, "training": training }));
    save_checkpoint(&model, &a.model_out)?;
    report.checkpoint = Some(a.model_out.clone());
    if let Some(p) = &a.report_out {
        write_text(Some(p), &to_json(&json!({ "run": echo, "report": report }))?)?;
    }
    println!(
        "best dev F1 {:.2} at epoch {} of {}; model written to {}",
        report.best_dev_f1,
        report.best_epoch,
        report.dev_f1.len(),
        a.model_out.display()
    );
    Ok(())
}

fn tagged_for_model(path: &Path, model: &ModelBundle) -> Result<Vec<Sentence>> {
    let (mut data, tags) = read_conll(input(path)?, None)?;
    if data.iter().any(|s| s.gold_tags.is_none()) {
        return Err(Error::Usage(format!("{} has untagged sentences", path.display())));
    }
    relabel(&mut data, &tags, &model.tagset)?;
    Ok(data)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(input(&a.model)?)?;
    let data = tagged_for_model(&a.data, &model)?;
    let pred = model.predict(&data, a.batch_size)?;
    let gold: Vec<Vec<usize>> = data.iter().map(|s| s.gold_tags.clone().unwrap_or_default()).collect();
    let report = evaluate_ids(&model.tagset, &gold, &pred)?;
    print!("{}", report.render());
    if let Some(p) = &a.report_out {
        let echo = json!({ "command": "eval", "model": a.model, "data": a.data, "batch_size": a.batch_size });
        write_text(Some(p), &to_json(&json!({ "run": echo, "report": report }))?)?;
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_checkpoint(input(&a.model)?)?;
    let mut data = read_conll_tokens(input(&a.data)?)?;
    let pred = model.predict(&data, a.batch_size)?;
    for (s, p) in data.iter_mut().zip(pred) {
        s.gold_tags = Some(p);
    }
    write_text(a.out.as_deref(), &write_conll(&data, &model.tagset)?)
}

fn export(a: &ExportArgs) -> Result<()> {
    let model = load_checkpoint(input(&a.model)?)?;
    let mut all = Vec::new();
    for path in &a.data {
        let offset = all.len();
        all.extend(read_conll_tokens(input(path)?)?.into_iter().map(|mut s| {
            s.id += offset;
            s
        }));
    }
    let store = TeacherStore::from_model(&model, &all, a.batch_size)?;
    store.write(&a.out)?;
    eprintln!("wrote logits for {} sentences to {}", store.len(), a.out.display());
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let mut file = FileConfig::load(a.config.config.as_deref())?;
    let b: &mut BenchConfig = &mut file.bench;
    set(&mut b.batch_sizes, a.batch_sizes.clone());
    set(&mut b.warmup_passes, a.warmup_passes);
    set(&mut b.measured_passes, a.measured_passes);
    set(&mut b.thread_mode, a.thread_mode);
    set(&mut b.workers, a.workers);
    let mut models: Vec<(String, ModelBundle)> = Vec::new();
    for spec in &a.models {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) if !l.is_empty() => (l.to_string(), PathBuf::from(p)),
            _ => {
                let p = PathBuf::from(spec);
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        if models.iter().any(|(l, _)| *l == label) {
            return Err(Error::Usage(format!("model label {label:?} given twice")));
        }
        models.push((label, load_checkpoint(input(&path)?)?));
    }
    let data = read_conll_tokens(input(&a.data)?)?;
    let refs: Vec<(&str, &ModelBundle)> = models.iter().map(|(l, m)| (l.as_str(), m)).collect();
    let mut report = bench_models(&refs, &data, &file.bench)?;
    if let Some(p) = &a.external {
        let f = std::fs::File::open(input(p)?).map_err(|e| Error::io(p, e))?;
        for t in parse_external_timings(std::io::BufReader::new(f))? {
            report.rows.push(t.into_row(data.len()));
        }
    }
    print!("{}", report.render_table());
    let baseline = a.baseline.clone().unwrap_or_else(|| models[0].0.clone());
    println!();
    print!("{}", speedup_table(&report.rows, &baseline)?);
    if let Some(p) = &a.out {
        write_text(Some(p), &report.to_jsonl()?)?;
    }
    Ok(())
}

fn grid(a: &GridArgs) -> Result<()> {
    let mut file = FileConfig::load(a.config.config.as_deref())?;
    apply_model(&mut file, &a.model);
    apply_optim(&mut file.train, &a.optim);
    apply_objective(&mut file.train, &a.objective);
    set(&mut file.grid.variants, a.variants.clone());
    set(&mut file.grid.workers, a.workers);
    let variants = file
        .grid
        .variants
        .iter()
        .map(|v| v.parse::<Variant>().map_err(|e| Error::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;

    let (mut corpus, corpus_tags) = read_conll(input(&a.train)?, None)?;
    let (mut dev, dev_tags) = read_conll(input(&a.dev)?, None)?;
    let (mut test, test_tags) = read_conll(input(&a.test)?, None)?;
    let text = std::fs::read_to_string(input(&a.manifest)?).map_err(|e| Error::io(&a.manifest, e))?;
    let splits = read_split_manifest(&text)?;
    let teacher = match &a.teacher_logits {
        Some(p) => Some(TeacherStore::read(input(p)?)?),
        None => None,
    };
    let tagset = model_tagset(&[&corpus_tags, &dev_tags, &test_tags], teacher.as_ref())?;
    relabel(&mut corpus, &corpus_tags, &tagset)?;
    relabel(&mut dev, &dev_tags, &tagset)?;
    relabel(&mut test, &test_tags, &tagset)?;
    let text: Vec<Sentence> = corpus.iter().chain(&dev).cloned().collect();
    let vocab = build_vocab(&text, None);
    let emb = embeddings(&file, &vocab)?;
    let tagger = file
        .model
        .tagger_config(vocab.num_words(), vocab.num_chars(), tagset.len(), file.train.dropout);
    let job = GridJob {
        corpus: &corpus,
        dev: &dev,
        test: &test,
        splits: &splits,
        variants: &variants,
        teacher: teacher.as_ref(),
        tagger: &tagger,
        vocab: &vocab,
        tagset: &tagset,
        embeddings: emb.as_ref(),
        train: &file.train,
        workers: file.grid.workers,
        checkpoint_dir: a.checkpoint_dir.clone(),
    };
    let progress = |c: &crate::eval::GridCell| {
        log::info!(
            "size {} seed {} {}: test F1 {}",
            c.size,
            c.seed_index,
            c.variant,
            c.test_f1.map_or("failed".to_string(), |f| format!("{f:.2}"))
        );
    };
    let report = run_experiment_grid(&job, Some(&progress))?;
    write_text(Some(&a.out), &report.to_jsonl()?)?;
    print!("{}", report.render_table());
    Ok(())
}
