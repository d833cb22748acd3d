//! Acceptance run: prints one PASS / FAIL / NOT RUN line per criterion and a
//! summary. Failures are reported, not fatal, so `cargo test` stays usable;
//! `CRNN_ACCEPTANCE_STRICT=1` makes any failure exit non-zero.
//!
//! `CRNN_ACCEPTANCE=1,4,7` restricts the run to the listed criteria.
//! `CRNN_LONG_RUN=1` enables criterion 10, a training run budgeted at two CPU hours.

use std::collections::BTreeSet;
use std::fs;
use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cpu_time::ProcessTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnn_cli::commands::{self, TrainSummary};
use crnn_cli::RunConfig;
use crnn_core::ctc::{brute_force_sequence_probability, collapse, sequence_probability, FrameDistributions};
use crnn_core::decode::{best_path_decode, edit_distance, lexicon_decode, BkTree, Lexicon};
use crnn_core::gradcheck::{CTC_CHECK, LAYER_CHECKS};
use crnn_core::model::encode_checkpoint;
use crnn_core::optim::{OptimizerConfig, OptimizerKind};
use crnn_core::synth::{normalize_input, normalize_to_width, random_label, Dataset, DatasetSpec, Split};
use crnn_core::train::{epoch_rng, evaluate, predict, TrainSample, Trainer};
use crnn_core::{Alphabet, LabelSequence, Model, ModelConfig, Tensor};

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

struct Context {
    dir: tempfile::TempDir,
    toy: Option<ToyRuns>,
}

/// The toy preset trained with each optimizer on one dataset and seed.
struct ToyRuns {
    dataset: PathBuf,
    checkpoint: PathBuf,
    adadelta: TrainSummary,
    momentum: TrainSummary,
}

const TOY_TARGET_LOSS: f64 = 1.0;
const TOY_MAX_EPOCHS: usize = 15;

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn toy(&mut self) -> Result<&ToyRuns, Box<dyn std::error::Error>> {
        if self.toy.is_none() {
            let dataset = self.path("toy-data");
            let mut gen = RunConfig {
                dataset: Some(dataset.clone()),
                alphabet: Some(Alphabet::digits()),
                n: 2000,
                seed: 3,
                report: Some(self.path("toy-gen.tsv")),
                ..RunConfig::default()
            };
            gen.max_len = 8;
            commands::gen(&gen)?;
            let run = |kind: OptimizerKind| -> Result<TrainSummary, Box<dyn std::error::Error>> {
                let mut c = RunConfig {
                    dataset: Some(dataset.clone()),
                    checkpoint: Some(self.path(&format!("toy-{kind}.ckpt"))),
                    report: Some(self.path(&format!("toy-{kind}.tsv"))),
                    preset: "toy".into(),
                    seed: 1,
                    epochs: TOY_MAX_EPOCHS,
                    target_loss: Some(TOY_TARGET_LOSS),
                    val_limit: Some(50),
                    ..RunConfig::default()
                };
                c.optimizer.kind = kind;
                Ok(commands::train(&c)?)
            };
            let adadelta = run(OptimizerKind::Adadelta)?;
            let momentum = run(OptimizerKind::Momentum)?;
            self.toy = Some(ToyRuns {
                checkpoint: self.path("toy-adadelta.ckpt"),
                dataset,
                adadelta,
                momentum,
            });
        }
        Ok(self.toy.as_ref().expect("just built"))
    }
}

fn random_distributions(frames: usize, classes: usize, rng: &mut impl Rng) -> FrameDistributions {
    let logits = Tensor::from_fn(&[frames, classes], |_| rng.gen_range(-2.0..2.0));
    FrameDistributions::from_logits(&logits).expect("finite logits")
}

/// Every label sequence over `symbols` classes with length `0..=max_len`.
fn all_labels(max_len: usize, symbols: u32) -> Vec<LabelSequence> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u32>| {
                (1..=symbols).map(move |c| {
                    let mut e = s.clone();
                    e.push(c);
                    e
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out.into_iter().map(|v| LabelSequence::new(v).expect("no blanks")).collect()
}

fn ctc_oracle(_: &mut Context) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let frames = rng.gen_range(1..=6);
        let symbols = rng.gen_range(1..=3u32);
        let y = random_distributions(frames, symbols as usize + 1, &mut rng);
        let len = rng.gen_range(0..=3);
        let l = LabelSequence::new((0..len).map(|_| rng.gen_range(1..=symbols)).collect())?;
        let dp = sequence_probability(&l, &y)?;
        let bf = brute_force_sequence_probability(&l, &y)?;
        worst = worst.max((dp - bf).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(verdict(
        worst <= 1e-12 && secs < 60.0,
        format!("1000 instances (T <= 6, |L| <= 3), max |dp - enumeration| = {worst:.1e}, {secs:.2} s"),
    ))
}

fn ctc_normalization(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut worst, mut instances) = (0.0f64, 0);
    for frames in 1..=5 {
        for symbols in 1..=3u32 {
            let labels = all_labels(frames, symbols);
            for _ in 0..20 {
                let y = random_distributions(frames, symbols as usize + 1, &mut rng);
                let total: f64 = labels.iter().map(|l| sequence_probability(l, &y)).sum::<Result<f64, _>>()?;
                worst = worst.max((total - 1.0).abs());
                instances += 1;
            }
        }
    }
    Ok(verdict(
        worst <= 1e-10,
        format!("{instances} distributions (T <= 5, |L| <= 3), max |sum - 1| = {worst:.1e}"),
    ))
}

fn gradient_fidelity(_: &mut Context) -> Outcome {
    const INSTANCES: u64 = 100;
    const BOUND: f64 = 1e-5;
    let mut worst_overall = 0.0f64;
    let mut parts = Vec::new();
    for check in std::iter::once(&CTC_CHECK).chain(LAYER_CHECKS) {
        let worst = check.run(INSTANCES);
        worst_overall = worst_overall.max(worst);
        parts.push(format!("{} {worst:.0e}", check.name));
    }
    Ok(verdict(
        worst_overall < BOUND,
        format!(
            "{INSTANCES} instances each, worst relative error {worst_overall:.1e} ({})",
            parts.join(", ")
        ),
    ))
}

fn worked_example(_: &mut Context) -> Outcome {
    let alphabet = Alphabet::alphanumeric();
    let path = alphabet.parse_path("--hh-e-l-ll-oo--")?;
    let collapsed = alphabet.decode(&collapse(&path, alphabet.num_classes())?);
    // the same path as the per-frame argmax of a distribution
    let k = alphabet.num_classes();
    let probs: Vec<f64> = path
        .iter()
        .flat_map(|&c| (0..k as u32).map(move |j| if j == c { 0.5 } else { 0.5 / (k - 1) as f64 }))
        .collect();
    let decoded = alphabet.decode(&best_path_decode(&FrameDistributions::new(path.len(), k, probs)?));
    Ok(verdict(
        collapsed == "hello" && decoded == "hello",
        format!("collapse gives {collapsed:?}, best-path decoding gives {decoded:?}"),
    ))
}

fn model_size(_: &mut Context) -> Outcome {
    let config = ModelConfig::standard(Alphabet::alphanumeric());
    let model = Model::build(&config, 0)?;
    let params = model.num_parameters();
    let bytes = encode_checkpoint(&model, 0, &[]).len();
    let param_dev = params as f64 / 8.3e6 - 1.0;
    let size_dev = bytes as f64 / 33e6 - 1.0;
    Ok(verdict(
        config.num_classes() == 37 && param_dev.abs() <= 0.1 && size_dev.abs() <= 0.1,
        format!(
            "{} classes, {params} parameters ({:+.1}% vs 8.3M), checkpoint {bytes} bytes ({:+.1}% vs 33 MB)",
            config.num_classes(),
            param_dev * 100.0,
            size_dev * 100.0
        ),
    ))
}

fn shape_law(_: &mut Context) -> Outcome {
    let model = Model::build(&ModelConfig::standard(Alphabet::alphanumeric()), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut forward_frames = Vec::new();
    for width in [100, 104, 108, 160] {
        let image = Tensor::from_fn(&[1, 32, width], |_| rng.gen_range(-0.5..0.5));
        forward_frames.push((width, model.forward(&image)?.frames()));
    }
    let law = (100..=800).step_by(4).all(|w| {
        model.frames_for_width(w + 4) == model.frames_for_width(w).map(|t| t + 1)
            && model.frames_for_width(w) == Some(w / 4 - 1)
    });
    let steps = forward_frames.iter().all(|&(w, t)| t == w / 4 - 1);
    let t100 = forward_frames[0].1;
    Ok(verdict(
        t100 == 24 && law && steps,
        format!(
            "100x32 gives T = {t100} (T = W/4 - 1; 25 frames would need W = 104); forward frames {forward_frames:?}; +1 frame per +4 px for W in 100..=800"
        ),
    ))
}

fn bk_tree_exactness(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut mismatches = 0usize;
    let mut total_found = 0usize;
    for lex in 0..100 {
        let symbols: String = "0123456789abcdefghijklmnopqrstuvwxyz".chars().take(rng.gen_range(3..=36)).collect();
        let alphabet = Alphabet::new(&symbols, false)?;
        let mut entries = BTreeSet::new();
        while entries.len() < 10_000 {
            entries.insert(random_label(&alphabet, 1, 10, &mut rng));
        }
        let lexicon = Lexicon::new(entries);
        let tree = BkTree::build(&lexicon)?;
        if !tree.check_invariants() {
            return Ok(Verdict::Fail(format!("lexicon {lex}: tree invariants violated")));
        }
        for q in 0..100 {
            // half the queries are perturbed entries, half are unrelated
            let query = if q % 2 == 0 {
                let base = lexicon.entries()[rng.gen_range(0..lexicon.len())].as_slice().to_vec();
                let mut v = base;
                for _ in 0..rng.gen_range(0..=3) {
                    let i = rng.gen_range(0..v.len());
                    v[i] = rng.gen_range(1..=alphabet.len() as u32);
                }
                LabelSequence::new(v)?
            } else {
                random_label(&alphabet, 1, 10, &mut rng)
            };
            let distances: Vec<usize> = lexicon
                .entries()
                .iter()
                .map(|e| edit_distance(e.as_slice(), query.as_slice()))
                .collect();
            for delta in 0..=5 {
                let expected: BTreeSet<&LabelSequence> = lexicon
                    .entries()
                    .iter()
                    .zip(&distances)
                    .filter(|(_, &d)| d <= delta)
                    .map(|(e, _)| e)
                    .collect();
                let found: Vec<&LabelSequence> = tree.query(&query, delta);
                let found_set: BTreeSet<&LabelSequence> = found.iter().copied().collect();
                total_found += found.len();
                mismatches += usize::from(found_set != expected || found_set.len() != found.len());
            }
        }
    }
    let axioms = metric_axioms(&mut rng);
    Ok(verdict(
        mismatches == 0 && axioms.is_ok(),
        format!(
            "100 lexicons x 10^4 entries x 100 queries x delta 0..=5: {mismatches} mismatches ({total_found} hits); metric axioms on 10^4 triples: {}",
            axioms.err().unwrap_or_else(|| "hold".into())
        ),
    ))
}

fn metric_axioms(rng: &mut impl Rng) -> Result<(), String> {
    let alphabet = Alphabet::new("abc", false).expect("valid");
    let word = |rng: &mut dyn rand::RngCore| {
        let len = rng.gen_range(0..=8);
        (0..len).map(|_| rng.gen_range(1..=alphabet.len() as u32)).collect::<Vec<u32>>()
    };
    for i in 0..10_000 {
        let (a, b, c) = (word(rng), word(rng), word(rng));
        let (ab, ba, bc, ac) = (
            edit_distance(&a, &b),
            edit_distance(&b, &a),
            edit_distance(&b, &c),
            edit_distance(&a, &c),
        );
        let ok = edit_distance(&a, &a) == 0
            && (ab == 0) == (a == b)
            && ab == ba
            && ac <= ab + bc
            && ab <= a.len().max(b.len())
            && ab >= a.len().abs_diff(b.len());
        if !ok {
            return Err(format!("violated at triple {i}: {a:?} {b:?} {c:?}"));
        }
    }
    Ok(())
}

fn delta_monotonicity(ctx: &mut Context) -> Outcome {
    let (dataset_dir, checkpoint) = {
        let toy = ctx.toy()?;
        (toy.dataset.clone(), toy.checkpoint.clone())
    };
    let dataset = Dataset::load(&dataset_dir)?;
    let ckpt = crnn_core::model::read_checkpoint(&checkpoint)?;
    let model = Model::from_checkpoint(&ckpt)?;
    let samples: Vec<TrainSample> = dataset
        .split(Split::Test)
        .map(|s| {
            Ok(TrainSample {
                image: normalize_input(&s.image.to_tensor())?,
                label: s.label.clone(),
            })
        })
        .collect::<Result<_, crnn_core::Error>>()?;
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let ys = predict(&model, &images, 16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut entries: BTreeSet<LabelSequence> = dataset.samples.iter().map(|s| s.label.clone()).collect();
    while entries.len() < 10_000 {
        entries.insert(random_label(&dataset.spec.alphabet, 1, 8, &mut rng));
    }
    let tree = BkTree::build(&Lexicon::new(entries))?;
    let mut violations = 0;
    let mut rows = Vec::new();
    let mut previous: Option<Vec<(f64, usize)>> = None;
    for delta in 0..=5 {
        let mut current = Vec::with_capacity(ys.len());
        let mut correct = 0;
        for (y, s) in ys.iter().zip(&samples) {
            let out = lexicon_decode(y, &tree, delta)?;
            correct += usize::from(out.sequence == s.label);
            current.push((out.probability(), out.candidates));
        }
        if let Some(prev) = &previous {
            violations += prev
                .iter()
                .zip(&current)
                .filter(|(p, c)| c.0 < p.0 || c.1 < p.1)
                .count();
        }
        let n = current.len() as f64;
        rows.push(format!(
            "d{delta}: acc {:.3} cand {:.1}",
            correct as f64 / n,
            current.iter().map(|c| c.1).sum::<usize>() as f64 / n
        ));
        previous = Some(current);
    }
    Ok(verdict(
        violations == 0,
        format!(
            "toy model, {} test samples, 10^4-entry lexicon: {violations} per-sample decreases; {}",
            samples.len(),
            rows.join(", ")
        ),
    ))
}

fn overfit(_: &mut Context) -> Outcome {
    const MAX_EPOCHS: usize = 300;
    const BUDGET_SECS: f64 = 900.0;
    let alphabet = Alphabet::alphanumeric();
    let data = Dataset::generate(&DatasetSpec::new(32, alphabet.clone(), 9))?;
    let samples: Vec<TrainSample> = data
        .samples
        .iter()
        .map(|s| {
            Ok(TrainSample {
                image: normalize_to_width(&s.image.to_tensor(), 100)?,
                label: s.label.clone(),
            })
        })
        .collect::<Result<_, crnn_core::Error>>()?;
    let mut trainer = Trainer::new(Model::build(&ModelConfig::simplified(alphabet), 9)?, &OptimizerConfig::default())?;
    let started = ProcessTime::now();
    let mut reached = None;
    let (mut accuracy, mut best, mut epochs) = (0.0, 0.0f64, 0);
    // run every epoch the criterion allows, so the epoch and time bounds are
    // judged separately; the cap only guards against a pathologically slow build
    for epoch in 1..=MAX_EPOCHS {
        epochs = epoch;
        trainer.run_epoch(&samples, 16, &mut epoch_rng(9, epoch - 1), |_, _| ControlFlow::Continue(()))?;
        accuracy = evaluate(&trainer.model, &samples, 16)?.accuracy();
        best = best.max(accuracy);
        if accuracy == 1.0 {
            reached = Some(epoch);
            break;
        }
        if started.elapsed().as_secs_f64() > 3.0 * BUDGET_SECS {
            break;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok(match reached {
        Some(epoch) => verdict(
            secs <= BUDGET_SECS,
            format!("simplified preset memorized 32 samples after {epoch} epochs in {secs:.0} CPU s (limit {BUDGET_SECS})"),
        ),
        None => Verdict::Fail(format!(
            "simplified preset at {accuracy:.3} training accuracy on 32 samples (best {best:.3}) after {epochs} epochs, {secs:.0} CPU s"
        )),
    })
}

fn desk_scale(ctx: &mut Context) -> Outcome {
    if std::env::var("CRNN_LONG_RUN").as_deref() != Ok("1") {
        return Ok(Verdict::NotRun("two CPU-hour run; set CRNN_LONG_RUN=1 to include it".into()));
    }
    let data = ctx.path("digits-50k");
    let gen = RunConfig {
        dataset: Some(data.clone()),
        alphabet: Some(Alphabet::digits()),
        n: 50_000,
        seed: 10,
        report: Some(ctx.path("digits-gen.tsv")),
        ..RunConfig::default()
    };
    commands::gen(&gen)?;
    let train = RunConfig {
        dataset: Some(data.clone()),
        checkpoint: Some(ctx.path("digits.ckpt")),
        report: Some(ctx.path("digits-train.tsv")),
        preset: "standard".into(),
        seed: 10,
        epochs: 3,
        cpu_budget: Some(6600.0),
        validate_every: Some(200),
        val_limit: Some(500),
        target_accuracy: Some(0.95),
        ..RunConfig::default()
    };
    let summary = commands::train(&train)?;
    let dataset = Dataset::load(&data)?;
    let ckpt = crnn_core::model::read_checkpoint(&ctx.path("digits.ckpt"))?;
    let model = Model::from_checkpoint(&ckpt)?;
    let test: Vec<TrainSample> = dataset
        .split(Split::Test)
        .map(|s| {
            Ok(TrainSample {
                image: normalize_input(&s.image.to_tensor())?,
                label: s.label.clone(),
            })
        })
        .collect::<Result<_, crnn_core::Error>>()?;
    let accuracy = evaluate(&model, &test, 16)?.accuracy();
    Ok(verdict(
        accuracy >= 0.9 && summary.cpu_seconds <= 7200.0,
        format!(
            "test accuracy {accuracy:.4} on {} samples after {} steps, {:.0} CPU s of training",
            test.len(),
            summary.steps,
            summary.cpu_seconds
        ),
    ))
}

fn optimizer_comparison(ctx: &mut Context) -> Outcome {
    let toy = ctx.toy()?;
    let first = |s: &TrainSummary| s.epoch_losses.iter().position(|&l| l <= TOY_TARGET_LOSS).map(|i| i + 1);
    let (ada, mom) = (first(&toy.adadelta), first(&toy.momentum));
    let show = |e: Option<usize>| e.map_or(format!("not within {TOY_MAX_EPOCHS}"), |e| e.to_string());
    Ok(verdict(
        matches!((ada, mom), (Some(a), Some(m)) if a < m) || (ada.is_some() && mom.is_none()),
        format!(
            "epochs to training loss <= {TOY_TARGET_LOSS}: adadelta {}, momentum {} (toy preset, 1600 samples, seed 1)",
            show(ada),
            show(mom)
        ),
    ))
}

fn crnn(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("crnn {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Report text with timing columns (names ending in `_ms`) blanked.
fn without_timings(text: &str) -> String {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let timed: Vec<bool> = header.split('\t').map(|c| c.ends_with("_ms")).collect();
    let mut out = String::from(header);
    for line in lines {
        out.push('\n');
        let fields: Vec<&str> = line
            .split('\t')
            .enumerate()
            .map(|(i, f)| if timed.get(i) == Some(&true) { "*" } else { f })
            .collect();
        out.push_str(&fields.join("\t"));
    }
    out
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).expect("readable dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn determinism(ctx: &mut Context) -> Outcome {
    let script: &[&[&str]] = &[
        &["gen", "--dataset", "data", "--n", "120", "--seed", "5", "--alphabet", "digits", "--lexicon", "lex.txt", "--lexicon-size", "500", "--report", "gen.tsv"],
        &["train", "--dataset", "data", "--checkpoint", "model.ckpt", "--preset", "toy", "--epochs", "2", "--seed", "5", "--validate-every", "4", "--report", "train.tsv"],
        &["eval", "--dataset", "data", "--checkpoint", "model.ckpt", "--lexicon", "lex.txt", "--search", "tree", "--report", "eval.tsv"],
        &["decode", "data/000000.pgm", "--checkpoint", "model.ckpt", "--lexicon", "lex.txt", "--report", "decode.tsv"],
        &["bench-delta", "--dataset", "data", "--checkpoint", "model.ckpt", "--lexicon", "lex.txt", "--report", "bench.tsv"],
    ];
    let runs = [ctx.path("determinism-a"), ctx.path("determinism-b")];
    for dir in &runs {
        fs::create_dir_all(dir)?;
        for args in script {
            crnn(dir, args)?;
        }
    }
    let (a, b) = (files(&runs[0]), files(&runs[1]));
    let rel = |root: &Path, ps: &[PathBuf]| -> Vec<PathBuf> {
        ps.iter().map(|p| p.strip_prefix(root).expect("inside root").to_path_buf()).collect()
    };
    if rel(&runs[0], &a) != rel(&runs[1], &b) {
        return Ok(Verdict::Fail("the two runs produced different file sets".into()));
    }
    let mut differing = Vec::new();
    for (pa, pb) in a.iter().zip(&b) {
        let (x, y) = (fs::read(pa)?, fs::read(pb)?);
        let same = if pa.extension().is_some_and(|e| e == "tsv") {
            without_timings(&String::from_utf8(x)?) == without_timings(&String::from_utf8(y)?)
        } else {
            x == y
        };
        if !same {
            differing.push(pa.strip_prefix(&runs[0])?.display().to_string());
        }
    }
    Ok(verdict(
        differing.is_empty(),
        format!(
            "gen, train, eval, decode and bench-delta run twice: {} files compared, {} differ{} (timing columns excluded)",
            a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    ))
}

type Criterion = (u8, &'static str, fn(&mut Context) -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "CTC oracle equivalence", ctc_oracle),
    (2, "CTC normalization", ctc_normalization),
    (3, "gradient fidelity", gradient_fidelity),
    (4, "worked collapse example", worked_example),
    (5, "model size", model_size),
    (6, "shape law", shape_law),
    (7, "BK-tree exactness", bk_tree_exactness),
    (8, "monotonicity in delta", delta_monotonicity),
    (9, "overfit oracle", overfit),
    (10, "desk-scale learning", desk_scale),
    (11, "optimizer comparison", optimizer_comparison),
    (12, "determinism", determinism),
];

fn main() {
    let only: Option<Vec<u8>> = std::env::var("CRNN_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut ctx = Context {
        dir: tempfile::tempdir().expect("temporary directory"),
        toy: None,
    };
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for &(id, name, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut ctx)));
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match result {
            Ok(Ok(Verdict::Pass(d))) => ("PASS", d),
            Ok(Ok(Verdict::Fail(d))) => ("FAIL", d),
            Ok(Ok(Verdict::NotRun(d))) => ("NOT RUN", d),
            Ok(Err(e)) => ("FAIL", format!("error: {e}")),
            Err(_) => ("FAIL", "panicked".into()),
        };
        match status {
            "PASS" => passed += 1,
            "FAIL" => failed += 1,
            _ => skipped += 1,
        }
        println!("criterion {id:>2} {status:<7} {name}: {detail} [{secs:.1} s]");
    }
    println!("acceptance: {passed} passed, {failed} failed, {skipped} not run");
    if failed > 0 && std::env::var("CRNN_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
