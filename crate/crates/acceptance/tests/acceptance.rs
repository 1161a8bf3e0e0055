//! Acceptance suite: one PASS/FAIL line per criterion, numbered 1 to 10.
//! Runs without the libtest harness so the lines always print.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sessrec::checkpoint::save_checkpoint;
use sessrec::cooc::{count_pairs, count_prefix_pairs, CoocCounts, CoocGraph};
use sessrec::corpus::{chronological_split, Item, ItemId, Session, Splits};
use sessrec::evaluation::{disentanglement_score, export_embeddings, rank_metrics};
use sessrec::explain::{select_template, ExplainConfig, ExplanationKind, FALLBACK_TEXT};
use sessrec::fixtures::{generate, Cause, PlantedCorpus, PlantedRuleSpec};
use sessrec::itemrepr::{cooccurrence_loss, propagate_ids, ModalityTable, TokenEncoder};
use sessrec::model::{evaluate_sessions, Embeddings};
use sessrec::ratio::{LossDiagnostics, RatioMode};
use sessrec::sessionmodel::{
    counterfactual_loss, encode_session, proxy_loss, rec_loss, score_all, ModelParams, RecLossMode,
};
use sessrec::trainer::{
    batch_objective, train, training_examples, write_train_log, TrainConfig, TrainInputs, TrainOutcome,
};
use sessrec::{Tape, Tensor, Var};

const FD_STEP: f64 = 1e-5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_sessions(r: &mut ChaCha8Rng, n_items: usize, count: usize, max_len: usize) -> Vec<Session> {
    (0..count)
        .map(|k| {
            let len = r.random_range(1..=max_len);
            Session {
                session_id: k as u64,
                items: (0..len).map(|_| r.random_range(0..n_items)).collect(),
                timestamp: k as i64,
            }
        })
        .collect()
}

// ---------------------------------------------------------------- 1

/// Max relative error between tape gradients and central differences.
/// `build` binds the inputs itself and returns (scalar output, input vars).
fn gradient_error(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Tensor<f64>]) -> (Var, Vec<Var>)) -> f64 {
    let mut tape = Tape::new();
    let (out, vars) = build(&mut tape, inputs);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(|g| g.to_f64_vec())
                .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
        })
        .collect();
    let eval = |xs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let (o, _) = build(&mut t, xs);
        t.scalar_value(o).unwrap()
    };
    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for t in 0..inputs.len() {
        for k in 0..inputs[t].numel() {
            let orig = work[t].data()[k];
            work[t].data_mut()[k] = orig + FD_STEP;
            let plus = eval(&work);
            work[t].data_mut()[k] = orig - FD_STEP;
            let minus = eval(&work);
            work[t].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[t][k];
            // floor keeps analytically-zero components on an absolute scale
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
    }
    worst
}

fn with_params(p: &ModelParams<f64>, xs: &[Tensor<f64>]) -> ModelParams<f64> {
    let mut q = p.clone();
    for (slot, x) in q.tensors_mut().into_iter().zip(xs) {
        *slot = x.clone();
    }
    q
}

fn criterion_gradients() -> Verdict {
    let start = Instant::now();
    let (n, d) = (20, 8);
    let mut r = rng(101);
    let train_sessions = random_sessions(&mut r, n, 40, 5);
    let graph = CoocGraph::<f64>::build(count_prefix_pairs(&train_sessions, n), n).unwrap();
    let pooled = random_tensor(&mut r, &[n, 6]);
    let config = TrainConfig {
        dim: d,
        encoder_dim: 6,
        max_len: 6,
        constraint_size: 3,
        lambda: 0.5,
        ..TrainConfig::default()
    };
    let shape = config.shape(n);
    let params = ModelParams::<f64>::init(shape, &mut r).unwrap();
    let tensors: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let examples: Vec<(Vec<ItemId>, ItemId)> = training_examples(&train_sessions, false).into_iter().take(4).collect();
    let mut sample_rng = rng(7);
    let sets: Vec<_> = (0..n)
        .map(|i| (i, graph.sample_constraint_sets(i, 3, &mut sample_rng)))
        .collect();
    let mut errors = Vec::new();

    // co-occurrence loss through propagation
    let e_hat = random_tensor(&mut r, &[n, d]);
    errors.push((
        "co-occurrence",
        gradient_error(&[e_hat], |tape, xs| {
            let e_hat = tape.param(xs[0].clone());
            let a = tape.constant(graph.matrix().clone());
            let e = propagate_ids(tape, e_hat, a, 2).unwrap();
            let l = cooccurrence_loss(tape, e, &sets, RatioMode::Shifted, &mut LossDiagnostics::default()).unwrap();
            (l, vec![e_hat])
        }),
    ));

    // session-level losses over the full parameter set
    let (prefix, label) = examples[0].clone();
    let e = random_tensor(&mut r, &[n, d]);
    let e_mo = random_tensor(&mut r, &[n, d]);
    let mut inputs = tensors.clone();
    inputs.push(e);
    inputs.push(e_mo);
    let k = tensors.len();
    let session_loss = |which: &'static str| {
        let prefix = prefix.clone();
        let params = &params;
        let graph = &graph;
        move |tape: &mut Tape<f64>, xs: &[Tensor<f64>]| {
            let q = with_params(params, &xs[..k]);
            let bound = q.bind(tape, true);
            let e = tape.param(xs[k].clone());
            let e_mo = tape.param(xs[k + 1].clone());
            let st = encode_session(tape, &bound, e, e_mo, &prefix).unwrap();
            let mut diag = LossDiagnostics::default();
            let out = match which {
                "proxy" => proxy_loss(tape, &st, &bound.proxy, RatioMode::Shifted, &mut diag).unwrap(),
                "counterfactual" => {
                    let lid = tape.gather_rows(e, &[label]).unwrap();
                    let lid = tape.transpose(lid).unwrap();
                    let lmo = tape.gather_rows(e_mo, &[label]).unwrap();
                    let lmo = tape.transpose(lmo).unwrap();
                    let in_ns = graph.label_in_union(&prefix, label);
                    counterfactual_loss(tape, st.s_id, st.s_mo, lid, lmo, in_ns, RatioMode::Shifted, &mut diag).unwrap()
                }
                mode => {
                    let y = score_all(tape, st.s_id, st.s_mo, e, e_mo).unwrap();
                    let m = if mode == "bce" {
                        RecLossMode::Bce
                    } else {
                        RecLossMode::SoftmaxCe
                    };
                    rec_loss(tape, y, label, m).unwrap()
                }
            };
            let mut vars = bound.vars();
            vars.push(e);
            vars.push(e_mo);
            (out, vars)
        }
    };
    for which in ["proxy", "counterfactual", "bce", "softmax-ce"] {
        errors.push((which, gradient_error(&inputs, session_loss(which))));
    }

    // full composite objective
    errors.push((
        "composite",
        gradient_error(&tensors, |tape, xs| {
            let q = with_params(&params, xs);
            let bound = q.bind(tape, true);
            let mut neg_rng = rng(77);
            let (total, _) = batch_objective(
                tape,
                &bound,
                &config,
                &graph,
                &pooled,
                &examples,
                &mut neg_rng,
                &mut LossDiagnostics::default(),
            )
            .unwrap();
            (total, bound.vars())
        }),
    ));

    let elapsed = start.elapsed();
    let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = errors
        .iter()
        .map(|(name, e)| format!("{name} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        worst < 1e-6 && within(elapsed, 5.0),
        format!("max rel err {worst:.1e} [{detail}] in {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 2

fn brute_counts(lists: &[Vec<ItemId>], n: usize) -> Vec<Vec<u32>> {
    let mut c = vec![vec![0u32; n]; n];
    for i in 0..n {
        for k in 0..n {
            if i != k {
                c[i][k] = lists.iter().filter(|l| l.contains(&i) && l.contains(&k)).count() as u32;
            }
        }
    }
    c
}

fn graph_matches(graph: &CoocGraph<f64>, oracle: &[Vec<u32>]) -> (bool, f64) {
    let n = oracle.len();
    let mut exact = graph.n() == n;
    let mut worst_row = 0.0f64;
    for i in 0..n {
        let total: u32 = oracle[i].iter().sum();
        let mut row_sum = 0.0;
        for k in 0..n {
            let want = if total == 0 {
                0.0
            } else {
                oracle[i][k] as f64 / total as f64
            };
            exact &= graph.count(i, k) == oracle[i][k] && graph.weight(i, k) == want;
            exact &= graph.neighbors(i).contains(&k) == (oracle[i][k] > 0);
            row_sum += graph.weight(i, k);
        }
        if total > 0 {
            worst_row = worst_row.max((row_sum - 1.0).abs());
        }
    }
    (exact, worst_row)
}

fn criterion_graph() -> Verdict {
    let start = Instant::now();
    let mut r = rng(202);
    let mut all_exact = true;
    let mut worst_row = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..30);
        let count = r.random_range(1..40);
        let sessions = random_sessions(&mut r, n, count, 8);
        let whole: Vec<Vec<ItemId>> = sessions.iter().map(|s| s.items.clone()).collect();
        let prefixes: Vec<Vec<ItemId>> = sessions.iter().map(|s| s.prefix().to_vec()).collect();
        for (counts, lists) in [
            (count_pairs(&sessions, n), whole),
            (count_prefix_pairs(&sessions, n), prefixes),
        ] {
            let graph = CoocGraph::<f64>::build(counts, n).unwrap();
            let (exact, row) = graph_matches(&graph, &brute_counts(&lists, n));
            all_exact &= exact;
            worst_row = worst_row.max(row);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        all_exact && worst_row <= 1e-9 && within(elapsed, 5.0),
        format!("100 corpora exact={all_exact}, worst row-sum deviation {worst_row:.1e} in {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 3

fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|t| row[t] * b[t][j]).sum()).collect())
        .collect()
}

fn criterion_propagation() -> Verdict {
    let start = Instant::now();
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = r.random_range(2..25);
        let d = r.random_range(1..10);
        let sessions = random_sessions(&mut r, n, 30, 6);
        let graph = CoocGraph::<f64>::build(count_pairs(&sessions, n), n).unwrap();
        let e_hat = random_tensor(&mut r, &[n, d]);
        let a_plus_i: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|k| graph.weight(i, k) + if i == k { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut reference: Vec<Vec<f64>> = (0..n).map(|i| e_hat.row(i).to_vec()).collect();
        for c in 0..=5 {
            if c > 0 {
                reference = dense_matmul(&a_plus_i, &reference);
            }
            let mut tape = Tape::new();
            let e = tape.constant(e_hat.clone());
            let a = tape.constant(graph.matrix().clone());
            let out = propagate_ids(&mut tape, e, a, c).unwrap();
            let got = tape.value(out);
            for i in 0..n {
                for j in 0..d {
                    worst = worst.max((got.at(i, j) - reference[i][j]).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && within(elapsed, 2.0),
        format!("c in 0..=5 over 20 instances, max abs err {worst:.1e} in {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_branching() -> Verdict {
    let start = Instant::now();
    let mut r = rng(404);
    let n = 30;
    let history = random_sessions(&mut r, n, 25, 4);
    let graph = CoocGraph::<f64>::build(count_prefix_pairs(&history, n), n).unwrap();
    let mut agree = 0;
    for _ in 0..1000 {
        let len = r.random_range(1..6);
        let prefix: Vec<ItemId> = (0..len).map(|_| r.random_range(0..n)).collect();
        let label = r.random_range(0..n);
        // N_s from the raw sessions: anything sharing a prefix with a session item
        let oracle_in_ns = prefix.iter().any(|&x| {
            x != label
                && history
                    .iter()
                    .any(|s| s.prefix().contains(&x) && s.prefix().contains(&label))
        });
        let mut tape = Tape::<f64>::new();
        let s_id = tape.constant(random_tensor(&mut r, &[4, 1]));
        let s_mo = tape.constant(random_tensor(&mut r, &[4, 1]));
        let l_id = tape.constant(random_tensor(&mut r, &[4, 1]));
        let l_mo = tape.constant(random_tensor(&mut r, &[4, 1]));
        let cos = |t: &Tape<f64>, a: Var, b: Var| t.value(a).cosine(t.value(b)).unwrap();
        let sim_id = cos(&tape, s_id, l_id);
        let sim_mo = cos(&tape, s_mo, l_mo);
        let favored = if oracle_in_ns { sim_id } else { sim_mo };
        let want = -(1.0 + favored) / ((1.0 + sim_id) + (1.0 + sim_mo) + 1e-8);
        let in_ns = graph.label_in_union(&prefix, label);
        let loss = counterfactual_loss(
            &mut tape,
            s_id,
            s_mo,
            l_id,
            l_mo,
            in_ns,
            RatioMode::Shifted,
            &mut LossDiagnostics::default(),
        )
        .unwrap();
        let got = tape.scalar_value(loss).unwrap();
        if in_ns == oracle_in_ns && (got - want).abs() < 1e-12 {
            agree += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        agree == 1000 && within(elapsed, 2.0),
        format!("{agree}/1000 pairs agree in {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_metrics() -> Verdict {
    let start = Instant::now();
    let mut r = rng(505);
    let mut exact = true;
    for _ in 0..100 {
        let n = r.random_range(1..60);
        let rows = r.random_range(1..30);
        // small integer range so ties are common
        let sessions: Vec<(Vec<f64>, ItemId)> = (0..rows)
            .map(|_| {
                (
                    (0..n).map(|_| r.random_range(0..8) as f64).collect(),
                    r.random_range(0..n),
                )
            })
            .collect();
        let report = rank_metrics(&sessions, &[10, 20]).unwrap();
        for k in [10, 20] {
            let (mut hits, mut rr) = (0usize, 0.0f64);
            for (scores, label) in &sessions {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
                let rank = order.iter().position(|&i| i == *label).unwrap() + 1;
                if rank <= k {
                    hits += 1;
                    rr += 1.0 / rank as f64;
                }
            }
            exact &= report.prec(k) == hits as f64 / rows as f64;
            exact &= report.mrr(k) == rr / rows as f64;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        exact && within(elapsed, 2.0),
        format!("100 score matrices exact={exact} in {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 6, 7, 8, 10

struct PlantedRun {
    fixture: PlantedCorpus,
    splits: Splits,
    graph: CoocGraph<f64>,
    pooled: Tensor<f64>,
}

impl PlantedRun {
    fn new() -> Self {
        let fixture = generate(&PlantedRuleSpec::default()).unwrap();
        let n = fixture.corpus.n();
        let splits = chronological_split(&fixture.corpus.sessions, [7, 2, 1]).unwrap();
        let graph = CoocGraph::build(count_prefix_pairs(&splits.train, n), n).unwrap();
        let pooled = ModalityTable::build(&fixture.corpus.items, &TokenEncoder::hashed(64))
            .unwrap()
            .pooled;
        Self {
            fixture,
            splits,
            graph,
            pooled,
        }
    }

    fn config(lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            dim: 32,
            propagation_steps: 2,
            lambda,
            max_epochs: 200,
            seed,
            ..TrainConfig::default()
        }
    }

    fn train(&self, config: &TrainConfig) -> TrainOutcome<f64> {
        let inputs = TrainInputs {
            graph: &self.graph,
            modality_pooled: &self.pooled,
            train: &self.splits.train,
            validation: &self.splits.validation,
        };
        train(config, &inputs).unwrap()
    }

    /// Validation and test sessions whose label was planted by modality.
    fn held_out_modality(&self) -> Vec<Session> {
        let skip = self.splits.train.len();
        self.fixture
            .corpus
            .sessions
            .iter()
            .zip(&self.fixture.causes)
            .skip(skip)
            .filter(|(_, c)| **c == Cause::Modality)
            .map(|(s, _)| s.clone())
            .collect()
    }

    fn prec10(&self, params: &ModelParams<f64>, sessions: &[Session]) -> f64 {
        let emb = Embeddings::compute(params, self.graph.matrix(), &self.pooled, 2).unwrap();
        evaluate_sessions(params, &emb, sessions, &[10, 20], false)
            .unwrap()
            .unwrap()
            .prec(10)
    }

    fn separation(&self, params: &ModelParams<f64>) -> f64 {
        let emb = Embeddings::compute(params, self.graph.matrix(), &self.pooled, 2).unwrap();
        disentanglement_score(&emb.ids, &emb.modality).unwrap()
    }

    /// Checkpoint, epoch log, split reports and embedding CSVs.
    fn write_artifacts(&self, out: &TrainOutcome<f64>, dir: &Path) {
        save_checkpoint(&dir.join("checkpoint"), &out.best).unwrap();
        write_train_log(&dir.join("train_log.csv"), &out.log).unwrap();
        for (name, split) in [("valid", &self.splits.validation), ("test", &self.splits.test)] {
            let report = out.best.evaluate(split, &[10, 20], false).unwrap().unwrap();
            std::fs::write(
                dir.join(format!("report_{name}.json")),
                serde_json::to_string_pretty(&report).unwrap(),
            )
            .unwrap();
        }
        let emb = out.best.embeddings().unwrap();
        export_embeddings(&dir.join("embeddings"), &emb.ids, &emb.modality).unwrap();
    }
}

fn criterion_overfit(run: &PlantedRun, out: &TrainOutcome<f64>, elapsed: Duration) -> Verdict {
    let prec = run.prec10(&out.last, &run.splits.train);
    verdict(
        prec >= 0.9 && out.epochs_run <= 200 && within(elapsed, 300.0),
        format!(
            "training Prec@10 {prec:.3} after {} epochs in {elapsed:.2?}",
            out.epochs_run
        ),
    )
}

fn criterion_ablation(run: &PlantedRun, seed42_full: &TrainOutcome<f64>) -> Verdict {
    let held = run.held_out_modality();
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in [42, 43] {
        let full = if seed == 42 {
            run.prec10(&seed42_full.best.params, &held)
        } else {
            run.prec10(&run.train(&PlantedRun::config(0.01, seed)).best.params, &held)
        };
        let ablated = run.prec10(&run.train(&PlantedRun::config(0.0, seed)).best.params, &held);
        let margin = full - ablated;
        pass &= margin >= 0.05;
        parts.push(format!("seed {seed}: {full:.3} vs {ablated:.3} (margin {margin:+.3})"));
    }
    verdict(
        pass,
        format!(
            "held-out modality Prec@10 over {} sessions, {}",
            held.len(),
            parts.join("; ")
        ),
    )
}

fn criterion_separation(run: &PlantedRun, out: &TrainOutcome<f64>) -> Verdict {
    let score = run.separation(&out.last);
    verdict(score > 1.0, format!("separation score {score:.3}"))
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_path_buf())
        .collect()
}

fn criterion_reproducibility(run: &PlantedRun, first: &TrainOutcome<f64>) -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run.write_artifacts(first, a.path());
    let second = run.train(&PlantedRun::config(0.01, 42));
    run.write_artifacts(&second, b.path());
    let files = files_under(a.path());
    let same_set = files == files_under(b.path());
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    verdict(
        same_set && differing.is_empty() && !files.is_empty(),
        format!("{} files compared, differing: {:?}", files.len(), differing),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_explanations() -> Verdict {
    let start = Instant::now();
    let mut r = rng(909);
    let vocab = [
        "red", "crimson", "blue", "shoe", "boot", "hat", "nba", "golf", "bag", "cup",
    ];
    // planted table: red~crimson and shoe~boot are near-duplicates
    let mut table = std::collections::HashMap::new();
    for (i, t) in vocab.iter().enumerate() {
        let mut v = vec![0.0; vocab.len()];
        v[i] = 1.0;
        table.insert(t.to_string(), v);
    }
    for (a, b) in [("red", "crimson"), ("shoe", "boot")] {
        let ia = vocab.iter().position(|t| *t == a).unwrap();
        table.get_mut(b).unwrap()[ia] = 3.0;
    }
    let enc = TokenEncoder::from_table(table).unwrap();
    let cfg = ExplainConfig::default();
    let n = 10;
    let mut failures = 0;
    let mut kinds = [0usize; 3];
    for case in 0..50 {
        let items: Vec<Item> = (0..n)
            .map(|i| {
                let k = r.random_range(0..3);
                let toks: Vec<&str> = (0..k).map(|_| vocab[r.random_range(0..vocab.len())]).collect();
                Item::new(i, &toks)
            })
            .collect();
        let mut counts = CoocCounts::empty(n);
        for i in 0..n {
            for k in i + 1..n {
                if r.random_bool(0.3) {
                    counts.set(i, k, r.random_range(1..25));
                }
            }
        }
        let len = r.random_range(1..5);
        let session: Vec<ItemId> = (0..len).map(|_| r.random_range(0..n)).collect();
        let rec = r.random_range(0..n);
        let e = select_template(&session, rec, &counts, &items, &enc, &cfg);

        let kappas: Vec<u32> = session.iter().map(|&x| counts.count(x, rec)).collect();
        let cooc_holds = kappas.iter().any(|&c| c > cfg.count_threshold);
        let pairs: BTreeSet<(String, String)> = session
            .iter()
            .flat_map(|&x| items[x].all_tokens().map(str::to_string).collect::<Vec<_>>())
            .flat_map(|f1| items[rec].all_tokens().map(move |f2| (f1.clone(), f2.to_string())))
            .filter(|(f1, f2)| enc.similarity(f1, f2) > cfg.sim_threshold)
            .collect();
        let ok = if cooc_holds {
            let kappa = *kappas.iter().max().unwrap();
            e.kind == ExplanationKind::Cooccurrence
                && e.kappa == Some(kappa)
                && e.text.contains(&format!("There are {kappa} people frequently buying"))
                && e.text.contains("You clicked")
                && e.text.contains("so we show you")
        } else if !pairs.is_empty() {
            e.kind == ExplanationKind::Feature
                && e.feature_pair.as_ref().is_some_and(|p| pairs.contains(p))
                && e.text.contains("You have bought")
                && e.text.contains("hence we recommend")
                && e.text.contains("also possessing")
        } else {
            e.kind == ExplanationKind::None && e.text == FALLBACK_TEXT
        };
        kinds[match e.kind {
            ExplanationKind::Cooccurrence => 0,
            ExplanationKind::Feature => 1,
            ExplanationKind::None => 2,
        }] += 1;
        if !ok {
            failures += 1;
            eprintln!("explanation case {case} mismatch: {e:?}");
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures == 0 && within(elapsed, 1.0),
        format!(
            "50 cases ({} co-occurrence, {} feature, {} fallback), {failures} mismatches in {elapsed:.2?}",
            kinds[0], kinds[1], kinds[2]
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |n: usize, v: Verdict| {
        println!("criterion {n}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, v));
    };
    report(1, criterion_gradients());
    report(2, criterion_graph());
    report(3, criterion_propagation());
    report(4, criterion_branching());
    report(5, criterion_metrics());

    let run = PlantedRun::new();
    let start = Instant::now();
    let main_run = run.train(&PlantedRun::config(0.01, 42));
    let elapsed = start.elapsed();
    report(6, criterion_overfit(&run, &main_run, elapsed));
    report(7, criterion_ablation(&run, &main_run));
    report(8, criterion_separation(&run, &main_run));
    report(9, criterion_explanations());
    report(10, criterion_reproducibility(&run, &main_run));

    let failed: Vec<usize> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
