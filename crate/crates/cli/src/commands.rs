use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sessrec::checkpoint::{load_checkpoint, read_manifest, save_checkpoint, MANIFEST_FILE};
use sessrec::cooc::{count_prefix_pairs, CoocCounts, CoocGraph};
use sessrec::corpus::{
    chronological_split, filter_corpus, load_corpus, read_items, read_sessions, write_items, write_sessions, Item,
    ItemId, Session,
};
use sessrec::evaluation::{export_embeddings, DEFAULT_CUTOFFS};
use sessrec::explain::{select_template, Explanation};
use sessrec::fixtures::{generate, PlantedRuleSpec};
use sessrec::itemrepr::{ModalityTable, TokenEncoder};
use sessrec::model::TrainedModel;
use sessrec::sessionmodel::ModelError;
use sessrec::trainer::{train, write_train_log, TrainError, TrainInputs};

use crate::config::RunConfig;
use crate::error::{require, CliError};
use crate::workspace::Workspace;
use crate::{Cli, Command, EvalArgs, ExplainArgs, ExportArgs, FixtureArgs, PrepareArgs, RecommendArgs, TrainArgs};

const SUMMARY_PAIRS: usize = 20;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    let ws = Workspace::new(&cli.workspace);
    match &cli.command {
        Command::Prepare(args) => prepare(cli, &mut config, &ws, args),
        Command::Graph => graph(&ws),
        Command::Train(args) => train_cmd(&mut config, &ws, args),
        Command::Eval(args) => eval(&ws, args),
        Command::Recommend(args) => recommend(&ws, args),
        Command::Explain(args) => explain(&mut config, &ws, args),
        Command::ExportEmbeddings(args) => export(&ws, args),
        Command::Fixtures(args) => fixtures(args),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::write(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::write(path, e))
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn input_path(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("`prepare` needs --{name} (or `{name}` in the config file)")))
}

fn prepare(cli: &Cli, config: &mut RunConfig, ws: &Workspace, args: &PrepareArgs) -> Result<(), CliError> {
    if let Some(v) = args.min_item_freq {
        config.filter.min_item_freq = v;
    }
    if let Some(v) = args.min_session_len {
        config.filter.min_session_len = v;
    }
    config.validate()?;
    let sessions_path = input_path(&cli.sessions, &config.sessions, "sessions")?;
    let items_path = input_path(&cli.items, &config.items, "items")?;
    for p in [&sessions_path, &items_path] {
        if !p.exists() {
            return Err(CliError::Data(format!("missing input {}", p.display())));
        }
    }
    let corpus = load_corpus(&sessions_path, &items_path).map_err(CliError::data)?;
    let filtered = filter_corpus(&corpus, config.filter).map_err(CliError::data)?;
    let splits = chronological_split(&filtered.corpus.sessions, config.split_ratios).map_err(CliError::data)?;

    create_dir(ws.root())?;
    write_items(&ws.items(), &filtered.corpus.items).map_err(CliError::runtime)?;
    for (name, part) in [
        ("train", &splits.train),
        ("valid", &splits.validation),
        ("test", &splits.test),
    ] {
        write_sessions(&ws.split(name), part).map_err(CliError::runtime)?;
    }
    write_text(&ws.id_map(), &json_line(&filtered.original_ids))?;
    println!("items\t{}", filtered.corpus.n());
    println!("train\t{}", splits.train.len());
    println!("valid\t{}", splits.validation.len());
    println!("test\t{}", splits.test.len());
    Ok(())
}

fn load_items(ws: &Workspace) -> Result<Vec<Item>, CliError> {
    require(&ws.items(), "prepare")?;
    read_items(&ws.items()).map_err(CliError::data)
}

fn load_split(ws: &Workspace, name: &str) -> Result<Vec<Session>, CliError> {
    let path = ws.split(name);
    require(&path, "prepare")?;
    read_sessions(&path).map_err(CliError::data)
}

fn graph(ws: &Workspace) -> Result<(), CliError> {
    let n = load_items(ws)?.len();
    let train = load_split(ws, "train")?;
    let counts = count_prefix_pairs(&train, n);
    counts.write_sidecar(&ws.graph()).map_err(CliError::runtime)?;
    let summary = counts.summary(SUMMARY_PAIRS);
    write_text(&ws.graph_summary(), &summary)?;
    print!("{summary}");
    Ok(())
}

fn load_counts(ws: &Workspace) -> Result<CoocCounts, CliError> {
    require(&ws.graph(), "graph")?;
    CoocCounts::read_sidecar(&ws.graph()).map_err(CliError::data)
}

fn encoder(config: &RunConfig, dim: usize) -> Result<TokenEncoder, CliError> {
    match &config.encoder_file {
        Some(path) => TokenEncoder::from_file(path).map_err(CliError::data),
        None => Ok(TokenEncoder::hashed(dim)),
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) => CliError::Usage(e.to_string()),
        TrainError::NoExamples
        | TrainError::CatalogMismatch { .. }
        | TrainError::Model(ModelError::UnknownItem { .. }) => CliError::Data(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn train_cmd(config: &mut RunConfig, ws: &Workspace, args: &TrainArgs) -> Result<(), CliError> {
    let t = &mut config.train;
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => {
            $(if let Some(v) = args.$arg {
                t.$field = v;
            })*
        };
    }
    set!(dim <- dim, propagation_steps <- propagation_steps, lambda <- lambda, learning_rate <- learning_rate,
         batch_size <- batch_size, max_epochs <- max_epochs, patience <- patience, seed <- seed);

    let items = load_items(ws)?;
    let train_sessions = load_split(ws, "train")?;
    let validation = load_split(ws, "valid")?;
    let counts = load_counts(ws)?;
    let enc = encoder(config, config.train.encoder_dim)?;
    if enc.dim() != config.train.encoder_dim {
        log::info!("encoder file has dimension {}; overriding encoder_dim", enc.dim());
        config.train.encoder_dim = enc.dim();
    }
    config.validate()?;
    let n = items.len();
    let graph = CoocGraph::<f64>::build(counts, n).map_err(CliError::data)?;
    let modality = ModalityTable::<f64>::build(&items, &enc).map_err(CliError::data)?;

    log::info!("effective config:\n{}", config.to_json());
    write_text(&ws.run_config(), &json_line(config))?;

    let inputs = TrainInputs {
        graph: &graph,
        modality_pooled: &modality.pooled,
        train: &train_sessions,
        validation: &validation,
    };
    let outcome = train(&config.train, &inputs).map_err(train_error)?;
    if outcome.loss_trend_flagged() {
        log::warn!("moving-average training loss increased during training");
    }
    if outcome.diagnostics.skipped_terms > 0 {
        log::warn!(
            "{} ratio terms skipped for near-zero denominators",
            outcome.diagnostics.skipped_terms
        );
    }

    let ckpt = ws.checkpoint();
    if ckpt.exists() {
        fs::remove_dir_all(&ckpt).map_err(|e| CliError::write(&ckpt, e))?;
    }
    save_checkpoint(&ckpt, &outcome.best).map_err(CliError::runtime)?;
    write_train_log(&ws.train_log(), &outcome.log).map_err(CliError::runtime)?;

    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!("epochs_run\t{}", outcome.epochs_run);
    println!("best_epoch\t{}", outcome.best.epoch);
    println!("val_prec20\t{}", fmt(outcome.best.val_prec20));
    println!("val_mrr20\t{}", fmt(outcome.best.val_mrr20));
    Ok(())
}

fn load_model(ws: &Workspace) -> Result<TrainedModel<f64>, CliError> {
    let ckpt = ws.checkpoint();
    require(&ckpt.join(MANIFEST_FILE), "train")?;
    load_checkpoint(&ckpt).map_err(CliError::data)
}

fn eval(ws: &Workspace, args: &EvalArgs) -> Result<(), CliError> {
    if args.info {
        let ckpt = ws.checkpoint();
        require(&ckpt.join(MANIFEST_FILE), "train")?;
        let m = read_manifest(&ckpt).map_err(CliError::data)?;
        if args.json {
            print!("{}", json_line(&m));
        } else {
            let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
            println!("{:<16}{}", "format_version", m.format_version);
            println!("{:<16}{}", "items", m.shape.n_items);
            println!("{:<16}{}", "dim", m.shape.dim);
            println!("{:<16}{}", "epoch", m.epoch);
            println!("{:<16}{}", "val_prec20", fmt(m.val_prec20));
            println!("{:<16}{}", "val_mrr20", fmt(m.val_mrr20));
            println!("{:<16}{}", "tensors", m.tensors.len());
        }
        return Ok(());
    }
    let model = load_model(ws)?;
    let sessions = load_split(ws, args.split.file_stem())?;
    let report = model
        .evaluate(&sessions, &DEFAULT_CUTOFFS, args.exclude_prefix)
        .map_err(CliError::data)?
        .ok_or_else(|| {
            CliError::Data(format!(
                "split `{}` has no session with a label",
                args.split.file_stem()
            ))
        })?;
    if args.json {
        print!("{}", json_line(&report));
    } else {
        print!("{report}");
    }
    Ok(())
}

fn parse_session(text: &str) -> Result<Vec<ItemId>, CliError> {
    let ids: Result<Vec<ItemId>, _> = text.split(',').map(|t| t.trim().parse::<ItemId>()).collect();
    match ids {
        Ok(ids) if !ids.is_empty() => Ok(ids),
        _ => Err(CliError::Usage(format!(
            "--session expects comma-separated item ids, got `{text}`"
        ))),
    }
}

fn ranked(
    model: &TrainedModel<f64>,
    session: &[ItemId],
    k: usize,
    exclude: bool,
) -> Result<Vec<(ItemId, f64)>, CliError> {
    let emb = model.embeddings().map_err(CliError::data)?;
    let all = model.recommend(&emb, session, model.n_items()).map_err(|e| match e {
        ModelError::UnknownItem { .. } | ModelError::EmptySession => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    Ok(all
        .into_iter()
        .filter(|(id, _)| !exclude || !session.contains(id))
        .take(k)
        .collect())
}

fn recommend(ws: &Workspace, args: &RecommendArgs) -> Result<(), CliError> {
    let session = parse_session(&args.session)?;
    let model = load_model(ws)?;
    for (id, score) in ranked(&model, &session, args.top_k, args.exclude_session)? {
        println!("{id}\t{score:.6}");
    }
    Ok(())
}

#[derive(Serialize)]
struct ExplainedItem {
    item_id: ItemId,
    score: f64,
    explanation: Explanation,
}

fn explain(config: &mut RunConfig, ws: &Workspace, args: &ExplainArgs) -> Result<(), CliError> {
    if let Some(v) = args.count_threshold {
        config.explain.count_threshold = v;
    }
    if let Some(v) = args.sim_threshold {
        config.explain.sim_threshold = v;
    }
    config.explain.validate().map_err(CliError::Usage)?;
    let session = parse_session(&args.session)?;
    let model = load_model(ws)?;
    let items = load_items(ws)?;
    let counts = load_counts(ws)?;
    let enc = encoder(config, model.config.encoder_dim)?;
    let out: Vec<ExplainedItem> = ranked(&model, &session, args.top_k, args.exclude_session)?
        .into_iter()
        .map(|(item_id, score)| ExplainedItem {
            item_id,
            score,
            explanation: select_template(&session, item_id, &counts, &items, &enc, &config.explain),
        })
        .collect();
    if args.json {
        print!("{}", json_line(&out));
    } else {
        for e in &out {
            println!("{}\t{:.6}\t{}", e.item_id, e.score, e.explanation.text);
        }
    }
    Ok(())
}

fn export(ws: &Workspace, args: &ExportArgs) -> Result<(), CliError> {
    let model = load_model(ws)?;
    let emb = model.embeddings().map_err(CliError::data)?;
    let dir = args.out.clone().unwrap_or_else(|| ws.embeddings());
    export_embeddings(&dir, &emb.ids, &emb.modality).map_err(CliError::runtime)?;
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct CauseRecord {
    session_id: u64,
    cause: sessrec::fixtures::Cause,
}

fn fixtures(args: &FixtureArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.mix) {
        return Err(CliError::Usage(format!("--mix must be in [0, 1], got {}", args.mix)));
    }
    let spec = PlantedRuleSpec::layout(args.n_items, args.n_sessions, args.mix, args.seed);
    let planted = generate(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&args.out)?;
    write_sessions(&args.out.join("sessions.jsonl"), &planted.corpus.sessions).map_err(CliError::runtime)?;
    write_items(&args.out.join("items.jsonl"), &planted.corpus.items).map_err(CliError::runtime)?;
    let causes: String = planted
        .corpus
        .sessions
        .iter()
        .zip(&planted.causes)
        .map(|(s, &cause)| {
            let rec = CauseRecord {
                session_id: s.session_id,
                cause,
            };
            serde_json::to_string(&rec).expect("serializable") + "\n"
        })
        .collect();
    write_text(&args.out.join("causes.jsonl"), &causes)?;
    println!("{}", args.out.display());
    Ok(())
}
