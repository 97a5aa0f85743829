use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;
use xattn::eval::{
    evaluate_all, reports_from, run_epsilon_sweep, run_mixing_comparison, write_comparison_csv, write_reports_csv,
    write_sweep_csv, EvalReport, InstanceOutcome, MixingComparison, RunMeta, SweepResult, SweepTarget,
    DEFAULT_MAX_NEW,
};
use xattn::model::ModelParams;
use xattn::pipeline::{arm_sequences, generate, pretrain, train_arm, ExperimentConfig, Generated, PretrainSource};
use xattn::probe::{mean_imbalance, mean_matrix, pooled_imbalance, write_matrix_csv, Group, ProbeRecord};
use xattn::steer::{SteerSpec, SteerTarget};
use xattn::train::{write_loss_csv, Checkpoint, LossPoint, TrainState};
use xattn::worldgen::{
    read_instances, read_items, write_instances, write_items, Condition, ConflictInstance, FactWorld,
    InstructionItem, MixMode, WorldConfig,
};

use crate::config::resolve;
use crate::output::OutDir;
use crate::Common;

const SNAPSHOT: &str = "config.resolved.json";

fn config(c: &Common) -> Result<ExperimentConfig> {
    resolve(c.preset, c.config.as_deref(), &c.sets)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|e| anyhow::anyhow!("bad list entry `{p}`: {e}")))
        .collect()
}

struct Data {
    world: FactWorld,
    corpus_a: Vec<InstructionItem>,
    corpus_b: Vec<InstructionItem>,
}

const PRETRAIN_FILES: [&str; 2] = ["pretrain_a.jsonl", "pretrain_b.jsonl"];

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_world(dir: &Path) -> Result<FactWorld> {
    let p = dir.join("world.json");
    let wc: WorldConfig = serde_json::from_reader(open(&p)?).with_context(|| format!("parsing {}", p.display()))?;
    Ok(FactWorld::build(&wc)?)
}

fn eval_file(cond: Condition) -> String {
    format!("eval-{}.jsonl", cond.label())
}

/// Instances for the selected conditions, or for every eval file present.
fn load_eval(dir: &Path, world: &FactWorld, conditions: &Option<String>) -> Result<Vec<ConflictInstance>> {
    let selected: Vec<Condition> = match conditions {
        Some(list) => parse_list(list)?,
        None => Condition::ALL.into_iter().filter(|&c| dir.join(eval_file(c)).exists()).collect(),
    };
    if selected.is_empty() {
        bail!("no evaluation files in {}", dir.display());
    }
    let mut insts = Vec::new();
    for cond in selected {
        let p = dir.join(eval_file(cond));
        insts.extend(read_instances(open(&p)?, world.vocab()).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(insts)
}

fn read_corpus(dir: &Path, name: &str, world: &FactWorld) -> Result<Vec<InstructionItem>> {
    let p = dir.join(name);
    read_items(open(&p)?, world.vocab()).with_context(|| format!("reading {}", p.display()))
}

fn load_data(dir: &Path) -> Result<Data> {
    let world = load_world(dir)?;
    Ok(Data {
        corpus_a: read_corpus(dir, "corpus_a.jsonl", &world)?,
        corpus_b: read_corpus(dir, "corpus_b.jsonl", &world)?,
        world,
    })
}

fn load_model(path: &Path, world: &FactWorld) -> Result<ModelParams> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if ck.params.config.vocab_size != world.vocab().len() {
        bail!(
            "config mismatch: model vocabulary has {} tokens, the world has {}",
            ck.params.config.vocab_size,
            world.vocab().len()
        );
    }
    Ok(ck.params)
}

fn progress(label: String, total: u64) -> impl FnMut(&LossPoint, &TrainState) -> xattn::Result<()> {
    move |p, _| {
        if p.step % 100 == 0 || p.step == total {
            eprintln!("[{label}] step {}/{total} loss {:.4}", p.step, p.train_loss);
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Replicate seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated conditions to generate (default: the config's).
    #[arg(long)]
    conditions: Option<String>,
}

pub fn gen(c: &Common, a: &GenArgs) -> Result<()> {
    let mut cfg = config(c)?;
    if let Some(list) = &a.conditions {
        cfg.eval.conditions = parse_list(list)?;
    }
    let mut files: Vec<String> = ["world.json", "corpus_a.jsonl", "corpus_b.jsonl", SNAPSHOT]
        .map(String::from)
        .to_vec();
    files.extend(cfg.eval.conditions.iter().map(|&c| eval_file(c)));
    if cfg.pretrain.draws_fresh_corpora() {
        files.extend(PRETRAIN_FILES.map(String::from));
    }
    let out = OutDir::prepare(&c.out, c.force, &files.iter().map(String::as_str).collect::<Vec<_>>())?;
    let g = generate(&cfg, a.seed)?;
    out.write_json("world.json", g.world.config())?;
    write_items(out.create("corpus_a.jsonl")?, &g.corpus_a, g.world.vocab())?;
    write_items(out.create("corpus_b.jsonl")?, &g.corpus_b, g.world.vocab())?;
    if cfg.pretrain.draws_fresh_corpora() {
        write_items(out.create(PRETRAIN_FILES[0])?, &g.pretrain_a, g.world.vocab())?;
        write_items(out.create(PRETRAIN_FILES[1])?, &g.pretrain_b, g.world.vocab())?;
    }
    for &cond in &cfg.eval.conditions {
        write_instances(out.create(&eval_file(cond))?, &g.eval_for(cond), g.world.vocab())?;
    }
    out.write_json(SNAPSHOT, &json!({"command": "gen", "seed": a.seed, "config": cfg}))?;
    println!(
        "corpus_a {} items, corpus_b {} items, {} eval instances over {} conditions in {}",
        g.corpus_a.len(),
        g.corpus_b.len(),
        g.eval.len(),
        cfg.eval.conditions.len(),
        out.dir().display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Mixing arm; defaults to the config's `mix`.
    #[arg(long)]
    mix: Option<MixMode>,
    /// Replicate seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the number of optimizer steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Also store optimizer moments in the checkpoint.
    #[arg(long)]
    with_optimizer: bool,
    /// Start from this checkpoint instead of a fresh initialization or a
    /// first stage.
    #[arg(long)]
    init: Option<PathBuf>,
}

pub fn train(c: &Common, a: &TrainArgs) -> Result<()> {
    let mut cfg = config(c)?;
    if let Some(m) = a.mix {
        cfg.mix = m;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    let first_stage = a.init.is_none() && cfg.pretrain.steps > 0;
    let mut files = vec!["model.xatn", "loss.csv", SNAPSHOT];
    if first_stage {
        files.extend(["base.xatn", "pretrain_loss.csv"]);
    }
    let out = OutDir::prepare(&c.out, c.force, &files)?;
    let data = load_data(&a.data)?;
    let base = match &a.init {
        Some(path) => Some(load_model(path, &data.world)?),
        None if first_stage => {
            let (pa, pb) = match cfg.pretrain.source {
                PretrainSource::ArmCorpora => (data.corpus_a.clone(), data.corpus_b.clone()),
                PretrainSource::Fresh => (
                    read_corpus(&a.data, PRETRAIN_FILES[0], &data.world)?,
                    read_corpus(&a.data, PRETRAIN_FILES[1], &data.world)?,
                ),
            };
            let mut log = progress(format!("first stage seed {}", a.seed), cfg.pretrain.steps);
            let (state, curve) = pretrain(&cfg, &data.world, &pa, &pb, a.seed, &mut log)?.expect("enabled");
            let meta = json!({"world": data.world.config(), "seed": a.seed, "pretrain": cfg.pretrain});
            Checkpoint::from_state(&state, false, meta).save(&out.path("base.xatn"))?;
            write_loss_csv(out.create("pretrain_loss.csv")?, &curve)?;
            Some(state.params)
        }
        None => None,
    };
    let seqs = arm_sequences(&cfg, &data.corpus_a, &data.corpus_b, cfg.mix, a.seed)?;
    let label = format!("{} seed {}", cfg.mix.label(), a.seed);
    let mut log = progress(label, cfg.train.steps);
    let (state, curve) = train_arm(&cfg, &data.world, &seqs, cfg.mix, a.seed, base.as_ref(), &mut log)?;
    let meta = json!({"world": data.world.config(), "mix": cfg.mix, "seed": a.seed, "train": cfg.train});
    Checkpoint::from_state(&state, a.with_optimizer, meta).save(&out.path("model.xatn"))?;
    write_loss_csv(out.create("loss.csv")?, &curve)?;
    out.write_json(
        SNAPSHOT,
        &json!({"command": "train", "seed": a.seed, "data": a.data, "config": cfg}),
    )?;
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct SteerArgs {
    /// Steer toward this span: evidence-1, evidence-2, domain-A or domain-B.
    #[arg(long)]
    steer_group: Option<SteerTarget>,
    /// Steering strength for `eval`, or a comma-separated grid for `sweep`.
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    /// Comma-separated layers to steer (default: all).
    #[arg(long)]
    layers: Option<String>,
    /// Comma-separated heads to steer (default: all).
    #[arg(long)]
    heads: Option<String>,
}

impl SteerArgs {
    fn layers(&self) -> Result<Option<Vec<usize>>> {
        self.layers.as_deref().map(parse_list).transpose()
    }

    fn heads(&self) -> Result<Option<Vec<usize>>> {
        self.heads.as_deref().map(parse_list).transpose()
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated conditions to evaluate (default: all in the data).
    #[arg(long)]
    condition: Option<String>,
    /// Also decompose every answer and report imbalance.
    #[arg(long)]
    probe: bool,
    #[command(flatten)]
    steer: SteerArgs,
}

fn eval_table(reports: &[EvalReport]) -> String {
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut s = String::from("| condition | mode | order | n | detection | false alarm | control acc | imbalance |\n|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        let m = &r.metrics;
        s += &format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.condition.label(),
            r.prompt_mode.label(),
            r.order.map_or("all", |o| o.label()),
            m.n,
            f(m.detection_rate),
            f(m.false_alarm_rate),
            f(m.control_accuracy),
            f(m.imbalance)
        );
    }
    s
}

pub fn eval(c: &Common, a: &EvalArgs) -> Result<()> {
    let out = OutDir::prepare(&c.out, c.force, &["report.json", "report.csv", "outcomes.jsonl", SNAPSHOT])?;
    let world = load_world(&a.data)?;
    let params = load_model(&a.model, &world)?;
    let insts = load_eval(&a.data, &world, &a.condition)?;
    let steer = match (a.steer.steer_group, &a.steer.epsilon) {
        (Some(target), Some(eps)) => Some(SteerSpec {
            target,
            epsilon: eps.trim().parse().with_context(|| format!("--epsilon `{eps}` is not a number"))?,
            layers: a.steer.layers()?,
            heads: a.steer.heads()?,
        }),
        (None, None) => None,
        _ => bail!("--steer-group and --epsilon must be given together"),
    };
    let snapshot = json!({"command": "eval", "model": a.model, "data": a.data, "steer": steer, "probe": a.probe});
    let meta = RunMeta::new(&snapshot, &[])?;
    let runs = evaluate_all(&params, &insts, steer.as_ref(), a.probe, DEFAULT_MAX_NEW)?;
    let outcomes: Vec<InstanceOutcome> = runs.into_iter().map(|(o, _)| o).collect();
    let reports = reports_from(&outcomes, &meta)?;
    out.write_json("report.json", &reports)?;
    write_reports_csv(out.create("report.csv")?, &reports)?;
    xattn::worldgen::write_jsonl(out.create("outcomes.jsonl")?, &outcomes)?;
    out.write_json(SNAPSHOT, &snapshot)?;
    print!("{}", eval_table(&reports));
    Ok(())
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated conditions to probe.
    #[arg(long, default_value = "cross")]
    condition: String,
}

fn pair_labels(r: &ProbeRecord) -> (Group, Group, &'static str, &'static str) {
    let (x, y) = r.evidence_pair();
    if r.condition == Condition::Cross {
        (x, y, "domain-A", "domain-B")
    } else {
        (x, y, "evidence-1", "evidence-2")
    }
}

pub fn probe(c: &Common, a: &ProbeArgs) -> Result<()> {
    let files = [
        "probe.json",
        "imbalance.csv",
        "contribution_x.csv",
        "contribution_y.csv",
        "logit_x.csv",
        "logit_y.csv",
        SNAPSHOT,
    ];
    let out = OutDir::prepare(&c.out, c.force, &files)?;
    let world = load_world(&a.data)?;
    let params = load_model(&a.model, &world)?;
    let insts = load_eval(&a.data, &world, &Some(a.condition.clone()))?;
    let records: Vec<ProbeRecord> = evaluate_all(&params, &insts, None, true, DEFAULT_MAX_NEW)?
        .into_iter()
        .map(|(_, r)| r.expect("probed"))
        .collect();
    let (.., lx, ly) = pair_labels(&records[0]);
    let by = |f: &dyn Fn(&ProbeRecord) -> Vec<Vec<f64>>| mean_matrix(&records.iter().map(f).collect::<Vec<_>>());
    write_matrix_csv(out.create("imbalance.csv")?, &by(&|r| r.layer_head_imbalance()))?;
    write_matrix_csv(
        out.create("contribution_x.csv")?,
        &by(&|r| {
            let (x, ..) = pair_labels(r);
            r.layer_head_mean(|s| s.norm(x))
        }),
    )?;
    write_matrix_csv(
        out.create("contribution_y.csv")?,
        &by(&|r| {
            let (_, y, ..) = pair_labels(r);
            r.layer_head_mean(|s| s.norm(y))
        }),
    )?;
    let logit = |g: Group| move |s: &xattn::probe::SiteRecord| s.groups.get(&g).map_or(f64::NAN, |x| x.mean_logit);
    write_matrix_csv(
        out.create("logit_x.csv")?,
        &by(&|r| {
            let (x, ..) = pair_labels(r);
            r.layer_head_mean(logit(x))
        }),
    )?;
    write_matrix_csv(
        out.create("logit_y.csv")?,
        &by(&|r| {
            let (_, y, ..) = pair_labels(r);
            r.layer_head_mean(logit(y))
        }),
    )?;
    let violations: usize = records.iter().map(ProbeRecord::reconstruction_violations).sum();
    let max_err = records.iter().map(ProbeRecord::max_reconstruction_error).fold(0.0, f64::max);
    let pairs = records.iter().map(ProbeRecord::pair_norms).collect::<xattn::Result<Vec<_>>>()?;
    let imbalance = mean_imbalance(&records)?;
    let pooled = pooled_imbalance(&pairs)?;
    out.write_json(
        "probe.json",
        &json!({"x": lx, "y": ly, "imbalance": imbalance, "pooled_imbalance": pooled,
                "reconstruction_violations": violations,
                "max_reconstruction_error": max_err, "records": records}),
    )?;
    out.write_json(
        SNAPSHOT,
        &json!({"command": "probe", "model": a.model, "data": a.data, "condition": a.condition}),
    )?;
    println!(
        "{} records; x = {lx}, y = {ly}; mean imbalance {imbalance:.4} (pooled {pooled:.4}); reconstruction violations {violations} (max error {max_err:.2e})",
        records.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "cross")]
    condition: String,
    #[command(flatten)]
    steer: SteerArgs,
}

fn sweep_table(s: &SweepResult) -> String {
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    let counts: Vec<String> = s.target_counts().iter().map(|(t, n)| format!("{} {n}", t.label())).collect();
    let mut t = format!(
        "target {} ({})\n| epsilon | detection | false alarm | control acc | target mass | observed mass |\n|---|---|---|---|---|---|\n",
        s.target.label(),
        counts.join(", ")
    );
    for p in &s.points {
        t += &format!(
            "| {:+.2} | {} | {} | {} | {:.4} | {:.4} |\n",
            p.epsilon,
            f(p.metrics.detection_rate),
            f(p.metrics.false_alarm_rate),
            f(p.metrics.control_accuracy),
            p.target_mass,
            p.observed_target_mass
        );
    }
    if let Some(b) = s.best() {
        t += &format!("best epsilon {:+.2}\n", b.epsilon);
    }
    if let Some(b) = s.best_toward() {
        t += &format!("best positive epsilon {:+.2}\n", b.epsilon);
    }
    t
}

pub fn sweep(c: &Common, a: &SweepArgs) -> Result<()> {
    let mut cfg = config(c)?;
    let out = OutDir::prepare(&c.out, c.force, &["sweep.json", "sweep.csv", SNAPSHOT])?;
    let world = load_world(&a.data)?;
    let params = load_model(&a.model, &world)?;
    let insts = load_eval(&a.data, &world, &Some(a.condition.clone()))?;
    if let Some(t) = a.steer.steer_group {
        cfg.sweep.target = SweepTarget::Fixed(t);
    }
    if let Some(g) = &a.steer.epsilon {
        cfg.sweep.grid = parse_list(g)?;
    }
    if a.steer.layers.is_some() {
        cfg.sweep.layers = a.steer.layers()?;
    }
    if a.steer.heads.is_some() {
        cfg.sweep.heads = a.steer.heads()?;
    }
    let snapshot = json!({"command": "sweep", "model": a.model, "data": a.data, "condition": a.condition, "sweep": cfg.sweep});
    let meta = RunMeta::new(&snapshot, &[])?;
    let result = run_epsilon_sweep(&params, &insts, &cfg.sweep, &meta)?;
    out.write_json("sweep.json", &result)?;
    write_sweep_csv(out.create("sweep.csv")?, &result)?;
    out.write_json(SNAPSHOT, &snapshot)?;
    print!("{}", sweep_table(&result));
    Ok(())
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Comma-separated replicate seeds (default: the config's `seeds`).
    #[arg(long)]
    seeds: Option<String>,
}

fn comparison_table(c: &MixingComparison) -> String {
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut t = String::from("| seed | arm | detection | false alarm | imbalance |\n|---|---|---|---|---|\n");
    for s in &c.per_seed {
        for (arm, m) in [("dataset", &s.dataset), ("instance", &s.instance)] {
            t += &format!(
                "| {} | {arm} | {} | {} | {} |\n",
                s.seed,
                f(m.detection_rate),
                f(m.false_alarm_rate),
                f(m.imbalance)
            );
        }
    }
    t += &format!(
        "instance-level lowered imbalance in {}/{n}, raised detection in {}/{n}, both in {}/{n} (sign test p = {:.4})\n",
        c.imbalance_wins,
        c.detection_wins,
        c.joint_wins,
        c.sign_test_p,
        n = c.per_seed.len()
    );
    t
}

pub fn compare(c: &Common, a: &CompareArgs) -> Result<()> {
    let mut cfg = config(c)?;
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_list(s)?;
    }
    let out = OutDir::prepare(&c.out, c.force, &["comparison.json", "comparison.csv", SNAPSHOT])?;
    let meta = RunMeta::new(&cfg, &cfg.seeds)?;
    type Replicate = (u64, Generated, Option<ModelParams>);
    let mut cache: Option<Replicate> = None;
    let mut arm = |seed: u64, mode: MixMode| -> xattn::Result<Vec<InstanceOutcome>> {
        if cache.as_ref().map(|(s, ..)| *s) != Some(seed) {
            let g = generate(&cfg, seed)?;
            let mut log = progress(format!("first stage seed {seed}"), cfg.pretrain.steps);
            let (pa, pb) = g.pretrain_corpora(&cfg);
            let base = pretrain(&cfg, &g.world, pa, pb, seed, &mut log)?.map(|(s, _)| s.params);
            cache = Some((seed, g, base));
        }
        let (_, g, base) = cache.as_ref().expect("filled");
        let seqs = arm_sequences(&cfg, &g.corpus_a, &g.corpus_b, mode, seed)?;
        let mut log = progress(format!("{} seed {seed}", mode.label()), cfg.train.steps);
        let (state, curve) = train_arm(&cfg, &g.world, &seqs, mode, seed, base.as_ref(), &mut log)?;
        let dir = out
            .sub(&format!("seed-{seed}/{}", mode.label()), &["model.xatn", "loss.csv", "report.json", "report.csv"])
            .map_err(|e| xattn::Error::Input(format!("{e:#}")))?;
        let ck_meta = json!({"world": g.world.config(), "mix": mode, "seed": seed, "train": cfg.train});
        Checkpoint::from_state(&state, false, ck_meta).save(&dir.path("model.xatn"))?;
        let to_err = |e: anyhow::Error| xattn::Error::Input(format!("{e:#}"));
        write_loss_csv(dir.create("loss.csv").map_err(to_err)?, &curve)?;
        let arm_meta = RunMeta::new(&cfg, &[seed])?;
        let runs = evaluate_all(&state.params, &g.eval, None, true, DEFAULT_MAX_NEW)?;
        let outcomes: Vec<InstanceOutcome> = runs.into_iter().map(|(o, _)| o).collect();
        let reports = reports_from(&outcomes, &arm_meta)?;
        dir.write_json("report.json", &reports).map_err(to_err)?;
        write_reports_csv(dir.create("report.csv").map_err(to_err)?, &reports)?;
        Ok(outcomes.into_iter().filter(|o| o.condition == Condition::Cross).collect())
    };
    let result = run_mixing_comparison(&cfg.seeds, &mut arm, &meta)?;
    out.write_json("comparison.json", &result)?;
    write_comparison_csv(out.create("comparison.csv")?, &result)?;
    out.write_json(SNAPSHOT, &json!({"command": "compare", "config": cfg}))?;
    print!("{}", comparison_table(&result));
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory to scan for report.json, sweep.json and comparison.json.
    #[arg(long = "in")]
    input: PathBuf,
}

fn find(dir: &Path, name: &str, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find(&p, name, found)?;
        } else if p.file_name().is_some_and(|n| n == name) {
            found.push(p);
        }
    }
    Ok(())
}

pub fn report(c: &Common, a: &ReportArgs) -> Result<()> {
    let mut md = String::from("# xattn results\n");
    let mut any = false;
    for (name, kind) in [("comparison.json", 0), ("sweep.json", 1), ("report.json", 2)] {
        let mut found = Vec::new();
        find(&a.input, name, &mut found)?;
        for p in found {
            any = true;
            let rel = p.strip_prefix(&a.input).unwrap_or(&p).display().to_string();
            md += &format!("\n## {rel}\n\n");
            let ctx = || format!("parsing {}", p.display());
            md += &match kind {
                0 => comparison_table(&serde_json::from_reader(open(&p)?).with_context(ctx)?),
                1 => sweep_table(&serde_json::from_reader(open(&p)?).with_context(ctx)?),
                _ => eval_table(&serde_json::from_reader::<_, Vec<EvalReport>>(open(&p)?).with_context(ctx)?),
            };
        }
    }
    if !any {
        bail!("no result files under {}", a.input.display());
    }
    let out = OutDir::prepare(&c.out, c.force, &["summary.md"])?;
    std::fs::write(out.path("summary.md"), &md)?;
    print!("{md}");
    Ok(())
}
