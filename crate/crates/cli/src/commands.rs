//! Command implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use prlf::datagen::{self, Dataset, Split};
use prlf::evalbench::{self, Metrics, SweepResult};
use prlf::amre::ImportanceMode;
use prlf::training::{Checkpoint, EpochStats, Predictor, Trainer};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::manifest::{input_hash, now, MuStats, RunManifest};
use crate::plot::{self, Series};
use crate::{Ablation, Cli, Command};

/// Resolved settings shared by every command.
struct Ctx<'a> {
    cli: &'a Cli,
    config: RunConfig,
    out: PathBuf,
    started_at: String,
    inputs: Vec<PathBuf>,
    artifacts: Vec<String>,
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Overrides {
        seed: cli.seed,
        epochs: cli.epochs,
        steps: cli.steps,
        p: cli.p,
        subset: cli.subset,
    }
    .apply(&mut config);
    config.validate()?;
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = resolve_config(cli)?;
    std::fs::create_dir_all(&cli.out).map_err(|source| CliError::Write {
        path: cli.out.clone(),
        source,
    })?;
    let mut ctx = Ctx {
        cli,
        config,
        out: cli.out.clone(),
        started_at: now(),
        inputs: cli.config.iter().cloned().collect(),
        artifacts: Vec::new(),
    };
    match &cli.command {
        Command::GenData => gen_data(&mut ctx),
        Command::Train => train(&mut ctx),
        Command::Eval => eval(&mut ctx),
        Command::SweepIntra => sweep_intra(&mut ctx),
        Command::SweepInter => sweep_inter(&mut ctx),
        Command::Ablate => ablate(&mut ctx),
        Command::PhaseDiag => phase_diag(&mut ctx),
        Command::Plot { inputs } => plot_cmd(&mut ctx, inputs),
    }
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|source| CliError::Write { path, source })?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn split_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.config.data.train_samples,
            Split::Val => self.config.data.val_samples,
            Split::Test => self.config.data.test_samples,
        }
    }

    /// A split from `--data`, or generated from the config.
    fn dataset(&mut self, split: Split) -> Result<Dataset, CliError> {
        let Some(dir) = &self.cli.data else {
            return Ok(datagen::generate(&self.config.synth(self.split_count(split)), split)?.dataset);
        };
        let path = dir.join(format!("{split}.jsonl"));
        if !path.exists() {
            return Err(CliError::MissingFile {
                path,
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            });
        }
        let ds = datagen::load(&path)?;
        if ds.dims != self.config.model.dims || ds.classes != self.config.model.classes {
            return Err(CliError::Usage(format!(
                "{} does not match the model's shapes or class count",
                path.display()
            )));
        }
        self.inputs.push(path);
        Ok(ds)
    }

    fn eval_split(&self, default: Split) -> Split {
        self.cli.split.map(Split::from).unwrap_or(default)
    }

    /// Loads the checkpoint and adopts its model and train sections.
    fn predictor(&mut self) -> Result<Predictor, CliError> {
        let path = self.cli.checkpoint.clone().unwrap_or_else(|| self.path("checkpoint.bin"));
        let bytes = std::fs::read(&path).map_err(|source| CliError::MissingFile {
            path: path.clone(),
            source,
        })?;
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        self.config.model = ckpt.model_config.clone();
        self.config.train = ckpt.train_config.clone();
        self.inputs.push(path);
        Ok(ckpt.predictor()?)
    }

    fn finish(
        &mut self,
        command: &str,
        stem: &str,
        metrics: BTreeMap<String, f64>,
        mu_stats: BTreeMap<String, MuStats>,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            input_hash: input_hash(&self.config, &self.inputs)?,
            inputs: self.inputs.iter().map(|p| p.display().to_string()).collect(),
            config: self.config.clone(),
            started_at: self.started_at.clone(),
            finished_at: now(),
            artifacts: std::mem::take(&mut self.artifacts),
            metrics,
            mu_stats,
        };
        manifest.write_as(&self.out, stem)?;
        Ok(())
    }
}

fn metric_map(prefix: &str, m: &Metrics) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::from([(format!("{prefix}f1"), m.f1), (format!("{prefix}acc"), m.acc)]);
    if let Some(mae) = m.mae {
        out.insert(format!("{prefix}mae"), mae);
    }
    out
}

fn metric_row(label: &str, m: &Metrics) -> String {
    let mae = m.mae.map_or_else(|| "NA".into(), |v| format!("{v:.6}"));
    format!("{label}\t{:.6}\t{:.6}\t{mae}", m.f1, m.acc)
}

fn gen_data(ctx: &mut Ctx) -> Result<(), CliError> {
    let mut metrics = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let g = datagen::generate(&ctx.config.synth(ctx.split_count(split)), split)?;
        let name = format!("{split}.jsonl");
        datagen::save(&g.dataset, &ctx.path(&name))?;
        ctx.artifacts.push(name);
        let truth = format!("{split}.truth.jsonl");
        datagen::save_truth(&g.truth, &ctx.path(&truth))?;
        ctx.artifacts.push(truth);
        metrics.insert(format!("{split}.samples"), g.dataset.len() as f64);
    }
    println!("wrote train/val/test to {}", ctx.out.display());
    ctx.finish("gen-data", "gen-data", metrics, BTreeMap::new())
}

fn loss_log(stats: &[EpochStats]) -> String {
    let mut s = String::from(
        "epoch\tmask_seed\ttotal\ttask\tuni\tphase\ttrain_acc\tw_v\tw_a\tw_l\tmu_v\tmu_a\tmu_l\ttrace_v\ttrace_a\ttrace_l\tdom_v\tdom_a\tdom_l\tclamped\tclipped\n",
    );
    for e in stats {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}",
            e.epoch,
            e.mask_seed,
            e.loss.total,
            e.loss.task,
            e.loss.uni,
            e.loss.phase,
            e.train_accuracy,
            e.mean_w[0],
            e.mean_w[1],
            e.mean_w[2],
            e.mean_mu[0],
            e.mean_mu[1],
            e.mean_mu[2],
            e.mean_trace[0],
            e.mean_trace[1],
            e.mean_trace[2],
            e.dominant_counts[0],
            e.dominant_counts[1],
            e.dominant_counts[2],
            e.clamped_probs,
            e.clipped_batches,
        );
    }
    s
}

fn fit(config: &RunConfig, train: &Dataset) -> Result<(Trainer, Vec<EpochStats>), CliError> {
    let mut trainer = Trainer::new(config.model.clone(), config.train.clone())?;
    let mut stats = Vec::with_capacity(config.train.epochs);
    for _ in 0..config.train.epochs {
        let e = trainer.train_epoch(train)?;
        eprintln!(
            "epoch {:>3}  loss {:.4}  task {:.4}  uni {:.4}  phase {:.5}  acc {:.3}",
            e.epoch, e.loss.total, e.loss.task, e.loss.uni, e.loss.phase, e.train_accuracy
        );
        stats.push(e);
    }
    Ok((trainer, stats))
}

fn train(ctx: &mut Ctx) -> Result<(), CliError> {
    let train = ctx.dataset(Split::Train)?;
    let val = ctx.dataset(Split::Val)?;
    let (trainer, stats) = fit(&ctx.config, &train)?;
    let log = loss_log(&stats);
    ctx.write("loss_log.tsv", &log)?;
    let bytes = trainer.checkpoint().to_bytes()?;
    let ckpt_path = ctx.path("checkpoint.bin");
    std::fs::write(&ckpt_path, &bytes).map_err(|source| CliError::Write {
        path: ckpt_path,
        source,
    })?;
    ctx.artifacts.push("checkpoint.bin".into());

    let m = evalbench::evaluate(&trainer.predictor(), &val.samples, ctx.config.eval.f1)?;
    let mut metrics = metric_map("val.", &m);
    if let Some(last) = stats.last() {
        metrics.insert("train.final_loss".into(), last.loss.total);
    }
    println!("condition\tf1\tacc\tmae");
    println!("{}", metric_row("val", &m));
    ctx.finish("train", "train", metrics, BTreeMap::new())
}

/// Inter-modality mask, then intra-modality masks averaged over the seeds.
/// At p = 0 the single unmasked evaluation is returned as is.
fn evaluate_condition(
    predictor: &Predictor,
    config: &RunConfig,
    data: &Dataset,
) -> Result<(Metrics, Dataset), CliError> {
    let samples = evalbench::mask_inter(&data.samples, config.eval.subset);
    let subset_data = Dataset {
        samples,
        ..data.clone()
    };
    let m = if config.eval.p == 0.0 {
        evalbench::evaluate(predictor, &subset_data.samples, config.eval.f1)?
    } else {
        let rows = evalbench::sweep_intra(predictor, &subset_data, &[config.eval.p], &config.eval.seeds, config.eval.f1)?;
        rows[0].mean
    };
    Ok((m, subset_data))
}

fn eval(ctx: &mut Ctx) -> Result<(), CliError> {
    let predictor = ctx.predictor()?;
    let split = ctx.eval_split(Split::Val);
    let data = ctx.dataset(split)?;
    let (m, _) = evaluate_condition(&predictor, &ctx.config, &data)?;
    let label = format!("{split} {{{}}} p={:.2}", ctx.config.eval.subset, ctx.config.eval.p);
    let row = metric_row(&label, &m);
    ctx.write("eval.tsv", &format!("condition\tf1\tacc\tmae\n{row}\n"))?;
    println!("condition\tf1\tacc\tmae");
    println!("{row}");
    let metrics = metric_map(&format!("{split}."), &m);
    ctx.finish("eval", "eval", metrics, BTreeMap::new())
}

fn sweep_metrics(rows: &[SweepResult]) -> BTreeMap<String, f64> {
    rows.iter()
        .flat_map(|r| {
            let l = r.condition.label();
            [(format!("{l}.f1"), r.mean.f1), (format!("{l}.acc"), r.mean.acc)]
        })
        .collect()
}

fn sweep_intra(ctx: &mut Ctx) -> Result<(), CliError> {
    let predictor = ctx.predictor()?;
    let data = ctx.dataset(ctx.eval_split(Split::Test))?;
    let e = &ctx.config.eval;
    let rows = evalbench::sweep_intra(&predictor, &data, &e.rates, &e.seeds, e.f1)?;
    let table = evalbench::sweep_table(&rows);
    ctx.write("sweep_intra.tsv", &table)?;
    print!("{table}");
    ctx.finish("sweep-intra", "sweep-intra", sweep_metrics(&rows), BTreeMap::new())
}

fn sweep_inter(ctx: &mut Ctx) -> Result<(), CliError> {
    let predictor = ctx.predictor()?;
    let data = ctx.dataset(ctx.eval_split(Split::Test))?;
    let rows = evalbench::sweep_inter(&predictor, &data, &ctx.config.eval.seeds, ctx.config.eval.f1)?;
    let table = evalbench::sweep_table(&rows);
    ctx.write("sweep_inter.tsv", &table)?;
    print!("{table}");
    ctx.finish("sweep-inter", "sweep-inter", sweep_metrics(&rows), BTreeMap::new())
}

/// Config for one ablated variant.
pub fn ablated(base: &RunConfig, ablation: Ablation) -> RunConfig {
    let mut c = base.clone();
    match ablation {
        Ablation::Full | Ablation::Steps => {}
        Ablation::WoCmi => c.model.importance = ImportanceMode::FisherOnly,
        Ablation::WoFimi => c.model.importance = ImportanceMode::ConfidenceOnly,
        Ablation::WoAmre => c.model.importance = ImportanceMode::Uniform,
        Ablation::WoPi => {
            c.model.interaction.steps = 1;
            c.model.interaction.cross_path = false;
        }
        Ablation::WoLuni => c.train.eta1 = 0.0,
        Ablation::WoLphase => c.train.eta2 = 0.0,
    }
    c
}

pub fn mu_stats(predictor: &Predictor, samples: &[prlf::encoders::SampleRecord]) -> Result<MuStats, CliError> {
    let mut rows: Vec<(u64, [f64; 3], usize)> = Vec::with_capacity(samples.len());
    for s in samples {
        let iv = predictor.inspect(s)?.importance;
        rows.push((s.id, iv.mu, iv.dominant.index()));
    }
    rows.sort_by_key(|r| r.0);
    let mut st = MuStats {
        samples: rows.len(),
        mean: [0.0; 3],
        min: [f64::INFINITY; 3],
        max: [f64::NEG_INFINITY; 3],
        dominant_counts: [0; 3],
    };
    for (_, mu, dom) in &rows {
        for (i, &m) in mu.iter().enumerate() {
            st.mean[i] += m / rows.len() as f64;
            st.min[i] = st.min[i].min(m);
            st.max[i] = st.max[i].max(m);
        }
        st.dominant_counts[*dom] += 1;
    }
    Ok(st)
}

fn ablate(ctx: &mut Ctx) -> Result<(), CliError> {
    let Some(ablation) = ctx.cli.ablate else {
        return Err(CliError::Usage("ablate needs --ablate NAME".into()));
    };
    let name = ablation_name(ablation);
    let variants: Vec<(String, RunConfig)> = if ablation == Ablation::Steps {
        (1..=5)
            .map(|s| {
                let mut c = ctx.config.clone();
                c.model.interaction.steps = s;
                (format!("steps={s}"), c)
            })
            .collect()
    } else {
        vec![(name.clone(), ablated(&ctx.config, ablation))]
    };
    let train = ctx.dataset(Split::Train)?;
    let test = ctx.dataset(ctx.eval_split(Split::Test))?;
    let mut table = String::from("variant\tsteps\tp\tf1_mean\tacc_mean\n");
    let mut metrics = BTreeMap::new();
    let mut mus = BTreeMap::new();
    for (label, cfg) in &variants {
        eprintln!("training {label}");
        let (trainer, _) = fit(cfg, &train)?;
        let predictor = trainer.predictor();
        let (m, masked) = evaluate_condition(&predictor, cfg, &test)?;
        let shown = if cfg.eval.p == 0.0 {
            masked.samples
        } else {
            evalbench::mask_intra(&masked.samples, cfg.eval.p, evalbench::intra_mask_seed(cfg.eval.seeds[0], cfg.eval.p))?
        };
        mus.insert(label.clone(), mu_stats(&predictor, &shown)?);
        let _ = writeln!(table, "{label}\t{}\t{:.2}\t{:.6}\t{:.6}", cfg.model.interaction.steps, cfg.eval.p, m.f1, m.acc);
        metrics.extend(metric_map(&format!("{label}."), &m));
        let ckpt = format!("ablate-{}.bin", label.replace('=', "-"));
        trainer.checkpoint().save(&ctx.path(&ckpt))?;
        ctx.artifacts.push(ckpt);
    }
    ctx.write(&format!("ablate-{name}.tsv"), &table)?;
    print!("{table}");
    ctx.finish("ablate", &format!("ablate-{name}"), metrics, mus)
}

pub fn ablation_name(a: Ablation) -> String {
    use clap::ValueEnum;
    a.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

fn phase_diag(ctx: &mut Ctx) -> Result<(), CliError> {
    let predictor = ctx.predictor()?;
    let data = ctx.dataset(ctx.eval_split(Split::Test))?;
    let seed = ctx.config.eval.seeds[0];
    let mut table = String::from("p\tmask_seed\tmean_degrees\tmeasured\tskipped\n");
    let mut metrics = BTreeMap::new();
    for &p in &ctx.config.eval.phase_rates {
        let d = evalbench::phase_difference(&predictor, &data, p, seed)?;
        let _ = writeln!(table, "{:.2}\t{}\t{:.6}\t{}\t{}", d.p, d.mask_seed, d.mean_degrees, d.measured, d.skipped);
        metrics.insert(format!("p={p:.1}.degrees"), d.mean_degrees);
    }
    let cos = evalbench::mean_abs_cos(&predictor, &data.samples)?;
    metrics.insert("abs_cos".into(), cos);
    let _ = writeln!(table, "# mean |cos(proj, res)| = {cos:.6}");
    ctx.write("phase.tsv", &table)?;
    print!("{table}");
    ctx.finish("phase-diag", "phase-diag", metrics, BTreeMap::new())
}

fn plot_cmd(ctx: &mut Ctx, inputs: &[PathBuf]) -> Result<(), CliError> {
    let mut series = Vec::with_capacity(inputs.len());
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::MissingFile {
            path: path.clone(),
            source,
        })?;
        let rows = evalbench::read_f1_column(&text)?;
        let points = plot::intra_points(&rows);
        if points.is_empty() {
            return Err(CliError::Usage(format!("{} has no p=… rows", path.display())));
        }
        series.push(Series {
            label: stem(path),
            points,
        });
        ctx.inputs.push(path.clone());
    }
    ctx.write("plot.svg", &plot::render(&series))?;
    println!("wrote {}", ctx.path("plot.svg").display());
    ctx.finish("plot", "plot", BTreeMap::new(), BTreeMap::new())
}

fn stem(p: &Path) -> String {
    let file = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match p.parent().and_then(|d| d.file_name()) {
        Some(dir) => format!("{}/{file}", dir.to_string_lossy()),
        None => file,
    }
}
