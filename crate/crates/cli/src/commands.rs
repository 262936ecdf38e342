use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use ranker_core::evaluation::{
    ablation_run, evaluate_checkpoint, scaling_curve, EvalReport, LabelOracle, ScalingCurve,
};
use ranker_core::feature_store::{
    dataset_fingerprint, fingerprint_bytes, read_dataset, write_atomic, write_dataset, DatasetMeta,
    FeatureRecord, LabelMode,
};
use ranker_core::rankers::{RankerError, RankerKind, RelevanceKind, Variant};
use ranker_core::synthetic::{generate, SyntheticSpec};
use ranker_core::training::{
    grid_search, load_checkpoint, save_checkpoint, Checkpoint, GridSpace, Objective, OptimizerConfig,
    Schedule, TrainConfig,
};

use crate::failure::Failure;
use crate::{
    AblateCmd, CurveCmd, EvalCmd, Format, InspectCmd, LossArg, OptimizerArg, RankerArg, RecipeArgs,
    RelevanceArg, ScheduleArg, SweepCmd, SynthCmd, TrainCmd, VariantArg,
};

pub struct Context {
    pub argv: Vec<String>,
    pub threads: usize,
}

#[derive(Debug, Serialize)]
struct Input {
    role: &'static str,
    path: String,
    sha256: String,
}

/// Enough to rerun the command and check that its inputs are unchanged.
#[derive(Debug, Serialize)]
struct Stanza {
    tool: String,
    argv: Vec<String>,
    threads: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<TrainConfig>,
    inputs: Vec<Input>,
}

impl Context {
    fn stanza(&self, seed: u64, config: Option<&TrainConfig>, inputs: Vec<Input>) -> Stanza {
        Stanza {
            tool: format!("lranker {}", env!("CARGO_PKG_VERSION")),
            argv: self.argv.clone(),
            threads: self.threads,
            seed,
            config: config.cloned(),
            inputs,
        }
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Run(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn pretty(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

/// The serialized (snake_case) name of a unit enum variant.
fn snake<T: Serialize>(v: &T) -> String {
    to_json(v).as_str().unwrap_or_default().to_string()
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn stanza_comment(stanza: &Stanza) -> String {
    format!("# reproducibility: {}", serde_json::to_string(stanza).expect("stanza serializes"))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_output(path, &bytes)
}

fn load_data(path: &Path) -> Result<(Vec<FeatureRecord>, DatasetMeta, Input), Failure> {
    let (records, meta) = read_dataset(path)?;
    let sha256 = dataset_fingerprint(&records, &meta)?;
    let input = Input {
        role: "dataset",
        path: path.display().to_string(),
        sha256,
    };
    Ok((records, meta, input))
}

fn load_ckpt(path: &Path) -> Result<(Checkpoint, Input), Failure> {
    let ckpt = load_checkpoint(path)?;
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let input = Input {
        role: "checkpoint",
        path: path.display().to_string(),
        sha256: fingerprint_bytes(&bytes),
    };
    Ok((ckpt, input))
}

/// Defaults, then the `--config` file, then explicit flags.
pub fn build_config(r: &RecipeArgs) -> Result<TrainConfig, Failure> {
    let mut c = match &r.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(k) = r.ranker {
        c.ranker = match k {
            RankerArg::Listwise => RankerKind::Listwise,
            RankerArg::Pointwise => RankerKind::Pointwise,
        };
    }
    if let Some(l) = r.loss {
        let (loss, relevance) = match l {
            LossArg::Cls => (Objective::Cls, RelevanceKind::Cosine),
            LossArg::Reg => (Objective::Reg, RelevanceKind::Learnable),
        };
        c.loss = loss;
        c.relevance = relevance;
    }
    if let Some(rel) = r.relevance {
        c.relevance = match rel {
            RelevanceArg::Cosine => RelevanceKind::Cosine,
            RelevanceArg::Learnable => RelevanceKind::Learnable,
        };
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = r.$flag { c.$field = v; })*
        };
    }
    set!(d_proj => d_proj, d_hidden => d_hidden, blocks => block_count, batch_size => batch_size,
        epochs => epochs, weight_decay => weight_decay, group_size => group_size,
        groups_per_query => groups_per_query, logit_scale => logit_scale, seed => seed);
    if let Some(s) = r.schedule {
        c.schedule = match s {
            ScheduleArg::Constant => Schedule::Constant,
            ScheduleArg::Cosine => Schedule::CosineDecay,
        };
    }
    match (r.optimizer, c.optimizer) {
        (Some(OptimizerArg::Sgd), OptimizerConfig::AdamW { .. }) => c.optimizer = OptimizerConfig::sgd(0.1, 0.0),
        (Some(OptimizerArg::Adamw), OptimizerConfig::Sgd { .. }) => c.optimizer = OptimizerConfig::adamw(1e-4),
        _ => {}
    }
    if let Some(v) = r.lr {
        match &mut c.optimizer {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::AdamW { lr, .. } => *lr = v,
        }
    }
    if let Some(v) = r.momentum {
        match &mut c.optimizer {
            OptimizerConfig::Sgd { momentum, .. } => *momentum = v,
            OptimizerConfig::AdamW { .. } => {
                return Err(Failure::Usage("--momentum applies to --optimizer sgd only".into()))
            }
        }
    }
    c.validate()?;
    Ok(c)
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Full => Variant::Full,
        VariantArg::NoProjection => Variant::NoProjection,
        VariantArg::NoInstruction => Variant::NoInstruction,
        VariantArg::NoMlpBlock => Variant::NoMlpBlock,
    }
}

fn check_variant(c: &TrainConfig, meta: &DatasetMeta) -> Result<(), Failure> {
    c.ranker_spec(meta.d_model).validate().map_err(|e| match e {
        RankerError::Dimension { .. } => Failure::Data(e.to_string()),
        _ => Failure::Usage(e.to_string()),
    })
}

pub fn train(ctx: &Context, cmd: TrainCmd) -> Result<(), Failure> {
    let mut config = build_config(&cmd.recipe)?;
    if let Some(v) = cmd.variant {
        config.variant = variant(v);
    }
    let (records, meta, input) = load_data(&cmd.data)?;
    check_variant(&config, &meta)?;
    let (ckpt, log) = ranker_core::training::train(&config, &records, &meta)?;
    save_checkpoint(&ckpt, &cmd.out)?;
    let stanza = ctx.stanza(config.seed, Some(&config), vec![input]);
    let summary = json!({
        "checkpoint": cmd.out.display().to_string(),
        "parameter_count": ckpt.parameter_count(),
        "groups": log.groups,
        "units": log.units,
        "steps": log.total_steps,
        "aborted_steps": log.aborted_steps(),
        "first_loss": log.first_loss(),
        "last_loss": log.last_loss(),
        "reproducibility": to_json(&stanza),
    });
    if let Some(path) = &cmd.log {
        write_json(path, &json!({ "log": to_json(&log), "reproducibility": to_json(&stanza) }))?;
    }
    emit(&pretty(&summary))?;
    Ok(())
}

fn emit_report(report: &EvalReport, stanza: &Stanza, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let value = json!({ "report": to_json(report), "reproducibility": to_json(stanza) });
    if let Some(path) = out {
        write_json(path, &value)?;
    }
    match format {
        Format::Table => emit(&format!("{}{}\n", report.render_table(), stanza_comment(stanza)))?,
        Format::Json => emit(&pretty(&value))?,
    }
    Ok(())
}

pub fn eval(ctx: &Context, cmd: EvalCmd) -> Result<(), Failure> {
    let (ckpt, ck_input) = load_ckpt(&cmd.ckpt)?;
    let (records, meta, data_input) = load_data(&cmd.data)?;
    if meta.d_model != ckpt.spec.d_model {
        return Err(Failure::Data(format!(
            "dimension mismatch: checkpoint d_model = {}, dataset d_model = {}",
            ckpt.spec.d_model, meta.d_model
        )));
    }
    let report = evaluate_checkpoint(
        &ckpt,
        &ck_input.sha256,
        &records,
        &meta,
        &data_input.sha256,
        cmd.group_size,
        cmd.trials,
        cmd.seed,
    )?;
    let stanza = ctx.stanza(cmd.seed, Some(&ckpt.config), vec![ck_input, data_input]);
    emit_report(&report, &stanza, cmd.format, cmd.out.as_deref())
}

pub fn sweep(ctx: &Context, cmd: SweepCmd) -> Result<(), Failure> {
    let base = build_config(&cmd.recipe)?;
    let space = if cmd.grid == "default" {
        GridSpace::default()
    } else {
        let text = fs::read_to_string(&cmd.grid).map_err(|e| Failure::Usage(format!("cannot read grid {}: {e}", cmd.grid)))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("bad grid {}: {e}", cmd.grid)))?
    };
    if space.is_empty() {
        return Err(Failure::Usage("grid has no points".into()));
    }
    let (records, meta, input) = load_data(&cmd.data)?;
    check_variant(&base, &meta)?;
    let outcome = grid_search(&space, &base, records, &meta)?;
    let stanza = ctx.stanza(base.seed, Some(&base), vec![input]);
    let value = json!({ "grid": to_json(&space), "outcome": to_json(&outcome), "reproducibility": to_json(&stanza) });
    if let Some(path) = &cmd.out {
        write_json(path, &value)?;
    }
    match cmd.format {
        Format::Table => emit(&format!("{}{}\n", outcome.render_table(), stanza_comment(&stanza)))?,
        Format::Json => emit(&pretty(&value))?,
    }
    if outcome.best.is_none() {
        return Err(Failure::Run("every grid point failed".into()));
    }
    Ok(())
}

pub fn curve(ctx: &Context, cmd: CurveCmd) -> Result<(), Failure> {
    let (ckpt, ck_input) = load_ckpt(&cmd.ckpt)?;
    let (records, meta, data_input) = load_data(&cmd.data)?;
    if meta.d_model != ckpt.spec.d_model {
        return Err(Failure::Data(format!(
            "dimension mismatch: checkpoint d_model = {}, dataset d_model = {}",
            ckpt.spec.d_model, meta.d_model
        )));
    }
    let params = ckpt.to_params();
    let ranker: ScalingCurve = scaling_curve(&params, &records, meta.label_mode, &cmd.k, cmd.trials, cmd.seed)?;
    let oracle = scaling_curve(&LabelOracle, &records, meta.label_mode, &cmd.k, cmd.trials, cmd.seed)?;
    let stanza = ctx.stanza(cmd.seed, Some(&ckpt.config), vec![ck_input, data_input]);
    let csv = ranker.to_csv();
    if let Some(path) = &cmd.out {
        write_output(path, csv.as_bytes())?;
    }
    if let Some(path) = &cmd.report {
        let value = json!({
            "ranker": to_json(&ranker),
            "oracle": to_json(&oracle),
            "oracle_regression_caveat": meta.label_mode == LabelMode::Regression,
            "reproducibility": to_json(&stanza),
        });
        write_json(path, &value)?;
    }
    emit(&format!("# {}\n{}\n{}", ranker.protocol, stanza_comment(&stanza), csv))?;
    if ranker.points.is_empty() {
        return Err(Failure::Run("no K value fits the smallest response pool".into()));
    }
    Ok(())
}

pub fn ablate(ctx: &Context, cmd: AblateCmd) -> Result<(), Failure> {
    let config = build_config(&cmd.recipe)?;
    let v = variant(cmd.variant);
    let (records, meta, input) = load_data(&cmd.data)?;
    check_variant(&TrainConfig { variant: v, ..config.clone() }, &meta)?;
    let (report, ckpt) = ablation_run(v, &config, records, &meta)?;
    if let Some(path) = &cmd.ckpt_out {
        save_checkpoint(&ckpt, path)?;
    }
    let stanza = ctx.stanza(config.seed, Some(&ckpt.config), vec![input]);
    emit_report(&report, &stanza, cmd.format, cmd.out.as_deref())
}

/// `1234567` → `1,234,567`.
pub fn grouped(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn inspect(ctx: &Context, cmd: InspectCmd) -> Result<(), Failure> {
    let (ckpt, input) = load_ckpt(&cmd.ckpt)?;
    let spec = &ckpt.spec;
    let stanza = ctx.stanza(ckpt.config.seed, Some(&ckpt.config), vec![input]);
    match cmd.format {
        Format::Json => {
            let value = json!({
                "ranker_kind": spec.kind,
                "relevance_kind": spec.relevance,
                "variant": spec.variant,
                "d_model": spec.d_model,
                "d_proj": spec.d_proj,
                "d_hidden": spec.d_hidden,
                "block_count": spec.block_count,
                "parameter_count": ckpt.parameter_count(),
                "dataset_fingerprint": ckpt.dataset_fingerprint,
                "tensors": ckpt.tensors.iter().map(|t| json!({"name": t.name, "dims": t.dims})).collect::<Vec<_>>(),
                "reproducibility": to_json(&stanza),
            });
            emit(&pretty(&value))?;
        }
        Format::Table => {
            let mut out = String::new();
            out.push_str(&format!("ranker_kind      {}\n", snake(&spec.kind)));
            out.push_str(&format!("relevance_kind   {}\n", snake(&spec.relevance)));
            out.push_str(&format!("variant          {}\n", snake(&spec.variant)));
            out.push_str(&format!("d_model          {}\n", spec.d_model));
            out.push_str(&format!("d_proj           {}\n", spec.d_proj));
            out.push_str(&format!("d_hidden         {}\n", spec.d_hidden));
            out.push_str(&format!("block_count      {}\n", spec.block_count));
            out.push_str(&format!("parameter_count  {}\n", grouped(ckpt.parameter_count())));
            out.push_str(&format!("dataset          {}\n", ckpt.dataset_fingerprint));
            out.push_str("tensors:\n");
            let width = ckpt.tensors.iter().map(|t| t.name.len()).max().unwrap_or(0);
            for t in &ckpt.tensors {
                out.push_str(&format!("  {:<width$}  {:?}\n", t.name, t.dims));
            }
            out.push_str(&format!("{}\n", stanza_comment(&stanza)));
            emit(&out)?;
        }
    }
    Ok(())
}

pub fn synth(ctx: &Context, cmd: SynthCmd) -> Result<(), Failure> {
    if cmd.d_model < 2 || cmd.queries == 0 || cmd.responses == 0 {
        return Err(Failure::Usage("need d_model >= 2, queries >= 1, responses >= 1".into()));
    }
    let spec = SyntheticSpec {
        d_model: cmd.d_model,
        queries: cmd.queries,
        responses_per_query: cmd.responses,
        label_mode: if cmd.regression {
            LabelMode::Regression
        } else {
            LabelMode::Classification
        },
        seed: cmd.seed,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec);
    write_dataset(&data.records, &data.meta, &cmd.out)?;
    let sha256 = dataset_fingerprint(&data.records, &data.meta)?;
    let stanza = ctx.stanza(cmd.seed, None, Vec::new());
    let value = json!({
        "dataset": cmd.out.display().to_string(),
        "sha256": sha256,
        "spec": to_json(&spec),
        "reproducibility": to_json(&stanza),
    });
    emit(&pretty(&value))?;
    Ok(())
}
