//! One function per subcommand. Each writes its artifacts under the output
//! directory and returns an [`Outcome`]; a failed numeric check (KS threshold,
//! gradient check) is reported through `Outcome::failure` after the report has
//! been written, so callers still get the artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};
use vmf_gos::data::{
    generate_long_tailed_vmf, generate_ood_set, load_features, save_features, LabeledFeatureSet, OodRecipe,
};
use vmf_gos::eval::{evaluate_raw, score_rows, MetricReport, OdinConfig, ScoredSet};
use vmf_gos::gos::{synthesize_balanced_batch_with, verify_chi2_equivalence};
use vmf_gos::gradcheck::{run_gradcheck, Component};
use vmf_gos::losses::energy_score;
use vmf_gos::nn::{
    fit_class_mixture, load_checkpoint, refresh_mixture, save_checkpoint, train as train_net, Activation, NetDims,
    TinyNet, TrainConfig, TrainReport,
};
use vmf_gos::{AnnulusSpec, RandomSource, VmfMixture};

use crate::config::{OodKind, RunConfig, Settings};
use crate::error::{AtPath, CliError, CliResult};

pub const TRAIN_FILE: &str = "train.vgfs";
pub const ID_TEST_FILE: &str = "id-test.vgfs";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.vgos";
pub const SIDECAR_FILE: &str = "checkpoint.json";
pub const TRAIN_REPORT_FILE: &str = "train-report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const GOS_FILE: &str = "gos.vgfs";
pub const GOS_SUMMARY_FILE: &str = "gos.json";
pub const KS_FILE: &str = "ks.json";
pub const KS_SWEEP_FILE: &str = "ks-sweep.csv";
pub const SWEEP_CSV_FILE: &str = "annulus-sweep.csv";
pub const SWEEP_JSON_FILE: &str = "annulus-sweep.json";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";

/// Stream for outlier dumps, clear of the training streams under the same seed.
const STREAM_DUMP: u64 = 3;

pub fn ood_file_name(kind: OodKind) -> String {
    format!("ood-{}.vgfs", kind.name())
}

/// Parsed configuration plus the output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub settings: Settings,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> CliResult<Self> {
        let settings = config.settings()?;
        let out = out.into();
        fs::create_dir_all(&out).at(&out)?;
        Ok(Self { config, settings, out })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Fields every report starts with.
    fn header(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        m.insert("config_digest".into(), json!(self.config.digest()));
        m.insert("config".into(), json!(self.config.echo()));
        m
    }

    fn write_report(&self, name: &str, body: Map<String, Value>) -> CliResult<PathBuf> {
        let mut m = self.header();
        m.extend(body);
        let path = self.path(name);
        write_json(&path, &Value::Object(m))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Set when a numeric acceptance check inside the command failed.
    pub failure: Option<String>,
}

impl Outcome {
    fn ok(files: Vec<PathBuf>) -> Self {
        Self { files, failure: None }
    }
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, vmf_gos::Error::Format(format!("invalid JSON: {e}"))))
}

fn load_set(path: &Path) -> CliResult<LabeledFeatureSet<f64>> {
    load_features(path).at(path)
}

fn file_crc(path: &Path) -> CliResult<String> {
    Ok(format!("{:08x}", crc32c::crc32c(&fs::read(path).at(path)?)))
}

// ---------------------------------------------------------------- synth-data

pub fn synth_data(ctx: &Context) -> CliResult<Outcome> {
    let s = &ctx.settings;
    let gen = generate_long_tailed_vmf(&s.data)?;
    let mut entries = Vec::new();
    let mut files = Vec::new();
    let mut save = |role: &str, name: String, set: &LabeledFeatureSet<f64>| -> CliResult<()> {
        let path = ctx.path(&name);
        save_features(set, &path).at(&path)?;
        entries.push(json!({
            "role": role,
            "file": name,
            "rows": set.len(),
            "dim": set.dim(),
            "crc32c": file_crc(&path)?,
        }));
        files.push(path);
        Ok(())
    };
    save("train", TRAIN_FILE.into(), &gen.train)?;
    save("id-test", ID_TEST_FILE.into(), &gen.test)?;
    for &kind in &s.ood_kinds {
        let recipe = match kind {
            OodKind::UniformSphere => OodRecipe::UniformSphere,
            OodKind::ShiftedMixture => OodRecipe::ShiftedMixture {
                id_means: gen.mixture.components().iter().map(|c| c.mu.clone()).collect(),
                kappa: s.ood_kappa,
                components: s.ood_components,
                min_angle_deg: s.ood_min_angle_deg,
            },
        };
        let set = generate_ood_set(&recipe, s.ood_count, s.data.dim, s.seed)?;
        save(&format!("ood-test:{}", kind.name()), ood_file_name(kind), &set)?;
    }
    let mut body = Map::new();
    body.insert("files".into(), Value::Array(entries));
    body.insert("class_counts".into(), json!(gen.train.class_counts()));
    files.push(ctx.write_report(MANIFEST_FILE, body)?);
    Ok(Outcome::ok(files))
}

// --------------------------------------------------------------------- train

/// Ablation switches; each zeroes one loss weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Ablation {
    pub no_dgs: bool,
    pub no_tla: bool,
    pub no_epr: bool,
}

impl Ablation {
    pub const TLA_ONLY: Ablation = Ablation { no_dgs: true, no_tla: false, no_epr: true };
    pub const NO_TLA: Ablation = Ablation { no_dgs: false, no_tla: true, no_epr: false };

    pub fn apply(self, cfg: &mut TrainConfig<f64>) {
        if self.no_dgs {
            cfg.weights.dgs_weight = 0.0;
        }
        if self.no_tla {
            cfg.weights.alpha = 0.0;
        }
        if self.no_epr {
            cfg.weights.beta = 0.0;
        }
        // Synthesized outliers feed only DGS and EPR.
        if cfg.weights.dgs_weight == 0.0 && cfg.weights.beta == 0.0 {
            cfg.outliers_per_class = 0;
        }
    }
}

/// Trains on `train` with the context's settings. Shared by `train` and
/// `sweep-annulus`.
pub fn fit_model(
    s: &Settings,
    train: &LabeledFeatureSet<f64>,
    ablation: Ablation,
    annulus: Option<AnnulusSpec<f64>>,
) -> CliResult<(TinyNet<f64>, TrainReport)> {
    let mut cfg = s.train.clone();
    if let Some(a) = annulus {
        cfg.annulus = a;
    }
    ablation.apply(&mut cfg);
    let dims = NetDims { classes: train.num_classes(), ..s.dims(train.dim()) };
    let mut net = TinyNet::new(dims, s.activation, &mut cfg.init_rng())?;
    let report = train_net(&mut net, train, &cfg)?;
    Ok((net, report))
}

pub fn train(ctx: &Context, data_dir: &Path, ablation: Ablation) -> CliResult<Outcome> {
    let train = load_set(&data_dir.join(TRAIN_FILE))?;
    let (net, report) = fit_model(&ctx.settings, &train, ablation, None)?;
    let ckpt = ctx.path(CHECKPOINT_FILE);
    save_checkpoint(&net, &ckpt).at(&ckpt)?;

    let mut sidecar = Map::new();
    sidecar.insert("seed".into(), json!(ctx.settings.seed));
    sidecar.insert("activation".into(), json!(net.activation()));
    sidecar.insert("dims".into(), json!(net.dims()));
    sidecar.insert("ablation".into(), json!(ablation));
    sidecar.insert("class_counts".into(), json!(train.class_counts()));
    sidecar.insert("param_digest".into(), json!(format!("{:08x}", net.param_digest())));
    sidecar.insert("checkpoint_crc32c".into(), json!(file_crc(&ckpt)?));
    let sidecar_path = ctx.write_report(SIDECAR_FILE, sidecar)?;

    let mut body = Map::new();
    body.insert("ablation".into(), json!(ablation));
    body.insert("report".into(), json!(report));
    let report_path = ctx.write_report(TRAIN_REPORT_FILE, body)?;
    Ok(Outcome::ok(vec![ckpt, sidecar_path, report_path]))
}

// ---------------------------------------------------------------------- eval

/// A checkpoint and what its sidecar says about it.
pub struct LoadedModel {
    pub net: TinyNet<f64>,
    /// Training class counts, when the sidecar is present.
    pub class_counts: Option<Vec<usize>>,
}

pub fn load_model(ckpt: &Path, fallback_activation: Activation) -> CliResult<LoadedModel> {
    let sidecar_path = ckpt.with_extension("json");
    let (activation, class_counts) = if sidecar_path.exists() {
        let v = read_json(&sidecar_path)?;
        let bad = |what: &str| CliError::io(&sidecar_path, vmf_gos::Error::Format(format!("bad `{what}` field")));
        let act: Activation = serde_json::from_value(v["activation"].clone()).map_err(|_| bad("activation"))?;
        let counts: Option<Vec<usize>> =
            serde_json::from_value(v["class_counts"].clone()).map_err(|_| bad("class_counts"))?;
        if let Some(want) = v["checkpoint_crc32c"].as_str() {
            let got = file_crc(ckpt)?;
            if got != want {
                return Err(CliError::io(
                    ckpt,
                    vmf_gos::Error::Format(format!("checksum {got} does not match sidecar {want}")),
                ));
            }
        }
        (act, counts)
    } else {
        (fallback_activation, None)
    };
    Ok(LoadedModel { net: load_checkpoint(ckpt, activation).at(ckpt)?, class_counts })
}

/// Indices of the `floor(K/3)` classes with the fewest training samples
/// (ties go to the later class).
pub fn tail_classes(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
    let mut tail: Vec<usize> = order.into_iter().take(counts.len() / 3).collect();
    tail.sort_unstable();
    tail
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub tail_classes: Vec<usize>,
    pub tail_accuracy: Option<f64>,
}

pub fn classification(preds: &[usize], labels: &[usize], k: usize, tail: Vec<usize>) -> Classification {
    let mut hit = vec![0usize; k];
    let mut seen = vec![0usize; k];
    for (&p, &y) in preds.iter().zip(labels) {
        seen[y] += 1;
        hit[y] += usize::from(p == y);
    }
    let frac = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
    let (th, tn) = tail.iter().fold((0, 0), |(h, n), &y| (h + hit[y], n + seen[y]));
    Classification {
        accuracy: frac(hit.iter().sum(), labels.len()).unwrap_or(0.0),
        per_class: (0..k).map(|y| frac(hit[y], seen[y])).collect(),
        tail_accuracy: frac(th, tn),
        tail_classes: tail,
    }
}

/// Metrics for every OOD set plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub sets: BTreeMap<String, MetricReport>,
    #[serde(rename = "Average")]
    pub average: Value,
    pub classification: Classification,
}

pub fn evaluate_model(
    net: &TinyNet<f64>,
    class_counts: Option<&[usize]>,
    id: &LabeledFeatureSet<f64>,
    ood: &[(String, LabeledFeatureSet<f64>)],
    odin: &OdinConfig<f64>,
    digest: &str,
) -> CliResult<Evaluation> {
    let labels = id.labels().ok_or_else(|| CliError::Config("in-distribution test set has no labels".into()))?;
    let id_rows: Vec<&[f64]> = id.rows().collect();
    let (id_scores, preds) = score_rows(net, &id_rows, odin)?;
    let mut sets = BTreeMap::new();
    for (name, set) in ood {
        let rows: Vec<&[f64]> = set.rows().collect();
        let (ood_scores, _) = score_rows(net, &rows, odin)?;
        let raw = ScoredSet::new(id_scores.clone(), ood_scores)?;
        sets.insert(name.clone(), evaluate_raw(&raw, &preds, labels, digest)?);
    }
    let k = net.dims().classes;
    let tail = class_counts.map(tail_classes).unwrap_or_default();
    Ok(Evaluation { average: average(sets.values()), classification: classification(&preds, labels, k, tail), sets })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn average<'a>(reports: impl Iterator<Item = &'a MetricReport> + Clone) -> Value {
    let level_means = |pick: fn(&MetricReport) -> &BTreeMap<String, Option<f64>>| -> BTreeMap<String, Option<f64>> {
        let mut keys: Vec<&String> = reports.clone().flat_map(|r| pick(r).keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|k| (k.clone(), mean(reports.clone().filter_map(|r| pick(r).get(k).copied().flatten()))))
            .collect()
    };
    json!({
        "auroc": mean(reports.clone().map(|r| r.auroc)),
        "aupr": mean(reports.clone().map(|r| r.aupr)),
        "fpr@0.95": mean(reports.clone().map(|r| r.fpr_at_95)),
        "acc@tpr": level_means(|r| &r.acc_at_tpr),
        "acc@fpr": level_means(|r| &r.acc_at_fpr),
    })
}

/// OOD sets named by file stem without the `ood-` prefix.
pub fn load_ood_sets(paths: &[PathBuf]) -> CliResult<Vec<(String, LabeledFeatureSet<f64>)>> {
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("ood");
            let name = stem.strip_prefix("ood-").unwrap_or(stem).to_string();
            Ok((name, load_set(p)?))
        })
        .collect()
}

/// `ood-*.vgfs` files in `dir`, sorted.
pub fn discover_ood_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("ood-") && name.ends_with(".vgfs")
        })
        .collect();
    found.sort();
    if found.is_empty() {
        let missing = dir.join("ood-*.vgfs");
        return Err(CliError::io(&missing, std::io::Error::new(std::io::ErrorKind::NotFound, "no OOD test files")));
    }
    Ok(found)
}

/// Largest `|S - E|` over the first samples; only meaningful when eta = 0
/// and the scoring temperature equals the energy temperature.
fn energy_identity_gap(net: &TinyNet<f64>, id: &LabeledFeatureSet<f64>, odin: &OdinConfig<f64>) -> CliResult<f64> {
    let rows: Vec<&[f64]> = id.rows().take(16).collect();
    let (scores, _) = score_rows(net, &rows, odin)?;
    let mut gap: f64 = 0.0;
    for (x, s) in rows.iter().zip(scores) {
        let (_, logits) = net.forward(x)?;
        gap = gap.max((s - energy_score(&logits, odin.temp)?).abs());
    }
    Ok(gap)
}

pub fn eval(ctx: &Context, ckpt: &Path, id_path: &Path, ood_paths: &[PathBuf]) -> CliResult<Outcome> {
    let s = &ctx.settings;
    let model = load_model(ckpt, s.activation)?;
    let id = load_set(id_path)?;
    let ood = load_ood_sets(ood_paths)?;
    let digest = ctx.config.digest();
    let eval = evaluate_model(&model.net, model.class_counts.as_deref(), &id, &ood, &s.odin, &digest)?;

    let mut body = match json!(eval) {
        Value::Object(m) => m,
        _ => unreachable!("struct serializes to an object"),
    };
    if s.odin.eta == 0.0 {
        let matched = s.odin.temp == s.train.weights.epr_temperature();
        body.insert(
            "energy_identity".into(),
            json!({ "temperature_matched": matched, "max_abs_diff": energy_identity_gap(&model.net, &id, &s.odin)? }),
        );
    }
    if s.odin_sweep {
        let mut rows = Vec::new();
        for &eta in &s.odin_etas {
            for &temp in &s.odin_temps {
                let odin = OdinConfig { eta, temp };
                odin.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let e = evaluate_model(&model.net, model.class_counts.as_deref(), &id, &ood, &odin, &digest)?;
                rows.push(json!({ "eta": eta, "temp": temp, "Average": e.average }));
            }
        }
        body.insert("odin_sweep".into(), Value::Array(rows));
    }
    Ok(Outcome::ok(vec![ctx.write_report(METRICS_FILE, body)?]))
}

// ------------------------------------------------------- synthesize-outliers

pub fn synthesize_outliers(ctx: &Context, data_dir: &Path, ckpt: Option<&Path>) -> CliResult<Outcome> {
    let s = &ctx.settings;
    let train = load_set(&data_dir.join(TRAIN_FILE))?;
    let (mix, fallback): (VmfMixture<f64>, Vec<usize>) = match ckpt {
        Some(p) => refresh_mixture(&load_model(p, s.activation)?.net, &train)?,
        None => {
            let labels = train.labels().ok_or_else(|| CliError::Config("training set has no labels".into()))?;
            let rows: Vec<&[f64]> = train.rows().collect();
            fit_class_mixture(&rows, labels, train.class_counts())?
        }
    };
    let mut rng = RandomSource::with_stream(s.seed, STREAM_DUMP);
    let batch = synthesize_balanced_batch_with(&mix, s.gos_per_class, &s.train.annulus, s.train.anchor, &mut rng)?;
    let dim = mix.dim();
    let mut features = Vec::with_capacity(batch.len() * dim);
    let mut labels = Vec::with_capacity(batch.len());
    let mut aux = Vec::with_capacity(batch.len());
    for o in &batch {
        features.extend_from_slice(o.vector.as_slice());
        labels.push(o.anchor_class);
        aux.push([o.anchor_class as f64, o.similarity]);
    }
    let set = LabeledFeatureSet::new(dim, mix.num_classes(), features, Some(labels), true)?.with_aux(aux)?;
    let path = ctx.path(GOS_FILE);
    save_features(&set, &path).at(&path)?;

    let per_class: Vec<Value> = mix
        .components()
        .iter()
        .enumerate()
        .map(|(y, c)| {
            let ts: Vec<f64> = batch.iter().filter(|o| o.anchor_class == y).map(|o| o.similarity).collect();
            json!({
                "class": y,
                "kappa": c.kappa,
                "similarity_min": ts.iter().copied().fold(f64::INFINITY, f64::min),
                "similarity_max": ts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect();
    let mut body = Map::new();
    body.insert("source".into(), json!(if ckpt.is_some() { "checkpoint-features" } else { "raw-features" }));
    body.insert("outliers".into(), json!(batch.len()));
    body.insert("kappa_fallback".into(), json!(fallback));
    body.insert("classes".into(), Value::Array(per_class));
    Ok(Outcome::ok(vec![path, ctx.write_report(GOS_SUMMARY_FILE, body)?]))
}

// ------------------------------------------------------------ verify-theorem

pub fn verify_theorem(ctx: &Context) -> CliResult<Outcome> {
    let s = &ctx.settings;
    let run =
        |kappa: f64| verify_chi2_equivalence(s.verify_dim, kappa, s.verify_samples, &mut RandomSource::new(s.seed));
    let main = run(s.verify_kappa)?;
    let mut files = Vec::new();
    let mut sweep = Vec::new();
    if !s.verify_kappas.is_empty() {
        let path = ctx.path(KS_SWEEP_FILE);
        let mut csv = String::from("kappa,ks,regime_warning\n");
        for &k in &s.verify_kappas {
            let r = run(k)?;
            csv.push_str(&format!("{},{},{}\n", r.kappa, r.ks, r.regime_warning));
            sweep.push(json!({ "kappa": r.kappa, "ks": r.ks, "regime_warning": r.regime_warning }));
        }
        fs::write(&path, csv).at(&path)?;
        files.push(path);
    }
    let passed = main.ks < s.ks_threshold;
    let mut body = Map::new();
    body.insert("dim".into(), json!(main.dim));
    body.insert("kappa".into(), json!(main.kappa));
    body.insert("samples".into(), json!(main.samples));
    body.insert("ks".into(), json!(main.ks));
    body.insert("ks_threshold".into(), json!(s.ks_threshold));
    body.insert("passed".into(), json!(passed));
    body.insert("regime_warning".into(), json!(main.regime_warning));
    if !sweep.is_empty() {
        body.insert("sweep".into(), Value::Array(sweep));
    }
    files.insert(0, ctx.write_report(KS_FILE, body)?);
    let failure = (!passed).then(|| format!("KS {:.4} >= threshold {}", main.ks, s.ks_threshold));
    Ok(Outcome { files, failure })
}

// ------------------------------------------------------------- sweep-annulus

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lo_sigma: f64,
    pub hi_sigma: f64,
    /// Mean AUROC over the OOD sets.
    pub auroc: f64,
    pub acc: f64,
}

pub fn sweep_annulus(ctx: &Context, data_dir: &Path) -> CliResult<Outcome> {
    let s = &ctx.settings;
    let train = load_set(&data_dir.join(TRAIN_FILE))?;
    let id = load_set(&data_dir.join(ID_TEST_FILE))?;
    let ood = load_ood_sets(&discover_ood_files(data_dir)?)?;
    let digest = ctx.config.digest();
    let mut rows = Vec::with_capacity(s.sweep_grid.len());
    for &annulus in &s.sweep_grid {
        let (net, _) = fit_model(s, &train, Ablation::default(), Some(annulus))?;
        let e = evaluate_model(&net, Some(train.class_counts()), &id, &ood, &s.odin, &digest)?;
        rows.push(SweepRow {
            lo_sigma: annulus.lo_sigma(),
            hi_sigma: annulus.hi_sigma(),
            auroc: e.average["auroc"].as_f64().expect("at least one OOD set"),
            acc: e.classification.accuracy,
        });
    }
    let csv_path = ctx.path(SWEEP_CSV_FILE);
    let mut csv = String::from("lo_sigma,hi_sigma,auroc,acc\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.lo_sigma, r.hi_sigma, r.auroc, r.acc));
    }
    fs::write(&csv_path, csv).at(&csv_path)?;
    let mut body = Map::new();
    body.insert("rows".into(), json!(rows));
    Ok(Outcome::ok(vec![csv_path, ctx.write_report(SWEEP_JSON_FILE, body)?]))
}

// ----------------------------------------------------------------- gradcheck

pub fn parse_component(name: &str) -> CliResult<Component> {
    Component::ALL
        .into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| CliError::Config(format!("unknown loss component `{name}`")))
}

pub fn gradcheck(ctx: &Context, inject_sign_bug: Option<Component>) -> CliResult<Outcome> {
    let spec = vmf_gos::gradcheck::GradcheckSpec { inject_sign_bug, ..ctx.settings.gradcheck };
    let checks = run_gradcheck(&spec)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.component.name()).collect();
    let mut body = Map::new();
    body.insert("tolerance".into(), json!(vmf_gos::gradcheck::REL_TOLERANCE));
    body.insert("passed".into(), json!(failed.is_empty()));
    body.insert("components".into(), json!(checks));
    let path = ctx.write_report(GRADCHECK_FILE, body)?;
    let failure = (!failed.is_empty()).then(|| format!("gradient check failed for: {}", failed.join(", ")));
    Ok(Outcome { files: vec![path], failure })
}

// -------------------------------------------------------------------- report

/// Merges `metrics.json` files into one table: a row per (run, OOD set) plus
/// each run's `Average` row.
pub fn report(ctx: &Context, inputs: &[PathBuf]) -> CliResult<Outcome> {
    if inputs.is_empty() {
        return Err(CliError::Config("report needs at least one metrics file".into()));
    }
    let mut rows = Vec::new();
    for path in inputs {
        let v = read_json(path)?;
        let run = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| path.to_str().unwrap_or("run"))
            .to_string();
        let sets = v["sets"]
            .as_object()
            .ok_or_else(|| CliError::io(path, vmf_gos::Error::Format("missing `sets` block".into())))?;
        let acc = v["classification"]["accuracy"].clone();
        let mut push = |set: &str, m: &Value| {
            rows.push(json!({
                "run": run,
                "set": set,
                "auroc": m["auroc"],
                "aupr": m["aupr"],
                "fpr@0.95": m["fpr@0.95"],
                "acc@fpr0": m["acc@fpr"]["0"],
                "accuracy": acc,
                "config_digest": v["config_digest"],
            }));
        };
        for (name, m) in sets {
            push(name, m);
        }
        push("Average", &v["Average"]);
    }
    let csv_path = ctx.path(REPORT_CSV_FILE);
    let cols = ["run", "set", "auroc", "aupr", "fpr@0.95", "acc@fpr0", "accuracy", "config_digest"];
    let mut csv = cols.join(",") + "\n";
    for r in &rows {
        let cells: Vec<String> = cols
            .iter()
            .map(|c| match &r[*c] {
                Value::String(s) => s.clone(),
                Value::Null => String::new(),
                other => other.to_string(),
            })
            .collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    fs::write(&csv_path, csv).at(&csv_path)?;
    let mut body = Map::new();
    body.insert("rows".into(), Value::Array(rows));
    Ok(Outcome::ok(vec![ctx.write_report(REPORT_JSON_FILE, body)?, csv_path]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_is_bottom_third_by_count() {
        assert_eq!(tail_classes(&[1000, 599, 359, 215, 129, 77, 46, 28, 17, 10]), vec![7, 8, 9]);
        assert_eq!(tail_classes(&[5, 5, 5]), vec![2]);
        assert!(tail_classes(&[5, 1]).is_empty());
    }

    #[test]
    fn classification_counts() {
        let c = classification(&[0, 1, 1, 2, 2, 0], &[0, 1, 0, 2, 2, 2], 3, vec![2]);
        assert_eq!(c.accuracy, 4.0 / 6.0);
        assert_eq!(c.per_class, vec![Some(0.5), Some(1.0), Some(2.0 / 3.0)]);
        assert_eq!(c.tail_accuracy, Some(2.0 / 3.0));
    }

    #[test]
    fn ablation_zeroes_weights_and_drops_unused_synthesis() {
        let mut cfg = TrainConfig::<f64>::default();
        Ablation::TLA_ONLY.apply(&mut cfg);
        assert_eq!((cfg.weights.dgs_weight, cfg.weights.alpha, cfg.weights.beta), (0.0, 1.0, 0.0));
        assert_eq!(cfg.outliers_per_class, 0);
        let mut cfg = TrainConfig::<f64>::default();
        Ablation::NO_TLA.apply(&mut cfg);
        assert_eq!(cfg.weights.alpha, 0.0);
        assert!(cfg.outliers_per_class > 0);
    }

    #[test]
    fn component_names_round_trip() {
        for c in Component::ALL {
            assert_eq!(parse_component(c.name()).unwrap(), c);
        }
        assert_eq!(parse_component("nope").unwrap_err().exit_code(), 2);
    }
}
