//! Command implementations behind the `amtl` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use amtl_core::eval::{compare, dim_profile, Candidate, DEFAULT_GROUPS};
use amtl_core::storage::compress;
use amtl_core::{Clock, CtrModel, FieldConfig, ModelConfig, Policy, TrainingExample, WarmParts};

use crate::codec::{read_checkpoint, write_checkpoint, write_store};
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::report;
use crate::synth::{generate, SynthConfig};

pub const DEFAULT_DIM: usize = 16;
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "epochs.tsv";
pub const TIMING_FILE: &str = "timing.tsv";

/// Wall clock measured from process-local start.
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Config file plus flag overrides; flags win.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub policy: Option<Policy>,
    pub dim: Option<usize>,
    pub temperature: Option<f64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
}

/// Builds the model config for `data`. Fields missing from the config file
/// are taken from the dataset header with dimension 16 and the AMTL policy.
pub fn resolve_config(data: &Dataset, o: &Overrides) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    if let Some(path) = &o.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg.apply_text(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    if cfg.fields.is_empty() {
        cfg.fields = data
            .header
            .fields
            .iter()
            .map(|f| FieldConfig::new(&f.name, f.vocab_size, DEFAULT_DIM, Policy::Amtl))
            .collect();
    }
    if let Some(p) = o.policy {
        cfg.set_policy(p);
    }
    if let Some(d) = o.dim {
        cfg.set_dim(d);
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(t) = o.temperature {
        cfg.temperature = t;
    }
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.lr = lr;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    check_fields(&cfg, data)?;
    Ok(cfg)
}

fn check_fields(cfg: &ModelConfig, data: &Dataset) -> Result<()> {
    let declared: Vec<(&str, usize)> = data.header.fields.iter().map(|f| (f.name.as_str(), f.vocab_size)).collect();
    let configured: Vec<(&str, usize)> = cfg.fields.iter().map(|f| (f.name.as_str(), f.vocab_size)).collect();
    if declared != configured {
        return Err(CliError::Usage(format!("config fields {configured:?} do not match dataset fields {declared:?}")));
    }
    Ok(())
}

/// Dataset split plus the training-split statistics every command shares.
pub struct Prepared {
    pub data: Dataset,
    pub train: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
}

pub fn prepare(path: &Path) -> Result<Prepared> {
    let data = Dataset::read(path)?;
    let (train, test) = data.split();
    Ok(Prepared { data, train, test })
}

impl Prepared {
    pub fn stats(&self) -> Result<Vec<amtl_core::FrequencyStats>> {
        self.data.stats_of(&self.train)
    }

    pub fn load_model(&self, checkpoint: &Path) -> Result<CtrModel> {
        let ckpt = read_checkpoint(checkpoint)?;
        check_fields(&ckpt.config, &self.data)?;
        Ok(CtrModel::from_checkpoint(&ckpt, self.stats()?)?)
    }
}

pub fn gen_data(cfg: &SynthConfig, out: &Path) -> Result<()> {
    let (data, _) = generate(cfg)?;
    data.write(out)
}

/// Trains a model and writes the checkpoint, loss log and timing log into `out`.
pub fn train(data: &Path, out: &Path, o: &Overrides, warm: Option<(&Path, WarmParts)>) -> Result<CtrModel> {
    let prepared = prepare(data)?;
    let cfg = resolve_config(&prepared.data, o)?;
    let mut model = CtrModel::new(cfg, prepared.stats()?)?;
    if let Some((path, parts)) = warm {
        model.warm_start(&read_checkpoint(path)?, parts)?;
    }
    let epochs = model.fit(&prepared.train, &SystemClock::new())?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_checkpoint(&out.join(CHECKPOINT_FILE), &model.to_checkpoint())?;
    write_text(&out.join(LOSS_FILE), &report::loss_log(&epochs))?;
    write_text(&out.join(TIMING_FILE), &report::time_log(&epochs))?;
    Ok(model)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Mean of the `seconds` column of a timing log next to `checkpoint`, if any.
fn sec_per_epoch(checkpoint: &Path) -> Option<f64> {
    let text = fs::read_to_string(checkpoint.with_file_name(TIMING_FILE)).ok()?;
    let secs: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split('\t').nth(1)?.parse().ok()).collect();
    (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64)
}

fn label_of(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    match (stem, path.parent().and_then(Path::file_name).and_then(|s| s.to_str())) {
        ("model", Some(dir)) => dir.to_string(),
        _ => stem.to_string(),
    }
}

/// Compares checkpoints on the test split; writes `out` and, when timing
/// logs exist, a `.timing.tsv` sibling.
pub fn evaluate(data: &Path, checkpoints: &[PathBuf], out: &Path) -> Result<String> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one --checkpoint".into()));
    }
    let prepared = prepare(data)?;
    let models = checkpoints.iter().map(|c| prepared.load_model(c)).collect::<Result<Vec<_>>>()?;
    let candidates: Vec<Candidate<'_>> = checkpoints
        .iter()
        .zip(&models)
        .map(|(path, model)| Candidate { label: label_of(path), model, sec_per_epoch: sec_per_epoch(path) })
        .collect();
    let rows = compare(&candidates, &prepared.test)?;
    let tsv = report::compare_tsv(&rows);
    write_text(out, &tsv)?;
    if rows.iter().any(|r| r.sec_per_epoch.is_some()) {
        write_text(&out.with_extension("timing.tsv"), &report::timing_tsv(&rows))?;
    }
    Ok(tsv)
}

/// Writes one `<field>.amts` store per field into `out`; returns a summary.
pub fn compress_model(data: &Path, checkpoint: &Path, out: &Path) -> Result<String> {
    let prepared = prepare(data)?;
    let model = prepared.load_model(checkpoint)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut summary = String::from("field\tavg_dim\tratio\tbytes\n");
    for (fi, f) in model.config().fields.iter().enumerate() {
        let selections: BTreeMap<usize, usize> = model.field_selections(fi)?.into_iter().enumerate().collect();
        let store = compress(model.table(fi), &selections)?;
        let bytes = crate::codec::encode_store(&store);
        write_store(&out.join(format!("{}.amts", f.name)), &store)?;
        summary.push_str(&format!(
            "{}\t{:.4}\t{:.2}%\t{}\n",
            f.name,
            store.avg_dim()?,
            store.memory_ratio()? * 100.0,
            bytes.len()
        ));
    }
    Ok(summary)
}

/// Frequency-group dimension profile of every adaptive field.
pub fn analyze(data: &Path, checkpoint: &Path, out: &Path, groups: Option<usize>) -> Result<String> {
    let prepared = prepare(data)?;
    let model = prepared.load_model(checkpoint)?;
    let profiles = (0..model.config().fields.len())
        .filter(|&fi| model.config().fields[fi].policy.is_adaptive())
        .map(|fi| dim_profile(&model, fi, groups.unwrap_or(DEFAULT_GROUPS)))
        .collect::<amtl_core::Result<Vec<_>>>()?;
    if profiles.is_empty() {
        return Err(CliError::Usage("checkpoint has no adaptive field to analyze".into()));
    }
    let csv = report::profile_csv(&profiles);
    write_text(out, &csv)?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_data(dir: &Path) -> PathBuf {
        let path = dir.join("data.txt");
        let cfg = SynthConfig {
            fields: vec![amtl_core::FieldVocab::new("user", 30), amtl_core::FieldVocab::new("item", 20)],
            n_examples: 600,
            seed: 5,
            ..SynthConfig::default()
        };
        gen_data(&cfg, &path).unwrap();
        path
    }

    #[test]
    fn zero_epochs_saves_the_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(dir.path());
        let o = Overrides { epochs: Some(0), dim: Some(4), ..Overrides::default() };
        let model = train(&data, &dir.path().join("run"), &o, None).unwrap();
        let prepared = prepare(&data).unwrap();
        let fresh = CtrModel::new(model.config().clone(), prepared.stats().unwrap()).unwrap();
        assert_eq!(fresh.sections(), model.sections());
        let loaded = prepared.load_model(&dir.path().join("run").join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(loaded.sections(), model.sections());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(dir.path());
        let cfg_path = dir.path().join("run.cfg");
        fs::write(&cfg_path, "lr=0.5\nepochs=7\ntemperature=0.3\n").unwrap();
        let prepared = prepare(&data).unwrap();
        let o = Overrides { config: Some(cfg_path), epochs: Some(2), policy: Some(Policy::Mde), ..Overrides::default() };
        let cfg = resolve_config(&prepared.data, &o).unwrap();
        assert_eq!((cfg.lr, cfg.epochs, cfg.temperature), (0.5, 2, 0.3));
        assert!(cfg.fields.iter().all(|f| f.policy == Policy::Mde && f.dim == DEFAULT_DIM));
        let bad = Overrides { config: Some(dir.path().join("missing.cfg")), ..Overrides::default() };
        assert!(resolve_config(&prepared.data, &bad).is_err());
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(dir.path());
        let cfg_path = dir.path().join("run.cfg");
        fs::write(&cfg_path, "fields=user:30:4:fbe\n").unwrap();
        let prepared = prepare(&data).unwrap();
        let err = resolve_config(&prepared.data, &Overrides { config: Some(cfg_path), ..Overrides::default() });
        assert!(matches!(err, Err(CliError::Usage(_))));
    }

    #[test]
    fn fbe_report_reads_full_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(dir.path());
        let o = Overrides { epochs: Some(1), policy: Some(Policy::Fbe), dim: Some(4), ..Overrides::default() };
        train(&data, &dir.path().join("fbe"), &o, None).unwrap();
        let ckpt = dir.path().join("fbe").join(CHECKPOINT_FILE);
        let tsv = evaluate(&data, &[ckpt.clone()], &dir.path().join("report.tsv")).unwrap();
        let row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
        assert_eq!((row[0], row[1], row[4]), ("fbe", "fbe", "100.00%"));
        assert!(dir.path().join("report.timing.tsv").exists());
        assert!(analyze(&data, &ckpt, &dir.path().join("p.csv"), None).is_err());
        let summary = compress_model(&data, &ckpt, &dir.path().join("store")).unwrap();
        assert!(summary.lines().skip(1).all(|l| l.contains("100.00%")));
    }
}
