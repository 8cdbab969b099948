use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CampaignConfig, CampaignInputs, CampaignMode, FaultBudget};
use super::report::*;
use crate::axmult::{BitSuppressorConfig, MultiplierLut};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::faults::{apply_weight_fault, sample_single_faults, FaultDescriptor};
use crate::metrics::{
    bitflip_ratio, classify_fault, inf_float, max_difference_slices, normalized_error_slices, propagation_depth,
    psnr_slices, ssim_slices, MetricRecord, SsimConstants,
};
use crate::qnn::{forward, forward_from, ExecPath, LayerTrace, MultPlan, NetworkModel, Tap, Taps};
use crate::seed;

/// Fault-free traces of every dataset image.
#[derive(Debug, Clone)]
pub struct GoldenRun {
    pub path: ExecPath,
    pub traces: Vec<LayerTrace>,
    pub accuracy: f64,
    pub seconds: f64,
}

impl GoldenRun {
    pub fn predictions(&self) -> impl Iterator<Item = usize> + '_ {
        self.traces.iter().map(|t| t.prediction)
    }
}

pub fn run_golden(model: &NetworkModel, dataset: &Dataset, path: ExecPath) -> Result<GoldenRun> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.check_labels(model.num_classes)?;
    let t0 = Instant::now();
    let traces = dataset
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            forward(model, img, path, &MultPlan::exact(), &Taps::none()).map_err(|e| match e {
                Error::Shape(m) => Error::Shape(format!("{} image {i}: {m}", dataset.name)),
                e => e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = traces
        .iter()
        .zip(&dataset.labels)
        .filter(|(t, &l)| t.prediction == l)
        .count();
    Ok(GoldenRun {
        path,
        accuracy: correct as f64 / dataset.len() as f64,
        traces,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Runs `f` on a pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_fi_campaign(cfg: &CampaignConfig, inputs: &CampaignInputs) -> Result<CampaignReport> {
    if !cfg.mode.is_fi() {
        return Err(Error::Config(format!(
            "{} is not a fault-injection mode",
            cfg.mode.tag()
        )));
    }
    run_campaign(cfg, inputs, None)
}

pub fn run_axc_campaign(cfg: &CampaignConfig, inputs: &CampaignInputs) -> Result<CampaignReport> {
    if cfg.mode.is_fi() {
        return Err(Error::Config(format!(
            "{} is not an approximate-computing mode",
            cfg.mode.tag()
        )));
    }
    run_campaign(cfg, inputs, None)
}

/// Runs any campaign mode. A precomputed `golden` run on the mode's path
/// can be passed to avoid recomputing it.
pub fn run_campaign(
    cfg: &CampaignConfig,
    inputs: &CampaignInputs,
    golden: Option<&GoldenRun>,
) -> Result<CampaignReport> {
    let model = &inputs.model;
    let dataset = &inputs.dataset;
    cfg.validate(model)?;
    let path = cfg.mode.path();
    let owned;
    let golden = match golden {
        Some(g) if g.path == path && g.traces.len() == dataset.len() => g,
        Some(_) => {
            return Err(Error::Config(
                "golden run does not match the campaign path or dataset".into(),
            ))
        }
        None => {
            owned = run_golden(model, dataset, path)?;
            &owned
        }
    };

    let t0 = Instant::now();
    let perturbation = Perturbation::new(cfg)?;
    let per_group = cfg.fault_count(model)?;
    let items = work_items(cfg, model, dataset.len(), per_group)?;
    let ctx = Evaluator {
        model,
        dataset,
        golden,
        path,
        compromised: cfg.compromised_layer,
        measured: cfg.measured_layer(model),
        eps: cfg.eps(),
        perturbation,
    };

    let checkpoint = cfg
        .output_dir
        .as_deref()
        .map(|dir| Checkpoint::open(dir, cfg, dataset, &items))
        .transpose()?;
    let mut done: Vec<ItemResult> = checkpoint.as_ref().map(|c| c.done.clone()).unwrap_or_default();
    let done_ids: std::collections::HashSet<u64> = done.iter().map(|r| r.id).collect();
    let todo: Vec<&WorkItem> = items.iter().filter(|it| !done_ids.contains(&it.id)).collect();

    let mut writer = checkpoint.map(|c| c.writer);
    for chunk in todo.chunks(CHUNK_ITEMS) {
        let results = ctx.run_chunk(chunk)?;
        if let Some(w) = writer.as_mut() {
            for r in &results {
                let line = serde_json::to_string(r).map_err(|e| Error::json("checkpoint", e))?;
                writeln!(w.1, "{line}").map_err(|e| Error::io(&w.0, e))?;
            }
            w.1.flush().map_err(|e| Error::io(&w.0, e))?;
        }
        done.extend(results);
    }
    done.sort_by_key(|r| r.id);

    let campaign_seconds = t0.elapsed().as_secs_f64();
    let mut report = ctx.reduce(cfg, per_group, &done);
    report.runtime = Some(RuntimeStats {
        golden_seconds: golden.seconds,
        campaign_seconds,
        records_per_second: report.records.len() as f64 / campaign_seconds.max(1e-9),
        workers: rayon::current_num_threads(),
    });
    Ok(report)
}

const CHUNK_ITEMS: usize = 64;

/// One fault (or repetition, or AxC mode) and the images it is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WorkItem {
    id: u64,
    fault: Option<FaultDescriptor>,
    images: Vec<usize>,
}

fn work_items(cfg: &CampaignConfig, model: &NetworkModel, images: usize, n: u64) -> Result<Vec<WorkItem>> {
    let c = cfg.compromised_layer;
    let seed = cfg.master_seed;
    let all: Vec<usize> = (0..images).collect();
    let per_image = matches!(cfg.faults, Some(FaultBudget::PerImage { .. }));
    Ok(match &cfg.mode {
        CampaignMode::FiSingle { site } if per_image => {
            let mut items = Vec::new();
            for i in 0..images {
                let faults = sample_single_faults(model, *site, Some(&[c]), n, seed::derive(seed, &[i as u64]))?;
                items.extend(faults.into_iter().enumerate().map(|(k, f)| WorkItem {
                    id: i as u64 * n + k as u64,
                    fault: Some(f),
                    images: vec![i],
                }));
            }
            items
        }
        CampaignMode::FiSingle { site } => sample_single_faults(model, *site, Some(&[c]), n, seed)?
            .into_iter()
            .enumerate()
            .map(|(k, f)| WorkItem {
                id: k as u64,
                fault: Some(f),
                images: all.clone(),
            })
            .collect(),
        CampaignMode::FiRate { site, rate } if per_image => (0..images)
            .flat_map(|i| {
                (0..n).map(move |k| WorkItem {
                    id: i as u64 * n + k,
                    fault: Some(FaultDescriptor::rate(
                        *site,
                        c,
                        *rate,
                        seed::derive(seed, &[i as u64, k]),
                    )),
                    images: vec![i],
                })
            })
            .collect(),
        CampaignMode::FiRate { site, rate } => (0..n)
            .map(|k| WorkItem {
                id: k,
                fault: Some(FaultDescriptor::rate(*site, c, *rate, seed::derive(seed, &[k]))),
                images: all.clone(),
            })
            .collect(),
        _ => vec![WorkItem {
            id: 0,
            fault: None,
            images: all,
        }],
    })
}

/// Stream key separating suppressor randomness from fault sampling.
const SUPPRESSOR_STREAM: u64 = 0x5355_5050;

/// What an AxC mode does to the compromised layer.
#[derive(Clone)]
struct Perturbation {
    lut: Option<Arc<MultiplierLut>>,
    suppressor: Option<BitSuppressorConfig>,
}

impl Perturbation {
    fn new(cfg: &CampaignConfig) -> Result<Self> {
        let base = Path::new(".");
        // The suppressor seed in the config is combined with the master
        // seed so a single `--seed` controls every random decision.
        let seeded = |s: &BitSuppressorConfig| BitSuppressorConfig {
            seed: seed::derive(cfg.master_seed, &[SUPPRESSOR_STREAM, s.seed]),
            ..s.clone()
        };
        Ok(match &cfg.mode {
            CampaignMode::AxMult { lut } => Self {
                lut: Some(lut.resolve(base)?),
                suppressor: None,
            },
            CampaignMode::AxMultPlus { lut, suppressor } => Self {
                lut: Some(lut.resolve(base)?),
                suppressor: Some(seeded(suppressor)),
            },
            CampaignMode::SuppressorOnly { suppressor } => Self {
                lut: None,
                suppressor: Some(seeded(suppressor)),
            },
            _ => Self {
                lut: None,
                suppressor: None,
            },
        })
    }
}

/// Partial aggregates of one work item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ItemAccum {
    #[serde(with = "inf_float::seq")]
    sum_mean_ne: Vec<f64>,
    #[serde(with = "inf_float::seq")]
    max_ne: Vec<f64>,
    changed: Vec<u64>,
    #[serde(with = "inf_float::seq")]
    sum_bitflip: Vec<f64>,
    degenerate: Vec<u64>,
    #[serde(with = "inf_float::seq")]
    neuron_peak: Vec<f64>,
}

impl ItemAccum {
    fn new(layers: usize, neurons: usize) -> Self {
        Self {
            sum_mean_ne: vec![0.0; layers],
            max_ne: vec![0.0; layers],
            changed: vec![0; layers],
            sum_bitflip: vec![0.0; layers],
            degenerate: vec![0; layers],
            neuron_peak: vec![0.0; neurons],
        }
    }

    fn merge(&mut self, o: &ItemAccum) {
        for i in 0..self.sum_mean_ne.len() {
            self.sum_mean_ne[i] += o.sum_mean_ne[i];
            self.max_ne[i] = self.max_ne[i].max(o.max_ne[i]);
            self.changed[i] += o.changed[i];
            self.sum_bitflip[i] += o.sum_bitflip[i];
            self.degenerate[i] += o.degenerate[i];
        }
        for (a, b) in self.neuron_peak.iter_mut().zip(&o.neuron_peak) {
            *a = a.max(*b);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ItemResult {
    id: u64,
    records: Vec<FaultRecord>,
    accum: ItemAccum,
}

struct Evaluator<'a> {
    model: &'a NetworkModel,
    dataset: &'a Dataset,
    golden: &'a GoldenRun,
    path: ExecPath,
    compromised: usize,
    measured: usize,
    eps: f64,
    perturbation: Perturbation,
}

impl Evaluator<'_> {
    fn tracked_layers(&self) -> usize {
        self.model.layers.len()
    }

    fn measured_neurons(&self) -> usize {
        self.golden.traces[0].ofms[self.measured].numel()
    }

    fn run_chunk(&self, chunk: &[&WorkItem]) -> Result<Vec<ItemResult>> {
        let models = chunk
            .par_iter()
            .map(|it| match it.fault {
                Some(f) if f.site.is_weight() => apply_weight_fault(self.model, &f).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(usize, usize)> = chunk
            .iter()
            .enumerate()
            .flat_map(|(k, it)| it.images.iter().map(move |&i| (k, i)))
            .collect();
        let evaluated = pairs
            .par_iter()
            .map(|&(k, image)| {
                let model = models[k].as_ref().unwrap_or(self.model);
                self.evaluate(chunk[k], model, image)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut out: Vec<ItemResult> = chunk
            .iter()
            .map(|it| ItemResult {
                id: it.id,
                records: Vec::with_capacity(it.images.len()),
                accum: ItemAccum::new(self.tracked_layers(), self.measured_neurons()),
            })
            .collect();
        for (&(k, _), (record, accum)) in pairs.iter().zip(evaluated) {
            out[k].records.push(record);
            out[k].accum.merge(&accum);
        }
        Ok(out)
    }

    fn evaluate(&self, item: &WorkItem, model: &NetworkModel, image: usize) -> Result<(FaultRecord, ItemAccum)> {
        let c = self.compromised;
        let gt = &self.golden.traces[image];
        let input = &self.dataset.images[image];

        let mut plan = MultPlan::exact();
        let mut taps = Taps::none();
        if let Some(lut) = &self.perturbation.lut {
            plan = plan.with_layer(c, lut.clone());
        }
        if let Some(cfg) = &self.perturbation.suppressor {
            taps = taps.with(
                c,
                Tap::Suppress {
                    cfg: cfg.clone(),
                    stream: image as u64,
                },
            );
        }
        if let Some(f) = item.fault.filter(|f| !f.site.is_weight()) {
            taps = taps.with(c, f.ofm_tap(image as u64)?);
        }
        let ft = forward_from(model, gt, c, input, self.path, &plan, &taps)?;

        let class = classify_fault(&gt.logits, &ft.logits, self.eps)?;
        let prop = propagation_depth(gt, &ft, c, self.eps)?;
        let g = gt.ofms[c].to_tensor();
        let f = ft.ofms[c].to_tensor();
        let metrics = MetricRecord {
            max_difference: max_difference_slices(&g.data, &f.data),
            psnr_db: psnr_slices(&g.data, &f.data),
            ssim: if g.data.len() >= 2 {
                ssim_slices(&g.data, &f.data, &SsimConstants::for_golden(&g.data))
            } else {
                f64::NAN
            },
        };

        let mut acc = ItemAccum::new(self.tracked_layers(), self.measured_neurons());
        for l in 0..self.model.layers.len() {
            let (go, fo) = (&gt.ofms[l], &ft.ofms[l]);
            if go.bit_eq(fo) {
                continue;
            }
            if let (Some(gq), Some(fq)) = (go.as_quant(), fo.as_quant()) {
                acc.sum_bitflip[l] = bitflip_ratio(gq, fq)?;
            }
            acc.changed[l] = prop.changed[l] as u64;
            let (gl, fl) = (go.to_tensor(), fo.to_tensor());
            let ne = normalized_error_slices(&gl.data, &fl.data);
            acc.degenerate[l] = ne.degenerate as u64;
            acc.sum_mean_ne[l] = ne.mean;
            acc.max_ne[l] = ne.errors.iter().copied().fold(0.0, f64::max);
            if l == self.measured {
                acc.neuron_peak = ne.errors;
            }
        }

        let record = FaultRecord {
            fault_id: item.id,
            image,
            label: self.dataset.labels[image],
            prediction: ft.prediction,
            fault: item.fault,
            class,
            metrics,
            depth: prop.depth,
        };
        Ok((record, acc))
    }

    fn reduce(&self, cfg: &CampaignConfig, per_group: u64, done: &[ItemResult]) -> CampaignReport {
        let mut total = ItemAccum::new(self.tracked_layers(), self.measured_neurons());
        let mut records = Vec::new();
        for r in done {
            total.merge(&r.accum);
            records.extend(r.records.iter().cloned());
        }
        let n = records.len() as u64;
        let mut class_counts = ClassCounts::default();
        for r in &records {
            class_counts.add(r.class);
        }
        let mode_accuracy = if n == 0 {
            self.golden.accuracy
        } else {
            records.iter().filter(|r| r.prediction == r.label).count() as f64 / n as f64
        };
        let denom = n.max(1) as f64;
        let layers = (0..self.model.layers.len())
            .map(|l| LayerSummary {
                layer: l,
                name: self.model.layers[l].name(l),
                numel: self.golden.traces[0].ofms[l].numel(),
                mean_normalized_error: total.sum_mean_ne[l] / denom,
                max_normalized_error: total.max_ne[l],
                changed_fraction: total.changed[l] as f64 / denom,
                mean_bitflip_ratio: (self.path == ExecPath::Quant).then(|| total.sum_bitflip[l] / denom),
                degenerate_records: total.degenerate[l],
            })
            .collect();
        CampaignReport {
            schema: REPORT_SCHEMA.into(),
            schema_version: REPORT_VERSION,
            config: cfg.clone(),
            mode_tag: cfg.mode.tag(),
            path: self.path,
            model: ModelInfo {
                name: self.model.name.clone(),
                layers: self.model.layers.iter().enumerate().map(|(i, l)| l.name(i)).collect(),
            },
            dataset: DatasetInfo {
                name: self.dataset.name.clone(),
                checksum: self.dataset.checksum.clone(),
                images: self.dataset.len(),
                note: DATASET_NOTE.into(),
            },
            compromised_layer: self.compromised,
            measured_layer: self.measured,
            eps: self.eps,
            faults_per_group: per_group,
            golden_accuracy: self.golden.accuracy,
            mode_accuracy,
            accuracy_drop: self.golden.accuracy - mode_accuracy,
            class_counts,
            masked_depth: MaskedDepthStats::from_records(&records),
            layers,
            neuron_peak_error: total.neuron_peak,
            records,
            runtime: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    mode_tag: String,
    master_seed: u64,
    dataset_checksum: String,
    items: Vec<WorkItem>,
}

struct Checkpoint {
    done: Vec<ItemResult>,
    writer: (PathBuf, File),
}

impl Checkpoint {
    const FAULTS: &'static str = "faults.json";
    const LOG: &'static str = "checkpoint.jsonl";

    /// Opens (or starts) the resume state in `dir`. Completed items are
    /// read back; a torn final line from an interrupted write is dropped.
    fn open(dir: &Path, cfg: &CampaignConfig, dataset: &Dataset, items: &[WorkItem]) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = CheckpointHeader {
            mode_tag: cfg.mode.tag(),
            master_seed: cfg.master_seed,
            dataset_checksum: dataset.checksum.clone(),
            items: items.to_vec(),
        };
        let faults_path = dir.join(Self::FAULTS);
        let log_path = dir.join(Self::LOG);
        let mut done = Vec::new();
        if faults_path.exists() {
            let raw = std::fs::read_to_string(&faults_path).map_err(|e| Error::io(&faults_path, e))?;
            let old: CheckpointHeader =
                serde_json::from_str(&raw).map_err(|e| Error::json(faults_path.display().to_string(), e))?;
            if old != header {
                return Err(Error::Config(format!(
                    "{} belongs to a different campaign; use a fresh output directory",
                    faults_path.display()
                )));
            }
            if log_path.exists() {
                let f = File::open(&log_path).map_err(|e| Error::io(&log_path, e))?;
                let mut valid_len = 0u64;
                for line in BufReader::new(f).lines() {
                    let line = line.map_err(|e| Error::io(&log_path, e))?;
                    match serde_json::from_str::<ItemResult>(&line) {
                        Ok(r) => {
                            valid_len += line.len() as u64 + 1;
                            done.push(r);
                        }
                        Err(_) => break,
                    }
                }
                let f = OpenOptions::new()
                    .write(true)
                    .open(&log_path)
                    .map_err(|e| Error::io(&log_path, e))?;
                f.set_len(valid_len).map_err(|e| Error::io(&log_path, e))?;
            }
            let known: std::collections::HashSet<u64> = items.iter().map(|i| i.id).collect();
            done.retain(|r| known.contains(&r.id));
            done.sort_by_key(|r| r.id);
            done.dedup_by_key(|r| r.id);
        } else {
            let json = serde_json::to_string(&header).map_err(|e| Error::json("fault list", e))?;
            std::fs::write(&faults_path, json).map_err(|e| Error::io(&faults_path, e))?;
            let _ = std::fs::remove_file(&log_path);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            done,
            writer: (log_path, file),
        })
    }
}
