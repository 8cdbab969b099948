//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, non-zero exit
//! status if any criterion fails. Runs on the checked-in MNIST fixtures and
//! the trained fixture model.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use axfi_core::campaign::{
    compare_campaigns, run_campaign, run_golden, threshold_for_top_k, CampaignMode, CampaignReport, FaultBudget,
    GoldenRun, LutRef,
};
use axfi_core::faults::{apply_weight_fault, required_sample_size, FaultPopulation};
use axfi_core::metrics::{max_difference, psnr, ssim};
use axfi_core::qnn::{forward, Taps};
use axfi_core::stats::{median, spearman};
use axfi_core::{
    characterize, BitSuppressorConfig, ExecPath, FaultClass, FaultSite, FixtureKind, MultPlan, MultiplierLut,
    NetworkModel, SsimConstants, Tensor,
};

type Check = Result<Outcome, String>;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn t(v: &[f32]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).unwrap()
}

/// Single-bit float weight faults over every weighted layer, `per_image`
/// in total, split across layers in proportion to their bit counts.
struct FloatFiCampaign {
    golden: GoldenRun,
    reports: Vec<CampaignReport>,
}

impl FloatFiCampaign {
    const IMAGES: usize = 20;
    const PER_IMAGE: u64 = 100;

    fn run(model: &NetworkModel) -> Result<Self, String> {
        let inputs = common::inputs(Self::IMAGES, 7);
        let golden = run_golden(model, &inputs.dataset, ExecPath::Float).map_err(err)?;
        let layers: Vec<usize> = model.weighted_layers().collect();
        let bits: Vec<u64> = layers
            .iter()
            .map(|&l| FaultPopulation::new(model, FaultSite::WeightFloat32, Some(&[l])).map(|p| p.total_bits()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let shares = largest_remainder(&bits, Self::PER_IMAGE);
        let mut reports = Vec::new();
        for (&layer, &count) in layers.iter().zip(&shares) {
            if count == 0 {
                continue;
            }
            let mut cfg = common::config(
                CampaignMode::FiSingle {
                    site: FaultSite::WeightFloat32,
                },
                layer,
                Some(FaultBudget::PerImage { count }),
            );
            cfg.dataset.subset = Some(Self::IMAGES);
            cfg.dataset.subset_seed = 7;
            cfg.eps = Some(0.0);
            reports.push(run_campaign(&cfg, &inputs, Some(&golden)).map_err(err)?);
        }
        Ok(Self { golden, reports })
    }

    fn records(&self) -> impl Iterator<Item = (&CampaignReport, &axfi_core::campaign::FaultRecord)> {
        self.reports.iter().flat_map(|r| r.records.iter().map(move |x| (r, x)))
    }
}

fn largest_remainder(weights: &[u64], total: u64) -> Vec<u64> {
    let sum: u64 = weights.iter().sum();
    let mut out: Vec<u64> = weights.iter().map(|&w| w * total / sum).collect();
    let mut rem: Vec<(u64, usize)> = weights.iter().enumerate().map(|(i, &w)| (w * total % sum, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - out.iter().sum::<u64>();
    for &(_, i) in rem.iter().take(missing as usize) {
        out[i] += 1;
    }
    out
}

fn criterion_1(model: &NetworkModel) -> Check {
    let data = common::test_set().slice(0..100);
    let start = Instant::now();
    let lut_plan = MultPlan::uniform(model, MultiplierLut::exact().into());
    let native = MultPlan::exact();
    let taps = Taps::none();
    let mut mismatched = 0;
    for img in &data.images {
        let a = forward(model, img, ExecPath::Quant, &native, &taps).map_err(err)?;
        let b = forward(model, img, ExecPath::Quant, &lut_plan, &taps).map_err(err)?;
        if !a.bit_eq(&b) || a.logits.iter().zip(&b.logits).any(|(x, y)| x.to_bits() != y.to_bits()) {
            mismatched += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(verdict(
        mismatched == 0 && secs < 30.0,
        format!("{} images, {mismatched} traces differ, {secs:.2} s", data.len()),
    ))
}

/// Brute-force error-distance statistics, computed independently of
/// `characterize`: two-pass mean and variance in f64.
fn ed_oracle(lut: &MultiplierLut) -> (f64, f64, f64) {
    let eds: Vec<f64> = (-128i32..=127)
        .flat_map(|a| (-128i32..=127).map(move |b| (a, b)))
        .map(|(a, b)| (lut.multiply(a as i8, b as i8) - a * b) as f64)
        .collect();
    let n = eds.len() as f64;
    let mae = eds.iter().map(|e| e.abs()).sum::<f64>() / n;
    let mean = eds.iter().sum::<f64>() / n;
    let var = eds.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let rms = (eds.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    (mae, var, rms)
}

fn criterion_2() -> Check {
    let exact = characterize(&MultiplierLut::exact());
    let zeros = [
        exact.mae,
        exact.mae_pct,
        exact.awce,
        exact.awce_pct,
        exact.mre_pct,
        exact.mean_ed,
        exact.var_ed,
        exact.rms_ed,
    ]
    .iter()
    .all(|&v| v == 0.0)
        && exact.pairs == 65536;
    let lut = MultiplierLut::fixture(FixtureKind::ProductOffset(1)).map_err(err)?;
    let r = characterize(&lut);
    let (mae, var, rms) = ed_oracle(&lut);
    let oracle_ok = (r.mae - mae).abs() < 1e-12 && (r.var_ed - var).abs() < 1e-12 && (r.rms_ed - rms).abs() < 1e-12;
    let bounds_ok = (r.mae - 1.0).abs() <= 1e-3 && r.var_ed <= 1e-3 && (r.rms_ed - 1.0).abs() <= 1e-3;
    Ok(verdict(
        zeros && oracle_ok && bounds_ok,
        format!(
            "exact all zero: {zeros}; offset(+1) MAE {:.6} Var-ED {:.3e} RMS-ED {:.6}, brute force agrees: {oracle_ok}",
            r.mae, r.var_ed, r.rms_ed
        ),
    ))
}

fn criterion_3() -> Check {
    let p = psnr(&t(&[4.0, 2.0]), &t(&[0.0, 2.0])).map_err(err)?;
    let g = t(&[0.3, -1.2, 4.5, 2.0, 0.0, 7.25]);
    let same = ssim(&g, &g, &SsimConstants::for_golden(&g.data)).map_err(err)?;
    let (x, y) = ([1.0f64, 2.0, 3.0, 4.0], [4.0f64, 3.0, 2.0, 1.0]);
    let (c1, c2) = (1e-4, 1e-4);
    let mx = x.iter().sum::<f64>() / 4.0;
    let my = y.iter().sum::<f64>() / 4.0;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / 4.0;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / 4.0;
    let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / 4.0;
    let oracle = (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    let s = ssim(
        &t(&[1.0, 2.0, 3.0, 4.0]),
        &t(&[4.0, 3.0, 2.0, 1.0]),
        &SsimConstants::new(c1, c2),
    )
    .map_err(err)?;
    let ok = (p - 3.0103).abs() <= 1e-4
        && (p - 10.0 * 2f64.log10()).abs() <= 1e-6
        && (same - 1.0).abs() <= 1e-12
        && (s - oracle).abs() <= 1e-9;
    Ok(verdict(
        ok,
        format!("psnr {p:.7} dB, ssim(g,g) {same:.15}, ssim reversed {s:.12} vs oracle {oracle:.12}"),
    ))
}

fn criterion_4(model: &NetworkModel, fi: &FloatFiCampaign) -> Check {
    let inputs = common::inputs(FloatFiCampaign::IMAGES, 7);
    let total: usize = fi.reports.iter().map(|r| r.records.len()).sum();
    let counts_ok = fi.reports.iter().all(|r| {
        r.class_counts.total() == r.records.len() as u64
            && FaultClass::ALL.iter().map(|&c| r.class_counts.get(c)).sum::<u64>() == r.records.len() as u64
            && FaultClass::ALL
                .iter()
                .all(|&c| r.class_counts.get(c) == r.records.iter().filter(|x| x.class == c).count() as u64)
    });
    // Replay every fault independently and reclassify it from the logits.
    let (mut misclassified, mut masked, mut masked_deep) = (0usize, 0usize, 0usize);
    let mut max_masked_logit_diff = 0.0f64;
    let plan = MultPlan::exact();
    let taps = Taps::none();
    for (_, rec) in fi.records() {
        let fault = rec.fault.as_ref().ok_or("FI record without a fault")?;
        let faulty = apply_weight_fault(model, fault).map_err(err)?;
        let g = &fi.golden.traces[rec.image];
        let f = forward(
            &faulty,
            &inputs.dataset.images[rec.image],
            ExecPath::Float,
            &plan,
            &taps,
        )
        .map_err(err)?;
        let diff = max_difference(&t(&g.logits), &t(&f.logits)).map_err(err)?;
        let expected = if f.prediction != g.prediction {
            FaultClass::Critical
        } else if diff > 0.0 || g.logits.iter().zip(&f.logits).any(|(a, b)| a.to_bits() != b.to_bits()) {
            FaultClass::NonCritical
        } else {
            FaultClass::Masked
        };
        misclassified += usize::from(expected != rec.class);
        if rec.class == FaultClass::Masked {
            masked += 1;
            max_masked_logit_diff = max_masked_logit_diff.max(diff);
            masked_deep += usize::from(rec.depth > 0);
        }
    }
    Ok(verdict(
        total >= 1000 && counts_ok && misclassified == 0 && max_masked_logit_diff == 0.0 && masked_deep == 0,
        format!(
            "{total} faults, counts consistent: {counts_ok}, {misclassified} misclassified on replay, \
             masked logit max-diff {max_masked_logit_diff}, {masked_deep} of {masked} masked faults with depth > 0"
        ),
    ))
}

fn criterion_5(fi: &FloatFiCampaign) -> Check {
    let mut per_layer = Vec::new();
    let (mut masked, mut shallow) = (0u64, 0u64);
    for r in &fi.reports {
        masked += r.masked_depth.masked;
        shallow += r.masked_depth.depth_le_1;
        per_layer.push(format!(
            "layer {} {}/{}",
            r.compromised_layer, r.masked_depth.depth_le_1, r.masked_depth.masked
        ));
    }
    if masked == 0 {
        return Ok(Outcome::Fail("no masked faults".into()));
    }
    let frac = shallow as f64 / masked as f64;
    Ok(verdict(
        frac >= 0.9,
        format!(
            "{:.2}% of {masked} masked faults have depth <= 1 ({})",
            100.0 * frac,
            per_layer.join(", ")
        ),
    ))
}

fn criterion_6(fi: &FloatFiCampaign) -> Check {
    let pick = |c: FaultClass, f: fn(&axfi_core::MetricRecord) -> f64| -> Vec<f64> {
        fi.records()
            .filter(|(_, x)| x.class == c)
            .map(|(_, x)| f(&x.metrics))
            .collect()
    };
    let ssim_m = median(&pick(FaultClass::Masked, |m| m.ssim));
    let ssim_c = median(&pick(FaultClass::Critical, |m| m.ssim));
    let md_m = median(&pick(FaultClass::Masked, |m| m.max_difference));
    let md_c = median(&pick(FaultClass::Critical, |m| m.max_difference));
    let (Some(ssim_m), Some(ssim_c), Some(md_m), Some(md_c)) = (ssim_m, ssim_c, md_m, md_c) else {
        return Ok(Outcome::Fail("campaign lacks masked or critical faults".into()));
    };
    Ok(verdict(
        ssim_m > ssim_c && md_c > md_m,
        format!("median SSIM masked {ssim_m:.6} vs critical {ssim_c:.6}; median max-diff critical {md_c:.4e} vs masked {md_m:.4e}"),
    ))
}

fn criterion_7() -> Check {
    let n = required_sample_size(1_000_000, 0.01, 0.99, 0.5).map_err(err)?;
    // Closed form evaluated directly with t = 2.576.
    let (big_n, e, tv, p) = (1e6f64, 0.01f64, 2.576f64, 0.5f64);
    let oracle = (big_n / (1.0 + e * e * (big_n - 1.0) / (tv * tv * p * (1.0 - p)))).ceil() as u64;
    let margins = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2];
    let sizes: Vec<u64> = margins
        .iter()
        .map(|&e| required_sample_size(1_000_000, e, 0.99, 0.5))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let monotone = sizes.windows(2).all(|w| w[0] > w[1]);
    Ok(verdict(
        n == oracle && monotone,
        format!("n = {n}, closed-form oracle {oracle}, strictly decreasing in e: {monotone}"),
    ))
}

struct ConvOneRuns {
    fi_weight: CampaignReport,
    fi_ofm: CampaignReport,
    axc_plus: CampaignReport,
}

impl ConvOneRuns {
    fn run() -> Result<Self, String> {
        let inputs = common::inputs(100, 7);
        let golden = run_golden(&inputs.model, &inputs.dataset, ExecPath::Quant).map_err(err)?;
        let run = |mode: CampaignMode, faults: Option<FaultBudget>| {
            let mut cfg = common::config(mode, 0, faults);
            cfg.dataset.subset = Some(100);
            cfg.dataset.subset_seed = 7;
            run_campaign(&cfg, &inputs, Some(&golden)).map_err(err)
        };
        let reps = Some(FaultBudget::Total { count: 5 });
        Ok(Self {
            fi_weight: run(
                CampaignMode::FiRate {
                    site: FaultSite::WeightInt8,
                    rate: 0.10,
                },
                reps,
            )?,
            fi_ofm: run(
                CampaignMode::FiRate {
                    site: FaultSite::OfmInt8,
                    rate: 0.10,
                },
                reps,
            )?,
            axc_plus: run(
                CampaignMode::AxMultPlus {
                    lut: LutRef("operand_truncate(3)".into()),
                    suppressor: BitSuppressorConfig::default(),
                },
                None,
            )?,
        })
    }
}

fn criterion_8(runs: &ConvOneRuns) -> Check {
    let describe = |fi: &CampaignReport| -> Result<(f64, String), String> {
        let mut best = None;
        let mut parts = Vec::new();
        for k in [20, 50, 100] {
            let Some(th) = threshold_for_top_k(&fi.neuron_peak_error, k) else {
                parts.push(format!("top-{k}: tied"));
                continue;
            };
            let c = compare_campaigns(fi, &runs.axc_plus, th).map_err(err)?;
            parts.push(format!(
                "top-{k}: recall {:.3} (axc set {}, jaccard {:.3})",
                c.recall,
                c.candidate.len(),
                c.jaccard
            ));
            if k == 50 {
                best = Some(c.recall);
            }
        }
        Ok((
            best.ok_or("no threshold isolates the top 50 FI neurons")?,
            parts.join("; "),
        ))
    };
    let (recall, weight_detail) = describe(&runs.fi_weight)?;
    let (_, ofm_detail) = describe(&runs.fi_ofm)?;
    Ok(verdict(
        recall >= 0.8,
        format!(
            "layer {} of {} neurons; weight-bit FI reference {weight_detail}; OFM-bit FI reference {ofm_detail}",
            runs.fi_weight.measured_layer,
            runs.fi_weight.neuron_peak_error.len()
        ),
    ))
}

fn criterion_9(runs: &ConvOneRuns) -> Check {
    let r = &runs.fi_ofm;
    let at = r.layers[r.compromised_layer]
        .mean_bitflip_ratio
        .ok_or("no bitflip ratio on the quantized path")?;
    let downstream: Vec<String> = r.layers[r.compromised_layer + 1..]
        .iter()
        .map(|l| format!("{:.2}", l.mean_bitflip_ratio.unwrap_or(0.0)))
        .collect();
    let nonzero = r.layers[r.compromised_layer + 1..]
        .iter()
        .all(|l| l.mean_bitflip_ratio.is_some_and(|v| v > 0.0));
    let plus = runs.axc_plus.layers[0].mean_bitflip_ratio.unwrap_or(f64::NAN);
    Ok(verdict(
        (at - 10.0).abs() <= 2.0 && nonzero,
        format!(
            "compromised layer {at:.3}%, downstream [{}]%, AxMult+ at the same layer {plus:.3}%",
            downstream.join(", ")
        ),
    ))
}

fn min_time(repeats: usize, mut f: impl FnMut() -> Result<(), String>) -> Result<f64, String> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn criterion_10(model: &NetworkModel) -> Check {
    let data = common::test_set().slice(0..100);
    let taps = Taps::none();
    let timed = |plan: MultPlan| {
        min_time(3, || {
            for img in &data.images {
                std::hint::black_box(forward(model, img, ExecPath::Quant, &plan, &taps).map_err(err)?);
            }
            Ok(())
        })
    };
    let native = timed(MultPlan::exact())?;
    let lut = timed(MultPlan::uniform(model, MultiplierLut::exact().into()))?;
    let ratio = lut / native;

    let inputs = common::inputs(10, 7);
    let golden = run_golden(&inputs.model, &inputs.dataset, ExecPath::Quant).map_err(err)?;
    let campaign = |count: u64| {
        let mut cfg = common::config(
            CampaignMode::FiSingle {
                site: FaultSite::WeightInt8,
            },
            3,
            Some(FaultBudget::Total { count }),
        );
        cfg.dataset.subset = Some(10);
        cfg.dataset.subset_seed = 7;
        min_time(3, || {
            run_campaign(&cfg, &inputs, Some(&golden)).map(|_| ()).map_err(err)
        })
    };
    let (small, large) = (campaign(200)?, campaign(400)?);
    let scaling = large / small;
    Ok(verdict(
        ratio <= 5.0 && scaling <= 2.4,
        format!(
            "LUT/native wall time {ratio:.2}x ({:.1} ms vs {:.1} ms per 100 images); 400 vs 200 faults {scaling:.2}x",
            lut * 1e3,
            native * 1e3
        ),
    ))
}

/// Reference error percentages (MAE, AWCE, MRE) and accuracy loss of the
/// 13 signed 8-bit circuits.
const CIRCUITS: [(&str, f64, f64, f64, f64); 13] = [
    ("mul8s_1KV6", 0.00, 0.00, 0.00, 0.00),
    ("mul8s_1KV8", 0.0018, 0.0076, 0.28, 0.07),
    ("mul8s_1KV9", 0.0064, 0.026, 0.90, 0.15),
    ("mul8s_1KVA", 0.019, 0.075, 2.53, 0.51),
    ("mul8s_1KVM", 0.049, 0.20, 2.40, 0.16),
    ("mul8s_1KVP", 0.051, 0.21, 2.73, 0.27),
    ("mul8s_1KVQ", 0.056, 0.25, 3.64, 0.61),
    ("mul8s_1KX5", 0.15, 0.69, 8.93, 1.77),
    ("mul8s_1KXF", 0.34, 1.37, 15.72, 1.57),
    ("mul8s_1L2J", 0.081, 0.39, 4.41, 0.79),
    ("mul8s_1L2L", 0.23, 1.16, 12.26, 3.81),
    ("mul8s_1L2N", 0.52, 2.66, 27.44, 15.92),
    ("mul8s_1L12", 3.08, 12.30, 135.77, 75.66),
];

fn evoapprox_dir() -> PathBuf {
    std::env::var_os("AXFI_EVOAPPROX_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| common::fixtures().join("evoapprox"))
}

fn criterion_11(model: &NetworkModel) -> Check {
    let dir = evoapprox_dir();
    let missing: Vec<&str> = CIRCUITS
        .iter()
        .map(|c| c.0)
        .filter(|n| !dir.join(format!("{n}.lut")).is_file())
        .collect();
    if !missing.is_empty() {
        return Ok(Outcome::Skip(format!(
            "{} of 13 circuit LUTs absent from {} (set AXFI_EVOAPPROX_DIR)",
            missing.len(),
            dir.display()
        )));
    }
    let data = common::test_set().slice(0..200);
    let golden = run_golden(model, &data, ExecPath::Quant).map_err(err)?;
    let taps = Taps::none();
    let mut worst = 0.0f64;
    let (mut maes, mut losses) = (Vec::new(), Vec::new());
    for (name, mae, awce, mre, _) in CIRCUITS {
        let lut = MultiplierLut::load(dir.join(format!("{name}.lut"))).map_err(err)?;
        let r = characterize(&lut);
        worst = worst
            .max((r.mae_pct - mae).abs())
            .max((r.awce_pct - awce).abs())
            .max((r.mre_pct - mre).abs());
        let plan = MultPlan::uniform(model, lut.into());
        let mut correct = 0usize;
        for (img, &label) in data.images.iter().zip(&data.labels) {
            correct += usize::from(
                forward(model, img, ExecPath::Quant, &plan, &taps)
                    .map_err(err)?
                    .prediction
                    == label,
            );
        }
        maes.push(r.mae);
        losses.push(golden.accuracy - correct as f64 / data.len() as f64);
    }
    let rho = spearman(&maes, &losses).unwrap_or(f64::NAN);
    Ok(verdict(
        worst <= 0.05 && rho >= 0.8,
        format!("largest percentage deviation {worst:.4} points; Spearman(MAE, accuracy loss) {rho:.3}"),
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let model = common::model();
    let mut fi: Option<Result<FloatFiCampaign, String>> = None;
    let mut conv1: Option<Result<ConvOneRuns, String>> = None;
    let mut failed = 0;
    for n in 1..=11 {
        let outcome = match n {
            1 => criterion_1(&model),
            2 => criterion_2(),
            3 => criterion_3(),
            4..=6 => match fi.get_or_insert_with(|| FloatFiCampaign::run(&model)) {
                Err(e) => Err(e.clone()),
                Ok(fi) => match n {
                    4 => criterion_4(&model, fi),
                    5 => criterion_5(fi),
                    _ => criterion_6(fi),
                },
            },
            7 => criterion_7(),
            8 | 9 => match conv1.get_or_insert_with(ConvOneRuns::run) {
                Err(e) => Err(e.clone()),
                Ok(r) if n == 8 => criterion_8(r),
                Ok(r) => criterion_9(r),
            },
            10 => criterion_10(&model),
            _ => criterion_11(&model),
        };
        let (tag, detail) = match outcome {
            Ok(Outcome::Pass(d)) => ("PASS", d),
            Ok(Outcome::Fail(d)) => ("FAIL", d),
            Ok(Outcome::Skip(d)) => ("SKIP", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        failed += usize::from(tag == "FAIL");
        println!("criterion {n:>2}: {tag}  {detail}");
    }
    println!("acceptance: {failed} failed, {:.1} s", start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
