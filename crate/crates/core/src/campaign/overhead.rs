use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{max_difference_slices, psnr_slices, ssim_slices, SsimConstants};
use crate::qnn::{forward_timed, ExecPath, MultPlan, NetworkModel};
use crate::stats::mean_and_std;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadStat {
    /// Metric time as a percentage of the layer's forward time.
    pub mean_pct: f64,
    pub std_pct: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOverhead {
    pub layer: usize,
    pub name: String,
    pub numel: usize,
    pub forward_seconds: f64,
    pub max_difference: OverheadStat,
    pub psnr: OverheadStat,
    pub ssim: OverheadStat,
}

/// Per-layer cost of computing each metric on a layer's OFM relative to
/// computing the layer itself, averaged over `images`. Each measurement
/// repeats its operation `repeats` times to rise above timer resolution.
pub fn measure_metric_overhead(
    model: &NetworkModel,
    images: &[Tensor],
    path: ExecPath,
    repeats: usize,
) -> Result<Vec<LayerOverhead>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let repeats = repeats.max(1);
    let n_layers = model.layers.len();
    let mut fwd = vec![Vec::new(); n_layers];
    let mut samples = vec![[Vec::new(), Vec::new(), Vec::new()]; n_layers];
    let plan = MultPlan::exact();
    for img in images {
        let mut layer_secs = vec![0.0; n_layers];
        let mut trace = None;
        for _ in 0..repeats {
            let (t, times) = forward_timed(model, img, path, &plan)?;
            for (acc, d) in layer_secs.iter_mut().zip(times) {
                *acc += d.as_secs_f64();
            }
            trace = Some(t);
        }
        let trace = trace.expect("repeats >= 1");
        for (l, ofm) in trace.ofms.iter().enumerate() {
            let layer_time = (layer_secs[l] / repeats as f64).max(1e-9);
            fwd[l].push(layer_time);
            let g = ofm.to_tensor();
            // A perturbed copy so no metric can shortcut on equality.
            let mut f = g.clone();
            if let Some(v) = f.data.first_mut() {
                *v += 1.0;
            }
            let c = SsimConstants::for_golden(&g.data);
            let timings = [
                time(repeats, || black_box(max_difference_slices(&g.data, &f.data))),
                time(repeats, || black_box(psnr_slices(&g.data, &f.data))),
                time(repeats, || black_box(ssim_slices(&g.data, &f.data, &c))),
            ];
            for (m, t) in timings.into_iter().enumerate() {
                samples[l][m].push((t, 100.0 * t / layer_time));
            }
        }
    }
    let shapes = model.output_shapes()?;
    Ok((0..n_layers)
        .map(|l| {
            let stat = |m: usize| {
                let pct: Vec<f64> = samples[l][m].iter().map(|s| s.1).collect();
                let secs: Vec<f64> = samples[l][m].iter().map(|s| s.0).collect();
                let (mean_pct, std_pct) = mean_and_std(&pct);
                OverheadStat {
                    mean_pct,
                    std_pct,
                    mean_seconds: mean_and_std(&secs).0,
                }
            };
            LayerOverhead {
                layer: l,
                name: model.layers[l].name(l),
                numel: shapes[l].iter().product(),
                forward_seconds: mean_and_std(&fwd[l]).0,
                max_difference: stat(0),
                psnr: stat(1),
                ssim: stat(2),
            }
        })
        .collect())
}

fn time<T>(repeats: usize, mut f: impl FnMut() -> T) -> f64 {
    let t0 = Instant::now();
    for _ in 0..repeats {
        black_box(f());
    }
    t0.elapsed().as_secs_f64() / repeats as f64
}
