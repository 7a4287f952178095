use std::collections::BTreeMap;
use std::fs;

use proxattack::bench::{
    failure_curve, norm_stats, prox_benchmark, read_records, summarize_prox, write_csv, write_curve, BenchRecord, NormStats,
    ProxBenchConfig,
};
use proxattack::io::{load_tensor, save_labels, save_mask, save_tensor};
use proxattack::models::{gradcheck, load_model, save_model, AnyModel, TinyConvModel};
use proxattack::synth::{fit_tiny_conv, synth_sample, FitConfig, SynthConfig};
use proxattack::{LabelMap, RngSeed, SegmentationModel, TensorGrid};
use serde::Serialize;

use crate::args::{BenchProxArgs, GradcheckArgs, ReportArgs, SynthArgs};
use crate::error::{at, io_at, CliError, CliResult};
use crate::write_json;

pub fn bench_prox(mut a: BenchProxArgs) -> CliResult<()> {
    let seed_source = a.common.resolve_seed()?;
    a.common.check_jobs()?;
    let cfg = ProxBenchConfig {
        d_sizes: a.d_sizes.clone(),
        sigmas: a.sigmas.clone(),
        repeats: a.repeats,
        seed: a.common.seed,
        stop_tol: a.stop_tol,
        precision: a.precision,
        log10_lambda_range: (a.log10_lambda_min, a.log10_lambda_max),
        jobs: a.common.jobs,
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let records = prox_benchmark(&cfg)?;
    let summary = summarize_prox(&records);

    io_at(&a.out, fs::create_dir_all(&a.out))?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        seed_source: &'a str,
        config: &'a ProxBenchConfig,
    }
    write_json(&a.out.join("manifest.json"), &Manifest { seed_source, config: &cfg })?;
    for (name, rows) in [("prox_records.csv", write_rows(&records)), ("prox_summary.csv", write_rows(&summary))] {
        let p = a.out.join(name);
        io_at(&p, fs::write(&p, rows?))?;
    }
    for s in &summary {
        println!(
            "d={:<6} sigma={:<5} {:<8} mean {:.3e} s, rel objective {:.6}, not converged {}",
            s.d,
            s.sigma,
            s.solver.name(),
            s.mean_wall_time_s,
            s.mean_relative_objective,
            s.not_converged
        );
    }
    Ok(())
}

fn write_rows<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(buf)
}

pub fn gradcheck_cmd(mut a: GradcheckArgs) -> CliResult<()> {
    a.common.resolve_seed()?;
    if !(a.tolerance > 0.0 && a.tolerance.is_finite()) {
        return Err(CliError::Config(format!("--tolerance must be positive, got {}", a.tolerance)));
    }
    if a.coordinates == 0 {
        return Err(CliError::Config("--coordinates must be at least 1".into()));
    }
    let model = at(&a.model, load_model(&a.model))?;
    let seed = RngSeed(a.common.seed);
    let x = match &a.input {
        Some(p) => at(p, load_tensor(p))?,
        None => {
            let shape = model.input_shape();
            TensorGrid::new(shape, seed.derive(0).rng().uniform_vec(shape.len()))?
        }
    };
    let report = gradcheck(&model, &x, a.tolerance, a.coordinates, seed.derive(1))?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if !report.passed {
        return Err(CliError::Tolerance(format!(
            "gradient check failed: relative error {:.3e} at index {} exceeds {:.3e}",
            report.max_rel_error, report.worst_index, report.tolerance
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct AttackSummary {
    samples: usize,
    success_rate: f64,
    #[serde(flatten)]
    norm_255: NormStats,
    mean_apsr: f64,
    mean_forwards: f64,
    mean_backwards: f64,
}

pub fn report(mut a: ReportArgs) -> CliResult<()> {
    a.common.resolve_seed()?;
    if a.grid_points < 2 || !(a.grid_max > 0.0 && a.grid_max <= 1.0) {
        return Err(CliError::Config("the curve needs --grid-points >= 2 and --grid-max in (0, 1]".into()));
    }
    let mut by_attack: BTreeMap<String, Vec<BenchRecord>> = BTreeMap::new();
    for p in &a.records {
        for r in at(p, read_records(p))? {
            by_attack.entry(r.attack.clone()).or_default().push(r);
        }
    }
    if by_attack.is_empty() {
        return Err(CliError::Config("the records files hold no rows".into()));
    }
    io_at(&a.out, fs::create_dir_all(&a.out))?;
    let step = a.grid_max / (a.grid_points - 1) as f64;
    let grid: Vec<f64> = (0..a.grid_points).map(|i| i as f64 * step).collect();
    let mut summary = BTreeMap::new();
    for (attack, rows) in &by_attack {
        let n = rows.len() as f64;
        let mean = |f: fn(&BenchRecord) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let s = AttackSummary {
            samples: rows.len(),
            success_rate: mean(|r| f64::from(u8::from(r.success))),
            norm_255: norm_stats(rows)?,
            mean_apsr: mean(|r| r.apsr),
            mean_forwards: mean(|r| r.forwards as f64),
            mean_backwards: mean(|r| r.backwards as f64),
        };
        println!(
            "{attack:<10} n={:<4} success {:.3}  median {:.3}/255  mean {:.3}/255",
            s.samples, s.success_rate, s.norm_255.median, s.norm_255.mean
        );
        let p = a.out.join(format!("curve_{attack}.csv"));
        at(&p, write_curve(&p, &failure_curve(rows, &grid)?))?;
        summary.insert(attack.clone(), s);
    }
    write_json(&a.out.join("summary.json"), &summary)
}

pub fn synth(mut a: SynthArgs) -> CliResult<()> {
    let seed_source = a.common.resolve_seed()?;
    if a.train == 0 || a.hidden == 0 {
        return Err(CliError::Config("--train and --hidden must be at least 1".into()));
    }
    let cfg = SynthConfig {
        height: a.height,
        width: a.width,
        classes: a.classes,
        contrast: a.contrast,
        noise: a.noise,
        unlabeled: a.unlabeled,
        ..SynthConfig::default()
    };
    let fit = FitConfig {
        epochs: a.epochs,
        ..FitConfig::default()
    };
    let seed = RngSeed(a.common.seed);
    let sample = |stream: u64| synth_sample(&cfg, seed.derive(stream)).map_err(|e| CliError::Config(e.to_string()));
    let train = (0..a.train as u64).map(|i| sample(1_000 + i)).collect::<CliResult<Vec<_>>>()?;
    let mut model = TinyConvModel::random(cfg.shape(), a.hidden, cfg.classes, seed.derive(0))?;
    let report = fit_tiny_conv(&mut model, &train, &fit)?;

    let model_dir = a.out.join("model");
    at(&model_dir, save_model(&model_dir, &AnyModel::from(model)))?;
    let k = cfg.classes;
    for i in 0..a.samples {
        let s = sample(50_000 + i as u64)?;
        let dir = a.out.join("data").join(format!("sample_{i:04}"));
        io_at(&dir, fs::create_dir_all(&dir))?;
        let shifted = s.labels.labels().iter().map(|&l| ((usize::from(l) + 1) % k) as u16).collect();
        let target = LabelMap::new(s.labels.height(), s.labels.width(), k, shifted)?;
        at(&dir, save_tensor(dir.join("image.bin"), &s.x))?;
        at(&dir, save_labels(dir.join("labels.bin"), &s.labels))?;
        at(&dir, save_labels(dir.join("target.bin"), &target))?;
        at(&dir, save_mask(dir.join("mask.bin"), &s.mask))?;
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        seed: u64,
        seed_source: &'a str,
        hidden: usize,
        train: usize,
        samples: usize,
        data: &'a SynthConfig,
        fit: &'a FitConfig,
        train_loss: f64,
        train_accuracy: f64,
    }
    write_json(
        &a.out.join("synth.json"),
        &Manifest {
            seed: a.common.seed,
            seed_source,
            hidden: a.hidden,
            train: a.train,
            samples: a.samples,
            data: &cfg,
            fit: &fit,
            train_loss: report.final_loss,
            train_accuracy: report.accuracy,
        },
    )?;
    println!(
        "fitted on {} samples: loss {:.4}, accuracy {:.3}; wrote {} samples to {}",
        a.train,
        report.final_loss,
        report.accuracy,
        a.samples,
        a.out.join("data").display()
    );
    Ok(())
}
