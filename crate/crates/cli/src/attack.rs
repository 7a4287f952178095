use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use proxattack::attacks::{
    alma_prox, binary_search_attack, dag, fmn_linf, pdpgd_linf, AlmaProxConfig, DagConfig, FixedAttack, FixedLoss, FmnConfig,
    PdpgdConfig, PgdConfig,
};
use proxattack::bench::{apsr, norm_stats, write_csv, write_records, BenchRecord};
use proxattack::io::{load_labels, load_mask, load_tensor, save_tensor};
use proxattack::models::{load_model, AnyModel};
use proxattack::objective::{MaskStrategy, PercentileScope};
use proxattack::{AttackInput, AttackResult, BinaryMask, RngSeed, SegmentationModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{AttackArgs, AttackKind, Masking, Scope};
use crate::error::{at, io_at, CliError, CliResult};

/// Fully resolved attack configuration, as recorded in the run manifest.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "attack", rename_all = "snake_case")]
pub enum Resolved {
    AlmaProx(AlmaProxConfig),
    Dag(DagConfig),
    Search {
        inner: FixedAttack,
        search_steps: usize,
        nu: f64,
    },
    Fmn(FmnConfig),
    Pdpgd(PdpgdConfig),
}

impl Resolved {
    fn name(&self) -> String {
        match self {
            Resolved::AlmaProx(_) => "alma_prox".into(),
            Resolved::Dag(_) => "dag".into(),
            Resolved::Search { inner, .. } => inner.name(),
            Resolved::Fmn(_) => "fmn".into(),
            Resolved::Pdpgd(_) => "pdpgd".into(),
        }
    }

    fn validate(&self) -> proxattack::Result<()> {
        match self {
            Resolved::AlmaProx(c) => c.validate(),
            Resolved::Dag(c) => c.validate(),
            Resolved::Search { inner, search_steps, nu } => {
                if *search_steps == 0 {
                    return Err(proxattack::Error::InvalidArgument("--search-steps must be at least 1".into()));
                }
                inner.validate(*nu)
            }
            Resolved::Fmn(c) => c.validate(),
            Resolved::Pdpgd(c) => c.validate(),
        }
    }

    fn run(&self, model: &AnyModel, input: &AttackInput, seed: RngSeed) -> proxattack::Result<AttackResult> {
        match self {
            Resolved::AlmaProx(c) => alma_prox(model, input, c),
            Resolved::Dag(c) => dag(model, input, c),
            Resolved::Search { inner, search_steps, nu } => {
                let inner = match inner {
                    FixedAttack::Pgd(c) => FixedAttack::Pgd(PgdConfig { seed: seed.0, ..c.clone() }),
                    other => other.clone(),
                };
                binary_search_attack(model, input, &inner, *search_steps, *nu)
            }
            Resolved::Fmn(c) => fmn_linf(model, input, c),
            Resolved::Pdpgd(c) => pdpgd_linf(model, input, c),
        }
    }

    fn nu(&self) -> f64 {
        match self {
            Resolved::AlmaProx(c) => c.nu,
            Resolved::Dag(c) => c.nu,
            Resolved::Search { nu, .. } => *nu,
            Resolved::Fmn(c) => c.nu,
            Resolved::Pdpgd(c) => c.nu,
        }
    }
}

fn masking(m: Masking) -> MaskStrategy {
    match m {
        Masking::Labeled => MaskStrategy::Labeled,
        Masking::Fixed => MaskStrategy::Fixed,
        Masking::Scheduled => MaskStrategy::Scheduled,
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Flags that were given but have no effect on the chosen attack.
pub fn inapplicable(a: &AttackArgs) -> Vec<&'static str> {
    use AttackKind::*;
    let k = a.attack;
    let search = matches!(k, Ifgsm | Mifgsm | PgdCe | PgdDlr);
    let checks: [(&str, bool, bool); 21] = [
        ("--iterations", a.iterations.is_some(), matches!(k, Alma | Dag | Fmn | Pdpgd)),
        ("--step-init", a.step_init.is_some(), k == Alma),
        ("--step-final", a.step_final.is_some(), k == Alma),
        ("--alpha", a.alpha.is_some(), k == Alma),
        ("--mu-init", a.mu_init.is_some(), k == Alma),
        ("--rho-init", a.rho_init.is_some(), k == Alma),
        ("--gamma", a.gamma.is_some(), k == Alma),
        ("--gamma-w", a.gamma_w.is_some(), k == Alma),
        ("--w-min", a.w_min.is_some(), k == Alma),
        ("--precision", a.precision.is_some(), matches!(k, Alma | Pdpgd)),
        ("--masking", a.masking.is_some(), matches!(k, Alma | Pdpgd)),
        ("--percentile-scope", a.percentile_scope.is_some(), k == Alma),
        ("--margin", a.margin.is_some(), k == Alma),
        ("--eta", a.eta.is_some(), k == Dag),
        ("--steps", a.steps.is_some(), search),
        ("--restarts", a.restarts.is_some(), matches!(k, PgdCe | PgdDlr)),
        ("--decay", a.decay.is_some(), k == Mifgsm),
        ("--alpha-init", a.alpha_init.is_some(), k == Fmn),
        ("--primal-lr", a.primal_lr.is_some(), k == Pdpgd),
        ("--dual-lr", a.dual_lr.is_some(), k == Pdpgd),
        ("--ratio", a.ratio.is_some(), k == Pdpgd),
    ];
    checks
        .into_iter()
        .filter(|(_, given, applies)| *given && !applies)
        .map(|(name, ..)| name)
        .collect()
}

pub fn resolve(a: &AttackArgs) -> Resolved {
    match a.attack {
        AttackKind::Alma => {
            let mut c = AlmaProxConfig::default();
            set(&mut c.nu, a.nu);
            set(&mut c.iterations, a.iterations);
            set(&mut c.step_init, a.step_init);
            set(&mut c.step_final, a.step_final);
            set(&mut c.alpha, a.alpha);
            set(&mut c.mu_init, a.mu_init);
            set(&mut c.rho_init, a.rho_init);
            set(&mut c.gamma, a.gamma);
            set(&mut c.gamma_w, a.gamma_w);
            set(&mut c.w_min, a.w_min);
            set(&mut c.precision, a.precision);
            set(&mut c.margin, a.margin);
            set(&mut c.masking, a.masking.map(masking));
            set(
                &mut c.percentile_scope,
                a.percentile_scope.map(|s| match s {
                    Scope::Masked => PercentileScope::Masked,
                    Scope::All => PercentileScope::All,
                }),
            );
            Resolved::AlmaProx(c)
        }
        AttackKind::Dag => {
            let mut c = DagConfig::default();
            set(&mut c.nu, a.nu);
            set(&mut c.iterations, a.iterations);
            set(&mut c.eta, a.eta);
            Resolved::Dag(c)
        }
        AttackKind::Fmn => {
            let mut c = FmnConfig::default();
            set(&mut c.nu, a.nu);
            set(&mut c.iterations, a.iterations);
            set(&mut c.alpha_init, a.alpha_init);
            Resolved::Fmn(c)
        }
        AttackKind::Pdpgd => {
            let mut c = PdpgdConfig::default();
            set(&mut c.nu, a.nu);
            set(&mut c.iterations, a.iterations);
            set(&mut c.primal_lr, a.primal_lr);
            set(&mut c.dual_lr, a.dual_lr);
            set(&mut c.ratio, a.ratio);
            set(&mut c.precision, a.precision);
            set(&mut c.masking, a.masking.map(masking));
            Resolved::Pdpgd(c)
        }
        kind => {
            let pgd_default = PgdConfig::default();
            let steps = a.steps.unwrap_or(pgd_default.steps);
            let pgd = |loss| {
                FixedAttack::Pgd(PgdConfig {
                    loss,
                    steps,
                    restarts: a.restarts.unwrap_or(pgd_default.restarts),
                    seed: 0,
                })
            };
            let inner = match kind {
                AttackKind::Ifgsm => FixedAttack::Ifgsm { steps },
                AttackKind::Mifgsm => FixedAttack::Mifgsm {
                    steps,
                    decay: a.decay.unwrap_or(1.0),
                },
                AttackKind::PgdCe => pgd(FixedLoss::Ce),
                _ => pgd(FixedLoss::Dlr),
            };
            Resolved::Search {
                inner,
                search_steps: a.search_steps,
                nu: a.nu.unwrap_or(0.99),
            }
        }
    }
}

struct Sample {
    id: String,
    input: AttackInput,
}

fn load_samples(data: &Path, num_classes: usize, targeted: bool) -> CliResult<Vec<Sample>> {
    let mut dirs: Vec<PathBuf> = io_at(data, fs::read_dir(data))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|source| CliError::Io {
            path: data.to_path_buf(),
            source,
        })?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Config(format!("{} contains no sample directories", data.display())));
    }
    dirs.into_iter()
        .map(|dir| {
            let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let image = dir.join("image.bin");
            let x = at(&image, load_tensor(&image))?;
            let labels_path = dir.join(if targeted { "target.bin" } else { "labels.bin" });
            let labels = at(&labels_path, load_labels(&labels_path, Some(num_classes)))?;
            let mask_path = dir.join("mask.bin");
            let mask = if mask_path.exists() {
                at(&mask_path, load_mask(&mask_path))?
            } else {
                BinaryMask::full(labels.height(), labels.width())
            };
            let input = at(&dir, AttackInput::new(x, labels, mask, targeted))?;
            Ok(Sample { id, input })
        })
        .collect()
}

#[derive(Serialize)]
struct RunManifest<'a> {
    model: &'a Path,
    data: &'a Path,
    targeted: bool,
    seed: u64,
    seed_source: &'a str,
    jobs: usize,
    samples: usize,
    config: &'a Resolved,
}

#[derive(Serialize)]
struct Summary {
    attack: String,
    samples: usize,
    success_rate: f64,
    median_norm_255: f64,
    mean_norm_255: f64,
    mean_apsr: f64,
    forwards: u64,
    backwards: u64,
}

pub fn run(mut a: AttackArgs) -> CliResult<()> {
    let seed_source = a.common.resolve_seed()?;
    a.common.check_jobs()?;
    for flag in inapplicable(&a) {
        eprintln!("warning: {flag} has no effect on --attack {:?}", a.attack);
    }
    let resolved = resolve(&a);
    resolved.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let model = at(&a.model, load_model(&a.model))?;
    let samples = load_samples(&a.data, model.num_classes(), a.targeted)?;
    for s in &samples {
        at(a.data.join(&s.id), s.input.check_model(&model))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.common.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", a.common.jobs)))?;
    let base = RngSeed(a.common.seed);
    let name = resolved.name();
    let results: Vec<(BenchRecord, AttackResult)> = pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let model = model.clone();
                let start = Instant::now();
                let res = resolved.run(&model, &s.input, base.derive(i as u64))?;
                let wall = start.elapsed().as_secs_f64();
                let x_adv = s.input.x.add(&res.best_delta)?.map(|v| v.clamp(0.0, 1.0))?;
                let rate = apsr(&model.forward(&x_adv)?, &s.input.labels, &s.input.mask, s.input.targeted)?;
                let success = res.success && rate >= resolved.nu();
                let record = BenchRecord::new(&s.id, &name, success, res.best_norm, rate, wall, res.forwards, res.backwards);
                Ok((record, res))
            })
            .collect::<proxattack::Result<_>>()
    })?;

    let out = &a.out;
    let pert_dir = out.join("perturbations");
    io_at(&pert_dir, fs::create_dir_all(&pert_dir))?;
    if a.save_trace {
        let dir = out.join("traces");
        io_at(&dir, fs::create_dir_all(&dir))?;
    }
    for (s, (_, res)) in samples.iter().zip(&results) {
        let p = pert_dir.join(format!("{}.bin", s.id));
        at(&p, save_tensor(&p, &res.best_delta))?;
        if a.save_trace {
            let p = out.join("traces").join(format!("{}.csv", s.id));
            let file = io_at(&p, fs::File::create(&p))?;
            at(&p, write_csv(file, &res.trace))?;
        }
    }
    let records: Vec<BenchRecord> = results.into_iter().map(|(r, _)| r).collect();
    let p = out.join("records.csv");
    at(&p, write_records(&p, &records))?;

    let stats = norm_stats(&records)?;
    let n = records.len() as f64;
    let summary = Summary {
        attack: name,
        samples: records.len(),
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
        median_norm_255: stats.median,
        mean_norm_255: stats.mean,
        mean_apsr: records.iter().map(|r| r.apsr).sum::<f64>() / n,
        forwards: records.iter().map(|r| r.forwards).sum(),
        backwards: records.iter().map(|r| r.backwards).sum(),
    };
    let manifest = RunManifest {
        model: &a.model,
        data: &a.data,
        targeted: a.targeted,
        seed: a.common.seed,
        seed_source,
        jobs: a.common.jobs,
        samples: records.len(),
        config: &resolved,
    };
    crate::write_json(&out.join("manifest.json"), &manifest)?;
    crate::write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{}: {}/{} successful, median {:.3}/255",
        summary.attack,
        records.iter().filter(|r| r.success).count(),
        records.len(),
        summary.median_norm_255
    );
    Ok(())
}
