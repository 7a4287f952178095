use std::sync::OnceLock;

use proxattack::attacks::losses::predictions;
use proxattack::attacks::{
    alma_prox, binary_search_attack, dag, fmn_linf, pdpgd_linf, pgd, AlmaProxConfig, AttackInput, AttackResult,
    DagConfig, FixedAttack, FixedLoss, FmnConfig, PdpgdConfig, PgdConfig, SEARCH_STEPS,
};
use proxattack::bench::{apsr, BenchRecord};
use proxattack::models::{PixelAffineModel, SegmentationModel, TinyConvModel};
use proxattack::synth::{fitted_toy_model, synth_sample, SynthConfig};
use proxattack::{BinaryMask, Error, LabelMap, RngSeed, Shape, TensorGrid};

fn affine_setup(seed: u64) -> (PixelAffineModel, TensorGrid) {
    let shape = Shape::new(3, 4, 4);
    let model = PixelAffineModel::random(shape, 3, RngSeed(seed)).unwrap();
    let x: Vec<f64> = RngSeed(seed + 1).rng().uniform_vec(shape.len()).iter().map(|v| 0.3 + 0.4 * v).collect();
    (model, TensorGrid::new(shape, x).unwrap())
}

fn predicted(model: &impl SegmentationModel, x: &TensorGrid, shift: usize) -> LabelMap {
    let shape = x.shape();
    let p = predictions(&model.forward(x).unwrap());
    LabelMap::new(shape.height, shape.width, 3, p.iter().map(|&k| ((k + shift) % 3) as u16).collect()).unwrap()
}

fn check_result(model: &impl SegmentationModel, input: &AttackInput, r: &AttackResult, nu: f64) {
    let x_adv = input.x.add(&r.best_delta).unwrap();
    assert!(x_adv.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    assert_eq!(r.best_norm, r.best_delta.linf_norm());
    let rate = apsr(&model.forward(&x_adv).unwrap(), &input.labels, &input.mask, input.targeted).unwrap();
    assert_eq!(r.success, rate >= nu, "success flag disagrees with measured APSR {rate}");
}

/// A fitted toy model (trained once) and a fresh sample. Each test gets its
/// own copy so call counters start at zero.
fn toy() -> (TinyConvModel, AttackInput) {
    static MODEL: OnceLock<TinyConvModel> = OnceLock::new();
    let cfg = SynthConfig::default();
    let model = MODEL.get_or_init(|| fitted_toy_model(&cfg, 8, RngSeed(3)).unwrap().0).clone();
    let s = synth_sample(&cfg, RngSeed(3).derive(77)).unwrap();
    (model, AttackInput::new(s.x, s.labels, s.mask, false).unwrap())
}

#[test]
fn alma_zero_perturbation_when_already_adversarial() {
    let (model, x) = affine_setup(1);
    let wrong = predicted(&model, &x, 1);
    let input = AttackInput::new(x.clone(), wrong, BinaryMask::full(4, 4), false).unwrap();
    let r = alma_prox(&model, &input, &AlmaProxConfig::default()).unwrap();
    assert!(r.success);
    assert_eq!(r.best_norm, 0.0);
    assert_eq!(r.iterations, 1);

    let target = predicted(&model, &x, 0);
    let input = AttackInput::new(x, target, BinaryMask::full(4, 4), true).unwrap();
    let r = alma_prox(&model, &input, &AlmaProxConfig::default()).unwrap();
    assert!(r.success);
    assert_eq!(r.best_norm, 0.0);
}

#[test]
fn alma_on_toy_model() {
    let (model, input) = toy();
    let cfg = AlmaProxConfig::default();
    let r = alma_prox(&model, &input, &cfg).unwrap();
    assert!(r.success);
    assert!(r.best_norm > 0.0 && r.best_norm < 0.3);
    check_result(&model, &input, &r, cfg.nu);
    let bests: Vec<f64> = r.trace.iter().filter_map(|e| e.best_norm).collect();
    assert!(bests.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*bests.last().unwrap(), r.best_norm);
    assert!(r.trace.iter().all(|e| {
        let w = e.scale.unwrap();
        (cfg.w_min..=1.0).contains(&w)
    }));
    assert_eq!(r.forwards, r.iterations as u64);
    assert!(r.backwards <= r.forwards);
}

#[test]
fn alma_targeted_on_toy_model() {
    let (model, input) = toy();
    let target = predicted(&model, &input.x, 1);
    let input = AttackInput::new(input.x, target, input.mask, true).unwrap();
    let r = alma_prox(&model, &input, &AlmaProxConfig::default()).unwrap();
    check_result(&model, &input, &r, 0.99);
}

#[test]
fn alma_rejects_bad_config() {
    let (model, input) = toy();
    for cfg in [
        AlmaProxConfig { nu: 0.0, ..Default::default() },
        AlmaProxConfig { iterations: 0, ..Default::default() },
        AlmaProxConfig { alpha: 1.0, ..Default::default() },
    ] {
        assert!(matches!(alma_prox(&model, &input, &cfg), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn dag_single_step_has_norm_eta() {
    let (model, x) = affine_setup(2);
    let labels = predicted(&model, &x, 0);
    let input = AttackInput::new(x, labels, BinaryMask::full(4, 4), false).unwrap();
    let eta = 0.01;
    let r = dag(&model, &input, &DagConfig { eta, iterations: 2, nu: 0.99 }).unwrap();
    assert_eq!(r.trace.len(), 2);
    assert_eq!(r.trace[0].norm, 0.0);
    assert!((r.trace[1].norm - eta).abs() < 1e-15);
}

#[test]
fn dag_stops_immediately_when_adversarial() {
    let (model, x) = affine_setup(3);
    let wrong = predicted(&model, &x, 2);
    let input = AttackInput::new(x, wrong, BinaryMask::full(4, 4), false).unwrap();
    let r = dag(&model, &input, &DagConfig::default()).unwrap();
    assert!(r.success);
    assert_eq!(r.iterations, 1);
    assert_eq!(r.best_norm, 0.0);
    assert_eq!((r.forwards, r.backwards), (1, 0));
}

#[test]
fn dag_budget_exhaustion_reports_failure() {
    let (model, input) = toy();
    let r = dag(&model, &input, &DagConfig { eta: 1e-4, iterations: 3, nu: 0.99 }).unwrap();
    assert!(!r.success);
    let rec = BenchRecord::new("s", "dag", r.success, r.best_norm, 0.0, 0.0, r.forwards, r.backwards);
    assert_eq!(rec.linf_norm, 1.0);
}

#[test]
fn dag_on_toy_model() {
    let (model, input) = toy();
    let r = dag(&model, &input, &DagConfig::default()).unwrap();
    check_result(&model, &input, &r, 0.99);
    assert!(r.success);
}

#[test]
fn pgd_is_deterministic_under_seed() {
    let (model, input) = toy();
    let cfg = PgdConfig { loss: FixedLoss::Dlr, steps: 10, restarts: 3, seed: 5 };
    let a = pgd(&model, &input, 0.05, &cfg, 0.99).unwrap();
    let b = pgd(&model, &input, 0.05, &cfg, 0.99).unwrap();
    assert_eq!(a, b);
    assert!(a.linf_norm() <= 0.05 + 1e-15);
}

#[test]
fn binary_search_attack_probes_thirteen_times() {
    let (model, input) = toy();
    model.counters().reset();
    let attack = FixedAttack::Pgd(PgdConfig { loss: FixedLoss::Dlr, steps: 10, ..Default::default() });
    let r = binary_search_attack(&model, &input, &attack, SEARCH_STEPS, 0.99).unwrap();
    assert_eq!(r.trace.len(), 13);
    assert!(r.trace.iter().all(|e| e.epsilon.is_some()));
    assert_eq!(r.forwards, model.counters().forwards());
    assert!(r.success);
    check_result(&model, &input, &r, 0.99);
    let last_success = r.trace.iter().filter(|e| e.apsr >= 0.99).map(|e| e.epsilon.unwrap()).fold(f64::INFINITY, f64::min);
    assert!(r.best_norm <= last_success + 1e-15);
}

#[test]
fn fmn_tracks_a_shrinking_best_norm() {
    let (model, input) = toy();
    let r = fmn_linf(&model, &input, &FmnConfig::default()).unwrap();
    check_result(&model, &input, &r, 0.99);
    let bests: Vec<f64> = r.trace.iter().filter_map(|e| e.best_norm).collect();
    assert!(bests.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn pdpgd_result_is_consistent() {
    let (model, input) = toy();
    let r = pdpgd_linf(&model, &input, &PdpgdConfig::default()).unwrap();
    check_result(&model, &input, &r, 0.99);
    assert_eq!(r.forwards, r.iterations as u64);
}

#[test]
fn attack_input_validation() {
    let shape = Shape::new(3, 2, 2);
    let labels = LabelMap::filled(2, 2, 3, 0).unwrap();
    let bad = TensorGrid::filled(shape, 1.5);
    assert!(matches!(
        AttackInput::new(bad, labels.clone(), BinaryMask::full(2, 2), false),
        Err(Error::InvalidArgument(_))
    ));
    let x = TensorGrid::filled(shape, 0.5);
    assert!(matches!(
        AttackInput::new(x.clone(), labels.clone(), BinaryMask::full(3, 2), false),
        Err(Error::ShapeMismatch { .. })
    ));
    let input = AttackInput::new(x, labels, BinaryMask::full(2, 2), false).unwrap();
    let wide = PixelAffineModel::random(Shape::new(3, 4, 4), 3, RngSeed(1)).unwrap();
    assert!(alma_prox(&wide, &input, &AlmaProxConfig::default()).is_err());
}
