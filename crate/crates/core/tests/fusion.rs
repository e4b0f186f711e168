use ndarray::Array2;
use proptest::prelude::*;
use rac_core::ann::{IndexKind, IndexSpec, Metric};
use rac_core::autodiff::encode_checkpoint;
use rac_core::dataspace::*;
use rac_core::fusion::*;
use rac_core::losses::{Branch, LossSpec};
use rac_core::retrieval::*;

const L: usize = 6;

struct Fixture {
    train: Dataset,
    test: Dataset,
    module: RetrievalModule,
    train_ids: Vec<u64>,
}

fn fixture(seed: u64) -> Fixture {
    let gen = GenConfig { classes: L, dim: 5, n_max: 80, imbalance_factor: 10.0, seed, ..GenConfig::default() };
    let train = generate_longtail(&gen).unwrap();
    let test = make_balanced_testset(&gen, 10).unwrap();
    let names = LabelVocab::new(&VocabMode::MultiToken { seed }, L).unwrap().names().to_vec();
    let spec = IndexSpec { kind: IndexKind::Exact, metric: Metric::L2, ..IndexSpec::default() };
    let src = Source { tag: "train", data: &train, names: &names };
    let (module, ids) = RetrievalModule::build(FrozenEncoder::identity(5), &spec, &[src]).unwrap();
    Fixture { train, test, module, train_ids: ids.into_iter().next().unwrap() }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 32,
        seed,
        retrieval: RetrievalConfig { k: 5, drop_first: true },
        text: TextEncoderSpec { embed_dim: 16, ..TextEncoderSpec::default() },
        eval_every: 1,
        ..TrainConfig::default()
    }
}

fn run(f: &Fixture, cfg: &TrainConfig, with_module: bool) -> TrainOutcome {
    let data = TrainData {
        train: &f.train,
        test: Some(&f.test),
        retrieval: with_module.then_some(&f.module),
        train_ids: with_module.then_some(f.train_ids.as_slice()),
        fixed: None,
    };
    train(&data, cfg).unwrap()
}

fn checkpoint(out: &TrainOutcome) -> Vec<u8> {
    encode_checkpoint(&out.model.params(), Some(&out.optim))
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let f = fixture(1);
    let (a, b) = (run(&f, &quick(3), true), run(&f, &quick(3), true));
    assert_eq!(checkpoint(&a), checkpoint(&b));
    assert_eq!(a.final_eval, b.final_eval);
    assert_ne!(checkpoint(&a), checkpoint(&run(&f, &quick(4), true)));
}

#[test]
fn cached_and_uncached_lookups_train_the_same_model() {
    let f = fixture(2);
    let cached = run(&f, &TrainConfig { cache_retrievals: true, ..quick(0) }, true);
    let uncached = run(&f, &TrainConfig { cache_retrievals: false, ..quick(0) }, true);
    assert_eq!(checkpoint(&cached), checkpoint(&uncached));
    assert_eq!(cached.final_eval, uncached.final_eval);
    let strip = |h: &[HistoryRecord]| h.iter().map(|r| (r.epoch, r.loss.to_bits(), r.top1.to_bits())).collect::<Vec<_>>();
    assert_eq!(strip(&cached.history), strip(&uncached.history));
}

#[test]
fn disabling_retrieval_reproduces_the_base_only_baseline() {
    let f = fixture(3);
    let off = TrainConfig { use_ret: false, ..quick(5) };
    let baseline = run(&f, &off, false);
    let with_index = run(&f, &off, true);
    let other_k = run(&f, &TrainConfig { retrieval: RetrievalConfig { k: 11, drop_first: false }, ..off.clone() }, true);
    assert_eq!(checkpoint(&baseline), checkpoint(&with_index));
    assert_eq!(checkpoint(&baseline), checkpoint(&other_k));
    let report = baseline.final_eval.unwrap();
    assert_eq!(report.output, Branch::Base);
    assert!(report.ret.is_none() && report.fused.is_none());
}

#[test]
fn disabling_base_reproduces_the_retrieval_only_baseline() {
    let f = fixture(4);
    let off = TrainConfig { use_base: false, ..quick(6) };
    let a = run(&f, &off, true);
    let b = run(&f, &TrainConfig { hidden: Some(7), ..off.clone() }, true);
    assert_eq!(checkpoint(&a), checkpoint(&b));
    assert_eq!(a.final_eval.as_ref().unwrap().output, Branch::Ret);
}

#[test]
fn zero_tau_trains_exactly_like_plain_ce() {
    let f = fixture(5);
    let lace = run(&f, &TrainConfig { loss: LossKind::Lace, tau: 0.0, ..quick(2) }, true);
    let ce = run(&f, &TrainConfig { loss: LossKind::Ce, ..quick(2) }, true);
    assert_eq!(checkpoint(&lace), checkpoint(&ce));
}

#[test]
fn report_matches_an_independent_tally() {
    let f = fixture(6);
    let cfg = quick(1);
    let out = run(&f, &cfg, true);
    let stats = class_frequencies(&f.train);
    let spec = LossSpec::plain(L);
    let report = evaluate(&out.model, &f.test, Some(&f.module), &cfg.retrieval, &stats, &spec).unwrap();
    let during = out.final_eval.as_ref().unwrap();
    assert_eq!((&report.base, &report.ret, &report.fused), (&during.base, &during.ret, &during.fused));

    let xs: Vec<&[f64]> = f.test.samples().iter().map(|s| s.features.as_slice()).collect();
    let seqs = f.module.tokens_batch(&xs, &vec![None; xs.len()], &cfg.retrieval).unwrap();
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let fwd = out.model.forward(f.test.feature_matrix().view(), Some(pad_batch(&refs).view())).unwrap();
    for branch in [Branch::Base, Branch::Ret, Branch::Fused] {
        let logits = fwd.logits(branch).unwrap().values;
        let mut confusion = Array2::<usize>::zeros((L, L));
        for (row, &y) in logits.rows().into_iter().zip(&f.test.labels()) {
            let mut best = 0;
            for c in 1..L {
                if row[c] > row[best] {
                    best = c;
                }
            }
            confusion[[y, best]] += 1;
        }
        let per_class: Vec<f64> = (0..L).map(|c| confusion[[c, c]] as f64 / confusion.row(c).sum() as f64).collect();
        let m = report.branch(branch).unwrap();
        assert_eq!(m.per_class, per_class.iter().map(|&a| Some(a)).collect::<Vec<_>>());
        let mean = per_class.iter().sum::<f64>() / L as f64;
        assert!((m.top1 - mean).abs() < 1e-12);
        assert!((m.balanced_error - (1.0 - mean)).abs() < 1e-12);
    }
}

#[test]
fn full_fraction_ablation_keeps_the_whole_pool() {
    let gen = GenConfig::default();
    let pool = generate_auxiliary(&gen, &AuxConfig::default()).unwrap();
    let all: Vec<usize> = (0..pool.len()).collect();
    assert_eq!(IndexAblation::Fraction(1.0).rows(&pool, 3).unwrap(), all);
    assert!(IndexAblation::PerClassCap(0).rows(&pool, 3).is_err());
    assert!(IndexAblation::ClassCount(pool.classes() + 1).rows(&pool, 3).is_err());
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn argmax(v: &[f64]) -> usize {
    (1..v.len()).fold(0, |b, c| if v[c] > v[b] { c } else { b })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fused_norm_bounds(
        r in prop::collection::vec(-5.0f64..5.0, 2..12),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(norm(&r) > 1e-3);
        let l = r.len();
        let scale = default_scale(l);
        let row = |v: &[f64]| Array2::from_shape_vec((1, l), v.to_vec()).unwrap();
        let parallel: Vec<f64> = r.iter().map(|x| x * c).collect();
        let same = fuse(row(&r).view(), row(&parallel).view(), scale, EPS_NORM).unwrap();
        prop_assert!((norm(same.as_slice().unwrap()) - l as f64).abs() < 1e-9);

        let mut o: Vec<f64> = (0..l).map(|i| ((i * 7 + 3) % 5) as f64 - 2.0).collect();
        let proj = o.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / norm(&r).powi(2);
        o.iter_mut().zip(&r).for_each(|(a, b)| *a -= proj * b);
        prop_assume!(norm(&o) > 1e-3);
        let orth = fuse(row(&r).view(), row(&o).view(), scale, EPS_NORM).unwrap();
        prop_assert!((norm(orth.as_slice().unwrap()) - l as f64 / 2f64.sqrt()).abs() < 1e-9);

        let any = fuse(row(&r).view(), row(&o.iter().rev().copied().collect::<Vec<_>>()).view(), scale, EPS_NORM).unwrap();
        prop_assert!(norm(any.as_slice().unwrap()) <= l as f64 + 1e-9);
    }

    #[test]
    fn fused_argmax_ignores_branch_rescaling(
        r in prop::collection::vec(-5.0f64..5.0, 3..10),
        c1 in 0.01f64..100.0,
        c2 in 0.01f64..100.0,
    ) {
        let l = r.len();
        let b: Vec<f64> = r.iter().enumerate().map(|(i, x)| (x * 1.7 + i as f64).sin()).collect();
        let row = |v: &[f64], c: f64| Array2::from_shape_vec((1, l), v.iter().map(|x| x * c).collect()).unwrap();
        let base = fuse(row(&r, 1.0).view(), row(&b, 1.0).view(), 1.0, EPS_NORM).unwrap();
        let scaled = fuse(row(&r, c1).view(), row(&b, c2).view(), 1.0, EPS_NORM).unwrap();
        let sorted = {
            let mut v = base.as_slice().unwrap().to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        prop_assume!(sorted[l - 1] - sorted[l - 2] > 1e-9);
        prop_assert_eq!(argmax(base.as_slice().unwrap()), argmax(scaled.as_slice().unwrap()));
    }
}
