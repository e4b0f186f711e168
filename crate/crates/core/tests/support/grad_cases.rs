//! Random gradient-check instances for every backward pass. Each case
//! returns the worst relative error over the sampled coordinates.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rac_core::autodiff::{
    affine_backward, affine_forward, embed_pool_backward, embed_pool_forward, grad_check, Pooling, PAD,
};
use rac_core::dataspace::ClassStats;
use rac_core::fusion::{fuse, fuse_backward, ModelSpec, RacModel, EPS_NORM};
use rac_core::losses::{adjusted_ce, balce_spec, lace_spec, ldam_spec, LossSpec};
use rac_core::retrieval::{TextEncoderSpec, Tokenizer};

pub const COORDS: usize = 40;

pub type Case = fn(u64) -> f64;

pub const CASES: [(&str, Case); 5] = [
    ("affine", affine),
    ("embedding pool", embed_pool),
    ("fusion normalization", fusion),
    ("adjusted loss", loss),
    ("end-to-end graph", rac_graph),
];

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// `sum(out * r)` so that the upstream gradient is `r`.
fn dot(a: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (a * r).sum()
}

pub fn affine(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, m) = (rng.random_range(1..6), rng.random_range(1..7), rng.random_range(1..6));
    let x = normal(&mut rng, n, d);
    let w = normal(&mut rng, d, m);
    let b = normal(&mut rng, 1, m);
    let r = normal(&mut rng, n, m);
    let g = affine_backward(x.view(), w.view(), r.view()).unwrap();
    let analytic = [g.x, g.w, g.b.insert_axis(Axis(0))];
    let mut inputs = [x, w, b];
    grad_check(&mut inputs, &analytic, COORDS, seed, |p| {
        let out = affine_forward(p[0].view(), p[1].view(), p[2].row(0)).unwrap();
        dot(&out, &r)
    })
    .max_rel_error
}

pub fn embed_pool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, s, v, d) = (
        rng.random_range(1..5),
        rng.random_range(1..9),
        rng.random_range(2..12),
        rng.random_range(1..6),
    );
    let mode = if seed % 2 == 0 { Pooling::Mean } else { Pooling::Sum };
    let ids = Array2::from_shape_simple_fn((n, s), || {
        if rng.random_bool(0.2) { PAD } else { rng.random_range(1..v as u32) }
    });
    let table = normal(&mut rng, v, d);
    let r = normal(&mut rng, n, d);
    let mut g = Array2::zeros((v, d));
    embed_pool_backward(ids.view(), r.view(), mode, &mut g).unwrap();
    let mut inputs = [table];
    grad_check(&mut inputs, &[g], COORDS, seed, |p| {
        dot(&embed_pool_forward(ids.view(), p[0].view(), mode).unwrap(), &r)
    })
    .max_rel_error
}

pub fn fusion(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, l) = (rng.random_range(1..5), rng.random_range(2..9));
    let scale = l as f64 / 2.0;
    let ret = normal(&mut rng, n, l);
    let base = normal(&mut rng, n, l);
    let r = normal(&mut rng, n, l);
    let g = fuse_backward(ret.view(), base.view(), r.view(), scale, EPS_NORM).unwrap();
    let mut inputs = [ret, base];
    grad_check(&mut inputs, &[g.ret, g.base], COORDS, seed, |p| {
        dot(&fuse(p[0].view(), p[1].view(), scale, EPS_NORM).unwrap(), &r)
    })
    .max_rel_error
}

fn random_spec(rng: &mut ChaCha8Rng, l: usize) -> LossSpec {
    let counts: Vec<usize> = (0..l).map(|_| rng.random_range(1..500)).collect();
    let stats = ClassStats::from_counts(counts);
    let spec = match rng.random_range(0..4) {
        0 => LossSpec::plain(l),
        1 => balce_spec(&stats).unwrap(),
        2 => lace_spec(&stats, rng.random_range(0.0..2.0)).unwrap(),
        _ => ldam_spec(&stats).unwrap(),
    };
    spec.with_epsilon(rng.random_range(0.0..0.3))
}

pub fn loss(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, l) = (rng.random_range(1..6), rng.random_range(2..9));
    let spec = random_spec(&mut rng, l);
    let z = normal(&mut rng, n, l) * 3.0;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
    let out = adjusted_ce(z.view(), &labels, &spec).unwrap();
    let mut inputs = [z];
    grad_check(&mut inputs, &[out.grad], COORDS, seed, |p| {
        adjusted_ce(p[0].view(), &labels, &spec).unwrap().loss
    })
    .max_rel_error
}

/// Hidden-layer base head, learned text encoder, fusion and loss, checked
/// with respect to every parameter.
pub fn rac_graph(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, l) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(2..6));
    let words: Vec<String> = (0..rng.random_range(2..8)).map(|i| format!("w{i}")).collect();
    let tokenizer = Tokenizer::fit(words.iter().map(String::as_str), 76);
    let v = tokenizer.vocab_size() as u32;
    let spec = ModelSpec {
        hidden: Some(rng.random_range(1..6)),
        text: TextEncoderSpec {
            embed_dim: rng.random_range(1..6),
            pooling: if seed % 2 == 0 { Pooling::Mean } else { Pooling::Sum },
            seed,
            ..TextEncoderSpec::default()
        },
        seed,
        ..RacModel::default_spec(l, d)
    };
    let mut model = RacModel::new(spec, Some(&tokenizer), None).unwrap();
    // Zero biases put all-PAD rows on the kink of the branch norm.
    for p in model.params_mut() {
        let (r, c) = p.value.dim();
        p.value.assign(&normal(&mut rng, r, c));
    }
    let x = normal(&mut rng, n, d);
    let s = rng.random_range(1..7);
    let tokens = Array2::from_shape_simple_fn((n, s), || {
        if rng.random_bool(0.2) { PAD } else { rng.random_range(1..v) }
    });
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
    let loss_spec = random_spec(&mut rng, l);

    let fwd = model.forward(x.view(), Some(tokens.view())).unwrap();
    let out = adjusted_ce(fwd.output(&model.spec).view(), &labels, &loss_spec).unwrap();
    model.zero_grad();
    model.backward(&fwd, x.view(), Some(tokens.view()), out.grad.view()).unwrap();
    let analytic: Vec<Array2<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    let mut inputs: Vec<Array2<f64>> = model.params().iter().map(|p| p.value.clone()).collect();

    let mut probe = model.clone();
    grad_check(&mut inputs, &analytic, COORDS, seed, |p| {
        for (param, value) in probe.params_mut().into_iter().zip(p) {
            param.value.assign(value);
        }
        let f = probe.forward(x.view(), Some(tokens.view())).unwrap();
        adjusted_ce(f.output(&probe.spec).view(), &labels, &loss_spec).unwrap().loss
    })
    .max_rel_error
}
