use nag_tensor::gradcheck::{check, GradReport};
use nag_tensor::layers::{Attention, GruCell, Linear};
use nag_tensor::{init_params, NllGroup, ParamSpec, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_rows(rows, cols, v).unwrap()
}

fn assert_ok(what: &str, seed: u64, r: GradReport) {
    assert!(r.checked > 0, "{what}: nothing checked");
    assert!(r.max_rel_error < TOL, "{what} seed {seed}: {} ({})", r.max_rel_error, r.worst);
}

/// Random, non-zero weights everywhere (biases included).
fn store(spec: &ParamSpec, seed: u64) -> ParamStore<f64> {
    let base: ParamStore<f64> = init_params(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    ParamStore::from_tensors(base.iter().map(|(n, t)| {
        let v = t.data().iter().map(|_| rng.gen_range(-0.8..0.8)).collect();
        (n.to_string(), Tensor::new(t.shape().to_vec(), v).unwrap())
    }))
    .unwrap()
}

#[test]
fn linear_layer() {
    let lin = Linear::new("lin");
    let mut spec = ParamSpec::new();
    lin.declare(&mut spec, 4, 3);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = store(&spec, seed);
        let x = random(&mut rng, 2, 4);
        let k = random(&mut rng, 2, 3);
        let r = check(&s, &[x, k], STEP, |t, v| {
            let y = lin.forward(t, v[0])?;
            let y = t.tanh(y);
            let y = t.mul(y, v[1])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert_ok("linear", seed, r);
    }
}

#[test]
fn gru_cell() {
    let cell = GruCell::new("gru", 3, 5);
    let mut spec = ParamSpec::new();
    cell.declare(&mut spec);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = store(&spec, seed);
        let x = random(&mut rng, 2, 3);
        let h = random(&mut rng, 2, 5);
        let k = random(&mut rng, 2, 5);
        let r = check(&s, &[x, h, k], STEP, |t, v| {
            let y = cell.forward(t, v[0], v[1])?;
            let y = cell.forward(t, v[0], y)?;
            let y = t.mul(y, v[2])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert_ok("gru", seed, r);
    }
}

#[test]
fn embedding_lookup() {
    let mut spec = ParamSpec::new();
    spec.embedding("emb", 6, 4);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = store(&spec, seed);
        let k = random(&mut rng, 4, 4);
        let r = check(&s, &[k], STEP, |t, v| {
            let e = t.param("emb")?;
            let rows = t.lookup(e, &[1, 3, 1, 5])?;
            let y = t.tanh(rows);
            let y = t.mul(y, v[0])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert_ok("embedding", seed, r);
    }
}

#[test]
fn attention_layer() {
    let att = Attention::new("att", 4);
    let mut spec = ParamSpec::new();
    att.declare(&mut spec, 3, 5);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = store(&spec, seed);
        let key = random(&mut rng, 1, 3);
        let mem = random(&mut rng, 4, 5);
        let k = random(&mut rng, 1, 5);
        let r = check(&s, &[key, mem, k], STEP, |t, v| {
            let y = att.forward(t, v[0], v[1])?;
            let y = t.mul(y, v[2])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert_ok("attention", seed, r);
    }
}

#[test]
fn masked_softmax_and_nll_paths() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = ParamStore::<f64>::default();
        let logits = random(&mut rng, 2, 5);
        let k = random(&mut rng, 2, 5);
        let mut mask = Tensor::<f64>::zeros(2, 5);
        mask.data_mut()[1] = f64::NEG_INFINITY;
        mask.data_mut()[8] = f64::NEG_INFINITY;
        let r = check(&s, &[logits.clone(), k], STEP, |t, v| {
            let p = t.masked_softmax(v[0], &mask)?;
            let y = t.mul(p, v[1])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert_ok("masked_softmax", seed, r);

        let r = check(&s, &[logits], STEP, |t, v| {
            t.nll(
                v[0],
                vec![
                    NllGroup { candidates: vec![0, 2, 3, 4], targets: vec![3] },
                    NllGroup { candidates: vec![5, 6, 7, 9], targets: vec![5, 9] },
                ],
            )
        })
        .unwrap();
        assert_ok("nll", seed, r);
    }
}

#[test]
fn pooling_and_structural_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = ParamStore::<f64>::default();
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 2, 4);
        let k = random(&mut rng, 1, 8);
        let k2 = random(&mut rng, 4, 4);
        let r = check(&s, &[a, b, k, k2], STEP, |t, v| {
            let rows = t.concat_rows(&[v[0], v[1]])?;
            let pooled = t.max_pool_rows(rows)?;
            let mean = t.mean_rows(v[1]);
            let both = t.concat_cols(&[pooled, mean])?;
            let y = t.mul(both, v[2])?;
            let g = t.gather(&[(v[0], 2), (v[1], 0), (v[0], 2)])?;
            let scattered = t.index_add(g, &[3, 0, 3], 4)?;
            let sig = t.sigmoid(scattered);
            let z = t.mul(sig, v[3])?;
            let z = t.scale(z, 0.5);
            let y = t.sum(y);
            let z = t.sum(z);
            let d = t.sub(y, z)?;
            Ok(d)
        })
        .unwrap();
        assert_ok("pooling", seed, r);
    }
}
