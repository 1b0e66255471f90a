use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use woundnet::autodiff::{check_gradients, GradCheckOptions, ParamId, ParamStore, Tape, Var};
use woundnet::{NdArray, TensorError};

const PRIMITIVE_TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> NdArray {
    let n = shape.iter().product();
    NdArray::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces a tensor output to a scalar with fixed random coefficients so
/// every output element contributes a distinct weight.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape().to_vec();
    let r = tape.constant(random(&shape, &mut rng))?;
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}

fn register(store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> ParamId {
    store.register(name, random(shape, rng), true).unwrap()
}

fn max_error<F>(store: &mut ParamStore, forward: F) -> f64
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, TensorError>,
{
    let report = check_gradients(store, &GradCheckOptions::default(), forward).unwrap();
    assert!(!report.params.is_empty());
    report.max_error()
}

#[test]
fn elementwise_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let a = register(&mut store, "a", &[2, 3, 4], &mut rng);
    let b = register(&mut store, "b", &[2, 3, 4], &mut rng);
    let err = max_error(&mut store, |s, t| {
        let (a, b) = (t.param(s, a), t.param(s, b));
        let sum = t.add(a, b)?;
        let prod = t.mul(sum, b)?;
        let r = t.relu(prod)?;
        let g = t.sigmoid(a)?;
        let k = t.scale(g, -1.7)?;
        let both = t.add(r, k)?;
        let m = t.mean(both)?;
        let p = project(t, both, 2)?;
        t.add(m, p)
    });
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn concat_along_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let a = register(&mut store, "a", &[2, 3, 4, 4], &mut rng);
    let b = register(&mut store, "b", &[2, 5, 4, 4], &mut rng);
    let err = max_error(&mut store, |s, t| {
        let (a, b) = (t.param(s, a), t.param(s, b));
        let c = t.concat(&[a, b], 1)?;
        assert_eq!(t.value(c).shape(), &[2, 8, 4, 4]);
        project(t, c, 3)
    });
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn conv2d_all_strides_and_paddings() {
    for (stride, padding, k) in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 1), (3, 2, 5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + stride as u64 * 7 + padding as u64);
        let mut store = ParamStore::new();
        let x = register(&mut store, "x", &[2, 3, 7, 6], &mut rng);
        let w = register(&mut store, "w", &[4, 3, k, k], &mut rng);
        let b = register(&mut store, "b", &[4], &mut rng);
        let err = max_error(&mut store, |s, t| {
            let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
            let y = t.conv2d(x, w, Some(b), stride, padding)?;
            project(t, y, 4)
        });
        assert!(err < PRIMITIVE_TOL, "stride {stride} padding {padding}: {err}");
    }
}

#[test]
fn pooling_and_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let x = register(&mut store, "x", &[2, 3, 6, 6], &mut rng);
    let w = register(&mut store, "w", &[4, 3], &mut rng);
    let b = register(&mut store, "b", &[4], &mut rng);
    let err = max_error(&mut store, |s, t| {
        let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let mp = t.max_pool2d(x, 2, 2)?;
        let p1 = project(t, mp, 6)?;
        let gap = t.global_avg_pool(x)?;
        let y = t.linear(gap, w, Some(b))?;
        let p2 = project(t, y, 7)?;
        t.add(p1, p2)
    });
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn batch_norm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let x = register(&mut store, "x", &[3, 2, 3, 3], &mut rng);
    let gamma = register(&mut store, "gamma", &[2], &mut rng);
    let beta = register(&mut store, "beta", &[2], &mut rng);
    let err = max_error(&mut store, |s, t| {
        let (x, g, b) = (t.param(s, x), t.param(s, gamma), t.param(s, beta));
        let (train, _) = t.batch_norm2d_train(x, g, b, 1e-5)?;
        let p1 = project(t, train, 9)?;
        let eval = t.batch_norm2d_eval(x, g, b, &[0.1, -0.2], &[0.8, 1.3], 1e-5)?;
        let p2 = project(t, eval, 10)?;
        t.add(p1, p2)
    });
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn weighted_bce_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let w = register(&mut store, "w", &[5, 6], &mut rng);
    let x = NdArray::new(vec![4, 6], (0..24).map(|i| (i as f64 * 0.37).sin() * 2.0).collect()).unwrap();
    let labels: Vec<f64> = (0..20).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
    let weights: Vec<f64> = labels.iter().map(|&y| if y == 1.0 { 2.5 } else { 0.6 }).collect();
    let err = max_error(&mut store, |s, t| {
        let w = t.param(s, w);
        let x = t.constant(x.clone())?;
        let z = t.linear(x, w, None)?;
        t.weighted_bce_with_logits(z, &labels, &weights)
    });
    assert!(err < PRIMITIVE_TOL, "{err}");
}

fn naive_conv(x: &NdArray, w: &NdArray, b: &[f64], stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [f, _, kh, kw] = w.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for s in 0..n {
        for o in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((s * c + ch) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w.data()[((o * c + ch) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((s * f + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![n, f, oh, ow], out)
}

#[test]
fn conv_matches_nested_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[2, 3, 8, 8], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let (shape, expected) = naive_conv(&x, &w, b.data(), 2, 1);
    assert_eq!(shape, [2, 4, 4, 4]);
    let mut t = Tape::new();
    let (xv, wv, bv) = (t.constant(x).unwrap(), t.constant(w).unwrap(), t.constant(b).unwrap());
    let y = t.conv2d(xv, wv, Some(bv), 2, 1).unwrap();
    assert_eq!(t.value(y).shape(), &shape[..]);
    for (a, e) in t.value(y).data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
}

fn two_losses(store: &ParamStore, t: &mut Tape, x: ParamId, w: ParamId) -> (Var, Var) {
    let (xv, wv) = (t.param(store, x), t.param(store, w));
    let y = t.conv2d(xv, wv, None, 1, 1).unwrap();
    let r = t.relu(y).unwrap();
    let l1 = project(t, r, 20).unwrap();
    let s = t.sigmoid(xv).unwrap();
    let l2 = project(t, s, 21).unwrap();
    (l1, l2)
}

fn grads_of(store: &mut ParamStore, build: impl Fn(&ParamStore, &mut Tape) -> Var) -> Vec<Vec<f64>> {
    let mut t = Tape::new();
    let loss = build(store, &mut t);
    let g = t.backward(loss).unwrap();
    store.load_grads(&t, &g);
    store.iter().map(|p| p.grad.data().to_vec()).collect()
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let x = register(&mut store, "x", &[1, 2, 5, 5], &mut rng);
    let w = register(&mut store, "w", &[3, 2, 3, 3], &mut rng);
    let (a, b) = (0.75, -2.5);
    let g1 = grads_of(&mut store, |s, t| two_losses(s, t, x, w).0);
    let g2 = grads_of(&mut store, |s, t| two_losses(s, t, x, w).1);
    let combined = grads_of(&mut store, |s, t| {
        let (l1, l2) = two_losses(s, t, x, w);
        let l1 = t.scale(l1, a).unwrap();
        let l2 = t.scale(l2, b).unwrap();
        t.add(l1, l2).unwrap()
    });
    for ((c, p), q) in combined.iter().zip(&g1).zip(&g2) {
        for ((c, p), q) in c.iter().zip(p).zip(q) {
            assert!((c - (a * p + b * q)).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_backward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let x = register(&mut store, "x", &[2, 2, 6, 6], &mut rng);
    let w = register(&mut store, "w", &[3, 2, 3, 3], &mut rng);
    let build = |s: &ParamStore, t: &mut Tape| {
        let (l1, l2) = two_losses(s, t, x, w);
        t.add(l1, l2).unwrap()
    };
    let first = grads_of(&mut store, build);
    let second = grads_of(&mut store, build);
    let bits = |g: &Vec<Vec<f64>>| g.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&first), bits(&second));
}

#[test]
fn unreachable_parameter_gets_zero_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let used = register(&mut store, "used", &[3], &mut rng);
    let unused = register(&mut store, "unused", &[3], &mut rng);
    store.get_mut(unused).grad = NdArray::full([3], 9.0);
    let mut t = Tape::new();
    let u = t.param(&store, used);
    let loss = t.sum(u).unwrap();
    let g = t.backward(loss).unwrap();
    store.load_grads(&t, &g);
    assert_eq!(store.get(unused).grad.data(), &[0.0; 3]);
    assert_eq!(store.get(used).grad.data(), &[1.0; 3]);
}

proptest! {
    #[test]
    fn conv_and_pool_shapes(
        n in 1usize..3, c in 1usize..4, h in 1usize..10, w in 1usize..10,
        f in 1usize..4, k in 1usize..5, stride in 1usize..4, padding in 0usize..3,
    ) {
        prop_assume!(k <= h + 2 * padding && k <= w + 2 * padding);
        let mut t = Tape::new();
        let x = t.constant(NdArray::full([n, c, h, w], 0.5)).unwrap();
        let wt = t.constant(NdArray::full([f, c, k, k], 0.1)).unwrap();
        let y = t.conv2d(x, wt, None, stride, padding).unwrap();
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        prop_assert_eq!(t.value(y).shape(), &[n, f, oh, ow][..]);
        if k <= h && k <= w {
            let p = t.max_pool2d(x, k, stride).unwrap();
            prop_assert_eq!(t.value(p).shape(), &[n, c, (h - k) / stride + 1, (w - k) / stride + 1][..]);
        }
        let g = t.global_avg_pool(x).unwrap();
        prop_assert_eq!(t.value(g).shape(), &[n, c][..]);
    }

    #[test]
    fn eval_batch_norm_is_pure(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 3, 4, 4], &mut rng);
        let run = |x: &NdArray| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone()).unwrap();
            let g = t.constant(NdArray::full([3], 1.5)).unwrap();
            let b = t.constant(NdArray::full([3], -0.5)).unwrap();
            let y = t.batch_norm2d_eval(xv, g, b, &[0.1, 0.2, 0.3], &[1.0, 2.0, 0.5], 1e-5).unwrap();
            t.value(y).clone()
        };
        prop_assert_eq!(run(&x), run(&x));
    }
}
