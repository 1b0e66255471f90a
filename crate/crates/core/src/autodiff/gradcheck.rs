//! Central finite-difference checking of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::tensor::TensorError;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    /// `|analytic - numeric|_inf / max(1, |numeric|_inf)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    pub total: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many coordinates per parameter (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Compares backward-sweep gradients of every trainable parameter against
/// central differences of `forward`, which must build a scalar loss on the
/// fresh tape it is handed and must be deterministic.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    options: &GradCheckOptions,
    mut forward: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, TensorError>,
{
    fn eval<F>(forward: &mut F, store: &ParamStore) -> Result<f64, TensorError>
    where
        F: FnMut(&ParamStore, &mut Tape) -> Result<Var, TensorError>,
    {
        let mut tape = Tape::new();
        let loss = forward(store, &mut tape)?;
        tape.value(loss)
            .item()
            .ok_or_else(|| TensorError::Contract("forward did not return a scalar".into()))
    }

    let first = eval(&mut forward, store)?;
    let second = eval(&mut forward, store)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::Contract(format!(
            "forward is not deterministic ({first} vs {second}); disable augmentation and dropout"
        )));
    }

    let analytic: Vec<Option<Vec<f64>>> = {
        let mut tape = Tape::new();
        let loss = forward(store, &mut tape)?;
        let grads = tape.backward(loss)?;
        store.load_grads(&tape, &grads);
        store
            .iter()
            .map(|p| p.trainable.then(|| p.grad.data().to_vec()))
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for (id, analytic) in ids.into_iter().zip(analytic) {
        let Some(analytic) = analytic else { continue };
        let total = analytic.len();
        let coords: Vec<usize> = match options.max_coords {
            Some(k) if k < total => {
                let mut c = sample(&mut rng, total, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..total).collect(),
        };
        let mut max_diff = 0.0f64;
        let mut max_numeric = 0.0f64;
        for &k in &coords {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + options.epsilon;
            let plus = eval(&mut forward, store);
            store.get_mut(id).value.data_mut()[k] = orig - options.epsilon;
            let minus = eval(&mut forward, store);
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * options.epsilon);
            max_diff = max_diff.max((analytic[k] - numeric).abs());
            max_numeric = max_numeric.max(numeric.abs());
        }
        report.params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: max_diff / max_numeric.max(1.0),
            checked: coords.len(),
            total,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::NdArray;
    use rand::Rng;

    #[test]
    fn linear_layer_is_exact_up_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let w = store
            .register(
                "w",
                NdArray::new([5, 10], (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                true,
            )
            .unwrap();
        let b = store
            .register("b", NdArray::new([5], vec![0.1; 5]).unwrap(), true)
            .unwrap();
        let x = NdArray::new([3, 10], (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let report = check_gradients(&mut store, &GradCheckOptions::default(), |s, t| {
            let xv = t.constant(x.clone())?;
            let (wv, bv) = (t.param(s, w), t.param(s, b));
            let y = t.linear(xv, wv, Some(bv))?;
            t.sum(y)
        })
        .unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn nondeterministic_forward_rejected() {
        let mut store = ParamStore::new();
        let w = store.register("w", NdArray::scalar(1.0), true).unwrap();
        let mut calls = 0.0;
        let err = check_gradients(&mut store, &GradCheckOptions::default(), |s, t| {
            calls += 1.0;
            let wv = t.param(s, w);
            t.scale(wv, calls)
        })
        .unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
    }
}
