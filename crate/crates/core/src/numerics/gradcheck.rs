//! Central finite-difference checks of the reverse-mode gradients.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::error::Result;
use super::graph::{Graph, Var};
use super::tensor::{ParamStore, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub max_rel_error: f64,
    /// `name[index]` of the element with the largest error.
    pub worst: String,
    pub elements: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of `f` against central differences over
/// every element of every trainable parameter in `store`.
pub fn check<F>(label: &str, store: &mut ParamStore, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    g.accumulate_param_grads(store);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        Ok(g.value(loss)[0])
    };

    let mut report = GradCheckReport {
        label: label.to_string(),
        max_rel_error: 0.0,
        worst: String::new(),
        elements: 0,
    };
    for pi in 0..store.len() {
        let Some(analytic) = store.by_index(pi).tensor.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for (j, &a) in analytic.iter().enumerate() {
            let orig = store.by_index(pi).tensor.data()[j];
            store.by_index_mut(pi).tensor.data_mut()[j] = orig + h;
            let plus = eval(store)?;
            store.by_index_mut(pi).tensor.data_mut()[j] = orig - h;
            let minus = eval(store)?;
            store.by_index_mut(pi).tensor.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.elements += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = format!("{}[{j}]", store.by_index(pi).name);
            }
        }
    }
    Ok(report)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduces `y` to a scalar with fixed random weights so every output element
/// contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = random_tensor(rng, g.shape(y));
    let w = g.constant(w);
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

/// Gradient checks for every registered op on randomized inputs (dims ≤ 8).
pub fn op_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    macro_rules! case {
        ($label:expr, [$(($name:expr, $shape:expr)),*], |$g:ident, $s:ident, $r:ident| $body:expr) => {{
            let mut store = ParamStore::new();
            $( store.insert($name, random_tensor(&mut rng, &$shape))?; )*
            let wseed: u64 = rng.random();
            let rep = check($label, &mut store, DEFAULT_STEP, |$g: &mut Graph, $s: &ParamStore| {
                let mut $r = ChaCha8Rng::seed_from_u64(wseed);
                let y: Var = $body;
                weighted_sum($g, y, &mut $r)
            })?;
            reports.push(rep);
        }};
    }

    case!("matmul", [("a", [2, 3, 4]), ("b", [4, 5])], |g, s, _r| {
        let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
        g.matmul(a, b)?
    });
    case!("matmul_batched", [("a", [2, 3, 4]), ("b", [2, 4, 3])], |g, s, _r| {
        let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
        g.matmul(a, b)?
    });
    case!("add_bias", [("a", [3, 4]), ("b", [4])], |g, s, _r| {
        let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
        g.add(a, b)?
    });
    case!("mul", [("a", [3, 4]), ("b", [3, 4])], |g, s, _r| {
        let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
        g.mul(a, b)?
    });
    case!("scale", [("a", [5])], |g, s, _r| {
        let a = g.param(s, "a")?;
        g.scale(a, -1.7)?
    });
    case!("softmax_last", [("a", [3, 6])], |g, s, _r| {
        let a = g.param(s, "a")?;
        g.softmax(a, 1)?
    });
    case!("softmax_inner", [("a", [3, 4, 2])], |g, s, _r| {
        let a = g.param(s, "a")?;
        g.softmax(a, 1)?
    });
    case!(
        "layer_norm",
        [("x", [3, 8]), ("gamma", [8]), ("beta", [8])],
        |g, s, _r| {
            let (x, ga, be) = (g.param(s, "x")?, g.param(s, "gamma")?, g.param(s, "beta")?);
            g.layer_norm(x, ga, be, 1e-5)?
        }
    );
    case!("gelu", [("a", [7])], |g, s, _r| {
        let a = g.param(s, "a")?;
        g.gelu(a)?
    });
    case!("embedding_lookup", [("table", [6, 4])], |g, s, _r| {
        let t = g.param(s, "table")?;
        g.embedding(t, &[1, 3, 3, 0, 5], &[5])?
    });
    case!("concat", [("a", [2, 3, 4]), ("b", [2, 2, 4])], |g, s, _r| {
        let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
        g.concat(&[a, b], 1)?
    });
    case!("slice", [("a", [2, 6, 3])], |g, s, _r| {
        let a = g.param(s, "a")?;
        g.slice(a, 1, 2..5)?
    });
    case!("transpose", [("a", [2, 3, 4, 2])], |g, s, _r| {
        let a = g.param(s, "a")?;
        g.transpose(a, 1, 2)?
    });
    case!("reshape", [("a", [2, 6])], |g, s, _r| {
        let a = g.param(s, "a")?;
        g.reshape(a, &[3, 4])?
    });
    case!("select_rows", [("x", [2, 3, 4]), ("pad", [4])], |g, s, _r| {
        let (x, p) = (g.param(s, "x")?, g.param(s, "pad")?);
        g.select_rows(x, p, &[true, false, true, false, false, true])?
    });
    case!("cross_entropy", [("logits", [2, 3, 5])], |g, s, _r| {
        let l = g.param(s, "logits")?;
        g.cross_entropy(l, &[1, 0, 4, 2, 0, 3], Some(0))?
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for rep in op_suite(7).unwrap() {
            assert!(rep.passed(), "{rep:?}");
            assert!(rep.elements > 0);
        }
    }

    #[test]
    fn checker_detects_a_wrong_gradient() {
        // d/dx of x·stop(x) is x, not 2x; a constant copy fakes a broken op.
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(vec![2], vec![0.5, -1.5]).unwrap()).unwrap();
        let rep = check("broken", &mut store, DEFAULT_STEP, |g, s| {
            let x = g.param(s, "x")?;
            let frozen = g.constant(s.get("x").unwrap().clone());
            let y = g.mul(x, frozen)?;
            g.sum(y)
        })
        .unwrap();
        assert!(!rep.passed());
    }
}
