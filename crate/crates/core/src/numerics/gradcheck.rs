//! Central finite-difference checks of backward rules.

use crate::error::Result;

use super::{Array2, Graph, OpKind, ParamStore, RngState, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries sampled per array; `None` checks every entry.
    pub max_entries: Option<usize>,
    pub seed: u64,
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_entries: Some(48),
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    /// `(array name, relative error)` for every checked input and parameter.
    pub arrays: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.arrays.iter().fold(0.0, |m, (_, e)| m.max(*e))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with a small floor so exactly-zero gradients
/// compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-7)
}

fn pick_indices(len: usize, limit: Option<usize>, rng: &mut RngState) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut idx: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut idx);
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Checks the gradient of a scalar function with respect to every parameter
/// in `store` and every array in `inputs`.
///
/// `build` must record a deterministic computation ending in a `1 × 1` node.
pub fn check_gradients<F>(
    name: &str,
    store: &ParamStore,
    inputs: &[(&str, Array2)],
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    let evaluate = |store: &ParamStore, inputs: &[Array2]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = inputs
            .iter()
            .map(|a| g.constant(a.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, store, &vars)?;
        Ok(g.scalar(loss))
    };

    let mut g = Graph::new();
    if let Some(kind) = opts.fault {
        g.inject_backward_fault(kind);
    }
    let vars = inputs
        .iter()
        .map(|(_, a)| g.input(a.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, store, &vars)?;
    g.backward(loss)?;
    let mut analytic_store = store.clone();
    analytic_store.zero_grads();
    g.accumulate_into(&mut analytic_store);

    let mut rng = RngState::new(opts.seed);
    let mut arrays = Vec::new();
    let mut work_store = store.clone();
    let mut work_inputs: Vec<Array2> = inputs.iter().map(|(_, a)| a.clone()).collect();

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for pname in &names {
        let len = store.value(pname).len();
        let idx = pick_indices(len, opts.max_entries, &mut rng);
        let analytic_grad = &analytic_store.get(pname).expect("cloned store").grad;
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work_store.value(pname).data()[i];
            work_store.value_mut(pname).data_mut()[i] = orig + opts.eps;
            let up = evaluate(&work_store, &work_inputs)?;
            work_store.value_mut(pname).data_mut()[i] = orig - opts.eps;
            let down = evaluate(&work_store, &work_inputs)?;
            work_store.value_mut(pname).data_mut()[i] = orig;
            n.push((up - down) / (2.0 * opts.eps));
            a.push(analytic_grad.data()[i]);
        }
        arrays.push((pname.clone(), relative_error(&a, &n)));
    }

    for (k, (iname, arr)) in inputs.iter().enumerate() {
        let idx = pick_indices(arr.len(), opts.max_entries, &mut rng);
        let analytic_grad = g
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Array2::zeros(arr.rows(), arr.cols()));
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work_inputs[k].data()[i];
            work_inputs[k].data_mut()[i] = orig + opts.eps;
            let up = evaluate(&work_store, &work_inputs)?;
            work_inputs[k].data_mut()[i] = orig - opts.eps;
            let down = evaluate(&work_store, &work_inputs)?;
            work_inputs[k].data_mut()[i] = orig;
            n.push((up - down) / (2.0 * opts.eps));
            a.push(analytic_grad.data()[i]);
        }
        arrays.push((iname.to_string(), relative_error(&a, &n)));
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        arrays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_gaussian;

    #[test]
    fn catches_injected_fault() {
        let mut rng = RngState::new(5);
        let x = sample_gaussian(&mut rng, 3, 4);
        let w = sample_gaussian(&mut rng, 3, 4);
        let build = move |g: &mut Graph, _: &ParamStore, v: &[Var]| {
            let y = g.tanh(v[0])?;
            g.weighted_sum(y, w.clone())
        };
        let store = ParamStore::new();
        let ok = check_gradients("tanh", &store, &[("x", x.clone())], &build, &Default::default())
            .unwrap();
        assert!(ok.passes(1e-4), "{ok:?}");
        let opts = GradCheckOptions {
            fault: Some(OpKind::Tanh),
            ..Default::default()
        };
        let bad = check_gradients("tanh", &store, &[("x", x)], &build, &opts).unwrap();
        assert!(!bad.passes(1e-4));
    }
}
