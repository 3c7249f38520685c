//! Central finite differences, used to cross-check the tape's backward pass.

use super::params::ParamSet;
use super::tape::Gradients;
use super::tensor::Tensor;
use super::AutodiffError;

/// Numeric gradient of `f` with respect to every scalar in `params`,
/// estimated as (f(x + h) - f(x - h)) / 2h.
pub fn central_difference<F>(
    params: &ParamSet,
    h: f64,
    mut f: F,
) -> Result<Gradients, AutodiffError>
where
    F: FnMut(&ParamSet) -> Result<f64, AutodiffError>,
{
    let mut out = Gradients::default();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let shape = params.get(&name)?.shape.clone();
        let len: usize = shape.iter().product();
        let mut grad = Tensor::zeros(&shape);
        for i in 0..len {
            let mut plus = params.clone();
            plus.get_mut(&name)?.data[i] += h;
            let mut minus = params.clone();
            minus.get_mut(&name)?.data[i] -= h;
            grad.data[i] = (f(&plus)? - f(&minus)?) / (2.0 * h);
        }
        out.by_name.insert(name, grad);
    }
    Ok(out)
}

/// Worst relative disagreement between two gradient maps. Parameters absent
/// from one side count as zero there.
pub fn max_rel_err(analytic: &Gradients, numeric: &Gradients) -> f64 {
    let mut worst: f64 = 0.0;
    let names: std::collections::BTreeSet<&String> =
        analytic.by_name.keys().chain(numeric.by_name.keys()).collect();
    for name in names {
        let a = analytic.by_name.get(name);
        let n = numeric.by_name.get(name);
        let len = a.or(n).map_or(0, |t| t.data.len());
        for i in 0..len {
            let av = a.map_or(0.0, |t| t.data[i]);
            let nv = n.map_or(0.0, |t| t.data[i]);
            let denom = av.abs().max(nv.abs()).max(1.0);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}
