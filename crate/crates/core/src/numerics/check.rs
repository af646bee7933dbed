use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, ParamVars, Var};
use crate::numerics::params::Params;

/// Compare reverse-mode gradients against central finite differences.
///
/// `loss_fn` builds the scalar loss for whatever parameter values it is
/// handed, so the same closure serves both the analytic and the numeric
/// side. Returns the max over all parameter elements of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// The loss is evaluated twice at the base point first; a bitwise mismatch
/// means a non-deterministic loss and is an error.
pub fn finite_difference_check<F>(loss_fn: F, params: &Params, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamVars) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("finite_difference_check: eps must be > 0"));
    }

    let eval = |p: &Params| -> Result<(f64, Graph, Var)> {
        let mut graph = Graph::new();
        let vars = graph.register_params(p);
        let loss = loss_fn(&mut graph, &vars)?;
        let v = graph.value(loss);
        if !v.is_scalar() {
            return Err(Error::invalid("finite_difference_check: loss is not scalar"));
        }
        let value = v.scalar_value();
        Ok((value, graph, loss))
    };

    let (base, graph, loss) = eval(params)?;
    let (base2, _, _) = eval(params)?;
    if base.to_bits() != base2.to_bits() {
        return Err(Error::numeric(
            "finite_difference_check: loss_fn is not deterministic",
        ));
    }

    let analytic = graph.gradients(loss)?;

    let mut max_rel = 0.0f64;
    for (name, tensor) in params.iter() {
        let grad = &analytic[name];
        for idx in 0..tensor.numel() {
            let mut plus = params.clone();
            plus.get_mut(name)?.data_mut()[idx] += eps;
            let mut minus = params.clone();
            minus.get_mut(name)?.data_mut()[idx] -= eps;
            let (fp, _, _) = eval(&plus)?;
            let (fm, _, _) = eval(&minus)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
