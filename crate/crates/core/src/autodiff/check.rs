use super::{AutodiffError, ParamSet, Tape, Tensor, Var};

/// Largest relative disagreement between the analytic gradient of a scalar
/// function of `x` and its central finite difference with step `eps`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check<F>(x: &Tensor<f64>, eps: f64, f: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<'_, f64>, Var) -> Result<Var, AutodiffError>,
{
    let mut params = ParamSet::new();
    params.insert("x", x.clone());
    gradient_check_params(&mut params, eps, |tape| {
        let x = tape.param("x")?;
        f(tape, x)
    })
}

/// [`gradient_check`] over every coordinate of every tensor in `params`.
pub fn gradient_check_params<F>(
    params: &mut ParamSet<f64>,
    eps: f64,
    f: F,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, AutodiffError>,
{
    params.zero_grads();
    {
        let mut tape = Tape::with_params(params);
        let out = f(&mut tape)?;
        tape.backward(out)?;
    }
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, t)| {
            t.grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    params.zero_grads();

    let eval = |params: &mut ParamSet<f64>| -> Result<f64, AutodiffError> {
        let mut tape = Tape::with_params(params);
        let out = f(&mut tape)?;
        tape.scalar(out)
    };

    let mut worst = 0f64;
    for (id, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = params.by_id(id).data()[i];
            params.by_id_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(params)?;
            params.by_id_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(params)?;
            params.by_id_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
