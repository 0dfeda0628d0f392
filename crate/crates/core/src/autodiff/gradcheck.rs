use super::{AutodiffError, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Lower bound on the denominator of the relative error, so entries
    /// where both gradients are essentially zero do not blow up.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub per_param: Vec<ParamError>,
    pub entries_checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn eval<F>(params: &[(String, Tensor<f64>)], f: &F) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.is_stochastic() {
        return Err(AutodiffError::StochasticOp);
    }
    Ok((tape, vars, loss))
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central finite differences, for every entry of every parameter.
pub fn gradcheck<F>(params: &[(String, Tensor<f64>)], opts: GradcheckOptions, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss) = eval(params, &f)?;
    let grads = tape.backward(loss)?;
    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut entries = 0;
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[p].1.shape().to_vec()));
        let mut worst = ParamError {
            name: params[p].0.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..params[p].1.len() {
            let orig = params[p].1.data()[i];
            work[p].1.data_mut()[i] = orig + opts.eps;
            let (t, _, l) = eval(&work, &f)?;
            let plus = t.value(l).item();
            work[p].1.data_mut()[i] = orig - opts.eps;
            let (t, _, l) = eval(&work, &f)?;
            let minus = t.value(l).item();
            work[p].1.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > worst.max_rel_error || !rel.is_finite() {
                worst = ParamError {
                    max_rel_error: rel,
                    worst_index: i,
                    analytic: a,
                    numeric,
                    ..worst
                };
            }
            entries += 1;
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        max_rel_error,
        per_param,
        entries_checked: entries,
    })
}
