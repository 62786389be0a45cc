//! Central finite-difference gradient verification.
//!
//! The numeric derivative uses the fourth-order central stencil
//! `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
//!
//! The function under test is reduced to a scalar by a fixed random
//! projection of its output, so every output element contributes. Probes are
//! drawn at random from the inputs and trainable parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub probes: usize,
    pub step: f64,
    pub seed: u64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            probes: 50,
            step: 1e-4,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.probes > 0 && self.max_rel_err < tol
    }
}

#[derive(Clone, Copy)]
enum Target {
    Input(usize, usize),
    Param(ParamId, usize),
}

fn projected<F>(store: &ParamStore, inputs: &[Tensor], weights: &Tensor, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::inference(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape
        .data(out)
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum())
}

/// Compare autodiff against central differences on random probes.
pub fn check<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    cfg: GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let weights = Tensor::from_fn(tape.shape(out), |_| rng.gen_range(-1.0..1.0));
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod)?;
    let grads = tape.backward(loss)?;

    let mut targets = Vec::new();
    for (k, t) in inputs.iter().enumerate() {
        if !t.is_empty() {
            targets.push((k, true));
        }
    }
    let params: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.trainable && !p.tensor.is_empty())
        .map(|(id, _)| id)
        .collect();
    for k in 0..params.len() {
        targets.push((k, false));
    }

    let mut report = GradCheckReport {
        probes: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    if targets.is_empty() {
        return Ok(report);
    }
    let mut work_store = store.clone();
    let mut work_inputs: Vec<Tensor> = inputs.to_vec();
    for _ in 0..cfg.probes {
        let (k, is_input) = targets[rng.gen_range(0..targets.len())];
        let target = if is_input {
            Target::Input(k, rng.gen_range(0..inputs[k].len()))
        } else {
            let id = params[k];
            Target::Param(id, rng.gen_range(0..store.get(id).tensor.len()))
        };
        let analytic = match target {
            Target::Input(k, j) => grads.wrt(vars[k]).map_or(0.0, |g| g[j]),
            Target::Param(id, j) => grads.param(id).map_or(0.0, |g| g[j]),
        };
        let mut eval = |delta: f64| -> Result<f64> {
            match target {
                Target::Input(k, j) => {
                    let orig = inputs[k].data()[j];
                    work_inputs[k].data_mut()[j] = orig + delta;
                    let v = projected(store, &work_inputs, &weights, &f);
                    work_inputs[k].data_mut()[j] = orig;
                    v
                }
                Target::Param(id, j) => {
                    let orig = store.tensor(id).data()[j];
                    work_store.get_mut(id).tensor.data_mut()[j] = orig + delta;
                    let v = projected(&work_store, inputs, &weights, &f);
                    work_store.get_mut(id).tensor.data_mut()[j] = orig;
                    v
                }
            }
        };
        let h = cfg.step;
        let numeric = (8.0 * (eval(h)? - eval(-h)?) - (eval(2.0 * h)? - eval(-2.0 * h)?)) / (12.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        let rel = (analytic - numeric).abs() / denom;
        report.probes += 1;
        if rel > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = report.max_rel_err.max(rel);
            let what = match target {
                Target::Input(k, j) => format!("input {k}[{j}]"),
                Target::Param(id, j) => format!("{}[{j}]", store.get(id).name),
            };
            report.worst = format!("{what}: autodiff {analytic:.9e} vs numeric {numeric:.9e}");
        }
    }
    Ok(report)
}
