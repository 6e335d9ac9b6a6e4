use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::{Tape, Tensor, Var};

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Shape(format!("grad_check needs a scalar function, got {} values", v.len())));
    }
    Ok(v.data()[0])
}

/// Largest relative error between tape gradients and central differences
/// over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_coords(&f, inputs, step, &coords)
}

/// Like [`grad_check`] but probes at most `per_input` seeded random
/// coordinates of each input.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor<f64>], step: f64, per_input: usize, seed: u64) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.len() <= per_input {
                (0..t.len()).collect()
            } else {
                let mut v = sample(&mut rng, t.len(), per_input).into_vec();
                v.sort_unstable();
                v
            }
        })
        .collect();
    check_coords(&f, inputs, step, &coords)
}

fn check_coords<F>(f: &F, inputs: &[Tensor<f64>], step: f64, coords: &[Vec<usize>]) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, idx) in coords.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].shape().to_vec());
        let analytic = grads.get(vars[k]).unwrap_or(&zeros);
        for &i in idx {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + step;
            let fp = eval(f, &probe)?;
            probe[k].data_mut()[i] = x0 - step;
            let fm = eval(f, &probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}
