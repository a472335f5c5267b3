use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let analytic = analytic_grad(&f, x)?;
    let numeric = numeric_grad(&f, x, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn analytic_grad<F>(f: &F, x: &Tensor) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_requires_grad(true));
    let y = f(&mut tape, xv)?;
    check_scalar(&tape, y)?;
    tape.backward(y)?;
    Ok(tape
        .grad(xv)
        .map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec))
}

pub fn numeric_grad<F>(f: &F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(t);
        let y = f(&mut tape, xv)?;
        check_scalar(&tape, y)?;
        Ok(tape.value(y)[0])
    };
    let mut probe = x.clone().with_requires_grad(false);
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.values_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.values_mut()[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + 1e-12))
        .fold(0.0, f64::max)
}

fn check_scalar(tape: &Tape, y: Var) -> Result<()> {
    if tape.value(y).len() != 1 {
        return Err(Error::contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.shape(y)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_is_exact() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 4.0, 0.0, -0.7]).unwrap();
        let f = |tape: &mut Tape, v: Var| Ok(tape.sum(v));
        assert_eq!(analytic_grad(&f, &x).unwrap(), vec![1.0; 6]);
        assert!(grad_check(f, &x, 1e-6).unwrap() < 1e-10);
    }

    #[test]
    fn non_scalar_is_rejected() {
        let x = Tensor::zeros(&[2]);
        let f = |_: &mut Tape, v: Var| Ok(v);
        assert!(matches!(grad_check(f, &x, 1e-6), Err(Error::Contract(_))));
    }
}
