use ndarray::{Array2, ArrayView2};

use crate::error::{invalid_arg, Result};
use crate::real::Real;

/// Mean softmax cross-entropy of readout sums `o` (batch x classes) and the
/// gradient with respect to `o`.
pub fn cross_entropy_readout<F: Real>(o: ArrayView2<'_, F>, labels: &[usize]) -> Result<(f64, Array2<F>)> {
    let (batch, classes) = o.dim();
    if classes < 2 {
        return invalid_arg(format!("cross-entropy needs at least 2 classes, got {classes}"));
    }
    if labels.len() != batch {
        return invalid_arg(format!("{} labels for a batch of {batch}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return invalid_arg(format!("label {bad} out of range for {classes} classes"));
    }
    let mut loss = 0.0;
    let mut grad = Array2::<F>::zeros((batch, classes));
    for (b, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = o.row(b).iter().map(|x| x.as_f64()).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        loss += sum.ln() + max - row[label];
        for c in 0..classes {
            let p = exp[c] / sum;
            let target = if c == label { 1.0 } else { 0.0 };
            grad[[b, c]] = F::of((p - target) / batch as f64);
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Index of the largest readout sum per row.
pub fn predict<F: Real>(o: ArrayView2<'_, F>) -> Vec<usize> {
    o.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reference_values() {
        let (l, _) = cross_entropy_readout(array![[0.0f64, 0.0, 0.0]].view(), &[2]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
        let (l, _) = cross_entropy_readout(array![[0.0f64, 3f64.ln()]].view(), &[1]).unwrap();
        assert!((l - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((l - 0.28768).abs() < 1e-5);
        let (l, _) = cross_entropy_readout(array![[0.0f64, 1e4]].view(), &[1]).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let o = array![[0.3f64, -1.2, 0.8], [2.0, 0.1, -0.4]];
        let labels = [2, 0];
        let (_, g) = cross_entropy_readout(o.view(), &labels).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                let mut hi = o.clone();
                hi[[b, c]] += 1e-6;
                let mut lo = o.clone();
                lo[[b, c]] -= 1e-6;
                let fd = (cross_entropy_readout(hi.view(), &labels).unwrap().0
                    - cross_entropy_readout(lo.view(), &labels).unwrap().0)
                    / 2e-6;
                assert!((fd - g[[b, c]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(cross_entropy_readout(array![[0.0f64, 0.0]].view(), &[2]).is_err());
        assert!(cross_entropy_readout(array![[0.0f64]].view(), &[0]).is_err());
    }
}
