use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Area under the ROC curve of the learned off-diagonal weights, with true
/// edges (`truth > 0`) as positives. Tied scores count one half. `None` when
/// the truth has no edges or no non-edges.
pub fn graph_recovery_score(learned: &Tensor, truth: &Tensor) -> Result<Option<f64>> {
    let s = learned.shape();
    if s.len() != 2 || s[0] != s[1] || truth.shape() != s {
        return Err(Error::shape(
            "graph_recovery_score",
            format!("{s:?} vs {:?}", truth.shape()),
        ));
    }
    let n = s[0];
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                scored.push((learned.get(&[i, j]), truth.get(&[i, j]) > 0.0));
            }
        }
    }
    let pos = scored.iter().filter(|(_, t)| *t).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann–Whitney: sum of average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < scored.len() {
        let mut end = k;
        while end + 1 < scored.len() && scored[end + 1].0 == scored[k].0 {
            end += 1;
        }
        let avg_rank = (k + end) as f64 / 2.0 + 1.0;
        let hits = scored[k..=end].iter().filter(|(_, t)| *t).count();
        rank_sum += avg_rank * hits as f64;
        k = end + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_uninformative() {
        let truth = Tensor::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        assert_eq!(graph_recovery_score(&truth, &truth).unwrap(), Some(1.0));
        let flat = Tensor::full(&[3, 3], 1.0 / 3.0);
        assert_eq!(graph_recovery_score(&flat, &truth).unwrap(), Some(0.5));
        assert_eq!(
            graph_recovery_score(&flat, &Tensor::zeros(&[3, 3])).unwrap(),
            None
        );
    }
}
