//! Pool-adjacent-violators for a total order.

/// Least-squares nondecreasing fit to `y` with unit weights.
pub fn pava(y: &[f64]) -> Vec<f64> {
    // Each block: (sum, count). Blocks are merged while their means decrease.
    let mut sums: Vec<f64> = Vec::with_capacity(y.len());
    let mut counts: Vec<usize> = Vec::with_capacity(y.len());
    for &v in y {
        sums.push(v);
        counts.push(1);
        while sums.len() > 1 {
            let k = sums.len() - 1;
            if sums[k - 1] * counts[k] as f64 > sums[k] * counts[k - 1] as f64 {
                let (s, c) = (sums.pop().unwrap(), counts.pop().unwrap());
                sums[k - 1] += s;
                counts[k - 1] += c;
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in sums.into_iter().zip(counts) {
        let mean = s / c as f64;
        out.extend(std::iter::repeat_n(mean, c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_input_is_unchanged() {
        assert_eq!(pava(&[1.0, 2.0, 2.0, 5.0]), vec![1.0, 2.0, 2.0, 5.0]);
    }

    #[test]
    fn violators_are_pooled() {
        assert_eq!(pava(&[2.0, 1.0]), vec![1.5, 1.5]);
        assert_eq!(pava(&[1.0, 3.0, 2.0, 0.0]), vec![1.0, 5.0 / 3.0, 5.0 / 3.0, 5.0 / 3.0]);
    }

    #[test]
    fn empty_input() {
        assert!(pava(&[]).is_empty());
    }
}
