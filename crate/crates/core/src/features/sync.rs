//! Interpersonal synchrony: Pearson correlation, dynamic time warping and
//! peer averages.

/// Pearson correlation over the common prefix of `a` and `b`. Absent for
/// fewer than 3 points or a constant input.
pub fn pearson_sync(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 3 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale = |m: f64| 1e-24 * (m * m).max(1.0) * n as f64;
    if saa <= scale(ma) || sbb <= scale(mb) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Sakoe–Chiba half-width for series of lengths `n` and `m`.
pub fn dtw_band(n: usize, m: usize, fraction: f64) -> usize {
    let w = (fraction * n.max(m) as f64).ceil() as usize;
    w.max(n.abs_diff(m))
}

/// DTW distance with absolute local cost and steps (1,0), (0,1), (1,1).
/// `band` limits the alignment to `|i − j| ≤ band`; `None` is exact DTW.
pub fn dtw_distance(a: &[f64], b: &[f64], band: Option<usize>) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let w = band.unwrap_or(n.max(m)).max(n.abs_diff(m));
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.iter_mut().for_each(|c| *c = f64::INFINITY);
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(m);
        for j in lo..=hi {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (a[i - 1] - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Banded DTW with the configured band fraction.
pub fn dtw_sync(a: &[f64], b: &[f64], band_fraction: f64) -> f64 {
    dtw_distance(a, b, Some(dtw_band(a.len(), b.len(), band_fraction)))
}

/// Pointwise mean of the peers' series, excluding `exclude`. Series are cut
/// to the shortest length. Absent without peers.
pub fn peer_average(signals: &[(&str, &[f64])], exclude: &str) -> Option<Vec<f64>> {
    let peers: Vec<&[f64]> = signals
        .iter()
        .filter(|(id, _)| *id != exclude)
        .map(|(_, s)| *s)
        .collect();
    let len = peers.iter().map(|s| s.len()).min()?;
    let mut out = vec![0.0; len];
    for s in &peers {
        for (o, v) in out.iter_mut().zip(s.iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= peers.len() as f64);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct recursion over the DTW definition, memoised.
    fn dtw_oracle(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize, memo: &mut Vec<Vec<Option<f64>>>) -> f64 {
            if let Some(v) = memo[i][j] {
                return v;
            }
            let cost = (a[i] - b[j]).abs();
            let v = match (i, j) {
                (0, 0) => cost,
                (0, _) => cost + go(a, b, 0, j - 1, memo),
                (_, 0) => cost + go(a, b, i - 1, 0, memo),
                _ => {
                    cost + go(a, b, i - 1, j, memo)
                        .min(go(a, b, i, j - 1, memo))
                        .min(go(a, b, i - 1, j - 1, memo))
                }
            };
            memo[i][j] = Some(v);
            v
        }
        let mut memo = vec![vec![None; b.len()]; a.len()];
        go(a, b, a.len() - 1, b.len() - 1, &mut memo)
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 4.0, 2.0, 8.0];
        assert!((pearson_sync(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_sync(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson_sync(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pearson_sync(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn dtw_examples() {
        let x = [0.3, -1.0, 2.0, 0.0];
        assert_eq!(dtw_distance(&x, &x, Some(1)), 0.0);
        assert_eq!(dtw_distance(&[0.0, 0.0, 1.0], &[0.0, 1.0], None), 0.0);
        assert_eq!(dtw_distance(&[0.0, 1.0], &[2.0, 3.0], None), 4.0);
        assert_eq!(dtw_oracle(&[0.0, 1.0], &[2.0, 3.0]), 4.0);
        assert_eq!(dtw_band(900, 900, 0.1), 90);
        assert_eq!(dtw_band(10, 40, 0.1), 30);
    }

    #[test]
    fn peer_average_examples() {
        let a = [1.0, 1.0];
        let b = [3.0, 3.0];
        let me = [100.0, 100.0];
        let all: Vec<(&str, &[f64])> = vec![("a", &a), ("b", &b), ("me", &me)];
        assert_eq!(peer_average(&all, "me"), Some(vec![2.0, 2.0]));
        assert_eq!(peer_average(&all[..1], "me"), Some(vec![1.0, 1.0]));
        assert_eq!(peer_average(&all[2..], "me"), None);
    }

    proptest! {
        #[test]
        fn exact_dtw_matches_oracle(
            a in proptest::collection::vec(-3.0f64..3.0, 1..30),
            b in proptest::collection::vec(-3.0f64..3.0, 1..30),
        ) {
            let d = dtw_distance(&a, &b, None);
            prop_assert!((d - dtw_oracle(&a, &b)).abs() <= 1e-12);
            prop_assert_eq!(d, dtw_distance(&b, &a, None));
            prop_assert!(d >= 0.0);
            prop_assert!(dtw_sync(&a, &b, 0.1) >= d - 1e-12);
        }

        #[test]
        fn pearson_affine_invariant(
            v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40),
            s in 0.1f64..10.0,
            c in -10.0f64..10.0,
        ) {
            let a: Vec<f64> = v.iter().map(|p| p.0).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1).collect();
            if let Some(r) = pearson_sync(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let a2: Vec<f64> = a.iter().map(|x| s * x + c).collect();
                let r2 = pearson_sync(&a2, &b).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
            }
        }
    }
}
