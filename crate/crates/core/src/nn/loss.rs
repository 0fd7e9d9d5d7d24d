pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, with the positive term weighted by
/// `pos_weight`. Returns `(loss, dloss/dlogit)`.
pub fn bce_with_logits(z: f64, target: bool, pos_weight: f64) -> (f64, f64) {
    // ln σ(z) = −softplus(−z), ln(1 − σ(z)) = −softplus(z)
    let softplus = |t: f64| t.max(0.0) + (-t.abs()).exp().ln_1p();
    let p = sigmoid(z);
    if target {
        (pos_weight * softplus(-z), pos_weight * (p - 1.0))
    } else {
        (softplus(z), p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_formula() {
        for &z in &[-4.0, -0.3, 0.0, 0.7, 5.0] {
            let p = 1.0 / (1.0 + f64::exp(-z));
            let (l1, _) = bce_with_logits(z, true, 1.0);
            let (l0, _) = bce_with_logits(z, false, 1.0);
            assert!((l1 + p.ln()).abs() < 1e-12);
            assert!((l0 + (1.0 - p).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        for &t in &[true, false] {
            for &z in &[-2.0, 0.1, 3.0] {
                let h = 1e-6;
                let fd = (bce_with_logits(z + h, t, 2.5).0 - bce_with_logits(z - h, t, 2.5).0) / (2.0 * h);
                assert!((fd - bce_with_logits(z, t, 2.5).1).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        assert!(bce_with_logits(800.0, false, 1.0).0.is_finite());
        assert!(bce_with_logits(-800.0, true, 1.0).0.is_finite());
        assert_eq!(sigmoid(-800.0), 0.0);
    }
}
