//! Segmentation losses (BCE, Dice, weighted total with a side output)
//! and the mean image-wise IoU / Dice metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probability clamp applied before logs so BCE stays finite.
pub const PROB_CLAMP: f64 = 1e-12;

/// Prediction/ground-truth pair, optionally with a half-resolution side
/// output pair.
#[derive(Debug, Clone)]
pub struct PredictionPair {
    /// (1,H,W) probabilities in (0,1).
    pub p: Tensor,
    /// (1,H,W) labels in {0,1}.
    pub g: Tensor,
    /// Optional (1,H/2,W/2) side prediction and label.
    pub side: Option<(Tensor, Tensor)>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub eps_dice: f64,
    pub eps_metric: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 0.1,
            eps_dice: 1e-4,
            eps_metric: 1e-6,
        }
    }
}

fn check_same_shape(p: &Tensor, g: &Tensor) -> Result<()> {
    if p.dims() != g.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs label {:?}",
            p.dims(),
            g.dims()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy with probabilities clamped to
/// [1e-12, 1-1e-12] before the logs.
pub fn bce(p: &Tensor, g: &Tensor) -> Result<f64> {
    check_same_shape(p, g)?;
    let mut s = 0.0;
    for (pv, gv) in p.data().iter().zip(g.data()) {
        let pc = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        s -= gv * pc.ln() + (1.0 - gv) * (1.0 - pc).ln();
    }
    Ok(s / p.len() as f64)
}

/// Laplace-smoothed Dice loss: 1 - (2 sum(P*G) + eps)/(sum P + sum G + eps).
pub fn dice_loss(p: &Tensor, g: &Tensor, eps: f64) -> Result<f64> {
    check_same_shape(p, g)?;
    let mut inter = 0.0;
    let mut total = 0.0;
    for (pv, gv) in p.data().iter().zip(g.data()) {
        inter += pv * gv;
        total += pv + gv;
    }
    Ok(1.0 - (2.0 * inter + eps) / (total + eps))
}

/// alpha1 * mean BCE + alpha2 * mean Dice + alpha3 * mean side BCE over
/// the batch. All pairs must carry a side output.
pub fn total_loss(batch: &[PredictionPair], w: &LossWeights) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sum_bce = 0.0;
    let mut sum_dice = 0.0;
    let mut sum_side = 0.0;
    for pair in batch {
        sum_bce += bce(&pair.p, &pair.g)?;
        sum_dice += dice_loss(&pair.p, &pair.g, w.eps_dice)?;
        let (ps, gs) = pair
            .side
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("missing side output pair".into()))?;
        sum_side += bce(ps, gs)?;
    }
    let b = batch.len() as f64;
    Ok(w.alpha1 * sum_bce / b + w.alpha2 * sum_dice / b + w.alpha3 * sum_side / b)
}

/// Mean image-wise IoU as a percentage. Predictions are binarized at
/// `threshold`; IoU per image is (TP+eps)/(TP+FP+FN+eps).
pub fn mi_iou(preds: &[Tensor], gts: &[Tensor], threshold: f64, eps: f64) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        check_same_shape(p, g)?;
        let (mut tp, mut fp, mut fal_n) = (0u64, 0u64, 0u64);
        for (pv, gv) in p.data().iter().zip(g.data()) {
            let pb = *pv > threshold;
            let gb = *gv > 0.5;
            match (pb, gb) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fal_n += 1,
                (false, false) => {}
            }
        }
        acc += (tp as f64 + eps) / ((tp + fp + fal_n) as f64 + eps);
    }
    Ok(acc / preds.len() as f64 * 100.0)
}

/// Mean image-wise Dice coefficient as a percentage; predictions may be
/// continuous (no binarization).
pub fn mi_dice(preds: &[Tensor], gts: &[Tensor], eps: f64) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        check_same_shape(p, g)?;
        let mut inter = 0.0;
        let mut total = 0.0;
        for (pv, gv) in p.data().iter().zip(g.data()) {
            inter += pv * gv;
            total += pv + gv;
        }
        acc += (2.0 * inter + eps) / (total + eps);
    }
    Ok(acc / preds.len() as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(h: usize, w: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(vec![1, h, w], v).unwrap()
    }

    #[test]
    fn bce_half_probability_is_ln2() {
        let p = t(2, 2, vec![0.5; 4]);
        let g = t(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        assert!((bce(&p, &g).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let g = t(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(bce(&g, &g).unwrap() < 1e-10);
    }

    #[test]
    fn bce_single_term_log() {
        let p = t(1, 1, vec![(-1.0f64).exp()]);
        let g = t(1, 1, vec![1.0]);
        assert!((bce(&p, &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bce_nonnegative() {
        let mut rng = Rng::new(100);
        for _ in 0..200 {
            let p = t(2, 2, (0..4).map(|_| rng.uniform(1e-9, 1.0 - 1e-9)).collect());
            let g = t(2, 2, (0..4).map(|_| f64::from(rng.next_u64() % 2 == 0)).collect());
            assert!(bce(&p, &g).unwrap() >= 0.0);
        }
    }

    #[test]
    fn dice_loss_cases() {
        let g = t(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(dice_loss(&g, &g, 1e-4).unwrap(), 0.0);
        let z = t(2, 2, vec![0.0; 4]);
        assert_eq!(dice_loss(&z, &z, 1e-4).unwrap(), 0.0);
        // G=[[1,1],[0,0]], P=[[0.5,0.5],[0,0]]:
        // 1 - (2*1 + 1e-4)/(1 + 2 + 1e-4) = 0.33332222...
        let g = t(2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        let p = t(2, 2, vec![0.5, 0.5, 0.0, 0.0]);
        let expect = 1.0 - (2.0 + 1e-4) / (3.0 + 1e-4);
        let got = dice_loss(&p, &g, 1e-4).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.333322).abs() < 1e-6);
    }

    #[test]
    fn total_loss_weighted_sum() {
        // components (ln2, 0.5, ln2) with default alphas
        let p = t(2, 2, vec![0.5; 4]);
        let g = t(2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        // dice: 1 - (2*1 + 1e-4)/(2 + 2 + 1e-4) ≈ 0.5
        let ps = t(1, 1, vec![0.5]);
        let gs = t(1, 1, vec![1.0]);
        let pair = PredictionPair {
            p,
            g,
            side: Some((ps, gs)),
        };
        let total = total_loss(&[pair], &LossWeights::default()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let dice = 1.0 - (2.0 + 1e-4) / (4.0 + 1e-4);
        assert!((total - (ln2 + dice + 0.1 * ln2)).abs() < 1e-12);
        assert!((total - 1.262462).abs() < 5e-5);
    }

    #[test]
    fn total_loss_weight_isolation_and_linearity() {
        let mut rng = Rng::new(7);
        let p = t(2, 2, (0..4).map(|_| rng.uniform(0.1, 0.9)).collect());
        let g = t(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        let pair = PredictionPair {
            p: p.clone(),
            g: g.clone(),
            side: Some((p.clone(), g.clone())),
        };
        let mut w = LossWeights {
            alpha1: 0.0,
            alpha2: 1.0,
            alpha3: 0.0,
            ..LossWeights::default()
        };
        let dice_only = total_loss(std::slice::from_ref(&pair), &w).unwrap();
        assert!((dice_only - dice_loss(&p, &g, w.eps_dice).unwrap()).abs() < 1e-15);
        w.alpha2 = 3.0;
        let scaled = total_loss(std::slice::from_ref(&pair), &w).unwrap();
        assert!((scaled - 3.0 * dice_only).abs() < 1e-12);
    }

    #[test]
    fn total_loss_rejects_empty_batch() {
        assert!(matches!(
            total_loss(&[], &LossWeights::default()),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn mi_iou_cases() {
        let g = t(2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        assert!((mi_iou(&[g.clone()], &[g.clone()], 0.5, 1e-6).unwrap() - 100.0).abs() < 1e-12);
        let z = t(2, 2, vec![0.0; 4]);
        assert!((mi_iou(&[z.clone()], &[z], 0.5, 1e-6).unwrap() - 100.0).abs() < 1e-12);
        // binarized P=[[1,0],[1,0]] vs G=[[1,1],[0,0]]: TP=1, FP=1, FN=1
        let p = t(2, 2, vec![0.9, 0.1, 0.9, 0.1]);
        let got = mi_iou(&[p], &[g], 0.5, 1e-6).unwrap();
        let expect = (1.0 + 1e-6) / (3.0 + 1e-6) * 100.0;
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 33.3333).abs() < 1e-3);
    }

    #[test]
    fn mi_dice_cases() {
        let g = t(2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        assert!((mi_dice(&[g.clone()], &[g.clone()], 1e-6).unwrap() - 100.0).abs() < 1e-12);
        let z = t(2, 2, vec![0.0; 4]);
        assert!((mi_dice(&[z.clone()], &[z], 1e-6).unwrap() - 100.0).abs() < 1e-12);
        // (2*1 + 1e-6)/(3 + 1e-6) * 100 = 66.666678...
        let p = t(2, 2, vec![0.5, 0.5, 0.0, 0.0]);
        let got = mi_dice(&[p], &[g], 1e-6).unwrap();
        let expect = (2.0 + 1e-6) / (3.0 + 1e-6) * 100.0;
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 66.666678).abs() < 1e-6);
    }

    #[test]
    fn metric_length_mismatch() {
        let g = t(1, 1, vec![1.0]);
        assert!(mi_iou(&[g.clone(), g.clone()], &[g.clone()], 0.5, 1e-6).is_err());
        assert!(mi_dice(&[], &[g], 1e-6).is_err());
    }

    #[test]
    fn dice_dominates_iou_on_random_binary_masks() {
        let mut rng = Rng::new(55);
        for _ in 0..1000 {
            let bits =
                |rng: &mut Rng| -> Vec<f64> { (0..16).map(|_| f64::from(rng.next_u64() % 2 == 0)).collect() };
            let p = t(4, 4, bits(&mut rng));
            let g = t(4, 4, bits(&mut rng));
            let iou = mi_iou(&[p.clone()], &[g.clone()], 0.5, 1e-6).unwrap();
            let dice = mi_dice(&[p], &[g], 1e-6).unwrap();
            assert!(0.0 <= iou && iou <= dice + 1e-12 && dice <= 100.0 + 1e-12);
        }
    }

    #[test]
    fn dice_loss_consistent_with_mi_dice() {
        let mut rng = Rng::new(77);
        let p = t(3, 3, (0..9).map(|_| rng.uniform(0.01, 0.99)).collect());
        let g = t(3, 3, (0..9).map(|_| f64::from(rng.next_u64() % 2 == 0)).collect());
        let eps = 1e-6;
        let loss = dice_loss(&p, &g, eps).unwrap();
        let metric = mi_dice(&[p], &[g], eps).unwrap();
        assert!((loss - (1.0 - metric / 100.0)).abs() < 1e-12);
    }
}
