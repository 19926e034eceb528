use super::config::Framework;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_nonempty<T: Element>(preds: &[Tensor<T>]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Config("loss needs at least one stage prediction".into()));
    }
    Ok(())
}

/// `Σ_s mse(Σ_{j≤s} R_j, R)`: every running total of stage residuals is
/// pulled towards the target.
pub fn loss_additive<T: Element>(stage_preds: &[Tensor<T>], target: &Tensor<T>) -> Result<Tensor<T>> {
    check_nonempty(stage_preds)?;
    let mut running = stage_preds[0].clone();
    let mut loss = running.mse_loss(target)?;
    for pred in &stage_preds[1..] {
        running = running.add(pred)?;
        loss = loss.add(&running.mse_loss(target)?)?;
    }
    Ok(loss)
}

/// `Σ_s mse(R̂_s, R)`: every stage's whole-streak estimate is pulled towards
/// the target.
pub fn loss_full<T: Element>(stage_preds: &[Tensor<T>], target: &Tensor<T>) -> Result<Tensor<T>> {
    check_nonempty(stage_preds)?;
    let mut loss = stage_preds[0].mse_loss(target)?;
    for pred in &stage_preds[1..] {
        loss = loss.add(&pred.mse_loss(target)?)?;
    }
    Ok(loss)
}

/// Training loss for a framework; iter stages are scored like additive ones.
pub fn framework_loss<T: Element>(framework: Framework, stage_preds: &[Tensor<T>], target: &Tensor<T>) -> Result<Tensor<T>> {
    match framework {
        Framework::Iter | Framework::Additive => loss_additive(stage_preds, target),
        Framework::Full => loss_full(stage_preds, target),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Shape;

    fn ones() -> Tensor<f64> {
        Tensor::full(Shape::new(2, 3, 4, 4), 1.0)
    }

    #[test]
    fn single_stage_is_plain_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r1 = Tensor::<f64>::randn(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
        let t = Tensor::<f64>::randn(r1.shape(), 1.0, &mut rng);
        let mse = r1.mse_loss(&t).unwrap().item();
        let preds = [r1];
        assert_eq!(loss_additive(&preds, &t).unwrap().item(), mse);
        assert_eq!(loss_full(&preds, &t).unwrap().item(), mse);
    }

    #[test]
    fn hand_evaluated_values() {
        let r = ones();
        let half = Tensor::full(r.shape(), 0.5);
        let zero = Tensor::zeros(r.shape());
        // running totals 0.5 and 1.0 against 1: 0.25 + 0
        assert_eq!(loss_additive(&[half.clone(), half], &r).unwrap().item(), 0.25);
        // whole estimates 0 and 1 against 1: 1 + 0
        assert_eq!(loss_full(&[zero.clone(), r.clone()], &r).unwrap().item(), 1.0);
        // perfect first stage, nothing left for the second
        assert_eq!(loss_additive(&[r.clone(), zero], &r).unwrap().item(), 0.0);
        assert_eq!(loss_full(&[r.clone(), r.clone()], &r).unwrap().item(), 0.0);
    }

    #[test]
    fn non_negative_and_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let preds: Vec<_> = (0..3)
                .map(|_| Tensor::<f64>::randn(Shape::new(1, 3, 3, 3), 1.0, &mut rng))
                .collect();
            let t = Tensor::<f64>::randn(Shape::new(1, 3, 3, 3), 1.0, &mut rng);
            assert!(loss_additive(&preds, &t).unwrap().item() > 0.0);
            assert!(loss_full(&preds, &t).unwrap().item() > 0.0);
        }
        assert!(loss_full::<f64>(&[], &ones()).is_err());
        assert!(loss_additive(&[Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2))], &ones()).is_err());
    }
}
