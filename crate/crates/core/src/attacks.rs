//! Attack primitives: FGSM on inputs and the gradient / noise-direction
//! weight perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Dataset, NetworkDef, Params, Tensor};

/// Sign with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Fgsm,
    WeightIdeal,
    WeightSni,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub mu: f64,
    pub mode: AttackMode,
}

impl AttackSpec {
    pub const MAX_EPSILON: f64 = 0.3;

    pub fn new(epsilon: f64, mu: f64, mode: AttackMode) -> Result<Self> {
        if !(0.0..=Self::MAX_EPSILON).contains(&epsilon) {
            return Err(Error::Invalid(format!(
                "epsilon {epsilon} outside [0, {}]",
                Self::MAX_EPSILON
            )));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Invalid(format!("mu {mu} must be non-negative")));
        }
        Ok(AttackSpec { epsilon, mu, mode })
    }
}

/// `clamp(x + eps * sign(grad_x L), 0, 1)` with the gradient taken on the
/// float, noise-free network.
pub fn fgsm(net: &NetworkDef, params: &Params, x: &Tensor, label: usize, epsilon: f64) -> Result<Tensor> {
    if epsilon == 0.0 {
        return Ok(x.clone());
    }
    let g = nn::grad_input(net, params, x, label)?;
    Ok(perturb_input(x, &g, epsilon))
}

pub(crate) fn perturb_input(x: &Tensor, grad: &Tensor, epsilon: f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&v, &g)| (v + epsilon * sign(g)).clamp(0.0, 1.0))
            .collect(),
    }
}

/// FGSM applied to every example of `data`.
pub fn fgsm_dataset(net: &NetworkDef, params: &Params, data: &Dataset, epsilon: f64) -> Result<Dataset> {
    use rayon::prelude::*;
    if epsilon == 0.0 {
        return Ok(data.clone());
    }
    let adv: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, t) = data.example(i)?;
            Ok(fgsm(net, params, &x, t, epsilon)?.data)
        })
        .collect::<Result<_>>()?;
    data.with_pixels(adv.concat())
}

/// Clean minus adversarial accuracy, in percentage points.
pub fn adv_loss(clean_acc: f64, adv_acc: f64) -> Result<f64> {
    for a in [clean_acc, adv_acc] {
        if !(0.0..=100.0).contains(&a) {
            return Err(Error::Invalid(format!("accuracy {a} outside [0, 100]")));
        }
    }
    Ok(clean_acc - adv_acc)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "operands have {} and {} elements",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `W + eps * sign(g)`.
pub fn weight_attack_ideal(w: &[f64], grad: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    same_len(w, grad)?;
    Ok(w.iter()
        .zip(grad)
        .map(|(&w, &g)| w + epsilon * sign(g))
        .collect())
}

/// Direction of a noise vector, elementwise in {-1, 0, +1}.
pub fn noise_direction(noise: &[f64]) -> Vec<f64> {
    noise.iter().map(|&n| sign(n)).collect()
}

/// `W + mu * D`.
pub fn weight_attack_sni(w: &[f64], mu: f64, direction: &[f64]) -> Result<Vec<f64>> {
    same_len(w, direction)?;
    if let Some(d) = direction.iter().find(|d| !matches!(**d as i8, -1..=1) || d.fract() != 0.0) {
        return Err(Error::Invalid(format!("direction entry {d} not in {{-1, 0, 1}}")));
    }
    Ok(w.iter().zip(direction).map(|(&w, &d)| w + mu * d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use proptest::prelude::*;

    fn linear() -> (NetworkDef, Params) {
        let net = NetworkDef {
            input_shape: vec![3],
            layers: vec![Layer::Fc { inputs: 3, outputs: 2 }],
            classes: 2,
        };
        let mut p = Params::zeros(&net);
        // class 0 prefers small inputs everywhere; coordinate 2 is ignored
        p.layers[0].weight.as_mut().unwrap().data = vec![-1.0, -1.0, 0.0, 1.0, 1.0, 0.0];
        (net, p)
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let (net, p) = linear();
        let x = Tensor::new(vec![3], vec![0.2, 0.4, 0.6]).unwrap();
        assert_eq!(fgsm(&net, &p, &x, 0, 0.0).unwrap(), x);
    }

    #[test]
    fn positive_gradient_steps_up_and_zero_gradient_stays() {
        let (net, p) = linear();
        let x = Tensor::new(vec![3], vec![0.2, 0.4, 0.6]).unwrap();
        // dL/dx for label 0 is positive on the first two coordinates
        let adv = fgsm(&net, &p, &x, 0, 0.1).unwrap();
        assert!((adv.data[0] - 0.3).abs() < 1e-15);
        assert!((adv.data[1] - 0.5).abs() < 1e-15);
        assert_eq!(adv.data[2], 0.6);
    }

    #[test]
    fn output_is_clamped() {
        let (net, p) = linear();
        let x = Tensor::new(vec![3], vec![0.95, 0.0, 0.5]).unwrap();
        let adv = fgsm(&net, &p, &x, 0, 0.3).unwrap();
        assert_eq!(adv.data[0], 1.0);
        let adv = fgsm(&net, &p, &x, 1, 0.3).unwrap();
        assert_eq!(adv.data[1], 0.0);
    }

    #[test]
    fn adversarial_loss_values() {
        assert!((adv_loss(88.78, 60.0).unwrap() - 28.78).abs() < 1e-12);
        assert_eq!(adv_loss(50.0, 50.0).unwrap(), 0.0);
        assert_eq!(adv_loss(100.0, 0.0).unwrap(), 100.0);
        assert!(adv_loss(101.0, 0.0).is_err());
    }

    #[test]
    fn weight_attack_examples() {
        let w = [0.5, -0.25, 0.0];
        assert_eq!(weight_attack_ideal(&w, &[1.0, -2.0, 0.0], 0.0).unwrap(), w.to_vec());
        assert_eq!(
            weight_attack_ideal(&w, &[-1.0, -2.0, -0.1], 0.25).unwrap(),
            vec![0.25, -0.5, -0.25]
        );
        assert_eq!(weight_attack_sni(&w, 0.0, &[1.0, 1.0, -1.0]).unwrap(), w.to_vec());
        assert_eq!(
            weight_attack_sni(&w, 0.125, &[1.0, 1.0, 1.0]).unwrap(),
            vec![0.625, -0.125, 0.125]
        );
        assert!(weight_attack_sni(&w, 0.1, &[1.0]).is_err());
        assert!(weight_attack_sni(&w, 0.1, &[2.0, 0.0, 0.0]).is_err());
        assert!(weight_attack_ideal(&w, &[1.0], 0.1).is_err());
    }

    #[test]
    fn noise_direction_examples() {
        assert_eq!(noise_direction(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(noise_direction(&[0.3, -2.0, 0.0]), vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn spec_bounds() {
        assert!(AttackSpec::new(0.31, 0.0, AttackMode::Fgsm).is_err());
        assert!(AttackSpec::new(0.05, -1.0, AttackMode::WeightSni).is_err());
        assert!(AttackSpec::new(0.3, 0.1, AttackMode::WeightIdeal).is_ok());
    }

    proptest! {
        #[test]
        fn ideal_and_sni_agree(
            w in proptest::collection::vec(-1.0f64..1.0, 1..32),
            seed in any::<u64>(),
            eps in 0.0f64..0.3,
        ) {
            let g: Vec<f64> = w.iter().enumerate()
                .map(|(i, _)| ((seed.rotate_left(i as u32) % 3) as f64) - 1.0).collect();
            let a = weight_attack_ideal(&w, &g, eps).unwrap();
            let b = weight_attack_sni(&w, eps, &noise_direction(&g)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn fgsm_stays_in_box(
            x in proptest::collection::vec(0.0f64..=1.0, 3),
            eps in 0.0f64..0.3,
            label in 0usize..2,
        ) {
            let (net, p) = linear();
            let xt = Tensor::new(vec![3], x.clone()).unwrap();
            let adv = fgsm(&net, &p, &xt, label, eps).unwrap();
            for (a, b) in adv.data.iter().zip(&x) {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!((a - b).abs() <= eps + 1e-15);
            }
        }
    }
}
