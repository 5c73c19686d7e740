//! Likelihood heads: a single Gaussian and a K-component Gaussian mixture,
//! with log-space NLL evaluation and ancestral sampling.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, NnError};

#[derive(Debug, Error)]
pub enum DensityError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),
}

/// How the scale head maps raw outputs to positive sigmas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SigmaLink {
    #[default]
    Softplus,
    Exp,
}

impl SigmaLink {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            SigmaLink::Softplus => nn::softplus(raw),
            SigmaLink::Exp => raw.exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

/// Weights, means, and scales of a K-component Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.sigmas.len() != k {
            return Err(DensityError::InvalidParams(format!(
                "component counts disagree: {k}/{}/{}",
                self.means.len(),
                self.sigmas.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(DensityError::InvalidParams("weights must be positive".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DensityError::InvalidParams(format!("weights sum to {sum}")));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(DensityError::InvalidParams("sigmas must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(DensityError::InvalidParams("means must be finite".into()));
        }
        Ok(())
    }
}

/// Single-Gaussian head: `mu = W_mu h + b_mu`, `sigma = softplus(W_sigma h + b_sigma)`.
pub fn gaussian_head(
    h: &Array1<f64>,
    w_mu: &Array2<f64>,
    b_mu: &Array1<f64>,
    w_sigma: &Array2<f64>,
    b_sigma: &Array1<f64>,
) -> Result<GaussianParams, DensityError> {
    let mu = nn::dense_forward(w_mu, b_mu, h)?;
    let raw = nn::dense_forward(w_sigma, b_sigma, h)?;
    if mu.len() != 1 || raw.len() != 1 {
        return Err(NnError::ShapeMismatch(format!(
            "gaussian head must map to scalars, got {} and {}",
            mu.len(),
            raw.len()
        ))
        .into());
    }
    Ok(GaussianParams {
        mu: mu[0],
        sigma: nn::softplus(raw[0]),
    })
}

/// Learnable maps from a hidden state to mixture parameters. Means use the
/// identity link; scales go through `link` plus a small positive floor.
#[derive(Clone, Debug)]
pub struct GmmHead {
    pub w_weight: Array2<f64>,
    pub b_weight: Array1<f64>,
    pub w_mean: Array2<f64>,
    pub b_mean: Array1<f64>,
    pub w_scale: Array2<f64>,
    pub b_scale: Array1<f64>,
    pub link: SigmaLink,
    pub sigma_floor: f64,
}

impl GmmHead {
    pub fn zeros(hidden: usize, k: usize) -> Self {
        Self {
            w_weight: Array2::zeros((k, hidden)),
            b_weight: Array1::zeros(k),
            w_mean: Array2::zeros((k, hidden)),
            b_mean: Array1::zeros(k),
            w_scale: Array2::zeros((k, hidden)),
            b_scale: Array1::zeros(k),
            link: SigmaLink::Softplus,
            sigma_floor: 1e-6,
        }
    }

    pub fn k(&self) -> usize {
        self.w_weight.nrows()
    }
}

/// Map a hidden state through the mixture head.
pub fn gmm_head(h: &Array1<f64>, head: &GmmHead) -> Result<GmmParams, DensityError> {
    let logits = nn::dense_forward(&head.w_weight, &head.b_weight, h)?;
    let means = nn::dense_forward(&head.w_mean, &head.b_mean, h)?;
    let raw_scale = nn::dense_forward(&head.w_scale, &head.b_scale, h)?;
    let weights = nn::softmax(logits.as_slice().expect("contiguous"));
    let sigmas = raw_scale
        .iter()
        .map(|&r| head.link.apply(r) + head.sigma_floor)
        .collect();
    let params = GmmParams {
        weights,
        means: means.to_vec(),
        sigmas,
    };
    params.validate()?;
    Ok(params)
}

/// Negative log-likelihood `−ln Σ_k w_k N(z; μ_k, σ_k²)`, evaluated through
/// log-sum-exp so distant z never overflow.
pub fn gmm_nll(params: &GmmParams, z: f64) -> f64 {
    let terms: Vec<f64> = params
        .weights
        .iter()
        .zip(&params.means)
        .zip(&params.sigmas)
        .map(|((&w, &mu), &sigma)| w.ln() + nn::normal_log_pdf(z, mu, sigma))
        .collect();
    -nn::logsumexp(&terms)
}

/// NLL of a single Gaussian; the K=1 mixture reduces to this exactly.
pub fn gaussian_nll(params: &GaussianParams, z: f64) -> f64 {
    -nn::normal_log_pdf(z, params.mu, params.sigma)
}

/// Ancestral draw: pick a component from the categorical weights, then draw
/// from that component's normal.
pub fn gmm_sample<R: Rng>(params: &GmmParams, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut idx = params.k() - 1;
    for (k, &w) in params.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            idx = k;
            break;
        }
    }
    let normal = rand_distr::Normal::new(params.means[idx], params.sigmas[idx])
        .expect("validated sigma is finite and positive");
    rng.sample(normal)
}

/// Mixture mean and variance:
/// mean = Σ w μ, var = Σ w (σ² + μ²) − mean².
pub fn gmm_moments(params: &GmmParams) -> (f64, f64) {
    let mean: f64 = params
        .weights
        .iter()
        .zip(&params.means)
        .map(|(&w, &m)| w * m)
        .sum();
    let second: f64 = params
        .weights
        .iter()
        .zip(&params.means)
        .zip(&params.sigmas)
        .map(|((&w, &m), &s)| w * (s * s + m * m))
        .sum();
    (mean, second - mean * mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

    fn head_with(k: usize, hidden: usize) -> GmmHead {
        GmmHead::zeros(hidden, k)
    }

    #[test]
    fn gaussian_head_zero_weights() {
        let h = array![0.3, -0.7];
        let p = gaussian_head(
            &h,
            &Array2::zeros((1, 2)),
            &Array1::zeros(1),
            &Array2::zeros((1, 2)),
            &Array1::zeros(1),
        )
        .unwrap();
        assert_eq!(p.mu, 0.0);
        assert_abs_diff_eq!(p.sigma, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_head_softplus_asymptote() {
        let h = array![1.0];
        let p = gaussian_head(
            &h,
            &Array2::zeros((1, 1)),
            &Array1::zeros(1),
            &array![[100.0]],
            &Array1::zeros(1),
        )
        .unwrap();
        assert_abs_diff_eq!(p.sigma, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_head_hand_arithmetic() {
        // mu = 0.2·0.5 + (−0.4)·(−1.5) + 0.1 = 0.8
        // sigma = softplus(0.3·0.5 + 0.6·(−1.5) + 0.05) = softplus(−0.7)
        let h = array![0.5, -1.5];
        let p = gaussian_head(
            &h,
            &array![[0.2, -0.4]],
            &array![0.1],
            &array![[0.3, 0.6]],
            &array![0.05],
        )
        .unwrap();
        assert_abs_diff_eq!(p.mu, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(p.sigma, nn::softplus(-0.7), epsilon = 1e-12);
    }

    #[test]
    fn gmm_head_zero_init_is_uniform() {
        let k = 4;
        let p = gmm_head(&array![0.0, 0.0, 0.0], &head_with(k, 3)).unwrap();
        for &w in &p.weights {
            assert_abs_diff_eq!(w, 0.25, epsilon = 1e-15);
        }
        for m in &p.means {
            assert_eq!(*m, 0.0);
        }
        for &s in &p.sigmas {
            assert_abs_diff_eq!(s, std::f64::consts::LN_2 + 1e-6, epsilon = 1e-15);
        }
    }

    #[test]
    fn gmm_head_single_component_weight_is_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut head = head_with(1, 3);
        head.w_weight = crate::nn::lstm::uniform_fan_in(1, 3, &mut rng);
        let h = array![0.4, -2.0, 1.3];
        let p = gmm_head(&h, &head).unwrap();
        assert_eq!(p.weights, vec![1.0]);
    }

    #[test]
    fn nll_standard_normal_at_mode() {
        let p = GmmParams {
            weights: vec![1.0],
            means: vec![0.0],
            sigmas: vec![1.0],
        };
        assert_abs_diff_eq!(gmm_nll(&p, 0.0), HALF_LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn nll_duplicate_components_collapse() {
        let p = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![0.0, 0.0],
            sigmas: vec![1.0, 1.0],
        };
        assert_abs_diff_eq!(gmm_nll(&p, 0.0), HALF_LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn nll_matches_direct_density_sum() {
        // Oracle: sum the two densities outright, no log-sum-exp.
        let p = GmmParams {
            weights: vec![0.3, 0.7],
            means: vec![-1.0, 2.0],
            sigmas: vec![0.5, 1.5],
        };
        let z = 0.4;
        let direct: f64 = p
            .weights
            .iter()
            .zip(&p.means)
            .zip(&p.sigmas)
            .map(|((&w, &m), &s)| {
                w * (-((z - m) * (z - m)) / (2.0 * s * s)).exp()
                    / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum();
        assert_abs_diff_eq!(gmm_nll(&p, z), -direct.ln(), epsilon = 1e-10);
    }

    #[test]
    fn nll_finite_far_into_the_tail() {
        let p = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![0.0, 3.0],
            sigmas: vec![1.0, 2.0],
        };
        for exp in [1, 2, 3, 6] {
            let z = 10f64.powi(exp);
            let nll = gmm_nll(&p, z);
            assert!(nll.is_finite(), "z=1e{exp} gave {nll}");
            let nll = gmm_nll(&p, -z);
            assert!(nll.is_finite(), "z=-1e{exp} gave {nll}");
        }
    }

    #[test]
    fn k1_mixture_equals_gaussian_nll() {
        let g = GaussianParams { mu: 1.3, sigma: 0.8 };
        let p = GmmParams {
            weights: vec![1.0],
            means: vec![g.mu],
            sigmas: vec![g.sigma],
        };
        for z in [-2.0, 0.0, 1.3, 5.5] {
            assert_abs_diff_eq!(gmm_nll(&p, z), gaussian_nll(&g, z), epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_degenerate_component_returns_mean() {
        let p = GmmParams {
            weights: vec![1.0],
            means: vec![7.0],
            sigmas: vec![1e-12],
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_abs_diff_eq!(gmm_sample(&p, &mut rng), 7.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn sample_never_uses_zero_weight_component() {
        let p = GmmParams {
            weights: vec![1.0 - 1e-15, 1e-15],
            means: vec![3.0, 100.0],
            sigmas: vec![0.1, 0.1],
        };
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let z = gmm_sample(&p, &mut rng);
            assert!(z < 50.0, "drew from the far component: {z}");
        }
    }

    #[test]
    fn large_sample_mean_matches_mixture_mean() {
        let p = GmmParams {
            weights: vec![0.3, 0.7],
            means: vec![-1.0, 2.0],
            sigmas: vec![0.5, 1.5],
        };
        let (mean, var) = gmm_moments(&p);
        assert_abs_diff_eq!(mean, 1.1, epsilon = 1e-12);

        let n = 1_000_000usize;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let z = gmm_sample(&p, &mut rng);
            acc += z;
            acc2 += z * z;
        }
        let emp_mean = acc / n as f64;
        let emp_var = acc2 / n as f64 - emp_mean * emp_mean;
        let se = (var / n as f64).sqrt();
        assert!(
            (emp_mean - mean).abs() < 3.0 * se,
            "empirical mean {emp_mean} vs {mean} (se {se})"
        );
        // variance via the moment formula: 0.3(0.25+1) + 0.7(2.25+4) − 1.21
        assert_abs_diff_eq!(var, 3.54, epsilon = 1e-12);
        assert!((emp_var - var).abs() / var < 0.01);
    }

    #[test]
    fn moments_simple_cases() {
        let p = GmmParams {
            weights: vec![1.0],
            means: vec![2.5],
            sigmas: vec![0.3],
        };
        let (m, v) = gmm_moments(&p);
        assert_abs_diff_eq!(m, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.09, epsilon = 1e-15);

        let p = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![-4.0, 4.0],
            sigmas: vec![1.0, 1.0],
        };
        let (m, _) = gmm_moments(&p);
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn gmm_head_always_emits_valid_params(
            hv in proptest::collection::vec(-5.0..5.0f64, 3),
            wv in proptest::collection::vec(-2.0..2.0f64, 45),
            k in 1usize..=5,
        ) {
            let h = Array1::from_vec(hv);
            let mut head = GmmHead::zeros(3, k);
            let slab = Array2::from_shape_vec((15, 3), wv).unwrap();
            head.w_weight.assign(&slab.slice(ndarray::s![..k, ..]));
            head.w_mean.assign(&slab.slice(ndarray::s![5..5 + k, ..]));
            head.w_scale.assign(&slab.slice(ndarray::s![10..10 + k, ..]));
            let params = gmm_head(&h, &head).unwrap();
            prop_assert!(params.validate().is_ok());
        }
    }
}
