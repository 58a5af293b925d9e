//! Adversarial vocoder objectives as pure functions of discriminator outputs.

use serde::{Deserialize, Serialize};

use super::DspError;

pub const LAMBDA_FM: f64 = 2.0;
pub const LAMBDA_RECON: f64 = 45.0;
/// Average-pooling factors of the multi-scale discriminators after the raw one.
pub const MSD_SCALES: [usize; 2] = [2, 4];
/// Reshaping periods of the multi-period discriminators.
pub const MPD_PERIODS: [usize; 5] = [2, 3, 5, 7, 11];

/// Scores and per-layer feature maps of one discriminator on one signal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiscriminatorOutputs {
    pub scores: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_adv: Vec<f64>,
    pub l_d: Vec<f64>,
    pub l_fm: Vec<f64>,
    pub l_recon: f64,
    pub l_g_total: f64,
    pub l_d_total: f64,
    pub lambda_fm: f64,
    pub lambda_recon: f64,
}

fn sq(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|x| x * x).sum()
}

/// Generator and discriminator losses for `J` discriminators.
///
/// `l_adv_i = ||1 - D_i(fake)||^2`, `l_d_i = ||1 - D_i(real)||^2 + ||D_i(fake)||^2`,
/// `l_fm_i = sum_j |xi_j(real) - xi_j(fake)|_1`, `l_recon = mean |mel_real - mel_fake|`,
/// `l_g = sum_i (l_adv_i + 2 l_fm_i) + 45 l_recon`, `l_d = sum_i l_d_i`.
pub fn gan_losses(
    real: &[DiscriminatorOutputs],
    fake: &[DiscriminatorOutputs],
    mel_real: &[f64],
    mel_fake: &[f64],
) -> Result<LossBundle, DspError> {
    if real.len() != fake.len() {
        return Err(DspError::Shape(format!("{} real vs {} fake discriminators", real.len(), fake.len())));
    }
    if mel_real.len() != mel_fake.len() || mel_real.is_empty() {
        return Err(DspError::Shape(format!("mel sizes {} vs {}", mel_real.len(), mel_fake.len())));
    }
    let mut l_adv = Vec::with_capacity(real.len());
    let mut l_d = Vec::with_capacity(real.len());
    let mut l_fm = Vec::with_capacity(real.len());
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.scores.len() != f.scores.len() || r.features.len() != f.features.len() {
            return Err(DspError::Shape(format!("discriminator {i}: real/fake outputs differ")));
        }
        l_adv.push(sq(f.scores.iter().map(|d| 1.0 - d)));
        l_d.push(sq(r.scores.iter().map(|d| 1.0 - d)) + sq(f.scores.iter().copied()));
        let mut fm = 0.0;
        for (j, (a, b)) in r.features.iter().zip(&f.features).enumerate() {
            if a.len() != b.len() {
                return Err(DspError::Shape(format!("discriminator {i} layer {j}: {} vs {}", a.len(), b.len())));
            }
            fm += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
        l_fm.push(fm);
    }
    let l_recon = mel_real.iter().zip(mel_fake).map(|(a, b)| (a - b).abs()).sum::<f64>() / mel_real.len() as f64;
    let l_g_total =
        l_adv.iter().zip(&l_fm).map(|(a, f)| a + LAMBDA_FM * f).sum::<f64>() + LAMBDA_RECON * l_recon;
    let l_d_total = l_d.iter().sum();
    Ok(LossBundle { l_adv, l_d, l_fm, l_recon, l_g_total, l_d_total, lambda_fm: LAMBDA_FM, lambda_recon: LAMBDA_RECON })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(scores: Vec<f64>, features: Vec<Vec<f64>>) -> DiscriminatorOutputs {
        DiscriminatorOutputs { scores, features }
    }

    #[test]
    fn hand_combination_is_140() {
        // one discriminator with l_adv = 1, l_fm = 2 and l_recon = 3
        let real = [disc(vec![1.0], vec![vec![2.0]])];
        let fake = [disc(vec![0.0], vec![vec![0.0]])];
        let b = gan_losses(&real, &fake, &[3.0, 3.0], &[0.0, 6.0]).unwrap();
        assert_eq!(b.l_adv, vec![1.0]);
        assert_eq!(b.l_fm, vec![2.0]);
        assert_eq!(b.l_recon, 3.0);
        assert_eq!(b.l_g_total, 140.0);
    }

    #[test]
    fn perfect_generator_and_discriminator() {
        let real = [disc(vec![1.0, 1.0], vec![]), disc(vec![1.0], vec![])];
        let fooled = [disc(vec![1.0, 1.0], vec![]), disc(vec![1.0], vec![])];
        assert!(gan_losses(&real, &fooled, &[0.0], &[0.0]).unwrap().l_adv.iter().all(|&v| v == 0.0));
        let caught = [disc(vec![0.0, 0.0], vec![]), disc(vec![0.0], vec![])];
        let b = gan_losses(&real, &caught, &[0.0], &[0.0]).unwrap();
        assert_eq!(b.l_d_total, 0.0);
        assert_eq!(b.l_adv, vec![2.0, 1.0]);
    }

    #[test]
    fn mismatched_shapes() {
        let a = [disc(vec![1.0], vec![vec![1.0]])];
        let b = [disc(vec![1.0], vec![vec![1.0, 2.0]])];
        assert!(gan_losses(&a, &b, &[0.0], &[0.0]).is_err());
        assert!(gan_losses(&a, &[], &[0.0], &[0.0]).is_err());
    }
}
