//! DDPM core: the noise schedule, noise-prediction training, ancestral
//! sampling, and motion correction by partial re-noising — corrupt input Y
//! is pushed to timestep n with Gaussian noise, then the learned reverse
//! process walks it back to a clean image.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics;
use crate::neural::{batch_step, AdamState, TrainSample, UNet};
use crate::numerics::{gaussian, ImageTensor, Rng};

/// Default timestep count for full runs.
pub const DEFAULT_TIMESTEPS: usize = 500;
/// Default re-entry timestep for correction.
pub const DEFAULT_REENTRY: usize = 150;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// beta/alpha/alpha-bar/sigma tables for t = 1..T (alpha_bar also at t = 0).
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_max: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// alpha-bar_t for t in 0..=T; alpha_bar(0) == 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// sigma_t for t in 1..=T (sigma_t^2 = beta_t).
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}

/// Linearly spaced beta schedule with all derived tables.
pub fn build_schedule(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(Error::InvalidArgument("timesteps must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid beta range [{beta_start}, {beta_end}]; need 0 < start <= end < 1"
        )));
    }
    let beta: Vec<f64> = (0..t_max)
        .map(|i| {
            if t_max == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let sigma: Vec<f64> = beta.iter().map(|b| b.sqrt()).collect();
    Ok(NoiseSchedule { t_max, beta, alpha, alpha_bar, sigma })
}

/// Default schedule at the pipeline's standard settings.
pub fn default_schedule() -> NoiseSchedule {
    build_schedule(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
        .expect("default schedule parameters are valid")
}

/// Closed-form forward noising: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) z.
/// t = 0 returns x0 unchanged.
pub fn q_sample(
    x0: &ImageTensor,
    t: usize,
    z: &ImageTensor,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    if t > sched.t_max() {
        return Err(Error::InvalidArgument(format!(
            "t {t} out of range 0..={}",
            sched.t_max()
        )));
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    if z.shape() != x0.shape() {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} vs image {:?}",
            z.shape(),
            x0.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (s_sig, s_noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(z, |a, b| s_sig * a + s_noise * b)
}

/// Anything that predicts the noise component of x_t.
pub trait EpsilonModel: Sync {
    /// x is a 2D [H,W] image; the prediction has the same shape.
    fn predict(&self, x: &ImageTensor, t: usize) -> Result<ImageTensor>;
}

impl EpsilonModel for UNet {
    fn predict(&self, x: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let (h, w) = x.hw()?;
        let input = x.clone().reshape(vec![1, h, w])?;
        self.forward(&input, t)?.reshape(vec![h, w])
    }
}

/// One uniform-t noise-prediction step on a batch of clean images, using
/// draws made here; returns the mean batch loss.
pub fn train_step(
    model: &mut UNet,
    batch: &[ImageTensor],
    sched: &NoiseSchedule,
    rng: &mut Rng,
    optimizer: &mut AdamState,
) -> Result<f64> {
    let draws = draw_batch(batch, sched, rng)?;
    train_step_frozen(model, batch, sched, &draws, optimizer)
}

/// Per-image (t, z) draws for a batch.
pub fn draw_batch(
    batch: &[ImageTensor],
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<(usize, ImageTensor)>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    batch
        .iter()
        .map(|x0| {
            let t = 1 + rng.uniform_usize(sched.t_max());
            let z = gaussian(rng, x0.shape())?;
            Ok((t, z))
        })
        .collect()
}

fn samples_from_draws(
    batch: &[ImageTensor],
    sched: &NoiseSchedule,
    draws: &[(usize, ImageTensor)],
) -> Result<Vec<TrainSample>> {
    if batch.len() != draws.len() {
        return Err(Error::ShapeMismatch("draws do not match batch".into()));
    }
    batch
        .iter()
        .zip(draws)
        .map(|(x0, (t, z))| {
            let (h, w) = x0.hw()?;
            let xt = q_sample(x0, *t, z, sched)?;
            Ok(TrainSample {
                x: xt.reshape(vec![1, h, w])?,
                t: *t,
                target: z.clone().reshape(vec![1, h, w])?,
            })
        })
        .collect()
}

/// Training step with caller-frozen (t, z) draws.
pub fn train_step_frozen(
    model: &mut UNet,
    batch: &[ImageTensor],
    sched: &NoiseSchedule,
    draws: &[(usize, ImageTensor)],
    optimizer: &mut AdamState,
) -> Result<f64> {
    let samples = samples_from_draws(batch, sched, draws)?;
    batch_step(model, optimizer, &samples)
}

/// Per-image noise-prediction losses under frozen draws, no optimizer step.
/// This is the validation loss used for early stopping.
pub fn frozen_losses(
    model: &UNet,
    batch: &[ImageTensor],
    sched: &NoiseSchedule,
    draws: &[(usize, ImageTensor)],
) -> Result<Vec<f64>> {
    let samples = samples_from_draws(batch, sched, draws)?;
    samples
        .par_iter()
        .map(|s| {
            let out = model.forward(&s.x, s.t)?;
            Ok(crate::neural::mse_loss_and_upstream(&out, &s.target).0)
        })
        .collect()
}

/// Reverse-loop options. `paper_literal_noising` switches the re-entry
/// noising coefficient from sqrt(1 - abar_n) to the printed (1 - abar_n);
/// `mean_only` zeroes sigma so the reverse path is deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrectOpts {
    pub paper_literal_noising: bool,
    pub mean_only: bool,
}

fn reverse_loop(
    mut x: ImageTensor,
    from_t: usize,
    eps_model: &dyn EpsilonModel,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    opts: CorrectOpts,
) -> Result<ImageTensor> {
    for t in (1..=from_t).rev() {
        let eps = eps_model.predict(&x, t)?;
        let a = sched.alpha(t);
        let ab = sched.alpha_bar(t);
        let coef = (1.0 - a) / (1.0 - ab).sqrt();
        let inv_sqrt_a = 1.0 / a.sqrt();
        let mut next = x.zip_map(&eps, |xv, ev| inv_sqrt_a * (xv - coef * ev))?;
        if t > 1 && !opts.mean_only {
            let z = gaussian(rng, x.shape())?;
            next = next.add_scaled(&z, sched.sigma(t))?;
        }
        x = next;
    }
    Ok(x)
}

/// Unconditional generation: start from pure noise at t = T and run the
/// full reverse process.
pub fn ancestral_sample(
    model: &dyn EpsilonModel,
    sched: &NoiseSchedule,
    shape: (usize, usize),
    rng: &mut Rng,
) -> Result<ImageTensor> {
    ancestral_sample_with(model, sched, shape, rng, CorrectOpts::default())
}

pub fn ancestral_sample_with(
    model: &dyn EpsilonModel,
    sched: &NoiseSchedule,
    shape: (usize, usize),
    rng: &mut Rng,
    opts: CorrectOpts,
) -> Result<ImageTensor> {
    let x_t = gaussian(rng, &[shape.0, shape.1])?;
    reverse_loop(x_t, sched.t_max(), model, sched, rng, opts)
}

/// Motion correction by partial re-noising: push Y to timestep n with
/// Gaussian noise, then denoise back to t = 0. n = 0 returns Y unchanged.
pub fn correct(
    y: &ImageTensor,
    n: usize,
    model: &dyn EpsilonModel,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    correct_with(y, n, model, sched, rng, CorrectOpts::default())
}

pub fn correct_with(
    y: &ImageTensor,
    n: usize,
    model: &dyn EpsilonModel,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    opts: CorrectOpts,
) -> Result<ImageTensor> {
    if n >= sched.t_max() {
        return Err(Error::InvalidArgument(format!(
            "re-entry timestep {n} must be below T = {}",
            sched.t_max()
        )));
    }
    if n == 0 {
        return Ok(y.clone());
    }
    let z = gaussian(rng, y.shape())?;
    let ab = sched.alpha_bar(n);
    let noise_coef = if opts.paper_literal_noising { 1.0 - ab } else { (1.0 - ab).sqrt() };
    let x_n = y.zip_map(&z, |yv, zv| ab.sqrt() * yv + noise_coef * zv)?;
    reverse_loop(x_n, n, model, sched, rng, opts)
}

/// One row of the re-entry timestep sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
}

/// Sweep output: per-n aggregate metrics plus the first corrected image of
/// each n as a preview.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub previews: Vec<(usize, ImageTensor)>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Correct every corrupted image at each re-entry timestep in `n_list` and
/// score against the paired clean images.
pub fn sweep_n(
    corrupted: &[ImageTensor],
    clean: &[ImageTensor],
    n_list: &[usize],
    model: &dyn EpsilonModel,
    sched: &NoiseSchedule,
    rng: &Rng,
) -> Result<SweepOutcome> {
    if corrupted.len() != clean.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} corrupted vs {} clean images",
            corrupted.len(),
            clean.len()
        )));
    }
    if corrupted.is_empty() {
        return Err(Error::InvalidArgument("empty image set".into()));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    let mut previews = Vec::with_capacity(n_list.len());
    for (n_idx, &n) in n_list.iter().enumerate() {
        let corrected: Vec<ImageTensor> = corrupted
            .par_iter()
            .enumerate()
            .map(|(i, y)| {
                let mut task_rng = rng.derive((n_idx * corrupted.len() + i) as u64);
                correct(y, n, model, sched, &mut task_rng)
            })
            .collect::<Result<_>>()?;
        let mut ssims = Vec::new();
        let mut nmses = Vec::new();
        let mut psnrs = Vec::new();
        for (xhat, x) in corrected.iter().zip(clean) {
            ssims.push(metrics::ssim(xhat, x)?);
            nmses.push(metrics::nmse(xhat, x)?);
            psnrs.push(metrics::psnr(xhat, x)?);
        }
        let (ssim_mean, ssim_std) = mean_std(&ssims);
        let (nmse_mean, nmse_std) = mean_std(&nmses);
        let (psnr_mean, psnr_std) = mean_std(&psnrs);
        rows.push(SweepRow { n, ssim_mean, ssim_std, nmse_mean, nmse_std, psnr_mean, psnr_std });
        previews.push((n, corrected[0].clone()));
    }
    Ok(SweepOutcome { rows, previews })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_unet, UNetConfig};

    /// eps_theta == 0: the reverse update reduces to x / sqrt(alpha_t).
    struct ZeroEpsilon;
    impl EpsilonModel for ZeroEpsilon {
        fn predict(&self, x: &ImageTensor, _t: usize) -> Result<ImageTensor> {
            Ok(ImageTensor::zeros(x.shape()))
        }
    }

    #[test]
    fn schedule_arithmetic_t2() {
        let s = build_schedule(2, 0.1, 0.2).unwrap();
        assert_eq!(s.beta(1), 0.1);
        assert_eq!(s.beta(2), 0.2);
        assert!((s.alpha(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha(2) - 0.8).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert!((s.sigma(1) * s.sigma(1) - 0.1).abs() < 1e-15);
        assert!((s.sigma(2) * s.sigma(2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn schedule_validates_inputs() {
        assert!(build_schedule(0, 0.1, 0.2).is_err());
        assert!(build_schedule(10, 0.0, 0.2).is_err());
        assert!(build_schedule(10, 0.3, 0.2).is_err());
        assert!(build_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn alpha_bar_strictly_decreasing_and_default_tail_small() {
        let s = default_schedule();
        for t in 1..=s.t_max() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert!((s.alpha(t) - (1.0 - s.beta(t))).abs() == 0.0);
        }
        // Oracle: direct product of (1 - beta_t) computed here.
        let mut prod = 1.0;
        for t in 1..=500 {
            let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 499.0;
            prod *= 1.0 - beta;
        }
        assert!((s.alpha_bar(500) - prod).abs() < 1e-15);
        assert!(s.alpha_bar(500) < 0.01, "abar_500 = {}", s.alpha_bar(500));
    }

    #[test]
    fn q_sample_identity_at_t0_and_analytic_case() {
        let sched = default_schedule();
        let x0 = ImageTensor::filled(&[4, 4], 0.37);
        let z = ImageTensor::filled(&[4, 4], -1.3);
        let out = q_sample(&x0, 0, &z, &sched).unwrap();
        assert_eq!(out.data(), x0.data());

        // abar_1 = 0.25 via a single step with beta = 0.75.
        let s = build_schedule(1, 0.75, 0.75).unwrap();
        assert_eq!(s.alpha_bar(1), 0.25);
        let ones = ImageTensor::filled(&[3, 3], 1.0);
        let out = q_sample(&ones, 1, &ones, &s).unwrap();
        for &v in out.data() {
            assert!((v - 1.3660254).abs() < 1e-7, "{v}");
        }

        assert!(q_sample(&ones, 2, &ones, &s).is_err());
    }

    #[test]
    fn q_sample_variance_tracks_one_minus_alpha_bar() {
        let sched = default_schedule();
        let mut rng = Rng::new(31);
        let zero = ImageTensor::zeros(&[320, 320]);
        for t in [100usize, 300] {
            let z = gaussian(&mut rng, &[320, 320]).unwrap();
            let xt = q_sample(&zero, t, &z, &sched).unwrap();
            let mean = xt.mean();
            let var = xt.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / xt.len() as f64;
            let expected = 1.0 - sched.alpha_bar(t);
            assert!(
                (var - expected).abs() / expected < 0.03,
                "t={t}: var {var} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_eps_zero_sigma_reverse_matches_hand_recursion() {
        let sched = build_schedule(40, 1e-3, 5e-2).unwrap();
        let seed = 77;
        let out = ancestral_sample_with(
            &ZeroEpsilon,
            &sched,
            (6, 6),
            &mut Rng::new(seed),
            CorrectOpts { mean_only: true, ..Default::default() },
        )
        .unwrap();

        // Hand recursion on the identical starting noise.
        let mut x = gaussian(&mut Rng::new(seed), &[6, 6]).unwrap();
        for t in (1..=40usize).rev() {
            x = x.scale(1.0 / sched.alpha(t).sqrt());
        }
        assert!(out.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn correct_n0_is_bit_exact_identity() {
        let sched = default_schedule();
        let mut rng = Rng::new(5);
        let y = gaussian(&mut rng, &[8, 8]).unwrap();
        let out = correct(&y, 0, &ZeroEpsilon, &sched, &mut rng).unwrap();
        assert_eq!(out.data(), y.data());
    }

    #[test]
    fn correct_rejects_n_at_or_above_t() {
        let sched = build_schedule(10, 1e-3, 1e-2).unwrap();
        let y = ImageTensor::zeros(&[8, 8]);
        let mut rng = Rng::new(1);
        assert!(correct(&y, 10, &ZeroEpsilon, &sched, &mut rng).is_err());
        assert!(correct(&y, 11, &ZeroEpsilon, &sched, &mut rng).is_err());
        assert!(correct(&y, 9, &ZeroEpsilon, &sched, &mut rng).is_ok());
    }

    #[test]
    fn paper_literal_flag_changes_only_the_entry_noising() {
        let sched = build_schedule(10, 0.02, 0.1).unwrap();
        let y = ImageTensor::filled(&[5, 5], 0.4);
        let seed = 9;
        let run = |literal: bool| {
            correct_with(
                &y,
                1,
                &ZeroEpsilon,
                &sched,
                &mut Rng::new(seed),
                CorrectOpts { paper_literal_noising: literal, mean_only: true },
            )
            .unwrap()
        };
        let default_out = run(false);
        let literal_out = run(true);

        // With eps == 0 and sigma == 0, x0 = x_1 / sqrt(alpha_1); only the
        // entry noise coefficient differs between the two modes.
        let z = gaussian(&mut Rng::new(seed), &[5, 5]).unwrap();
        let ab = sched.alpha_bar(1);
        let a1 = sched.alpha(1);
        let expect = |coef: f64| {
            y.zip_map(&z, |yv, zv| (ab.sqrt() * yv + coef * zv) / a1.sqrt()).unwrap()
        };
        assert!(default_out.max_abs_diff(&expect((1.0 - ab).sqrt())) < 1e-12);
        assert!(literal_out.max_abs_diff(&expect(1.0 - ab)) < 1e-12);
        assert!(default_out.max_abs_diff(&literal_out) > 1e-6);
    }

    #[test]
    fn single_step_reverse_inverts_forward_noising() {
        // With eps_theta set to the true z and sigma = 0, reversing t = 1
        // recovers x0 from x1 analytically.
        struct FixedEps(ImageTensor);
        impl EpsilonModel for FixedEps {
            fn predict(&self, _x: &ImageTensor, _t: usize) -> Result<ImageTensor> {
                Ok(self.0.clone())
            }
        }
        let sched = default_schedule();
        let mut rng = Rng::new(4);
        let x0 = gaussian(&mut rng, &[6, 6]).unwrap().map(|v| 0.5 + 0.2 * v);
        let z = gaussian(&mut rng, &[6, 6]).unwrap();
        let x1 = q_sample(&x0, 1, &z, &sched).unwrap();
        let out = reverse_loop(
            x1,
            1,
            &FixedEps(z),
            &sched,
            &mut Rng::new(0),
            CorrectOpts { mean_only: true, ..Default::default() },
        )
        .unwrap();
        assert!(out.max_abs_diff(&x0) < 1e-10);
    }

    #[test]
    fn correct_is_deterministic_per_seed() {
        let sched = build_schedule(20, 1e-3, 2e-2).unwrap();
        let model = build_unet(UNetConfig {
            in_channels: 1,
            base_channels: 4,
            depth: 1,
            time_embed_dim: 8,
            seed: 3,
        })
        .unwrap();
        let mut rng = Rng::new(8);
        let y = gaussian(&mut rng, &[8, 8]).unwrap().map(|v| 0.5 + 0.1 * v);
        let a = correct(&y, 10, &model, &sched, &mut Rng::new(42)).unwrap();
        let b = correct(&y, 10, &model, &sched, &mut Rng::new(42)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn train_step_loss_nonnegative_and_identical_images_agree() {
        let sched = build_schedule(10, 1e-3, 1e-2).unwrap();
        let mut model = build_unet(UNetConfig {
            in_channels: 1,
            base_channels: 4,
            depth: 1,
            time_embed_dim: 8,
            seed: 4,
        })
        .unwrap();
        let mut rng = Rng::new(10);
        let img = gaussian(&mut rng, &[8, 8]).unwrap().map(|v| 0.5 + 0.1 * v);
        let batch = vec![img.clone(), img.clone(), img];

        // Identical images with identical frozen draws give identical losses.
        let t = 4usize;
        let z = gaussian(&mut rng, &[8, 8]).unwrap();
        let draws: Vec<(usize, ImageTensor)> = (0..3).map(|_| (t, z.clone())).collect();
        let losses = frozen_losses(&model, &batch, &sched, &draws).unwrap();
        assert!((losses[0] - losses[1]).abs() < 1e-15);
        assert!((losses[1] - losses[2]).abs() < 1e-15);
        assert!(losses.iter().all(|&l| l >= 0.0));

        let mut opt = AdamState::new(model.param_count(), 1e-3);
        let loss = train_step(&mut model, &batch, &sched, &mut rng, &mut opt).unwrap();
        assert!(loss >= 0.0);
        assert!(train_step(&mut model, &[], &sched, &mut rng, &mut opt).is_err());
    }

    #[test]
    fn frozen_batch_overfits_within_200_steps() {
        let sched = build_schedule(50, 1e-3, 2e-2).unwrap();
        let mut passes = 0;
        for seed in 0..20u64 {
            let mut model = build_unet(UNetConfig {
                in_channels: 1,
                base_channels: 4,
                depth: 1,
                time_embed_dim: 8,
                seed,
            })
            .unwrap();
            let mut rng = Rng::new(900 + seed);
            let batch: Vec<ImageTensor> = (0..2)
                .map(|_| gaussian(&mut rng, &[8, 8]).unwrap().map(|v| 0.5 + 0.2 * v))
                .collect();
            let draws = draw_batch(&batch, &sched, &mut rng).unwrap();
            let mut opt = AdamState::new(model.param_count(), 1e-3);
            let first = train_step_frozen(&mut model, &batch, &sched, &draws, &mut opt).unwrap();
            let mut last = first;
            for _ in 1..200 {
                last = train_step_frozen(&mut model, &batch, &sched, &draws, &mut opt).unwrap();
            }
            if last < first {
                passes += 1;
            }
        }
        assert!(passes > 10, "only {passes}/20 seeds improved");
    }

    #[test]
    fn sweep_shapes_and_n0_matches_uncorrected_metrics() {
        let sched = build_schedule(20, 1e-3, 2e-2).unwrap();
        let mut rng = Rng::new(12);
        let clean: Vec<ImageTensor> = (0..3)
            .map(|_| gaussian(&mut rng, &[16, 16]).unwrap().map(|v| 0.5 + 0.1 * v))
            .collect();
        let corrupted: Vec<ImageTensor> = clean
            .iter()
            .map(|c| {
                let noise = gaussian(&mut rng, &[16, 16]).unwrap();
                c.add_scaled(&noise, 0.05).unwrap()
            })
            .collect();
        let outcome =
            sweep_n(&corrupted, &clean, &[0, 5, 10], &ZeroEpsilon, &sched, &Rng::new(3)).unwrap();
        assert_eq!(outcome.rows.len(), 3);
        assert_eq!(outcome.previews.len(), 3);

        // n = 0 row must equal metrics of the uncorrected inputs.
        let mut ssims = Vec::new();
        let mut nmses = Vec::new();
        for (y, c) in corrupted.iter().zip(&clean) {
            ssims.push(metrics::ssim(y, c).unwrap());
            nmses.push(metrics::nmse(y, c).unwrap());
        }
        let (sm, _) = mean_std(&ssims);
        let (nm, _) = mean_std(&nmses);
        assert!((outcome.rows[0].ssim_mean - sm).abs() < 1e-12);
        assert!((outcome.rows[0].nmse_mean - nm).abs() < 1e-12);

        let bad = sweep_n(&corrupted[..2], &clean, &[0], &ZeroEpsilon, &sched, &Rng::new(3));
        assert!(bad.is_err());
    }
}
