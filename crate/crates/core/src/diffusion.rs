//! Diffusion core: noise schedule, forward (noising) process, ε-prediction
//! loss, and deterministic DDIM reverse updates.
//!
//! Closed forms use the cumulative signal level ᾱ_t = Π_{s≤t} (1 − β_s),
//! with ᾱ_0 ≡ 1:
//!
//! - forward: `z_t = √ᾱ_t z_0 + √(1−ᾱ_t) ε`
//! - reverse: `z_{t'} = √ᾱ_{t'} (z_t − √(1−ᾱ_t) ε̂)/√ᾱ_t + √(1−ᾱ_{t'}) ε̂`
//!
//! With a perfect ε̂ the reverse updates telescope and recover z_0 exactly.

use serde::{Deserialize, Serialize};

use crate::codec::LatentTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { steps: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

/// Precomputed β, α and ᾱ tables, indexed by timestep `1..=T` (index 0 is
/// the ᾱ_0 = 1 convention).
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t = 1 − β_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t for t in 0..=T, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Builds a linear β schedule. ᾱ is accumulated by an ordinary running
/// product, which is stable because every factor is in (0, 1).
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::InvalidSchedule("need at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let mut betas = Vec::with_capacity(steps);
    for i in 0..steps {
        let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
        betas.push(beta_start + frac * (beta_end - beta_start));
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for &a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { betas, alphas, alpha_bars })
}

fn check_same_shape(a: &LatentTensor, b: &LatentTensor, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "{what}: {}x{}x{}x{} vs {}x{}x{}x{}",
            a.channels, a.frames, a.height, a.width, b.channels, b.frames, b.height, b.width
        )));
    }
    Ok(())
}

/// Forward process at step `t`: `√ᾱ_t z0 + √(1−ᾱ_t) eps`. `t = 0` returns
/// `z0` unchanged.
pub fn q_sample(z0: &LatentTensor, t: usize, eps: &LatentTensor, sched: &NoiseSchedule) -> Result<LatentTensor> {
    check_same_shape(z0, eps, "q_sample z0 vs eps")?;
    if t > sched.steps() {
        return Err(Error::InvalidSchedule(format!("t = {t} beyond T = {}", sched.steps())));
    }
    let ab = sched.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z0.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = sa * *o + sn * *e;
    }
    Ok(out)
}

/// ε-prediction objective: mean squared error between predicted and true
/// noise.
pub fn training_loss(eps_hat: &LatentTensor, eps: &LatentTensor) -> Result<f64> {
    check_same_shape(eps_hat, eps, "loss eps_hat vs eps")?;
    let n = eps.numel() as f64;
    let mut acc = 0.0;
    for (a, b) in eps_hat.data().iter().zip(eps.data()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / n)
}

/// One deterministic reverse update from step `t` to `t_prev < t`.
pub fn ddim_step(
    z_t: &LatentTensor,
    eps_hat: &LatentTensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<LatentTensor> {
    check_same_shape(z_t, eps_hat, "ddim z_t vs eps_hat")?;
    if t_prev >= t || t > sched.steps() {
        return Err(Error::InvalidStepOrder { t, t_prev });
    }
    let ab_t = sched.alpha_bar(t);
    let ab_p = sched.alpha_bar(t_prev);
    let noise_t = (1.0 - ab_t).sqrt();
    let noise_p = (1.0 - ab_p).sqrt();
    let scale = (ab_p / ab_t).sqrt();
    let mut out = z_t.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps_hat.data()) {
        // √ᾱ_p · x̂0 + √(1−ᾱ_p) · ε̂ with x̂0 = (z_t − √(1−ᾱ_t) ε̂)/√ᾱ_t.
        *o = scale * (*o - noise_t * *e) + noise_p * *e;
    }
    Ok(out)
}

/// Evenly spaced reverse schedule from `T` down to 0, at most `n` segments.
pub fn make_step_schedule(t_max: usize, n: usize) -> Vec<usize> {
    let n = n.clamp(1, t_max);
    let mut steps: Vec<usize> = (0..=n).map(|i| (t_max * (n - i)) / n).collect();
    steps.dedup();
    steps
}

/// Runs the full reverse pass: `denoiser(x_t, t, conditioning) -> ε̂`,
/// iterated over a strictly decreasing step schedule ending at 0.
/// Deterministic given `x_t` and the denoiser.
pub fn sample<C, F>(
    denoiser: F,
    x_t: LatentTensor,
    conditioning: &C,
    step_schedule: &[usize],
    sched: &NoiseSchedule,
) -> Result<LatentTensor>
where
    F: Fn(&LatentTensor, usize, &C) -> Result<LatentTensor>,
{
    if step_schedule.len() < 2
        || step_schedule.last() != Some(&0)
        || !step_schedule.windows(2).all(|w| w[0] > w[1])
    {
        return Err(Error::InvalidStepSchedule);
    }
    let mut x = x_t;
    for pair in step_schedule.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        let eps_hat = denoiser(&x, t, conditioning)?;
        x = ddim_step(&x, &eps_hat, t, t_prev, sched)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scalar(v: f64) -> LatentTensor {
        LatentTensor::new(1, 1, 1, 1, vec![v]).unwrap()
    }

    fn random_latent(rng: &mut ChaCha8Rng, c: usize, f: usize, h: usize, w: usize) -> LatentTensor {
        let data = (0..c * f * h * w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        LatentTensor::new(c, f, h, w, data).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn two_step_schedule_by_hand() {
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn alpha_bar_matches_log_domain_oracle() {
        let s = make_schedule(1000, 1e-4, 2e-2).unwrap();
        // Oracle: accumulate in log space.
        let mut log_acc = 0.0;
        for t in 1..=1000 {
            log_acc += (1.0 - s.beta(t)).ln();
        }
        let oracle = log_acc.exp();
        let rel = ((s.alpha_bar(1000) - oracle) / oracle).abs();
        assert!(rel < 1e-12, "relative error {rel}");
    }

    #[test]
    fn alpha_bar_is_strictly_decreasing_in_unit_interval() {
        let s = make_schedule(500, 1e-4, 5e-2).unwrap();
        for t in 1..=500 {
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 1.0).is_err());
    }

    #[test]
    fn q_sample_at_t_zero_is_identity() {
        let s = make_schedule(10, 1e-4, 2e-2).unwrap();
        let z0 = scalar(1.25);
        let eps = scalar(3.0);
        let z = q_sample(&z0, 0, &eps, &s).unwrap();
        assert_eq!(z.data()[0], 1.25);
    }

    #[test]
    fn q_sample_scalar_arithmetic() {
        // ᾱ = 0.25: z = 0.5·2 + √0.75·1 = 1.8660…
        let s = make_schedule(1, 0.75, 0.75).unwrap();
        let z = q_sample(&scalar(2.0), 1, &scalar(1.0), &s).unwrap();
        assert!((z.data()[0] - (1.0 + 0.75f64.sqrt())).abs() < 1e-12);
        assert!((z.data()[0] - 1.8660254037844386).abs() < 1e-12);
    }

    #[test]
    fn q_sample_monte_carlo_moments() {
        let s = make_schedule(100, 1e-3, 5e-2).unwrap();
        let t = 60;
        let ab = s.alpha_bar(t);
        let z0 = 0.8;
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            let z = q_sample(&scalar(z0), t, &scalar(eps), &s).unwrap().data()[0];
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expected_mean = ab.sqrt() * z0;
        let expected_var = 1.0 - ab;
        // 3σ bands for the MC estimators.
        let mean_tol = 3.0 * expected_var.sqrt() / (n as f64).sqrt();
        let var_tol = 3.0 * expected_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((mean - expected_mean).abs() < mean_tol, "mean {mean} vs {expected_mean}");
        assert!((var - expected_var).abs() < var_tol, "var {var} vs {expected_var}");
    }

    #[test]
    fn stepwise_chain_variance_matches_closed_form_for_small_t() {
        // Composing z_t = √(1−β_t) z_{t−1} + √β_t ε_t from z_0 gives marginal
        // variance v_t = (1−β_t) v_{t−1} + β_t; the closed form says 1 − ᾱ_t.
        let s = make_schedule(5, 0.1, 0.3).unwrap();
        let mut var = 0.0;
        for t in 1..=5 {
            var = (1.0 - s.beta(t)) * var + s.beta(t);
            assert!((var - (1.0 - s.alpha_bar(t))).abs() < 1e-15);
        }
    }

    #[test]
    fn training_loss_basics_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_latent(&mut rng, 2, 3, 4, 5);
        assert_eq!(training_loss(&a, &a).unwrap(), 0.0);

        let mut b = a.clone();
        for x in b.data_mut() {
            *x += 1.0;
        }
        assert!((training_loss(&b, &a).unwrap() - 1.0).abs() < 1e-12);

        let c = random_latent(&mut rng, 2, 3, 4, 5);
        let mut acc = 0.0;
        for i in 0..a.numel() {
            let d = a.data()[i] - c.data()[i];
            acc += d * d;
        }
        let oracle = acc / a.numel() as f64;
        assert!((training_loss(&a, &c).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn perfect_oracle_inversion_recovers_z0() {
        let s = make_schedule(1000, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z0 = random_latent(&mut rng, 2, 2, 3, 3);
        let eps = random_latent(&mut rng, 2, 2, 3, 3);
        let z_t = q_sample(&z0, 1000, &eps, &s).unwrap();
        let steps = make_step_schedule(1000, 50);
        let recovered =
            sample(|_, _, _: &()| Ok(eps.clone()), z_t, &(), &steps, &s).unwrap();
        let worst = recovered
            .data()
            .iter()
            .zip(z0.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "worst deviation {worst}");
    }

    #[test]
    fn zero_eps_hat_is_pure_rescale() {
        let s = make_schedule(100, 1e-3, 2e-2).unwrap();
        let z = scalar(2.0);
        let out = ddim_step(&z, &scalar(0.0), 80, 40, &s).unwrap();
        let expected = (s.alpha_bar(40) / s.alpha_bar(80)).sqrt() * 2.0;
        assert!((out.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_one_step_under_constant_eps_hat() {
        // With a constant ε̂ the implied x̂0 is preserved, so t → t' → t''
        // equals t → t'' exactly (up to fp noise).
        let s = make_schedule(200, 1e-4, 2e-2).unwrap();
        let z = scalar(1.3);
        let e = scalar(-0.4);
        let direct = ddim_step(&z, &e, 150, 30, &s).unwrap();
        let mid = ddim_step(&z, &e, 150, 90, &s).unwrap();
        let chained = ddim_step(&mid, &e, 90, 30, &s).unwrap();
        assert!((direct.data()[0] - chained.data()[0]).abs() < 1e-10);
    }

    #[test]
    fn bad_step_order_rejected() {
        let s = make_schedule(10, 1e-3, 2e-2).unwrap();
        let z = scalar(1.0);
        assert!(matches!(
            ddim_step(&z, &z, 3, 3, &s),
            Err(Error::InvalidStepOrder { .. })
        ));
        assert!(ddim_step(&z, &z, 3, 5, &s).is_err());
    }

    #[test]
    fn step_schedule_shape() {
        let steps = make_step_schedule(1000, 50);
        assert_eq!(steps.first(), Some(&1000));
        assert_eq!(steps.last(), Some(&0));
        assert!(steps.windows(2).all(|w| w[0] > w[1]));
        let tiny = make_step_schedule(3, 50);
        assert_eq!(tiny, vec![3, 2, 1, 0]);
    }

    #[test]
    fn sample_rejects_bad_schedules() {
        let s = make_schedule(10, 1e-3, 2e-2).unwrap();
        let z = scalar(0.5);
        let id = |_: &LatentTensor, _: usize, _: &()| Ok(scalar(0.0));
        assert!(sample(id, z.clone(), &(), &[10, 5], &s).is_err());
        assert!(sample(id, z.clone(), &(), &[5, 10, 0], &s).is_err());
        assert!(sample(id, z, &(), &[10, 5, 0], &s).is_ok());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s = make_schedule(10, 1e-3, 2e-2).unwrap();
        let a = LatentTensor::zeros(1, 1, 2, 2);
        let b = LatentTensor::zeros(1, 1, 2, 3);
        assert!(q_sample(&a, 1, &b, &s).is_err());
        assert!(training_loss(&a, &b).is_err());
    }
}
