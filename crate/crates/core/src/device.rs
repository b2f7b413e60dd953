//! Simulated memristor crossbar.
//!
//! Every signed weight is carried by a differential pair of cells, `w =
//! (G+ - G-) * weight_scale`. Electroforming leaves both cells of a pair at
//! a random analogue conductance, so a freshly formed array is already a
//! matrix of random weights. RESET pushes a pair into the off state (both
//! cells near zero conductance), SET brings it back to a fresh random
//! formed state. Reads see multiplicative Gaussian noise `g' = g + A * s * g`.
//!
//! The array is laid out row-major with `rows` = inputs (word lines) and
//! `cols` = outputs (bit-line current sums).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    /// Mean conductance of a formed cell, in µS.
    pub mu_on: f32,
    /// Standard deviation of a formed cell, in µS.
    pub sigma_on: f32,
    /// Mean conductance of a reset or unformed cell, in µS.
    pub mu_off: f32,
    /// Standard deviation of a reset cell, in µS.
    pub sigma_off: f32,
    /// Multiplier from µS of conductance difference to a unitless weight.
    pub weight_scale: f32,
    /// Default read-noise level used by evaluation when none is given.
    pub read_noise_scale: f32,
    pub seed: u64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            mu_on: 100.0,
            sigma_on: 20.0,
            mu_off: 1.0,
            sigma_off: 0.5,
            weight_scale: 0.01,
            read_noise_scale: 0.0,
            seed: 0,
        }
    }
}

impl DeviceConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.mu_on,
            self.sigma_on,
            self.mu_off,
            self.sigma_off,
            self.weight_scale,
            self.read_noise_scale,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("device parameters must be finite".into()));
        }
        if !(self.mu_on > self.mu_off && self.mu_off >= 0.0) {
            return Err(Error::Config(format!(
                "need mu_on > mu_off >= 0, got mu_on={} mu_off={}",
                self.mu_on, self.mu_off
            )));
        }
        if self.sigma_on < 0.0 || self.sigma_off < 0.0 || self.read_noise_scale < 0.0 {
            return Err(Error::Config("standard deviations and noise scale must be >= 0".into()));
        }
        if self.weight_scale <= 0.0 {
            return Err(Error::Config("weight_scale must be > 0".into()));
        }
        Ok(())
    }

    /// Weight scale that gives formed pairs the Kaiming-normal standard
    /// deviation `gain * sqrt(2 / fan_in)`.
    ///
    /// The pair difference of two independent `N(mu_on, sigma_on)` cells has
    /// standard deviation `sqrt(2) * sigma_on`.
    pub fn kaiming_weight_scale(&self, fan_in: usize, gain: f32) -> f32 {
        let target = gain * (2.0 / fan_in.max(1) as f32).sqrt();
        let pair_std = std::f32::consts::SQRT_2 * self.sigma_on.max(f32::MIN_POSITIVE);
        target / pair_std
    }

    /// Standard deviation of a formed pair's weight, ignoring clamping.
    pub fn formed_weight_std(&self) -> f32 {
        std::f32::consts::SQRT_2 * self.sigma_on * self.weight_scale
    }

    /// Standard deviation of a reset pair's residual weight, ignoring
    /// clamping. Both cells are independent off-state draws.
    pub fn reset_weight_std(&self) -> f32 {
        std::f32::consts::SQRT_2 * self.sigma_off * self.weight_scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairState {
    Formed,
    Reset,
}

/// Paired conductance matrices with per-pair state and the RNG stream used
/// for every stochastic programming operation on this array.
#[derive(Clone, Debug)]
pub struct DifferentialCrossbar {
    rows: usize,
    cols: usize,
    g_pos: Vec<f32>,
    g_neg: Vec<f32>,
    state: Vec<PairState>,
    config: DeviceConfig,
    rng: ChaCha8Rng,
}

/// Draw from `N(mean, std)` clamped at zero.
fn draw_conductance(rng: &mut ChaCha8Rng, mean: f32, std: f32) -> f32 {
    let g = if std > 0.0 {
        // std > 0 and finite was validated, so the constructor cannot fail.
        Normal::new(mean, std).expect("valid normal").sample(rng)
    } else {
        mean
    };
    g.max(0.0)
}

impl DifferentialCrossbar {
    /// Electroform a fresh `rows x cols` array. Every pair ends up Formed
    /// with both cells drawn independently from the on distribution.
    pub fn electroform(rows: usize, cols: usize, config: DeviceConfig) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Argument(format!("crossbar shape must be non-empty, got {rows}x{cols}")));
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = rows * cols;
        let mut g_pos = Vec::with_capacity(n);
        let mut g_neg = Vec::with_capacity(n);
        for _ in 0..n {
            g_pos.push(draw_conductance(&mut rng, config.mu_on, config.sigma_on));
            g_neg.push(draw_conductance(&mut rng, config.mu_on, config.sigma_on));
        }
        Ok(Self {
            rows,
            cols,
            g_pos,
            g_neg,
            state: vec![PairState::Formed; n],
            config,
            rng,
        })
    }

    /// Build an array from explicit conductances, e.g. when restoring a
    /// checkpoint or hand-constructing a test case. The RNG stream starts
    /// from `config.seed`.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        g_pos: Vec<f32>,
        g_neg: Vec<f32>,
        state: Vec<PairState>,
        config: DeviceConfig,
    ) -> Result<Self> {
        let n = rows * cols;
        if n == 0 {
            return Err(Error::Argument("crossbar shape must be non-empty".into()));
        }
        for (name, len) in [("g_pos", g_pos.len()), ("g_neg", g_neg.len()), ("state", state.len())] {
            if len != n {
                return Err(Error::Argument(format!("{name} has {len} entries, expected {n} for {rows}x{cols}")));
            }
        }
        if g_pos.iter().chain(&g_neg).any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::Argument("conductances must be finite and >= 0".into()));
        }
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            rows,
            cols,
            g_pos,
            g_neg,
            state,
            config,
            rng,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn g_pos(&self) -> &[f32] {
        &self.g_pos
    }

    pub fn g_neg(&self) -> &[f32] {
        &self.g_neg
    }

    pub fn state(&self) -> &[PairState] {
        &self.state
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    /// Position of the programming RNG stream, for checkpointing.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    fn check_mask(&self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.len() {
            return Err(Error::shape("crossbar mask", &[self.rows, self.cols], &[mask.len()]));
        }
        Ok(())
    }

    /// RESET every masked pair. Already-reset pairs are left alone.
    pub fn reset_pairs(&mut self, mask: &[bool]) -> Result<usize> {
        self.check_mask(mask)?;
        let (mu, sigma) = (self.config.mu_off, self.config.sigma_off);
        let mut switched = 0;
        for i in 0..mask.len() {
            if mask[i] && self.state[i] == PairState::Formed {
                self.g_pos[i] = draw_conductance(&mut self.rng, mu, sigma);
                self.g_neg[i] = draw_conductance(&mut self.rng, mu, sigma);
                self.state[i] = PairState::Reset;
                switched += 1;
            }
        }
        Ok(switched)
    }

    /// SET every masked pair that is currently reset. The new conductances
    /// are fresh draws from the on distribution, not the pre-reset values.
    pub fn set_pairs(&mut self, mask: &[bool]) -> Result<usize> {
        self.check_mask(mask)?;
        let (mu, sigma) = (self.config.mu_on, self.config.sigma_on);
        let mut switched = 0;
        for i in 0..mask.len() {
            if mask[i] && self.state[i] == PairState::Reset {
                self.g_pos[i] = draw_conductance(&mut self.rng, mu, sigma);
                self.g_neg[i] = draw_conductance(&mut self.rng, mu, sigma);
                self.state[i] = PairState::Formed;
                switched += 1;
            }
        }
        Ok(switched)
    }

    /// Restart the array's RNG stream, which drives programming error and
    /// RESET/SET redraws.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// One-shot multiplicative programming error applied to every cell,
    /// `g <- max(0, g + A * scale * g)`. Models the imprecision of a
    /// programming cycle rather than a transient read.
    pub fn perturb_programming(&mut self, scale: f32) -> Result<()> {
        if !(scale >= 0.0) {
            return Err(Error::Argument(format!("programming noise scale must be >= 0, got {scale}")));
        }
        if scale == 0.0 {
            return Ok(());
        }
        for g in self.g_pos.iter_mut().chain(self.g_neg.iter_mut()) {
            let a: f32 = self.rng.sample(StandardNormal);
            *g = (*g + a * scale * *g).max(0.0);
        }
        Ok(())
    }

    /// Noiseless weights.
    pub fn weights(&self) -> Vec<f32> {
        let s = self.config.weight_scale;
        self.g_pos.iter().zip(&self.g_neg).map(|(p, n)| (p - n) * s).collect()
    }

    /// Read the weight matrix through the noisy read path. Each call draws
    /// fresh noise, independently for the two cells of every pair.
    pub fn read_weights<R: Rng + ?Sized>(&self, noise_scale: f32, rng: &mut R) -> Result<Vec<f32>> {
        if !(noise_scale >= 0.0) {
            return Err(Error::Argument(format!("read noise scale must be >= 0, got {noise_scale}")));
        }
        if noise_scale == 0.0 {
            return Ok(self.weights());
        }
        let s = self.config.weight_scale;
        let mut out = Vec::with_capacity(self.len());
        for (&p, &n) in self.g_pos.iter().zip(&self.g_neg) {
            let ap: f32 = rng.sample(StandardNormal);
            let an: f32 = rng.sample(StandardNormal);
            out.push((read_cell(p, ap, noise_scale) - read_cell(n, an, noise_scale)) * s);
        }
        Ok(out)
    }

    /// In-memory vector-matrix product: `y_j = sum_i x_i w_ij` with the
    /// weights read once through the noisy read path.
    pub fn vmm<R: Rng + ?Sized>(&self, input: &[f32], noise_scale: f32, rng: &mut R) -> Result<Vec<f32>> {
        if input.len() != self.rows {
            return Err(Error::shape("vmm input", &[self.rows], &[input.len()]));
        }
        let w = self.read_weights(noise_scale, rng)?;
        Ok(matvec_rows(&w, self.rows, self.cols, input))
    }
}

/// A single noisy read of one cell.
#[inline]
pub fn read_cell(g: f32, a: f32, noise_scale: f32) -> f32 {
    g + a * noise_scale * g
}

/// `y = W^T x` for a row-major `rows x cols` matrix `W`.
pub fn matvec_rows(w: &[f32], rows: usize, cols: usize, x: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0f32; cols];
    for (i, &xi) in x.iter().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> DeviceConfig {
        DeviceConfig {
            seed: 7,
            ..DeviceConfig::default()
        }
    }

    #[test]
    fn zero_variance_forming_gives_zero_weights() {
        let c = DeviceConfig { sigma_on: 0.0, ..cfg() };
        let x = DifferentialCrossbar::electroform(2, 2, c).unwrap();
        assert!(x.g_pos().iter().chain(x.g_neg()).all(|&g| g == 100.0));
        assert!(x.weights().iter().all(|&w| w == 0.0));
        assert!(x.state().iter().all(|&s| s == PairState::Formed));
    }

    #[test]
    fn zero_sized_array_is_rejected() {
        assert!(DifferentialCrossbar::electroform(0, 3, cfg()).is_err());
        assert!(DifferentialCrossbar::electroform(3, 0, cfg()).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = DeviceConfig {
            mu_on: 0.5,
            mu_off: 1.0,
            ..cfg()
        };
        assert!(DifferentialCrossbar::electroform(2, 2, bad).is_err());
        let bad = DeviceConfig {
            weight_scale: 0.0,
            ..cfg()
        };
        assert!(DifferentialCrossbar::electroform(2, 2, bad).is_err());
    }

    #[test]
    fn forming_is_deterministic_per_seed() {
        let a = DifferentialCrossbar::electroform(16, 8, cfg()).unwrap();
        let b = DifferentialCrossbar::electroform(16, 8, cfg()).unwrap();
        assert_eq!(a.g_pos(), b.g_pos());
        assert_eq!(a.g_neg(), b.g_neg());
        let c = DifferentialCrossbar::electroform(16, 8, DeviceConfig { seed: 8, ..cfg() }).unwrap();
        assert_ne!(a.g_pos(), c.g_pos());
    }

    #[test]
    fn formed_weight_moments_match_difference_of_gaussians() {
        let x = DifferentialCrossbar::electroform(1000, 1000, cfg()).unwrap();
        let w = x.weights();
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // clamping at 0 is a 5-sigma event for N(100, 20) and is ignored here
        let expected_var = 2.0 * (20.0f64 * 0.01).powi(2);
        let se_mean = (expected_var / n).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean} vs se {se_mean}");
        // variance of the sample variance for a Gaussian is 2 sigma^4 / (n-1)
        let se_var = (2.0 * expected_var * expected_var / (n - 1.0)).sqrt();
        assert!((var - expected_var).abs() < 3.0 * se_var, "var {var} vs {expected_var}");
    }

    #[test]
    fn formed_cell_moments_converge() {
        let x = DifferentialCrossbar::electroform(100_000, 1, cfg()).unwrap();
        let g = x.g_pos();
        let n = g.len() as f64;
        let mean = g.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = g.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 100.0).abs() < 3.0 * 20.0 / n.sqrt());
        let se_var = (2.0 * 20.0f64.powi(4) / (n - 1.0)).sqrt();
        assert!((var - 400.0).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn small_array_weights_are_symmetric_about_zero() {
        // 128 pairs, like a single column of the measured array
        let x = DifferentialCrossbar::electroform(128, 1, cfg()).unwrap();
        let w = x.weights();
        let pos = w.iter().filter(|&&v| v > 0.0).count();
        // binomial(128, 0.5): +-4 sigma is +-22.6
        assert!((pos as i64 - 64).abs() <= 22, "{pos} positive of 128");
        let mean = w.iter().sum::<f32>() / 128.0;
        assert!(mean.abs() < 4.0 * x.config().formed_weight_std() / 128f32.sqrt());
        // unimodal: the histogram's central bin is at least as full as the tails
        let std = x.config().formed_weight_std();
        let centre = w.iter().filter(|v| v.abs() < 0.5 * std).count();
        let tails = w.iter().filter(|v| v.abs() > 1.5 * std).count();
        assert!(centre > tails);
    }

    #[test]
    fn reset_with_empty_mask_is_identity() {
        let mut x = DifferentialCrossbar::electroform(4, 4, cfg()).unwrap();
        let before = x.clone();
        assert_eq!(x.reset_pairs(&[false; 16]).unwrap(), 0);
        assert_eq!(x.g_pos(), before.g_pos());
        assert_eq!(x.g_neg(), before.g_neg());
        assert_eq!(x.state(), before.state());
    }

    #[test]
    fn reset_to_exact_zero() {
        let c = DeviceConfig {
            mu_off: 0.0,
            sigma_off: 0.0,
            ..cfg()
        };
        let mut x = DifferentialCrossbar::electroform(5, 3, c).unwrap();
        x.reset_pairs(&[true; 15]).unwrap();
        assert!(x.weights().iter().all(|&w| w == 0.0));
        assert!(x.state().iter().all(|&s| s == PairState::Reset));
    }

    #[test]
    fn reset_is_idempotent() {
        let mut x = DifferentialCrossbar::electroform(4, 4, cfg()).unwrap();
        let mask: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
        x.reset_pairs(&mask).unwrap();
        let once = x.clone();
        assert_eq!(x.reset_pairs(&mask).unwrap(), 0);
        assert_eq!(x.g_pos(), once.g_pos());
        assert_eq!(x.g_neg(), once.g_neg());
    }

    #[test]
    fn mask_shape_mismatch_is_rejected() {
        let mut x = DifferentialCrossbar::electroform(4, 4, cfg()).unwrap();
        assert!(x.reset_pairs(&[true; 15]).is_err());
        assert!(x.set_pairs(&[true; 17]).is_err());
    }

    #[test]
    fn half_reset_produces_zero_peak() {
        let mut x = DifferentialCrossbar::electroform(1000, 1000, cfg()).unwrap();
        let mask: Vec<bool> = (0..x.len()).map(|i| i % 2 == 0).collect();
        x.reset_pairs(&mask).unwrap();
        let w = x.weights();
        let c = x.config();
        let near_zero = 3.0 * c.reset_weight_std();
        let peak = w.iter().filter(|v| v.abs() < near_zero).count() as f64 / w.len() as f64;
        assert!(peak >= 0.49, "zero peak holds {peak}");
        // the masked pairs themselves sit inside the peak
        let masked_in_peak = w.iter().zip(&mask).filter(|(v, &m)| m && v.abs() < near_zero).count() as f64;
        assert!(masked_in_peak / (w.len() / 2) as f64 >= 0.99);
        // the unmasked half keeps its original spread
        let kept: Vec<f32> = w.iter().zip(&mask).filter(|(_, &m)| !m).map(|(v, _)| *v).collect();
        let var = kept.iter().map(|v| v * v).sum::<f32>() / kept.len() as f32;
        let expected = c.formed_weight_std().powi(2);
        assert!((var / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn reset_then_set_with_zero_variance_restores_zero_weight() {
        let c = DeviceConfig { sigma_on: 0.0, ..cfg() };
        let mut x = DifferentialCrossbar::electroform(1, 1, c).unwrap();
        x.reset_pairs(&[true]).unwrap();
        assert_eq!(x.state()[0], PairState::Reset);
        x.set_pairs(&[true]).unwrap();
        assert_eq!(x.state()[0], PairState::Formed);
        assert_eq!(x.weights()[0], 0.0);
        assert_eq!(x.g_pos()[0], 100.0);
    }

    #[test]
    fn set_with_empty_mask_is_identity() {
        let mut x = DifferentialCrossbar::electroform(3, 3, cfg()).unwrap();
        x.reset_pairs(&[true; 9]).unwrap();
        let before = x.clone();
        x.set_pairs(&[false; 9]).unwrap();
        assert_eq!(x.g_pos(), before.g_pos());
        assert_eq!(x.state(), before.state());
    }

    #[test]
    fn set_draws_fresh_uncorrelated_conductances() {
        let mut x = DifferentialCrossbar::electroform(100, 100, cfg()).unwrap();
        let original = x.weights();
        x.reset_pairs(&[true; 10_000]).unwrap();
        x.set_pairs(&[true; 10_000]).unwrap();
        let fresh = x.weights();
        let r = correlation(&original, &fresh);
        assert!(r.abs() < 0.1, "correlation {r}");
        // deterministic under seed
        let mut y = DifferentialCrossbar::electroform(100, 100, cfg()).unwrap();
        y.reset_pairs(&[true; 10_000]).unwrap();
        y.set_pairs(&[true; 10_000]).unwrap();
        assert_eq!(y.weights(), fresh);
    }

    fn correlation(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn noiseless_read_is_exact() {
        let x = DifferentialCrossbar::electroform(8, 8, cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(x.read_weights(0.0, &mut rng).unwrap(), x.weights());
        assert!(x.read_weights(-0.1, &mut rng).is_err());
    }

    #[test]
    fn read_noise_matches_multiplicative_moments() {
        let c = DeviceConfig {
            sigma_on: 0.0,
            mu_off: 0.0,
            sigma_off: 0.0,
            weight_scale: 1.0,
            ..cfg()
        };
        // one formed pair whose negative cell is reset to exactly 0 µS,
        // so the read weight equals the noisy positive cell
        let mut x = DifferentialCrossbar::from_parts(1, 1, vec![100.0], vec![0.0], vec![PairState::Formed], c).unwrap();
        let _ = &mut x;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reads: Vec<f64> = (0..10_000).map(|_| x.read_weights(0.03, &mut rng).unwrap()[0] as f64).collect();
        let n = reads.len() as f64;
        let mean = reads.iter().sum::<f64>() / n;
        let std = (reads.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 3.0).abs() < 0.05 * 3.0, "std {std}");
        assert!((mean - 100.0).abs() < 3.0 * 3.0 / n.sqrt());
    }

    #[test]
    fn zero_conductance_has_no_read_noise() {
        let c = DeviceConfig {
            weight_scale: 1.0,
            ..cfg()
        };
        let x = DifferentialCrossbar::from_parts(1, 2, vec![0.0, 0.0], vec![0.0, 0.0], vec![PairState::Reset; 2], c)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(x.read_weights(0.5, &mut rng).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn vmm_hand_computed() {
        let c = DeviceConfig {
            weight_scale: 0.5,
            ..cfg()
        };
        // weights (g+ - g-) * 0.5:
        //   [ 1  -2 ]
        //   [ 3   0 ]
        //   [ 0.5 4 ]
        let x = DifferentialCrossbar::from_parts(
            3,
            2,
            vec![12.0, 10.0, 16.0, 10.0, 11.0, 18.0],
            vec![10.0, 14.0, 10.0, 10.0, 10.0, 10.0],
            vec![PairState::Formed; 6],
            c,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(x.weights(), vec![1.0, -2.0, 3.0, 0.0, 0.5, 4.0]);
        let y = x.vmm(&[1.0, 2.0, -2.0], 0.0, &mut rng).unwrap();
        // y0 = 1 + 6 - 1 = 6; y1 = -2 + 0 - 8 = -10
        assert_eq!(y, vec![6.0, -10.0]);
        assert_eq!(x.vmm(&[0.0; 3], 0.0, &mut rng).unwrap(), vec![0.0, 0.0]);
        assert_eq!(x.vmm(&[0.0, 1.0, 0.0], 0.0, &mut rng).unwrap(), vec![3.0, 0.0]);
        assert!(x.vmm(&[1.0, 2.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn programming_perturbation_keeps_conductance_physical() {
        let mut x = DifferentialCrossbar::electroform(50, 50, cfg()).unwrap();
        let before = x.weights();
        x.perturb_programming(0.0).unwrap();
        assert_eq!(x.weights(), before);
        x.perturb_programming(2.0).unwrap();
        assert!(x.g_pos().iter().chain(x.g_neg()).all(|&g| g >= 0.0));
        assert!(x.perturb_programming(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn vmm_at_zero_noise_equals_dense_matvec(
            rows in 1usize..12,
            cols in 1usize..12,
            seed in any::<u64>(),
            input in proptest::collection::vec(-2.0f32..2.0, 12),
        ) {
            let x = DifferentialCrossbar::electroform(rows, cols, DeviceConfig { seed, ..cfg() }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = x.read_weights(0.0, &mut rng).unwrap();
            let y = x.vmm(&input[..rows], 0.0, &mut rng).unwrap();
            for j in 0..cols {
                let mut acc = 0.0f32;
                for i in 0..rows {
                    acc += input[i] * w[i * cols + j];
                }
                prop_assert_eq!(acc.to_bits(), y[j].to_bits());
            }
        }

        #[test]
        fn conductances_stay_non_negative(seed in any::<u64>(), sigma in 0.0f32..200.0) {
            let c = DeviceConfig { seed, sigma_on: sigma, sigma_off: sigma / 10.0, ..cfg() };
            let mut x = DifferentialCrossbar::electroform(8, 8, c).unwrap();
            let mask: Vec<bool> = (0..64).map(|i| (i as u64 ^ seed).is_multiple_of(2)).collect();
            x.reset_pairs(&mask).unwrap();
            prop_assert!(x.g_pos().iter().chain(x.g_neg()).all(|&g| g >= 0.0));
        }
    }
}
