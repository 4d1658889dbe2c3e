//! One-dimensional frequency-domain lab.
//!
//! All signals live on a circular domain so the DFT identities for comb
//! subsampling, decimation and first-order-hold interpolation hold exactly.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpectralError {
    #[error("signal needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("signal sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("gaussian sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("gaussian radius {radius} is below ceil(3*sigma) = {required}")]
    RadiusTooSmall { radius: usize, required: usize },
    #[error("kernel of length {kernel} is longer than the signal ({signal})")]
    KernelTooLong { kernel: usize, signal: usize },
    #[error("resampling factor must be at least 2, got {0}")]
    FactorTooSmall(usize),
    #[error("factor {factor} does not divide signal length {length}")]
    FactorNotDivisor { factor: usize, length: usize },
    #[error("only a resampling factor of 2 is supported, got {0}")]
    UnsupportedFactor(usize),
    #[error("signal length must be even, got {0}")]
    OddLength(usize),
    #[error("signal length must be at least {min}, got {length}")]
    LengthBelow { min: usize, length: usize },
    #[error("energy fraction must lie in (0, 1], got {0}")]
    InvalidEnergyFraction(f64),
    #[error("spectrum carries no energy")]
    ZeroEnergy,
}

/// Real samples on a circular domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
}

impl Signal {
    pub fn new(samples: Vec<f64>) -> Result<Self, SpectralError> {
        if samples.len() < 2 {
            return Err(SpectralError::TooShort(samples.len()));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite { index });
        }
        Ok(Self { samples })
    }

    pub fn constant(value: f64, len: usize) -> Result<Self, SpectralError> {
        Self::new(vec![value; len])
    }

    pub fn impulse(len: usize) -> Result<Self, SpectralError> {
        let mut s = vec![0.0; len];
        if let Some(first) = s.first_mut() {
            *first = 1.0;
        }
        Self::new(s)
    }

    /// `(-1)^n`, the Nyquist-frequency signal.
    pub fn alternating(len: usize) -> Result<Self, SpectralError> {
        Self::new(
            (0..len)
                .map(|n| if n % 2 == 0 { 1.0 } else { -1.0 })
                .collect(),
        )
    }

    /// `cos(2*pi*cycles*n/len)`.
    pub fn cosine(cycles: f64, len: usize) -> Result<Self, SpectralError> {
        Self::new(
            (0..len)
                .map(|n| (2.0 * PI * cycles * n as f64 / len as f64).cos())
                .collect(),
        )
    }

    /// Standard-normal white noise from the seeded generator.
    pub fn white_noise(seed: u64, len: usize) -> Result<Self, SpectralError> {
        let mut rng = crate::rng::seeded(seed);
        Self::new(
            (0..len)
                .map(|_| crate::rng::standard_normal(&mut rng))
                .collect(),
        )
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Circular shift: `out[n] = x[n - k mod N]`.
    pub fn shifted(&self, k: usize) -> Signal {
        let n = self.len();
        let samples = (0..n).map(|i| self.samples[(i + n - k % n) % n]).collect();
        Signal { samples }
    }

    pub fn norm(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self - reference‖ / ‖reference‖`.
    pub fn relative_distance(&self, reference: &Signal) -> f64 {
        assert_eq!(self.len(), reference.len(), "length mismatch");
        let diff: f64 = self
            .samples
            .iter()
            .zip(&reference.samples)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / reference.norm()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,value")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{i},{v}")?;
        }
        Ok(())
    }
}

/// DFT bins of a [`Signal`]; bin `k` sits at angular frequency `2*pi*k/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Folded angular frequency of bin `k`, in `[0, pi]`.
    pub fn frequency(&self, k: usize) -> f64 {
        let n = self.len() as f64;
        let w = 2.0 * PI * k as f64 / n;
        w.min(2.0 * PI - w)
    }

    /// Index of the bin with the largest magnitude among `0..=N/2`.
    pub fn peak_bin(&self) -> usize {
        let half = self.len() / 2;
        (0..=half)
            .max_by(|&a, &b| self.bins[a].norm().total_cmp(&self.bins[b].norm()))
            .unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,re,im")?;
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(out, "{i},{},{}", b.re, b.im)?;
        }
        Ok(())
    }
}

/// Standard deviation and half-width of a sampled Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub sigma: f64,
    pub radius: usize,
}

impl GaussianSpec {
    /// Smallest admissible radius, `ceil(3*sigma)`.
    pub fn with_sigma(sigma: f64) -> Result<Self, SpectralError> {
        let spec = Self {
            sigma,
            radius: (3.0 * sigma).ceil().max(1.0) as usize,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(SpectralError::NonPositiveSigma(self.sigma));
        }
        let required = (3.0 * self.sigma).ceil() as usize;
        if self.radius < required || self.radius == 0 {
            return Err(SpectralError::RadiusTooSmall {
                radius: self.radius,
                required: required.max(1),
            });
        }
        Ok(())
    }
}

/// Sampled Gaussian on `[-radius, radius]`, normalized to unit sum.
/// Index `radius` of the result is the center tap.
pub fn gaussian_kernel(spec: &GaussianSpec) -> Result<Signal, SpectralError> {
    spec.validate()?;
    let r = spec.radius as i64;
    let two_var = 2.0 * spec.sigma * spec.sigma;
    let raw: Vec<f64> = (-r..=r)
        .map(|n| (-((n * n) as f64) / two_var).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Signal::new(raw.into_iter().map(|w| w / total).collect())
}

/// Circular convolution with the Gaussian kernel.
pub fn gaussian_blur(x: &Signal, spec: &GaussianSpec) -> Result<Signal, SpectralError> {
    let kernel = gaussian_kernel(spec)?;
    if kernel.len() > x.len() {
        return Err(SpectralError::KernelTooLong {
            kernel: kernel.len(),
            signal: x.len(),
        });
    }
    let n = x.len();
    let r = spec.radius;
    let k = kernel.samples();
    let src = x.samples();
    let out = (0..n)
        .map(|i| {
            k.iter()
                .enumerate()
                .map(|(j, w)| w * src[(i + n + r - j) % n])
                .sum()
        })
        .collect();
    Signal::new(out)
}

fn check_factor(len: usize, factor: usize) -> Result<(), SpectralError> {
    if factor < 2 {
        return Err(SpectralError::FactorTooSmall(factor));
    }
    if !len.is_multiple_of(factor) {
        return Err(SpectralError::FactorNotDivisor {
            factor,
            length: len,
        });
    }
    Ok(())
}

/// Keeps every `factor`-th sample and zeroes the rest.
pub fn comb_subsample(x: &Signal, factor: usize) -> Result<Signal, SpectralError> {
    check_factor(x.len(), factor)?;
    let out = x
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &v)| if i % factor == 0 { v } else { 0.0 })
        .collect();
    Signal::new(out)
}

/// Keeps every `factor`-th sample, shortening the signal.
pub fn decimate(x: &Signal, factor: usize) -> Result<Signal, SpectralError> {
    check_factor(x.len(), factor)?;
    Signal::new(x.samples().iter().step_by(factor).copied().collect())
}

/// Inserts `factor - 1` zeros after every sample; the spectrum is repeated
/// `factor` times over the doubled frequency range.
pub fn zero_insert(x: &Signal, factor: usize) -> Result<Signal, SpectralError> {
    if factor < 2 {
        return Err(SpectralError::FactorTooSmall(factor));
    }
    let mut out = vec![0.0; x.len() * factor];
    for (i, &v) in x.samples().iter().enumerate() {
        out[i * factor] = v;
    }
    Signal::new(out)
}

/// First-order hold: zero insertion followed by the `[0.5, 1, 0.5]` kernel,
/// wrapping circularly at the end.
pub fn upsample_linear(x: &Signal, factor: usize) -> Result<Signal, SpectralError> {
    if factor != 2 {
        return Err(SpectralError::UnsupportedFactor(factor));
    }
    let n = x.len();
    let s = x.samples();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        out.push(s[i]);
        out.push(0.5 * (s[i] + s[(i + 1) % n]));
    }
    Signal::new(out)
}

/// Stride-2 sampling followed by linear interpolation back to full length.
pub fn ssa_downscale(x: &Signal) -> Result<Signal, SpectralError> {
    if !x.len().is_multiple_of(2) {
        return Err(SpectralError::OddLength(x.len()));
    }
    upsample_linear(&decimate(x, 2)?, 2)
}

/// Direct O(N^2) DFT with an exact twiddle table.
pub fn dft(x: &Signal) -> Spectrum {
    let n = x.len();
    let twiddles: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64))
        .collect();
    let s = x.samples();
    let bins = (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, &v) in s.iter().enumerate() {
                acc += twiddles[(k * i) % n] * v;
            }
            acc
        })
        .collect();
    Spectrum { bins }
}

/// Smallest folded frequency whose band `[0, w]` holds at least `rho` of the
/// spectral energy.
pub fn energy_bandwidth(s: &Spectrum, rho: f64) -> Result<f64, SpectralError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(SpectralError::InvalidEnergyFraction(rho));
    }
    let n = s.len();
    // Bins k and N-k share a folded frequency; group them by k <= N/2.
    let half = n / 2;
    let mut band_energy = vec![0.0; half + 1];
    for (k, b) in s.bins().iter().enumerate() {
        let folded = k.min(n - k);
        band_energy[folded] += b.norm_sqr();
    }
    let total: f64 = band_energy.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(SpectralError::ZeroEnergy);
    }
    let target = rho * total;
    let mut acc = 0.0;
    for (k, e) in band_energy.iter().enumerate() {
        acc += e;
        // Relative slack absorbs summation-order rounding when rho = 1.
        if acc >= target * (1.0 - 1e-12) {
            return Ok(s.frequency(k));
        }
    }
    Ok(s.frequency(half))
}

/// How closely the SSA chain and comb subsampling track Gaussian blurring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproximationReport {
    pub dist_ssa_gauss: f64,
    pub dist_comb_gauss: f64,
    pub bandwidth_in: f64,
    pub bandwidth_decimated: f64,
}

pub const BANDWIDTH_ENERGY: f64 = 0.95;

pub fn approximation_report(
    x: &Signal,
    spec: &GaussianSpec,
) -> Result<ApproximationReport, SpectralError> {
    if !x.len().is_multiple_of(2) {
        return Err(SpectralError::OddLength(x.len()));
    }
    if x.len() < 8 {
        return Err(SpectralError::LengthBelow {
            min: 8,
            length: x.len(),
        });
    }
    let gauss = gaussian_blur(x, spec)?;
    let ssa = ssa_downscale(x)?;
    let comb = comb_subsample(x, 2)?;
    let dec = decimate(x, 2)?;
    Ok(ApproximationReport {
        dist_ssa_gauss: ssa.relative_distance(&gauss),
        dist_comb_gauss: comb.relative_distance(&gauss),
        bandwidth_in: energy_bandwidth(&dft(x), BANDWIDTH_ENERGY)?,
        bandwidth_decimated: energy_bandwidth(&dft(&dec), BANDWIDTH_ENERGY)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_sqrt2() -> GaussianSpec {
        GaussianSpec {
            sigma: std::f64::consts::FRAC_1_SQRT_2,
            radius: 3,
        }
    }

    #[test]
    fn kernel_taps_at_inverse_sqrt2() {
        let k = gaussian_kernel(&half_sqrt2()).unwrap();
        let w = k.samples();
        // exp(-n^2) for n = 0..3, normalized by their two-sided total.
        let e = |n: f64| (-n * n).exp();
        let total = e(0.0) + 2.0 * (e(1.0) + e(2.0) + e(3.0));
        assert!((w[3] - 1.0 / total).abs() < 1e-15);
        assert!((w[3] - 0.5641).abs() < 1e-4);
        assert!((w[4] - 0.2075).abs() < 1e-4);
        assert!((w[4] / w[3] - (-1.0f64).exp()).abs() < 1e-14);
        assert!((w[5] - 0.01033).abs() < 1e-5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_kernel_is_near_delta() {
        let k = gaussian_kernel(&GaussianSpec {
            sigma: 0.1,
            radius: 1,
        })
        .unwrap();
        assert!(k.samples()[0] < 1e-20);
        assert!((k.samples()[1] - 1.0).abs() < 1e-20);
    }

    #[test]
    fn kernel_is_symmetric() {
        for &(sigma, radius) in &[(0.5, 2), (1.3, 4), (2.0, 9)] {
            let k = gaussian_kernel(&GaussianSpec { sigma, radius }).unwrap();
            let w = k.samples();
            for n in 0..=radius {
                assert_eq!(w[radius + n], w[radius - n]);
            }
        }
    }

    #[test]
    fn kernel_rejects_bad_specs() {
        assert_eq!(
            gaussian_kernel(&GaussianSpec {
                sigma: 0.0,
                radius: 3
            }),
            Err(SpectralError::NonPositiveSigma(0.0))
        );
        assert!(matches!(
            gaussian_kernel(&GaussianSpec {
                sigma: 1.0,
                radius: 2
            }),
            Err(SpectralError::RadiusTooSmall {
                radius: 2,
                required: 3
            })
        ));
    }

    #[test]
    fn blur_preserves_constants() {
        let x = Signal::constant(2.5, 16).unwrap();
        let y = gaussian_blur(&x, &half_sqrt2()).unwrap();
        for v in y.samples() {
            assert!((v - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn blur_of_impulse_is_the_kernel() {
        let spec = half_sqrt2();
        let k = gaussian_kernel(&spec).unwrap();
        let y = gaussian_blur(&Signal::impulse(16).unwrap(), &spec).unwrap();
        for n in -3i64..=3 {
            let idx = ((n + 16) % 16) as usize;
            assert_eq!(y.samples()[idx], k.samples()[(n + 3) as usize]);
        }
        for idx in 4..13 {
            assert_eq!(y.samples()[idx], 0.0);
        }
    }

    #[test]
    fn blur_attenuates_nyquist() {
        let e = |n: f64| (-n * n).exp();
        let expected = (1.0 - 2.0 * e(1.0) + 2.0 * e(2.0) - 2.0 * e(3.0))
            / (1.0 + 2.0 * e(1.0) + 2.0 * e(2.0) + 2.0 * e(3.0));
        assert!((expected - 0.1696).abs() < 1e-4);
        let x = Signal::alternating(16).unwrap();
        let y = gaussian_blur(&x, &half_sqrt2()).unwrap();
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - expected * b).abs() < 1e-14);
        }
    }

    #[test]
    fn blur_rejects_long_kernel() {
        let x = Signal::constant(1.0, 4).unwrap();
        assert_eq!(
            gaussian_blur(&x, &half_sqrt2()),
            Err(SpectralError::KernelTooLong {
                kernel: 7,
                signal: 4
            })
        );
    }

    #[test]
    fn comb_definition() {
        let x = Signal::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            comb_subsample(&x, 2).unwrap().samples(),
            &[1.0, 0.0, 3.0, 0.0]
        );
        let z = Signal::constant(0.0, 8).unwrap();
        assert_eq!(comb_subsample(&z, 2).unwrap(), z);
        assert_eq!(comb_subsample(&x, 1), Err(SpectralError::FactorTooSmall(1)));
        assert_eq!(
            comb_subsample(&x, 3),
            Err(SpectralError::FactorNotDivisor {
                factor: 3,
                length: 4
            })
        );
    }

    #[test]
    fn decimate_definition() {
        let x = Signal::new(vec![1.0, 0.0, 3.0, 0.0]).unwrap();
        assert_eq!(decimate(&x, 2).unwrap().samples(), &[1.0, 3.0]);
        let c = decimate(&Signal::constant(4.0, 8).unwrap(), 2).unwrap();
        assert_eq!(c.samples(), &[4.0; 4]);
        assert!(decimate(&x, 3).is_err());
    }

    #[test]
    fn decimation_doubles_peak_frequency() {
        let x = Signal::cosine(8.0, 64).unwrap();
        let before = dft(&x);
        assert_eq!(before.peak_bin(), 8);
        assert!((before.frequency(8) - PI / 4.0).abs() < 1e-15);
        let after = dft(&decimate(&x, 2).unwrap());
        assert_eq!(after.len(), 32);
        assert_eq!(after.peak_bin(), 8);
        assert!((after.frequency(8) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn upsample_midpoints_wrap() {
        let x = Signal::new(vec![1.0, 3.0]).unwrap();
        assert_eq!(
            upsample_linear(&x, 2).unwrap().samples(),
            &[1.0, 2.0, 3.0, 2.0]
        );
        let c = upsample_linear(&Signal::constant(-1.5, 5).unwrap(), 2).unwrap();
        assert_eq!(c.samples(), &[-1.5; 10]);
        assert_eq!(
            upsample_linear(&x, 3),
            Err(SpectralError::UnsupportedFactor(3))
        );
    }

    #[test]
    fn interpolation_kernel_response() {
        // [0.5, 1, 0.5] centered at 0, zero-padded circularly to 32 taps.
        let n = 32;
        let mut k = vec![0.0; n];
        k[0] = 1.0;
        k[1] = 0.5;
        k[n - 1] = 0.5;
        let spec = dft(&Signal::new(k).unwrap());
        let mut prev = f64::INFINITY;
        for j in 0..=n / 2 {
            let w = 2.0 * PI * j as f64 / n as f64;
            let h = spec.bins()[j];
            assert!((h.re - (1.0 + w.cos())).abs() < 1e-12);
            assert!(h.im.abs() < 1e-12);
            assert!(h.re <= prev + 1e-15);
            prev = h.re;
        }
        assert!((spec.bins()[0].re - 2.0).abs() < 1e-12);
        assert!(spec.bins()[n / 2].re.abs() < 1e-12);
    }

    #[test]
    fn ssa_on_constant_and_nyquist() {
        let c = Signal::constant(0.7, 8).unwrap();
        assert_eq!(ssa_downscale(&c).unwrap(), c);
        let alt = Signal::alternating(8).unwrap();
        assert_eq!(ssa_downscale(&alt).unwrap().samples(), &[1.0; 8]);
        let odd = Signal::constant(1.0, 7).unwrap();
        assert_eq!(ssa_downscale(&odd), Err(SpectralError::OddLength(7)));
    }

    #[test]
    fn ssa_beats_comb_on_smoothed_noise() {
        let spec = half_sqrt2();
        for seed in 0..100 {
            let x = gaussian_blur(&Signal::white_noise(seed, 64).unwrap(), &spec).unwrap();
            let g = gaussian_blur(&x, &spec).unwrap();
            let ssa = ssa_downscale(&x).unwrap().relative_distance(&g);
            let comb = comb_subsample(&x, 2).unwrap().relative_distance(&g);
            assert!(ssa < comb, "seed {seed}: ssa {ssa} comb {comb}");
        }
    }

    #[test]
    fn first_order_hold_is_filtered_zero_insertion() {
        let x = Signal::white_noise(11, 16).unwrap();
        let z = zero_insert(&x, 2).unwrap();
        let n = z.len();
        let held = upsample_linear(&x, 2).unwrap();
        for i in 0..n {
            let zs = z.samples();
            let v = 0.5 * zs[(i + n - 1) % n] + zs[i] + 0.5 * zs[(i + 1) % n];
            assert!((v - held.samples()[i]).abs() < 1e-15);
        }
        let spec = dft(&z);
        for k in 0..16 {
            assert!((spec.bins()[k] - spec.bins()[k + 16]).norm() < 1e-9);
        }
    }

    #[test]
    fn dft_basics() {
        let imp = dft(&Signal::impulse(8).unwrap());
        for b in imp.bins() {
            assert_eq!(*b, Complex64::new(1.0, 0.0));
        }
        let c = dft(&Signal::constant(3.0, 10).unwrap());
        assert!((c.bins()[0].re - 30.0).abs() < 1e-12);
        for b in &c.bins()[1..] {
            assert!(b.norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_holds() {
        for seed in 0..10 {
            let x = Signal::white_noise(seed, 50).unwrap();
            let time: f64 = x.samples().iter().map(|v| v * v).sum();
            let freq: f64 =
                dft(&x).bins().iter().map(|b| b.norm_sqr()).sum::<f64>() / x.len() as f64;
            assert!((time - freq).abs() / time < 1e-9);
        }
    }

    #[test]
    fn bandwidth_examples() {
        let c = dft(&Signal::constant(1.0, 16).unwrap());
        assert_eq!(energy_bandwidth(&c, 0.95).unwrap(), 0.0);
        let cos = dft(&Signal::cosine(8.0, 64).unwrap());
        assert!((energy_bandwidth(&cos, 0.95).unwrap() - PI / 4.0).abs() < 1e-15);
        let noise = dft(&Signal::white_noise(3, 64).unwrap());
        let full = energy_bandwidth(&noise, 1.0).unwrap();
        assert!(full <= PI);
    }

    #[test]
    fn bandwidth_rejects_bad_input() {
        let c = dft(&Signal::constant(1.0, 16).unwrap());
        assert!(energy_bandwidth(&c, 0.0).is_err());
        assert!(energy_bandwidth(&c, 1.5).is_err());
        let z = dft(&Signal::constant(0.0, 16).unwrap());
        assert_eq!(energy_bandwidth(&z, 0.5), Err(SpectralError::ZeroEnergy));
    }

    #[test]
    fn report_on_constant() {
        let x = Signal::constant(1.25, 16).unwrap();
        let r = approximation_report(&x, &half_sqrt2()).unwrap();
        assert!(r.dist_ssa_gauss < 1e-12);
        assert!(r.dist_comb_gauss > 0.5);
        assert_eq!(r.bandwidth_in, 0.0);
        assert_eq!(r.bandwidth_decimated, 0.0);
    }

    #[test]
    fn report_on_smoothed_noise() {
        let spec = half_sqrt2();
        let x = gaussian_blur(&Signal::white_noise(7, 64).unwrap(), &spec).unwrap();
        let r = approximation_report(&x, &spec).unwrap();
        assert!(r.dist_ssa_gauss < r.dist_comb_gauss);
        for v in [r.bandwidth_in, r.bandwidth_decimated] {
            assert!((0.0..=PI).contains(&v));
        }
    }

    #[test]
    fn report_rejects_short_or_odd() {
        let spec = half_sqrt2();
        assert!(matches!(
            approximation_report(&Signal::constant(1.0, 6).unwrap(), &spec),
            Err(SpectralError::LengthBelow { .. })
        ));
        assert!(matches!(
            approximation_report(&Signal::constant(1.0, 9).unwrap(), &spec),
            Err(SpectralError::OddLength(9))
        ));
    }

    #[test]
    fn csv_layout() {
        let x = Signal::new(vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "index,value\n0,1\n1,-0.5\n"
        );
        let mut buf = Vec::new();
        dft(&x).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,re,im\n0,0.5,0\n"));
        assert!(!text.contains("\r"));
    }
}
