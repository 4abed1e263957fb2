//! Slowness models and residual/error training pairs.
//!
//! A training pair comes from a random exact solution `x`, its right-hand
//! side `b = A x`, and a few iterations of V-cycle preconditioned FGMRES
//! from zero. The error `e = x - x~` is stored in `f32` and the residual is
//! recomputed from the stored error, so `A e = r` holds up to the final
//! `f32` rounding of `r`.

use std::path::Path;

use helmnet_core::krylov::fgmres;
use helmnet_core::{
    par, Complex64, ComplexField, HelmholtzProblem, Hierarchy, KrylovConfig, ProblemGrid, RealField, Shift,
    SlownessSquared, StencilOperator, VCycleConfig,
};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest FGMRES iteration count used to smooth a training residual.
pub const MAX_SMOOTHING_ITERS: usize = 10;

/// Per-stream seed so that parallel generation stays reproducible.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Separable Gaussian smoothing with replicate padding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBlur {
    /// Odd kernel width.
    pub size: usize,
    pub sigma: f64,
}

impl Default for GaussianBlur {
    fn default() -> Self {
        Self { size: 5, sigma: 1.0 }
    }
}

impl GaussianBlur {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 2 == 0 || !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "blur needs an odd size and sigma > 0, got {} and {}",
                self.size, self.sigma
            )));
        }
        Ok(())
    }

    /// Normalized 1D taps.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.size / 2) as f64;
        let raw: Vec<f64> = (0..self.size)
            .map(|k| {
                let d = k as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    pub fn apply(&self, f: &RealField) -> RealField {
        let taps = self.taps();
        let half = (self.size / 2) as isize;
        let (nx, ny) = f.shape();
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let rows = RealField::from_fn(nx, ny, |i, j| {
            taps.iter()
                .enumerate()
                .map(|(k, w)| w * f.get(clamp(i as isize + k as isize - half, nx), j))
                .sum()
        });
        RealField::from_fn(nx, ny, |i, j| {
            taps.iter()
                .enumerate()
                .map(|(k, w)| w * rows.get(i, clamp(j as isize + k as isize - half, ny)))
                .sum()
        })
    }
}

/// Bilinear resampling with corner nodes aligned.
pub fn bilinear_resize(src: &RealField, nx: usize, ny: usize) -> RealField {
    let (sx, sy) = src.shape();
    let coord = |i: usize, n: usize, s: usize| {
        if n <= 1 || s <= 1 {
            (0, 0, 0.0)
        } else {
            let t = i as f64 * (s - 1) as f64 / (n - 1) as f64;
            let i0 = (t.floor() as usize).min(s - 2);
            (i0, i0 + 1, t - i0 as f64)
        }
    };
    RealField::from_fn(nx, ny, |i, j| {
        let (x0, x1, tx) = coord(i, nx, sx);
        let (y0, y1, ty) = coord(j, ny, sy);
        let top = (1.0 - tx) * src.get(x0, y0) + tx * src.get(x1.min(sx - 1), y0);
        let bottom = (1.0 - tx) * src.get(x0, y1.min(sy - 1)) + tx * src.get(x1.min(sx - 1), y1.min(sy - 1));
        (1.0 - ty) * top + ty * bottom
    })
}

/// Affine map of `[min, max]` onto `[lo, hi]`; a constant field maps to `hi`.
pub fn normalize(f: &RealField, (lo, hi): (f64, f64)) -> RealField {
    let (a, b) = (f.min(), f.max());
    if !(b > a) {
        return RealField::filled(f.nx(), f.ny(), hi);
    }
    let s = (hi - lo) / (b - a);
    f.map(|v| {
        if v == a {
            lo
        } else if v == b {
            hi
        } else {
            (lo + (v - a) * s).clamp(lo, hi)
        }
    })
}

/// Grayscale image to squared slowness: bilinear upsampling to the grid, one
/// Gaussian blur, then min/max normalization into `range`.
pub fn image_to_slowness(
    image: &RealField,
    grid: &ProblemGrid,
    range: (f64, f64),
    blur: GaussianBlur,
) -> Result<SlownessSquared> {
    if image.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    blur.validate()?;
    let up = bilinear_resize(image, grid.nx(), grid.ny());
    let smooth = blur.apply(&up);
    Ok(SlownessSquared::new(normalize(&smooth, range), range)?)
}

/// Loads an 8-bit image as gray levels; colour channels are averaged.
/// Row 0 of the image becomes grid row 0.
pub fn load_image(path: &Path) -> Result<RealField> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
        .collect();
    Ok(RealField::from_vec(w as usize, h as usize, data)?)
}

/// Small 8-bit picture of overlapping flat shapes with mild pixel noise, a
/// stand-in for natural photographs when no image collection is at hand.
pub fn procedural_image(seed: u64, width: usize, height: usize) -> RealField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = RealField::filled(width, height, rng.random_range(0.0..255.0f64).floor());
    let shapes = rng.random_range(4..10);
    for _ in 0..shapes {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(0.1..0.5) * width as f64;
        let ry = rng.random_range(0.1..0.5) * height as f64;
        let level = rng.random_range(0.0..255.0f64).floor();
        let ellipse = rng.random_bool(0.5);
        for j in 0..height {
            for i in 0..width {
                let dx = (i as f64 + 0.5 - cx) / rx;
                let dy = (j as f64 + 0.5 - cy) / ry;
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    px.set(i, j, level);
                }
            }
        }
    }
    for v in px.as_mut_slice() {
        *v = (*v + rng.random_range(-3.0..=3.0f64)).clamp(0.0, 255.0).round();
    }
    px
}

/// Smooth random model: 3 to 8 Gaussian bumps of either sign plus a linear
/// ramp, blurred and normalized like an image.
pub fn synthetic_slowness(
    seed: u64,
    grid: &ProblemGrid,
    range: (f64, f64),
    blur: GaussianBlur,
) -> Result<SlownessSquared> {
    blur.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(3..=8))
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.25),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let (gx, gy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let ((x0, _), (y0, _)) = grid.extents();
    let h = grid.h();
    let raw = RealField::from_fn(grid.nx(), grid.ny(), |i, j| {
        let x = x0 + i as f64 * h;
        let y = y0 + j as f64 * h;
        let ramp = gx * x + gy * y;
        bumps.iter().fold(ramp, |acc, &(cx, cy, w, a)| {
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            acc + a * (-d2 / (2.0 * w * w)).exp()
        })
    });
    Ok(SlownessSquared::new(normalize(&blur.apply(&raw), range), range)?)
}

/// One supervised example. `r_hat = h^2 r` and `A e_true = r`; both fields
/// hold `f32`-representable values.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub r_hat: ComplexField,
    pub e_true: ComplexField,
    /// Index of the problem (slowness and attenuation) the pair belongs to.
    pub model: usize,
}

fn round_f32(f: &ComplexField) -> ComplexField {
    f.map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64))
}

/// Generates training pairs for one problem.
#[derive(Clone, Debug)]
pub struct SampleFactory {
    op: StencilOperator,
    hierarchy: Hierarchy,
    h2: f64,
    model: usize,
}

impl SampleFactory {
    pub fn new(problem: &HelmholtzProblem, vcycle: VCycleConfig, model: usize) -> Result<Self> {
        let h = problem.grid().h();
        Ok(Self {
            op: StencilOperator::new(problem, Shift::NONE),
            hierarchy: Hierarchy::new(problem, vcycle)?,
            h2: h * h,
            model,
        })
    }

    pub fn operator(&self) -> &StencilOperator {
        &self.op
    }

    /// The pair for error `e`: `e` is rounded to `f32` and `r_hat` is
    /// `h^2 A e` rounded to `f32`.
    pub fn from_error(&self, e: &ComplexField) -> TrainingSample {
        let e_true = round_f32(e);
        let mut r = apply(&self.op, &e_true);
        r.scale(Complex64::new(self.h2, 0.0));
        TrainingSample {
            r_hat: round_f32(&r),
            e_true,
            model: self.model,
        }
    }

    /// Pair after exactly `iters` smoothing iterations; `iters = 0` keeps the
    /// random solution itself as the error.
    pub fn sample_with_iters<R: Rng + ?Sized>(&self, iters: usize, rng: &mut R) -> Result<(TrainingSample, f64)> {
        let (nx, ny) = self.op.shape();
        let x = ComplexField::random_normal(nx, ny, rng);
        let b = apply(&self.op, &x);
        let e = if iters == 0 {
            x
        } else {
            let cfg = KrylovConfig {
                restart: MAX_SMOOTHING_ITERS,
                max_iters: iters,
                rel_tol: f64::MIN_POSITIVE,
                flexible: true,
            };
            let (xt, _) = fgmres(&self.op, &self.hierarchy, &b, &ComplexField::zeros(nx, ny), &cfg)?;
            x.sub(&xt)?
        };
        let s = self.from_error(&e);
        let drop = s.r_hat.norm() / (self.h2 * b.norm());
        Ok((s, drop))
    }

    /// Pair after a uniformly drawn number of iterations in `1..=10`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingSample> {
        let k = rng.random_range(1..=MAX_SMOOTHING_ITERS);
        Ok(self.sample_with_iters(k, rng)?.0)
    }

    /// `||A e - r|| / ||r||` with `r = r_hat / h^2`.
    pub fn residual_error(&self, s: &TrainingSample) -> f64 {
        let mut ae = apply(&self.op, &s.e_true);
        ae.scale(Complex64::new(self.h2, 0.0));
        let d = ae.sub(&s.r_hat).expect("same grid");
        let n = s.r_hat.norm();
        if n == 0.0 {
            d.norm()
        } else {
            d.norm() / n
        }
    }

    /// `c1 * a + c2 * b` with the residual recomputed from the combined error.
    pub fn combine(&self, a: &TrainingSample, b: &TrainingSample, c1: Complex64, c2: Complex64) -> Result<TrainingSample> {
        let mut e = a.e_true.clone();
        e.scale(c1);
        e.axpy(c2, &b.e_true);
        Ok(self.from_error(&e))
    }

    /// Appends `count` combinations of two distinct random samples with
    /// coefficients uniform on the complex unit disk, rescaled so that
    /// `||r_hat||` equals the median over the inputs.
    pub fn augment(&self, samples: &[TrainingSample], count: usize, seed: u64) -> Result<Vec<TrainingSample>> {
        let mut out = samples.to_vec();
        if count == 0 {
            return Ok(out);
        }
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("augmentation needs at least 2 samples".into()));
        }
        if samples.iter().any(|s| s.model != self.model) {
            return Err(Error::InvalidArgument("augmented samples must share one model".into()));
        }
        let mut norms: Vec<f64> = samples.iter().map(|s| s.r_hat.norm()).collect();
        norms.sort_by(f64::total_cmp);
        let median = norms[norms.len() / 2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut disk = || loop {
            let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if z.norm_sqr() <= 1.0 && z.norm_sqr() > 1e-4 {
                return z;
            }
        };
        let mut picks = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        for _ in 0..count {
            let idx = sample_indices(&mut picks, samples.len(), 2);
            let (c1, c2) = (disk(), disk());
            let mut s = self.combine(&samples[idx.index(0)], &samples[idx.index(1)], c1, c2)?;
            let n = s.r_hat.norm();
            if n > 0.0 {
                let mut e = s.e_true.clone();
                e.scale(Complex64::new(median / n, 0.0));
                s = self.from_error(&e);
            }
            out.push(s);
        }
        Ok(out)
    }
}

/// Convenience: one pair for `problem` with the default V-cycle.
pub fn gen_sample(problem: &HelmholtzProblem, seed: u64) -> Result<TrainingSample> {
    let f = SampleFactory::new(problem, VCycleConfig::default(), 0)?;
    f.sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-model generation plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationPlan {
    pub samples_per_model: usize,
    /// Fraction of each model's samples produced by augmentation.
    pub augment_fraction: f64,
}

/// Samples for every problem, `samples_per_model` each, in model order.
/// Models are processed in parallel with independent seeds.
pub fn generate_samples(
    problems: &[HelmholtzProblem],
    vcycle: &VCycleConfig,
    plan: GenerationPlan,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    if !(0.0..1.0).contains(&plan.augment_fraction) {
        return Err(Error::InvalidArgument(format!(
            "augment_fraction must lie in [0, 1), got {}",
            plan.augment_fraction
        )));
    }
    let n_aug = ((plan.samples_per_model as f64 * plan.augment_fraction).round() as usize)
        .min(plan.samples_per_model.saturating_sub(2));
    let n_base = plan.samples_per_model - n_aug;
    let idx: Vec<usize> = (0..problems.len()).collect();
    let per_model = par::map(&idx, |&m| -> Result<Vec<TrainingSample>> {
        let f = SampleFactory::new(&problems[m], vcycle.clone(), m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, m as u64));
        let base = (0..n_base).map(|_| f.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
        f.augment(&base, n_aug, derive_seed(seed, (m + problems.len()) as u64))
    });
    let mut out = Vec::with_capacity(problems.len() * plan.samples_per_model);
    for s in per_model {
        out.extend(s?);
    }
    Ok(out)
}

fn apply(op: &StencilOperator, x: &ComplexField) -> ComplexField {
    op.apply(x).expect("field lives on the operator grid")
}
