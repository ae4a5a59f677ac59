//! Per-pixel accumulators and image-level variance and cost.

use mars_core::estimator::SampleStats;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixelStats {
    /// Raw samples; these make up the image.
    pub image: SampleStats,
    /// Samples clamped for variance estimation only.
    pub clamped: SampleStats,
}

/// One iteration's worth of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAccumulator {
    pub pixels: Vec<PixelStats>,
    pub rays: u64,
}

impl ImageAccumulator {
    pub fn new(n_pixels: usize) -> Self {
        Self {
            pixels: vec![PixelStats::default(); n_pixels],
            rays: 0,
        }
    }

    pub fn push(&mut self, px: usize, value: f64, clamped: f64, rays: u64) {
        let p = &mut self.pixels[px];
        p.image.push(value);
        p.clamped.push(clamped);
        self.rays += rays;
    }

    pub fn samples(&self) -> u64 {
        self.pixels.iter().map(|p| p.image.count).sum()
    }

    /// Samples per pixel, assuming every pixel got the same count.
    pub fn spp(&self) -> u64 {
        self.pixels.first().map_or(0, |p| p.image.count)
    }

    pub fn means(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| p.image.mean).collect()
    }
}

/// Running per-pixel mean over all completed iterations; stands in for the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningEstimate {
    pixels: Vec<SampleStats>,
}

impl RunningEstimate {
    pub fn new(n_pixels: usize) -> Self {
        Self {
            pixels: vec![SampleStats::default(); n_pixels],
        }
    }

    pub fn add(&mut self, acc: &ImageAccumulator) {
        for (r, p) in self.pixels.iter_mut().zip(&acc.pixels) {
            *r = r.merge(&p.image);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.iter().all(|p| p.count == 0)
    }

    /// Pixel estimates floored at `floor` times the mean image brightness. `None` for an
    /// empty or all-black image.
    pub fn estimate(&self, floor: f64) -> Option<Vec<f64>> {
        if self.is_empty() {
            return None;
        }
        let mean = self.pixels.iter().map(|p| p.mean.max(0.0)).sum::<f64>() / self.pixels.len() as f64;
        if !(mean > 0.0) {
            return None;
        }
        let lo = floor * mean;
        Some(self.pixels.iter().map(|p| p.mean.max(lo)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageStats {
    /// `V_I`: mean over pixels of the per-sample squared relative deviation.
    pub variance: f64,
    /// `C_I`: rays per pixel sample.
    pub cost: f64,
    /// False when no pixel estimate exists and absolute deviations from each pixel's own
    /// mean were used instead.
    pub relative: bool,
}

impl ImageStats {
    pub fn inv_efficiency(&self) -> f64 {
        self.variance * self.cost
    }
}

/// Mean over pixels of the per-sample squared relative deviation from the estimates, using
/// the clamped samples or the raw ones.
pub fn relative_variance(acc: &ImageAccumulator, estimate: Option<&[f64]>, clamped: bool) -> f64 {
    let per_pixel = |i: usize| {
        let p = &acc.pixels[i];
        let c = if clamped { &p.clamped } else { &p.image };
        if c.count == 0 {
            return 0.0;
        }
        match estimate {
            Some(est) => c.squared_deviation(est[i]) / c.count as f64 / (est[i] * est[i]),
            None => c.squared_deviation(c.mean) / c.count as f64,
        }
    };
    (0..acc.pixels.len()).map(per_pixel).sum::<f64>() / acc.pixels.len() as f64
}

/// Image variance and cost of one iteration against the pixel estimates.
pub fn image_statistics(acc: &ImageAccumulator, estimate: Option<&[f64]>) -> ImageStats {
    let samples = acc.samples();
    ImageStats {
        variance: relative_variance(acc, estimate, true),
        cost: if samples > 0 {
            acc.rays as f64 / samples as f64
        } else {
            0.0
        },
        relative: estimate.is_some(),
    }
}
