use rand::Rng;

/// Axis-aligned box in input space.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn of_points(points: &[Vec<f64>]) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for j in 0..dim {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        Bounds { lo, hi }
    }

    /// Same center, each side scaled by `factor`.
    pub fn expanded(&self, factor: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let c = 0.5 * (l + h);
                let half = 0.5 * (h - l) * factor;
                (c - half, c + half)
            })
            .unzip();
        Bounds { lo, hi }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let dim = self.lo.len();
        (0..1usize << dim)
            .map(|mask| {
                (0..dim)
                    .map(|j| if mask >> j & 1 == 1 { self.hi[j] } else { self.lo[j] })
                    .collect()
            })
            .collect()
    }

    /// Regular 2-D grid of `resolution²` points, row-major in the second
    /// coordinate, including the box corners.
    pub fn grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        assert_eq!(self.lo.len(), 2, "grid is defined for 2-D boxes");
        let step = |j: usize, i: usize| {
            if resolution <= 1 {
                0.5 * (self.lo[j] + self.hi[j])
            } else {
                self.lo[j] + (self.hi[j] - self.lo[j]) * i as f64 / (resolution - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(resolution * resolution);
        for iy in 0..resolution {
            for ix in 0..resolution {
                out.push(vec![step(0, ix), step(1, iy)]);
            }
        }
        out
    }

    pub fn uniform_samples(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                self.lo
                    .iter()
                    .zip(&self.hi)
                    .map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l })
                    .collect()
            })
            .collect()
    }
}
