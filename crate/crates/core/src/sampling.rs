//! Seeded uniform sampling in axis-aligned boxes.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{ChartPoint, TangentVector};

/// Axis-aligned box `center +- radii` in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    /// Half-width of the velocity box used by [`SampleBox::tangent_samples`].
    pub velocity_radius: f64,
}

impl SampleBox {
    pub fn symmetric(center: Vec<f64>, radii: Vec<f64>) -> Self {
        assert_eq!(center.len(), radii.len(), "center and radii must have equal length");
        SampleBox { center, radii, velocity_radius: 1.0 }
    }

    pub fn with_velocity_radius(mut self, r: f64) -> Self {
        self.velocity_radius = r;
        self
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub(crate) fn draw(&self, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.center.iter().zip(&self.radii).map(|(c, r)| c + r * rng.gen_range(-1.0..=1.0)),
        )
    }

    pub fn points(&self, n: usize, seed: u64) -> Vec<ChartPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| ChartPoint::from_vector(self.draw(&mut rng)).expect("finite box sample")).collect()
    }

    pub fn tangent_samples(&self, n: usize, seed: u64) -> Vec<TangentVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base = ChartPoint::from_vector(self.draw(&mut rng)).expect("finite box sample");
                let v = DVector::from_fn(self.dim(), |_, _| self.velocity_radius * rng.gen_range(-1.0..=1.0));
                TangentVector { base, velocity: v }
            })
            .collect()
    }
}

/// Joint box over states and controls, used by linearizability certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct StateControlBox {
    pub state: SampleBox,
    pub control: SampleBox,
}

impl StateControlBox {
    pub fn new(state: SampleBox, control: SampleBox) -> Self {
        StateControlBox { state, control }
    }

    /// Infinite stream of `(x, u)` samples for a given seed.
    pub fn stream(&self, seed: u64) -> impl Iterator<Item = (ChartPoint, DVector<f64>)> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        std::iter::from_fn(move || {
            let x = ChartPoint::from_vector(self.state.draw(&mut rng)).expect("finite box sample");
            let u = self.control.draw(&mut rng);
            Some((x, u))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_reproducible_and_inside() {
        let b = SampleBox::symmetric(vec![0.0, 1.0], vec![0.5, 0.25]);
        let a = b.points(50, 3);
        assert_eq!(a, b.points(50, 3));
        assert!(a.iter().all(|p| p[0].abs() <= 0.5 && (p[1] - 1.0).abs() <= 0.25));
        assert_ne!(a, b.points(50, 4));
    }
}
