//! Fixtures shared by the criterion benches.

use locenc::geobias::PerfLabeledPoint;
use locenc::locbench::{synth_dataset, SynthKind, SynthParams};
use locenc::LocationDeg;

/// `n` area-uniform locations, fixed by `seed`.
pub fn uniform_points(n: usize, seed: u64) -> Vec<LocationDeg> {
    synth_dataset(SynthKind::SectorClasses, n, &SynthParams::default(), seed)
        .expect("n >= 1")
        .into_iter()
        .map(|r| r.loc)
        .collect()
}

/// Uniform points where every `stride`-th one is low-performance.
pub fn labelled_points(n: usize, stride: usize, seed: u64) -> Vec<PerfLabeledPoint> {
    uniform_points(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, p)| PerfLabeledPoint::new(p, if i % stride == 0 { -1 } else { 1 }).expect("value is +-1"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(uniform_points(50, 1), uniform_points(50, 1));
        let pts = labelled_points(30, 3, 2);
        assert_eq!(pts.iter().filter(|p| p.is_low()).count(), 10);
    }
}
