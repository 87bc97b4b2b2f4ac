//! Central finite-difference gradient checking.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

/// Default perturbation. Much larger steps (e.g. `1e-1`) let curvature
/// dominate and the check may exceed its tolerance.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Relative errors use `max(|analytic|, |numeric|, floor)` as the
/// denominator, with `floor = RELATIVE_FLOOR * max(1, max_j |analytic_j|)`.
/// Coordinates whose gradient is negligible next to the largest one are
/// thereby judged on absolute error: their central difference is mostly
/// rounding noise of size `eps_machine * |loss| / epsilon`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub const DEFAULT_COORDINATES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central differences of `loss` at `point`.
///
/// Checks every coordinate when there are at most `max_coords` of them,
/// otherwise a uniform random subset of size `max_coords`. An empty point
/// yields an error of zero.
pub fn check_gradient<F>(
    mut loss: F,
    point: &[f64],
    analytic: &[f64],
    epsilon: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        point.len(),
        analytic.len(),
        "gradient must be congruent to the point"
    );
    let coords: Vec<usize> = if point.len() <= max_coords {
        (0..point.len()).collect()
    } else {
        let mut picked = sample_indices(rng, point.len(), max_coords).into_vec();
        picked.sort_unstable();
        picked
    };
    let scale = analytic.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let floor = RELATIVE_FLOOR * scale;
    let mut x = point.to_vec();
    let mut worst = (0.0, None);
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = loss(&x);
        x[i] = orig - epsilon;
        let down = loss(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric, floor);
        if err > worst.0 || worst.1.is_none() {
            worst = (err, Some(i));
        }
    }
    GradCheckReport {
        max_relative_error: worst.0,
        worst_coordinate: worst.1,
        checked: coords.len(),
    }
}
