use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One class after support biasing, in raw input coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasedClass {
    pub support: Vec<Vec<f64>>,
    pub query: Vec<Vec<f64>>,
    pub axis: usize,
    /// `true` when the support came from the half above the median.
    pub upper: bool,
    pub threshold: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Splits each class pool at the median of a random axis, draws the support
/// from a random side and the query (at most `max_query` points) from every
/// remaining point of the pool.
pub fn bias_support(
    pools: &[Vec<Vec<f64>>],
    shots: usize,
    max_query: usize,
    rng: &mut impl Rng,
) -> Result<Vec<BiasedClass>> {
    pools
        .iter()
        .enumerate()
        .map(|(class, pool)| {
            let dim = pool.first().map_or(0, Vec::len);
            if dim == 0 {
                return Err(Error::MissingClass(class));
            }
            let axis = rng.random_range(0..dim);
            let upper = rng.random_bool(0.5);
            let mut coords: Vec<f64> = pool.iter().map(|p| p[axis]).collect();
            let threshold = median(&mut coords);
            let (mut side, mut rest): (Vec<usize>, Vec<usize>) =
                (0..pool.len()).partition(|&i| (pool[i][axis] > threshold) == upper);
            if side.len() < shots {
                return Err(Error::invalid(
                    "bias_support",
                    format!("class {class}: half has {} points, need {shots}", side.len()),
                ));
            }
            side.shuffle(rng);
            rest.extend_from_slice(&side[shots..]);
            rest.shuffle(rng);
            rest.truncate(max_query);
            Ok(BiasedClass {
                support: side[..shots].iter().map(|&i| pool[i].clone()).collect(),
                query: rest.iter().map(|&i| pool[i].clone()).collect(),
                axis,
                upper,
                threshold,
            })
        })
        .collect()
}
