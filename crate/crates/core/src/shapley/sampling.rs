use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{sample_chunks, AttributionMatrix, Game, Kahan, SAMPLE_CHUNK};
use crate::error::{Error, Result};
use crate::rng;

/// The `index`-th player ordering drawn for `seed`.
pub fn permutation(seed: u64, index: usize, players: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..players).collect();
    order.shuffle(&mut rng::stream(seed, "shapley-permutation", index as u64));
    order
}

/// Unbiased Shapley estimate from `permutations` random player orderings.
///
/// Along each ordering, players are removed one at a time from the full
/// coalition and the change in the game value is credited to the removed
/// player. Work is split over fixed sample chunks, so the result is
/// bit-identical for any number of worker threads.
pub fn sampled_shapley<G: Game + ?Sized>(game: &G, permutations: usize, seed: u64) -> Result<AttributionMatrix> {
    if permutations == 0 {
        return Err(Error::config("at least one permutation is required"));
    }
    let n = game.players();
    let m = game.samples();
    let orders: Vec<Vec<usize>> = (0..permutations).map(|j| permutation(seed, j, n)).collect();

    let parts: Vec<Result<Vec<f64>>> = sample_chunks(m, SAMPLE_CHUNK)
        .into_par_iter()
        .map(|range| {
            let len = range.len();
            let mut acc = vec![Kahan::default(); len * n];
            for order in &orders {
                let path = game.removal_path(order, range.clone())?;
                if path.len() != (n + 1) * len {
                    return Err(Error::shape("removal path has the wrong size"));
                }
                for (t, &player) in order.iter().enumerate() {
                    let before = &path[t * len..(t + 1) * len];
                    let after = &path[(t + 1) * len..(t + 2) * len];
                    for s in 0..len {
                        acc[s * n + player].add(after[s] - before[s]);
                    }
                }
            }
            let k = permutations as f64;
            Ok(acc.iter().map(|a| a.total() / k).collect())
        })
        .collect();

    let mut values = Vec::with_capacity(m * n);
    for p in parts {
        values.extend(p?);
    }
    Ok(AttributionMatrix::new(values, m, n, permutations, Some(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::{exact_shapley, TableGame};

    #[test]
    fn single_player_is_exact() {
        let g = TableGame::new(1, vec![vec![4.0, 2.0], vec![1.0, 2.5]]).unwrap();
        let r = sampled_shapley(&g, 3, 11).unwrap();
        assert_eq!(r.column(0), vec![3.0, -0.5]);
        assert_eq!(r.permutations(), 3);
    }

    #[test]
    fn permutations_are_seeded() {
        assert_eq!(permutation(5, 2, 8), permutation(5, 2, 8));
        assert_ne!(permutation(5, 2, 8), permutation(5, 3, 8));
        let mut p = permutation(1, 0, 10);
        p.sort();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn additive_game_is_recovered_by_any_sample() {
        // v(S) = -Σ_{i∈S} c_i: every ordering gives the same marginals.
        let c = [1.0, -2.0, 0.5, 3.0];
        let g = TableGame::from_fn(4, |s| vec![-(0..4).filter(|&i| s.contains(i)).map(|i| c[i]).sum::<f64>()]).unwrap();
        let r = sampled_shapley(&g, 1, 0).unwrap();
        assert_eq!(r.row(0), &c);
        assert_eq!(exact_shapley(&g).unwrap().row(0), &c);
    }

    #[test]
    fn zero_permutations_rejected() {
        let g = TableGame::new(1, vec![vec![0.0], vec![0.0]]).unwrap();
        assert!(sampled_shapley(&g, 0, 0).is_err());
    }
}
