use rayon::prelude::*;

use super::{sample_chunks, AttributionMatrix, Coalition, Game, Kahan};
use crate::error::{Error, Result};

/// Largest player count accepted by [`exact_shapley`].
pub const EXACT_LIMIT: usize = 20;

/// Coalition values kept in memory at once (coalitions × samples).
const TABLE_BUDGET: usize = 1 << 22;

/// Shapley values by enumerating all `2^N` coalitions:
/// `R_i = Σ_{S ⊆ P∖{i}} |S|!(N-|S|-1)!/N! · (v(S) - v(S ∪ {i}))`.
pub fn exact_shapley<G: Game + ?Sized>(game: &G) -> Result<AttributionMatrix> {
    let n = game.players();
    if n > EXACT_LIMIT {
        return Err(Error::TooManyPlayers { players: n, limit: EXACT_LIMIT });
    }
    let m = game.samples();
    if n == 0 {
        return Ok(AttributionMatrix::new(Vec::new(), m, 0, 0, None));
    }
    let coalitions = 1usize << n;

    // weight[k] = k!(n-k-1)!/n! = 1 / (n * C(n-1, k))
    let mut weight = Vec::with_capacity(n);
    let mut binom = 1.0f64;
    for k in 0..n {
        weight.push(1.0 / (n as f64 * binom));
        binom = binom * (n - 1 - k) as f64 / (k + 1) as f64;
    }

    let chunk = (TABLE_BUDGET / coalitions).max(1);
    let parts: Vec<Result<Vec<f64>>> = sample_chunks(m, chunk)
        .into_par_iter()
        .map(|range| {
            let len = range.len();
            let mut table = Vec::with_capacity(coalitions * len);
            for bits in 0..coalitions as u64 {
                let v = game.value(&Coalition::from_bits(bits, n), range.clone())?;
                if v.len() != len {
                    return Err(Error::shape("game returned a value vector of the wrong length"));
                }
                table.extend(v);
            }
            let mut out = vec![0.0; len * n];
            for i in 0..n {
                let bit = 1usize << i;
                let mut acc = vec![Kahan::default(); len];
                for without in (0..coalitions).filter(|s| s & bit == 0) {
                    let w = weight[without.count_ones() as usize];
                    let a = &table[without * len..(without + 1) * len];
                    let b = &table[(without | bit) * len..((without | bit) + 1) * len];
                    for ((k, &va), &vb) in acc.iter_mut().zip(a).zip(b) {
                        k.add(w * (va - vb));
                    }
                }
                for (s, k) in acc.iter().enumerate() {
                    out[s * n + i] = k.total();
                }
            }
            Ok(out)
        })
        .collect();

    let mut values = Vec::with_capacity(m * n);
    for p in parts {
        values.extend(p?);
    }
    Ok(AttributionMatrix::new(values, m, n, 0, None))
}
