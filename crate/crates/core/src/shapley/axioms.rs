use std::ops::Range;

use super::{exact_shapley, sampled_shapley, AttributionMatrix, Coalition, Game};
use crate::error::{Error, Result};

/// The game `a·first + b·second`.
pub struct LinearCombination<A, B> {
    first: A,
    second: B,
    a: f64,
    b: f64,
}

impl<A: Game, B: Game> LinearCombination<A, B> {
    pub fn new(first: A, a: f64, second: B, b: f64) -> Result<Self> {
        if first.players() != second.players() || first.samples() != second.samples() {
            return Err(Error::config("combined games must have the same players and samples"));
        }
        Ok(LinearCombination { first, second, a, b })
    }
}

impl<A: Game, B: Game> Game for LinearCombination<A, B> {
    fn players(&self) -> usize {
        self.first.players()
    }

    fn samples(&self) -> usize {
        self.first.samples()
    }

    fn value(&self, coalition: &Coalition, samples: Range<usize>) -> Result<Vec<f64>> {
        let x = self.first.value(coalition, samples.clone())?;
        let y = self.second.value(coalition, samples)?;
        Ok(x.iter().zip(&y).map(|(x, y)| self.a * x + self.b * y).collect())
    }

    fn removal_path(&self, order: &[usize], samples: Range<usize>) -> Result<Vec<f64>> {
        let x = self.first.removal_path(order, samples.clone())?;
        let y = self.second.removal_path(order, samples)?;
        Ok(x.iter().zip(&y).map(|(x, y)| self.a * x + self.b * y).collect())
    }
}

/// Which axioms to test beyond efficiency. Symmetric pairs and null
/// players must be known to the caller.
#[derive(Default)]
pub struct AxiomChecks<'a> {
    pub symmetric_pairs: Vec<(usize, usize)>,
    pub null_players: Vec<usize>,
    /// Second game and weights `(a, b)` for the linearity check.
    pub linearity: Option<(&'a dyn Game, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    /// Largest per-sample `|Σ_i R_i - (v(∅) - v(P))|`.
    pub efficiency_gap: f64,
    /// `|mean R_i - mean R_j|` per declared pair.
    pub symmetry_gaps: Vec<((usize, usize), f64)>,
    /// `|mean R_i|` per declared null player.
    pub null_player_gaps: Vec<(usize, f64)>,
    pub linearity_gap: Option<f64>,
}

/// Residuals of the Shapley axioms for attributions `attr` of `game`.
///
/// The linearity check re-runs the estimator that produced `attr` (exact, or
/// sampled with the same permutation count and seed).
pub fn axiom_residuals<G: Game + ?Sized>(
    game: &G,
    attr: &AttributionMatrix,
    checks: &AxiomChecks<'_>,
) -> Result<AxiomReport> {
    let (n, m) = (game.players(), game.samples());
    if attr.players() != n || attr.samples() != m {
        return Err(Error::shape(format!("attributions are {}x{}, game is {m}x{n}", attr.samples(), attr.players())));
    }
    for &i in checks.null_players.iter().chain(checks.symmetric_pairs.iter().flat_map(|(a, b)| [a, b])) {
        if i >= n {
            return Err(Error::UnitOutOfRange { index: i, units: n });
        }
    }
    let full = game.value(&Coalition::full(n), 0..m)?;
    let empty = game.value(&Coalition::empty(n), 0..m)?;
    let efficiency_gap =
        (0..m).map(|s| (attr.row(s).iter().sum::<f64>() - (empty[s] - full[s])).abs()).fold(0.0, f64::max);

    let mean = attr.mean();
    let symmetry_gaps = checks.symmetric_pairs.iter().map(|&(i, j)| ((i, j), (mean[i] - mean[j]).abs())).collect();
    let null_player_gaps = checks.null_players.iter().map(|&i| (i, mean[i].abs())).collect();

    let linearity_gap = match checks.linearity {
        Some((other, a, b)) => Some(linearity_gap(game, other, a, b, |g| match attr.seed() {
            Some(seed) if attr.permutations() > 0 => sampled_shapley(g, attr.permutations(), seed),
            _ => exact_shapley(g),
        })?),
        None => None,
    };

    Ok(AxiomReport { efficiency_gap, symmetry_gaps, null_player_gaps, linearity_gap })
}

/// Largest elementwise `|R(a·f + b·g) - (a·R(f) + b·R(g))|` for an estimator.
pub fn linearity_gap<F, G, E>(first: &F, second: &G, a: f64, b: f64, estimator: E) -> Result<f64>
where
    F: Game + ?Sized,
    G: Game + ?Sized,
    E: Fn(&dyn Game) -> Result<AttributionMatrix>,
{
    let combined = LinearCombination::new(first, a, second, b)?;
    let rf = estimator(&first)?;
    let rg = estimator(&second)?;
    let rc = estimator(&combined)?;
    Ok(rc
        .values()
        .iter()
        .zip(rf.values().iter().zip(rg.values()))
        .map(|(c, (f, g))| (c - (a * f + b * g)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::TableGame;

    fn glove_game() -> TableGame {
        // Players 0 and 1 are interchangeable, player 2 never matters.
        TableGame::from_fn(3, |s| {
            let k = s.contains(0) as u8 + s.contains(1) as u8;
            vec![[9.0, 4.0, 1.0][k as usize]]
        })
        .unwrap()
    }

    #[test]
    fn exact_attributions_satisfy_all_axioms() {
        let g = glove_game();
        let other = TableGame::from_fn(3, |s| vec![s.as_bits() as f64 * 0.25]).unwrap();
        let r = exact_shapley(&g).unwrap();
        let checks =
            AxiomChecks { symmetric_pairs: vec![(0, 1)], null_players: vec![2], linearity: Some((&other, 2.0, -3.0)) };
        let rep = axiom_residuals(&g, &r, &checks).unwrap();
        assert!(rep.efficiency_gap < 1e-12);
        assert!(rep.symmetry_gaps[0].1 < 1e-12);
        assert_eq!(rep.null_player_gaps, vec![(2, 0.0)]);
        assert!(rep.linearity_gap.unwrap() < 1e-12);
    }

    #[test]
    fn sampled_estimator_is_linear_for_a_fixed_seed() {
        let g = glove_game();
        let other = TableGame::from_fn(3, |s| vec![s.len() as f64]).unwrap();
        let r = sampled_shapley(&g, 7, 3).unwrap();
        let checks = AxiomChecks { linearity: Some((&other, 0.5, 4.0)), ..Default::default() };
        let rep = axiom_residuals(&g, &r, &checks).unwrap();
        assert!(rep.linearity_gap.unwrap() < 1e-12);
        assert!(rep.efficiency_gap < 1e-12);
    }

    #[test]
    fn mismatched_games_rejected() {
        let a = TableGame::new(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let b = TableGame::new(2, vec![vec![0.0]; 4]).unwrap();
        assert!(LinearCombination::new(&a, 1.0, &b, 1.0).is_err());
    }
}
