//! Weighted dialogue intent coverage: choose a minimum-cost set of dialogues
//! whose intent sets jointly cover every intent.
//!
//! Three solvers share one instance type:
//! - [`solve_greedy`] picks the set with the most uncovered intents per unit
//!   cost until everything is covered (a `H_n`-approximation);
//! - [`solve_ilp`] is an exact depth-first branch-and-bound over the LP
//!   relaxation solved by the in-crate simplex ([`solve_lp`]);
//! - [`lp_round`] scales the fractional LP optimum by `ceil(ln |I|)`, keeps
//!   each set with that probability, then closes any residual gap greedily.

mod ilp;
mod simplex;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, IntentUniverse};

pub use ilp::{solve_ilp, solve_ilp_with, IlpOptions};
pub use simplex::DEFAULT_ITERATION_FACTOR;

/// Identifier of the generator used by [`lp_round`].
pub const RNG_ALGORITHM: &str = "splitmix64";

/// Tolerance on covering constraints of fractional solutions.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WdicError {
    #[error("instance is infeasible: {} intent(s) covered by no set (first: `{}`)", .0.len(), .0[0])]
    Infeasible(Vec<String>),
    #[error("set `{id}` has invalid cost {cost} (costs must be finite and positive)")]
    InvalidCost { id: String, cost: f64 },
    #[error("duplicate set id `{0}`")]
    DuplicateId(String),
    #[error("set `{set}` mentions intent `{intent}` outside the universe")]
    UnknownIntent { set: String, intent: String },
    #[error("unknown set id `{0}`")]
    UnknownId(String),
    #[error("instance has no intents")]
    EmptyUniverse,
    #[error("simplex did not converge within {iterations} iterations")]
    NumericalFailure { iterations: usize },
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("branch-and-bound exceeded its budget of {nodes} nodes")]
    BudgetExceeded { nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "ilp")]
    Ilp,
    #[serde(rename = "lp-rounding")]
    LpRounding,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Greedy => "greedy",
            Method::Ilp => "ilp",
            Method::LpRounding => "lp-rounding",
        })
    }
}

/// How a dialogue's selection cost is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostModel {
    /// Every dialogue costs 1.
    #[default]
    Unit,
    /// A dialogue costs its utterance count.
    Utterances,
}

#[derive(Debug, Clone)]
pub struct CoverSet {
    pub id: String,
    pub intents: FixedBitSet,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct CoverInstance {
    intents: Vec<String>,
    sets: Vec<CoverSet>,
}

impl CoverInstance {
    /// Builds an instance over `universe`; fails unless the sets cover it.
    pub fn new<I, S>(universe: &BTreeSet<String>, sets: I) -> Result<Self, WdicError>
    where
        I: IntoIterator<Item = (S, BTreeSet<String>, f64)>,
        S: Into<String>,
    {
        let intents: Vec<String> = universe.iter().cloned().collect();
        let index: HashMap<&str, usize> = intents
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut built = Vec::new();
        for (id, members, cost) in sets {
            let id = id.into();
            let mut bits = FixedBitSet::with_capacity(intents.len());
            for m in &members {
                let &i = index.get(m.as_str()).ok_or_else(|| WdicError::UnknownIntent {
                    set: id.clone(),
                    intent: m.clone(),
                })?;
                bits.insert(i);
            }
            built.push(CoverSet {
                id,
                intents: bits,
                cost,
            });
        }
        Self::from_sets(intents, built)
    }

    /// Builds an instance from intent indices `0..universe_size`.
    pub fn from_indices<I, S>(universe_size: usize, sets: I) -> Result<Self, WdicError>
    where
        I: IntoIterator<Item = (S, Vec<usize>, f64)>,
        S: Into<String>,
    {
        let intents: Vec<String> = (0..universe_size).map(|i| i.to_string()).collect();
        let mut built = Vec::new();
        for (id, members, cost) in sets {
            let id = id.into();
            let mut bits = FixedBitSet::with_capacity(universe_size);
            for &m in &members {
                if m >= universe_size {
                    return Err(WdicError::UnknownIntent {
                        set: id,
                        intent: m.to_string(),
                    });
                }
                bits.insert(m);
            }
            built.push(CoverSet {
                id,
                intents: bits,
                cost,
            });
        }
        Self::from_sets(intents, built)
    }

    /// Builds the selection instance for a labeled corpus. Dialogues with no
    /// intents are left out.
    pub fn from_universe(
        universe: &IntentUniverse,
        corpus: &Corpus,
        costs: CostModel,
    ) -> Result<Self, WdicError> {
        let sets = universe
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(id, s)| {
                let cost = match costs {
                    CostModel::Unit => 1.0,
                    CostModel::Utterances => corpus.get(id).map_or(1, |d| d.len()) as f64,
                };
                (id.to_string(), s.clone(), cost)
            })
            .collect::<Vec<_>>();
        Self::new(universe.labels(), sets)
    }

    fn from_sets(intents: Vec<String>, sets: Vec<CoverSet>) -> Result<Self, WdicError> {
        if intents.is_empty() {
            return Err(WdicError::EmptyUniverse);
        }
        let mut seen = std::collections::HashSet::new();
        let mut union = FixedBitSet::with_capacity(intents.len());
        for s in &sets {
            if !(s.cost.is_finite() && s.cost > 0.0) {
                return Err(WdicError::InvalidCost {
                    id: s.id.clone(),
                    cost: s.cost,
                });
            }
            if !seen.insert(s.id.clone()) {
                return Err(WdicError::DuplicateId(s.id.clone()));
            }
            union.union_with(&s.intents);
        }
        if union.count_ones(..) != intents.len() {
            let missing = (0..intents.len())
                .filter(|&i| !union.contains(i))
                .map(|i| intents[i].clone())
                .collect();
            return Err(WdicError::Infeasible(missing));
        }
        Ok(CoverInstance { intents, sets })
    }

    pub fn universe_size(&self) -> usize {
        self.intents.len()
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    pub fn sets(&self) -> &[CoverSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sets.iter().position(|s| s.id == id)
    }

    /// Number of intents covered by the sets at `indices`.
    pub fn coverage_of(&self, indices: &[usize]) -> usize {
        let mut union = FixedBitSet::with_capacity(self.intents.len());
        for &i in indices {
            union.union_with(&self.sets[i].intents);
        }
        union.count_ones(..)
    }

    pub fn covers(&self, indices: &[usize]) -> bool {
        self.coverage_of(indices) == self.universe_size()
    }

    pub fn cost_of(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.sets[i].cost).sum()
    }
}

/// The size of the union of the selected sets, `f(S) = |⋃ S_i|`.
pub fn coverage_value<S: AsRef<str>>(selected: &[S], inst: &CoverInstance) -> Result<usize, WdicError> {
    let indices = selected
        .iter()
        .map(|id| {
            inst.index_of(id.as_ref())
                .ok_or_else(|| WdicError::UnknownId(id.as_ref().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(inst.coverage_of(&indices))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverSolution {
    pub method: Method,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    pub selected: Vec<String>,
    pub total_cost: f64,
    pub universe_size: usize,
}

impl CoverSolution {
    /// Checks feasibility and computes the cost of a selection given by set
    /// indices.
    pub fn from_indices(
        inst: &CoverInstance,
        mut indices: Vec<usize>,
        method: Method,
        seed: Option<u64>,
    ) -> Result<Self, WdicError> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= inst.len()) {
            return Err(WdicError::UnknownId(bad.to_string()));
        }
        let mut union = FixedBitSet::with_capacity(inst.universe_size());
        for &i in &indices {
            union.union_with(&inst.sets[i].intents);
        }
        if union.count_ones(..) != inst.universe_size() {
            let missing = (0..inst.universe_size())
                .filter(|&i| !union.contains(i))
                .map(|i| inst.intents[i].clone())
                .collect();
            return Err(WdicError::Infeasible(missing));
        }
        Ok(CoverSolution {
            method,
            seed,
            rng: seed.map(|_| RNG_ALGORITHM.to_string()),
            selected: indices.iter().map(|&i| inst.sets[i].id.clone()).collect(),
            total_cost: inst.cost_of(&indices),
            universe_size: inst.universe_size(),
        })
    }

    pub fn indices(&self, inst: &CoverInstance) -> Vec<usize> {
        self.selected.iter().filter_map(|id| inst.index_of(id)).collect()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Fractional value per set, in instance order.
    pub values: Vec<f64>,
    pub objective: f64,
}

/// Extends `chosen` greedily until `uncovered` is empty, maximizing newly
/// covered intents per unit cost; ties go to the lowest set index.
fn greedy_fill(inst: &CoverInstance, chosen: &mut [bool], uncovered: &mut FixedBitSet) {
    while uncovered.count_ones(..) > 0 {
        let mut best: Option<(usize, usize)> = None;
        for (j, s) in inst.sets.iter().enumerate() {
            if chosen[j] {
                continue;
            }
            let gain = s.intents.intersection(uncovered).count();
            if gain == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, best_gain)) => {
                    gain as f64 * inst.sets[b].cost > best_gain as f64 * s.cost
                }
            };
            if better {
                best = Some((j, gain));
            }
        }
        let (j, _) = best.expect("feasible instance always has a covering set");
        chosen[j] = true;
        uncovered.difference_with(&inst.sets[j].intents);
    }
}

fn all_intents(inst: &CoverInstance) -> FixedBitSet {
    let mut bits = FixedBitSet::with_capacity(inst.universe_size());
    bits.insert_range(..);
    bits
}

pub fn solve_greedy(inst: &CoverInstance) -> Result<CoverSolution, WdicError> {
    let mut chosen = vec![false; inst.len()];
    let mut uncovered = all_intents(inst);
    greedy_fill(inst, &mut chosen, &mut uncovered);
    let indices = (0..inst.len()).filter(|&i| chosen[i]).collect();
    CoverSolution::from_indices(inst, indices, Method::Greedy, None)
}

/// Sets that survive duplicate collapsing and dominance pruning, in instance
/// order. Removed sets are never needed for an optimal cover.
pub(crate) fn presolve(inst: &CoverInstance) -> Vec<usize> {
    let n = inst.len();
    let mut removed = vec![false; n];
    for i in 0..n {
        if removed[i] {
            continue;
        }
        for j in 0..n {
            if i == j || removed[j] {
                continue;
            }
            let (a, b) = (&inst.sets[i], &inst.sets[j]);
            if !a.intents.is_subset(&b.intents) {
                continue;
            }
            let identical = a.intents == b.intents;
            // `i` goes if `j` covers everything `i` does for no more cost;
            // identical equal-cost sets keep the lower index.
            let drop_i = if identical {
                a.cost > b.cost || (a.cost == b.cost && j < i)
            } else {
                a.cost >= b.cost
            };
            if drop_i {
                removed[i] = true;
                break;
            }
        }
    }
    (0..n).filter(|&i| !removed[i]).collect()
}

/// Column-oriented view of a covering problem for the LP code.
#[derive(Debug, Clone)]
pub(crate) struct Columns {
    pub rows: usize,
    pub cols: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
}

/// Solves the LP relaxation `min c·x, Σ_{i∋ι} x_i ≥ 1, 0 ≤ x ≤ 1`.
pub fn solve_lp(inst: &CoverInstance) -> Result<LpSolution, WdicError> {
    let kept = presolve(inst);
    let columns = Columns {
        rows: inst.universe_size(),
        cols: kept
            .iter()
            .map(|&i| inst.sets[i].intents.ones().collect())
            .collect(),
        costs: kept.iter().map(|&i| inst.sets[i].cost).collect(),
    };
    let (x, _) = simplex::solve_covering(&columns, None)?;
    let mut values = vec![0.0; inst.len()];
    for (k, &i) in kept.iter().enumerate() {
        values[i] = x[k];
    }
    let objective = values
        .iter()
        .zip(&inst.sets)
        .map(|(v, s)| v * s.cost)
        .sum();
    Ok(LpSolution { values, objective })
}

/// `α = ceil(ln |I|)`.
pub fn rounding_factor(universe_size: usize) -> f64 {
    (universe_size.max(1) as f64).ln().ceil()
}

/// Randomized rounding of the LP optimum followed by greedy repair.
pub fn lp_round(inst: &CoverInstance, seed: u64) -> Result<CoverSolution, WdicError> {
    let lp = solve_lp(inst)?;
    lp_round_with(inst, &lp, seed)
}

/// Rounds a precomputed LP solution; lets callers reuse one LP across seeds.
pub fn lp_round_with(inst: &CoverInstance, lp: &LpSolution, seed: u64) -> Result<CoverSolution, WdicError> {
    let alpha = rounding_factor(inst.universe_size());
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut chosen = vec![false; inst.len()];
    let mut uncovered = all_intents(inst);
    for (i, &x) in lp.values.iter().enumerate() {
        // Draw from (0, 1] so that probability 1 always includes and
        // probability 0 never does.
        let u = 1.0 - rng.random::<f64>();
        if u <= (alpha * x).min(1.0) {
            chosen[i] = true;
            uncovered.difference_with(&inst.sets[i].intents);
        }
    }
    greedy_fill(inst, &mut chosen, &mut uncovered);
    let indices = (0..inst.len()).filter(|&i| chosen[i]).collect();
    CoverSolution::from_indices(inst, indices, Method::LpRounding, Some(seed))
}

pub fn solve(inst: &CoverInstance, method: Method, seed: u64) -> Result<CoverSolution, WdicError> {
    match method {
        Method::Greedy => solve_greedy(inst),
        Method::Ilp => solve_ilp(inst),
        Method::LpRounding => lp_round(inst, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `I = {1,2,3,4}`, `a = {1,2,3}` at 3, `b = {1,2}` at 2, `c = {3,4}` at 2.
    pub(crate) fn gap_instance() -> CoverInstance {
        CoverInstance::from_indices(
            4,
            vec![
                ("a", vec![0, 1, 2], 3.0),
                ("b", vec![0, 1], 2.0),
                ("c", vec![2, 3], 2.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn greedy_takes_lowest_index_on_ratio_ties() {
        let sol = solve_greedy(&gap_instance()).unwrap();
        assert_eq!(sol.selected, vec!["a", "c"]);
        assert_eq!(sol.total_cost, 5.0);
        assert_eq!(sol.method, Method::Greedy);
    }

    #[test]
    fn single_covering_set_is_forced() {
        let inst = CoverInstance::from_indices(3, vec![("only", vec![0, 1, 2], 7.0)]).unwrap();
        let sol = solve_greedy(&inst).unwrap();
        assert_eq!((sol.selected.clone(), sol.total_cost), (vec!["only".to_string()], 7.0));
        assert_eq!(solve_ilp(&inst).unwrap().total_cost, 7.0);
        assert_eq!(lp_round(&inst, 3).unwrap().total_cost, 7.0);
    }

    #[test]
    fn construction_errors() {
        let e = CoverInstance::from_indices(3, vec![("a", vec![0, 1], 1.0)]).unwrap_err();
        assert_eq!(e, WdicError::Infeasible(vec!["2".into()]));
        let e = CoverInstance::from_indices(1, vec![("a", vec![0], 0.0)]).unwrap_err();
        assert!(matches!(e, WdicError::InvalidCost { .. }));
        let e = CoverInstance::from_indices(1, vec![("a", vec![0], 1.0), ("a", vec![0], 1.0)])
            .unwrap_err();
        assert_eq!(e, WdicError::DuplicateId("a".into()));
        let e = CoverInstance::from_indices(1, vec![("a", vec![5], 1.0)]).unwrap_err();
        assert!(matches!(e, WdicError::UnknownIntent { .. }));
        assert_eq!(
            CoverInstance::from_indices(0, Vec::<(&str, Vec<usize>, f64)>::new()).unwrap_err(),
            WdicError::EmptyUniverse
        );
    }

    #[test]
    fn coverage_value_edges() {
        let inst = gap_instance();
        assert_eq!(coverage_value::<&str>(&[], &inst).unwrap(), 0);
        assert_eq!(coverage_value(&["a", "b", "c"], &inst).unwrap(), 4);
        assert_eq!(coverage_value(&["b"], &inst).unwrap(), 2);
        assert_eq!(
            coverage_value(&["zz"], &inst).unwrap_err(),
            WdicError::UnknownId("zz".into())
        );
    }

    #[test]
    fn presolve_drops_duplicates_and_dominated_sets() {
        let inst = CoverInstance::from_indices(
            3,
            vec![
                ("a", vec![0, 1], 2.0),
                ("b", vec![0, 1], 1.0),
                ("c", vec![0], 1.0),
                ("d", vec![2], 1.0),
                ("e", vec![2], 1.0),
                ("f", vec![1, 2], 5.0),
            ],
        )
        .unwrap();
        // a duplicates b at higher cost; c is inside b at equal cost; e
        // duplicates d at equal cost with a higher index. f survives.
        assert_eq!(presolve(&inst), vec![1, 3, 5]);
    }

    #[test]
    fn alpha_for_common_universe_sizes() {
        assert_eq!(rounding_factor(264), 6.0);
        assert_eq!(rounding_factor(4), 2.0);
        assert_eq!(rounding_factor(1), 0.0);
    }

    #[test]
    fn forced_lp_values_round_to_everything() {
        // Every intent is private to one set: the LP is integral at all ones.
        let inst = CoverInstance::from_indices(
            3,
            vec![("a", vec![0], 2.0), ("b", vec![1], 3.0), ("c", vec![2], 4.0)],
        )
        .unwrap();
        let lp = solve_lp(&inst).unwrap();
        assert_eq!(lp.values, vec![1.0, 1.0, 1.0]);
        assert!((lp.objective - 9.0).abs() < 1e-12);
        for seed in 0..50 {
            let sol = lp_round_with(&inst, &lp, seed).unwrap();
            assert_eq!(sol.len(), 3);
            assert_eq!(sol.rng.as_deref(), Some(RNG_ALGORITHM));
        }
        assert_eq!(solve_ilp(&inst).unwrap().len(), 3);
    }

    #[test]
    fn lp_round_is_reproducible_per_seed() {
        let inst = gap_instance();
        let a = lp_round(&inst, 42).unwrap();
        let b = lp_round(&inst, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn solution_json_shape() {
        let sol = lp_round(&gap_instance(), 9).unwrap();
        let v = serde_json::to_value(&sol).unwrap();
        assert_eq!(v["method"], "lp-rounding");
        assert_eq!(v["seed"], 9);
        assert_eq!(v["universeSize"], 4);
        assert!(v["totalCost"].is_number());
        assert!(v["selected"].is_array());
        let greedy = serde_json::to_value(solve_greedy(&gap_instance()).unwrap()).unwrap();
        assert!(greedy["seed"].is_null());
        assert!(greedy.get("rng").is_none());
    }

    #[test]
    fn from_universe_skips_empty_dialogues_and_weights_by_length() {
        let text = r#"{"id":"d1","turns":[{"speaker":"customer","text":"x","intents":["a"]},{"speaker":"agent","text":"y","intents":["b"]}]}
{"id":"d2","turns":[{"speaker":"customer","text":"x"}]}
{"id":"d3","turns":[{"speaker":"customer","text":"x","intents":["b"]}]}"#;
        let corpus = crate::corpus::read_jsonl(text.as_bytes()).unwrap();
        let universe =
            crate::corpus::build_intent_universe(&corpus, &crate::corpus::AnnotatedLabeler).unwrap();
        let inst = CoverInstance::from_universe(&universe, &corpus, CostModel::Utterances).unwrap();
        assert_eq!(inst.len(), 2);
        assert_eq!(inst.sets()[0].cost, 2.0);
        assert_eq!(inst.sets()[1].cost, 1.0);
    }
}
