use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::ActionMask;

/// Lattice cell: the item's offset from its goal in whole steps.
pub type Cell = [i64; 2];

/// Table of action values over lattice cells. Unvisited cells read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    n_actions: usize,
    #[serde(with = "cell_table")]
    table: BTreeMap<Cell, Vec<f64>>,
}

impl TabularQ {
    pub fn new(n_actions: usize) -> Self {
        Self {
            n_actions,
            table: BTreeMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q(&self, cell: Cell, action: usize) -> f64 {
        self.table.get(&cell).map_or(0.0, |row| row[action])
    }

    pub fn row(&self, cell: Cell) -> Vec<f64> {
        self.table
            .get(&cell)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    /// Max over the valid actions of `cell`; zero when none is valid.
    pub fn value(&self, cell: Cell, mask: ActionMask) -> f64 {
        mask.valid_indices()
            .map(|a| self.q(cell, a))
            .fold(None, |best: Option<f64>, q| Some(best.map_or(q, |b| b.max(q))))
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, cell: Cell, action: usize, value: f64) {
        let n = self.n_actions;
        self.table.entry(cell).or_insert_with(|| vec![0.0; n])[action] = value;
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Cell, &Vec<f64>)> {
        self.table.iter()
    }
}

/// One-step Q-learning: move `Q(s, a)` toward `r + gamma * max_a' Q(s', a')`
/// (or `r` when terminal) by step size `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn tabular_update(
    tq: &mut TabularQ,
    cell: Cell,
    action: usize,
    reward: f64,
    next_cell: Cell,
    next_mask: ActionMask,
    terminal: bool,
    gamma: f64,
    alpha: f64,
) {
    let target = if terminal {
        reward
    } else {
        reward + gamma * tq.value(next_cell, next_mask)
    };
    let old = tq.q(cell, action);
    tq.set(cell, action, old + alpha * (target - old));
}

mod cell_table {
    use super::Cell;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        cell: Cell,
        q: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(t: &BTreeMap<Cell, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = t.iter().map(|(c, q)| Entry { cell: *c, q: q.clone() }).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Cell, Vec<f64>>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.cell, e.q)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_one_terminal_sets_reward() {
        let mut tq = TabularQ::new(2);
        tq.set([0, 0], 1, 5.0);
        tabular_update(&mut tq, [0, 0], 1, 0.25, [1, 0], ActionMask::all(2), true, 0.9, 1.0);
        assert_eq!(tq.q([0, 0], 1), 0.25);
    }

    #[test]
    fn alpha_zero_is_a_no_op() {
        let mut tq = TabularQ::new(2);
        tq.set([3, 1], 0, 1.5);
        tq.set([4, 1], 0, 9.0);
        tabular_update(&mut tq, [3, 1], 0, 0.7, [4, 1], ActionMask::all(2), false, 0.9, 0.0);
        assert_eq!(tq.q([3, 1], 0), 1.5);
    }

    #[test]
    fn bootstrap_uses_valid_actions_only() {
        let mut tq = TabularQ::new(2);
        tq.set([1, 0], 0, 10.0);
        tq.set([1, 0], 1, 2.0);
        let mut mask = ActionMask::all(2);
        mask.set(0, false);
        tabular_update(&mut tq, [0, 0], 0, 1.0, [1, 0], mask, false, 0.5, 1.0);
        assert_eq!(tq.q([0, 0], 0), 2.0);
    }

    #[test]
    fn serde_roundtrip() {
        let mut tq = TabularQ::new(4);
        tq.set([-3, 2], 1, 0.125);
        tq.set([0, 0], 3, -1.0);
        let text = serde_json::to_string(&tq).unwrap();
        assert_eq!(serde_json::from_str::<TabularQ>(&text).unwrap(), tq);
    }
}
