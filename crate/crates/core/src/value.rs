//! Action-value tables, either one row per state or one row per cluster.

use std::sync::Arc;

use crate::approx::StateAggregator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Tabular,
    Aggregated(Arc<StateAggregator>),
}

impl Representation {
    /// Identity aggregations behave exactly like tabular tables.
    pub fn is_tabular(&self) -> bool {
        match self {
            Representation::Tabular => true,
            Representation::Aggregated(agg) => agg.is_identity(),
        }
    }

    pub fn aggregator(&self) -> Option<&Arc<StateAggregator>> {
        match self {
            Representation::Tabular => None,
            Representation::Aggregated(agg) => Some(agg),
        }
    }
}

/// `Q[s][a]`. With an aggregator, states of one cluster share a row, so a
/// write through any member is visible through all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    representation: Representation,
}

impl ValueTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        ValueTable {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
            representation: Representation::Tabular,
        }
    }

    pub fn zeros_with(representation: &Representation, num_states: usize, num_actions: usize) -> Result<Self> {
        match representation {
            Representation::Tabular => Ok(Self::zeros(num_states, num_actions)),
            Representation::Aggregated(agg) => {
                if agg.num_states() != num_states {
                    return Err(Error::shape(format!(
                        "aggregator covers {} states, model has {num_states}",
                        agg.num_states()
                    )));
                }
                Ok(ValueTable {
                    num_states,
                    num_actions,
                    values: vec![0.0; agg.num_clusters() * num_actions],
                    representation: representation.clone(),
                })
            }
        }
    }

    /// Tabular table from row-major values.
    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::shape(format!(
                "expected {} values, got {}",
                num_states * num_actions,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("value table entries must be finite"));
        }
        Ok(ValueTable { num_states, num_actions, values, representation: Representation::Tabular })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_rows(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn representation(&self) -> &Representation {
        &self.representation
    }

    #[inline]
    pub fn row_index(&self, s: usize) -> usize {
        match &self.representation {
            Representation::Tabular => s,
            Representation::Aggregated(agg) => agg.cluster_of(s),
        }
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        let r = self.row_index(s);
        &self.values[r * self.num_actions..(r + 1) * self.num_actions]
    }

    #[inline]
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.values[self.row_index(s) * self.num_actions + a]
    }

    #[inline]
    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Write `Q[row_of(s)][a]`.
    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        let i = self.row_index(s) * self.num_actions + a;
        self.values[i] = v;
    }

    /// Raw rows, one per state or cluster.
    pub fn rows(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn rows_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// One row per state, expanding clusters.
    pub fn to_state_rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.row(s).to_vec()).collect()
    }
}
