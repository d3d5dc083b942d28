//! Slot assignment: the `i`-th strongest predicted slot carries the `i`-th
//! highest-priority feature. The receiver undoes it with the transmitted order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codec::FeatureTensor;
use crate::error::{Error, Result};

/// `order[j]` is the original index of the feature carried in slot `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FeatureOrder(Vec<usize>);

impl FeatureOrder {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        if n == 0 {
            return Err(Error::InvalidPermutation {
                len: 0,
                detail: "empty".into(),
            });
        }
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n {
                return Err(Error::InvalidPermutation {
                    len: n,
                    detail: format!("index {i} out of range"),
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPermutation {
                    len: n,
                    detail: format!("index {i} repeated"),
                });
            }
        }
        Ok(Self(order))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Bits needed to signal the order naively: `c * log2(c)`.
    pub fn overhead_bits(&self) -> f64 {
        let c = self.0.len() as f64;
        c * c.log2()
    }
}

impl TryFrom<Vec<usize>> for FeatureOrder {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureOrder> for Vec<usize> {
    fn from(o: FeatureOrder) -> Self {
        o.0
    }
}

/// Indices sorted by value, largest first. Equal values keep ascending index order.
pub fn sort_desc_with_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Permutes `a`'s features into slots by matching descending `priority` to
/// descending `|forecast|`.
pub fn arrange(a: &FeatureTensor, priority: &[f64], forecast: &[Complex64]) -> Result<(FeatureTensor, FeatureOrder)> {
    let amps: Vec<f64> = forecast.iter().map(|h| h.norm()).collect();
    let order = assignment(priority, &amps)?;
    if order.len() != a.c() {
        return Err(Error::Length {
            what: "priority vector",
            expected: a.c(),
            actual: order.len(),
        });
    }
    Ok((permute(a, &order), order))
}

/// The order alone, from priorities and slot amplitudes.
pub fn assignment(priority: &[f64], amplitudes: &[f64]) -> Result<FeatureOrder> {
    if priority.len() != amplitudes.len() {
        return Err(Error::Length {
            what: "forecast",
            expected: priority.len(),
            actual: amplitudes.len(),
        });
    }
    let u = sort_desc_with_indices(amplitudes);
    let v = sort_desc_with_indices(priority);
    let mut order = vec![0; priority.len()];
    for (&slot, &feat) in u.iter().zip(&v) {
        order[slot] = feat;
    }
    FeatureOrder::new(order)
}

/// Slot `j` of the result holds feature `order[j]` of `a`.
pub fn permute(a: &FeatureTensor, order: &FeatureOrder) -> FeatureTensor {
    let mut out = a.clone();
    for (slot, &feat) in order.as_slice().iter().enumerate() {
        out.feature_mut(slot).copy_from_slice(a.feature(feat));
    }
    out
}

/// Puts slot `j` back at feature position `order[j]`.
pub fn inverse_arrange(received: &FeatureTensor, order: &FeatureOrder) -> Result<FeatureTensor> {
    let order = FeatureOrder::new(order.as_slice().to_vec())?;
    if order.len() != received.c() {
        return Err(Error::Length {
            what: "feature order",
            expected: received.c(),
            actual: order.len(),
        });
    }
    let mut out = received.clone();
    for (slot, &feat) in order.as_slice().iter().enumerate() {
        out.feature_mut(feat).copy_from_slice(received.feature(slot));
    }
    Ok(out)
}
