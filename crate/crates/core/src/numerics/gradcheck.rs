use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::ParamSlot;

/// Anything exposing its trainable tensors in a fixed order.
pub trait ParamSet {
    fn slots(&self) -> Vec<&ParamSlot>;
    fn slots_mut(&mut self) -> Vec<&mut ParamSlot>;
}

impl ParamSet for Vec<ParamSlot> {
    fn slots(&self) -> Vec<&ParamSlot> {
        self.iter().collect()
    }

    fn slots_mut(&mut self) -> Vec<&mut ParamSlot> {
        self.iter_mut().collect()
    }
}

/// A single scalar inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub slot: usize,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub slot: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checked: Vec<CoordCheck>,
    pub failures: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Checked-coordinate count per parameter name.
    pub fn families(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for c in &self.checked {
            *out.entry(c.slot.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checked.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

/// Picks up to `per_slot` coordinates from every slot. Half of each quota
/// goes to coordinates with a non-zero analytic gradient (when there are
/// any), so sparse embedding tables are exercised where it matters.
pub fn sample_coords<P: ParamSet, R: Rng>(params: &P, per_slot: usize, rng: &mut R) -> Vec<Coord> {
    let mut coords = Vec::new();
    for (s, slot) in params.slots().into_iter().enumerate() {
        let n = slot.value.len();
        if n <= per_slot {
            coords.extend((0..n).map(|index| Coord { slot: s, index }));
            continue;
        }
        let mut nonzero: Vec<usize> =
            slot.grad.data().iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(i, _)| i).collect();
        nonzero.shuffle(rng);
        let mut picked: Vec<usize> = nonzero.into_iter().take(per_slot / 2).collect();
        while picked.len() < per_slot {
            let i = rng.gen_range(0..n);
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        picked.sort_unstable();
        coords.extend(picked.into_iter().map(|index| Coord { slot: s, index }));
    }
    coords
}

/// Compares the analytic gradients stored in each slot's `grad` against
/// central differences of `loss_fn`.
///
/// A coordinate passes when `|analytic − numeric| / max(1, |numeric|) ≤ tolerance`.
/// Parameter values are restored after each probe.
pub fn finite_difference_check<P, F>(
    params: &mut P,
    loss_fn: F,
    coords: &[Coord],
    epsilon: f64,
    tolerance: f64,
) -> GradCheckReport
where
    P: ParamSet,
    F: Fn(&P) -> f64,
{
    let mut report = GradCheckReport { tolerance, ..Default::default() };
    for c in coords {
        let (name, analytic, original) = {
            let slots = params.slots();
            let s = slots[c.slot];
            (s.name.clone(), s.grad.data()[c.index], s.value.data()[c.index])
        };
        set(params, *c, original + epsilon);
        let plus = loss_fn(params);
        set(params, *c, original - epsilon);
        let minus = loss_fn(params);
        set(params, *c, original);

        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel_error = (analytic - numeric).abs() / numeric.abs().max(1.0);
        let check = CoordCheck { slot: name, index: c.index, analytic, numeric, rel_error };
        if !(rel_error <= tolerance) {
            report.failures.push(check.clone());
        }
        report.checked.push(check);
    }
    report
}

fn set<P: ParamSet>(params: &mut P, c: Coord, v: f64) {
    params.slots_mut()[c.slot].value.data_mut()[c.index] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{LrGroup, Tensor};

    fn quadratic(grad: f64) -> Vec<ParamSlot> {
        let mut p = ParamSlot::new("x", Tensor::vector(vec![3.0]), LrGroup::Net);
        p.grad = Tensor::vector(vec![grad]);
        vec![p]
    }

    fn square(p: &Vec<ParamSlot>) -> f64 {
        p[0].value.data()[0].powi(2)
    }

    #[test]
    fn quadratic_derivative_matches() {
        let mut params = quadratic(6.0);
        let report = finite_difference_check(&mut params, square, &[Coord { slot: 0, index: 0 }], 1e-4, 1e-3);
        assert!(report.passed());
        assert!((report.checked[0].numeric - 6.0).abs() < 1e-6);
        assert_eq!(params[0].value.data()[0], 3.0);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut params = quadratic(6.5);
        let report = finite_difference_check(&mut params, square, &[Coord { slot: 0, index: 0 }], 1e-4, 1e-3);
        assert!(!report.passed());
        assert_eq!(report.failures[0].slot, "x");
    }

    #[test]
    fn nan_gradient_is_a_failure() {
        let mut params = quadratic(f64::NAN);
        let report = finite_difference_check(&mut params, square, &[Coord { slot: 0, index: 0 }], 1e-4, 1e-3);
        assert!(!report.passed());
    }
}
