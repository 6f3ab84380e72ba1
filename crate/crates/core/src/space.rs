use alloc::format;
use alloc::vec::Vec;

use crate::error::{fmt_state, Error, Result};

/// A point of a discrete space: one category index per dimension.
pub type State = Vec<usize>;

/// Default cap on the number of states any full enumeration may touch.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// A finite product space `[0, dims[0]) x ... x [0, dims[D-1])`.
///
/// Flat indices are row-major: the last dimension varies fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteSpace {
    dims: Vec<usize>,
    cap: usize,
}

impl DiscreteSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        Self::with_cap(dims, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(dims: Vec<usize>, cap: usize) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("a space needs at least one dimension".into()));
        }
        if let Some(d) = dims.iter().position(|&n| n < 2) {
            return Err(Error::InvalidSpace(format!("dimension {d} has {} categories, need at least 2", dims[d])));
        }
        Ok(DiscreteSpace { dims, cap })
    }

    /// `D` binary dimensions.
    pub fn binary(d: usize) -> Result<Self> {
        Self::new(alloc::vec![2; d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn is_binary(&self) -> bool {
        self.dims.iter().all(|&n| n == 2)
    }

    /// Number of states, saturating at `u128::MAX`.
    pub fn total_states(&self) -> u128 {
        self.dims.iter().try_fold(1u128, |acc, &n| acc.checked_mul(n as u128)).unwrap_or(u128::MAX)
    }

    pub fn is_enumerable(&self) -> bool {
        self.total_states() <= self.cap as u128
    }

    /// Total number of states, or an error when above the enumeration cap.
    pub fn enumerable_len(&self) -> Result<usize> {
        let total = self.total_states();
        if total > self.cap as u128 {
            return Err(Error::TooLarge { states: total, cap: self.cap });
        }
        Ok(total as usize)
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.dims.len() && x.iter().zip(&self.dims).all(|(&v, &n)| v < n)
    }

    pub fn check(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.dims.len() {
            return Err(Error::InvalidState {
                state: fmt_state(x),
                reason: format!("expected {} coordinates", self.dims.len()),
            });
        }
        if let Some(d) = x.iter().zip(&self.dims).position(|(&v, &n)| v >= n) {
            return Err(Error::InvalidState {
                state: fmt_state(x),
                reason: format!("coordinate {d} outside [0, {})", self.dims[d]),
            });
        }
        Ok(())
    }

    /// Flat index of a valid state. Requires an enumerable space.
    pub fn index_of(&self, x: &[usize]) -> Result<usize> {
        self.enumerable_len()?;
        self.check(x)?;
        Ok(self.index_unchecked(x))
    }

    pub(crate) fn index_unchecked(&self, x: &[usize]) -> usize {
        x.iter().zip(&self.dims).fold(0usize, |acc, (&v, &n)| acc * n + v)
    }

    pub fn state_at(&self, mut index: usize) -> State {
        let mut x = alloc::vec![0; self.dims.len()];
        for (slot, &n) in x.iter_mut().zip(&self.dims).rev() {
            *slot = index % n;
            index /= n;
        }
        x
    }

    /// Every state in flat-index order.
    pub fn states(&self) -> Result<impl Iterator<Item = State> + '_> {
        let n = self.enumerable_len()?;
        Ok((0..n).map(move |i| self.state_at(i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_degenerate_dims() {
        assert!(DiscreteSpace::new(vec![]).is_err());
        assert!(DiscreteSpace::new(vec![3, 1]).is_err());
        assert!(DiscreteSpace::new(vec![2, 2]).is_ok());
    }

    #[test]
    fn index_round_trip() {
        let s = DiscreteSpace::new(vec![3, 4, 5]).unwrap();
        for i in 0..60 {
            let x = s.state_at(i);
            assert!(s.contains(&x));
            assert_eq!(s.index_of(&x).unwrap(), i);
        }
        assert_eq!(s.state_at(7), vec![0, 1, 2]);
    }

    #[test]
    fn cap_is_enforced() {
        let s = DiscreteSpace::binary(40).unwrap();
        assert!(matches!(s.enumerable_len(), Err(Error::TooLarge { .. })));
        assert_eq!(s.total_states(), 1u128 << 40);
        let small = DiscreteSpace::with_cap(vec![10, 10], 50).unwrap();
        assert!(small.states().is_err());
    }

    #[test]
    fn invalid_states_are_reported() {
        let s = DiscreteSpace::new(vec![2, 3]).unwrap();
        assert!(s.check(&[1, 3]).is_err());
        assert!(s.check(&[1]).is_err());
        assert!(s.check(&[1, 2]).is_ok());
    }
}
