//! Sampling regions: a box lattice, an optional membership predicate and
//! optional extra anchor points.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Indicator = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Regular lattice over `[lo, hi]` per axis, filtered by the indicator.
///
/// An axis with a single sample uses its midpoint, so `lo = hi` is allowed
/// there; that is how lower-dimensional slices are expressed.
#[derive(Clone)]
pub struct Region {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    indicator: Option<(String, Indicator)>,
    anchors: Vec<DVector<f64>>,
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Region")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("counts", &self.counts)
            .field("indicator", &self.indicator.as_ref().map(|(l, _)| l))
            .field("anchors", &self.anchors.len())
            .finish()
    }
}

/// Serializable summary of a region, echoed in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridMeta {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub spacing: Vec<f64>,
    pub indicator: Option<String>,
    pub anchors: usize,
    pub admissible_points: usize,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if n == 0 || hi.len() != n || counts.len() != n {
            return Err(Error::input("region bounds and counts must have equal nonzero length"));
        }
        for i in 0..n {
            if !(lo[i].is_finite() && hi[i].is_finite()) {
                return Err(Error::input("region bounds must be finite"));
            }
            if counts[i] == 0 {
                return Err(Error::input("grid counts must be positive"));
            }
            if counts[i] > 1 && lo[i] >= hi[i] || lo[i] > hi[i] {
                return Err(Error::input(format!(
                    "axis {i}: need lo < hi, got [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(Self {
            lo,
            hi,
            counts,
            indicator: None,
            anchors: Vec::new(),
        })
    }

    /// A single point.
    pub fn point(x: &DVector<f64>) -> Result<Self> {
        let v: Vec<f64> = x.iter().copied().collect();
        Self::new(v.clone(), v, vec![1; x.len()])
    }

    /// Box sampled with spacing at most `step` on every axis.
    pub fn with_step(lo: Vec<f64>, hi: Vec<f64>, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::input("grid step must be positive"));
        }
        let counts = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| {
                if h > l {
                    ((h - l) / step - 1e-9).ceil() as usize + 1
                } else {
                    1
                }
            })
            .collect();
        Self::new(lo, hi, counts)
    }

    pub fn with_indicator(
        mut self,
        label: impl Into<String>,
        f: impl Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.indicator = Some((label.into(), Arc::new(f)));
        self
    }

    /// Extra points that are always sampled (subject to the indicator).
    pub fn with_anchors(mut self, anchors: Vec<DVector<f64>>) -> Result<Self> {
        if anchors.iter().any(|a| a.len() != self.dim()) {
            return Err(Error::input("anchor dimension differs from region dimension"));
        }
        self.anchors = anchors;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                if self.counts[i] > 1 {
                    (self.hi[i] - self.lo[i]) / (self.counts[i] - 1) as f64
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.indicator.as_ref().map_or(true, |(_, f)| f(x))
    }

    fn axis_value(&self, axis: usize, i: usize) -> f64 {
        if self.counts[axis] == 1 {
            0.5 * (self.lo[axis] + self.hi[axis])
        } else {
            let t = i as f64 / (self.counts[axis] - 1) as f64;
            self.lo[axis] + t * (self.hi[axis] - self.lo[axis])
        }
    }

    /// Admissible lattice points in row-major order (last axis fastest),
    /// followed by admissible anchors.
    pub fn points(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.dim();
        let total: usize = self.counts.iter().product();
        let mut out = Vec::new();
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let x = DVector::from_iterator(n, (0..n).map(|a| self.axis_value(a, idx[a])));
            if self.contains(&x) {
                out.push(x);
            }
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] < self.counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out.extend(self.anchors.iter().filter(|a| self.contains(a)).cloned());
        if out.is_empty() {
            return Err(Error::input("no grid point satisfies the region indicator"));
        }
        Ok(out)
    }

    /// Lattice points on the boundary of the box (admissible ones only).
    pub fn boundary_points(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.dim();
        Ok(self
            .points()?
            .into_iter()
            .filter(|x| {
                (0..n).any(|a| {
                    self.counts[a] > 1 && (x[a] == self.lo[a] || x[a] == self.hi[a])
                })
            })
            .collect())
    }

    pub fn meta(&self) -> Result<GridMeta> {
        Ok(GridMeta {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            counts: self.counts.clone(),
            spacing: self.spacing(),
            indicator: self.indicator.as_ref().map(|(l, _)| l.clone()),
            anchors: self.anchors.len(),
            admissible_points: self.points()?.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_and_midpoints() {
        let r = Region::new(vec![0.0, -1.0], vec![0.0, 1.0], vec![1, 3]).unwrap();
        let pts = r.points().unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0].as_slice(), &[0.0, -1.0]);
        assert_eq!(pts[2].as_slice(), &[0.0, 1.0]);
        assert_eq!(r.spacing(), vec![0.0, 1.0]);
    }

    #[test]
    fn step_constructor_hits_endpoints() {
        let r = Region::with_step(vec![-20.0], vec![20.0], 0.005).unwrap();
        assert_eq!(r.counts(), &[8001]);
        let pts = r.points().unwrap();
        assert_eq!(pts.last().unwrap()[0], 20.0);
        assert!((pts[4000][0]).abs() < 1e-12);
    }

    #[test]
    fn indicator_filters_and_empty_errors() {
        let r = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![5, 5])
            .unwrap()
            .with_indicator("disk", |x| x.norm() <= 1.0);
        assert_eq!(r.points().unwrap().len(), 13);
        let empty = r.clone().with_indicator("none", |_| false);
        assert!(empty.points().unwrap_err().is_input());
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(Region::new(vec![1.0], vec![0.0], vec![3]).is_err());
        assert!(Region::new(vec![0.0], vec![0.0], vec![2]).is_err());
        assert!(Region::new(vec![0.0], vec![1.0], vec![0]).is_err());
    }

    #[test]
    fn anchors_are_appended() {
        let r = Region::new(vec![0.0], vec![1.0], vec![2])
            .unwrap()
            .with_anchors(vec![DVector::from_element(1, 0.25)])
            .unwrap();
        assert_eq!(r.points().unwrap().len(), 3);
        assert_eq!(r.meta().unwrap().admissible_points, 3);
    }
}
