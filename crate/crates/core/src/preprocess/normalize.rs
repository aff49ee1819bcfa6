use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::keypoint::{is_missing, BlockKind, KeypointFrame, LayoutSpec, Point3};

/// Origin and scale used to make frames position and size invariant.
/// Indices are local to `ref_block`; the defaults address the right
/// shoulder (12) and the shoulder pair (11, 12) of the body pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationSpec {
    pub ref_block: BlockKind,
    pub ref_index: usize,
    pub shoulder_pair: (usize, usize),
    pub epsilon_dnorm: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            ref_block: BlockKind::Body,
            ref_index: 12,
            shoulder_pair: (11, 12),
            epsilon_dnorm: 1e-6,
        }
    }
}

/// Flat indices of the reference landmark and the two shoulders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Anchors {
    pub reference: usize,
    pub left: usize,
    pub right: usize,
}

impl NormalizationSpec {
    pub fn anchors(&self, layout: &LayoutSpec) -> Result<Anchors, PreprocessError> {
        if !(self.epsilon_dnorm > 0.0) {
            return Err(PreprocessError::Config("epsilon_dnorm must be > 0".into()));
        }
        let lookup = |local: usize| {
            layout.index_of(self.ref_block, local).ok_or_else(|| {
                PreprocessError::Config(format!(
                    "layout {} has no {} landmark {local}",
                    layout.name(),
                    self.ref_block
                ))
            })
        };
        Ok(Anchors {
            reference: lookup(self.ref_index)?,
            left: lookup(self.shoulder_pair.0)?,
            right: lookup(self.shoulder_pair.1)?,
        })
    }
}

pub(crate) fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub(crate) fn normalize_points(
    t: i64,
    points: &[Point3],
    anchors: Anchors,
    epsilon: f64,
) -> Result<Vec<Point3>, PreprocessError> {
    if points.iter().any(is_missing) {
        return Err(PreprocessError::ImputationRequired { t });
    }
    let origin = points[anchors.reference];
    let d_norm = distance(&points[anchors.left], &points[anchors.right]);
    if !(d_norm >= epsilon) {
        return Err(PreprocessError::DegenerateFrame { t, d_norm });
    }
    Ok(points
        .iter()
        .map(|p| {
            [
                (p[0] - origin[0]) / d_norm,
                (p[1] - origin[1]) / d_norm,
                (p[2] - origin[2]) / d_norm,
            ]
        })
        .collect())
}

/// Translates the reference landmark to the origin and divides by the
/// shoulder distance of the same frame.
pub fn normalize_frame(frame: &KeypointFrame, spec: &NormalizationSpec) -> Result<KeypointFrame, PreprocessError> {
    let anchors = spec.anchors(frame.layout())?;
    let points = normalize_points(frame.t(), frame.landmarks(), anchors, spec.epsilon_dnorm)?;
    Ok(frame.with_landmarks(points))
}

/// Hold-last imputation of tracker dropouts.
///
/// A missing landmark takes its most recent observed value. Before any
/// observation exists it takes the current reference landmark, so it lands
/// on the origin after normalization. The reference and shoulders
/// themselves cannot be filled without history.
#[derive(Clone, Debug)]
pub struct Imputer {
    last: Vec<Option<Point3>>,
    anchors: Anchors,
}

impl Imputer {
    pub fn new(k: usize, anchors: Anchors) -> Self {
        Self {
            last: vec![None; k],
            anchors,
        }
    }

    pub fn push(&mut self, t: i64, points: &[Point3]) -> Result<Vec<Point3>, PreprocessError> {
        debug_assert_eq!(points.len(), self.last.len());
        let Anchors { reference, left, right } = self.anchors;
        for idx in [reference, left, right] {
            if is_missing(&points[idx]) && self.last[idx].is_none() {
                return Err(PreprocessError::ImputationRequired { t });
            }
        }
        let fallback = if is_missing(&points[reference]) {
            self.last[reference].expect("checked above")
        } else {
            points[reference]
        };
        let mut out = Vec::with_capacity(points.len());
        for (p, last) in points.iter().zip(self.last.iter_mut()) {
            if is_missing(p) {
                out.push(last.unwrap_or(fallback));
            } else {
                *last = Some(*p);
                out.push(*p);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoint::{LayoutSpec, MISSING};

    fn body_frame(points: &[(usize, Point3)], fill: Point3) -> KeypointFrame {
        let l = LayoutSpec::compact63();
        let mut lm = vec![fill; l.k()];
        for &(local, p) in points {
            lm[l.index_of(BlockKind::Body, local).unwrap()] = p;
        }
        KeypointFrame::new(0, lm, l).unwrap()
    }

    #[test]
    fn hand_forced_example() {
        // ref (1,2,3), left shoulder 2 away, landmark (3,2,3) -> (1,0,0)
        let f = body_frame(&[(12, [1.0, 2.0, 3.0]), (11, [3.0, 2.0, 3.0])], [3.0, 2.0, 3.0]);
        let n = normalize_frame(&f, &NormalizationSpec::default()).unwrap();
        assert_eq!(n.landmarks()[0], [1.0, 0.0, 0.0]);
        let r = f.layout().index_of(BlockKind::Body, 12).unwrap();
        assert_eq!(n.landmarks()[r], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_and_missing() {
        let f = body_frame(&[(12, [1.0, 2.0, 3.0]), (11, [1.0, 2.0, 3.0])], [0.0; 3]);
        assert!(matches!(
            normalize_frame(&f, &NormalizationSpec::default()),
            Err(PreprocessError::DegenerateFrame { .. })
        ));
        let f = body_frame(&[(12, [1.0, 2.0, 3.0]), (11, [0.0, 2.0, 3.0])], MISSING);
        assert!(matches!(
            normalize_frame(&f, &NormalizationSpec::default()),
            Err(PreprocessError::ImputationRequired { .. })
        ));
    }

    #[test]
    fn imputer_holds_last_and_falls_back_to_reference() {
        let l = LayoutSpec::compact63();
        let anchors = NormalizationSpec::default().anchors(&l).unwrap();
        let mut imp = Imputer::new(l.k(), anchors);
        let mut a = vec![[0.5, 0.5, 0.5]; l.k()];
        a[0] = MISSING;
        let out = imp.push(0, &a).unwrap();
        assert_eq!(out[0], [0.5, 0.5, 0.5]);
        let mut b = vec![[1.0, 1.0, 1.0]; l.k()];
        b[5] = MISSING;
        let out = imp.push(1, &b).unwrap();
        assert_eq!(out[5], [0.5, 0.5, 0.5]);
        let mut c = vec![[0.0; 3]; l.k()];
        c[anchors.reference] = MISSING;
        let mut fresh = Imputer::new(l.k(), anchors);
        assert!(matches!(
            fresh.push(0, &c),
            Err(PreprocessError::ImputationRequired { t: 0 })
        ));
    }
}
