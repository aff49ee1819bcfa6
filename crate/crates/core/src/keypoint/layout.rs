use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::KeypointError;

pub const HAND_LANDMARKS: usize = 21;
pub const FACE_LANDMARKS: usize = 468;
pub const BODY_LANDMARKS: usize = 33;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    LeftHand,
    RightHand,
    Face,
    Body,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::LeftHand => "left_hand",
            BlockKind::RightHand => "right_hand",
            BlockKind::Face => "face",
            BlockKind::Body => "body",
        })
    }
}

/// Half-open index range `[start, end)` of one block in the flat landmark array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSpec {
    name: String,
    blocks: Vec<Block>,
    total: usize,
}

impl LayoutSpec {
    /// Lays the blocks out contiguously in the given order.
    pub fn new(name: &str, sizes: &[(BlockKind, usize)]) -> Result<Self, KeypointError> {
        let mut blocks = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &(kind, len) in sizes {
            if len == 0 {
                return Err(KeypointError::Layout(format!("block {kind} is empty")));
            }
            if blocks.iter().any(|b: &Block| b.kind == kind) {
                return Err(KeypointError::Layout(format!("block {kind} appears twice")));
            }
            blocks.push(Block {
                kind,
                start,
                end: start + len,
            });
            start += len;
        }
        if blocks.is_empty() {
            return Err(KeypointError::Layout("layout has no blocks".into()));
        }
        Ok(Self {
            name: name.to_string(),
            blocks,
            total: start,
        })
    }

    /// Left hand, right hand, face mesh, body pose: 21 + 21 + 468 + 33 = 543.
    pub fn holistic543() -> Arc<LayoutSpec> {
        static L: OnceLock<Arc<LayoutSpec>> = OnceLock::new();
        L.get_or_init(|| {
            Arc::new(
                LayoutSpec::new(
                    "holistic543",
                    &[
                        (BlockKind::LeftHand, HAND_LANDMARKS),
                        (BlockKind::RightHand, HAND_LANDMARKS),
                        (BlockKind::Face, FACE_LANDMARKS),
                        (BlockKind::Body, BODY_LANDMARKS),
                    ],
                )
                .expect("static layout"),
            )
        })
        .clone()
    }

    /// 522-wide model input: the holistic layout with the face block cut to
    /// its first 447 points. Hands and the full body block (shoulders) stay.
    pub fn paper522() -> Arc<LayoutSpec> {
        static L: OnceLock<Arc<LayoutSpec>> = OnceLock::new();
        L.get_or_init(|| {
            Arc::new(
                LayoutSpec::new(
                    "paper522",
                    &[
                        (BlockKind::LeftHand, HAND_LANDMARKS),
                        (BlockKind::RightHand, HAND_LANDMARKS),
                        (BlockKind::Face, FACE_LANDMARKS - HAND_LANDMARKS),
                        (BlockKind::Body, BODY_LANDMARKS),
                    ],
                )
                .expect("static layout"),
            )
        })
        .clone()
    }

    /// Both hands plus the first 21 body points (face, shoulders, arms).
    pub fn compact63() -> Arc<LayoutSpec> {
        static L: OnceLock<Arc<LayoutSpec>> = OnceLock::new();
        L.get_or_init(|| {
            Arc::new(
                LayoutSpec::new(
                    "compact63",
                    &[
                        (BlockKind::LeftHand, HAND_LANDMARKS),
                        (BlockKind::RightHand, HAND_LANDMARKS),
                        (BlockKind::Body, 21),
                    ],
                )
                .expect("static layout"),
            )
        })
        .clone()
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["holistic543", "paper522", "compact63"]
    }

    pub fn by_name(name: &str) -> Result<Arc<LayoutSpec>, KeypointError> {
        match name {
            "holistic543" => Ok(Self::holistic543()),
            "paper522" => Ok(Self::paper522()),
            "compact63" => Ok(Self::compact63()),
            other => Err(KeypointError::Layout(format!("unknown layout {other:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Total landmark count K.
    pub fn k(&self) -> usize {
        self.total
    }

    pub fn block(&self, kind: BlockKind) -> Option<&Block> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    /// Flat index of a block-local landmark index.
    pub fn index_of(&self, kind: BlockKind, local: usize) -> Option<usize> {
        self.block(kind).filter(|b| local < b.len()).map(|b| b.start + local)
    }
}

/// Index map from one layout into another, matched block by block. Each
/// target block takes the leading landmarks of the same-named source block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Projection {
    source: Arc<LayoutSpec>,
    target: Arc<LayoutSpec>,
    indices: Vec<usize>,
}

impl Projection {
    pub fn new(source: Arc<LayoutSpec>, target: Arc<LayoutSpec>) -> Result<Self, KeypointError> {
        let mut indices = Vec::with_capacity(target.k());
        for tb in target.blocks() {
            let sb = source.block(tb.kind).ok_or_else(|| {
                KeypointError::Layout(format!(
                    "layout {} has no {} block required by {}",
                    source.name(),
                    tb.kind,
                    target.name()
                ))
            })?;
            if sb.len() < tb.len() {
                return Err(KeypointError::Layout(format!(
                    "{} block of {} has {} landmarks, {} needs {}",
                    tb.kind,
                    source.name(),
                    sb.len(),
                    target.name(),
                    tb.len()
                )));
            }
            indices.extend(sb.start..sb.start + tb.len());
        }
        Ok(Self {
            source,
            target,
            indices,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.source.name() == self.target.name()
    }

    pub fn source(&self) -> &Arc<LayoutSpec> {
        &self.source
    }

    pub fn target(&self) -> &Arc<LayoutSpec> {
        &self.target
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_block_arithmetic() {
        for name in LayoutSpec::builtin_names() {
            let l = LayoutSpec::by_name(name).unwrap();
            let sum: usize = l.blocks().iter().map(Block::len).sum();
            assert_eq!(sum, l.k(), "{name}");
            let mut next = 0;
            for b in l.blocks() {
                assert_eq!(b.start, next);
                next = b.end;
            }
        }
        assert_eq!(LayoutSpec::holistic543().k(), 21 + 21 + 468 + 33);
        assert_eq!(LayoutSpec::holistic543().k(), 543);
        assert_eq!(LayoutSpec::paper522().k(), 522);
        assert_eq!(LayoutSpec::compact63().k(), 63);
    }

    #[test]
    fn shoulders_are_addressable_in_every_builtin() {
        for name in LayoutSpec::builtin_names() {
            let l = LayoutSpec::by_name(name).unwrap();
            assert!(l.index_of(BlockKind::Body, 11).is_some());
            assert!(l.index_of(BlockKind::Body, 12).is_some());
        }
    }

    #[test]
    fn projection_to_compact() {
        let p = Projection::new(LayoutSpec::holistic543(), LayoutSpec::compact63()).unwrap();
        assert_eq!(p.indices().len(), 63);
        assert_eq!(p.indices()[0], 0);
        assert_eq!(p.indices()[42], 510);
        assert_eq!(p.indices()[62], 530);
        assert!(Projection::new(LayoutSpec::compact63(), LayoutSpec::holistic543()).is_err());
    }

    #[test]
    fn unknown_layout() {
        assert!(matches!(LayoutSpec::by_name("nope"), Err(KeypointError::Layout(_))));
    }
}
