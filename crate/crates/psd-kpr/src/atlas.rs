//! Keyframes, local maps, and the multi-map atlas.
//!
//! A session may accumulate several local maps (one per unrecovered tracking
//! failure) but exactly one is active at any time. Keyframe ids strictly
//! increase within a map; the atlas is single-writer, while reads may be
//! shared freely across query workers.

use crate::descriptor::PoseSemanticDescriptor;
use crate::pose::Pose;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AtlasError {
    #[error("keyframe id {id} not greater than previous id {prev} in map {map_id}")]
    NonMonotonicKeyframeId { map_id: u64, prev: u64, id: u64 },
    #[error("keyframe {id} carries non-finite map point coordinates")]
    NonFiniteMapPoint { id: u64 },
}

/// A stored keyframe: descriptor plus optional 3D map points and, when the
/// data comes from the simulator, the ground-truth pose used by oracle
/// recovery and trajectory evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub id: u64,
    pub psd: PoseSemanticDescriptor,
    pub map_points: Option<Vec<[f64; 3]>>,
    pub gt_pose: Option<Pose>,
}

impl Keyframe {
    fn validate(&self) -> Result<(), AtlasError> {
        if let Some(points) = &self.map_points {
            if points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(AtlasError::NonFiniteMapPoint { id: self.id });
            }
        }
        Ok(())
    }
}

/// One contiguous map: an ordered run of keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocalMapDoc", into = "LocalMapDoc")]
pub struct LocalMap {
    map_id: u64,
    keyframes: Vec<Keyframe>,
    active: bool,
}

impl LocalMap {
    fn new(map_id: u64, active: bool) -> Self {
        Self {
            map_id,
            keyframes: Vec::new(),
            active,
        }
    }

    pub fn map_id(&self) -> u64 {
        self.map_id
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframe_by_id(&self, id: u64) -> Option<&Keyframe> {
        self.keyframes.iter().find(|kf| kf.id == id)
    }

    /// Appends a keyframe; ids must strictly increase within the map.
    pub fn push(&mut self, kf: Keyframe) -> Result<(), AtlasError> {
        kf.validate()?;
        if let Some(last) = self.keyframes.last() {
            if kf.id <= last.id {
                return Err(AtlasError::NonMonotonicKeyframeId {
                    map_id: self.map_id,
                    prev: last.id,
                    id: kf.id,
                });
            }
        }
        self.keyframes.push(kf);
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LocalMapDoc {
    map_id: u64,
    keyframes: Vec<Keyframe>,
    active: bool,
}

impl From<LocalMap> for LocalMapDoc {
    fn from(m: LocalMap) -> Self {
        LocalMapDoc {
            map_id: m.map_id,
            keyframes: m.keyframes,
            active: m.active,
        }
    }
}

impl TryFrom<LocalMapDoc> for LocalMap {
    type Error = String;

    fn try_from(doc: LocalMapDoc) -> Result<Self, String> {
        let mut map = LocalMap::new(doc.map_id, doc.active);
        for kf in doc.keyframes {
            map.push(kf).map_err(|e| e.to_string())?;
        }
        Ok(map)
    }
}

/// The multi-map session state: several local maps, exactly one active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AtlasDoc", into = "AtlasDoc")]
pub struct Atlas {
    maps: Vec<LocalMap>,
    active_index: usize,
}

impl Atlas {
    /// A fresh session with a single empty active map (id 0).
    pub fn new() -> Self {
        Self {
            maps: vec![LocalMap::new(0, true)],
            active_index: 0,
        }
    }

    /// Terminates the current map and activates a fresh empty one whose id
    /// is one past the largest existing id.
    pub fn start_new_map(&mut self) {
        self.maps[self.active_index].active = false;
        let next_id = self.maps.iter().map(LocalMap::map_id).max().unwrap_or(0) + 1;
        self.maps.push(LocalMap::new(next_id, true));
        self.active_index = self.maps.len() - 1;
    }

    pub fn active_map(&self) -> &LocalMap {
        &self.maps[self.active_index]
    }

    pub fn active_map_mut(&mut self) -> &mut LocalMap {
        &mut self.maps[self.active_index]
    }

    pub fn maps(&self) -> &[LocalMap] {
        &self.maps
    }

    pub fn map_count(&self) -> usize {
        self.maps.len()
    }
}

impl Default for Atlas {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Serialize, Deserialize)]
struct AtlasDoc {
    maps: Vec<LocalMap>,
    active_index: usize,
}

impl From<Atlas> for AtlasDoc {
    fn from(a: Atlas) -> Self {
        AtlasDoc {
            maps: a.maps,
            active_index: a.active_index,
        }
    }
}

impl TryFrom<AtlasDoc> for Atlas {
    type Error = String;

    fn try_from(doc: AtlasDoc) -> Result<Self, String> {
        if doc.maps.is_empty() {
            return Err("atlas must hold at least one map".into());
        }
        let active_count = doc.maps.iter().filter(|m| m.is_active()).count();
        if active_count != 1 {
            return Err(format!("atlas must have exactly one active map, found {active_count}"));
        }
        let Some(active_index) = doc.maps.iter().position(LocalMap::is_active) else {
            unreachable!("active_count == 1 guarantees a position");
        };
        if active_index != doc.active_index {
            return Err(format!(
                "active_index {} disagrees with the active flag on map index {active_index}",
                doc.active_index
            ));
        }
        Ok(Atlas {
            maps: doc.maps,
            active_index: doc.active_index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::BoundingBox;

    fn kf(id: u64) -> Keyframe {
        let psd = PoseSemanticDescriptor::new(
            id,
            vec![1],
            vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
            Pose::identity(),
        )
        .unwrap();
        Keyframe {
            id,
            psd,
            map_points: None,
            gt_pose: None,
        }
    }

    #[test]
    fn fresh_atlas_has_one_active_empty_map() {
        let atlas = Atlas::new();
        assert_eq!(atlas.map_count(), 1);
        assert!(atlas.active_map().is_active());
        assert!(atlas.active_map().is_empty());
        assert_eq!(atlas.active_map().map_id(), 0);
    }

    #[test]
    fn new_map_deactivates_previous_and_increments_id() {
        let mut atlas = Atlas::new();
        atlas.start_new_map();
        assert_eq!(atlas.map_count(), 2);
        assert_eq!(atlas.active_map().map_id(), 1);
        assert!(atlas.active_map().is_empty());

        atlas.start_new_map();
        assert_eq!(atlas.map_count(), 3);
        let ids: Vec<u64> = atlas.maps().iter().map(LocalMap::map_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        let active: Vec<bool> = atlas.maps().iter().map(LocalMap::is_active).collect();
        assert_eq!(active, vec![false, false, true]);
    }

    #[test]
    fn keyframe_ids_must_strictly_increase() {
        let mut atlas = Atlas::new();
        atlas.active_map_mut().push(kf(4)).unwrap();
        atlas.active_map_mut().push(kf(9)).unwrap();
        let err = atlas.active_map_mut().push(kf(9)).unwrap_err();
        assert!(matches!(err, AtlasError::NonMonotonicKeyframeId { prev: 9, id: 9, .. }));
    }

    #[test]
    fn non_finite_map_points_are_rejected() {
        let mut atlas = Atlas::new();
        let mut frame = kf(0);
        frame.map_points = Some(vec![[0.0, f64::INFINITY, 1.0]]);
        assert!(matches!(
            atlas.active_map_mut().push(frame),
            Err(AtlasError::NonFiniteMapPoint { id: 0 })
        ));
    }

    #[test]
    fn lookup_by_id() {
        let mut atlas = Atlas::new();
        atlas.active_map_mut().push(kf(2)).unwrap();
        atlas.active_map_mut().push(kf(5)).unwrap();
        assert_eq!(atlas.active_map().keyframe_by_id(5).unwrap().id, 5);
        assert!(atlas.active_map().keyframe_by_id(3).is_none());
    }
}
