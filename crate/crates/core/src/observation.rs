//! The shared world-feature vector every policy reads its observation from.
//!
//! The environment fills one [`Features`] snapshot per step. A skill observes
//! an ordered subset of feature groups followed by its goal vector, so a
//! parent skill embedded in a richer scene reads exactly the inputs it was
//! trained on. Groups a scene does not contain are zero.
//!
//! | group       | width | contents (robot frame unless noted)                                   |
//! |-------------|-------|-----------------------------------------------------------------------|
//! | `proprio`   | 12    | v_fwd, v_lat, yaw rate, roll rate, pitch rate, sin yaw, cos yaw, height (normalized), previous action (4) |
//! | `door`      | 7     | hinge rel (2), doorway center rel (2), door tip rel (2), door angle   |
//! | `puck`      | 4     | puck rel robot (2), target rel puck (2)                               |
//! | `clearance` | 4     | zone entry rel (2), clearance at robot, clearance 0.5 m ahead         |
//! | `ranges`    | 8     | distances to static geometry along 8 body-frame rays, scaled to [0, 1] |

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Proprio,
    Door,
    Puck,
    Clearance,
    Ranges,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Proprio,
        FeatureGroup::Door,
        FeatureGroup::Puck,
        FeatureGroup::Clearance,
        FeatureGroup::Ranges,
    ];

    pub const fn width(self) -> usize {
        match self {
            FeatureGroup::Proprio => 12,
            FeatureGroup::Door => 7,
            FeatureGroup::Puck => 4,
            FeatureGroup::Clearance => 4,
            FeatureGroup::Ranges => 8,
        }
    }

    pub const fn offset(self) -> usize {
        match self {
            FeatureGroup::Proprio => 0,
            FeatureGroup::Door => 12,
            FeatureGroup::Puck => 19,
            FeatureGroup::Clearance => 23,
            FeatureGroup::Ranges => 27,
        }
    }
}

pub const FEATURE_DIM: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features(pub [f64; FEATURE_DIM]);

impl Default for Features {
    fn default() -> Self {
        Features([0.0; FEATURE_DIM])
    }
}

impl Features {
    pub fn group(&self, g: FeatureGroup) -> &[f64] {
        &self.0[g.offset()..g.offset() + g.width()]
    }

    pub fn group_mut(&mut self, g: FeatureGroup) -> &mut [f64] {
        &mut self.0[g.offset()..g.offset() + g.width()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        let arr: [f64; FEATURE_DIM] = values.try_into().ok()?;
        Some(Features(arr))
    }
}

/// Flat indices into [`Features`] for an ordered list of groups.
pub fn feature_indices(groups: &[FeatureGroup]) -> Vec<usize> {
    groups
        .iter()
        .flat_map(|g| g.offset()..g.offset() + g.width())
        .collect()
}

pub fn feature_width(groups: &[FeatureGroup]) -> usize {
    groups.iter().map(|g| g.width()).sum()
}
