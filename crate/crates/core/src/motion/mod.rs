//! Skeleton and motion data model, normalization, interaction masks,
//! kinematic utilities and motion files.

mod contacts;
mod io;
mod kinematics;
mod masks;
mod normalize;
mod sequence;
mod skeleton;

pub use contacts::{
    detect_foot_contacts, percentile_sorted, DEFAULT_HEIGHT_EPS, DEFAULT_SPEED_EPS,
    GROUND_PERCENTILE,
};
pub use io::{load_motion, read_motion_document, save_motion, MotionDocument};
pub use kinematics::{bone_lengths, forward_kinematics, UNIT_QUATERNION_TOL};
pub use masks::{compute_hand_masks, hand_masks_from_bodies, HandInteractionMask, DEFAULT_MASK_THRESHOLD};
pub use normalize::{denormalize_pair, denormalize_reactor, normalize_pair, NormalizationTransform};
pub use sequence::{InteractionPair, MotionSequence, Role};
pub use skeleton::{JointSpec, Side, Skeleton, SkeletonPreset};
