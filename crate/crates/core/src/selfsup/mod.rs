//! Training without annotations: pseudo-labels from homographic adaptation
//! of a bootstrap detector, and losses that tie together the frames of a
//! temporal triplet.

mod harris;
mod labels;
mod loss;
mod train;

pub use harris::{harris_response, HarrisDetector, HarrisParams};
pub use labels::{
    adaptation_homographies, aggregate_views, binarize_labels, homographic_adaptation, AdaptationConfig,
    LabelGrid, DEFAULT_TAU_TRAIN, DUSTBIN,
};
pub use loss::{
    correspondence_mask, descriptor_loss, detector_loss, focal_element, focal_loss, hinge_loss,
    CorrespondenceMask, FocalForm, FocalParams, HingeParams, LambdaSide, LossWeights, P_MIN,
};
pub use train::{
    label_frame, train_descriptor, train_detector, LossHistory, Sample, TrainConfig,
};
