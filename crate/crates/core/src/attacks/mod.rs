//! The attack roster: adversarial input crafting, backdoor poisoning, and
//! model-extraction query synthesis.

mod adversarial;
mod backdoor;
mod extraction;

pub use adversarial::{cw_l2, deepfool, fgsm, pgd, Adversarial, CwConfig};
pub use backdoor::{apply_trigger, poison_and_train, PoisonOutcome, TriggerKind, TriggerSpec};
pub use extraction::{jbda, surrogate_queries, to_gray28, JbdaConfig, JbdaResult};

use alloc::string::String;
use core::fmt;

/// Attack-method identifiers used in trace metadata and file headers.
/// 0 is reserved for benign traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttackMethod {
    Fgsm = 1,
    Pgd = 2,
    CarliniWagner = 3,
    PatternTrigger = 4,
    InstanceTrigger = 5,
    Watermark = 6,
    SurrogateFashion = 7,
    SurrogateCifar10 = 8,
    SyntheticJbda = 9,
    // held out of detector training
    Deepfool = 10,
    Square3x3Trigger = 11,
    SurrogateCifar100 = 12,
}

impl AttackMethod {
    /// The Table-1 roster the detector trains on.
    pub const ROSTER: [AttackMethod; 9] = [
        AttackMethod::Fgsm,
        AttackMethod::Pgd,
        AttackMethod::CarliniWagner,
        AttackMethod::PatternTrigger,
        AttackMethod::InstanceTrigger,
        AttackMethod::Watermark,
        AttackMethod::SurrogateFashion,
        AttackMethod::SurrogateCifar10,
        AttackMethod::SyntheticJbda,
    ];

    /// The unseen variants held out for the generalization experiment.
    pub const UNSEEN: [AttackMethod; 3] = [
        AttackMethod::Deepfool,
        AttackMethod::Square3x3Trigger,
        AttackMethod::SurrogateCifar100,
    ];

    pub fn label(self) -> crate::tdc::TraceLabel {
        use crate::tdc::TraceLabel::*;
        match self {
            AttackMethod::Fgsm | AttackMethod::Pgd | AttackMethod::CarliniWagner
            | AttackMethod::Deepfool => Adversarial,
            AttackMethod::PatternTrigger
            | AttackMethod::InstanceTrigger
            | AttackMethod::Watermark
            | AttackMethod::Square3x3Trigger => Backdoor,
            AttackMethod::SurrogateFashion
            | AttackMethod::SurrogateCifar10
            | AttackMethod::SyntheticJbda
            | AttackMethod::SurrogateCifar100 => Extraction,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::CarliniWagner => "cw",
            AttackMethod::PatternTrigger => "pattern-trigger",
            AttackMethod::InstanceTrigger => "instance-trigger",
            AttackMethod::Watermark => "watermark",
            AttackMethod::SurrogateFashion => "surrogate-fashion",
            AttackMethod::SurrogateCifar10 => "surrogate-cifar10",
            AttackMethod::SyntheticJbda => "jbda",
            AttackMethod::Deepfool => "deepfool",
            AttackMethod::Square3x3Trigger => "square3x3-trigger",
            AttackMethod::SurrogateCifar100 => "surrogate-cifar100",
        }
    }

    pub fn from_id(id: u8) -> Option<AttackMethod> {
        use AttackMethod::*;
        [
            Fgsm, Pgd, CarliniWagner, PatternTrigger, InstanceTrigger, Watermark,
            SurrogateFashion, SurrogateCifar10, SyntheticJbda, Deepfool, Square3x3Trigger,
            SurrogateCifar100,
        ]
        .into_iter()
        .find(|m| *m as u8 == id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttackError {
    NonFiniteGradient,
    Net(String),
    BadParam(String),
}

impl fmt::Display for AttackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackError::NonFiniteGradient => write!(f, "non-finite gradient"),
            AttackError::Net(s) => write!(f, "{s}"),
            AttackError::BadParam(s) => write!(f, "bad attack parameter: {s}"),
        }
    }
}

impl core::error::Error for AttackError {}

impl From<crate::network::NetError> for AttackError {
    fn from(e: crate::network::NetError) -> Self {
        AttackError::Net(alloc::format!("{e}"))
    }
}
