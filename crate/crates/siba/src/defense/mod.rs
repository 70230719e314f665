//! Backdoor defenses: STRIP, Scale-Up, Fine-Pruning and Neural Cleanse,
//! plus the shared detection-report machinery (TPR / FPR / AUROC).

mod fine_prune;
mod neural_cleanse;
mod report;
mod scale_up;
mod strip;

pub use fine_prune::{fine_prune, write_prune_curve_csv, PruneCurvePoint};
pub use neural_cleanse::{
    anomaly_indices, neural_cleanse, write_anomaly_csv, ClassCleanse, NeuralCleanseConfig,
    NeuralCleanseReport, ANOMALY_THRESHOLD,
};
pub use report::{detection_report, write_detection_csv, DetectionReport, FlagDirection};
pub use scale_up::{scale_up_flag, scale_up_score, ScaleUpConfig};
pub use strip::{strip_entropy, strip_scores, StripConfig};

use crate::error::{Result, SibaError};

/// Anti-backdoor learning is outside the reproduced defense set; see Li et
/// al., "Anti-Backdoor Learning: Training Clean Models on Poisoned Data",
/// NeurIPS 2021.
pub fn abl_defense() -> Result<()> {
    Err(SibaError::Unsupported(
        "ABL is not implemented; see Li et al., NeurIPS 2021 (anti-backdoor learning)".into(),
    ))
}

/// SentiNet is outside the reproduced defense set; see Chou et al.,
/// "SentiNet: Detecting Localized Universal Attacks Against Deep Learning
/// Systems", IEEE S&P Workshops 2020.
pub fn sentinet_defense() -> Result<()> {
    Err(SibaError::Unsupported(
        "SentiNet is not implemented; see Chou et al., IEEE S&P Workshops 2020".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stubs_report_unsupported() {
        assert!(matches!(abl_defense(), Err(SibaError::Unsupported(_))));
        assert!(matches!(sentinet_defense(), Err(SibaError::Unsupported(_))));
    }
}
