//! Covariate-dependent GEV fitting: formula language, design matrices,
//! penalized maximum likelihood, prediction, cross-validation and selection.

mod cv;
mod design;
mod fit;
mod folds;
mod formula;

pub use cv::{cv_score, fit_full, forward_select, CvScore, CvSettings, SelectionEntry, Smoothing};
pub use design::{build_design, BuiltTerm, DesignMatrices, ParamTerms};
pub use fit::{fit, penalized_labels, predict, FitSettings, MarginalFit, XI_BOUND};
pub use folds::{make_folds, FoldAssignment};
pub use formula::{ModelFormula, ParamFormula, SmoothKind, Term};
