//! Transfer-learning expression recognition: a frozen VGG19 network is run
//! from a portable weight bundle, intermediate activations are tapped as
//! features, reduced with PCA and classified with a linear SVM. The
//! [`evalkit`] module carries the hold-out, k-fold and leave-one-out
//! protocols together with the two-step parameter selection.

pub mod bundle;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod linalg;
pub mod oracle;
pub mod pca;
pub mod preprocess;
pub mod report;
pub mod svm;
pub mod tensor;
pub mod verify;
pub mod vgg;

pub use corpus::{extract_features, generate_synthetic_corpus, load_corpus, Corpus, FeatureCache, LoadPolicy};
pub use error::{Error, Result};
pub use evalkit::{make_split, run_grid, select_parameters, EvalOptions, EvalResult, Scheme, SelectionResult, SplitPlan};
pub use pca::{pca_fit, FeatureMatrix, PcaModel, RowSource, RowSubset};
pub use preprocess::{preprocess, Expression, ImageSample};
pub use report::{Provenance, Report};
pub use svm::{svm_train_binary, svm_train_ovr, SvmModel, SvmParams};
pub use tensor::Tensor;
pub use vgg::{TapPoint, VggConfig, WeightBundle};
