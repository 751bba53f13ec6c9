//! Concordance, AUROC, arousal binning, group comparisons, logistic odds
//! ratios and survival models.

mod arousal;
mod groups;
mod logistic;
mod rank;
mod survival;

pub use arousal::{decile_arousal_analysis, pair_with_arousal, Bin, BinnedCorrelation, NegativePolicy};
pub use groups::{chi_square_2x2, cohens_d, welch_t, ChiSquare, TTest};
pub use logistic::{fit_logistic, logistic_or, one_hot, LogisticFit, OddsRatio};
pub use rank::{
    auroc, auroc_bootstrap_ci, mean, pearson, quantile_sorted, ranks, spearman, spearman_concordance, variance,
    Bootstrap, Interval,
};
pub use survival::{cox_log_likelihood, cox_ph, km_estimate, logrank, CoxFit, KaplanMeier, LogRank, Ties};
