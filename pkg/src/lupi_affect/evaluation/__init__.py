"""Cross-validation, metrics and paired significance tests."""

from .folds import FoldPlan, make_folds
from .metrics import MajorityClassifier, accuracy, ccc, confidence_halfwidth, majority_baseline, pcc
from .stats import SignificanceReport, dagostino_pearson, paired_t_test, paired_test, wilcoxon_signed_rank

__all__ = [
    "FoldPlan", "make_folds", "MajorityClassifier", "accuracy", "ccc", "confidence_halfwidth",
    "majority_baseline", "pcc", "SignificanceReport", "dagostino_pearson", "paired_t_test", "paired_test",
    "wilcoxon_signed_rank",
]
