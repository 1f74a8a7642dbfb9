"""Group- and unit-level weight construction and normalization.

Unit likelihood contributions are exponentiated by normalized marginal
weights; the random-effect prior contribution of each observed group is
exponentiated by a group weight.  Five group-weight constructions are
supported: single-weighting (group weights identically 1), direct group
weights 1/pi_g for designs that sample groups, and three pseudo group
inclusion probability methods for indirect designs, where a group is only
observed because one of its members was sampled: sum-weights (needs the
population group size or an estimate), sum-probabilities, and
product-complement.

Normalization convention: group weights are scaled to sum to the number of
observed groups; unit weights are scaled within each group to the group
sample size under direct designs, and globally to the total sample size
under indirect designs.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SchemeMismatchError
from .sampling import SurveySample

__all__ = [
    "GroupWeightScheme",
    "WeightSet",
    "direct_group_weights",
    "sum_probabilities_group_weights",
    "product_complement_group_weights",
    "sum_weights_group_weights",
    "normalize",
    "build_weight_set",
    "SCHEME_NAMES",
]

SCHEME_NAMES = (
    "single",
    "direct",
    "sum_probabilities",
    "product_complement",
    "sum_weights",
)


@dataclass(frozen=True)
class GroupWeightScheme:
    """Choice of group-weight construction.

    ``n_g_source`` applies to the sum-weights method only: ``"known"`` uses
    the population group sizes carried by the sample, ``"estimated"``
    estimates them from the sampled units' weights.
    """

    method: str = "single"
    n_g_source: str = "known"

    def __post_init__(self):
        if self.method not in SCHEME_NAMES:
            raise SchemeMismatchError(
                f"unknown scheme {self.method!r}; expected one of {SCHEME_NAMES}"
            )
        if self.n_g_source not in ("known", "estimated"):
            raise SchemeMismatchError(
                f"n_g_source must be 'known' or 'estimated', got {self.n_g_source!r}"
            )

    @property
    def label(self) -> str:
        names = {
            "single": "Single-weighting",
            "direct": "Double-weighting",
            "sum_probabilities": "Sum-probabilities",
            "product_complement": "Product-complement",
            "sum_weights": "Sum-weights",
        }
        return names[self.method]


@dataclass(frozen=True)
class WeightSet:
    """Normalized group and unit weights plus the normalization echo."""

    group_w: np.ndarray
    unit_w: np.ndarray
    group_target: float
    unit_target: str  # "per_group" or "overall"
    group_scale: float
    scheme: GroupWeightScheme
    clamped_groups: int = 0

    def sums(self, sample: SurveySample) -> dict:
        per_group = np.bincount(sample.group, weights=self.unit_w, minlength=sample.n_groups)
        return {
            "group_w_sum": float(self.group_w.sum()),
            "unit_w_per_group": per_group,
            "unit_w_sum": float(self.unit_w.sum()),
        }

    def to_csv(self, sample: SurveySample, raw_group: np.ndarray, raw_unit: np.ndarray) -> str:
        """Audit CSV: group rows then unit rows, raw and normalized."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "g", "w_g_raw", "w_g_norm", "w_gj_raw", "w_gj_norm"])
        for g in range(sample.n_groups):
            w.writerow(["group", g + 1, repr(float(raw_group[g])), repr(float(self.group_w[g])), "", ""])
        for j in range(sample.n_total):
            w.writerow(
                ["unit", int(sample.group[j]) + 1, "", "",
                 repr(float(raw_unit[j])), repr(float(self.unit_w[j]))]
            )
        return buf.getvalue()


def _group_normalized_unit_weights(sample: SurveySample) -> np.ndarray:
    """Raw 1/pi weights normalized to sum to 1 within each group."""
    w = 1.0 / sample.pi_marg
    sums = np.bincount(sample.group, weights=w, minlength=sample.n_groups)
    return w / sums[sample.group]


def direct_group_weights(sample: SurveySample) -> np.ndarray:
    """Raw group weights 1/pi_g; requires a direct design."""
    if sample.pi_g is None:
        raise SchemeMismatchError(
            "direct group weights need group inclusion probabilities; "
            "this sample has none (indirect design?)"
        )
    return 1.0 / sample.pi_g


def sum_probabilities_group_weights(sample: SurveySample) -> np.ndarray:
    """Raw w_g = 1/pi_tilde_g with pi_tilde_g a weighted mean of member pi's.

    Within each observed group the sampled units' 1/pi weights are
    normalized to sum to 1 and pi_tilde_g = sum_j w_j pi_j.  The estimate
    may exceed 1 in principle; it is inverted as-is.
    """
    wt = _group_normalized_unit_weights(sample)
    pi_tilde = np.bincount(
        sample.group, weights=wt * sample.pi_marg, minlength=sample.n_groups
    )
    return 1.0 / pi_tilde


def product_complement_group_weights(
    sample: SurveySample, n: int | None = None
) -> tuple[np.ndarray, int]:
    """Raw w_g = 1/pi_tilde_g by the product-complement construction.

    Treats the n draws as independent with replacement: a unit's single-draw
    probability is pi1_j = 1 - (1 - pi_j)^(1/n), and the group probability
    is the complement of missing the group on all n draws,
    pi_tilde_g = 1 - (1 - sum_j w_j pi1_j)^n, with the within-group weights
    w_j normalized to sum to 1.  Guaranteed pi_tilde_g in (0, 1]; groups
    containing a certainty unit (pi = 1) short-circuit to pi_tilde_g = 1.
    If the inner sum reaches 1 the probability is clamped to 1 and counted.

    Returns (raw group weights, number of clamped groups).
    """
    if n is None:
        n = sample.n_total
    wt = _group_normalized_unit_weights(sample)
    certainty = np.bincount(
        sample.group, weights=(sample.pi_marg >= 1.0).astype(float), minlength=sample.n_groups
    ) > 0
    pi1 = 1.0 - np.power(1.0 - np.minimum(sample.pi_marg, 1.0 - 1e-16), 1.0 / n)
    inner = np.bincount(sample.group, weights=wt * pi1, minlength=sample.n_groups)
    clamped = int(np.sum((inner >= 1.0) & ~certainty))
    pi_tilde = 1.0 - np.power(np.maximum(1.0 - inner, 0.0), n)
    pi_tilde[certainty] = 1.0
    pi_tilde = np.minimum(pi_tilde, 1.0)
    return 1.0 / pi_tilde, clamped


def sum_weights_group_weights(sample: SurveySample, scheme: GroupWeightScheme) -> np.ndarray:
    """Raw w_g = (1/N_g) sum_j w_gj over the sampled units of each group.

    In "known" mode N_g comes from the sample; in "estimated" mode
    N_hat_g = sum_j w_{j|g}, where the conditional weights are extracted as
    w_gj / w_hat_g with w_hat_g the sum-probabilities first pass.  (With
    both sums taken over the same raw weights the estimate collapses
    algebraically to the sum-probabilities weight itself.)
    """
    w_sum = np.bincount(sample.group, weights=1.0 / sample.pi_marg, minlength=sample.n_groups)
    if scheme.n_g_source == "known":
        if sample.N_g is None:
            raise SchemeMismatchError(
                "sum-weights with known N_g needs population group sizes on the sample"
            )
        return w_sum / sample.N_g
    w_hat = sum_probabilities_group_weights(sample)
    n_hat = w_sum / w_hat
    return w_sum / n_hat


def normalize(
    raw_group: np.ndarray,
    raw_unit: np.ndarray,
    sample: SurveySample,
    scheme: GroupWeightScheme,
    clamped: int = 0,
) -> WeightSet:
    """Scale weights to the normalization targets.

    Group weights sum to the number of observed groups (single-weighting
    pins them at exactly 1 instead).  Unit weights are scaled per group to
    the group sample sizes for direct designs, and globally to the total
    sample size for indirect designs.
    """
    G = sample.n_groups
    if scheme.method == "single":
        group_w = np.ones(G)
        scale = 1.0
    else:
        scale = G / float(raw_group.sum())
        group_w = raw_group * scale
    if sample.is_direct:
        counts = sample.group_counts
        sums = np.bincount(sample.group, weights=raw_unit, minlength=G)
        unit_w = raw_unit * (counts / sums)[sample.group]
        target = "per_group"
    else:
        unit_w = raw_unit * (sample.n_total / raw_unit.sum())
        target = "overall"
    return WeightSet(
        group_w=group_w,
        unit_w=unit_w,
        group_target=float(G),
        unit_target=target,
        group_scale=scale,
        scheme=scheme,
        clamped_groups=clamped,
    )


def build_weight_set(sample: SurveySample, scheme: GroupWeightScheme) -> WeightSet:
    """Construct raw weights for ``scheme`` and normalize them."""
    raw_unit = 1.0 / sample.pi_marg
    clamped = 0
    if scheme.method == "single":
        raw_group = np.ones(sample.n_groups)
    elif scheme.method == "direct":
        raw_group = direct_group_weights(sample)
    elif scheme.method == "sum_probabilities":
        raw_group = sum_probabilities_group_weights(sample)
    elif scheme.method == "product_complement":
        raw_group, clamped = product_complement_group_weights(sample)
    else:
        raw_group = sum_weights_group_weights(sample, scheme)
    return normalize(raw_group, raw_unit, sample, scheme, clamped)
