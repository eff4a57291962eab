#!/usr/bin/env python3
"""
Two-view scene-structure detector.

Labels a matched pair as
  PureRotationLike  - no parallax at all (pure rotation, points on the
                      baseline or at infinity): mean ||theta||^2 ~ 0
  RotationSingular  - every finite point coplanar with both camera centres,
                      or all points on one line: an observation Gram matrix
                      loses rank, so its smallest eigenvalue is ~ 0
  Regular           - anything else

Thresholds are in normalized image coordinates. Observations in pixels scale
the Gram matrices roughly by focal**2, so a pixel-domain threshold is about
threshold_rs * focal_px**2.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple

import numpy as np

from rotsfm.config import THRESHOLD_PR, THRESHOLD_RS
from rotsfm.errors import DataError
from rotsfm.geometry import MatchedPair, hom
from rotsfm.translation import ObservationSummary, accumulate_ps, lambda_min_cardano


class SceneLabel(str, Enum):
    PURE_ROTATION_LIKE = "PureRotationLike"
    ROTATION_SINGULAR = "RotationSingular"
    REGULAR = "Regular"


@dataclass(frozen=True)
class DetectionReport:
    g_i_lambda_min: float
    g_j_lambda_min: float
    v_rs: float
    theta_mean_sq: float
    label: SceneLabel

    def to_record(self, pair_key: Tuple[int, int]) -> Dict[str, object]:
        return {
            "pair": f"{pair_key[0]}-{pair_key[1]}",
            "v_rs": self.v_rs,
            "theta_mean_sq": self.theta_mean_sq,
            "label": self.label.value,
        }


def detection_matrices(pair: MatchedPair) -> Tuple[np.ndarray, np.ndarray]:
    xi = hom(pair.x_i)
    xj = hom(pair.x_j)
    return xi.T @ xi, xj.T @ xj


def _gram_lambdas(pair: MatchedPair) -> Tuple[float, float]:
    g_i, g_j = detection_matrices(pair)
    lam_i = max(lambda_min_cardano(ObservationSummary.from_matrix(g_i, len(pair))), 0.0)
    lam_j = max(lambda_min_cardano(ObservationSummary.from_matrix(g_j, len(pair))), 0.0)
    return lam_i, lam_j


def v_rs(pair: MatchedPair) -> float:
    return max(_gram_lambdas(pair)) / len(pair)


def classify(
    pair: MatchedPair,
    r_ij,
    threshold_rs: float = THRESHOLD_RS,
    threshold_pr: float = THRESHOLD_PR,
) -> DetectionReport:
    """
    Label a pair from its detection matrices and P^S at r_ij.

    The RotationSingular score is a per-point smallest Gram eigenvalue, so
    it grows with pixel noise: at U(0, 10px) with 1000 points, holoplane and
    line scenes score up to about 8e-5, close under the default 1e-4
    threshold. Heavier noise needs a larger threshold_rs.
    """
    if threshold_rs <= 0 or threshold_pr <= 0:
        raise DataError("detector thresholds must be positive")
    lam_i, lam_j = _gram_lambdas(pair)
    score = max(lam_i, lam_j) / len(pair)
    mean_sq = max(accumulate_ps(pair, r_ij).trace, 0.0) / len(pair)
    if mean_sq < threshold_pr:
        label = SceneLabel.PURE_ROTATION_LIKE
    elif score < threshold_rs:
        label = SceneLabel.ROTATION_SINGULAR
    else:
        label = SceneLabel.REGULAR
    return DetectionReport(lam_i, lam_j, score, mean_sq, label)
