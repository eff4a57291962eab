#!/usr/bin/env python3
"""
Defaults and the key=value configuration layer.

Precedence everywhere is: command-line flags > config file > the defaults
below. No environment variables are consulted.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from rotsfm.errors import DataError

# ---------- numerical tolerances ----------
TOL_RANK = 1e-8          # eigenvalue count threshold, relative to trace
EPS_ABS = 1e-14          # absolute floor for the rank threshold
TOL_XI = 1e-12           # xi cross products, relative to trace**2
CARDANO_P_TOL = 1e-14    # |p| below this * trace**2 -> triple root
CARDANO_CLAMP = 1e-9     # tolerated |arccos argument| - 1 before raising
THETA_EPS = 1e-14        # ||theta|| below this counts as zero parallax
COORD_EPS = 1e-12        # |Y_3| < COORD_EPS * ||Y|| -> coordinate form invalid
ROT_TOL = 1e-9           # orthonormality / determinant tolerance

# ---------- detector ----------
THRESHOLD_RS = 1e-4
THRESHOLD_PR = 1e-9

# ---------- Levenberg-Marquardt ----------
DAMPING_INIT = 1e-3
DAMPING_UP = 10.0
DAMPING_DOWN = 0.1
DAMPING_MAX = 1e12
LM_EPSILON = 1e-10
K_MAX_TWO_VIEW = 100
K_MAX_MULTI_VIEW = 50
FD_STEP = 1e-6
STEP_TOL = 1e-14         # an update this small means nothing is left to gain
REORTHO_EVERY = 10       # accepted compositions between polar re-projections
HUBER_SCALE = 0.01       # used when --huber is given without a value

# ---------- translation refinement at a fixed rotation ----------
TRANSLATION_SWEEPS = 20
TRANSLATION_TOL = 1e-12  # Gauss-Newton step norm on the direction sphere
TRANSLATION_HALVINGS = 8

# ---------- rotation averaging ----------
CHORDAL_SWEEPS = 50
IRLS_SWEEPS = 10
CAUCHY_FACTOR = 5.0

# ---------- simulator ----------
FOCAL_PX = 480.0
IMAGE_PX = 960
MAX_ANGLE = 0.5
K_NEAREST = 6
MIN_SHARED_POINTS = 30
MIN_EDGE_POINTS = 8
CAMERA_SPACING = 10.0
MIN_DEPTH = 1e-2

# sphere radius / plane height / square side / ring outer radius, per kind
DEFAULT_DEPTH = {
    "Standard": 20.0,
    "PlanarScene": 10.0,
    "Holoplane": 20.0,
    "RankRegularLine": 10.0,
    "PureRotation": 20.0,
    "Circular": 400.0,
    "Square": 400.0,
    "Linear": 400.0,
    "OutwardLooking": 3000.0,
}

# ---------- benchmark ----------
BENCH_TRIALS = 200
BENCH_PERTURB = 0.05
ORACLE_CHECK_RATE = 0.01
CSV_DIGITS = 12
SCENE_DIGITS = 15


@dataclass(frozen=True)
class LMConfig:
    damping_init: float = DAMPING_INIT
    damping_up: float = DAMPING_UP
    damping_down: float = DAMPING_DOWN
    epsilon: float = LM_EPSILON
    k_max: int = K_MAX_TWO_VIEW
    fd_step: float = FD_STEP
    huber_scale: Optional[float] = None
    damping_max: float = DAMPING_MAX
    step_tol: float = STEP_TOL
    reortho_every: int = REORTHO_EVERY

    def __post_init__(self):
        if min(self.damping_init, self.epsilon, self.fd_step, self.k_max, self.reortho_every) <= 0:
            raise DataError("LM settings must be positive")
        if not self.damping_up > 1.0 > self.damping_down > 0.0:
            raise DataError("LM damping factors need damping_up > 1 > damping_down > 0")
        if self.huber_scale is not None and self.huber_scale <= 0:
            raise DataError("huber_scale must be positive")

    @classmethod
    def two_view(cls, **overrides) -> "LMConfig":
        return cls(k_max=K_MAX_TWO_VIEW, **overrides)

    @classmethod
    def multi_view(cls, **overrides) -> "LMConfig":
        return cls(k_max=K_MAX_MULTI_VIEW, **overrides)

    def with_settings(self, settings: Mapping[str, Any]) -> "LMConfig":
        known = {k: v for k, v in settings.items() if k in self.__dataclass_fields__ and v is not None}
        return replace(self, **known)


# ---------- key=value files ----------
def _coerce(raw: str, default: Any, where: str) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in {"1", "true", "yes", "on"}:
                return True
            if low in {"0", "false", "no", "off"}:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, (list, tuple)):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
                kind = type(default[0])
                return tuple(kind(s) for s in items)
            return tuple(items)
        if default is None:
            if text.lower() in {"", "none"}:
                return None
            try:
                return float(text)
            except ValueError:
                return text
    except ValueError:
        raise DataError(f"{where}: cannot read {text!r} as {type(default).__name__}") from None
    return text


def read_config(path, defaults: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Parse a `key = value` file. Only keys present in `defaults` are accepted;
    values are coerced to the type of the matching default.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise DataError(f"{path.name}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in s.split("=", 1))
        key = key.replace("-", "_")
        if key not in defaults:
            raise DataError(f"{path.name}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(raw, defaults[key], f"{path.name}:{lineno}")
    return values


def merge_settings(
    defaults: Mapping[str, Any],
    file_values: Optional[Mapping[str, Any]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
) -> Dict[str, Any]:
    merged = dict(defaults)
    for layer in (file_values or {}, flag_values or {}):
        for key, value in layer.items():
            if value is not None and key in merged:
                merged[key] = value
    return merged
