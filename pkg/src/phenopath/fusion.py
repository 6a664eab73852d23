"""Merge repeated static and mobile readings of a plot into one observation."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import InvalidInputError
from .gp import NoiseModel


class Kind(str, enum.Enum):
    STATIC = "static"
    MOBILE = "mobile"


@dataclass(frozen=True)
class Measurement:
    plot_id: int
    value: float
    kind: Kind

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidInputError(f"non-finite reading for plot {self.plot_id}")
        object.__setattr__(self, "kind", Kind(self.kind))


@dataclass(frozen=True)
class FusedObservation:
    plot_id: int
    value: float
    variance: float
    n_mobile: int
    has_static: bool
    n_static: int = 0


def average_mobile(readings, noise: NoiseModel, scaled: bool = False) -> tuple[float, float]:
    """Mean of the mobile readings for one plot.

    The variance stays at sigma_m^2 regardless of the count unless ``scaled``
    is set, in which case it is divided by the number of readings.
    """
    readings = list(readings)
    if not readings:
        raise InvalidInputError("cannot average an empty list of mobile readings")
    n = len(readings)
    value = math.fsum(readings) / n
    variance = noise.mobile_var / n if scaled else noise.mobile_var
    return value, variance


def fuse(static_value: float, mobile_value: float, noise: NoiseModel,
         static_var: float | None = None, mobile_var: float | None = None) -> tuple[float, float]:
    """Precision-weighted product of a static and a mobile Gaussian reading."""
    if not (math.isfinite(static_value) and math.isfinite(mobile_value)):
        raise InvalidInputError("fusion inputs must be finite")
    s2 = noise.static_var if static_var is None else static_var
    m2 = noise.mobile_var if mobile_var is None else mobile_var
    value = (static_value / s2 + mobile_value / m2) / (1.0 / s2 + 1.0 / m2)
    variance = s2 * m2 / (s2 + m2)
    return value, variance


def ingest(log: Iterable[Measurement], noise: NoiseModel, valid_plots=None,
           mobile_avg_variance: str = "fixed") -> dict[int, FusedObservation]:
    """Collapse a measurement log into one observation per plot.

    Mobile readings are averaged first, repeated static readings likewise
    (variance kept at sigma_s^2), then the two are fused when both exist.
    The result does not depend on the order of ``log``.
    """
    if mobile_avg_variance not in ("fixed", "scaled"):
        raise InvalidInputError(f"unknown mobile averaging mode {mobile_avg_variance!r}")
    scaled = mobile_avg_variance == "scaled"
    valid = None if valid_plots is None else set(valid_plots)
    static: Mapping[int, list[float]] = defaultdict(list)
    mobile: Mapping[int, list[float]] = defaultdict(list)
    for m in log:
        if valid is not None and m.plot_id not in valid:
            raise InvalidInputError(f"measurement for unknown plot {m.plot_id}")
        (static if m.kind is Kind.STATIC else mobile)[m.plot_id].append(m.value)

    out = {}
    for pid in sorted(set(static) | set(mobile)):
        s_vals = static.get(pid, [])
        m_vals = mobile.get(pid, [])
        if m_vals:
            m_value, m_var = average_mobile(m_vals, noise, scaled)
        if s_vals:
            s_value = math.fsum(s_vals) / len(s_vals)
            if m_vals:
                value, var = fuse(s_value, m_value, noise, noise.static_var, m_var)
            else:
                value, var = s_value, noise.static_var
        else:
            value, var = m_value, m_var
        out[pid] = FusedObservation(pid, value, var, len(m_vals), bool(s_vals), len(s_vals))
    return out
