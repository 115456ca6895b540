"""Per-coordinate bijections between bounded domains and unbounded space.

These are the Stan-style transforms: ``log(x - a)`` for a lower bound,
``log(b - x)`` for an upper bound and the scaled logit for a two-sided
interval.  Training on transformed data and running MCMC chains on the
transformed space both go through here, as does the log-Jacobian term that
converts densities back to original coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

__all__ = [
    "Domain",
    "unbounded",
    "lower_bounded",
    "upper_bounded",
    "two_sided",
    "to_unbounded",
    "from_unbounded",
    "log_abs_det_jacobian",
    "boundary_nudge_count",
]

_UNBOUNDED = "unbounded"
_LOWER = "lower"
_UPPER = "upper"
_TWO_SIDED = "two_sided"

_nudge_count = 0


def boundary_nudge_count() -> int:
    """Number of boundary samples nudged inward so far (process-wide)."""
    return _nudge_count


@dataclass(frozen=True)
class Domain:
    kind: str
    a: float = np.nan
    b: float = np.nan

    def __post_init__(self):
        if self.kind == _TWO_SIDED and not self.a < self.b:
            raise ValueError(f"need a < b, got ({self.a}, {self.b})")

    def contains(self, x: float) -> bool:
        if self.kind == _UNBOUNDED:
            return np.isfinite(x)
        if self.kind == _LOWER:
            return x > self.a
        if self.kind == _UPPER:
            return x < self.b
        return self.a < x < self.b

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if not np.isnan(self.a):
            d["a"] = self.a
        if not np.isnan(self.b):
            d["b"] = self.b
        return d

    @staticmethod
    def from_dict(d: dict) -> "Domain":
        return Domain(d["kind"], d.get("a", np.nan), d.get("b", np.nan))


def unbounded() -> Domain:
    return Domain(_UNBOUNDED)


def lower_bounded(a: float) -> Domain:
    return Domain(_LOWER, a=float(a))


def upper_bounded(b: float) -> Domain:
    return Domain(_UPPER, b=float(b))


def two_sided(a: float, b: float) -> Domain:
    return Domain(_TWO_SIDED, a=float(a), b=float(b))


def _nudge(x, lo, hi, width, idx):
    """Move values sitting exactly on a boundary into the interior."""
    global _nudge_count
    eps = 1e-12 * width
    on_lo = x == lo
    on_hi = x == hi
    n = int(np.count_nonzero(on_lo) + np.count_nonzero(on_hi))
    if n:
        _nudge_count += n
        log.warning("nudged %d boundary value(s) inward on coordinate %d", n, idx)
        x = np.where(on_lo, lo + eps, x)
        x = np.where(on_hi, hi - eps, x)
    return x


def _columns(x, domains):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = x[None, :] if squeeze else x
    if x2.shape[-1] != len(domains):
        raise ValueError(f"{x2.shape[-1]} coordinates but {len(domains)} domains")
    return x2, squeeze


def to_unbounded(x, domains) -> np.ndarray:
    """Map ``x`` coordinate-wise to unbounded space.

    Values strictly outside their domain raise with the coordinate index;
    values exactly on a boundary are nudged inward (and counted).
    """
    x2, squeeze = _columns(x, domains)
    out = np.empty_like(x2)
    for i, dom in enumerate(domains):
        col = x2[:, i]
        if dom.kind == _UNBOUNDED:
            out[:, i] = col
            continue
        if dom.kind == _LOWER:
            col = _nudge(col, dom.a, np.inf, max(1.0, abs(dom.a)), i)
            if np.any(col < dom.a):
                raise ValueError(f"coordinate {i} below lower bound {dom.a}")
            out[:, i] = np.log(col - dom.a)
        elif dom.kind == _UPPER:
            col = _nudge(col, -np.inf, dom.b, max(1.0, abs(dom.b)), i)
            if np.any(col > dom.b):
                raise ValueError(f"coordinate {i} above upper bound {dom.b}")
            out[:, i] = np.log(dom.b - col)
        else:
            col = _nudge(col, dom.a, dom.b, dom.b - dom.a, i)
            if np.any((col < dom.a) | (col > dom.b)):
                raise ValueError(f"coordinate {i} outside ({dom.a}, {dom.b})")
            # logit((x-a)/(b-a)) in the form that stays finite one ulp
            # inside the boundary
            out[:, i] = np.log(col - dom.a) - np.log(dom.b - col)
    return out[0] if squeeze else out


def from_unbounded(y, domains) -> np.ndarray:
    """Exact inverse of :func:`to_unbounded`, clamped to the open interior.

    Saturated values (huge ``|y|``) land one representable float inside the
    boundary rather than on it, so round trips stay in-domain.
    """
    y2, squeeze = _columns(y, domains)
    out = np.empty_like(y2)
    for i, dom in enumerate(domains):
        col = y2[:, i]
        if dom.kind == _UNBOUNDED:
            out[:, i] = col
            continue
        if dom.kind == _LOWER:
            v = dom.a + np.exp(col)
            v = np.where(v <= dom.a, np.nextafter(dom.a, np.inf), v)
            v = np.where(np.isposinf(v), np.finfo(np.float64).max, v)
        elif dom.kind == _UPPER:
            v = dom.b - np.exp(col)
            v = np.where(v >= dom.b, np.nextafter(dom.b, -np.inf), v)
            v = np.where(np.isneginf(v), np.finfo(np.float64).min, v)
        else:
            v = dom.a + (dom.b - dom.a) * expit(col)
            v = np.where(v <= dom.a, np.nextafter(dom.a, dom.b), v)
            v = np.where(v >= dom.b, np.nextafter(dom.b, dom.a), v)
        out[:, i] = v
    return out[0] if squeeze else out


def log_abs_det_jacobian(x, domains) -> np.ndarray:
    """``sum_i log |dt_i/dx_i|`` of the to-unbounded map, per sample."""
    x2, squeeze = _columns(x, domains)
    total = np.zeros(x2.shape[0])
    for i, dom in enumerate(domains):
        col = x2[:, i]
        if dom.kind == _UNBOUNDED:
            continue
        if dom.kind == _LOWER:
            if np.any(col <= dom.a):
                raise ValueError(f"coordinate {i} not above lower bound {dom.a}")
            total -= np.log(col - dom.a)
        elif dom.kind == _UPPER:
            if np.any(col >= dom.b):
                raise ValueError(f"coordinate {i} not below upper bound {dom.b}")
            total -= np.log(dom.b - col)
        else:
            if np.any((col <= dom.a) | (col >= dom.b)):
                raise ValueError(f"coordinate {i} not inside ({dom.a}, {dom.b})")
            total -= np.log((col - dom.a) * (dom.b - col) / (dom.b - dom.a))
    return total[0] if squeeze else total


def iid_domains(domain: Domain, d: int) -> list[Domain]:
    return [domain] * d
