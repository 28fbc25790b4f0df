"""Nonlinearities for ``y_t + f(y)_x = y_xx + r(y)`` and a global-existence screen."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import integrate

ScalarMap = Callable[[np.ndarray], np.ndarray]

__all__ = ["ModelSpec", "make_model", "check_global_existence", "derivative_slopes"]


def _zero(y):
    return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """Flux ``f``, reaction ``r`` and their first two derivatives.

    All maps act elementwise on arrays. Instances are immutable and can be
    shared between solvers.
    """

    f: ScalarMap
    df: ScalarMap
    d2f: ScalarMap
    r: ScalarMap
    dr: ScalarMap
    d2r: ScalarMap
    name: str = "custom"
    globally_well_posed: bool = True
    params: tuple = ()

    @property
    def is_linear(self) -> bool:
        """True when f'' and r'' vanish on a probe set (forward map is linear)."""
        probe = np.linspace(-10.0, 10.0, 41)
        return bool(
            np.all(self.d2f(probe) == 0.0) and np.all(self.d2r(probe) == 0.0)
        )


def make_model(kind: str, **params) -> ModelSpec:
    """Build one of the canonical models.

    ``heat``: f = r = 0. ``burgers``: f(y) = nu * y**2 / 2 (nu defaults to 1).
    ``bounded_reaction``: r(y) = c y**2 / (1 + y**2). ``linear``: f(y) = a y,
    r(y) = b y. ``custom``: pass all six maps as keyword arguments.
    """
    if kind == "heat":
        return ModelSpec(_zero, _zero, _zero, _zero, _zero, _zero, name="heat")
    if kind == "burgers":
        nu = float(params.get("nu", 1.0))
        return ModelSpec(
            f=lambda y: 0.5 * nu * np.asarray(y, dtype=float) ** 2,
            df=lambda y: nu * np.asarray(y, dtype=float),
            d2f=lambda y: np.full_like(np.asarray(y, dtype=float), nu),
            r=_zero,
            dr=_zero,
            d2r=_zero,
            name="burgers",
            params=(("nu", nu),),
        )
    if kind == "bounded_reaction":
        c = float(params.get("c", 1.0))

        def r(y):
            y = np.asarray(y, dtype=float)
            return c * y**2 / (1.0 + y**2)

        def dr(y):
            y = np.asarray(y, dtype=float)
            return 2.0 * c * y / (1.0 + y**2) ** 2

        def d2r(y):
            y = np.asarray(y, dtype=float)
            return 2.0 * c * (1.0 - 3.0 * y**2) / (1.0 + y**2) ** 3

        return ModelSpec(
            _zero, _zero, _zero, r, dr, d2r,
            name="bounded_reaction", params=(("c", c),),
        )
    if kind == "linear":
        a = float(params.get("a", 0.0))
        b = float(params.get("b", 0.0))
        return ModelSpec(
            f=lambda y: a * np.asarray(y, dtype=float),
            df=lambda y: np.full_like(np.asarray(y, dtype=float), a),
            d2f=_zero,
            r=lambda y: b * np.asarray(y, dtype=float),
            dr=lambda y: np.full_like(np.asarray(y, dtype=float), b),
            d2r=_zero,
            name="linear",
            params=(("a", a), ("b", b)),
        )
    if kind == "custom":
        required = ("f", "df", "d2f", "r", "dr", "d2r")
        missing = [k for k in required if k not in params]
        if missing:
            raise ValueError(f"custom model is missing maps: {', '.join(missing)}")
        return ModelSpec(
            **{k: params[k] for k in required},
            name=params.get("name", "custom"),
            globally_well_posed=params.get("globally_well_posed", True),
        )
    raise ValueError(f"unknown model kind {kind!r}")


def derivative_slopes(m: ModelSpec, y: np.ndarray, hs=(1e-1, 5e-2, 2.5e-2, 1.25e-2)):
    """Log-log slopes of the central-difference error for each derivative pair.

    Pairs whose error is at rounding level for every ``h`` (e.g. polynomial
    maps, where the central difference is exact) report ``inf``.
    """
    y = np.asarray(y, dtype=float)
    pairs = {"df": (m.f, m.df), "d2f": (m.df, m.d2f), "dr": (m.r, m.dr), "d2r": (m.dr, m.d2r)}
    out = {}
    for key, (fn, dfn) in pairs.items():
        errs = np.array(
            [np.max(np.abs(dfn(y) - (fn(y + h) - fn(y - h)) / (2 * h))) for h in hs]
        )
        scale = 1.0 + np.max(np.abs(dfn(y)))
        if np.all(errs <= 1e-9 * scale):
            out[key] = np.inf
            continue
        out[key] = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return out


def check_global_existence(m: ModelSpec, y_max: float = 10.0, n_doublings: int = 8) -> bool:
    """Heuristic screen for divergence of the integral of ``1/(|r|+1)`` on both half-lines.

    The integral is accumulated over ``[Y_k, Y_{k+1}]`` with ``Y_k = y_max 2**k``.
    Successive increments of a divergent integral do not shrink (ratio near or
    above 1 for ``1/y``-type or slower decay), while for ``1/y**p`` with ``p > 1``
    they contract geometrically. An indeterminate ratio returns False and warns.
    """
    if y_max <= 0:
        raise ValueError("y_max must be positive")

    def integrand(y):
        return 1.0 / (abs(float(m.r(np.array(y)))) + 1.0)

    verdicts = []
    for sign in (1.0, -1.0):
        edges = sign * y_max * 2.0 ** np.arange(n_doublings + 1)
        incs = []
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(integrand, min(a, b), max(a, b), limit=200)
            incs.append(val)
        ratio = incs[-1] / incs[-2] if incs[-2] > 0 else 0.0
        if ratio >= 0.9:
            verdicts.append(True)
        elif ratio <= 0.75:
            verdicts.append(False)
        else:
            warnings.warn(
                f"growth of the existence integral is indeterminate (increment ratio {ratio:.3f})",
                RuntimeWarning,
                stacklevel=2,
            )
            verdicts.append(False)
    return all(verdicts)


def with_existence_check(m: ModelSpec, y_max: float = 10.0) -> ModelSpec:
    """Copy of ``m`` with ``globally_well_posed`` set by :func:`check_global_existence`."""
    return replace(m, globally_well_posed=check_global_existence(m, y_max))
