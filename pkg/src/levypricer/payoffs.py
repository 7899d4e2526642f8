"""Payoff catalog with closed-form local exercise-benefit rates.

Each catalog entry knows its payoff psi, the growth exponent p of the bound
psi(x) <= C (1 + |x|^p), and the closed form of Psi^- = (r psi - L_BS psi)^+
on {psi > 0}, the rate at which early exercise locally beats holding.  A
finite-difference check is provided so every closed form can be verified
against a direct evaluation of the generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import KinkTooClose, TieBreak
from .model import GaussianPart, Rates

MIN_PUT = "min_put"
INDEX_PUT = "index_put"
SPREAD_PUT = "spread_put"
INDEX_CALL = "index_call"
SPREAD_CALL = "spread_call"
MAX_CALL = "max_call"
MULTI_STRIKE = "multi_strike"
POWER_PRODUCT = "power_product"
CONSTANT = "constant"  # test-only payoff, not part of the public catalog

CATALOG = (MIN_PUT, INDEX_PUT, SPREAD_PUT, INDEX_CALL, SPREAD_CALL,
           MAX_CALL, MULTI_STRIKE, POWER_PRODUCT)

_PUT_KINDS = (MIN_PUT, INDEX_PUT, SPREAD_PUT)


@dataclass(frozen=True)
class PsiField:
    """Closed-form evaluator of Psi^- together with its validity region."""

    payoff: "Payoff"
    rates: Rates
    gaussian: GaussianPart
    region: str = "psi > 0"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.payoff.psi_minus(x, self.rates, self.gaussian)


@dataclass(frozen=True)
class Payoff:
    kind: str
    dim: int
    strike: np.ndarray | float | None = None
    weights: np.ndarray | None = None
    gamma_pow: float | None = None
    const: float | None = None

    def __post_init__(self):
        if self.kind not in CATALOG + (CONSTANT,):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.weights is not None:
            w = np.atleast_1d(np.asarray(self.weights, dtype=float))
            if w.shape[0] != self.dim:
                raise ValueError("weights length must match dim")
            if self.kind == INDEX_PUT and np.any(w < 0):
                raise ValueError("index put weights must be nonnegative")
            object.__setattr__(self, "weights", w)
        if self.kind == MULTI_STRIKE:
            k = np.atleast_1d(np.asarray(self.strike, dtype=float))
            if k.shape[0] != self.dim:
                raise ValueError("multi-strike needs one strike per asset")
            object.__setattr__(self, "strike", k)
        elif self.strike is not None:
            object.__setattr__(self, "strike", float(self.strike))
        if self.kind == POWER_PRODUCT and (self.gamma_pow is None or self.gamma_pow <= 1):
            raise ValueError("power-product exponent must exceed 1")

    # ------------------------------------------------------------------ #
    # constructors
    # ------------------------------------------------------------------ #

    @classmethod
    def min_put(cls, K: float, dim: int) -> "Payoff":
        return cls(kind=MIN_PUT, dim=dim, strike=K)

    @classmethod
    def index_put(cls, K: float, weights, dim: int) -> "Payoff":
        return cls(kind=INDEX_PUT, dim=dim, strike=K, weights=weights)

    @classmethod
    def spread_put(cls, K: float, weights, dim: int) -> "Payoff":
        return cls(kind=SPREAD_PUT, dim=dim, strike=K, weights=weights)

    @classmethod
    def index_call(cls, K: float, weights, dim: int) -> "Payoff":
        return cls(kind=INDEX_CALL, dim=dim, strike=K, weights=weights)

    @classmethod
    def spread_call(cls, K: float, weights, dim: int) -> "Payoff":
        return cls(kind=SPREAD_CALL, dim=dim, strike=K, weights=weights)

    @classmethod
    def max_call(cls, K: float, dim: int) -> "Payoff":
        return cls(kind=MAX_CALL, dim=dim, strike=K)

    @classmethod
    def multi_strike(cls, strikes, dim: int) -> "Payoff":
        return cls(kind=MULTI_STRIKE, dim=dim, strike=strikes)

    @classmethod
    def power_product(cls, K: float, gamma: float, dim: int) -> "Payoff":
        return cls(kind=POWER_PRODUCT, dim=dim, strike=K, gamma_pow=gamma)

    @classmethod
    def constant(cls, c: float, dim: int) -> "Payoff":
        return cls(kind=CONSTANT, dim=dim, const=float(c))

    @property
    def is_put(self) -> bool:
        return self.kind in _PUT_KINDS

    # ------------------------------------------------------------------ #
    # psi and friends
    # ------------------------------------------------------------------ #

    def evaluate(self, x) -> np.ndarray:
        """psi(x); x has shape (..., dim), result shape (...)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        x = np.atleast_2d(x)
        k = self.kind
        if k == MIN_PUT:
            hinge = np.maximum(self.strike - x.min(axis=-1), 0.0)
            out = np.where(np.all(x >= 0, axis=-1), hinge, self.strike)
        elif k == INDEX_PUT:
            # only nonnegative coordinates count; reduces to the orthant
            # branches of the two-asset formulas
            out = np.maximum(self.strike - np.sum(self.weights * np.clip(x, 0.0, None), axis=-1), 0.0)
        elif k in (SPREAD_PUT,):
            out = np.maximum(self.strike - x @ self.weights, 0.0)
        elif k in (INDEX_CALL, SPREAD_CALL):
            out = np.maximum(x @ self.weights - self.strike, 0.0)
        elif k == MAX_CALL:
            out = np.maximum(x.max(axis=-1) - self.strike, 0.0)
        elif k == MULTI_STRIKE:
            out = np.maximum((x - self.strike).max(axis=-1), 0.0)
        elif k == POWER_PRODUCT:
            out = np.maximum(np.abs(np.prod(x, axis=-1)) ** self.gamma_pow - self.strike, 0.0)
        else:  # CONSTANT
            out = np.full(x.shape[:-1], self.const)
        return out[0] if scalar else out

    def log_transform(self, z) -> np.ndarray:
        """psi-tilde(z) = psi(e^{z_1}, ..., e^{z_d}), the positive-orthant branch."""
        return self.evaluate(np.exp(np.asarray(z, dtype=float)))

    def growth_exponent(self) -> float:
        if self.kind in (MIN_PUT, INDEX_PUT, CONSTANT):
            return 0.0
        if self.kind == POWER_PRODUCT:
            return self.gamma_pow * self.dim
        return 1.0

    def tie_mask(self, x) -> np.ndarray:
        """True where the active-index set of a min/max payoff is ambiguous."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim < 2 or self.kind not in (MIN_PUT, MAX_CALL, MULTI_STRIKE):
            return np.zeros(x.shape[:-1], dtype=bool)
        v = x - self.strike if self.kind == MULTI_STRIKE else x
        srt = np.sort(v, axis=-1)
        if self.kind == MIN_PUT:
            return srt[..., 0] == srt[..., 1]
        return srt[..., -1] == srt[..., -2]

    def psi_minus(self, x, rates: Rates, gaussian: GaussianPart,
                  printed_power_coeff: bool = False) -> np.ndarray:
        """Closed-form Psi^-(x) on {psi > 0}; zero elsewhere.

        The exercise set lives inside {psi > 0}, so the premium integrand
        never samples the formula off that set.  Raises TieBreak when the
        active-index set is ambiguous (x_i == x_j at an argmin/argmax with
        psi > 0); callers are expected to perturb or drop such points.
        """
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        x = np.atleast_2d(x)
        psi = np.atleast_1d(self.evaluate(x))
        pos = psi > 0
        r = rates.r
        delta = rates.delta
        k = self.kind

        if k in (MIN_PUT, MAX_CALL, MULTI_STRIKE):
            ties = self.tie_mask(x) & pos
            if np.any(ties):
                raise TieBreak(f"{int(ties.sum())} query point(s) on a tie set of {k}")

        if k == MIN_PUT:
            idx = np.argmin(x, axis=-1)
            active = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
            raw = r * self.strike - delta[idx] * active
        elif k in (INDEX_PUT, SPREAD_PUT):
            raw = r * self.strike - np.sum(self.weights * delta * x, axis=-1)
        elif k in (INDEX_CALL, SPREAD_CALL):
            raw = np.sum(self.weights * delta * x, axis=-1) - r * self.strike
        elif k == MAX_CALL:
            idx = np.argmax(x, axis=-1)
            active = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
            raw = delta[idx] * active - r * self.strike
        elif k == MULTI_STRIKE:
            idx = np.argmax(x - self.strike, axis=-1)
            active = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
            raw = delta[idx] * active - r * np.asarray(self.strike)[idx]
        elif k == POWER_PRODUCT:
            raw = _power_rate(self, rates, gaussian, printed_power_coeff) \
                * np.prod(x, axis=-1) ** self.gamma_pow - r * self.strike
        else:  # CONSTANT: psi == c, L_BS psi == 0, Psi = -r c
            raw = np.full(psi.shape, r * self.const)

        out = np.where(pos, np.maximum(raw, 0.0), 0.0)
        return out[0] if scalar else out

    def psi_field(self, rates: Rates, gaussian: GaussianPart) -> PsiField:
        return PsiField(payoff=self, rates=rates, gaussian=gaussian)

    # ------------------------------------------------------------------ #
    # smoothness and fd verification
    # ------------------------------------------------------------------ #

    def smoothness_margin(self, x) -> float:
        """Distance (price units) from x to the nearest kink or tie set."""
        x = np.asarray(x, dtype=float)
        k = self.kind
        margins = [np.abs(x).min()] if k in (MIN_PUT, INDEX_PUT) else []
        if k == MIN_PUT:
            margins.append(abs(self.strike - x.min()))
            margins += [_pair_gap(x)] if self.dim > 1 else []
        elif k in (INDEX_PUT, SPREAD_PUT, INDEX_CALL, SPREAD_CALL):
            wl = np.linalg.norm(self.weights)
            margins.append(abs(self.strike - x @ self.weights) / max(wl, 1e-300))
        elif k == MAX_CALL:
            margins.append(abs(x.max() - self.strike))
            margins += [_pair_gap(x)] if self.dim > 1 else []
        elif k == MULTI_STRIKE:
            v = x - self.strike
            margins.append(abs(v.max()))
            margins += [_pair_gap(v)] if self.dim > 1 else []
        elif k == POWER_PRODUCT:
            f = np.abs(np.prod(x)) ** self.gamma_pow
            grad = self.gamma_pow * f / np.maximum(np.abs(x), 1e-300)
            margins.append(abs(f - self.strike) / max(np.linalg.norm(grad), 1e-300))
            margins.append(np.abs(x).min())
        else:
            return np.inf
        return float(min(margins))

    def psi_minus_fd_check(self, x, rates: Rates, gaussian: GaussianPart,
                           h: float = 1e-3, printed_power_coeff: bool = False):
        """(closed form, finite-difference value) of Psi^- at a smooth point.

        The fd value applies central differences of step h to psi and
        assembles (r psi - L_BS psi)^+ directly.  Raises KinkTooClose when x
        is within 2h of a kink or tie set.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.smoothness_margin(x) <= 2.0 * h:
            raise KinkTooClose(f"margin {self.smoothness_margin(x):.3g} <= 2h = {2 * h:.3g}")
        d = self.dim
        a = gaussian.a
        psi0 = float(self.evaluate(x))
        grad = np.empty(d)
        hess = np.empty((d, d))
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            up, dn = float(self.evaluate(x + ei)), float(self.evaluate(x - ei))
            grad[i] = (up - dn) / (2.0 * h)
            hess[i, i] = (up - 2.0 * psi0 + dn) / (h * h)
        for i in range(d):
            for j in range(i + 1, d):
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i] = h
                ej[j] = h
                cross = (float(self.evaluate(x + ei + ej)) - float(self.evaluate(x + ei - ej))
                         - float(self.evaluate(x - ei + ej)) + float(self.evaluate(x - ei - ej))) / (4.0 * h * h)
                hess[i, j] = hess[j, i] = cross
        lbs = 0.5 * np.einsum("ij,i,j,ij->", a, x, x, hess) \
            + np.sum((rates.r - rates.delta) * x * grad)
        fd_value = max(-(-rates.r * psi0 + lbs), 0.0)
        closed = float(self.psi_minus(x, rates, gaussian, printed_power_coeff=printed_power_coeff))
        return closed, fd_value

    # ------------------------------------------------------------------ #
    # JSON interface
    # ------------------------------------------------------------------ #

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == MULTI_STRIKE:
            out["K"] = np.asarray(self.strike).tolist()
        elif self.strike is not None:
            out["K"] = self.strike
        if self.weights is not None:
            out["w"] = self.weights.tolist()
        if self.gamma_pow is not None:
            out["gamma"] = self.gamma_pow
        if self.const is not None:
            out["c"] = self.const
        return out


def _pair_gap(v: np.ndarray) -> float:
    srt = np.sort(v)
    return float(np.diff(srt).min())


def _power_rate(payoff: Payoff, rates: Rates, gaussian: GaussianPart, printed: bool) -> float:
    # coefficient of f(x) = (x_1 ... x_d)^gamma in -Psi; the printed variant
    # drops the 1/2 factors and is kept only for the fd adjudication
    g = payoff.gamma_pow
    a = gaussian.a
    r = rates.r
    if printed:
        return r - g * np.sum(r - rates.delta - np.diag(a)) - g * g * a.sum()
    return r - g * np.sum(r - rates.delta - 0.5 * np.diag(a)) - 0.5 * g * g * a.sum()


def payoff_from_dict(spec: dict) -> Payoff:
    kind = spec["kind"].lower()
    dim = int(spec["dim"])
    if kind == MIN_PUT:
        return Payoff.min_put(spec["K"], dim)
    if kind == INDEX_PUT:
        return Payoff.index_put(spec["K"], spec["w"], dim)
    if kind == SPREAD_PUT:
        return Payoff.spread_put(spec["K"], spec["w"], dim)
    if kind == INDEX_CALL:
        return Payoff.index_call(spec["K"], spec["w"], dim)
    if kind == SPREAD_CALL:
        return Payoff.spread_call(spec["K"], spec["w"], dim)
    if kind == MAX_CALL:
        return Payoff.max_call(spec["K"], dim)
    if kind == MULTI_STRIKE:
        return Payoff.multi_strike(spec["K"], dim)
    if kind == POWER_PRODUCT:
        return Payoff.power_product(spec["K"], spec["gamma"], dim)
    if kind == CONSTANT:
        return Payoff.constant(spec["c"], dim)
    raise ValueError(f"unknown payoff kind {kind!r}")


def load_payoff(path) -> Payoff:
    with open(path) as fh:
        return payoff_from_dict(json.load(fh))
