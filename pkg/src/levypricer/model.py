"""Risk-neutral exponential Levy market model.

Prices follow x_i * exp((r - delta_i) t + xi_t^i) with xi a d-dimensional
Levy process made of a nondegenerate Gaussian part and finite-activity
compound-Poisson jumps.  The module owns drift calibration (so discounted
dividend-adjusted prices are martingales), integrability validation for the
moment conditions the pricing theory needs, and exact-in-law path simulation.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InvalidDomain, NonIntegrableJump

# Paths are simulated in fixed-size blocks, each with its own counter-based
# substream, so results are bitwise identical for any thread count.
_PATH_BLOCK = 8192

HOLDS_ANALYTIC = "holds analytically"
HOLDS_QUADRATURE = "holds by quadrature"
FAILS = "fails"


def _as_matrix(a) -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    return m


# --------------------------------------------------------------------------- #
# Jump laws
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class MertonNormal:
    """Multivariate normal jump sizes: J ~ N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", _as_matrix(self.cov))
        if self.cov.shape[0] != self.mean.shape[0]:
            raise ValueError("mean/cov dimension mismatch")
        eig = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        if eig.min() < -1e-12:
            raise ValueError("jump covariance must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def exp_moment(self, q: float, i: int) -> float:
        # Gaussian mgf, finite for every exponent.
        return float(np.exp(q * self.mean[i] + 0.5 * q * q * self.cov[i, i]))

    def component_radius(self, i: int, tail: float) -> float:
        z = norm.isf(tail / 2.0)
        return abs(self.mean[i]) + z * np.sqrt(max(self.cov[i, i], 0.0))

    def component_cdf(self, y: np.ndarray, i: int) -> np.ndarray:
        sd = np.sqrt(max(self.cov[i, i], 1e-300))
        return norm.cdf((y - self.mean[i]) / sd)

    @property
    def components_independent(self) -> bool:
        off = self.cov - np.diag(np.diag(self.cov))
        return not np.any(off)

    def density(self, pts: np.ndarray) -> np.ndarray:
        d = self.dim
        pts = pts.reshape(-1, d)
        cov = self.cov + 1e-300 * np.eye(d)
        chol = np.linalg.cholesky(cov)
        sol = np.linalg.solve(chol, (pts - self.mean).T)
        quad = np.sum(sol * sol, axis=0)
        det = np.prod(np.diag(chol)) ** 2
        return np.exp(-0.5 * quad) / np.sqrt((2.0 * np.pi) ** d * det)

    def sample_sums(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        # Sum of N iid normals is N(N*mean, N*cov); exact without drawing
        # individual jumps.
        n = counts.shape[0]
        g = rng.standard_normal((n, self.dim))
        chol = np.linalg.cholesky(self.cov + 1e-300 * np.eye(self.dim))
        return counts[:, None] * self.mean + np.sqrt(counts)[:, None] * (g @ chol.T)


@dataclass(frozen=True)
class KouDoubleExponential:
    """Independent double-exponential components.

    Component i jumps up with probability p_up[i] (Exp(eta_plus[i]) magnitude)
    and down otherwise (Exp(eta_minus[i]) magnitude).  eta_plus > 1 is required
    so that E[e^{J_i}] is finite.
    """

    p_up: np.ndarray
    eta_plus: np.ndarray
    eta_minus: np.ndarray

    def __post_init__(self):
        for name in ("p_up", "eta_plus", "eta_minus"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (self.p_up.shape == self.eta_plus.shape == self.eta_minus.shape):
            raise ValueError("Kou parameter shapes disagree")
        if np.any((self.p_up < 0) | (self.p_up > 1)):
            raise ValueError("p_up must lie in [0, 1]")
        if np.any(self.eta_minus <= 0):
            raise ValueError("eta_minus must be positive")
        if np.any(self.eta_plus <= 1):
            raise ValueError("eta_plus must exceed 1 (first exponential moment)")

    @property
    def dim(self) -> int:
        return self.p_up.shape[0]

    def exp_moment(self, q: float, i: int) -> float:
        ep, em, p = self.eta_plus[i], self.eta_minus[i], self.p_up[i]
        if q >= ep or q <= -em:
            raise NonIntegrableJump(
                f"Kou component {i}: exponent {q} outside (-eta_minus, eta_plus) = ({-em}, {ep})"
            )
        return float(p * ep / (ep - q) + (1.0 - p) * em / (em + q))

    def component_radius(self, i: int, tail: float) -> float:
        up = np.log(max(self.p_up[i], 1e-300) / tail) / self.eta_plus[i]
        dn = np.log(max(1.0 - self.p_up[i], 1e-300) / tail) / self.eta_minus[i]
        return max(up, dn, 0.0)

    def component_cdf(self, y: np.ndarray, i: int) -> np.ndarray:
        ep, em, p = self.eta_plus[i], self.eta_minus[i], self.p_up[i]
        neg = (1.0 - p) * np.exp(em * np.clip(y, None, 0.0))
        pos = (1.0 - p) + p * (1.0 - np.exp(-ep * np.clip(y, 0.0, None)))
        return np.where(y < 0, neg, pos)

    @property
    def components_independent(self) -> bool:
        return True

    def _density_1d(self, y: np.ndarray, i: int) -> np.ndarray:
        ep, em, p = self.eta_plus[i], self.eta_minus[i], self.p_up[i]
        up = p * ep * np.exp(-ep * np.clip(y, 0.0, None))
        dn = (1.0 - p) * em * np.exp(em * np.clip(y, None, 0.0))
        out = np.where(y > 0, up, dn)
        # density jumps at 0; the midpoint rule gets the average of the limits
        return np.where(y == 0, 0.5 * (p * ep + (1.0 - p) * em), out)

    def density(self, pts: np.ndarray) -> np.ndarray:
        pts = pts.reshape(-1, self.dim)
        out = np.ones(pts.shape[0])
        for i in range(self.dim):
            out *= self._density_1d(pts[:, i], i)
        return out

    def sample_sums(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        n = counts.shape[0]
        total = int(counts.sum())
        out = np.zeros((n, self.dim))
        if total == 0:
            return out
        owner = np.repeat(np.arange(n), counts)
        for i in range(self.dim):
            sign_up = rng.random(total) < self.p_up[i]
            mag_up = rng.exponential(1.0 / self.eta_plus[i], size=total)
            mag_dn = rng.exponential(1.0 / self.eta_minus[i], size=total)
            vals = np.where(sign_up, mag_up, -mag_dn)
            np.add.at(out[:, i], owner, vals)
        return out


@dataclass(frozen=True)
class Empirical:
    """Finite list of (jump vector, probability) atoms."""

    jumps: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "jumps", np.atleast_2d(np.asarray(self.jumps, dtype=float)))
        object.__setattr__(self, "probs", np.atleast_1d(np.asarray(self.probs, dtype=float)))
        if self.jumps.shape[0] != self.probs.shape[0]:
            raise ValueError("atoms/probabilities length mismatch")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")

    @property
    def dim(self) -> int:
        return self.jumps.shape[1]

    def exp_moment(self, q: float, i: int) -> float:
        return float(np.sum(self.probs * np.exp(q * self.jumps[:, i])))

    def component_radius(self, i: int, tail: float) -> float:
        return float(np.abs(self.jumps[:, i]).max(initial=0.0))

    def sample_sums(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        n = counts.shape[0]
        total = int(counts.sum())
        out = np.zeros((n, self.dim))
        if total == 0:
            return out
        owner = np.repeat(np.arange(n), counts)
        idx = rng.choice(self.jumps.shape[0], size=total, p=self.probs)
        np.add.at(out, owner, self.jumps[idx])
        return out


JumpLaw = MertonNormal | KouDoubleExponential | Empirical


@dataclass(frozen=True)
class JumpSpec:
    """Finite-activity jump component: intensity (jumps/year) times a law."""

    intensity: float
    law: JumpLaw | None = None

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("jump intensity must be nonnegative")
        if self.intensity > 0 and self.law is None:
            raise ValueError("positive intensity requires a jump law")

    @property
    def active(self) -> bool:
        return self.intensity > 0 and self.law is not None

    def exp_moment(self, q: float, i: int) -> float:
        """E[e^{q J_i}] for a single jump; 1 when there are no jumps."""
        if not self.active:
            return 1.0
        return self.law.exp_moment(q, i)

    def mean_exp_minus_one(self, dim: int) -> np.ndarray:
        """kappa_i = E[e^{J_i}] - 1, the martingale compensation vector."""
        if not self.active:
            return np.zeros(dim)
        return np.array([self.law.exp_moment(1.0, i) - 1.0 for i in range(dim)])

    def radius(self, tail: float, dim: int) -> float:
        """Smallest box half-width holding all but `tail` of the jump mass."""
        if not self.active:
            return 0.0
        per_comp = tail / max(dim, 1)
        return max(self.law.component_radius(i, per_comp / 2.0) for i in range(dim))


@dataclass(frozen=True)
class GaussianPart:
    """Annualized covariance of the continuous log-return part."""

    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _as_matrix(self.a))
        if not np.array_equal(self.a, self.a.T):
            raise ValueError("covariance must be stored symmetric")
        if np.linalg.eigvalsh(self.a).min() <= 0:
            raise ValueError("covariance must be strictly positive definite")

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def factor(self) -> np.ndarray:
        """Lower-triangular sigma with sigma sigma^T = a."""
        return np.linalg.cholesky(self.a)


@dataclass(frozen=True)
class Rates:
    r: float
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", np.atleast_1d(np.asarray(self.delta, dtype=float)))
        if self.r < 0:
            raise ValueError("interest rate must be nonnegative")
        if np.any(self.delta < 0):
            raise ValueError("dividend yields must be nonnegative")


def calibrate_drift(gaussian: GaussianPart, jumps: JumpSpec, rates: Rates) -> np.ndarray:
    """Log-price drift making discounted dividend-adjusted prices martingales.

    b_i = r - delta_i - a_ii/2 - lambda * (E[e^{J_i}] - 1).  Raises
    NonIntegrableJump when E[e^{J_i}] diverges (e.g. Kou eta_plus <= 1,
    rejected at construction already).
    """
    d = gaussian.dim
    kappa = jumps.mean_exp_minus_one(d)
    return rates.r - rates.delta - 0.5 * np.diag(gaussian.a) - jumps.intensity * kappa


@dataclass(frozen=True)
class LevyModel:
    dim: int
    gaussian: GaussianPart
    jumps: JumpSpec
    rates: Rates
    log_drift: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.gaussian.dim != self.dim or self.rates.delta.shape[0] != self.dim:
            raise ValueError("component dimensions disagree")
        if self.jumps.active and self.jumps.law.dim != self.dim:
            raise ValueError("jump law dimension disagrees")
        b = self.log_drift
        if b is None:
            b = calibrate_drift(self.gaussian, self.jumps, self.rates)
        object.__setattr__(self, "log_drift", np.atleast_1d(np.asarray(b, dtype=float)))

    @classmethod
    def build(cls, gaussian: GaussianPart, jumps: JumpSpec, rates: Rates) -> "LevyModel":
        return cls(dim=gaussian.dim, gaussian=gaussian, jumps=jumps, rates=rates)

    def martingale_gap(self) -> float:
        """Max deviation of the stored drift from the calibrated one."""
        b = calibrate_drift(self.gaussian, self.jumps, self.rates)
        return float(np.abs(self.log_drift - b).max())


# --------------------------------------------------------------------------- #
# Integrability report
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ConditionCheck:
    name: str
    exponent: float
    status: str
    detail: str = ""

    @property
    def holds(self) -> bool:
        return self.status != FAILS


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.holds for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "exponent": c.exponent, "status": c.status, "detail": c.detail}
                for c in self.checks
            ],
        }


def _signed_exp_condition(jumps: JumpSpec, q: float) -> tuple[str, str]:
    """Finiteness of E[e^{q J_i}] for all components (one-sided exponent)."""
    if not jumps.active or isinstance(jumps.law, (MertonNormal, Empirical)):
        return HOLDS_ANALYTIC, "all exponential moments finite"
    law = jumps.law
    bad = [i for i in range(law.dim) if law.eta_plus[i] <= q]
    if bad:
        return FAILS, f"eta_plus must exceed {q} (components {bad})"
    return HOLDS_ANALYTIC, f"eta_plus > {q} on every component"


def _absolute_exp_condition(jumps: JumpSpec, q: float) -> tuple[str, str]:
    """Finiteness of E[|J|^k e^{q |J|}]-type moments (two-sided exponent)."""
    if not jumps.active or isinstance(jumps.law, (MertonNormal, Empirical)):
        return HOLDS_ANALYTIC, "all exponential moments finite"
    law = jumps.law
    bad = [i for i in range(law.dim) if law.eta_plus[i] <= q or law.eta_minus[i] <= q]
    if bad:
        return FAILS, f"min(eta_plus, eta_minus) must exceed {q} (components {bad})"
    return HOLDS_ANALYTIC, f"both tails decay faster than e^{{-{q}|y|}}"


def validate_integrability(jumps: JumpSpec, p: float, beta: float, epsilon: float) -> ValidationReport:
    """Check the four jump-moment conditions the pricing theory relies on.

    Conditions, in terms of a single jump J (the measure is intensity * law):
      martingale:       E[e^{J_i}] < inf
      payoff-moment:    E[e^{((1 v p)+eps) J_i}] < inf
      weighted-first:   E[|J| e^{beta |J|}] < inf
      weighted-second:  E[|J|^2 e^{2 beta |J|}] < inf

    Failures are reported, never raised; downstream pricing refuses models
    whose report contains a failure.
    """
    if p < 0 or epsilon <= 0 or beta <= p:
        raise ValueError("need p >= 0, epsilon > 0 and beta > p")
    q_payoff = max(1.0, p) + epsilon
    rows = []
    for name, q, checker in (
        ("martingale moment E[e^{J_i}]", 1.0, _signed_exp_condition),
        (f"payoff moment E[e^{{{q_payoff:g} J_i}}]", q_payoff, _signed_exp_condition),
        (f"weighted first moment E[|J| e^{{{beta:g}|J|}}]", beta, _absolute_exp_condition),
        (f"weighted second moment E[|J|^2 e^{{{2 * beta:g}|J|}}]", 2.0 * beta, _absolute_exp_condition),
    ):
        status, detail = checker(jumps, q)
        rows.append(ConditionCheck(name=name, exponent=q, status=status, detail=detail))
    return ValidationReport(checks=tuple(rows))


def exp_moment(model: LevyModel, q: float, i: int, t: float) -> float:
    """q-th moment of the price return: E[(X_t^i / x_i)^q].

    Equals exp(t (q b_i + q^2 a_ii / 2 + lambda (E[e^{q J_i}] - 1))) with b the
    full log-price drift, so q = 1 returns e^{(r - delta_i) t} for every
    calibrated model.
    """
    lam = model.jumps.intensity
    jump_term = lam * (model.jumps.exp_moment(q, i) - 1.0) if lam > 0 else 0.0
    a_ii = model.gaussian.a[i, i]
    return float(np.exp(t * (q * model.log_drift[i] + 0.5 * q * q * a_ii + jump_term)))


# --------------------------------------------------------------------------- #
# Path simulation
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class PathSet:
    times: np.ndarray
    paths: np.ndarray  # (n_paths, n_steps + 1, d), strictly positive
    seed: int


def _block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_block(model: LevyModel, log_x: np.ndarray, dt: float, n_steps: int,
                    rng: np.random.Generator, n_block: int) -> np.ndarray:
    """Exact-in-law log-price increments for one block of paths."""
    d = model.dim
    sigma = model.gaussian.factor()
    b = model.log_drift
    lam = model.jumps.intensity
    sq = np.sqrt(dt)
    logs = np.empty((n_block, n_steps + 1, d))
    logs[:, 0, :] = log_x
    for k in range(n_steps):
        z = rng.standard_normal((n_block, d))
        incr = b * dt + sq * (z @ sigma.T)
        if lam > 0:
            counts = rng.poisson(lam * dt, size=n_block)
            incr += model.jumps.law.sample_sums(rng, counts)
        logs[:, k + 1, :] = logs[:, k, :] + incr
    return logs


def simulate_log_blocks(model: LevyModel, x: np.ndarray, s: float, T: float,
                        n_steps: int, n_paths: int, seed: int,
                        stream: int = 0, n_threads: int | None = None):
    """Yield (start_index, log-path block) pairs in deterministic order.

    Block boundaries and substreams are fixed by the block size alone, so the
    output never depends on the thread count.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise InvalidDomain("initial prices must be strictly positive")
    if T <= s or n_steps < 1 or n_paths < 1:
        raise ValueError("need T > s, n_steps >= 1, n_paths >= 1")
    dt = (T - s) / n_steps
    log_x = np.log(x)
    starts = list(range(0, n_paths, _PATH_BLOCK))

    def run(block_idx: int):
        lo = starts[block_idx]
        n_block = min(_PATH_BLOCK, n_paths - lo)
        rng = _block_rng(seed, stream, block_idx)
        return lo, _simulate_block(model, log_x, dt, n_steps, rng, n_block)

    n_threads = max(1, int(n_threads or 1))
    if n_threads == 1 or len(starts) == 1:
        for idx in range(len(starts)):
            yield run(idx)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for result in pool.map(run, range(len(starts))):
                yield result


def simulate_paths(model: LevyModel, s: float, x, T: float, n_steps: int,
                   n_paths: int, seed: int, n_threads: int | None = None,
                   stream: int = 0) -> PathSet:
    """Simulate price paths on a uniform grid over [s, T].

    Each step is exact in law: Gaussian increment plus a Poisson number of
    jumps drawn from the jump law.  Fixed seed gives a bitwise-identical
    PathSet regardless of thread count.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    paths = np.empty((n_paths, n_steps + 1, model.dim))
    for lo, block in simulate_log_blocks(model, x, s, T, n_steps, n_paths, seed,
                                         stream=stream, n_threads=n_threads):
        paths[lo:lo + block.shape[0]] = np.exp(block)
    paths[:, 0, :] = x  # exact initial condition, no exp/log roundtrip
    times = s + (T - s) * np.arange(n_steps + 1) / n_steps
    return PathSet(times=times, paths=paths, seed=seed)


# --------------------------------------------------------------------------- #
# JSON interface
# --------------------------------------------------------------------------- #

def jumps_from_dict(spec: dict) -> JumpSpec:
    kind = spec.get("kind", "none").lower()
    if kind == "none":
        return JumpSpec(intensity=0.0)
    lam = float(spec["lambda"])
    if kind == "merton":
        law = MertonNormal(mean=spec["mean"], cov=spec["cov"])
    elif kind == "kou":
        law = KouDoubleExponential(p_up=spec["p_up"], eta_plus=spec["eta_plus"],
                                   eta_minus=spec["eta_minus"])
    elif kind == "empirical":
        law = Empirical(jumps=spec["jumps"], probs=spec["probs"])
    else:
        raise ValueError(f"unknown jump kind {kind!r}")
    return JumpSpec(intensity=lam, law=law)


def jumps_to_dict(jumps: JumpSpec) -> dict:
    if not jumps.active:
        return {"kind": "none"}
    law = jumps.law
    if isinstance(law, MertonNormal):
        return {"kind": "merton", "lambda": jumps.intensity,
                "mean": law.mean.tolist(), "cov": law.cov.tolist()}
    if isinstance(law, KouDoubleExponential):
        return {"kind": "kou", "lambda": jumps.intensity, "p_up": law.p_up.tolist(),
                "eta_plus": law.eta_plus.tolist(), "eta_minus": law.eta_minus.tolist()}
    return {"kind": "empirical", "lambda": jumps.intensity,
            "jumps": law.jumps.tolist(), "probs": law.probs.tolist()}


def model_from_dict(spec: dict) -> LevyModel:
    gaussian = GaussianPart(a=spec["a"])
    rates = Rates(r=float(spec["rates"]["r"]), delta=spec["rates"]["delta"])
    jumps = jumps_from_dict(spec.get("jumps", {"kind": "none"}))
    model = LevyModel.build(gaussian, jumps, rates)
    if model.dim != int(spec["dim"]):
        raise ValueError("declared dim disagrees with matrix shapes")
    return model


def model_to_dict(model: LevyModel) -> dict:
    return {
        "dim": model.dim,
        "a": model.gaussian.a.tolist(),
        "rates": {"r": model.rates.r, "delta": model.rates.delta.tolist()},
        "jumps": jumps_to_dict(model.jumps),
        "log_drift": model.log_drift.tolist(),
    }


def load_model(path) -> LevyModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
