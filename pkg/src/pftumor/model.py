"""Continuum model: double-well potential, proliferation and interpolation
functions, the surface tension constant, the primitive ``W`` used for
compactness, and sampling-based checks of the structural hypotheses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline

Array = np.ndarray
ScalarFn = Callable[[Array], Array]


class ModelError(ValueError):
    """Invalid model data."""


class DegeneratePotentialError(ModelError):
    """The potential is not a nonnegative double well on [-1, 1]."""


class Problem(str, enum.Enum):
    P = "P"
    H = "H"


class Potential:
    """Double-well potential ``F`` with its derivatives and growth constants.

    ``convex_deriv``/``nonconvex_deriv`` are the derivatives of a splitting
    ``F = F_c + F_nc`` with ``F_c`` uniformly convex and ``F_nc''`` bounded.
    ``c_F, C_F`` satisfy ``F(u) >= c_F |u|^p - C_F`` and ``cbar_F`` satisfies
    ``F(u) >= cbar_F (|u| - 1)^2``.
    """

    def __init__(
        self,
        value: ScalarFn,
        deriv: ScalarFn,
        deriv2: ScalarFn,
        convex_deriv: ScalarFn,
        nonconvex_deriv: ScalarFn,
        growth_exponent: float,
        delta0: float,
        c_F: float,
        C_F: float,
        cbar_F: float,
        name: str = "custom",
    ):
        self.value = value
        self.deriv = deriv
        self.deriv2 = deriv2
        self.convex_deriv = convex_deriv
        self.nonconvex_deriv = nonconvex_deriv
        self.growth_exponent = float(growth_exponent)
        self.delta0 = float(delta0)
        self.c_F = float(c_F)
        self.C_F = float(C_F)
        self.cbar_F = float(cbar_F)
        self.name = name

    def __call__(self, u):
        return self.value(u)

    def __repr__(self):
        return f"Potential({self.name!r}, p={self.growth_exponent})"

    @cached_property
    def max_on_unit_interval(self) -> float:
        u = np.linspace(-1.0, 1.0, 10_001)
        return float(np.max(self.value(u)))

    def truncated(self, u):
        """``F ∧ (max_{[-1,1]} F + u^2)``, the quadratically capped potential."""
        u = np.asarray(u, dtype=float)
        return np.minimum(self.value(u), self.max_on_unit_interval + u * u)

    @cached_property
    def theta(self) -> float:
        return theta(self)

    @cached_property
    def _w_table(self) -> "_WTable":
        return _WTable(self)

    def W(self, u):
        """Vectorised ``W(u) = ∫_{-1}^u sqrt(2 F̃(r)) dr`` (tabulated)."""
        return self._w_table(u)


def quartic_well(scale: float = 0.25) -> Potential:
    """``F(u) = scale (1 - u^2)^2``; the default scale 1/4 is the classical well."""
    a = float(scale)
    if a <= 0:
        raise ModelError("quartic well scale must be positive")
    return Potential(
        value=lambda u: a * (1.0 - np.asarray(u) ** 2) ** 2,
        deriv=lambda u: 4.0 * a * (np.asarray(u) ** 3 - np.asarray(u)),
        deriv2=lambda u: 4.0 * a * (3.0 * np.asarray(u) ** 2 - 1.0),
        convex_deriv=lambda u: 4.0 * a * (np.asarray(u) ** 3 + np.asarray(u)),
        nonconvex_deriv=lambda u: -8.0 * a * np.asarray(u),
        growth_exponent=4.0,
        delta0=0.25,
        # F - (a/2) u^4 = a (u^4/2 - 2u^2 + 1) has minimum -a at u^2 = 2
        c_F=a / 2.0,
        C_F=a,
        cbar_F=a,
        name="quartic" if a == 0.25 else f"quartic[{a:g}]",
    )


@dataclass(frozen=True)
class Proliferation:
    value: ScalarFn
    growth_exponent: float
    C_P: float
    Cbar_P: float
    name: str = "custom"

    def __call__(self, u):
        return self.value(u)


def linear_proliferation(lambda0: float = 0.5) -> Proliferation:
    """``P(u) = lambda0 (1 + u)^+``."""
    lam = float(lambda0)
    if lam < 0:
        raise ModelError("lambda0 must be nonnegative")
    return Proliferation(
        value=lambda u: lam * np.maximum(1.0 + np.asarray(u, dtype=float), 0.0),
        growth_exponent=1.0,
        C_P=lam,
        Cbar_P=lam,
        name=f"linear[{lam:g}]",
    )


def capped_proliferation(lambda0: float = 0.5) -> Proliferation:
    """``P(u) = (1 - u^2) ∨ lambda0 (|u| - 1)``."""
    lam = float(lambda0)
    return Proliferation(
        value=lambda u: np.maximum(1.0 - np.asarray(u) ** 2, lam * (np.abs(u) - 1.0)),
        growth_exponent=1.0,
        C_P=max(1.0, lam),
        Cbar_P=max(2.0, lam),
        name=f"capped[{lam:g}]",
    )


def zero_proliferation() -> Proliferation:
    return Proliferation(
        value=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        growth_exponent=1.0,
        C_P=0.0,
        Cbar_P=0.0,
        name="zero",
    )


@dataclass(frozen=True)
class Interpolation:
    value: ScalarFn
    lipschitz_constant: float
    technical_constant: Optional[float] = None
    name: str = "custom"

    def __call__(self, u):
        return self.value(u)


def smooth_cubic_interpolation() -> Interpolation:
    """``H(u) = ((1 - u^2)^+)^3``: C^2, [0, 1]-valued, vanishing at ±1."""
    return Interpolation(
        value=lambda u: np.maximum(1.0 - np.asarray(u, dtype=float) ** 2, 0.0) ** 3,
        # max |6u(1-u^2)^2| is attained at u^2 = 1/5
        lipschitz_constant=96.0 / (25.0 * math.sqrt(5.0)),
        # sup of 4u(1-u^2)^2 over (0, 1) for the classical quartic well
        technical_constant=64.0 / (25.0 * math.sqrt(5.0)),
        name="smooth_cubic",
    )


def prototype_interpolation() -> Interpolation:
    """``H(u) = 1 ∧ ((1 + u)/2)^+``; violates the technical bound near u = 1."""
    return Interpolation(
        value=lambda u: np.clip((1.0 + np.asarray(u, dtype=float)) / 2.0, 0.0, 1.0),
        lipschitz_constant=0.5,
        name="prototype",
    )


def constant_interpolation(c: float = 1.0) -> Interpolation:
    """Test-only constant interpolation."""
    c = float(c)
    return Interpolation(
        value=lambda u: np.full_like(np.asarray(u, dtype=float), c),
        lipschitz_constant=0.0,
        name=f"constant[{c:g}]",
    )


@dataclass
class ModelSpec:
    problem: Problem
    potential: Potential
    epsilon: float
    proliferation: Optional[Proliferation] = None
    interpolation: Optional[Interpolation] = None
    lengths: tuple = (1.0, 1.0)
    T: float = 1.0
    theta: float = field(default=None)

    def __post_init__(self):
        self.problem = Problem(self.problem)
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ModelError(f"epsilon must be positive, got {self.epsilon}")
        if self.T <= 0:
            raise ModelError(f"time horizon T must be positive, got {self.T}")
        if any(L <= 0 for L in self.lengths):
            raise ModelError("domain lengths must be positive")
        if self.problem is Problem.P:
            if self.proliferation is None or self.interpolation is not None:
                raise ModelError("Problem P needs a proliferation and no interpolation")
        else:
            if self.interpolation is None or self.proliferation is not None:
                raise ModelError("Problem H needs an interpolation and no proliferation")
        computed = self.potential.theta
        if self.theta is None:
            self.theta = computed
        elif abs(self.theta - computed) > 1e-9:
            raise ModelError(f"theta={self.theta} disagrees with quadrature value {computed}")

    @property
    def omega_measure(self) -> float:
        return float(np.prod(self.lengths))

    def source_function(self):
        return self.proliferation if self.problem is Problem.P else self.interpolation


def theta(potential: Potential) -> float:
    """Surface tension ``∫_{-1}^{1} sqrt(F(u)/2) du`` by adaptive quadrature."""
    u = np.linspace(-1.0, 1.0, 2001)
    with np.errstate(all="ignore"):
        f = np.asarray(potential.value(u), dtype=float)
    if not np.all(np.isfinite(f)):
        raise DegeneratePotentialError("potential is not finite on [-1, 1]")
    if np.any(f < 0):
        k = int(np.argmin(f))
        raise DegeneratePotentialError(f"potential is negative at u={u[k]:.6g} (F={f[k]:.3g})")

    def integrand(s):
        v = float(potential.value(s))
        if not math.isfinite(v) or v < 0:
            raise DegeneratePotentialError(f"non-finite integrand at u={s}")
        return math.sqrt(v / 2.0)

    val, err = integrate.quad(integrand, -1.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    if err > 1e-10:
        raise DegeneratePotentialError(f"theta quadrature did not converge (err={err:.2e})")
    return val


def _kinks(potential: Potential, lo: float, hi: float) -> list:
    """Points where ``sqrt(2 F̃)`` is not smooth: the wells and the cap switches."""
    pts = [-1.0, 1.0]
    u = np.linspace(lo, hi, 20_001)
    g = potential.value(u) - (potential.max_on_unit_interval + u * u)
    idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
    fn = lambda s: float(potential.value(s)) - (potential.max_on_unit_interval + s * s)
    pts.extend(optimize.brentq(fn, u[i], u[i + 1], xtol=1e-15) for i in idx)
    return sorted(p for p in pts if lo < p < hi)


def eval_W(potential: Potential, u: float) -> float:
    """``W(u) = ∫_{-1}^u sqrt(2 F̃(r)) dr`` by adaptive quadrature (signed)."""
    u = float(u)
    if not math.isfinite(u):
        raise ModelError("W evaluated at a non-finite point")
    if u == -1.0:
        return 0.0
    a, b = sorted((-1.0, u))
    brk = [p for p in _kinks(potential, a - 1.0, b + 1.0) if a < p < b]
    f = lambda s: math.sqrt(2.0 * float(potential.truncated(s)))
    val, _ = integrate.quad(f, a, b, points=brk or None, epsabs=1e-13, epsrel=1e-13, limit=400)
    return val if u > -1.0 else -val


class _WTable:
    """Piecewise cubic Hermite table of ``W``; the kinks of the integrand are
    table nodes so every panel is smooth."""

    def __init__(self, potential: Potential, lo: float = -4.0, hi: float = 4.0, h: float = 2e-3):
        self.potential = potential
        self.lo, self.hi = lo, hi
        n = int(round((hi - lo) / h))
        nodes = np.union1d(np.linspace(lo, hi, n + 1), _kinks(potential, lo, hi))
        nodes = nodes[np.concatenate(([True], np.diff(nodes) > 1e-12))]
        x, w = np.polynomial.legendre.leggauss(10)
        a, b = nodes[:-1], nodes[1:]
        mid, half = (a + b) / 2, (b - a) / 2
        s = mid[:, None] + half[:, None] * x[None, :]
        dens = np.sqrt(2.0 * potential.truncated(s))
        panels = half * (dens @ w)
        cum = np.concatenate(([0.0], np.cumsum(panels)))
        i0 = int(np.argmin(np.abs(nodes + 1.0)))
        values = cum - cum[i0]
        slopes = np.sqrt(2.0 * potential.truncated(nodes))
        self.spline = CubicHermiteSpline(nodes, values, slopes, extrapolate=False)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = self.spline(u)
        outside = ~((u >= self.lo) & (u <= self.hi))
        if np.any(outside):
            out = np.array(out, dtype=float)
            out[outside] = [eval_W(self.potential, v) for v in u[outside]]
        return out


@dataclass
class HypothesisResult:
    name: str
    passed: bool
    detail: str
    witness: Optional[float] = None
    constant: Optional[float] = None


@dataclass
class ValidationReport:
    results: list

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> list:
        return [r for r in self.results if not r.passed]

    def __getitem__(self, name) -> HypothesisResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def format(self) -> str:
        lines = []
        for r in self.results:
            tag = "PASS" if r.passed else "FAIL"
            line = f"[{tag}] {r.name}: {r.detail}"
            if not r.passed and r.witness is not None:
                line += f" (witness u={r.witness:.10g})"
            lines.append(line)
        lines.append("all hypotheses hold" if self.ok else
                     f"{len(self.failed())} hypothesis check(s) failed")
        return "\n".join(lines)


def _diff_quotient(fn, u, h=1e-6):
    return (fn(u + h) - fn(u - h)) / (2 * h)


def _check_potential(pot: Potential, u: Array, problem: Problem) -> list:
    res = []
    f = pot.value(u)
    far = np.abs(np.abs(u) - 1.0) > 1e-2
    ok = (
        np.all(np.isfinite(f)) and np.all(f >= -1e-14)
        and abs(float(pot.value(1.0))) < 1e-12 and abs(float(pot.value(-1.0))) < 1e-12
        and np.all(f[far] > 0)
    )
    w = None if ok else float(u[int(np.argmin(np.where(far, f, np.inf)))])
    res.append(HypothesisResult("F-double-well", bool(ok),
                                "F >= 0, vanishing only at ±1", w))

    p, d0 = pot.growth_exponent, pot.delta0
    mask = np.abs(u) >= 1 - d0
    ratio = pot.deriv2(u[mask]) / np.abs(u[mask]) ** (p - 2)
    c = float(ratio.min())
    ok = 3 <= p < 6 and 0 < d0 < 1 and c > 0
    res.append(HypothesisResult(
        "F-convexity", bool(ok),
        f"F''(u) >= c|u|^(p-2) for |u| >= 1-delta0, p={p:g}, delta0={d0:g}, min c={c:.4g}",
        None if ok else float(u[mask][int(np.argmin(ratio))]), c))

    gap1 = f - (pot.c_F * np.abs(u) ** p - pot.C_F)
    gap2 = f - pot.cbar_F * (np.abs(u) - 1.0) ** 2
    ok = gap1.min() >= -1e-12 and gap2.min() >= -1e-12
    wit = None
    if not ok:
        wit = float(u[int(np.argmin(np.minimum(gap1, gap2)))])
    res.append(HypothesisResult(
        "F-lower-bounds", bool(ok),
        f"F >= c_F|u|^p - C_F and F >= cbar_F(|u|-1)^2 with "
        f"c_F={pot.c_F:g}, C_F={pot.C_F:g}, cbar_F={pot.cbar_F:g}", wit))

    if problem is Problem.P:
        split_err = np.abs(pot.deriv(u) - pot.convex_deriv(u) - pot.nonconvex_deriv(u))
        fc2 = _diff_quotient(pot.convex_deriv, u)
        fnc2 = _diff_quotient(pot.nonconvex_deriv, u)
        lower = float(np.min(fc2 / (1 + np.abs(u) ** (p - 2))))
        upper = float(np.max(fc2 / (1 + np.abs(u) ** (p - 2))))
        bnc = float(np.max(np.abs(fnc2)))
        ok = split_err.max() <= 1e-9 * (1 + np.abs(pot.deriv(u)).max()) and lower > 0
        res.append(HypothesisResult(
            "F-splitting", bool(ok),
            f"F' = F_c' + F_nc', {lower:.4g}(1+|u|^(p-2)) <= F_c'' <= {upper:.4g}(1+|u|^(p-2)),"
            f" |F_nc''| <= {bnc:.4g}",
            None if ok else float(u[int(np.argmax(split_err))])))
    else:
        c1 = float(np.max(np.abs(pot.deriv(u)) / (1 + f)))
        c2 = float(np.max(np.abs(pot.deriv2(u)) / (1 + np.abs(u) ** (p - 2))))
        ok = math.isfinite(c1) and math.isfinite(c2)
        res.append(HypothesisResult(
            "F-growth", bool(ok), f"|F'| <= {c1:.4g}(1+F), |F''| <= {c2:.4g}(1+|u|^(p-2))"))
    return res


def _check_proliferation(P: Proliferation, pot: Potential, u: Array, rng) -> list:
    res = []
    pv = P.value(u)
    ok = bool(np.all(np.isfinite(pv)) and np.all(pv >= 0))
    res.append(HypothesisResult("P-nonnegative", ok, "P >= 0",
                                None if ok else float(u[int(np.argmin(pv))])))

    r, p = P.growth_exponent, pot.growth_exponent
    # one-sided quotients on the sample grid avoid straddling kinks of P
    dq = np.abs(np.diff(pv) / np.diff(u))
    um = np.maximum(np.abs(u[:-1]), np.abs(u[1:]))
    C = float(np.max(dq / (1 + um ** (r - 1))))
    ok = 1 <= r <= p - 2 and math.isfinite(C)
    res.append(HypothesisResult(
        "P-growth", bool(ok), f"|P'| <= {C:.4g}(1+|u|^(r-1)), r={r:g} in [1, p-2={p - 2:g}]",
        None, C))

    fitted_CP = float(np.max(pv / (1 + np.abs(u) ** r)))
    a = rng.choice(u, 20_000)
    b = rng.choice(u, 20_000)
    a = np.concatenate((a, u[:-1]))
    b = np.concatenate((b, u[1:]))
    lhs = np.abs(P.value(a) - P.value(b))
    rhs = P.Cbar_P * np.abs(a - b) * (1 + np.abs(a) ** (r - 1) + np.abs(b) ** (r - 1))
    gap1 = P.C_P * (1 + np.abs(u) ** r) - pv
    ok = gap1.min() >= -1e-12 and np.all(lhs <= rhs * (1 + 1e-12) + 1e-14)
    wit = None
    if not ok:
        wit = float(u[int(np.argmin(gap1))]) if gap1.min() < -1e-12 else float(a[int(np.argmax(lhs - rhs))])
    res.append(HypothesisResult(
        "P-bounds", bool(ok),
        f"P <= C_P(1+|u|^r) with C_P={P.C_P:g} (fitted {fitted_CP:.4g}); "
        f"Lipschitz-type bound with Cbar_P={P.Cbar_P:g}", wit, fitted_CP))
    return res


def technical_ratio(H: Interpolation, pot: Potential, u: Array) -> Array:
    """``H(u) |F'(u)| / F(u)`` on the set ``{F' < 0, F > 0}`` (nan elsewhere)."""
    dF = pot.deriv(u)
    f = pot.value(u)
    out = np.full(u.shape, np.nan)
    m = (dF < 0) & (f > 0)
    out[m] = H.value(u[m]) * np.abs(dF[m]) / f[m]
    return out


def _check_interpolation(H: Interpolation, pot: Potential, u: Array) -> list:
    res = []
    hv = H.value(u)
    ok = bool(np.all(hv >= 0) and np.all(hv <= 1))
    res.append(HypothesisResult("H-range", ok, "0 <= H <= 1",
                                None if ok else float(u[int(np.argmax(np.abs(hv - 0.5)))])))

    L = float(np.max(np.abs(np.diff(hv) / np.diff(u))))
    ok = L <= H.lipschitz_constant * (1 + 1e-9) + 1e-12
    res.append(HypothesisResult(
        "H-lipschitz", bool(ok),
        f"sampled Lipschitz constant {L:.6g} <= declared {H.lipschitz_constant:.6g}",
        None if ok else float(u[int(np.argmax(np.abs(np.diff(hv))))])))

    ratio = technical_ratio(H, pot, u)
    base = float(np.nanmax(ratio)) if np.any(np.isfinite(ratio)) else 0.0
    # probe the approach to the wells from the side where F' < 0
    dists = 10.0 ** -np.arange(1, 9)
    probes = np.concatenate([z + s * dists for z in (-1.0, 1.0) for s in (-1.0, 1.0)])
    pr = technical_ratio(H, pot, probes)
    diverging = None
    for z in (-1.0, 1.0):
        for s in (-1.0, 1.0):
            pts = z + s * dists
            rr = technical_ratio(H, pot, pts)
            if np.isfinite(rr[3]) and np.isfinite(rr[7]) and rr[7] > 10 * max(rr[3], 1e-300):
                diverging = float(pts[7])
    sup = max(base, float(np.nanmax(pr)) if np.any(np.isfinite(pr)) else 0.0)
    ok = diverging is None and math.isfinite(sup)
    if ok:
        detail = f"H <= C_H F/|F'| where F' < 0, empirical C_H={sup:.6g}"
    else:
        detail = (f"H <= C F/|F'| where F' < 0 fails: H|F'|/F is unbounded "
                  f"(reaches {sup:.3g} near the well)")
    res.append(HypothesisResult("H-technical", bool(ok), detail, diverging, sup if ok else None))
    return res


def check_assumptions(spec: ModelSpec, sample_range=(-3.0, 3.0), n_samples: int = 10_000,
                      seed: int = 0) -> ValidationReport:
    """Check every structural hypothesis on ``F``, ``P`` or ``H`` by sampling."""
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    lo, hi = sample_range
    u = np.linspace(lo, hi, n_samples)
    rng = np.random.default_rng(seed)
    results = _check_potential(spec.potential, u, spec.problem)
    if spec.problem is Problem.P:
        results += _check_proliferation(spec.proliferation, spec.potential, u, rng)
    else:
        results += _check_interpolation(spec.interpolation, spec.potential, u)
    return ValidationReport(results)


class GlobalTimeStatus(str, enum.Enum):
    ASS1 = "Ass1Holds"
    ASS2 = "Ass2Holds"
    NEITHER = "NeitherHolds"


def horizon_threshold(E0: float, c0: float, omega_measure: float, c_F: float, C_F: float,
                      C_P: float) -> float:
    """Largest horizon ``T`` for which the time smallness condition holds (strictly below)."""
    if C_P == 0:
        return math.inf
    return omega_measure * c_F * (1 - c0) ** 2 / (2 * C_P * (c_F + C_F) * E0)


def precheck_global_time(T: float, E0: float, c0: float, d0: Optional[float],
                         omega_measure: float, constants) -> GlobalTimeStatus:
    """Which smallness condition, if any, rules out a pure phase on ``[0, T]``
    for Problem P.  ``constants`` is ``(c_F, C_F, C_P)``."""
    if omega_measure <= 0:
        raise ModelError("domain measure must be positive")
    if not 0 <= c0 < 1:
        raise ModelError("c0 must lie in [0, 1)")
    if E0 <= 0:
        raise ModelError("E0 must be positive")
    c_F, C_F, C_P = constants
    lhs = T * E0
    rhs = omega_measure * c_F / (2 * C_P * (c_F + C_F)) * (1 - c0) ** 2 if C_P > 0 else math.inf
    if lhs < rhs:
        return GlobalTimeStatus.ASS1
    if d0 is not None and d0 < 1 and E0 < omega_measure / 2 * (1 - d0) ** 2:
        return GlobalTimeStatus.ASS2
    return GlobalTimeStatus.NEITHER


def mass_confinement_bound(status: GlobalTimeStatus, T: float, E0: float, c0: float,
                           d0: Optional[float], omega_measure: float, constants) -> float:
    """The bound ``m0`` on ``|[phi(t)]|`` guaranteed by the active smallness condition."""
    c_F, C_F, C_P = constants
    if status is GlobalTimeStatus.ASS1:
        return c0 + math.sqrt(2 * T * E0 * C_P * (c_F + C_F) / (omega_measure * c_F))
    if status is GlobalTimeStatus.ASS2:
        return d0 + math.sqrt(2 * E0 / omega_measure)
    return math.inf
