"""``key = value`` run configuration.

Grammar: one ``key = value`` per line, ``#`` starts a comment, ``[name]``
opens a section.  Sections are ``model``, ``grid``, ``time``, ``sweep`` and
``output``.  Keys are unique across sections, so keys may also appear before
any section header; a key under the wrong section is an error.  Lists are
comma separated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from .grid import Grid
from .model import (ModelSpec, Problem, capped_proliferation, linear_proliferation,
                    prototype_interpolation, quartic_well, smooth_cubic_interpolation,
                    zero_proliferation)
from .solver import StepConfig
from .sweep import Circle, Circles, Stripe, SweepPlan, grid_size

SECTIONS = ("model", "grid", "time", "sweep", "output")


class ConfigError(ValueError):
    def __init__(self, message, line=None, path=None):
        where = f"{path or '<config>'}:{line}: " if line else ""
        super().__init__(where + message)
        self.line = line


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


@dataclass(frozen=True)
class Key:
    section: str
    kind: str                         # float, int, str, floats, circles
    default: Any
    check: Optional[Callable] = None
    rule: str = ""
    choices: tuple = ()
    doc: str = ""


SCHEMA = {
    # model
    "problem": Key("model", "str", "P", choices=("P", "H"), doc="P (proliferation) or H (interpolation)"),
    "epsilon": Key("model", "float", 0.04, _positive, "> 0", doc="interface width"),
    "potential": Key("model", "str", "quartic", choices=("quartic",)),
    "potential_scale": Key("model", "float", 0.25, _positive, "> 0", doc="F = scale (1 - u^2)^2"),
    "proliferation": Key("model", "str", "linear", choices=("linear", "capped", "zero")),
    "lambda0": Key("model", "float", 0.5, _nonneg, ">= 0"),
    "interpolation": Key("model", "str", "smooth_cubic", choices=("smooth_cubic", "prototype")),
    "dim": Key("model", "int", 2, lambda v: v in (1, 2), "1 or 2"),
    "L_x": Key("model", "float", 1.0, _positive, "> 0"),
    "L_y": Key("model", "float", 1.0, _positive, "> 0"),
    "T": Key("model", "float", 0.01, _positive, "> 0", doc="time horizon"),
    # grid
    "n_x": Key("grid", "int", 0, _nonneg, ">= 0", doc="0: ceil(L_x h_ratio / epsilon)"),
    "n_y": Key("grid", "int", 0, _nonneg, ">= 0", doc="0: ceil(L_y h_ratio / epsilon)"),
    "h_ratio": Key("grid", "float", 6.0, lambda v: v >= 6, ">= 6", doc="cells per epsilon"),
    # time
    "dt": Key("time", "float", 0.0, _nonneg, ">= 0", doc="0: from c_dt and n_steps"),
    "c_dt": Key("time", "float", 0.5, _positive, "> 0", doc="dt = c_dt epsilon^3"),
    "n_steps": Key("time", "int", 0, _nonneg, ">= 0", doc="0: ceil(T / dt)"),
    "stabilization": Key("time", "float", 2.0, _nonneg, ">= 0"),
    "fixed_point_tol": Key("time", "float", 1e-12, _positive, "> 0"),
    "max_inner_iterations": Key("time", "int", 200, _positive, ">= 1"),
    "tol_box": Key("time", "float", 1e-9, _nonneg, ">= 0"),
    "trace_stride": Key("time", "int", 1, _positive, ">= 1"),
    # sweep and initial data
    "epsilons": Key("sweep", "floats", (0.08, 0.04, 0.02), lambda v: len(v) > 0 and min(v) > 0
                    and all(b < a for a, b in zip(v, v[1:])), "positive, strictly decreasing"),
    "geometry": Key("sweep", "str", "circle", choices=("circle", "stripe", "circles")),
    "center_x": Key("sweep", "float", 0.5),
    "center_y": Key("sweep", "float", 0.5),
    "radius": Key("sweep", "float", 0.25, _positive, "> 0"),
    "circles": Key("sweep", "circles", (), doc="x:y:r, x:y:r, ..."),
    "stripe_position": Key("sweep", "float", 0.5),
    "stripe_width": Key("sweep", "float", 0.0, _nonneg, ">= 0", doc="0: half space"),
    "sigma0": Key("sweep", "float", None, _unit, "in [0, 1]", doc="auto: 0.8 (P), 1.0 (H)"),
    "clearance": Key("sweep", "float", 3.0, _nonneg, ">= 0", doc="in units of epsilon"),
    "noise": Key("sweep", "float", 0.0, _nonneg, ">= 0", doc="uniform perturbation of phi0"),
    "seed": Key("sweep", "int", 0, _nonneg, ">= 0"),
    # output
    "out_dir": Key("output", "str", "out"),
    "stride": Key("output", "int", 0, _nonneg, ">= 0", doc="snapshot every N steps (0: first and last)"),
}


def _convert(key: str, spec: Key, text: str):
    if spec.kind == "float":
        if key == "sigma0" and text == "auto":
            return None
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("not finite")
        return v
    if spec.kind == "int":
        return int(text)
    if spec.kind == "floats":
        return tuple(float(x) for x in text.split(",") if x.strip())
    if spec.kind == "circles":
        out = []
        for item in text.split(","):
            if item.strip():
                x, y, r = (float(p) for p in item.split(":"))
                out.append((x, y, r))
        return tuple(out)
    if text.startswith(('"', "'")) and text.endswith(text[0]) and len(text) > 1:
        text = text[1:-1]
    if spec.choices and text not in spec.choices:
        raise ValueError(f"expected one of {', '.join(spec.choices)}")
    return text


@dataclass(frozen=True)
class RunConfig:
    problem: str = "P"
    epsilon: float = 0.04
    potential: str = "quartic"
    potential_scale: float = 0.25
    proliferation: str = "linear"
    lambda0: float = 0.5
    interpolation: str = "smooth_cubic"
    dim: int = 2
    L_x: float = 1.0
    L_y: float = 1.0
    T: float = 0.01
    n_x: int = 0
    n_y: int = 0
    h_ratio: float = 6.0
    dt: float = 0.0
    c_dt: float = 0.5
    n_steps: int = 0
    stabilization: float = 2.0
    fixed_point_tol: float = 1e-12
    max_inner_iterations: int = 200
    tol_box: float = 1e-9
    trace_stride: int = 1
    epsilons: tuple = (0.08, 0.04, 0.02)
    geometry: str = "circle"
    center_x: float = 0.5
    center_y: float = 0.5
    radius: float = 0.25
    circles: tuple = ()
    stripe_position: float = 0.5
    stripe_width: float = 0.0
    sigma0: Optional[float] = None
    clearance: float = 3.0
    noise: float = 0.0
    seed: int = 0
    out_dir: str = "out"
    stride: int = 0

    # --- derived objects ---------------------------------------------------

    @property
    def lengths(self):
        return (self.L_x,) if self.dim == 1 else (self.L_x, self.L_y)

    @property
    def initial_sigma(self) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        return 0.8 if self.problem == "P" else 1.0

    def model_spec(self, epsilon: Optional[float] = None) -> ModelSpec:
        pot = quartic_well(self.potential_scale)
        kw = {}
        if self.problem == "P":
            kw["proliferation"] = {"linear": linear_proliferation, "capped": capped_proliferation,
                                   "zero": lambda _: zero_proliferation()}[self.proliferation](self.lambda0)
        else:
            kw["interpolation"] = (smooth_cubic_interpolation() if self.interpolation == "smooth_cubic"
                                   else prototype_interpolation())
        return ModelSpec(Problem(self.problem), pot, epsilon or self.epsilon,
                         lengths=self.lengths, T=self.T, **kw)

    def grid_sizes(self, epsilon: Optional[float] = None):
        eps = epsilon or self.epsilon
        nx = self.n_x if self.n_x and epsilon is None else grid_size(self.L_x, self.h_ratio, eps)
        if self.dim == 1:
            return (nx, 1)
        ny = self.n_y if self.n_y and epsilon is None else grid_size(self.L_y, self.h_ratio, eps)
        return (nx, ny)

    def grid(self, epsilon: Optional[float] = None) -> Grid:
        nx, ny = self.grid_sizes(epsilon)
        return Grid.uniform(self.lengths, nx if self.dim == 1 else (nx, ny))

    def time_steps(self):
        """``(n_steps, dt)`` for a single run at ``epsilon``."""
        if self.dt > 0 and self.n_steps > 0:
            return self.n_steps, self.dt
        if self.dt > 0:
            return max(1, math.ceil(round(self.T / self.dt, 9))), self.dt
        if self.n_steps > 0:
            return self.n_steps, self.T / self.n_steps
        n = max(1, math.ceil(round(self.T / (self.c_dt * self.epsilon ** 3), 9)))
        return n, self.T / n

    def step_config(self, dt: float) -> StepConfig:
        return StepConfig(dt=dt, stabilization=self.stabilization,
                          fixed_point_tol=self.fixed_point_tol,
                          max_inner_iterations=self.max_inner_iterations, tol_box=self.tol_box)

    def geometry_object(self):
        if self.geometry == "circle":
            return Circle((self.center_x, self.center_y), self.radius)
        if self.geometry == "stripe":
            return Stripe(self.stripe_position, self.stripe_width or None)
        return Circles(tuple(Circle((x, y), r) for x, y, r in self.circles))

    def sweep_plan(self) -> SweepPlan:
        return SweepPlan(self.epsilons, self.model_spec(self.epsilons[0]), self.geometry_object(),
                         sigma0=self.initial_sigma, h_ratio=self.h_ratio, c_dt=self.c_dt,
                         stabilization=self.stabilization, n_steps=self.n_steps or None,
                         clearance=self.clearance, fixed_point_tol=self.fixed_point_tol,
                         max_inner_iterations=self.max_inner_iterations, tol_box=self.tol_box)

    def perturbation(self, grid: Grid):
        if self.noise == 0:
            return 0.0
        rng = np.random.default_rng(self.seed)
        return self.noise * rng.uniform(-1.0, 1.0, grid.shape)


def _cross_checks(values: dict, lines: dict, path):
    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}", lines.get(key), path)

    if values["dim"] == 1 and values["geometry"] != "stripe":
        fail("geometry", "1D runs need geometry = stripe")
    if values["geometry"] == "circles" and not values["circles"]:
        fail("circles", "geometry = circles needs a non-empty circle list")
    for x, y, r in values["circles"]:
        if r <= 0:
            fail("circles", "radii must be positive")


def parse_config_text(text: str, path=None) -> RunConfig:
    values = {k: s.default for k, s in SCHEMA.items()}
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", no, path)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", no, path)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", no, path)
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", no, path)
        spec = SCHEMA[key]
        if section is not None and section != spec.section:
            raise ConfigError(f"key {key!r} belongs to [{spec.section}], not [{section}]", no, path)
        if key in lines:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", no, path)
        try:
            v = _convert(key, spec, val)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot read {val!r} as {spec.kind}: {exc}", no, path) from None
        if v is not None and spec.check is not None and not spec.check(v):
            raise ConfigError(f"{key} = {val} violates constraint {spec.rule}", no, path)
        values[key] = v
        lines[key] = no
    _cross_checks(values, lines, path)
    return RunConfig(**values)


def parse_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from None
    return parse_config_text(text, path)


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(":".join(repr(c) for c in item) for item in v)
        return ", ".join(repr(x) for x in v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved configuration, including derived grid sizes and steps."""
    out = []
    for section in SECTIONS:
        out.append(f"[{section}]")
        for key, spec in SCHEMA.items():
            if spec.section == section:
                out.append(f"{key} = {_fmt(getattr(cfg, key))}")
        if section == "grid":
            nx, ny = cfg.grid_sizes()
            out.append(f"# resolved grid: {nx} x {ny}")
        elif section == "time":
            n, dt = cfg.time_steps()
            out.append(f"# resolved time stepping: {n} steps of dt = {dt!r}")
        elif section == "sweep":
            for eps in cfg.epsilons:
                nx, ny = cfg.grid_sizes(eps)
                out.append(f"# sweep epsilon = {eps!r}: grid {nx} x {ny}")
        out.append("")
    return "\n".join(out)
