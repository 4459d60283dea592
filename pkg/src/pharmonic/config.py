"""Solver parameters and the flat ``key = value`` configuration format."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field, fields

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unreadable, unknown or invalid configuration entries."""


@dataclass(frozen=True)
class SolverConfig:
    """Model and discretization parameters of the penalized, regularized flow."""

    p: float = 1.0
    eps: float = 1e-2
    alpha: float = 2.0
    delta: float = 1e-3
    lam: float = 1.0
    tau: float = 1e-2
    t_final: float = 1.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 100
    quad_degree_zero_order: int = 4
    linear_solver: str = "direct"

    def __post_init__(self):
        if not self.p >= 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        for name in ("eps", "alpha", "delta", "tau", "t_final", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.newton_max_iter < 1:
            raise ConfigError("newton_max_iter must be >= 1")
        if self.quad_degree_zero_order not in (1, 2, 4):
            raise ConfigError("quad_degree_zero_order must be 1, 2 or 4")
        if self.linear_solver not in ("direct", "cg"):
            raise ConfigError(f"linear_solver must be 'direct' or 'cg', got {self.linear_solver!r}")

    @property
    def a_p(self) -> float:
        """Shift inside the regularized gradient norm: eps for p < 2, else 0."""
        return self.eps if self.p < 2 else 0.0

    @property
    def b_p(self) -> float:
        """Weight of the added Dirichlet term, eps**alpha."""
        return self.eps**self.alpha

    @property
    def n_steps(self) -> int:
        """Number of time steps L = ceil(T / tau), tolerant to rounding in T / tau."""
        ratio = self.t_final / self.tau
        n = math.ceil(ratio - 1e-9 * max(1.0, ratio))
        return max(n, 1)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


# External key names; ``lambda`` is a Python keyword so the field is ``lam``.
SOLVER_KEYS = {f.name: f.name for f in fields(SolverConfig)}
SOLVER_KEYS["lambda"] = SOLVER_KEYS.pop("lam")


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs: solver parameters plus mesh, data and IO keys."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    n_components: int = 3
    nx: int = 32
    ny: int = 32
    lx: float = 1.0
    ly: float = 1.0
    preset: str = "smoothed-vortex"
    vortex_radius: float = 0.1
    seed: int = 0
    fallback: tuple = (0.0, 0.0, 1.0)
    stationarity_tol: float = 0.0
    snapshot_every: int = 0
    input: str = ""
    output: str = ""
    sweep_axis: str = ""
    sweep_values: tuple = ()

    def __post_init__(self):
        if self.n_components not in (2, 3):
            raise ConfigError(f"n_components must be 2 or 3, got {self.n_components}")
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("nx and ny must be >= 1")
        if not (self.lx > 0 and self.ly > 0):
            raise ConfigError("lx and ly must be > 0")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.stationarity_tol < 0:
            raise ConfigError("stationarity_tol must be >= 0")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def items(self) -> list[tuple[str, str]]:
        """Fully resolved configuration as ordered (key, text) pairs."""
        out = []
        for f in fields(SolverConfig):
            key = "lambda" if f.name == "lam" else f.name
            out.append((key, _format(getattr(self.solver, f.name))))
        for f in fields(self):
            if f.name != "solver":
                out.append((f.name, _format(getattr(self, f.name))))
        return out


PRESETS = ("constant", "smoothed-vortex", "random-unit")

_RUN_TYPES = {f.name: f.type for f in fields(RunConfig) if f.name != "solver"}
_SOLVER_TYPES = {f.name: f.type for f in fields(SolverConfig)}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, text: str, typ: str):
    text = text.strip()
    try:
        if typ == "float":
            return float(text)
        if typ == "int":
            f = float(text)
            if f != int(f):
                raise ValueError
            return int(f)
        if typ == "str":
            return text
        if typ == "tuple":
            return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for key {key!r}") from None
    raise AssertionError(typ)


def parse_assignments(lines, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are fatal."""
    known = set(SOLVER_KEYS) | set(_RUN_TYPES)
    out: dict[str, str] = {}
    errors = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            errors.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        out[key] = value
    if errors:
        raise ConfigError("\n".join(errors))
    return out


def build_config(values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    solver_kw, run_kw = {}, {}
    for key, text in values.items():
        if key in SOLVER_KEYS:
            name = SOLVER_KEYS[key]
            solver_kw[name] = _convert(key, text, _SOLVER_TYPES[name])
        elif key in _RUN_TYPES:
            run_kw[key] = _convert(key, text, _RUN_TYPES[key])
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        solver = base.solver.replace(**solver_kw)
        return base.replace(solver=solver, **run_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file, then ``key=value`` overrides, in that precedence."""
    values: dict[str, str] = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        values.update(parse_assignments(text, source=str(path)))
    values.update(parse_assignments(overrides, source="--set"))
    cfg = build_config(values)
    adjusted = cfg.solver.n_steps * cfg.solver.tau
    if abs(adjusted - cfg.solver.t_final) > 1e-12 * max(1.0, cfg.solver.t_final):
        log.warning("t_final=%g is not a multiple of tau=%g; running to T=%r",
                    cfg.solver.t_final, cfg.solver.tau, adjusted)
    return cfg
