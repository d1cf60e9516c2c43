"""Flat ``key = value`` experiment configuration files.

Values are numbers, bare words, or bracketed arrays (nested for matrices).
Numbers may be written as fractions such as ``8/3``.  ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from ..analysis import DEFAULT_THRESHOLDS
from ..models import REGISTRY, get_model
from ..simulator import METHODS, SimSetup, check_spd


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists field diagnostics."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    model: str
    x0: list
    y0: list
    theta: list
    methods: list = field(default_factory=lambda: ["chen", "proposed-augmented"])
    r: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    delta: float = 0.1
    h: float = 0.001
    t_final: float = 1000.0
    decimation: int = 100
    alpha0: list | None = None
    k: float | None = 10.0
    l: float | None = 0.1
    K: list | None = None
    L: list | None = None
    report_index: int = 1
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    cov_window: float = 20.0
    literal_edot: bool = False
    adapt: bool = True
    out: str | None = None

    def gain_matrices(self, n):
        K = np.asarray(self.K, dtype=float) if self.K is not None else self.k * np.eye(n)
        L = np.asarray(self.L, dtype=float) if self.L is not None else self.l * np.eye(n)
        return K, L

    def runs(self):
        """``(run_id, method, r)`` for every simulation in the sweep."""
        out = []
        for method in self.methods:
            if method == "proposed-augmented":
                out += [(f"aug-r{r}", method, r) for r in self.r]
            else:
                out.append((method, method, 0))
        return out

    def setup(self, method, r) -> SimSetup:
        model = get_model(self.model)
        K, L = self.gain_matrices(model.n)
        return SimSetup(
            model=model, method=method, r=r, delta=self.delta, h=self.h,
            t_final=self.t_final, x0=self.x0, y0=self.y0, theta=self.theta,
            alpha0=self.alpha0, K=K, L=L, decimation=self.decimation,
            adapt=self.adapt, literal_edot=self.literal_edot,
        )

    def validate(self):
        problems = []
        if self.model not in REGISTRY:
            problems.append(f"model: unknown {self.model!r} (known: {', '.join(sorted(REGISTRY))})")
            raise ConfigError(problems)
        model = get_model(self.model)
        for name, size in (("x0", model.n), ("y0", model.n), ("theta", model.m), ("alpha0", model.m)):
            v = getattr(self, name)
            if v is None and name == "alpha0":
                continue
            if not isinstance(v, list) or len(v) != size:
                problems.append(f"{name}: expected {size} numbers, got {v!r}")
        if not self.methods:
            problems.append("methods: at least one method is required")
        for mth in self.methods:
            if mth not in METHODS:
                problems.append(f"methods: unknown {mth!r} (expected {', '.join(METHODS)})")
        if "proposed-augmented" in self.methods:
            if not self.r or any((not isinstance(v, int)) or v < 0 for v in self.r):
                problems.append(f"r: expected nonnegative integers, got {self.r!r}")
        if not self.h > 0:
            problems.append("h: must be positive")
        if not self.delta > 0:
            problems.append("delta: must be positive")
        elif self.h > 0:
            ratio = self.delta / self.h
            if abs(ratio - round(ratio)) > 1e-9 * ratio:
                problems.append(f"delta: {self.delta} is not an integer multiple of h={self.h}")
        if self.t_final < 0:
            problems.append("t_final: must be nonnegative")
        if not isinstance(self.decimation, int) or self.decimation < 1:
            problems.append("decimation: must be a positive integer")
        if not (isinstance(self.report_index, int) and 1 <= self.report_index <= model.m):
            problems.append(f"report_index: must be an integer in 1..{model.m}")
        th = self.thresholds
        if not th or any(t <= 0 for t in th) or any(b >= a for a, b in zip(th, th[1:])):
            problems.append(f"thresholds: must be positive and strictly decreasing, got {th!r}")
        if self.cov_window <= 0:
            problems.append("cov_window: must be positive")
        for name, scalar in (("K", "k"), ("L", "l")):
            if getattr(self, name) is None and getattr(self, scalar) is None:
                problems.append(f"{scalar}: a scalar gain or a {name} matrix is required")
        if not problems:
            K, L = self.gain_matrices(model.n)
            for name, G in (("K", K), ("L", L)):
                try:
                    check_spd(G, model.n, name)
                except ValueError as exc:
                    problems.append(f"{name}: {exc}")
        if problems:
            raise ConfigError(problems)
        return self


_INT_FIELDS = {"decimation", "report_index"}
_BOOL_FIELDS = {"literal_edot", "adapt"}
_STR_FIELDS = {"model", "out"}


def _parse_scalar(tok: str):
    tok = tok.strip()
    if tok.lower() in ("true", "false"):
        return tok.lower() == "true"
    try:
        frac = Fraction(tok)
    except (ValueError, ZeroDivisionError):
        return tok
    if frac.denominator == 1 and "." not in tok and "e" not in tok.lower():
        return int(frac)
    return float(frac)


def _parse_value(text: str):
    text = text.strip()
    if not text.startswith("["):
        return _parse_scalar(text)
    stack = [[]]
    tok = ""
    for ch in text:
        if ch == "[":
            stack.append([])
        elif ch in ",]":
            if tok.strip():
                stack[-1].append(_parse_scalar(tok))
            tok = ""
            if ch == "]":
                if len(stack) < 2:
                    raise ValueError(f"unbalanced brackets in {text!r}")
                done = stack.pop()
                stack[-1].append(done)
        elif ch.isspace():
            tok += ch
        else:
            tok += ch
    if len(stack) != 1 or len(stack[0]) != 1 or tok.strip():
        raise ValueError(f"malformed array {text!r}")
    return stack[0][0]


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in known:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            v = _parse_value(val)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
            continue
        if key in _STR_FIELDS:
            v = str(val)
        elif key in ("methods",):
            v = [str(x) for x in (v if isinstance(v, list) else [v])]
        elif key in ("r", "thresholds") and not isinstance(v, list):
            v = [v]
        elif key in _INT_FIELDS and isinstance(v, float) and v.is_integer():
            v = int(v)
        elif key in _BOOL_FIELDS and not isinstance(v, bool):
            problems.append(f"{key}: expected true or false")
            continue
        values[key] = v
    for req in ("model", "x0", "y0", "theta"):
        if req not in values:
            problems.append(f"{req}: missing required key")
    if problems:
        raise ConfigError(problems)
    for key in ("x0", "y0", "theta", "alpha0", "thresholds"):
        if key in values and isinstance(values[key], list):
            try:
                values[key] = [float(x) for x in values[key]]
            except (TypeError, ValueError):
                problems.append(f"{key}: expected numbers")
    for key in ("K", "L"):
        if key in values:
            try:
                values[key] = [[float(x) for x in row] for row in values[key]]
            except (TypeError, ValueError):
                problems.append(f"{key}: expected a nested numeric array")
    for key in ("delta", "h", "t_final", "k", "l", "cov_window"):
        if key in values:
            if isinstance(values[key], bool) or not isinstance(values[key], (int, float)):
                problems.append(f"{key}: expected a number")
            else:
                values[key] = float(values[key])
    if problems:
        raise ConfigError(problems)
    # explicit matrices override the scalar defaults
    if "K" in values and "k" not in values:
        values["k"] = None
    if "L" in values and "l" not in values:
        values["l"] = None
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    path = str(path)
    if not Path(path).exists() and path in bundled_configs():
        return parse_config(bundled_text(path))
    return parse_config(Path(path).read_text())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def bundled_configs():
    """Names of the configurations shipped with the package."""
    root = resources.files(__package__) / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def bundled_text(name: str) -> str:
    return (resources.files(__package__) / "configs" / f"{name}.cfg").read_text()
