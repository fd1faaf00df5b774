"""YAML run configuration.

See ``docs/config.md`` for the schema.  Every error raised while reading a
config is a :class:`~nhctmc.errors.ConfigError` carrying the dotted field
path and the line it came from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, NHCTMCError
from .policy import ActionModel, PiecewisePolicy, compile_policy, mm1_action_model
from .rates import CallableRates, PiecewiseConstantRates, StateSpace, truncate_birth_death

__all__ = ["RunConfig", "load_config", "parse_config", "rate_formula", "time_formula"]


class _LineDict(dict):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.line = None
        self.lines = {}


class _LineList(list):
    line = None
    lines: list


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    out = _LineDict()
    out.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = v_node.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _LineList(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    out.lines = [v.start_mark.line + 1 for v in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


class _Node:
    """A config value with its dotted path and source line."""

    def __init__(self, value, path: str, line=None):
        self.value = value
        self.path = path
        self.line = line if line is not None else getattr(value, "line", None)

    def error(self, msg):
        return ConfigError(msg, self.path or None, self.line)

    def has(self, key) -> bool:
        return isinstance(self.value, dict) and key in self.value

    def child(self, key, default=...) -> "_Node":
        if not isinstance(self.value, dict):
            raise self.error("expected a mapping")
        path = f"{self.path}.{key}" if self.path else str(key)
        if key not in self.value:
            if default is not ...:
                return _Node(default, path, self.line)
            raise ConfigError("missing required field", path, self.line)
        return _Node(self.value[key], path, getattr(self.value, "lines", {}).get(key))

    def items(self):
        if not isinstance(self.value, list):
            raise self.error("expected a list")
        lines = getattr(self.value, "lines", [self.line] * len(self.value))
        return [_Node(v, f"{self.path}[{k}]", lines[k]) for k, v in enumerate(self.value)]

    def mapping(self):
        if not isinstance(self.value, dict):
            raise self.error("expected a mapping")
        return [(k, self.child(k)) for k in self.value]

    def number(self, positive=False, nonneg=False, allow_inf=False) -> float:
        v = self.value
        if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
            v = math.inf
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise self.error(f"expected a number, got {v!r}") from None
        if isinstance(v, bool) or math.isnan(x) or (math.isinf(x) and not allow_inf):
            raise self.error(f"expected a finite number, got {v!r}")
        if positive and not x > 0:
            raise self.error(f"must be positive, got {x}")
        if nonneg and x < 0:
            raise self.error(f"must be nonnegative, got {x}")
        return x

    def integer(self, minimum=None) -> int:
        v = self.value
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.error(f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise self.error(f"must be at least {minimum}, got {v}")
        return v

    def matrix(self) -> np.ndarray:
        rows = self.items()
        out = [[c.number() for c in r.items()] for r in rows]
        if len({len(r) for r in out}) > 1:
            raise self.error("rows have different lengths")
        return np.array(out, dtype=float)


def rate_formula(node: _Node):
    """State-indexed rate ``i -> value`` from a named formula."""
    form = node.child("form").value
    if form == "constant":
        v = node.child("value").number()
        return lambda i: v
    if form == "linear":
        a, b = node.child("a").number(), node.child("b", 0.0).number()
        return lambda i: a * i + b
    if form == "quadratic":
        a, b, c = (node.child(k, 0.0).number() for k in ("a", "b", "c"))
        return lambda i: a * i * i + b * i + c
    raise node.child("form").error(f"unknown rate formula {form!r} (constant, linear, quadratic)")


def time_formula(node: _Node, horizon: float):
    """Time-indexed rate ``t -> value``; returns (fn, sup |fn|, jump times)."""
    form = node.child("form").value
    if form == "constant":
        v = node.child("value").number()
        return (lambda t: v), abs(v), ()
    if form == "linear":
        a, b = node.child("a").number(), node.child("b").number()
        return (lambda t: a + b * t), max(abs(a), abs(a + b * horizon)), ()
    if form == "sinusoid":
        a, b = node.child("a").number(), node.child("b").number()
        w, phi = node.child("omega", 1.0).number(), node.child("phi", 0.0).number()
        return (lambda t: a + b * math.sin(w * t + phi)), abs(a) + abs(b), ()
    if form == "step":
        at = node.child("at").number()
        lo, hi = node.child("before").number(), node.child("after").number()
        return (lambda t: lo if t < at else hi), max(abs(lo), abs(hi)), (at,)
    raise node.child("form").error(f"unknown time formula {form!r} (constant, linear, sinusoid, step)")


def _labels(node: _Node, n: int | None):
    if not node.has("states"):
        if n is None:
            raise node.error("cannot infer the number of states")
        return StateSpace.range(n)
    st = node.child("states")
    labels = [c.value for c in st.items()]
    if n is not None and len(labels) != n:
        raise st.error(f"{len(labels)} labels but matrices are {n}x{n}")
    try:
        return StateSpace(tuple(labels))
    except ValueError as e:
        raise st.error(str(e)) from None


def _block(node: _Node, n: int | None) -> np.ndarray:
    if isinstance(node.value, dict):
        trip = node.child("sparse")
        if n is None:
            raise node.error("sparse blocks need 'states' or 'size'")
        q = np.zeros((n, n))
        diag_set = set()
        for t in trip.items():
            parts = t.items()
            if len(parts) != 3:
                raise t.error("triplet must be [i, j, rate]")
            i, j = parts[0].integer(0), parts[1].integer(0)
            if i >= n or j >= n:
                raise t.error(f"index out of range for {n} states")
            q[i, j] = parts[2].number()
            if i == j:
                diag_set.add(i)
        for i in range(n):
            if i not in diag_set:
                q[i, i] = -(q[i].sum() - q[i, i])
        return q
    return node.matrix()


def _piecewise(node: _Node) -> PiecewiseConstantRates:
    n = None
    if node.has("states"):
        n = len(node.child("states").items())
    elif node.has("size"):
        n = node.child("size").integer(1)
    blocks_node = node.child("blocks")
    first = blocks_node.items()
    if n is None and first and isinstance(first[0].value, list):
        n = len(first[0].value)
    blocks = [_block(b, n) for b in first]
    if not blocks:
        raise blocks_node.error("need at least one block")
    n = blocks[0].shape[0]
    for b, node_b in zip(blocks, first):
        if b.shape != (n, n):
            raise node_b.error(f"block has shape {b.shape}, expected {(n, n)}")
    bp_node = node.child("breakpoints", None)
    if bp_node.value is None:
        horizon = node.child("horizon", math.inf).number(positive=True, allow_inf=True)
        bps = [0.0, horizon]
    else:
        bps = [c.number(nonneg=True, allow_inf=True) for c in bp_node.items()]
    space = _labels(node, n)
    try:
        return PiecewiseConstantRates(space, bps, np.array(blocks))
    except (ValueError, NHCTMCError) as e:
        raise (bp_node if bp_node.value is not None else blocks_node).error(str(e)) from None


def _birth_death(node: _Node) -> PiecewiseConstantRates:
    size = node.child("size").integer(1)
    horizon = node.child("horizon", math.inf).number(positive=True, allow_inf=True)
    birth = rate_formula(node.child("birth"))
    death = rate_formula(node.child("death", {"form": "constant", "value": 0.0}))
    try:
        return truncate_birth_death(birth, death, size, horizon)
    except NHCTMCError as e:
        raise node.error(str(e)) from None


def _policy(node: _Node):
    size = node.child("size").integer(1)
    if node.has("actions"):
        acts_node = node.child("actions")
        rows = []
        for st in acts_node.items():
            acts = {}
            for name, row in st.mapping():
                acts[name] = np.array([c.number() for c in row.items()])
            rows.append(acts)
        try:
            model = ActionModel(StateSpace.range(size), tuple(rows))
        except (ValueError, NHCTMCError) as e:
            raise acts_node.error(str(e)) from None
    else:
        arrival = node.child("arrival").number(nonneg=True)
        services = {k: v.number(nonneg=True) for k, v in node.child("services").mapping()}
        model = mm1_action_model(size, arrival, services)
    choices = []
    sched = node.child("schedule")
    for ep in sched.items():
        if isinstance(ep.value, list):
            choice = tuple(c.value for c in ep.items())
        else:
            choice = tuple([ep.value] * size)
        choices.append(choice)
    policy = PiecewisePolicy(tuple(choices))
    try:
        return compile_policy(model, policy), model, policy
    except (ValueError, NHCTMCError) as e:
        raise sched.error(str(e)) from None


def _callable(node: _Node) -> CallableRates:
    size = node.child("size").integer(1)
    horizon = node.child("horizon").number(positive=True)
    entries, bounds, disc = [], np.zeros(size), set(
        c.number() for c in node.child("discontinuities", []).items()
    )
    for e in node.child("entries", []).items():
        i, j = e.child("i").integer(0), e.child("j").integer(0)
        if i >= size or j >= size or i == j:
            raise e.error("entry needs distinct in-range indices i, j")
        fn, sup, jumps = time_formula(e, horizon)
        entries.append((i, j, fn))
        bounds[i] += sup
        disc.update(jumps)
    kills = []
    for k in node.child("kill", []).items():
        i = k.child("i").integer(0)
        if i >= size:
            raise k.error("state index out of range")
        fn, sup, jumps = time_formula(k, horizon)
        kills.append((i, fn))
        bounds[i] += sup
        disc.update(jumps)

    def rates(t):
        q = np.zeros((size, size))
        for i, j, fn in entries:
            q[i, j] = fn(t)
        for i in range(size):
            q[i, i] = -(q[i].sum())
        for i, fn in kills:
            q[i, i] -= fn(t)
        return q

    try:
        return CallableRates(
            _labels(node, size), rates, horizon, float(bounds.max(initial=0.0)),
            tuple(d for d in disc if 0 < d < horizon),
        )
    except ValueError as e:
        raise node.error(str(e)) from None


@dataclass
class RunConfig:
    rates: object
    kind: str
    s: float = 0.0
    t_end: float = 1.0
    h: float = 1e-3
    series_tol: float = 1e-10
    max_order: int = 200
    tol: float = 1e-6
    ck_tol: float = 2e-4
    residual_tol: float = 1e-4
    defect_tol: float = 1e-6
    derivative_tol: float = 1e-3
    probes: int = 6
    oracle_bound: float = 1e-4
    initial_state: int = 0
    n_paths: int = 10000
    raw_csv: bool = False
    seed: int = 0
    z: float = 3.0
    output: str = "out"
    action_model: object = None
    policy: object = None
    source: str | None = None
    extra: dict = field(default_factory=dict)


def parse_config(text: str, source: str | None = None) -> RunConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}", None,
                          mark.line + 1 if mark else None) from None
    root = _Node(data if data is not None else _LineDict(), "", 1)
    if not isinstance(root.value, dict):
        raise root.error("top level must be a mapping")

    model = root.child("model")
    kind = model.child("type").value
    action_model = policy = None
    if kind == "piecewise":
        rates = _piecewise(model)
    elif kind == "birth_death":
        rates = _birth_death(model)
    elif kind == "policy":
        rates, action_model, policy = _policy(model)
    elif kind == "callable":
        rates = _callable(model)
    else:
        raise model.child("type").error(f"unknown model type {kind!r} (piecewise, birth_death, policy, callable)")

    cfg = RunConfig(rates=rates, kind=kind, action_model=action_model, policy=policy, source=source)
    run = root.child("run", _LineDict())
    cfg.s = run.child("s", 0.0).number(nonneg=True)
    default_end = rates.horizon if math.isfinite(rates.horizon) else 1.0
    cfg.t_end = run.child("t_end", default_end).number(nonneg=True)
    if cfg.t_end < cfg.s:
        raise run.child("t_end").error("t_end must not precede s")
    if cfg.t_end > rates.horizon:
        raise run.child("t_end").error(f"t_end beyond the rate horizon {rates.horizon}")
    cfg.h = run.child("h", cfg.h).number(positive=True)
    cfg.series_tol = run.child("series_tol", cfg.series_tol).number(positive=True)
    cfg.max_order = run.child("max_order", cfg.max_order).integer(1)

    ver = root.child("verify", _LineDict())
    for key in ("tol", "ck_tol", "residual_tol", "defect_tol", "derivative_tol"):
        setattr(cfg, key, ver.child(key, getattr(cfg, key)).number(positive=True))
    cfg.probes = ver.child("probes", cfg.probes).integer(2)

    cfg.oracle_bound = root.child("oracle", _LineDict()).child("bound", cfg.oracle_bound).number(positive=True)

    sim = root.child("simulate", _LineDict())
    cfg.initial_state = sim.child("initial_state", 0).integer(0)
    if cfg.initial_state >= rates.size:
        raise sim.child("initial_state").error(f"state index out of range for {rates.size} states")
    cfg.n_paths = sim.child("n_paths", cfg.n_paths).integer(1)
    cfg.seed = sim.child("seed", cfg.seed).integer(0)
    cfg.z = sim.child("z", cfg.z).number(positive=True)
    raw = sim.child("raw_csv", False).value
    if not isinstance(raw, bool):
        raise sim.child("raw_csv").error("expected true or false")
    cfg.raw_csv = raw
    cfg.output = str(root.child("output", cfg.output).value)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_config(text, str(path))
