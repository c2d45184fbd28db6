"""YAML experiment configs with line-precise validation."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace

import yaml

from .det_chains import parse_complex
from .ensembles import MODELS, ConfigurationError, EnsembleSpec
from .quaternion import BASIS

EXPERIMENTS = ("locallaw", "flow", "stats", "schur", "detchains")
REQUIRED = object()


class ConfigError(ConfigurationError):
    """Schema violation; ``line`` is 1-based, or None when it is not tied to a line."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def git_blob_hash(data: bytes) -> str:
    """Content hash as computed by ``git hash-object``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ---------------------------------------------------------------- converters


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def _pos_int(v):
    v = _int(v)
    if v < 1:
        raise ValueError(f"must be positive, got {v}")
    return v


def _float(v):
    if isinstance(v, str):
        # YAML 1.1 reads exponent forms such as 1e-3 as strings
        try:
            v = float(v)
        except ValueError:
            raise ValueError(f"expected a number, got {v!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _pos_float(v):
    v = _float(v)
    if v <= 0:
        raise ValueError(f"must be positive, got {v}")
    return v


def _complex(v):
    if isinstance(v, bool):
        raise ValueError(f"expected a complex number, got {v!r}")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, str):
        return parse_complex(v)
    raise ValueError(f"expected a complex number, got {v!r}")


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError(f"expected true/false, got {v!r}")
    return v


def _str(v):
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _choice(*options):
    def conv(v):
        v = _str(v)
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}; got {v!r}")
        return v
    return conv


def _list_of(conv):
    def inner(v):
        if not isinstance(v, list) or not v:
            raise ValueError("expected a non-empty list")
        return tuple(conv(x) for x in v)
    return inner


def _optional(conv):
    def inner(v):
        return None if v is None else conv(v)
    return inner


def _pattern(v):
    names = [s.strip() for s in _str(v).split(",")]
    bad = [s for s in names if s not in BASIS]
    if bad:
        raise ValueError(f"unknown deformation {bad[0]!r}; use {', '.join(BASIS)}")
    return tuple(names)


def _sign(v):
    v = _int(v)
    if v not in (1, -1):
        raise ValueError("signs must be +1 or -1")
    return v


# ---------------------------------------------------------------- blocks


@dataclass(frozen=True)
class EnsembleBlock:
    n: int
    epsilon: float = 1.0
    model: str = "ginibre"
    base_law: str = "gaussian"
    delta: float = 1.0
    iid_parts: bool = False


@dataclass(frozen=True)
class GeometryBlock:
    z: complex = 0.3
    delta: float = 0.0
    tau: float = 0.5
    etas: tuple | None = None
    eta_count: int = 4
    energy: float = 0.0
    signs: tuple | None = None
    ns: tuple | None = None
    t: float | None = None
    w0: complex = 1j
    eta_end: float = 0.05
    dt: float = 1e-2
    method: str = "exact"


@dataclass(frozen=True)
class ChainBlock:
    patterns: tuple = (("E+",),)
    mode: str = "averaged"
    text: str | None = None
    big_m: int = 8
    k: int = 1
    ratio_bound: float = 10.0


@dataclass(frozen=True)
class SamplingBlock:
    seed: int
    samples: int = 20
    threads: int | None = None


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"


SCHEMA = {
    "ensemble": (EnsembleBlock, {
        "n": (_pos_int, REQUIRED), "epsilon": (_pos_float, 1.0), "model": (_choice(*MODELS), "ginibre"),
        "base_law": (_str, "gaussian"), "delta": (_pos_float, 1.0), "iid_parts": (_bool, False)}),
    "geometry": (GeometryBlock, {
        "z": (_complex, 0.3), "delta": (_float, 0.0), "tau": (_pos_float, 0.5),
        "etas": (_optional(_list_of(_pos_float)), None), "eta_count": (_pos_int, 4),
        "energy": (_float, 0.0), "signs": (_optional(_list_of(_sign)), None),
        "ns": (_optional(_list_of(_pos_int)), None), "t": (_optional(_pos_float), None),
        "w0": (_complex, 1j), "eta_end": (_pos_float, 0.05), "dt": (_pos_float, 1e-2),
        "method": (_choice("exact", "euler"), "exact")}),
    "chain": (ChainBlock, {
        "patterns": (_list_of(_pattern), (("E+",),)), "mode": (_choice("averaged", "isotropic"), "averaged"),
        "text": (_optional(_str), None), "big_m": (_pos_int, 8), "k": (_pos_int, 1),
        "ratio_bound": (_pos_float, 10.0)}),
    "sampling": (SamplingBlock, {
        "seed": (_int, REQUIRED), "samples": (_pos_int, 20), "threads": (_optional(_pos_int), None)}),
    "output": (OutputBlock, {"dir": (_str, "out")}),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    ensemble: EnsembleBlock
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    chain: ChainBlock = field(default_factory=ChainBlock)
    sampling: SamplingBlock = field(default_factory=lambda: SamplingBlock(seed=0))
    output: OutputBlock = field(default_factory=OutputBlock)
    config_hash: str = ""
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def seed(self) -> int:
        return self.sampling.seed

    def ensemble_spec(self) -> EnsembleSpec:
        e = self.ensemble
        return EnsembleSpec(n=e.n, epsilon=e.epsilon, model=e.model, base_law=e.base_law,
                            seed=self.sampling.seed, delta=e.delta, iid_parts=e.iid_parts)

    def with_overrides(self, seed=None, threads=None, out=None, k=None, t=None, z=None,
                       samples=None) -> "ExperimentConfig":
        """Copy with command-line overrides applied; None leaves a field unchanged."""
        cfg = self
        if seed is not None or threads is not None or samples is not None:
            cfg = replace(cfg, sampling=replace(
                cfg.sampling, seed=cfg.sampling.seed if seed is None else int(seed),
                threads=cfg.sampling.threads if threads is None else int(threads),
                samples=cfg.sampling.samples if samples is None else int(samples)))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
        if k is not None:
            cfg = replace(cfg, chain=replace(cfg.chain, k=int(k)))
        if t is not None or z is not None:
            cfg = replace(cfg, geometry=replace(
                cfg.geometry, t=cfg.geometry.t if t is None else float(t),
                z=cfg.geometry.z if z is None else complex(z)))
        return cfg

    def as_dict(self) -> dict:
        out = {"experiment": self.experiment}
        for name in SCHEMA:
            block = getattr(self, name)
            out[name] = {f.name: _plain(getattr(block, f.name)) for f in fields(block)}
        return out


def _plain(v):
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+}j"
    if isinstance(v, tuple):
        return [",".join(x) if isinstance(x, tuple) else _plain(x) for x in v]
    return v


# ---------------------------------------------------------------- parsing


def _line(node) -> int:
    return node.start_mark.line + 1


def _mapping(node, what: str, source: str) -> list:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{what} must be a mapping", _line(node), source)
    seen = {}
    for key, _ in node.value:
        if not isinstance(key, yaml.ScalarNode):
            raise ConfigError(f"{what}: keys must be plain names", _line(key), source)
        if key.value in seen:
            raise ConfigError(f"{what}: duplicate key {key.value!r}", _line(key), source)
        seen[key.value] = True
    return node.value


def _scalar_value(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _parse_block(name: str, node, source: str, lines: dict):
    cls, spec = SCHEMA[name]
    block_line = lines.get(name, _line(node))
    values = {}
    for key, val in _mapping(node, name, source):
        if key.value not in spec:
            raise ConfigError(f"unknown key {name}.{key.value}; allowed: {', '.join(spec)}",
                              _line(key), source)
        conv, _ = spec[key.value]
        try:
            values[key.value] = conv(_scalar_value(val))
        except ValueError as err:
            raise ConfigError(f"{name}.{key.value}: {err}", _line(val), source) from None
        lines[f"{name}.{key.value}"] = _line(key)
    for key, (_, default) in spec.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError(f"missing required key {name}.{key}", block_line, source)
            values[key] = default
    return cls(**values)


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a YAML config; every error names its line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"YAML syntax: {getattr(err, 'problem', err)}",
                          mark.line + 1 if mark else None, source) from None
    if root is None:
        raise ConfigError("empty config", 1, source)
    lines = {}
    top = {}
    for key, val in _mapping(root, "config", source):
        if key.value != "experiment" and key.value not in SCHEMA:
            raise ConfigError(f"unknown top-level key {key.value!r}; allowed: experiment, "
                              f"{', '.join(SCHEMA)}", _line(key), source)
        top[key.value] = (key, val)
        lines[key.value] = _line(key)
    if "experiment" not in top:
        raise ConfigError("missing required key experiment", 1, source)
    exp_node = top["experiment"][1]
    try:
        experiment = _choice(*EXPERIMENTS)(_scalar_value(exp_node))
    except ValueError as err:
        raise ConfigError(f"experiment: {err}", _line(exp_node), source) from None
    for name in ("ensemble", "sampling"):
        if name not in top:
            raise ConfigError(f"missing required block {name}"
                              + (" (the seed is mandatory)" if name == "sampling" else ""), 1, source)
    blocks = {name: _parse_block(name, top[name][1], source, lines) for name in SCHEMA if name in top}
    cfg = ExperimentConfig(experiment=experiment, config_hash=git_blob_hash(text.encode()),
                           lines=lines, **blocks)
    validate(cfg, source)
    return cfg


def load(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError("config is not UTF-8", None, str(path)) from None
    return loads(text, source=str(path))


def validate(cfg: ExperimentConfig, source: str = "<config>") -> None:
    """Cross-field constraints of each experiment family."""
    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}", cfg.lines.get(key, cfg.lines.get(key.split(".")[0])), source)

    n = cfg.ensemble.n
    g = cfg.geometry
    if n < 2:
        fail("ensemble.n", "N must be at least 2")
    if cfg.ensemble.model != "ginibre":
        try:
            cfg.ensemble_spec()
        except ValueError as err:
            fail("ensemble.model", str(err))
    exp = cfg.experiment
    if exp == "locallaw":
        if cfg.sampling.samples < 20:
            fail("sampling.samples", "the local-law estimator needs at least 20 samples")
        if g.etas is None:
            from .scalar_law import eta_cap
            hi, src = eta_cap(g.delta)
            for size in g.ns or (n,):
                lo = float(size) ** (-1.0 + g.tau)
                if not 0 < g.tau <= 1:
                    fail("geometry.tau", "tau must lie in (0, 1]")
                if lo > hi:
                    fail("geometry.tau", f"empty eta grid: N^(-1+tau) = {lo:.4g} exceeds the cap "
                                         f"{hi:.4g} ({src}) for N = {size}")
        for p in cfg.chain.patterns:
            if len(p) > 4 and cfg.chain.mode == "averaged":
                fail("chain.patterns", "averaged chains are limited to m <= 4")
    elif exp == "flow":
        if n > 512:
            fail("ensemble.n", "flow runs evaluate exact traces and need N <= 512")
        if g.dt > 1e-2:
            fail("geometry.dt", "step must not exceed 1e-2")
        if g.w0.imag <= 0 or g.eta_end >= g.w0.imag:
            fail("geometry.eta_end", "need 0 < eta_end < Im w0")
        if abs(g.z) >= 1:
            fail("geometry.z", "the flow is defined in the bulk |z| < 1")
    elif exp == "stats":
        if cfg.chain.k not in (1, 2):
            fail("chain.k", "k-point statistics are implemented for k = 1, 2")
        if n > 2048:
            fail("ensemble.n", "dense eigensolves are capped at N = 2048")
        if cfg.sampling.samples < 2:
            fail("sampling.samples", "need at least 2 samples for a standard error")
    elif exp == "schur":
        if abs(g.z) >= 1:
            fail("geometry.z", "Schur sampling needs a bulk point |z| < 1")
    elif exp == "detchains":
        if cfg.chain.text is None:
            fail("chain", "chain.text is required, e.g. 'w=0.1j; B=F; w=-0.1j; B=F~'")
        from .det_chains import parse_chain
        try:
            parse_chain(cfg.chain.text)
        except ValueError as err:
            fail("chain.text", str(err))
