"""TOML model documents.

Schema (unknown keys are rejected)::

    [meta]
    name = "M2"          # optional
    n = 2                # number of states
    m = 1                # size of R1 = {1..m}
    C = 2.0              # tail cutoff
    kappa = 0            # 0: ODE slow motion, 1: unit diffusion
    vinf = 1.5           # shared drift beyond |z| >= C
    grid_step = 0.001    # optional validation grid step

    [rates.q_<i>_<j>]    # one table per ordered pair i != j (1-based)
    left = 1.0           # value for z <= -C
    right = 0.0          # value for z >= C
    table = [[z, q], ...]   # piecewise-linear core, constant past its ends
    qbar = 1.0           # optional: adds qbar * (-z)**power * (1 + beta(z)) for z < 0
    power = 1.0          # optional, default 1
    beta = [[z, b], ...] # optional piecewise-linear correction, beta(0-) = 0

    [drifts.v_<i>]
    table = [[z, v], ...]
"""
from __future__ import annotations

import hashlib
import re
from importlib import resources
from pathlib import Path

import tomli
import tomli_w

from .chain import ChainFamily, Drift, RateFunction, validate_model
from .errors import ParseError

_META_KEYS = {"name", "n", "m", "C", "kappa", "vinf", "grid_step"}
_RATE_KEYS = {"left", "right", "table", "qbar", "power", "beta"}
_PAIR = re.compile(r"^q_(\d+)_(\d+)$")
_STATE = re.compile(r"^v_(\d+)$")

FIXTURES = ("m2", "m3")


def _num(d: dict, key: str, where: str, *, integer: bool = False, default=None):
    if key not in d:
        if default is not None:
            return default
        raise ParseError(f"{where}.{key} missing")
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"{where}.{key}: expected a number, got {val!r}")
    if integer:
        if not isinstance(val, int):
            raise ParseError(f"{where}.{key}: expected an integer, got {val!r}")
        return val
    return float(val)


def _table(val, where: str) -> tuple[tuple[float, float], ...]:
    if not isinstance(val, list) or not val:
        raise ParseError(f"{where}: expected a non-empty list of [z, value] pairs")
    out = []
    for k, pt in enumerate(val):
        if (
            not isinstance(pt, list)
            or len(pt) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in pt)
        ):
            raise ParseError(f"{where}[{k}]: expected [z, value], got {pt!r}")
        out.append((float(pt[0]), float(pt[1])))
    zs = [p[0] for p in out]
    if any(b <= a for a, b in zip(zs, zs[1:])):
        raise ParseError(f"{where}: knots must be strictly increasing in z")
    return tuple(out)


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ParseError(f"{where}: unknown key(s) {', '.join(extra)}")


def family_from_dict(doc: dict) -> ChainFamily:
    """Structural parse of a model document into an unvalidated family."""
    _reject_unknown(doc, {"meta", "rates", "drifts"}, "document")
    for sec in ("meta", "rates", "drifts"):
        if not isinstance(doc.get(sec), dict):
            raise ParseError(f"[{sec}] section missing")
    meta = doc["meta"]
    _reject_unknown(meta, _META_KEYS, "meta")
    n = _num(meta, "n", "meta", integer=True)
    m = _num(meta, "m", "meta", integer=True)
    kappa = _num(meta, "kappa", "meta", integer=True)
    C = _num(meta, "C", "meta")
    vinf = _num(meta, "vinf", "meta")
    grid_step = _num(meta, "grid_step", "meta", default=1e-3)
    name = meta.get("name", "")
    if not isinstance(name, str):
        raise ParseError("meta.name: expected a string")
    if n < 2:
        raise ParseError(f"meta.n: need at least two states, got {n}")

    rates = {}
    for key, spec in doc["rates"].items():
        where = f"rates.{key}"
        mt = _PAIR.match(key)
        if not mt:
            raise ParseError(f"{where}: expected a key of the form q_<i>_<j>")
        i, j = int(mt.group(1)), int(mt.group(2))
        if i == j or not (1 <= i <= n and 1 <= j <= n):
            raise ParseError(f"{where}: pair ({i}, {j}) is not an off-diagonal pair of 1..{n}")
        if not isinstance(spec, dict):
            raise ParseError(f"{where}: expected a table")
        _reject_unknown(spec, _RATE_KEYS, where)
        if "table" not in spec:
            raise ParseError(f"{where}.table missing")
        rates[(i, j)] = RateFunction(
            left=_num(spec, "left", where),
            right=_num(spec, "right", where),
            table=_table(spec["table"], f"{where}.table"),
            qbar=_num(spec, "qbar", where, default=0.0),
            power=_num(spec, "power", where, default=1.0),
            beta=_table(spec["beta"], f"{where}.beta") if "beta" in spec else (),
        )
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i != j and (i, j) not in rates:
                raise ParseError(f"rates.q_{i}_{j} missing")

    drifts: dict[int, Drift] = {}
    for key, spec in doc["drifts"].items():
        where = f"drifts.{key}"
        mt = _STATE.match(key)
        if not mt or not 1 <= int(mt.group(1)) <= n:
            raise ParseError(f"{where}: expected a key v_<i> with 1 <= i <= {n}")
        if not isinstance(spec, dict):
            raise ParseError(f"{where}: expected a table")
        _reject_unknown(spec, {"table"}, where)
        if "table" not in spec:
            raise ParseError(f"{where}.table missing")
        drifts[int(mt.group(1))] = Drift(_table(spec["table"], f"{where}.table"))
    for i in range(1, n + 1):
        if i not in drifts:
            raise ParseError(f"drifts.v_{i} missing")

    return ChainFamily(
        n=n, m=m, C=C, kappa=kappa, vinf=vinf,
        rates=rates,
        drifts=tuple(drifts[i] for i in range(1, n + 1)),
        name=name,
        grid_step=grid_step,
    )


def family_to_dict(model: ChainFamily) -> dict:
    meta = {"n": model.n, "m": model.m, "C": float(model.C), "kappa": model.kappa,
            "vinf": float(model.vinf)}
    if model.name:
        meta = {"name": model.name, **meta}
    if model.grid_step != 1e-3:
        meta["grid_step"] = float(model.grid_step)
    rates = {}
    for (i, j) in sorted(model.rates):
        f = model.rates[(i, j)]
        spec = {"left": float(f.left), "right": float(f.right),
                "table": [[float(a), float(b)] for a, b in f.table]}
        if f.qbar:
            spec["qbar"] = float(f.qbar)
        if f.power != 1.0:
            spec["power"] = float(f.power)
        if f.beta:
            spec["beta"] = [[float(a), float(b)] for a, b in f.beta]
        rates[f"q_{i}_{j}"] = spec
    drifts = {f"v_{i}": {"table": [[float(a), float(b)] for a, b in d.table]}
              for i, d in enumerate(model.drifts, start=1)}
    return {"meta": meta, "rates": rates, "drifts": drifts}


def dump_model_config(model: ChainFamily) -> str:
    return tomli_w.dumps(family_to_dict(model))


def parse_model_config(text: str, *, validate: bool = True) -> ChainFamily:
    """Parse a TOML model document; validated unless ``validate=False``."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"malformed document: {exc}") from exc
    model = family_from_dict(doc)
    return validate_model(model) if validate else model


def model_hash(model: ChainFamily) -> str:
    return hashlib.sha256(dump_model_config(model).encode()).hexdigest()[:16]


def fixture_text(name: str) -> str:
    return resources.files("avgraph.fixtures").joinpath(f"{name.lower()}.toml").read_text()


def load_fixture(name: str) -> ChainFamily:
    """Bundled canonical models: ``"m2"`` or ``"m3"``."""
    if name.lower() not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return parse_model_config(fixture_text(name))


def load_model(path_or_name: str | Path) -> ChainFamily:
    """Read a model file, or a bundled fixture by name (``m2``, ``m2.toml``, ``m3``, ...)."""
    p = Path(path_or_name)
    if not p.exists() and p.stem.lower() in FIXTURES and p.parent == Path("."):
        return load_fixture(p.stem)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read model file {p}: {exc}") from exc
    return parse_model_config(text)
