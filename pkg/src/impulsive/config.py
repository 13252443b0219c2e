"""JSON system configuration: emit, parse, hash.

A config is one JSON object with a ``schema_version`` key. Every block is
parsed strictly: a key that the parsed object would not emit again is an
unknown key and is rejected with its line number.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError
from .fields import VectorFieldSpec
from .geometry import AmbientSpace, Bump, Impulse, SectionPatch
from .integrate import Tolerances
from .perturbation import PerturbationRecord
from .system import ImpulsiveSystem

__all__ = [
    "SCHEMA_VERSION",
    "SystemConfig",
    "emit_config",
    "parse_config",
    "load_config",
    "config_hash",
    "system_to_dict",
    "system_from_dict",
]

SCHEMA_VERSION = 1
TOP_KEYS = (
    "schema_version",
    "name",
    "seed",
    "ambient",
    "field",
    "D",
    "D_hat",
    "impulse",
    "tolerances",
    "singularity_radius",
    "records",
)


def _plain(v):
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if hasattr(v, "item") and not isinstance(v, (str, bytes)):
        return v.item()
    return v


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


def _dc_to_dict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _dc_from_dict(cls, d: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: _tupled(v) for k, v in d.items() if k in names})


def _impulse_to_dict(imp: Impulse) -> dict:
    return {
        "matrix": _plain(imp.matrix),
        "offset": _plain(imp.offset),
        "bumps": [b.to_dict() for b in imp.bumps],
        "inverse_tol": imp.inverse_tol,
    }


def system_to_dict(system: ImpulsiveSystem, seed: int = 0) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": system.name,
        "seed": int(seed),
        "ambient": _dc_to_dict(system.space),
        "field": _plain(system.field.to_dict()),
        "D": _dc_to_dict(system.D),
        "D_hat": _dc_to_dict(system.D_hat),
        "impulse": _impulse_to_dict(system.impulse),
        "tolerances": _dc_to_dict(system.tolerances),
        "singularity_radius": system.singularity_radius,
        "records": [_plain(r.to_dict()) for r in system.records],
    }


class _Source:
    """Locates keys in the raw text for diagnostics."""

    def __init__(self, text: str | None):
        self.text = text

    def line(self, key: str) -> int | None:
        if not self.text:
            return None
        i = self.text.find(json.dumps(key) + ":")
        return None if i < 0 else self.text.count("\n", 0, i) + 1

    def error(self, path: str, msg: str) -> ConfigError:
        key = path.rsplit(".", 1)[-1].split("[", 1)[0]
        ln = self.line(key)
        where = f"line {ln}, " if ln else ""
        err = ConfigError(f"{where}key {path!r}: {msg}")
        err.key, err.line = path, ln
        return err


def _strict(src: _Source, path: str, given, emitted):
    """Reject keys in ``given`` that the parsed object does not know about."""
    if isinstance(given, dict):
        if not isinstance(emitted, dict):
            raise src.error(path, "unexpected object")
        for k in given:
            if k not in emitted:
                raise src.error(f"{path}.{k}", "unknown key")
            _strict(src, f"{path}.{k}", given[k], emitted[k])
    elif isinstance(given, list) and isinstance(emitted, list) and len(given) == len(emitted):
        for i, (g, e) in enumerate(zip(given, emitted)):
            _strict(src, f"{path}[{i}]", g, e)


def _block(src, path, d, build, back):
    if not isinstance(d, dict):
        raise src.error(path, "expected an object")
    try:
        obj = build(d)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise src.error(path, f"invalid block ({type(exc).__name__}: {exc})") from exc
    _strict(src, path, d, back(obj))
    return obj


def system_from_dict(d: dict, text: str | None = None) -> tuple[ImpulsiveSystem, int]:
    """Build ``(system, seed)`` from a config dict; ``text`` improves diagnostics."""
    src = _Source(text)
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    for k in d:
        if k not in TOP_KEYS:
            raise src.error(k, "unknown key")
    for k in ("schema_version", "name", "ambient", "field", "D", "D_hat", "impulse"):
        if k not in d:
            raise src.error(k, "missing required key")
    if d["schema_version"] != SCHEMA_VERSION:
        raise src.error("schema_version", f"unsupported version {d['schema_version']!r} (expected {SCHEMA_VERSION})")
    space = _block(src, "ambient", d["ambient"], lambda b: _dc_from_dict(AmbientSpace, b), _dc_to_dict)
    fld = _block(src, "field", d["field"], VectorFieldSpec.from_dict, lambda o: _plain(o.to_dict()))
    D = _block(src, "D", d["D"], lambda b: _dc_from_dict(SectionPatch, b), _dc_to_dict)
    Dh = _block(src, "D_hat", d["D_hat"], lambda b: _dc_from_dict(SectionPatch, b), _dc_to_dict)

    def build_imp(b):
        return Impulse(
            D,
            Dh,
            _tupled(b["matrix"]),
            _tupled(b["offset"]),
            tuple(Bump.from_dict(x) for x in b.get("bumps", [])),
            float(b.get("inverse_tol", 1e-12)),
        )

    imp = _block(src, "impulse", d["impulse"], build_imp, _impulse_to_dict)
    tol = _block(src, "tolerances", d.get("tolerances", {}), lambda b: _dc_from_dict(Tolerances, b), _dc_to_dict)
    recs = d.get("records", [])
    if not isinstance(recs, list):
        raise src.error("records", "expected a list")
    records = tuple(
        _block(src, f"records[{i}]", r, PerturbationRecord.from_dict, lambda o: _plain(o.to_dict()))
        for i, r in enumerate(recs)
    )
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise src.error("seed", "seed must be a non-negative integer")
    sr = d.get("singularity_radius", 0.05)
    if not isinstance(sr, (int, float)) or sr <= 0:
        raise src.error("singularity_radius", "must be a positive number")
    system = ImpulsiveSystem(str(d["name"]), space, fld, D, Dh, imp, tol, float(sr), records)
    return system, seed


@dataclass(frozen=True)
class SystemConfig:
    system: ImpulsiveSystem
    seed: int = 0

    def to_dict(self) -> dict:
        return system_to_dict(self.system, self.seed)

    def emit(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @property
    def hash(self) -> str:
        return config_hash(self.emit())


def emit_config(system: ImpulsiveSystem, seed: int = 0) -> str:
    return SystemConfig(system, seed).emit()


def parse_config(text: str) -> SystemConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        err = ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}")
        err.key, err.line = None, exc.lineno
        raise err from exc
    system, seed = system_from_dict(d, text)
    return SystemConfig(system, seed)


def load_config(path) -> SystemConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_hash(text: str) -> str:
    """First 16 hex digits of the SHA-256 of the emitted config text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
