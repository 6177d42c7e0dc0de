"""Model definition files (TOML) and the bundled presets.

A definition names the model ``kind`` and either a ``[params]`` table of
scalar parameters for the standard construction, or a ``[matrices]`` table
of explicit matrices. A matrix is given dense (a list of rows) or sparse as
``{ size = n, triplets = [[i, j, rate], ...] }``. ``[initial]`` fixes the
starting state; ``epsilon`` the scale separation.

Example (two-macro, explicit)::

    kind = "two-macro"
    epsilon = 0.01

    [matrices]
    m = 3
    Q0 = [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    Q1 = [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    C01 = { size = 3, triplets = [[0, 2, 1.0]] }
    C10 = { size = 3, triplets = [[2, 0, 1.0]] }

    [initial]
    x = 0
    z = 0
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .models import (
    MultiscaleModel,
    build_energy,
    build_paper_energy,
    build_paper_ring,
    build_paper_two_macro,
    build_ring,
    build_two_macro,
)

PRESETS = ("two-macro-s2.3", "ring-s3.2", "energy-s4.3")

# flags that override scalar entries of the [params] table
PARAM_KEYS = {
    "two-macro": ("m", "q", "c"),
    "ring": ("m", "q", "c_l", "c_r"),
    "energy": ("q1", "q2", "c1", "c2"),
}


@dataclass(frozen=True, eq=False)
class ModelDefinition:
    name: str
    document: dict
    model: MultiscaleModel
    initial_state: int

    @property
    def kind(self) -> str:
        return self.model.kind

    def total_energy(self) -> float | None:
        if self.kind == "energy":
            return self.model.total_energy(self.initial_state)
        return None


def _matrix(value: Any, name: str, size: int | None = None) -> np.ndarray:
    if isinstance(value, Mapping):
        n = int(value.get("size", size or 0))
        if n <= 0:
            raise ConfigError(f"sparse matrix {name} needs a size")
        out = np.zeros((n, n))
        for entry in value.get("triplets", []):
            if len(entry) != 3:
                raise ConfigError(f"{name}: triplet {entry!r} must be [i, j, rate]")
            i, j, r = entry
            out[int(i), int(j)] += float(r)
        return out
    try:
        return np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"matrix {name} is malformed: {exc}") from exc


def _build(doc: dict) -> MultiscaleModel:
    kind = doc.get("kind")
    if kind not in PARAM_KEYS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(PARAM_KEYS)}")
    if "epsilon" not in doc:
        raise ConfigError("model definition needs epsilon")
    eps = float(doc["epsilon"])
    params, mats = doc.get("params"), doc.get("matrices")
    if (params is None) == (mats is None):
        raise ConfigError("give exactly one of [params] or [matrices]")
    if params is not None:
        unknown = set(params) - set(PARAM_KEYS[kind])
        if unknown:
            raise ConfigError(f"unknown [params] keys for {kind}: {sorted(unknown)}")
        if kind == "two-macro":
            return build_paper_two_macro(int(params.get("m", 5)), float(params.get("q", 1.0)),
                                         float(params.get("c", 1.0)), eps)
        if kind == "ring":
            return build_paper_ring(int(params.get("m", 5)), float(params.get("q", 1.0)),
                                    float(params.get("c_l", 1.0)), float(params.get("c_r", 2.0)), eps)
        return build_paper_energy(eps, **{k: float(v) for k, v in params.items()})
    try:
        if kind == "two-macro":
            m = int(mats["m"])
            return build_two_macro(m, *(_matrix(mats[k], k, m) for k in ("Q0", "Q1", "C01", "C10")), eps)
        if kind == "ring":
            m = int(mats["m"])
            return build_ring(m, *(_matrix(mats[k], k, m) for k in ("Q", "Cl", "Cr")), eps)
        k = int(mats["k"])
        n = 1 << k
        return build_energy(k, mats.get("energies"), _matrix(mats["Q"], "Q", n),
                            _matrix(mats["C"], "C", n * n), eps, float(mats.get("energy_tol", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"[matrices] is missing {exc.args[0]!r}") from exc


def _initial(model: MultiscaleModel, doc: dict) -> int:
    init = doc.get("initial", {})
    try:
        return model.index(int(init.get("x", 0)), int(init.get("z", 0)))
    except IndexError as exc:
        raise ConfigError(f"bad initial state: {exc}") from exc


def apply_overrides(doc: dict, overrides: Mapping[str, Any]) -> dict:
    """Return a copy of ``doc`` with flag overrides applied.

    ``epsilon`` replaces the top-level value, ``x``/``z`` the initial state,
    and scalar parameter names (``m``, ``q``, ...) entries of ``[params]``.
    """
    doc = copy.deepcopy(doc)
    kind = doc.get("kind")
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "epsilon":
            doc["epsilon"] = value
        elif key in ("x", "z"):
            doc.setdefault("initial", {})[key] = value
        elif key in PARAM_KEYS.get(kind, ()):
            if "params" not in doc:
                raise ConfigError(f"--{key} only applies to [params] definitions")
            doc["params"][key] = value
        else:
            raise ConfigError(f"unknown override {key!r} for a {kind} model")
    return doc


def load_document(source: str | Path) -> tuple[str, dict]:
    """Read a preset by name or a definition file by path."""
    if str(source) in PRESETS:
        text = resources.files(__package__).joinpath("presets", f"{source}.toml").read_text()
        name = str(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"{source!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
        text = path.read_text()
        name = path.stem
    try:
        return name, tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def definition_from_document(name: str, doc: dict) -> ModelDefinition:
    model = _build(doc)
    return ModelDefinition(doc.get("name", name), doc, model, _initial(model, doc))


def load_model(source: str | Path, **overrides) -> ModelDefinition:
    name, doc = load_document(source)
    return definition_from_document(name, apply_overrides(doc, overrides))


def preset(name: str, **overrides) -> ModelDefinition:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return load_model(name, **overrides)
