"""Experiment recipes: JSON documents tying a model to simulation and analysis settings.

A recipe has the keys ``name``, ``command``, ``model`` and ``output`` plus
optional blocks ``simulation``, ``initial``, ``ode``, ``scan``, ``sweep``,
``converge``, ``spectrum``, ``validate`` and ``bench``.  ``model`` is an inline
model document, a path to one (relative to the recipe), or a preset
reference such as ``{"preset": "ei", "noise": 1.2}``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .errors import SpecError
from .meanfield import OdeConfig
from .model import ModelSpec, ei_network, hopf_network, pitchfork_network
from .network import InitialLaw, SimConfig

PRESETS = {
    "pitchfork": pitchfork_network,
    "hopf": hopf_network,
    "ei": ei_network,
}

_SIM_FIELDS = {"n_total", "dt", "t_end", "n_realizations", "seed", "record_mode", "record_every", "memory_cap_bytes"}


def packaged_recipes() -> list[str]:
    root = resources.files("noisyrate") / "recipes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_recipe_path(name_or_path: str) -> Path:
    """A filesystem path, or the name of a packaged recipe (with or without ``.json``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    packaged = resources.files("noisyrate") / "recipes" / f"{stem}.json"
    if packaged.is_file():
        return Path(str(packaged))
    raise SpecError(f"config {name_or_path!r} not found (packaged recipes: {', '.join(packaged_recipes())})")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``key=value``: a dotted path into the recipe, or ``param.NAME`` for a model parameter."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise SpecError(f"override must look like key=value, got {assignment!r}")
    value = _parse_value(raw)
    if key.startswith("param."):
        doc.setdefault("parameters", {})[key[len("param.") :]] = value
        return
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


@dataclass
class ExperimentRecipe:
    name: str
    command: str
    doc: dict[str, Any]
    base_dir: Path

    @classmethod
    def load(cls, name_or_path: str, overrides: list[str] | None = None) -> ExperimentRecipe:
        path = resolve_recipe_path(name_or_path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from exc
        for ov in overrides or []:
            apply_override(doc, ov)
        return cls(doc.get("name", path.stem), doc.get("command", ""), doc, path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> ExperimentRecipe:
        doc = copy.deepcopy(doc)
        return cls(doc.get("name", "experiment"), doc.get("command", ""), doc, Path(base_dir))

    def block(self, key: str) -> dict:
        return dict(self.doc.get(key) or {})

    def model(self) -> ModelSpec:
        m = self.doc.get("model")
        if m is None:
            raise SpecError("recipe has no model")
        if isinstance(m, str):
            p = Path(m)
            if not p.is_absolute():
                p = self.base_dir / p
            spec = ModelSpec.load(p)
        elif "preset" in m:
            args = {k: v for k, v in m.items() if k != "preset"}
            if m["preset"] not in PRESETS:
                raise SpecError(f"unknown preset {m['preset']!r}; choose from {sorted(PRESETS)}")
            try:
                spec = PRESETS[m["preset"]](**args)
            except TypeError as exc:
                raise SpecError(f"bad preset arguments: {exc}") from exc
        else:
            spec = ModelSpec.from_dict(m)
        for name, value in (self.doc.get("parameters") or {}).items():
            spec = spec.with_parameter(name, float(value))
        return spec

    def sim_config(self) -> SimConfig:
        sim = self.block("simulation")
        unknown = set(sim) - _SIM_FIELDS
        if unknown:
            raise SpecError(f"unknown simulation fields: {sorted(unknown)}")
        if "n_total" not in sim:
            raise SpecError("simulation.n_total is required")
        return SimConfig(**sim)

    def initial_law(self, n_pop: int) -> InitialLaw:
        init = self.block("initial")
        mean = init.get("mean", 0.0)
        var = init.get("variance", 0.0)
        return InitialLaw(np.broadcast_to(np.asarray(mean, float), (n_pop,)).copy(),
                          np.broadcast_to(np.asarray(var, float), (n_pop,)).copy())

    def ode_config(self, default_t_end: float | None = None) -> OdeConfig:
        ode = self.block("ode")
        if "t_end" not in ode:
            if default_t_end is None:
                raise SpecError("ode.t_end is required")
            ode["t_end"] = default_t_end
        return OdeConfig(**ode)

    def output_dir(self, override: str | None = None) -> Path:
        out = override or self.doc.get("output") or f"out/{self.name}"
        return Path(out)

    def resolved(self) -> dict:
        """The recipe with the model expanded, as echoed into manifests."""
        doc = copy.deepcopy(self.doc)
        try:
            doc["model"] = self.model().to_dict()
        except SpecError:
            pass
        return doc


def axis_values(axis: dict) -> np.ndarray:
    """Grid values from ``{"values": [...]}`` or ``{"range": [lo, hi, n]}``."""
    if "values" in axis:
        vals = np.asarray(axis["values"], dtype=float)
    elif "range" in axis:
        lo, hi, n = axis["range"]
        vals = np.linspace(float(lo), float(hi), int(n))
    else:
        raise SpecError("axis needs 'values' or 'range'")
    if vals.size == 0:
        raise SpecError("axis has no values")
    return vals
