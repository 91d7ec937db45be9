"""JSON run configuration with defaults.

Precedence is command-line flags > config file > defaults.  Anything missing
from the file is filled from the defaults and reported in ``injected`` so the
CLI can echo it.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

from .augmentation import PerturbationRanges
from .errors import SchemaError, ValidationError
from .io import load_json
from .losses import LossConfig
from .phantom import FanGeometry, PhantomParams, SweepParams

log = logging.getLogger(__name__)

DEFAULTS = {
    "seed": 7,
    "grid": {"spacing": 1.0, "margin": 2.0, "phantom_dims": 64},
    "interp": {"splat": "nearest", "sample": "trilinear"},
    "losses": LossConfig().to_dict(),
    "augmentation": PerturbationRanges().to_dict(),
    "phantom": {k: v for k, v in PhantomParams().to_dict().items() if k != "seed"},
    "sweep": {
        "n_slices": 40, "height": 64, "width": 64, "spacing": 1.0,
        "fan": {"apex_offset": 16.0, "angular_width": 110.0, "depth": 90.0},
        "axis": [0.0, 0.0, 1.0], "mode": "rotational", "linear_step": 1.0,
        "interp": "nearest", "jitter_start": True,
    },
    "baselines": {"sigma_mm": 2.0, "iterations": 10, "max_dist_mm": 10.0},
}


def _merge(defaults, given, where, injected):
    out = {}
    if not isinstance(given, dict):
        raise SchemaError(where or "<root>", "must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise SchemaError(f"{where}.{sorted(unknown)[0]}" if where else sorted(unknown)[0], "unknown key")
    for k, dv in defaults.items():
        path = f"{where}.{k}" if where else k
        if isinstance(dv, dict):
            out[k] = _merge(dv, given.get(k, {}), path, injected)
        elif k not in given:
            out[k] = copy.deepcopy(dv)
            injected.append(path)
        else:
            out[k] = given[k]
    return out


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    injected: list = field(default_factory=list)

    def __post_init__(self):
        try:
            self.loss_config()
        except ValidationError as e:
            raise SchemaError("losses", str(e)) from None
        sp = self.data["grid"]["spacing"]
        if not (isinstance(sp, (int, float)) and sp > 0):
            raise SchemaError("grid.spacing", "must be > 0")

    @classmethod
    def load(cls, path=None, overrides=None):
        injected = []
        given = load_json(path) if path else {}
        data = _merge(DEFAULTS, given, "", injected)
        if not path:
            injected = []
        for dotted, v in (overrides or {}).items():
            if v is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = v
        return cls(data, injected)

    @property
    def seed(self):
        return int(self.data["seed"])

    def loss_config(self):
        return LossConfig(**self.data["losses"])

    def phantom_params(self, seed=None):
        d = dict(self.data["phantom"])
        d["seed"] = self.seed if seed is None else seed
        return PhantomParams.from_dict(d)

    def sweep_params(self, **over):
        d = dict(self.data["sweep"])
        d["fan"] = FanGeometry(**d["fan"])
        d["axis"] = tuple(d["axis"])
        d.update({k: v for k, v in over.items() if v is not None})
        return SweepParams(**d)

    def perturbation_ranges(self):
        a = self.data["augmentation"]
        return PerturbationRanges(tuple(a["scale"]), tuple(map(tuple, a["rotation_deg"])),
                                  tuple(map(tuple, a["translation_mm"])), a.get("seed", self.seed))

    def echo(self):
        for path in self.injected:
            node = self.data
            for p in path.split("."):
                node = node[p]
            log.info("config default injected: %s = %s", path, node)
