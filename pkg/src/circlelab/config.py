"""Run configuration: JSON schema, defaults and auto-derived constants."""
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .branches import EventParams
from .circle_map import PROFILES, MapFamily, NoiseModel, NoisePath, delta0
from .errors import SchemaError
from .times import HyperbolicParams

# block -> field -> (type, default); None defaults are derived
SCHEMA = {
    "hyperbolic": {"sigma2": (float, 0.75), "r": (float, 1e-5), "b": (float, 0.25),
                   "L": (int, 2)},
    "event": {"delta0": (float, None), "delta1": (float, None), "epsilon0": (float, None),
              "L": (int, None), "x0": (float, None)},
    "tower": {"horizon": (int, 400), "N0": (int, None), "N1": (int, None),
              "C1": (float, None), "grid_bits": (int, 14)},
    "measure": {"bins": (int, 1024), "n_back": (int, 60), "mc": (int, 100000),
                "k_noise": (int, 16)},
    "ensemble": {"count": (int, 32), "seed": (int, None)},
    "ldp": {"R": (float, None), "h": (float, 0.5), "ell": (int, 32), "beta2": (float, 0.1)},
    "output": {"dir": (str, "out"), "formats": (list, ["csv", "json"])},
}
TOP = {"xi": str, "alpha": float, "a": float, "epsilon": float, "c": float, "seed": int}
TOP_DEFAULTS = {"a": 0.0, "c": 0.5}

REFERENCE = {"xi": "sine", "alpha": 400, "a": 0.3, "epsilon": 0.05, "c": 0.5, "seed": 1}


def _check(value, typ, path):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(path, "expected a number")
        if not math.isfinite(value):
            raise SchemaError(path, "must be finite")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(path, "expected an integer")
        return int(value)
    if typ is str:
        if not isinstance(value, str):
            raise SchemaError(path, "expected a string")
        return value
    if typ is list:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise SchemaError(path, "expected a list of strings")
        return list(value)
    raise TypeError(typ)


def auto_L(d0, d1, alpha, c, L_max=64):
    """Smallest L >= 1 with (4 delta0 / alpha^(c/2))^(L+1) <= delta1 / 2."""
    q = 4 * d0 / alpha ** (c / 2)
    for L in range(1, L_max + 1):
        if q ** (L + 1) <= d1 / 2:
            return L
    raise SchemaError("event.L", "no L <= 64 satisfies the depth condition")


def auto_x0(family, grid=64):
    """Grid point with maximal |xi'| closest to 0 on the circle."""
    x = np.arange(grid) / grid
    d = np.abs(family.dxi(x))
    best = x[d >= d.max() * (1 - 1e-12)]
    dist = np.minimum(best, 1 - best)
    return float(best[np.argmin(dist)])


@dataclass(frozen=True)
class RunConfig:
    xi: str
    alpha: float
    a: float
    epsilon: float
    c: float
    seed: int
    hyperbolic: dict
    event: dict
    tower: dict
    measure: dict
    ensemble: dict
    ldp: dict
    output: dict
    regime_warning: bool
    raw: dict = field(repr=False, compare=False, default=None)

    @property
    def family(self):
        return MapFamily(self.xi, self.alpha, self.a)

    @property
    def noise(self):
        return NoiseModel(self.epsilon, self.c)

    @property
    def hp(self):
        h = self.hyperbolic
        return HyperbolicParams(h["sigma2"], h["r"], h["b"], h["L"])

    @property
    def ep(self):
        e = self.event
        return EventParams(e["L"], e["delta0"], e["x0"], e["epsilon0"])

    @property
    def delta1(self):
        return self.event["delta1"]

    def path(self, index, past=0, future=0):
        return NoisePath(self.ensemble["seed"], self.epsilon, past, future, path_index=index)

    def resolved(self):
        """All settings with derived constants filled in (sorted, JSON-ready)."""
        d = {k: getattr(self, k) for k in TOP}
        for block in SCHEMA:
            d[block] = dict(getattr(self, block))
        d["regime_warning"] = self.regime_warning
        return d

    def digest(self):
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(text):
    """Validate a JSON config and fill every default."""
    try:
        raw = json.loads(text) if isinstance(text, str) else dict(text)
    except json.JSONDecodeError as e:
        raise SchemaError("$", f"invalid JSON: {e.msg}") from None
    if not isinstance(raw, dict):
        raise SchemaError("$", "expected an object")
    for k in raw:
        if k not in TOP and k not in SCHEMA:
            raise SchemaError(k, "unknown field")
    top = {}
    for k, typ in TOP.items():
        if k in raw:
            top[k] = _check(raw[k], typ, k)
        elif k in TOP_DEFAULTS:
            top[k] = TOP_DEFAULTS[k]
        else:
            raise SchemaError(k, "required")
    if top["xi"] not in PROFILES:
        raise SchemaError("xi", f"must be one of {PROFILES}")
    if not top["alpha"] > 0:
        raise SchemaError("alpha", "must be positive")
    if not 0 <= top["a"] < 1:
        raise SchemaError("a", "must lie in [0, 1)")
    if not top["epsilon"] > 0:
        raise SchemaError("epsilon", "must be positive")
    if not 0 < top["c"] < 1:
        raise SchemaError("c", "must lie in (0, 1)")
    blocks = {}
    for block, fields in SCHEMA.items():
        given = raw.get(block, {})
        if not isinstance(given, dict):
            raise SchemaError(block, "expected an object")
        for k in given:
            if k not in fields:
                raise SchemaError(f"{block}.{k}", "unknown field")
        blocks[block] = {k: (_check(given[k], typ, f"{block}.{k}") if given.get(k) is not None
                             else default) for k, (typ, default) in fields.items()}

    fam = MapFamily(top["xi"], top["alpha"], top["a"])
    ev = blocks["event"]
    if ev["delta0"] is None:
        ev["delta0"] = delta0(fam, strict=False).value
    if ev["delta1"] is None:
        ev["delta1"] = ev["delta0"] / 10
    if ev["epsilon0"] is None:
        ev["epsilon0"] = ev["delta0"] / 4
    if ev["L"] is None:
        ev["L"] = auto_L(ev["delta0"], ev["delta1"], top["alpha"], top["c"])
    if ev["x0"] is None:
        ev["x0"] = auto_x0(fam)
    if blocks["ensemble"]["seed"] is None:
        blocks["ensemble"]["seed"] = top["seed"]
    if blocks["ldp"]["R"] is None:
        blocks["ldp"]["R"] = top["alpha"] ** 0.25
    warn = not top["epsilon"] > top["alpha"] ** (top["c"] - 1.0)
    return RunConfig(**top, **blocks, regime_warning=warn, raw=raw)


def reference_config():
    return parse_config(json.dumps(REFERENCE))


def tower_setup(cfg):
    """TowerConstants for a config, applying the C1 / N0 / N1 overrides."""
    from .tower import tower_constants
    t = cfg.tower
    consts = tower_constants(cfg.family, cfg.epsilon, cfg.hp, cfg.ep, cfg.delta1,
                             cfg.ensemble["seed"], C1=t["C1"])
    changes = {k: t[k] for k in ("N0", "N1") if t[k] is not None}
    if changes:
        consts = dataclasses.replace(consts, **changes)
        consts = dataclasses.replace(consts, beta=consts.C1 * consts.sigma ** consts.N0)
    return consts
