"""The ``lab`` command line: one subcommand per experiment, deterministic outputs."""
import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .branches import event_E
from .config import parse_config, reference_config, tower_setup
from .ensemble import map_paths
from .errors import AllBelowFloor, LabError, TooFewPoints
from .fitting import fit_exponential_tail
from .measure import Observable, correlation_curve, decay_fit, pullback_density
from .orbit import initial_point, iterate, large_dev_probe, lyapunov_estimate
from .times import hyperbolic_times, sparse_times
from .tower import build_partition, verify_tower
from .young import density_theta1

COMMANDS = ("simulate", "lyapunov", "hyp", "young", "event", "tower", "density", "corr", "ldp",
            "verify")


# -- output ----------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    return str(v)


class Run:
    """Collects the files of one command and writes them atomically."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.files = {}
        self.meta = {"command": command, "config_hash": cfg.digest(), "code_version": __version__,
                     "seed": cfg.ensemble["seed"]}

    def header(self, extra=None):
        meta = dict(self.meta, **(extra or {}))
        return {"config": self.cfg.resolved(), "provenance": meta}

    def json(self, name, payload, extra=None):
        doc = dict(self.header(extra), result=payload)
        self.files[name] = json.dumps(_clean(doc), sort_keys=True, indent=1) + "\n"

    def csv(self, name, columns, rows, extra=None):
        buf = io.StringIO()
        h = self.header(extra)
        buf.write("# config: " + json.dumps(_clean(h["config"]), sort_keys=True) + "\n")
        buf.write("# provenance: " + json.dumps(_clean(h["provenance"]), sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.files[name] = buf.getvalue()

    def write(self, out_dir):
        formats = set(self.cfg.output["formats"])
        names = sorted(n for n in self.files if n.rsplit(".", 1)[-1] in formats)
        os.makedirs(out_dir, exist_ok=True)
        for name in names:
            target = os.path.join(out_dir, name)
            fd, tmp = tempfile.mkstemp(prefix="." + name, dir=out_dir)
            try:
                with os.fdopen(fd, "w", newline="") as f:
                    f.write(self.files[name])
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return [os.path.join(out_dir, n) for n in names]


# -- commands --------------------------------------------------------------------------

def cmd_simulate(cfg, args, run):
    n = args.n or 100
    path = cfg.path(0, 0, n + 1)
    orb = iterate(cfg.family, path, initial_point(cfg.ensemble["seed"], 0), n, cfg.hp.r)
    rows = [(i, float(orb.x[i]), float(path[i]), float(orb.logd[i]) if i < n else None,
             float(orb.distr[i])) for i in range(n + 1)]
    run.csv("simulate.csv", ["i", "x", "omega", "logd", "distr"], rows)
    return 0


def cmd_lyapunov(cfg, args, run):
    n = args.n or 10000
    est = lyapunov_estimate(cfg.family, cfg.noise, n, cfg.ensemble["count"],
                            cfg.ensemble["seed"])
    run.json("lyapunov.json", {"lambda_hat": est.lambda_hat, "stderr": est.stderr,
                               "per_path": est.per_path, "n": n})
    return 0


def _checkpoints(n, k=10):
    return sorted(set(int(round(n * j / k)) for j in range(1, k + 1)) - {0})


def cmd_hyp(cfg, args, run):
    n = args.n or 5000
    seed, hp = cfg.ensemble["seed"], cfg.hp

    def one(p):
        path = cfg.path(p, 0, n + 1)
        orb = iterate(cfg.family, path, initial_point(seed, p), n, hp.r)
        hyp = hyperbolic_times(orb, hp)
        sp = sparse_times(hyp, hp.L)
        return [(p, k, int(np.sum(hyp.indices <= k)), int(np.sum(sp.indices <= k)),
                 float(np.sum(hyp.indices <= k) / k)) for k in _checkpoints(n)]

    rows = [r for rs in map_paths(one, range(cfg.ensemble["count"])) for r in rs]
    run.csv("hyp.csv", ["path_seed", "n", "count_hyp", "count_sparse", "density"], rows)
    return 0


def cmd_young(cfg, args, run):
    n = args.n or 5000
    est = density_theta1(cfg.family, cfg.noise, n, cfg.ensemble["count"], cfg.ensemble["seed"],
                         cfg.hp, cfg.ep, cfg.delta1)
    rows = []
    for p, rec in enumerate(est.records):
        c = rec.counts()
        rows += [(p, k, int(c[k - 1]), float(c[k - 1] / k)) for k in _checkpoints(n)]
    run.csv("young.csv", ["seed", "n", "young_count", "density"], rows)
    run.json("young.json", {"theta1_hat": est.theta1_hat, "final_density": est.final_density,
                            "median_final": float(np.median(est.final_density)), "n": n})
    return 0


def cmd_event(cfg, args, run):
    lo, hi = args.interval if args.interval else (0.3, 0.35)
    trials = args.trials or 1000
    ep = cfg.ep

    def one(t):
        path = cfg.path(t, 0, ep.L + 1)
        return event_E(cfg.family, path, (lo, hi), ep)

    ws = map_paths(one, range(trials))
    hits = [(t, w) for t, w in enumerate(ws) if w.hit]
    sample = [{"trial": t, "ell": w.ell, "J": list(w.J), "offset": w.offset}
              for t, w in hits[:10]]
    run.json("event.json", {"hit_rate": len(hits) / trials, "trials": trials,
                            "interval": [lo, hi],
                            "mean_ell": float(np.mean([w.ell for _, w in hits])) if hits else None,
                            "witnesses_sample": sample})
    return 0


def _partitions(cfg, consts, horizon, count, record=False):
    L = consts.L

    def one(p):
        return build_partition(cfg.family, cfg.path(p, 0, horizon + L + 1), consts, cfg.hp,
                               horizon, cfg.tower["grid_bits"], record=record)

    return map_paths(one, range(count))


def cmd_tower(cfg, args, run):
    horizon = args.horizon or cfg.tower["horizon"]
    consts = tower_setup(cfg)
    parts = _partitions(cfg, consts, horizon, cfg.ensemble["count"])
    curves = np.array([p.survival(horizon) for p in parts])
    med = np.median(curves, axis=0)
    paths = [{"path_index": i,
              "elements": [{k: e[k] for k in ("n", "ell", "left", "right", "R")}
                           for e in p.elements()],
              "survival": curves[i], "covered_mass": p.covered_mass()}
             for i, p in enumerate(parts)]
    try:
        fit = fit_exponential_tail(list(enumerate(med)), floor=1e-2)._asdict()
    except TooFewPoints as e:
        fit = {"error": str(e)}
    extra = {"separation_convention": "completed base returns before separation"}
    run.json("tower.json", {"constants": consts.as_dict(), "paths": paths,
                            "median_survival": med, "tail_fit": fit}, extra)
    cols = ["n", "median"] + [f"path_{i}" for i in range(len(parts))]
    rows = [[k, med[k]] + list(curves[:, k]) for k in range(horizon + 1)]
    run.csv("tower_survival.csv", cols, rows, extra)
    return 0


def cmd_density(cfg, args, run):
    N = args.bins or cfg.measure["bins"]
    nb = args.n_back if args.n_back is not None else cfg.measure["n_back"]
    h = pullback_density(cfg.family, cfg.path(0, nb, 0), N, nb)
    rows = [(i, i / N, float(h[i]), float(h[i] * N)) for i in range(N)]
    run.csv("density.csv", ["bin", "left", "mass", "density"], rows, {"n_back": nb, "bins": N})
    return 0


def cmd_corr(cfg, args, run):
    N = args.bins or cfg.measure["bins"]
    nb = args.n_back if args.n_back is not None else cfg.measure["n_back"]
    mc = args.mc or cfg.measure["mc"]
    n_max = args.n_max if args.n_max is not None else 40
    direction = args.direction or "backward"
    obs = {"cos": Observable.cos(N), "one": Observable.constant(N)}[args.obs or "cos"]
    past = nb + n_max + 1
    path = cfg.path(0, past, n_max + nb + 1)
    curve = correlation_curve(cfg.family, path, obs, Observable.cos(N), n_max, direction, N, mc,
                              nb, cfg.ensemble["seed"])
    extra = {"obs": args.obs or "cos", "direction": direction, "mc": mc, "n_back": nb, "bins": N}
    run.csv("corr.csv", ["n", "C_n", "mc_sigma"], curve, extra)
    try:
        f = decay_fit(curve)
        fit = {"gamma_hat": f.gamma_hat, "C_omega_hat": f.C_omega_hat, "r2": f.r2,
               "points": f.points}
    except AllBelowFloor as e:
        fit = {"gamma_hat": None, "C_omega_hat": None, "r2": None, "fit_error": str(e)}
    run.json("corr.json", fit, extra)
    return 0


def cmd_ldp(cfg, args, run):
    l = cfg.ldp
    pr = large_dev_probe(cfg.family, cfg.noise, l["R"], l["h"], l["ell"], l["beta2"])
    d = {k: getattr(pr, k) for k in pr.__dataclass_fields__}
    d["Pk_masses"] = {str(k): v for k, v in sorted(pr.Pk_masses.items())}
    d["total_mass"] = pr.total_mass
    run.json("ldp.json", d)
    return 0


def cmd_verify(cfg, args, run):
    horizon = args.horizon or cfg.tower["horizon"]
    count = args.ensemble or 4
    consts = tower_setup(cfg)
    parts = _partitions(cfg, consts, horizon, count, record=True)
    rep = verify_tower(parts)
    run.json("verify.json", rep.as_dict(), {"horizon": horizon, "paths": count,
                                            "constants": consts.as_dict()})
    return 0 if rep.violations == 0 else 2


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# -- argument parsing ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--n", type=int)
    common.add_argument("--ensemble", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--bins", type=int)
    common.add_argument("--n-back", type=int, dest="n_back")
    common.add_argument("--mc", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--direction", choices=("forward", "backward"))
    p = _Parser(prog="lab", description="Random circle-map lab.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "event":
            sp.add_argument("--interval", type=float, nargs=2, metavar=("LO", "HI"))
            sp.add_argument("--trials", type=int)
        if name == "corr":
            sp.add_argument("--obs", choices=("cos", "one"))
            sp.add_argument("--n-max", type=int, dest="n_max")
    return p


def load_config(args):
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
    else:
        raw = dict(reference_config().raw)
    if args.seed is not None:
        raw["seed"] = args.seed
        raw.setdefault("ensemble", {})
        raw["ensemble"] = dict(raw["ensemble"], seed=args.seed)
    if args.ensemble is not None:
        raw["ensemble"] = dict(raw.get("ensemble", {}), count=args.ensemble)
    return parse_config(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        run = Run(cfg, args.command)
        code = HANDLERS[args.command](cfg, args, run)
        for path in run.write(args.out or cfg.output["dir"]):
            print(path)
        return code
    except (LabError, ValueError, OSError) as e:
        print(f"lab {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
