"""``stpn-hybrid`` command line."""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from importlib import resources
from typing import Sequence

from . import engine
from .dft import DftParseError, UnsupportedDftError, load_dft
from .sampler import IsConfig, SamplerError
from .scgraph import NodeCapError, build_graph
from .ssc import NullProbabilityError, PieceCapError
from .stpn import DistributionSpec, MarkingPredicate, ModelError, Stpn, ZenoError, default_target, \
    load_json_model

PROG = "stpn-hybrid"
METHODS = ("mc", "is", "hybrid", "ground-truth", "sc-graph")
BUNDLED = {"four_activities": "four_activities.json", "four-activities": "four_activities.json",
           "dft": "dft.dft"}


class UsageError(ValueError):
    code = "USAGE"


def parse_times(spec: str) -> list[float]:
    """``"0.25,0.5,1"`` or ``"start:stop:step"`` (stop included within 1e-12)."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"time grid must be start:stop:step, got {spec!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise UsageError("time grid needs step > 0 and stop >= start")
        k = int(math.floor((stop - start) / step + 1e-12))
        times = [round(start + i * step, 12) for i in range(k + 1)]
    else:
        try:
            times = [float(p) for p in spec.split(",") if p.strip()]
        except ValueError:
            raise UsageError(f"cannot parse times {spec!r}") from None
    if not times or any(t < 0 or not math.isfinite(t) for t in times):
        raise UsageError("times must be non-empty, finite and non-negative")
    return sorted(set(times))


_COMPONENT = re.compile(r"^\s*(?:([0-9.eE+-]+)\s*\*\s*)?([A-Za-z]+)\s*\(([^)]*)\)\s*$")
_PARAMS = {"DET": ("value",), "EXP": ("rate",), "UNIFORM": ("a", "b"), "ERLANG": ("k", "rate")}


def parse_proposal(spec: str) -> tuple[str, list[tuple[float, DistributionSpec]]]:
    """``name=0.5*uniform(9.95,10)+0.5*uniform(10,12)``."""
    if "=" not in spec:
        raise UsageError(f"proposal must look like name=mixture, got {spec!r}")
    name, rhs = spec.split("=", 1)
    comps = []
    for part in rhs.split("+"):
        m = _COMPONENT.match(part)
        if not m:
            raise UsageError(f"cannot parse proposal component {part!r}")
        w = float(m.group(1)) if m.group(1) else 1.0
        kind = m.group(2).upper()
        if kind not in _PARAMS:
            raise UsageError(f"proposal kind must be one of {sorted(_PARAMS)}")
        vals = [float(v) for v in m.group(3).split(",")]
        if len(vals) != len(_PARAMS[kind]):
            raise UsageError(f"{kind} takes {len(_PARAMS[kind])} parameters")
        if kind == "ERLANG":
            vals[0] = int(vals[0])
        try:
            comps.append((w, DistributionSpec(kind, tuple(vals))))
        except ModelError as e:
            raise UsageError(f"proposal for {name.strip()}: {e}") from None
    total = sum(w for w, _ in comps)
    return name.strip(), [(w / total, d) for w, d in comps]


def load_model(path: str, repairs: bool = True) -> Stpn:
    if not os.path.exists(path) and path in BUNDLED:
        path = str(resources.files("stpn_hybrid") / "models" / BUNDLED[path])
    if not os.path.exists(path):
        raise UsageError(f"model file not found: {path}")
    if path.endswith(".dft"):
        return load_dft(path, repairs=repairs)
    return load_json_model(path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=PROG, description="Transient probabilities of stochastic time Petri nets.")
    p.add_argument("method", choices=METHODS)
    p.add_argument("model_pos", nargs="?", metavar="MODEL", help="model path (.json or .dft) or bundled name")
    p.add_argument("--model", help="model path; alternative to the positional argument")
    p.add_argument("--mode", choices=("within", "at"), default="within")
    p.add_argument("--times", default="0:1:0.05", help="comma list or start:stop:step")
    p.add_argument("--target", help="marking predicate, default Target>=1")
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--offspring", type=int, default=500)
    p.add_argument("--sampler", choices=("mh", "is"), default="mh")
    p.add_argument("--is-lambda", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=10_000, help="run count for mc and is")
    p.add_argument("--proposal", action="append", default=[],
                   help="IS proposal mixture, e.g. ups=0.5*uniform(9.95,10)+0.5*uniform(10,12)")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=None, help="falls back to $STPN_HYBRID_SEED, then 0")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--piece-cap", type=int, default=10 ** 4)
    p.add_argument("--node-cap", type=int, default=10 ** 5)
    p.add_argument("--graph", choices=("scg", "marking"), default="scg", help="pruning graph")
    p.add_argument("--no-repairs", action="store_true", help="drop repair transitions of a .dft model")
    p.add_argument("--output", "-o", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot", metavar="PNG", help="also render the curve to an image")
    return p


def _seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("STPN_HYBRID_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STPN_HYBRID_SEED must be an integer, got {env!r}") from None


def _run(a: argparse.Namespace) -> str:
    path = a.model or a.model_pos
    if not path:
        raise UsageError("a model path is required")
    if not 0 < a.confidence < 1:
        raise UsageError("--confidence must lie in (0, 1)")
    if a.workers < 1:
        raise UsageError("--workers must be >= 1")
    stpn = load_model(path, repairs=not a.no_repairs)
    target = MarkingPredicate.parse(a.target) if a.target else default_target(stpn)
    seed = _seed(a.seed)
    if a.method == "sc-graph":
        g = build_graph(stpn, target, a.node_cap, a.graph)
        return json.dumps(g.to_json(), indent=2) + "\n"
    times = parse_times(a.times)
    if a.method == "mc":
        res = engine.run_mc(stpn, target, a.mode, times, a.runs, a.confidence, seed, a.workers)
    elif a.method == "is":
        proposals = dict(parse_proposal(s) for s in a.proposal)
        for name in proposals:
            stpn.transition_index(name)
        res = engine.run_is_baseline(stpn, proposals, target, a.mode, times, a.runs, a.confidence,
                                     seed, a.workers)
    else:
        g = build_graph(stpn, target, a.node_cap, a.graph)
        if a.method == "ground-truth":
            res = engine.ground_truth(stpn, target, a.mode, times, a.piece_cap, g)
        else:
            if a.depth < 0 or a.offspring < 2:
                raise UsageError("--depth must be >= 0 and --offspring >= 2")
            res = engine.run_hybrid(stpn, target, a.mode, times, a.depth, a.offspring, a.sampler, seed,
                                    a.confidence, a.workers, g, is_cfg=IsConfig(lam=a.is_lambda),
                                    piece_cap=a.piece_cap)
    if a.plot:
        from .plotting import plot_curves
        plot_curves([res], a.plot, title=stpn.name)
    return res.dumps(a.format)


_DIAGNOSTICS = (
    (UsageError, "USAGE", 2),
    (DftParseError, "PARSE", 2),
    (UnsupportedDftError, "UNSUPPORTED_DFT", 2),
    (ModelError, "MODEL", 2),
    (PieceCapError, "PIECE_CAP", 3),
    (NodeCapError, "NODE_CAP", 3),
    (ZenoError, "ZENO", 3),
    (SamplerError, "SAMPLER", 3),
    (NullProbabilityError, "NULL_PROBABILITY", 3),
    (KeyError, "MODEL", 2),
    (ValueError, "USAGE", 2),
)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        text = _run(a)
    except tuple(c for c, _, _ in _DIAGNOSTICS) as e:
        for cls, code, status in _DIAGNOSTICS:
            if isinstance(e, cls):
                msg = str(e.args[0]) if isinstance(e, KeyError) and e.args else str(e)
                msg = msg.splitlines()[0] if msg else cls.__name__
                print(f"{PROG}: error[{code}]: {msg}", file=sys.stderr)
                return status
    except OSError as e:
        print(f"{PROG}: error[IO]: {e}", file=sys.stderr)
        return 2
    if a.output:
        with open(a.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
