"""Command-line entry point.

Exit status: 0 on success, 2 on domain, feasibility or input errors (a JSON
error object goes to stderr), 1 on anything unexpected.  Reports are JSON
with sorted keys, a config echo and the library version, so identical
arguments give byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .curtain import Coupling, curtain_atomic, curtain_general, martingale_cost
from .experiments import CRITERIA, DEFAULT_SEED, FIXTURES
from .measures import DomainError, Measure
from .orders import OrderRelation, leq_composite
from .peacock import (
    FiniteCurves,
    Grid,
    Partition,
    Stocking,
    ThreePoint,
    UniformExp,
    chain_compose,
    integrate_semigroup,
    iter_paths,
    jump_statistics,
    markov_defect,
    validate_peacock,
)
from .shadow import FeasibilityError, NonConvergence, shadow_atomic, shadow_general

SCENARIOS = ("uniform", "threepoint", "stocking", "curves", "grid")
STOCHASTIC = {"simulate"}


class InputError(DomainError):
    """Unreadable or malformed input file."""

    kind = "schema"


class UsageError(DomainError):
    kind = "usage"


@dataclass
class RunConfig:
    command: str
    inputs: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    out: str | None = None
    format: str = "json"
    seed: int | None = None
    tol: float | None = None
    verbose: bool = False

    def validate(self) -> None:
        if self.format not in ("json", "csv"):
            raise UsageError(f"unknown format {self.format!r}")
        if self.options.get("subcommand") in STOCHASTIC and self.seed is None:
            raise UsageError("stochastic commands need --seed")
        if self.tol is not None and not self.tol > 0:
            raise UsageError("--tol must be positive")

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("verbose")
        return d


# input and output


def _read_json(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: invalid JSON ({err.msg} at line {err.lineno})") from None


def load_measure(path: str) -> Measure:
    """A measure literal, or a report whose ``measure`` entry is one."""
    obj = _read_json(path)
    if isinstance(obj, dict) and "measure" in obj:
        obj = obj["measure"]
    try:
        return Measure.from_json(obj)
    except DomainError as err:
        raise InputError(f"{path}: {err}") from None
    except (TypeError, ValueError) as err:
        raise InputError(f"{path}: malformed measure ({err})") from None


def load_coupling(path: str) -> Coupling:
    obj = _read_json(path)
    try:
        return Coupling.from_json(obj)
    except (KeyError, TypeError, ValueError) as err:
        raise InputError(f"{path}: malformed coupling ({err})") from None


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as err:
        raise InputError(f"cannot write {path}: {err.strerror}") from None


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report(cfg: RunConfig, result: dict) -> dict:
    return {"config": cfg.echo(), "version": __version__, **result}


# commands


def cmd_order(cfg: RunConfig) -> int:
    mu, nu = load_measure(cfg.inputs["mu"]), load_measure(cfg.inputs["nu"])
    rel = OrderRelation.parse(cfg.options["relation"])
    tol = 1e-10 if cfg.tol is None else cfg.tol
    holds, witness = leq_composite(rel, mu, nu, tol)
    out = {"holds": bool(holds), "relation": rel.value}
    if witness is not None:
        out["witness"] = witness.to_json()
    _write(cfg.out, dumps(report(cfg, out)))
    return 0


def cmd_shadow(cfg: RunConfig) -> int:
    mu, nu = load_measure(cfg.inputs["mu"]), load_measure(cfg.inputs["nu"])
    trace_path = cfg.options.get("trace")
    if mu.is_atomic:
        eta, trace = shadow_atomic(mu, nu)
        if trace_path:
            _write(trace_path, dumps({"steps": trace.to_json(), "version": __version__}))
    else:
        if trace_path:
            raise UsageError("--trace needs a purely atomic source")
        eta = shadow_general(mu, nu, tol=1e-7 if cfg.tol is None else cfg.tol)
    _write(cfg.out, dumps(report(cfg, {"measure": eta.to_json(), "mass": eta.mass})))
    return 0


def cmd_curtain(cfg: RunConfig) -> int:
    mu, nu = load_measure(cfg.inputs["mu"]), load_measure(cfg.inputs["nu"])
    k = cfg.options.get("atomize")
    if mu.is_atomic and k is None:
        pi = curtain_atomic(mu, nu)
    else:
        pi = curtain_general(mu, nu, 8 if k is None else k)
    residual, cost = martingale_cost(pi)
    out = report(cfg, {**pi.to_json(), "residual": residual, "cost": cost})
    _write(cfg.out, dumps(out))
    return 0


def make_scenario(words: list[str]):
    name = words[0]
    if name not in SCENARIOS:
        raise UsageError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    needs_file = name in ("curves", "grid")
    if needs_file != (len(words) == 2) or len(words) > 2:
        raise UsageError(f"scenario {name!r} takes {'one file' if needs_file else 'no file'}")
    if name == "uniform":
        return UniformExp()
    if name == "threepoint":
        return ThreePoint()
    if name == "stocking":
        return Stocking()
    obj = _read_json(words[1])
    try:
        p = FiniteCurves.from_json(obj) if name == "curves" else Grid.from_json(obj)
    except DomainError as err:
        raise InputError(f"{words[1]}: {err}") from None
    if name == "curves":
        ok, pair = validate_peacock(p, np.linspace(*p.domain, 33))
        if not ok:
            raise InputError(f"{words[1]}: marginals fail the convex order between t={pair[0]} and t={pair[1]}")
    return p


def cmd_simulate(cfg: RunConfig) -> int:
    p = make_scenario(cfg.options["scenario"])
    part = Partition.uniform(cfg.options["mesh"])
    stats = None
    chunks = []
    for ps in iter_paths(p, part, cfg.options["paths"], cfg.seed):
        js = jump_statistics(ps)
        stats = js if stats is None else stats.merge(js)
        chunks.append(ps.to_csv() if not chunks else ps.to_csv().split("\n", 1)[1])
    _write(cfg.out, "".join(chunks) if chunks else ",".join(f"t_{k}" for k in range(part.steps + 1)) + "\n")
    jump_path = cfg.options.get("jumps")
    if jump_path and stats is not None:
        rows = [(i, repr(float(t))) for i, ts in enumerate(stats.jump_times) for t in ts]
        _write(jump_path, _csv(("path", "time"), rows))
    summary = {
        "times": p.to_domain(part.times).tolist(),
        "mean_jumps": 0.0 if stats is None else stats.mean_jumps,
        "down_fraction": 0.0 if stats is None else stats.down_fraction,
    }
    # the summary shares stdout only when the paths went to a file
    target = cfg.options.get("summary") or (None if cfg.out not in (None, "-") else "")
    if target != "":
        _write(target, dumps(report(cfg, summary)))
    return 0


def cmd_converge(cfg: RunConfig) -> int:
    p = make_scenario(cfg.options["scenario"])
    if not p.finite:
        raise UsageError("converge needs a finite scenario (curves or threepoint)")
    rows = []
    for m in cfg.options["meshes"]:
        a = chain_compose(p, Partition.uniform(m)).m
        ref = integrate_semigroup(p, p.domain[0], p.domain[1], m * (p.domain[1] - p.domain[0]) / 4).m
        rows.append((m, float(np.max(np.abs(a - ref).sum(axis=1)))))
    if cfg.format == "csv":
        _write(cfg.out, _csv(("mesh", "sup_error"), [(repr(m), repr(e)) for m, e in rows]))
    else:
        _write(cfg.out, dumps(report(cfg, {"errors": [{"mesh": m, "sup_error": e} for m, e in rows]})))
    return 0


def cmd_defect(cfg: RunConfig) -> int:
    p = make_scenario(cfg.options["scenario"])
    if not p.finite:
        raise UsageError("defect needs a finite scenario (curves or threepoint)")
    t, h = cfg.options["t"], cfg.options["h"]
    _write(cfg.out, dumps(report(cfg, {"t": t, "h": h, "defect": markov_defect(p, t, h)})))
    return 0


def cmd_reproduce(cfg: RunConfig) -> int:
    name = cfg.options["name"]
    if name not in FIXTURES:
        raise UsageError(f"unknown fixture {name!r}; choose from {', '.join(sorted(FIXTURES))}")
    outcomes = []
    for c in FIXTURES[name]:
        fn = CRITERIA[c]
        kwargs = {"seed": cfg.seed} if cfg.seed is not None and "seed" in fn.__code__.co_varnames else {}
        res = fn(**kwargs)
        print(f"criterion {c}: {res.line()}", flush=True)
        d = res.to_json()
        d.pop("seconds")
        outcomes.append({"criterion": c, **d})
    passed = all(o["passed"] for o in outcomes)
    print(f"{name}: {'PASS' if passed else 'FAIL'}")
    if cfg.out:
        _write(cfg.out, dumps(report(cfg, {"fixture": name, "passed": passed, "outcomes": outcomes})))
    return 0 if passed else 1


# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--tol", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (stdout when omitted)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--verbose", action="store_true", help="human-readable error text on stdout")

    parser = _Parser(prog="leftcurtain", description="Shadows, left-curtain couplings and curtain peacocks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("order", parents=[common], help="decide an order relation between two measures")
    p.add_argument("--relation", required=True, choices=("plus", "sto", "convex", "cp", "ps", "cs", "cps"))
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)

    p = sub.add_parser("shadow", parents=[common], help="shadow of mu in nu")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--trace", help="write the per-atom windows here")

    p = sub.add_parser("curtain", parents=[common], help="left-curtain coupling of mu and nu")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--atomize", type=int, help="dyadic depth for non-atomic sources")

    p = sub.add_parser("peacock", help="curtain chains of a peacock")
    psub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    q = psub.add_parser("simulate", parents=[common], help="sample paths to CSV")
    q.add_argument("--scenario", nargs="+", required=True, metavar="NAME [FILE]")
    q.add_argument("--mesh", type=float, required=True)
    q.add_argument("--paths", type=int, required=True)
    q.add_argument("--jumps", help="CSV of jump times (path, time)")
    q.add_argument("--summary", help="JSON summary path (stdout when omitted)")
    q = psub.add_parser("converge", parents=[common], help="chain products against the semigroup ODE")
    q.add_argument("--scenario", nargs="+", required=True, metavar="NAME [FILE]")
    q.add_argument("--meshes", type=_floats, default=[1e-1, 1e-2, 1e-3])
    q = psub.add_parser("defect", parents=[common], help="Markov defect across a time")
    q.add_argument("--scenario", nargs="+", required=True, metavar="NAME [FILE]")
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--h", type=float, required=True)

    p = sub.add_parser("reproduce", parents=[common], help="run a named acceptance fixture")
    p.add_argument("name")
    return parser


_INPUTS = ("mu", "nu")
_HANDLERS = {
    "order": cmd_order,
    "shadow": cmd_shadow,
    "curtain": cmd_curtain,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "defect": cmd_defect,
    "reproduce": cmd_reproduce,
}


def parse_config(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    cfg = RunConfig(
        command=command,
        out=ns.pop("out"),
        format=ns.pop("format"),
        seed=ns.pop("seed"),
        tol=ns.pop("tol"),
        verbose=ns.pop("verbose"),
    )
    cfg.inputs = {k: ns.pop(k) for k in _INPUTS if k in ns}
    cfg.options = ns
    if command == "reproduce" and cfg.seed is None:
        cfg.seed = DEFAULT_SEED
    cfg.validate()
    return cfg


def dispatch(cfg: RunConfig) -> int:
    key = cfg.options.get("subcommand", cfg.command)
    return _HANDLERS[key](cfg)


def _fail(payload: dict, verbose: bool) -> None:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    if verbose:
        print(f"error ({payload['kind']}): {payload['message']}")


def main(argv=None) -> int:
    verbose = "--verbose" in (sys.argv[1:] if argv is None else argv)
    try:
        return dispatch(parse_config(argv))
    except FeasibilityError as err:
        _fail(err.to_json(), verbose)
    except NonConvergence as err:
        _fail({"kind": "nonconvergence", "message": str(err), "level": err.level,
               "last_delta": err.last_delta}, verbose)
    except DomainError as err:
        _fail({"kind": getattr(err, "kind", "domain"), "message": str(err)}, verbose)
    except Exception as err:  # noqa: BLE001 - last-resort report for the exit status contract
        _fail({"kind": "internal", "message": f"{type(err).__name__}: {err}"}, verbose)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
