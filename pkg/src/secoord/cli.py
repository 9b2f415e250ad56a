"""Command-line front end.

Every command writes ``<command>.json`` (report plus manifest) and, when
asked, ``<command>.csv`` into ``--out-dir``. All randomness comes from
``--seed``; each subsystem receives a seed derived from it by hashing a
label, so adding a subsystem never shifts the streams of the others.

Exit codes: 0 ok, 1 parse error, 2 domain error, 3 no feasible point,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from . import example1 as ex
from . import fme
from . import osrbsim as sim
from . import probcore as pc
from .errors import DomainError, InputError, NoFeasiblePointFound, SecoordError
from .factorize import AuxiliaryFactorization, Kind
from .regions import evaluate as ev
from .regions import optimize as opt

EXIT_OK, EXIT_PARSE, EXIT_DOMAIN, EXIT_NO_POINT, EXIT_VERIFY = 0, 1, 2, 3, 4
KINDS = ("inner", "outer", "thm3", "crib", "remark1")
TREND_TOL = 1e-9
NO_DECAY_FLOOR = 0.1


class VerificationFailed(SecoordError):
    """A check requested on the command line did not pass."""

    def __init__(self, message: str, result: "Result"):
        super().__init__(message)
        self.result = result


@dataclass
class Result:
    body: dict
    rows: list[dict] = field(default_factory=list)
    inputs: list[Path] = field(default_factory=list)
    text: str = ""


def derive_seed(seed: int, label: str) -> int:
    """64-bit seed for subsystem ``label``."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _data_path(name: str) -> Path:
    """A file path, falling back to the shipped data directory."""
    p = Path(name)
    if p.exists():
        return p
    shipped = resources.files("secoord").joinpath("data", name)
    if shipped.is_file():
        return Path(str(shipped))
    raise InputError(f"{name}: no such file")


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _dump(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _clean(v) for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------- eval


def _load_factorization(name: str) -> tuple[AuxiliaryFactorization, Path]:
    path = _data_path(name)
    try:
        return AuxiliaryFactorization.from_json(_read_json(path)), path
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: malformed factorization ({e})") from None


def cmd_eval(args: argparse.Namespace) -> Result:
    cert, path = _load_factorization(args.fact)
    joint = cert.assemble()
    if args.kind == "remark1":
        r1, r2 = args.link_rates
        cset = ev.remark1_specialize(joint, r1, r2)
    elif args.kind == "outer":
        cset = ev.eval_outer(joint, args.eps)
    else:
        want = Kind.parse(args.kind)
        if cert.kind is not want:
            raise DomainError(f"{path}: factorization is {cert.kind.value}, not {want.value}")
        cset = ev.EVALUATORS[want.value](joint)
    body = cset.to_json()
    body["min_R01"] = cset.min_r01()
    body["feasible"] = cset.feasible
    failed = [p.name for p in cset.feasibility if not p.holds]
    if failed:
        body["failed_constraints"] = failed
    rows = [{"name": p["name"], "type": "feasibility", "lhs": p["lhs"], "rhs": p["rhs"], "slack": p["slack"]}
            for p in body["constraints"]]
    rows += [{"name": h["name"], "type": "rate_bound", "lhs": f"{h['a']}*R01 + {h['b']}*R02", "rhs": h["c"], "slack": ""}
             for h in body["rate_bounds"]]
    text = f"{cset.kind}: min R01 = {body['min_R01']:.6f}, feasible = {cset.feasible}"
    if failed:
        text += f" (violated: {', '.join(failed)})"
    return Result(body, rows, [path], text)


# ---------------------------------------------------------------- optimize


def _parse_cards(items: Sequence[str] | None) -> dict[str, int] | None:
    if not items:
        return None
    out = {}
    for item in items:
        name, _, size = item.partition("=")
        try:
            out[name] = int(size)
        except ValueError:
            raise InputError(f"--cards expects NAME=SIZE, got {item!r}") from None
    return out


def cmd_optimize(args: argparse.Namespace) -> Result:
    tpath, cpath = _data_path(args.target), _data_path(args.channel)
    try:
        q = pc.pmf_from_json(_read_json(tpath))
        channel = pc.kernel_from_json(_read_json(cpath))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed target or channel ({e})") from None
    cards = _parse_cards(args.cards)
    if cards is not None:
        cards = {**opt.default_cards(args.kind, q, channel), **cards}
    budget = opt.OptimizationBudget(
        restarts=args.restarts,
        iterations=args.iterations,
        seed=derive_seed(args.seed, "optimize"),
        jobs=args.jobs,
    )
    point = opt.minimize_r01(args.kind, q, channel, cards, budget)
    body = point.to_json()
    rows = [{"kind": body["kind"], "R01": body["R01"], "R02": body["R02"], "residual": body["residual"],
             "restart": body["restart"], "feasible": body["feasible"]}]
    return Result(body, rows, [tpath, cpath], f"{body['kind']}: R01 = {body['R01']:.9f}")


# ---------------------------------------------------------------- fme


def _load_system(name: str) -> tuple[fme.LinearSystem, Path | None]:
    if name in fme.FIXTURES:
        return fme.load_fixture(name), None
    path = _data_path(name)
    return fme.parse_system(path.read_text()), path


def cmd_fme(args: argparse.Namespace) -> Result:
    system, path = _load_system(args.system)
    inputs = [path] if path else []
    eliminated = fme.eliminate(system, args.eliminate)
    text = fme.format_system(eliminated)
    body: dict = {
        "eliminated": list(args.eliminate),
        "rows_before": len(system),
        "rows_after": len(eliminated),
        "system": text.splitlines(),
    }
    rows = [{"row": line} for line in text.splitlines()]
    if args.check_against:
        other, opath = _load_system(args.check_against)
        if opath:
            inputs.append(opath)
        seed = derive_seed(args.seed, "fme")
        verdict = fme.equivalence_check(
            eliminated, other, fme.pmf_sampler(Kind.parse(args.kind)), args.trials, seed=seed
        )
        body["verdict"] = {
            "equivalent": verdict.equivalent,
            "trials": verdict.trials,
            "feasible_trials": verdict.feasible_trials,
            "grid_points": verdict.grid_points,
            "seed": seed,
            "counterexample": verdict.counterexample,
        }
        text += f"\nequivalent: {verdict.equivalent} ({verdict.trials} trials)"
        if not verdict.equivalent:
            raise VerificationFailed("counterexample found", Result(body, rows, inputs, text))
    return Result(body, rows, inputs, text)


# ---------------------------------------------------------------- simulate


def _protocol_cert(cfg: dict) -> AuxiliaryFactorization:
    fact = cfg.get("factorization", "example1")
    if fact == "example1":
        return ex.protocol_inner(
            cfg.get("bias", ex.PROTOCOL_BIAS), cfg.get("noise", ex.DEFAULT_NOISE), cfg.get("v_size", ex.PROTOCOL_V)
        )
    if isinstance(fact, str):
        return _load_factorization(fact)[0]
    return AuxiliaryFactorization.from_json(fact)


def _protocol_rates(cfg: dict) -> tuple[float, float, float, float]:
    if "rates" in cfg:
        r = tuple(float(x) for x in cfg["rates"])
        if len(r) != 4:
            raise InputError("rates must be [R01, R02, Rt1, Rt2]")
        return r  # type: ignore[return-value]
    return ex.protocol_rates(
        cfg.get("bias", ex.PROTOCOL_BIAS), cfg.get("v_size", ex.PROTOCOL_V), cfg.get("placement", ex.PROTOCOL_PLACEMENT)
    )


def protocol_trend(records: Sequence[sim.SimRecord], expect: str) -> tuple[bool, str]:
    """Trend assertion on a sweep: ``decay`` or ``no_decay``."""
    if len(records) < 2 and expect == "decay":
        return True, "single blocklength: no trend asserted"
    first, last = records[0], records[-1]
    if expect == "decay":
        ok = last.tv_coord <= first.tv_coord and last.leakage <= first.leakage + TREND_TOL
        return ok, (f"tv {first.tv_coord:.6f} -> {last.tv_coord:.6f}, "
                    f"leakage {first.leakage:.6g} -> {last.leakage:.6g}")
    if expect == "no_decay":
        worst = min(r.tv_coord for r in records)
        return worst >= NO_DECAY_FLOOR, f"min tv {worst:.6f} (floor {NO_DECAY_FLOOR})"
    return True, "no trend requested"


def _simulate_protocol(cfg: dict, seed: int) -> tuple[dict, list[dict], bool, str]:
    cert = _protocol_cert(cfg)
    rates = _protocol_rates(cfg)
    ns = [int(n) for n in cfg.get("n", [1, 2, 3, 4])]
    mode = cfg.get("mode", "exact")
    template = sim.ProtocolConfig(ns[0], cert, rates, seed=seed, mode=mode, samples=int(cfg.get("samples", 0)))
    seeds = cfg.get("seeds", 1)
    seeds = int(seeds) if isinstance(seeds, (int, float)) else [int(k) for k in seeds]
    try:
        report = sim.sweep_blocklengths(template, ns, seeds)
    except sim.EnumerationTooLarge:
        if not cfg.get("mc_fallback") or mode != "exact":
            raise
        template = sim.ProtocolConfig(ns[0], cert, rates, seed=seed, mode="montecarlo",
                                      samples=int(cfg.get("samples", 100000)))
        report = sim.sweep_blocklengths(template, ns, seeds)
    ok, detail = protocol_trend(report.records, cfg.get("expect", "none"))
    slacks = sim.rate_slacks(template)
    body = {"type": "protocol", "rates": list(rates), "rate_slacks": slacks, **report.to_json()}
    rows = [{"n": r.n, "tv_coord": r.tv_coord, "leakage_bits": r.leakage, "sw_error": r.sw_error,
             "extraction_kl": r.extraction_kl, "se_tv": r.se_tv, "se_leakage": r.se_leakage, "se_sw": r.se_sw}
            for r in report.records]
    return body, rows, ok, detail


def _extraction_source(source_cfg: Any) -> pc.JointPmf:
    if isinstance(source_cfg, dict) and "dsbs" in source_cfg:
        p = float(source_cfg["dsbs"])
        table = np.array([[1 - p, p], [p, 1 - p]]) / 2
        return pc.make_joint([pc.Alphabet.of_size("A", 2), pc.Alphabet.of_size("B", 2)], table)
    return pc.pmf_from_json(source_cfg)


def _simulate_extraction(cfg: dict, seed: int) -> tuple[dict, list[dict], bool, str]:
    source = _extraction_source(cfg["source"])
    recs = sim.extraction_test(source, float(cfg["rate"]), [int(n) for n in cfg["n"]],
                               int(cfg.get("seeds", 50)), seed)
    kls = [r.kl for r in recs]
    if cfg.get("expect") == "decay":
        ok = all(b <= a for a, b in zip(kls, kls[1:]))
        detail = "KL " + " -> ".join(f"{k:.6f}" for k in kls)
    else:
        ok, detail = True, "no trend requested"
    rows = [{"n": r.n, "tv_coord": "", "leakage_bits": "", "sw_error": "", "extraction_kl": r.kl,
             "se_tv": "", "se_leakage": "", "se_sw": "", "bins": r.bins, "se_kl": r.kl_se, "pinsker_ok": r.pinsker_ok}
            for r in recs]
    body = {"type": "extraction", "records": rows}
    return body, rows, ok, detail


def cmd_simulate(args: argparse.Namespace) -> Result:
    path = _data_path(args.config)
    cfg = _read_json(path)
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: config must be a JSON object")
    seed = derive_seed(args.seed, "simulate")
    kind = cfg.get("type", "protocol")
    try:
        if kind == "protocol":
            body, rows, ok, detail = _simulate_protocol(cfg, seed)
        elif kind == "extraction":
            body, rows, ok, detail = _simulate_extraction(cfg, seed)
        else:
            raise InputError(f"{path}: unknown simulation type {kind!r}")
    except KeyError as e:
        raise InputError(f"{path}: missing field {e}") from None
    body["trend"] = {"expect": cfg.get("expect", "none"), "pass": ok, "detail": detail}
    text = f"trend {'PASS' if ok else 'FAIL'}: {detail}"
    result = Result(body, rows, [path], text)
    if not ok:
        raise VerificationFailed(f"trend check failed: {detail}", result)
    return result


# ---------------------------------------------------------------- prop1


def cmd_prop1(args: argparse.Namespace) -> Result:
    nocrib = ev.eval_inner(ex.nocrib_inner().assemble())
    thm3 = ev.eval_thm3(ex.nocrib_thm3().assemble())
    crib = ev.eval_crib(ex.crib_choice().assemble())
    table = [
        {"scheme": "no cribbing", "H_requirement": nocrib.predicate("link_sum").rhs, "min_R01": thm3.min_r01()},
        {"scheme": "cribbing", "H_requirement": crib.predicate("link_sum").rhs, "min_R01": crib.min_r01()},
    ]
    body: dict = {"table": table}
    lines = [f"{r['scheme']:<12} H >= {r['H_requirement']:.4f}  R01 >= {r['min_R01']:.4f}" for r in table]
    if args.trials > 0:
        seed = derive_seed(args.seed, "prop1")
        rep = opt.converse_search_prop1(args.trials, seed=seed)
        body["converse"] = {**rep.to_json(), "seed": seed}
        lines.append(
            f"converse search: {rep.valid} valid of {rep.trials}, min I(U1;X1) = {rep.min_i_u1_x1:.6f}, "
            f"violations = {rep.violations}"
        )
    return Result(body, table, [], "\n".join(lines))


# ---------------------------------------------------------------- driver


COMMANDS: dict[str, Callable[[argparse.Namespace], Result]] = {
    "eval": cmd_eval,
    "optimize": cmd_optimize,
    "fme": cmd_fme,
    "simulate": cmd_simulate,
    "prop1": cmd_prop1,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="secoord", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="worker cap (default 1)")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="report directory (default .)")
    p.add_argument("--format", choices=("json", "csv", "both"), default="json")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eval", help="evaluate a region at a factorization")
    e.add_argument("--kind", choices=KINDS, required=True)
    e.add_argument("--fact", required=True, help="factorization JSON (shipped names allowed)")
    e.add_argument("--eps", type=float, default=None, help="outer-bound epsilon (default: limit mode)")
    e.add_argument("--link-rates", type=float, nargs=2, default=(1.0, 1.0), metavar=("R1", "R2"))

    o = sub.add_parser("optimize", help="minimize R01 over factorizations")
    o.add_argument("--kind", choices=("inner", "outer", "thm3", "crib"), required=True)
    o.add_argument("--target", required=True)
    o.add_argument("--channel", required=True)
    o.add_argument("--restarts", type=int, default=4)
    o.add_argument("--iterations", type=int, default=1200)
    o.add_argument("--cards", nargs="*", metavar="NAME=SIZE")

    f = sub.add_parser("fme", help="eliminate variables from an inequality system")
    f.add_argument("--system", required=True, help="file or shipped fixture name")
    f.add_argument("--eliminate", nargs="+", required=True)
    f.add_argument("--check-against")
    f.add_argument("--kind", choices=("inner", "crib"), default="inner", help="pmf family for the check")
    f.add_argument("--trials", type=int, default=200)

    s = sub.add_parser("simulate", help="run a protocol or extraction sweep")
    s.add_argument("--config", required=True)

    r = sub.add_parser("prop1", help="achievability table and converse search")
    r.add_argument("--trials", type=int, default=20000)
    return p


def _manifest(args: argparse.Namespace, inputs: list[Path]) -> dict:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    return {
        "command": args.command,
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "inputs": {str(p): _digest(p) for p in inputs},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _write(args: argparse.Namespace, result: Result, status: str) -> None:
    out: Path = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("json", "both"):
        doc = {"manifest": _manifest(args, result.inputs), "status": status, "report": result.body}
        (out / f"{args.command}.json").write_text(_dump(doc))
    if args.format in ("csv", "both"):
        (out / f"{args.command}.csv").write_text(_csv(result.rows))


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_PARSE
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_PARSE
    try:
        result = COMMANDS[args.command](args)
    except VerificationFailed as e:
        _write(args, e.result, "verification-failure")
        print(e.result.text, file=sys.stdout)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except NoFeasiblePointFound as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_POINT
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    _write(args, result, "ok")
    if result.text:
        print(result.text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
