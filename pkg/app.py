"""
sudest: command-line entry point

Commands:
- design build|check   construct MUB/SIC vector sets or certify a vector file as a 2-design
- qfi                  QFI of an input family, Tr H^-1 against the optimal bound, attainability defect
- approx               concentration experiment for Haar approximate designs (CSV + SVG histogram)
- simulate             Monte-Carlo MLE experiments, N Tr MSE against the bound (CSV + JSON + SVG),
                       diffed against the previous simulate snapshot
- verify               the identity suite (exit 1 when a check fails)

Run:
    python app.py qfi --d 2 --n 2 --state mub
    python app.py simulate --d 2 --n 1 2 3 4 --N 5000 --trials 200

Settings: flags > --config JSON > .env / environment (SUDEST_*) > defaults.
Every command writes <output_dir>/<command>_<timestamp>.* and refreshes latest_<command>.json.
Exit codes: 0 ok, 1 failed check or certification, 2 usage / validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from estimation.acceptance import CHECKS, SLOW_CHECKS, run_suite
from estimation.designs import VectorSet, mub_prime, mub_vectors, sic_povm, verify_2design
from estimation.estimate import (
    MEASUREMENT_FAMILIES,
    STATE_FAMILIES,
    ExperimentConfig,
    build_input,
    input_qfi,
    mse_experiment,
)
from estimation.qfi import attainability_defect, concentration_experiment, optimal_cn
from estimation.states import condition_on_ancilla, reduced_moments
from utils.config import resolve, resolve_seed
from utils.errors import SudestError, UnsupportedError, ValidationError
from utils.records import compare_rows, format_diff, latest_path, load_previous, save_snapshot
from utils.report import (
    render_histogram_svg,
    render_line_svg,
    run_meta,
    to_json_text,
    write_csv,
    write_json,
    write_svg,
)
from utils.sud import gell_mann_basis

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

# ---------- Konfig ----------
COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "design": {"kind": "mub", "d": 2, "file": None},
    "qfi": {"d": 2, "n": [1], "state": "mub", "m": None, "eps": 0.5, "q": 0.95},
    "approx": {"d": 2, "n": 2, "eps": 0.5, "q": 0.95, "repeats": 200, "m": None},
    "simulate": {
        "d": 2, "n": [1], "N": 5000, "trials": 200, "state": "mub", "measurement": "optimal",
        "theta": None, "m": None, "eps": 0.5, "q": 0.95, "pairs": 4,
    },
    "verify": {"quick": False, "mse": False, "inject_fault": None, "only": None},
}


def _timestamp() -> str:
    return datetime.now().strftime("%Y%m%d_%H%M%S")


def _out_base(cfg: Dict[str, Any], command: str) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{command}_{_timestamp()}"


def _as_list(x) -> List[int]:
    return [int(v) for v in (x if isinstance(x, (list, tuple)) else [x])]


# ---------- Kommandon ----------
def cmd_design(cfg: Dict[str, Any]) -> tuple[int, Dict[str, Any]]:
    if cfg["action"] == "build":
        d = int(cfg["d"])
        if cfg["kind"] == "mub":
            bases = mub_prime(d)
            vs = mub_vectors(bases)
            payload: Dict[str, Any] = {
                "kind": "mub",
                "d": d,
                "bases": [[[[float(z.real), float(z.imag)] for z in b[:, k]] for k in range(d)] for b in bases],
            }
        elif cfg["kind"] == "sic":
            vs = sic_povm(d)
            payload = {"kind": "sic", "d": d}
        else:
            raise ValidationError(f"design build: unknown kind {cfg['kind']!r} (mub or sic)")
        payload["vectors"] = vs.to_json()
    else:
        if not cfg.get("file"):
            raise ValidationError("design check: --file is required")
        with open(cfg["file"], "r", encoding="utf-8") as f:
            data = json.load(f)
        vs = VectorSet.from_json(data["vectors"] if isinstance(data, dict) else data)
        payload = {"kind": "file", "file": str(cfg["file"]), "d": vs.d}

    report = verify_2design(vs)
    payload["m"] = vs.m
    payload["report"] = report.as_dict()
    mark = "✔️" if report.is_design else "❌"
    print(f"{mark} {vs.m} vektorer i d={vs.d}: HS-avstånd {report.hs_distance:.3e} (tolerans {report.tolerance:g})")
    return (EXIT_OK if report.is_design else EXIT_FAILED), payload


def _qfi_row(family: str, d: int, n: int, rng, cfg) -> Dict[str, Any]:
    state, _ = build_input(family, d, n, rng, cfg.get("m"), cfg["eps"], cfg["q"])
    h = input_qfi(state, family, d)
    basis = gell_mann_basis(d)
    if family == "product":
        # each product branch on its own: the commutator condition fails there
        defect = max(
            attainability_defect(reduced_moments(condition_on_ancilla(state, a).normalized(), two_copy=False), basis)
            for a in np.eye(state.ancilla_dim)
        )
    else:
        defect = attainability_defect(reduced_moments(state, two_copy=False), basis)
    eig = h.eigenvalues()
    bound = optimal_cn(d, n)
    return {
        "d": d,
        "n": n,
        "state": family,
        "trace_qfi": float(np.trace(h.entries)),
        "trace_inverse": h.trace_inverse(),
        "bound": bound,
        "gap": h.trace_inverse() - bound,
        "defect": defect,
        "min_eig": float(eig[0]),
        "max_eig": float(eig[-1]),
        "qfi": h.entries.tolist(),
    }


def cmd_qfi(cfg: Dict[str, Any]) -> tuple[int, Dict[str, Any]]:
    rng = np.random.default_rng(cfg["seed"])
    d = int(cfg["d"])
    rows = [_qfi_row(cfg["state"], d, n, rng, cfg) for n in _as_list(cfg["n"])]
    for r in rows:
        print(
            f"  d={r['d']} n={r['n']} {r['state']}: Tr H = {r['trace_qfi']:.6f}  Tr H^-1 = {r['trace_inverse']:.6f}  "
            f"bound = {r['bound']:.6f}  defect = {r['defect']:.2e}"
        )
    return EXIT_OK, {"rows": rows}


def cmd_approx(cfg: Dict[str, Any]) -> tuple[int, Dict[str, Any]]:
    rng = np.random.default_rng(cfg["seed"])
    d, n = int(cfg["d"]), int(cfg["n"])
    report = concentration_experiment(
        d, n, float(cfg["eps"]), float(cfg["q"]), int(cfg["repeats"]), rng, m=cfg.get("m"), progress=cfg["progress"]
    )
    print(f"  m = {report.m} Haar-unitärer per upprepning (eps={report.eps}, q={report.q})")
    mark = "✔️" if report.passed else "❌"
    print(f"{mark} Andel brott: {report.violation_fraction:.3f} (tillåtet {1 - report.q:.3f})")
    rows = [
        {
            "repeat": i, "d": d, "n": n, "m": report.m, "eps": report.eps, "q": report.q,
            "low": float(lo), "high": float(hi), "violated": bool(v),
        }
        for i, (lo, hi, v) in enumerate(zip(report.low, report.high, report.violations))
    ]
    payload = {"m": report.m, "violation_fraction": report.violation_fraction, "passed": report.passed, "rows": rows}
    return (EXIT_OK if report.passed else EXIT_FAILED), payload


def cmd_simulate(cfg: Dict[str, Any]) -> tuple[int, Dict[str, Any]]:
    """
    Kör ett MSE-experiment per n. Seed för n nummer i är master-seed + i,
    så en enskild rad kan köras om på egen hand.
    """
    reports = []
    for i, n in enumerate(_as_list(cfg["n"])):
        exp = ExperimentConfig.from_dict({
            **cfg,
            "n": n,
            "seed": (int(cfg["seed"]) + i) % 2 ** 64,
        })
        print(f"▶️  d={exp.d} n={n} N={exp.N} trials={exp.trials} state={exp.state} measurement={exp.measurement}")
        rep = mse_experiment(exp)
        print(f"   N Tr MSE = {rep.n_times_trace:.4f}  bound = {rep.bound:.4f}  ratio = {rep.ratio:.3f}  CRB = {rep.crb:.4f}")
        reports.append(rep)
    return EXIT_OK, {"reports": [r.as_dict() for r in reports]}


def cmd_verify(cfg: Dict[str, Any]) -> tuple[int, Dict[str, Any]]:
    known = set(CHECKS) | set(SLOW_CHECKS)
    if cfg.get("inject_fault") and cfg["inject_fault"] not in known:
        raise ValidationError(f"verify: --inject-fault must name a check ({', '.join(sorted(known))})")
    results = run_suite(
        int(cfg["seed"]),
        quick=bool(cfg["quick"]),
        include_mse=bool(cfg["mse"]),
        inject_fault=cfg.get("inject_fault"),
        only=cfg.get("only"),
        progress=cfg["progress"],
    )
    for r in results:
        mark = "✔️  PASS" if r.passed else "❌ FAIL"
        print(f"{mark}  {r.name:<20} {r.value:.3e} <= {r.threshold:.1e}  {r.detail}")
    ok = all(r.passed for r in results)
    return (EXIT_OK if ok else EXIT_FAILED), {"passed": ok, "checks": [r.as_dict() for r in results]}


COMMANDS = {
    "design": cmd_design,
    "qfi": cmd_qfi,
    "approx": cmd_approx,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


# ---------- Artefakter ----------
def _write_outputs(command: str, cfg: Dict[str, Any], payload: Dict[str, Any], meta: Dict[str, Any]) -> None:
    """Skriver CSV/JSON/SVG och snapshot för kommandot; simulate jämförs även mot förra körningen."""
    base = _out_base(cfg, command)
    if command == "design":
        write_json(payload, base.with_suffix(".json"), meta)
        save_snapshot([payload["report"]], command, cfg["output_dir"], meta)
        return
    if command == "qfi":
        write_csv(payload["rows"], base.with_suffix(".csv"), "qfi/1", meta)
        write_json(payload, base.with_suffix(".json"), meta)
        save_snapshot([{k: v for k, v in r.items() if k != "qfi"} for r in payload["rows"]], command, cfg["output_dir"], meta)
        return
    if command == "approx":
        write_csv(payload["rows"], base.with_suffix(".csv"), "approx/1", meta)
        eps = float(cfg["eps"])
        values = [r["low"] for r in payload["rows"]] + [r["high"] for r in payload["rows"]]
        svg = render_histogram_svg(
            values, f"Relative QFI eigenvalues, d={cfg['d']}, n={cfg['n']}, m={payload['m']}",
            "eigenvalue of H0^-1/2 (H - H0) H0^-1/2", meta, markers=(-eps, eps),
        )
        write_svg(svg, base.with_suffix(".svg"))
        save_snapshot([{k: payload[k] for k in ("m", "violation_fraction", "passed")}], command, cfg["output_dir"], meta)
        return
    if command == "simulate":
        rows = [{k: v for k, v in r.items() if k not in ("mse_matrix", "estimates")} for r in payload["reports"]]
        write_csv(rows, base.with_suffix(".csv"), "simulate/1", meta)
        write_json(payload, base.with_suffix(".json"), meta)
        d = int(cfg["d"])
        factor = 2.0 if cfg["measurement"] == "random" else 1.0
        svg = render_line_svg(
            [r["n"] for r in rows], [r["scaled"] for r in rows],
            f"N Tr MSE n(n+d), d={d}, {cfg['state']} / {cfg['measurement']}", "n", "N Tr MSE n(n+d)", meta,
            reference=factor * d * (d + 1) ** 2 * (d - 1) / 4,
        )
        write_svg(svg, base.with_suffix(".svg"))
        previous = load_previous(latest_path(cfg["output_dir"], command))
        diff = compare_rows(rows, previous)
        print("📊 Jämfört med föregående körning: " + format_diff(diff))
        save_snapshot(rows, command, cfg["output_dir"], meta)
        return
    write_csv(payload["checks"], base.with_suffix(".csv"), "verify/1", meta)
    write_json(payload, base.with_suffix(".json"), meta)
    save_snapshot(payload["checks"], command, cfg["output_dir"], meta)


# ---------- CLI ----------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings (below flags, above env)")
    common.add_argument("--seed", type=int, help="master seed, 64-bit unsigned; 0 = draw from entropy")
    common.add_argument("--workers", type=int, help="worker processes for trials")
    common.add_argument("--dense-cap", dest="dense_cap", type=int, help="largest full-space dimension")
    common.add_argument("--out", dest="output_dir", help="output directory (default SUDEST_OUTPUT_DIR or logs/runs)")
    common.add_argument("--json", dest="emit_json", action="store_true", help="print the result as JSON")
    common.add_argument("--no-progress", dest="progress", action="store_const", const=False, help="hide progress bars")

    parser = argparse.ArgumentParser(prog="sudest", description="Optimal estimation of SU(d) channels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", parents=[common], help="build or certify 2-designs")
    p.add_argument("action", choices=["build", "check"])
    p.add_argument("--kind", choices=["mub", "sic"])
    p.add_argument("--d", type=int)
    p.add_argument("--file", help="vector set JSON (list of vectors of [re, im] pairs)")

    p = sub.add_parser("qfi", parents=[common], help="QFI of an input family")
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--state", choices=STATE_FAMILIES)
    p.add_argument("--m", type=int, help="approx: number of Haar unitaries")
    p.add_argument("--eps", type=float)
    p.add_argument("--q", type=float)

    p = sub.add_parser("approx", parents=[common], help="concentration of approximate designs")
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--m", type=int, help="override the Chernoff sample size")

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo MSE experiments")
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--N", dest="N", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--state", choices=STATE_FAMILIES)
    p.add_argument("--measurement", "--strategy", dest="measurement", choices=MEASUREMENT_FAMILIES)
    p.add_argument("--theta", type=float, nargs="+", help="true parameter (default: chart origin)")
    p.add_argument("--m", type=int)
    p.add_argument("--pairs", type=int, help="random: Haar basis pairs in the mixture")

    p = sub.add_parser("verify", parents=[common], help="run the identity suite")
    p.add_argument("--quick", action="store_const", const=True, help="smaller statistical checks")
    p.add_argument("--mse", action="store_const", const=True, help="include the Monte-Carlo MSE check")
    p.add_argument("--inject-fault", dest="inject_fault", metavar="CHECK", help="test hook: make CHECK fail")
    p.add_argument("--only", nargs="+", metavar="CHECK")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Returnerar exit-kod: 0 ok, 1 misslyckad kontroll, 2 fel i anrop eller indata."""
    args = build_parser().parse_args(argv)
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "emit_json")}

    try:
        cfg = resolve(flags, args.config, COMMAND_DEFAULTS[command])
        cfg["seed"] = resolve_seed(cfg["seed"])
        print(f"⚙️  {command}: " + json.dumps(cfg, ensure_ascii=False, default=str))
        started = time.perf_counter()
        code, payload = COMMANDS[command](cfg)
    except (ValidationError, UnsupportedError, ValueError, OSError, KeyError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except SudestError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_FAILED

    meta = run_meta(command, cfg, cfg["seed"], time.perf_counter() - started)
    _write_outputs(command, cfg, payload, meta)
    print(f"\n{'✔️' if code == EXIT_OK else '❌'} {command} klar (seed {cfg['seed']}).")
    if args.emit_json:
        print(to_json_text(payload, meta))
    return code


if __name__ == "__main__":
    sys.exit(main())
