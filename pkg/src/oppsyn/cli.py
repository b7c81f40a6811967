"""Command-line surface: evaluate, bound, synthesize, sweep, graph.

Exit codes: 0 ok, 2 bad input, 3 infeasible, 4 numerical failure,
5 refinement failed.  All outputs are JSON/CSV; report-producing commands
render figures next to the delimited output unless --no-plot is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import graph as graph_mod
from . import pattern as pat
from .recovery import (
    RefineFailed,
    extract_occupancies,
    recover_sequence,
    refine,
    refine_over_paths,
)
from .relaxation import assemble
from .sdp import compile as sdp_compile, solve_hierarchy
from .sdpa import export_sdpa, validate_sdpa

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4
EXIT_REFINE = 5


class InputError(Exception):
    pass


def _load_problem(path) -> pat.ConverterProblem:
    try:
        return pat.problem_from_dict(pat.load_json(path))
    except (pat.PatternError, OSError) as exc:
        raise InputError(f"problem file {path}: {exc}") from exc


def _load_sequence(path) -> pat.SwitchingSequence:
    try:
        return pat.sequence_from_dict(pat.load_json(path))
    except (pat.PatternError, OSError) as exc:
        raise InputError(f"pattern file {path}: {exc}") from exc


def _write_json(path, doc) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _trajectory_rows(seq, prob, samples: int):
    m = prob.modulation_index
    thetas = np.linspace(0.0, 2.0 * math.pi, samples)
    u = pat.sample_signal(seq, prob, thetas)
    cur = pat.sample_current(seq, prob, thetas)
    ref = -m * np.cos(thetas)
    return thetas, u, cur, ref


def cmd_eval(args) -> int:
    prob = _load_problem(args.problem)
    seq = _load_sequence(args.pattern)
    if seq.d != prob.pulse_number:
        raise InputError(
            f"pattern has {seq.d} angles but the problem expects {prob.pulse_number}"
        )
    try:
        seq.validate(prob)
    except pat.PatternError as exc:
        raise InputError(str(exc)) from exc
    ratings = None
    if args.ratings:
        doc = pat.load_json(args.ratings)
        try:
            ratings = pat.Ratings(**doc)
        except (TypeError, pat.PatternError) as exc:
            raise InputError(f"ratings file {args.ratings}: {exc}") from exc
    report = pat.check_feasibility(seq, prob, ratings)
    _write_json(args.out_report, pat.report_to_dict(report))
    thetas, u, cur, ref = _trajectory_rows(seq, prob, args.samples)
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta", "u", "I", "I_residual"])
            for row in zip(thetas, u, cur, cur - ref):
                writer.writerow([f"{v:.12g}" for v in row])
        if args.plot:
            from .plots import render_waveforms

            fig_path = args.out_fig or os.path.splitext(args.out_csv)[0] + ".png"
            render_waveforms(thetas, u, cur, ref, fig_path)
    return EXIT_OK


def cmd_bound(args) -> int:
    prob = _load_problem(args.problem)
    objective = args.objective or prob.objective
    t0 = time.perf_counter()
    if args.sdpa_out:
        rel = assemble(prob, args.beta, objective)
        cp = sdp_compile(rel)
        prep = time.perf_counter() - t0
        export_sdpa(cp, args.sdpa_out,
                    comment=f"N={prob.n_levels} d={prob.pulse_number} beta={args.beta}")
        _write_json(args.out, {
            "status": "exported", "sdpa_file": args.sdpa_out,
            "schema": validate_sdpa(args.sdpa_out),
            "timings": {"preprocess_s": prep, "solve_s": 0.0},
        })
        return EXIT_OK
    hb = solve_hierarchy(prob, args.beta, tol=args.tol, maxiter=args.maxiter,
                         objective=objective)
    last = hb.per_degree[-1] if hb.per_degree else None
    doc = {
        "status": hb.status,
        "beta": args.beta,
        "p_beta": hb.p_beta,
        "q_beta": hb.q_beta,
        "q_clamped": hb.q_clamped,
        "residuals": (last.residuals if last else {}),
        "iterations": (last.iterations if last else 0),
        "per_degree": [
            {"status": s.status, "p_certified": s.p_beta, "p_dual": s.p_dual,
             "residuals": {k: float(v) for k, v in s.residuals.items()}}
            for s in hb.per_degree
        ],
        "timings": {"preprocess_s": hb.preprocess_seconds,
                    "solve_s": hb.solve_seconds},
    }
    _write_json(args.out, doc)
    if hb.status == "infeasible":
        return EXIT_INFEASIBLE
    if hb.p_beta is None:
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_synth(args) -> int:
    prob = _load_problem(args.problem)
    t0 = time.perf_counter()
    hb = solve_hierarchy(prob, args.beta, tol=args.tol, maxiter=args.maxiter)
    if hb.status == "infeasible":
        _write_json(args.out_cert, {"status": "infeasible"})
        return EXIT_INFEASIBLE
    if hb.p_beta is None:
        _write_json(args.out_cert, {"status": "numerical"})
        return EXIT_NUMERICAL
    if args.warm_start:
        start = _load_sequence(args.warm_start)
    else:
        sol = hb.best_solution
        if sol is None or not sol.moments:
            _write_json(args.out_cert, {"status": "numerical"})
            return EXIT_NUMERICAL
        rel = assemble(prob, hb.best_degree)
        xi = extract_occupancies(sol, rel)
        start = recover_sequence(xi, prob, fallback=True)
    try:
        if args.warm_start:
            result = refine(start, prob, seed=args.seed)
        else:
            result = refine_over_paths(start, prob, seed=args.seed)
        code = EXIT_OK
    except RefineFailed as exc:
        result = exc.best
        code = EXIT_REFINE
    _write_json(args.out_pattern, pat.sequence_to_dict(result.sequence))
    if args.out_trace:
        with open(args.out_trace, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "max_violation"])
            for row in result.trace:
                writer.writerow([row[0], f"{row[1]:.12g}", f"{row[2]:.3g}"])
    cert = {
        "status": "ok" if code == EXIT_OK else "refine-failed",
        "q_bound": hb.q_beta,
        "q_refined": result.quality,
        "gap": (result.quality - hb.q_beta) if hb.q_beta is not None else None,
        "objective": result.objective,
        "max_violation": result.max_violation,
        "adopted": result.adopted,
        "timings": {"preprocess_s": hb.preprocess_seconds,
                    "solve_s": hb.solve_seconds,
                    "total_s": time.perf_counter() - t0},
    }
    _write_json(args.out_cert, cert)
    if args.plot and code == EXIT_OK:
        from .plots import render_waveforms

        thetas, u, cur, ref = _trajectory_rows(result.sequence, prob, args.samples)
        fig_path = os.path.splitext(args.out_pattern)[0] + ".png"
        render_waveforms(thetas, u, cur, ref, fig_path)
    return code


def _sweep_cell(payload):
    (prob_doc, d, m, beta, tol, maxiter, seed) = payload
    base = pat.problem_from_dict(prob_doc)
    harmonics = tuple(
        pat.Harmonic(h.order, m if h.order == 1 and h.is_equality else h.lo,
                     m if h.order == 1 and h.is_equality else h.hi)
        for h in base.harmonics
    )
    try:
        prob = pat.ConverterProblem(
            levels=base.levels, pulse_number=d, interlock=base.interlock,
            harmonics=harmonics, current_bound=None,
            unipolar=base.unipolar, objective=base.objective,
        )
    except pat.PatternError as exc:
        return {"d": d, "M": m, "beta": beta, "status": f"input-error:{exc}",
                "q_bound": None, "q_rec": None, "gap": None,
                "prep_s": 0.0, "solve_s": 0.0}
    row = {"d": d, "M": m, "beta": beta, "status": "numerical",
           "q_bound": None, "q_rec": None, "gap": None,
           "prep_s": 0.0, "solve_s": 0.0}
    try:
        hb = solve_hierarchy(prob, beta, tol=tol, maxiter=maxiter)
        row["prep_s"] = round(hb.preprocess_seconds, 3)
        row["solve_s"] = round(hb.solve_seconds, 3)
        row["status"] = hb.status
        if hb.status == "infeasible":
            return row
        row["q_bound"] = hb.q_beta
        sol = hb.best_solution
        if sol is not None and sol.moments:
            rel = assemble(prob, hb.best_degree)
            xi = extract_occupancies(sol, rel)
            start = recover_sequence(xi, prob, fallback=True)
            result = refine_over_paths(start, prob, seed=seed)
            row["q_rec"] = result.quality
            row["gap"] = result.quality - hb.q_beta if hb.q_beta is not None else None
    except RefineFailed:
        row["status"] = "refine-failed"
    except Exception as exc:  # a cell failure must never abort the sweep
        row["status"] = f"error:{type(exc).__name__}"
    return row


def _parse_range(text: str, integer: bool) -> list:
    parts = text.split(":")
    if len(parts) == 1:
        vals = [float(p) for p in text.split(",")]
    else:
        lo, hi = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) > 2 else 1.0
        n = int(round((hi - lo) / step)) + 1
        vals = [lo + k * step for k in range(n) if lo + k * step <= hi + 1e-12]
    return [int(round(v)) for v in vals] if integer else vals


def cmd_sweep(args) -> int:
    base = _load_problem(args.problem_template)
    ds = _parse_range(args.d_range, integer=True)
    ms = [round(v, 10) for v in _parse_range(args.m_range, integer=False)]
    if not ds or not ms:
        raise InputError("sweep grids must be nonempty")
    prob_doc = pat.problem_to_dict(base)
    cells = [(prob_doc, d, m, args.beta, args.tol, args.maxiter, args.seed)
             for d in ds for m in ms]
    workers = int(os.environ.get("OPPSYN_THREADS", "0")) or min(4, os.cpu_count() or 1)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    rows.sort(key=lambda r: (r["d"], r["M"]))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "M", "beta", "status", "q_bound", "q_rec",
                         "gap", "prep_s", "solve_s"])
        for r in rows:
            writer.writerow([
                r["d"], f"{r['M']:.6g}", r["beta"], r["status"],
                "" if r["q_bound"] is None else f"{r['q_bound']:.10g}",
                "" if r["q_rec"] is None else f"{r['q_rec']:.10g}",
                "" if r["gap"] is None else f"{r['gap']:.10g}",
                r["prep_s"], r["solve_s"],
            ])
    # bounds are expected to improve with more switching freedom; violations
    # of that trend are reported, not asserted
    by_m: dict[float, list] = {}
    for r in rows:
        if r["q_bound"] is not None:
            by_m.setdefault(r["M"], []).append((r["d"], r["q_bound"]))
    for m, pts in sorted(by_m.items()):
        pts.sort()
        for (d1, q1), (d2, q2) in zip(pts, pts[1:]):
            if q2 > q1 + 1e-7:
                print(f"note: bound rose with d at M={m:g}: "
                      f"Q(d={d1})={q1:.3e} -> Q(d={d2})={q2:.3e}", file=sys.stderr)
    if args.plot:
        from .plots import render_sweep

        stem = os.path.splitext(args.out)[0]
        render_sweep(rows, stem + "_bounds.png", stem + "_gaps.png")
    return EXIT_OK


def cmd_graph(args) -> int:
    prob = _load_problem(args.problem)
    docs = {}
    for label, unipolar in (("multipolar", False), ("unipolar", True)):
        g = graph_mod.build_graph(prob.n_levels, prob.pulse_number, unipolar)
        docs[label] = json.loads(graph_mod.to_adjacency_json(g))
        if args.out_dot:
            stem, ext = os.path.splitext(args.out_dot)
            path = args.out_dot if label == ("unipolar" if prob.unipolar else "multipolar") \
                else f"{stem}_{label}{ext}"
            with open(path, "w") as fh:
                fh.write(graph_mod.to_dot(g))
    _write_json(args.out_json, docs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oppsyn",
        description="Optimal pulse pattern synthesis with certified distortion bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate a pattern against a problem")
    p.add_argument("--pattern", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--ratings")
    p.add_argument("--out-report", default="-")
    p.add_argument("--out-csv")
    p.add_argument("--out-fig")
    p.add_argument("--samples", type=int, default=4001)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bound", help="certified lower bound on the distortion")
    p.add_argument("--problem", required=True)
    p.add_argument("--beta", type=int, required=True)
    p.add_argument("--objective", choices=["current", "voltage"])
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--maxiter", type=int, default=200)
    p.add_argument("--sdpa-out")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("synth", help="bound, recover and refine a pattern")
    p.add_argument("--problem", required=True)
    p.add_argument("--beta", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--maxiter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warm-start")
    p.add_argument("--out-pattern", default="pattern_out.json")
    p.add_argument("--out-cert", default="-")
    p.add_argument("--out-trace")
    p.add_argument("--samples", type=int, default=4001)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="bound/recover over a (d, M) grid")
    p.add_argument("--problem-template", required=True)
    p.add_argument("--d-range", required=True, help="lo:hi[:step] or comma list")
    p.add_argument("--m-range", required=True, help="lo:hi[:step] or comma list")
    p.add_argument("--beta", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--maxiter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("graph", help="transition graphs, DOT and counts")
    p.add_argument("--problem", required=True)
    p.add_argument("--out-dot")
    p.add_argument("--out-json", default="-")
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stdout)
        return EXIT_INPUT
    except pat.PatternError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stdout)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
