"""``freewalk`` command line.

Exit codes: 0 success, 2 invalid input, 3 failed model assumption (transience gate,
degenerate CLT), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys

import numpy as np

from . import __version__
from .capacity import ConeConstraint, capacity_report, escape_probability, hitting_probability
from .config import DEFAULTS, FIXTURES, fixture, load_run_config, read_config, resolve
from .core import free_product_from_spec, require_valid
from .errors import FreewalkError, ModelError
from .estimators import (
    cbar_relation_check,
    chat_direct,
    chat_regen,
    clt_experiment,
    decomposition_audit,
    ell_hat,
    prop57_check,
    range_hat,
    regen_blocks,
    sigma2_hat,
    sweep,
)
from .genfun import green_at_root, l_product_check, radius_estimate, return_weights, transience_check
from .parallel import ordered_map, resolve_workers
from .sim import exit_times, range_curve, regeneration_blocks, run_walk

#: version of the CSV column layouts
CSV_SCHEMA_VERSION = 1

COMMANDS = ("genfun", "capacity", "simulate", "estimate", "clt", "sweep", "audit", "fixtures")
STOCHASTIC = {"simulate", "estimate", "clt", "sweep", "audit"}


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


class Bundle:
    """Summary JSON, optional CSV table and the resolved config echo."""

    def __init__(self, summary, header=None, rows=None, config=None, lines=None):
        self.summary = summary
        self.header = header
        self.rows = rows
        self.config = config
        self.lines = lines

    def emit(self, fmt: str, out_dir: str | None, stdout) -> None:
        summary_text = dumps(self.summary)
        csv_text = _csv_text(self.header, self.rows) if self.header else None
        if self.lines is not None:
            text = "".join(json.dumps(_clean(l), sort_keys=True) + "\n" for l in self.lines)
            stdout.write(text)
        elif fmt == "csv" and csv_text is not None:
            stdout.write(csv_text)
        else:
            stdout.write(summary_text)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "summary.json"), "w") as fh:
                fh.write(summary_text)
            if csv_text is not None:
                with open(os.path.join(out_dir, "table.csv"), "w") as fh:
                    fh.write(csv_text)
            if self.lines is not None:
                with open(os.path.join(out_dir, "replicas.jsonl"), "w") as fh:
                    fh.write("".join(json.dumps(_clean(l), sort_keys=True) + "\n" for l in self.lines))
            if self.config is not None:
                with open(os.path.join(out_dir, "config.json"), "w") as fh:
                    fh.write(dumps(self.config))


# ---------------------------------------------------------------------------
# helpers


def _model(cfg):
    fp = free_product_from_spec(cfg["model"])
    require_valid(fp)
    return fp


def _parse_set(fp, text: str):
    text = text.strip()
    if text.startswith("["):
        try:
            items = json.loads(text)
        except json.JSONDecodeError:
            # tolerate bare state names such as [[1,a],[2,b]]
            quoted = re.sub(r'(?<=[\[,])\s*([A-Za-z_][\w.-]*)\s*(?=[\],])', r'"\1"', text)
            try:
                items = json.loads(quoted)
            except json.JSONDecodeError as exc:
                raise ModelError(f"cli: --set is not valid JSON: {exc}") from None
        if not isinstance(items, list):
            raise ModelError("cli: --set must be a list of words")
        # a bare [factor, state] pair stands for a one-letter word
        return [fp.word_from_json([w] if _is_letter(w) else w) for w in items]
    return [fp.parse_word(chunk) for chunk in text.split(";")]


def _is_letter(item) -> bool:
    return (isinstance(item, list) and len(item) == 2 and isinstance(item[0], int)
            and not isinstance(item[1], list))


def _letter(fp, text):
    if text is None:
        return None
    w = fp.parse_word(text)
    if len(w) != 1:
        raise ModelError("cli: the regeneration letter must be a single letter such as '1:a'")
    return w[0]


def _seed(cfg):
    if "seed" not in cfg:
        raise ModelError("cli: a seed is required for stochastic commands (--seed or config 'seed')")
    return int(cfg["seed"])


# ---------------------------------------------------------------------------
# commands


def cmd_genfun(cfg, workers):
    fp = _model(cfg)
    block = cfg["genfun"]
    bracket = radius_estimate(fp)
    z = float(block["z"])
    rw = return_weights(fp, z)
    names = lambda i, table: {fp.factor(i).state_name(s): v for s, v in sorted(table.items())}
    summary = {
        "z": z,
        "u1": names(1, rw.u1),
        "u2": names(2, rw.u2),
        "xi1": rw.xi1,
        "xi2": rw.xi2,
        "green_oo": green_at_root(fp, z),
        "radius_bracket": bracket.as_list(),
        "transient": bracket.transient,
    }
    if block.get("rho0") is not None:
        rep = l_product_check(fp, float(block["rho0"]))
        summary["l_product"] = {"rho0": rep["rho0"], "max_product": rep["max_product"], "sup_L": rep["sup_L"]}
    return Bundle(summary)


def cmd_capacity(cfg, workers):
    fp = _model(cfg)
    block = cfg["capacity"]
    words = [fp.word_from_json(w) for w in block["set"]]
    transience_check(fp)
    rep = capacity_report(fp, words)
    summary = {
        "capacity": rep["capacity"],
        "per_vertex": {fp.format_word(w): v for w, v in rep["per_vertex"].items()},
        "hull_size": rep["hull_size"],
        "residual": rep["residual"],
        "set": [fp.word_to_json(w) for w in rep["per_vertex"]],
    }
    con = block.get("constraint")
    if con and words:
        anchor = fp.word_from_json(con["anchor"]) if "anchor" in con else None
        c = ConeConstraint(con.get("variant", "none"), anchor, con.get("factor", 0))
        start = fp.word_from_json(con["start"]) if "start" in con else anchor
        if start is None:
            raise ModelError("cli: a constrained query needs 'start' or 'anchor'")
        summary["constrained"] = {
            "variant": c.variant,
            "start": fp.format_word(start),
            "hitting": hitting_probability(fp, words, start, c),
            "escape": escape_probability(fp, words, start, c) if start in set(words) else None,
        }
    rows = [[fp.format_word(w), v] for w, v in rep["per_vertex"].items()]
    return Bundle(summary, ["word", "escape_probability"], rows)


def _simulate_task(args):
    fp, steps, seed, replica, guard, letter, dump = args
    tr = run_walk(fp, steps, seed, replica)
    ex = exit_times(tr, guard)
    rg = regeneration_blocks(tr, letter, ex)
    line = {
        "seed": [seed, replica],
        "n": steps,
        "final_norm": tr.trie.depth[int(tr.path[-1])],
        "range": int(range_curve(tr)[-1]),
        "exits_confirmed": ex.n_confirmed,
        "regeneration_times": rg.times,
        "blocks": [
            {"index": b.index, "start": b.start, "end": b.end, "duration": b.duration,
             "range_size": len(b.R_norm), "increment": fp.format_word(b.increment)}
            for b in rg.blocks
        ],
    }
    if dump:
        line["trajectory"] = [fp.format_word(tr.word(t)) for t in range(min(dump, 100_000, steps) + 1)]
    return line


def cmd_simulate(cfg, workers):
    fp = _model(cfg)
    seed = _seed(cfg)
    b = cfg["simulate"]
    letter = _letter(fp, b["letter"])
    tasks = [(fp, b["steps"], seed, r, b["guard"], letter, b["dump_steps"]) for r in range(b["replicas"])]
    lines = ordered_map(_simulate_task, tasks, workers)
    summary = {"replicas": len(lines), "seed": seed,
               "mean_final_norm": float(np.mean([l["final_norm"] for l in lines])),
               "mean_range": float(np.mean([l["range"] for l in lines]))}
    return Bundle(summary, lines=lines)


def cmd_estimate(cfg, workers):
    fp = _model(cfg)
    seed = _seed(cfg)
    b = cfg["estimate"]
    bracket = transience_check(fp)
    letter = _letter(fp, b["letter"])
    direct = chat_direct(fp, b["n_schedule"], b["direct_replicas"], seed, workers)
    blocks = regen_blocks(fp, b["horizon"], b["regen_replicas"], seed + 1, workers, letter, b["guard"], with_cbar=True)
    regen = chat_regen(fp, b["horizon"], b["regen_replicas"], seed + 1, blocks=blocks)
    ell = ell_hat(fp, b["horizon"], b["regen_replicas"], seed + 2, workers)
    rng_hat = range_hat(fp, b["horizon"], b["regen_replicas"], seed + 2, workers)
    sig = sigma2_hat(blocks, seed=seed + 1)
    sig_check = sigma2_hat(blocks, direct, seed=seed + 1)
    summary = {
        "radius_bracket": bracket.as_list(),
        "chat_direct": direct.to_dict(),
        "chat_regen": regen.to_dict(),
        "ell_hat": ell.to_dict(),
        "range_hat": rng_hat.to_dict(),
        "sigma2_hat": sig.to_dict(),
        "mean_D_with_direct_chat": {"mean": sig_check.extra["mean_D"], "stderr": sig_check.extra["mean_D_stderr"]},
        "cbar_relation": cbar_relation_check(blocks, regen),
        "prop57": prop57_check(blocks, direct),
        "ci_overlap": direct.overlaps(regen),
        "max_block_excess": float(np.max(blocks.capacities - blocks.durations)) if len(blocks) else None,
        "seed_lineage": {"chat_direct": seed, "regeneration": seed + 1, "walk_statistics": seed + 2},
    }
    rows = [[r["n"], r["mean"], r["stderr"]] for r in direct.extra["checkpoints"]]
    return Bundle(summary, ["n", "cap_over_n_mean", "cap_over_n_stderr"], rows)


def cmd_clt(cfg, workers):
    fp = _model(cfg)
    seed = _seed(cfg)
    b = cfg["clt"]
    transience_check(fp)
    # centering and scale from an independent seed
    calib = chat_direct(fp, [b["n_steps"]], b["calib_replicas"], seed + 1, workers)
    blocks = regen_blocks(fp, b["calib_horizon"], b["calib_regen_replicas"], seed + 2, workers)
    regen = chat_regen(fp, b["calib_horizon"], b["calib_regen_replicas"], seed + 2, blocks=blocks)
    sig = sigma2_hat(blocks, seed=seed + 2)
    rep = clt_experiment(fp, b["m_walks"], b["n_steps"], seed, calib, sig, workers, chat_alt=regen)
    summary = rep.to_dict()
    summary["calibration"] = {"chat_direct": calib.to_dict(), "chat_regen": regen.to_dict(),
                              "sigma2_hat": sig.to_dict()}
    summary["seed_lineage"] = {"walks": seed, "chat_direct": seed + 1, "sigma2": seed + 2}
    rows = [[i, z] for i, z in enumerate(rep.sample)]
    return Bundle(summary, ["walk", "standardized_capacity"], rows)


def cmd_sweep(cfg, workers):
    seed = _seed(cfg)
    _model(cfg)
    b = cfg["sweep"]
    rep = sweep(cfg["model"], b["parameter"], b["grid"], b["horizon"], b["replicas"], seed, workers, b["degree"])
    summary = rep.to_dict()
    summary["seed"] = seed
    rows = [[p["value"], p["chat"], p["stderr"], p["blocks"]] for p in rep.points]
    return Bundle(summary, ["value", "chat", "stderr", "blocks"], rows)


def _audit_task(args):
    fp, steps, seed, replica, kmax, guard = args
    tr = run_walk(fp, steps, seed, replica)
    ex = exit_times(tr, guard)
    out = []
    for k in range(1, min(kmax, ex.n_confirmed) + 1):
        a = decomposition_audit(fp, tr, k, ex)
        out.append([replica, k, a["e_k"], a["lhs"], a["rhs"], a["error"]])
    return out


def cmd_audit(cfg, workers):
    fp = _model(cfg)
    seed = _seed(cfg)
    b = cfg["audit"]
    transience_check(fp)
    tasks = [(fp, b["steps"], seed, r, b["kmax"], b["guard"]) for r in range(b["replicas"])]
    rows = [row for chunk in ordered_map(_audit_task, tasks, workers) for row in chunk]
    errs = [r[5] for r in rows]
    summary = {"seed": seed, "audited": len(rows), "max_error": max(errs) if errs else None,
               "passed": bool(errs) and max(errs) <= 1e-9}
    return Bundle(summary, ["replica", "k", "e_k", "lhs", "rhs", "error"], rows)


HANDLERS = {
    "genfun": cmd_genfun,
    "capacity": cmd_capacity,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "clt": cmd_clt,
    "sweep": cmd_sweep,
    "audit": cmd_audit,
}


def _diagnostic(exc: BaseException) -> str:
    """Message prefixed with the module that raised it, unless already prefixed."""
    text = str(exc)
    tb = exc.__traceback__
    while tb is not None and tb.tb_next is not None:
        tb = tb.tb_next
    module = tb.tb_frame.f_globals.get("__name__", "") if tb is not None else ""
    module = module.rsplit(".", 1)[-1] if module.startswith("freewalk") else "cli"
    if re.match(r"^[a-z_]+: ", text):
        return text
    return f"{module}: {text}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freewalk", description="Random walks on free products: capacity of the range.")
    p.add_argument("--version", action="version", version=f"freewalk {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--out-dir")
        if name == "fixtures":
            sp.add_argument("--name", required=True)
            continue
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        if name == "capacity":
            sp.add_argument("--set", dest="word_set", help="words as JSON letter lists or '1:a/2:b;1:a'")
        if name == "genfun":
            sp.add_argument("--z", type=float)
    return p


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        if args.command == "fixtures":
            if args.name not in FIXTURES:
                raise ModelError(f"cli: unknown fixture {args.name!r}; choose from {sorted(FIXTURES)}")
            doc = fixture(args.name)
            Bundle(doc).emit("json", args.out_dir, stdout)
            return 0
        cfg = read_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if getattr(args, "word_set", None) is not None:
            fp = free_product_from_spec(cfg["model"])
            cfg.setdefault("capacity", {})["set"] = [fp.word_to_json(w) for w in _parse_set(fp, args.word_set)]
        if getattr(args, "z", None) is not None:
            cfg.setdefault("genfun", {})["z"] = args.z
        cfg = load_run_config(cfg)
        workers = resolve_workers(args.workers if args.workers is not None else cfg.get("workers"))
        out_dir = args.out_dir or cfg.get("out_dir")
        if args.command in STOCHASTIC:
            _seed(cfg)
        resolved = resolve(cfg, args.command)
        bundle = HANDLERS[args.command](resolved, workers)
        bundle.config = resolved
        bundle.emit(args.format, out_dir, stdout)
        return 0
    except FreewalkError as exc:
        stderr.write(f"freewalk: error: {_diagnostic(exc)}\n")
        return exc.exit_code
    except ValueError as exc:
        stderr.write(f"freewalk: error: {_diagnostic(exc)}\n")
        return 2


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
