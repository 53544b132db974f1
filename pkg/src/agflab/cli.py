"""Command-line front end: ``agflab {train,sweep,gradcheck,fit,pasl}``.

Exit codes: 0 success, 2 input or configuration error, 3 runtime or
numerical failure.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, load_config, load_sweep
from .exceptions import AgfError, ConfigError, FitError, IngestionError, TrainingError
from .gradcheck import gradcheck_sweep
from .model import build_model, train
from .pasl import DEFAULT_MAX_D, WILDCARD, distance_decay_samples, ingest_corpus
from .powerlaw import compare_power_exp, fit_asymptotic_power, fit_duane
from .tasks import generate_task

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3
RESULTS_HEADER = ["label", "val_accuracy", "positional_params", "wall_time_s"]


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def provenance(cfg_dict, seed):
    return {"config_hash": config_hash(cfg_dict), "seed": seed, "version": __version__}


def _header_line(prov):
    return "# " + json.dumps(prov, sort_keys=True) + "\n"


def _max_workers():
    return max(1, int(os.environ.get("AGF_THREADS", "1")))


# -- train / sweep ---------------------------------------------------------------


def run_experiment(cfg, out_dir=None, append_results=True, threads=None):
    """Train one configuration into ``<out>/<label>/`` (``trace.csv``, ``checkpoint.json``).

    The results-table row is returned and, unless ``append_results`` is
    false, appended to ``<out>/results.csv``.
    """
    out = Path(out_dir or cfg.output_dir)
    run_dir = out / cfg.label
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_dict()
    shards = threads if threads is not None else _max_workers()
    # where the run is written is not part of what it computes; the shard count changes float rounding, so it is
    prov = provenance({k: v for k, v in cfg_dict.items() if k != "output_dir"}, cfg.seed)
    prov["grad_shards"] = shards

    t0 = time.perf_counter()
    data = generate_task(cfg.task)
    val = generate_task(cfg.validation_task())
    model = build_model(cfg.model)
    rng = np.random.default_rng(cfg.seed)
    trace = train(model, data, cfg.epochs, cfg.optimizer, val_data=val, seed=cfg.seed, threads=shards)
    wall = time.perf_counter() - t0

    (run_dir / "trace.csv").write_text(_header_line(prov) + trace.to_csv())
    ckpt = {
        "provenance": prov,
        "experiment": cfg_dict,
        "model": model.to_dict(),
        "rng_state": rng.bit_generator.state,
    }
    (run_dir / "checkpoint.json").write_text(json.dumps(ckpt, sort_keys=True) + "\n")

    n_pos = int(sum(model.positional_param_counts().values()))
    row = {
        "label": cfg.label,
        "val_accuracy": trace.epoch_scores[-1],
        "positional_params": n_pos,
        "wall_time_s": round(wall, 3),
    }
    if append_results:
        write_results(out / "results.csv", [row], append=True)
    return row


def write_results(path, rows, append=False):
    path = Path(path)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULTS_HEADER)
        if new:
            w.writeheader()
        w.writerows(rows)


def _run_isolated(args):
    cfg, out, threads = args
    try:
        return run_experiment(cfg, out, append_results=False, threads=threads)
    except TrainingError as exc:
        return {"label": cfg.label, "error": str(exc)}


def cmd_train(ns):
    cfg = load_config(ns.config).with_overrides(seed=ns.seed, mode=ns.mode, output_dir=ns.out)
    row = run_experiment(cfg)
    print(json.dumps(row, sort_keys=True))


def cmd_sweep(ns):
    cfgs = [c.with_overrides(seed=ns.seed, mode=ns.mode, output_dir=ns.out) for c in load_sweep(ns.config)]
    labels = [c.label for c in cfgs]
    if len(set(labels)) != len(labels):
        raise ConfigError("sweep run labels must be unique")
    out = Path(ns.out or cfgs[0].output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = min(_max_workers(), len(cfgs))
    if workers > 1:
        # one process per run, each in its own run directory; the table is written in sweep order
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_isolated, [(c, out, 1) for c in cfgs]))
    else:
        rows = [_run_isolated((c, out, None)) for c in cfgs]
    failed = [r for r in rows if "error" in r]
    ok = [r for r in rows if "error" not in r]
    write_results(out / "results.csv", ok)
    for r in ok:
        print(f"{r['label']:<32} {r['val_accuracy']:8.3f}  params={r['positional_params']}")
    if failed:
        raise CliError("; ".join(f"{r['label']}: {r['error']}" for r in failed), EXIT_RUNTIME)


# -- gradcheck -------------------------------------------------------------------


def cmd_gradcheck(ns):
    rows = gradcheck_sweep(seeds=range(ns.seeds))
    buf = io.StringIO()
    buf.write(_header_line(provenance({"seeds": ns.seeds, "tol": ns.tol}, 0)))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["positional_mode", "pcm_v", "pcm_v_exp", "sco", "mask", "seed", "worst_param", "max_rel_err", "pass"])
    worst = 0.0
    for o, seed, name, err in rows:
        w.writerow([o.positional_mode, int(o.pcm_v), int(o.pcm_v_exp), int(o.sco), o.mask, seed, name, repr(err), int(err < ns.tol)])
        worst = max(worst, err)
    _emit(buf.getvalue(), ns.out, "gradcheck.csv")
    n_fail = sum(err >= ns.tol for *_, err in rows)
    print(f"{len(rows)} checks, worst relative error {worst:.3e}, {n_fail} above {ns.tol:g}", file=sys.stderr)
    if n_fail:
        raise CliError("gradient check failed", EXIT_RUNTIME)


def _emit(text, out, filename):
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.suffix == "":
        path.mkdir(parents=True, exist_ok=True)
        path = path / filename
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- fit -------------------------------------------------------------------------


def read_numeric_csv(path):
    """Parse a one- or two-column numeric CSV; a single non-numeric header row is skipped."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_INPUT) from exc
    rows = [r for r in csv.reader(io.StringIO(raw.decode("utf-8", errors="replace"))) if r and not r[0].startswith("#")]
    values = []
    for i, r in enumerate(rows):
        try:
            values.append([float(c) for c in r])
        except ValueError:
            if i == 0:
                continue
            raise CliError(f"{path}: non-numeric value in row {i + 1}", EXIT_INPUT) from None
    if not values:
        raise CliError(f"{path}: no numeric rows", EXIT_INPUT)
    widths = {len(v) for v in values}
    if len(widths) != 1 or widths.pop() not in (1, 2):
        raise CliError(f"{path}: expected one or two columns in every row", EXIT_INPUT)
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise CliError(f"{path}: non-finite values", EXIT_INPUT)
    return arr, hashlib.sha256(raw).hexdigest()


def cmd_fit(ns):
    arr, digest = read_numeric_csv(ns.input)
    fam = ns.family
    if arr.shape[1] == 1:
        if fam != "asymptotic":
            raise CliError(f"family {fam!r} needs two columns (x,y)", EXIT_INPUT)
        x, y = np.arange(1, arr.shape[0] + 1, dtype=float), arr[:, 0]
    else:
        x, y = arr[:, 0], arr[:, 1]
    try:
        if fam == "duane":
            f = fit_duane(x, y)
            result = {"a": f.a, "m": f.m, "rmse_loglog": f.rmse_loglog}
        elif fam == "asymptotic":
            f = fit_asymptotic_power(y, x)
            result = {"L": f.L, "a": f.a, "m": f.m, "rmse": f.rmse}
        else:
            result = compare_power_exp(x, y).to_dict()
    except FitError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    report = {
        "family": fam,
        "n_points": int(arr.shape[0]),
        "input_sha256": digest,
        "result": result,
        "provenance": {"version": __version__, "seed": None, "config_hash": digest},
    }
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", ns.out, "fit.json")


# -- pasl ------------------------------------------------------------------------


def _parse_anchors(spec):
    out = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            a, t = item.split(":", 1)
            out.append((a.lower(), t.lower() or WILDCARD))
        else:
            out.append(item.lower())
    if not out:
        raise CliError("no anchors given", EXIT_INPUT)
    return out


def cmd_pasl(ns):
    try:
        ts = ingest_corpus(ns.corpus)
    except IngestionError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    anchors = _parse_anchors(ns.anchors)
    try:
        x, y = distance_decay_samples(ts, anchors, ns.max_d)
    except (ValueError, AgfError) as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    keep = y > 0
    comparison = None
    note = ""
    if keep.sum() >= 5:
        comparison = compare_power_exp(x[keep], y[keep]).to_dict()
    else:
        note = "fewer than 5 offsets with non-zero density; no decay comparison"
    corpus_digest = hashlib.sha256(Path(ns.corpus).read_bytes()).hexdigest()
    prov = provenance({"corpus_sha256": corpus_digest, "anchors": ns.anchors, "max_d": ns.max_d}, None)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [_header_line(prov).rstrip("\n"), "offset,probability"]
    lines += [f"{int(i)},{float(p)!r}" for i, p in zip(x, y)]
    (out / "pasl.csv").write_text("\n".join(lines) + "\n")
    report = {
        "provenance": prov,
        "anchors": [a if isinstance(a, str) else f"{a[0]}:{a[1]}" for a in anchors],
        "max_d": ns.max_d,
        "offsets_used_in_fit": int(keep.sum()),
        "comparison": comparison,
        "verdict": None if comparison is None else comparison["preferred"],
        "note": note,
    }
    (out / "pasl.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(report["verdict"])


# -- entry point -----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="agflab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--mode", help="override model.positional_mode")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train every run of a sweep file and emit a results table")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--mode")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference check of every attention option combination")
    g.add_argument("--seeds", type=int, default=10)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("fit", help="fit a curve to a numeric CSV")
    f.add_argument("input")
    f.add_argument("--family", choices=("duane", "asymptotic", "compare"), default="asymptotic")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("pasl", help="follower-distance densities of a text corpus")
    q.add_argument("corpus")
    q.add_argument("--anchors", required=True, help="comma separated; 'anchor:target' pairs allowed")
    q.add_argument("--max-d", type=int, default=DEFAULT_MAX_D)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_pasl)
    return p


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        ns.func(ns)
    except CliError as exc:
        print(f"agflab: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, IngestionError) as exc:
        print(f"agflab: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingError as exc:
        print(f"agflab: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except AgfError as exc:
        print(f"agflab: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
