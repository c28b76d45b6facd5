"""Command line: train, predict, evaluate, grid-search, benchmark, kernel-cache.

Every command takes a JSON config (``--config``) whose keys can be
overridden with ``--set section.key=value`` (value parsed as JSON when
possible).  The fully resolved config is written next to the outputs.
"""

import argparse
import copy
import itertools
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data as data_mod
from . import diagnostics, metrics
from .exceptions import ConfigError, DataError, TopDualError
from .kernel import DEFAULT_MEMORY_BUDGET, KernelSpec, build_kernel_matrix, read_cache, read_header
from .model import TrainedModel, from_state
from .problem import PATMAT, ProblemSpec, dual_objective
from .solver import SolverConfig, initialize, run_block, scan_block, solve, topset_buffer

DEFAULTS = {
    "data": {
        "path": None,
        "format": "sparse",
        "delimiter": ",",
        "header": False,
        "label_col": 0,
        "pos_labels": [1],
        "test_path": None,
        "synthetic": None,
        "standardize": False,
    },
    "split": {"scheme": "default", "seed": 0, "stratify": False},
    "problem": {"kind": "toppushk", "K": 1, "tau": 0.05, "C": 1.0,
                "surrogate_pos": {"family": "quadratic", "theta": 1.0},
                "surrogate_neg": {"family": "quadratic", "theta": 1.0}},
    "kernel": {"family": "gaussian", "sigma": 1.0},
    "solver": SolverConfig().to_dict(),
    "memory_budget": DEFAULT_MEMORY_BUDGET,
    "kernel_cache": None,
    "gap_trace": True,
    "grid": {"C": [0.1, 1.0, 10.0], "K": [5, 10], "tau": [0.01, 0.05, 0.1], "sigma": [0.01, 0.05]},
    "metric": {"target_recall": 0.4},
    "workers": 4,
    "output": "out",
}


# ---------------------------------------------------------------------------
# config


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path=None, overrides=()):
    """Defaults, then the config file, then ``key.sub=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = _parse_value(val)
    return cfg


def _specs(cfg):
    try:
        problem = ProblemSpec.from_dict(cfg["problem"])
        kernel = KernelSpec.from_dict(cfg["kernel"])
        solver_cfg = SolverConfig(**cfg["solver"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return problem, kernel, solver_cfg


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _outdir(cfg):
    out = cfg["output"]
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# data


def _read_dataset(dcfg, path):
    try:
        raw = data_mod.load(path, dcfg["format"], delimiter=dcfg["delimiter"],
                            header=dcfg["header"], label_col=dcfg["label_col"])
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return data_mod.binarize(raw, dcfg["pos_labels"])


def load_splits(cfg):
    """``(train, valid, test)`` per the data and split sections."""
    dcfg = cfg["data"]
    scfg = cfg["split"]
    if dcfg.get("synthetic"):
        syn = dict(dcfg["synthetic"])
        name = syn.pop("name")
        try:
            ds = data_mod.synthetic(name, **syn)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synthetic data spec: {exc}") from exc
    elif dcfg.get("path"):
        ds = _read_dataset(dcfg, dcfg["path"])
    else:
        raise ConfigError("config needs data.path or data.synthetic")
    test = _read_dataset(dcfg, dcfg["test_path"]) if dcfg.get("test_path") else None
    scheme = "fixed-test" if test is not None else scfg["scheme"]
    parts = data_mod.split(ds, seed=scfg["seed"], scheme=scheme, test=test,
                           stratify=scfg["stratify"])
    if dcfg.get("standardize"):
        st = data_mod.Standardizer.fit(parts[0])
        parts = tuple(st.transform(p) for p in parts)
    return parts


def _kernel_matrix(cfg, kspec, train, cache_path=None):
    cache_path = cache_path or cfg.get("kernel_cache")
    return build_kernel_matrix(kspec, train.X_pos, train.X_neg, cache_path=cache_path,
                               memory_budget=cfg["memory_budget"])


# ---------------------------------------------------------------------------
# train


def train_model(problem, kspec, solver_cfg, train, K=None, gap_trace=False, cfg=None):
    """Train on a data set; returns ``(model, state, trace, summary)``."""
    if K is None:
        K = build_kernel_matrix(kspec, train.X_pos, train.X_neg,
                                memory_budget=(cfg or DEFAULTS)["memory_budget"])
    problem.params(K.n_pos, K.n_neg)
    gap = None
    if gap_trace:
        def gap(st):
            return diagnostics.primal_objective(problem, K, st)[0]
    t0 = time.perf_counter()
    state, trace = solve(problem, K, solver_cfg, gap_evaluator=gap)
    wall = time.perf_counter() - t0
    dual = dual_objective(problem, K, state)
    primal, t_primal = diagnostics.primal_objective(problem, K, state)
    model = from_state(problem, kspec, K, state, train.X_pos, train.X_neg,
                       metadata={"seed": solver_cfg.seed, "loops": state.loop_count,
                                 "dual_objective": dual})
    summary = {
        "dual_objective": dual,
        "primal_objective": primal,
        "gap": primal - dual,
        "relative_gap": diagnostics.relative_gap(primal, dual),
        "primal_threshold": t_primal,
        "threshold": model.threshold,
        "threshold_spec": model.threshold_spec.to_dict(),
        "loops": state.loop_count,
        "n_support": model.n_support,
        "n_pos": K.n_pos,
        "n_neg": K.n_neg,
        "wall_time_s": wall,
        "time_per_loop_s": wall / max(state.loop_count, 1),
    }
    return model, state, trace, summary


def cmd_train(args, cfg):
    problem, kspec, solver_cfg = _specs(cfg)
    out = _outdir(cfg)
    train, valid, test = load_splits(cfg)
    K = _kernel_matrix(cfg, kspec, train)
    model, _, trace, summary = train_model(problem, kspec, solver_cfg, train, K,
                                           gap_trace=cfg["gap_trace"], cfg=cfg)
    model.save(os.path.join(out, "model.json"))
    with open(os.path.join(out, "trace.csv"), "w") as fh:
        trace.to_csv(fh)
    _write_json(os.path.join(out, "summary.json"), summary)
    data_mod.write_manifest(os.path.join(out, "split.json"), train, valid, test)
    _write_json(os.path.join(out, "config.resolved.json"), cfg)
    print(json.dumps({"dual_objective": summary["dual_objective"],
                      "primal_objective": summary["primal_objective"],
                      "relative_gap": summary["relative_gap"],
                      "time_per_loop_s": summary["time_per_loop_s"]}))
    return 0


# ---------------------------------------------------------------------------
# predict / evaluate


def _eval_data(args, cfg):
    if args.data:
        dcfg = dict(cfg["data"])
        if args.format:
            dcfg["format"] = args.format
        return _read_dataset(dcfg, args.data)
    train, valid, test = load_splits(cfg)
    return {"train": train, "valid": valid, "test": test}[args.split]


def cmd_predict(args, cfg):
    model = TrainedModel.load(args.model)
    dcfg = dict(cfg["data"])
    if args.format:
        dcfg["format"] = args.format
    try:
        raw = data_mod.load(args.data, dcfg["format"], delimiter=dcfg["delimiter"],
                            header=dcfg["header"], label_col=dcfg["label_col"])
    except OSError as exc:
        raise DataError(f"cannot read {args.data}: {exc}") from exc
    scores = model.predict_scores(raw.features)
    fh = open(args.output, "w") if args.output else sys.stdout
    try:
        fh.write("index,score,positive\n")
        for i, s in enumerate(scores):
            fh.write(f"{i},{float(s)!r},{int(s >= model.threshold)}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def evaluate_model(model, ds, bin_width=None):
    """Metrics of ``model`` on ``ds``: curve, P@Rec levels, density, thresholds."""
    scores = model.predict_scores(ds.features)
    sl = metrics.ScoredLabels(scores, ds.labels)
    curve = metrics.pr_curve(sl)
    p_at = {str(lv): metrics.precision_at_recall(sl, lv, curve)
            for lv in metrics.PREC_AT_REC_LEVELS}
    prec, rec = metrics.precision_recall_at(sl, model.threshold)
    split_t = diagnostics.threshold(model.threshold_spec or diagnostics.decision_threshold(model.problem),
                                    scores[ds.labels == 0], len(ds))
    report = {
        "n": len(ds),
        "n_pos": ds.n_pos,
        "precision_at_recall": p_at,
        "threshold": {"kind": (model.threshold_spec.kind if model.threshold_spec else None),
                      "model": model.threshold, "on_split": split_t},
        "precision_at_threshold": prec,
        "recall_at_threshold": rec,
    }
    return report, curve, metrics.score_density(sl, bin_width=bin_width)


def cmd_evaluate(args, cfg):
    model = TrainedModel.load(args.model)
    ds = _eval_data(args, cfg)
    out = _outdir(cfg)
    report, curve, dens = evaluate_model(model, ds, bin_width=args.bin_width)
    tag = "data" if args.data else args.split
    with open(os.path.join(out, f"pr_curve_{tag}.csv"), "w") as fh:
        curve.to_csv(fh)
    with open(os.path.join(out, f"density_{tag}.csv"), "w") as fh:
        dens.to_csv(fh)
    _write_json(os.path.join(out, f"report_{tag}.json"), report)
    print(json.dumps(report["precision_at_recall"]))
    return 0


# ---------------------------------------------------------------------------
# grid search


def grid_points(cfg):
    """Cartesian product of the grid axes that apply to the problem kind."""
    grid = cfg["grid"]
    kind = cfg["problem"]["kind"]
    axes = [("sigma", grid.get("sigma") or [cfg["kernel"].get("sigma", 1.0)]),
            ("C", grid.get("C") or [cfg["problem"].get("C", 1.0)])]
    if kind == PATMAT:
        axes.append(("tau", grid.get("tau") or [cfg["problem"].get("tau", 0.05)]))
    elif cfg["problem"].get("K", 1) != 1:
        # TopPush (K = 1) has no K axis
        axes.append(("K", grid.get("K") or [cfg["problem"]["K"]]))
    names = [a for a, _ in axes]
    for vals in itertools.product(*(v for _, v in axes)):
        if any(v is None or (isinstance(v, list) and not v) for v in vals):
            raise ConfigError("grid axes must be non-empty lists")
        yield dict(zip(names, vals))


def cmd_grid_search(args, cfg):
    problem0, kspec0, solver_cfg = _specs(cfg)
    out = _outdir(cfg)
    train, valid, _ = load_splits(cfg)
    points = list(grid_points(cfg))
    if not points:
        raise ConfigError("empty grid")
    target = float(cfg["metric"]["target_recall"])
    kernels = {}
    for p in points:
        if p["sigma"] not in kernels:
            ks = KernelSpec(kspec0.family, float(p["sigma"]))
            kernels[p["sigma"]] = (ks, build_kernel_matrix(ks, train.X_pos, train.X_neg,
                                                           memory_budget=cfg["memory_budget"]))

    def run(idx_p):
        idx, p = idx_p
        ks, K = kernels[p["sigma"]]
        pd = dict(cfg["problem"])
        pd.update({k: v for k, v in p.items() if k != "sigma"})
        try:
            problem = ProblemSpec.from_dict(pd)
            model, _, _, summary = train_model(problem, ks, solver_cfg, train, K, cfg=cfg)
            sl = metrics.ScoredLabels(model.predict_scores(valid.features), valid.labels)
            score = metrics.precision_at_recall(sl, target)
            return idx, p, score, model, summary["dual_objective"], ""
        except (TopDualError, ValueError) as exc:
            return idx, p, float("nan"), None, float("nan"), f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, int(cfg["workers"]))) as pool:
        results = list(pool.map(run, enumerate(points)))
    ok = [r for r in results if not r[5]]
    ok.sort(key=lambda r: (-r[2] if np.isfinite(r[2]) else np.inf, r[0]))
    failed = [r for r in results if r[5]]
    names = list(points[0])
    with open(os.path.join(out, "leaderboard.csv"), "w") as fh:
        fh.write("rank," + ",".join(names) + f",p_at_rec_{target:g},dual_objective,error\n")
        for rank, r in enumerate(ok + failed, 1):
            vals = ",".join(repr(r[1][n]) for n in names)
            fh.write(f"{rank if not r[5] else ''},{vals},{r[2]!r},{r[4]!r},{r[5]}\n")
    if ok:
        ok[0][3].save(os.path.join(out, "best_model.json"))
    _write_json(os.path.join(out, "config.resolved.json"), cfg)
    print(json.dumps({"evaluated": len(results), "failed": len(failed),
                      "best": ok[0][1] if ok else None}))
    return 0 if ok else 4


# ---------------------------------------------------------------------------
# benchmark


def benchmark_sizes(problem, kspec, sizes, loops=200, repeats=5, warmup=50, seed=0, d=10):
    """Per-loop and per-candidate wall time for synthetic data of each size.

    Returns rows ``(n, loop_mean_s, loop_std_s, delta_mean_s, delta_std_s)``
    and the fitted exponent of loop time versus ``n``.
    """
    rows = []
    for n in sizes:
        n_pos = max(1, n // 5)
        ds = data_mod.blobs(n_pos, n - n_pos, d=d, seed=seed)
        K = build_kernel_matrix(kspec, ds.X_pos, ds.X_neg)
        cfg = SolverConfig(max_loops=1, seed=seed)
        st = initialize(problem, K, cfg)
        par = problem.params(K.n_pos, K.n_neg)
        Kmat = np.asarray(K.entries)
        rng = np.random.default_rng(seed)
        args = (st.scores, par, st.alpha, st.beta, st.aux, st.top)
        work = topset_buffer(problem, cfg)
        run_block(Kmat, K.diag, rng.integers(0, n, warmup), *args, -1.0, work)
        scan_block(Kmat, K.diag, rng.integers(0, n, warmup), *args)
        per_loop, per_delta = [], []
        for _ in range(repeats):
            ks = rng.integers(0, n, loops)
            t = time.perf_counter()
            run_block(Kmat, K.diag, ks, *args, -1.0, work)
            per_loop.append((time.perf_counter() - t) / loops)
            ks = rng.integers(0, n, loops)
            t = time.perf_counter()
            scan_block(Kmat, K.diag, ks, *args)
            per_delta.append((time.perf_counter() - t) / (loops * (n - 1)))
        rows.append((n, float(np.mean(per_loop)), float(np.std(per_loop)),
                     float(np.mean(per_delta)), float(np.std(per_delta))))
    ns = np.array([r[0] for r in rows], dtype=float)
    tl = np.array([r[1] for r in rows])
    exponent = float(np.polyfit(np.log(ns), np.log(tl), 1)[0]) if len(rows) > 1 else float("nan")
    return rows, exponent


def cmd_benchmark(args, cfg):
    problem, kspec, _ = _specs(cfg)
    out = _outdir(cfg)
    sizes = [int(s) for s in args.sizes.split(",")]
    if any(s < 10 for s in sizes):
        raise ConfigError("benchmark sizes must be at least 10")
    rows, exponent = benchmark_sizes(problem, kspec, sizes, loops=args.loops,
                                     repeats=args.repeats, warmup=args.warmup,
                                     seed=cfg["solver"]["seed"])
    with open(os.path.join(out, "benchmark.csv"), "w") as fh:
        fh.write("n,loop_ms_mean,loop_ms_std,delta_s_mean,delta_s_std\n")
        for n, lm, ls, dm, ds in rows:
            fh.write(f"{n},{lm * 1e3!r},{ls * 1e3!r},{dm!r},{ds!r}\n")
    deltas = [r[3] for r in rows]
    summary = {"exponent": exponent, "delta_ratio": max(deltas) / min(deltas)}
    _write_json(os.path.join(out, "benchmark_summary.json"), summary)
    _write_json(os.path.join(out, "config.resolved.json"), cfg)
    print(json.dumps(summary))
    return 0


# ---------------------------------------------------------------------------
# kernel cache


def cmd_kernel_cache(args, cfg):
    if args.action == "inspect":
        hdr = read_header(args.path)
        if args.verify:
            read_cache(args.path, verify=True)
        hdr["spec"] = hdr["spec"].to_dict()
        print(json.dumps(hdr))
        return 0
    _, kspec, _ = _specs(cfg)
    train, _, _ = load_splits(cfg)
    K = build_kernel_matrix(kspec, train.X_pos, train.X_neg, cache_path=args.path)
    print(json.dumps({"path": args.path, "n_pos": K.n_pos, "n_neg": K.n_neg}))
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="topdual", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry, e.g. solver.seed=3")
        p.add_argument("--output", help="output directory")
        p.add_argument("--seed", type=int, help="solver and split seed")
        p.add_argument("--max-loops", type=int)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a data file")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["sparse", "delimited"])
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics of a model on a split or file")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.add_argument("--data", help="evaluate on this file instead of a split")
    p.add_argument("--format", choices=["sparse", "delimited"])
    p.add_argument("--bin-width", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid-search", help="hyperparameter search on the validation split")
    common(p)
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("benchmark", help="per-loop timing across problem sizes")
    common(p)
    p.add_argument("--sizes", default="500,1000,2000,4000")
    p.add_argument("--loops", type=int, default=200)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=50)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("kernel-cache", help="build or inspect a kernel cache file")
    common(p)
    p.add_argument("action", choices=["build", "inspect"])
    p.add_argument("path")
    p.add_argument("--verify", action="store_true", help="check the entry checksum")
    p.set_defaults(func=cmd_kernel_cache)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides += [f"solver.seed={args.seed}", f"split.seed={args.seed}"]
        if args.max_loops is not None:
            overrides.append(f"solver.max_loops={args.max_loops}")
        if args.output and args.command != "predict":
            overrides.append(f"output={json.dumps(args.output)}")
        cfg = resolve_config(args.config, overrides)
        return args.func(args, cfg)
    except TopDualError as exc:
        _report(exc, exc.exit_code)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        _report(exc, ConfigError.exit_code)
        return ConfigError.exit_code
    except OSError as exc:
        _report(exc, DataError.exit_code)
        return DataError.exit_code


def _report(exc, code):
    print("error: " + json.dumps({"type": type(exc).__name__, "exit_code": code,
                                  "message": str(exc)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
