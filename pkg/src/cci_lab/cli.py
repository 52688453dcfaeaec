"""``cci-lab`` command line: gen, train, verify, spectrum, sweep.

Exit codes: 0 success, 1 a checked assertion failed, 2 usage or input error.
Set ``ACPO_LOG=DEBUG|INFO|WARNING`` for verbosity.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__, _backend
from .acpo import AcpoConfig, ConfigError, train
from .cci import CciParams, classify_regime, constraint_derivative, state_constraint, wbc_threshold
from .data import OfflineDataset, dataset_state_distribution, fit_behavior_mle, generate_dataset
from .mdp import (TabularMdp, TabularPolicy, chain_mdp, clip_log, epsilon_greedy, evaluate_policy,
                  gridworld, optimal_q, random_mdp, random_policy)
from .theory import SUITES, run_suite, summarize

log = logging.getLogger("cci_lab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def fmt(x) -> str:
    """Full-precision float text that round-trips through ``float``."""
    return format(float(x), ".17g")


# -- instance specs --------------------------------------------------------------


def parse_mdp(spec: str) -> TabularMdp:
    """``gridworld:WxH``, ``chain:N``, ``random:SxA:SEED`` or a JSON file path."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "gridworld":
            w, h = (int(x) for x in rest.split("x"))
            return gridworld(w, h)
        if kind == "chain":
            return chain_mdp(int(rest))
        if kind == "random":
            shape, seed = rest.split(":")
            n_s, n_a = (int(x) for x in shape.split("x"))
            return random_mdp(n_s, n_a, 0.9, int(seed))
    except ValueError as exc:
        raise UsageError(f"bad MDP spec {spec!r}: {exc}") from None
    path = Path(spec)
    if path.suffix == ".json" and path.exists():
        return TabularMdp.load(path)
    raise UsageError(f"bad MDP spec {spec!r} (expected gridworld:WxH, chain:N, random:SxA:SEED or a .json file)")


def parse_behavior(spec: str, mdp: TabularMdp) -> TabularPolicy:
    """``uniform``, ``eps-greedy:EPS`` (on optimal Q), ``random:SEED`` or a JSON file of probs."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "uniform":
            return TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
        if kind == "eps-greedy":
            eps = float(rest)
            if not 0 <= eps <= 1:
                raise ValueError("epsilon must lie in [0, 1]")
            return epsilon_greedy(optimal_q(mdp), eps)
        if kind == "random":
            return random_policy(mdp.n_states, mdp.n_actions, int(rest))
    except ValueError as exc:
        raise UsageError(f"bad behavior spec {spec!r}: {exc}") from None
    path = Path(spec)
    if path.suffix == ".json" and path.exists():
        return TabularPolicy(np.asarray(json.loads(path.read_text())["probs"], dtype=np.float64))
    raise UsageError(f"bad behavior spec {spec!r} (expected uniform, eps-greedy:EPS, random:SEED or a .json file)")


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return vals


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- manifests and files -----------------------------------------------------------


def versions() -> dict:
    try:
        import numba
        numba_version = numba.__version__
    except ImportError:  # pragma: no cover
        numba_version = None
    return {"cci_lab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba_version}


def _hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def manifest(command: str, args: dict, seed, config_hash: str | None = None) -> dict:
    return {"command": command, "args": args, "seed": seed,
            "config_hash": config_hash or _hash({"command": command, **args}),
            "backend": _backend.backend_name(), "versions": versions()}


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    return path


def load_dataset(path) -> OfflineDataset:
    try:
        return OfflineDataset.load(path)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read dataset {path}: {exc}") from None


def dataset_mdp(data: OfflineDataset) -> TabularMdp:
    spec = data.meta.get("mdp")
    if not spec:
        raise UsageError("dataset header has no 'mdp' spec; regenerate it with `cci-lab gen`")
    return parse_mdp(spec)


def dataset_behavior(data: OfflineDataset, mdp: TabularMdp) -> TabularPolicy | None:
    spec = data.meta.get("behavior")
    if not spec or spec == "custom":
        return None
    return parse_behavior(spec, mdp)


def load_config(path, overrides: dict) -> AcpoConfig:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return AcpoConfig.from_dict(doc)


# -- commands ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    mdp = parse_mdp(args.mdp)
    behavior = parse_behavior(args.behavior, mdp)
    if args.n < 0 or args.horizon < 1:
        raise UsageError("--n must be >= 0 and --horizon >= 1")
    data = generate_dataset(mdp, behavior, args.n, args.horizon, args.seed,
                            mdp_id=args.mdp, behavior_id=args.behavior)
    out = Path(args.out)
    try:
        data.save(out)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from None
    write_json(out.with_name(out.name + ".manifest.json"),
               manifest("gen", {"mdp": args.mdp, "behavior": args.behavior, "n": args.n,
                                "horizon": args.horizon, "out": str(out)}, args.seed))
    visited = len(np.unique(data.s)) if len(data) else 0
    print(f"wrote {len(data)} transitions ({data.meta['n_trajectories']} episodes, "
          f"{visited}/{mdp.n_states} states visited) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "n_steps": args.n_steps})
    data = load_dataset(args.data)
    mdp = dataset_mdp(data)
    behavior = dataset_behavior(data, mdp)
    out = _prepare_dir(Path(args.out))
    res = train(cfg, data, mdp, behavior)
    write_csv(out / "trace.csv", ["step", "lambda", "constraint", "J_pi", "J_beta"],
              ((int(st), float(lam), float(g), float(j), float(jb)) for st, lam, g, j, jb in res.trace_rows()))
    write_json(out / "checkpoint.json", res.checkpoint())
    write_json(out / "manifest.json",
               {**manifest("train", {"config": cfg.to_dict(), "data": str(args.data)}, cfg.seed,
                           cfg.config_hash()),
                "dataset_meta": data.meta})
    print(f"final lambda {fmt(res.dual.lam)}  J_pi {fmt(res.eval_j_pi[-1])}  J_beta {fmt(res.j_beta)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = run_suite(args.suite, args.n, args.seed, workers=args.workers,
                        inject_fault=args.inject_fault)
    summary = summarize(reports)
    lines = [r.to_json() for r in reports]
    if args.out:
        out = _prepare_dir(Path(args.out))
        (out / "reports.jsonl").write_text("".join(ln + "\n" for ln in lines))
        write_json(out / "summary.json", summary)
        write_json(out / "manifest.json",
                   manifest("verify", {"suite": args.suite, "n": args.n, "workers": args.workers,
                                       "inject_fault": args.inject_fault}, args.seed))
    if not args.quiet:
        for ln in lines:
            print(ln)
    print(json.dumps({"summary": summary}, sort_keys=True))
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def spectrum_rows(data: OfflineDataset, mdp: TabularMdp, alpha: float, lambdas, log_clip=(-20.0, 0.0),
                  delta: float = 0.01, smoothing: float = 0.5):
    """Dataset-averaged ``g(lam)``, its derivative, and the regime of each ``lam``.

    The advantage is the exact soft advantage of the fitted behavior policy.
    """
    behavior = fit_behavior_mle(data, mdp.n_states, mdp.n_actions, smoothing)
    w = dataset_state_distribution(data, mdp.n_states)
    adv = evaluate_policy(mdp, behavior, alpha).advantage
    ell = clip_log(behavior.probs, log_clip)
    thr = wbc_threshold(float(np.max(np.abs(mdp.reward))), alpha, max(abs(log_clip[0]), abs(log_clip[1])),
                        mdp.gamma, float(np.min(np.abs(ell))), delta)
    rows = []
    for lam in lambdas:
        p = CciParams(alpha, lam, log_clip)
        states = np.flatnonzero(w > 0)
        g = sum(w[s] * state_constraint(adv[s], behavior.probs[s], p) for s in states)
        dg = sum(w[s] * constraint_derivative(adv[s], behavior.probs[s], p) for s in states)
        rows.append((float(lam), classify_regime(p, thr).value, float(g), float(dg), float(thr)))
    return rows


def cmd_spectrum(args) -> int:
    if not args.lambdas:
        raise UsageError("--lambdas must list at least one value")
    if any(lam < 0 for lam in args.lambdas):
        raise UsageError("lambda values must be >= 0")
    if args.alpha <= 0:
        raise UsageError("--alpha must be > 0")
    data = load_dataset(args.data)
    mdp = dataset_mdp(data)
    rows = spectrum_rows(data, mdp, args.alpha, sorted(args.lambdas), delta=args.delta)
    out = Path(args.out)
    write_csv(out, ["lambda", "regime", "g", "dg_dlambda", "wbc_threshold"], rows)
    write_json(out.with_name(out.name + ".manifest.json"),
               manifest("spectrum", {"data": str(args.data), "alpha": args.alpha,
                                     "lambdas": sorted(args.lambdas), "delta": args.delta}, None))
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def _sweep_one(job):
    cfg_doc, data_path, lam, seed = job
    cfg = AcpoConfig.from_dict({**cfg_doc, "lambda_init": lam, "seed": seed})
    data = OfflineDataset.load(data_path)
    mdp = dataset_mdp(data)
    res = train(cfg, data, mdp, dataset_behavior(data, mdp))
    return (lam, seed, res.dual.lam, res.eval_constraint[-1], res.eval_j_pi[-1], res.j_beta)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, {"n_steps": args.n_steps, "freeze_lambda": args.freeze_lambda or None})
    load_dataset(args.data)  # fail early on a bad path
    doc = cfg.to_dict()
    jobs = [(doc, str(args.data), lam, seed) for lam in args.lambdas for seed in args.seeds]
    if not jobs:
        raise UsageError("empty sweep grid")
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    out = _prepare_dir(Path(args.out))
    write_csv(out / "sweep.csv", ["lambda_init", "seed", "final_lambda", "constraint", "J_pi", "J_beta"],
              rows)
    write_json(out / "manifest.json",
               manifest("sweep", {"config": doc, "data": str(args.data), "lambdas": args.lambdas,
                                  "seeds": args.seeds}, args.seeds, cfg.config_hash()))
    print(f"wrote {len(rows)} runs to {out / 'sweep.csv'}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cci-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an offline dataset")
    g.add_argument("--mdp", default="gridworld:5x5")
    g.add_argument("--behavior", default="eps-greedy:0.2")
    g.add_argument("--n", type=int, default=20_000)
    g.add_argument("--horizon", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run ACPO on a dataset")
    t.add_argument("--config", help="JSON file of AcpoConfig fields (defaults otherwise)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--n-steps", type=int)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run the numerical theory checks")
    v.add_argument("--suite", choices=SUITES, default="all")
    v.add_argument("--n", type=int, help="instances per suite (default: suite-specific)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--out")
    v.add_argument("--quiet", action="store_true", help="print only the summary line")
    v.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("spectrum", help="constraint value and regime over a lambda grid")
    s.add_argument("--data", required=True)
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--lambdas", type=_float_list, required=True)
    s.add_argument("--delta", type=float, default=0.01)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    w = sub.add_parser("sweep", help="train over a lambda_init x seed grid")
    w.add_argument("--config")
    w.add_argument("--data", required=True)
    w.add_argument("--lambdas", type=_float_list, required=True)
    w.add_argument("--seeds", type=_int_list, default=[0])
    w.add_argument("--n-steps", type=int)
    w.add_argument("--freeze-lambda", action="store_true")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    level = os.environ.get("ACPO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for key, msg in exc.errors.items():
            print(f"config error: {key}: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
