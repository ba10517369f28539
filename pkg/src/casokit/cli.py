"""Command line front end.

Subcommands cover the full workflow: train a small network on synthetic
blobs or a CSV dataset, run any interpretation method over samples,
sweep the sparsity weight, and reproduce the simulation studies.

Artifacts are deterministic: the same invocation with the same seed
produces bitwise-identical files. Every CSV and JSON artifact carries a
provenance record (the resolved configuration plus the package version,
never a timestamp). Output lands in --out, falling back to the
CASOKIT_OUT_DIR environment variable, then the working directory.

Exit codes: 0 on success, 1 on a runtime failure (bad file contents,
infeasible configuration), 2 on a usage error including nonexistent
input paths.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata

import numpy as np

from .analysis import (
    SIM_MODES,
    OracleConfig,
    RankOneSimConfig,
    alignment_curve,
    brute_force_group_feature,
    confidence_gap_study,
    l1_path_supports,
    make_planted_instance,
    simulate_rank_one,
    spearman_rho,
)
from .interpret import (
    DEFAULT_IG_STEPS,
    DEFAULT_LAMBDA1_GRID,
    DEFAULT_POWER_ITERS,
    DEFAULT_SMOOTH_N,
    DEFAULT_SMOOTH_SIGMA,
    METHODS,
    MethodRequest,
    lambda1_sweep,
    run_request,
)
from .netcore import LayerSpec, NetworkSpec, TrainConfig, init_network, make_blobs, train_sgd
from .saliency_io import (
    dataset_load,
    dataset_load_raw,
    dataset_save_csv,
    model_load,
    model_save,
    normalize_for_display,
    write_csv_rows,
    write_f64_tensor,
    write_pgm,
)
from .solver import DEFAULT_C1, SolverConfig

try:
    VERSION = metadata.version("casokit")
except metadata.PackageNotFoundError:
    VERSION = "0.0.0"

SWEEP_METHODS = ("cafo", "caso", "smooth-cafo", "smooth-caso")


def existing_file(text):
    if not os.path.isfile(text):
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return text


def int_list(text):
    try:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError(f"empty integer list: {text!r}")
    return values


def float_list(text):
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad float list: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError(f"empty float list: {text!r}")
    return values


def grid_spec(text):
    """Comma floats, or a range 'lo:hi:log[:n]' / 'lo:hi:lin[:n]' (n defaults
    to 10)."""
    if ":" not in text:
        return float_list(text)
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError(f"bad range spec: {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        n = int(parts[3]) if len(parts) == 4 else 10
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range spec: {text!r}") from None
    if n < 2:
        raise argparse.ArgumentTypeError("range needs at least 2 points")
    if parts[2] == "log":
        if lo <= 0 or hi <= 0:
            raise argparse.ArgumentTypeError("log range endpoints must be positive")
        values = np.geomspace(lo, hi, n)
    elif parts[2] == "lin":
        values = np.linspace(lo, hi, n)
    else:
        raise argparse.ArgumentTypeError(f"range kind must be log or lin: {text!r}")
    return tuple(float(v) for v in values)


def int_grid_spec(text):
    """Comma ints, or a 'lo:hi:log[:n]' range rounded to unique integers."""
    if ":" not in text:
        return int_list(text)
    values = grid_spec(text)
    out = []
    for v in values:
        iv = int(round(v))
        if not out or iv != out[-1]:
            out.append(iv)
    return tuple(out)


def _resolve_out(args):
    out = args.out or os.environ.get("CASOKIT_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


# knobs that change where or how fast a run executes, but never what it
# computes; excluded so artifact bytes do not depend on them
_EXECUTION_ONLY = ("func", "command", "jobs", "out", "config")


def _provenance(args, command):
    doc = {"command": command, "version": VERSION}
    for key, value in vars(args).items():
        if key in _EXECUTION_ONLY:
            continue
        doc[key] = list(value) if isinstance(value, tuple) else value
    return doc


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_data(args):
    if getattr(args, "labels", None) is not None:
        return dataset_load_raw(args.data, args.labels)
    return dataset_load(args.data)


def _geometry(args, dim):
    """Resolve (width, height) for display, inferring a square image when
    neither is given."""
    ch = args.channels
    if ch < 1:
        raise ValueError("channels must be >= 1")
    if dim % ch:
        raise ValueError(f"input dim {dim} is not divisible by {ch} channels")
    pixels = dim // ch
    w, h = args.width, args.height
    if w is None and h is None:
        side = math.isqrt(pixels)
        if side * side != pixels:
            raise ValueError(
                f"{pixels} pixels is not square; pass --width and --height"
            )
        return side, side
    if w is None:
        w = pixels // h
    if h is None:
        h = pixels // w
    if w * h != pixels:
        raise ValueError(f"{w}x{h} does not cover {pixels} pixels")
    return w, h


def _solver_config(args):
    return SolverConfig(
        learning_rate=args.lr,
        iterations=args.solver_iters,
        backtrack_decay=args.decay,
        max_backtracks=args.max_backtracks,
    )


def _result_summary(res):
    return {
        "method": res.method,
        "lambda1": res.lam1,
        "lambda2": res.lam2,
        "eta": res.eta,
        "p_max": res.p_max,
        "loss_gain": res.loss_gain,
        "raw_loss_delta": res.raw_loss_delta,
    }


def cmd_train(args):
    out = _resolve_out(args)
    if args.data is not None:
        dataset = dataset_load(args.data)
        classes = int(dataset.labels.max()) + 1
        dim = dataset.dim
    else:
        dataset = make_blobs(
            classes=args.classes,
            dim=args.dim,
            n_per_class=args.n_per_class,
            center_scale=args.center_scale,
            noise=args.noise,
            seed=args.seed,
        )
        classes, dim = args.classes, args.dim
    layers = []
    prev = dim
    for width in args.hidden:
        layers.append(LayerSpec(prev, width, args.activation))
        prev = width
    layers.append(LayerSpec(prev, classes, "identity"))
    net = init_network(NetworkSpec(tuple(layers)), seed=args.seed)
    result = train_sgd(
        net,
        dataset,
        TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed),
    )
    model_path = os.path.join(out, args.model_name)
    model_save(result.network, model_path, metadata=_provenance(args, "train"))
    if args.save_data:
        dataset_save_csv(dataset, os.path.join(out, "data.csv"))
    print(f"accuracy={result.accuracy:.6f}")
    print(f"model={model_path}")
    return 0


def cmd_interpret(args):
    out = _resolve_out(args)
    net = model_load(args.model)
    dataset = _load_data(args)
    indices = args.samples
    for i in indices:
        if not 0 <= i < dataset.n:
            raise ValueError(f"sample index {i} outside the dataset of {dataset.n}")
    w, h = _geometry(args, dataset.dim)
    solver = _solver_config(args)
    children = np.random.SeedSequence(args.seed).spawn(len(indices))

    def work(pos):
        child_seed = int(children[pos].generate_state(1, dtype=np.uint64)[0])
        request = MethodRequest(
            method=args.method,
            sample=dataset.sample(indices[pos]),
            lam1=args.lambda1,
            c1=args.c1,
            smooth_n=args.smooth_n,
            smooth_sigma=args.smooth_sigma,
            ig_steps=args.ig_steps,
            power_iters=args.power_iters,
            seed=child_seed,
            channels=args.channels,
            solver=solver,
        )
        return run_request(net, request)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, range(len(indices))))
    else:
        results = [work(pos) for pos in range(len(indices))]

    # all computation is done; one collector writes everything in order
    prov = _provenance(args, "interpret")
    rows = []
    for idx, res in zip(indices, results):
        dmap = normalize_for_display(res.delta, w, h, args.channels)
        write_pgm(
            dmap,
            os.path.join(out, f"sample{idx}.pgm"),
            comment=f"casokit {res.method} sample {idx}",
        )
        write_f64_tensor(os.path.join(out, f"sample{idx}.delta.f64"), res.delta)
        doc = _result_summary(res)
        doc["sample_id"] = idx
        doc["iterations_used"] = res.solve.iterations_used if res.solve else None
        doc["provenance"] = prov
        _write_json(os.path.join(out, f"sample{idx}.json"), doc)
        rows.append((idx, res.method, res.lam1, res.lam2, res.eta, res.loss_gain, res.p_max))
        print(f"sample {idx}: eta={res.eta:.4f} p_max={res.p_max:.4f}")
    write_csv_rows(
        os.path.join(out, "metrics.csv"),
        ("sample_id", "method", "lambda1", "lambda2", "eta", "loss_gain", "p_max"),
        rows,
        provenance=prov,
    )
    return 0


def cmd_sweep(args):
    out = _resolve_out(args)
    net = model_load(args.model)
    dataset = _load_data(args)
    if not 0 <= args.sample < dataset.n:
        raise ValueError(f"sample index {args.sample} outside the dataset of {dataset.n}")
    sample = dataset.sample(args.sample)
    w, h = _geometry(args, dataset.dim)
    kwargs = {"c1": args.c1, "solver_config": _solver_config(args)}
    if args.method == "caso":
        kwargs.update(power_iters=args.power_iters, seed=args.seed)
    elif args.method == "smooth-cafo":
        kwargs.update(n=args.smooth_n, sigma=args.smooth_sigma, seed=args.seed)
    elif args.method == "smooth-caso":
        kwargs.update(
            n=args.smooth_n, sigma=args.smooth_sigma, seed=args.seed,
            power_iters=args.power_iters,
        )
    outcome = lambda1_sweep(
        sample,
        net,
        method=args.method,
        grid=args.grid,
        eta_range=(args.eta_min, args.eta_max),
        max_refinements=args.max_refinements,
        channels=args.channels,
        **kwargs,
    )
    selected = outcome.selected
    doc = {
        "grid": list(outcome.grid),
        "eta_range": list(outcome.eta_range),
        "candidates": [_result_summary(r) for r in outcome.results],
        "refinements": [_result_summary(r) for r in outcome.refinements],
        "selected_index": outcome.selected_index,
        "selected": _result_summary(selected),
        "target_met": outcome.target_met,
        "provenance": _provenance(args, "sweep"),
    }
    _write_json(os.path.join(out, "sweep.json"), doc)
    dmap = normalize_for_display(selected.delta, w, h, args.channels)
    write_pgm(
        dmap,
        os.path.join(out, "selected.pgm"),
        comment=f"casokit {args.method} lam1 {selected.lam1!r}",
    )
    write_f64_tensor(os.path.join(out, "selected.delta.f64"), selected.delta)
    print(
        f"selected lambda1={selected.lam1!r} eta={selected.eta:.4f} "
        f"target_met={outcome.target_met}"
    )
    return 0


def cmd_rank1_sim(args):
    out = _resolve_out(args)
    cfg = RankOneSimConfig(
        mode=args.mode,
        d=args.d,
        seed=args.seed,
        p0=args.p0,
        classes=args.classes or (),
        eps_values=args.eps or (),
        c=args.c,
    )
    points = simulate_rank_one(cfg)
    path = os.path.join(out, "rank1.csv")
    write_csv_rows(
        path,
        ("c", "eps", "rel_error"),
        [(pt.c, pt.eps, pt.rel_error) for pt in points],
        provenance=_provenance(args, "rank1-sim"),
    )
    print(f"wrote {len(points)} points to {path}")
    return 0


def cmd_gap_study(args):
    out = _resolve_out(args)
    net = model_load(args.model)
    dataset = _load_data(args)
    n = dataset.n if args.n_samples is None else args.n_samples
    points = confidence_gap_study(net, dataset, n, c1=args.c1)
    path = os.path.join(out, "gap.csv")
    write_csv_rows(
        path,
        ("sample_id", "p_max", "gap"),
        [(pt.sample_id, pt.p_max, pt.gap) for pt in points],
        provenance=_provenance(args, "gap-study"),
    )
    rho = spearman_rho([pt.p_max for pt in points], [pt.gap for pt in points])
    print(f"spearman_rho={rho!r}")
    print(f"wrote {len(points)} points to {path}")
    return 0


def cmd_alignment(args):
    out = _resolve_out(args)
    points = alignment_curve(d=args.d, classes=args.classes, eps=args.eps, seed=args.seed)
    path = os.path.join(out, "alignment.csv")
    write_csv_rows(
        path,
        ("c", "cosine", "mass_ratio"),
        [(pt.c, pt.cosine, pt.mass_ratio) for pt in points],
        provenance=_provenance(args, "alignment"),
    )
    for pt in points:
        print(f"c={pt.c} cosine={pt.cosine:.6f} mass_ratio={pt.mass_ratio:.6f}")
    return 0


def cmd_oracle_check(args):
    out = _resolve_out(args)
    for s in args.support:
        if not 0 <= s < args.d:
            raise ValueError(f"support index {s} outside dimension {args.d}")
    g, H, lam2, support = make_planted_instance(
        d=args.d, support=args.support, seed=args.seed
    )
    k = args.k if args.k is not None else len(support)
    cfg = OracleConfig(k=k, max_enumerations=args.max_enumerations)
    oracle = brute_force_group_feature(g, H, lam2, cfg)
    path_supports = l1_path_supports(g, H, lam2, args.grid, iterations=args.solver_iters)
    match = any(s == oracle.support for s in path_supports)
    path = os.path.join(out, "oracle.csv")
    write_csv_rows(
        path,
        ("support", "value", "l1_match"),
        [(";".join(str(i) for i in oracle.support), oracle.value, int(match))],
        provenance=_provenance(args, "oracle-check"),
    )
    print(
        f"oracle support={';'.join(str(i) for i in oracle.support)} "
        f"value={oracle.value!r} l1_match={match}"
    )
    return 0


def _add_common(sp):
    sp.add_argument("--config", help="JSON file of default values for any flag")
    sp.add_argument("--out", help="output directory (default: $CASOKIT_OUT_DIR or .)")
    sp.add_argument("--seed", type=int, default=0, help="seed for every random draw")


def _add_model_data(sp):
    sp.add_argument("--model", type=existing_file, required=True, help="model JSON")
    sp.add_argument("--data", "--input", dest="data", type=existing_file, required=True,
                    help="dataset CSV, or raw f32 tensor when --labels is given")
    sp.add_argument("--labels", type=existing_file,
                    help="sidecar label file for a raw tensor dataset")


def _add_geometry(sp):
    sp.add_argument("--width", type=int, help="image width (default: infer square)")
    sp.add_argument("--height", type=int, help="image height (default: infer square)")
    sp.add_argument("--channels", type=int, default=1,
                    help="channels per pixel for sparsity and display")


def _add_solver(sp):
    sp.add_argument("--lr", type=float, default=0.1, help="solver step size")
    sp.add_argument("--solver-iters", type=int, default=10, help="solver iterations")
    sp.add_argument("--decay", type=float, default=0.5, help="backtracking decay")
    sp.add_argument("--max-backtracks", type=int, default=20,
                    help="backtracking steps per iteration")


def _add_method_knobs(sp):
    sp.add_argument("--lambda1", type=float, default=0.0, help="sparsity weight")
    sp.add_argument("--c1", type=float, default=DEFAULT_C1,
                    help="additive trust constant in lambda2")
    sp.add_argument("--power-iters", type=int, default=DEFAULT_POWER_ITERS,
                    help="power iterations for the curvature bound")
    sp.add_argument("--smooth-n", type=int, default=DEFAULT_SMOOTH_N,
                    help="noise samples for smooth variants")
    sp.add_argument("--smooth-sigma", type=float, default=DEFAULT_SMOOTH_SIGMA,
                    help="noise level as a fraction of the input range")
    sp.add_argument("--ig-steps", type=int, default=DEFAULT_IG_STEPS,
                    help="integration steps for integrated gradients")


def build_parser():
    root = argparse.ArgumentParser(
        prog="casokit",
        description="Curvature-aware saliency maps for small classifiers.",
    )
    root.add_argument("--config", help="JSON file of default values for any flag")
    root.add_argument("--version", action="version", version=f"casokit {VERSION}")
    sub = root.add_subparsers(dest="command", required=True, metavar="command")
    parsers = [root]

    sp = sub.add_parser("train", help="train a small classifier on blobs or a CSV")
    _add_common(sp)
    sp.add_argument("--data", type=existing_file,
                    help="train on this CSV instead of synthetic blobs")
    sp.add_argument("--classes", type=int, default=10, help="blob class count")
    sp.add_argument("--dim", type=int, default=16, help="blob input dimension")
    sp.add_argument("--n-per-class", type=int, default=20, help="blob samples per class")
    sp.add_argument("--center-scale", type=float, default=2.0, help="blob center spread")
    sp.add_argument("--noise", type=float, default=1.0, help="blob noise level")
    sp.add_argument("--hidden", type=int_list, default=(32,),
                    help="comma list of hidden layer widths")
    sp.add_argument("--activation", choices=("relu", "sigmoid"), default="relu")
    sp.add_argument("--lr", type=float, default=0.1, help="SGD learning rate")
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--model-name", default="model.json", help="output model filename")
    sp.add_argument("--save-data", action="store_true",
                    help="also write the training data as data.csv")
    sp.set_defaults(func=cmd_train)
    parsers.append(sp)

    sp = sub.add_parser("interpret", help="saliency maps for dataset samples")
    _add_common(sp)
    _add_model_data(sp)
    _add_geometry(sp)
    _add_solver(sp)
    _add_method_knobs(sp)
    sp.add_argument("--method", choices=METHODS, default="cafo")
    sp.add_argument("--samples", type=int_list, default=(0,),
                    help="comma list of sample indices")
    sp.add_argument("--jobs", type=int, default=1,
                    help="worker threads; output is identical for any value")
    sp.set_defaults(func=cmd_interpret)
    parsers.append(sp)

    sp = sub.add_parser("sweep", help="sweep lambda1 and pick the sparsest useful map")
    _add_common(sp)
    _add_model_data(sp)
    _add_geometry(sp)
    _add_solver(sp)
    _add_method_knobs(sp)
    sp.add_argument("--method", choices=SWEEP_METHODS, default="cafo")
    sp.add_argument("--sample", type=int, default=0, help="sample index")
    sp.add_argument("--grid", type=grid_spec, default=DEFAULT_LAMBDA1_GRID,
                    help="lambda1 grid: comma list or lo:hi:log[:n]")
    sp.add_argument("--eta-min", type=float, default=0.75, help="target sparsity floor")
    sp.add_argument("--eta-max", type=float, default=1.0,
                    help="sparsity ceiling (exclusive)")
    sp.add_argument("--max-refinements", type=int, default=20,
                    help="halving steps when the grid misses the target")
    sp.set_defaults(func=cmd_sweep)
    parsers.append(sp)

    sp = sub.add_parser("rank1-sim", help="rank-one surrogate error simulation")
    _add_common(sp)
    sp.add_argument("--mode", choices=SIM_MODES, default="vary-classes")
    sp.add_argument("--d", type=int, default=512, help="input dimension")
    sp.add_argument("--p0", type=float, help="top-class probability (vary-classes)")
    sp.add_argument("--classes", type=int_grid_spec,
                    help="class counts: comma list or lo:hi:log[:n]")
    sp.add_argument("--eps", type=grid_spec,
                    help="runner-up probabilities: comma list or lo:hi:log[:n]")
    sp.add_argument("--c", type=int, help="class count (vary-eps)")
    sp.set_defaults(func=cmd_rank1_sim)
    parsers.append(sp)

    sp = sub.add_parser("gap-study", help="confidence versus method-gap study")
    _add_common(sp)
    _add_model_data(sp)
    sp.add_argument("--n-samples", type=int, help="cap on samples (default: all)")
    sp.add_argument("--c1", type=float, default=DEFAULT_C1)
    sp.set_defaults(func=cmd_gap_study)
    parsers.append(sp)

    sp = sub.add_parser("alignment", help="gradient alignment across class counts")
    _add_common(sp)
    sp.add_argument("--d", type=int, default=512, help="input dimension")
    sp.add_argument("--classes", type=int_grid_spec, default=(10, 100, 1000),
                    help="class counts: comma list or lo:hi:log[:n]")
    sp.add_argument("--eps", type=float, default=1e-6, help="runner-up probability")
    sp.set_defaults(func=cmd_alignment)
    parsers.append(sp)

    sp = sub.add_parser("oracle-check", help="exhaustive oracle versus the L1 path")
    _add_common(sp)
    sp.add_argument("--d", type=int, default=12, help="instance dimension (<= 14)")
    sp.add_argument("--k", type=int, help="oracle support size (default: planted size)")
    sp.add_argument("--support", type=int_list, default=(2, 5, 9),
                    help="planted support indices")
    sp.add_argument("--grid", type=grid_spec, default=DEFAULT_LAMBDA1_GRID,
                    help="lambda1 grid for the L1 path")
    sp.add_argument("--max-enumerations", type=int, default=100_000)
    sp.add_argument("--solver-iters", type=int, default=100,
                    help="solver iterations for the L1 path")
    sp.set_defaults(func=cmd_oracle_check)
    parsers.append(sp)

    return root, parsers


def _apply_config(argv, root, parsers):
    """Merge --config JSON into parser defaults; explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return
    if not os.path.isfile(known.config):
        root.error(f"no such config file: {known.config}")
    try:
        with open(known.config) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        root.error(f"invalid config JSON at line {e.lineno}: {e.msg}")
    if not isinstance(doc, dict):
        root.error("config must be a JSON object of flag defaults")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        hit = False
        for p in parsers:
            if any(a.dest == dest for a in p._actions):
                p.set_defaults(**{dest: value})
                hit = True
        if not hit:
            root.error(f"unknown config key: {key}")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    root, parsers = build_parser()
    _apply_config(argv, root, parsers)
    args = root.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
