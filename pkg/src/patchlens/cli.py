"""Command-line front end: ``patchlens <command> [options]``.

Exit codes: 0 success, 1 compute or IO error, 2 argument error,
3 ``verify`` found a failing check.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analytic as an
from . import svgplot
from .data_io import (
    CIFAR10_CLASSES, LabelSource, atomic_write, cifar_train_paths, export_filter_bank,
    gen_shared_mean_dataset, import_filter_bank, load_cifar10, make_labels,
    read_avg_patch_csv, shift_class_mean, write_avg_patch_csv,
)
from .linear_dynamics import GDConfig, multi_filter_run
from .patch_engine import (
    PcaBasis, build_avg_patch_matrix, class_average_patch, extract_patches_many, fit_pca,
    fit_pca_from_moments, patch_moments, second_moment_stats, to_pca,
)
from .profile import EnergyProfile, energy_profile, pair_distances, profile_correlation, subtract_init

log = logging.getLogger("patchlens")

PROFILE_HEADER = "component_index,eigenvalue,energy"


class CliError(Exception):
    """Compute or IO failure reported with exit code 1."""


# -- file helpers ---------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _require_files(paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise CliError(f"input file not found: {p}")


def _write_manifest(target, args, inputs, outputs):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "config": json.loads(json.dumps(cfg, default=str)),
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "outputs": [str(p) for p in outputs],
    }
    atomic_write(target, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _manifest_path(out):
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_profile_csv(profile, path):
    lines = [f"# variant={profile.variant} basis={profile.basis_fingerprint or ''}", PROFILE_HEADER]
    ev = profile.eigenvalues if profile.eigenvalues is not None else np.full(profile.e.size, np.nan)
    lines += [f"{i},{ev[i]:.17g},{profile.e[i]:.17g}" for i in range(profile.e.size)]
    atomic_write(path, "\n".join(lines) + "\n")


def read_profile_csv(path):
    variant, fp = None, None
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "variant":
                    variant = val
                elif key == "basis":
                    fp = val or None
            continue
        if line == PROFILE_HEADER:
            continue
        cells = line.split(",")
        if len(cells) != 3:
            raise CliError(f"{path}: line {lineno}: expected 3 cells")
        rows.append([float(c) for c in cells])
    if not rows:
        raise CliError(f"{path}: no profile rows")
    arr = np.array(rows)
    return EnergyProfile(arr[:, 2], variant or "rms", fp, arr[:, 1])


def read_pairs_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "input_dist,mapped_dist":
        raise CliError(f"{path}: line 1: expected header input_dist,mapped_dist")
    return np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])


def _load_basis(path):
    try:
        return PcaBasis.from_json(Path(path).read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise CliError(f"{path}: malformed PCA basis ({exc})") from None


def _cifar_paths(args):
    if args.cifar:
        return [Path(p) for p in args.cifar]
    root = os.environ.get("PATCHLENS_DATA")
    if root:
        found = cifar_train_paths(root)
        if found:
            return found
    return []


def _load_images(args):
    paths = _cifar_paths(args)
    if not paths:
        raise CliError("no image source: pass --cifar FILE or set PATCHLENS_DATA")
    _require_files(paths)
    ds = load_cifar10(paths, scale=not args.no_scale)
    if getattr(args, "limit", None):
        ds.images, ds.labels = ds.images[:args.limit], ds.labels[:args.limit]
    return ds, paths


def _labels(kind, y_file, seed):
    n = y_file.size
    if kind == "true":
        if np.any(y_file < 0):
            raise CliError("input has no labels; use --labels bernoulli or expectation")
        return make_labels(LabelSource("true", labels=tuple(y_file)), n)
    return make_labels(LabelSource(kind, seed=seed), n)


def _eps_grid(eps_max, eps_step):
    n = int(round(eps_max / eps_step))
    return [round(i * eps_step, 12) for i in range(n + 1)]


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


# -- commands -------------------------------------------------------------------

def cmd_synth(args):
    ds = gen_shared_mean_dataset(args.n_per_class, args.d, args.spread, args.seed, base=args.base)
    write_avg_patch_csv(ds.K, ds.y, args.out)
    _write_manifest(_manifest_path(args.out), args, [], [args.out])
    print(f"wrote {ds.K.N} rows (d={ds.K.d}) to {args.out}")


def cmd_avg_patch(args):
    ds, paths = _load_images(args)
    images, labels = ds.images, ds.labels
    if args.classes:
        a, b = (_class_id(c) for c in args.classes.split(","))
        keep = np.concatenate([np.nonzero(labels == a)[0], np.nonzero(labels == b)[0]])
        if not (labels == a).any() or not (labels == b).any():
            raise CliError(f"class {a if not (labels == a).any() else b} has no images")
        images = images[keep]
        labels = np.where(labels[keep] == a, 0, 1)
    K = build_avg_patch_matrix(images, args.k, args.stride)
    write_avg_patch_csv(K, labels, args.out)
    outputs = [args.out]
    if args.class_report:
        if not args.pca:
            raise CliError("--class-report needs --pca")
        basis = _load_basis(args.pca)
        present = sorted(set(int(x) for x in labels))
        profiles = {c: energy_profile(class_average_patch(K, labels, c)[None, :], basis, "rms") for c in present}
        lines = ["class_a,class_b,correlation"]
        for i in present:
            for j in present:
                if i < j:
                    lines.append(f"{i},{j},{profile_correlation(profiles[i], profiles[j]):.17g}")
        atomic_write(args.class_report, "\n".join(lines) + "\n")
        outputs.append(args.class_report)
    _write_manifest(_manifest_path(args.out), args, paths + ([args.pca] if args.pca else []), outputs)
    print(f"wrote {K.N} average patches (d={K.d}) to {args.out}")


def _class_id(token):
    token = token.strip()
    if token.isdigit():
        return int(token)
    if token in CIFAR10_CLASSES:
        return CIFAR10_CLASSES.index(token)
    raise CliError(f"unknown class {token!r}")


def cmd_pca(args):
    inputs = []
    if args.avg_patch:
        _require_files([args.avg_patch])
        K, _ = read_avg_patch_csv(args.avg_patch)
        basis = fit_pca(K.K, centered=not args.uncentered, population="avg_patch_rows")
        inputs.append(args.avg_patch)
    else:
        ds, paths = _load_images(args)
        inputs += paths
        c = ds.images.shape[1]
        if args.population == "avg_patch_rows":
            K = build_avg_patch_matrix(ds.images, args.k, args.stride)
            basis = fit_pca(K.K, centered=not args.uncentered, population="avg_patch_rows", c=c, k=args.k)
        else:
            mom = patch_moments(ds.images, args.k, args.stride, threads=args.threads,
                                sample_count=args.sample_count, seed=args.seed)
            basis = fit_pca_from_moments(*mom, centered=not args.uncentered, population="all_patches",
                                         c=c, k=args.k)
    atomic_write(args.out, basis.to_json())
    _write_manifest(_manifest_path(args.out), args, inputs, [args.out])
    print(f"wrote PCA basis (d={basis.d}, population={basis.population}) to {args.out}")


def cmd_profile(args):
    _require_files([args.filters, args.pca, args.subtract_init])
    bank = import_filter_bank(args.filters)
    if args.subtract_init:
        bank = subtract_init(bank, import_filter_bank(args.subtract_init))
    basis = _load_basis(args.pca)
    prof = energy_profile(bank, basis, args.variant)
    write_profile_csv(prof, args.out)
    outputs = [args.out]
    if args.svg:
        atomic_write(args.svg, svgplot.line_plot(np.arange(prof.e.size), prof.e, "energy profile",
                                                 "PCA component", f"energy ({args.variant})"))
        outputs.append(args.svg)
    _write_manifest(_manifest_path(args.out), args, [args.filters, args.pca, args.subtract_init], outputs)
    print(f"wrote {prof.e.size}-component {args.variant} profile to {args.out}")


def cmd_compare(args):
    _require_files(args.profiles)
    profs = [read_profile_csv(p) for p in args.profiles]
    variants = {p.variant for p in profs}
    if len(variants) > 1:
        raise CliError(f"refusing to compare profiles of different variants: {sorted(variants)}")
    fps = {p.basis_fingerprint for p in profs if p.basis_fingerprint}
    if len(fps) > 1:
        raise CliError("profiles were computed in different PCA bases")
    lines = ["profile_a,profile_b,correlation"]
    for i in range(len(profs)):
        for j in range(i + 1, len(profs)):
            r = profile_correlation(profs[i], profs[j])
            lines.append(f"{args.profiles[i]},{args.profiles[j]},{r:.17g}")
            print(f"{args.profiles[i]} vs {args.profiles[j]}: {r:.6f}")
    if args.out:
        atomic_write(args.out, "\n".join(lines) + "\n")
        _write_manifest(_manifest_path(args.out), args, args.profiles, [args.out])


def cmd_distances(args):
    _require_files([args.filters, args.reference])
    bank = import_filter_bank(args.filters)
    ref = import_filter_bank(args.reference) if args.reference else None
    if args.avg_patch:
        _require_files([args.avg_patch])
        rows = read_avg_patch_csv(args.avg_patch)[0].K
        inputs = [args.avg_patch]
    else:
        ds, inputs = _load_images(args)
        rows = extract_patches_many(ds.images, bank.k).rows
    res = pair_distances(rows, bank, args.n_pairs, args.seed, reference=ref)
    lines = ["input_dist,mapped_dist"]
    lines += [f"{a:.17g},{b:.17g}" for a, b in zip(res.input_dist, res.mapped_dist)]
    atomic_write(args.out, "\n".join(lines) + "\n")
    outputs = [args.out]
    if args.svg:
        xl = "reference distance" if ref is not None else "pixel distance"
        atomic_write(args.svg, svgplot.scatter_plot(res.input_dist, res.mapped_dist,
                                                    f"pair distances (r = {res.correlation:.3f})",
                                                    xl, "filter-bank distance"))
        outputs.append(args.svg)
    _write_manifest(_manifest_path(args.out), args, inputs + [args.filters, args.reference], outputs)
    print(f"{args.n_pairs} pairs, correlation {res.correlation:.6f}")


def cmd_simulate(args):
    _require_files([args.avg_patch])
    K, y_file = read_avg_patch_csv(args.avg_patch)
    y = _labels(args.labels, y_file, args.seed)
    cfg = GDConfig(args.eta, args.steps, args.width, args.sigma, args.seed, args.loss_scale)
    snaps = [int(s) for s in args.snapshots.split(",")] if args.snapshots else None
    tr = multi_filter_run(K.K, y, cfg, snapshots=snaps)
    for msg in tr.warnings:
        log.warning(msg)
    out = Path(args.out_dir)
    traj = out / "trajectory.csv"
    atomic_write(traj, tr.to_csv())
    outputs = [traj]
    for it, F in zip(tr.iterations, tr.banks):
        p = out / f"filters_iter{it}.csv"
        export_filter_bank(F, p)
        outputs.append(p)
    _write_manifest(out / "manifest.json", args, [args.avg_patch], outputs)
    print(f"simulated {args.steps} steps, {len(tr.iterations)} snapshots in {out}")


def cmd_predict(args):
    _require_files([args.avg_patch, args.pca])
    K, y_file = read_avg_patch_csv(args.avg_patch)
    basis = _load_basis(args.pca)
    Kt = to_pca(K.K, basis)
    y = _labels(args.labels, y_file, args.seed)
    eta, t, ls = args.eta, args.steps, args.loss_scale
    exact = an.closed_form_exact(Kt, y, eta, t, ls).w_tilde
    if args.method == "exact":
        w = exact
        cond = np.linalg.cond(Kt.T @ Kt)
    elif args.method == "paper":
        w = an.closed_form_paper(Kt, y, eta, t, ls).w_tilde
        cond = np.linalg.cond(Kt.T @ Kt)
    elif args.method == "ridge":
        st = second_moment_stats(Kt)
        eta_eff = eta / Kt.shape[0] if ls == "one_over_N" else eta
        ab = an.ab_diagonals(st.sigma_diag, st.mu_hat, eta_eff, t)
        sol = an.ridge_solution(Kt, y, an.lambda_matrix(ab, st.mu_hat, st.sigma_diag))
        w, cond = sol.w_tilde, sol.diagnostics["cond"]
    else:
        sol = an.woodbury_expectation(Kt, eta, t, ls)
        w, cond = sol.w_tilde, sol.diagnostics["cond"]
    gap = an.commutation_gap(Kt, y, eta, t, ls)
    payload = {
        "method": args.method,
        "eta": eta,
        "t": t,
        "sigma": args.sigma,
        "w_tilde": [float(x) for x in w],
        "profile": [float(x) for x in an.predicted_profile(w, args.sigma).e],
        "diagnostics": {"cond": _finite_or_none(cond), "commutation_gap": _finite_or_none(gap),
                        "max_abs_vs_exact": _finite_or_none(np.max(np.abs(w - exact)))
                        if args.method != "woodbury" else None},
    }
    atomic_write(args.out, json.dumps(payload, indent=1) + "\n")
    _write_manifest(_manifest_path(args.out), args, [args.avg_patch, args.pca], [args.out])
    print(f"wrote {args.method} prediction to {args.out}")


def cmd_sensitivity(args):
    _require_files([args.avg_patch, args.pca])
    K, y = read_avg_patch_csv(args.avg_patch)
    if np.any((y != 0) & (y != 1)):
        raise CliError("sensitivity needs 0/1 labels in the average-patch file")
    basis = _load_basis(args.pca) if args.pca else fit_pca(K.K, centered=True, population="avg_patch_rows")
    eps = _eps_grid(args.eps_max, args.eps_step)
    corr = []
    for e in eps:
        Ks = shift_class_mean(K.K, y, basis, args.direction, e)
        corr.append(an.predicted_label_sensitivity(to_pca(Ks, basis), y, args.eta, args.steps,
                                                   args.sigma, args.loss_scale))
    lines = ["epsilon,correlation"] + [f"{e:.17g},{c:.17g}" for e, c in zip(eps, corr)]
    atomic_write(args.out, "\n".join(lines) + "\n")
    outputs = [args.out]
    if args.svg:
        atomic_write(args.svg, svgplot.line_plot(eps, corr, f"label sensitivity, PCA direction {args.direction}",
                                                 "epsilon", "predicted correlation"))
        outputs.append(args.svg)
    _write_manifest(_manifest_path(args.out), args, [args.avg_patch, args.pca], outputs)
    for e, c in zip(eps, corr):
        print(f"eps={e:g}  corr={c:.6f}")


def cmd_verify(args):
    from .verify import run_all
    results = run_all(quick=args.quick)
    lines = [r.line() for r in results]
    ok = all(r.passed for r in results)
    lines.append(f"{'ALL PASS' if ok else 'FAILURES'}: {sum(r.passed for r in results)}/{len(results)} checks")
    print("\n".join(lines))
    if args.out:
        atomic_write(args.out, "\n".join(lines) + "\n")
    return 0 if ok else 3


# -- parser ---------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    common.add_argument("--threads", type=int, default=1, help="worker threads for patch statistics")
    common.add_argument("--no-scale", action="store_true", help="keep CIFAR bytes as 0-255 doubles")
    common.add_argument("-v", "--verbose", action="store_true")

    def gd_flags(p, loss_default="unnormalized"):
        p.add_argument("--eta", type=float, default=0.1)
        p.add_argument("--steps", type=int, default=100)
        p.add_argument("--sigma", type=float, default=0.0, help="initialization scale")
        p.add_argument("--loss-scale", choices=("unnormalized", "one_over_N"), default=loss_default)

    def image_flags(p):
        p.add_argument("--cifar", nargs="+", metavar="FILE", help="CIFAR-10 binary batch files")
        p.add_argument("--limit", type=int, help="use only the first N images")
        p.add_argument("--k", type=int, default=3, help="patch size")
        p.add_argument("--stride", type=int, default=1)

    parser = argparse.ArgumentParser(prog="patchlens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="equal-class-mean synthetic average patches")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--d", type=int, default=27)
    p.add_argument("--spread", type=float, default=0.1)
    p.add_argument("--base", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("avg-patch", parents=[common], help="average-patch matrix from CIFAR-10")
    image_flags(p)
    p.add_argument("--classes", help="two classes (names or ids) -> binary labels 0/1")
    p.add_argument("--pca", help="basis JSON, needed for --class-report")
    p.add_argument("--class-report", help="CSV of pairwise class average-patch profile correlations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_avg_patch)

    p = sub.add_parser("pca", parents=[common], help="fit a patch PCA basis")
    image_flags(p)
    p.add_argument("--avg-patch", help="fit on rows of an average-patch CSV instead of images")
    p.add_argument("--population", choices=("all_patches", "avg_patch_rows"), default="all_patches")
    p.add_argument("--uncentered", action="store_true")
    p.add_argument("--sample-count", type=int, help="fit on a seeded random subset of patches")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("profile", parents=[common], help="energy profile of a filter bank")
    p.add_argument("--filters", required=True)
    p.add_argument("--pca", required=True)
    p.add_argument("--variant", choices=("rms", "mean_square"), default="rms")
    p.add_argument("--subtract-init", help="filter bank to subtract before profiling")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("compare", parents=[common], help="correlate energy profiles")
    p.add_argument("--profiles", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("distances", parents=[common], help="patch-pair distances through a filter bank")
    image_flags(p)
    p.add_argument("--avg-patch", help="use rows of an average-patch CSV as the patches")
    p.add_argument("--filters", required=True)
    p.add_argument("--reference", help="second bank used on the input side")
    p.add_argument("--n-pairs", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("simulate", parents=[common], help="brute-force GD on an average-patch matrix")
    gd_flags(p)
    p.add_argument("--avg-patch", required=True)
    p.add_argument("--labels", choices=("true", "bernoulli", "expectation"), default="true")
    p.add_argument("--width", type=int, default=1)
    p.add_argument("--snapshots", help="comma-separated iterations to export")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", parents=[common], help="closed-form solution and predicted profile")
    gd_flags(p)
    p.add_argument("--avg-patch", required=True)
    p.add_argument("--pca", required=True)
    p.add_argument("--labels", choices=("true", "bernoulli", "expectation"), default="true")
    p.add_argument("--method", choices=("exact", "paper", "ridge", "woodbury"), default="exact")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sensitivity", parents=[common], help="predicted true-vs-random correlation over epsilon")
    gd_flags(p, loss_default="one_over_N")
    p.add_argument("--avg-patch", required=True)
    p.add_argument("--pca", help="basis JSON (default: fit on the rows, centered)")
    p.add_argument("--direction", type=int, default=0, help="PCA direction index to shift along")
    p.add_argument("--eps-max", type=float, default=1.0)
    p.add_argument("--eps-step", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=cmd_verify)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        rc = args.func(args)
    except (CliError, OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"patchlens {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return rc or 0


def main():
    sys.exit(run())
