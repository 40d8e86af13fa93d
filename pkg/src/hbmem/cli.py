"""Command-line entry point running every experiment.

Each subcommand writes one CSV whose first line is ``# config-hash: ...``
followed by a header row, prints one ``PASS``/``FAIL`` line per check and
exits with

* 0 when every check passes,
* 1 when a check fails (details go to ``failures.json`` next to the CSV),
* 2 for usage errors (unknown subcommand or flag),
* 3 for a malformed or unsupported configuration,
* 4 when the output cannot be written.

Loss configurations are JSON objects; see the README for the schema.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from .bseries import (
    gradient_step_series,
    limiting_bea_series,
    solve_a_g,
    subtree_convolution,
)
from .coefficients import CoefficientContext, f_recursive, f_treesum, marking_identity_check
from .errors import CapabilityError, DivergenceError, HBError, InvalidArgumentError, SolverError
from .losses import (
    DerivativeOracle,
    MiniBatchFamily,
    RidgeLoss,
    builtin_loss,
    minibatch_benchmark,
    permutation_average_f2,
    quadratic_loss,
    quartic_benchmark,
    sample_losses,
    sinusoid_loss,
)
from .polynomials import BETA, e_coefficient, eulerian, generating_series, narayana, v_inf, z_inf
from .trees import chain, enumerate_markings, enumerate_trees, marking_count, rake, symmetry_coefficient

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_BAD_CONFIG = 3
EXIT_UNWRITABLE = 4

# Rooted tree counts for 1..10 vertices.
TREE_COUNTS = (1, 1, 2, 4, 9, 20, 48, 115, 286, 719)
SUBCOMMANDS = ("trees", "poly", "bseries", "minibatch", "coeffs", "converge", "flow", "manifold")


class ConfigError(HBError):
    """A loss file or flag combination cannot be used."""


@dataclass
class ExperimentSpec:
    """Fully resolved description of one CLI run.

    Attributes:
        subcommand: Experiment name.
        flags: Parsed flag values (JSON-compatible).
        loss_config: Contents of the ``--loss`` file, if any.
        out: Output CSV path.
        seed: Seed for every random choice.
    """

    subcommand: str
    flags: dict = field(default_factory=dict)
    loss_config: dict | None = None
    out: str | None = None
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ExperimentSpec:
        return cls(**json.loads(text))

    def config_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "out"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Check:
    name: str
    passed: bool
    measured: object
    threshold: object = None


@dataclass
class Outcome:
    header: list[str]
    rows: list[list]
    checks: list[Check]
    extra_files: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)


def resolve_loss(config: dict | None, batch_size: int | None = None, seed: int = 0,
                 default: str = "quartic_benchmark"):
    """Build an oracle or mini-batch family and a start point from a loss config.

    Returns:
        ``(loss_or_family, theta0)`` where ``theta0`` may be ``None``.

    Raises:
        ConfigError: For unknown names or malformed parameters.
    """
    cfg = dict(config or {"name": default})
    name = cfg.get("name")
    theta0 = np.asarray(cfg["theta0"], dtype=float) if "theta0" in cfg else None
    bs = cfg.get("batch_size", batch_size)
    try:
        if name == "quartic_benchmark":
            loss, th = quartic_benchmark()
            return loss, theta0 if theta0 is not None else th
        if name == "minibatch_benchmark":
            fam, th = minibatch_benchmark(int(cfg.get("seed", seed)), int(cfg.get("n_samples", 8)),
                                          int(bs or 2), int(cfg.get("dimension", 2)))
            return fam, theta0 if theta0 is not None else th
        params = cfg.get("params", {})
        if name in ("least_squares", "quadratic_samples") and bs:
            samples = sample_losses({"name": name, **params})
            perm = cfg.get("permutation")
            fam = MiniBatchFamily(samples, int(bs), tuple(perm) if perm else None, int(cfg.get("seed", seed)))
            return fam, theta0
        if name == "quadratic_samples":
            return RidgeLoss.mean(sample_losses({"name": name, **params})), theta0
        return builtin_loss(name, params), theta0
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad loss configuration: {exc}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbmem", description="Heavy-ball memoryless approximation experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", default=None, help="output CSV path (default: <subcommand>.csv)")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("trees", "enumerate rooted trees with symmetry and marking counts")
    p.add_argument("--max-m", type=int, default=6)

    p = add("poly", "tabulate exact coefficient polynomials")
    p.add_argument("--family", default="narayana",
                   choices=["narayana", "eulerian", "v_inf", "z_inf", "g", "sigma", "gbar"])
    p.add_argument("--max-m", type=int, default=6)

    p = add("bseries", "limiting series coefficients and the fixed-point identity")
    p.add_argument("--max-m", type=int, default=4)

    p = add("minibatch", "exhaustive permutation average of f_2 against the closed form")
    p.add_argument("--loss", default=None)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--beta-val", type=float, default=0.5)
    p.add_argument("--n-samples", type=int, default=4)

    p = add("coeffs", "tree-sum against recursive memoryless coefficients")
    p.add_argument("--loss", default=None)
    p.add_argument("--beta-val", type=float, default=0.5)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--max-m", type=int, default=4)

    p = add("converge", "global error slopes of the memoryless iteration or modified equation")
    p.add_argument("--loss", default=None)
    p.add_argument("--orders", type=_ints, default=[2, 3, 4])
    p.add_argument("--h-grid", type=_floats, default=[0.02, 0.01, 0.005, 0.0025])
    p.add_argument("--beta-val", type=float, default=0.5)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--engine", choices=["memoryless", "ode"], default="memoryless")

    p = add("flow", "principal flow of a one-dimensional quadratic against heavy ball")
    p.add_argument("--beta-val", type=float, default=0.7)
    p.add_argument("--h", type=float, default=0.02)
    p.add_argument("--quadratic", type=float, default=1.0, help="curvature of L = c theta^2 / 2")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--theta0", type=float, default=1.0)

    p = add("manifold", "invariant-manifold fixed point and attractivity")
    p.add_argument("--loss", default=None)
    p.add_argument("--beta-val", type=float, default=0.5)
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--theta0", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=80)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--grid", type=int, default=2001)
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    """Resolve parsed arguments, reading the ``--loss`` file into an ``ExperimentSpec``.

    Raises:
        ConfigError: If the loss file is missing or not valid JSON.
    """
    flags = {k: v for k, v in vars(args).items() if k not in ("subcommand", "out", "seed", "loss")}
    loss_config = None
    if getattr(args, "loss", None):
        try:
            loss_config = json.loads(Path(args.loss).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read loss config {args.loss}: {exc}") from None
        if not isinstance(loss_config, dict) or "name" not in loss_config:
            raise ConfigError("loss config must be a JSON object with a 'name'")
    out = args.out or f"{args.subcommand}.csv"
    return ExperimentSpec(args.subcommand, flags, loss_config, out, args.seed)


def _max_threads() -> int:
    try:
        return max(1, int(os.environ.get("HB_MAX_THREADS", "1")))
    except ValueError:
        return 1


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def run_trees(spec: ExperimentSpec) -> Outcome:
    max_m = spec.flags["max_m"]
    if not 1 <= max_m <= len(TREE_COUNTS):
        raise ConfigError(f"--max-m must be in 1..{len(TREE_COUNTS)}")
    rows, checks = [], []
    for m in range(1, max_m + 1):
        trees = enumerate_trees(m)
        checks.append(Check(f"count m={m}", len(trees) == TREE_COUNTS[m - 1], len(trees), TREE_COUNTS[m - 1]))
        for i, t in enumerate(trees):
            rows.append([m, i, t.bracket(), symmetry_coefficient(t), marking_count(t)])
            if m <= 7 and len(enumerate_markings(t)) != marking_count(t):
                checks.append(Check(f"markings {t}", False, len(enumerate_markings(t)), marking_count(t)))
    return Outcome(["m", "index", "tree", "sigma", "markings"], rows, checks)


def run_poly(spec: ExperimentSpec) -> Outcome:
    family, max_m = spec.flags["family"], spec.flags["max_m"]
    rows, checks = [], []
    if family in ("g", "sigma", "gbar"):
        series = generating_series(family, max_m - 1)
        for k, c in enumerate(series):
            rows.append([k, str(c)])
            if family == "g":
                checks.append(Check(f"g_{k} = v_{k + 1}", c == v_inf(k + 1), str(c)))
            elif family == "gbar":
                checks.append(Check(f"gbar_{k} = z_{k + 1}", c == z_inf(k + 1), str(c)))
            else:
                expected = (1 if k == 0 else 0) + BETA * generating_series("g", k)[k]
                checks.append(Check(f"sigma_{k} = [k=0] + beta g_{k}", c == expected, str(c)))
        return Outcome(["k", "value"], rows, checks)
    fn = {"narayana": narayana, "eulerian": eulerian, "v_inf": v_inf, "z_inf": z_inf}[family]
    for m in range(1, max_m + 1):
        value = fn(m)
        rows.append([m, str(value)])
        if family in ("narayana", "eulerian") and m + 1 <= 8:
            tree = chain(m + 1) if family == "narayana" else rake(m + 1)
            exact = e_coefficient(tree, symbolic_l=False, l=1)
            checks.append(Check(f"{family} m={m} matches tree coefficient", exact == value, str(value)))
    return Outcome(["m", "value"], rows, checks)


def run_bseries(spec: ExperimentSpec) -> Outcome:
    max_m = spec.flags["max_m"]
    if not 1 <= max_m <= 6:
        raise ConfigError("--max-m must be in 1..6")
    a, g = solve_a_g(max_m)
    fbar = limiting_bea_series(max_m)
    lhs = subtree_convolution(a, gradient_step_series(max_m)) + subtree_convolution(a, g)
    rows, checks = [], []
    for m in range(1, max_m + 1):
        for t in enumerate_trees(m):
            rows.append([t.bracket(), symmetry_coefficient(t), str(a[t]), str(g[t]), str(fbar[t])])
            if m == 1:
                continue
            gap = lhs[t] - BETA * g[t]
            checks.append(Check(f"fixed point at {t}", gap.is_zero(), str(gap)))
    return Outcome(["tree", "sigma", "a", "g", "fbar"], rows, checks)


def run_minibatch(spec: ExperimentSpec) -> Outcome:
    f = spec.flags
    config = spec.loss_config or {"name": "minibatch_benchmark", "n_samples": f["n_samples"]}
    fam, theta0 = resolve_loss(config, f["batch_size"], spec.seed)
    if not isinstance(fam, MiniBatchFamily):
        raise ConfigError("minibatch needs a sample family (set batch_size)")
    theta = theta0 if theta0 is not None else np.ones(fam.dim)
    n = fam.n_batches - 1
    avg = permutation_average_f2(fam, theta, n, f["beta_val"])
    rows = [[i, _fmt(avg.mean[i]), _fmt(avg.prediction[i])] for i in range(fam.dim)]
    gap = float(np.max(np.abs(avg.mean - avg.prediction)))
    tol = 1e-12 * (1 + float(np.max(np.abs(avg.mean))))
    return Outcome(["component", "mean", "prediction"], rows,
                   [Check(f"permutation mean over {avg.n_permutations} orderings", gap <= tol, gap, tol)])


def run_coeffs(spec: ExperimentSpec) -> Outcome:
    f = spec.flags
    loss, theta0 = resolve_loss(spec.loss_config, None, spec.seed)
    if isinstance(loss, MiniBatchFamily):
        raise ConfigError("coeffs needs a full-batch loss")
    theta = theta0 if theta0 is not None else np.full(loss.dim, 0.3)
    if not 1 <= f["max_m"] <= 4:
        raise ConfigError("--max-m must be in 1..4")
    ctx = CoefficientContext(f["beta_val"], f["n"], loss, theta)
    rows, checks = [], []
    for m in range(1, f["max_m"] + 1):
        a = f_treesum(ctx, m)
        b = f_recursive(ctx, m)
        rel = float(np.linalg.norm(a - b) / (1 + np.linalg.norm(a)))
        rows.append([m, " ".join(_fmt(x) for x in a), " ".join(_fmt(x) for x in b), _fmt(rel)])
        checks.append(Check(f"f_{m} tree sum vs recursion", rel <= 1e-8, rel, 1e-8))
    worst = 0.0
    for m in range(1, f["max_m"] + 1):
        for t in enumerate_trees(m):
            for l in range(1, min(ctx.n - 1, 3) + 1):
                for a in sorted({1, (ctx.n - l + 1) // 2, ctx.n - l}):
                    worst = max(worst, marking_identity_check(ctx, t, l, a))
    checks.append(Check("marking identities", worst <= 1e-10, worst, 1e-10))
    return Outcome(["m", "tree_sum", "recursive", "relative_gap"], rows, checks)


def _converge_point(args) -> tuple[int, float, float]:
    loss, theta0, beta, horizon, p, h, engine = args
    kw = {"family": loss} if isinstance(loss, MiniBatchFamily) else {"loss": loss}
    cfg = dyn.RunConfig(beta=beta, h=h, horizon=horizon, theta0=theta0, order=p, **kw)
    other = dyn.memoryless_run(cfg) if engine == "memoryless" else dyn.modified_ode_run(cfg)
    return p, h, dyn.global_error(dyn.hb_run(cfg), other)


def run_converge(spec: ExperimentSpec) -> Outcome:
    f = spec.flags
    loss, theta0 = resolve_loss(spec.loss_config, f["batch_size"], spec.seed)
    if theta0 is None:
        dim = loss.dim
        theta0 = np.full(dim, 0.5)
    if len(f["h_grid"]) < 3:
        raise ConfigError("--h-grid needs at least three step sizes")
    jobs = [(loss, theta0, f["beta_val"], f["horizon"], p, h, f["engine"]) for p in f["orders"] for h in f["h_grid"]]
    with ThreadPoolExecutor(max_workers=_max_threads()) as pool:
        results = list(pool.map(_converge_point, jobs))
    rows, checks = [], []
    for p in f["orders"]:
        pts = [(h, e) for q, h, e in results if q == p]
        slope = dyn.order_estimate(pts)
        for h, e in pts:
            rows.append([f["engine"], p, _fmt(h), _fmt(e), _fmt(slope)])
        checks.append(Check(f"{f['engine']} order p={p} slope", slope >= p - 0.3, slope, p - 0.3))
    return Outcome(["engine", "order", "h", "error", "slope"], rows, checks)


def run_flow(spec: ExperimentSpec) -> Outcome:
    f = spec.flags
    beta, h, c = f["beta_val"], f["h"], f["quadratic"]
    if c <= 0:
        raise ConfigError("--quadratic must be positive")
    lp, _ = dyn.hb_eigenvalues(beta, h * c)
    real_manifold = abs(lp.imag) == 0
    v0 = dyn.manifold_velocity(beta, h, f["theta0"], c) if real_manifold else 0.0
    cfg = dyn.RunConfig(beta=beta, h=h, horizon=f["steps"] * h, theta0=[f["theta0"]],
                        v0=[float(np.real(v0))], loss=quadratic_loss([[c]]))
    flow = dyn.principal_flow_quadratic(cfg, [[c]])
    hb = dyn.hb_run(cfg)
    z = flow.complex_values[:, 0]
    rows = [[n, _fmt(n * h), _fmt(z[n].real), _fmt(z[n].imag), _fmt(hb.thetas[n, 0])] for n in range(len(hb))]
    checks = [Check("lambda_plus", True, complex(lp))]
    if real_manifold:
        gap = float(np.max(np.abs(z.real - hb.thetas[:, 0])))
        tol = 1e-9 * (1 + float(np.max(np.abs(hb.thetas))))
        checks.append(Check("flow samples match manifold-initialized heavy ball", gap <= tol, gap, tol))
    return Outcome(["n", "t", "re", "im", "hb_theta"], rows, checks)


def run_manifold(spec: ExperimentSpec) -> Outcome:
    f = spec.flags
    if spec.loss_config is None:
        loss: DerivativeOracle = sinusoid_loss(1)
    else:
        loss, _ = resolve_loss(spec.loss_config, None, spec.seed)
        if isinstance(loss, MiniBatchFamily):
            raise ConfigError("manifold needs a full-batch loss")
    try:
        res = dyn.manifold_fixed_point(loss, f["beta_val"], f["h"], n_grid=f["grid"], theta0=f["theta0"],
                                       attractivity_steps=f["steps"], margin=f["margin"])
    except CapabilityError as exc:
        raise ConfigError(str(exc)) from None
    rows = [[_fmt(x), _fmt(y)] for x, y in zip(res.grid, res.values)]
    rep = res.attractivity
    att_rows = [[n, _fmt(rep.thetas[n]), _fmt(rep.residuals[n]), _fmt(rep.base**n * rep.residuals[0])]
                for n in range(rep.residuals.size)]
    checks = [
        Check("picard converged", res.converged, res.iterations),
        Check("invariance residual", res.residual <= 1e-8, res.residual, 1e-8),
        Check(f"attractivity r_n <= ({rep.base:g})^n r_0",
              rep.holds, "holds" if rep.holds else f"first violation at n={rep.first_violation}"),
    ]
    return Outcome(["theta", "g"], rows, checks, {"attractivity": (["n", "theta", "r", "bound"], att_rows)})


RUNNERS = {
    "trees": run_trees, "poly": run_poly, "bseries": run_bseries, "minibatch": run_minibatch,
    "coeffs": run_coeffs, "converge": run_converge, "flow": run_flow, "manifold": run_manifold,
}


def _csv_text(config_hash: str, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# config-hash: {config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec) -> int:
    """Run one experiment, write its artifacts and return the exit code."""
    if spec.subcommand not in RUNNERS:
        print(f"unknown subcommand {spec.subcommand!r}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(spec.out or f"{spec.subcommand}.csv")
    out_dir = out.parent if str(out.parent) else Path(".")
    if not out_dir.is_dir() or not os.access(out_dir, os.W_OK):
        print(f"cannot write to {out_dir}", file=sys.stderr)
        return EXIT_UNWRITABLE
    try:
        outcome = RUNNERS[spec.subcommand](spec)
    except (ConfigError, InvalidArgumentError, CapabilityError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (DivergenceError, SolverError) as exc:
        outcome = Outcome([], [], [Check(type(exc).__name__, False, str(exc))])

    h = spec.config_hash()
    try:
        out.write_text(_csv_text(h, outcome.header, outcome.rows))
        for suffix, (header, rows) in outcome.extra_files.items():
            out.with_name(f"{out.stem}_{suffix}.csv").write_text(_csv_text(h, header, rows))
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE

    for c in outcome.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {spec.subcommand}: {c.name}: {_fmt(c.measured)}")
    failures = [c for c in outcome.checks if not c.passed]
    if failures:
        payload = {"subcommand": spec.subcommand, "config_hash": h,
                   "failures": [{"check": c.name, "measured": _json_safe(c.measured),
                                 "threshold": _json_safe(c.threshold)} for c in failures]}
        try:
            (out_dir / "failures.json").write_text(json.dumps(payload, indent=2) + "\n")
        except OSError:
            return EXIT_UNWRITABLE
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _json_safe(x):
    if isinstance(x, (complex, np.complexfloating)):
        return [float(np.real(x)), float(np.imag(x))]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = spec_from_args(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    return run_experiment(spec)


if __name__ == "__main__":
    sys.exit(main())
