"""Command-line front end: ``mdplab <command> --config FILE [options]``.

Exit codes: 0 success, 2 config error, 3 precondition failure,
4 invariant violation.
"""

from __future__ import annotations

import argparse
import copy
import math
import os
import sys
from pathlib import Path

import numpy as np

from mdplab import config as cfgmod
from mdplab import dependence, inequalities, io, montecarlo, rate
from mdplab._parallel import derived_rng, set_threads
from mdplab.processes import EmpiricalIndicator, FiniteStateChain, FnOfLinearProcess, IIDBounded, StationarityError, sample_paths

EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_INVARIANT = 4


class InvariantViolation(RuntimeError):
    pass


class Run:
    """Output bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: dict, out: Path, fmt: str):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.fmt = fmt
        self.hash = io.config_hash(cfg)
        self.files: list[Path] = []
        self.extra: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    @property
    def seed(self) -> int:
        return int(self.cfg.get("seed", 0))

    def table(self, stem: str, header, rows) -> None:
        self.files.append(io.write_table(self.out / f"{self.command}_{stem}", list(header), rows, self.hash, self.fmt))

    def json(self, stem: str, obj: dict) -> None:
        obj = {"config_sha256": self.hash, **obj}
        self.files.append(io.write_json(self.out / f"{self.command}_{stem}.json", obj))

    def finish(self) -> None:
        io.write_sidecar(self.out / f"{self.command}.meta.json", self.hash, self.command, self.seed, self.files, self.extra)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg["model"])
    n = cfg.get("n", [256])[0]
    reps = cfg.get("reps", 4)
    x = sample_paths(model, n, reps, run.seed, "simulate")
    norms = np.sqrt(np.sum(x * x, axis=2))
    if norms.max() > model.bound_B * (1 + 1e-12):
        raise InvariantViolation(f"sampled norm {norms.max()} exceeds bound_B = {model.bound_B}")
    rows = ([r, i + 1, *x[r, i]] for r in range(reps) for i in range(n))
    run.table("paths", ["rep", "i", *[f"x{k}" for k in range(model.dim)]], rows)
    run.extra["bound_B"] = model.bound_B


def cmd_coeffs(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg["model"])
    prof = dependence.build_profile(model, cfg.get("J", 32), cfg.get("outer_M", 256), cfg.get("inner_N", 4096), run.seed)
    try:
        prof.check_invariants()
    except AssertionError as exc:
        raise InvariantViolation(str(exc)) from exc
    run.table("profile", ["j", "fwd", "fwd_mode", "fwd_se", "bwd", "bwd_mode", "bwd_se"], prof.rows())
    if isinstance(model, FiniteStateChain):
        tab = dependence.mixing_table(model, range(1, min(prof.J, 16) + 1))
        cols = ["n", "phi1", "phi2", "phi2_truncated", "phi_tilde2", "phi_tilde2_truncated"]
        run.table("mixing", cols, ([r.get(c, math.nan) for c in cols] for r in tab))


def _delta(model, n):
    try:
        return montecarlo.certified_delta(model, n)
    except montecarlo.PreconditionError:
        raise


def cmd_bound(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg["model"])
    xs = cfgmod.grid1d(cfg.get("x_grid", {"start": 1.0, "stop": 100.0, "num": 100}))
    phi_s = None
    if isinstance(model, FiniteStateChain):
        s, tail = dependence.phi1_series(model)
        phi_s = s + tail
    rows = []
    for n in cfg.get("n", [64]):
        d = _delta(model, n)
        rep = inequalities.bound_report(n, xs, model.bound_B, d)
        phib = (
            np.atleast_1d(inequalities.phi_mixing_tail_bound(n, xs, model.bound_B, phi_s))
            if phi_s is not None
            else np.full(xs.size, math.nan)
        )
        for i, (x, b, e, lo, hi, v) in enumerate(rep.rows()):
            rows.append([n, d, x, b, phib[i], e, lo, hi, v])
    run.table("bound", ["n", "delta", "x", "bound", "phi_bound", "empirical", "ci_low", "ci_high", "violated"], rows)
    D, Dp, C = inequalities.constants()
    run.extra.update(constants={"D": D, "D_prime": Dp, "C": C}, bound_B=model.bound_B)


def cmd_verify(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg["model"])
    reps = cfg.get("reps", 100000)
    ci = cfg.get("ci", {})
    rows, violated = [], False
    for n in cfg.get("n", [64]):
        xs = cfgmod.grid1d(cfg["x_grid"]) if "x_grid" in cfg else np.linspace(1.0, n * model.bound_B, 32)
        te = montecarlo.verify_hoeffding(model, n, xs, reps, run.seed, ci=ci.get("method", "normal"), z=ci.get("z", 3.0))
        violated |= te.any_violation
        for x, b, p, lo, hi, v in te.rows():
            rows.append([n, x, b, p, lo, hi, v, te.exact, te.reps])
    run.table("hoeffding", ["n", "x", "bound", "p_hat", "ci_low", "ci_high", "violated", "exact", "reps"], rows)
    run.table("moments", ["n", "p", "bound", "empirical", "method"], _moment_rows(model, cfg, run.seed))
    trials = cfg.get("subadditive_trials", 1000)
    sub = _subadditive_rows(trials, run.seed)
    run.table("subadditive", ["trial", "C1", "C2", "p", "n", "lhs", "rhs", "ok"], sub)
    if violated:
        raise InvariantViolation("an empirical tail exceeds the bound beyond its confidence interval")
    if not all(r[-1] for r in sub):
        raise InvariantViolation("dyadic subadditivity inequality failed")


def _moment_rows(model, cfg, seed):
    rows = []
    ps = cfg.get("moment_p", [1.0])
    for n in cfg.get("n", [64]):
        if isinstance(model, IIDBounded) and model.is_rademacher and n <= 20:
            emp = montecarlo.rademacher_max_sq_moment(n) * model.innovation.half_width**2
            rows.append([n, 1.0, inequalities.mart_moment_bound(n, 1.0, model.bound_B), emp, "exact-enumeration"])
            continue
        if not model.adapted:
            continue
        prof = dependence.build_profile(model, max(1, 1 << (inequalities.dyadic_q(n) - 1)))
        if dependence.MC in prof.fwd_mode:
            continue
        dq, _ = dependence.dyadic_sums(prof, inequalities.dyadic_q(n))
        mx = montecarlo.max_partial_sum_norms(model, n, min(cfg.get("reps", 20000), 20000), seed, "moments")
        for p in ps:
            b = inequalities.adapted_max_moment_bound(n, p, 2.0 * model.bound_B, dq) ** (2 * p)
            rows.append([n, p, b, float(np.mean(mx ** (2 * p))), "monte-carlo"])
    return rows


def _subadditive_rows(trials, seed):
    rows = []
    for t in range(trials):
        rng = derived_rng(seed, "subadditive", t)
        c1, c2 = rng.uniform(1.0, 3.0, size=2)
        p = float(rng.uniform(1.0, 3.0))
        n = int(rng.integers(2, 200))
        u = inequalities.random_subadditive(rng, n + 1, c1, c2)
        lhs, rhs, ok = inequalities.subadditive_dyadic_check(u, c1, c2, p, n)
        rows.append([t, c1, c2, p, n, lhs, rhs, ok])
    return rows


def _exact_Q(model):
    if isinstance(model, FiniteStateChain):
        return model.exact_Q()
    if isinstance(model, FnOfLinearProcess) and model.is_linear:
        return model.exact_Q()
    if isinstance(model, IIDBounded):
        return np.eye(model.dim) * model.innovation.variance
    if isinstance(model, EmpiricalIndicator) and isinstance(model.base, FiniteStateChain):
        return model.as_finite_chain().exact_Q()
    return None


def cmd_rate(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg["model"])
    est = rate.estimate_Q(
        model, cfg.get("lag_cutoff"), cfg.get("reps", 64), cfg.get("path_len", 8192), run.seed, cfg.get("max_rel_se", 0.05)
    )
    sr = rate.spectral(est.operator)
    prov = {"model": est.model, "seed": run.seed, "reps": est.reps, "path_len": est.path_len,
            "lag_cutoff": est.lag_cutoff, "clamped": est.clamped, "rel_se": est.rel_se}
    qx = _exact_Q(model)
    rec = rate.operator_record(est.operator, sr, prov)
    rec["se"] = est.se.tolist()
    if qx is not None:
        rec["exact_matrix"] = np.asarray(qx).tolist()
    run.json("Q", rec)
    run.table("spectrum", ["i", "eigenvalue"], ([i + 1, v] for i, v in enumerate(sr.eigenvalues)))
    pts = cfg.get("x_points", [])
    rows = []
    for i, x in enumerate(pts):
        if len(x) != model.dim:
            raise cfgmod.ConfigError(f"x_points[{i}] has dimension {len(x)}, model has {model.dim}")
        rows.append([i, *x, rate.lambda_star(sr, np.asarray(x, dtype=float))])
    run.table("lambda_star", ["point", *[f"x{k}" for k in range(model.dim)], "lambda_star"], rows)
    regs = cfgmod.regions(cfg)
    for r in regs:
        if r.kind == "halfspace" and len(r.u) != model.dim:
            raise cfgmod.ConfigError("halfspace normal has the wrong dimension")
    run.table("regions", ["kind", "r", "u", "inf"],
              ([r.kind, r.r, " ".join(io.fmt(float(v)) for v in r.u), r.rate_inf(est.matrix)] for r in regs))
    if regs and "a_rule" in cfg and "n" in cfg:
        rows = []
        for k, r in enumerate(regs):
            for row in montecarlo.mdp_log_tail(model, cfg["n"], cfgmod.a_rule(cfg), r, est.matrix,
                                               cfg.get("reps", 64) * 1000, run.seed):
                rows.append([k, *row.__dict__.values()])
        run.table("mdp", ["region", *montecarlo.LogTailRow.__dataclass_fields__], rows)
        run.extra["mdp_note"] = "moderate-deviation log tails are diagnostics; finite-n agreement with the limit is not asserted"


def cmd_cvm(run: Run) -> None:
    cfg = run.cfg
    desc = cfg["model"]
    gspec = cfg.get("cvm_grid", desc.get("cvm_grid", {"G": 64}))
    base = cfgmod.build_model(desc["base"] if desc["kind"] == "EmpiricalIndicator" else desc)
    grid, w = cfgmod.cvm_grid(gspec)
    mode = cfg.get("cvm_mode", "exact" if isinstance(base, (FiniteStateChain, IIDBounded)) else "mc")
    k = rate.cvm_kernel(base, grid, w, cfg.get("lag_cutoff"), mode, run.seed, cfg.get("reps", 64), cfg.get("path_len", 8192))
    G = k.G
    run.table("kernel", ["s", "t", "C", "K"], ([grid[a], grid[b], k.C[a, b], k.matrix[a, b]] for a in range(G) for b in range(G)))
    ev = k.eigenvalues()
    run.table("spectrum", ["i", "eigenvalue"], ([i + 1, v] for i, v in enumerate(ev)))
    ys = cfgmod.grid1d(cfg.get("y_grid", {"start": 0.0, "stop": 2.0, "num": 21}))
    run.table("cvm_rate", ["y", "rate"], ([y, rate.cvm_rate(k, y)] for y in ys))
    run.extra.update(nu=k.nu, mode=k.mode, lag_cutoff=k.lag_cutoff, tail_bound=k.tail_bound,
                     clamped=k.clamped, warnings=k.warnings)
    if gspec.get("lo", 0.0) == 0.0 and gspec.get("hi", 1.0) == 1.0:
        s = rate.kantorovich_maximizer(k, seed=run.seed)
        run.table("kantorovich", ["y", "J"], ([y, rate.kantorovich_rate(s.sigma_sq, y)] for y in ys))
        run.extra.update(sigma_sq=s.sigma_sq, sigma_method=s.method)


def cmd_lil(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg["model"])
    ref = cfg.get("reference")
    if ref is None:
        qx = _exact_Q(model)
        if qx is not None:
            ref = math.sqrt(max(float(np.linalg.eigvalsh(qx)[-1]), 0.0))
    tab = montecarlo.lil_statistic(model, cfg.get("n", [1000, 10000]), cfg.get("reps", 1000), run.seed, ref)
    rows = list(tab.rows())
    cols = list(rows[0].keys())
    run.table("lil", cols, ([r[c] for c in cols] for r in rows))


def cmd_blocks(run: Run) -> None:
    cfg = run.cfg
    model = cfgmod.build_model(cfg["model"])
    ar = cfgmod.a_rule(cfg)
    summary, resid = [], []
    for n in cfg.get("n", [1024, 4096, 16384]):
        try:
            rep = montecarlo.block_martingale_residual(
                model, n, cfg.get("alpha", 0.2), cfg.get("reps", 200), run.seed, ar, cfg.get("trace_Q"),
                cfg.get("inner_N", 2048), cfg.get("budget", 2_000_000_000),
            )
        except montecarlo.BudgetExceededError as exc:
            for r, v in enumerate(exc.partial):
                resid.append([n, r, v, math.nan])
            run.table("residuals", ["n", "rep", "residual", "scaled"], resid)
            raise
        summary.append([n, rep.m, rep.k, rep.a_n, rep.mode, rep.median, float(np.median(rep.scaled_mdp)),
                        float(np.quantile(rep.scaled, 0.9)), rep.trace_Q, float(rep.bracket.max()),
                        float(rep.bracket.min()), rep.bracket_rel_error])
        resid.extend([n, r, v, s] for r, (v, s) in enumerate(zip(rep.residual, rep.scaled)))
    run.table("summary", ["n", "m", "k", "a_n", "mode", "median_scaled", "median_scaled_mdp", "q90_scaled",
                          "trace_Q", "bracket_max", "bracket_min", "bracket_rel_error"], summary)
    run.table("residuals", ["n", "rep", "residual", "scaled"], resid)


COMMANDS = {
    "simulate": cmd_simulate,
    "coeffs": cmd_coeffs,
    "bound": cmd_bound,
    "verify": cmd_verify,
    "rate": cmd_rate,
    "cvm": cmd_cvm,
    "lil": cmd_lil,
    "blocks": cmd_blocks,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdplab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--reps", type=int, help="override the replicate count")
    p.add_argument("--threads", type=int, default=1, help="worker threads (does not change outputs)")
    p.add_argument("--out", help="output directory (default: $MDPLAB_OUT or ./mdplab_out)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = copy.deepcopy(cfgmod.load(args.config))
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 1 << 64:
                raise cfgmod.ConfigError("seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        if args.reps is not None:
            if args.reps < 1:
                raise cfgmod.ConfigError("reps must be >= 1")
            cfg["reps"] = args.reps
        if args.threads < 1:
            raise cfgmod.ConfigError("threads must be >= 1")
        set_threads(args.threads)
        out = Path(args.out or os.environ.get("MDPLAB_OUT") or "mdplab_out")
        run = Run(args.command, cfg, out, args.format)
        COMMANDS[args.command](run)
        run.finish()
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (montecarlo.PreconditionError, montecarlo.BudgetExceededError, StationarityError,
            rate.InsufficientSamplesError, ValueError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    finally:
        set_threads(1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
