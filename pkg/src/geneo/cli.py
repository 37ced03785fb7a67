"""Experiment runner.

Builds a configured elasticity problem, partition, preconditioner, and
coarse space; solves; and emits machine-readable reports: ``report.json``
(scalar results with the theoretical bound next to every observed value),
``convergence.csv`` (per-iteration history), ``eigenvalues.csv`` (per
subdomain pencil), and ``partition.txt`` (element owners).

Exit codes: 0 solved and all enabled bound checks pass, 2 iteration cap
hit, 3 a bound check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle as oracle_mod
from .coarse import GenEOConfig, build_Ms, build_coarse_space
from .elasticity import assemble, assemble_local_neumann, build_mesh, young_field
from .errors import ConfigError
from .krylov import KrylovConfig, pcg, ppcg
from .linalg import pivoted_cholesky
from .partitioning import (
    build_restrictions,
    load_partition,
    partition_elements,
    pou_matrices,
    save_partition,
)
from .schwarz import (
    PreconditionedOperator,
    build_local_solvers,
    coloring_constant,
    local_dirichlet_matrices,
)

MODES = ("one_level", "projected", "hybrid", "additive")
PARTITION_METHODS = ("strips", "strips_y", "rcb", "file")


@dataclass
class ExperimentConfig:
    nx: int = 84
    ny: int = 42
    coefficients: str = "no_layers"        # no_layers | with_layers
    nu: float = 0.4
    n_subdomains: int = 8
    partition_method: str = "rcb"
    partition_file: str | None = None
    variant: str = "as"                    # as | nn | is
    scaling: str = "k_scaling"             # multiplicity | k_scaling
    mode: str = "hybrid"
    tau_sharp: float | None = None
    tau_flat: float | None = None
    flat_variant: str = "standard"         # standard | prime
    max_coarse_vectors: int | None = None  # per subdomain and selection
    max_iterations: int = 100
    tol: float = 1e-9
    track_error: bool = True
    reorthogonalize: bool = False
    oracle: bool = False
    output_dir: str = "."

    def validate(self):
        def fail(path, msg):
            raise ConfigError(f"{path}: {msg}")

        if self.nx < 1 or self.ny < 1:
            fail("mesh.nx/ny", "must be at least 1")
        if self.coefficients not in ("no_layers", "with_layers"):
            fail("coefficients", f"unknown kind {self.coefficients!r}")
        if not 0.0 < self.nu < 0.5:
            fail("nu", "Poisson ratio must be in (0, 0.5)")
        if self.n_subdomains < 1:
            fail("n_subdomains", "must be at least 1")
        if self.partition_method not in PARTITION_METHODS:
            fail("partition_method", f"unknown method {self.partition_method!r}")
        if self.partition_method == "file" and not self.partition_file:
            fail("partition_file", "required when partition_method is 'file'")
        if self.variant not in ("as", "nn", "is"):
            fail("variant", f"unknown variant {self.variant!r}")
        if self.scaling not in ("multiplicity", "k_scaling"):
            fail("scaling", f"unknown scaling {self.scaling!r}")
        if self.mode not in MODES:
            fail("mode", f"unknown mode {self.mode!r}")
        if self.flat_variant not in ("standard", "prime"):
            fail("flat_variant", f"unknown flat variant {self.flat_variant!r}")
        if self.mode == "one_level":
            if self.tau_sharp is not None or self.tau_flat is not None:
                fail("tau_sharp/tau_flat", "one_level mode takes no thresholds")
        else:
            if self.variant == "as":
                if self.tau_flat is None:
                    fail("tau_flat", "variant 'as' needs tau_flat")
                if self.tau_sharp is not None:
                    fail("tau_sharp", "variant 'as' has stability constant 1; "
                         "tau_sharp does not apply")
            elif self.variant == "nn":
                if self.tau_sharp is None:
                    fail("tau_sharp", "variant 'nn' needs tau_sharp")
                if self.mode == "additive":
                    fail("mode", "additive combination is undefined for 'nn'")
                if self.tau_flat is not None:
                    fail("tau_flat", "variant 'nn' already bounds the low end; "
                         "tau_flat does not apply")
            else:
                if self.tau_sharp is None or self.tau_flat is None:
                    fail("tau_sharp/tau_flat", "variant 'is' needs both thresholds")
            if self.flat_variant == "prime" and self.variant == "nn":
                fail("flat_variant", "the prime selection needs invertible "
                     "local solvers")
        for name, tau in (("tau_sharp", self.tau_sharp), ("tau_flat", self.tau_flat)):
            if tau is not None and tau <= 0.0:
                fail(name, "thresholds must be positive")
        if self.max_coarse_vectors is not None and self.max_coarse_vectors < 0:
            fail("max_coarse_vectors", "must be nonnegative")
        if self.max_iterations < 1:
            fail("max_iterations", "must be at least 1")
        if self.tol <= 0.0:
            fail("tol", "must be positive")
        return self


def _theory_section(cfg, ncolor):
    theory = {"coloring_constant": ncolor, "n_prime": 1.0}
    if cfg.mode == "one_level":
        if cfg.variant == "as":
            theory["lambda_max_bound"] = float(ncolor)
        return theory
    lo, up = oracle_mod.projected_interval(cfg.variant, cfg.tau_sharp,
                                           cfg.tau_flat, ncolor)
    theory["projected_interval"] = [lo, up]
    theory["hybrid_interval"] = list(oracle_mod.hybrid_interval(lo, up))
    if cfg.variant in ("as", "is"):
        alo, aup = oracle_mod.additive_interval(cfg.variant, cfg.tau_sharp,
                                                cfg.tau_flat, ncolor)
        theory["additive_interval"] = [alo, aup]
    bounds = {"projected": [lo, up],
              "hybrid": list(oracle_mod.hybrid_interval(lo, up))}
    interval = bounds.get(cfg.mode) or theory.get("additive_interval")
    if interval and interval[1] is not None:
        theory["kappa_bound"] = interval[1] / interval[0]
    return theory


def run(cfg: ExperimentConfig) -> tuple[int, dict]:
    cfg.validate()
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    timings = {}
    t_all = time.perf_counter()

    t0 = time.perf_counter()
    mesh = build_mesh(cfg.nx, cfg.ny)
    if cfg.partition_method == "file":
        part = load_partition(cfg.partition_file, mesh.n_elements)
    else:
        part = partition_elements(mesh, cfg.n_subdomains, cfg.partition_method)
    field = young_field(cfg.coefficients, part, mesh, nu=cfg.nu)
    problem = assemble(mesh, field, compute_reference=cfg.track_error)
    neumann = assemble_local_neumann(mesh, field, part)
    restrictions, interface = build_restrictions(mesh, part, problem.dof_map)
    ncolor = coloring_constant(problem.A, restrictions)
    timings["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    weights = pou_matrices(restrictions, cfg.scaling, A=problem.A,
                           neumann=neumann)
    Ms_list = [build_Ms(d, As) for d, As in zip(weights, neumann)]
    local_set = build_local_solvers(problem.A, restrictions, cfg.variant,
                                    weighted_neumann=Ms_list)
    timings["local_solvers"] = time.perf_counter() - t0

    records = []
    coarse = None
    if cfg.mode != "one_level":
        t0 = time.perf_counter()
        dirichlet_locals = local_dirichlet_matrices(problem.A, restrictions)
        geneo_cfg = GenEOConfig(tau_sharp=cfg.tau_sharp, tau_flat=cfg.tau_flat,
                                scaling=cfg.scaling,
                                flat_variant=cfg.flat_variant,
                                max_vectors_per_subdomain=cfg.max_coarse_vectors)
        Ms_factors = (list(local_set.factors) if cfg.variant == "nn"
                      else [pivoted_cholesky(M) for M in Ms_list])
        coarse, records = build_coarse_space(
            geneo_cfg, problem.A, restrictions, local_set, dirichlet_locals,
            Ms_list, Ms_factors)
        timings["coarse_space"] = time.perf_counter() - t0

    op = PreconditionedOperator(problem.A, local_set, coarse, mode=cfg.mode)
    kcfg = KrylovConfig(max_iterations=cfg.max_iterations, rel_error_tol=cfg.tol,
                        track_error=cfg.track_error,
                        reorthogonalize=cfg.reorthogonalize)
    t0 = time.perf_counter()
    if cfg.mode == "projected":
        report = ppcg(problem.A, problem.b, op, kcfg,
                      x_ref=problem.reference_solution)
    else:
        report = pcg(problem.A, problem.b, op.apply, kcfg,
                     x_ref=problem.reference_solution)
    timings["solve"] = time.perf_counter() - t0

    theory = _theory_section(cfg, ncolor)
    counts = coarse.subdomain_counts if coarse is not None else []
    out = {
        "config": dataclasses.asdict(cfg),
        "problem": {
            "n": problem.n,
            "n_elements": mesh.n_elements,
            "n_vertices": mesh.n_vertices,
        },
        "partition": {
            "n_subdomains": part.n_subdomains,
            "method": cfg.partition_method,
            "n_gamma": interface.n_gamma,
            "coloring_constant": ncolor,
        },
        "coarse_space": {
            "n0": coarse.n0 if coarse is not None else 0,
            "min_contribution": int(min(counts)) if counts else 0,
            "max_contribution": int(max(counts)) if counts else 0,
            "subdomain_contributions": [int(c) for c in counts],
        },
        "solve": {
            "iterations": report.iterations,
            "converged": report.converged,
            "criterion": report.criterion,
            "final_error": _json_float(report.final_error),
            "ritz_min": _json_float(report.ritz_min),
            "ritz_max": _json_float(report.ritz_max),
            "kappa_estimate": _json_float(report.kappa_estimate),
            "projection_drift": _json_float(report.projection_drift),
        },
        "theory": theory,
    }

    bound_failures = 0
    if cfg.oracle:
        t0 = time.perf_counter()
        checks = _oracle_checks(cfg, problem, restrictions, weights, neumann,
                                Ms_list, local_set, coarse, op, ncolor)
        out["oracle"] = [dataclasses.asdict(c) for c in checks]
        bound_failures = sum(not c.satisfied for c in checks)
        timings["oracle"] = time.perf_counter() - t0

    timings["total"] = time.perf_counter() - t_all
    out["timings"] = timings

    _write_report(outdir / "report.json", out)
    _write_convergence(outdir / "convergence.csv", report)
    _write_eigenvalues(outdir / "eigenvalues.csv", records)
    save_partition(outdir / "partition.txt", part)

    if bound_failures:
        return 3, out
    if not report.converged:
        return 2, out
    return 0, out


def _oracle_checks(cfg, problem, restrictions, weights, neumann, Ms_list,
                   local_set, coarse, op, ncolor):
    checks = oracle_mod.audit_assumptions(
        problem.A, restrictions, weights=weights, neumann=neumann,
        local_set=local_set, coarse=coarse, Ms_list=Ms_list)
    checks.append(oracle_mod.verify_coloring(problem.A, restrictions))
    if (cfg.mode != "one_level" and cfg.tau_flat is not None
            and cfg.flat_variant == "standard"):
        Ms_factors = [pivoted_cholesky(M) for M in Ms_list]
        checks.extend(oracle_mod.check_stable_splitting(
            op, weights, Ms_list, Ms_factors, cfg.tau_flat))
    if cfg.tau_sharp is not None and cfg.mode != "one_level":
        checks.append(oracle_mod.check_sharp_estimate(
            op, omega=1.0 / cfg.tau_sharp))
    if problem.n > oracle_mod.DENSE_CAP or cfg.mode == "one_level":
        return checks
    lo, up = oracle_mod.projected_interval(cfg.variant, cfg.tau_sharp,
                                           cfg.tau_flat, ncolor)
    spectrum = oracle_mod.projected_spectrum(op)
    checks.extend(oracle_mod.check_projected_bounds(
        spectrum, coarse.n0, lo, up, label="projected"))
    hyb = oracle_mod.preconditioned_spectrum(op, "hybrid")
    checks.extend(oracle_mod.check_interval(
        hyb, *oracle_mod.hybrid_interval(lo, up), label="hybrid"))
    if cfg.mode == "additive":
        add = oracle_mod.preconditioned_spectrum(op, "additive")
        alo, aup = oracle_mod.additive_interval(cfg.variant, cfg.tau_sharp,
                                                cfg.tau_flat, ncolor)
        checks.extend(oracle_mod.check_interval(add, alo, aup, label="additive"))
    return checks


def _json_float(x):
    x = float(x)
    return None if not np.isfinite(x) else x


def _write_report(path, out):
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_convergence(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "a_norm_error", "residual_norm"])
        errs = report.a_norm_errors
        for i, res in enumerate(report.residual_norms):
            err = errs[i] if i < len(errs) else ""
            w.writerow([i, err, res])


def _write_eigenvalues(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subdomain", "pencil", "index", "eigenvalue", "selected"])
        for r in records:
            w.writerow([r.subdomain, r.pencil, r.index,
                        repr(r.eigenvalue), int(r.selected)])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="geneo",
        description="Two-level Schwarz/GenEO experiment runner")
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--layers", dest="coefficients", action="store_const",
                   const="with_layers", help="add the hard coefficient layers")
    p.add_argument("--no-layers", dest="coefficients", action="store_const",
                   const="no_layers")
    p.add_argument("--nu", type=float)
    p.add_argument("--n", "--n-subdomains", dest="n_subdomains", type=int)
    p.add_argument("--partition", dest="partition_method",
                   choices=PARTITION_METHODS)
    p.add_argument("--partition-file", dest="partition_file")
    p.add_argument("--variant", choices=("as", "nn", "is"))
    p.add_argument("--scaling", choices=("multiplicity", "k_scaling", "mu", "k"))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--tau-sharp", dest="tau_sharp", type=float)
    p.add_argument("--tau-flat", dest="tau_flat", type=float)
    p.add_argument("--flat-variant", dest="flat_variant",
                   choices=("standard", "prime"))
    p.add_argument("--max-coarse-vectors", dest="max_coarse_vectors", type=int,
                   help="cap on eigenvectors per subdomain and selection")
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--no-track-error", dest="track_error", action="store_false",
                   default=None,
                   help="stop on the preconditioned residual instead of the "
                        "A-norm error against a direct solve")
    p.add_argument("--reorthogonalize", action="store_true", default=None)
    p.add_argument("--oracle", action="store_true", default=None,
                   help="enable dense bound verification (desk scale only)")
    p.add_argument("--output-dir", dest="output_dir")
    return p


_SCALING_ALIASES = {"mu": "multiplicity", "k": "k_scaling"}


def config_from_args(args) -> ExperimentConfig:
    values = {}
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
        values.update(loaded)
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if "scaling" in values:
        values["scaling"] = _SCALING_ALIASES.get(values["scaling"],
                                                 values["scaling"])
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        code, out = run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    solve = out["solve"]
    print(f"n={out['problem']['n']} n0={out['coarse_space']['n0']} "
          f"N={out['partition']['n_subdomains']} "
          f"coloring={out['partition']['coloring_constant']} "
          f"iterations={solve['iterations']} converged={solve['converged']} "
          f"kappa={solve['kappa_estimate']}")
    if code == 3:
        print("bound check FAILED (see report.json)", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
