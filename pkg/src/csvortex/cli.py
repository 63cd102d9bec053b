"""Command-line driver: solve, sweep, threshold, verify.

Configuration is a YAML document::

    lattice: {e1: [1.0, 0.0], e2: [0.0, 1.0]}
    grid: {n1: 128, n2: 128}
    coupling: {preset: A2}            # or {a: 2, b: 1, c: 1, d: 2}
    vortices:
      Z1: [[0.25, 0.25, 1]]
      Z2: [[0.75, 0.60, 1]]
    lambda: 200.0                      # or kappa: ..., with v
    v: 1.0
    solver: {max_iter: 2000, init: scalar}
    sweep: {lambdas: [100.0, 400.0]}
    second_solution: false
    write_csv: false
    output: out
    seed: 0

Exit codes: 0 success, 1 solver or verification failure, 2 non-existence
certificate, 64 configuration error, 74 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .algebra import (
    CouplingMatrix,
    PhysicalParams,
    ThresholdUndefined,
    VortexNumbers,
    from_preset,
    kappa_from_lambda,
    lambda_from_kappa,
    nonexistence_threshold,
    predicted_energy,
    predicted_flux,
    vacuum_moduli,
)
from .constraints import NotAdmissible
from .diagnostics import SolutionReport, asymptotic_gaps, verify
from .solver import (
    SolutionState,
    SolveOptions,
    SolverError,
    continuation,
    find_second_solution,
    nonexistence_gate,
    solve,
)
from .torus import ExponentOverflow, TorusGrid, TorusLattice, VortexSet, build_background, read_field, write_field

logger = logging.getLogger("csvortex")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NONEXISTENT = 2
EXIT_CONFIG = 64
EXIT_IO = 74


class ConfigError(ValueError):
    pass


_SOLVER_KEYS = {f.name for f in fields(SolveOptions)}


@dataclass
class RunConfig:
    e1: tuple[float, float] = (1.0, 0.0)
    e2: tuple[float, float] = (0.0, 1.0)
    n1: int = 64
    n2: int = 64
    coupling: dict = field(default_factory=lambda: {"preset": "A2"})
    Z1: list = field(default_factory=list)
    Z2: list = field(default_factory=list)
    lam: float | None = None
    kappa: float | None = None
    v: float = 1.0
    solver: dict = field(default_factory=dict)
    lambdas: list = field(default_factory=list)
    second_solution: bool = False
    write_csv: bool = False
    output: str = "out"
    seed: int = 0

    # -- derived objects --------------------------------------------------

    def coupling_matrix(self) -> CouplingMatrix:
        c = self.coupling
        if "preset" in c:
            return from_preset(c["preset"])
        return CouplingMatrix(*(float(c[k]) for k in "abcd"))

    def grid(self) -> TorusGrid:
        return TorusGrid(TorusLattice(self.e1, self.e2), self.n1, self.n2)

    def vortex_sets(self) -> tuple[VortexSet, VortexSet]:
        return VortexSet.of(*self.Z1), VortexSet.of(*self.Z2)

    def numbers(self) -> VortexNumbers:
        z1, z2 = self.vortex_sets()
        return VortexNumbers(z1.N, z2.N)

    def params(self, lam: float | None = None) -> PhysicalParams:
        if lam is not None:
            return PhysicalParams.from_lambda(lam, self.v)
        if self.lam is not None:
            return PhysicalParams.from_lambda(self.lam, self.v)
        return PhysicalParams(self.kappa, self.v)

    def lambda_value(self) -> float:
        return self.lam if self.lam is not None else lambda_from_kappa(self.v, self.kappa)

    def options(self) -> SolveOptions:
        return SolveOptions(**self.solver)

    # -- (de)serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "lattice": {"e1": list(self.e1), "e2": list(self.e2)},
            "grid": {"n1": self.n1, "n2": self.n2},
            "coupling": dict(self.coupling),
            "vortices": {"Z1": [list(p) for p in self.Z1], "Z2": [list(p) for p in self.Z2]},
            "v": self.v,
            "solver": dict(self.solver),
            "second_solution": self.second_solution,
            "write_csv": self.write_csv,
            "output": self.output,
            "seed": self.seed,
        }
        if self.lam is not None:
            d["lambda"] = self.lam
        else:
            d["kappa"] = self.kappa
        if self.lambdas:
            d["sweep"] = {"lambdas": list(self.lambdas)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        known = {"lattice", "grid", "coupling", "vortices", "lambda", "kappa", "v", "solver",
                 "sweep", "second_solution", "write_csv", "output", "seed"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        try:
            lat = d.get("lattice", {})
            grid = d.get("grid", {})
            vort = d.get("vortices", {})
            sweep = d.get("sweep", {}) or {}
            cfg = cls(
                e1=tuple(float(x) for x in lat.get("e1", (1.0, 0.0))),
                e2=tuple(float(x) for x in lat.get("e2", (0.0, 1.0))),
                n1=int(grid.get("n1", 64)),
                n2=int(grid.get("n2", 64)),
                coupling=dict(d.get("coupling", {"preset": "A2"})),
                Z1=[[float(p[0]), float(p[1]), int(p[2]) if len(p) > 2 else 1] for p in vort.get("Z1", []) or []],
                Z2=[[float(p[0]), float(p[1]), int(p[2]) if len(p) > 2 else 1] for p in vort.get("Z2", []) or []],
                lam=None if d.get("lambda") is None else float(d["lambda"]),
                kappa=None if d.get("kappa") is None else float(d["kappa"]),
                v=float(d.get("v", 1.0)),
                solver=dict(d.get("solver", {}) or {}),
                lambdas=[float(x) for x in sweep.get("lambdas", [])],
                second_solution=bool(d.get("second_solution", False)),
                write_csv=bool(d.get("write_csv", False)),
                output=str(d.get("output", "out")),
                seed=int(d.get("seed", 0)),
            )
        except (TypeError, KeyError, IndexError, AttributeError, ValueError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if (self.lam is None) == (self.kappa is None):
            raise ConfigError("exactly one of 'lambda' or 'kappa' must be given")
        if len(self.e1) != 2 or len(self.e2) != 2:
            raise ConfigError("lattice vectors need two components")
        bad = set(self.solver) - _SOLVER_KEYS
        if bad:
            raise ConfigError(f"unknown solver options: {sorted(bad)}")
        c = self.coupling
        if "preset" not in c and not all(k in c for k in "abcd"):
            raise ConfigError("coupling needs a preset or all of a, b, c, d")
        try:
            self.coupling_matrix()
            self.grid()
            self.vortex_sets()
            self.params()
            self.options()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.lam is not None and not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if any(not x > 0 for x in self.lambdas):
            raise ConfigError("sweep lambdas must be positive")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        return cls.from_dict(data)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


# -- outputs ---------------------------------------------------------------------


def summary_document(report: SolutionReport) -> dict:
    return {
        "lambda": report.lam,
        "kappa": report.kappa,
        "lambda_star": report.lambda_star,
        "fluxes": list(report.fluxes),
        "energy": report.energy,
        "max_eu": list(report.max_eu),
        "residuals": report.residual_norm,
        "constraint_residuals": list(report.constraint_residuals),
        "branch_tag": report.branch_tag,
        "converged": report.converged,
    }


def _write_state(out: Path, grid: TorusGrid, state: SolutionState, report: SolutionReport, csv: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_field(out / "v1.csvx", grid, state.v1)
    write_field(out / "v2.csvx", grid, state.v2)
    if csv:
        np.savetxt(out / "v1.csv", state.v1, delimiter=",")
        np.savetxt(out / "v2.csv", state.v2, delimiter=",")
    (out / "report.yaml").write_text(report.dumps())
    (out / "summary.json").write_text(json.dumps(summary_document(report), indent=2))


def _certificate(out: Path, gate) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"lambda": gate.lam, "lambda_star": gate.lam_star, "certificate": gate.certificate, "inputs": gate.inputs}
    (out / "certificate.json").write_text(json.dumps(doc, indent=2))


# -- commands ----------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    K, N, grid = cfg.coupling_matrix(), cfg.numbers(), cfg.grid()
    lam = cfg.lambda_value()
    gate = nonexistence_gate(K, lam, N, grid.area)
    if not gate.proceed:
        print(gate.certificate)
        try:
            _certificate(out, gate)
        except OSError as exc:
            logger.error("cannot write certificate: %s", exc)
            return EXIT_IO
        return EXIT_NONEXISTENT
    bg = build_background(grid, *cfg.vortex_sets())
    try:
        state = solve(K, lam, N, bg, cfg.options())
    except (SolverError, NotAdmissible, ExponentOverflow) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}")
        return EXIT_FAILURE
    report = verify(K, lam, N, bg, state, cfg.params(lam))
    try:
        _write_state(out, grid, state, report, cfg.write_csv)
        if cfg.second_solution:
            search = find_second_solution(K, lam, N, bg, state, cfg.options(), seed=cfg.seed)
            doc = {"found": search.found, "energy_first": search.energy_first,
                   "energy_second": search.energy_second, "reason": search.reason, "attempts": search.attempts}
            (out / "second_solution.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
            if search.found:
                rep2 = verify(K, lam, N, bg, search.state, cfg.params(lam))
                _write_state(out / "second", grid, search.state, rep2, cfg.write_csv)
    except OSError as exc:
        logger.error("cannot write outputs: %s", exc)
        return EXIT_IO
    print(json.dumps(summary_document(report), indent=2))
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_sweep(cfg: RunConfig, out: Path, workers: int = 1) -> int:
    if not cfg.lambdas:
        raise ConfigError("sweep needs a non-empty 'sweep: {lambdas: [...]}' list")
    K, N, grid = cfg.coupling_matrix(), cfg.numbers(), cfg.grid()
    bg = build_background(grid, *cfg.vortex_sets())
    lams = sorted(cfg.lambdas)
    opts = cfg.options()
    if workers > 1:
        # independent cold starts; no shared state between entries
        def one(lam):
            return continuation(K, [lam], N, bg, opts)[0]

        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(one, lams))
    else:
        entries = continuation(K, lams, N, bg, opts)
    failed = 0
    rows = []
    good = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i, e in enumerate(entries):
            sub = out / f"entry_{i:03d}"
            if e.state is None:
                failed += 1
                sub.mkdir(parents=True, exist_ok=True)
                (sub / "error.txt").write_text(str(e.error) + "\n")
                continue
            rep = verify(K, e.lam, N, bg, e.state, cfg.params(e.lam))
            _write_state(sub, grid, e.state, rep, cfg.write_csv)
            if not rep.passed:
                failed += 1
            else:
                good.append(e.state)
            g = rep.lp_gaps
            rows.append([e.lam, g["L1_1"], g["L2_1"], g["L1_2"], g["L2_2"], rep.energy, *rep.max_eu, int(rep.passed)])
        header = "lambda L1_1 L2_1 L1_2 L2_2 energy max_eu1 max_eu2 passed"
        np.savetxt(out / "sweep.txt", np.array(rows).reshape(-1, 9), header=header, fmt="%.12g")
        table = asymptotic_gaps(bg, good)
        (out / "gaps.yaml").write_text(yaml.safe_dump(
            {"lambdas": table.lams, "gaps": table.gaps, "monotone": table.monotone}, sort_keys=False))
    except OSError as exc:
        logger.error("cannot write outputs: %s", exc)
        return EXIT_IO
    print(f"{len(entries) - failed}/{len(entries)} entries passed; gaps strictly decreasing: {table.monotone}")
    return EXIT_FAILURE if failed else EXIT_OK


def threshold_document(cfg: RunConfig) -> dict:
    K, N, grid = cfg.coupling_matrix(), cfg.numbers(), cfg.grid()
    m1, m2 = vacuum_moduli(K, cfg.v)
    doc: dict[str, Any] = {
        "coupling": list(K.as_tuple()),
        "N": [N.N1, N.N2],
        "area": grid.area,
        "v": cfg.v,
        "vacuum_moduli": [m1, m2],
    }
    try:
        lam_star = nonexistence_threshold(K, N, grid.area)
        doc["lambda_star"] = lam_star
        doc["kappa_star"] = kappa_from_lambda(cfg.v, lam_star)
    except ThresholdUndefined:
        doc["lambda_star"] = None
        doc["kappa_star"] = None
        doc["note"] = "no threshold; vacuum exists"
    doc["predicted_fluxes"] = list(predicted_flux(K, N))
    doc["predicted_energy"] = predicted_energy(K, N, cfg.v)
    return doc


def cmd_threshold(cfg: RunConfig, out: Path | None) -> int:
    doc = threshold_document(cfg)
    text = yaml.safe_dump(doc, sort_keys=False)
    print(text, end="")
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "threshold.yaml").write_text(text)
        except OSError as exc:
            logger.error("cannot write outputs: %s", exc)
            return EXIT_IO
    return EXIT_OK


def cmd_verify(cfg: RunConfig, fields_dir: Path) -> int:
    K, N, grid = cfg.coupling_matrix(), cfg.numbers(), cfg.grid()
    lam = cfg.lambda_value()
    try:
        g1, v1 = read_field(fields_dir / "v1.csvx")
        g2, v2 = read_field(fields_dir / "v2.csvx")
    except OSError as exc:
        logger.error("cannot read fields: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        logger.error("malformed field file: %s", exc)
        return EXIT_IO
    if not (grid.compatible(g1) and grid.compatible(g2)):
        raise ConfigError("field files were written on a different grid than the configuration describes")
    bg = build_background(grid, *cfg.vortex_sets())
    state = SolutionState.from_v(v1, v2, lam, branch_tag="loaded")
    state.converged = True
    report = verify(K, lam, N, bg, state, cfg.params(lam))
    print(report.dumps(), end="")
    return EXIT_OK if report.passed else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csvortex", description="Doubly periodic Chern-Simons vortex solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "threshold", "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML run configuration")
        s.add_argument("--out", default=None, help="output directory (overrides the config)")
        s.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        s.add_argument("--workers", type=int, default=1, help="concurrent sweep entries")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            s.add_argument("--fields", default=None, help="directory holding v1.csvx and v2.csvx")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out if args.out is not None else cfg.output)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.workers)
        if args.command == "threshold":
            return cmd_threshold(cfg, Path(args.out) if args.out is not None else None)
        return cmd_verify(cfg, Path(args.fields) if args.fields else out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
