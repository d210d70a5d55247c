"""Command-line orchestration: declarative JSON run configs, machine-readable
reports, plot-ready tables.

Subcommands: ground-state, spectrum, perturb, pohozaev, expansion, report.
Reports are reproducible: identical configs give bitwise identical JSON/CSV
(timings go to the log stream only, never into data files).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .ground_state import (
    KirchhoffParams,
    build_ground_state,
    solve_classical,
    write_profile,
)
from .potential import PotentialModel, constant_potential, holder_well, power_well
from . import perturbed as pr
from . import diagnostics as dg
from .spectral import gradient_pairing, kernel_certificate, verify_au_identities

OUT_ENV_VAR = "KIRCHHOFFLAB_OUT"


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    a: float = 1.0
    b: float = 1.0
    p: float = 3.0
    grid_h: float = 0.01
    grid_r_max: float = 40.0
    box_L: float = 14.0
    box_n: int = 97
    potential: dict = field(default_factory=lambda: {"kind": "constant"})
    eps_list: List[float] = field(default_factory=lambda: [0.2, 0.1])
    delta: float = 0.5
    y: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    d_ball: Optional[float] = None
    newton_tol: float = 1e-9
    fp_tol: float = 1e-9
    workers: int = 1
    seed: int = 0
    cross_validate: bool = True
    out_dir: Optional[str] = None
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str, command: str) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc, command)

    @classmethod
    def from_dict(cls, doc: dict, command: str) -> "RunConfig":
        cfg = cls(command=command, raw=dict(doc))
        simple = {
            "a", "b", "p", "delta", "newton_tol", "fp_tol", "workers",
            "seed", "out_dir", "eps_list", "potential", "y", "d_ball",
            "cross_validate",
        }
        for key, val in doc.items():
            if key in simple:
                setattr(cfg, key, val)
            elif key == "grid":
                cfg.grid_h = val.get("h", cfg.grid_h)
                cfg.grid_r_max = val.get("r_max", cfg.grid_r_max)
            elif key == "box":
                cfg.box_L = val.get("L", cfg.box_L)
                cfg.box_n = val.get("n", cfg.box_n)
            else:
                raise ConfigError(f"unknown config field {key!r}")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 1.0 < self.p < 5.0:
            raise ConfigError("p must lie in (1,5)")
        if self.a <= 0 or self.b < 0:
            raise ConfigError("require a > 0 and b >= 0")
        for tol_name in ("newton_tol", "fp_tol"):
            if getattr(self, tol_name) <= 0:
                raise ConfigError(f"{tol_name} must be positive")
        for eps in self.eps_list:
            if not 0.0 < eps <= 0.5:
                raise ConfigError("eps values must lie in (0, 0.5]")

    def params(self) -> KirchhoffParams:
        return KirchhoffParams(self.a, self.b, self.p)

    def potential_model(self) -> PotentialModel:
        spec = dict(self.potential)
        kind = spec.pop("kind", "constant")
        if kind == "constant":
            return constant_potential()
        if kind == "power_well":
            return power_well(
                coeffs=spec.get("coeffs", (1.0, 1.0, 1.0)),
                m=spec.get("m", 2.0),
                x0=spec.get("x0", (0.0, 0.0, 0.0)),
                tilt=spec.get("tilt", (0.0, 0.0, 0.0)),
                r_cap=spec.get("r_cap", 5.0),
            )
        if kind == "holder_well":
            return holder_well(
                alpha=spec.get("alpha", 0.5),
                kappa=spec.get("kappa", 1.0),
                x0=spec.get("x0", (0.0, 0.0, 0.0)),
                r_cap=spec.get("r_cap", 5.0),
            )
        raise ConfigError(f"unknown potential kind {kind!r}")

    def box(self) -> pr.Box3D:
        return pr.Box3D(self.box_L, self.box_n)

    def center(self, gs, potential, eps: float):
        """Frame center: explicit coordinates, or 'auto' for the
        semi-analytic energy minimizer (asymmetric wells)."""
        if isinstance(self.y, str):
            if self.y != "auto":
                raise ConfigError("y must be a 3-vector or 'auto'")
            return dg.surrogate_center(gs, potential, eps, self.delta)
        return np.asarray(self.y, dtype=float)

    def resolve_out_dir(self, override: Optional[str]) -> Path:
        out = override or os.environ.get(OUT_ENV_VAR) or self.out_dir \
            or f"runs/{self.command}"
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        return path


@dataclass
class RunReport:
    command: str
    config: dict
    checks: List[dict] = field(default_factory=list)
    values: dict = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)  # names relative to the out dir

    def add_check(self, name: str, value: float, tolerance: float,
                  passed: Optional[bool] = None) -> None:
        if passed is None:
            passed = bool(value < tolerance)
        self.checks.append(
            {"name": name, "value": value, "tolerance": tolerance, "passed": passed}
        )

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "checks": self.checks,
            "values": self.values,
            "artifacts": self.artifacts,
            "all_passed": self.all_passed,
        }

    def write(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _json_safe(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_ground_state(cfg: RunConfig, out: Path, log) -> RunReport:
    report = RunReport("ground-state", cfg.raw)
    t0 = time.perf_counter()
    gs = build_ground_state(cfg.params())
    log(f"ground state built in {time.perf_counter() - t0:.1f}s")
    prof = gs.profile
    report.values = _json_safe(
        {
            "c": gs.c,
            "central_value": prof.central_value,
            "K": prof.K,
            "M": prof.M,
            "P": prof.P,
            "K_U": gs.K_U,
            "M_U": gs.M_U,
            "P_U": gs.P_U,
            "A": gs.A,
            "B": gs.B,
            "m": gs.m,
        }
    )
    report.add_check("nehari_defect", prof.nehari_defect, 1e-6)
    report.add_check("virial_ratio_defect", prof.virial_ratio_defect, 1e-5)
    report.add_check("scaling_self_consistency", gs.self_consistency_defect, 1e-8)
    report.add_check("equation_residual_sup", gs.residual_sup, 1e-6)
    profile_path = out / "profile.txt"
    with open(profile_path, "w") as fh:
        write_profile(
            gs.U,
            {"a": cfg.a, "b": cfg.b, "p": cfg.p, "c": gs.c, "Q0": prof.central_value},
            fh,
        )
    report.artifacts.append(profile_path.name)
    return report


def cmd_spectrum(cfg: RunConfig, out: Path, log) -> RunReport:
    report = RunReport("spectrum", cfg.raw)
    gs = build_ground_state(cfg.params())
    t0 = time.perf_counter()
    cert = kernel_certificate(gs)
    idents = verify_au_identities(gs)
    pairing = gradient_pairing(gs)
    log(f"spectrum certified in {time.perf_counter() - t0:.1f}s")
    report.values = _json_safe(
        {
            "kernel_sectors": cert.kernel_sectors,
            "kernel_multiplicity": cert.kernel_multiplicity,
            "translation_cosine": cert.translation_cosine,
            "sigma_min_radial": cert.sigma_min_radial,
            "gradient_pairing": pairing,
            "gradient_pairing_target": (gs.c - cfg.a) / (2.0 * gs.c),
        }
    )
    report.add_check("identity_residual_max", idents.max_residual(), 1e-4)
    report.add_check(
        "gradient_pairing_error",
        abs(pairing - (gs.c - cfg.a) / (2.0 * gs.c)),
        1e-5,
    )
    report.add_check("gradient_pairing_below_half", pairing, 0.5)
    report.add_check("kernel_certificate", 0.0 if cert.passed else 1.0, 0.5,
                     passed=cert.passed)
    spec_path = out / "spectrum.json"
    with open(spec_path, "w") as fh:
        fh.write(cert.to_json())
        fh.write("\n")
    report.artifacts.append(spec_path.name)
    return report


def _perturb_one(gs, potential, box, eps, y, newton_tol, fp_tol, cross_validate):
    """One sweep element; returns (entry, agreement, frame, field)."""
    frame = pr.EpsilonFrame(gs, potential, eps, y, box)
    sol = pr.newton_solve(frame, tol=newton_tol)
    entry = dg.TraceEntry(
        eps,
        sol.center,
        float(np.linalg.norm(sol.center - potential.x0)) / eps,
        sol.correction_norm,
        sol.correction_ratio,
    )
    agreement = None
    if cross_validate:
        red = pr.reduction_solution(frame, tol=fp_tol)
        agreement = {
            "eps": eps,
            "two_path_eps_norm": eps**1.5
            * pr.star_norm(frame, sol.field.values - red.field.values),
        }
    return entry, agreement, frame, sol.field


def cmd_perturb(cfg: RunConfig, out: Path, log) -> RunReport:
    report = RunReport("perturb", cfg.raw)
    gs = build_ground_state(cfg.params())
    potential = cfg.potential_model()
    box = cfg.box()
    trace = dg.ConcentrationTrace()
    agreements = []

    def run_one(eps):
        return _perturb_one(gs, potential, box, eps, cfg.center(gs, potential, eps),
                            cfg.newton_tol, cfg.fp_tol, cfg.cross_validate)

    results = {}
    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                eps: pool.submit(
                    _perturb_one, gs, potential, box, eps,
                    cfg.center(gs, potential, eps),
                    cfg.newton_tol, cfg.fp_tol, cfg.cross_validate,
                )
                for eps in cfg.eps_list
            }
            for eps, fut in futures.items():
                try:
                    results[eps] = fut.result()
                except Exception as exc:  # noqa: BLE001 - per-eps failures are data
                    results[eps] = exc
    else:
        for eps in cfg.eps_list:
            t0 = time.perf_counter()
            try:
                results[eps] = run_one(eps)
                log(f"eps={eps}: solved in {time.perf_counter() - t0:.1f}s")
            except Exception as exc:  # noqa: BLE001
                results[eps] = exc
                log(f"eps={eps}: failed ({exc!r})")

    for eps in cfg.eps_list:  # deterministic assembly order
        res = results[eps]
        if isinstance(res, Exception):
            trace.entries.append(dg.TraceEntry(eps, None, None, None, None, repr(res)))
            continue
        entry, agreement, frame, field = res
        if agreement is not None:
            agreements.append(agreement)
        field_path = out / f"field_eps{eps:g}.bin"
        pr.write_field(field_path, frame, field)
        report.artifacts.append(field_path.name)
        trace.entries.append(entry)
    trace.fit_exponent()
    csv_path = out / "trace.csv"
    trace.write_csv(csv_path)
    report.artifacts.append(csv_path.name)
    ok = trace.successful()
    report.values = _json_safe(
        {
            "solved": len(ok),
            "failed": len(trace.entries) - len(ok),
            "correction_ratios": {f"{e.eps:g}": e.phi_ratio for e in ok},
            "two_path_agreement": agreements,
            "fitted_exponent": trace.fitted_exponent,
        }
    )
    for e in ok:
        report.add_check(f"correction_ratio_eps{e.eps:g}", e.phi_ratio, 0.2)
    return report


def cmd_pohozaev(cfg: RunConfig, out: Path, log) -> RunReport:
    report = RunReport("pohozaev", cfg.raw)
    gs = build_ground_state(cfg.params())
    potential = cfg.potential_model()
    box = cfg.box()
    eps = cfg.eps_list[0]
    frame = pr.EpsilonFrame(gs, potential, eps, cfg.center(gs, potential, eps), box)
    t0 = time.perf_counter()
    sol = pr.newton_solve(frame, tol=cfg.newton_tol)
    log(f"solved in {time.perf_counter() - t0:.1f}s")
    d = cfg.d_ball or dg.choose_ball_radius(sol)
    docs = []
    for i in range(3):
        rep = dg.pohozaev_check(sol, d, i)
        docs.append(rep.to_dict())
        report.add_check(f"pohozaev_discrepancy_{i}", rep.discrepancy, 1e-2)
    path = out / "pohozaev.json"
    with open(path, "w") as fh:
        json.dump(_json_safe(docs), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.artifacts.append(path.name)
    report.values = _json_safe({"d_ball": d, "eps": eps, "reports": docs})
    return report


def cmd_expansion(cfg: RunConfig, out: Path, log) -> RunReport:
    report = RunReport("expansion", cfg.raw)
    gs = build_ground_state(cfg.params())
    potential = cfg.potential_model()
    y = np.asarray(cfg.y, dtype=float)
    rows = []
    for eps in cfg.eps_list:
        energy = dg.profile_energy(gs, potential, eps, y)
        rem = dg.expansion_remainder(gs, potential, eps, y)
        rows.append({"eps": eps, "profile_energy": energy, "remainder": rem})
    csv_path = out / "expansion.csv"
    with open(csv_path, "w") as fh:
        fh.write("eps,profile_energy,remainder\n")
        for row in rows:
            fh.write(f"{row['eps']:.17g},{row['profile_energy']:.17g},{row['remainder']:.17g}\n")
    report.artifacts.append(csv_path.name)
    values = {"rows": rows, "A": gs.A, "B": gs.B}
    if len(rows) >= 2 and all(abs(r["remainder"]) > 0 for r in rows):
        values["remainder_exponent"] = dg.fit_power(
            [r["eps"] for r in rows], [r["remainder"] for r in rows]
        )
    report.values = _json_safe(values)
    return report


def cmd_report(run_dir: str, out: Path, log) -> RunReport:
    """Consolidate report.json files found under a directory."""
    summary = RunReport("report", {"run_dir": run_dir})
    found = sorted(Path(run_dir).rglob("report.json"))
    for path in found:
        with open(path) as fh:
            doc = json.load(fh)
        for check in doc.get("checks", []):
            summary.checks.append({**check, "source": str(path)})
    summary.values = {"reports_found": len(found)}
    log(f"consolidated {len(found)} reports")
    return summary


_COMMANDS = {
    "ground-state": cmd_ground_state,
    "spectrum": cmd_spectrum,
    "perturb": cmd_perturb,
    "pohozaev": cmd_pohozaev,
    "expansion": cmd_expansion,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="kirchhoff-lab",
        description="Kirchhoff ground states, nondegeneracy certificates and "
        "singularly perturbed solves",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cp = sub.add_parser(name)
        cp.add_argument("config", help="path to the JSON run config")
        cp.add_argument("--out", default=None, help="output directory override")
    rp = sub.add_parser("report")
    rp.add_argument("run_dir", help="directory holding earlier run outputs")
    rp.add_argument("--out", default=None)

    args = parser.parse_args(argv)

    def log(msg: str) -> None:
        print(f"[kirchhoff-lab] {msg}", file=sys.stderr)

    if args.command == "report":
        out = Path(args.out or os.environ.get(OUT_ENV_VAR) or "runs/report")
        out.mkdir(parents=True, exist_ok=True)
        report = cmd_report(args.run_dir, out, log)
    else:
        try:
            cfg = RunConfig.from_file(args.config, args.command)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        out = cfg.resolve_out_dir(args.out)
        try:
            report = _COMMANDS[args.command](cfg, out, log)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    report.write(out / "report.json")
    log(f"report written to {out / 'report.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
