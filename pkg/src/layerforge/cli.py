"""Command-line front end.

    layerforge <command> -c config.yaml [-o outdir] [--seed N] [--tol-scale S]

Commands: check-geometry, check-geodesic, profiles, toda, assemble,
residual, gaps, all.  Every run writes report.json (status, reason,
results, manifest) plus the command's tables into the output directory.

Exit codes: 0 success, 1 configuration error, 2 hypothesis failure
(non-stationary, degenerate, tau2 <= 0, inadmissible), 3 solver failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__

COMMANDS = ("check-geometry", "check-geodesic", "profiles", "toda", "assemble", "residual", "gaps", "all")

DEFAULTS = {
    "p": 3.0,
    "N": 1,
    "eps": 0.02,
    "c_tilde": 0.1,
    "eps_range": [5e-3, 5e-2],
    "grid": {"M_theta": 400, "N_x": 4000, "L": 20.0, "h_y": None, "delta": 0.2,
             "box": [-1.0, 1.0, 0.0, 1.0], "gap_candidates": 400},
    "toggles": {"omega_corrections": False, "resonance_A": False, "eZ_term": False, "richardson": False},
    "tolerances": {"stationary": 1e-4, "admissible": 1e-6, "nondegenerate": 1e-6, "contact": 1e-6},
    "transect_thetas": [0.25, 0.5, 0.75],
}


class ConfigError(ValueError):
    pass


class HypothesisError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


# ------------------------------------------------------------- config

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    validate_config(cfg)
    digest = hashlib.sha256(text.encode()).hexdigest()
    return cfg, digest


def validate_config(cfg):
    fld = cfg.get("field")
    if not isinstance(fld, dict):
        raise ConfigError("missing field")
    for key in ("a1", "a2", "V"):
        if key not in fld:
            raise ConfigError(f"missing field.{key}")
    if "curve" not in cfg or not isinstance(cfg["curve"], dict):
        raise ConfigError("missing curve")
    if not cfg["curve"].get("closed", False):
        b = cfg.get("boundary")
        if not isinstance(b, dict) or "phi1" not in b or "phi2" not in b:
            raise ConfigError("missing boundary.phi1/boundary.phi2")
    try:
        p = float(cfg["p"])
        N = int(cfg["N"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("p and N must be numbers") from exc
    if not p > 1:
        raise ConfigError("p must exceed 1")
    if N < 1:
        raise ConfigError("N must be at least 1")
    g = cfg["grid"]
    for key in ("M_theta", "N_x", "L", "delta"):
        if not float(g[key]) > 0:
            raise ConfigError(f"grid.{key} must be positive")
    if g["h_y"] is not None and not float(g["h_y"]) > 0:
        raise ConfigError("grid.h_y must be positive")


# ------------------------------------------------------------- output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def dumps(obj, indent=0):
    """JSON with sorted keys and floats at 17 significant digits (NaN/inf as null)."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        txt = format(obj, ".17g")
        return txt if any(ch in txt for ch in ".en") else txt + ".0"
    return json.dumps(obj)


def write_json(path, obj):
    Path(path).write_text(dumps(_clean(obj)) + "\n")


def write_csv(path, columns: dict):
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], float).ravel() for k in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


# ----------------------------------------------------------- pipeline

class Pipeline:
    """Lazily computed stages shared between commands."""

    def __init__(self, cfg, outdir, seed=0, tol_scale=1.0):
        self.cfg = cfg
        self.out = Path(outdir)
        self.seed = seed
        self.tol = {k: float(v) * tol_scale for k, v in cfg["tolerances"].items()}
        self.results = {}
        self._cache = {}

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    # geometry -------------------------------------------------------
    def chart(self):
        def make():
            from .fieldexpr import ExpressionError
            from .geometry import GeometryError, build_chart, build_curve, endpoint_contact, make_fields
            c = self.cfg
            try:
                fields = make_fields(c["field"]["a1"], c["field"]["a2"], c["field"]["V"])
                curve = build_curve(c["curve"], int(c["grid"]["M_theta"]))
                contact = None
                if not curve.closed:
                    contact = endpoint_contact(curve, c["boundary"]["phi1"], c["boundary"]["phi2"],
                                               self.tol["contact"])
                return build_chart(curve, fields, contact, float(c["p"]))
            except ExpressionError as exc:
                raise ConfigError(f"expression error: {exc}") from exc
            except GeometryError as exc:
                raise HypothesisError(f"geometry: {exc}") from exc
        return self._once("chart", make)

    def check_geometry(self):
        ch = self.chart()
        write_csv(self.out / "chart.csv", ch.table())
        res = {"length": ch.curve.length, "closed": ch.closed, "ell": ch.ell,
               "nodes": len(ch.theta), "b1": ch.b1, "b2": ch.b2, "b6": ch.b6, "b7": ch.b7,
               "min_alpha": float(ch.alpha.min()), "min_beta": float(ch.beta.min())}
        if ch.contact is not None:
            res.update({"k1": ch.contact.k1, "k2": ch.contact.k2,
                        "contact_residual": max(ch.contact.residual1, ch.contact.residual2)})
        self.results["check-geometry"] = res

    # variational ----------------------------------------------------
    def report(self):
        def make():
            from .geodesic import second_variation
            return second_variation(self.chart(), stationary_tol=self.tol["stationary"],
                                    admissible_tol=self.tol["admissible"], nondeg_tol=self.tol["nondegenerate"])
        return self._once("report", make)

    def check_geodesic(self, strict=True):
        from .geodesic import first_variation, weighted_length
        ch, rep = self.chart(), self.report()
        cols = {"theta": rep.theta, "residual": rep.residual, "H1": rep.H1, "H2": rep.H2, "H3": rep.H3,
                "tau1": rep.tau1, "tau2": rep.tau2, "q": rep.q, "hbar1": rep.hbar1, "hbar2": rep.hbar2}
        write_csv(self.out / "variation.csv", cols)
        summ = rep.summary()
        # seeded spot check of the first variation against finite differences
        rng = np.random.default_rng(self.seed)
        c0, w, amp = rng.uniform(0.35, 0.65), rng.uniform(0.15, 0.25), rng.uniform(-1, 1)

        def bump(th):
            x = (np.asarray(th) - c0) / w
            return np.where(np.abs(x) < 1, amp * np.exp(-1 / np.maximum(1 - x**2, 1e-300)), 0.0)
        s = 1e-4
        fd = (weighted_length(ch, lambda th: s * bump(th)) - weighted_length(ch, lambda th: -s * bump(th))) / (2 * s)
        summ["first_variation_check"] = {"seed": self.seed, "fd": fd, "tabulated": first_variation(ch, bump)}
        self.results["check-geodesic"] = summ
        if strict:
            self._require_hypotheses(rep)

    def _require_hypotheses(self, rep, need_tau2=True):
        fails = []
        if not rep.stationary:
            fails.append("non-stationary curve")
        if rep.nondegenerate is False:
            fails.append("degenerate Jacobi operator")
        if need_tau2 and not rep.tau2_positive:
            fails.append("tau2 <= 0")
        if not rep.admissible:
            fails.append("inadmissible endpoints")
        if fails:
            raise HypothesisError("; ".join(fails))

    # profiles ---------------------------------------------------------
    def profile(self):
        def make():
            from .profiles import ProfileError, ground_state, interaction_constants, solve_omega
            g = self.cfg["grid"]
            try:
                pr = ground_state(float(self.cfg["p"]), float(g["L"]), int(g["N_x"]))
                interaction_constants(pr)
                for k in range(4):
                    solve_omega(pr, k)
            except ProfileError as exc:
                raise SolverError(f"profiles: {exc}") from exc
            return pr
        return self._once("profile", make)

    def profiles(self):
        pr = self.profile()
        write_csv(self.out / "profile.csv", pr.table())
        self.results["profiles"] = {"p": pr.p, "sigma": pr.sigma, "lambda0": pr.lambda0, "w0": float(pr.w(0.0)),
                                    "rho": list(pr.rho), "omega_solvability": [pr.omega_solvability[k] for k in range(4)]}

    # reduced system ---------------------------------------------------
    def lambda_star(self):
        from .toda import lambda_star
        return lambda_star(self.profile().lambda0, self.chart().ell)

    def gaps(self):
        from .toda import gap_sequence
        c = self.cfg
        lo, hi = (float(v) for v in c["eps_range"])
        lam = float(c["lambda_star"]) if "lambda_star" in c else self.lambda_star()
        lam0 = self.profile().lambda0 if "lambda_star" not in c else float("nan")
        ell = self.chart().ell if "lambda_star" not in c else float("nan")
        data = gap_sequence(lo, hi, lam, float(c["c_tilde"]), int(c["grid"]["gap_candidates"]), lam0, ell)
        s = data.summary()
        write_json(self.out / "gaps.json", s)
        self.results["gaps"] = s

    def toda(self):
        def make():
            from .toda import (TodaError, TodaProblem, is_admissible, solve_toda_constructive,
                               solve_toda_direct)
            rep = self.report()
            self._require_hypotheses(rep, need_tau2=int(self.cfg["N"]) > 1)
            eps = float(self.cfg["eps"])
            if not is_admissible(eps, self.lambda_star(), float(self.cfg["c_tilde"])):
                raise HypothesisError(f"inadmissible eps {eps:g} (gap condition)")
            prob = TodaProblem.from_chart(self.chart(), rep, self.profile(), int(self.cfg["N"]), eps)
            try:
                direct = solve_toda_direct(prob)
                cons = solve_toda_constructive(prob, admissible_tol=self.tol["admissible"])
            except TodaError as exc:
                raise SolverError(f"toda: {exc}") from exc
            return direct, cons
        return self._once("toda", make)

    def toda_stage(self):
        d, c = self.toda()
        diff = float(np.max(np.abs(d.f - c.f)))
        out = {"direct": d.to_json(), "constructive": c.to_json(), "sup_difference": diff}
        write_json(self.out / "toda.json", out)
        eps = d.eps
        self.results["toda"] = {"epsilon": eps, "N": d.N, "direct_residual": d.residual,
                                "direct_residual_over_eps2": d.residual / eps**2,
                                "sup_difference": diff, "min_gap": d.min_gap,
                                "newton_iterations": d.diagnostics["newton_iterations"],
                                "fixed_point_iterations": c.diagnostics["fixed_point_iterations"]}

    # assembly ---------------------------------------------------------
    def ansatz(self):
        def make():
            from .assembly import AssemblyError, build_ansatz
            d, _ = self.toda()
            tg = self.cfg["toggles"]
            try:
                return build_ansatz(self.chart(), self.profile(), d, d.eps, float(self.cfg["grid"]["delta"]),
                                    omega_corrections=bool(tg["omega_corrections"]),
                                    resonance_A=bool(tg["resonance_A"]), eZ_term=bool(tg["eZ_term"]))
            except AssemblyError as exc:
                raise SolverError(f"assembly: {exc}") from exc
        return self._once("ansatz", make)

    def assemble(self):
        from .assembly import spacing_report, transects
        ans = self.ansatz()
        rows = transects(ans, tuple(float(t) for t in self.cfg["transect_thetas"]))
        write_csv(self.out / "transects.csv", {"theta": rows[:, 0], "t": rows[:, 1], "y1": rows[:, 2],
                                               "y2": rows[:, 3], "u": rows[:, 4]})
        d = ans.solution_
        self.results["assemble"] = {"max_u_transects": float(rows[:, 4].max()),
                                    "alpha_w0_mid": float(np.interp(0.5, ans.chart_.theta, ans.chart_.alpha)
                                                          * ans.profile_.w(0.0)),
                                    "spacing": spacing_report(d, d.eps, np.interp(d.theta, ans.chart_.theta,
                                                                                  ans.chart_.beta))}

    def residual(self):
        from .assembly import AssemblyError, pde_residual
        ans = self.ansatz()
        g = self.cfg["grid"]
        try:
            rep = pde_residual(ans, tuple(float(v) for v in g["box"]),
                               None if g["h_y"] is None else float(g["h_y"]),
                               richardson=bool(self.cfg["toggles"]["richardson"]))
        except AssemblyError as exc:
            raise SolverError(f"residual: {exc}") from exc
        rows = rep.to_rows()
        write_csv(self.out / "residual.csv", {"y1": rows[:, 0], "y2": rows[:, 1], "u": rows[:, 2],
                                              "R": np.nan_to_num(rows[:, 3])})
        self.results["residual"] = rep.summary()


def run(command, config, outdir=None, seed=0, tol_scale=1.0):
    """Run one command; returns the exit code.  report.json is always written."""
    out = Path(outdir or os.environ.get("LAYERFORGE_OUT") or "layerforge_out")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "command": command, "config": str(config), "seed": seed,
                "tol_scale": tol_scale, "config_sha256": None}
    report = {"status": "ok", "exit_code": 0, "reason": "", "results": {}, "manifest": manifest}
    code = 0
    try:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command}")
        cfg, digest = load_config(config)
        manifest["config_sha256"] = digest
        pipe = Pipeline(cfg, out, seed, tol_scale)
        report["results"] = pipe.results
        stages = {
            "check-geometry": [pipe.check_geometry],
            "check-geodesic": [pipe.check_geodesic],
            "profiles": [pipe.profiles],
            "gaps": [pipe.gaps],
            "toda": [pipe.toda_stage],
            "assemble": [pipe.toda_stage, pipe.assemble],
            "residual": [pipe.toda_stage, pipe.residual],
            "all": [pipe.check_geometry, lambda: pipe.check_geodesic(strict=False), pipe.profiles, pipe.gaps,
                    pipe.toda_stage, pipe.assemble, pipe.residual],
        }[command]
        for stage in stages:
            stage()
    except ConfigError as exc:
        code, report["status"], report["reason"] = 1, "config_error", str(exc)
    except HypothesisError as exc:
        code, report["status"], report["reason"] = 2, "hypothesis_failure", str(exc)
    except SolverError as exc:
        code, report["status"], report["reason"] = 3, "solver_failure", str(exc)
    report["exit_code"] = code
    write_json(out / "report.json", report)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="layerforge", description="Layer approximations: batch pipeline.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("-c", "--config", required=True, help="YAML configuration file")
    ap.add_argument("-o", "--outdir", default=None, help="output directory (overrides LAYERFORGE_OUT)")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized spot checks")
    ap.add_argument("--tol-scale", type=float, default=1.0, help="multiply all hypothesis tolerances")
    ap.add_argument("--version", action="version", version=f"layerforge {__version__}")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    code = run(args.command, args.config, args.outdir, args.seed, args.tol_scale)
    out = Path(args.outdir or os.environ.get("LAYERFORGE_OUT") or "layerforge_out")
    rep = json.loads((out / "report.json").read_text())
    print(f"{args.command}: {rep['status']}" + (f" ({rep['reason']})" if rep["reason"] else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
