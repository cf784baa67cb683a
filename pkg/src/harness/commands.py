# -------------------------------------------------------------
# 子命令: 把配置交给各模块, 按固定格式写出 CSV / JSON
# -------------------------------------------------------------
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np

from src.common.errors import ConfigError
from src.common.io_utils import write_csv, write_json
from src.spectral.core import sample_states
from src.spectral.drift import (
    dissipativity_estimate,
    mehler_property_check,
    validate_drift,
    yosida_property_check,
)
from src.dynamics.engine import Trajectory, simulate_path
from src.analysis.observables import CylFunc, generator_ladder, ou_mehler_exact, semigroup_mc_many
from src.analysis.invariant import (
    MeasureEnsemble,
    compare_moments,
    dirichlet_form_test,
    e_concentration,
    estimate_ensemble,
    estimate_longrun,
    generator_mean_zero_test,
    invariance_test,
    moment_report,
    pcn_sample,
    sample_gaussian_reference,
)
from src.analysis.dirichlet import (
    fk_convergence_scan,
    killed_measure_test,
    killed_semigroup,
    subinvariance_test,
    survival_curve,
)
from src.harness.config import ExperimentConfig

logger = logging.getLogger(__name__)


class CommandOutput:
    """一个子命令写出的文件与摘要"""

    def __init__(self, command: str):
        self.command = command
        self.files: List[str] = []
        self.summary: Dict[str, Any] = {}

    def add(self, path: str):
        self.files.append(path)
        logger.info(f"💾 {path}")

    def to_dict(self) -> Dict[str, Any]:
        return {"command": self.command, "files": self.files, "summary": self.summary}


def _out(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg.output.directory, name)


def _want(cfg: ExperimentConfig, fmt: str) -> bool:
    return fmt in cfg.output.formats


def _observables(cfg: ExperimentConfig, with_constant: bool = False) -> List[CylFunc]:
    phis = list(cfg.observables)
    if with_constant:
        phis.insert(0, CylFunc.constant(cfg.model.n_modes))
    if not phis:
        raise ConfigError("observables", "this command needs at least one cylindrical function")
    return phis


def _labels(phis: List[CylFunc]) -> Dict[str, str]:
    return {str(i): phi.label() for i, phi in enumerate(phis)}


# --- simulate ---
def cmd_simulate(cfg: ExperimentConfig) -> CommandOutput:
    """每个 path_id 一条轨迹, 文件 trajectory_path{id}.csv"""
    out = CommandOutput("simulate")
    x0 = cfg.state(cfg.semigroup.x0, "semigroup.x0")
    header = Trajectory.header(cfg.model.n_modes)
    diverged = {}
    for pid in cfg.mc.path_ids:
        traj = simulate_path(cfg.model, cfg.drift, cfg.integrator, x0, cfg.master_seed, pid,
                             raise_on_divergence=False)
        if traj.divergence_step is not None:
            diverged[pid] = traj.divergence_step
        out.add(write_csv(_out(cfg, f"trajectory_path{pid}.csv"), header, traj.rows(),
                          master_seed=cfg.master_seed, comments={"path_id": pid}))
    rows = cfg.integrator.n_steps // cfg.integrator.record_every + 1
    out.summary = {"n_paths": len(cfg.mc.path_ids), "rows_per_path": rows, "diverged": diverged}
    return out


# --- semigroup ---
def cmd_semigroup(cfg: ExperimentConfig) -> CommandOutput:
    """P(t)φ(x) 的 MC 估计; Zero 漂移时另加 Mehler 精确列"""
    out = CommandOutput("semigroup")
    phis = _observables(cfg)
    x0 = cfg.state(cfg.semigroup.x0, "semigroup.x0")
    exact = cfg.drift.is_zero
    header = ["observable", "t", "mc", "mc_stderr", "n_paths"] + (["mehler", "z_score"] if exact else [])
    rows = []
    for t in cfg.semigroup.t_list:
        estimates = semigroup_mc_many(cfg.model, cfg.drift, cfg.integrator, phis, x0, t, cfg.mc.n_paths,
                                      cfg.master_seed)
        for i, (phi, est) in enumerate(zip(phis, estimates)):
            row = [i, float(t), est.value, est.stderr, est.n_paths]
            if exact:
                value = ou_mehler_exact(cfg.model, phi, x0, t)
                z = (est.value - value) / est.stderr if est.stderr > 0 else 0.0
                row += [value, z]
            rows.append(row)
    if _want(cfg, "csv"):
        out.add(write_csv(_out(cfg, "semigroup.csv"), header, rows, master_seed=cfg.master_seed))

    ladders = []
    for i, phi in enumerate(phis if cfg.semigroup.generator_t_list else []):
        quotients, ok = generator_ladder(cfg.model, cfg.drift, cfg.integrator, phi, x0,
                                         cfg.semigroup.generator_t_list, cfg.mc.n_paths, cfg.master_seed)
        ladders.append({"observable": i, "pass": ok, "rows": [q.to_dict() for q in quotients]})
    out.summary = {"observables": _labels(phis), "rows": len(rows), "generator_ladders": ladders}
    if _want(cfg, "json"):
        out.add(write_json(_out(cfg, "semigroup.json"), dict(out.summary, master_seed=cfg.master_seed)))
    return out


# --- invariant ---
def build_ensembles(cfg: ExperimentConfig) -> Dict[str, MeasureEnsemble]:
    inv = cfg.invariant
    seed = cfg.master_seed
    ensembles: Dict[str, MeasureEnsemble] = {}
    for method in inv.methods:
        if method == "longrun":
            ensembles[method] = estimate_longrun(cfg.model, cfg.drift, cfg.integrator, inv.burn_in, inv.thin,
                                                 inv.n_keep, seed)
        elif method == "ensemble":
            ensembles[method] = estimate_ensemble(cfg.model, cfg.drift, cfg.integrator, np.zeros(cfg.model.n_modes),
                                                  inv.t_large, inv.n_samples, seed)
        elif method == "pcn":
            if cfg.potential is None:
                raise ConfigError("invariant.methods", "pcn sampling needs drift.variant = gradient_potential")
            ensembles[method] = pcn_sample(cfg.model, cfg.potential, inv.pcn_steps, inv.pcn_step_size, seed,
                                           burn_in=inv.pcn_burn_in, thin=inv.pcn_thin)
        elif method == "gaussian":
            if not cfg.drift.is_zero:
                logger.warning("⚠️ the Gaussian reference is the invariant measure only for the zero drift")
            ensembles[method] = sample_gaussian_reference(cfg.model, inv.n_samples, seed)
    return ensembles


def cmd_invariant(cfg: ExperimentConfig) -> CommandOutput:
    out = CommandOutput("invariant")
    inv = cfg.invariant
    ensembles = build_ensembles(cfg)
    moment_rows = []
    report: Dict[str, Any] = {"methods": {}, "comparisons": [], "observables": _labels(list(cfg.observables))}
    for method, ens in ensembles.items():
        if _want(cfg, "csv"):
            out.add(write_csv(_out(cfg, f"ensemble_{method}.csv"), ens.header(), ens.rows(),
                              master_seed=cfg.master_seed, comments={"provenance": ens.provenance.value}))
        for row in moment_report(ens, inv.p_list):
            moment_rows.append([method, row["p"], row["estimate"], row["stderr"]])
        report["methods"][method] = {
            "size": ens.size, "ess": ens.ess, "acceptance_rate": ens.acceptance_rate,
            "e_concentration": e_concentration(ens, cfg.model),
        }
    if _want(cfg, "csv"):
        out.add(write_csv(_out(cfg, "moments.csv"), ["method", "p", "estimate", "stderr"], moment_rows,
                          master_seed=cfg.master_seed))
    names = list(ensembles)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            for row in compare_moments(ensembles[a], ensembles[b], inv.p_list):
                report["comparisons"].append(dict(row, a_method=a, b_method=b))

    if cfg.observables and names:
        ens = ensembles[names[0]]
        phis = list(cfg.observables)
        checks = invariance_test(ens, cfg.model, cfg.drift, cfg.integrator, phis, inv.invariance_t,
                                 cfg.mc.n_paths, cfg.master_seed)
        checks += generator_mean_zero_test(ens, cfg.model, cfg.drift, phis)
        checks += dirichlet_form_test(ens, cfg.model, cfg.drift, phis)
        report["measure_checks"] = {"ensemble": names[0], "rows": [c.to_dict() for c in checks]}
    out.summary = {"methods": names, "comparisons_passed": all(r["pass"] for r in report["comparisons"])}
    if _want(cfg, "json"):
        out.add(write_json(_out(cfg, "invariant.json"), dict(report, master_seed=cfg.master_seed)))
    return out


# --- dirichlet ---
def cmd_dirichlet(cfg: ExperimentConfig) -> CommandOutput:
    """ε 阶梯扫描表 (每个观测量一张), 存活曲线, 以及子不变性检验"""
    if cfg.domain is None:
        raise ConfigError("domain", "the dirichlet command needs a domain section")
    out = CommandOutput("dirichlet")
    phis = _observables(cfg, with_constant=True)
    x0 = cfg.state(cfg.dirichlet.x0, "dirichlet.x0")
    eps_list = list(cfg.domain_section.eps_list)
    report: Dict[str, Any] = {"domain": cfg.domain.to_dict(), "observables": _labels(phis), "scans": []}
    for i, phi in enumerate(phis):
        table = fk_convergence_scan(cfg.model, cfg.drift, cfg.integrator, cfg.domain, phi, x0, cfg.dirichlet.t,
                                    eps_list, cfg.mc.n_paths, cfg.master_seed)
        if _want(cfg, "csv"):
            out.add(write_csv(_out(cfg, f"dirichlet_scan_{i}.csv"), table.columns, table.as_rows(),
                              master_seed=cfg.master_seed, comments={"observable": i, "t": cfg.dirichlet.t}))
        report["scans"].append(dict(table.to_dict(), observable=i))

    horizon = cfg.integrator.with_horizon(cfg.dirichlet.t)
    t_grid = sorted({horizon.dt * (horizon.n_steps * k // 4) for k in range(5)})
    curve = survival_curve(cfg.model, cfg.drift, cfg.integrator, cfg.domain, x0, t_grid, cfg.mc.n_paths,
                           cfg.master_seed)
    report["survival_curve"] = curve.to_dict()

    killing = cfg.killing
    if killing is not None:
        report["killing"] = {"monitoring": killing.monitoring.value, "epsilon": killing.epsilon}
        report["killed"] = [dict(killed_semigroup(cfg.model, cfg.drift, cfg.integrator, cfg.domain, killing, phi, x0,
                                                  cfg.dirichlet.t, cfg.mc.n_paths, cfg.master_seed).to_dict(),
                                 observable=i) for i, phi in enumerate(phis)]

    if cfg.dirichlet.subinvariance_t:
        ensemble = estimate_ensemble(cfg.model, cfg.drift, cfg.integrator, np.zeros(cfg.model.n_modes),
                                     cfg.invariant.t_large, cfg.dirichlet.ensemble_size, cfg.master_seed)
        rows = []
        for t in cfg.dirichlet.subinvariance_t:
            for phi in phis:
                if killing is None:
                    check = subinvariance_test(ensemble, cfg.model, cfg.drift, cfg.integrator, cfg.domain, phi, t,
                                               cfg.mc.n_paths, cfg.master_seed)
                else:
                    check = killed_measure_test(ensemble, cfg.model, cfg.drift, cfg.integrator, cfg.domain, killing,
                                                phi, t, cfg.mc.n_paths, cfg.master_seed)
                rows.append(check.to_dict())
        report["subinvariance"] = rows
    out.summary = {"scans_passed": all(s["pass"] for s in report["scans"]),
                   "subinvariance_passed": all(r["pass"] for r in report.get("subinvariance", []))}
    if _want(cfg, "json"):
        out.add(write_json(_out(cfg, "dirichlet.json"), dict(report, master_seed=cfg.master_seed)))
    return out


# --- yosida ---
def cmd_yosida(cfg: ExperimentConfig) -> CommandOutput:
    """Yosida 性质表 (每个 δ 一组行) 与 Mehler s 阶梯"""
    out = CommandOutput("yosida")
    y = cfg.yosida
    seed = cfg.master_seed
    rows = []
    for delta in y.deltas:
        report = yosida_property_check(cfg.model, cfg.drift, delta, y.n_pairs, seed, delta_ladder=y.deltas,
                                       n_ladder_points=y.n_points)
        for r in report.rows:
            rows.append([r.delta, r.name, r.lhs, r.rhs, r.slack, r.passed])
    if _want(cfg, "csv"):
        out.add(write_csv(_out(cfg, "yosida_checks.csv"), ["delta", "property", "lhs", "rhs", "slack", "pass"],
                          rows, master_seed=seed))

    points = sample_states(cfg.model, y.n_points, seed)
    delta = min(y.deltas)
    ladder, mehler = mehler_property_check(cfg.model, cfg.drift, delta, y.s_list, points,
                                           y.n_smoothing_samples, seed)
    if _want(cfg, "csv"):
        out.add(write_csv(_out(cfg, "mehler_ladder.csv"), ["s", "error", "stderr"],
                          [[r["s"], r["error"], r["stderr"]] for r in ladder], master_seed=seed,
                          comments={"delta": delta}))
    diss = dissipativity_estimate(cfg.model, cfg.drift, y.n_pairs, seed)
    out.summary = {
        "yosida_passed": all(r[-1] for r in rows),
        "mehler": mehler.to_dict(),
        "dissipativity": diss.to_dict(),
        "drift_validation": validate_drift(cfg.model, cfg.drift, seed=seed).to_dict(),
    }
    if _want(cfg, "json"):
        out.add(write_json(_out(cfg, "yosida.json"), dict(out.summary, master_seed=seed)))
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "semigroup": cmd_semigroup,
    "invariant": cmd_invariant,
    "dirichlet": cmd_dirichlet,
    "yosida": cmd_yosida,
}


def run_command(name: str, cfg: ExperimentConfig) -> Optional[CommandOutput]:
    return COMMANDS[name](cfg)
