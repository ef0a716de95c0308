import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..audit import InvariantAudit
from ..auxiliary import Eigenpair, SingularSolution, beta_star_estimate, build_cutoff, principal_eigenpair, solve_singular
from ..config import RunConfig
from ..continuation import (
    ContinuationSchedule,
    barrier_check,
    comparison_check,
    energy_sandwich_check,
    energy_separation_check,
    level_set_report,
    radon_measure_check,
    run_continuation,
    stage_convergence_check,
)
from ..contracts import GeometryFailureError, InvalidArgumentError, NoSolutionError
from ..geometry import ScalarField
from ..interfaces import IScheduler
from ..interop import write_field, write_json, write_profile, write_table
from ..model import CutoffContext, EpsEnergy
from ..operators import assemble_sub_laplacian, h1_seminorm_sq, inner
from ..oracle import oracle_energy, shoot_free_boundary, shoot_singular
from ..solvers import (
    build_truncated,
    critical_point_certificate,
    estimate_m1,
    locate_lambda_star,
    mountain_pass_with_rim,
    multi_start_minimize,
    ordering_check,
)
from ..structures import SOLVE_COLUMNS, STAGE_COLUMNS, ContinuationResult, SolveReport

logger = logging.getLogger("ExperimentManager")

ORACLE_NODES = 2001


class ExperimentManager:
    """
    Runs one subcommand for a validated RunConfig and writes its tables under
    the output directory. Parallel work goes through the injected scheduler.
    """

    def __init__(self, config: RunConfig, scheduler: Optional[IScheduler] = None, out_dir: Optional[Path] = None):
        self.config = config
        self.scheduler = scheduler
        self.out_dir = Path(out_dir or config.output.dir)
        self.hash = config.config_hash()
        self.group = config.group_model()
        self.grid = config.grid()

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    def _cutoff(self) -> CutoffContext:
        return build_cutoff(self.group, self.grid, self.config.params())

    # ------------------------------------------------------------------
    # eig / singular
    # ------------------------------------------------------------------

    def run_eig(self) -> Eigenpair:
        eig = principal_eigenpair(self.group, self.grid, tol=self.config.solver.eigen_tol)
        write_table(
            self._path("eig.csv"),
            [{"lambda1": eig.lambda1, "iterations": eig.iterations, "residual": eig.residual}],
            ["lambda1", "iterations", "residual"],
            self.hash,
            "1/length^2",
        )
        write_field(self._path("phi1.csv"), eig.phi1, self.hash, "phi1")
        return eig

    def run_singular(self) -> SingularSolution:
        prm = self.config.params()
        if prm.beta == 0.0:
            raise InvalidArgumentError("singular needs beta > 0")
        sol = solve_singular(self.group, self.grid, prm.beta, prm.delta, tol=self.config.solver.singular_tol)
        eig = principal_eigenpair(self.group, self.grid, tol=self.config.solver.eigen_tol)
        beta_star = beta_star_estimate(prm, eig)
        row = {
            "beta": prm.beta,
            "delta": prm.delta,
            "sup_u_beta": float(np.max(sol.u_beta.values)),
            "residual": sol.residual_norm,
            "iterations": sol.iterations,
            "beta_star": beta_star,
        }
        write_table(self._path("singular.csv"), [row], list(row), self.hash)
        write_field(self._path("u_beta.csv"), sol.u_beta, self.hash, "u_beta")
        if prm.beta >= beta_star:
            logger.warning(f"beta={prm.beta} is not below the beta* estimate {beta_star:.6g}")
        return sol

    # ------------------------------------------------------------------
    # solve / continuation
    # ------------------------------------------------------------------

    def run_solve(self, epsilon: Optional[float] = None) -> Tuple[ScalarField, SolveReport, ScalarField, SolveReport]:
        cfg = self.config
        prm = cfg.params(epsilon)
        ctx = self._cutoff()
        logger.info(f"Step 1/2: multi-start minimization at eps={prm.epsilon:g}")
        best = multi_start_minimize(
            self.group, self.grid, prm, ctx, cfg.solver.restarts, cfg.seed, self.scheduler,
            tol=cfg.schedule.tolerance, max_iter=cfg.solver.max_iter,
        )
        u0, rep0 = best.field, best.report
        logger.info("Step 2/2: mountain pass on the truncated functional")
        tf = build_truncated(self.group, self.grid, prm, ctx, u0)
        u1, rep1 = mountain_pass_with_rim(
            tf, u0, cfg.solver.path_points, seed=cfg.seed, scheduler=self.scheduler,
            rim_directions=cfg.solver.rim_directions, tol=cfg.schedule.tolerance,
        )
        rep1.m1_estimate = rep0.m1_estimate
        write_table(self._path("solve.csv"), [rep0.as_row(), rep1.as_row()], SOLVE_COLUMNS, self.hash)
        write_field(self._path("u0.csv"), u0, self.hash, "u0")
        write_field(self._path("u1.csv"), u1, self.hash, "u1")
        return u0, rep0, u1, rep1

    def run_continuation(self, ctx: Optional[CutoffContext] = None) -> ContinuationResult:
        cfg = self.config
        schedule = ContinuationSchedule.geometric(cfg.schedule.eps0, cfg.schedule.stages, cfg.schedule.tolerance)
        result = run_continuation(
            self.group,
            self.grid,
            cfg.params(),
            schedule,
            ctx=ctx or self._cutoff(),
            restarts=cfg.solver.restarts,
            seed=cfg.seed,
            path_points=cfg.solver.path_points,
            max_iter=cfg.solver.max_iter,
            rim_directions=cfg.solver.rim_directions,
            scheduler=self.scheduler,
        )
        write_table(self._path("stages.csv"), [s.as_row() for s in result.stages], STAGE_COLUMNS, self.hash)
        write_field(self._path("u0.csv"), result.u0, self.hash, "u0")
        write_field(self._path("u1.csv"), result.u1, self.hash, "u1")
        self._write_free_boundary(result)
        return result

    def _write_free_boundary(self, result: ContinuationResult) -> None:
        rows: List[Dict[str, Any]] = []
        ndim = self.grid.ndim
        for branch, fb in (("u0", result.free_boundary_u0), ("u1", result.free_boundary_u1)):
            for k in range(fb.num_cells):
                row: Dict[str, Any] = {"branch": branch}
                row.update({f"x{i + 1}": fb.location[k, i] for i in range(ndim)})
                row.update({f"n{i + 1}": fb.normal[k, i] for i in range(ndim)})
                row["grad_plus_sq"] = fb.grad_plus_sq[k]
                row["grad_minus_sq"] = fb.grad_minus_sq[k]
                rows.append(row)
        columns = ["branch"] + [f"x{i + 1}" for i in range(ndim)] + [f"n{i + 1}" for i in range(ndim)]
        write_table(self._path("free_boundary.csv"), rows, columns + ["grad_plus_sq", "grad_minus_sq"], self.hash)

    # ------------------------------------------------------------------
    # oracle
    # ------------------------------------------------------------------

    def run_oracle(self, nodes: int = ORACLE_NODES) -> Dict[str, Any]:
        cfg = self.config
        if cfg.group != "euclid1":
            raise InvalidArgumentError(f"The shooting oracle is one-dimensional; group is {cfg.group}")
        prm = cfg.params(cfg.eps_list()[-1])
        length = self.grid.box_hi[0] - self.grid.box_lo[0]
        summary: Dict[str, Any] = {}
        if prm.beta > 0.0:
            singular = shoot_singular(prm.beta, prm.delta, nodes, length)
            write_profile(self._path("oracle_singular.csv"), singular.x, {"u_beta": singular.u}, self.hash)
            summary["singular_max"] = singular.max_value
            summary["singular_self_convergence"] = singular.self_convergence
        if prm.lam > 0.0:
            u0, u1 = shoot_free_boundary(prm, nodes, length)
            write_profile(self._path("oracle_pair.csv"), u0.x, {"u0": u0.u, "u1": u1.u}, self.hash)
            summary.update(
                {
                    "u0_crossings": list(u0.crossings),
                    "u1_crossings": list(u1.crossings),
                    "E_u0": oracle_energy(prm, u0),
                    "E_u1": oracle_energy(prm, u1),
                    "jump_u0": u0.jump_deviation(),
                    "jump_u1": u1.jump_deviation(),
                }
            )
        write_json(self._path("oracle.json"), summary)
        return summary

    # ------------------------------------------------------------------
    # sweep
    # ------------------------------------------------------------------

    def _lambda_grid(self) -> np.ndarray:
        sw = self.config.sweep
        if sw.log_spacing and sw.lambda_min > 0.0:
            return np.geomspace(sw.lambda_min, sw.lambda_max, sw.count)
        return np.linspace(sw.lambda_min, sw.lambda_max, sw.count)

    def run_sweep(self) -> Dict[str, Any]:
        """m1 over a lambda grid (per beta), the lambda* bracket, beta* and a pair check at 2 * bracket top."""
        cfg = self.config
        base = cfg.params(cfg.eps_list()[-1])
        eig = principal_eigenpair(self.group, self.grid, tol=cfg.solver.eigen_tol)
        betas = cfg.sweep.betas or [base.beta]
        level = -self.grid.volume
        rows, brackets = [], []
        for beta in betas:
            prm = base.with_beta(beta)
            beta_star = beta_star_estimate(prm, eig)
            ctx = build_cutoff(self.group, self.grid, prm)
            lams = self._lambda_grid()
            m1s = []
            for lam in lams:
                m1 = estimate_m1(self.group, self.grid, prm.with_lambda(lam), ctx, cfg.solver.restarts, cfg.seed, self.scheduler)
                m1s.append(m1)
                rows.append({"beta": beta, "lambda": lam, "m1": m1, "below": m1 < level, "beta_star": beta_star})
            bracket = self._bracket(prm, ctx, lams, np.asarray(m1s), level)
            bracket["beta"] = beta
            bracket["beta_star"] = beta_star
            brackets.append(bracket)
        write_table(self._path("sweep.csv"), rows, ["beta", "lambda", "m1", "below", "beta_star"], self.hash)
        columns = ["beta", "beta_star", "lambda_lo", "lambda_hi", "pair_lambda", "E_u0", "E_u1", "sup_distance"]
        write_table(self._path("sweep_bracket.csv"), brackets, columns, self.hash)
        return {"rows": rows, "brackets": brackets}

    def _bracket(self, prm, ctx, lams: np.ndarray, m1s: np.ndarray, level: float) -> Dict[str, Any]:
        nan = float("nan")
        out: Dict[str, Any] = {"lambda_lo": nan, "lambda_hi": nan, "pair_lambda": nan, "E_u0": nan, "E_u1": nan, "sup_distance": nan}
        below = np.flatnonzero(m1s < level)
        if below.size == 0:
            logger.warning("m1 never crosses -H(Omega) on the sweep grid")
            return out
        k = int(below[0])
        if k == 0:
            out["lambda_lo"], out["lambda_hi"] = 0.0, float(lams[0])
        else:
            cfg = self.config
            lo, hi = locate_lambda_star(
                self.group, self.grid, prm, ctx, float(lams[k - 1]), float(lams[k]),
                rel_tol=cfg.sweep.bracket_rel_tol, restarts=cfg.solver.restarts, seed=cfg.seed, scheduler=self.scheduler,
            )
            out["lambda_lo"], out["lambda_hi"] = lo, hi
        pair_lambda = 2.0 * out["lambda_hi"]
        out["pair_lambda"] = pair_lambda
        try:
            pair = prm.with_lambda(pair_lambda)
            solver = self.config.solver
            best = multi_start_minimize(
                self.group, self.grid, pair, ctx, solver.restarts, self.config.seed, self.scheduler,
                max_iter=solver.max_iter,
            )
            tf = build_truncated(self.group, self.grid, pair, ctx, best.field)
            u1, rep1 = mountain_pass_with_rim(
                tf, best.field, solver.path_points, seed=self.config.seed, rim_directions=solver.rim_directions
            )
            out["E_u0"], out["E_u1"] = best.report.energy_exact, rep1.energy_exact
            out["sup_distance"] = float(np.max(np.abs(best.field.values - u1.values)))
        except (NoSolutionError, GeometryFailureError) as exc:
            logger.warning(f"Pair diagnostics at lambda={pair_lambda:g} failed: {exc}")
        return out

    # ------------------------------------------------------------------
    # verify
    # ------------------------------------------------------------------

    def run_verify(self) -> InvariantAudit:
        """Operator, auxiliary and continuation invariants on the configured instance."""
        cfg = self.config
        audit = InvariantAudit("verify")
        g, grid = self.group, self.grid
        prm = cfg.params()
        rng = np.random.default_rng(cfg.seed)
        steps = 4

        logger.info(f"Step 1/{steps}: operator identities")
        op = assemble_sub_laplacian(g, grid)
        worst = 0.0
        for _ in range(100):
            u = rng.standard_normal(grid.num_nodes)
            v = rng.standard_normal(grid.num_nodes)
            lhs = inner(op.apply_full(u), v)
            rhs = op.energy_inner(u, v)
            worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1.0))
        audit.check("summation_by_parts", worst, max=1e-11)
        sym = abs(op.matrix - op.matrix.T).max() if op.size else 0.0
        audit.check("operator_symmetry", float(sym), max=1e-12 * float(abs(op.matrix).max()))

        logger.info(f"Step 2/{steps}: eigenpair and singular auxiliary solution")
        eig = principal_eigenpair(g, grid, tol=cfg.solver.eigen_tol)
        audit.check("lambda1_positive", eig.lambda1, min=0.0)
        if g.is_euclidean:
            exact = sum(np.pi**2 / (hi - lo) ** 2 for lo, hi in zip(grid.box_lo, grid.box_hi))
            audit.check("lambda1_vs_classical", abs(eig.lambda1 - exact) / exact, max=1e-2)
        ctx = self._cutoff()
        if prm.beta > 0.0:
            beta_star = beta_star_estimate(prm, eig)
            audit.check("beta_below_beta_star", prm.beta, max=beta_star)
        audit.check("gradient_fidelity", self._gradient_fidelity(EpsEnergy(g, grid, prm, ctx), rng), max=1e-6)

        logger.info(f"Step 3/{steps}: eps-continuation")
        result = self.run_continuation(ctx)
        self._audit_continuation(audit, result, ctx)

        logger.info(f"Step 4/{steps}: writing the audit table")
        write_table(self._path("verify.csv"), audit.rows(), ["check", "value", "rule", "passed", "message"], self.hash)
        return audit

    @staticmethod
    def _gradient_fidelity(functional: EpsEnergy, rng: np.random.Generator, samples: int = 20) -> float:
        """Worst relative gap between <grad, v> and a central difference of the energy."""
        worst = 0.0
        n = functional.op.size
        for _ in range(samples):
            x = rng.uniform(0.0, 2.0, n)
            v = rng.standard_normal(n)
            t = 1e-6 * max(1.0, float(np.max(np.abs(x)))) / max(float(np.max(np.abs(v))), 1e-300)
            fd = (functional.energy(x + t * v) - functional.energy(x - t * v)) / (2.0 * t)
            exact = inner(functional.gradient(x), v)
            worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-8))
        return worst

    def _audit_continuation(self, audit: InvariantAudit, result: ContinuationResult, ctx: CutoffContext) -> None:
        cfg = self.config
        g, grid = self.group, self.grid
        last = result.stages[-1]
        prm = cfg.params(last.eps)
        u0, u1 = result.u0, result.u1
        functional = EpsEnergy(g, grid, prm, ctx)
        tf = build_truncated(g, grid, prm, ctx, u0)

        audit.record(ordering_check(u1, u0))
        audit.record(level_set_report(grid, u0, u1))
        audit.record(critical_point_certificate(functional, u0, cfg.solver.certificate_directions, seed=cfg.seed))
        audit.record(critical_point_certificate(tf, u1, cfg.solver.certificate_directions, seed=cfg.seed + 1))
        if prm.beta > 0.0:
            audit.record(comparison_check(u0, ctx.u_beta))
            audit.record(comparison_check(u1, ctx.u_beta))
            audit.record(barrier_check(g, grid, prm, u0, ctx.u_beta))
            residual = functional.gradient(u0.interior)
            audit.record(radon_measure_check(g, grid, prm, u0, cfg.solver.radon_trials, cfg.seed, residual=residual))
        if len(result.stages) >= 3:
            audit.record(energy_sandwich_check(g, grid, prm, u0, result.stages))
            audit.record(stage_convergence_check(result.stages))
        audit.record(energy_separation_check(g, grid, prm, u0, u1))

        m1 = min(s.E_u0 for s in result.stages)
        bound = m1 + 2.0 * prm.lam * prm.epsilon * prm.a0 * grid.volume
        audit.check("minimizer_energy_bound", last.E_eps_u0 - bound, max=1e-9 * max(1.0, abs(bound)))
        audit.check("minimizer_energy_bound_negative", bound, max=0.0)
        level_bound = 0.5 * h1_seminorm_sq(g, grid, u0) + grid.volume
        audit.check("mountain_pass_level_bound", last.E_eps_u1 - level_bound, max=0.0)
        audit.check("rim_m2_positive", last.m2_estimate, min=1e-300)
        if last.fb_cells:
            audit.check("jump_mean", last.jump_mean, max=0.1)
        write_json(self._path("verify.json"), {"config_hash": self.hash, "checks": audit.rows()})
