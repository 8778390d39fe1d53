"""High-level drivers shared by the CLI and the verification suite."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from .assembly import assemble_global, assemble_state_only, condense
from .mesh import build_uniform_square
from .postproc import (ConvergenceTable, error_against_exact,
                       error_against_reference)
from .problems import ProblemSpec, catalog
from .solver import DiscreteSolution, solve_condensed, solve_monolithic
from .spaces import TraceVariant, build_spaces


def _spec(problem):
    return problem if isinstance(problem, ProblemSpec) else catalog(problem)


def solve_control(method, k, level, problem,
                  solver_path="condensed") -> DiscreteSolution:
    """Solve the coupled optimality system at one level."""
    spec = _spec(problem)
    variant = TraceVariant.from_name(method) if isinstance(method, str) else method
    spaces = build_spaces(build_uniform_square(level), variant, k)
    if solver_path == "monolithic":
        bundle = solve_monolithic(assemble_global(spaces, spec))
    else:
        bundle = solve_condensed(condense(spaces, spec))
    return DiscreteSolution(spaces=spaces, spec=spec, bundle=bundle)


def solve_state(method, k, level, problem, g=None) -> DiscreteSolution:
    """Solve the single-PDE system with prescribed boundary trace."""
    spec = _spec(problem)
    variant = TraceVariant.from_name(method) if isinstance(method, str) else method
    spaces = build_spaces(build_uniform_square(level), variant, k)
    bundle = solve_monolithic(assemble_state_only(spaces, spec, g=g))
    return DiscreteSolution(spaces=spaces, spec=spec, bundle=bundle)


def convergence_study(method, k, levels, reference_level, problem,
                      solver_path="condensed", threads=0) -> ConvergenceTable:
    """Errors/orders of levels against a fine reference solution.

    The reference is computed once with the same method and degree on
    ``reference_level``; the per-level solves may run in at most
    ``threads`` worker threads (0 = serial), results are ordered by
    level either way.
    """
    levels = list(levels)
    if sorted(levels) != levels or len(set(levels)) != len(levels):
        raise ValueError("levels must be strictly increasing")
    if reference_level <= max(levels):
        raise ValueError("reference level must exceed every study level")
    spec = _spec(problem)
    ref = solve_control(method, k, reference_level, spec, solver_path)

    def run(level):
        sol = solve_control(method, k, level, spec, solver_path)
        return error_against_reference(sol, ref)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_level = list(pool.map(run, levels))
    else:
        per_level = [run(lv) for lv in levels]

    names = ("q", "p", "y", "z", "u")
    errors = {n: [res[n] for res in per_level] for n in names}
    h = [build_uniform_square(lv).h_global for lv in levels]
    return ConvergenceTable.from_errors(levels, h, errors)


def mms_study(method, k, levels, problem="mms-trig") -> ConvergenceTable:
    """Errors/orders of the state-only solver against a manufactured state."""
    levels = list(levels)
    spec = _spec(problem)
    if spec.mode != "state_only" or spec.exact_y is None:
        raise ValueError("mms study needs a state-only problem with an "
                         "exact solution")
    errors = {"q": [], "y": []}
    h = []
    for lv in levels:
        sol = solve_state(method, k, lv, spec)
        res = error_against_exact(sol)
        errors["q"].append(res["q"])
        errors["y"].append(res["y"])
        h.append(sol.spaces.mesh.h_global)
    return ConvergenceTable.from_errors(levels, h, errors)
