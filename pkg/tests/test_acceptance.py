"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one ``ACCEPTANCE <n> ...: PASS`` line on success (run
pytest with ``-s`` or ``-v`` to see them).  The convergence criteria
compare levels 1..4 against a level-7 reference computed with the same
method and degree; tolerance bands account for the smaller reference
mesh.
"""

import json

import numpy as np
import pytest
import scipy.sparse as sp

from edgctl.assembly import (assemble_global, condense,
                             operator_matrices_b1_b2)
from edgctl.mesh import build_uniform_square
from edgctl.problems import catalog
from edgctl.solver import solve_condensed, solve_monolithic
from edgctl.spaces import TraceVariant, build_spaces, dof_report
from edgctl.workflows import convergence_study, mms_study

import oracles

ALL_VARIANTS = (TraceVariant.EDG, TraceVariant.IEDG, TraceVariant.HDG)

_STUDIES = {}


def study(method, k, problem):
    key = (method, k, problem)
    if key not in _STUDIES:
        _STUDIES[key] = convergence_study(method, k, [1, 2, 3, 4], 7, problem)
    return _STUDIES[key]


def _report(n, label):
    print(f"ACCEPTANCE {n:2d} {label}: PASS")


def test_01_structural_identities():
    spaces = build_spaces(build_uniform_square(1), TraceVariant.EDG, 1)
    spec = catalog("example1-high")
    B1, B2 = operator_matrices_b1_b2(spaces, spec, exactness=20)
    dim = B1.shape[0]
    rng = np.random.default_rng(2024)
    vecs = rng.standard_normal((200, dim))

    got1 = np.einsum("ni,ni->n", vecs, (B1 @ vecs.T).T)
    got2 = np.einsum("ni,ni->n", vecs, (B2 @ vecs.T).T)
    want1 = oracles.energy_quadrature(spaces, spec, vecs, 1, exactness=24)
    want2 = oracles.energy_quadrature(spaces, spec, vecs, 2, exactness=24)
    assert np.abs(got1 - want1).max() <= 1e-10 * np.abs(want1).max()
    assert np.abs(got2 - want2).max() <= 1e-10 * np.abs(want2).max()

    d = np.concatenate([np.ones(spaces.V.dim), -np.ones(spaces.W.dim),
                        -np.ones(spaces.M_o.dim)])
    D = sp.diags(d)
    dev = sp.csr_matrix(B2 - D @ B1.T @ D)
    scale = max(np.abs(B1.data).max(), np.abs(B2.data).max())
    maxdev = np.abs(dev.data).max() if dev.nnz else 0.0
    assert maxdev <= 1e-12 * scale
    _report(1, "energy and adjoint identities")


def test_02_wellposedness_sweep():
    spec = catalog("example1-high")
    for variant in ALL_VARIANTS:
        for k in (0, 1):
            for level in (1, 2, 3, 4):
                spaces = build_spaces(build_uniform_square(level), variant, k)
                bundle = solve_monolithic(assemble_global(spaces, spec))
                assert bundle.residual_rel < 1e-9, (variant, k, level)
    spaces = build_spaces(build_uniform_square(2), TraceVariant.EDG, 1)
    zero = solve_monolithic(assemble_global(spaces, catalog("zero")))
    for name in ("q", "y", "p", "z", "yhat_o", "zhat_o", "u"):
        assert np.abs(zero.block(name)).max() < 1e-12
    _report(2, "monolithic solvability sweep")


def test_03_condensation_equivalence():
    spec = catalog("example1-high")
    for variant in ALL_VARIANTS:
        spaces = build_spaces(build_uniform_square(3), variant, 1)
        bm = solve_monolithic(assemble_global(spaces, spec))
        bc = solve_condensed(condense(spaces, spec))
        for name in ("q", "y", "p", "z", "yhat_o", "zhat_o", "u"):
            a, b = bm.block(name), bc.block(name)
            assert np.linalg.norm(a - b) <= \
                1e-9 * max(np.linalg.norm(a), 1e-30), (variant, name)
    _report(3, "condensed solution matches monolithic")


def test_04_dof_reduction_ordering():
    for level in range(1, 6):
        mesh = build_uniform_square(level)
        for k in (0, 1):
            sizes = {v: dof_report(build_spaces(mesh, v, k))["condensed"]
                     for v in ALL_VARIANTS}
            assert sizes[TraceVariant.EDG] < sizes[TraceVariant.IEDG], \
                (level, k)
            assert sizes[TraceVariant.IEDG] <= sizes[TraceVariant.HDG], \
                (level, k)
    _report(4, "condensed dof ordering EDG < IEDG <= HDG")


@pytest.mark.parametrize("method", ["edg", "iedg"])
def test_05_high_regularity_rates_k1(method):
    table = study(method, 1, "example1-high")
    u_order = table.final_order("u")
    z_order = table.final_order("z")
    q_order = table.final_order("q")
    assert 1.25 <= u_order <= 1.6, u_order
    assert z_order >= 2.5, z_order
    assert 0.85 <= q_order <= 1.15, q_order
    _report(5, f"high-regularity orders, k=1, {method} "
               f"(u {u_order:.2f}, z {z_order:.2f}, q {q_order:.2f})")


@pytest.mark.parametrize("method", ["edg", "iedg"])
def test_06_low_regularity_rates_k1(method):
    table = study(method, 1, "example1-low")
    u_order = table.final_order("u")
    q_order = table.final_order("q")
    assert 0.65 <= u_order <= 1.0, u_order
    assert 0.25 <= q_order <= 0.55, q_order
    _report(6, f"low-regularity orders, k=1, {method} "
               f"(u {u_order:.2f}, q {q_order:.2f})")


@pytest.mark.parametrize("method", ["edg", "iedg"])
@pytest.mark.parametrize("problem", ["example1-high", "example1-low"])
def test_07_k0_sanity(method, problem):
    table = study(method, 0, problem)
    for name in table.quantities:
        errs = table.errors[name]
        assert all(errs[i] > errs[i + 1] for i in range(len(errs) - 1)), \
            (name, errs)
    u_order = table.final_order("u")
    assert u_order >= 0.5, u_order
    _report(7, f"k=0 sanity, {method}, {problem} (u {u_order:.2f})")


def test_08_mms_state_only_rates():
    t1 = mms_study("edg", 1, [2, 3, 4, 5])
    order1 = t1.final_order("y")
    assert 2.3 <= order1 <= 3.2, order1
    t0 = mms_study("edg", 0, [2, 3, 4, 5])
    order0 = t0.final_order("y")
    assert order0 >= 1.3, order0
    _report(8, f"manufactured-solution orders (k=1 {order1:.2f}, "
               f"k=0 {order0:.2f})")


@pytest.mark.parametrize("method", ["edg", "iedg"])
def test_09_convection_dominated_run(method, tmp_path, capsys):
    from edgctl.cli import main
    outdir = tmp_path / method
    code = main(["solve", "--method", method, "--degree", "1", "--level",
                 "6", "--problem", "example2", "--sample-grid", "256",
                 "-o", str(outdir)])
    out = capsys.readouterr().out
    assert code == 0
    report = json.loads(out.strip().splitlines()[-1])
    assert report["sample_finite"] is True
    assert np.isfinite(report["sample_min"])
    assert np.isfinite(report["sample_max"])
    field = (outdir / "field_y.csv").read_text().strip().splitlines()
    vals = np.array([float(ln.split(",")[2]) for ln in field[1:]])
    assert vals.shape == (256 * 256,)
    assert np.all(np.isfinite(vals))
    _report(9, f"convection-dominated solve, {method} "
               f"(y in [{report['sample_min']:.3f}, "
               f"{report['sample_max']:.3f}])")


def test_10_projection_rates():
    from edgctl.postproc import convergence_orders, l2_project
    from edgctl.fe_basis import SimplexBasis, triangle_quadrature, \
        assembly_exactness

    def sin2(p):
        p = np.asarray(p, dtype=float)
        return np.sin(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])

    for k in (0, 1):
        errs = []
        for level in (2, 3, 4, 5):
            spaces = build_spaces(build_uniform_square(level),
                                  TraceVariant.EDG, k)
            coeffs = l2_project(sin2, spaces.W)
            rule = triangle_quadrature(assembly_exactness(k) + 4)
            mesh = spaces.mesh
            J, _, detJ, v0 = mesh.jacobians()
            qp = (v0[:, None, :]
                  + rule.points[None, :, 0, None] * J[:, None, :, 0]
                  + rule.points[None, :, 1, None] * J[:, None, :, 1])
            vals = SimplexBasis(k + 1).eval(rule.points)
            ph = np.einsum("ti,iq->tq", coeffs[spaces.W.entity_dofs], vals)
            errs.append(float(np.sqrt(np.sum(
                (ph - sin2(qp)) ** 2 * rule.weights[None, :]
                * detJ[:, None]))))
        order = convergence_orders(errs)[-1]
        assert abs(order - (k + 2)) <= 0.2, (k, order)
    _report(10, "projection rates k+2")
