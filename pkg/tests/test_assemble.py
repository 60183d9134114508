import numpy as np
import pytest
import scipy.sparse.linalg as spla

from multifem.assemble import (
    DirichletBC, NotSinglescaleError, apply_bc, assemble, load_matrix_market,
    save_matrix_market,
)
from multifem.forms import (
    Analytic, Constant, Measure, Trace, grad, inner, TestFunction,
    TrialFunction,
)
from multifem.mesh import Mesh, facet_submesh, near, unit_square_mesh
from multifem.space import build_space, interpolate, lagrange, rt0, vector_lagrange


def reference_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                np.array([[0, 1, 2]]))


class TestHandComputedMatrices:
    def test_p1_mass_on_reference_triangle(self):
        # oracle: int lambda_i lambda_j = area (1 + delta_ij) / 12
        V = build_space(reference_triangle(), lagrange(1))
        u, v = TrialFunction(V), TestFunction(V)
        M = assemble(inner(u, v) * Measure(V.mesh)).toarray()
        oracle = 0.5 * (np.ones((3, 3)) + np.eye(3)) / 12.0
        assert np.abs(M - oracle).max() < 1e-15

    def test_p1_stiffness_on_reference_triangle(self):
        # constant barycentric gradients integrated by hand
        V = build_space(reference_triangle(), lagrange(1))
        u, v = TrialFunction(V), TestFunction(V)
        K = assemble(inner(grad(u), grad(v)) * Measure(V.mesh)).toarray()
        oracle = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
        assert np.abs(K - oracle).max() < 1e-15

    def test_unit_functional(self):
        mesh = unit_square_mesh(5, 4)
        val = assemble(Constant(1.0) * Measure(mesh))
        assert abs(val - 1.0) < 1e-12

    def test_stiffness_matches_independent_gradient_formula(self):
        mesh = unit_square_mesh(3, 2)
        V = build_space(mesh, lagrange(1))
        u, v = TrialFunction(V), TestFunction(V)
        K = assemble(inner(grad(u), grad(v)) * Measure(mesh)).toarray()
        oracle = np.zeros((V.dim, V.dim))
        for cell in mesh.cells:
            p = mesh.vertices[cell]
            d = np.array([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
            e1, e2 = p[1] - p[0], p[2] - p[0]
            a2 = e1[0] * e2[1] - e1[1] * e2[0]
            grads = np.column_stack([-d[:, 1], d[:, 0]]) / a2
            oracle[np.ix_(cell, cell)] += abs(a2) / 2 * grads @ grads.T
        assert np.abs(K - oracle).max() < 1e-13


class TestAssemblyProperties:
    def test_reduced_form_rejected(self):
        mesh = unit_square_mesh(2, 2)
        gamma = facet_submesh(mesh, lambda p: near(p[0], 0))
        V = build_space(mesh, lagrange(1))
        Q = build_space(gamma, lagrange(1))
        u, q = TrialFunction(V), TestFunction(Q)
        with pytest.raises(NotSinglescaleError):
            assemble(inner(Trace(u, gamma), q) * Measure(gamma))

    def test_cell_order_independence(self):
        mesh = unit_square_mesh(3, 3)
        rng = np.random.default_rng(11)
        perm = rng.permutation(mesh.num_cells)
        shuffled = Mesh(mesh.vertices.copy(), mesh.cells[perm])
        for m in (mesh, shuffled):
            pass
        mats = []
        for m in (mesh, shuffled):
            V = build_space(m, lagrange(1))
            u, v = TrialFunction(V), TestFunction(V)
            form = inner(grad(u), grad(v)) * Measure(m) + inner(u, v) * Measure(m)
            mats.append(assemble(form).toarray())
        assert np.abs(mats[0] - mats[1]).max() < 1e-13

    def test_mass_matrix_spd(self):
        mesh = unit_square_mesh(3, 3)
        V = build_space(mesh, lagrange(2))
        u, v = TrialFunction(V), TestFunction(V)
        M = assemble(inner(u, v) * Measure(mesh)).toarray()
        assert np.abs(M - M.T).max() < 1e-15
        assert np.linalg.eigvalsh(M).min() > 0

    def test_galerkin_l2_convergence_rate(self):
        # reaction-diffusion with natural conditions: rate >= 1.9 in L2
        from multifem.manufactured import babuska_data
        bd = babuska_data()
        errs = []
        for n in (8, 16, 32):
            mesh = unit_square_mesh(n, n)
            V = build_space(mesh, lagrange(1))
            u, v = TrialFunction(V), TestFunction(V)
            dx = Measure(mesh)
            A = assemble(inner(grad(u), grad(v)) * dx + inner(u, v) * dx)
            b = assemble(inner(Analytic(bd["f"], degree=3), v) * dx)
            x = spla.spsolve(A.tocsc(), b)
            e = x - interpolate(V, bd["u"]).coefficients
            M = assemble(inner(u, v) * dx)
            errs.append(np.sqrt(e @ (M @ e)))
        rates = [np.log2(errs[k - 1] / errs[k]) for k in (1, 2)]
        assert min(rates) >= 1.9


class TestQuadratureDegreeEstimate:
    def test_p2_mass_exact(self):
        # degree-4 integrand must be integrated exactly by the estimate
        mesh = unit_square_mesh(2, 2)
        V = build_space(mesh, lagrange(2))
        u, v = TrialFunction(V), TestFunction(V)
        M = assemble(inner(u, v) * Measure(mesh))
        ones = np.ones(V.dim)
        assert abs(ones @ (M @ ones) - 1.0) < 1e-13

    def test_degree_override(self):
        mesh = unit_square_mesh(2, 2)
        V = build_space(mesh, lagrange(1))
        u, v = TrialFunction(V), TestFunction(V)
        exact = assemble(inner(u, v) * Measure(mesh)).toarray()
        low = assemble(inner(u, v) * Measure(mesh), quad_degree=1).toarray()
        assert np.abs(exact - low).max() > 1e-6   # under-integration must differ


class TestDirichletBC:
    def setup_method(self):
        self.mesh = unit_square_mesh(4, 4)
        self.V = build_space(self.mesh, lagrange(1))
        u, v = TrialFunction(self.V), TestFunction(self.V)
        dx = Measure(self.mesh)
        self.A = assemble(inner(grad(u), grad(v)) * dx)
        self.b = assemble(inner(Constant(1.0), v) * dx)
        self.bc = DirichletBC(self.V, lambda p: p[0], lambda p: near(p[0] * (1 - p[0]), 0))

    def test_symmetric_application_preserves_symmetry(self):
        A, _ = apply_bc(self.A, self.b, [self.bc], symmetric=True)
        d = A - A.T
        assert np.abs(d.toarray()).max() <= 1e-14

    def test_solution_attains_bc_values(self):
        A, b = apply_bc(self.A, self.b, [self.bc], symmetric=True)
        x = spla.spsolve(A.tocsc(), b)
        assert np.abs(x[self.bc.dofs] - self.bc.values).max() < 1e-14

    def test_zero_bc_symmetric_equals_nonsymmetric(self):
        bc0 = DirichletBC(self.V, 0.0, lambda p: near(p[0] * (1 - p[0]), 0))
        As, bs = apply_bc(self.A, self.b, [bc0], symmetric=True)
        An, bn = apply_bc(self.A, self.b, [bc0], symmetric=False)
        xs = spla.spsolve(As.tocsc(), bs)
        xn = spla.spsolve(An.tocsc(), bn)
        assert np.abs(xs - xn).max() < 1e-11

    def test_inhomogeneous_symmetric_solution_correct(self):
        As, bs = apply_bc(self.A, self.b, [self.bc], symmetric=True)
        An, bn = apply_bc(self.A, self.b, [self.bc], symmetric=False)
        xs = spla.spsolve(As.tocsc(), bs)
        xn = spla.spsolve(An.tocsc(), bn)
        assert np.abs(xs - xn).max() < 1e-11

    def test_rt0_bc_resolves_edge_dofs(self):
        V = build_space(self.mesh, rt0())
        bc = DirichletBC(V, (0.0, 0.0), lambda p: near(p[1] * (1 - p[1]), 0))
        mids = V.edge_midpoints[bc.dofs]
        assert len(bc.dofs) == 8
        assert np.all((np.abs(mids[:, 1]) < 1e-12) | (np.abs(mids[:, 1] - 1) < 1e-12))

    def test_mismatched_space_rejected(self):
        other = build_space(self.mesh, lagrange(2))
        bc = DirichletBC(other, 0.0, lambda p: near(p[0], 0))
        with pytest.raises(ValueError):
            apply_bc(self.A, self.b, [bc])


def test_matrix_market_roundtrip(tmp_path):
    mesh = unit_square_mesh(2, 2)
    V = build_space(mesh, lagrange(1))
    u, v = TrialFunction(V), TestFunction(V)
    A = assemble(inner(grad(u), grad(v)) * Measure(mesh))
    p = tmp_path / "a.mtx"
    save_matrix_market(p, A)
    back = load_matrix_market(p)
    assert np.abs((A - back).toarray()).max() == 0.0
    vec = np.linspace(0, 1, V.dim)
    pv = tmp_path / "b.mtx"
    save_matrix_market(pv, vec)
    assert np.abs(load_matrix_market(pv) - vec).max() == 0.0
