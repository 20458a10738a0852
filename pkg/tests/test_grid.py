import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeid.grid import (
    ScalarField,
    StructuredGrid,
    VectorField,
    build_grid,
    prolongate,
    refine,
    restrict_full_weighting,
)


class TestBuildGrid:
    def test_paper_grid_dimensions(self):
        g = build_grid(3.0, 1.0, 300, 100)
        assert g.n_nodes == 301 * 101
        assert g.n_cells == 300 * 100
        assert g.dx == pytest.approx(0.01)
        assert g.dy == pytest.approx(0.01)

    def test_smallest_grid(self):
        g = build_grid(1.0, 1.0, 1, 1)
        assert g.n_nodes == 4
        assert g.n_cells == 1
        assert len(g.boundary_facets()) == 4

    def test_counting(self):
        g = build_grid(2.0, 1.0, 4, 2)
        assert g.n_nodes == 15
        assert g.n_cells == 8

    @pytest.mark.parametrize("lx,ly,nx,ny", [(-1, 1, 2, 2), (1, 0, 2, 2), (1, 1, 0, 2), (1, 1, 2, 0)])
    def test_invalid_arguments(self, lx, ly, nx, ny):
        with pytest.raises(ValueError):
            build_grid(lx, ly, nx, ny)

    def test_boundary_normals_are_unit_axis_vectors(self):
        g = build_grid(2.0, 1.0, 4, 2)
        facets = g.boundary_facets()
        assert len(facets) == 2 * (4 + 2)
        for f in facets:
            assert f.normal in {(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)}

    def test_node_coords_reproducible(self):
        a = build_grid(3.0, 1.0, 30, 10).node_coords()
        b = build_grid(3.0, 1.0, 30, 10).node_coords()
        assert a.tobytes() == b.tobytes()


class TestRefine:
    def test_factor_two(self):
        g = build_grid(2.0, 1.0, 4, 2)
        f = refine(g)
        assert (f.nx, f.ny) == (8, 4)
        assert (f.lx, f.ly) == (2.0, 1.0)
        assert f.level == g.level + 1

    def test_twice(self):
        g = build_grid(3.0, 1.0, 30, 10).refined(2)
        assert (g.nx, g.ny) == (120, 40)

    def test_cell_size_halves(self):
        g = build_grid(2.0, 1.0, 4, 2)
        f = refine(g)
        assert f.dx == pytest.approx(g.dx / 2)
        assert f.dy == pytest.approx(g.dy / 2)

    def test_parent_nodes_are_child_nodes(self):
        g = build_grid(2.0, 1.0, 3, 2)
        f = refine(g)
        coarse = {tuple(p) for p in np.round(g.node_coords(), 12)}
        fine = {tuple(p) for p in np.round(f.node_coords(), 12)}
        assert coarse <= fine


class TestFields:
    def test_coeffs_length_checked(self):
        g = build_grid(1.0, 1.0, 2, 2)
        with pytest.raises(ValueError):
            ScalarField(g, np.zeros(5))

    def test_immutable(self):
        g = build_grid(1.0, 1.0, 2, 2)
        f = ScalarField(g, np.zeros(9))
        with pytest.raises(ValueError):
            f.coeffs[0] = 1.0

    def test_bilinear_evaluation_at_nodes(self, rng):
        g = build_grid(2.0, 1.0, 4, 2)
        vals = rng.standard_normal(g.n_nodes)
        f = ScalarField(g, vals)
        assert f(g.node_coords()) == pytest.approx(vals)

    def test_evaluation_bounded_by_coeff_range(self, rng):
        g = build_grid(2.0, 1.0, 5, 3)
        f = ScalarField(g, rng.standard_normal(g.n_nodes))
        pts = rng.uniform((0, 0), (2.0, 1.0), size=(200, 2))
        vals = f(pts)
        assert vals.min() >= f.coeffs.min() - 1e-12
        assert vals.max() <= f.coeffs.max() + 1e-12

    def test_point_outside_domain_rejected(self):
        g = build_grid(1.0, 1.0, 2, 2)
        f = ScalarField(g, np.zeros(9))
        with pytest.raises(ValueError):
            f(np.array([[1.5, 0.5]]))

    def test_vector_field_shares_grid(self):
        g = build_grid(1.0, 1.0, 2, 2)
        with pytest.raises(ValueError):
            VectorField(ScalarField(g, np.zeros(9)), ScalarField(refine(g), np.zeros(25)))


class TestProlongation:
    def test_constant_preserved(self):
        g = build_grid(2.0, 1.0, 4, 2)
        f = ScalarField(g, np.ones(g.n_nodes))
        pf = prolongate(f, g.refined(2))
        assert pf.coeffs == pytest.approx(np.ones(pf.grid.n_nodes))

    def test_linear_in_x_preserved(self):
        g = build_grid(2.0, 1.0, 4, 2)
        f = ScalarField(g, g.node_coords()[:, 0])
        fine = g.refine()
        pf = prolongate(f, fine)
        assert pf.coeffs == pytest.approx(fine.node_coords()[:, 0])

    def test_unit_cell_center_value(self):
        g = build_grid(1.0, 1.0, 1, 1)
        f = ScalarField(g, [0.0, 0.0, 0.0, 1.0])
        pf = prolongate(f, g.refine())
        # independent oracle: bilinear basis at the cell center
        expected = 0.0 * 0.25 + 0.0 * 0.25 + 0.0 * 0.25 + 1.0 * 0.25
        assert pf.coeffs.reshape(3, 3)[1, 1] == pytest.approx(expected)

    def test_exact_at_shared_nodes(self, rng):
        g = build_grid(3.0, 1.0, 6, 2)
        vals = rng.standard_normal(g.n_nodes)
        pf = prolongate(ScalarField(g, vals), g.refine())
        shared = pf.coeffs.reshape(5, 13)[::2, ::2].ravel()
        assert shared.tobytes() == vals.tobytes()

    def test_non_nested_rejected(self):
        g = build_grid(2.0, 1.0, 4, 2)
        f = ScalarField(g, np.zeros(g.n_nodes))
        with pytest.raises(ValueError):
            prolongate(f, build_grid(2.0, 1.0, 6, 3))
        with pytest.raises(ValueError):
            prolongate(f, build_grid(3.0, 1.0, 8, 4))


class TestRestriction:
    def test_constant_preserved(self):
        coarse = build_grid(2.0, 1.0, 4, 2)
        fine = coarse.refined(2)
        f = ScalarField(fine, np.full(fine.n_nodes, 3.25))
        rf = restrict_full_weighting(f, coarse)
        assert rf.coeffs == pytest.approx(np.full(coarse.n_nodes, 3.25))

    def test_restrict_after_prolongate_on_linears(self):
        coarse = build_grid(2.0, 1.0, 4, 2)
        fine = coarse.refine()
        lin = ScalarField(coarse, coarse.node_coords() @ np.array([2.0, -1.0]) + 0.5)
        back = restrict_full_weighting(prolongate(lin, fine), coarse)
        assert back.coeffs == pytest.approx(lin.coeffs)

    def test_convex_weights(self, rng):
        coarse = build_grid(2.0, 1.0, 4, 2)
        fine = coarse.refine()
        vals = rng.standard_normal(fine.n_nodes)
        rf = restrict_full_weighting(ScalarField(fine, vals), coarse)
        # every coarse value is a convex combination of fine values
        assert rf.coeffs.min() >= vals.min() - 1e-12
        assert rf.coeffs.max() <= vals.max() + 1e-12


@settings(max_examples=25, deadline=None)
@given(
    nx=st.integers(1, 6),
    ny=st.integers(1, 6),
    steps=st.integers(1, 2),
    seed=st.integers(0, 2**32 - 1),
)
def test_prolongation_respects_bilinear_bounds(nx, ny, steps, seed):
    g = build_grid(1.5, 1.0, nx, ny)
    vals = np.random.default_rng(seed).standard_normal(g.n_nodes)
    pf = prolongate(ScalarField(g, vals), g.refined(steps))
    assert pf.coeffs.min() >= vals.min() - 1e-12
    assert pf.coeffs.max() <= vals.max() + 1e-12
