import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeid.fem import assemble_mass
from plumeid.grid import ScalarField, VectorField, build_grid
from plumeid.levelset import (
    DegenerateControlError,
    LevelSet,
    TransportParams,
    count_components,
    round_to_levelset,
    transport_step,
)


def cone_levelset(grid, center, radius):
    xy = grid.node_coords()
    d = np.hypot(xy[:, 0] - center[0], xy[:, 1] - center[1])
    return LevelSet(ScalarField(grid, radius - d))


class TestRounding:
    def test_affine_map_values(self):
        g = build_grid(1.0, 1.0, 3, 1)
        f = ScalarField(g, [0.0, 0.25, 0.5, 0.75, 1.0, 0.1, 0.9, 0.3])
        phi = round_to_levelset(f)
        assert phi.field.coeffs[3] == pytest.approx(0.25)

    def test_endpoints(self):
        g = build_grid(1.0, 1.0, 1, 1)
        phi = round_to_levelset(ScalarField(g, [0.2, 0.9, 0.4, 0.5]))
        assert phi.field.coeffs.min() == pytest.approx(-0.5)
        assert phi.field.coeffs.max() == pytest.approx(0.5)

    def test_constant_control_rejected(self):
        g = build_grid(1.0, 1.0, 1, 1)
        with pytest.raises(DegenerateControlError):
            round_to_levelset(ScalarField(g, [0.3, 0.3, 0.3, 0.3]))

    def test_interface_at_midrange(self):
        g = build_grid(1.0, 1.0, 1, 1)
        phi = round_to_levelset(ScalarField(g, [0.0, 1.0, 0.5, 0.5]))
        assert phi.field.coeffs[2] == pytest.approx(0.0)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    a=st.floats(0.1, 50.0),
    b=st.floats(-5.0, 5.0),
)
def test_rounding_invariant_under_positive_affine_rescaling(seed, a, b):
    g = build_grid(1.5, 1.0, 4, 3)
    vals = np.random.default_rng(seed).random(g.n_nodes)
    vals[0], vals[1] = 0.0, 1.0  # guarantee a range
    phi1 = round_to_levelset(ScalarField(g, vals))
    phi2 = round_to_levelset(ScalarField(g, a * vals + b))
    assert phi2.field.coeffs == pytest.approx(phi1.field.coeffs, abs=1e-10)


class TestTransport:
    def test_zero_gradient_is_identity(self, grid_30x10):
        phi = cone_levelset(grid_30x10, (1.5, 0.5), 0.3)
        zero = VectorField.from_arrays(
            grid_30x10, np.zeros(grid_30x10.n_nodes), np.zeros(grid_30x10.n_nodes)
        )
        out = transport_step(phi, zero, TransportParams())
        assert np.abs(out.field.coeffs - phi.field.coeffs).max() <= 1e-10

    def test_pure_diffusion_conserves_mass(self, grid_30x10):
        phi = cone_levelset(grid_30x10, (1.5, 0.5), 0.3)
        zero = VectorField.from_arrays(
            grid_30x10, np.zeros(grid_30x10.n_nodes), np.zeros(grid_30x10.n_nodes)
        )
        out = transport_step(phi, zero, TransportParams(), eps_override=0.05)
        m = assemble_mass(grid_30x10)
        ones = np.ones(grid_30x10.n_nodes)
        before = ones @ (m @ phi.field.coeffs)
        after = ones @ (m @ out.field.coeffs)
        assert abs(after - before) <= 1e-10 * abs(before) + 1e-12

    def test_constant_velocity_moves_centroid(self):
        g = build_grid(3.0, 1.0, 96, 32)
        phi = cone_levelset(g, (1.2, 0.5), 0.25)
        delta, dt = 0.05, 1.0
        psi = VectorField.from_arrays(
            g, -delta * np.ones(g.n_nodes), np.zeros(g.n_nodes)
        )  # velocity = -psi = (delta, 0)
        out = transport_step(phi, psi, TransportParams(dt=dt), eps_override=0.0)

        def centroid(ls):
            cells = ls.inside_cells()
            return ls.grid.cell_centers()[cells].mean(axis=0)

        move = centroid(out) - centroid(phi)
        assert abs(move[0] - delta * dt) <= g.dx
        assert abs(move[1]) <= g.dy

    def test_translation_commutes_up_to_discretization(self):
        # constant velocity, eps = 0: transporting a shifted cone equals
        # shifting the transported cone away from the boundary
        g = build_grid(3.0, 1.0, 60, 20)
        shift_cells = 4
        phi_a = cone_levelset(g, (1.0, 0.5), 0.2)
        phi_b = cone_levelset(g, (1.0 + shift_cells * g.dx, 0.5), 0.2)
        psi = VectorField.from_arrays(g, -0.02 * np.ones(g.n_nodes), np.zeros(g.n_nodes))
        out_a = transport_step(phi_a, psi, TransportParams(dt=1.0), eps_override=0.0)
        out_b = transport_step(phi_b, psi, TransportParams(dt=1.0), eps_override=0.0)
        a = out_a.field.coeffs.reshape(21, 61)
        b = out_b.field.coeffs.reshape(21, 61)
        interior = slice(6, 15), slice(12, 40)
        assert np.abs(a[interior] - b[interior[0], interior[1].start + shift_cells : interior[1].stop + shift_cells]).max() <= 5 * g.dx

    def test_implicit_step_stable_in_max_norm(self, grid_60x20):
        # smooth velocity of the kind the H1 metric produces
        phi = cone_levelset(grid_60x20, (1.5, 0.5), 0.3)
        xy = grid_60x20.node_coords()
        psi = VectorField.from_arrays(
            grid_60x20,
            0.02 * np.sin(np.pi * xy[:, 0] / 3.0) * np.sin(np.pi * xy[:, 1]),
            0.012 * np.cos(np.pi * xy[:, 0] / 3.0) * np.sin(np.pi * xy[:, 1]),
        )
        out = transport_step(phi, psi, TransportParams(dt=1.0, eps_factor=1e-2))
        assert np.abs(out.field.coeffs).max() <= 1.05 * np.abs(phi.field.coeffs).max()

    def test_grid_mismatch_rejected(self, grid_30x10, grid_60x20):
        phi = cone_levelset(grid_30x10, (1.5, 0.5), 0.3)
        psi = VectorField.from_arrays(
            grid_60x20, np.zeros(grid_60x20.n_nodes), np.zeros(grid_60x20.n_nodes)
        )
        with pytest.raises(ValueError):
            transport_step(phi, psi, TransportParams())


class TestComponents:
    def test_all_negative_is_zero(self, grid_30x10):
        phi = LevelSet(ScalarField(grid_30x10, -np.ones(grid_30x10.n_nodes)))
        assert count_components(phi) == 0

    def test_two_separated_blobs(self, grid_60x20):
        xy = grid_60x20.node_coords()
        vals = np.maximum(
            0.15 - np.hypot(xy[:, 0] - 0.8, xy[:, 1] - 0.5),
            0.15 - np.hypot(xy[:, 0] - 2.2, xy[:, 1] - 0.5),
        )
        phi = LevelSet(ScalarField(grid_60x20, np.where(vals > 0, vals, -0.1)))
        assert count_components(phi) == 2

    def test_single_blob(self, grid_60x20):
        phi = cone_levelset(grid_60x20, (1.5, 0.5), 0.3)
        assert count_components(phi) == 1

    def test_four_connectivity_not_eight(self):
        # two cells touching only at a corner are separate components
        g = build_grid(2.0, 2.0, 2, 2)
        vals = -np.ones(g.n_nodes)
        phi = LevelSet(ScalarField(g, vals))
        assert count_components(phi) == 0
        vals = -np.ones((3, 3))
        vals[0, 0] = 1.0  # SW cell corner node
        vals[2, 2] = 1.0  # NE cell corner node
        phi = LevelSet(ScalarField(g, vals.ravel()))
        assert count_components(phi) == 2
