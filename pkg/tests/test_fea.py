import numpy as np
import pytest

from lifespan_rl.errors import ConfigError, DataError, MeshError
from lifespan_rl.fea import (
    LoadCase,
    Material,
    Mesh,
    StressSampler,
    assemble_stiffness,
    cell_mesh,
    element_stresses,
    parse_mesh,
    read_mesh,
    rectangle_mesh,
    solve_static,
    stress_sample,
    von_mises,
    von_mises_plane,
    write_mesh,
)

from .oracles import cst_stiffness_by_hand, euler_bernoulli_tip

STEEL = Material(200e9, 0.3, 0.01)


def cantilever_tip_deflection(nx, ny, P=1000.0, L=1.0, h=0.1):
    mesh = rectangle_mesh(L, h, nx, ny)
    tip = sorted(np.flatnonzero(np.isclose(mesh.nodes[:, 0], L)), key=lambda i: mesh.nodes[i, 1])
    w = np.ones(len(tip))
    w[0] = w[-1] = 0.5
    w /= w.sum()
    u = solve_static(mesh, STEEL, LoadCase([(n, 0.0, -P * wi) for n, wi in zip(tip, w)]))
    return -np.mean(u[2 * np.array(tip) + 1])


def random_mesh(rng, nx=4, ny=3):
    mesh = rectangle_mesh(0.3, 0.1, nx, ny)
    jitter = rng.uniform(-0.2, 0.2, size=mesh.nodes.shape) * np.array([0.3 / nx, 0.1 / ny])
    interior = (mesh.nodes[:, 0] > 1e-9) & (mesh.nodes[:, 0] < 0.3 - 1e-9)
    interior &= (mesh.nodes[:, 1] > 1e-9) & (mesh.nodes[:, 1] < 0.1 - 1e-9)
    nodes = mesh.nodes + jitter * interior[:, None]
    return Mesh(nodes, mesh.elements, mesh.fixed_nodes)


def test_single_triangle_matches_hand_assembly():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = Mesh(nodes, np.array([[0, 1, 2]]), np.array([0, 1]))
    mat = Material(1000.0, 0.25, 0.5)
    system = assemble_stiffness(mesh, mat)
    K_hand = np.array(cst_stiffness_by_hand(*nodes, 1000.0, 0.25, 0.5))
    assert system.K_free.shape == (2, 2)
    np.testing.assert_allclose(system.K_free.toarray(), K_hand[4:, 4:], rtol=1e-13)
    np.testing.assert_allclose(system.K.toarray(), K_hand, rtol=1e-13, atol=1e-12)


def test_stiffness_symmetric_on_random_meshes():
    rng = np.random.default_rng(1)
    for _ in range(5):
        K = assemble_stiffness(random_mesh(rng), STEEL).K.toarray()
        np.testing.assert_allclose(K, K.T, rtol=0, atol=1e-9 * np.abs(K).max())


def test_stiffness_linear_in_thickness():
    mesh = rectangle_mesh(0.2, 0.05, 4, 2)
    K1 = assemble_stiffness(mesh, Material(1e9, 0.3, 0.01)).K.toarray()
    K2 = assemble_stiffness(mesh, Material(1e9, 0.3, 0.02)).K.toarray()
    np.testing.assert_allclose(K2, 2.0 * K1, rtol=1e-13, atol=1e-6)


def test_degenerate_triangle_rejected():
    with pytest.raises(MeshError):
        Mesh(np.array([[0, 0], [1, 0], [2, 0]], float), np.array([[0, 1, 2]]), np.array([0, 1]))


def test_insufficient_constraints_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        Mesh(nodes, np.array([[0, 1, 2]]), np.array([0]))


def test_index_out_of_range_rejected():
    with pytest.raises(MeshError):
        Mesh(np.zeros((3, 2)), np.array([[0, 1, 5]]), np.array([0, 1]))


def test_disconnected_part_is_singular():
    nodes = np.array([[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6]], float)
    mesh = Mesh(nodes, np.array([[0, 1, 2], [3, 4, 5]]), np.array([0, 1]))
    with pytest.raises(ConfigError):
        assemble_stiffness(mesh, STEEL)


def test_zero_load_zero_displacement():
    mesh = rectangle_mesh(0.2, 0.05, 4, 2)
    u = solve_static(mesh, STEEL, LoadCase())
    assert not np.any(u)
    assert not np.any(stress_sample(mesh, STEEL, LoadCase()))


def test_residual_and_linearity():
    mesh = rectangle_mesh(0.2, 0.05, 8, 2)
    system = assemble_stiffness(mesh, STEEL)
    loads = LoadCase([(mesh.n_nodes - 1, 3.0, -7.0)])
    f = loads.force_vector(mesh)
    u = solve_static(mesh, STEEL, loads, system)
    free = system.free_dofs
    residual = np.linalg.norm(system.K_free @ u[free] - f[free]) / np.linalg.norm(f)
    assert residual <= 1e-8
    u3 = solve_static(mesh, STEEL, LoadCase([(mesh.n_nodes - 1, 9.0, -21.0)]), system)
    np.testing.assert_allclose(u3, 3.0 * u, rtol=1e-10, atol=1e-20)


def test_load_on_fixed_node_rejected():
    mesh = rectangle_mesh(0.2, 0.05, 4, 2)
    with pytest.raises(DataError):
        solve_static(mesh, STEEL, LoadCase([(0, 1.0, 0.0)]))


def test_cantilever_matches_beam_theory_and_converges():
    eb = euler_bernoulli_tip(1000.0, 1.0, STEEL.youngs_modulus, STEEL.thickness, 0.1)
    errors = [abs(cantilever_tip_deflection(8 * k, k) - eb) / eb for k in (1, 2, 4, 8)]
    assert errors[-1] < 0.10
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_von_mises_closed_forms():
    s = 7.0
    assert von_mises_plane(np.array([s, 0.0, 0.0])) == pytest.approx(s)
    assert von_mises_plane(np.array([0.0, 0.0, s])) == pytest.approx(s * np.sqrt(3.0))


def test_patch_test_exact():
    rng = np.random.default_rng(2)
    mesh = random_mesh(rng, 6, 4)
    a, b = 1e-4, -3e-5
    u = np.zeros(2 * mesh.n_nodes)
    u[0::2] = a * mesh.nodes[:, 0]
    u[1::2] = b * mesh.nodes[:, 1]
    expected = STEEL.elasticity() @ np.array([a, b, 0.0])
    stresses = element_stresses(mesh, STEEL, u)
    np.testing.assert_allclose(stresses, np.tile(expected, (mesh.n_elements, 1)), rtol=1e-10, atol=1e-10 * np.abs(expected).max())
    np.testing.assert_allclose(von_mises(mesh, STEEL, u), von_mises_plane(expected), rtol=1e-10)


def test_superposition():
    mesh = rectangle_mesh(0.3, 0.05, 12, 2)
    n1, n2 = mesh.n_nodes - 1, mesh.n_nodes - 3
    l1, l2 = LoadCase([(n1, 0.0, -5.0)]), LoadCase([(n2, 2.0, 0.0)])
    both = LoadCase([(n1, 0.0, -5.0), (n2, 2.0, 0.0)])
    u = solve_static(mesh, STEEL, l1) + solve_static(mesh, STEEL, l2)
    np.testing.assert_allclose(solve_static(mesh, STEEL, both), u, rtol=1e-9, atol=1e-18)
    s = element_stresses(mesh, STEEL, solve_static(mesh, STEEL, l1)) + element_stresses(
        mesh, STEEL, solve_static(mesh, STEEL, l2)
    )
    np.testing.assert_allclose(stress_sample(mesh, STEEL, both), von_mises_plane(s), rtol=1e-9)


def test_load_nearer_mount_lowers_peak_stress():
    mesh = rectangle_mesh(0.3, 0.03, 30, 3)
    top = lambda x: int(np.flatnonzero(np.isclose(mesh.nodes[:, 0], x) & np.isclose(mesh.nodes[:, 1], 0.03))[0])
    far = stress_sample(mesh, STEEL, LoadCase([(top(0.3), 0.0, -10.0)]))
    near = stress_sample(mesh, STEEL, LoadCase([(top(0.1), 0.0, -10.0)]))
    root = mesh.centroids()[:, 0] < 0.02
    assert far[root].max() > near[root].max()


def test_frame_objectivity():
    rng = np.random.default_rng(5)
    mesh = random_mesh(rng, 6, 3)
    node, fx, fy = mesh.n_nodes - 2, 3.0, -4.0
    base = stress_sample(mesh, STEEL, LoadCase([(node, fx, fy)]))
    for angle in (0.3, 1.7, -2.4):
        R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        rotated = mesh.transformed(R, shift=(0.4, -1.0))
        f = R @ np.array([fx, fy])
        out = stress_sample(rotated, STEEL, LoadCase([(node, f[0], f[1])]))
        np.testing.assert_allclose(out, base, rtol=1e-6, atol=1e-9 * base.max())


def test_sampler_matches_direct_solve():
    mesh = cell_mesh(["#####", "##...", "MM..."], 0.01)
    sampler = StressSampler(mesh, STEEL)
    for node in sampler.load_nodes[:5]:
        direct = stress_sample(mesh, STEEL, LoadCase([(int(node), 1.5, -2.0)]))
        np.testing.assert_allclose(sampler.sample(int(node), 1.5, -2.0), direct, rtol=1e-10, atol=1e-6)


def test_nearest_node_tie_breaks_to_lowest_id():
    mesh = rectangle_mesh(0.2, 0.1, 2, 1)
    sampler = StressSampler(mesh, STEEL)
    a, b = sampler.load_nodes[-2:]
    mid = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
    assert sampler.nearest_load_node(mid) == min(a, b)


def test_cell_mesh_mount_at_origin():
    mesh = cell_mesh(["###", "#M#"], 0.01)
    fixed = mesh.nodes[mesh.fixed_nodes]
    np.testing.assert_allclose(fixed.mean(axis=0), [0.0, 0.0], atol=1e-15)
    assert mesh.n_elements == 12


def test_mesh_file_roundtrip(tmp_path):
    mesh = cell_mesh(["####", "M..."], 0.01)
    path = tmp_path / "tool.mesh"
    write_mesh(mesh, path)
    text = path.read_text()
    assert text.startswith("toolmesh v1\n")
    back = read_mesh(path)
    assert np.array_equal(back.nodes, mesh.nodes)
    assert np.array_equal(back.elements, mesh.elements)
    assert np.array_equal(back.fixed_nodes, mesh.fixed_nodes)


@pytest.mark.parametrize(
    "text",
    [
        "toolmesh v2\nn 0 0 0\n",
        "toolmesh v1\nn 1 0 0\n",
        "toolmesh v1\nn 0 0 0\nx 1 2\n",
        "toolmesh v1\nn 0 0 zero\n",
    ],
)
def test_mesh_parse_errors(text):
    with pytest.raises(MeshError):
        parse_mesh(text.splitlines())
