import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holocycle.geometry import FlatTorus, InvalidInputError
from holocycle.chains import AffineMap, Box, Cell, Chain, cell_measure, chain_measure
from holocycle.measures import (
    SmoothDensityModel,
    hol_residual,
    velocity_bump_model,
)
from holocycle.triangulation import TorusTriangulation
from holocycle.approximation import (
    GOLDEN,
    PipelineConfig,
    assemble_beta,
    base_measure,
    boundary_data,
    close_up,
    glue,
    isoperimetric_fill,
    pair_cells,
    sample_cells,
    solve_cells,
    _frame_transversal,
    _march_line,
    _patch_pieces,
)
from holocycle.chains import polygon_area

T2 = FlatTorus(2)
T3 = FlatTorus(3)


def line_model(slope=GOLDEN):
    return velocity_bump_model(T2, 1, [[1.0, slope]], 0.125)


def plane_model():
    def vs(rng, count):
        frame = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        return np.broadcast_to(frame, (count, 2, 3)).copy()

    return SmoothDensityModel(T3, 2, lambda x, v: np.ones(len(x)), 0.1,
                              x_constant=True, v_sampler=vs)


# -- base measure ------------------------------------------------------

def test_base_measure_x_constant_is_exact():
    model = line_model()
    tri = TorusTriangulation(T2, 2)
    base = base_measure(model, tri)
    v = np.array([[[1.0, GOLDEN]]])
    rho = model(np.zeros((1, 2)), v)[0]
    prof = base.infimum_profile(v[0])
    assert np.allclose(prof, rho)


def test_base_measure_is_a_lower_bound():
    # spatially varying density: the per-simplex constant never exceeds the
    # model on sample points of that simplex
    def density(x, v):
        return 1.5 + np.sin(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1])

    model = SmoothDensityModel(T2, 1, density, 2.0,
                               v_sampler=lambda rng, k: rng.normal(size=(k, 1, 2)))
    tri = TorusTriangulation(T2, 2)
    base = base_measure(model, tri, chart_resolution=3)
    rng = np.random.default_rng(11)
    v = rng.normal(size=(1, 1, 2))
    for idx in range(0, len(tri.top_simplices), 5):
        s = tri.top_simplices[idx]
        lam = rng.dirichlet(np.ones(3), size=16)
        pts = lam @ s.array()
        vals = model(pts, np.broadcast_to(v, (16, 1, 2)))
        rb = base.density(idx, v)[0]
        assert rb <= vals.min() + 0.15 * (vals.max() - vals.min()) + 1e-9


def test_base_measure_dimension_guard():
    with pytest.raises(InvalidInputError):
        base_measure(line_model(), TorusTriangulation(T3, 1))


# -- transversality ----------------------------------------------------

def test_frame_transversality_rejects_mesh_parallel():
    tri = TorusTriangulation(T2, 1)
    assert not _frame_transversal(tri, np.array([[1.0, 0.0]]))
    assert not _frame_transversal(tri, np.array([[1.0, 1.0]]))
    assert _frame_transversal(tri, np.array([[1.0, GOLDEN]]))


def test_frame_transversality_planes():
    tri = TorusTriangulation(T3, 1)
    assert not _frame_transversal(tri, np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    tilted = np.array([[1.0, 0.013, 0.007], [0.003, 1.0, 0.011]])
    assert _frame_transversal(tri, tilted)


# -- leaf cutting ------------------------------------------------------

@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_march_partitions_the_segment(seed):
    rng = np.random.default_rng(seed)
    tri = TorusTriangulation(T2, 1 + seed % 2)
    anchor = rng.random(2) + 1e-7
    v = np.array([1.0, GOLDEN + 0.1 * rng.random()])
    length = 1.0 + rng.random()
    pieces = _march_line(tri, anchor, v, length)
    ts = sorted((p.domain_data[0], p.domain_data[1]) for p in pieces)
    assert ts[0][0] == pytest.approx(0.0, abs=1e-12)
    assert ts[-1][1] == pytest.approx(length, abs=1e-12)
    for (a0, a1), (b0, b1) in zip(ts, ts[1:]):
        assert a1 == pytest.approx(b0, abs=1e-12)
    # each piece midpoint lies in its claimed simplex
    for p in pieces:
        mid = anchor + 0.5 * (p.domain_data[0] + p.domain_data[1]) * v
        w = tri.torus.wrap(mid)
        assert tri.top_simplices[p.sim].contains(w, tol=1e-9)


def test_patch_pieces_tile_the_square():
    tri = TorusTriangulation(T3, 1)
    anchor = np.array([0.13, 0.29, 0.41])
    V = np.array([[1.0, 0.011, 0.003], [0.007, 1.0, 0.005]])
    extent = ((-0.5, -0.5), (0.5, 0.5))
    pieces = _patch_pieces(tri, anchor, V, extent)
    total = sum(polygon_area(p.domain_data[0]) for p in pieces)
    assert total == pytest.approx(1.0, abs=1e-10)
    for p in pieces[::7]:
        poly = p.domain_data[0]
        centroid = poly.mean(axis=0)
        x = tri.torus.wrap(anchor + centroid @ V)
        assert tri.top_simplices[p.sim].contains(x, tol=1e-8)


def test_patch_edge_labels_cover_boundary():
    tri = TorusTriangulation(T3, 1)
    anchor = np.array([0.5, 0.25, 0.125]) + 1e-4
    V = np.array([[1.0, 0.013, 0.002], [0.003, 1.0, 0.009]])
    pieces = _patch_pieces(tri, anchor, V, ((-0.3, -0.3), (0.3, 0.3)))
    rim_len = 0.0
    for p in pieces:
        poly, labels = p.domain_data
        for k, lab in enumerate(labels):
            if lab[0] == "rim":
                rim_len += np.linalg.norm(poly[(k + 1) % len(poly)] - poly[k])
    assert rim_len == pytest.approx(4 * 0.6, abs=1e-9)


# -- sampling ----------------------------------------------------------

def test_sampling_is_deterministic_and_nested():
    model = line_model()
    base = base_measure(model, TorusTriangulation(T2, 2))
    s1 = sample_cells(base, 1, seed=7, leaf_extent=2.0, leaf_count=2)
    s2 = sample_cells(base, 1, seed=7, leaf_extent=2.0, leaf_count=4)
    s3 = sample_cells(base, 1, seed=7, leaf_extent=2.0, leaf_count=4)
    for a, b in zip(s1.leaves, s2.leaves):
        assert np.array_equal(a.anchor, b.anchor)
        assert np.array_equal(a.frame, b.frame)
    for a, b in zip(s2.leaves, s3.leaves):
        assert np.array_equal(a.anchor, b.anchor)


def test_sampling_requires_v_sampler():
    model = SmoothDensityModel(T2, 1, lambda x, v: np.ones(len(x)), 1.0,
                               x_constant=True)
    base = base_measure(model, TorusTriangulation(T2, 1))
    with pytest.raises(InvalidInputError):
        sample_cells(base, 1, seed=0)


def test_sample_validation():
    base = base_measure(line_model(), TorusTriangulation(T2, 1))
    with pytest.raises(InvalidInputError):
        sample_cells(base, 0, seed=0)


# -- assembly ----------------------------------------------------------

def pipeline_records(model, level=2, leaf_count=3, extent=2.0, seed=3):
    tri = TorusTriangulation(T2, level) if model.torus.dim == 2 else \
        TorusTriangulation(T3, level)
    base = base_measure(model, tri)
    samples = sample_cells(base, 1, seed=seed, leaf_extent=extent,
                           leaf_count=leaf_count)
    records = solve_cells(samples, nodes_per_unit=16.0)
    return tri, samples, records


def test_beta_total_mass_is_one():
    _, _, records = pipeline_records(line_model())
    beta, beta_tilde, Z = assemble_beta(records)
    assert chain_measure(beta).total_mass() == pytest.approx(1.0, abs=1e-12)
    assert Z == pytest.approx(sum(r.dvol for r in records))
    # the extension strictly grows unpaired cells
    assert chain_measure(beta_tilde).total_mass() >= 1.0


def test_interior_traces_pair_up():
    tri, _, records = pipeline_records(line_model(), leaf_count=4)
    pairing = pair_cells(records, tri)
    # every interior face crossing shows up twice; only the leaf ends stay open
    assert pairing.unpaired_ratio == pytest.approx(0.0, abs=1e-12)
    for (ia, pa), (ib, pb), gap in pairing.pairs:
        assert gap <= 1e-9


def test_pairing_is_involutive():
    tri, _, records = pipeline_records(plane_model(), level=1, leaf_count=1,
                                       extent=1.0)
    pairing = pair_cells(records, tri)
    by_index = {r.index: r for r in records}
    for (ia, pa), (ib, pb), _ in pairing.pairs:
        assert by_index[ia].paired[pa] == (ib, pb)
        assert by_index[ib].paired[pb] == (ia, pa)


def test_glue_leaves_exact_pairs_alone():
    tri, _, records = pipeline_records(line_model(), leaf_count=3)
    pairing = pair_cells(records, tri)
    glued, dropped = glue(records, pairing)
    assert not dropped
    # leaf pieces share one affine map, so their seams match bit-exactly and
    # no blend is ever created
    assert all(g.cell.map is r.cell.map for g, r in zip(glued, records))


def test_glue_blends_offset_pair_to_c1():
    # two synthetic segments meeting at x = (0.5, 0.5) with a small offset
    # and a velocity mismatch; after gluing both position and derivative
    # agree at the seam
    from holocycle.approximation import CellRecord, Pairing

    eps = 1e-3
    ca = Cell(T2, Box((0.0,), (0.2,)), AffineMap([0.5 - 0.2, 0.5 - 0.2],
                                                 [[1.0, 1.0]]), 8)
    cb = Cell(T2, Box((0.2,), (0.4,)),
              AffineMap([0.5 + eps - 0.2, 0.5 - 0.2], [[1.0, 1.0 + eps]]), 8)
    ra = CellRecord(0, 0, 0, ca, 0.2, (("end",), ("face", "f")))
    rb = CellRecord(1, 1, 1, cb, 0.2, (("face", "f"), ("end",)))
    ra.traces = [(1, "f", ca.map(np.array([[0.2]]))[0], ca.map.V.copy(), None)]
    rb.traces = [(0, "f", cb.map(np.array([[0.2]]))[0], cb.map.V.copy(), None)]
    ra.paired[1] = (1, 0)
    rb.paired[0] = (0, 1)
    gap = eps * 3
    pairing = Pairing((((0, 1), (1, 0), gap),), 0.0, 0.05)
    glued, dropped = glue([ra, rb], pairing)
    assert not dropped
    pa = glued[0].cell.map(np.array([[0.2]]))[0]
    pb = glued[1].cell.map(np.array([[0.2]]))[0]
    assert np.linalg.norm(pa - pb) < 1e-9
    h = 1e-6
    da = (glued[0].cell.map(np.array([[0.2]]))
          - glued[0].cell.map(np.array([[0.2 - h]]))) / h
    db = (glued[1].cell.map(np.array([[0.2 + h]]))
          - glued[1].cell.map(np.array([[0.2]]))) / h
    assert np.linalg.norm(da - db) < 1e-4


# -- boundary data -----------------------------------------------------

def test_boundary_balance_repair():
    tri, _, records = pipeline_records(line_model(), leaf_count=3)
    _, _, Z = assemble_beta(records)
    bd = boundary_data(records, Z, tri, 1)
    assert bd.residual_after <= bd.residual_before + 1e-15
    assert bd.weights.min() >= 0.0
    assert len(bd.x) == 2 * len(records)


# -- fillings ----------------------------------------------------------

def test_fill_matched_points():
    cells = []
    for sign, x in ((1.0, [0.2, 0.2]), (-1.0, [0.3, 0.2])):
        cells.append((sign, Cell(T2, Box((0.0,), (1e-9,)), AffineMap(x, [[1.0, 0.0]]), 2)))
    fill, stats = isoperimetric_fill(Chain(tuple(cells)), 0)
    assert stats["mass"] == pytest.approx(0.1, abs=1e-9)


def test_fill_unbalanced_points_rejected():
    c = Cell(T2, Box((0.0,), (1e-9,)), AffineMap([0.1, 0.1], [[1.0, 0.0]]), 2)
    with pytest.raises(InvalidInputError):
        isoperimetric_fill(Chain(((1.0, c),)), 0)


def polygon_loop(rng, k=8, radius=0.2):
    center = rng.random(2)
    angles = np.sort(rng.random(k)) * 2 * np.pi
    pts = center[None] + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    cells = []
    for i in range(k):
        a, b = pts[i], pts[(i + 1) % k]
        cells.append((1.0, Cell(T2, Box((0.0,), (1.0,)),
                                AffineMap(a, [b - a]), 16)))
    return Chain(tuple(cells))


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_cone_fill_area_bound_and_closure(seed):
    rng = np.random.default_rng(seed)
    loop = polygon_loop(rng, k=5 + seed % 5)
    fill, stats = isoperimetric_fill(loop, 1)
    assert stats["mass"] <= 0.5 * stats["diam"] * stats["boundary_mass"] * (1 + 1e-9)
    # the fill is genuinely two-dimensional
    assert all(cell.n == 2 for _, cell in fill.terms)


def test_open_loop_rejected():
    c = Cell(T2, Box((0.0,), (1.0,)), AffineMap([0.1, 0.1], [[0.3, 0.0]]), 8)
    with pytest.raises(InvalidInputError):
        isoperimetric_fill(Chain(((1.0, c),)), 1)


# -- closing -----------------------------------------------------------

def test_close_up_n1_produces_near_cycle():
    tri, samples, records = pipeline_records(line_model(), leaf_count=4,
                                             extent=3.0)
    pairing = pair_cells(records, tri)
    records, _ = glue(records, pairing)
    beta, _, Z = assemble_beta(records)
    bd = boundary_data(records, Z, tri, 1)
    eta, hierarchy = close_up(beta, records, pairing, bd, tri,
                              leaves=samples.leaves)
    assert hierarchy["n_connectors"] >= 1
    mu_eta = chain_measure(eta)
    mu_eta = mu_eta.scaled(1.0 / mu_eta.total_mass())
    mu_beta = chain_measure(beta)
    assert hol_residual(mu_eta, 2) < 5e-3
    assert hol_residual(mu_beta, 2) > hol_residual(mu_eta, 2)


def test_close_up_wrapping_patch_uses_cylinder_fills():
    model = plane_model()
    tri = TorusTriangulation(T3, 1)
    base = base_measure(model, tri)
    samples = sample_cells(base, 1, seed=0, leaf_extent=1.0, leaf_count=1,
                           frame_jitter=1e-4)
    records = solve_cells(samples, nodes_per_unit=8.0)
    pairing = pair_cells(records, tri)
    records, _ = glue(records, pairing)
    beta, _, Z = assemble_beta(records)
    bd = boundary_data(records, Z, tri, 2)
    eta, hierarchy = close_up(beta, records, pairing, bd, tri,
                              leaves=samples.leaves)
    # the unit patch closes around the torus: cylinder fills, no cones
    assert hierarchy["n_cones"] == 0
    assert hierarchy["fill_mass"] < 1e-2
    mu = chain_measure(eta)
    assert hol_residual(mu.scaled(1.0 / mu.total_mass()), 2) < 1e-4


def test_close_up_empty_rejected():
    with pytest.raises(InvalidInputError):
        close_up(Chain(()), [], None, None, None)


# -- driver ------------------------------------------------------------

def test_pipeline_config_defaults():
    cfg = PipelineConfig()
    assert cfg.k_min == 1 and cfg.k_max == 3
    assert cfg.lagrangians == {}
