import math

import numpy as np
import pytest

from lorentzmix.geometry import (
    BilliardTable,
    CorridorError,
    OverlapError,
    ScattererSpec,
    TableError,
    check_corridors,
    check_disjoint,
    default_table,
    validate_table,
)


def test_scatterer_spec_rejects_bad_radius():
    with pytest.raises(TableError):
        ScattererSpec(center=(0.1, 0.1), radius=0.5)
    with pytest.raises(TableError):
        ScattererSpec(center=(0.1, 0.1), radius=0.0)
    with pytest.raises(TableError):
        ScattererSpec(center=(1.0, 0.0), radius=0.1)


def test_default_table_validates(table):
    assert table.validated
    assert table.horizon_bound > 0.1
    assert table.corridor_complete


def test_single_disc_has_horizontal_corridor():
    t = BilliardTable([ScattererSpec(center=(0.0, 0.0), radius=0.3)])
    with pytest.raises(CorridorError) as e:
        validate_table(t)
    assert e.value.direction in ((1, 0), (0, 1))
    # the unblocked strip has width 1 - 2r = 0.4
    assert abs(e.value.gap - 0.4) < 1e-12


def test_overlapping_pair_rejected():
    # radii 0.45 + 0.26 = 0.71 > sqrt(0.5) = 0.7071: the closed discs meet
    t = BilliardTable(
        [
            ScattererSpec(center=(0.0, 0.0), radius=0.45),
            ScattererSpec(center=(0.5, 0.5), radius=0.26),
        ]
    )
    with pytest.raises(OverlapError):
        check_disjoint(t)


def test_touching_pair_with_positive_gap_is_accepted():
    # radii 0.45 + 0.25 = 0.70 < sqrt(0.5): a 7.1e-3 gap remains, so the
    # margin rule (1e-9) keeps the table legal
    t = BilliardTable(
        [
            ScattererSpec(center=(0.0, 0.0), radius=0.45),
            ScattererSpec(center=(0.5, 0.5), radius=0.25),
        ]
    )
    check_disjoint(t)
    b = validate_table(t, rng=5)
    assert b > 0


def test_neighbor_translate_overlap_detected():
    t = BilliardTable(
        [
            ScattererSpec(center=(0.05, 0.5), radius=0.3),
            ScattererSpec(center=(0.85, 0.5), radius=0.3),
        ]
    )
    # distance between disc 1 and disc 0 + (1,0) is 0.2 < 0.6
    with pytest.raises(OverlapError):
        check_disjoint(t)


def test_corridor_scan_complete_flag():
    t = default_table()
    assert check_corridors(t, n_dirs=8) is True
    # with r_max = 0.45 completeness needs n_dirs >= 1/(2*0.45) = 1.12
    assert check_corridors(t, n_dirs=2) is True


def test_mean_free_path_santalo(table, system):
    gen = np.random.Generator(np.random.Philox(key=31337))
    batch = system.sample_batch(1_000_000, gen)
    from lorentzmix import _kernels

    _, _, _, _, _, flight, _ = _kernels.step_batch(
        table.geometry(), batch.scat, batch.theta, batch.phi
    )
    assert (flight >= 0).all()
    mean = flight.mean()
    se = flight.std(ddof=1) / math.sqrt(flight.shape[0])
    assert abs(mean - table.mean_free_path) <= 3 * se


def test_psi_set_frozen_regression(table):
    # observed displacement alphabet for the default table; order-free set
    expected = {
        (-2, -1), (-2, 0), (-2, 1), (-1, -2), (-1, -1), (-1, 0), (-1, 1),
        (-1, 2), (0, -2), (0, -1), (0, 0), (0, 1), (0, 2), (1, -2), (1, -1),
        (1, 0), (1, 1), (1, 2), (2, -1), (2, 0), (2, 1),
    }
    assert table.psi_set == expected
    bound = math.ceil(table.horizon_bound)
    assert all(max(abs(a), abs(b)) <= bound for a, b in table.psi_set)


def test_geometry_requires_validation():
    t = default_table()
    with pytest.raises(TableError):
        t.geometry()
