import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import chain_frf
from shm_locate.errors import ConfigurationError, SingularSystemError
from shm_locate.signals import transmissibility
from shm_locate.synthdata import (
    DAMAGE_CLASSES,
    UNDAMAGED,
    ChainModel,
    ModelConfig,
    PanelDamage,
    build_wing_model,
    frf,
    frf_matrix,
    generate_dataset,
    make_layout,
    read_dataset,
    simulate_measurement,
    write_dataset,
)


@pytest.fixture(scope="module")
def model():
    return build_wing_model()


@pytest.fixture(scope="module")
def layout():
    return make_layout()


def test_reduction_ordering_from_explicit_config():
    panels = [PanelDamage(c, (c,), 0.15) for c in DAMAGE_CLASSES]
    panels[2] = PanelDamage(3, (3,), 0.02)
    panels[5] = PanelDamage(6, (6,), 0.02)
    m = build_wing_model(ModelConfig(n_dof=12, mass=1.0, stiffness=1e6, panels=panels))
    assert m.panel(3).reduction < m.panel(1).reduction
    assert m.n_dof == 12 and len(m.stiffnesses) == 13


def test_default_model_invariants(model):
    assert [p.class_id for p in model.panel_map] == list(DAMAGE_CLASSES)
    small = max(model.panel(c).reduction for c in (3, 6))
    assert all(small < model.panel(c).reduction for c in DAMAGE_CLASSES if c not in (3, 6))


@pytest.mark.parametrize("changes, field", [
    ({"stiffness": 0.0}, "stiffness"),
    ({"mass": -1.0}, "mass"),
    ({"alpha": -0.1}, "alpha"),
    ({"n_dof": 5}, "n_dof"),
])
def test_invalid_config_names_field(changes, field):
    with pytest.raises(ConfigurationError) as exc:
        build_wing_model(ModelConfig(**changes))
    assert exc.value.details["field"] == field


def test_duplicate_class_rejected():
    cfg = ModelConfig()
    cfg.panels = cfg.panels + [PanelDamage(5, (2,), 0.1)]
    with pytest.raises(ConfigurationError, match="duplicate"):
        build_wing_model(cfg)


def test_small_panels_must_be_weakest():
    cfg = ModelConfig()
    cfg.panels = [PanelDamage(p.class_id, p.springs, 0.5 if p.class_id == 3 else p.reduction)
                  for p in cfg.panels]
    with pytest.raises(ConfigurationError):
        build_wing_model(cfg)


def test_config_round_trip():
    cfg = ModelConfig()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        ModelConfig.from_dict({"bogus": 1})


def test_static_single_dof():
    m = ChainModel(np.array([1.0]), np.array([0.5, 0.5]), 0.0, 0.0)
    lay = make_layout(pairs=(), excitation_dof=0, f_lo=0.0, f_hi=1.0, n_lines=2)
    assert frf(m, UNDAMAGED, lay, 0)[0] == 1.0 + 0j


def test_undamped_resonance_is_singular():
    w2 = (2 * np.pi * 1.0) ** 2
    m = ChainModel(np.array([1.0]), np.array([w2 / 2, w2 / 2]), 0.0, 0.0)
    lay = make_layout(pairs=(), excitation_dof=0, f_lo=0.5, f_hi=1.0, n_lines=2)
    with pytest.raises(SingularSystemError) as exc:
        frf_matrix(m, UNDAMAGED, lay)
    assert exc.value.details["frequency"] == 1.0


def test_three_dof_matches_naive_solver(rng):
    masses = rng.uniform(0.5, 2.0, 3)
    springs = rng.uniform(1e3, 1e4, 4)
    m = ChainModel(masses, springs, 0.3, 2e-5)
    lay = make_layout(pairs=(), excitation_dof=1, f_lo=1.0, f_hi=40.0, n_lines=64)
    H = frf_matrix(m, UNDAMAGED, lay)
    ref = np.array(chain_frf(masses, springs, 0.3, 2e-5, 1, lay.freq_grid))
    np.testing.assert_allclose(H, ref, rtol=1e-10)


def test_small_panel_perturbs_less(model, layout):
    H0 = frf_matrix(model, UNDAMAGED, layout)
    dev = {c: np.max(np.abs(np.abs(frf_matrix(model, c, layout)) - np.abs(H0)) / np.abs(H0))
           for c in (1, 3)}
    assert dev[3] < dev[1]


@given(st.lists(st.floats(0.5, 3.0), min_size=3, max_size=6), st.data())
def test_reciprocity(masses, data):
    n = len(masses)
    springs = data.draw(st.lists(st.floats(1e3, 1e5), min_size=n + 1, max_size=n + 1))
    a, b = data.draw(st.integers(0, n - 1)), data.draw(st.integers(0, n - 1))
    m = ChainModel(np.array(masses), np.array(springs), 0.5, 1e-6)
    Ha = frf_matrix(m, UNDAMAGED, make_layout((), a, 1.0, 60.0, 32))[:, b]
    Hb = frf_matrix(m, UNDAMAGED, make_layout((), b, 1.0, 60.0, 32))[:, a]
    np.testing.assert_allclose(Ha, Hb, rtol=1e-10)


def test_noise_free_measurement_is_frf_ratio(model, layout, rng):
    rec = simulate_measurement(model, 4, layout, 0.0, rng)
    H = frf_matrix(model, 4, layout)
    for k, (i, j) in enumerate(layout.pairs):
        assert np.array_equal(rec.magnitudes[k], np.abs(H[:, i]) / np.abs(H[:, j]))
        np.testing.assert_allclose(rec.magnitudes[k], transmissibility(H[:, i], H[:, j]),
                                   rtol=0)


def test_self_pair_is_unity(model, rng):
    lay = make_layout(pairs=((2, 2), (7, 7)))
    rec = simulate_measurement(model, UNDAMAGED, lay, 0.0, rng)
    assert np.all(rec.magnitudes == 1.0)


def test_self_pair_rejected_for_datasets(model):
    with pytest.raises(ConfigurationError):
        generate_dataset(model, make_layout(pairs=((2, 2),)), 3, 0.0, 0)


def test_measurement_determinism(model, layout):
    a = simulate_measurement(model, 2, layout, 0.05, np.random.default_rng(3))
    b = simulate_measurement(model, 2, layout, 0.05, np.random.default_rng(3))
    assert np.array_equal(a.magnitudes, b.magnitudes)


def test_negative_noise_rejected(model, layout, rng):
    with pytest.raises(ConfigurationError):
        simulate_measurement(model, 2, layout, -0.1, rng)


def test_monotone_damage_visibility(model, layout, rng):
    base = simulate_measurement(model, UNDAMAGED, layout, 0.0, rng).magnitudes
    dev = {c: np.linalg.norm(simulate_measurement(model, c, layout, 0.0, rng).magnitudes - base,
                             axis=1)
           for c in DAMAGE_CLASSES}
    for c in DAMAGE_CLASSES:
        # well above roundoff on every pair: no pair is blind to any panel
        assert np.all(dev[c] > 1e-9 * np.linalg.norm(base, axis=1)), c
    # same springs, smaller reduction, smaller deviation on every pair
    assert np.all(dev[3] < dev[2])
    assert np.all(dev[6] < dev[5])


def test_dataset_counts(model, layout):
    ds = generate_dataset(model, layout, 6, 0.02, 1)
    counts = ds.per_class_counts
    assert counts[UNDAMAGED] == 12
    assert all(counts[c] == 6 for c in DAMAGE_CLASSES)
    assert sum(counts[c] for c in DAMAGE_CLASSES) == 54
    assert ds.rng_seed == 1


def test_full_scale_counts(model, layout):
    ds = generate_dataset(model, layout, 198, 0.02, 0)
    assert (ds.labels != UNDAMAGED).sum() == 1782
    assert (ds.labels == UNDAMAGED).sum() == 396


@pytest.mark.parametrize("reps", [7, 0])
def test_reps_must_split_in_thirds(model, layout, reps):
    with pytest.raises(ConfigurationError):
        generate_dataset(model, layout, reps, 0.02, 0)


def test_dataset_determinism(model, layout):
    assert generate_dataset(model, layout, 3, 0.02, 9) == generate_dataset(model, layout, 3, 0.02, 9)
    assert not generate_dataset(model, layout, 3, 0.02, 9) == generate_dataset(model, layout, 3, 0.02, 8)


def test_dataset_round_trip(model, layout, tmp_path):
    ds = generate_dataset(model, layout, 3, 0.02, 4)
    write_dataset(ds, tmp_path / "d", {"note": "x"})
    back = read_dataset(tmp_path / "d")
    assert back == ds
    assert back.meta["note"] == "x"
