import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erbtool import gridworld as gw


def env(**kw):
    base = dict(landmark=(5, 5), context_seed=1)
    base.update(kw)
    return gw.EnvSpec(**base)


def test_one_hot_reduction():
    spec = gw.EnvSpec(landmark=(1, 1), context_seed=0, grid_size=2, context_dim=1)
    # a 1-D unit vector is +-1; with seed 0 it is positive
    c = gw.context_vector(spec)[0]
    assert abs(c) == 1.0
    obs = gw.observe(spec, gw.EnvState((0, 0)))
    assert obs.tolist() == [c, 0.0, 0.0, 0.0]


@given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 2**63))
def test_observation_sparsity(x, y, seed):
    spec = env(context_seed=seed)
    obs = gw.observe(spec, gw.EnvState((x, y)))
    nz = np.flatnonzero(obs)
    assert len(obs) == 16 * 16 * 8
    assert len(nz) == 8
    start = (x * 16 + y) * 8
    assert nz.tolist() == list(range(start, start + 8))
    assert np.dot(obs, obs) == pytest.approx(1.0)


def test_cross_environment_overlap():
    a, b = env(context_seed=1), env(context_seed=2)
    s = gw.EnvState((3, 4))
    assert np.dot(gw.observe(a, s), gw.observe(b, s)) == pytest.approx(
        np.dot(gw.context_vector(a), gw.context_vector(b))
    )


def test_step_examples():
    spec = env()
    s, r, done = gw.step(spec, gw.EnvState((3, 5)), 0)
    assert s.position == (4, 5) and r == 1.0
    assert done  # distance 1 is within the terminal radius
    s, r, done = gw.step(spec, gw.EnvState((1, 5)), 0)
    assert s.position == (2, 5) and r == 1.0 and not done
    s, r, done = gw.step(spec, gw.EnvState((5, 6)), 3)
    assert s.position == (5, 5) and r == 1.0 and done and s.done
    s, r, done = gw.step(spec, gw.EnvState((0, 3)), 1)
    assert s.position == (0, 3) and r == 0.0


def test_step_cap_and_done_state():
    spec = env(max_steps=2)
    s, _, done = gw.step(spec, gw.EnvState((0, 0)), 1)
    assert not done and s.steps == 1
    s, _, done = gw.step(spec, s, 1)
    assert done
    with pytest.raises(RuntimeError):
        gw.step(spec, s, 0)
    with pytest.raises(ValueError):
        gw.step(spec, gw.EnvState((0, 0)), 4)


def test_action_names():
    assert gw.action_names(2) == ["x++", "x--", "y++", "y--"]
    assert gw.action_names(3)[4:] == ["z++", "z--"]


@given(st.integers(0, 2**32), st.integers(1, 80), st.sampled_from([2, 3]))
def test_rewards_telescope_and_are_bounded(seed, steps, dims):
    spec = gw.EnvSpec(landmark=(2,) * dims, context_seed=3, grid_size=6, dims=dims, max_steps=100)
    rng = np.random.default_rng(seed)
    start = gw.reset(spec, seed)
    s, total = start, 0.0
    for _ in range(steps):
        if s.done:
            break
        s, r, _ = gw.step(spec, s, int(rng.integers(spec.num_actions)))
        assert abs(r) <= 1.0 + 1e-12
        total += r
    assert total == pytest.approx(gw.distance(spec, start.position) - gw.distance(spec, s.position), abs=1e-9)


def test_reset_is_seeded_and_never_terminal():
    spec = env()
    assert gw.reset(spec, 42) == gw.reset(spec, 42)
    for seed in range(300):
        s = gw.reset(spec, seed)
        assert s.position != spec.landmark
        assert gw.distance(spec, s.position) > spec.terminal_radius
        assert s.steps == 0 and not s.done


def test_reset_without_valid_start():
    spec = gw.EnvSpec(landmark=(0, 0), context_seed=0, grid_size=3, terminal_radius=3 * math.sqrt(2))
    with pytest.raises(ValueError):
        gw.reset(spec, 0)


@pytest.mark.parametrize(
    "kw",
    [dict(landmark=(16, 0)), dict(landmark=(1, 2, 3)), dict(dims=4), dict(context_dim=0), dict(max_steps=0), dict(terminal_radius=-1)],
)
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        env(**kw)


def test_env_sequence():
    a = gw.make_env_sequence(9, 10)
    assert a == gw.make_env_sequence(9, 10)
    assert len(a) == 10 and len(gw.make_env_sequence(9, 1)) == 1
    assert len({e.landmark for e in a}) == 10
    assert len({e.context_seed for e in a}) == 10
    assert [e.name for e in a[:2]] == ["env01", "env02"]
    assert a[0].max_steps == 64 and a[0].obs_dim == 2048 and a[0].num_actions == 4


def test_env_sequence_on_a_tiny_grid_still_has_distinct_pairs():
    specs = gw.make_env_sequence(0, 6, grid_size=2)
    pairs = {(e.landmark, e.context_seed) for e in specs}
    assert len(pairs) == 6
