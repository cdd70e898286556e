import gzip
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erbtool.replay import (
    CompressedERB,
    CountMismatchError,
    DimensionError,
    Experience,
    FormatError,
    InvariantError,
    ReplayBuffer,
    VersionError,
    append,
    buffer_from_rewards,
    deserialize_erb,
    dumps,
    load,
    loads,
    reward_vector,
    save,
    serialize_erb,
)

from conftest import random_buffer


def exp(reward=0.0, action=0, dim=2):
    return Experience(np.zeros(dim), action, reward, np.zeros(dim), False)


def test_append_to_empty_with_capacity():
    b = ReplayBuffer(2, 1, capacity=2)
    e1 = exp(1.0)
    append(b, e1)
    assert list(b) == [e1]


def test_fifo_eviction():
    b = ReplayBuffer(2, 1, capacity=2)
    e1, e2, e3 = exp(1.0), exp(2.0), exp(3.0)
    for e in (e1, e2, e3):
        b.append(e)
    assert list(b) == [e2, e3]


@given(st.integers(1, 6), st.integers(0, 20))
def test_fifo_keeps_last_capacity_items(capacity, n):
    b = ReplayBuffer(1, 1, capacity=capacity)
    for i in range(n):
        b.append(exp(float(i), dim=1))
    assert [e.reward for e in b] == [float(i) for i in range(max(0, n - capacity), n)]


def test_dimension_mismatch_rejected():
    b = ReplayBuffer(2, 1)
    with pytest.raises(DimensionError):
        b.append(exp(dim=3))


def test_invalid_action_rejected():
    b = ReplayBuffer(2, 2)
    with pytest.raises(InvariantError):
        b.append(exp(action=2))


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_reward_must_be_finite(bad):
    with pytest.raises(InvariantError):
        exp(bad)


def test_obs_lengths_must_agree():
    with pytest.raises(DimensionError):
        Experience(np.zeros(2), 0, 0.0, np.zeros(3), False)


def test_reward_vector():
    b = buffer_from_rewards([1, -1, 0])
    assert reward_vector(b).tolist() == [1.0, -1.0, 0.0]
    assert reward_vector(ReplayBuffer(1, 1)).tolist() == []


def test_reward_vector_of_compressed_ignores_weights():
    b = buffer_from_rewards([1.0, 2.0, 3.0])
    c = CompressedERB([b[0], b[2]], [2, 1], "uniform", 1.5, 3, 1, 1)
    assert reward_vector(c).tolist() == [1.0, 3.0]


def test_serialize_two_records():
    text = dumps(buffer_from_rewards([0.5, 1.5]))
    lines = text.splitlines()
    head = json.loads(lines[0])
    assert head["count"] == 2 and head["kind"] == "raw" and head["format"] == "erb" and head["version"] == 1
    assert len(lines) == 3


def test_serialize_empty():
    text = dumps(ReplayBuffer(3, 2, "x"))
    lines = text.splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["count"] == 0
    assert len(loads(text)) == 0


def test_reward_point_one_is_bit_exact():
    back = loads(dumps(buffer_from_rewards([0.1])))
    assert np.float64(back[0].reward).view(np.uint64) == np.float64(0.1).view(np.uint64)


def test_serialize_to_binary_sink():
    b = buffer_from_rewards([1.0, 2.0])
    sink = io.BytesIO()
    serialize_erb(b, sink)
    assert deserialize_erb(sink.getvalue()) == b


def test_compressed_header_fields():
    b = buffer_from_rewards([1.0, 2.0, 3.0])
    c = CompressedERB([b[1]], [3], "coreset", 3.0, 3, 1, 1, "e", seed=2**64 - 1)
    head = json.loads(dumps(c).splitlines()[0])
    assert head["kind"] == "compressed"
    assert (head["method"], head["ratio"], head["original_size"], head["seed"]) == ("coreset", 3.0, 3, 2**64 - 1)
    rec = json.loads(dumps(c).splitlines()[1])
    assert rec["weight"] == 3
    assert loads(dumps(c)) == c


finite = st.floats(allow_nan=False, allow_infinity=False)


@given(
    st.lists(st.tuples(finite, finite, st.integers(0, 2), finite, st.booleans()), max_size=12),
    st.text(max_size=8),
)
def test_round_trip_is_bitwise(rows, env_id):
    exps = [Experience(np.array([a, b]), act, r, np.array([b, a]), t) for a, b, act, r, t in rows]
    buf = ReplayBuffer(2, 3, env_id, None, exps)
    back = loads(dumps(buf))
    assert back == buf
    for x, y in zip(back, buf):
        assert np.float64(x.reward).view(np.uint64) == np.float64(y.reward).view(np.uint64)


def test_negative_zero_survives(tmp_path):
    b = ReplayBuffer(1, 1, "", None, [Experience([-0.0], 0, -0.0, [5e-324], True)])
    save(b, tmp_path / "z.erb.jsonl")
    back = load(tmp_path / "z.erb.jsonl")
    assert math.copysign(1, back[0].reward) == -1
    assert back == b


def test_gzip_files_are_deterministic(tmp_path):
    b = random_buffer(np.random.default_rng(1), 20)
    save(b, tmp_path / "a.erb.jsonl.gz")
    save(b, tmp_path / "b.erb.jsonl.gz")
    raw_a = (tmp_path / "a.erb.jsonl.gz").read_bytes()
    assert raw_a == (tmp_path / "b.erb.jsonl.gz").read_bytes()
    assert gzip.decompress(raw_a).decode() == dumps(b)
    assert load(tmp_path / "a.erb.jsonl.gz") == b


GOOD = dumps(buffer_from_rewards([1.0, 2.0]))


def _mutate_header(**changes):
    lines = GOOD.splitlines()
    head = json.loads(lines[0])
    for k, v in changes.items():
        if v is None:
            head.pop(k)
        else:
            head[k] = v
    return "\n".join([json.dumps(head)] + lines[1:])


def test_valid_stream_parses():
    assert len(loads(GOOD)) == 2


@pytest.mark.parametrize(
    "text",
    [
        "",
        "not json\n",
        "[1,2]\n",
        _mutate_header(format="xyz"),
        _mutate_header(kind="other"),
        _mutate_header(obs_dim=None),
        _mutate_header(obs_dim="1"),
        _mutate_header(count=True),
        _mutate_header(count=-1),
    ],
)
def test_bad_headers(text):
    with pytest.raises(FormatError):
        loads(text)


def test_version_mismatch():
    with pytest.raises(VersionError):
        loads(_mutate_header(version=2))


def test_count_mismatch():
    with pytest.raises(CountMismatchError):
        loads(_mutate_header(count=3))


def test_bad_record_fields():
    lines = GOOD.splitlines()
    rec = json.loads(lines[1])
    rec["terminal"] = 0
    with pytest.raises(FormatError):
        loads("\n".join([lines[0], json.dumps(rec), lines[2]]))


def test_record_dimension_checked():
    lines = GOOD.splitlines()
    rec = json.loads(lines[1])
    rec["obs"] = [0.0, 0.0]
    rec["next_obs"] = [0.0, 0.0]
    with pytest.raises(DimensionError):
        loads("\n".join([lines[0], json.dumps(rec), lines[2]]))


def test_weight_sum_violation():
    b = buffer_from_rewards([1.0, 2.0, 3.0])
    c = CompressedERB([b[0]], [3], "coreset", 3.0, 3, 1, 1)
    lines = dumps(c).splitlines()
    head = json.loads(lines[0])
    head["original_size"] = 4
    with pytest.raises(InvariantError):
        loads("\n".join([json.dumps(head)] + lines[1:]))


def test_compressed_invariants_on_construction():
    b = buffer_from_rewards([1.0, 2.0])
    with pytest.raises(InvariantError):
        CompressedERB([b[0]], [1], "coreset", 2.0, 2, 1, 1)
    with pytest.raises(InvariantError):
        CompressedERB([b[0], b[1]], [2, 0], "coreset", 1.0, 2, 1, 1)
    with pytest.raises(InvariantError):
        CompressedERB([b[0]], [2], "bogus", 2.0, 2, 1, 1)
    with pytest.raises(InvariantError):
        CompressedERB([b[0]], [2], "coreset", 0.5, 2, 1, 1)


def test_identity_wrapper():
    b = buffer_from_rewards([3.0, 1.0])
    c = CompressedERB.identity(b)
    assert c.weights == [1, 1] and c.ratio == 1.0 and c.source_index == [0, 1]
