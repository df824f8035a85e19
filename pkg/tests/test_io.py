import json
import warnings

import numpy as np
import pytest

from hawkes_epm import io
from hawkes_epm.hgap_epm import CommunityParams, initial_state
from hawkes_epm.model import HawkesParams

from conftest import random_events, random_params


def write(path, text):
    path.write_text(text)
    return path


def test_header_only_file(tmp_path):
    data, vocab, n_self = io.load_events(write(tmp_path / "e.csv", "t,src,dst\n"))
    assert len(data) == 0 and data.V == 0 and vocab == [] and n_self == 0


def test_unsorted_rows_are_sorted(tmp_path):
    f = write(tmp_path / "e.csv", "t,src,dst\n3.0,a,b\n1.0,b,a\n2.0,a,c\n2.0,c,a\n")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        data, vocab, n_self = io.load_events(f)
    assert n_self == 0
    assert data.t.tolist() == [1.0, 2.0, 2.0, 3.0]
    assert vocab == ["a", "b", "c"]
    # ties keep file order
    assert [(vocab[s], vocab[d]) for s, d in zip(data.src, data.dst)] == \
        [("b", "a"), ("a", "c"), ("c", "a"), ("a", "b")]
    assert data.T == 3.0


def test_self_edges_skipped_with_count(tmp_path):
    f = write(tmp_path / "e.csv", "t,src,dst\n1.0,a,b\n1.5,a,a\n")
    with pytest.warns(RuntimeWarning, match="1 self-edge"):
        data, vocab, n_self = io.load_events(f)
    assert n_self == 1 and len(data) == 1


@pytest.mark.parametrize("body,line", [
    ("1.0,a\n", 2),
    ("1.0,a,b\nx,a,b\n", 3),
    ("1.0,a,b\n-1,a,b\n", 3),
    ("1.0,a,b\n2.0,,b\n", 3),
    ("nan,a,b\n", 2),
])
def test_malformed_rows_name_line(tmp_path, body, line):
    f = write(tmp_path / "e.csv", "t,src,dst\n" + body)
    with pytest.raises(io.DataError, match=f"line {line}"):
        io.load_events(f)


def test_bad_header_and_vocab(tmp_path):
    with pytest.raises(io.DataError, match="header"):
        io.load_events(write(tmp_path / "e.csv", "time,a,b\n1,a,b\n"))
    with pytest.raises(io.DataError, match="empty"):
        io.load_events(write(tmp_path / "f.csv", ""))
    f = write(tmp_path / "g.csv", "t,src,dst\n1.0,a,z\n")
    with pytest.raises(io.DataError, match="'z' not in vocabulary"):
        io.load_events(f, vocab=["a", "b"])
    data, vocab, _ = io.load_events(f, vocab=["z", "a"])
    assert vocab == ["z", "a"] and data.src[0] == 1 and data.dst[0] == 0
    with pytest.raises(io.DataError, match="before the last event"):
        io.load_events(f, T=0.5)


def test_time_scale_and_roundtrip(tmp_path, rng):
    data = random_events(rng, n=25, V=4, T=9.0)
    io.write_events(tmp_path / "e.csv", data)
    back, vocab, _ = io.load_events(tmp_path / "e.csv", vocab=["0", "1", "2", "3"], T=9.0)
    assert np.array_equal(back.t, data.t) and np.array_equal(back.src, data.src)
    days, _, _ = io.load_events(tmp_path / "e.csv", time_scale=0.5)
    np.testing.assert_allclose(days.t, data.t * 0.5)


def test_vocabulary_is_a_bijection(tmp_path):
    f = write(tmp_path / "e.csv", "t,src,dst\n1,x,y\n2,y,z\n3,z,x\n4,w,x\n")
    data, vocab, _ = io.load_events(f)
    assert sorted(set(vocab)) == sorted(vocab) and data.V == len(vocab)
    assert set(np.concatenate([data.src, data.dst]).tolist()) == set(range(len(vocab)))


def test_covariates(tmp_path):
    assert io.load_covariates(None, ["a", "b"]) is None
    f = write(tmp_path / "x.csv", "src,dst,x1,x2\na,b,0.5,-1\n")
    cov = io.load_covariates(f, ["a", "b", "c"], D=2)
    assert cov.D == 2
    np.testing.assert_array_equal(cov.get(0, 1), [0.5, -1.0])
    np.testing.assert_array_equal(cov.get(1, 0), [0.0, 0.0])
    with pytest.raises(io.DataError, match="dimension 2 does not match D=3"):
        io.load_covariates(f, ["a", "b"], D=3)
    dup = write(tmp_path / "d.csv", "src,dst,x1\na,b,1\nb,a,2\na,b,3\n")
    with pytest.raises(io.DataError, match=r"pair \(a, b\)"):
        io.load_covariates(dup, ["a", "b"])
    with pytest.raises(io.DataError, match="line 2"):
        io.load_covariates(write(tmp_path / "n.csv", "src,dst,x1\na,b,inf\n"), ["a", "b"])


def bits(a):
    return np.asarray(a, dtype=np.float64).view(np.uint64)


def test_community_checkpoint_is_bit_exact(tmp_path, rng):
    s = initial_state(7, 5, rng)
    s.phi[2, 3] = 5e-324  # subnormal survives
    s.omega[0, 1] = np.nextafter(1.0, 2.0)
    back = io.checkpoint_roundtrip(s)
    for name in ("phi", "omega", "r", "a", "c"):
        assert np.array_equal(bits(getattr(back, name)), bits(getattr(s, name)))
    assert back.hyper == s.hyper
    io.save_checkpoint(tmp_path / "c.json", s, ["n%d" % i for i in range(7)], {"sweep": 3})
    loaded, vocab, meta = io.load_checkpoint(tmp_path / "c.json", kind="community")
    assert np.array_equal(bits(loaded.phi), bits(s.phi)) and meta == {"sweep": 3}
    assert vocab[6] == "n6"


def test_hawkes_checkpoint_keeps_sparse_mu(tmp_path, rng):
    p = random_params(rng, V=6, K=3, D=2)
    p.mu = {(0, 4): rng.gamma(1.0, 1.0, (3, 3)), (5, 1): np.zeros((3, 3))}
    p.fit_horizon = 12.345678901234567
    back = io.checkpoint_roundtrip(p)
    assert set(back.mu) == set(p.mu)
    for key in p.mu:
        assert np.array_equal(bits(back.mu[key]), bits(p.mu[key]))
    for name in ("phi", "omega", "alpha", "beta", "nu"):
        assert np.array_equal(bits(getattr(back, name)), bits(getattr(p, name)))
    assert (back.delta, back.tau, back.fit_horizon) == (p.delta, p.tau, p.fit_horizon)
    empty = random_params(rng, V=3, K=2)
    assert io.checkpoint_roundtrip(empty).mu == {}


def test_corrupt_and_mismatched_checkpoints(tmp_path, rng):
    p = random_params(rng, V=3, K=2)
    path = tmp_path / "h.json"
    io.save_checkpoint(path, p)
    text = path.read_text()
    write(tmp_path / "trunc.json", text[: len(text) // 2])
    with pytest.raises(io.CheckpointError, match="not valid JSON"):
        io.load_checkpoint(tmp_path / "trunc.json")
    doc = json.loads(text)
    doc["version"] = 99
    write(tmp_path / "v.json", json.dumps(doc))
    with pytest.raises(io.CheckpointError, match="version 99.*version 1"):
        io.load_checkpoint(tmp_path / "v.json")
    doc = json.loads(text)
    doc["params"]["alpha"]["hex"] = doc["params"]["alpha"]["hex"][:-1]
    write(tmp_path / "s.json", json.dumps(doc))
    with pytest.raises(io.CheckpointError):
        io.load_checkpoint(tmp_path / "s.json")
    with pytest.raises(io.CheckpointError, match="expected a community"):
        io.load_checkpoint(path, kind="community")
    with pytest.raises(io.CheckpointError, match="not a hawkes-epm-checkpoint"):
        io.load_checkpoint(write(tmp_path / "o.json", "[1, 2]"))
    assert not list(tmp_path.glob("*.tmp"))


def test_manifest_lines(tmp_path):
    io.append_manifest(tmp_path, "a.csv", {"x": 1, "y": [1, 2]}, 7)
    io.append_manifest(tmp_path, "b.json", {"y": [1, 2], "x": 1}, None)
    lines = [json.loads(x) for x in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    assert [r["file"] for r in lines] == ["a.csv", "b.json"]
    assert lines[0]["config_hash"] == lines[1]["config_hash"]
    assert len(lines[0]["config_hash"]) == 64 and lines[0]["seed"] == 7
    assert io.config_hash({"x": 2}) != io.config_hash({"x": 1})
