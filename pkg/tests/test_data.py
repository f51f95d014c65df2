import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from structmtl.data import (FULL, INPUT_ONLY, LABEL_ONLY, DataError, Dataset, Sample,
                            SynthParams, dataset_digest, default_template, denormalize,
                            load_dataset, load_image, load_pts, normalize_landmarks, partition,
                            random_split, save_dataset, save_image, save_pts, strip_inputs,
                            strip_labels, synth_generate)
from structmtl.numerics import make_rng

TPL = default_template()


def kinds_dataset(n_in, n_lab, n_full):
    x, y = np.full(4, 0.5), np.zeros(2)
    s = ([Sample(INPUT_ONLY, x=x)] * n_in + [Sample(LABEL_ONLY, y=y)] * n_lab
         + [Sample(FULL, x, y)] * n_full)
    return Dataset(s, 4, 1)


def test_sample_kind_contract():
    with pytest.raises(DataError):
        Sample(FULL, x=np.zeros(2))
    with pytest.raises(DataError):
        Sample(INPUT_ONLY, x=np.zeros(2), y=np.zeros(2))
    with pytest.raises(DataError):
        Sample("weird")


@pytest.mark.parametrize("counts,expected", [
    ((0, 0, 6), (6, 6, 6)),
    ((2, 3, 5), (7, 8, 5)),
    ((0, 0, 0), (0, 0, 0)),
])
def test_partition(counts, expected):
    F, L, S = partition(kinds_dataset(*counts))
    assert (len(F), len(L), len(S)) == expected
    assert set(S) <= set(F) & set(L)
    assert set(F) | set(L) == set(range(sum(counts)))


def test_synth_identity_ranges():
    p = SynthParams(img_side=20, rot_max_deg=0, scale_min=1, scale_max=1, shift_max=0)
    ds = synth_generate(TPL, 5, p, make_rng(0))
    target = (2.0 * TPL.points - 1.0).reshape(-1)
    for s in ds.samples:
        assert np.allclose(s.y, target, rtol=0, atol=1e-12)


def test_synth_deterministic_and_valid():
    a = synth_generate(TPL, 20, SynthParams(), make_rng(3))
    b = synth_generate(TPL, 20, SynthParams(), make_rng(3))
    assert all(np.array_equal(u.x, v.x) and np.array_equal(u.y, v.y) for u, v in zip(a.samples, b.samples))
    a.validate()
    assert a.counts() == {FULL: 20, INPUT_ONLY: 0, LABEL_ONLY: 0}
    assert a.d_x == 400 and a.n_points == 10


def test_synth_geometry_preserved():
    p = SynthParams()
    ds = synth_generate(TPL, 1000, p, make_rng(11))
    Y = np.stack([s.y for s in ds.samples])
    assert np.all(Y.var(axis=0) > 0)
    tdist = np.linalg.norm(TPL.points[:, None] - TPL.points[None], axis=-1)
    for s, (theta, scale, _, _) in zip(ds.samples, ds.meta):
        pts = denormalize(s.y, p.img_side).reshape(-1, 2)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        assert np.allclose(d, tdist * scale * p.img_side, rtol=0, atol=1e-9)


def test_synth_impossible_ranges_error():
    with pytest.raises(DataError):
        synth_generate(TPL, 1, SynthParams(scale_min=3.0, scale_max=3.0, max_retries=5), make_rng(0))
    with pytest.raises(ValueError):
        synth_generate(TPL, 0, SynthParams(), make_rng(0))


def test_synth_blobs_at_landmarks():
    p = SynthParams(noise_std=0.0, rot_max_deg=0, scale_min=1, scale_max=1, shift_max=0)
    ds = synth_generate(TPL, 1, p, make_rng(0))
    img = ds.samples[0].x.reshape(20, 20)
    pts = denormalize(ds.samples[0].y, 20).reshape(-1, 2)
    for x, y in pts:
        r, c = min(int(y), 19), min(int(x), 19)
        assert img[r, c] > 0.5


def test_strip_fractions():
    ds = synth_generate(TPL, 100, SynthParams(), make_rng(1))
    assert strip_labels(ds, 0.0, make_rng(0)).counts()[FULL] == 100
    assert strip_labels(ds, 1.0, make_rng(0)).counts()[FULL] == 0
    half = strip_labels(ds, 0.5, make_rng(0))
    assert half.counts() == {FULL: 50, INPUT_ONLY: 50, LABEL_ONLY: 0}
    both = strip_inputs(half, 0.4, make_rng(1))
    assert both.counts() == {FULL: 30, INPUT_ONLY: 50, LABEL_ONLY: 20}
    F, L, S = partition(both)
    assert set(S) <= set(F) & set(L)
    # surviving payloads are untouched
    for orig, new in zip(ds.samples, both.samples):
        if new.x is not None:
            assert new.x.tobytes() == orig.x.tobytes()
        if new.y is not None:
            assert new.y.tobytes() == orig.y.tobytes()
    with pytest.raises(ValueError):
        strip_labels(ds, 1.5, make_rng(0))


def test_random_split():
    ds = synth_generate(TPL, 30, SynthParams(), make_rng(2))
    tr, va = random_split(ds, 7, make_rng(0))
    assert (len(tr), len(va)) == (23, 7)
    with pytest.raises(DataError):
        random_split(ds, 31, make_rng(0))


def test_normalization():
    assert normalize_landmarks([25.0], 50)[0] == 0.0
    assert normalize_landmarks([0.0, 50.0], 50).tolist() == [-1.0, 1.0]
    with pytest.raises(DataError):
        normalize_landmarks([51.0], 50)


@given(st.floats(0, 50))
def test_normalization_round_trip(p):
    assert abs(denormalize(normalize_landmarks([p], 50), 50)[0] - p) <= 1e-12


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_pts(tmp_path):
    body = "".join(f"{i}.5 {2 * i}.25\n" for i in range(68))
    v = load_pts(write(tmp_path / "a.pts", f"version: 1\nn_points: 68\n{{\n{body}}}\n"))
    assert v.shape == (136,)
    assert v[:4].tolist() == [0.5, 0.25, 1.5, 2.25]


@pytest.mark.parametrize("text,where", [
    ("version: 1\nn_points: 3\n{\n1 2\n3 4\n}\n", ":6:"),
    ("version: 1\nn_points: x\n{\n}\n", ":2:"),
    ("n_points: 1\n{\n1 2\n}\n", ":1:"),
    ("version: 1\nn_points: 1\n{\n1 2\n", "missing closing"),
    ("version: 1\nn_points: 1\n{\n1 2 3\n}\n", ":4:"),
])
def test_load_pts_errors(tmp_path, text, where):
    with pytest.raises(DataError, match=where):
        load_pts(write(tmp_path / "bad.pts", text))


def test_pts_round_trip(tmp_path):
    pts = make_rng(0).uniform(0, 50, 20)
    save_pts(tmp_path / "p.pts", pts)
    assert load_pts(tmp_path / "p.pts").tobytes() == pts.tobytes()


def test_load_image(tmp_path):
    (tmp_path / "black.pgm").write_bytes(b"P5\n# comment\n4 4\n255\n" + bytes(16))
    assert not load_image(tmp_path / "black.pgm", 4).any()
    x = np.arange(9) / 255.0
    save_image(tmp_path / "r.pgm", x, 3)
    assert load_image(tmp_path / "r.pgm", 3).tobytes() == x.tobytes()
    with pytest.raises(DataError, match="expected 5x5"):
        load_image(tmp_path / "r.pgm", 5)
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(DataError, match="truncated"):
        load_image(tmp_path / "t.pgm", 4)
    (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(DataError, match="byte 0"):
        load_image(tmp_path / "p2.pgm")


def test_dataset_directory_round_trip(tmp_path):
    ds = synth_generate(TPL, 12, SynthParams(), make_rng(4))
    ds = strip_inputs(strip_labels(ds, 0.25, make_rng(5)), 1 / 3, make_rng(6))
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d", 20)
    assert [s.kind for s in back.samples] == [s.kind for s in ds.samples]
    for a, b in zip(ds.samples, back.samples):
        assert (a.x is None and b.x is None) or a.x.tobytes() == b.x.tobytes()
        assert (a.y is None and b.y is None) or a.y.tobytes() == b.y.tobytes()
    header = (tmp_path / "d" / "manifest.tsv").read_bytes().split(b"\n")[0]
    assert header == b"kind\timage_path\tpts_path"
    save_dataset(ds, tmp_path / "e")
    assert dataset_digest(tmp_path / "d") == dataset_digest(tmp_path / "e")


def test_manifest_errors(tmp_path):
    d = tmp_path / "m"
    d.mkdir()
    write(d / "manifest.tsv", "kind\timage_path\tpts_path\nfull\t\tpoints/x.pts\n")
    with pytest.raises(DataError, match="manifest.tsv:2: missing file"):
        load_dataset(d, 20)
    with pytest.raises(DataError, match="no manifest"):
        load_dataset(tmp_path, 20)
