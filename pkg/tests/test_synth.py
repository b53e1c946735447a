import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from accent_mdd.corpus import Utterance, load_meta, load_split, read_jsonl
from accent_mdd.synth import (
    PhoneAcousticModel,
    SynthSpec,
    apply_edits,
    gen_corpus,
    inject_errors,
    make_rng,
    render_frames,
)


def test_defaults():
    s = SynthSpec()
    assert (s.n_phones, s.n_accents, s.feat_dim) == (12, 4, 16)
    assert (s.sub_rate, s.del_rate, s.ins_rate) == (0.08, 0.02, 0.02)
    assert (s.n_train, s.n_dev, s.n_test) == (800, 100, 200)


@pytest.mark.parametrize("kw", [dict(n_phones=40), dict(sub_rate=0.6, del_rate=0.5), dict(n_dev=0),
                                dict(min_len=5, max_len=4), dict(ins_rate=-0.1), dict(n_accents=1),
                                dict(accent_confusion=1.5)])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw).validate()


def test_zero_rates_identity():
    rng = make_rng(0)
    per, edits = inject_errors([1, 2, 3, 2], (0, 0, 0), 5, rng)
    assert per == [1, 2, 3, 2] and edits == []


def test_forced_substitution():
    rng = make_rng(1)
    can = [0, 1, 2, 3, 4, 0, 1]
    per, edits = inject_errors(can, (1.0, 0, 0), 5, rng)
    assert len(per) == len(can) and all(p != c for p, c in zip(per, can))
    assert all(e[1] == "sub" for e in edits)


def test_full_deletion_is_legal():
    per, edits = inject_errors([1, 2], (0, 1.0, 0), 4, make_rng(2))
    assert per == [] and [e[1] for e in edits] == ["del", "del"]
    with pytest.raises(ValueError):
        inject_errors([], (0, 0, 0), 4, make_rng(2))


@settings(max_examples=100, deadline=None)
@given(can=st.lists(st.integers(0, 5), min_size=1, max_size=10), seed=st.integers(0, 2**32 - 1),
       sub=st.floats(0, 0.5), dele=st.floats(0, 0.4), ins=st.floats(0, 1))
def test_edit_replay_reproduces_perceived(can, seed, sub, dele, ins):
    per, edits = inject_errors(can, (sub, dele, ins), 6, make_rng(seed))
    assert apply_edits(can, edits) == per


def test_render_zero_noise(rng):
    spec = SynthSpec()
    am = PhoneAcousticModel.generate(spec, make_rng(0))
    f = render_frames([3, 1], 2, am, rng, (3, 3), 0.0)
    assert f.shape == (6, spec.feat_dim)
    for i, p in enumerate([3, 1]):
        np.testing.assert_array_equal(f[3 * i : 3 * i + 3], np.tile(am.prototypes[p] + am.offsets[2, p], (3, 1)))
    g = render_frames([3, 1], 0, am, rng, (3, 3), 0.0)
    np.testing.assert_allclose(f - g, np.repeat(am.offsets[2, [3, 1]] - am.offsets[0, [3, 1]], 3, axis=0), atol=1e-15)


def test_render_length_accounting():
    spec = SynthSpec()
    am = PhoneAcousticModel.generate(spec, make_rng(0))
    rng_a, rng_b = make_rng(9), make_rng(9)
    f = render_frames([0, 1, 2, 3], 1, am, rng_a, (2, 5), 0.3)
    ks = [int(rng_b.integers(2, 6)) for _ in range(4)]
    assert f.shape[0] == sum(ks)
    with pytest.raises(ValueError):
        render_frames([], 0, am, rng_a)


def test_prototype_separation():
    spec = SynthSpec()
    am = PhoneAcousticModel.generate(spec, make_rng(0))
    assert am.min_prototype_distance() > 4 * spec.noise_std
    with pytest.raises(ValueError):
        PhoneAcousticModel.generate(SynthSpec(noise_std=5.0), make_rng(0), max_tries=5)


def test_gen_corpus_files_and_determinism(tmp_path):
    spec = SynthSpec(n_train=30, n_dev=5, n_test=7, seed=3)
    splits, _ = gen_corpus(spec, tmp_path / "a")
    gen_corpus(spec, tmp_path / "b")
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert [len(splits[s]) for s in ("train", "dev", "test")] == [30, 5, 7]
    utts = load_split(tmp_path / "a", "test")
    assert len(utts) == 7
    rec = json.loads((tmp_path / "a" / "train.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"id", "accent", "accent_name", "canonical", "perceived", "edits", "frames"}
    meta = load_meta(tmp_path / "a")
    assert meta["synth_spec"]["seed"] == 3 and len(meta["phones"]) == 12 and len(meta["accents"]) == 4
    gen_corpus(SynthSpec(n_train=30, n_dev=5, n_test=7, seed=4), tmp_path / "c")
    assert (tmp_path / "a" / "train.jsonl").read_bytes() != (tmp_path / "c" / "train.jsonl").read_bytes()


def test_corpus_closure_and_ranges(small_corpus):
    spec, splits, _ = small_corpus
    for utts in splits.values():
        for u in utts:
            assert apply_edits(u.canonical, u.edits) == u.perceived
            assert 0 <= u.accent < spec.n_accents
            assert all(0 <= p < spec.n_phones for p in u.canonical + u.perceived)
            assert spec.min_len <= len(u.canonical) <= spec.max_len
            assert u.frames.shape[1] == spec.feat_dim


def test_substitution_rate_matches_spec():
    spec = SynthSpec(n_train=2000, n_dev=1, n_test=1, seed=7)
    splits, _ = gen_corpus(spec)
    n_pos = sum(len(u.canonical) for u in splits["train"])
    n_sub = sum(1 for u in splits["train"] for e in u.edits if e[1] == "sub")
    assert n_pos >= 10_000
    assert abs(n_sub / n_pos - spec.sub_rate) <= 0.2 * spec.sub_rate


def test_accents_separable_by_nearest_prototype():
    # accent lives in the last accent_dims features; averaging over an utterance exposes it
    spec = SynthSpec()
    splits, _ = gen_corpus(spec)
    means = lambda utts: np.array([u.frames[:, -spec.accent_dims:].mean(0) for u in utts])
    train, test = splits["train"], splits["test"]
    Xtr, ytr = means(train), np.array([u.accent for u in train])
    protos = np.array([Xtr[ytr == a].mean(0) for a in range(spec.n_accents)])
    Xte, yte = means(test), np.array([u.accent for u in test])
    pred = np.argmin(((Xte[:, None] - protos[None]) ** 2).sum(-1), axis=1)
    assert (pred == yte).mean() >= 0.9


def test_utterance_json_round_trip(small_corpus, tmp_path):
    _, splits, _ = small_corpus
    from accent_mdd.corpus import write_jsonl

    write_jsonl(tmp_path / "x.jsonl", splits["dev"])
    back = read_jsonl(tmp_path / "x.jsonl")
    for a, b in zip(splits["dev"], back):
        assert (a.id, a.accent, a.canonical, a.perceived, a.edits) == (b.id, b.accent, b.canonical, b.perceived, b.edits)
        assert np.array_equal(a.frames, b.frames)


def test_utterance_validation():
    with pytest.raises(ValueError):
        Utterance("x", 0, [], [1], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Utterance("x", 0, [1], [1], np.zeros((0, 3)))
    u = Utterance.from_dict({"id": "y", "accent": None, "canonical": [1], "frames": [[0.0]]})
    assert not u.has_accent and u.perceived == []
