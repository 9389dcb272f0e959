import filecmp
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from crossutt.data import (Corpus, CorpusFormatError, LengthMismatchError, SyntheticTaskSpec,
                           Utterance, generate_synthetic_corpus, read_corpus, read_feature_file,
                           serialize, template_classifier, token_templates, write_corpus,
                           write_feature_file)


def toy_corpus(sizes: dict[str, int], seed: int = 0, scramble: bool = True) -> Corpus:
    """Clips with the given utterance counts, optionally listed in scrambled order."""
    rng = np.random.default_rng(seed)
    utts = []
    for clip, n in sizes.items():
        starts = np.cumsum(rng.uniform(0.5, 3.0, n))
        for s in starts:
            utts.append(Utterance(clip, float(s), np.zeros((8, 2), np.float32), (1,)))
    order = rng.permutation(len(utts)) if scramble else range(len(utts))
    return Corpus([utts[i] for i in order], ["<blank>", "a"])


def as_tuples(plan):
    return [[None if s is None else (s.clip_id, s.utt_index, s.reset) for s in slot] for slot in plan.slots]


def check(corpus, plan):
    utts = [(u.clip_id, u.start_time) for u in corpus.utterances]
    return oracles.plan_violations(utts, as_tuples(plan))


# -- serialization ------------------------------------------------------------------------

def test_five_clip_scenario():
    corpus = toy_corpus({"A": 5, "B": 2, "C": 2, "D": 2, "E": 1}, scramble=False)
    plan = serialize(corpus, 3, shuffle=False)
    rows = [[None if s is None else (s.clip_id, s.reset) for s in row] for row in plan]
    assert rows[0] == [("A", True), ("B", True), ("C", True)]
    assert rows[1] == [("A", False), ("B", False), ("C", False)]
    assert rows[2] == [("A", False), ("D", True), ("E", True)]
    assert rows[3] == [("A", False), ("D", False), None]
    assert rows[4] == [("A", False), None, None]
    assert plan.num_steps == 5
    assert check(corpus, plan) == []


def test_batch_size_one_concatenates_clips():
    corpus = toy_corpus({"A": 3, "B": 1, "C": 2})
    plan = serialize(corpus, 1, seed=4)
    steps = plan.slots[0]
    assert len(steps) == 6 and None not in steps
    resets = [k for k, s in enumerate(steps) if s.reset]
    changes = [k for k, s in enumerate(steps) if k == 0 or s.clip_id != steps[k - 1].clip_id]
    assert resets == changes and len(resets) == 3


def test_utterances_follow_start_time_within_clip():
    corpus = toy_corpus({"A": 6}, seed=2)
    plan = serialize(corpus, 1)
    times = [corpus.utterances[s.utt_index].start_time for s in plan.slots[0]]
    assert times == sorted(times)


def test_serialize_errors():
    with pytest.raises(ValueError):
        serialize(Corpus([]), 2)
    with pytest.raises(ValueError):
        serialize(toy_corpus({"A": 1}), 0)


def test_shuffle_is_seeded():
    corpus = toy_corpus({c: 2 for c in "ABCDEFGH"})
    a, b = serialize(corpus, 2, seed=1), serialize(corpus, 2, seed=1)
    assert as_tuples(a) == as_tuples(b)
    assert as_tuples(a) != as_tuples(serialize(corpus, 2, seed=2))


@given(st.lists(st.integers(1, 6), min_size=1, max_size=9), st.integers(1, 4), st.integers(0, 99))
def test_random_plans_satisfy_invariants(sizes, batch, seed):
    corpus = toy_corpus({f"c{i}": n for i, n in enumerate(sizes)}, seed)
    plan = serialize(corpus, batch, seed=seed)
    assert check(corpus, plan) == []


# -- synthetic corpus ---------------------------------------------------------------------

def test_noise_free_table_lookup_is_perfect():
    spec = SyntheticTaskSpec(n_clips=20, noise=0.0, p_dependent=0.0)
    corpus = generate_synthetic_corpus(spec, seed=5)
    tmpl = token_templates(spec, 5)
    for u in corpus.utterances:
        assert template_classifier(tmpl, u) == list(u.labels)
        assert u.dependent_positions == ()


def test_dependent_tokens_are_ambiguous_in_isolation():
    spec = SyntheticTaskSpec(n_clips=300, p_dependent=1.0)
    corpus = generate_synthetic_corpus(spec, seed=6)
    tmpl = token_templates(spec, 6)
    deps = sorted(spec.dependent_ids())
    correct = total = 0
    for u in corpus.utterances:
        guess = template_classifier(tmpl, u, deps)
        for p in u.dependent_positions:
            total += 1
            correct += guess[p] == u.labels[p]
    acc = correct / total
    assert total > 500
    assert acc <= 0.5 + 3 * math.sqrt(0.25 / total)


def test_dependent_token_follows_previous_cue():
    spec = SyntheticTaskSpec(n_clips=30, p_dependent=1.0)
    corpus = generate_synthetic_corpus(spec, seed=7)
    cues = {spec.cue_id(i): i for i in range(spec.n_confusable)}
    for idxs in corpus.clips().values():
        utts = [corpus.utterances[i] for i in idxs]
        assert utts[0].dependent_positions == ()
        for prev, cur in zip(utts, utts[1:]):
            prev_cue = next(cues[t] for t in prev.labels if t in cues)
            (p,) = cur.dependent_positions
            assert cur.labels[p] == spec.dep_id(prev_cue)


def test_synthetic_is_deterministic(tmp_path):
    spec = SyntheticTaskSpec(n_clips=5)
    a = write_corpus(generate_synthetic_corpus(spec, seed=9), tmp_path / "a")
    b = write_corpus(generate_synthetic_corpus(spec, seed=9), tmp_path / "b")
    cmp = filecmp.dircmp(a, b)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()
    assert all((a / "feats" / f.name).read_bytes() == f.read_bytes() for f in (b / "feats").iterdir())


def test_token_frames_span_features(small_corpus):
    for u in small_corpus.utterances:
        assert len(u.token_frames) == len(u.labels)
        assert u.token_frames[0][0] == 0 and u.token_frames[-1][1] == u.num_frames


# -- storage ---------------------------------------------------------------------------------

def test_round_trip_is_byte_exact(small_corpus, tmp_path):
    first = write_corpus(small_corpus, tmp_path / "one")
    back = read_corpus(first)
    second = write_corpus(back, tmp_path / "two")
    for rel in ["vocab.txt", "manifest.jsonl"] + [f"feats/{p.name}" for p in (first / "feats").iterdir()]:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
    assert back.utterances[3].dependent_positions == small_corpus.utterances[3].dependent_positions
    assert np.array_equal(back.utterances[0].features, small_corpus.utterances[0].features)


def test_corrupt_magic(tmp_path):
    path = tmp_path / "x.ctxf"
    write_feature_file(path, np.ones((3, 2)))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(CorpusFormatError, match="magic"):
        read_feature_file(path)


def test_truncated_feature_file(tmp_path):
    path = tmp_path / "x.ctxf"
    write_feature_file(path, np.ones((3, 2)))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(LengthMismatchError):
        read_feature_file(path)


def test_manifest_shape_mismatch(small_corpus, tmp_path):
    d = write_corpus(small_corpus, tmp_path / "c")
    write_feature_file(d / "feats" / "000000.ctxf", np.ones((2, small_corpus.feature_dim)))
    with pytest.raises(LengthMismatchError):
        read_corpus(d)


def test_missing_manifest(tmp_path):
    with pytest.raises(CorpusFormatError):
        read_corpus(tmp_path)


def test_short_utterances_filtered_with_warning(caplog):
    corpus = toy_corpus({"A": 2})
    corpus.utterances[0].features = np.zeros((3, 2), np.float32)
    kept = corpus.filter_short(7)
    assert len(kept) == 1
    assert "dropping utterance" in caplog.text
