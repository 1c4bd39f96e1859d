from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _builders import B, make_seq
from itrack.memory import (
    GeometricEmbedder,
    InsertStatus,
    MemoryBank,
    MemoryContractError,
    MemoryEntry,
    Polarity,
    background_embedding,
    histogram_embedding,
    new_bank_pair,
    pairwise_novel,
    score,
)
from itrack.synth import ablation_suite, synthesize

POS, NEG = Polarity.POSITIVE, Polarity.NEGATIVE


def unit(*v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def entry(v, frame=0, pol=POS):
    return MemoryEntry.normalized(v, frame, pol)


def test_insert_into_empty_bank():
    bank = MemoryBank(POS, dim=3)
    assert bank.insert(entry([1, 0, 0])).status is InsertStatus.ADDED


def test_identical_embedding_is_not_novel():
    bank = MemoryBank(POS, dim=3)
    bank.insert(entry([1, 0, 0], 0))
    out = bank.insert(entry([1, 0, 0], 5))
    assert out.status is InsertStatus.REJECTED_NOT_NOVEL
    assert len(bank) == 1 and bank.entries[0].frame == 0


def test_closest_pair_eviction_drops_older_member():
    u, v = unit(1, 0, 0), unit(0, 1, 0)
    w = unit(0.8, 0, 0.6)  # sim(w, u) = 0.8, sim(w, v) = 0
    bank = MemoryBank(POS, capacity=2, dim=3)
    bank.insert(MemoryEntry(u, 1, POS))
    bank.insert(MemoryEntry(v, 2, POS))
    out = bank.insert(MemoryEntry(w, 3, POS))
    assert out.status is InsertStatus.ADDED_WITH_EVICTION
    assert np.array_equal(out.evicted.embedding, u)
    assert [e.frame for e in bank.entries] == [2, 3]


def test_eviction_ties_go_to_lower_frame_then_list_order():
    a, b, c = unit(1, 0, 0), unit(0, 1, 0), unit(0, 0, 1)
    bank = MemoryBank(POS, capacity=3, dim=3)
    for e, f in ((a, 7), (b, 3), (c, 9)):
        bank.insert(MemoryEntry(e, f, POS))
    # all pairs orthogonal including the incoming one: the lowest frame goes
    out = bank.insert(MemoryEntry(unit(-1, -1, -1), 10, POS))
    assert out.evicted.frame == 3


def brute_force_victim(entries, incoming):
    cand = list(entries) + [incoming]
    best = None
    for i in range(len(cand)):
        for j in range(i + 1, len(cand)):
            sim = float(cand[i].embedding @ cand[j].embedding)
            if j == len(cand) - 1:
                older = i  # the incoming entry is always the newest
            else:
                older = i if cand[i].frame <= cand[j].frame else j
            key = (-sim, cand[older].frame, older)
            if best is None or key < best[0]:
                best = (key, older)
    return best[1]


def test_vectorised_eviction_matches_pairwise_scan():
    rng = np.random.default_rng(0)
    for trial in range(150):
        dim = int(rng.integers(2, 6))
        cap = int(rng.integers(1, 6))
        bank = MemoryBank(POS, capacity=cap, novelty_epsilon=0.05, dim=dim)
        for k in range(30):
            v = rng.standard_normal(dim)
            if rng.random() < 0.3:
                v = np.round(v)  # encourages exact similarity ties
            if not np.linalg.norm(v):
                continue
            e = MemoryEntry.normalized(v, int(rng.integers(0, 8)), POS)
            before = list(bank.entries)
            sims = [float(x.embedding @ e.embedding) for x in before]
            out = bank.insert(e)
            if before and max(sims) > bank.max_similarity:
                assert out.status is InsertStatus.REJECTED_NOT_NOVEL
            elif len(before) < cap:
                assert out.status is InsertStatus.ADDED
            else:
                victim = brute_force_victim(before, e)
                assert out.evicted is before[victim]
            assert len(bank) <= cap
            assert pairwise_novel(bank)


@pytest.mark.parametrize(
    "embedding, pol, dim",
    [([1, 0, 0], NEG, 3), ([1, 0, 0, 0], POS, 3)],
)
def test_contract_errors(embedding, pol, dim):
    with pytest.raises(MemoryContractError):
        MemoryBank(POS, dim=dim).insert(entry(embedding, pol=pol))


def test_entries_must_be_unit_norm():
    with pytest.raises(MemoryContractError):
        MemoryEntry(np.array([1.0, 1.0]), 0, POS)
    with pytest.raises(MemoryContractError):
        MemoryEntry.normalized([0.0, 0.0], 0, POS)


def test_score_examples():
    pos, neg = new_bank_pair(dim=3)
    c = unit(1, 0, 0)
    assert score(c, pos, neg) == 0.0
    pos.insert(MemoryEntry(c, 0, POS))
    assert score(c, pos, neg) == pytest.approx(1.0, abs=1e-15)
    pos2, neg2 = new_bank_pair(dim=3)
    pos2.insert(MemoryEntry(unit(0.9, np.sqrt(1 - 0.81), 0), 0, POS))
    neg2.insert(MemoryEntry(unit(0.4, 0, np.sqrt(1 - 0.16)), 0, NEG))
    assert score(c, pos2, neg2) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(MemoryContractError):
        score(c, neg2, pos2)
    with pytest.raises(MemoryContractError):
        score(unit(1, 0), pos2, neg2)


vec = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=150, deadline=None)
@given(st.lists(vec, max_size=6), st.lists(vec, max_size=6), vec, vec, st.booleans())
def test_score_is_monotone(pos_vs, neg_vs, cand, extra, add_positive):
    pos, neg = new_bank_pair(capacity=64, novelty_epsilon=0.01, dim=4)
    for i, v in enumerate(pos_vs):
        pos.insert(entry(v, i, POS))
    for i, v in enumerate(neg_vs):
        neg.insert(entry(v, i, NEG))
    c = unit(*cand)
    before = score(c, pos, neg)
    if add_positive:
        pos.insert(entry(extra, 99, POS))
        assert score(c, pos, neg) >= before - 1e-12
    else:
        neg.insert(entry(extra, 99, NEG))
        assert score(c, pos, neg) <= before + 1e-12


def test_insert_is_deterministic_and_snapshots_round_trip():
    rng = np.random.default_rng(5)
    vs = [rng.standard_normal(8) for _ in range(40)]

    def fill():
        bank = MemoryBank(NEG, capacity=5, dim=8)
        for i, v in enumerate(vs):
            bank.insert(entry(v, i, NEG))
        return bank

    a, b = fill(), fill()
    assert a.entries == b.entries
    assert MemoryBank.from_snapshot(a.snapshot()).entries == a.entries


def test_bank_stays_full_when_stream_is_novel():
    bank = MemoryBank(POS, capacity=4, dim=8)
    for i in range(8):
        bank.insert(MemoryEntry(np.eye(8)[i], i, POS))
        assert len(bank) == min(i + 1, 4)


def test_histogram_embedding():
    img = np.zeros((20, 20, 3), np.uint8)
    img[:, 10:] = (255, 0, 0)
    left = histogram_embedding(img, B(0, 0, 10, 20))
    right = histogram_embedding(img, B(10, 0, 10, 20))
    assert left.shape == (512,)
    assert np.linalg.norm(left) == pytest.approx(1.0)
    assert left[0] == pytest.approx(1.0)
    assert right[7 * 64] == pytest.approx(1.0)
    assert float(left @ right) == 0.0
    with pytest.raises(MemoryContractError):
        histogram_embedding(img, B(50, 50, 5, 5))


def test_geometric_embedder_uses_object_features_or_background():
    seq = synthesize(ablation_suite(n_sequences=1)[0])
    emb = GeometricEmbedder(seq)
    box = seq.objects["1"][10]
    f = emb(10, box)
    assert np.allclose(f, seq.features["1"][10] / np.linalg.norm(seq.features["1"][10]))
    far = B(0, 0, 5, 5)
    bg = emb(10, far)
    assert np.allclose(bg, background_embedding(far, 640, 360, 16))
    assert emb(10, None) is None
    plain = make_seq([B(0, 0, 5, 5)], [(0, "init", B(0, 0, 5, 5))])
    assert GeometricEmbedder(plain)(0, B(0, 0, 5, 5)) is None
