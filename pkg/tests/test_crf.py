"""Linear-chain CRF against full path enumeration.

Every dynamic program here is small enough to check by listing all K^M
paths explicitly; the enumeration oracles live in oracles.py.
"""

import numpy as np
import pytest

import hamnet.tensor as T
from hamnet.crf import (EmissionTable, TransitionTable, bio2_forbidden_mask,
                        init_crf, log_partition, nll_loss, path_score, viterbi)
from hamnet.data import LABELS, N_LABELS, label_index
from hamnet.errors import ShapeError
from hamnet.nn import ParamStore
from hamnet.tensor import Tensor
from oracles import (crf_best_path_enumerate, crf_log_partition_enumerate,
                     crf_path_score)


def random_tables(rng, m, k, scale=1.0, boundaries=True):
    em = EmissionTable(Tensor(scale * rng.normal(size=(m, k))))
    tr = TransitionTable(
        scores=Tensor(scale * rng.normal(size=(k, k))),
        start=Tensor(scale * rng.normal(size=k)) if boundaries else None,
        stop=Tensor(scale * rng.normal(size=k)) if boundaries else None,
    )
    return em, tr


def raw(tr):
    k = tr.n_labels
    start = tr.start.data if tr.start is not None else np.zeros(k)
    stop = tr.stop.data if tr.stop is not None else np.zeros(k)
    return tr.scores.data, start, stop


class TestLogPartition:
    @pytest.mark.parametrize("m, k", [(1, 2), (2, 3), (3, 3), (4, 4), (5, 3)])
    def test_matches_enumeration(self, m, k):
        rng = np.random.default_rng(m * 10 + k)
        em, tr = random_tables(rng, m, k)
        got = log_partition(em, tr).data
        want = crf_log_partition_enumerate(em.scores.data, *raw(tr))
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_without_boundary_scores(self):
        rng = np.random.default_rng(7)
        em, tr = random_tables(rng, 3, 4, boundaries=False)
        got = log_partition(em, tr).data
        want = crf_log_partition_enumerate(em.scores.data, *raw(tr))
        assert got == pytest.approx(want, rel=1e-12)

    def test_large_scores_stay_finite(self):
        rng = np.random.default_rng(8)
        em, tr = random_tables(rng, 6, 5, scale=400.0)
        value = log_partition(em, tr).data
        assert np.isfinite(value)
        # and still dominated by the best path, up to float rounding
        _, best = crf_best_path_enumerate(em.scores.data, *raw(tr))
        assert value >= best - 1e-6
        assert value == pytest.approx(best, rel=1e-10)

    def test_empty_sequence_rejected(self):
        tr = TransitionTable(Tensor(np.zeros((3, 3))))
        with pytest.raises(ShapeError):
            log_partition(EmissionTable(Tensor(np.zeros((0, 3)))), tr)

    def test_transition_shape_mismatch_rejected(self):
        tr = TransitionTable(Tensor(np.zeros((3, 3))))
        with pytest.raises(ShapeError):
            log_partition(EmissionTable(Tensor(np.zeros((2, 4)))), tr)


class TestPathScore:
    def test_matches_enumeration_formula(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m, k = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            em, tr = random_tables(rng, m, k)
            labels = [int(v) for v in rng.integers(0, k, m)]
            got = path_score(em, tr, labels).data
            want = crf_path_score(labels, em.scores.data, *raw(tr))
            assert got == pytest.approx(want, rel=1e-12)

    def test_path_length_must_match(self):
        rng = np.random.default_rng(10)
        em, tr = random_tables(rng, 3, 3)
        with pytest.raises(ShapeError):
            path_score(em, tr, [0, 1])

    def test_label_range_checked(self):
        rng = np.random.default_rng(11)
        em, tr = random_tables(rng, 2, 3)
        with pytest.raises(ShapeError):
            path_score(em, tr, [0, 3])


class TestNll:
    def test_is_log_partition_minus_score(self):
        rng = np.random.default_rng(12)
        em, tr = random_tables(rng, 4, 3)
        labels = [2, 0, 1, 1]
        loss = nll_loss(em, tr, labels).data
        assert loss == pytest.approx(log_partition(em, tr).data
                                     - path_score(em, tr, labels).data, rel=1e-12)
        assert loss > 0.0

    def test_path_probabilities_normalize(self):
        import itertools
        rng = np.random.default_rng(13)
        m, k = 3, 3
        em, tr = random_tables(rng, m, k)
        total = sum(np.exp(-nll_loss(em, tr, list(path)).data)
                    for path in itertools.product(range(k), repeat=m))
        assert total == pytest.approx(1.0, rel=1e-10)

    def test_gradients_match_numeric(self):
        rng = np.random.default_rng(14)
        m, k = 4, 3
        params = {
            "em": Tensor(rng.normal(size=(m, k)), requires_grad=True),
            "tr": Tensor(rng.normal(size=(k, k)), requires_grad=True),
            "start": Tensor(rng.normal(size=k), requires_grad=True),
            "stop": Tensor(rng.normal(size=k), requires_grad=True),
        }
        labels = [1, 0, 2, 2]

        def f():
            em = EmissionTable(params["em"])
            tr = TransitionTable(params["tr"], params["start"], params["stop"])
            return nll_loss(em, tr, labels)

        err = T.check_gradients(f, params, epsilon=1e-6)
        assert err < 1e-8


class TestViterbi:
    def test_matches_enumeration(self):
        rng = np.random.default_rng(15)
        for _ in range(60):
            m, k = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            em, tr = random_tables(rng, m, k)
            got = viterbi(em, tr)
            want_path, want_score = crf_best_path_enumerate(em.scores.data, *raw(tr))
            assert got == want_path
            assert crf_path_score(got, em.scores.data, *raw(tr)) \
                == pytest.approx(want_score, rel=1e-12)

    def test_all_ties_resolve_to_smallest_index(self):
        m, k = 4, 5
        em = EmissionTable(Tensor(np.zeros((m, k))))
        tr = TransitionTable(Tensor(np.zeros((k, k))), Tensor(np.zeros(k)),
                             Tensor(np.zeros(k)))
        assert viterbi(em, tr) == [0, 0, 0, 0]

    def test_single_token(self):
        rng = np.random.default_rng(16)
        em, tr = random_tables(rng, 1, 4)
        want = int((em.scores.data[0] + tr.start.data + tr.stop.data).argmax())
        assert viterbi(em, tr) == [want]

    def test_forbidden_mask_shape_checked(self):
        rng = np.random.default_rng(17)
        em, tr = random_tables(rng, 3, 4)
        with pytest.raises(ShapeError):
            viterbi(em, tr, forbidden=np.zeros((3, 3), dtype=bool))


class TestConstrainedDecoding:
    def test_mask_structure(self):
        mask = bio2_forbidden_mask()
        assert mask.shape == (N_LABELS, N_LABELS)
        bp, ip = label_index("B-PER"), label_index("I-PER")
        il = label_index("I-LOC")
        o = label_index("O")
        assert not mask[bp, ip]       # B-PER -> I-PER fine
        assert not mask[ip, ip]       # I-PER -> I-PER fine
        assert mask[o, ip]            # O -> I-PER forbidden
        assert mask[bp, il]           # B-PER -> I-LOC forbidden
        assert not mask[ip, o]        # anything may return to O
        assert not mask[o, bp]        # and open a fresh entity
        # column j is constrained only when j is an inside tag
        for j in range(N_LABELS):
            if j == 0 or j % 2 == 1:
                assert not mask[:, j].any()

    def test_decode_never_emits_forbidden_bigram(self):
        rng = np.random.default_rng(18)
        mask = bio2_forbidden_mask()
        for _ in range(40):
            m = int(rng.integers(1, 8))
            em, tr = random_tables(rng, m, N_LABELS, scale=2.0)
            path = viterbi(em, tr, forbidden=mask)
            for a, b in zip(path, path[1:]):
                assert not mask[a, b]

    def test_constrained_matches_restricted_enumeration(self):
        import itertools
        rng = np.random.default_rng(19)
        mask = bio2_forbidden_mask()
        # small label subset keeps enumeration tractable: O, B-PER, I-PER
        sub = [0, 1, 2]
        submask = mask[np.ix_(sub, sub)]
        for _ in range(20):
            m = int(rng.integers(1, 6))
            em, tr = random_tables(rng, m, 3)
            got = viterbi(em, tr, forbidden=submask)
            best, best_path = -np.inf, None
            for path in itertools.product(range(3), repeat=m):
                if any(submask[a, b] for a, b in zip(path, path[1:])):
                    continue
                s = crf_path_score(list(path), em.scores.data, *raw(tr))
                if s > best:
                    best, best_path = s, list(path)
            assert got == best_path


class TestInit:
    def test_parameter_shapes(self):
        store = ParamStore(np.random.default_rng(20))
        emit_w, emit_b, table = init_crf(store, d=16)
        assert emit_w.data.shape == (16, N_LABELS)
        assert emit_b.data.shape == (N_LABELS,)
        assert table.scores.data.shape == (N_LABELS, N_LABELS)
        assert table.start.data.shape == (N_LABELS,)
        assert table.stop.data.shape == (N_LABELS,)
        assert set(store.tensors) == {"crf.emit.w", "crf.emit.b", "crf.trans",
                                      "crf.start", "crf.stop"}
