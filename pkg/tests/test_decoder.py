import numpy as np
import pytest

from evokg.decoder import (convtranse_core, score_entities,
                           score_entities_batch, score_relations,
                           score_relations_batch)
from evokg.evolution import EvolutionState
from evokg.model import init_decoder
from evokg.tensor import Tensor

import oracles


def make_state(rng, num_entities=5, num_rel=4, dim=8):
    h = oracles.normalize_rows_np(rng.standard_normal((num_entities, dim)))
    r = oracles.normalize_rows_np(rng.standard_normal((num_rel, dim)))
    return EvolutionState(Tensor(h), Tensor(r), 0)


class TestCore:
    def test_zero_weights_zero_output(self, rng):
        params = init_decoder(rng, dim=6)
        params.kernels.data[...] = 0.0
        params.fc.data[...] = 0.0
        out = convtranse_core(Tensor(rng.standard_normal(6)),
                              Tensor(rng.standard_normal(6)), params)
        assert np.array_equal(out.data, np.zeros(6))

    def test_constructed_identity_passes_first_input(self, rng):
        # kernel 0 picks the center tap of channel 0; the fully-connected
        # block routes row 0 of the activation straight through
        dim = 5
        params = init_decoder(rng, dim=dim, num_kernels=4)
        params.kernels.data[...] = 0.0
        params.kernels.data[0, 0, 1] = 1.0
        params.fc.data[...] = 0.0
        params.fc.data[:dim, :] = np.eye(dim)
        e1 = Tensor(np.abs(rng.standard_normal(dim)) + 0.1)  # positive entries
        e2 = Tensor(rng.standard_normal(dim))
        out = convtranse_core(e1, e2, params)
        assert np.allclose(out.data, e1.data, atol=1e-12)

    def test_matches_composed_oracle(self, rng):
        dim = 8
        params = init_decoder(rng, dim=dim)
        e1 = rng.standard_normal(dim)
        e2 = rng.standard_normal(dim)
        out = convtranse_core(Tensor(e1), Tensor(e2), params)
        conv = oracles.conv1d_loops(np.stack([e1, e2]), params.kernels.data, 1)
        act = np.where(conv >= 0, conv, oracles.RRELU_MEAN_SLOPE * conv)
        expected = act.reshape(-1) @ params.fc.data
        assert np.abs(out.data - expected).max() < 1e-12

    def test_dim_smaller_than_kernel_rejected(self, rng):
        params = init_decoder(rng, dim=8)
        with pytest.raises(ValueError, match="kernel width"):
            convtranse_core(Tensor(np.ones(2)), Tensor(np.ones(2)), params)


class TestScoreEntities:
    def test_zero_core_gives_half(self, rng):
        state = make_state(rng)
        params = init_decoder(rng, dim=8)
        params.kernels.data[...] = 0.0
        params.fc.data[...] = 0.0
        probs = score_entities(state, 0, 1, params)
        assert np.allclose(probs.data, 0.5)

    def test_orthonormal_argmax(self, rng):
        dim = 4
        state = EvolutionState(Tensor(np.eye(dim)),
                               Tensor(oracles.normalize_rows_np(
                                   rng.standard_normal((3, dim)))), 0)
        params = init_decoder(rng, dim=dim)
        probs_t = score_entities(state, 2, 1, params)
        core = convtranse_core(Tensor(state.h.data[2]), Tensor(state.r.data[1]),
                               params)
        k = int(np.argmax(core.data))
        if core.data[k] > 0:
            assert int(np.argmax(probs_t.data)) == k

    def test_matches_scalar_loop_oracle(self, rng):
        state = make_state(rng, num_entities=6, dim=8)
        params = init_decoder(rng, dim=8)
        probs = score_entities(state, 3, 2, params)
        conv = oracles.conv1d_loops(
            np.stack([state.h.data[3], state.r.data[2]]), params.kernels.data, 1)
        act = np.where(conv >= 0, conv, oracles.RRELU_MEAN_SLOPE * conv)
        core = act.reshape(-1) @ params.fc.data
        expected = np.array([1.0 / (1.0 + np.exp(-(state.h.data[i] @ core)))
                             for i in range(6)])
        assert np.abs(probs.data - expected).max() < 1e-12

    def test_probabilities_in_open_interval(self, rng):
        state = make_state(rng)
        params = init_decoder(rng, dim=8)
        probs = score_entities_batch(state, [0, 1, 2], [0, 1, 2], params)
        assert ((probs.data > 0) & (probs.data < 1)).all()

    def test_id_out_of_range(self, rng):
        state = make_state(rng)
        params = init_decoder(rng, dim=8)
        with pytest.raises(IndexError):
            score_entities(state, 99, 0, params)
        with pytest.raises(IndexError):
            score_entities(state, 0, 99, params)


class TestScoreRelations:
    def test_zero_core_gives_half(self, rng):
        state = make_state(rng)
        params = init_decoder(rng, dim=8)
        params.kernels.data[...] = 0.0
        params.fc.data[...] = 0.0
        probs = score_relations(state, 0, 1, params)
        assert np.allclose(probs.data, 0.5)

    def test_sign_symmetric_relation_rows(self, rng):
        dim = 6
        v = oracles.normalize_rows_np(rng.standard_normal((1, dim)))[0]
        state = EvolutionState(
            Tensor(oracles.normalize_rows_np(rng.standard_normal((3, dim)))),
            Tensor(np.stack([v, -v])), 0)
        params = init_decoder(rng, dim=dim)
        probs = score_relations(state, 0, 1, params)
        core = convtranse_core(Tensor(state.h.data[0]), Tensor(state.h.data[1]),
                               params)
        dot = float(v @ core.data)
        sig = 1.0 / (1.0 + np.exp(-dot))
        assert probs.data[0] == pytest.approx(sig, abs=1e-12)
        assert probs.data[1] == pytest.approx(1.0 - sig, abs=1e-12)

    def test_matches_loop_oracle(self, rng):
        state = make_state(rng, num_rel=5, dim=8)
        params = init_decoder(rng, dim=8)
        probs = score_relations(state, 1, 4, params)
        conv = oracles.conv1d_loops(
            np.stack([state.h.data[1], state.h.data[4]]), params.kernels.data, 1)
        act = np.where(conv >= 0, conv, oracles.RRELU_MEAN_SLOPE * conv)
        core = act.reshape(-1) @ params.fc.data
        expected = 1.0 / (1.0 + np.exp(-(state.r.data @ core)))
        assert np.abs(probs.data - expected).max() < 1e-12


class TestBatchSemantics:
    def test_batch_equals_singles_bitwise(self, rng):
        state = make_state(rng, num_entities=7, num_rel=6, dim=8)
        params = init_decoder(rng, dim=8)
        subjects = [0, 3, 5, 1, 6, 2]
        relations = [0, 5, 2, 4, 1, 3]
        batched = score_entities_batch(state, subjects, relations, params).data
        for i, (s, r) in enumerate(zip(subjects, relations)):
            single = score_entities(state, s, r, params).data
            assert np.array_equal(batched[i], single), f"row {i} differs"

    def test_relation_batch_equals_singles_bitwise(self, rng):
        state = make_state(rng, num_entities=7, num_rel=6, dim=8)
        params = init_decoder(rng, dim=8)
        subjects = [0, 3, 5]
        objects = [2, 6, 1]
        batched = score_relations_batch(state, subjects, objects, params).data
        for i, (s, o) in enumerate(zip(subjects, objects)):
            single = score_relations(state, s, o, params).data
            assert np.array_equal(batched[i], single)

    def test_monotone_in_dot_product(self, rng):
        # raising the alignment of one entity row with the core output
        # strictly raises its probability
        state = make_state(rng, num_entities=5, dim=8)
        params = init_decoder(rng, dim=8)
        core = convtranse_core(Tensor(state.h.data[0]), Tensor(state.r.data[0]),
                               params).data
        before = score_entities(state, 0, 0, params).data[3]
        state.h.data[3] += 0.05 * core / np.linalg.norm(core)
        after = score_entities(state, 0, 0, params).data[3]
        assert after > before
