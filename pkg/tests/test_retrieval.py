import math

import numpy as np
import pytest
import torch

from r2p.retrieval import (
    AnchorRetrievalLayer,
    BankScorer,
    GatedCrossAttention,
    cosine_logits,
    init_orthogonal_queries,
    ste_select,
    unique_select,
)

torch.set_num_threads(1)


def softmax_oracle(values):
    exps = [math.exp(v) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


class TestOrthogonalQueries:
    def test_orthonormal_rows(self):
        q = init_orthogonal_queries(6, 32, seed=0)
        gram = q @ q.T
        assert torch.allclose(gram, torch.eye(6, dtype=torch.float64), atol=1e-6)

    def test_single_row_unit_norm(self):
        q = init_orthogonal_queries(1, 16, seed=4)
        assert float(q.norm()) == pytest.approx(1.0, abs=1e-9)

    def test_seed_determinism(self):
        assert torch.equal(init_orthogonal_queries(4, 8, 9), init_orthogonal_queries(4, 8, 9))

    def test_too_many_queries_rejected(self):
        with pytest.raises(ValueError):
            init_orthogonal_queries(33, 32, 0)


def zero_gates(gca: GatedCrossAttention):
    """Drive every micro gate to an exact sigmoid(-1e9) == 0."""
    with torch.no_grad():
        for gate in gca.gate.values():
            last = gate[-1]
            last.weight.zero_()
            last.bias.fill_(-1e9)


def const_router(gca: GatedCrossAttention, values: dict, null: float):
    with torch.no_grad():
        for m, v in values.items():
            gca.router[m].weight.zero_()
            gca.router[m].bias.fill_(v)
        gca.null_logit.fill_(null)


def make_contexts(s=2, n_q=4, d=16, seed=0):
    torch.manual_seed(seed)
    q_base = torch.randn(s, n_q, d, dtype=torch.float64)
    target = torch.randn(s, 5, d, dtype=torch.float64)
    neighbors = torch.randn(s, 3, d, dtype=torch.float64)
    masks = (torch.ones(s, 5, dtype=torch.bool), torch.ones(s, 3, dtype=torch.bool))
    return q_base, {"target": (target, masks[0]), "neighbors": (neighbors, masks[1]),
                    "map": None}


class TestGatedCrossAttention:
    def test_gates_off_identity(self):
        torch.manual_seed(0)
        gca = GatedCrossAttention(16).double()
        zero_gates(gca)
        q_base, contexts = make_contexts()
        q_adapt, routing, gates, _ = gca(q_base, contexts)
        assert torch.equal(q_adapt, q_base)
        for m in ("target", "neighbors"):
            assert torch.all(gates[m] == 0.0)

    def test_null_sink_saturation(self):
        torch.manual_seed(1)
        gca = GatedCrossAttention(16).double()
        const_router(gca, {"target": 0.3, "neighbors": -0.2, "map": 0.0}, null=50.0)
        q_base, contexts = make_contexts(seed=1)
        q_adapt, routing, _, _ = gca(q_base, contexts)
        assert float(routing[:, 3].min()) >= 1.0 - 1e-6
        assert float((q_adapt - q_base).norm()) <= 1e-4

    def test_routing_softmax_oracle(self):
        # two live modalities with pinned logits (1.0, 0.5) and null 0.0;
        # expected weights from a direct softmax evaluation.
        torch.manual_seed(2)
        gca = GatedCrossAttention(16).double()
        const_router(gca, {"target": 1.0, "neighbors": 0.5, "map": 0.0}, null=0.0)
        q_base, contexts = make_contexts(seed=2)
        _, routing, _, _ = gca(q_base, contexts)
        expected = softmax_oracle([1.0, 0.5, 0.0])  # target, neighbors, null
        np.testing.assert_allclose(routing[0, 0].item(), expected[0], atol=1e-9)
        np.testing.assert_allclose(routing[0, 1].item(), expected[1], atol=1e-9)
        np.testing.assert_allclose(routing[0, 3].item(), expected[2], atol=1e-9)
        assert routing[0, 2].item() == 0.0  # disabled map pathway

    def test_routing_rows_sum_to_one(self):
        torch.manual_seed(3)
        gca = GatedCrossAttention(16).double()
        q_base, contexts = make_contexts(seed=3)
        _, routing, _, _ = gca(q_base, contexts)
        np.testing.assert_allclose(routing.sum(dim=-1).detach().numpy(), 1.0, atol=1e-6)
        assert torch.all(routing >= 0)

    def test_all_masked_contexts_passthrough(self):
        torch.manual_seed(4)
        gca = GatedCrossAttention(16).double()
        q_base, _ = make_contexts(seed=4)
        s = q_base.shape[0]
        contexts = {
            "target": (torch.randn(s, 5, 16, dtype=torch.float64),
                       torch.zeros(s, 5, dtype=torch.bool)),
            "neighbors": (torch.randn(s, 3, 16, dtype=torch.float64),
                          torch.zeros(s, 3, dtype=torch.bool)),
            "map": None,
        }
        q_adapt, routing, _, _ = gca(q_base, contexts)
        assert torch.equal(q_adapt, q_base)
        np.testing.assert_allclose(routing[:, 3].detach().numpy(), 1.0, atol=1e-12)


class TestBankLogits:
    def test_self_similarity(self):
        emb = init_orthogonal_queries(8, 12, seed=5)
        scorer = BankScorer(12, 12).double()
        z, _ = scorer(emb[3:4], emb)
        assert float(z[0, 3]) == pytest.approx(1.0, abs=1e-6)
        assert float(z.max()) <= 1.0 + 1e-6

    def test_orthogonal_query_zero_row(self):
        emb = init_orthogonal_queries(8, 12, seed=5)
        basis = init_orthogonal_queries(12, 12, seed=5)
        # embed bank in the first 8 directions; query along a direction
        # orthogonal to all of them
        q = torch.zeros(1, 12, dtype=torch.float64)
        q[0, 11] = 1.0
        full = torch.eye(12, dtype=torch.float64)[:8]
        z = cosine_logits(q, full)
        assert torch.allclose(z, torch.zeros_like(z), atol=1e-6)

    def test_brute_force_recomputation(self):
        torch.manual_seed(6)
        q = torch.randn(4, 10, dtype=torch.float64)
        e = torch.randn(8, 10, dtype=torch.float64)
        z = cosine_logits(q, e).numpy()
        qn = q.numpy() / np.linalg.norm(q.numpy(), axis=1, keepdims=True)
        en = e.numpy() / np.linalg.norm(e.numpy(), axis=1, keepdims=True)
        np.testing.assert_allclose(z, qn @ en.T, atol=1e-6)
        assert np.abs(z).max() <= 1.0 + 1e-6

    def test_zero_norm_query_guarded_and_flagged(self):
        scorer = BankScorer(6, 6).double()
        q = torch.zeros(1, 2, 6, dtype=torch.float64)
        e = init_orthogonal_queries(4, 6, seed=1)
        z, degenerate = scorer(q, e)
        assert torch.isfinite(z).all()
        assert degenerate.all()

    def test_learnable_map_when_dims_differ(self):
        scorer = BankScorer(10, 6).double()
        assert scorer.proj is not None
        z, _ = scorer(torch.randn(3, 10, dtype=torch.float64),
                      torch.randn(7, 6, dtype=torch.float64))
        assert z.shape == (3, 7)
        assert float(z.abs().max()) <= 1.0 + 1e-6


class TestSteSelect:
    def test_dominant_logit(self):
        z = torch.tensor([[10.0, -10.0, -10.0]], dtype=torch.float64)
        y_st, pi, y_hard, idx = ste_select(z, tau=0.25)
        assert torch.equal(y_hard, torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64))
        np.testing.assert_allclose(pi.numpy(), [[1.0, 0.0, 0.0]], atol=1e-6)
        assert idx.tolist() == [0]

    def test_softmax_oracle(self):
        z = torch.tensor([[1.0, 0.5]], dtype=torch.float64)
        _, pi, _, _ = ste_select(z, tau=1.0)
        expected = softmax_oracle([1.0, 0.5])
        np.testing.assert_allclose(pi.numpy()[0], expected, atol=1e-5)
        np.testing.assert_allclose(pi.numpy()[0], [0.62246, 0.37754], atol=1e-5)

    def test_tie_breaks_low_index(self):
        z = torch.tensor([[0.7, 0.7], [0.3, 0.3]], dtype=torch.float64)
        _, _, y_hard, idx = ste_select(z, tau=1.0)
        assert idx.tolist() == [0, 0]
        assert torch.equal(y_hard[:, 0], torch.ones(2, dtype=torch.float64))

    def test_forward_is_bitwise_one_hot(self):
        torch.manual_seed(7)
        z = torch.randn(5, 9, dtype=torch.float64)
        y_st, _, y_hard, _ = ste_select(z, tau=0.7)
        assert torch.equal(y_st, y_hard)

    def test_seeded_noise_deterministic(self):
        z = torch.zeros(3, 6, dtype=torch.float64)
        a = ste_select(z, 1.0, gumbel_noise=True, rng_seed=11)
        b = ste_select(z, 1.0, gumbel_noise=True, rng_seed=11)
        assert torch.equal(a[1], b[1])
        assert torch.equal(a[3], b[3])
        c = ste_select(z, 1.0, gumbel_noise=True, rng_seed=12)
        assert not torch.equal(a[1], c[1])

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            ste_select(torch.zeros(1, 3), tau=0.0)

    def test_gradient_contract_linear_readout(self):
        # the parameter gradient through y_st must equal the analytic
        # gradient of the same readout applied to pi; checked against
        # central finite differences of the pi-path in double precision.
        torch.manual_seed(8)
        n_q, b, d_emb = 3, 8, 5
        z0 = torch.randn(n_q, b, dtype=torch.float64)
        e = torch.randn(b, d_emb, dtype=torch.float64)
        c = torch.randn(n_q, d_emb, dtype=torch.float64)
        tau = 0.8

        z = z0.clone().requires_grad_(True)
        y_st, pi, _, _ = ste_select(z, tau)
        loss = (c * (y_st @ e)).sum()
        loss.backward()
        analytic = z.grad.clone()

        def pi_path(zv):
            p = torch.softmax(zv / tau, dim=-1)
            return (c * (p @ e)).sum()

        h = 1e-5
        numeric = torch.zeros_like(z0)
        flat = z0.flatten()
        for i in range(flat.numel()):
            bump = torch.zeros_like(flat)
            bump[i] = h
            up = pi_path((flat + bump).view_as(z0))
            down = pi_path((flat - bump).view_as(z0))
            numeric.view(-1)[i] = (up - down) / (2 * h)
        rel = (analytic - numeric).abs() / numeric.abs().clamp_min(1e-6)
        assert float(rel.max()) < 1e-5


class TestUniqueSelect:
    def test_no_duplicates(self):
        torch.manual_seed(9)
        z = torch.randn(2, 4, 16, dtype=torch.float64)
        _, _, _, idx = unique_select(z, tau=1.0)
        for row in idx:
            assert len(set(row.tolist())) == 4


class TestRetrievalLayer:
    def make_layer(self, bank, d_model=16, n_q=4, **kw):
        torch.manual_seed(0)
        layer = AnchorRetrievalLayer(
            d_model, n_q, bank.embeddings, bank.trajectories, query_seed=0, **kw)
        return layer

    def run_layer(self, layer, s=3, d_model=16, seed=0, **kw):
        torch.manual_seed(seed + 100)
        target = torch.randn(s, 6, d_model)
        tmask = torch.ones(s, 6, dtype=torch.bool)
        nbrs = torch.randn(s, 3, d_model)
        nmask = torch.ones(s, 3, dtype=torch.bool)
        return layer(target, tmask, nbrs, nmask, tau=1.0, **kw)

    def test_forward_contracts(self):
        from conftest import random_bank
        bank = random_bank()
        layer = self.make_layer(bank)
        out = self.run_layer(layer)
        np.testing.assert_allclose(out.pi.sum(-1).detach(), 1.0, atol=1e-6)
        np.testing.assert_allclose(out.routing_weights.sum(-1).detach(), 1.0, atol=1e-6)
        assert float(out.logits.abs().max()) <= 1.0 + 1e-6
        assert torch.all(out.y_hard.sum(-1) == 1.0)

    def test_one_hot_gather_bitwise(self):
        from conftest import random_bank
        bank = random_bank()
        layer = self.make_layer(bank)
        out = self.run_layer(layer)
        e_ret = out.y_st @ layer.bank_embeddings
        gathered = layer.bank_embeddings[out.selected_indices]
        assert torch.equal(e_ret, gathered)
        assert torch.equal(out.selected_trajectories,
                           layer.bank_trajectories[out.selected_indices])

    def test_zeroed_mlps_residual_identity(self):
        from conftest import random_bank
        bank = random_bank()
        layer = self.make_layer(bank)
        with torch.no_grad():
            for net in (layer.emb_mlp, layer.traj_mlp):
                for mod in net:
                    if isinstance(mod, torch.nn.Linear):
                        mod.weight.zero_()
                        mod.bias.zero_()
        out = self.run_layer(layer)
        assert torch.equal(out.anchor_tokens, out.q_adapt)

    def test_duplicate_selection_allowed(self):
        from conftest import random_bank
        bank = random_bank()
        layer = self.make_layer(bank)
        # force identical rows -> identical picks across queries
        with torch.no_grad():
            layer.queries.copy_(layer.queries[0:1].expand_as(layer.queries))
        out = self.run_layer(layer)
        idx = out.selected_indices[0]
        assert (idx == idx[0]).all()

    def test_unique_mode_distinct(self):
        from conftest import random_bank
        bank = random_bank()
        layer = self.make_layer(bank, unique_anchors=True)
        with torch.no_grad():
            layer.queries.copy_(layer.queries[0:1].expand_as(layer.queries))
        out = self.run_layer(layer)
        for row in out.selected_indices:
            assert len(set(row.tolist())) == row.numel()

    def test_soft_mode_blends(self):
        from conftest import random_bank
        bank = random_bank()
        layer = self.make_layer(bank, mode="soft")
        out = self.run_layer(layer)
        assert torch.equal(out.y_st, out.pi)
        blended = out.pi @ layer.bank_trajectories.flatten(1)
        assert torch.allclose(out.selected_trajectories.flatten(2),
                              blended, atol=1e-6)

    def test_attention_report_five_entries(self):
        from conftest import random_bank
        bank = random_bank()
        layer = self.make_layer(bank)
        out = self.run_layer(layer)
        for m in ("target", "neighbors"):
            idx, w = out.attention_top[m]
            assert idx.shape[-1] == 5 and w.shape[-1] == 5
            diffs = w[..., 1:] - w[..., :-1]
            assert float(diffs.max()) <= 1e-12
        assert out.attention_top["map"] is None
