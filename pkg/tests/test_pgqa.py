import math

import numpy as np
import pytest
import torch

from r2p.pgqa import farthest_point_sampling, pgqa

torch.set_num_threads(1)


def fps_oracle(points, k, first=0):
    """Exhaustive max-min reference: scan all candidates at every step."""
    n = len(points)
    seeds = [first]
    min_d2 = [math.inf] * n
    for _ in range(k - 1):
        last = points[seeds[-1]]
        for i in range(n):
            d2 = (points[i][0] - last[0]) ** 2 + (points[i][1] - last[1]) ** 2
            min_d2[i] = min(min_d2[i], d2)
        best, best_d = 0, -1.0
        for i in range(n):
            if min_d2[i] > best_d:
                best, best_d = i, min_d2[i]
        seeds.append(best)
    return seeds


def endpoints_1d(xs):
    pts = torch.zeros(len(xs), 2, dtype=torch.float64)
    pts[:, 0] = torch.tensor(xs, dtype=torch.float64)
    return pts


class TestFps:
    def test_three_point_line(self):
        # endpoints {0, 1, 10} on the x axis, first seed at 0: the second
        # seed must be the farthest point (10).
        pts = endpoints_1d([0.0, 1.0, 10.0])
        seeds = farthest_point_sampling(pts, 2)
        assert seeds.tolist() == [0, 2]
        assert fps_oracle([(0, 0), (1, 0), (10, 0)], 2) == [0, 2]

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(2, 40))
            k = int(rng.integers(1, n + 1))
            pts = rng.normal(0, 5, size=(n, 2))
            seeds = farthest_point_sampling(torch.as_tensor(pts), k)
            assert seeds.tolist() == fps_oracle([tuple(p) for p in pts], k)

    def test_duplicate_endpoints_lowest_index(self):
        pts = endpoints_1d([0.0, 5.0, 5.0, 5.0])
        seeds = farthest_point_sampling(pts, 3)
        assert seeds.tolist()[:2] == [0, 1]

    def test_too_many_seeds_rejected(self):
        with pytest.raises(ValueError):
            farthest_point_sampling(endpoints_1d([0.0, 1.0]), 3)


def make_anchors(n=8, d=6, t_f=5, seed=0):
    torch.manual_seed(seed)
    tokens = torch.randn(n, d, dtype=torch.float64)
    trajs = torch.randn(n, t_f, 2, dtype=torch.float64)
    return tokens, trajs


class TestPgqa:
    def test_assignment_rows_sum_to_one(self):
        tokens, trajs = make_anchors()
        out = pgqa(tokens, trajs, k=3, tau_g=1.0)
        np.testing.assert_allclose(out.assignment.sum(-1).numpy(), 1.0, atol=1e-6)

    def test_medoid_trajectories_bitwise(self):
        tokens, trajs = make_anchors(seed=1)
        out = pgqa(tokens, trajs, k=4, tau_g=0.5)
        for k, s in enumerate(out.seed_indices.tolist()):
            assert torch.equal(out.medoid_trajectories[k], trajs[s])

    def test_full_selection_covers_all(self):
        tokens, trajs = make_anchors(n=6, seed=2)
        out = pgqa(tokens, trajs, k=6, tau_g=1e-6)
        assert sorted(out.seed_indices.tolist()) == list(range(6))
        # rows collapse onto their own endpoint as tau -> 0
        own = out.assignment.argmax(dim=-1)
        assert own.tolist() == out.seed_indices.tolist()

    def test_uniform_row_entropy_closed_form(self):
        tokens = torch.randn(4, 3, dtype=torch.float64)
        trajs = torch.zeros(4, 5, 2, dtype=torch.float64)  # identical endpoints
        out = pgqa(tokens, trajs, k=4, tau_g=1.0)
        np.testing.assert_allclose(out.entropy.item(), math.log(4.0), atol=1e-9)

    def test_first_seed_from_scores(self):
        tokens, trajs = make_anchors(seed=3)
        scores = torch.tensor([0.1, 0.9, 0.3, 0.2, 0.9, 0.0, 0.1, 0.05],
                              dtype=torch.float64)
        out = pgqa(tokens, trajs, k=2, tau_g=1.0, scores=scores)
        assert out.seed_indices[0].item() == 1  # highest score, lowest index tie

    def test_gradients_reach_every_token(self):
        tokens, trajs = make_anchors(seed=4)
        tokens.requires_grad_(True)
        out = pgqa(tokens, trajs, k=3, tau_g=1.0)
        out.grouped_queries.sum().backward()
        assert torch.all(tokens.grad.abs().sum(dim=-1) > 0)

    def test_batched_matches_single(self):
        tokens, trajs = make_anchors(seed=5)
        single = pgqa(tokens, trajs, k=3, tau_g=0.7)
        batched = pgqa(tokens[None], trajs[None], k=3, tau_g=0.7)
        assert torch.equal(batched.seed_indices[0], single.seed_indices)
        assert torch.allclose(batched.grouped_queries[0], single.grouped_queries)

    def test_invalid_arguments(self):
        tokens, trajs = make_anchors()
        with pytest.raises(ValueError):
            pgqa(tokens, trajs, k=9, tau_g=1.0)
        with pytest.raises(ValueError):
            pgqa(tokens, trajs, k=2, tau_g=0.0)

    def test_assignment_nearest_at_tiny_temperature(self):
        tokens, trajs = make_anchors(n=10, seed=6)
        out = pgqa(tokens, trajs, k=4, tau_g=1e-6)
        endpoints = trajs[:, -1, :]
        for k, s in enumerate(out.seed_indices.tolist()):
            d2 = ((endpoints - endpoints[s]) ** 2).sum(-1)
            nearest = int(d2.argmin())
            assert out.assignment[k].argmax().item() == nearest
