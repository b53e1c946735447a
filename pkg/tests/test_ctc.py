import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from accent_mdd.autodiff import Graph, Tensor, grad_check
from accent_mdd.ctc import (
    ARPABET_39,
    PhoneInventory,
    ctc_greedy_decode,
    ctc_loss,
    ctc_loss_batch,
    ctc_nll,
    is_feasible,
)
from accent_mdd.verify import ctc_oracle_suite


def test_inventory_layout():
    inv = PhoneInventory()
    assert inv.n_phones == 39 and inv.blank == 39 and inv.eos == 40 and inv.size == 41
    assert inv.phones == tuple(ARPABET_39) and len(set(inv.phones)) == 39
    assert inv.symbol(39) == "<blank>" and inv.symbol(0) == "aa"
    small = PhoneInventory.of_size(12)
    assert small.blank == 12 and small.size == 14


def test_single_path():
    r = ctc_loss(Graph().constant(np.log([[0.5, 0.5]])), [0], 1)
    assert r.feasible
    assert abs(float(r.loss.value) + math.log(0.5)) < 1e-15


def test_two_frames_uniform():
    r = ctc_loss(Graph().constant(np.log(np.full((2, 2), 0.5))), [0], 1)
    assert abs(float(r.loss.value) + math.log(0.75)) < 1e-14
    assert abs(float(r.loss.value) - 0.28768) < 1e-5


def test_repeat_needs_blank():
    r = ctc_loss(Graph().constant(np.log([[0.5, 0.5]])), [0, 0], 1)
    assert not r.feasible and float(r.loss.value) == math.inf
    assert ctc_nll(np.log([[0.5, 0.5]]), [0, 0], 1) == math.inf


def test_oracle_equivalence_200():
    r = ctc_oracle_suite(trials=200, seed=11)
    assert r["passed"], r
    assert r["infeasible"] > 0  # the sampler does exercise infeasible pairs


@settings(max_examples=60, deadline=None)
@given(S=st.integers(0, 8), labels=st.lists(st.integers(0, 2), max_size=5))
def test_feasibility_monotone(S, labels):
    if is_feasible(S, labels):
        assert is_feasible(S + 1, labels)


@pytest.mark.parametrize("S", [1, 2, 3, 4])
def test_total_probability_conservation(S):
    # |U| = 2 phones plus blank; every path collapses to exactly one label sequence
    rng = np.random.default_rng(S)
    logits = rng.normal(size=(S, 3))
    logp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    total = 0.0
    for L in range(S + 1):
        for labels in itertools.product(range(2), repeat=L):
            nll = ctc_nll(logp, list(labels), 2)
            total += 0.0 if math.isinf(nll) else math.exp(-nll)
    assert abs(total - 1.0) < 1e-12


def test_grad_check_random_4x3():
    rng = np.random.default_rng(3)
    z0 = rng.normal(size=(4, 3))

    def f(x):
        t = Tensor(x.reshape(4, 3))
        g = Graph()
        loss = ctc_loss(g.leaf(t), [0, 1], 2).loss
        g.backward(loss)
        return float(loss.value), t.grad

    # raw log-prob table, not renormalised: the recursion is checked on its own
    logp = np.log(np.exp(z0) / np.exp(z0).sum(-1, keepdims=True))
    assert grad_check(f, logp.ravel(), 1e-4) <= 1e-4


def test_fused_batch_matches_graph_route():
    rng = np.random.default_rng(4)
    B, S, V = 3, 6, 5
    z = rng.normal(size=(B, S, V))
    labels = [[0, 1, 1], [2], [3, 0, 2, 1]]
    lengths = [6, 4, 5]

    t_batch = Tensor(z.copy())
    g = Graph()
    lp = g.leaf(t_batch).log_softmax()
    losses = ctc_loss_batch(lp, labels, lengths, V - 1)
    w = np.array([0.5, -1.0, 2.0])
    g.backward((losses * g.constant(w)).sum())

    for b in range(B):
        t = Tensor(z[b, : lengths[b]].copy())
        g2 = Graph()
        r = ctc_loss(g2.leaf(t).log_softmax(), labels[b], V - 1)
        assert abs(float(r.loss.value) - losses.value[b]) < 1e-12
        g2.backward(r.loss)
        np.testing.assert_allclose(t_batch.grad[b, : lengths[b]], w[b] * t.grad, atol=1e-12)
        assert not t_batch.grad[b, lengths[b] :].any()


def test_fused_batch_infeasible_row_has_no_gradient():
    z = np.zeros((2, 2, 3))
    t = Tensor(z)
    g = Graph()
    losses = ctc_loss_batch(g.leaf(t).log_softmax(), [[0, 0], [1]], [2, 2], 2)
    assert losses.value[0] == math.inf
    g.backward(losses[1:].sum())
    assert not t.grad[0].any()


def test_greedy_decode_examples():
    blank = 2

    def table(path):
        lp = np.full((len(path), 3), -5.0)
        lp[np.arange(len(path)), path] = 0.0
        return lp

    a, b = 0, 1
    assert ctc_greedy_decode(table([a, a, blank, a]), blank) == [a, a]
    assert ctc_greedy_decode(table([blank] * 4), blank) == []
    assert ctc_greedy_decode(table([a, blank, blank, b, b]), blank) == [a, b]


def test_greedy_decode_ties_go_to_lowest_id():
    assert ctc_greedy_decode(np.zeros((3, 3)), 2) == [0]
