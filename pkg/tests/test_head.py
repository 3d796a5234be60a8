"""Tests for projections and group bilinear scoring."""

import numpy as np
import numpy.testing as npt
import pytest
from scipy.linalg import block_diag

import docrelex.autodiff as ad
from docrelex.autodiff import Tensor, backward, grad_check
from docrelex.errors import ConfigError, ShapeError
from docrelex.head import (TH_INDEX, RelationHead, class_index, group_bilinear,
                           group_bilinear_logit)


def make_head(d=8, n_rel=2, k=2, seed=0, context=True):
    return RelationHead(d, n_rel, k, np.random.default_rng(seed), context_pooling=context)


class TestProject:
    def test_zero_input_gives_zero(self):
        head = make_head()
        z = head.project(Tensor(np.zeros(8)), None, "subject")
        npt.assert_array_equal(z.data, np.zeros(8))

    def test_identity_weight_linearizes(self):
        head = make_head()
        head.params["w_subject"].data[...] = np.eye(8)
        h = np.full(8, 1e-4)
        z = head.project(Tensor(h), None, "subject")
        npt.assert_allclose(z.data, h, rtol=1e-7)

    def test_random_case_vs_hand_matmul(self):
        # oracle: direct numpy arithmetic
        rng = np.random.default_rng(1)
        head = make_head()
        h = rng.normal(size=8)
        c = rng.normal(size=8)
        w = head.params["w_object"].data
        wc = head.params["w_ctx_object"].data
        z = head.project(Tensor(h), Tensor(c), "object")
        npt.assert_allclose(z.data, np.tanh(w @ h + wc @ c), atol=1e-12)

    def test_no_context_omits_context_term(self):
        rng = np.random.default_rng(2)
        head = make_head()
        h = rng.normal(size=8)
        z = head.project(Tensor(h), None, "subject")
        npt.assert_allclose(z.data, np.tanh(head.params["w_subject"].data @ h),
                            atol=1e-12)

    def test_bad_side(self):
        head = make_head()
        with pytest.raises(ConfigError):
            head.project(Tensor(np.zeros(8)), None, "verb")


class TestGroupBilinearLogit:
    def test_k_equals_d_reduces_to_dot_product(self):
        d = 6
        ones = Tensor(np.ones(d))
        blocks = Tensor(np.ones((d, 1, 1)))
        logit = group_bilinear_logit(ones, ones, blocks, Tensor(0.0))
        assert logit.item() == pytest.approx(d)

    def test_zero_subject_leaves_bias(self):
        rng = np.random.default_rng(3)
        blocks = Tensor(rng.normal(size=(2, 3, 3)))
        logit = group_bilinear_logit(Tensor(np.zeros(6)), Tensor(rng.normal(size=6)),
                                     blocks, Tensor(-1.25))
        assert logit.item() == pytest.approx(-1.25)

    def test_equals_block_diagonal_full_bilinear(self):
        # oracle: embed the blocks into a block-diagonal full matrix
        rng = np.random.default_rng(4)
        d, k = 4, 2
        zs, zo = rng.normal(size=d), rng.normal(size=d)
        blocks = rng.normal(size=(k, d // k, d // k))
        bias = rng.normal()
        full = block_diag(*blocks)
        expected = zs @ full @ zo + bias
        logit = group_bilinear_logit(Tensor(zs), Tensor(zo), Tensor(blocks),
                                     Tensor(bias))
        assert abs(logit.item() - expected) < 1e-12

    def test_gradients(self):
        rng = np.random.default_rng(5)
        zs = Tensor(rng.normal(size=6), requires_grad=True)
        zo = Tensor(rng.normal(size=6), requires_grad=True)
        blocks = Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True)
        bias = Tensor(np.array(0.5), requires_grad=True)
        report = grad_check(
            lambda: group_bilinear_logit(zs, zo, blocks, bias),
            {"zs": zs, "zo": zo, "blocks": blocks, "bias": bias}, tol=1e-6)
        assert report.passed, report.summary()


class TestGroupBilinearBatched:
    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            group_bilinear(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))),
                           Tensor(np.zeros((3, 2, 2, 3))), Tensor(np.zeros(3)))

    def test_matches_per_class_loop(self):
        rng = np.random.default_rng(6)
        n, d, k, classes = 5, 8, 4, 3
        zs, zo = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        w = rng.normal(size=(classes, k, d // k, d // k))
        b = rng.normal(size=classes)
        out = group_bilinear(Tensor(zs), Tensor(zo), Tensor(w), Tensor(b))
        for p in range(n):
            for c in range(classes):
                expected = group_bilinear_logit(Tensor(zs[p]), Tensor(zo[p]),
                                                Tensor(w[c]), Tensor(b[c])).item()
                assert out.data[p, c] == pytest.approx(expected, abs=1e-10)

    def test_gradients(self):
        rng = np.random.default_rng(7)
        zs = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        zo = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 2, 2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)

        def loss():
            return ad.sum_(ad.tanh(group_bilinear(zs, zo, w, b)))

        report = grad_check(loss, {"zs": zs, "zo": zo, "w": w, "b": b}, tol=1e-6)
        assert report.passed, report.summary()


class TestPairLogits:
    def test_length_is_relations_plus_th(self):
        head = make_head(n_rel=2)
        logits = head.pair_logits(Tensor(np.ones(8)), Tensor(np.ones(8)))
        assert logits.shape == (3,)
        assert TH_INDEX == 0 and class_index(0) == 1

    def test_deterministic(self):
        head = make_head()
        h = Tensor(np.linspace(-1, 1, 8))
        a = head.pair_logits(h, h, Tensor(np.ones(8)))
        b = head.pair_logits(h, h, Tensor(np.ones(8)))
        npt.assert_array_equal(a.data, b.data)

    def test_gradient_of_logit_sum_wrt_all_params(self):
        head = make_head(d=8, n_rel=2, k=2)
        rng = np.random.default_rng(8)
        h_s = Tensor(rng.normal(size=8))
        h_o = Tensor(rng.normal(size=8))
        c = Tensor(rng.normal(size=8))

        def loss():
            return ad.sum_(head.pair_logits(h_s, h_o, c))

        report = grad_check(loss, head.params, tol=1e-4)
        assert report.passed, report.summary()

    def test_parameter_count_per_class(self):
        for d, k in ((8, 1), (8, 2), (8, 4), (8, 8), (64, 4)):
            head = make_head(d=d, k=k)
            w = head.params["bilinear"]
            per_class_weights = int(np.prod(w.shape[1:]))
            assert per_class_weights == d * d // k
            assert head.parameter_count_per_class() == d * d // k + 1

    def test_k_must_divide_d(self):
        with pytest.raises(ConfigError):
            make_head(d=8, k=3)

    def test_subject_projection_shared_without_context(self):
        # Base-model property: z_s depends only on h_s, so two pairs sharing
        # the subject have identical z_s when context pooling is off.
        head = make_head(context=False)
        rng = np.random.default_rng(9)
        h_s = rng.normal(size=8)
        subjects = Tensor(np.stack([h_s, h_s]))
        objects = Tensor(rng.normal(size=(2, 8)))
        logits = head.scores(subjects, objects, None)
        z1 = head.project(Tensor(h_s), None, "subject")
        # Same z_s feeds both rows: recomputing row 0 and row 1 with the same
        # projected subject reproduces the batch.
        for row, obj in enumerate(objects.data):
            z_o = head.project(Tensor(obj), None, "object")
            expected = group_bilinear(ad.reshape(z1, (1, 8)), ad.reshape(z_o, (1, 8)),
                                      head.params["bilinear"], head.params["bias"])
            npt.assert_allclose(logits.data[row], expected.data[0], atol=1e-9)

    def test_context_differentiates_shared_subject(self):
        head = make_head()
        rng = np.random.default_rng(10)
        h_s = rng.normal(size=8)
        z_a = head.project(Tensor(h_s), Tensor(rng.normal(size=8)), "subject")
        z_b = head.project(Tensor(h_s), Tensor(rng.normal(size=8)), "subject")
        assert not np.allclose(z_a.data, z_b.data)

    def test_batched_scores_match_pair_logits(self):
        head = make_head(d=8, n_rel=3, k=4)
        rng = np.random.default_rng(11)
        hs = rng.normal(size=(5, 8))
        ho = rng.normal(size=(5, 8))
        ctx = rng.normal(size=(5, 8))
        batched = head.scores(Tensor(hs), Tensor(ho), Tensor(ctx))
        for i in range(5):
            single = head.pair_logits(Tensor(hs[i]), Tensor(ho[i]), Tensor(ctx[i]))
            npt.assert_allclose(batched.data[i], single.data, atol=1e-9)
