from fractions import Fraction

import numpy as np
import pytest

from ince.errors import ContractViolation, ParamCountMismatch
from ince.interaction import InteractionEncoder
from ince.params import (
    analytic_report,
    normalized_tp_in,
    tp_in,
    tp_transformer,
    tp_transformer_blocks,
    verify_model_counts,
)
from ince.transformer import TransformerEncoder


class TestFormulas:
    def test_spot_values(self):
        # layer 1: edge 2*256+16 = 528, node 528
        assert tp_in(16, 1, 1) == 1056
        # layer 2 edge MLP reads three vectors: 3*256+16 = 784
        assert tp_in(16, 1, 2) == 1056 + 528 + 784 == 2368
        # qkv 3*16*17 = 816, projection 16*17 = 272, ffn 2*512*16+512+16 = 16912
        assert tp_transformer(16, 1, 512, 1) == 816 + 272 + 16912 == 18000

    def test_self_normalization(self):
        assert normalized_tp_in(16, 1, 1) == 1

    def test_transformer_linear_in_n(self):
        for l, h, f in [(16, 1, 512), (64, 4, 1024)]:
            assert tp_transformer(l, h, f, 2) == 2 * tp_transformer(l, h, f, 1)

    @pytest.mark.parametrize("bad", [(0, 1, 1), (16, 0, 1), (16, 1, -2), (16.5, 1, 1)])
    def test_nonpositive(self, bad):
        with pytest.raises(ContractViolation):
            tp_in(*bad)

    def test_growth(self):
        for l in (16, 32, 64):
            diffs_d = np.diff([tp_in(l, d, 2) for d in range(1, 6)])
            diffs_n = np.diff([tp_in(l, 2, n) for n in range(2, 7)])
            assert len(set(diffs_d)) == 1 and len(set(diffs_n)) == 1
            # quadratic in l: third finite difference vanishes, second is positive
            vals = [tp_in(k, 2, 2) for k in (l, l + 1, l + 2, l + 3)]
            assert np.diff(vals, 3)[0] == 0 and np.diff(vals, 2)[0] > 0

    def test_stack_slope_exceeds_depth_slope(self):
        for l in (16, 32, 64, 128):
            for k in (2, 3, 4):
                assert tp_in(l, 1, k) - tp_in(l, 1, 1) > tp_in(l, k, 1) - tp_in(l, 1, 1)

    def test_baseline_choice_only_rescales(self):
        """Normalizing by a different baseline l multiplies the whole curve by one constant."""
        sweep = [(16, d, 1) for d in (1, 2, 3, 4)] + [(16, 1, n) for n in (2, 3, 4)] + [(l, 1, 1) for l in (32, 64, 128)]
        for other in (32, 64, 128):
            scale = Fraction(tp_in(other, 1, 1), tp_in(16, 1, 1))
            for cfg in sweep:
                assert normalized_tp_in(*cfg, baseline_l=16) == scale * normalized_tp_in(*cfg, baseline_l=other)

    def test_per_latent_sweeps_nearly_coincide(self):
        """Depth and stack sweeps normalized at their own l agree closely but not exactly across l."""
        for k in (2, 3, 4):
            for sweep in (lambda l: (l, k, 1), lambda l: (l, 1, k)):
                a, b = normalized_tp_in(*sweep(16)), normalized_tp_in(*sweep(32))
                assert a != b
                assert abs(float(a - b)) / float(b) < 0.02
        # depth increments are (l+1)/(2l+1) per step: 17/33 at l=16, 33/65 at l=32
        assert normalized_tp_in(16, 2, 1) - 1 == Fraction(17, 33)
        assert normalized_tp_in(32, 2, 1) - 1 == Fraction(33, 65)

    def test_feed_forward_explains_single_head_gap(self):
        l = 128
        blocks = tp_transformer_blocks(l, 1, 512)
        attention_only = blocks["qkv"] + blocks["multi_attention"]
        # 66048 vs 65792: without the feed-forward block the two encoders nearly coincide
        assert abs(attention_only - tp_in(l, 1, 1)) / tp_in(l, 1, 1) < 0.005
        gap = tp_transformer(l, 1, 512, 1) - tp_in(l, 1, 1)
        assert gap == blocks["feed_forward"] + attention_only - tp_in(l, 1, 1)
        assert blocks["feed_forward"] / gap > 0.99


class TestConstructed:
    @pytest.mark.parametrize("l,d,n", [(16, 1, 1), (32, 3, 2), (8, 4, 4)])
    def test_interaction_counts(self, l, d, n):
        enc = InteractionEncoder(l, d, n, np.random.default_rng(0))
        report = verify_model_counts(enc)
        assert report.ok
        assert report.constructed == tp_in(l, d, n)
        assert enc.n_parameters() == tp_in(l, d, n) + l  # plus the CLS vector

    @pytest.mark.parametrize("l,h,f,n", [(16, 4, 512, 2), (16, 1, 512, 1), (8, 2, 64, 3)])
    def test_transformer_counts(self, l, h, f, n):
        enc = TransformerEncoder(l, h, f, n, np.random.default_rng(0))
        report = verify_model_counts(enc)
        assert report.constructed == tp_transformer(l, h, f, n)

    def test_mismatch_raises_with_report(self):
        enc = InteractionEncoder(4, 2, 1, np.random.default_rng(0))
        enc.layers[0].node_mlp.layers[0].bias.data = np.zeros(5)
        with pytest.raises(ParamCountMismatch, match="layer1.node_mlp"):
            verify_model_counts(enc)
        assert not verify_model_counts(enc, strict=False).ok

    def test_report_rendering(self):
        report = analytic_report("transformer", 16, h=1, f=512, n=1)
        assert "feed_forward" in report.to_table()
        assert report.to_dict()["analytic"] == 18000
        assert analytic_report("in", 16).normalized == 1.0
