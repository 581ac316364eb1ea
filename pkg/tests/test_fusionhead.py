import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_gradient_error, occ_loss_loop
from teocc.fusionhead import FusionLayer, OccHead, fuse, make_fusion_layers, occ_loss, total_loss


def randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


class TestFuse:
    def test_shape(self):
        layers = make_fusion_layers(32, 16, 64)
        out = fuse(torch.randn(1, 32, 50, 50, 8), torch.randn(1, 16, 50, 50, 8), "main", layers)
        assert out.shape == (1, 64, 50, 50, 8)

    def test_branches_independent(self):
        torch.manual_seed(0)
        layers = make_fusion_layers(4, 2, 8)
        assert len({id(p) for layer in layers.values() for p in layer.parameters()}) == 3 * 4
        img, rad = torch.randn(1, 4, 4, 4, 3), torch.randn(1, 2, 4, 4, 3)
        outs = [fuse(img, rad, b, layers) for b in ("main", "long", "short")]
        assert not torch.allclose(outs[0], outs[1]) and not torch.allclose(outs[1], outs[2])

    def test_camera_only(self):
        layer = FusionLayer(4, 2, 8)
        img = torch.randn(1, 4, 4, 4, 3)
        out = layer(img, None)
        assert torch.isfinite(out).all()
        assert torch.equal(out, layer(img, torch.zeros(1, 2, 4, 4, 3)))

    def test_errors(self):
        layers = make_fusion_layers(4, 2, 8)
        with pytest.raises(ValueError):
            fuse(torch.zeros(1, 4, 4, 4, 3), torch.zeros(1, 2, 4, 4, 2), "main", layers)
        with pytest.raises(ValueError):
            fuse(torch.zeros(1, 4, 4, 4, 3), None, "aux", layers)
        with pytest.raises(ValueError):
            fuse(torch.zeros(1, 3, 4, 4, 3), None, "main", layers)

    def test_gradients(self):
        torch.manual_seed(0)
        layer = FusionLayer(3, 2, 4).double()
        img = randn(1, 3, 4, 3, 3, seed=1).requires_grad_()
        rad = randn(1, 2, 4, 3, 3, seed=2).requires_grad_()
        w = randn(1, 4, 4, 3, 3, seed=3)
        assert fd_gradient_error(lambda: (layer(img, rad) * w).sum(), [img, rad, *layer.parameters()]) < 1e-4


class TestHead:
    def test_constant_in_constant_out(self):
        head = OccHead(8, 6, 16)
        feat = torch.randn(1, 8, 1, 1, 1).expand(1, 8, 5, 4, 3)
        out = head(feat)
        assert out.shape == (1, 6, 5, 4, 3)
        assert torch.allclose(out, out[:, :, :1, :1, :1].expand_as(out))

    def test_single_voxel_matches_matmul(self):
        torch.manual_seed(0)
        head = OccHead(8, 6, 16).double()
        x = randn(8)
        w1, b1 = head.fc1.weight.reshape(16, 8), head.fc1.bias
        w2, b2 = head.fc2.weight.reshape(6, 16), head.fc2.bias
        ref = w2 @ torch.relu(w1 @ x + b1) + b2
        torch.testing.assert_close(head(x.view(1, 8, 1, 1, 1)).reshape(6), ref)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            OccHead(8, 6)(torch.zeros(1, 7, 2, 2, 2))

    def test_gradients(self):
        torch.manual_seed(0)
        head = OccHead(4, 3, 5).double()
        x = randn(1, 4, 3, 2, 2).requires_grad_()
        w = randn(1, 3, 3, 2, 2, seed=1)
        assert fd_gradient_error(lambda: (head(x) * w).sum(), [x, *head.parameters()]) < 1e-4


class TestLoss:
    def test_uniform_is_log_k(self):
        labels = torch.randint(0, 6, (2, 4, 4, 3))
        assert math.isclose(occ_loss(torch.zeros(2, 6, 4, 4, 3), labels).item(), math.log(6), rel_tol=1e-6)
        assert math.isclose(math.log(6), 1.7918, abs_tol=1e-4)

    def test_confident_correct(self):
        labels = torch.randint(0, 6, (4, 4, 3))
        logits = 50.0 * torch.nn.functional.one_hot(labels, 6).permute(3, 0, 1, 2).float()
        assert 0 <= occ_loss(logits, labels).item() <= 1e-6

    def test_matches_loop(self):
        g = torch.Generator().manual_seed(0)
        logits = torch.randn(2, 5, 3, 4, 2, generator=g, dtype=torch.float64)
        labels = torch.randint(0, 5, (2, 3, 4, 2), generator=g)
        ref = occ_loss_loop(logits.numpy(), labels.numpy())
        assert abs(occ_loss(logits, labels).item() - ref) < 1e-10

    def test_errors(self):
        with pytest.raises(ValueError):
            occ_loss(torch.zeros(1, 3, 2, 2, 2), torch.full((1, 2, 2, 2), 3))
        with pytest.raises(ValueError):
            occ_loss(torch.zeros(1, 3, 2, 2, 2), torch.zeros(1, 2, 2, 3, dtype=torch.long))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_relabel_equivariant_and_nonnegative(self, seed):
        g = torch.Generator().manual_seed(seed)
        logits = 3 * torch.randn(1, 6, 3, 3, 2, generator=g, dtype=torch.float64)
        labels = torch.randint(0, 6, (1, 3, 3, 2), generator=g)
        perm = torch.randperm(6, generator=g)
        # Class c becomes perm[c]: move logit channel c to position perm[c].
        moved = torch.empty_like(logits)
        moved[:, perm] = logits
        a, b = occ_loss(logits, labels), occ_loss(moved, perm[labels])
        assert a.item() >= 0
        assert abs(a.item() - b.item()) < 1e-12

    def test_gradients(self):
        logits = randn(1, 4, 3, 2, 2).requires_grad_()
        labels = torch.randint(0, 4, (1, 3, 2, 2), generator=torch.Generator().manual_seed(1))
        assert fd_gradient_error(lambda: occ_loss(logits, labels), [logits]) < 1e-4

    def test_class_weights(self):
        labels = torch.tensor([[[[0]], [[1]]]])
        logits = torch.zeros(1, 2, 2, 1, 1)
        logits[0, 1, 0] = 2.0
        plain = occ_loss(logits, labels)
        same = occ_loss(logits, labels, torch.ones(2))
        assert torch.isclose(plain, same)
        skewed = occ_loss(logits, labels, torch.tensor([10.0, 1.0]))
        assert skewed > plain


class TestTotal:
    @pytest.mark.parametrize("args,mode,want", [((0, 0, 0), "train", 0.0), ((1.0, 2.0, 0.5), "train", 3.5),
                                                ((1.0, 2.0, 0.5), "infer", 1.0)])
    def test_examples(self, args, mode, want):
        assert total_loss(*args, mode=mode) == want

    def test_weights(self):
        assert total_loss(1.0, 2.0, 0.5, weights=(1.0, 0.5, 2.0)) == 3.0

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            total_loss(1, 1, 1, mode="eval")


def test_fusion_head_pipeline_deterministic():
    torch.manual_seed(0)
    layers, head = make_fusion_layers(4, 2, 8), OccHead(8, 6, 8)
    img, rad = torch.randn(1, 4, 4, 4, 3), torch.randn(1, 2, 4, 4, 3)
    a = head(fuse(img, rad, "long", layers))
    b = head(fuse(img, rad, "long", layers))
    assert torch.equal(a, b)
    assert np.isfinite(a.detach().numpy()).all()
