import numpy as np
import pytest
import torch

from conftest import tiny_config
from teocc.fusionhead import occ_loss
from teocc.harness.data import SampleRef, build_batch
from teocc.harness.train import build_model
from teocc.model import TE_GROUPS, TEOccModel
from teocc.tempenh import MaskChoice


def make(store, mask=MaskChoice(1, 2), flips=((False, False), (False, False)), **changes):
    cfg = tiny_config(**changes)
    model = build_model(cfg, store.cameras)
    refs = [SampleRef(0, 4, *flips[0]), SampleRef(1, 5, *flips[1])]
    batch = build_batch(store, refs, cfg.num_history, cfg.grid_spec(), mask=mask if cfg.te_enabled else None,
                        use_radar=cfg.use_radar)
    return cfg, model, batch


def grads(model, loss):
    model.zero_grad(set_to_none=True)
    loss.backward(retain_graph=True)
    return {n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p)) for n, p in model.named_parameters()}


def test_forward_shapes(tiny_stores):
    cfg, model, batch = make(tiny_stores[0])
    out = model.forward_train(batch)
    assert out["logits"].shape == (2, 6, 16, 16, 8)
    assert all(torch.isfinite(out[k]) for k in ("main", "long", "short", "total"))
    assert torch.allclose(out["total"], out["main"] + out["long"] + out["short"])


def test_te_off_is_plain_supervision(tiny_stores):
    _, model, batch = make(tiny_stores[0], use_long=False, use_short=False)
    out = model.forward_train(batch)
    assert out["long"] == 0 and out["short"] == 0
    assert torch.equal(out["total"], out["main"])
    assert not any(model.parameter_groups().get(g) for g in TE_GROUPS)


def test_infer_ignores_te_parameters(tiny_stores):
    _, model, batch = make(tiny_stores[0], use_radar=True)
    model.eval()
    before = model.infer(batch)
    with torch.no_grad():
        for p in model.te_parameters():
            p.copy_(torch.randn_like(p) * 5)
    after = model.infer(batch)
    assert torch.equal(before, after)
    with torch.no_grad():
        for p in model.te_parameters():
            p.zero_()
    assert torch.equal(before, model.infer(batch))
    assert torch.equal(before, model.infer(batch))


def test_shared_head_gradient_is_branch_sum(tiny_stores):
    _, model, batch = make(tiny_stores[0])
    model.double()
    batch = {k: (v.double() if torch.is_tensor(v) and v.is_floating_point() else v) for k, v in batch.items()}
    out = model.forward_train(batch)
    head = [n for n, _ in model.named_parameters() if n.startswith("head.")]
    assert head
    parts = [grads(model, out[k]) for k in ("main", "long", "short")]
    total = grads(model, out["total"])
    for n in head:
        summed = sum(p[n] for p in parts)
        torch.testing.assert_close(total[n], summed, rtol=1e-9, atol=1e-12)
        assert all(p[n].abs().sum() > 0 for p in parts)


def test_fusion_independence(tiny_stores):
    _, model, batch = make(tiny_stores[0], use_radar=True)
    ref = model.forward_train(batch)
    with torch.no_grad():
        for p in model.fusion["long"].parameters():
            p.zero_()
    out = model.forward_train(batch)
    assert torch.equal(ref["main"], out["main"])
    assert not torch.equal(ref["long"], out["long"])
    assert torch.equal(ref["short"], out["short"])


def test_encoder_gets_gradient_from_te_losses(tiny_stores):
    _, model, batch = make(tiny_stores[0])
    out = model.forward_train(batch)
    for key in ("long", "short"):
        g = grads(model, out[key])
        enc = [v for n, v in g.items() if n.startswith("image_encoder.")]
        assert sum(float(v.abs().sum()) for v in enc) > 0


def test_parameter_groups_disjoint(tiny_stores):
    _, model, _ = make(tiny_stores[0], use_radar=True)
    groups = model.parameter_groups()
    assert {"long_decoder", "short_decoder", "fusion_main", "fusion_long", "fusion_short", "head"} <= set(groups)
    seen = {}
    for name, params in groups.items():
        for p in params:
            assert id(p) not in seen, f"{name} shares a parameter with {seen.get(id(p))}"
            seen[id(p)] = name
    assert len(seen) == sum(1 for _ in model.parameters())


def test_separate_head_variant(tiny_stores):
    _, model, batch = make(tiny_stores[0], shared_head=False)
    assert "aux_head" in model.parameter_groups()
    out = model.forward_train(batch)
    g = grads(model, out["main"])
    assert all(v.abs().sum() == 0 for n, v in g.items() if n.startswith("aux_head."))
    g = grads(model, out["long"])
    assert all(v.abs().sum() == 0 for n, v in g.items() if n.startswith("head."))


def test_fused_decoder_variant(tiny_stores):
    _, model, batch = make(tiny_stores[0], fuse_decoders=True)
    out = model.forward_train(batch)
    assert out["short"] == 0 and out["long"] > 0
    assert "decoder_merge" in model.parameter_groups() and "fusion_short" not in model.parameter_groups()


def test_history_too_short_rejected(tiny_stores):
    cfg = tiny_config(num_history=1, use_long=False, use_short=False)
    spec = cfg.model_spec()
    from dataclasses import replace

    with pytest.raises(ValueError):
        TEOccModel(replace(spec, use_long=True), tiny_stores[0].cameras, cfg.grid_spec())


def test_flip_consistency(tiny_stores):
    store = tiny_stores[0]
    _, model, plain = make(store)
    _, _, flipped = make(store, flips=((True, False), (False, True)))
    assert torch.equal(flipped["gt_t"][0], plain["gt_t"][0].flip(-3))
    assert torch.equal(flipped["gt_t"][1], plain["gt_t"][1].flip(-2))
    assert torch.equal(flipped["gt_tk"][0], plain["gt_tk"][0].flip(-3))
    seq = model.encode_sequence(plain["images"], plain["cur_to_src"])
    out = model.apply_flips(seq, flipped["flips"])
    for a, b in zip(seq, out):
        assert torch.equal(b[0], a[0].flip(-3)) and torch.equal(b[1], a[1].flip(-2))


def test_depth_loss(tiny_stores):
    _, model, batch = make(tiny_stores[0])
    out = model.forward_train(batch, depth_weight=0.5)
    assert out["depth"] > 0
    torch.testing.assert_close(out["total"], out["main"] + out["long"] + out["short"] + 0.5 * out["depth"])
    # A distribution concentrated on the true bin scores ~0.
    images = batch["images"]
    s = model.image_encoder.stride
    depth = images.reshape(-1, *images.shape[-3:])[:, 1, s // 2::s, s // 2::s]
    near, far = model.spec.depth_range
    d = model.spec.num_depth_bins
    target = ((depth - near) / ((far - near) / d)).floor().long().clamp(0, d - 1)
    probs = torch.nn.functional.one_hot(target, d).permute(0, 3, 1, 2).double()
    assert model.depth_loss(probs, images) < 1e-9


def test_main_loss_matches_head_output(tiny_stores):
    _, model, batch = make(tiny_stores[0])
    out = model.forward_train(batch)
    assert torch.equal(out["main"], occ_loss(out["logits"], batch["gt_t"]))
    model.eval()
    np.testing.assert_allclose(model.infer(batch).numpy(), out["logits"].detach().numpy(), rtol=1e-5, atol=1e-5)
