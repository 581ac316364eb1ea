"""The full network: camera/radar encoders, main branch and the training-only
temporal enhancement branch."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .camnet import ImageEncoder, ViewTransformer, depth_bins, group_norm, warp_features
from .fusionhead import FusionLayer, OccHead, occ_loss, total_loss
from .gridcore import GridSpec, flip_spatial
from .radarnet import RadarEncoder
from .scenesim import CameraModel
from .tempenh import LongTermDecoder, MaskChoice, ShortTermDecoder, split_masked

# Groups that only the temporal enhancement branch touches.
TE_GROUPS = ("long_decoder", "short_decoder", "fusion_long", "fusion_short", "aux_head", "decoder_merge")


@dataclass(frozen=True)
class ModelSpec:
    num_classes: int = 6
    num_history: int = 5
    img_channels: int = 32
    radar_channels: int = 16
    fused_channels: int = 64
    head_hidden: int = 64
    encoder_hidden: int = 16
    num_depth_bins: int = 16
    depth_range: tuple[float, float] = (1.0, 17.0)
    decoder_channels: tuple[int, int, int] = (32, 64, 128)
    decoder_blocks: int = 2
    use_radar: bool = True
    use_long: bool = True
    use_short: bool = True
    shared_head: bool = True
    fuse_decoders: bool = False

    @property
    def te_enabled(self) -> bool:
        return self.use_long or self.use_short

    def main_only(self) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, use_long=False, use_short=False, fuse_decoders=False, shared_head=True)


class HistoryFusion(nn.Module):
    """Main-branch temporal fusion of the aligned sequence into one image voxel feature."""

    def __init__(self, num_frames: int, channels: int):
        super().__init__()
        self.conv = nn.Conv3d(num_frames * channels, channels, 3, padding=1)
        self.norm = group_norm(channels)

    def forward(self, seq: list[torch.Tensor]) -> torch.Tensor:
        return F.relu(self.norm(self.conv(torch.cat(seq, dim=1))))


class TEOccModel(nn.Module):
    def __init__(self, spec: ModelSpec, cameras: list[CameraModel], grid: GridSpec):
        super().__init__()
        self.spec = spec
        self.grid = grid
        self.cameras = list(cameras)
        if spec.te_enabled and spec.num_history < 2:
            raise ValueError("temporal enhancement needs num_history >= 2")
        if spec.fuse_decoders and not (spec.use_long and spec.use_short):
            raise ValueError("fuse_decoders needs both temporal decoders")
        h, w = cameras[0].height, cameras[0].width
        bins = depth_bins(spec.num_depth_bins, *spec.depth_range)
        self.register_buffer("bins", bins.float(), persistent=False)
        self.image_encoder = ImageEncoder(2, spec.img_channels, spec.encoder_hidden, spec.num_depth_bins,
                                          image_size=(h, w))
        feat_hw = (h // ImageEncoder.stride, w // ImageEncoder.stride)
        self.view = ViewTransformer(cameras, feat_hw, grid, bins.numpy())
        self.history_fusion = HistoryFusion(spec.num_history + 1, spec.img_channels)
        self.radar_encoder = RadarEncoder(spec.radar_channels) if spec.use_radar else None
        self.fusion = nn.ModuleDict({"main": FusionLayer(spec.img_channels, spec.radar_channels, spec.fused_channels)})
        self.head = OccHead(spec.fused_channels, spec.num_classes, spec.head_hidden)
        c, r = spec.img_channels, spec.radar_channels
        if spec.use_long:
            self.long_decoder = LongTermDecoder(spec.num_history, c, r, spec.decoder_channels, spec.decoder_blocks)
            self.fusion["long"] = FusionLayer(c, r, spec.fused_channels)
        if spec.use_short:
            self.short_decoder = ShortTermDecoder(c, r)
            if not spec.fuse_decoders:
                self.fusion["short"] = FusionLayer(c, r, spec.fused_channels)
        if spec.fuse_decoders:
            self.decoder_merge = nn.Conv3d(2 * c, c, 1)
        if spec.te_enabled and not spec.shared_head:
            self.aux_head = OccHead(spec.fused_channels, spec.num_classes, spec.head_hidden)

    # -- parameter bookkeeping -------------------------------------------------
    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {}
        for name, module in self.named_children():
            if name == "fusion":
                for branch, layer in module.items():
                    groups[f"fusion_{branch}"] = list(layer.parameters())
            elif any(True for _ in module.parameters()):
                groups[name] = list(module.parameters())
        return groups

    def te_parameters(self) -> list[nn.Parameter]:
        groups = self.parameter_groups()
        return [p for g in TE_GROUPS for p in groups.get(g, [])]

    # -- forward pieces -----------------------------------------------------------
    def encode_sequence(self, images: torch.Tensor, cur_to_src: torch.Tensor, return_probs: bool = False):
        """images (B, F, ncam, 2, H, W), cur_to_src (B, F, 4, 4) -> F aligned grids (B, C, X, Y, Z).

        With ``return_probs`` also returns the (B*F*ncam, D, h, w) depth distributions.
        """
        b, f, ncam = images.shape[:3]
        feat, probs = self.image_encoder(images.reshape(b * f * ncam, *images.shape[3:]))
        flat_probs = probs
        feat = feat.reshape(b * f, ncam, *feat.shape[1:])
        probs = probs.reshape(b * f, ncam, *probs.shape[1:])
        vox = self.view(feat, probs).reshape(b, f, -1, *self.grid.dims)
        seq = []
        if f > 1:
            hist = vox[:, :-1].reshape(b * (f - 1), *vox.shape[2:])
            warped = warp_features(hist, cur_to_src[:, :-1].reshape(-1, 4, 4), self.grid)
            warped = warped.reshape(b, f - 1, *vox.shape[2:])
            seq = list(warped.unbind(1))
        seq.append(vox[:, -1])
        return (seq, flat_probs) if return_probs else seq

    def depth_loss(self, probs: torch.Tensor, images: torch.Tensor) -> torch.Tensor:
        """Cross-entropy of the depth distributions against the binned rendered depth.

        The target is the depth channel sampled at each feature pixel's center; sky
        pixels (depth 0) and depths outside the bin range are ignored.
        """
        s = ImageEncoder.stride
        depth = images.reshape(-1, *images.shape[-3:])[:, 1, s // 2::s, s // 2::s]
        near, far = self.spec.depth_range
        d = self.spec.num_depth_bins
        target = torch.floor((depth - near) / ((far - near) / d)).long()
        valid = (depth > 0) & (target >= 0) & (target < d)
        if not bool(valid.any()):
            return probs.new_zeros(())
        logp = probs.clamp_min(1e-12).log()
        picked = logp.gather(1, target.clamp(0, d - 1).unsqueeze(1)).squeeze(1)
        return -picked[valid].mean()

    def radar_features(self, buffers) -> torch.Tensor | None:
        if self.radar_encoder is None or buffers is None:
            return None
        return self.radar_encoder(buffers, self.grid)

    def main_logits(self, seq: list[torch.Tensor], radar_t: torch.Tensor | None) -> torch.Tensor:
        return self.head(self.fusion["main"](self.history_fusion(seq), radar_t))

    def _te_head(self, feat):
        return self.head(feat) if self.spec.shared_head else self.aux_head(feat)

    def te_logits(self, seq: list[torch.Tensor], choice: MaskChoice, radar_tk: torch.Tensor | None) -> dict:
        remaining, (before, after) = split_masked(seq, choice)
        out = {}
        if self.spec.fuse_decoders:
            merged = self.decoder_merge(torch.cat([self.long_decoder(remaining, radar_tk),
                                                   self.short_decoder(before, after, radar_tk)], dim=1))
            out["long"] = self._te_head(self.fusion["long"](merged, radar_tk))
            return out
        if self.spec.use_long:
            out["long"] = self._te_head(self.fusion["long"](self.long_decoder(remaining, radar_tk), radar_tk))
        if self.spec.use_short:
            out["short"] = self._te_head(self.fusion["short"](self.short_decoder(before, after, radar_tk), radar_tk))
        return out

    @staticmethod
    def apply_flips(grids: list[torch.Tensor], flips: torch.Tensor | None) -> list[torch.Tensor]:
        if flips is None or not bool(flips.any()):
            return grids
        out = []
        for g in grids:
            for col, axis in enumerate("xy"):
                m = flips[:, col].view(-1, *([1] * (g.dim() - 1)))
                g = torch.where(m, flip_spatial(g, axis), g)
            out.append(g)
        return out

    def forward_train(self, batch: dict, loss_weights=(1.0, 1.0, 1.0), class_weights=None,
                      depth_weight: float = 0.0) -> dict:
        seq, probs = self.encode_sequence(batch["images"], batch["cur_to_src"], return_probs=True)
        seq = self.apply_flips(seq, batch.get("flips"))
        radar_t = self.radar_features(batch.get("radar_t"))
        logits = self.main_logits(seq, radar_t)
        zero = logits.new_zeros(())
        losses = {"main": occ_loss(logits, batch["gt_t"], class_weights), "long": zero, "short": zero}
        if self.spec.te_enabled and batch.get("mask") is not None:
            radar_tk = self.radar_features(batch.get("radar_tk"))
            for name, lg in self.te_logits(seq, batch["mask"], radar_tk).items():
                losses[name] = occ_loss(lg, batch["gt_tk"], class_weights)
        losses["total"] = total_loss(losses["main"], losses["long"], losses["short"], "train", loss_weights)
        if depth_weight:
            losses["depth"] = self.depth_loss(probs, batch["images"])
            losses["total"] = losses["total"] + depth_weight * losses["depth"]
        losses["logits"] = logits
        return losses

    @torch.no_grad()
    def infer(self, batch: dict) -> torch.Tensor:
        """Main-branch logits only; never touches temporal-enhancement parameters."""
        seq = self.encode_sequence(batch["images"], batch["cur_to_src"])
        return self.main_logits(seq, self.radar_features(batch.get("radar_t")))
