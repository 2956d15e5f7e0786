"""The two branches and the iterative refinement loop.

The identity branch reconstructs its input and exposes post-activation
feature taps at the aggregation sites.  The de-shadow branch consumes the
4-channel concat of image and binary mask; at each aggregation site its
feature stream is fused with the matching identity tap.  Refinement feeds
the clamped output image of one pass back in place of the input image while
the mask and the identity taps stay fixed.

Tensor-level methods accept ``(C, H, W)`` or batched ``(N, C, H, W)``
arrays; the image-level wrappers work on single ``(H, W, 3)`` images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AGGREGATION_MODES, SabParams, aggregate_ablation, sab_forward
from .arch import ArchSpec, LayerPlan, build_plan, init_params, init_sab_params
from .errors import ContractError
from .nn import (
    ParameterStore,
    Tensor,
    add_elementwise,
    clamp,
    concat_channels,
    conv2d,
    conv_transpose2d,
    detach,
    no_grad,
    relu,
)

IMB_PREFIX = "imb."


def image_to_chw(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) image, got {img.shape}")
    return np.ascontiguousarray(img.transpose(2, 0, 1).astype(dtype, copy=False))


def chw_to_image(chw: np.ndarray) -> np.ndarray:
    if chw.ndim != 3 or chw.shape[0] != 3:
        raise ContractError(f"expected (3, H, W) tensor data, got {chw.shape}")
    return np.ascontiguousarray(chw.transpose(1, 2, 0))


def mask_to_chw(mask: np.ndarray, dtype=np.float32) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractError(f"expected (H, W) mask, got {mask.shape}")
    return np.ascontiguousarray(mask[None].astype(dtype, copy=False))


@dataclass
class IterTrace:
    """Per-iteration de-shadowed images (clamped) and optional soft masks."""

    images: list[np.ndarray]
    soft_masks: list[dict[int, np.ndarray]] | None = None

    def __len__(self) -> int:
        return len(self.images)


class DualBranchModel:
    """Both branches plus aggregation parameters behind one parameter store.

    Parameter names are namespaced ``imb.*`` / ``idb.*``; aggregation gates
    live under ``idb.agg<site>.*`` because they train with the de-shadow
    phase.
    """

    def __init__(self, spec: ArchSpec, aggregation_mode: str = "sab",
                 seed: int | None = 0, dtype=np.float32,
                 params: ParameterStore | None = None):
        if aggregation_mode not in AGGREGATION_MODES:
            raise ContractError(f"unknown aggregation mode {aggregation_mode!r}")
        self.spec = spec
        self.aggregation_mode = aggregation_mode
        self.dtype = np.dtype(dtype)
        self.imb_plan: LayerPlan = build_plan(spec, "imb")
        self.idb_plan: LayerPlan = build_plan(spec, "idb")
        self.sab_sites = spec.resolved_sab_sites()
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(np.random.PCG64(seed))
            self.params = init_params(self.imb_plan, rng, dtype=dtype)
            init_params(self.idb_plan, rng, store=self.params, dtype=dtype)
            init_sab_params(self.idb_plan, aggregation_mode, rng, store=self.params, dtype=dtype)

    # -- parameter access ---------------------------------------------------

    def _conv_params(self, plan: LayerPlan, name: str):
        return self.params[f"{plan.branch}.{name}.w"], self.params[f"{plan.branch}.{name}.b"]

    def sab_params(self, site: int) -> SabParams:
        prefix = f"idb.agg{site}"
        return SabParams(
            gate_w=self.params[f"{prefix}.gate.w"] if f"{prefix}.gate.w" in self.params else None,
            gate_b=self.params[f"{prefix}.gate.b"] if f"{prefix}.gate.b" in self.params else None,
            fuse_w=self.params[f"{prefix}.fuse.w"] if f"{prefix}.fuse.w" in self.params else None,
            fuse_b=self.params[f"{prefix}.fuse.b"] if f"{prefix}.fuse.b" in self.params else None,
        )

    def freeze_imb(self) -> None:
        self.params.freeze(IMB_PREFIX)

    def imb_bytes(self) -> bytes:
        return self.params.namespace_bytes(IMB_PREFIX)

    # -- forward passes -----------------------------------------------------

    def _walk(self, plan: LayerPlan, x: Tensor, taps: dict[int, Tensor] | None,
              tap_out: dict[int, Tensor] | None, soft_out: dict[int, Tensor] | None) -> Tensor:
        """Shared branch forward.

        ``taps`` injects identity features at the aggregation sites (de-shadow
        branch); ``tap_out`` collects post-activation features (identity
        branch); ``soft_out`` collects emitted soft masks.
        """
        skip: Tensor | None = None
        for desc in plan.convs:
            w, b = self._conv_params(plan, desc.name)
            if desc.res_role == "first":
                skip = x
            if desc.kind == "convtran":
                x = conv_transpose2d(x, w, b, desc.stride, desc.pad)
            else:
                x = conv2d(x, w, b, desc.stride, desc.pad)
            if desc.res_role == "second":
                x = add_elementwise(x, skip)
                skip = None
            if desc.relu:
                x = relu(x)
            if tap_out is not None and desc.index in self.sab_sites:
                tap_out[desc.index] = x
            if taps is not None and desc.index in self.sab_sites:
                tap = taps.get(desc.index)
                if tap is None:
                    raise ContractError(f"missing identity tap for site {desc.index}")
                if self.aggregation_mode == "sab":
                    out = sab_forward(tap, x, self.sab_params(desc.index))
                    x = out.fused
                    if soft_out is not None:
                        soft_out[desc.index] = out.soft_mask
                else:
                    x = aggregate_ablation(tap, x, self.aggregation_mode,
                                           self.sab_params(desc.index))
        return x

    def _check_spatial(self, data: np.ndarray, channels: int, op: str) -> None:
        if data.ndim not in (3, 4):
            raise ContractError(f"{op}: expected (C, H, W) or (N, C, H, W), got {data.shape}")
        if data.shape[-3] != channels:
            raise ContractError(f"{op}: expected {channels} channels, got {data.shape[-3]}")
        if data.shape[-2:] != (self.spec.input_size, self.spec.input_size):
            raise ContractError(
                f"{op}: spatial size {data.shape[-2:]} does not match arch input size "
                f"{self.spec.input_size}"
            )

    def imb_apply(self, x: Tensor) -> tuple[Tensor, dict[int, Tensor]]:
        """Identity-branch forward: (reconstruction, taps at the gate sites)."""
        self._check_spatial(x.data, 3, "imb_apply")
        taps: dict[int, Tensor] = {}
        out = self._walk(self.imb_plan, x, None, taps, None)
        return out, taps

    def idb_apply(self, x: Tensor, mask: Tensor,
                  taps: dict[int, Tensor]) -> tuple[Tensor, dict[int, Tensor]]:
        """One de-shadow pass on Cat(image, mask); returns the raw output."""
        self._check_spatial(x.data, 3, "idb_apply")
        if mask.data.shape[-3] != 1 or mask.data.shape[-2:] != x.data.shape[-2:]:
            raise ContractError(
                f"idb_apply: mask shape {mask.data.shape} incompatible with image "
                f"{x.data.shape}"
            )
        soft: dict[int, Tensor] = {}
        out = self._walk(self.idb_plan, concat_channels([x, mask]), taps, None, soft)
        return out, soft

    def idb_unroll(self, x: Tensor, mask: Tensor, taps: dict[int, Tensor], k: int,
                   truncate: bool = False) -> tuple[list[Tensor], list[dict[int, Tensor]]]:
        """K refinement passes.

        Pass 1 consumes the original image; pass t>1 consumes the clamped
        output of pass t-1 with the same mask and the same identity taps.
        Gradients flow through the whole unrolled loop unless ``truncate``
        detaches the feedback image between passes.
        """
        if k < 1:
            raise ContractError(f"idb_unroll: k must be >= 1, got {k}")
        outs: list[Tensor] = []
        softs: list[dict[int, Tensor]] = []
        cur = x
        for t in range(k):
            out, soft = self.idb_apply(cur, mask, taps)
            outs.append(out)
            softs.append(soft)
            if t + 1 < k:
                cur = clamp(out, 0.0, 1.0)
                if truncate:
                    cur = detach(cur)
        return outs, softs

    # -- image-level wrappers -----------------------------------------------

    def imb_forward(self, img: np.ndarray) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """Reconstruct a single image; returns the clamped reconstruction and
        the tap feature arrays."""
        with no_grad():
            out, taps = self.imb_apply(Tensor(image_to_chw(img, self.dtype)))
        return chw_to_image(np.clip(out.data, 0.0, 1.0)), {
            site: t.data for site, t in taps.items()
        }

    def remove_shadow(self, img: np.ndarray, mask: np.ndarray, k: int = 4,
                      collect_soft_masks: bool = False) -> IterTrace:
        """The full inference pipeline on one image: identity taps once, then
        K refinement passes.  Trace images are clamped to [0, 1]."""
        with no_grad():
            x = Tensor(image_to_chw(img, self.dtype))
            m = Tensor(mask_to_chw(mask, self.dtype))
            _, taps = self.imb_apply(x)
            outs, softs = self.idb_unroll(x, m, taps, k)
        images = [chw_to_image(np.clip(o.data, 0.0, 1.0)) for o in outs]
        if not collect_soft_masks:
            return IterTrace(images=images)
        return IterTrace(
            images=images,
            soft_masks=[{site: s.data[0] for site, s in soft.items()} for soft in softs],
        )
