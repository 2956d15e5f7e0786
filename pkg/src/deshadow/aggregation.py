"""Adaptive aggregation of identity-branch and de-shadow-branch features.

The gate conv (3x3, C -> 2C) predicts per-element aggregation weights from
the de-shadow feature alone; a sigmoid squashes them into (0, 1).  The first
C weight channels gate the identity feature, the last C gate the de-shadow
feature.  Averaging all 2C weight channels yields a one-channel soft shadow
mask, which is concatenated with the two gated streams and fused back to C
channels by a second 3x3 conv.

Ablation modes replace this with plain addition, multiplication, plain
concat fusion, or the gated fusion without the soft-mask channel.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError
from .nn import (
    Tensor,
    add_elementwise,
    channel_mean,
    concat_channels,
    conv2d,
    mul_elementwise,
    sigmoid,
    slice_channels,
)

AGGREGATION_MODES = ("sab", "add", "mul", "concat", "sab_no_softmask")


@dataclass
class SabParams:
    """Parameters of one aggregation site (entries unused by a mode are None)."""

    gate_w: Tensor | None = None
    gate_b: Tensor | None = None
    fuse_w: Tensor | None = None
    fuse_b: Tensor | None = None


@dataclass
class SabOutput:
    fused: Tensor
    soft_mask: Tensor  # one channel, values strictly in (0, 1)


def _check_features(f_imb: Tensor, f_idb: Tensor, op: str) -> int:
    if f_imb.data.shape != f_idb.data.shape:
        raise ContractError(
            f"{op}: feature shapes differ {f_imb.data.shape} vs {f_idb.data.shape}"
        )
    if f_imb.data.ndim < 3:
        raise ContractError(f"{op}: features must be (C, H, W) or (N, C, H, W)")
    return f_imb.data.shape[-3]


def sab_forward(f_imb: Tensor, f_idb: Tensor, params: SabParams) -> SabOutput:
    """Gated fusion with soft-mask emission.

    The identity feature enters only through the gated concat; the gate
    logits are a function of the de-shadow feature alone, so a frozen
    identity branch keeps its stream constant across refinement iterations.
    """
    c = _check_features(f_imb, f_idb, "sab_forward")
    if params.gate_w is None or params.fuse_w is None:
        raise ContractError("sab_forward: gate and fuse parameters required")
    gates = sigmoid(conv2d(f_idb, params.gate_w, params.gate_b, 1, 1))
    if gates.data.shape[-3] != 2 * c:
        raise ContractError(
            f"sab_forward: gate conv must emit {2 * c} channels, got {gates.data.shape[-3]}"
        )
    w_imb = slice_channels(gates, 0, c)
    w_idb = slice_channels(gates, c, 2 * c)
    soft_mask = channel_mean(gates)
    fused = conv2d(
        concat_channels([
            mul_elementwise(f_imb, w_imb),
            mul_elementwise(f_idb, w_idb),
            soft_mask,
        ]),
        params.fuse_w,
        params.fuse_b,
        1,
        1,
    )
    return SabOutput(fused=fused, soft_mask=soft_mask)


def aggregate_ablation(f_imb: Tensor, f_idb: Tensor, mode: str,
                       params: SabParams | None = None) -> Tensor:
    """Feature aggregation under one of the configurable ablation modes."""
    _check_features(f_imb, f_idb, "aggregate_ablation")
    if mode == "sab":
        if params is None:
            raise ContractError("aggregate_ablation: mode 'sab' needs parameters")
        return sab_forward(f_imb, f_idb, params).fused
    if mode == "add":
        return add_elementwise(f_imb, f_idb)
    if mode == "mul":
        return mul_elementwise(f_imb, f_idb)
    if mode == "concat":
        if params is None or params.fuse_w is None:
            raise ContractError("aggregate_ablation: mode 'concat' needs fuse parameters")
        return conv2d(concat_channels([f_imb, f_idb]), params.fuse_w, params.fuse_b, 1, 1)
    if mode == "sab_no_softmask":
        if params is None or params.gate_w is None or params.fuse_w is None:
            raise ContractError("aggregate_ablation: mode 'sab_no_softmask' needs parameters")
        c = f_imb.data.shape[-3]
        gates = sigmoid(conv2d(f_idb, params.gate_w, params.gate_b, 1, 1))
        w_imb = slice_channels(gates, 0, c)
        w_idb = slice_channels(gates, c, 2 * c)
        return conv2d(
            concat_channels([mul_elementwise(f_imb, w_imb), mul_elementwise(f_idb, w_idb)]),
            params.fuse_w,
            params.fuse_b,
            1,
            1,
        )
    raise ContractError(f"unknown aggregation mode {mode!r}")
