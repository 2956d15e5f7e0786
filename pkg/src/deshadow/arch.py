"""Declarative construction of the encoder-decoder layer stacks.

One parameterization covers both the full-size network (64 base channels,
8 residual blocks, 256x256 inputs) and desk-scale variants obtained through
``scale_divisor``.  Conv layers are numbered 1..L in forward order, counting
every convolution (residual-block internals included); the aggregation gates
sit after layers {1, 3, L-1} by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError
from .nn import Parameter, ParameterStore

BRANCH_IMB = "imb"  # identity-mapping branch: reconstructs its input
BRANCH_IDB = "idb"  # iterative de-shadow branch: image + mask in, image out

_BRANCH_INPUT_CHANNELS = {BRANCH_IMB: 3, BRANCH_IDB: 4}


@dataclass(frozen=True)
class ArchSpec:
    """Scaleable description of the two-branch layer stack."""

    base_channels: int = 64
    resnet_blocks: int = 8
    input_size: int = 256
    scale_divisor: int = 1
    sab_sites: tuple[int, ...] | None = None  # None -> {1, 3, L-1}

    def __post_init__(self):
        if self.base_channels < 1 or self.resnet_blocks < 0 or self.input_size < 4:
            raise ContractError("ArchSpec: counts must be positive")
        if self.scale_divisor < 1:
            raise ContractError("ArchSpec: scale_divisor must be >= 1")
        if self.base_channels % self.scale_divisor != 0:
            raise ContractError(
                f"ArchSpec: base_channels {self.base_channels} not divisible by "
                f"scale_divisor {self.scale_divisor}"
            )
        if self.input_size % 4 != 0:
            raise ContractError("ArchSpec: input_size must be divisible by 4 (two 2x downsamples)")
        sites = self.resolved_sab_sites()
        if len(set(sites)) != len(sites):
            raise ContractError("ArchSpec: duplicate sab site")
        for s in sites:
            if not 1 <= s <= self.conv_layer_count() - 1:
                raise ContractError(
                    f"ArchSpec: sab site {s} outside valid layers 1..{self.conv_layer_count() - 1}"
                )

    def conv_layer_count(self) -> int:
        """L: head + 2 down + residual convs + 2 up + output conv."""
        return 6 + 2 * self.resnet_blocks

    def resolved_sab_sites(self) -> tuple[int, ...]:
        if self.sab_sites is None:
            return (1, 3, self.conv_layer_count() - 1)
        return tuple(sorted(self.sab_sites))

    def channels(self) -> int:
        return self.base_channels // self.scale_divisor

    def to_kv(self) -> dict[str, str]:
        return {
            "arch.base_channels": str(self.base_channels),
            "arch.resnet_blocks": str(self.resnet_blocks),
            "arch.input_size": str(self.input_size),
            "arch.scale_divisor": str(self.scale_divisor),
            "arch.sab_sites": ",".join(str(s) for s in self.resolved_sab_sites()),
        }

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ArchSpec":
        sites_text = kv.get("arch.sab_sites", "").strip()
        sites = tuple(int(s) for s in sites_text.split(",") if s) if sites_text else ()
        return cls(
            base_channels=int(kv["arch.base_channels"]),
            resnet_blocks=int(kv["arch.resnet_blocks"]),
            input_size=int(kv["arch.input_size"]),
            scale_divisor=int(kv["arch.scale_divisor"]),
            sab_sites=sites if sites else None,
        )


@dataclass(frozen=True)
class ConvDesc:
    """One convolution row of the plan."""

    index: int  # 1-based conv layer number
    name: str
    kind: str  # "conv" | "convtran"
    in_ch: int
    out_ch: int
    k: int
    stride: int
    pad: int
    relu: bool
    out_size: int
    res_role: str | None = None  # None | "first" | "second"

    def param_count(self) -> int:
        return self.k * self.k * self.in_ch * self.out_ch + self.out_ch


@dataclass(frozen=True)
class LayerPlan:
    branch: str
    spec: ArchSpec
    convs: tuple[ConvDesc, ...] = field(default_factory=tuple)

    def by_index(self, index: int) -> ConvDesc:
        return self.convs[index - 1]

    def param_count(self) -> int:
        return sum(c.param_count() for c in self.convs)

    def output_sizes(self) -> list[int]:
        return [c.out_size for c in self.convs]


def build_plan(spec: ArchSpec, branch: str) -> LayerPlan:
    """Layer list for one branch.

    Head conv 7/1/3, two stride-2 downsampling convs (4/2/1), the residual
    trunk (3x3 pairs with identity skips), two stride-2 transposed convs
    (4/2/1), and a final 7/1/3 conv back to 3 channels with no activation.
    The branches differ only in input channels (3 vs 4); aggregation sites
    apply to the de-shadow branch at forward time.
    """
    if branch not in _BRANCH_INPUT_CHANNELS:
        raise ContractError(f"unknown branch {branch!r}")
    c = spec.channels()
    size = spec.input_size
    convs: list[ConvDesc] = []

    def push(name, kind, in_ch, out_ch, k, stride, pad, relu, out_size, res_role=None):
        convs.append(
            ConvDesc(len(convs) + 1, name, kind, in_ch, out_ch, k, stride, pad, relu,
                     out_size, res_role)
        )

    push("enc1", "conv", _BRANCH_INPUT_CHANNELS[branch], c, 7, 1, 3, True, size)
    push("enc2", "conv", c, 2 * c, 4, 2, 1, True, size // 2)
    push("enc3", "conv", 2 * c, 4 * c, 4, 2, 1, True, size // 4)
    for i in range(1, spec.resnet_blocks + 1):
        push(f"res{i}a", "conv", 4 * c, 4 * c, 3, 1, 1, True, size // 4, "first")
        push(f"res{i}b", "conv", 4 * c, 4 * c, 3, 1, 1, True, size // 4, "second")
    push("dec1", "convtran", 4 * c, 2 * c, 4, 2, 1, True, size // 2)
    push("dec2", "convtran", 2 * c, c, 4, 2, 1, True, size)
    push("out", "conv", c, 3, 7, 1, 3, False, size)
    return LayerPlan(branch=branch, spec=spec, convs=tuple(convs))


def _init_conv(store: ParameterStore, prefix: str, desc: ConvDesc,
               rng: np.random.Generator, dtype) -> None:
    bound = math.sqrt(1.0 / (desc.in_ch * desc.k * desc.k))
    if desc.kind == "convtran":
        shape = (desc.in_ch, desc.out_ch, desc.k, desc.k)
    else:
        shape = (desc.out_ch, desc.in_ch, desc.k, desc.k)
    weights = rng.uniform(-bound, bound, size=shape)
    store.add(Parameter(f"{prefix}.{desc.name}.w", weights, dtype=dtype))
    store.add(Parameter(f"{prefix}.{desc.name}.b", np.zeros(desc.out_ch), dtype=dtype))


def init_params(plan: LayerPlan, seed_or_rng, store: ParameterStore | None = None,
                dtype=np.float32) -> ParameterStore:
    """Fan-in-scaled uniform weights (bound sqrt(1/(C_in*k*k))), zero biases.

    Deterministic per seed; passing a Generator draws from it in plan order
    so multiple plans can share one seeded stream.
    """
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(np.random.PCG64(seed_or_rng)))
    if store is None:
        store = ParameterStore()
    for desc in plan.convs:
        _init_conv(store, plan.branch, desc, rng, dtype)
    return store


# ---------------------------------------------------------------------------
# aggregation-gate parameters (paired with the plan's tap sites)
# ---------------------------------------------------------------------------


def sab_param_shapes(mode: str, channels: int) -> dict[str, tuple]:
    """Parameter shapes one aggregation site needs under ``mode``."""
    gate = {
        "gate.w": (2 * channels, channels, 3, 3),
        "gate.b": (2 * channels,),
    }
    if mode == "sab":
        return gate | {
            "fuse.w": (channels, 2 * channels + 1, 3, 3),
            "fuse.b": (channels,),
        }
    if mode == "sab_no_softmask":
        return gate | {
            "fuse.w": (channels, 2 * channels, 3, 3),
            "fuse.b": (channels,),
        }
    if mode == "concat":
        return {
            "fuse.w": (channels, 2 * channels, 3, 3),
            "fuse.b": (channels,),
        }
    if mode in ("add", "mul"):
        return {}
    raise ContractError(f"unknown aggregation mode {mode!r}")


def init_sab_params(plan: LayerPlan, mode: str, seed_or_rng,
                    store: ParameterStore | None = None, dtype=np.float32) -> ParameterStore:
    """Aggregation parameters for every site of the plan.

    Gate convs start at zero (weights and bias) so an untrained block gates
    both streams symmetrically at sigmoid(0) = 0.5; fusion convs follow the
    standard fan-in policy with zero bias.
    """
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(np.random.PCG64(seed_or_rng)))
    if store is None:
        store = ParameterStore()
    for site in plan.spec.resolved_sab_sites():
        channels = plan.by_index(site).out_ch
        for suffix, shape in sab_param_shapes(mode, channels).items():
            name = f"{plan.branch}.agg{site}.{suffix}"
            if suffix.startswith("gate") or suffix.endswith(".b"):
                store.add(Parameter(name, np.zeros(shape), dtype=dtype))
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                bound = math.sqrt(1.0 / fan_in)
                store.add(Parameter(name, rng.uniform(-bound, bound, size=shape), dtype=dtype))
    return store


def desk_spec(base_channels: int = 64, resnet_blocks: int = 2, input_size: int = 64,
              scale_divisor: int = 8) -> ArchSpec:
    """The reduced configuration used for CPU-budget runs and tests."""
    return ArchSpec(
        base_channels=base_channels,
        resnet_blocks=resnet_blocks,
        input_size=input_size,
        scale_divisor=scale_divisor,
    )


def with_input_size(spec: ArchSpec, input_size: int) -> ArchSpec:
    return replace(spec, input_size=input_size)
