"""Network configuration, assembly, and checkpoint serialization.

The configuration is a small declarative record (text format: INI-style
sections with key = value pairs, schema below). Everything geometric about
a built network is derived from the config by layer_plan(), and both the
builder and the static strictness checker consume that one plan, so what is
checked is exactly what runs.

Config schema::

    [network]
    orientations = 8        # group order N
    input_size = 64         # square input extent
    num_classes = 4

    [stem]
    channels = 8            # divisible by N

    [stage1]                # stage sections numbered from 1, contiguous
    channels = 16           # divisible by N
    blocks = 1              # conv blocks before the downsample
    downsample = strict     # strict | approx
    attention = true

    [head]
    branch_modules = 3      # one of 2, 3, 5, 7, 9
    hidden_channels = 8     # width of each orientation branch

Checkpoints are a flat binary container of named little-endian tensors with
shape headers, versioned by a magic string; the model's config text rides
inside so a checkpoint alone is enough to rebuild the network.
"""

from __future__ import annotations

import configparser
import io
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import tensor
from .autodiff import Node
from .group import CyclicGroup, rotate_planes_node
from .layers import (
    DOWN_SPEC,
    TUNING_SPEC,
    BatchNorm,
    ChannelAttention,
    ConvSpec,
    DownsampleBlock,
    GroupConv,
    LiftConv,
    merge_orientation_groups,
    orientation_groups,
    orientation_pool,
)

BLOCK_SPEC = ConvSpec(k=3, p=1, s=1)
AGG_SPEC = ConvSpec(k=1, p=0, s=1)
BRANCH_MODULE_CHOICES = (2, 3, 5, 7, 9)
DOWNSAMPLE_MODES = ("strict", "approx")


class ConfigError(ValueError):
    """Invalid configuration content; message pinpoints section and key."""


# ---------------------------------------------------------------------------
# Configuration records


@dataclass(frozen=True)
class StageConfig:
    channels: int
    blocks: int = 1
    downsample: str = "strict"
    attention: bool = True


@dataclass(frozen=True)
class HeadConfig:
    branch_modules: int = 3
    hidden_channels: int = 8


@dataclass(frozen=True)
class NetworkConfig:
    orientations: int = 8
    input_size: int = 64
    num_classes: int = 4
    stem_channels: int = 8
    stages: tuple = (
        StageConfig(16),
        StageConfig(32),
        StageConfig(48),
        StageConfig(64),
    )
    head: HeadConfig = field(default_factory=HeadConfig)

    def validate(self):
        n = self.orientations
        if n < 1:
            raise ConfigError(f"[network] orientations = {n}: must be >= 1")
        if self.input_size < 4:
            raise ConfigError(f"[network] input_size = {self.input_size}: must be >= 4")
        if self.num_classes < 2:
            raise ConfigError(f"[network] num_classes = {self.num_classes}: must be >= 2")
        if self.stem_channels < 1 or self.stem_channels % n:
            raise ConfigError(
                f"[stem] channels = {self.stem_channels}: must be a positive "
                f"multiple of orientations ({n})"
            )
        if not self.stages:
            raise ConfigError("at least one stage section ([stage1]) is required")
        for i, st in enumerate(self.stages, 1):
            if st.channels < 1 or st.channels % n:
                raise ConfigError(
                    f"[stage{i}] channels = {st.channels}: must be a positive "
                    f"multiple of orientations ({n})"
                )
            if st.blocks < 1:
                raise ConfigError(f"[stage{i}] blocks = {st.blocks}: must be >= 1")
            if st.downsample not in DOWNSAMPLE_MODES:
                raise ConfigError(
                    f"[stage{i}] downsample = {st.downsample!r}: must be one of "
                    f"{', '.join(DOWNSAMPLE_MODES)}"
                )
        if self.head.branch_modules not in BRANCH_MODULE_CHOICES:
            raise ConfigError(
                f"[head] branch_modules = {self.head.branch_modules}: must be one "
                f"of {BRANCH_MODULE_CHOICES}"
            )
        if self.head.hidden_channels < 1:
            raise ConfigError(
                f"[head] hidden_channels = {self.head.hidden_channels}: must be >= 1"
            )
        # the plan raises if any extent collapses
        layer_plan(self)
        return self


def default_config() -> NetworkConfig:
    return NetworkConfig().validate()


# ---------------------------------------------------------------------------
# Text round-trip


def config_to_text(cfg: NetworkConfig) -> str:
    out = io.StringIO()
    out.write("[network]\n")
    out.write(f"orientations = {cfg.orientations}\n")
    out.write(f"input_size = {cfg.input_size}\n")
    out.write(f"num_classes = {cfg.num_classes}\n")
    out.write("\n[stem]\n")
    out.write(f"channels = {cfg.stem_channels}\n")
    for i, st in enumerate(cfg.stages, 1):
        out.write(f"\n[stage{i}]\n")
        out.write(f"channels = {st.channels}\n")
        out.write(f"blocks = {st.blocks}\n")
        out.write(f"downsample = {st.downsample}\n")
        out.write(f"attention = {'true' if st.attention else 'false'}\n")
    out.write("\n[head]\n")
    out.write(f"branch_modules = {cfg.head.branch_modules}\n")
    out.write(f"hidden_channels = {cfg.head.hidden_channels}\n")
    return out.getvalue()


def _get_int(sec, section_name, key):
    if key not in sec:
        raise ConfigError(f"[{section_name}] is missing required key {key!r}")
    raw = sec[key]
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section_name}] {key} = {raw!r}: not an integer") from None


def _get_bool(sec, section_name, key):
    if key not in sec:
        raise ConfigError(f"[{section_name}] is missing required key {key!r}")
    raw = sec[key].strip().lower()
    if raw in ("true", "yes", "1", "on"):
        return True
    if raw in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section_name}] {key} = {sec[key]!r}: not a boolean")


def _check_keys(sec, section_name, allowed):
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"[{section_name}] has unknown key {key!r}")


def config_from_text(text: str) -> NetworkConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        # configparser messages already carry line numbers
        raise ConfigError(str(exc)) from None

    sections = set(parser.sections())
    stage_names = sorted(s for s in sections if s.startswith("stage"))
    known = {"network", "stem", "head"} | set(stage_names)
    for s in sections - known:
        raise ConfigError(f"unknown section [{s}]")
    for required in ("network", "stem", "head"):
        if required not in sections:
            raise ConfigError(f"missing required section [{required}]")

    expected = [f"stage{i}" for i in range(1, len(stage_names) + 1)]
    if stage_names and sorted(stage_names) != sorted(expected):
        raise ConfigError(
            f"stage sections must be numbered stage1..stage{len(stage_names)} "
            f"contiguously, got {sorted(stage_names)}"
        )
    if not stage_names:
        raise ConfigError("at least one stage section ([stage1]) is required")

    net = parser["network"]
    _check_keys(net, "network", {"orientations", "input_size", "num_classes"})
    stem = parser["stem"]
    _check_keys(stem, "stem", {"channels"})
    stages = []
    for i in range(1, len(stage_names) + 1):
        sec = parser[f"stage{i}"]
        _check_keys(sec, f"stage{i}", {"channels", "blocks", "downsample", "attention"})
        stages.append(StageConfig(
            channels=_get_int(sec, f"stage{i}", "channels"),
            blocks=_get_int(sec, f"stage{i}", "blocks") if "blocks" in sec else 1,
            downsample=sec.get("downsample", "strict").strip(),
            attention=_get_bool(sec, f"stage{i}", "attention") if "attention" in sec else True,
        ))
    head_sec = parser["head"]
    _check_keys(head_sec, "head", {"branch_modules", "hidden_channels"})

    cfg = NetworkConfig(
        orientations=_get_int(net, "network", "orientations"),
        input_size=_get_int(net, "network", "input_size"),
        num_classes=_get_int(net, "network", "num_classes"),
        stem_channels=_get_int(stem, "stem", "channels"),
        stages=tuple(stages),
        head=HeadConfig(
            branch_modules=_get_int(head_sec, "head", "branch_modules"),
            hidden_channels=_get_int(head_sec, "head", "hidden_channels"),
        ),
    )
    return cfg.validate()


def load_config(path) -> NetworkConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def apply_overrides(cfg: NetworkConfig, overrides) -> NetworkConfig:
    """Apply dotted key=value overrides, e.g. stage1.channels=32."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        dotted, value = item.split("=", 1)
        dotted = dotted.strip()
        value = value.strip()
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r}: expected section.key")
        section, key = dotted.split(".", 1)

        def want_int(what):
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"override {dotted}={value!r}: {what} must be an integer") from None

        if section == "network":
            if key not in ("orientations", "input_size", "num_classes"):
                raise ConfigError(f"override {dotted!r}: unknown key")
            cfg = replace(cfg, **{key: want_int(key)})
        elif section == "stem":
            if key != "channels":
                raise ConfigError(f"override {dotted!r}: unknown key")
            cfg = replace(cfg, stem_channels=want_int(key))
        elif section == "head":
            if key not in ("branch_modules", "hidden_channels"):
                raise ConfigError(f"override {dotted!r}: unknown key")
            cfg = replace(cfg, head=replace(cfg.head, **{key: want_int(key)}))
        elif section.startswith("stage"):
            try:
                idx = int(section[5:]) - 1
            except ValueError:
                raise ConfigError(f"override {dotted!r}: bad stage section") from None
            if not 0 <= idx < len(cfg.stages):
                raise ConfigError(
                    f"override {dotted!r}: config has stages 1..{len(cfg.stages)}"
                )
            st = cfg.stages[idx]
            if key in ("channels", "blocks"):
                st = replace(st, **{key: want_int(key)})
            elif key == "downsample":
                st = replace(st, downsample=value)
            elif key == "attention":
                if value.lower() in ("true", "yes", "1", "on"):
                    st = replace(st, attention=True)
                elif value.lower() in ("false", "no", "0", "off"):
                    st = replace(st, attention=False)
                else:
                    raise ConfigError(f"override {dotted}={value!r}: not a boolean")
            else:
                raise ConfigError(f"override {dotted!r}: unknown key")
            stages = list(cfg.stages)
            stages[idx] = st
            cfg = replace(cfg, stages=tuple(stages))
        else:
            raise ConfigError(f"override {dotted!r}: unknown section {section!r}")
    return cfg.validate()


def set_all_downsample(cfg: NetworkConfig, mode: str) -> NetworkConfig:
    stages = tuple(replace(st, downsample=mode) for st in cfg.stages)
    return replace(cfg, stages=stages).validate()


# ---------------------------------------------------------------------------
# The layer plan: one source of truth for extents and kernel geometry


@dataclass(frozen=True)
class PlannedConv:
    name: str
    spec: ConvSpec
    in_extent: int
    out_extent: int
    in_channels: int
    out_channels: int


def needs_tuning(mode: str, extent: int) -> bool:
    """The tuning conv exists exactly when a strict-mode downsample would
    otherwise see an even extent."""
    return mode == "strict" and extent % 2 == 0


def layer_plan(cfg: NetworkConfig) -> list:
    """Every convolution the built network will contain, in forward order,
    with its input/output extents propagated from cfg.input_size."""
    n = cfg.orientations
    rows = []
    s = cfg.input_size

    def add(name, spec, cin, cout):
        nonlocal s
        out = spec.out_size(s)
        rows.append(PlannedConv(name, spec, s, out, cin, cout))
        s = out

    add("stem.conv", BLOCK_SPEC, 1, cfg.stem_channels)
    prev = cfg.stem_channels
    for i, st in enumerate(cfg.stages, 1):
        for b in range(1, st.blocks + 1):
            add(f"stage{i}.block{b}.conv", BLOCK_SPEC,
                prev if b == 1 else st.channels, st.channels)
            prev = st.channels
        if needs_tuning(st.downsample, s):
            add(f"stage{i}.tuning.conv", TUNING_SPEC, st.channels, st.channels)
        add(f"stage{i}.down.conv", DOWN_SPEC, st.channels, st.channels)
    fin = prev // n
    h = cfg.head.hidden_channels
    for m in range(1, cfg.head.branch_modules):
        add(f"head.branch{m}.conv", BLOCK_SPEC, fin if m == 1 else h, h)
    add("head.agg.conv", AGG_SPEC, h * n, h * n)
    return rows


# ---------------------------------------------------------------------------
# Modules


class Block:
    """conv -> batchnorm -> silu, with optional channel attention after."""

    def __init__(self, conv, bn, attention=None):
        self.conv = conv
        self.bn = bn
        self.attention = attention

    def params(self) -> dict:
        out = {}
        for k, v in self.conv.params().items():
            out[f"conv.{k}"] = v
        for k, v in self.bn.params().items():
            out[f"bn.{k}"] = v
        if self.attention is not None:
            for k, v in self.attention.params().items():
                out[f"att.{k}"] = v
        return out

    def forward(self, x: Node, training: bool) -> Node:
        x = ad.silu(self.bn.forward(self.conv.forward(x), training))
        if self.attention is not None:
            x = self.attention.forward(x)
        return x


class Stage:
    def __init__(self, blocks, down):
        self.blocks = blocks
        self.down = down

    def params(self) -> dict:
        out = {}
        for j, blk in enumerate(self.blocks, 1):
            for k, v in blk.params().items():
                out[f"block{j}.{k}"] = v
        for k, v in self.down.params().items():
            out[f"down.{k}"] = v
        return out

    def forward(self, x: Node, training: bool) -> Node:
        for blk in self.blocks:
            x = blk.forward(x, training)
        return self.down.forward(x, training)


def _angle_tables(n: int):
    """Length-N cos/sin tables at angles o*360/N with exact quarter symmetry.

    When 4 | N the tables are built from a single first-quadrant array so
    that sin[(u + N/4) mod N] == cos[u] and cos[(u + N/4) mod N] == -sin[u]
    hold bitwise; the orientation readout's 90-degrees-shift exactness
    rests on these identities.
    """
    if n % 4 == 0:
        q = n // 4
        raw = np.cos(np.arange(q + 1) * (2.0 * np.pi / n))
        raw[0] = 1.0
        raw[q] = 0.0
        cos_t = np.empty(n, dtype=np.float64)
        for u in range(n):
            if u <= q:
                cos_t[u] = raw[u]
            elif u <= 2 * q:
                cos_t[u] = -raw[2 * q - u]
            elif u <= 3 * q:
                cos_t[u] = -raw[u - 2 * q]
            else:
                cos_t[u] = raw[4 * q - u]
        cos_t[cos_t == 0.0] = 0.0  # normalize any -0.0
        sin_t = np.array([cos_t[(u - q) % n] for u in range(n)])
    else:
        ang = 2.0 * np.pi * np.arange(n) / n
        cos_t = np.cos(ang)
        sin_t = np.sin(ang)
    return cos_t.astype(tensor.DTYPE), sin_t.astype(tensor.DTYPE)


class Head:
    """Orientation-grouped multi-branch head with two readouts.

    The incoming feature is split into N orientation groups (channels with
    equal c mod N). One shared stack of (branch_modules - 1) conv+silu
    modules processes every group, branch o running the kernels rotated by
    o*360/N; that rotation is what keeps the merged result a valid
    regular-representation feature. One 1x1 group-conv module aggregates.

    Class logits pool orientations away (invariant); the orientation angle
    is a soft-argmax over per-orientation scores against exact-quarter-
    symmetric cos/sin tables (equivariant: +90 degrees per input quarter
    turn).
    """

    def __init__(self, in_fields: int, num_classes: int, group: CyclicGroup,
                 branch_modules: int, hidden: int, rng: np.random.Generator):
        self.group = group
        self.in_fields = in_fields
        self.hidden = hidden
        self.num_classes = num_classes
        self.branch_w = []
        self.branch_b = []
        for m in range(1, branch_modules):
            cin = in_fields if m == 1 else hidden
            std = math.sqrt(2.0 / (cin * 9))
            self.branch_w.append(Node(tensor.randn(rng, (hidden, cin, 3, 3), std=std)))
            self.branch_b.append(Node(tensor.zeros((hidden,))))
        self.agg = GroupConv(hidden, hidden, group, AGG_SPEC, rng)
        self.agg_bn = BatchNorm(hidden, group)
        self.cls_w = Node(tensor.randn(rng, (hidden, num_classes),
                                       std=1.0 / math.sqrt(hidden)))
        self.cls_b = Node(tensor.zeros((num_classes,)))
        self.orient_w = Node(tensor.randn(rng, (hidden, 1),
                                          std=1.0 / math.sqrt(hidden)))
        cos_t, sin_t = _angle_tables(group.n)
        self.cos_t = cos_t.reshape(group.n, 1)
        self.sin_t = sin_t.reshape(group.n, 1)

    def params(self) -> dict:
        out = {}
        for m, (w, b) in enumerate(zip(self.branch_w, self.branch_b), 1):
            out[f"branch{m}.w"] = w
            out[f"branch{m}.b"] = b
        for k, v in self.agg.params().items():
            out[f"agg.{k}"] = v
        for k, v in self.agg_bn.params().items():
            out[f"agg_bn.{k}"] = v
        out["cls.w"] = self.cls_w
        out["cls.b"] = self.cls_b
        out["orient.w"] = self.orient_w
        return out

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params().values())

    def forward(self, x: Node, training: bool):
        """Returns (class_logits, orientation_angle_radians, aggregated_tap)."""
        n = self.group.n
        groups = orientation_groups(x, self.group)
        outs = []
        for o, gfeat in enumerate(groups):
            u = gfeat
            for w, b in zip(self.branch_w, self.branch_b):
                w_o = rotate_planes_node(w, self.group.angle_deg(o))
                u = ad.conv2d(u, w_o, stride=1, padding=1)
                u = ad.add(u, ad.reshape(b, (1, self.hidden, 1, 1)))
                u = ad.silu(u)
            outs.append(u)
        y = merge_orientation_groups(outs)
        y = ad.silu(self.agg_bn.forward(self.agg.forward(y), training))

        b_sz, c, hh, ww = y.shape
        inv_area = 1.0 / (hh * ww)

        pooled = orientation_pool(y, self.group, "mean")
        feat = ad.mul(ad.ordered_sum(pooled, axis=(-2, -1)), inv_area)
        logits = ad.add(ad.matmul(feat, self.cls_w), self.cls_b)

        z = ad.mul(ad.ordered_sum(y, axis=(-2, -1)), inv_area)  # (B, h*N)
        zb = ad.transpose(ad.reshape(z, (b_sz, self.hidden, n)), (0, 2, 1))
        scores = ad.reshape(
            ad.matmul(ad.reshape(zb, (b_sz * n, self.hidden)), self.orient_w),
            (b_sz, n),
        )
        # softmax whose denominator sums in sorted order, so an orientation
        # roll permutes p bitwise
        mx = Node(scores.value.max(axis=1, keepdims=True))
        e = ad.exp(ad.sub(scores, mx))
        denom = ad.reshape(ad.ordered_sum(e, axis=1), (b_sz, 1))
        p = ad.div(e, denom)
        sin_sum = ad.matmul(p, Node(self.sin_t))
        cos_sum = ad.matmul(p, Node(self.cos_t))
        angle = ad.reshape(ad.atan2(sin_sum, cos_sum), (b_sz,))
        return logits, angle, y


class SingleBranchHead:
    """Comparator head: the same depth at equal hidden width, but as full
    group convolutions over all N orientations at once instead of one
    shared branch per orientation group. Functionally equivalent readouts;
    roughly N times the branch parameters.
    """

    def __init__(self, in_fields: int, num_classes: int, group: CyclicGroup,
                 branch_modules: int, hidden: int, rng: np.random.Generator):
        self.group = group
        self.hidden = hidden
        self.convs = []
        for m in range(1, branch_modules):
            cin = in_fields if m == 1 else hidden
            self.convs.append(GroupConv(cin, hidden, group, BLOCK_SPEC, rng))
        self.agg = GroupConv(hidden, hidden, group, AGG_SPEC, rng)
        self.agg_bn = BatchNorm(hidden, group)
        self.cls_w = Node(tensor.randn(rng, (hidden, num_classes),
                                       std=1.0 / math.sqrt(hidden)))
        self.cls_b = Node(tensor.zeros((num_classes,)))
        self.orient_w = Node(tensor.randn(rng, (hidden, 1),
                                          std=1.0 / math.sqrt(hidden)))

    def params(self) -> dict:
        out = {}
        for m, conv in enumerate(self.convs, 1):
            for k, v in conv.params().items():
                out[f"conv{m}.{k}"] = v
        for k, v in self.agg.params().items():
            out[f"agg.{k}"] = v
        for k, v in self.agg_bn.params().items():
            out[f"agg_bn.{k}"] = v
        out["cls.w"] = self.cls_w
        out["cls.b"] = self.cls_b
        out["orient.w"] = self.orient_w
        return out

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params().values())


@dataclass
class ForwardResult:
    class_logits: Node
    orientation_angle: Node  # radians, (B,)
    taps: dict


class Model:
    """A built network: stem, stages, head, and named stage taps S0..Sk."""

    def __init__(self, config: NetworkConfig, stem: Block, stages, head: Head):
        self.config = config
        self.group = CyclicGroup(config.orientations)
        self.stem = stem
        self.stages = stages
        self.head = head
        self.tap_names = ["S0"] + [f"S{i}" for i in range(1, len(stages) + 1)] + ["head"]

    # -- parameter plumbing

    def params(self) -> dict:
        out = {}
        for k, v in self.stem.params().items():
            out[f"stem.{k}"] = v
        for i, st in enumerate(self.stages, 1):
            for k, v in st.params().items():
                out[f"stage{i}.{k}"] = v
        for k, v in self.head.params().items():
            out[f"head.{k}"] = v
        return out

    def named_batchnorms(self) -> dict:
        out = {"stem.bn": self.stem.bn}
        for i, st in enumerate(self.stages, 1):
            for j, blk in enumerate(st.blocks, 1):
                out[f"stage{i}.block{j}.bn"] = blk.bn
            if st.down.with_tuning:
                out[f"stage{i}.down.tuning_bn"] = st.down.tuning_bn
            out[f"stage{i}.down.down_bn"] = st.down.down_bn
        out["head.agg_bn"] = self.head.agg_bn
        return out

    def param_count(self) -> dict:
        """Exact parameter counts per top-level module plus 'total'."""
        counts = {}
        for name, p in self.params().items():
            top = name.split(".", 1)[0]
            counts[top] = counts.get(top, 0) + p.value.size
        counts["total"] = sum(p.value.size for p in self.params().values())
        return counts

    # -- forward

    def forward(self, images: np.ndarray, training: bool = False,
                want_taps: bool = False) -> ForwardResult:
        x = np.asarray(images)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected images of shape (B, 1, S, S), got {x.shape}")
        s = self.config.input_size
        if x.shape[2] != s or x.shape[3] != s:
            raise ValueError(
                f"input extent {x.shape[2]}x{x.shape[3]} does not match the "
                f"configured size {s}x{s}"
            )
        taps = {}
        h = Node(np.ascontiguousarray(x, dtype=tensor.DTYPE))
        h = self.stem.forward(h, training)
        if want_taps:
            taps["S0"] = h
        for i, st in enumerate(self.stages, 1):
            h = st.forward(h, training)
            if want_taps:
                taps[f"S{i}"] = h
        logits, angle, head_tap = self.head.forward(h, training)
        if want_taps:
            taps["head"] = head_tap
        return ForwardResult(class_logits=logits, orientation_angle=angle, taps=taps)

    def predict(self, images: np.ndarray):
        """(class ids, angles in radians) without building a tape."""
        with ad.no_grad():
            res = self.forward(images, training=False)
        return res.class_logits.value.argmax(axis=1), res.orientation_angle.value


def build(config: NetworkConfig, rng: np.random.Generator) -> Model:
    """Instantiate the network the layer plan describes."""
    config.validate()
    group = CyclicGroup(config.orientations)
    n = group.n
    plan = {row.name: row for row in layer_plan(config)}

    stem = Block(
        LiftConv(1, config.stem_channels // n, group, BLOCK_SPEC, rng),
        BatchNorm(config.stem_channels // n, group),
    )
    stages = []
    prev_fields = config.stem_channels // n
    for i, st in enumerate(config.stages, 1):
        fields = st.channels // n
        blocks = []
        for b in range(1, st.blocks + 1):
            in_f = prev_fields if b == 1 else fields
            att = ChannelAttention(fields, group, rng) if st.attention else None
            blocks.append(Block(
                GroupConv(in_f, fields, group, BLOCK_SPEC, rng),
                BatchNorm(fields, group),
                att,
            ))
            prev_fields = fields
        with_tuning = f"stage{i}.tuning.conv" in plan
        stages.append(Stage(blocks, DownsampleBlock(fields, group, rng, with_tuning)))
    head = Head(prev_fields, config.num_classes, group,
                config.head.branch_modules, config.head.hidden_channels, rng)
    return Model(config, stem, stages, head)


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_MAGIC = b"RQEQCKP1"
_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1"}
_DTYPE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
              np.dtype(np.int64): 2, np.dtype(np.uint8): 3}


def write_tensor_container(path, entries: dict):
    """Write named arrays as a flat little-endian binary container."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr)
            if arr.dtype not in _DTYPE_FOR:
                raise ValueError(f"entry {name!r} has unsupported dtype {arr.dtype}")
            code = _DTYPE_FOR[arr.dtype]
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr).astype(_DTYPE_CODES[code]).tobytes())


def read_tensor_container(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            dt = np.dtype(_DTYPE_CODES[code])
            n_items = 1
            for d in shape:
                n_items *= d
            buf = fh.read(n_items * dt.itemsize)
            out[name] = np.frombuffer(buf, dtype=dt).reshape(shape).copy()
        return out


def save_checkpoint(path, model: Model, optimizer=None, epoch: int = 0):
    entries = {
        "config": np.frombuffer(config_to_text(model.config).encode("utf-8"),
                                dtype=np.uint8).copy(),
        "meta/epoch": np.array([epoch], dtype=np.int64),
    }
    for name, p in model.params().items():
        entries[f"param/{name}"] = p.value
    for name, bn in model.named_batchnorms().items():
        entries[f"bnstate/{name}/mean"] = bn.running_mean
        entries[f"bnstate/{name}/var"] = bn.running_var
    if optimizer is not None:
        for k, v in optimizer.state_dict().items():
            entries[f"opt/{k}"] = v
    write_tensor_container(path, entries)


def load_checkpoint(path):
    """Rebuild the model a checkpoint describes.

    Returns (model, optimizer_state_or_None, epoch). Parameter values, batch
    norm running statistics, and any optimizer moments are restored bitwise.
    """
    entries = read_tensor_container(path)
    config = config_from_text(entries["config"].tobytes().decode("utf-8"))
    model = build(config, tensor.make_rng(0))
    params = model.params()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in entries:
            raise ValueError(f"{path}: missing parameter {name!r}")
        if entries[key].shape != p.value.shape:
            raise ValueError(
                f"{path}: parameter {name!r} has shape {entries[key].shape}, "
                f"model expects {p.value.shape}"
            )
        p.value = entries[key].astype(tensor.DTYPE)
    for name, bn in model.named_batchnorms().items():
        bn.running_mean = entries[f"bnstate/{name}/mean"].astype(tensor.DTYPE)
        bn.running_var = entries[f"bnstate/{name}/var"].astype(tensor.DTYPE)
    opt_state = None
    if any(k.startswith("opt/") for k in entries):
        opt_state = {k[len("opt/"):]: v for k, v in entries.items()
                     if k.startswith("opt/")}
    epoch = int(entries["meta/epoch"][0])
    return model, opt_state, epoch
