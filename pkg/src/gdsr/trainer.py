"""Adam, the step learning-rate schedule, the training loop and the binary checkpoint format."""

from __future__ import annotations

import contextlib
import io
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autograd import NumericError, Tensor, UsageError, deterministic, is_deterministic, make_rng, no_grad
from .degradation import DegradationConfig, degrade, sample_patch
from .metrics import psnr_y
from .model import GdsrModel, ModelConfig
from .wavelet import LOSS_MODES, WaveletLossConfig, total_loss

# stream keys for make_rng
_PATCH_STREAM = 1


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch: int = 16
    epochs: int = 200
    halve_at: int = 100
    patch: int = 64
    loss_mode: str = "rec"
    seed: int = 0
    val_every: int = 1
    max_steps: int = 0
    deterministic: bool = True
    wavelet: WaveletLossConfig = field(default_factory=WaveletLossConfig)

    def __post_init__(self):
        for name in ("lr0", "batch", "epochs", "halve_at", "patch", "eps", "val_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.halve_at >= self.epochs:
            raise ValueError("halve_at must be earlier than the last epoch")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0 (0 means no cap)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wavelet")
        return d


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 if epoch < cfg.halve_at else cfg.lr0 / 2.0


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place."""
    if len(params) != len(state.m):
        raise UsageError("optimizer state does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise UsageError("adam_step called on a parameter without a gradient")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad.astype(np.float64)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype)


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = AdamState.zeros_like(self.params)

    def step(self, lr: float) -> None:
        adam_step(self.params, self.state, lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- inference helpers --------------------------------------------------------


def super_resolve(model: GdsrModel, lr: np.ndarray) -> np.ndarray:
    """3 x H x W in [0, 1] -> 3 x rH x rW in [0, 1]."""
    with no_grad():
        out = model(Tensor(lr[None].astype(model.cfg.np_dtype)))
    return np.clip(out.data[0].astype(np.float64), 0.0, 1.0)


def evaluate_psnr(model: GdsrModel, pairs, border: int | None = None) -> float:
    border = model.cfg.scale if border is None else border
    return float(np.mean([psnr_y(super_resolve(model, lr), hr, border) for hr, lr in pairs]))


# -- training loop ------------------------------------------------------------


@dataclass
class History:
    rows: list = field(default_factory=list)

    def record(self, step: int, epoch: int, lr: float, loss: float, val_psnr=None) -> None:
        self.rows.append({"step": step, "epoch": epoch, "lr": lr, "loss": loss, "val_psnr": val_psnr})

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows]

    def to_csv(self) -> str:
        with_val = any(r["val_psnr"] is not None for r in self.rows)
        head = "step,epoch,lr,loss" + (",val_psnr" if with_val else "")
        lines = [head]
        for r in self.rows:
            cells = [str(r["step"]), str(r["epoch"]), repr(r["lr"]), repr(r["loss"])]
            if with_val:
                cells.append("" if r["val_psnr"] is None else repr(r["val_psnr"]))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def make_pairs(images, deg: DegradationConfig, offset: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(hr, lr) pairs; LR of image i depends only on (deg.seed, offset + i)."""
    return [(hr, degrade(hr, deg, offset + i)) for i, hr in enumerate(images)]


def train_loop(model: GdsrModel, train_pairs, cfg: TrainConfig, val_pairs=None,
               optimizer: Adam | None = None, start_step: int = 0,
               log: Callable[[str], None] | None = None) -> History:
    """Epoch = one random patch from every training image, grouped into batches of ``cfg.batch``."""
    if not train_pairs:
        raise ValueError("training set is empty")
    ctx = deterministic() if (cfg.deterministic or is_deterministic()) else contextlib.nullcontext()
    r = model.cfg.scale
    dtype = model.cfg.np_dtype
    params = model.parameters()
    opt = optimizer or Adam(params, cfg)
    filt = cfg.wavelet.wavelet() if cfg.loss_mode == "rec_plus_wav" else None
    history = History()
    n = len(train_pairs)
    step = start_step
    per_epoch = math.ceil(n / cfg.batch)
    first_epoch = start_step // per_epoch
    t0 = time.perf_counter()
    with ctx:
        for epoch in range(first_epoch, cfg.epochs):
            lr = lr_at(epoch, cfg)
            rng = make_rng(cfg.seed, _PATCH_STREAM, epoch)
            order = rng.permutation(n)
            patches = [sample_patch(train_pairs[i][0], train_pairs[i][1], cfg.patch, r, rng) for i in order]
            for b in range(per_epoch):
                if epoch * per_epoch + b < start_step:
                    continue
                if cfg.max_steps and step >= cfg.max_steps:
                    return history
                chunk = patches[b * cfg.batch:(b + 1) * cfg.batch]
                lr_in = Tensor(np.stack([p.lr for p in chunk]).astype(dtype))
                hr_t = Tensor(np.stack([p.hr for p in chunk]).astype(dtype))
                opt.zero_grad()
                loss = total_loss(model(lr_in), hr_t, cfg.wavelet, cfg.loss_mode, filt)
                value = float(loss.item())
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss {value} at step {step}")
                loss.backward()
                opt.step(lr)
                step += 1
                val = None
                last_of_epoch = b == per_epoch - 1
                if val_pairs and last_of_epoch and (epoch + 1) % cfg.val_every == 0:
                    val = evaluate_psnr(model, val_pairs)
                history.record(step, epoch, lr, value, val)
                if log and (step % 50 == 0 or val is not None and (epoch + 1) % (50 * cfg.val_every) == 0):
                    extra = f" val_psnr={val:.3f}" if val is not None else ""
                    log(f"step {step} epoch {epoch} lr {lr:.3g} loss {value:.6f}{extra} "
                        f"({time.perf_counter() - t0:.1f}s)")
    return history


# -- checkpoints --------------------------------------------------------------

MAGIC = b"GDSRCKPT"
VERSION = 1
_OPT_PREFIX = "optimizer."


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


def _config_text(model_cfg: ModelConfig, extra: dict) -> str:
    lines = [f"model.{k} = {v}" for k, v in model_cfg.to_dict().items()]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    return "\n".join(lines) + "\n"


def save_checkpoint(path, model: GdsrModel, optimizer: Adam | None = None, step: int = 0) -> None:
    """Config block plus every parameter (and optionally Adam moments) as float32 little-endian."""
    tensors = list(model.state_dict().items())
    extra = {"train.step": step}
    if optimizer is not None:
        names = [name for name, _ in model.named_parameters()]
        extra["optimizer.t"] = optimizer.state.t
        tensors += [(f"{_OPT_PREFIX}m.{nm}", m) for nm, m in zip(names, optimizer.state.m)]
        tensors += [(f"{_OPT_PREFIX}v.{nm}", v) for nm, v in zip(names, optimizer.state.v)]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    text = _config_text(model.cfg, extra).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out


@dataclass
class Checkpoint:
    model: GdsrModel
    config: dict
    tensors: dict

    @property
    def step(self) -> int:
        return int(self.config.get("train.step", 0))

    def restore_optimizer(self, opt: Adam) -> bool:
        """Load saved Adam moments into ``opt``; False when none were stored."""
        if "optimizer.t" not in self.config:
            return False
        names = [name for name, _ in self.model.named_parameters()]
        opt.state.t = int(self.config["optimizer.t"])
        opt.state.m = [self.tensors[f"{_OPT_PREFIX}m.{nm}"].astype(np.float64) for nm in names]
        opt.state.v = [self.tensors[f"{_OPT_PREFIX}v.{nm}"].astype(np.float64) for nm in names]
        return True


def load_checkpoint(path) -> Checkpoint:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version = rd.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = parse_key_values(rd.take(rd.u32()).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from None
    tensors = {}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        rank = rd.u32()
        shape = struct.unpack(f"<{rank}I", rd.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(shape).copy()
    if rd.pos != len(rd.data):
        raise CheckpointError(f"{path}: {len(rd.data) - rd.pos} trailing bytes")
    model_fields = {k[len("model."):]: v for k, v in config.items() if k.startswith("model.")}
    model = GdsrModel(ModelConfig.from_dict(model_fields))
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith(_OPT_PREFIX)})
    return Checkpoint(model, config, tensors)


def train_config_fields() -> dict:
    return {f.name: f.type for f in fields(TrainConfig) if f.name != "wavelet"}
