"""Training loop over frozen, pre-encoded embedding pairs.

Only the two alignment heads and the loss scalars (log_scale, bias) are
trainable; the embeddings themselves are read-only inputs, which is what
makes large batches cheap. Each step: gather a batch from the epoch's
deterministic plan, project both sides, evaluate the configured
contrastive loss, push analytic gradients back through the heads, and
apply one sign-momentum update. The end state is fully determined by
(config, dataset).

Checkpoints are a single file: magic "SAC1", a canonical JSON header
(preset, configs, epoch, step, tensor directory), then one SEB1 block per
tensor in directory order. Parameters are float64 so a resumed run
reproduces the uninterrupted trajectory bit-exactly.
"""

from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from .embed_store import PairedDataset, make_batch_plan, read_block, write_block
from .errors import ConfigError, FormatError, ShapeError, ValidationError
from .heads import HeadConfig, HeadParams, _tensor_shapes, head_backward, head_forward, init_head
from .linalg import l2_normalize
from .losses import LossConfig, compute_loss
from .optim import LionState, init_lion, lion_step

CHECKPOINT_MAGIC = b"SAC1"
SCALAR_KEYS = ("loss.log_scale", "loss.bias")


@dataclass(frozen=True)
class TrainConfig:
    image_head: HeadConfig
    text_head: HeadConfig
    loss: LossConfig = LossConfig()
    preset: str = "custom"
    epochs: int = 1
    batch_size: int = 32768
    seed: int = 0
    eval_every: int = 0
    multi_positive: bool = False
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-7
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.image_head.out_dim != self.text_head.out_dim:
            raise ConfigError(
                "image and text heads must share out_dim "
                f"({self.image_head.out_dim} vs {self.text_head.out_dim})"
            )
        if self.multi_positive and self.loss.kind != "sigmoid":
            raise ConfigError("multi_positive requires the sigmoid loss")


def probe_config(image_in_dim: int, text_in_dim: int, seed: int = 0, **overrides) -> TrainConfig:
    """Linear-probing preset: linear heads into a 2048-d space, 100 epochs."""
    base = dict(
        image_head=HeadConfig("linear", image_in_dim, 2048, init_seed=seed + 1),
        text_head=HeadConfig("linear", text_in_dim, 2048, init_seed=seed + 2),
        loss=LossConfig(kind="sigmoid", normalization="batch_squared"),
        preset="probe",
        epochs=100,
        batch_size=32768,
        seed=seed,
    )
    base.update(overrides)
    return TrainConfig(**base)


def sail_config(image_in_dim: int, text_in_dim: int, seed: int = 0, **overrides) -> TrainConfig:
    """Full-recipe preset: GLU x8 heads into a 1024-d space, 50 epochs."""
    base = dict(
        image_head=HeadConfig("glu", image_in_dim, 1024, expansion=8, init_seed=seed + 1),
        text_head=HeadConfig("glu", text_in_dim, 1024, expansion=8, init_seed=seed + 2),
        loss=LossConfig(kind="sigmoid", normalization="batch_squared"),
        preset="sail",
        epochs=50,
        batch_size=32768,
        seed=seed,
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TrainerState:
    config: TrainConfig
    params: dict[str, np.ndarray]
    lion: LionState
    epoch: int = 0
    step: int = 0
    epoch_losses: list[float] = field(default_factory=list)

    def head_params(self, side: str) -> HeadParams:
        cfg = self.config.image_head if side == "image" else self.config.text_head
        prefix = f"head.{side}."
        tensors = {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}
        return HeadParams(config=cfg, tensors=tensors)

    @property
    def loss_config(self) -> LossConfig:
        return replace(
            self.config.loss,
            log_scale=float(self.params["loss.log_scale"]),
            bias=float(self.params["loss.bias"]),
        )


def init_state(cfg: TrainConfig) -> TrainerState:
    params: dict[str, np.ndarray] = {}
    for side, head_cfg in (("image", cfg.image_head), ("text", cfg.text_head)):
        head = init_head(head_cfg)
        for name, arr in head.tensors.items():
            params[f"head.{side}.{name}"] = arr
    params["loss.log_scale"] = np.asarray(cfg.loss.log_scale, dtype=np.float64)
    params["loss.bias"] = np.asarray(cfg.loss.bias, dtype=np.float64)
    lion = init_lion(
        params, beta1=cfg.beta1, beta2=cfg.beta2, lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    return TrainerState(config=cfg, params=params, lion=lion)


def _validate_dataset(dataset: PairedDataset, cfg: TrainConfig) -> None:
    if cfg.multi_positive and dataset.hq_texts is None:
        raise ConfigError("multi_positive training requested but dataset has no hq_texts")
    if dataset.images.dim != cfg.image_head.in_dim:
        raise ShapeError(
            f"image embeddings have dim {dataset.images.dim}, "
            f"head expects {cfg.image_head.in_dim}"
        )
    if dataset.texts.dim != cfg.text_head.in_dim:
        raise ShapeError(
            f"text embeddings have dim {dataset.texts.dim}, "
            f"head expects {cfg.text_head.in_dim}"
        )
    if dataset.n_rows // cfg.batch_size == 0:
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds dataset size {dataset.n_rows}"
        )


def _dataset_crc(dataset: PairedDataset) -> int:
    crc = zlib.crc32(dataset.images.data.tobytes())
    crc = zlib.crc32(dataset.texts.data.tobytes(), crc)
    if dataset.hq_texts is not None:
        crc = zlib.crc32(dataset.hq_texts.data.tobytes(), crc)
    return crc


def run_epochs(
    state: TrainerState,
    dataset: PairedDataset,
    n_epochs: int,
    metrics_out: TextIO | None = None,
    eval_hook: Callable[[TrainerState], None] | None = None,
) -> TrainerState:
    """Advance the state by n_epochs; epoch numbering continues from the state."""
    cfg = state.config
    _validate_dataset(dataset, cfg)
    before = _dataset_crc(dataset)

    params = dict(state.params)
    lion = state.lion
    step = state.step
    epoch_losses = list(state.epoch_losses)
    decay_exempt = frozenset(SCALAR_KEYS)

    for epoch in range(state.epoch, state.epoch + n_epochs):
        plan = make_batch_plan(dataset.n_rows, cfg.batch_size, cfg.seed, epoch)
        batch_losses: list[float] = []
        for idx in plan.batches():
            t0 = time.perf_counter()
            x = dataset.images.data[idx].astype(np.float64)
            y = dataset.texts.data[idx].astype(np.float64)
            y_hq = (
                dataset.hq_texts.data[idx].astype(np.float64)
                if cfg.multi_positive and dataset.hq_texts is not None
                else None
            )

            image_head = HeadParams(cfg.image_head, {
                k[len("head.image."):]: v for k, v in params.items()
                if k.startswith("head.image.")
            })
            text_head = HeadParams(cfg.text_head, {
                k[len("head.text."):]: v for k, v in params.items()
                if k.startswith("head.text.")
            })
            live_loss = replace(
                cfg.loss,
                log_scale=float(params["loss.log_scale"]),
                bias=float(params["loss.bias"]),
            )

            proj_x, cache_x = head_forward(image_head, x)
            proj_y, cache_y = head_forward(text_head, y)
            if y_hq is not None:
                proj_hq, cache_hq = head_forward(text_head, y_hq)
                out = compute_loss(proj_x, proj_y, live_loss, y_hq=proj_hq)
            else:
                out = compute_loss(proj_x, proj_y, live_loss)

            if not np.isfinite(out.value):
                raise ValidationError(f"non-finite loss at step {step}")

            grads: dict[str, np.ndarray] = {}
            gs = head_backward(image_head, cache_x, out.d_x)
            for name, g in gs.tensors.items():
                grads[f"head.image.{name}"] = g
            gt = head_backward(text_head, cache_y, out.d_y)
            text_grads = dict(gt.tensors)
            if y_hq is not None:
                gh = head_backward(text_head, cache_hq, out.d_y_hq)
                for name, g in gh.tensors.items():
                    text_grads[name] = text_grads[name] + g
            for name, g in text_grads.items():
                grads[f"head.text.{name}"] = g
            grads["loss.log_scale"] = np.asarray(out.d_log_scale, dtype=np.float64)
            grads["loss.bias"] = np.asarray(out.d_bias, dtype=np.float64)

            params, lion = lion_step(params, grads, lion, decay_exempt=decay_exempt)
            step += 1
            batch_losses.append(out.value)

            if metrics_out is not None:
                batch = idx.shape[0]
                # value restated under both normalizations for diagnostics
                if cfg.loss.normalization == "batch":
                    loss_batch, loss_batch_sq = out.value, out.value / batch
                else:
                    loss_batch, loss_batch_sq = out.value * batch, out.value
                record = {
                    "step": step,
                    "epoch": epoch,
                    "loss": out.value,
                    "t": float(np.exp(params["loss.log_scale"])),
                    "b": float(params["loss.bias"]),
                    "wall_ms": (time.perf_counter() - t0) * 1000.0,
                    "loss_batch": loss_batch,
                    "loss_batch_sq": loss_batch_sq,
                }
                metrics_out.write(json.dumps(record) + "\n")

        epoch_losses.append(float(np.mean(batch_losses)))
        new_state = TrainerState(
            config=cfg, params=params, lion=lion,
            epoch=epoch + 1, step=step, epoch_losses=epoch_losses,
        )
        if eval_hook is not None and cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0:
            eval_hook(new_state)
        state = new_state

    # frozen-backbone contract: training must never touch the inputs
    assert _dataset_crc(dataset) == before, "input embeddings were mutated during training"
    return state


def train(
    dataset: PairedDataset,
    cfg: TrainConfig,
    metrics_path: str | Path | None = None,
    eval_hook: Callable[[TrainerState], None] | None = None,
) -> TrainerState:
    state = init_state(cfg)
    if metrics_path is None:
        return run_epochs(state, dataset, cfg.epochs, eval_hook=eval_hook)
    with open(metrics_path, "w", encoding="utf-8") as fh:
        return run_epochs(state, dataset, cfg.epochs, metrics_out=fh, eval_hook=eval_hook)


def embed_with_head(state: TrainerState, side: str, x: np.ndarray) -> np.ndarray:
    """L2-normalized head projection; the inference path for every evaluation."""
    if side not in ("image", "text"):
        raise ConfigError(f"side must be 'image' or 'text', got {side!r}")
    y, _ = head_forward(state.head_params(side), x)
    return l2_normalize(y).values


def _expected_shapes(cfg: TrainConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for side, head_cfg in (("image", cfg.image_head), ("text", cfg.text_head)):
        for name, shape in _tensor_shapes(head_cfg).items():
            shapes[f"head.{side}.{name}"] = shape
    shapes["loss.log_scale"] = ()
    shapes["loss.bias"] = ()
    return shapes


def _config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["image_head"] = HeadConfig(**d["image_head"])
    d["text_head"] = HeadConfig(**d["text_head"])
    d["loss"] = LossConfig(**d["loss"])
    return TrainConfig(**d)


def save_checkpoint(state: TrainerState, path: str | Path) -> None:
    names = sorted(state.params) + [f"optim.{k}.m" for k in sorted(state.lion.momenta)]
    arrays = {**state.params, **{f"optim.{k}.m": v for k, v in state.lion.momenta.items()}}
    header = {
        "format_version": 1,
        "preset": state.config.preset,
        "configs": {"train": _config_to_dict(state.config)},
        "epoch": state.epoch,
        "step": state.step,
        "optimizer_step": state.lion.step,
        "epoch_losses": state.epoch_losses,
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            arr = np.asarray(arrays[name], dtype=np.float64)
            write_block(arr.reshape(1, arr.size), fh)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> TrainerState:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        if header.get("format_version") != 1:
            raise FormatError(f"{path}: unsupported checkpoint version")
        cfg = _config_from_dict(header["configs"]["train"])
        expected = _expected_shapes(cfg)
        params: dict[str, np.ndarray] = {}
        momenta: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            block = read_block(fh, str(path))
            arr = block.reshape(shape)
            if name.startswith("optim.") and name.endswith(".m"):
                base = name[len("optim."):-len(".m")]
                if base not in expected or expected[base] != shape:
                    raise FormatError(f"{path}: tensor {name!r} has shape {shape}, "
                                      f"expected {expected.get(base)}")
                momenta[base] = arr
            else:
                if name not in expected or expected[name] != shape:
                    raise FormatError(f"{path}: tensor {name!r} has shape {shape}, "
                                      f"expected {expected.get(name)}")
                params[name] = arr
    missing = set(expected) - set(params)
    if missing:
        raise FormatError(f"{path}: checkpoint missing tensors {sorted(missing)}")
    lion = LionState(
        momenta=momenta, beta1=cfg.beta1, beta2=cfg.beta2,
        lr=cfg.lr, weight_decay=cfg.weight_decay, step=header["optimizer_step"],
    )
    return TrainerState(
        config=cfg, params=params, lion=lion,
        epoch=header["epoch"], step=header["step"],
        epoch_losses=list(header["epoch_losses"]),
    )
