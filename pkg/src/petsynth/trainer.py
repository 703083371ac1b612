"""Semi-supervised training loop.

The schedule interleaves two alternations:

* phase: coarse on even iterations (uniform all-ones mask), fine on odd
  iterations (residual mask cached from the preceding coarse step, on
  the same batch);
* dataset: paired and unpaired pools swap every ``dataset_block``
  iterations (single-task runs use the paired pool throughout).

Because the block length is odd, a coarse/fine pair can straddle a
dataset boundary; the fine step then draws a fresh batch from the
newly active pool and derives its mask from a no-update forward pass.
Unpaired steps never touch the PET decoder or the skip gates: their loss
sees only the ASL reconstruction, so those parameters receive no
gradient and their normalization statistics see no activations.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import model as model_mod
from .datasets import Batch, DatasetHandle, batch_stream
from .errors import ConfigError, EmptyPool, ScheduleViolation, VersionMismatch
from .losses import paired_loss, unpaired_loss
from .model import ModelConfig, TranslationNet, build, forward

CHECKPOINT_MAGIC = "PSCKPT"
CHECKPOINT_VERSION = 1

PHASE_COARSE = "coarse"
PHASE_FINE = "fine"


@dataclass(frozen=True)
class TrainSchedule:
    total_iterations: int
    batch_size: int = 10
    dataset_block: int = 5
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    checkpoint_every: int = 0  # 0: final checkpoint only
    seed: int = 0
    queue_depth: int = 32

    def __post_init__(self):
        if self.total_iterations <= 0 or self.total_iterations % 2:
            raise ConfigError("total_iterations must be positive and even (coarse/fine split)")
        if self.dataset_block < 1:
            raise ConfigError("dataset_block must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def phase_at(self, iteration: int) -> str:
        return PHASE_COARSE if iteration % 2 == 0 else PHASE_FINE

    def dataset_at(self, iteration: int, alternating: bool) -> str:
        if not alternating:
            return "paired"
        return "paired" if (iteration // self.dataset_block) % 2 == 0 else "unpaired"

    def to_dict(self) -> dict:
        return {
            "total_iterations": self.total_iterations,
            "batch_size": self.batch_size,
            "dataset_block": self.dataset_block,
            "lr": self.lr,
            "betas": list(self.betas),
            "checkpoint_every": self.checkpoint_every,
            "seed": self.seed,
            "queue_depth": self.queue_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        d = dict(d)
        d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class TrainState:
    iteration: int = 0
    cached_masks: torch.Tensor | None = None
    cached_batch: Batch | None = None
    draws_paired: int = 0
    draws_unpaired: int = 0


def count_parameters(net: TranslationNet, group: str = "all") -> int:
    """Trainable parameter count for one group (or 'all'); groups sum to all."""
    groups = net.parameter_groups()
    if group == "all":
        params = [p for ps in groups.values() for _, p in ps]
    elif group in groups:
        params = [p for _, p in groups[group]]
    else:
        raise ValueError(f"unknown group {group!r}")
    return sum(p.numel() for p in params if p.requires_grad)


def _compute_loss(net: TranslationNet, result: model_mod.ForwardResult, batch: Batch) -> torch.Tensor:
    if batch.paired:
        if net.config.multitask:
            return paired_loss(result.pet_pred, batch.pet, result.asl_recon, batch.asl)
        return paired_loss(result.pet_pred, batch.pet)
    return unpaired_loss(result.asl_recon, batch.asl)


def step(
    net: TranslationNet,
    optimizer: torch.optim.Optimizer,
    state: TrainState,
    batch: Batch,
    schedule: TrainSchedule,
    alternating: bool,
) -> dict:
    """Run one optimization step and advance the state.

    Raises ScheduleViolation if the batch's pairing does not match the
    active dataset for this iteration, or if a fine step arrives without
    cached masks for exactly this batch.
    """
    it = state.iteration
    phase = schedule.phase_at(it)
    expected = schedule.dataset_at(it, alternating)
    got = "paired" if batch.paired else "unpaired"
    if got != expected:
        raise ScheduleViolation(f"iteration {it}: expected {expected} batch, got {got}")

    use_ra = net.config.use_residual_attention
    mask = None
    if use_ra and phase == PHASE_FINE:
        if state.cached_masks is None or state.cached_batch is None:
            raise ScheduleViolation(f"iteration {it}: fine step without cached masks")
        if state.cached_batch.subject_ids != batch.subject_ids:
            raise ScheduleViolation(
                f"iteration {it}: fine step must replay the coarse step's samples"
            )
        mask = state.cached_masks

    net.train()
    optimizer.zero_grad(set_to_none=True)
    result = forward(net, batch, mask=mask, include_pet=batch.paired)
    loss = _compute_loss(net, result, batch)
    loss.backward()
    optimizer.step()

    if use_ra:
        if phase == PHASE_COARSE:
            state.cached_masks = result.residual_mask.detach()
            state.cached_batch = batch
        else:
            state.cached_masks = None
            state.cached_batch = None

    state.iteration = it + 1
    return {
        "iteration": it,
        "phase": phase,
        "dataset": got,
        "loss": float(loss.detach()),
        "wall_time": time.time(),
    }


def _prepare_boundary_masks(net: TranslationNet, state: TrainState, batch: Batch) -> None:
    """Mask for a fine step whose coarse partner ran on the other pool:
    reconstruct this batch's ASL without updating anything, gate the residual."""
    was_training = net.training
    net.eval()
    with torch.no_grad():
        result = forward(net, batch, include_pet=False)
        state.cached_masks = net.residual_gate(
            batch.asl.to(result.asl_recon.dtype), result.asl_recon
        ).detach()
    state.cached_batch = batch
    net.train(was_training)


def _atomic_torch_save(payload: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def save_checkpoint(
    path,
    net: TranslationNet,
    optimizer: torch.optim.Optimizer,
    state: TrainState,
    schedule: TrainSchedule,
) -> Path:
    path = Path(path)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": net.config.to_dict(),
        "config_digest": net.config.digest(),
        "iteration": state.iteration,
        "draws_paired": state.draws_paired,
        "draws_unpaired": state.draws_unpaired,
        "model_state": net.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "schedule": schedule.to_dict(),
    }
    _atomic_torch_save(payload, path)
    return path


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if payload.get("magic") != CHECKPOINT_MAGIC or payload.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: not a {CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION} checkpoint")
    if expected_config is not None and payload["config_digest"] != expected_config.digest():
        raise ConfigError(f"{path}: checkpoint was trained with a different configuration")
    return payload


def _stream_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def train(
    config: ModelConfig,
    schedule: TrainSchedule,
    paired_handle: DatasetHandle,
    unpaired_handle: DatasetHandle | None = None,
    out_dir=None,
    resume_from=None,
) -> tuple[TranslationNet, list]:
    """Run the full schedule; returns the trained network and loss history.

    Fully deterministic for fixed (config, schedule, corpus): the data
    order is a pure function of the stream seeds, and resume fast-forwards
    the streams by the recorded draw counts.
    """
    if not paired_handle.paired_ids:
        raise EmptyPool("paired pool is empty")
    alternating = config.multitask
    if alternating and (unpaired_handle is None or not unpaired_handle.unpaired_ids):
        raise EmptyPool("multitask training needs a handle with unpaired subjects")

    net = build(config, schedule.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=schedule.lr, betas=schedule.betas)
    state = TrainState()

    if resume_from is not None:
        payload = load_checkpoint(resume_from, expected_config=config)
        net.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        state.iteration = payload["iteration"]
        state.draws_paired = payload["draws_paired"]
        state.draws_unpaired = payload["draws_unpaired"]
        if state.iteration % 2:
            raise ScheduleViolation("checkpoints are taken on even iteration boundaries")

    streams = {
        "paired": batch_stream(
            paired_handle, schedule.batch_size, "paired",
            _stream_seed(schedule.seed, 1), queue_depth=schedule.queue_depth,
        )
    }
    if alternating:
        streams["unpaired"] = batch_stream(
            unpaired_handle, schedule.batch_size, "unpaired",
            _stream_seed(schedule.seed, 2), queue_depth=schedule.queue_depth,
        )
    streams["paired"].skip(state.draws_paired)
    if alternating:
        streams["unpaired"].skip(state.draws_unpaired)

    def draw(kind: str) -> Batch:
        b = next(streams[kind])
        if kind == "paired":
            state.draws_paired += 1
        else:
            state.draws_unpaired += 1
        return b

    out_dir = Path(out_dir) if out_dir is not None else None
    history_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_file = (out_dir / "history.jsonl").open("a")

    history = []
    try:
        for it in range(state.iteration, schedule.total_iterations):
            phase = schedule.phase_at(it)
            active = schedule.dataset_at(it, alternating)
            if config.use_residual_attention:
                if phase == PHASE_COARSE:
                    batch = draw(active)
                else:
                    cached = state.cached_batch
                    if cached is not None and ("paired" if cached.paired else "unpaired") == active:
                        batch = cached
                    else:
                        # coarse/fine pair straddles a dataset block boundary
                        batch = draw(active)
                        _prepare_boundary_masks(net, state, batch)
            else:
                batch = draw(active)

            record = step(net, optimizer, state, batch, schedule, alternating)
            history.append(record)
            if history_file is not None:
                history_file.write(json.dumps(record) + "\n")

            done = state.iteration
            if (
                out_dir is not None
                and schedule.checkpoint_every
                and done % 2 == 0
                and done % schedule.checkpoint_every == 0
                and done < schedule.total_iterations
            ):
                save_checkpoint(out_dir / f"checkpoint_{done:07d}.pt", net, optimizer, state, schedule)

        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint_final.pt", net, optimizer, state, schedule)
    finally:
        if history_file is not None:
            history_file.close()
        for s in streams.values():
            s.close()
    return net, history
