"""Deterministic pre-training of one adapter + pooling head per domain.

The backbone never enters the optimizer: frozen parameters get no Adam
state and their buffers are write-protected, so freeze violations fail
loudly. Batch seeds are drawn from one seeded stream, which makes
(seed, corpus, config) fully determine the run and lets a checkpointed
rng state resume mid-schedule bit-exactly.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import Instance, make_batches
from .errors import DataError, DivergenceError, NumericError
from .loss import LossConfig, contrastive_loss_var
from .model import (Aggregator, Backbone, BackboneStateCache, EncoderBundle,
                    EntityAwareAdapter, aggregate_pretrain_var)
from .tensor import Parameter, checksum


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 4e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rng_seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.batch_size < 2:
            raise DataError("batch_size must be >= 2")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps, "rng_seed": self.rng_seed,
            "loss": {"temperature": self.loss.temperature,
                     "tau_plus": self.loss.tau_plus, "beta": self.loss.beta},
        }


class Adam:
    """Adam with bias correction; holds state only for trainable params."""

    def __init__(self, params: list[Parameter], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        self.step_count += 1
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def state_dict(self) -> dict:
        return {"step_count": self.step_count,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state: dict) -> None:
        if set(state["m"]) != set(self.m):
            raise DataError("optimizer state does not match the parameter set")
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


@dataclass
class TrainingState:
    """Everything needed to continue an interrupted schedule."""

    epochs_done: int
    rng_state: dict
    adam: dict
    epoch_losses: list[float]


@dataclass
class TrainReport:
    domain: str
    epoch_mean_losses: list[float]
    step_count: int
    wall_time_s: float
    excluded_instances: int
    backbone_checksum_before: str
    backbone_checksum_after: str
    adapter_checksum_before: str
    adapter_checksum_after: str
    aggregator_checksum_before: str
    aggregator_checksum_after: str

    def to_dict(self, include_timing: bool = False) -> dict:
        # wall time is excluded from persisted reports so identical seeds
        # yield byte-identical artifacts; it still reaches stdout
        out = {
            "domain": self.domain,
            "epoch_mean_losses": self.epoch_mean_losses,
            "step_count": self.step_count,
            "excluded_instances": self.excluded_instances,
            "backbone_checksum_before": self.backbone_checksum_before,
            "backbone_checksum_after": self.backbone_checksum_after,
            "adapter_checksum_before": self.adapter_checksum_before,
            "adapter_checksum_after": self.adapter_checksum_after,
            "aggregator_checksum_before": self.aggregator_checksum_before,
            "aggregator_checksum_after": self.aggregator_checksum_after,
        }
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out


def derive_seed(*parts: int | str) -> int:
    """Stable 63-bit seed from mixed int/str parts (process-independent)."""
    entropy = [zlib.crc32(p.encode("utf-8")) if isinstance(p, str) else int(p) & 0xFFFFFFFF
               for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def train_adapter(backbone: Backbone, adapter: EntityAwareAdapter,
                  aggregator: Aggregator, corpus: list[Instance],
                  cfg: TrainConfig, state: TrainingState | None = None,
                  cache: BackboneStateCache | None = None
                  ) -> tuple[TrainReport, TrainingState]:
    """Run the contrastive schedule over uid-grouped batches.

    Mutates only the adapter and aggregator parameters. Returns the
    report plus a resumable state snapshot taken at the final epoch
    boundary.
    """
    started = time.perf_counter()
    if cache is None:
        cache = BackboneStateCache(backbone)
    trainable = adapter.parameters() + aggregator.parameters()
    adam = Adam(trainable, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps)
    rng = np.random.default_rng(cfg.rng_seed)
    epoch_losses: list[float] = []
    start_epoch = 0
    if state is not None:
        rng.bit_generator.state = state.rng_state
        adam.load_state_dict(state.adam)
        epoch_losses = list(state.epoch_losses)
        start_epoch = state.epochs_done
        if start_epoch > cfg.epochs:
            raise DataError(
                f"checkpoint already has {start_epoch} epochs, config asks {cfg.epochs}")

    before_backbone = checksum(backbone.parameters())
    before_adapter = checksum(adapter.parameters())
    before_agg = checksum(aggregator.parameters())

    excluded = 0
    step_count = adam.step_count
    for _epoch in range(start_epoch, cfg.epochs):
        batch_seed = int(rng.integers(0, 2**63 - 1))
        plan = make_batches(corpus, cfg.batch_size, batch_seed)
        excluded = len(plan.excluded)
        total_loss = 0.0
        total_instances = 0
        for batch in plan.batches:
            for p in trainable:
                p.zero_grad()
            pooled: list[ad.Var] = []
            uids: list[str] = []
            try:
                for inst in batch:
                    states = cache.states(inst.tokens)
                    h_a = adapter.forward_var(states, inst.p_s, inst.p_e)
                    pooled.append(aggregate_pretrain_var(states[-1], h_a,
                                                         inst.p_s, inst.p_e,
                                                         aggregator))
                    uids.append(inst.uid)
                loss = contrastive_loss_var(ad.vstack(pooled), uids, cfg.loss)
            except NumericError as exc:
                raise DivergenceError(
                    f"numeric blow-up at step {adam.step_count + 1} "
                    f"(epoch {_epoch + 1}, lr {cfg.learning_rate}): {exc}"
                ) from exc
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss {value} at step {adam.step_count + 1} "
                    f"(epoch {_epoch + 1}, lr {cfg.learning_rate})")
            loss.backward()
            adam.step()
            total_loss += value
            total_instances += len(batch)
        epoch_losses.append(total_loss / total_instances)
    step_count = adam.step_count - step_count

    report = TrainReport(
        domain=adapter.domain,
        epoch_mean_losses=epoch_losses,
        step_count=adam.step_count,
        wall_time_s=time.perf_counter() - started,
        excluded_instances=excluded,
        backbone_checksum_before=before_backbone,
        backbone_checksum_after=checksum(backbone.parameters()),
        adapter_checksum_before=before_adapter,
        adapter_checksum_after=checksum(adapter.parameters()),
        aggregator_checksum_before=before_agg,
        aggregator_checksum_after=checksum(aggregator.parameters()),
    )
    final_state = TrainingState(
        epochs_done=cfg.epochs,
        rng_state=rng.bit_generator.state,
        adam=adam.state_dict(),
        epoch_losses=list(epoch_losses),
    )
    return report, final_state


def continual_train(bundle: EncoderBundle, domain: str, corpus: list[Instance],
                    cfg: TrainConfig) -> tuple[TrainReport, TrainingState]:
    """Add and train a fresh adapter + pooling head for a new domain.

    Previously trained adapters are untouched by construction: the
    optimizer only ever sees the new domain's parameters.
    """
    if domain in bundle.domains:
        raise DataError(f"domain {domain!r} already trained; use resume instead")
    adapter = EntityAwareAdapter(bundle.config, domain,
                                 seed=derive_seed(cfg.rng_seed, domain, 1))
    aggregator = Aggregator(bundle.config, domain,
                            seed=derive_seed(cfg.rng_seed, domain, 2))
    report, state = train_adapter(bundle.backbone, adapter, aggregator, corpus, cfg)
    bundle.adapters.append(adapter)
    bundle.aggregators[domain] = aggregator
    return report, state
