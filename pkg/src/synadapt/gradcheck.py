"""Central finite-difference validation of accumulated gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .autodiff import Var
from .errors import NumericError
from .tensor import Parameter


def check_gradient(loss_fn: Callable[[], Var], params: Iterable[Parameter],
                   h: float = 1e-5) -> float:
    """Max relative error of tape gradients vs central finite differences.

    `loss_fn` rebuilds the scalar loss from the parameters' current
    values on every call. Analytic gradients come from one backward pass;
    each trainable entry is then perturbed by +/- an h scaled to its
    magnitude and re-evaluated. Relative error is measured against
    max(1, |analytic|). Frozen and non-trainable parameters are skipped;
    their values are never touched.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.value[0, 0]):
        raise NumericError(f"loss is non-finite: {loss.value[0, 0]}")
    loss.backward()
    analytic = {p.name: p.grad.copy() for p in params if p.trainable}

    worst = 0.0
    for p in params:
        if not p.trainable:
            continue
        grad = analytic[p.name]
        rows, cols = p.shape
        for i in range(rows):
            for j in range(cols):
                theta = p.value[i, j]
                step = h * max(1.0, abs(theta))
                p.value[i, j] = theta + step
                up = _eval(loss_fn)
                p.value[i, j] = theta - step
                down = _eval(loss_fn)
                p.value[i, j] = theta
                fd = (up - down) / (2.0 * step)
                err = abs(grad[i, j] - fd) / max(1.0, abs(grad[i, j]))
                if err > worst:
                    worst = err
    return worst


def _eval(loss_fn: Callable[[], Var]) -> float:
    value = float(loss_fn().value[0, 0])
    if not np.isfinite(value):
        raise NumericError(f"loss is non-finite: {value}")
    return value


def full_model_gradcheck(seed: int = 0, batch: int = 4) -> float:
    """Finite-difference check of the complete training loss on a tiny
    model: every trainable adapter and pooling-head parameter is
    perturbed against the batch contrastive objective.
    """
    import numpy as np_  # local alias keeps the module header lean

    from . import autodiff as ad
    from .corpus import Instance, mark_entity
    from .loss import LossConfig, contrastive_loss_var
    from .model import (Aggregator, Backbone, EntityAwareAdapter, ModelConfig,
                        aggregate_pretrain_var)

    config = ModelConfig(hidden_dim=8, n_layers=2, n_heads=2, ffn_dim=16,
                         max_len=16, vocab_size=24, adapter_positions=(1,),
                         adapter_depth=2, bottleneck_dim=4, agg_dim=8)
    rng = np_.random.default_rng(seed)
    backbone = Backbone(config, seed=seed)
    adapter = EntityAwareAdapter(config, "check", seed=seed + 1)
    aggregator = Aggregator(config, "check", seed=seed + 2)

    instances = []
    uids = ["A", "A", "B", "B"][:batch]
    for uid in uids:
        length = int(rng.integers(4, 7))
        words = [int(t) for t in rng.integers(4, config.vocab_size, length)]
        start = int(rng.integers(0, length - 1))
        end = int(rng.integers(start + 1, length + 1))
        tokens, p_s, p_e = mark_entity(words, start, end)
        instances.append(Instance(uid=uid, tokens=tokens, p_s=p_s, p_e=p_e))

    states = [backbone.forward(inst.tokens) for inst in instances]
    cfg = LossConfig(temperature=0.5, tau_plus=0.1, beta=1.0)

    def loss_fn() -> Var:
        pooled = []
        for inst, st in zip(instances, states):
            h_a = adapter.forward_var(st, inst.p_s, inst.p_e)
            pooled.append(aggregate_pretrain_var(st[-1], h_a, inst.p_s,
                                                 inst.p_e, aggregator))
        return contrastive_loss_var(ad.vstack(pooled), [i.uid for i in instances], cfg)

    return check_gradient(loss_fn, adapter.parameters() + aggregator.parameters())
