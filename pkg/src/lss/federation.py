"""Broadcast / local-train / aggregate loop with deterministic seeding.

Each round every client trains from a copy of the current global model
using the configured strategy, and the server forms the new global model
as the client-weighted average of the uploads.  Per-client seeds are a
stable hash of (round seed, client id), so results are independent of
execution order; ``LSS_THREADS`` only controls how many clients train
concurrently.
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .local_training import (
    LocalConfig,
    LocalTrace,
    fedprox_local_train,
    lss_local_train,
    sgd_local_train,
)
from .model import MlpSpec, accuracy, init_params, loss_and_grad
from .params import ParamVector, l2_distance, weighted_average

STRATEGIES = ("fedavg", "fedprox", "lss")

CSV_HEADER = "round,global_acc,global_loss,client_accs,update_norms,wall_time_s"


def derive_seed(*parts: int | str) -> int:
    """Stable 64-bit seed from a mix of integers and strings.

    Unlike Python's salted ``hash``, this is identical across runs and
    platforms, which is what makes experiments replayable.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"seed parts must be int or str, got {type(part)}")
        if isinstance(part, int):
            h.update(b"i")
            h.update((part & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
        else:
            raw = part.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class FederationConfig:
    """Server-side hyperparameters and the client weighting."""

    num_clients: int
    rounds: int
    strategy: str
    client_weights: tuple[float, ...]
    master_seed: int
    warmup_steps: int = 0

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        if len(self.client_weights) != self.num_clients:
            raise ValueError(
                f"{len(self.client_weights)} weights for {self.num_clients} clients"
            )
        if any(w < 0 for w in self.client_weights):
            raise ValueError("client weights must be non-negative")
        if abs(sum(self.client_weights) - 1.0) > 1e-9:
            raise ValueError(
                f"client weights sum to {sum(self.client_weights)}, expected 1"
            )
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")


@dataclass(frozen=True)
class RoundRecord:
    """Metrics for one communication round."""

    round_index: int
    global_test_accuracy: float
    global_test_loss: float
    per_client_pre_agg_accuracy: tuple[float, ...]
    per_client_update_norm: tuple[float, ...]
    wall_time_seconds: float

    def __post_init__(self) -> None:
        for a in (self.global_test_accuracy, *self.per_client_pre_agg_accuracy):
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy out of range: {a}")
        if any(u < 0 for u in self.per_client_update_norm):
            raise ValueError("update norms must be non-negative")


@dataclass(frozen=True)
class ClientState:
    """A client's id and its (already transformed) local dataset."""

    client_id: int
    data: Dataset


def data_proportional_weights(clients: Sequence[ClientState]) -> tuple[float, ...]:
    sizes = np.array([c.data.n for c in clients], dtype=np.float64)
    return tuple(sizes / sizes.sum())


def warmup_pretrain(
    spec: MlpSpec,
    proxy_data: Dataset,
    steps: int,
    seed: int,
    eta: float = 0.1,
    batch_size: int = 64,
) -> ParamVector:
    """Shared initialization: ``steps`` of SGD on held-out proxy data.

    ``steps == 0`` returns the raw random initialization (the cold-start
    ablation); otherwise the anchor plays the role of a pre-trained model.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    start = init_params(spec, seed)
    if steps == 0:
        return start
    cfg = LocalConfig(eta=eta, tau=steps, batch_size=batch_size)
    return sgd_local_train(start, spec, proxy_data, cfg, derive_seed(seed, "warmup"))


def train_client(
    strategy: str,
    anchor: ParamVector,
    spec: MlpSpec,
    data: Dataset,
    local_cfg: LocalConfig,
    seed: int,
) -> tuple[ParamVector, LocalTrace | None]:
    if strategy == "fedavg":
        return sgd_local_train(anchor, spec, data, local_cfg, seed), None
    if strategy == "fedprox":
        return fedprox_local_train(anchor, spec, data, local_cfg, seed), None
    if strategy == "lss":
        return lss_local_train(anchor, spec, data, local_cfg, seed)
    raise ValueError(f"unknown strategy {strategy!r}")


def _worker_count() -> int:
    raw = os.environ.get("LSS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_round(
    global_model: ParamVector,
    clients: Sequence[ClientState],
    spec: MlpSpec,
    local_cfg: LocalConfig,
    fed_cfg: FederationConfig,
    round_index: int,
    round_seed: int,
    eval_data: Dataset,
) -> tuple[ParamVector, RoundRecord, list[ParamVector]]:
    """One communication round; returns the new global model, its metrics,
    and the per-client uploads (in client-id order)."""
    t0 = time.perf_counter()
    ordered = sorted(clients, key=lambda c: c.client_id)

    def _train(client: ClientState) -> ParamVector:
        seed = derive_seed(round_seed, client.client_id)
        try:
            final, _ = train_client(
                fed_cfg.strategy, global_model, spec, client.data, local_cfg, seed
            )
        except Exception as exc:
            raise RuntimeError(
                f"client {client.client_id} failed during round {round_index}"
            ) from exc
        return final

    workers = _worker_count()
    if workers == 1 or len(ordered) == 1:
        finals = [_train(c) for c in ordered]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(_train, ordered))

    new_global = weighted_average(finals, fed_cfg.client_weights)
    eval_batch = eval_data.as_batch()
    global_acc = accuracy(new_global, spec, eval_batch)
    global_loss, _ = loss_and_grad(new_global, spec, eval_batch)
    client_accs = tuple(accuracy(f, spec, eval_batch) for f in finals)
    norms = tuple(l2_distance(f, global_model) for f in finals)
    record = RoundRecord(
        round_index=round_index,
        global_test_accuracy=global_acc,
        global_test_loss=global_loss,
        per_client_pre_agg_accuracy=client_accs,
        per_client_update_norm=norms,
        wall_time_seconds=time.perf_counter() - t0,
    )
    return new_global, record, finals


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_rounds_csv(records: Sequence[RoundRecord], path, deterministic_timing: bool = True) -> None:
    """Write the per-round metrics CSV.

    The wall_time_s column is written as 0 by default so the file is a
    bit-reproducible artifact of the run; measured timings are reported in
    the diagnostics output instead.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            wall = 0.0 if deterministic_timing else r.wall_time_seconds
            fh.write(
                ",".join(
                    [
                        str(r.round_index),
                        _fmt(r.global_test_accuracy),
                        _fmt(r.global_test_loss),
                        ";".join(_fmt(a) for a in r.per_client_pre_agg_accuracy),
                        ";".join(_fmt(u) for u in r.per_client_update_norm),
                        _fmt(wall),
                    ]
                )
                + "\n"
            )
