"""The five training regimes over an experience stream.

SEL and JEL are the from-scratch baselines (current experience only /
everything so far). SFT fine-tunes the previous snapshot on new data only.
EWC adds a quadratic penalty anchored at the previous snapshot, weighted by
the diagonal Fisher information of the previous experience. ER rehearses a
bounded buffer holding an equal share of every observed experience.
The optimizer is rebuilt at every experience boundary, so no optimizer
state leaks across experiences.
"""

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from contaudit.errors import InputError
from contaudit.nn import TrainConfig, build_autoencoder, load_model, save_model, train
from contaudit.nn.model import Autoencoder, Gradients
from contaudit.scenario import Experience, ExperienceStream
from contaudit.seeding import derived_rng, derived_seed

log = logging.getLogger(__name__)

STRATEGIES = ("SEL", "JEL", "SFT", "EWC", "ER")

# seed derivation tags
_INIT_TAG = 1
_EPOCHS_TAG = 2
_BUFFER_TAG = 3
_FISHER_TAG = 4

DEFAULT_EWC_LAMBDA = 50.0
DEFAULT_BUFFER_CAPACITY = 500


@dataclass
class StrategyConfig:
    strategy: str
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    ewc_lambda: float = DEFAULT_EWC_LAMBDA
    buffer_capacity: int = DEFAULT_BUFFER_CAPACITY
    hidden_widths: tuple[int, ...] | None = None  # None -> audit architecture

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.ewc_lambda < 0.0:
            raise InputError("ewc_lambda must be >= 0")
        if self.buffer_capacity < 1:
            raise InputError("buffer_capacity must be >= 1")


@dataclass
class RunResult:
    strategy: str
    seed: int
    snapshots: list[Autoencoder]  # one per experience, in order
    histories: list[list[float]]
    config: StrategyConfig


class ReplayBuffer:
    """Capacity-bound sample memory with equal per-experience quotas.

    After observing M experiences each slot holds floor(capacity / M) rows;
    growing M truncates older slots by uniform subsampling.
    """

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise InputError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.slots: dict[int, np.ndarray] = {}
        self._rng = derived_rng(seed, _BUFFER_TAG)

    def total(self) -> int:
        return sum(len(rows) for rows in self.slots.values())

    def update(self, experience_index: int, rows: np.ndarray, experiences_seen: int) -> None:
        if experiences_seen < 1:
            raise InputError("experiences_seen must be >= 1")
        quota = self.capacity // experiences_seen
        for key in sorted(self.slots):
            slot = self.slots[key]
            if len(slot) > quota:
                keep = self._rng.permutation(len(slot))[:quota]
                self.slots[key] = slot[np.sort(keep)]
        if len(rows) <= quota:
            if len(rows) < quota:
                log.warning(
                    "experience %d has %d rows < quota %d; storing all of them",
                    experience_index, len(rows), quota,
                )
            self.slots[experience_index] = np.array(rows, copy=True)
        else:
            chosen = self._rng.permutation(len(rows))[:quota]
            self.slots[experience_index] = rows[np.sort(chosen)].copy()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray | None:
        if not self.slots:
            return None
        flat = np.vstack([self.slots[key] for key in sorted(self.slots)])
        k = min(size, len(flat))
        idx = rng.choice(len(flat), size=k, replace=False)
        return flat[idx]


@dataclass
class EwcState:
    """Anchor parameters and diagonal Fisher for the quadratic penalty."""

    anchor: list[tuple[np.ndarray, np.ndarray]]  # (weights, bias) per layer
    fisher: Gradients
    lam: float


def compute_fisher(
    model: Autoencoder, data: np.ndarray, n_samples: int | None = None, seed: int = 0
) -> Gradients:
    """Diagonal empirical Fisher: mean squared per-row loss gradient.

    Rows are subsampled (uniform, without replacement, deterministic per
    seed) down to n_samples, default min(1024, len(data)).
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise InputError("cannot compute Fisher information from empty data")
    if n_samples is None:
        n_samples = min(1024, data.shape[0])
    n_samples = min(n_samples, data.shape[0])
    rng = derived_rng(seed, _FISHER_TAG)
    idx = rng.permutation(data.shape[0])[:n_samples]
    fisher = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers]
    for i in idx:
        row = data[i : i + 1]
        _, cache = model.forward(row)
        grads = model.backward(cache, row)
        for (fw, fb), (gw, gb) in zip(fisher, grads):
            fw += np.square(gw)
            fb += np.square(gb)
    for fw, fb in fisher:
        fw /= n_samples
        fb /= n_samples
    return fisher


def ewc_penalty(model: Autoencoder, state: EwcState) -> tuple[float, Gradients]:
    """Penalty sum(lam/2 * F * (theta - anchor)^2) and its gradient lam*F*(theta - anchor)."""
    value = 0.0
    grads: Gradients = []
    for layer, (aw, ab), (fw, fb) in zip(model.layers, state.anchor, state.fisher):
        dw = layer.weights - aw
        db = layer.bias - ab
        value += 0.5 * state.lam * float(np.sum(fw * dw * dw) + np.sum(fb * db * db))
        grads.append((state.lam * fw * dw, state.lam * fb * db))
    return value, grads


class StrategyExecutor:
    """Trains one experience at a time, so runs can checkpoint and resume."""

    def __init__(self, stream: ExperienceStream, config: StrategyConfig):
        self.stream = stream
        self.config = config
        self.model: Autoencoder | None = None
        self.ewc_state: EwcState | None = None
        self.buffer = (
            ReplayBuffer(config.buffer_capacity, seed=config.seed)
            if config.strategy == "ER"
            else None
        )

    def _fresh_model(self, experience_index: int) -> Autoencoder:
        kwargs = {}
        if self.config.hidden_widths is not None:
            kwargs["hidden_widths"] = tuple(self.config.hidden_widths)
        return build_autoencoder(
            self.stream.d,
            seed=derived_seed(self.config.seed, _INIT_TAG, experience_index),
            **kwargs,
        )

    def _train_config(self, experience_index: int) -> TrainConfig:
        cfg = replace(self.config.train)
        cfg.seed = derived_seed(self.config.seed, _EPOCHS_TAG, experience_index)
        return cfg

    def train_experience(self, exp: Experience) -> tuple[Autoencoder, list[float]]:
        strategy = self.config.strategy
        if strategy in ("SEL", "JEL") or self.model is None:
            self.model = self._fresh_model(exp.index)
        if strategy == "JEL":
            data = np.vstack([e.rows for e in self.stream.experiences[: exp.index]])
        else:
            data = exp.rows
        penalty = None
        if strategy == "EWC" and self.ewc_state is not None and self.config.ewc_lambda > 0.0:
            state = self.ewc_state
            penalty = lambda m: ewc_penalty(m, state)  # noqa: E731
        extra = None
        if strategy == "ER" and self.buffer.total() > 0:
            extra = lambda rng, size: self.buffer.sample(rng, size)  # noqa: E731
        started = time.perf_counter()
        history = train(
            self.model, data, self._train_config(exp.index), penalty=penalty, extra_batches=extra
        )
        log.info(
            "%s seed=%d experience %d: %d rows, %d epochs, %.1fs",
            strategy, self.config.seed, exp.index, len(data), len(history),
            time.perf_counter() - started,
        )
        snapshot = self.model.copy()
        self.absorb(exp, snapshot)
        return snapshot, history

    def absorb(self, exp: Experience, snapshot: Autoencoder) -> None:
        """Advance post-experience state from a snapshot (also the resume path)."""
        strategy = self.config.strategy
        if strategy in ("SFT", "EWC", "ER"):
            self.model = snapshot.copy()
        if strategy == "EWC":
            fisher = compute_fisher(
                snapshot, exp.rows,
                seed=derived_seed(self.config.seed, _FISHER_TAG, exp.index),
            )
            anchor = [(l.weights.copy(), l.bias.copy()) for l in snapshot.layers]
            self.ewc_state = EwcState(anchor=anchor, fisher=fisher, lam=self.config.ewc_lambda)
        elif strategy == "ER":
            self.buffer.update(exp.index, exp.rows, experiences_seen=exp.index)


def run_strategy(stream: ExperienceStream, config: StrategyConfig) -> RunResult:
    """Train every experience in order; returns one snapshot per experience."""
    executor = StrategyExecutor(stream, config)
    snapshots, histories = [], []
    for exp in stream.experiences:
        snapshot, history = executor.train_experience(exp)
        snapshots.append(snapshot)
        histories.append(history)
    return RunResult(config.strategy, config.seed, snapshots, histories, config)


def run_sel(stream: ExperienceStream, config: StrategyConfig) -> RunResult:
    return run_strategy(stream, replace(config, strategy="SEL"))


def run_jel(stream: ExperienceStream, config: StrategyConfig) -> RunResult:
    return run_strategy(stream, replace(config, strategy="JEL"))


def run_sft(stream: ExperienceStream, config: StrategyConfig) -> RunResult:
    return run_strategy(stream, replace(config, strategy="SFT"))


def run_ewc(stream: ExperienceStream, config: StrategyConfig, ewc_lambda: float | None = None) -> RunResult:
    if ewc_lambda is not None:
        config = replace(config, ewc_lambda=ewc_lambda)
    return run_strategy(stream, replace(config, strategy="EWC"))


def run_er(stream: ExperienceStream, config: StrategyConfig, buffer_capacity: int | None = None) -> RunResult:
    if buffer_capacity is not None:
        config = replace(config, buffer_capacity=buffer_capacity)
    return run_strategy(stream, replace(config, strategy="ER"))


def _write_manifest(out_dir: Path, result_like: dict) -> None:
    (out_dir / "manifest.json").write_text(json.dumps(result_like, sort_keys=True, indent=1))


def _config_json(config: StrategyConfig) -> dict:
    return {
        "train": config.train.__dict__,
        "ewc_lambda": config.ewc_lambda,
        "buffer_capacity": config.buffer_capacity,
        "hidden_widths": list(config.hidden_widths) if config.hidden_widths else None,
    }


def run_strategy_persistent(
    stream: ExperienceStream,
    config: StrategyConfig,
    out_dir: str | Path,
    config_hash: str = "",
) -> RunResult:
    """Like run_strategy, but checkpoints after every experience.

    If out_dir already holds a partial run with the same strategy and seed,
    training resumes at the first missing experience; a completed run is
    returned as-is.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    executor = StrategyExecutor(stream, config)
    snapshots: list[Autoencoder] = []
    histories: list[list[float]] = []

    manifest_path = out_dir / "manifest.json"
    done = 0
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("strategy") != config.strategy or manifest.get("seed") != config.seed:
            raise InputError(
                f"run directory {out_dir} belongs to "
                f"{manifest.get('strategy')}/seed={manifest.get('seed')}"
            )
        done = manifest.get("experiences_done", 0)
        histories = manifest.get("histories", [])[:done]
        for exp in stream.experiences[:done]:
            snapshot, _ = load_model(out_dir / f"snapshot_{exp.index:03d}.npz")
            snapshots.append(snapshot)
            executor.absorb(exp, snapshot)
        if manifest.get("status") == "complete" and done == stream.m:
            return RunResult(config.strategy, config.seed, snapshots, histories, config)
        log.info("resuming %s seed=%d at experience %d", config.strategy, config.seed, done + 1)

    for exp in stream.experiences[done:]:
        snapshot, history = executor.train_experience(exp)
        snapshots.append(snapshot)
        histories.append(history)
        save_model(
            snapshot,
            out_dir / f"snapshot_{exp.index:03d}.npz",
            meta={
                "strategy": config.strategy,
                "seed": config.seed,
                "experience": exp.index,
                "config_hash": config_hash,
            },
        )
        _write_manifest(
            out_dir,
            {
                "strategy": config.strategy,
                "seed": config.seed,
                "status": "complete" if exp.index == stream.m else "incomplete",
                "experiences_done": exp.index,
                "histories": histories,
                "config": _config_json(config),
                "config_hash": config_hash,
            },
        )
    return RunResult(config.strategy, config.seed, snapshots, histories, config)


def load_run(in_dir: str | Path) -> RunResult:
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"not a run directory (no manifest.json): {in_dir}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("status") != "complete":
        raise InputError(f"run {in_dir} is incomplete; re-run it first")
    snapshots = []
    for i in range(1, manifest["experiences_done"] + 1):
        model, _ = load_model(in_dir / f"snapshot_{i:03d}.npz")
        snapshots.append(model)
    cfg = manifest["config"]
    config = StrategyConfig(
        strategy=manifest["strategy"],
        seed=manifest["seed"],
        train=TrainConfig(**cfg["train"]),
        ewc_lambda=cfg["ewc_lambda"],
        buffer_capacity=cfg["buffer_capacity"],
        hidden_widths=tuple(cfg["hidden_widths"]) if cfg["hidden_widths"] else None,
    )
    return RunResult(
        manifest["strategy"], manifest["seed"], snapshots, manifest["histories"], config
    )
