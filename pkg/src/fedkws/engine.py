"""Federated round loop: client sampling, local procedures, aggregation, evaluation."""

from __future__ import annotations

import base64
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .alt import ClientUtility, allocate_steps, utilities_from_stats
from .data import ClientDataset, FederationData, client_stats
from .errors import AggregationError, ConfigError, NumericalError
from .losses import LossConfig, combined_loss, prox_term
from .metrics import KwsClassMap, default_class_map, evaluate
from .training import ce_grad, train_steps

STRATEGIES = ("fedavg", "fedprox", "fedopt", "fedkws_ui", "alt_only", "alo_only")
ALT_STRATEGIES = ("fedkws_ui", "alt_only")
ALO_STRATEGIES = ("fedkws_ui", "alo_only")

# spawn-key tags keeping independent random streams apart
_INIT_STREAM = 0
_SAMPLE_STREAM = 1
_CLIENT_STREAM = 2


@dataclass(frozen=True)
class FedConfig:
    strategy: str = "fedavg"
    rounds: int = 300
    local_steps: int = 50
    batch_size: int = 32
    sample_fraction: float = 0.05
    client_lr: float = 0.1
    momentum: float = 0.9
    mu: float = 0.2
    lam: float = 0.001
    prox_mu: float = 0.001
    server_opt: str = "sgd"
    server_lr: float = 1.0
    private_steps_factor: float = 1.0
    r0_override: float | None = None
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    eval_interval: int = 3
    negative_classes: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.rounds < 1 or self.local_steps < 1 or self.batch_size < 1:
            raise ConfigError("rounds, local_steps and batch_size must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError("sample_fraction must be in (0, 1]")
        if self.client_lr < 0 or self.server_lr < 0:
            raise ConfigError("learning rates must be nonnegative")
        if self.server_opt not in ("sgd", "adam"):
            raise ConfigError("server_opt must be 'sgd' or 'adam'")
        if self.private_steps_factor <= 0:
            raise ConfigError("private_steps_factor must be positive")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.negative_classes is not None:
            object.__setattr__(self, "negative_classes", tuple(int(c) for c in self.negative_classes))
        # validates mu / lam / prox_mu ranges
        self.loss_config(2)

    def loss_config(self, num_classes: int) -> LossConfig:
        return LossConfig(num_classes, self.mu, self.lam, self.prox_mu)

    @property
    def uses_alt(self) -> bool:
        return self.strategy in ALT_STRATEGIES

    @property
    def uses_alo(self) -> bool:
        return self.strategy in ALO_STRATEGIES

    def client_weight(self, num_clients: int) -> float:
        # objective weight p_k; aggregation is uniform over the sampled set
        return 1.0 / num_clients

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        if self.negative_classes is not None:
            d["negative_classes"] = list(self.negative_classes)
        return d

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass(eq=False)
class ClientState:
    private_model: nn.ModelParams | None = None
    private_opt: nn.OptimizerState | None = None
    selection_count: int = 0


@dataclass(frozen=True, eq=False)
class ServerState:
    global_model: nn.ModelParams
    round: int = 0
    server_opt_state: dict | None = None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    accuracy: float
    fa: float
    fr: float
    elapsed_ms: float | None = None


@dataclass(eq=False)
class FederationResult:
    records: list[RoundRecord]
    final_model: nn.ModelParams
    server: ServerState
    config: FedConfig
    r0: float | None = None
    allocation: list[ClientUtility] | None = None
    # simulation-side bookkeeping; never visible to the server
    client_states: dict[int, ClientState] = field(default_factory=dict)
    selections: list[list[int]] = field(default_factory=list)


# --- randomness -------------------------------------------------------------

def init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_INIT_STREAM,)))


def sampling_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SAMPLE_STREAM,)))


def client_rngs(seed: int, round_idx: int, client_id: int):
    """(global-phase, private-phase) generators for one client in one round."""
    ss = np.random.SeedSequence(seed, spawn_key=(_CLIENT_STREAM, round_idx, client_id))
    g, p = ss.spawn(2)
    return np.random.default_rng(g), np.random.default_rng(p)


# --- operations ---------------------------------------------------------------

def sample_clients(num_clients: int, sample_fraction: float,
                   rng: np.random.Generator) -> np.ndarray:
    size = max(1, int(round(sample_fraction * num_clients)))
    size = min(size, num_clients)
    if size == num_clients:
        return np.arange(num_clients)
    return np.sort(rng.choice(num_clients, size=size, replace=False))


def _client_opt(cfg: FedConfig) -> nn.OptimizerState:
    return nn.OptimizerState(cfg.client_lr, cfg.momentum)


def local_update_fedavg(global_model: nn.ModelParams, data: ClientDataset, steps: int,
                        cfg: FedConfig, rng: np.random.Generator) -> nn.ModelParams:
    model, _ = train_steps(global_model, data, steps, ce_grad, _client_opt(cfg),
                           cfg.batch_size, rng)
    return model


def local_update_fedprox(global_model: nn.ModelParams, data: ClientDataset, steps: int,
                         cfg: FedConfig, rng: np.random.Generator) -> nn.ModelParams:
    anchor = global_model

    def grad_fn(model, x, y):
        g = ce_grad(model, x, y)
        if cfg.prox_mu == 0.0:
            return g
        return g + prox_term(model, anchor, cfg.prox_mu)[1]

    model, _ = train_steps(global_model, data, steps, grad_fn, _client_opt(cfg),
                           cfg.batch_size, rng)
    return model


def local_update_alo(global_model: nn.ModelParams, data: ClientDataset, steps: int,
                     state: ClientState, cfg: FedConfig, rng: np.random.Generator,
                     private_rng: np.random.Generator | None = None):
    """Train the private model on plain cross-entropy, then train a copy of the
    global model on label smoothing plus negative distillation against it.

    Returns ``(updated_global_copy, new_client_state)``; ``state`` is not mutated.
    """
    if steps <= 0:
        return global_model, state
    if private_rng is None:
        private_rng = rng.spawn(1)[0]
    private = state.private_model if state.private_model is not None else global_model
    popt = state.private_opt if state.private_opt is not None else _client_opt(cfg)
    private_steps = int(np.rint(cfg.private_steps_factor * steps))
    private, popt = train_steps(private, data, private_steps, ce_grad, popt,
                                cfg.batch_size, private_rng)

    loss_cfg = cfg.loss_config(global_model.spec.widths[-1])

    def grad_fn(model, x, y):
        q = nn.forward(private, x)
        return nn.loss_and_grad(model, x, lambda p: combined_loss(p, q, y, loss_cfg))[1]

    model, _ = train_steps(global_model, data, steps, grad_fn, _client_opt(cfg),
                           cfg.batch_size, rng)
    return model, ClientState(private, popt, state.selection_count + 1)


def aggregate(models: Sequence[nn.ModelParams]) -> nn.ModelParams:
    """Unweighted elementwise mean of the uploaded models."""
    if len(models) == 0:
        raise AggregationError("cannot aggregate an empty set of models")
    spec = models[0].spec
    if any(m.spec != spec for m in models):
        raise AggregationError("uploaded models have mismatched layer specs")
    n = spec.num_layers

    def mean(arrays):
        # shifting by the first upload keeps identical inputs bit-exact
        ref = arrays[0]
        return ref + np.mean(np.stack([a - ref for a in arrays]), axis=0)

    weights = tuple(mean([m.weights[i] for m in models]) for i in range(n))
    biases = tuple(mean([m.biases[i] for m in models]) for i in range(n))
    return nn.ModelParams(spec, weights, biases)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def server_step_fedopt(server: ServerState, aggregated_mean: nn.ModelParams,
                       cfg: FedConfig) -> ServerState:
    """Apply the server optimizer to the pseudo-gradient ``psi_t - mean``."""
    psi = server.global_model
    delta = psi - aggregated_mean
    if cfg.server_opt == "sgd":
        new = psi - delta * cfg.server_lr
        return ServerState(new, server.round + 1, server.server_opt_state)
    st = server.server_opt_state or {}
    m = st["m"] if "m" in st else nn.zeros_like(psi)
    v = st["v"] if "v" in st else nn.zeros_like(psi)
    t = st.get("t", 0) + 1
    m = m.zip_map(delta, lambda a, g: ADAM_BETA1 * a + (1 - ADAM_BETA1) * g)
    v = v.zip_map(delta, lambda a, g: ADAM_BETA2 * a + (1 - ADAM_BETA2) * g * g)
    c1 = 1 - ADAM_BETA1**t
    c2 = 1 - ADAM_BETA2**t
    step = m.zip_map(v, lambda a, b: (a / c1) / (np.sqrt(b / c2) + ADAM_EPS))
    new = psi - step * cfg.server_lr
    return ServerState(new, server.round + 1, {"m": m, "v": v, "t": t})


def _eval_rounds(T: int, interval: int) -> set[int]:
    rounds = set(range(0, T + 1, interval))
    rounds.add(T)
    return rounds


def run_federation(data: FederationData, cfg: FedConfig,
                   utilities: Sequence[ClientUtility] | Sequence[float] | None = None,
                   threads: int = 1, initial_model: nn.ModelParams | None = None,
                   record_timing: bool = False,
                   on_round: Callable[[RoundRecord], None] | None = None) -> FederationResult:
    """Run ``cfg.rounds`` communication rounds and evaluate on the global test set.

    Evaluation happens before training (round 0), every ``eval_interval``
    rounds, and after the final round. ``utilities`` may be precomputed ALT
    records or raw ``r_bar`` values; by default they come from the data.
    """
    K = data.num_clients
    C = data.num_classes
    if cfg.sample_fraction * K < 1:
        raise ConfigError(f"sample_fraction * K = {cfg.sample_fraction * K:.3f} < 1")
    spec = nn.mlp_spec(data.dim, C, cfg.hidden, cfg.activation)
    model = initial_model if initial_model is not None else nn.init_model(spec, init_rng(cfg.seed))
    if model.spec != spec:
        raise ConfigError(f"initial model spec {model.spec} does not match data/config {spec}")
    class_map = (KwsClassMap.from_negatives(C, cfg.negative_classes)
                 if cfg.negative_classes is not None else default_class_map(C))

    steps = np.full(K, cfg.local_steps, dtype=np.int64)
    allocation, r0 = None, None
    if cfg.uses_alt:
        if utilities is None:
            allocation, r0 = utilities_from_stats(client_stats(data), cfg.local_steps,
                                                  cfg.r0_override)
            steps = np.array([u.steps for u in allocation], dtype=np.int64)
        elif len(utilities) and isinstance(utilities[0], ClientUtility):
            allocation = list(utilities)
            r_bar = [u.r_bar for u in allocation]
            steps, r0 = allocate_steps(r_bar, cfg.local_steps, cfg.r0_override)
        else:
            steps, r0 = allocate_steps(utilities, cfg.local_steps, cfg.r0_override)
        if len(steps) != K:
            raise ConfigError("utilities length does not match number of clients")

    server = ServerState(model, 0, None)
    states: dict[int, ClientState] = {}
    srng = sampling_rng(cfg.seed)
    eval_at = _eval_rounds(cfg.rounds, cfg.eval_interval)
    records: list[RoundRecord] = []
    selections: list[list[int]] = []
    t_start = time.perf_counter()

    def record(t):
        acc, fa, fr = evaluate(server.global_model, data.global_test, class_map)
        elapsed = (time.perf_counter() - t_start) * 1000.0 if record_timing else None
        rec = RoundRecord(t, acc, fa, fr, elapsed)
        records.append(rec)
        if on_round is not None:
            on_round(rec)

    if 0 in eval_at:
        record(0)

    def work(t, k):
        g_rng, p_rng = client_rngs(cfg.seed, t, k)
        ds = data.clients[k]
        try:
            if cfg.uses_alo:
                st = states.get(k, ClientState())
                return local_update_alo(server.global_model, ds, int(steps[k]), st, cfg,
                                        g_rng, p_rng)
            if cfg.strategy == "fedprox":
                return local_update_fedprox(server.global_model, ds, int(steps[k]), cfg, g_rng), None
            return local_update_fedavg(server.global_model, ds, int(steps[k]), cfg, g_rng), None
        except NumericalError as exc:
            raise NumericalError(f"round {t}: {exc}", layer=exc.layer, client=k) from exc

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            selected = [int(k) for k in sample_clients(K, cfg.sample_fraction, srng)]
            selections.append(selected)
            if pool is not None:
                outputs = list(pool.map(lambda k: work(t, k), selected))
            else:
                outputs = [work(t, k) for k in selected]
            uploads = []
            for k, (local_model, new_state) in zip(selected, outputs):
                uploads.append(local_model)
                if new_state is not None:
                    states[k] = new_state
            mean = aggregate(uploads)
            if cfg.strategy == "fedopt":
                server = server_step_fedopt(server, mean, cfg)
            else:
                server = ServerState(mean, t, None)
            if t in eval_at:
                record(t)
    finally:
        if pool is not None:
            pool.shutdown()

    return FederationResult(records, server.global_model, server, cfg, r0, allocation,
                            states, selections)


# --- serialization ----------------------------------------------------------

def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).astype(np.float64)


def model_to_dict(model: nn.ModelParams) -> dict:
    return {
        "format": "fedkws-model",
        "version": 1,
        "layer_spec": {"widths": list(model.spec.widths), "activation": model.spec.activation},
        "encoding": "base64-float64-le",
        "layers": [
            {"weight": _encode(w), "bias": _encode(b)} for w, b in model.layers
        ],
    }


def model_from_dict(d: dict) -> nn.ModelParams:
    if d.get("format") != "fedkws-model" or d.get("version") != 1:
        raise ConfigError("not a fedkws model manifest (format/version)")
    spec = nn.LayerSpec(tuple(d["layer_spec"]["widths"]), d["layer_spec"]["activation"])
    if len(d["layers"]) != spec.num_layers:
        raise ConfigError("layer count in manifest does not match layer spec")
    weights, biases = [], []
    for (o, i), layer in zip(spec.shapes, d["layers"]):
        weights.append(_decode(layer["weight"], (o, i)))
        biases.append(_decode(layer["bias"], (o,)))
    return nn.ModelParams(spec, tuple(weights), tuple(biases))


def save_model(model: nn.ModelParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path: str | Path) -> nn.ModelParams:
    return model_from_dict(json.loads(Path(path).read_text()))


ROUND_COLUMNS = ("round", "accuracy", "fa", "fr", "elapsed_ms")


def write_rounds_csv(records: Sequence[RoundRecord], path: str | Path) -> None:
    lines = [",".join(ROUND_COLUMNS)]
    for r in records:
        elapsed = "" if r.elapsed_ms is None else f"{r.elapsed_ms:.3f}"
        lines.append(f"{r.round},{r.accuracy!r},{r.fa!r},{r.fr!r},{elapsed}")
    Path(path).write_text("\n".join(lines) + "\n")


def with_overrides(cfg: FedConfig, **kw) -> FedConfig:
    return replace(cfg, **kw)
