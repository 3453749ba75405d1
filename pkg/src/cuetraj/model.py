"""Dual-encoder trajectory predictor and its architectural variants.

Variants
--------
``CMT-ST``  per-agent cross-modality encoder, then a social encoder over all
            agents' motion tokens (default).
``MLP-ST``  per-token MLP with a per-time-step mean pool instead of the
            cross-modality encoder.
``ST-CMT``  social encoder over each time-step's tokens of all agents first,
            then the per-agent cross-modality encoder.
``CMT``     cross-modality encoder only; the primary's query tokens are
            projected directly, so neighbours cannot influence the output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kvconfig
from .embedding import (
    EmbeddingParams, PackedAgents, embed_pool, gather_sequences, pack_agents,
)
from .errors import ConfigError, ContractError, ValidationError
from .nn import (
    EncoderLayerParams, MLPParams, Tensor, concat, encoder_forward, getitem,
    key_padding_bias, matmul, no_grad, reshape, take,
)
from .nn.checkpoint import load_tensors, save_tensors
from .scene import PRIMARY, Scene, PredictionY

VARIANTS = ("CMT-ST", "MLP-ST", "ST-CMT", "CMT")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    cmt_layers: int = 6
    cmt_heads: int = 4
    st_layers: int = 3
    st_heads: int = 4
    variant: str = "CMT-ST"
    keypoints: int = 17
    t_obs: int = 9
    horizon: int = 12
    ff_mult: int = 4
    identity: str = "binary"
    max_agents: int = 16
    output: str = "absolute"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.identity not in ("binary", "slot"):
            raise ConfigError(f"identity mode must be 'binary' or 'slot', got {self.identity!r}")
        if self.output not in ("absolute", "offset"):
            raise ConfigError(f"output mode must be 'absolute' or 'offset', got {self.output!r}")
        for name in ("d_model", "t_obs", "horizon", "keypoints", "ff_mult", "max_agents"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for layers, heads in (("cmt_layers", "cmt_heads"), ("st_layers", "st_heads")):
            if getattr(self, layers) < 1 or getattr(self, heads) < 1:
                raise ConfigError(f"{layers}/{heads} must be >= 1")
            if self.d_model % getattr(self, heads):
                raise ConfigError(f"{heads}={getattr(self, heads)} does not divide "
                                  f"d_model={self.d_model}")

    @property
    def t_total(self) -> int:
        return self.t_obs + self.horizon

    @property
    def identities(self) -> int:
        return 2 if self.identity == "binary" else self.max_agents

    def to_kv(self) -> dict[str, str]:
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "ModelConfig":
        return cls(**kvconfig.coerce(cls, values))


@dataclass
class ModelParams:
    embedding: EmbeddingParams
    cmt: list[EncoderLayerParams]
    st: list[EncoderLayerParams]
    head: MLPParams
    pool: MLPParams | None = None

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d = config.d_model
        embedding = EmbeddingParams.init(rng, d, config.t_total, config.horizon,
                                         config.keypoints, config.identities)
        uses_cmt = config.variant != "MLP-ST"
        uses_st = config.variant != "CMT"
        cmt = [EncoderLayerParams.init(rng, d, config.ff_mult)
               for _ in range(config.cmt_layers if uses_cmt else 0)]
        st = [EncoderLayerParams.init(rng, d, config.ff_mult)
              for _ in range(config.st_layers if uses_st else 0)]
        head = MLPParams.init(rng, d, d, 2)
        pool = MLPParams.init(rng, d, d, d) if config.variant == "MLP-ST" else None
        return cls(embedding, cmt, st, head, pool)

    def named(self) -> dict[str, Tensor]:
        out = self.embedding.named("embed")
        for i, layer in enumerate(self.cmt):
            out.update(layer.named(f"cmt.{i}"))
        for i, layer in enumerate(self.st):
            out.update(layer.named(f"st.{i}"))
        out.update(self.head.named("head"))
        if self.pool is not None:
            out.update(self.pool.named("pool"))
        return out

    def groups(self) -> dict[str, list[str]]:
        """Parameter names grouped as embeddings / queries / cmt / st / head / pool."""
        out: dict[str, list[str]] = {}
        for name in self.named():
            if name == "embed.queries":
                key = "queries"
            else:
                key = name.split(".")[0]
                key = {"embed": "embeddings"}.get(key, key)
            out.setdefault(key, []).append(name)
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, Tensor]) -> "ModelParams":
        def count(prefix):
            return len({n.split(".")[1] for n in tensors if n.startswith(prefix + ".")})
        cmt = [EncoderLayerParams.from_named(tensors, f"cmt.{i}") for i in range(count("cmt"))]
        st = [EncoderLayerParams.from_named(tensors, f"st.{i}") for i in range(count("st"))]
        pool = MLPParams.from_named(tensors, "pool") if "pool.w1" in tensors else None
        return cls(EmbeddingParams.from_named(tensors, "embed"), cmt, st,
                   MLPParams.from_named(tensors, "head"), pool)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named().items()}

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.arrays())

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls.from_named({k: Tensor(np.array(v), requires_grad=True, name=k)
                               for k, v in arrays.items()})


# ---------------------------------------------------------------------------
# checkpoint + config persistence
# ---------------------------------------------------------------------------

CONFIG_SUFFIX = ".cfg"


def config_path_for(checkpoint: str | Path) -> Path:
    return Path(str(checkpoint) + CONFIG_SUFFIX)


def save_model(path: str | Path, params: ModelParams, config: ModelConfig) -> None:
    save_tensors(path, params.arrays())
    kvconfig.dump(config_path_for(path), config.to_kv())


def load_model(path: str | Path) -> tuple[ModelParams, ModelConfig]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint not found: {path}")
    cfg_path = config_path_for(path)
    if not cfg_path.is_file():
        raise ValidationError(f"model configuration not found: {cfg_path}")
    config = ModelConfig.from_kv(kvconfig.load(cfg_path))
    return ModelParams.from_arrays(load_tensors(path)), config


# ---------------------------------------------------------------------------
# encoder stages
# ---------------------------------------------------------------------------

@dataclass
class AttentionCapture:
    """CMT attention of one primary agent: per-layer ``(heads, S, S)`` maps.

    ``kinds`` holds the cue kind code of each token (-1 for queries),
    ``times``/``elements`` the source time-step and element index.
    """

    layers: list[np.ndarray]
    kinds: np.ndarray
    times: np.ndarray
    elements: np.ndarray
    available: np.ndarray
    t_obs: int
    horizon: int
    keypoints: int


def cmt_forward(tokens: Tensor, params: ModelParams, config: ModelConfig,
                valid: np.ndarray | None = None, capture: bool = False):
    """Encode ``(A, S, D)`` agent sequences laid out as [traj; queries; cues].

    Returns the motion tokens ``(A, T_obs + horizon, D)``, the full encoded
    sequences and the per-layer attention weights.
    """
    if tokens.shape[-2] == 0:
        raise ContractError("empty CMT input sequence")
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = reshape(tokens, (1,) + tokens.shape)
        valid = None if valid is None else valid[None]
    bias = None if valid is None else key_padding_bias(valid)
    out, maps = encoder_forward(tokens, params.cmt, config.cmt_heads, bias, capture)
    motion = getitem(out, (slice(None), slice(0, config.t_total)))
    if squeeze:
        motion, out = reshape(motion, motion.shape[1:]), reshape(out, out.shape[1:])
        maps = [m[0] for m in maps]
    return motion, out, maps


def st_forward(motion: Tensor, params: ModelParams, config: ModelConfig,
               valid: np.ndarray | None = None) -> Tensor:
    """Encode ``(B, N*T_total, D)`` flattened agent motion tokens.

    The primary's block is the first ``T_total`` positions; its social tensor
    ``(B, T_total, D)`` is returned.  Unbatched ``(N*T_total, D)`` input gives
    ``(T_total, D)``.
    """
    squeeze = motion.ndim == 2
    if squeeze:
        motion = reshape(motion, (1,) + motion.shape)
        valid = None if valid is None else valid[None]
    bias = None if valid is None else key_padding_bias(valid)
    out, _ = encoder_forward(motion, params.st, config.st_heads, bias)
    social = getitem(out, (slice(None), slice(0, config.t_total)))
    return reshape(social, social.shape[1:]) if squeeze else social


def project(query_part: Tensor, params: ModelParams) -> Tensor:
    """Per-token MLP ``D -> 2`` on the primary's query tokens."""
    return params.head(query_part)


# ---------------------------------------------------------------------------
# batched forward
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    plan: PackedAgents
    n_scenes: int
    scene_agents: np.ndarray  # (B, N_max) agent row or -1
    anchors: np.ndarray       # (B, 2) last available primary position


def _last_position(scene: Scene) -> np.ndarray:
    traj = scene.primary.trajectory
    avail = np.nonzero(traj.mask[:, 0])[0]
    return traj.values[avail[-1], 0].copy() if len(avail) else np.zeros(2)


def build_batch(scenes: list[Scene], config: ModelConfig,
                slot_ids: list[list[int]] | None = None) -> Batch:
    groups = []
    for scene in scenes:
        if scene.t_obs != config.t_obs or scene.t_pred != config.horizon:
            raise ContractError(
                f"scene {scene.id} has t_obs={scene.t_obs}, t_pred={scene.t_pred}; "
                f"model expects {config.t_obs}/{config.horizon}")
        if scene.primary.role != PRIMARY:
            raise ContractError(f"scene {scene.id}: first agent is not the primary")
        agents = list(scene.agents[:1]) if config.variant == "CMT" else list(scene.agents)
        groups.append(agents)
    if config.identity == "slot":
        if slot_ids is None:
            slot_ids = [list(range(len(g))) for g in groups]
        slot_ids = [list(s[:len(g)]) for g, s in zip(groups, slot_ids)]
    else:
        slot_ids = None
    plan = pack_agents(groups, config.t_obs, config.horizon, config.keypoints,
                       config.identities, slot_ids)
    n_max = max(len(g) for g in groups)
    scene_agents = np.full((len(groups), n_max), -1, dtype=np.intp)
    a = 0
    for b, g in enumerate(groups):
        scene_agents[b, :len(g)] = np.arange(a, a + len(g))
        a += len(g)
    anchors = np.stack([_last_position(s) for s in scenes])
    return Batch(plan, len(scenes), scene_agents, anchors)


def _social_layout(batch: Batch, t_total: int) -> tuple[np.ndarray, np.ndarray]:
    """Index of each scene's flattened agent-time tokens into ``(A*T_total)`` rows."""
    b, n_max = batch.scene_agents.shape
    steps = np.arange(t_total)
    rows = batch.scene_agents[:, :, None] * t_total + steps[None, None, :]
    valid = np.broadcast_to(batch.scene_agents[:, :, None] >= 0, rows.shape)
    pad = batch.plan.n_agents * t_total
    index = np.where(valid, rows, pad).reshape(b, n_max * t_total)
    return index, valid.reshape(b, n_max * t_total)


def _flat_rows(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0] * x.shape[1], x.shape[2]))


def _pad_take(x2d: Tensor, index: np.ndarray) -> Tensor:
    d = x2d.shape[1]
    return take(concat([x2d, Tensor(np.zeros((1, d)))], axis=0), index, unique=True)


def _mlp_pool_matrix(plan: PackedAgents) -> np.ndarray:
    """(A, T_total, S) averaging weights: observed steps pool every token of that step."""
    a, s = plan.seq_index.shape
    t_total = plan.t_total
    times = np.where(plan.valid, plan.pool_time[np.minimum(plan.seq_index, plan.pool_size - 1)],
                     -1)
    pool = (times[:, None, :] == np.arange(t_total)[None, :, None]).astype(np.float64)
    pool[:, plan.t_obs:, :] = 0.0
    q = np.arange(plan.t_obs, t_total)
    pool[:, q, q] = 1.0
    return pool / pool.sum(axis=2, keepdims=True)


def _social_groups(plan: PackedAgents, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Group pool rows by (scene, time-step) for the social-first variant."""
    t_total = plan.t_total
    scene_of_row = plan.agent_scene[plan.pool_agent]
    key = scene_of_row * t_total + plan.pool_time
    order = np.argsort(key, kind="stable")
    counts = np.bincount(key, minlength=batch.n_scenes * t_total)
    g_max = int(counts.max())
    index = np.full((batch.n_scenes * t_total, g_max), plan.pool_size, dtype=np.intp)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = np.arange(len(order)) - starts[key[order]]
    index[key[order], pos] = order
    return index, index < plan.pool_size


def forward_batch(scenes: list[Scene], params: ModelParams, config: ModelConfig,
                  capture: bool = False, batch: Batch | None = None,
                  slot_ids: list[list[int]] | None = None):
    """Predict ``(B, horizon, 2)`` positions for a list of scenes.

    Returns the prediction tensor and, when ``capture`` is set, one
    :class:`AttentionCapture` per scene (``None`` for the MLP-ST variant).
    """
    if batch is None:
        batch = build_batch(scenes, config, slot_ids)
    plan = batch.plan
    t_total = config.t_total
    pool = embed_pool(plan, params.embedding)
    maps: list[np.ndarray] = []

    if config.variant == "MLP-ST":
        tokens = gather_sequences(pool, plan.seq_index)
        motion = matmul(Tensor(_mlp_pool_matrix(plan)), params.pool(tokens))
    elif config.variant == "ST-CMT":
        g_index, g_valid = _social_groups(plan, batch)
        social_in = _pad_take(pool, g_index)
        social_out, _ = encoder_forward(social_in, params.st, config.st_heads,
                                        key_padding_bias(g_valid))
        # back to pool order: pool row r sits at flat position where g_index == r
        where = np.empty(plan.pool_size, dtype=np.intp)
        flat = g_index.ravel()
        keep = flat < plan.pool_size
        where[flat[keep]] = np.nonzero(keep)[0]
        pool2 = take(_flat_rows(social_out), where, unique=True)
        tokens = gather_sequences(pool2, plan.seq_index)
        motion, _, maps = cmt_forward(tokens, params, config, plan.valid, capture)
    else:
        tokens = gather_sequences(pool, plan.seq_index)
        motion, _, maps = cmt_forward(tokens, params, config, plan.valid, capture)

    primary_rows = batch.scene_agents[:, 0]
    if config.variant == "CMT":
        social = take(_flat_rows(motion), (primary_rows[:, None] * t_total
                                           + np.arange(t_total)[None, :]), unique=True)
    elif config.variant == "ST-CMT":
        social = take(_flat_rows(motion), (primary_rows[:, None] * t_total
                                           + np.arange(t_total)[None, :]), unique=True)
    else:
        index, valid = _social_layout(batch, t_total)
        st_in = _pad_take(_flat_rows(motion), index)
        social = st_forward(st_in, params, config, valid)

    queries = getitem(social, (slice(None), slice(config.t_obs, t_total)))
    pred = project(queries, params)
    if config.output == "offset":
        cum = np.tril(np.ones((config.horizon, config.horizon)))
        pred = matmul(Tensor(cum), pred) + Tensor(batch.anchors[:, None, :])

    captures = None
    if capture:
        captures = []
        for b in range(batch.n_scenes):
            if not maps:
                captures.append(None)
                continue
            a = primary_rows[b]
            n = int(plan.seq_lengths[a])
            rows = plan.seq_index[a, :n]
            captures.append(AttentionCapture(
                layers=[m[a, :, :n, :n].copy() for m in maps],
                kinds=plan.pool_kind[rows],
                times=plan.pool_time[rows],
                elements=np.where(plan.pool_kp[rows] < config.keypoints, plan.pool_kp[rows], -1),
                available=np.ones(n, dtype=bool) if plan.n_missing == 0 else
                _slot_available(plan, rows),
                t_obs=config.t_obs, horizon=config.horizon, keypoints=config.keypoints,
            ))
    return pred, captures


def _slot_available(plan: PackedAgents, rows: np.ndarray) -> np.ndarray:
    n_avail = len(plan.traj_feats)
    return ~((rows >= n_avail) & (rows < n_avail + plan.n_missing))


def forward(scene: Scene, params: ModelParams, config: ModelConfig, capture: bool = False,
            ) -> tuple[PredictionY, AttentionCapture | None]:
    """Deterministic single-scene prediction (no graph is recorded)."""
    with no_grad():
        pred, captures = forward_batch([scene], params, config, capture=capture)
    return PredictionY(pred.data[0].copy()), (captures[0] if captures else None)


def predict(scenes: list[Scene], params: ModelParams, config: ModelConfig,
            batch_size: int = 64) -> np.ndarray:
    """Batched inference; returns ``(len(scenes), horizon, 2)``."""
    out = np.zeros((len(scenes), config.horizon, 2))
    order = sorted(range(len(scenes)), key=lambda i: (scenes[i].n_agents, i))
    with no_grad():
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            pred, _ = forward_batch([scenes[i] for i in idx], params, config)
            out[idx] = pred.data
    return out


def st_sequence_length(scene: Scene, config: ModelConfig) -> int:
    """Number of tokens entering the social encoder for ``scene``."""
    batch = build_batch([scene], config)
    index, valid = _social_layout(batch, config.t_total)
    return int(valid.sum())
