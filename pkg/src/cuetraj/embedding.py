"""Cue-specific token embeddings and the packed token layout fed to the encoders.

A token is ``MLP_c(features) + temporal[t] + identity[agent] (+ keypoint[e]
for pose cues)``.  Only available ``(t, e)`` entries become tokens.  Every
agent sequence starts with ``T_obs`` trajectory slots (a learned mask token
stands in for a missing trajectory entry) followed by ``horizon`` latent
queries; remaining cue tokens follow in canonical cue order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractError
from .nn import MLPParams, Tensor, add, concat, linear, relu, take
from .nn.layers import normal
from .scene import CUE_ORDER, PRIMARY, Agent, CueKind, CueTensor

QUERY = -1  # provenance kind code for latent query tokens
TABLE_STD = 0.02  # initial scale of the learned encoding tables
KIND_CODE = {kind: i for i, kind in enumerate(CUE_ORDER)}


@dataclass
class EmbeddingParams:
    mlps: dict[CueKind, MLPParams]
    temporal: Tensor
    identity: Tensor
    keypoint: Tensor
    queries: Tensor
    mask_token: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, t_total: int, horizon: int,
             keypoints: int, identities: int = 2) -> "EmbeddingParams":
        mlps = {kind: MLPParams.init(rng, kind.features, d, d) for kind in CUE_ORDER}
        return cls(
            mlps=mlps,
            temporal=normal(rng, (t_total, d), "temporal", TABLE_STD),
            identity=normal(rng, (identities, d), "identity", TABLE_STD),
            keypoint=normal(rng, (keypoints, d), "keypoint", TABLE_STD),
            queries=normal(rng, (horizon, d), "queries", TABLE_STD),
            mask_token=normal(rng, (1, d), "mask_token", TABLE_STD),
        )

    @property
    def width(self) -> int:
        return self.temporal.shape[1]

    def named(self, prefix: str = "embed") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for kind in CUE_ORDER:
            out.update(self.mlps[kind].named(f"{prefix}.mlp.{kind.value}"))
        for name in ("temporal", "identity", "keypoint", "queries", "mask_token"):
            out[f"{prefix}.{name}"] = getattr(self, name)
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, Tensor], prefix: str = "embed") -> "EmbeddingParams":
        mlps = {k: MLPParams.from_named(tensors, f"{prefix}.mlp.{k.value}") for k in CUE_ORDER}
        return cls(mlps=mlps, **{n: tensors[f"{prefix}.{n}"] for n in
                                 ("temporal", "identity", "keypoint", "queries", "mask_token")})


@dataclass
class TokenBatch:
    """Tokens with per-token provenance (cue kind code, time, element, agent)."""

    tokens: Tensor
    kinds: np.ndarray
    times: np.ndarray
    elements: np.ndarray
    agents: np.ndarray
    available: np.ndarray

    def __len__(self) -> int:
        return self.tokens.shape[0]


def cue_mlp(mlp: MLPParams, x: Tensor) -> Tensor:
    return linear(relu(linear(x, mlp.w1, mlp.b1)), mlp.w2, mlp.b2)


def _identity_row(role_or_slot, identities: int) -> int:
    if isinstance(role_or_slot, str):
        return 0 if role_or_slot == PRIMARY else 1
    if role_or_slot >= identities:
        raise CapacityError(f"identity slot {role_or_slot} exceeds table size {identities}")
    return int(role_or_slot)


def embed_cue(cue: CueTensor, role, params: EmbeddingParams, agent: int = 0) -> TokenBatch:
    """Embed the available entries of one cue; ``role`` is a role name or slot index."""
    t_idx, e_idx = np.nonzero(cue.mask)
    if cue.t_obs > params.temporal.shape[0]:
        raise CapacityError(
            f"cue spans {cue.t_obs} steps but the temporal table has {params.temporal.shape[0]} rows")
    if cue.kind.is_pose and cue.n_elements > params.keypoint.shape[0]:
        raise CapacityError(
            f"{cue.n_elements} keypoints exceed the keypoint table ({params.keypoint.shape[0]})")
    d = params.width
    feats = Tensor(cue.values[t_idx, e_idx].reshape(-1, cue.kind.features))
    ident = np.full(len(t_idx), _identity_row(role, params.identity.shape[0]))
    tokens = add(cue_mlp(params.mlps[cue.kind], feats), take(params.temporal, t_idx))
    tokens = add(tokens, take(params.identity, ident))
    if cue.kind.is_pose:
        tokens = add(tokens, take(params.keypoint, e_idx))
    n = len(t_idx)
    if n == 0:
        tokens = Tensor(np.zeros((0, d)))
    return TokenBatch(tokens, np.full(n, KIND_CODE[cue.kind]), t_idx, e_idx,
                      np.full(n, agent), np.ones(n, dtype=bool))


def make_latent_queries(params: EmbeddingParams, horizon: int, t_obs: int, role=PRIMARY,
                        agent: int = 0) -> TokenBatch:
    """Learned future-slot tokens with temporal encodings ``t_obs .. t_obs+horizon-1``."""
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    if horizon > params.queries.shape[0] or t_obs + horizon > params.temporal.shape[0]:
        raise CapacityError(f"horizon {horizon} exceeds the query/temporal tables")
    j = np.arange(horizon)
    ident = np.full(horizon, _identity_row(role, params.identity.shape[0]))
    tokens = add(add(take(params.queries, j), take(params.temporal, t_obs + j)),
                 take(params.identity, ident))
    return TokenBatch(tokens, np.full(horizon, QUERY), t_obs + j, np.zeros(horizon, dtype=int),
                      np.full(horizon, agent), np.ones(horizon, dtype=bool))


# ---------------------------------------------------------------------------
# packed layout for batched encoders
# ---------------------------------------------------------------------------

@dataclass
class PackedAgents:
    """Index plan for embedding a batch of agents in one pass.

    ``seq_index[a, s]`` points into the token pool (``pool_size`` = padding).
    ``pool_*`` arrays describe each pool row.
    """

    t_obs: int
    horizon: int
    seq_index: np.ndarray
    valid: np.ndarray
    agent_scene: np.ndarray
    agent_slot: np.ndarray
    traj_feats: np.ndarray
    n_missing: int
    cue_feats: dict[CueKind, np.ndarray]
    pool_time: np.ndarray
    pool_ident: np.ndarray
    pool_kp: np.ndarray
    pool_kind: np.ndarray
    pool_agent: np.ndarray
    query_slot: np.ndarray
    seq_lengths: np.ndarray = field(default=None)

    @property
    def pool_size(self) -> int:
        return len(self.pool_time)

    @property
    def n_agents(self) -> int:
        return self.seq_index.shape[0]

    @property
    def t_total(self) -> int:
        return self.t_obs + self.horizon


def pack_agents(groups: list[list[Agent]], t_obs: int, horizon: int, keypoints: int,
                identities: int = 2, slot_ids: list[list[int]] | None = None) -> PackedAgents:
    """Plan the token pool for ``groups`` (one list of agents per scene).

    Identity rows are binary (primary/neighbour) when ``slot_ids`` is None,
    otherwise ``slot_ids[b][i]`` selects the row of agent ``i`` in scene ``b``.
    """
    traj_feats, traj_rows = [], []  # rows: (agent, t)
    missing_rows = []
    cue_feats = {k: [] for k in CUE_ORDER[1:]}
    cue_rows = {k: [] for k in CUE_ORDER[1:]}  # (agent, t, e)
    agent_scene, agent_slot, agent_ident = [], [], []
    a = 0
    for b, agents in enumerate(groups):
        for i, agent in enumerate(agents):
            ident = _identity_row(agent.role, identities) if slot_ids is None \
                else _identity_row(slot_ids[b][i], identities)
            agent_scene.append(b)
            agent_slot.append(i)
            agent_ident.append(ident)
            traj = agent.trajectory
            if traj.t_obs != t_obs:
                raise ContractError(f"trajectory has {traj.t_obs} steps, model expects {t_obs}")
            for t in range(t_obs):
                if traj.mask[t, 0]:
                    traj_feats.append(traj.values[t, 0])
                    traj_rows.append((a, t))
                else:
                    missing_rows.append((a, t))
            for cue in agent.cues:
                if cue.kind is CueKind.T:
                    continue
                if cue.kind.is_pose and cue.n_elements > keypoints:
                    raise CapacityError(
                        f"{cue.n_elements} keypoints exceed the keypoint table ({keypoints})")
                t_idx, e_idx = np.nonzero(cue.mask)
                if len(t_idx):
                    cue_feats[cue.kind].append(cue.values[t_idx, e_idx])
                    cue_rows[cue.kind].extend(zip([a] * len(t_idx), t_idx, e_idx))
            a += 1
    n_agents = a
    agent_ident = np.asarray(agent_ident, dtype=np.intp)

    # pool order: available traj, missing traj, queries, then each cue kind
    pool_agent, pool_time, pool_kp, pool_kind = [], [], [], []

    def extend(rows, kind_code, with_kp):
        for row in rows:
            pool_agent.append(row[0])
            pool_time.append(row[1])
            pool_kp.append(row[2] if with_kp else keypoints)
            pool_kind.append(kind_code)

    extend(traj_rows, KIND_CODE[CueKind.T], False)
    extend(missing_rows, KIND_CODE[CueKind.T], False)
    query_rows = [(ai, t_obs + j) for ai in range(n_agents) for j in range(horizon)]
    extend(query_rows, QUERY, False)
    for kind in CUE_ORDER[1:]:
        extend(cue_rows[kind], KIND_CODE[kind], kind.is_pose)
    pool_agent = np.asarray(pool_agent, dtype=np.intp)
    pool_time = np.asarray(pool_time, dtype=np.intp)
    pool_kp = np.asarray(pool_kp, dtype=np.intp)
    pool_kind = np.asarray(pool_kind, dtype=np.intp)
    pool_size = len(pool_time)

    # per-agent sequences: traj slots, queries, cue tokens in pool order
    t_total = t_obs + horizon
    slots = np.full((n_agents, t_total), -1, dtype=np.intp)
    n_avail = len(traj_rows)
    for r, (ai, t) in enumerate(traj_rows):
        slots[ai, t] = r
    for r, (ai, t) in enumerate(missing_rows):
        slots[ai, t] = n_avail + r
    q0 = n_avail + len(missing_rows)
    slots[:, t_obs:] = q0 + np.arange(n_agents * horizon).reshape(n_agents, horizon)
    extra = [[] for _ in range(n_agents)]
    first_cue = q0 + n_agents * horizon
    for r in range(first_cue, pool_size):
        extra[pool_agent[r]].append(r)
    lengths = np.array([t_total + len(x) for x in extra], dtype=np.intp)
    s_max = int(lengths.max()) if n_agents else t_total
    seq_index = np.full((n_agents, s_max), pool_size, dtype=np.intp)
    seq_index[:, :t_total] = slots
    for ai, rows in enumerate(extra):
        seq_index[ai, t_total:t_total + len(rows)] = rows
    valid = np.arange(s_max)[None, :] < lengths[:, None]

    def stack(rows, width):
        return np.asarray(rows, dtype=np.float64).reshape(-1, width)

    return PackedAgents(
        t_obs=t_obs,
        horizon=horizon,
        seq_index=seq_index,
        valid=valid,
        agent_scene=np.asarray(agent_scene, dtype=np.intp),
        agent_slot=np.asarray(agent_slot, dtype=np.intp),
        traj_feats=stack(traj_feats, 2),
        n_missing=len(missing_rows),
        cue_feats={k: (np.concatenate(v).reshape(-1, k.features) if v
                       else np.zeros((0, k.features))) for k, v in cue_feats.items()},
        pool_time=pool_time,
        pool_ident=agent_ident[pool_agent] if pool_size else pool_agent,
        pool_kp=pool_kp,
        pool_kind=pool_kind,
        pool_agent=pool_agent,
        query_slot=np.arange(horizon),
        seq_lengths=lengths,
    )


def embed_pool(plan: PackedAgents, params: EmbeddingParams) -> Tensor:
    """Embed every pool row; returns ``(pool_size, D)`` tokens."""
    if plan.t_total > params.temporal.shape[0]:
        raise CapacityError(
            f"{plan.t_total} time-steps exceed the temporal table ({params.temporal.shape[0]})")
    d = params.width
    parts = [cue_mlp(params.mlps[CueKind.T], Tensor(plan.traj_feats))]
    if plan.n_missing:
        parts.append(take(params.mask_token, np.zeros(plan.n_missing, dtype=np.intp)))
    parts.append(take(params.queries, np.tile(plan.query_slot, plan.n_agents)))
    for kind in CUE_ORDER[1:]:
        feats = plan.cue_feats[kind]
        if len(feats):
            parts.append(cue_mlp(params.mlps[kind], Tensor(feats)))
    base = concat(parts, axis=0)
    kp_table = concat([params.keypoint, Tensor(np.zeros((1, d)))], axis=0)
    enc = add(take(params.temporal, plan.pool_time), take(params.identity, plan.pool_ident))
    enc = add(enc, take(kp_table, plan.pool_kp))
    return add(base, enc)


def gather_sequences(pool: Tensor, seq_index: np.ndarray) -> Tensor:
    """Pool rows -> padded ``(A, S, D)`` sequences (padding rows are zero)."""
    d = pool.shape[1]
    padded = concat([pool, Tensor(np.zeros((1, d)))], axis=0)
    return take(padded, seq_index, unique=True)
