"""Distributed iterative rate adaptation with server-assisted gradients.

Users never see each other's rates.  Instead, each round a user reports its
buffer occupancy and last requested rate; the server, which knows every
user's last rate and the export bandwidth, returns a central-difference
estimate of the user's payoff gradient; the user then applies a
multiplicative sub-gradient step.  Fixed points of this iteration are
exactly the stationary points of the static game.

The message types (`PayoffQuery`/`PayoffReply`) double as the wire format:
in simulation they travel over an in-process channel with zero latency, in
live mode as newline-delimited JSON over a byte stream.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Sequence

from .model import BufferView, GameParams, VideoQualityModel, utility

__all__ = [
    "AdaptConfig",
    "PayoffQuery",
    "PayoffReply",
    "UserSession",
    "PayoffServer",
    "InProcessChannel",
    "payoff_gradient_server",
    "update_rate",
    "has_converged",
    "run_round",
    "encode_message",
    "decode_message",
]


@dataclass(frozen=True)
class AdaptConfig:
    """Per-user adaptation constants.

    ``theta`` is the learning rate of the multiplicative update; ``epsilon``
    the server's perturbation for the central difference; ``r_init`` the
    cold-start request; ``max_step_fraction`` caps a single step at that
    fraction of the current rate (the raw step theta*r*gradient can be huge
    far from equilibrium; the cap is inactive near it, where the gradient
    vanishes).  ``r_min`` must stay positive because the multiplicative
    update cannot leave zero once reached.
    """

    theta: float
    r_max: float
    epsilon: float = 1e-4
    r_init: float = 0.1
    r_min: float = 0.05
    max_step_fraction: float = 0.25

    def __post_init__(self) -> None:
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"AdaptConfig.theta must be > 0, got {self.theta!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"AdaptConfig.epsilon must be > 0, got {self.epsilon!r}")
        if not 0 < self.r_min <= self.r_init <= self.r_max:
            raise ValueError(
                "AdaptConfig requires 0 < r_min <= r_init <= r_max, got "
                f"r_min={self.r_min!r} r_init={self.r_init!r} r_max={self.r_max!r}"
            )
        if self.max_step_fraction <= 0:
            raise ValueError("AdaptConfig.max_step_fraction must be > 0 (use inf to disable)")


@dataclass(frozen=True)
class PayoffQuery:
    """Client -> server: buffer occupancy and last requested rate."""

    user_id: int
    b_curr: float
    last_rate: float


@dataclass(frozen=True)
class PayoffReply:
    """Server -> client: estimated payoff gradient at the current rates."""

    user_id: int
    gradient_estimate: float


def payoff_gradient_server(
    params: GameParams,
    model: VideoQualityModel,
    export_bw: float,
    all_last_rates: Sequence[float],
    i: int,
    b_curr_i: float,
    epsilon: float,
    b_ref: float,
    b_0: float = 0.0,
) -> float:
    """Central-difference payoff gradient the server computes for user ``i``.

    Only coordinate ``i`` is perturbed by +/- epsilon; the adjustment factor
    uses the buffer occupancy the user reported.  The estimate has O(eps^2)
    error against the analytic gradient.
    """
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be > 0, got {epsilon!r}")
    if not 0 <= i < len(all_last_rates):
        raise IndexError(f"user index {i} out of range for {len(all_last_rates)} rates")
    buf = BufferView(b_curr=b_curr_i, b_ref=b_ref, b_0=b_0)
    plus = list(all_last_rates)
    minus = list(all_last_rates)
    plus[i] = plus[i] + epsilon
    minus[i] = max(minus[i] - epsilon, 0.0)
    # keep the difference symmetric even if the minus leg clipped at zero
    span = plus[i] - minus[i]
    u_plus = utility(params, model, i, plus, buf, export_bw)
    u_minus = utility(params, model, i, minus, buf, export_bw)
    return (u_plus - u_minus) / span


def update_rate(cfg: AdaptConfig, r: float, gradient: float) -> float:
    """One multiplicative sub-gradient step: r + theta * r * gradient.

    The raw step is clamped to ``max_step_fraction * r`` in magnitude, then
    the result to [r_min, r_max].
    """
    step = cfg.theta * r * gradient
    cap = cfg.max_step_fraction * r
    if math.isfinite(cap):
        step = max(-cap, min(cap, step))
    return max(cfg.r_min, min(cfg.r_max, r + step))


def has_converged(history: Sequence[Sequence[float]], tol: float, window: int = 5) -> bool:
    """True iff no coordinate moved more than ``tol`` over the trailing window.

    ``history`` holds successive rate vectors, most recent last; at least two
    are required.  Only the last ``window`` transitions are examined.
    """
    if len(history) < 2:
        raise ValueError("has_converged needs at least two rate vectors")
    recent = list(history[-(window + 1):])
    for prev, cur in zip(recent, recent[1:]):
        for a, b in zip(prev, cur):
            if abs(b - a) > tol:
                return False
    return True


@dataclass
class UserSession:
    """One user's adaptation state as seen by the round driver."""

    user_id: int
    model: VideoQualityModel
    cfg: AdaptConfig
    rate: float
    b_curr: float
    b_ref: float
    b_0: float = 0.0

    def query(self) -> PayoffQuery:
        return PayoffQuery(user_id=self.user_id, b_curr=self.b_curr, last_rate=self.rate)


class PayoffServer:
    """Server side of the payoff exchange.

    Holds the utility constants, each user's video model and adaptation
    epsilon, the current export bandwidth, and a registry of every user's
    last reported rate and buffer.  Query handling serialises on a lock so
    concurrent queries within one round observe one consistent snapshot.
    """

    def __init__(self, params: GameParams, export_bw: float) -> None:
        self.params = params
        self.export_bw = export_bw
        self._models: dict[int, VideoQualityModel] = {}
        self._epsilons: dict[int, float] = {}
        self._b_refs: dict[int, float] = {}
        self._b_0s: dict[int, float] = {}
        self._last_rates: dict[int, float] = {}
        self._b_currs: dict[int, float] = {}
        self._lock = threading.Lock()

    def register(
        self,
        user_id: int,
        model: VideoQualityModel,
        b_ref: float,
        initial_rate: float,
        initial_b_curr: float,
        epsilon: float = 1e-4,
        b_0: float = 0.0,
    ) -> None:
        with self._lock:
            self._models[user_id] = model
            self._epsilons[user_id] = epsilon
            self._b_refs[user_id] = b_ref
            self._b_0s[user_id] = b_0
            self._last_rates[user_id] = initial_rate
            self._b_currs[user_id] = initial_b_curr

    @property
    def user_ids(self) -> list[int]:
        return sorted(self._models)

    def note_request(self, user_id: int, rate: float) -> None:
        """Record the rate a user actually requested its next segment at."""
        if user_id not in self._models:
            raise KeyError(f"unknown user id {user_id}")
        with self._lock:
            self._last_rates[user_id] = rate

    def handle_query(self, query: PayoffQuery) -> PayoffReply:
        if query.user_id not in self._models:
            raise KeyError(f"unknown user id {query.user_id}")
        with self._lock:
            self._b_currs[query.user_id] = query.b_curr
            self._last_rates[query.user_id] = query.last_rate
            ids = sorted(self._models)
            rates = [self._last_rates[u] for u in ids]
            i = ids.index(query.user_id)
            grad = payoff_gradient_server(
                self.params,
                self._models[query.user_id],
                self.export_bw,
                rates,
                i,
                query.b_curr,
                self._epsilons[query.user_id],
                self._b_refs[query.user_id],
                self._b_0s[query.user_id],
            )
        return PayoffReply(user_id=query.user_id, gradient_estimate=grad)


class InProcessChannel:
    """Zero-latency channel used in simulation: queries go straight to the server."""

    def __init__(self, server: PayoffServer) -> None:
        self.server = server

    def exchange(self, query: PayoffQuery) -> PayoffReply:
        return self.server.handle_query(query)


def run_round(
    sessions: Sequence[UserSession],
    params: GameParams,
    export_bw: float,
    sequential: bool = False,
) -> list[float]:
    """One adaptation round over all sessions; returns the updated rates.

    By default updates are simultaneous: every gradient is computed against
    the rate vector frozen at the round start, so the result is independent
    of user processing order (and matches the Jacobian analysis of the
    update map).  ``sequential=True`` applies Gauss-Seidel style in-place
    updates instead, offered for experimentation only.
    """
    if not sessions:
        raise ValueError("run_round requires at least one session")
    rates = [s.rate for s in sessions]
    if sequential:
        for i, s in enumerate(sessions):
            grad = payoff_gradient_server(
                params, s.model, export_bw, rates, i, s.b_curr, s.cfg.epsilon, s.b_ref, s.b_0
            )
            rates[i] = update_rate(s.cfg, rates[i], grad)
    else:
        snapshot = list(rates)
        grads = [
            payoff_gradient_server(
                params, s.model, export_bw, snapshot, i, s.b_curr, s.cfg.epsilon, s.b_ref, s.b_0
            )
            for i, s in enumerate(sessions)
        ]
        rates = [update_rate(s.cfg, r, g) for s, r, g in zip(sessions, snapshot, grads)]
    for s, r in zip(sessions, rates):
        s.rate = r
    return rates


def encode_message(message: PayoffQuery | PayoffReply) -> bytes:
    """Serialise a protocol message as one newline-terminated JSON line."""
    if isinstance(message, PayoffQuery):
        payload = {
            "type": "payoff_query",
            "user": message.user_id,
            "b_curr": message.b_curr,
            "last_rate": message.last_rate,
        }
    elif isinstance(message, PayoffReply):
        payload = {
            "type": "payoff_reply",
            "user": message.user_id,
            "grad": message.gradient_estimate,
        }
    else:
        raise TypeError(f"not a protocol message: {message!r}")
    return (json.dumps(payload, separators=(",", ":")) + "\n").encode("ascii")


def decode_message(line: bytes | str) -> PayoffQuery | PayoffReply:
    """Parse one JSON line back into a protocol message."""
    if isinstance(line, bytes):
        line = line.decode("ascii")
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed protocol line: {line!r}") from exc
    kind = payload.get("type")
    try:
        if kind == "payoff_query":
            message = PayoffQuery(
                user_id=int(payload["user"]),
                b_curr=float(payload["b_curr"]),
                last_rate=float(payload["last_rate"]),
            )
            fields = (message.b_curr, message.last_rate)
        elif kind == "payoff_reply":
            message = PayoffReply(
                user_id=int(payload["user"]),
                gradient_estimate=float(payload["grad"]),
            )
            fields = (message.gradient_estimate,)
        else:
            raise ValueError(f"unknown protocol message type {kind!r}")
    except KeyError as exc:
        raise ValueError(f"protocol message missing field {exc}") from exc
    if not all(math.isfinite(v) for v in fields):
        raise ValueError(f"protocol message fields must be finite: {line!r}")
    return message
