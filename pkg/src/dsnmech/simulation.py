"""Deterministic multi-round simulation of a storage contract.

Each round: the client signs a request for one segment, the provider serves
it or not, the client decides whether to challenge, and the oracle resolves
any challenge through the contract engine.  After the last round the contract
settles (premium, collateral, request billing).

Per-round utilities use the same accounting as the game's leaf payoffs:
the provider earns ``share_benefit`` or ``noshare_benefit``, pays
``proof_cost`` when it proves and loses whatever collateral the contract
moves to the client; the client gets ``read_value`` when it ends the round
holding verified data and ``-data_loss_cost`` otherwise, minus the
challenge fee it actually paid plus any compensation it actually received.
Premium and request fees are settled at the end and are not part of the
per-round figures (they are what ``share_benefit`` abstracts).
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal

import numpy as np

from . import contract as ce
from . import game, merkle
from .billing import RequestSigner, provider_accept
from .crypto import keygen
from .money import fmt, to_units

HONEST = "Honest"
DENY_SERVE = "DenyServeButProve"
LOSE_DATA = "LoseDataWithProb"
PROVIDER_POLICIES = (HONEST, DENY_SERVE, LOSE_DATA)

CHALLENGE_IF_UNSERVED = "ChallengeIfUnserved"
NEVER_CHALLENGE = "NeverChallenge"
ALWAYS_CHALLENGE = "AlwaysChallenge"
CLIENT_POLICIES = (CHALLENGE_IF_UNSERVED, NEVER_CHALLENGE, ALWAYS_CHALLENGE)

_LOSE_RE = re.compile(r"^LoseDataWithProb\(\s*([0-9.eE+-]+)\s*\)$")


class SimConfigError(ValueError):
    pass


class IncompleteTrace(ValueError):
    pass


@dataclass(frozen=True)
class AgentPolicy:
    provider: str = HONEST
    client: str = CHALLENGE_IF_UNSERVED
    loss_prob: Decimal = Decimal(0)

    def __post_init__(self) -> None:
        if self.provider not in PROVIDER_POLICIES:
            raise SimConfigError(f"unknown provider policy {self.provider!r}")
        if self.client not in CLIENT_POLICIES:
            raise SimConfigError(f"unknown client policy {self.client!r}")
        object.__setattr__(self, "loss_prob", Decimal(str(self.loss_prob)))
        if not 0 <= self.loss_prob <= 1:
            raise SimConfigError("loss probability must lie in [0, 1]")

    @classmethod
    def parse(cls, provider: str, client: str) -> AgentPolicy:
        provider = provider.strip()
        match = _LOSE_RE.match(provider)
        if match:
            return cls(LOSE_DATA, client.strip(), Decimal(match.group(1)))
        return cls(provider, client.strip())

    @property
    def provider_label(self) -> str:
        return f"{LOSE_DATA}({self.loss_prob})" if self.provider == LOSE_DATA else self.provider


@dataclass(frozen=True)
class SimConfig:
    """Everything a run depends on; identical configs give identical traces.

    ``compensation`` and ``fee_base`` default to the game's compensation and
    challenge fee so that ledger flows line up with the leaf payoffs.
    """

    seed: int
    rounds: int
    params: game.GameParams
    policy: AgentPolicy = AgentPolicy()
    data_size: int = 4096
    segment_size: int = 512
    premium: Decimal = Decimal(20)
    per_request_fee: Decimal = Decimal("0.01")
    delivery_window: int = 2
    round_length: int = 10
    compensation: Decimal | None = None
    fee_base: Decimal | None = None
    fee_per_byte: Decimal = Decimal(0)
    client_funds: Decimal | None = None
    provider_funds: Decimal | None = None

    def terms(self) -> ce.Terms:
        comp = self.params.compensation if self.compensation is None else self.compensation
        fee = self.params.challenge_fee if self.fee_base is None else self.fee_base
        return ce.Terms(
            duration=self.rounds * self.round_length,
            premium=to_units(self.premium),
            delivery_window=self.delivery_window,
            compensation=to_units(comp),
            fee_base=to_units(fee),
            fee_per_byte=to_units(self.fee_per_byte),
            per_request_fee=to_units(self.per_request_fee),
            max_requests=self.rounds,
            nonce=self.seed,
        )

    def funding(self) -> tuple[int, int]:
        """Initial (client, provider) balances; defaults cover every possible charge."""
        t = self.terms()
        worst_fee = t.fee_base + t.fee_per_byte * self.segment_size * merkle.padded_count(
            max(1, -(-self.data_size // self.segment_size))
        )
        client = t.premium + t.per_request_fee * t.max_requests + worst_fee * self.rounds
        provider = t.compensation
        if self.client_funds is not None:
            client = to_units(self.client_funds)
        if self.provider_funds is not None:
            provider = to_units(self.provider_funds)
        return client, provider

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise SimConfigError("seed must be an unsigned 64-bit integer")
        if self.rounds < 0:
            raise SimConfigError("rounds must be non-negative")
        if self.data_size < 0 or self.segment_size < 1:
            raise SimConfigError("data_size must be >= 0 and segment_size >= 1")
        if self.delivery_window < 1:
            raise SimConfigError("delivery_window must be at least one tick")
        if self.round_length < self.delivery_window + 3:
            raise SimConfigError("round_length must exceed delivery_window + 2")
        t = self.terms()
        client, provider = self.funding()
        if client < t.premium + t.per_request_fee * t.max_requests:
            raise SimConfigError("client funds cannot cover premium and request fees")
        if provider < t.compensation:
            raise SimConfigError("provider funds cannot cover the collateral")

    def to_dict(self) -> dict:
        out = {k: str(v) for k, v in asdict(self).items() if k not in ("params", "policy")}
        out["provider"] = self.policy.provider_label
        out["client"] = self.policy.client
        out.update({f"game.{k}": str(v) for k, v in asdict(self.params).items()})
        return out


_SIM_INTS = {"seed", "rounds", "data_size", "segment_size", "delivery_window", "round_length"}
_SIM_DECIMALS = {"premium", "per_request_fee", "compensation", "fee_base", "fee_per_byte",
                 "client_funds", "provider_funds"}


def load_config(text: str) -> SimConfig:
    """Read ``[sim]`` and ``[game]`` sections of an INI-style config."""
    parser = configparser.ConfigParser()
    parser.read_string(text)
    if not parser.has_section("sim") or not parser.has_section("game"):
        raise SimConfigError("config needs [sim] and [game] sections")
    try:
        params = game.load_params("[game]\n" + "\n".join(f"{k} = {v}" for k, v in parser.items("game")))
    except ValueError as exc:
        raise SimConfigError(f"[game]: {exc}") from None
    raw = dict(parser.items("sim"))
    policy = AgentPolicy.parse(raw.pop("provider", HONEST), raw.pop("client", CHALLENGE_IF_UNSERVED))
    kwargs: dict = {}
    for key, value in raw.items():
        if key in _SIM_INTS:
            kwargs[key] = int(value)
        elif key in _SIM_DECIMALS:
            kwargs[key] = Decimal(value)
        else:
            raise SimConfigError(f"unknown [sim] key {key!r}")
    if "seed" not in kwargs or "rounds" not in kwargs:
        raise SimConfigError("[sim] needs seed and rounds")
    return SimConfig(params=params, policy=policy, **kwargs)


@dataclass
class RoundRecord:
    round: int
    shared: bool
    challenged: bool
    proved: bool | None
    fee_paid: int
    compensation: int
    received: tuple[int, ...]
    provider_utility: int
    client_utility: int

    @property
    def leaf(self) -> int:
        return game.leaf_of(self.shared, self.challenged, self.proved)


@dataclass
class SimTrace:
    config: dict
    events: list[dict] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    final_balances: dict[str, int] = field(default_factory=dict)
    final_escrows: int = 0
    initial_supply: int = 0
    final_phase: str = ""
    complete: bool = False

    def record(self, time: int, actor: str, event: str, **amounts) -> None:
        self.events.append({"time": time, "actor": actor, "event": event, "amounts": amounts})

    @property
    def provider_total(self) -> int:
        return sum(r.provider_utility for r in self.rounds)

    @property
    def client_total(self) -> int:
        return sum(r.client_utility for r in self.rounds)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"config": self.config}, sort_keys=True)]
        lines += [json.dumps(e, sort_keys=True) for e in self.events]
        for r in self.rounds:
            row = asdict(r) | {"leaf": r.leaf}
            row["received"] = list(r.received)
            lines.append(json.dumps({"round": row}, sort_keys=True))
        lines.append(json.dumps({"final": {
            "balances": {k: fmt(v) for k, v in sorted(self.final_balances.items())},
            "escrows": fmt(self.final_escrows),
            "phase": self.final_phase,
        }}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        rows = ["round  leaf  shared  challenged  proved  provider_u  client_u"]
        for r in self.rounds:
            proved = "-" if r.proved is None else str(r.proved)
            rows.append(
                f"{r.round:>5}  {r.leaf:>4}  {str(r.shared):>6}  {str(r.challenged):>10}  {proved:>6}"
                f"  {fmt(r.provider_utility):>10}  {fmt(r.client_utility):>8}"
            )
        rows.append(f"total provider utility = {fmt(self.provider_total)}")
        rows.append(f"total client utility = {fmt(self.client_total)}")
        rows.append(f"final phase = {self.final_phase}")
        for who, v in sorted(self.final_balances.items()):
            rows.append(f"balance[{who}] = {fmt(v)}")
        return "\n".join(rows) + "\n"


def _data_for(seed: int, size: int) -> bytes:
    rng = np.random.Generator(np.random.Philox(key=seed ^ 0x5EED))
    return rng.bytes(size)


def run(config: SimConfig) -> SimTrace:
    config.validate()
    p = config.params
    policy = config.policy
    rng = np.random.Generator(np.random.Philox(key=config.seed))

    client_kp = keygen(b"client" + config.seed.to_bytes(8, "big"))
    provider_kp = keygen(b"provider" + config.seed.to_bytes(8, "big"))
    data = _data_for(config.seed, config.data_size)
    agreement = ce.handshake(client_kp, provider_kp, data, config.segment_size, config.terms())
    _, tree = merkle.setup(data, config.segment_size)

    ledger = ce.Ledger()
    names = {agreement.client: "client", agreement.provider: "provider", ledger.fee_sink: ledger.fee_sink}
    client_funds, provider_funds = config.funding()
    ledger.fund(agreement.client, client_funds)
    ledger.fund(agreement.provider, provider_funds)
    ledger.meter.charge("deploy")

    trace = SimTrace(config.to_dict(), initial_supply=ledger.total_supply)
    seen = 0

    def sync_ledger_events() -> None:
        nonlocal seen
        for e in ledger.events[seen:]:
            trace.record(e.time, "contract", e.kind, **{k: fmt(v) if isinstance(v, int) else v
                                                        for k, v in e.amounts.items()})
        seen = len(ledger.events)

    state = ce.activate(agreement, ledger, now=0)
    sync_ledger_events()

    signer = RequestSigner(client_kp)
    witness = None
    has_data = True
    units = {name: to_units(getattr(p, name)) for name in
             ("read_value", "data_loss_cost", "proof_cost", "share_benefit", "noshare_benefit")}

    for r in range(1, config.rounds + 1):
        t0 = (r - 1) * config.round_length
        state = ce.advance(state, t0)
        index = int(rng.integers(1, tree.raw_segment_count + 1)) if tree.raw_segment_count else 1
        request = signer.issue(agreement.contract_id)
        witness = provider_accept(request, agreement, witness)
        trace.record(t0, "client", "request", counter=request.counter, segment=index, sig=request.hex()[-16:])

        if policy.provider == LOSE_DATA and has_data:
            draw = float(rng.random())
            lost = draw < float(policy.loss_prob)
            trace.record(t0, "provider", "loss_draw", value=f"{draw:.17g}", lost=lost)
            has_data = not lost

        shared = has_data and policy.provider != DENY_SERVE
        received: tuple[int, ...] = ()
        if shared:
            received = (tree.segment(index).index,)
            trace.record(t0, "provider", "serve", segment=index)
        else:
            trace.record(t0, "provider", "deny", segment=index)

        if policy.client == ALWAYS_CHALLENGE:
            challenge = True
        elif policy.client == NEVER_CHALLENGE:
            challenge = False
        else:
            challenge = not shared

        fee_paid = compensation = 0
        proved = None
        if challenge:
            c = merkle.leaf_node(index, tree.padded_segment_count)
            state = ce.advance(state, t0 + 1)
            before = ledger.balance(agreement.client)
            state = ce.submit_challenge(state, agreement, ledger, c, ce.sign_challenge(client_kp, state, c))
            fee_paid = before - ledger.balance(agreement.client)
            sync_ledger_events()

            if has_data:
                proof = merkle.prove(tree, c)
                state = ce.advance(state, t0 + 2)
                trace.record(t0 + 2, "provider", "proof", node=c, bytes=len(proof.encode()))
            else:
                proof = None
                state = ce.advance(state, state.deadline + 1)
                trace.record(state.clock, "oracle", "timeout", node=c)
            collateral = ledger.escrowed(agreement.contract_id, ce.COLLATERAL)
            state, forward = ce.resolve_challenge(state, agreement, ledger, proof)
            sync_ledger_events()
            proved = forward is not None
            if forward is not None:
                received = received + tuple(s.index for s in forward.segments)
                trace.record(state.clock, "oracle", "forward", segments=len(forward.segments))
            else:
                compensation = collateral

        holds_verified = (proved is True) if challenge else shared
        provider_u = (units["share_benefit"] if shared else units["noshare_benefit"])
        provider_u -= units["proof_cost"] if proved else 0
        provider_u -= compensation
        client_u = units["read_value"] if holds_verified else -units["data_loss_cost"]
        client_u += compensation - fee_paid
        trace.rounds.append(RoundRecord(r, shared, challenge, proved, fee_paid, compensation, received,
                                        provider_u, client_u))
        if state.phase is ce.Phase.DEFAULTED:
            break

    if state.phase is ce.Phase.ACTIVE:
        state = ce.advance(state, max(state.clock, state.start + agreement.terms.duration))
        state = ce.settle(state, agreement, ledger, witness)
        sync_ledger_events()

    trace.final_balances = {names.get(k, k): v for k, v in ledger.balances.items()}
    trace.final_escrows = sum(ledger.escrows.values())
    trace.final_phase = state.phase.value
    trace.complete = True
    return trace


@dataclass(frozen=True)
class RoundComparison:
    round: int
    leaf: int
    realized: tuple[int, int]
    predicted: tuple[int, int]

    @property
    def diff(self) -> tuple[int, int]:
        return self.realized[0] - self.predicted[0], self.realized[1] - self.predicted[1]


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[RoundComparison, ...]

    @property
    def exact(self) -> bool:
        return all(row.diff == (0, 0) for row in self.rows)

    def to_text(self) -> str:
        lines = ["round  leaf  realized(S,C)  predicted(S,C)  diff"]
        for row in self.rows:
            lines.append(
                f"{row.round:>5}  {row.leaf:>4}  ({fmt(row.realized[0])}, {fmt(row.realized[1])})"
                f"  ({fmt(row.predicted[0])}, {fmt(row.predicted[1])})  ({fmt(row.diff[0])}, {fmt(row.diff[1])})"
            )
        lines.append("exact match" if self.exact else "MISMATCH")
        return "\n".join(lines) + "\n"


def realized_vs_predicted(trace: SimTrace, params: game.GameParams) -> ComparisonReport:
    if not trace.complete:
        raise IncompleteTrace("trace has not finished")
    pay = game.build_payoffs(params)
    rows = []
    for r in trace.rounds:
        s, c = pay.at(r.leaf)
        rows.append(RoundComparison(r.round, r.leaf, (r.provider_utility, r.client_utility),
                                    (to_units(s), to_units(c))))
    return ComparisonReport(tuple(rows))


def policy_grid(base: SimConfig, loss_probs: tuple = (Decimal("0.5"), Decimal(1))) -> dict:
    """Total (provider, client) utility for every provider x client policy pair."""
    providers = [AgentPolicy(HONEST), AgentPolicy(DENY_SERVE)] + [
        AgentPolicy(LOSE_DATA, loss_prob=q) for q in loss_probs
    ]
    out = {}
    for prov in providers:
        for client in CLIENT_POLICIES:
            policy = AgentPolicy(prov.provider, client, prov.loss_prob)
            trace = run(_with_policy(base, policy))
            out[(policy.provider_label, client)] = (trace.provider_total, trace.client_total)
    return out


def _with_policy(config: SimConfig, policy: AgentPolicy) -> SimConfig:
    return replace(config, policy=policy)
