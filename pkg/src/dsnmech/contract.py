"""The storage contract: agreement handshake, escrow ledger and challenge lifecycle.

Everything "on-chain" lives in a :class:`Ledger` (balances, escrows, the
event log and the cost meter).  Contract operations are functions that take
the current :class:`ContractState` and return the next one; they validate
fully before touching the ledger so a raised error leaves no trace.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

from . import merkle
from .crypto import KeyPair, sign, verify_sig
from .merkle import Digest, Segment, StorageProof
from .money import fmt

PREMIUM, COLLATERAL, REQUEST_FEES = "premium", "collateral", "fee"
FEE_POOL = "fee_pool"

# gas units from the reference deployment; only their ratios matter here
DEFAULT_COSTS = {"deploy": 2_491_606, "record_task": 202_001, "challenge": 192_101}


class ContractError(Exception):
    """Base class for contract failures."""


class HandshakeAbort(ContractError):
    """The provider's digest differs from the client's."""


class SignatureRejected(ContractError):
    pass


class ActivationError(ContractError):
    pass


class StateError(ContractError):
    """Operation not allowed in the contract's current phase or time."""


class LedgerError(ContractError):
    pass


class CostError(ContractError):
    pass


# -- cost meter -------------------------------------------------------------


class CostMeter:
    """Abstract on-chain cost units per contract event."""

    def __init__(self, costs: dict[str, int] | None = None):
        self.costs = dict(DEFAULT_COSTS if costs is None else costs)
        self.total = 0
        self.counts: dict[str, int] = {}

    def cost(self, event: str) -> int:
        try:
            return self.costs[event]
        except KeyError:
            raise CostError(f"unknown cost event {event!r}") from None

    def charge(self, event: str) -> int:
        units = self.cost(event)
        self.total += units
        self.counts[event] = self.counts.get(event, 0) + 1
        return units


def cost_meter(event: str, meter: CostMeter | None = None) -> int:
    return (meter or CostMeter()).cost(event)


# -- ledger -----------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    time: int
    contract_id: bytes
    kind: str
    amounts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "time": self.time,
                "contract": self.contract_id.hex(),
                "kind": self.kind,
                "amounts": {k: fmt(v) if isinstance(v, int) else v for k, v in self.amounts.items()},
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class Ledger:
    """Balances and escrows in integer micro-units.

    Total supply only changes through :meth:`fund`.
    """

    def __init__(self, fee_sink: str = FEE_POOL, meter: CostMeter | None = None):
        self.balances: dict[str, int] = {}
        self.escrows: dict[tuple[bytes, str], int] = {}
        self.settled_claims: set[bytes] = set()
        self.events: list[Event] = []
        self.fee_sink = fee_sink
        self.meter = meter or CostMeter()
        self.minted = 0

    def balance(self, party: str) -> int:
        return self.balances.get(party, 0)

    def escrowed(self, contract_id: bytes, purpose: str) -> int:
        return self.escrows.get((contract_id, purpose), 0)

    @property
    def total_supply(self) -> int:
        return sum(self.balances.values()) + sum(self.escrows.values())

    def fund(self, party: str, amount: int) -> None:
        if amount < 0:
            raise LedgerError("cannot fund a negative amount")
        self.balances[party] = self.balance(party) + amount
        self.minted += amount

    def transfer(self, src: str, dst: str, amount: int) -> None:
        if amount < 0:
            raise LedgerError("negative transfer")
        if self.balance(src) < amount:
            raise LedgerError(f"{src} cannot cover {fmt(amount)}")
        self.balances[src] = self.balance(src) - amount
        self.balances[dst] = self.balance(dst) + amount

    def lock(self, contract_id: bytes, purpose: str, party: str, amount: int) -> None:
        if self.balance(party) < amount:
            raise LedgerError(f"{party} cannot cover {fmt(amount)}")
        self.balances[party] = self.balance(party) - amount
        key = (contract_id, purpose)
        self.escrows[key] = self.escrows.get(key, 0) + amount

    def release(self, contract_id: bytes, purpose: str, party: str, amount: int | None = None) -> int:
        """Pay out of an escrow (everything by default); returns the amount paid."""
        key = (contract_id, purpose)
        held = self.escrows.get(key, 0)
        amount = held if amount is None else amount
        if amount > held:
            raise LedgerError(f"escrow {purpose} holds only {fmt(held)}")
        if held - amount:
            self.escrows[key] = held - amount
        else:
            self.escrows.pop(key, None)
        self.balances[party] = self.balance(party) + amount
        return amount

    def emit(self, time: int, contract_id: bytes, kind: str, **amounts) -> None:
        self.events.append(Event(time, contract_id, kind, amounts))

    def event_lines(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def snapshot(self) -> tuple:
        """Comparable copy of the full ledger state (atomicity checks)."""
        return (
            dict(self.balances),
            dict(self.escrows),
            set(self.settled_claims),
            len(self.events),
            self.meter.total,
        )


# -- agreement --------------------------------------------------------------


def account(public_key: bytes) -> str:
    return public_key.hex()


def digest_message(d: Digest) -> bytes:
    """Canonical signed message: 32-byte root followed by height as u32 BE."""
    return d.root + struct.pack(">I", d.height)


@dataclass(frozen=True)
class Terms:
    """Economic terms of a storage agreement; amounts in micro-units."""

    duration: int
    premium: int
    delivery_window: int
    compensation: int
    fee_base: int = 0
    fee_per_byte: int = 0
    per_request_fee: int = 0
    max_requests: int = 0
    refund_premium_on_default: bool = True
    nonce: int = 0

    def __post_init__(self) -> None:
        for name in ("duration", "premium", "delivery_window", "compensation", "fee_base",
                     "fee_per_byte", "per_request_fee", "max_requests", "nonce"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class Agreement:
    contract_id: bytes
    terms: Terms
    digest: Digest
    segment_size: int
    padded_segment_count: int
    client_pk: bytes
    provider_pk: bytes
    client_sig: bytes = b""
    provider_sig: bytes = b""

    @property
    def client(self) -> str:
        return account(self.client_pk)

    @property
    def provider(self) -> str:
        return account(self.provider_pk)

    def signatures_valid(self) -> bool:
        msg = digest_message(self.digest)
        try:
            return verify_sig(self.client_pk, msg, self.client_sig) and verify_sig(
                self.provider_pk, msg, self.provider_sig
            )
        except ValueError:
            return False

    def encode(self) -> bytes:
        return encode_agreement(self)


_AGREEMENT_HEAD = ">4sB32s32s32s32sI"
_AGREEMENT_NUMS = ">" + "Q" * 11 + "B"


def encode_agreement(a: Agreement) -> bytes:
    t = a.terms
    head = struct.pack(
        _AGREEMENT_HEAD, b"AGRM", 1, a.contract_id, a.client_pk, a.provider_pk, a.digest.root, a.digest.height
    )
    nums = struct.pack(
        _AGREEMENT_NUMS,
        t.duration, t.premium, t.delivery_window, t.compensation, a.segment_size, a.padded_segment_count,
        t.fee_base, t.fee_per_byte, t.per_request_fee, t.max_requests, t.nonce, int(t.refund_premium_on_default),
    )
    sigs = struct.pack(">H", len(a.client_sig)) + a.client_sig + struct.pack(">H", len(a.provider_sig)) + a.provider_sig
    return head + nums + sigs


def decode_agreement(blob: bytes) -> Agreement:
    try:
        n_head = struct.calcsize(_AGREEMENT_HEAD)
        n_nums = struct.calcsize(_AGREEMENT_NUMS)
        magic, version, cid, cpk, ppk, root, height = struct.unpack_from(_AGREEMENT_HEAD, blob)
        if magic != b"AGRM" or version != 1:
            raise ValueError("bad agreement header")
        nums = struct.unpack_from(_AGREEMENT_NUMS, blob, n_head)
        pos = n_head + n_nums
        sigs = []
        for _ in range(2):
            (n,) = struct.unpack_from(">H", blob, pos)
            sigs.append(bytes(blob[pos + 2:pos + 2 + n]))
            if len(sigs[-1]) != n:
                raise ValueError("truncated signature")
            pos += 2 + n
        if pos != len(blob):
            raise ValueError("trailing bytes")
    except struct.error as exc:
        raise ValueError(f"malformed agreement: {exc}") from None
    dur, prem, win, comp, sz, m, fb, fpb, prf, maxr, nonce, refund = nums
    terms = Terms(dur, prem, win, comp, fb, fpb, prf, maxr, bool(refund), nonce)
    return Agreement(cid, terms, Digest(root, height), sz, m, cpk, ppk, sigs[0], sigs[1])


def make_contract_id(client_pk: bytes, provider_pk: bytes, d: Digest, nonce: int) -> bytes:
    return hashlib.sha256(b"contract" + client_pk + provider_pk + digest_message(d) + struct.pack(">Q", nonce)).digest()


@dataclass(frozen=True)
class Offer:
    """What the client hands the provider: ``(d, h, Sign(sk_c, d || h))`` plus terms."""

    digest: Digest
    segment_size: int
    padded_segment_count: int
    client_pk: bytes
    client_sig: bytes
    terms: Terms


def client_offer(client_kp: KeyPair, data: bytes, sz: int, terms: Terms) -> Offer:
    d, tree = merkle.setup(data, sz)
    return Offer(d, sz, tree.padded_segment_count, client_kp.public, client_kp.sign(digest_message(d)), terms)


def provider_countersign(offer: Offer, provider_kp: KeyPair, provider_data: bytes) -> Agreement:
    d, _ = merkle.setup(provider_data, offer.segment_size)
    if d != offer.digest:
        raise HandshakeAbort("provider digest does not match the client's")
    msg = digest_message(d)
    if not verify_sig(offer.client_pk, msg, offer.client_sig):
        raise SignatureRejected("client signature over (d, h) is invalid")
    cid = make_contract_id(offer.client_pk, provider_kp.public, d, offer.terms.nonce)
    return Agreement(
        cid, offer.terms, d, offer.segment_size, offer.padded_segment_count,
        offer.client_pk, provider_kp.public, offer.client_sig, provider_kp.sign(msg),
    )


def handshake(
    client_kp: KeyPair,
    provider_kp: KeyPair,
    data: bytes,
    sz: int,
    terms: Terms,
    provider_data: bytes | None = None,
) -> Agreement:
    """Client signs the digest, provider recomputes it on its own copy and countersigns."""
    offer = client_offer(client_kp, data, sz, terms)
    return provider_countersign(offer, provider_kp, data if provider_data is None else provider_data)


# -- state machine ----------------------------------------------------------


class Phase(enum.Enum):
    DRAFT = "Draft"
    ACTIVE = "Active"
    CHALLENGE_PENDING = "ChallengePending"
    SETTLED = "Settled"
    DEFAULTED = "Defaulted"


LEGAL_TRANSITIONS = {
    (Phase.DRAFT, Phase.ACTIVE),
    (Phase.ACTIVE, Phase.CHALLENGE_PENDING),
    (Phase.CHALLENGE_PENDING, Phase.ACTIVE),
    (Phase.CHALLENGE_PENDING, Phase.DEFAULTED),
    (Phase.ACTIVE, Phase.SETTLED),
}


@dataclass(frozen=True)
class ContractState:
    contract_id: bytes
    phase: Phase = Phase.DRAFT
    clock: int = 0
    start: int = 0
    challenge: int | None = None
    deadline: int | None = None
    compensation_paid: bool = False

    def _to(self, phase: Phase, **changes) -> ContractState:
        if (self.phase, phase) not in LEGAL_TRANSITIONS:
            raise StateError(f"illegal transition {self.phase.value} -> {phase.value}")
        return replace(self, phase=phase, **changes)


@dataclass(frozen=True)
class ForwardRecord:
    """Segments the oracle relays to the client after an accepted proof."""

    contract_id: bytes
    challenge: int
    time: int
    segments: tuple[Segment, ...]


def advance(state: ContractState, now: int) -> ContractState:
    if now < state.clock:
        raise StateError("the clock never runs backwards")
    return replace(state, clock=now)


def activate(agreement: Agreement, ledger: Ledger, now: int = 0) -> ContractState:
    if not agreement.signatures_valid():
        raise ActivationError("agreement signatures do not verify")
    t = agreement.terms
    fee_escrow = t.per_request_fee * t.max_requests
    if ledger.balance(agreement.client) < t.premium + fee_escrow:
        raise ActivationError("client cannot fund the premium")
    if ledger.balance(agreement.provider) < t.compensation:
        raise ActivationError("provider cannot fund the collateral")
    if any(key[0] == agreement.contract_id for key in ledger.escrows):
        raise ActivationError("contract already has escrowed funds")

    cid = agreement.contract_id
    ledger.lock(cid, PREMIUM, agreement.client, t.premium)
    ledger.lock(cid, COLLATERAL, agreement.provider, t.compensation)
    if fee_escrow:
        ledger.lock(cid, REQUEST_FEES, agreement.client, fee_escrow)
    ledger.meter.charge("record_task")
    ledger.emit(now, cid, "activate", premium=t.premium, collateral=t.compensation, request_fees=fee_escrow)
    return ContractState(cid, clock=now, start=now)._to(Phase.ACTIVE)


def challenge_fee(agreement: Agreement, c: int) -> int:
    """Base fee plus a per-byte charge on every segment under node ``c``."""
    m = agreement.padded_segment_count
    if not isinstance(c, int) or not 0 <= c <= 2 * m - 2:
        raise merkle.InvalidChallenge(f"challenge {c!r} outside [0, {2 * m - 2}]")
    leaves = len(merkle.leaf_range(c, agreement.digest.height))
    return agreement.terms.fee_base + agreement.terms.fee_per_byte * leaves * agreement.segment_size


def challenge_message(contract_id: bytes, c: int, now: int) -> bytes:
    return b"challenge" + contract_id + struct.pack(">QQ", c, now)


def sign_challenge(client_kp: KeyPair, state: ContractState, c: int) -> bytes:
    return sign(client_kp.secret, challenge_message(state.contract_id, c, state.clock))


def submit_challenge(
    state: ContractState, agreement: Agreement, ledger: Ledger, c: int, client_sig: bytes
) -> ContractState:
    if state.phase is not Phase.ACTIVE:
        raise StateError(f"cannot challenge in phase {state.phase.value}")
    fee = challenge_fee(agreement, c)
    try:
        ok = verify_sig(agreement.client_pk, challenge_message(state.contract_id, c, state.clock), client_sig)
    except ValueError:
        ok = False
    if not ok:
        raise SignatureRejected("challenge not signed by the client")
    if ledger.balance(agreement.client) < fee:
        raise LedgerError("client cannot pay the challenge fee")

    ledger.transfer(agreement.client, ledger.fee_sink, fee)
    ledger.meter.charge("challenge")
    deadline = state.clock + agreement.terms.delivery_window
    ledger.emit(state.clock, state.contract_id, "challenge", fee=fee, node=str(c), deadline=str(deadline))
    return state._to(Phase.CHALLENGE_PENDING, challenge=c, deadline=deadline)


def _default(state: ContractState, agreement: Agreement, ledger: Ledger, reason: str) -> ContractState:
    cid = state.contract_id
    paid = ledger.release(cid, COLLATERAL, agreement.client)
    refund = ledger.release(cid, PREMIUM, agreement.client) if agreement.terms.refund_premium_on_default else 0
    fees = ledger.release(cid, REQUEST_FEES, agreement.client)
    ledger.emit(state.clock, cid, "default", compensation=paid, premium_refund=refund, request_fee_refund=fees,
                reason=reason)
    return state._to(Phase.DEFAULTED, challenge=None, deadline=None, compensation_paid=True)


def resolve_challenge(
    state: ContractState, agreement: Agreement, ledger: Ledger, proof: StorageProof | None
) -> tuple[ContractState, ForwardRecord | None]:
    """Oracle step: check the proof against the recorded digest, or time out.

    ``proof=None`` means nothing arrived; that is only resolvable once the
    clock is past the deadline.
    """
    if state.phase is not Phase.CHALLENGE_PENDING:
        raise StateError(f"no pending challenge (phase {state.phase.value})")
    late = state.clock > state.deadline
    if proof is None:
        if not late:
            raise StateError("deadline has not passed yet")
        return _default(state, agreement, ledger, "timeout"), None
    if late:
        return _default(state, agreement, ledger, "late proof"), None
    if proof.challenge != state.challenge or not merkle.verify(agreement.digest, state.challenge, proof):
        return _default(state, agreement, ledger, "invalid proof"), None

    forward = ForwardRecord(state.contract_id, state.challenge, state.clock, proof.segments)
    ledger.emit(state.clock, state.contract_id, "proof_accepted", node=str(state.challenge),
                segments=str(len(proof.segments)))
    return state._to(Phase.ACTIVE, challenge=None, deadline=None), forward


def settle(
    state: ContractState, agreement: Agreement, ledger: Ledger, billing_claim=None
) -> ContractState:
    """Pay out a completed contract; optionally cash in the request-billing witness."""
    from .billing import settle_requests

    if state.phase is not Phase.ACTIVE:
        raise StateError(f"cannot settle from phase {state.phase.value}")
    if state.clock < state.start + agreement.terms.duration:
        raise StateError("contract term has not elapsed")

    cid = state.contract_id
    billed = settle_requests(billing_claim, agreement, ledger, now=state.clock)
    premium = ledger.release(cid, PREMIUM, agreement.provider)
    collateral = ledger.release(cid, COLLATERAL, agreement.provider)
    leftover = ledger.release(cid, REQUEST_FEES, agreement.client)
    ledger.emit(state.clock, cid, "settle", premium=premium, collateral_returned=collateral,
                request_fees=billed, request_fee_refund=leftover)
    return state._to(Phase.SETTLED)

