"""Pay-per-request billing with client-signed, monotonically counted requests.

The client signs ``contract_id || counter`` for every data request.  The
provider keeps only the highest-counter request it has seen and presents
that single witness when the contract settles.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .contract import REQUEST_FEES, Agreement, ContractError, Ledger
from .crypto import SIG_SIZE, KeyPair, verify_sig


class RequestError(ContractError):
    """Client tried to sign a request with a non-increasing counter."""


class RequestRejected(ContractError):
    """Provider refused a request (bad signature, stale counter, wrong contract)."""


class BillingRejected(ContractError):
    """Settlement claim refused; nothing was transferred."""


def request_message(contract_id: bytes, counter: int) -> bytes:
    return contract_id + struct.pack(">Q", counter)


@dataclass(frozen=True)
class SignedRequest:
    contract_id: bytes
    counter: int
    client_sig: bytes

    def encode(self) -> bytes:
        return request_message(self.contract_id, self.counter) + self.client_sig

    def hex(self) -> str:
        return self.encode().hex()

    @classmethod
    def decode(cls, blob: bytes) -> SignedRequest:
        if len(blob) != 32 + 8 + SIG_SIZE:
            raise ValueError(f"signed request must be {32 + 8 + SIG_SIZE} bytes")
        (counter,) = struct.unpack(">Q", blob[32:40])
        return cls(bytes(blob[:32]), counter, bytes(blob[40:]))

    def verifies(self, client_pk: bytes) -> bool:
        try:
            return verify_sig(client_pk, request_message(self.contract_id, self.counter), self.client_sig)
        except ValueError:
            return False


def make_request(client_kp: KeyPair, contract_id: bytes, counter: int, previous: int = 0) -> SignedRequest:
    if counter <= previous:
        raise RequestError(f"counter {counter} does not exceed previous {previous}")
    return SignedRequest(contract_id, counter, client_kp.sign(request_message(contract_id, counter)))


class RequestSigner:
    """Client side: remembers the last counter used per contract."""

    def __init__(self, client_kp: KeyPair):
        self.client_kp = client_kp
        self.last: dict[bytes, int] = {}

    def issue(self, contract_id: bytes, counter: int | None = None) -> SignedRequest:
        previous = self.last.get(contract_id, 0)
        if counter is None:
            counter = previous + 1
        request = make_request(self.client_kp, contract_id, counter, previous)
        self.last[contract_id] = counter
        return request


def provider_accept(
    request: SignedRequest, agreement: Agreement, last_seen: SignedRequest | None
) -> SignedRequest:
    """Return the new cash-out witness, or raise ``RequestRejected``."""
    if request.contract_id != agreement.contract_id:
        raise RequestRejected("request is for another contract")
    if not request.verifies(agreement.client_pk):
        raise RequestRejected("bad client signature")
    floor = last_seen.counter if last_seen is not None else 0
    if request.counter <= floor:
        raise RequestRejected(f"stale counter {request.counter} (last seen {floor})")
    return request


def settle_requests(
    witness: SignedRequest | None, agreement: Agreement, ledger: Ledger, now: int = 0
) -> int:
    """Pay ``per_request_fee * witness.counter`` to the provider; returns the amount.

    Funds come from the prepaid request-fee escrow first, then the client's
    balance.  A contract can be billed once.
    """
    cid = agreement.contract_id
    if cid in ledger.settled_claims:
        raise BillingRejected("requests for this contract were already settled")
    counter = 0
    if witness is not None:
        if witness.contract_id != cid or witness.counter < 1 or not witness.verifies(agreement.client_pk):
            raise BillingRejected("witness does not verify")
        counter = witness.counter
    amount = agreement.terms.per_request_fee * counter
    escrow = ledger.escrowed(cid, REQUEST_FEES)
    from_escrow = min(amount, escrow)
    shortfall = amount - from_escrow
    if shortfall > ledger.balance(agreement.client):
        raise BillingRejected("client funds cannot cover the billed requests")

    ledger.release(cid, REQUEST_FEES, agreement.provider, from_escrow)
    if shortfall:
        ledger.transfer(agreement.client, agreement.provider, shortfall)
    ledger.settled_claims.add(cid)
    ledger.emit(now, cid, "bill_requests", amount=amount, counter=str(counter))
    return amount
