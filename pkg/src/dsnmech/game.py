"""The storage contract as a three-stage extensive-form game.

Stage 1: provider Share / NoShare.  Stage 2: client Challenge / NoChallenge.
Stage 3 (only if challenged): provider Proof / NoProof.  Six terminals::

    1 = Share,   Challenge,   Proof        4 = NoShare, NoChallenge
    2 = Share,   Challenge,   NoProof      5 = NoShare, Challenge,   NoProof
    3 = Share,   NoChallenge               6 = NoShare, Challenge,   Proof
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from decimal import Decimal
from typing import Any

SHARE, NO_SHARE = "Share", "NoShare"
CHALLENGE, NO_CHALLENGE = "Challenge", "NoChallenge"
PROOF, NO_PROOF = "Proof", "NoProof"

EQUILIBRIUM_LEAF = 3

# (share, challenge, proof) -> leaf; proof is None when not challenged
_LEAVES = {
    (True, True, True): 1,
    (True, True, False): 2,
    (True, False, None): 3,
    (False, False, None): 4,
    (False, True, False): 5,
    (False, True, True): 6,
}
LEAF_ACTIONS = {leaf: key for key, leaf in _LEAVES.items()}


def leaf_of(share: bool, challenge: bool, proof: bool | None = None) -> int:
    return _LEAVES[(share, challenge, proof if challenge else None)]


def _dec(value: Any) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        value = repr(value)
    return Decimal(value)


@dataclass(frozen=True)
class GameParams:
    compensation: Decimal  # K
    data_loss_cost: Decimal  # L
    read_value: Decimal  # V
    challenge_fee: Decimal  # X
    proof_cost: Decimal  # cp
    share_benefit: Decimal  # b_s
    noshare_benefit: Decimal  # b_ns
    loss_prob: Decimal = Decimal(0)  # P

    def __post_init__(self) -> None:
        for f in fields(self):
            object.__setattr__(self, f.name, _dec(getattr(self, f.name)))
        for name in ("compensation", "data_loss_cost", "read_value", "challenge_fee", "proof_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 <= self.loss_prob <= 1:
            raise ValueError("loss_prob must lie in [0, 1]")

    @classmethod
    def example(cls) -> GameParams:
        """The worked example: compensation 1000, loss 500, read value 5."""
        return cls(1000, 500, 5, 1, 3, 1, 2, 0)

    def replace(self, **changes: Any) -> GameParams:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return GameParams(**values)

    def to_config(self) -> str:
        lines = ["[game]"] + [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def load_params(text: str, section: str = "game") -> GameParams:
    """Parse ``key = value`` lines; the ``[game]`` header is optional."""
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = f"[{section}]\n{text}"
    parser.read_string(text)
    if not parser.has_section(section):
        raise ValueError(f"missing [{section}] section")
    known = {f.name for f in fields(GameParams)}
    raw = dict(parser.items(section))
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown game parameters: {sorted(unknown)}")
    try:
        return GameParams(**{k: Decimal(v) for k, v in raw.items()})
    except TypeError as exc:
        raise ValueError(str(exc)) from None


@dataclass(frozen=True)
class LeafPayoffs:
    S: tuple  # provider payoffs, S[0] is leaf 1
    C: tuple  # client payoffs

    def __post_init__(self) -> None:
        if len(self.S) != 6 or len(self.C) != 6:
            raise ValueError("need exactly six provider and six client payoffs")

    def at(self, leaf: int) -> tuple:
        return self.S[leaf - 1], self.C[leaf - 1]


def build_payoffs(p: GameParams) -> LeafPayoffs:
    K, L, V, X = p.compensation, p.data_loss_cost, p.read_value, p.challenge_fee
    cp, bs, bns = p.proof_cost, p.share_benefit, p.noshare_benefit
    S = (bs - cp, bs - K, bs, bns, bns - K, bns - cp)
    C = (V - X, K - L - X, V, -L, K - L - X, V - X)
    return LeafPayoffs(S, C)


@dataclass(frozen=True)
class Profile:
    """A pure strategy profile: one action at each of the five decision nodes."""

    provider: str = SHARE
    client_after_share: str = NO_CHALLENGE
    client_after_noshare: str = CHALLENGE
    prove_after_share: str = PROOF
    prove_after_noshare: str = PROOF

    def path(self) -> int:
        share = self.provider == SHARE
        challenge = (self.client_after_share if share else self.client_after_noshare) == CHALLENGE
        proof = (self.prove_after_share if share else self.prove_after_noshare) == PROOF
        return leaf_of(share, challenge, proof)

    def describe(self) -> str:
        return (
            f"{{{self.provider}; {self.client_after_share}-after-Share, "
            f"{self.client_after_noshare}-after-NoShare; "
            f"{self.prove_after_share} after Share+Challenge, {self.prove_after_noshare} after NoShare+Challenge}}"
        )


@dataclass(frozen=True)
class SolveResult:
    spe_profile: Profile
    equilibrium_path: int
    payoffs_on_path: tuple
    C_c: Decimal | None = None

    @property
    def path_actions(self) -> tuple[str, str]:
        share, challenge, _ = LEAF_ACTIONS[self.equilibrium_path]
        return (SHARE if share else NO_SHARE, CHALLENGE if challenge else NO_CHALLENGE)

    def to_text(self) -> str:
        s, c = self.payoffs_on_path
        lines = [
            f"SPE = {{{', '.join(self.path_actions)}}}",
            f"profile = {self.spe_profile.describe()}",
            f"equilibrium_leaf = {self.equilibrium_path}",
            f"provider_payoff = {s}",
            f"client_payoff = {c}",
        ]
        if self.C_c is not None:
            lines.append(f"expected_challenge_utility = {self.C_c}")
        return "\n".join(lines) + "\n"


def solve_spe(payoffs: LeafPayoffs, params: GameParams | None = None) -> SolveResult:
    """Backward induction; ties go to Share, NoChallenge and Proof."""
    S, C = payoffs.S, payoffs.C

    # stage 3: Proof unless NoProof is strictly better
    prove_s = PROOF if S[0] >= S[1] else NO_PROOF
    prove_ns = PROOF if S[5] >= S[4] else NO_PROOF
    leaf_sc = 1 if prove_s == PROOF else 2
    leaf_nsc = 6 if prove_ns == PROOF else 5

    # stage 2: NoChallenge unless Challenge is strictly better
    client_s = CHALLENGE if C[leaf_sc - 1] > C[2] else NO_CHALLENGE
    client_ns = CHALLENGE if C[leaf_nsc - 1] > C[3] else NO_CHALLENGE
    after_share = leaf_sc if client_s == CHALLENGE else 3
    after_noshare = leaf_nsc if client_ns == CHALLENGE else 4

    provider = SHARE if S[after_share - 1] >= S[after_noshare - 1] else NO_SHARE
    leaf = after_share if provider == SHARE else after_noshare
    profile = Profile(provider, client_s, client_ns, prove_s, prove_ns)
    c_c = expected_challenge_utility(params) if params is not None else None
    return SolveResult(profile, leaf, payoffs.at(leaf), c_c)


def expected_challenge_utility(p: GameParams) -> Decimal:
    """Client's expected utility from challenging an unshared request.

    The loss branch uses K - L; the challenge fee is subtracted once.
    """
    loss_branch = p.compensation - p.data_loss_cost
    return p.loss_prob * loss_branch + (1 - p.loss_prob) * p.read_value - p.challenge_fee


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ConstraintReport:
    checks: tuple[ConstraintCheck, ...]
    C_c: Decimal
    # conditions the SPE also needs but the checks above do not imply
    diagnostics: tuple[ConstraintCheck, ...] = ()

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def spe_guaranteed(self) -> bool:
        return self.all_pass and all(d.passed for d in self.diagnostics)

    def __getitem__(self, name: str) -> ConstraintCheck:
        for check in self.checks + self.diagnostics:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"{c.name}: {'pass' if c.passed else 'FAIL'}  ({c.detail})" for c in self.checks]
        lines.append(f"C_c = {self.C_c}")
        for d in self.diagnostics:
            lines.append(f"[diagnostic] {d.name}: {'pass' if d.passed else 'FAIL'}  ({d.detail})")
        lines.append("all constraints pass" if self.all_pass else "constraints violated")
        return "\n".join(lines) + "\n"


def check_constraints(p: GameParams, margin: Decimal | int = 0) -> ConstraintReport:
    """Evaluate the incentive constraints; ``a >> b`` means ``a - b > margin``."""
    margin = _dec(margin)
    if margin < 0:
        raise ValueError("margin must be non-negative")
    pay = build_payoffs(p)
    S1, S2, S3, S4, S5, S6 = pay.S
    C1, C2, C3, C4, C5, C6 = pay.C

    def gg(a: Decimal, b: Decimal) -> bool:
        return a - b > margin

    lo, hi = min(S1, S3, S4, S6), max(S2, S5)
    c_c = expected_challenge_utility(p)
    checks = (
        ConstraintCheck("no_proof_worst", gg(lo, hi), f"min(S1,S3,S4,S6)={lo} >> max(S2,S5)={hi}"),
        ConstraintCheck("proof_beats_default", gg(S1, S2) and gg(S6, S5), f"S1={S1} >> S2={S2}, S6={S6} >> S5={S5}"),
        ConstraintCheck("unchallenged_beats_proof", gg(S3, S1) and gg(S4, S6), f"S3={S3} >> S1={S1}, S4={S4} >> S6={S6}"),
        ConstraintCheck("no_frivolous_challenge", C3 > C1, f"C3={C3} > C1={C1}"),
        ConstraintCheck("challenge_pays", c_c > 0 and c_c > C4, f"C_c={c_c} > 0 and > C4={C4}"),
    )
    diagnostics = (
        ConstraintCheck("share_beats_deviation", S3 > S6, f"S3={S3} > S6={S6}"),
        ConstraintCheck("challenge_credible", C6 > C4, f"C6={C6} > C4={C4}"),
    )
    return ConstraintReport(checks, c_c, diagnostics)


def repeated_utility(p: GameParams, rounds: int, profile: Profile | int) -> tuple[Decimal, Decimal]:
    """Undiscounted totals for ``rounds`` plays of a stationary profile."""
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    leaf = profile if isinstance(profile, int) else profile.path()
    s, c = build_payoffs(p).at(leaf)
    return rounds * s, rounds * c
