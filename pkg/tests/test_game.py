import random
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsnmech import game
from dsnmech.game import (
    CHALLENGE,
    NO_CHALLENGE,
    PROOF,
    SHARE,
    GameParams,
    LeafPayoffs,
    Profile,
    build_payoffs,
    check_constraints,
    expected_challenge_utility,
    repeated_utility,
    solve_spe,
)
from oracles import brute_force_spe

D = Decimal
EXAMPLE = GameParams.example()


def as_oracle(profile: Profile):
    prov = (profile.provider == SHARE, profile.prove_after_share == PROOF, profile.prove_after_noshare == PROOF)
    cli = (profile.client_after_share == CHALLENGE, profile.client_after_noshare == CHALLENGE)
    return prov, cli


def test_example_parameters():
    assert (EXAMPLE.compensation, EXAMPLE.data_loss_cost, EXAMPLE.read_value, EXAMPLE.challenge_fee) == (1000, 500, 5, 1)
    assert (EXAMPLE.proof_cost, EXAMPLE.share_benefit, EXAMPLE.noshare_benefit) == (3, 1, 2)


def test_build_payoffs_example():
    pay = build_payoffs(EXAMPLE)
    assert pay.S == (-2, -999, 1, 2, -998, -1)
    assert pay.C == (4, 499, 5, -500, 499, 4)


def test_build_payoffs_zero():
    pay = build_payoffs(GameParams(0, 0, 0, 0, 0, 0, 0))
    assert set(pay.S) == {0} and set(pay.C) == {0}


def test_no_penalty_no_proof_cost_symmetry():
    pay = build_payoffs(EXAMPLE.replace(compensation=0, proof_cost=0))
    assert pay.S[1] == pay.S[2]
    assert pay.S[4] == pay.S[3]


def test_params_validation():
    with pytest.raises(ValueError):
        EXAMPLE.replace(loss_prob=D("1.5"))
    with pytest.raises(ValueError):
        EXAMPLE.replace(compensation=-1)
    with pytest.raises(ValueError):
        LeafPayoffs((1, 2), (3, 4))


def test_example_spe():
    result = solve_spe(build_payoffs(EXAMPLE), EXAMPLE)
    assert result.equilibrium_path == 3
    assert result.path_actions == (SHARE, NO_CHALLENGE)
    assert result.spe_profile == Profile(SHARE, NO_CHALLENGE, CHALLENGE, PROOF, PROOF)
    assert result.payoffs_on_path == (1, 5)
    assert result.C_c == 4
    prov, cli = as_oracle(result.spe_profile)
    pay = build_payoffs(EXAMPLE)
    spes = brute_force_spe(pay.S, pay.C)
    assert [(p, c) for p, c, _ in spes] == [(prov, cli)]


def test_all_ties_pick_leaf_3():
    result = solve_spe(LeafPayoffs((0,) * 6, (7,) * 6))
    assert result.equilibrium_path == 3


def test_huge_challenge_fee_means_noshare():
    params = EXAMPLE.replace(challenge_fee=2000)
    pay = build_payoffs(params)
    result = solve_spe(pay)
    assert result.spe_profile.client_after_noshare == NO_CHALLENGE
    assert result.spe_profile.client_after_share == NO_CHALLENGE
    assert result.equilibrium_path == 4
    assert {leaf for _, _, leaf in brute_force_spe(pay.S, pay.C)} == {4}


def test_check_constraints_example():
    report = check_constraints(EXAMPLE, 0)
    assert report.all_pass
    assert report.C_c == 4
    assert report.spe_guaranteed


def test_unchallenged_check_fails_without_proof_cost():
    report = check_constraints(EXAMPLE.replace(proof_cost=0, noshare_benefit=1), 0)
    assert not report["unchallenged_beats_proof"].passed


def test_frivolous_check_fails_without_fee():
    report = check_constraints(EXAMPLE.replace(challenge_fee=0), 0)
    assert not report["no_frivolous_challenge"].passed


def test_margin_tightens():
    assert check_constraints(EXAMPLE, 2).all_pass
    # S3 - S1 = 3, so a margin of 3 breaks the strict reading
    assert not check_constraints(EXAMPLE, 3)["unchallenged_beats_proof"].passed
    with pytest.raises(ValueError):
        check_constraints(EXAMPLE, -1)


def test_repeated_utility():
    assert repeated_utility(EXAMPLE, 10, 3) == (10, 50)
    assert repeated_utility(EXAMPLE, 10, Profile()) == (10, 50)
    assert repeated_utility(EXAMPLE, 1, 6) == build_payoffs(EXAMPLE).at(6)
    assert repeated_utility(GameParams(0, 0, 0, 0, 0, 0, 0), 7, 1) == (0, 0)
    with pytest.raises(ValueError):
        repeated_utility(EXAMPLE, 0, 3)


def test_load_params_round_trip():
    assert game.load_params(EXAMPLE.to_config()) == EXAMPLE
    assert game.load_params("compensation = 1000\ndata_loss_cost=500\nread_value=5\nchallenge_fee=1\n"
                            "proof_cost=3\nshare_benefit=1\nnoshare_benefit=2\n") == EXAMPLE
    with pytest.raises(ValueError):
        game.load_params("[game]\nbogus = 1\n")


def test_solve_text_output():
    text = solve_spe(build_payoffs(EXAMPLE), EXAMPLE).to_text()
    assert "SPE = {Share, NoChallenge}" in text
    assert "equilibrium_leaf = 3" in text


# -- properties ------------------------------------------------------------

payoff = st.integers(min_value=-50, max_value=50)


@settings(max_examples=400, deadline=None)
@given(st.lists(payoff, min_size=6, max_size=6), st.lists(payoff, min_size=6, max_size=6))
def test_solver_is_a_subgame_perfect_profile(S, C):
    """Ties allowed: the solver's profile must be among the brute-force SPE set."""
    result = solve_spe(LeafPayoffs(tuple(S), tuple(C)))
    spes = brute_force_spe(S, C)
    assert as_oracle(result.spe_profile) in [(p, c) for p, c, _ in spes]


def test_solver_matches_enumeration_on_generic_payoffs():
    rng = random.Random(7)
    for _ in range(2000):
        S = [rng.uniform(-100, 100) for _ in range(6)]
        C = [rng.uniform(-100, 100) for _ in range(6)]
        result = solve_spe(LeafPayoffs(tuple(S), tuple(C)))
        (prov, cli, leaf), = brute_force_spe(S, C)
        assert as_oracle(result.spe_profile) == (prov, cli)
        assert result.payoffs_on_path == (S[leaf - 1], C[leaf - 1])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(payoff, min_size=6, max_size=6),
    st.lists(payoff, min_size=6, max_size=6),
    st.integers(min_value=-1000, max_value=1000),
    st.integers(min_value=1, max_value=50),
)
def test_argmax_invariance(S, C, shift, scale):
    base = solve_spe(LeafPayoffs(tuple(S), tuple(C))).spe_profile
    shifted = solve_spe(LeafPayoffs(tuple(s + shift for s in S), tuple(c + shift for c in C))).spe_profile
    scaled = solve_spe(LeafPayoffs(tuple(s * scale for s in S), tuple(c * scale for c in C))).spe_profile
    assert base == shifted == scaled


@given(st.decimals(min_value=0, max_value=1, places=3))
def test_expected_challenge_utility_is_affine_in_loss_prob(prob):
    p = EXAMPLE.replace(loss_prob=prob)
    c5 = p.compensation - p.data_loss_cost
    assert expected_challenge_utility(p) == expected_challenge_utility(EXAMPLE) + prob * (c5 - p.read_value)
    assert expected_challenge_utility(EXAMPLE.replace(loss_prob=0)) == p.read_value - p.challenge_fee
    assert expected_challenge_utility(EXAMPLE.replace(loss_prob=1)) == c5 - p.challenge_fee


def sample_params(rng: random.Random) -> GameParams:
    return GameParams(
        compensation=rng.randint(0, 2000),
        data_loss_cost=rng.randint(0, 1000),
        read_value=rng.randint(0, 50),
        challenge_fee=rng.randint(0, 50),
        proof_cost=rng.randint(0, 20),
        share_benefit=rng.randint(-10, 20),
        noshare_benefit=rng.randint(-10, 20),
        loss_prob=D(rng.randint(0, 100)) / 100,
    )


def test_leaf_3_with_the_two_extra_conditions():
    """All checks plus S3 > S6 and C6 > C4: the equilibrium is always leaf 3."""
    rng = random.Random(11)
    hits = 0
    while hits < 2000:
        p = sample_params(rng)
        report = check_constraints(p, 0)
        if not report.spe_guaranteed:
            continue
        hits += 1
        assert solve_spe(build_payoffs(p)).equilibrium_path == 3


def test_checks_alone_admit_a_noshare_equilibrium():
    # b_ns - cp > b_s: proving after NoShare still beats sharing
    p = EXAMPLE.replace(noshare_benefit=10)
    report = check_constraints(p, 0)
    assert report.all_pass
    assert not report["share_beats_deviation"].passed
    assert solve_spe(build_payoffs(p)).equilibrium_path == 6
