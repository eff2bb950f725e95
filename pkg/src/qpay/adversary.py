"""Double-spending attacks: one issued token, two committed cryptograms.

Attacks act position-wise (product strategies). The attacker's knowledge
matters: a malicious client (insider) knows its own MAC key and therefore
both candidate basis strings m0 and m1; a thief who intercepted the token
(outsider) knows neither and must choose measurements independently of
them. Built-in families:

    Split(q)            fraction q of positions split evenly between the two
                        tokens: each half is measured in that token's basis
                        (insider) or a guessed basis (outsider) and answered
                        only to its token; the remaining 1-q positions are
                        reported lost to both.
    Intermediate(theta) every position measured at one analyzer angle, the
                        single outcome reported to both tokens; theta=22.5deg
                        identifies the encoded bit of any of the four states
                        with probability cos^2(22.5deg) ~ 85.4%.
    ConflictAware(a, fill)  insider only: positions where m0 and m1 agree are
                        measured in the common basis and answered to both
                        (error-free); conflicting positions are measured at
                        the intermediate angle with fraction a, the rest are
                        either split between the tokens (fill=drop) or
                        answered with a coin toss (fill=guess).
    Mixture(...)        positions partitioned among sub-strategies by weight.

Multiphoton positions carry identically polarized copies, so an insider
measures one copy per basis and answers both tokens; the outsider families
treat them like single photons. Vacuum positions are always reported lost.

expected_rates returns the closed-form per-token (checked error, checked
loss) for each family; simulations must agree within binomial noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .itmac import BasisString
from .protocol import Cryptogram
from .quantum import (
    OUTCOME_NO_CLICK,
    ChannelModel,
    QuantumToken,
    measure_token,
    measure_token_at_angle,
)

INTERMEDIATE_ANGLE_DEG = 22.5


class Knowledge(Enum):
    INSIDER = "insider"  # knows the client token C, hence m0 and m1
    OUTSIDER = "outsider"  # no key material; ignores m0/m1 when measuring

    @classmethod
    def parse(cls, text: str) -> "Knowledge":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown knowledge model {text!r}") from None


@dataclass(frozen=True)
class Split:
    q: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("split fraction q must lie in [0, 1]")


@dataclass(frozen=True)
class Intermediate:
    angle_deg: float = INTERMEDIATE_ANGLE_DEG

    def __post_init__(self):
        if not 0.0 <= self.angle_deg < 90.0:
            raise ValueError("intermediate angle must lie in [0, 90) degrees")


FILL_DROP = "drop"
FILL_GUESS = "guess"


@dataclass(frozen=True)
class ConflictAware:
    intermediate_fraction: float = 0.0
    fill: str = FILL_DROP

    def __post_init__(self):
        if not 0.0 <= self.intermediate_fraction <= 1.0:
            raise ValueError("intermediate_fraction must lie in [0, 1]")
        if self.fill not in (FILL_DROP, FILL_GUESS):
            raise ValueError(f"fill must be '{FILL_DROP}' or '{FILL_GUESS}'")


@dataclass(frozen=True)
class Mixture:
    components: tuple[tuple["AttackStrategy", float], ...]

    def __post_init__(self):
        total = sum(w for _, w in self.components)
        if not self.components or abs(total - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if any(w < 0 for _, w in self.components):
            raise ValueError("mixture weights must be nonnegative")


AttackStrategy = Split | Intermediate | ConflictAware | Mixture


@dataclass
class DoubleSpendResult:
    """Two cryptograms from one token plus their oracle-verified rates."""

    crypt_0: Cryptogram
    crypt_1: Cryptogram
    claimed_loss_0: float
    realized_error_0: float
    claimed_loss_1: float
    realized_error_1: float

    def rates(self, which: int) -> tuple[float, float]:
        if which == 0:
            return self.realized_error_0, self.claimed_loss_0
        return self.realized_error_1, self.claimed_loss_1


def oracle_rates(token: QuantumToken, analyzer_bits: np.ndarray, outcomes: np.ndarray) -> tuple[float, float]:
    """(checked error, checked loss) against the token's true description."""
    checked = np.asarray(analyzer_bits, dtype=np.uint8) == token.bases
    n_checked = int(np.count_nonzero(checked))
    if n_checked == 0:
        return 0.0, 1.0
    noclick = outcomes == OUTCOME_NO_CLICK
    loss = float(np.count_nonzero(checked & noclick)) / n_checked
    compared = checked & ~noclick
    n_cmp = int(np.count_nonzero(compared))
    error = float(np.count_nonzero((outcomes != token.bits) & compared)) / n_cmp if n_cmp else 0.0
    return error, loss


def _apply_strategy(
    strategy: AttackStrategy,
    knowledge: Knowledge,
    token: QuantumToken,
    a0: np.ndarray,
    a1: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    out0: np.ndarray,
    out1: np.ndarray,
) -> None:
    n = len(token)
    multi = mask & (token.photons >= 2)
    if isinstance(strategy, Mixture):
        u = rng.random(n)
        lo = 0.0
        for comp, w in strategy.components:
            sub = mask & (u >= lo) & (u < lo + w)
            lo += w
            _apply_strategy(comp, knowledge, token, a0, a1, sub, rng, out0, out1)
        return
    if isinstance(strategy, Split):
        u = rng.random(n)
        ded0 = mask & (u < strategy.q / 2)
        ded1 = mask & (u >= strategy.q / 2) & (u < strategy.q)
        if knowledge is Knowledge.INSIDER:
            meas0 = measure_token(token, a0, rng)
            meas1 = measure_token(token, a1, rng)
            out0[ded0] = meas0[ded0]
            out1[ded1] = meas1[ded1]
            # extra copies answer the other token too
            out0[multi] = meas0[multi]
            out1[multi] = meas1[multi]
        else:
            guess = rng.integers(0, 2, size=n, dtype=np.uint8)
            meas = measure_token(token, guess, rng)
            out0[ded0] = meas[ded0]
            out1[ded1] = meas[ded1]
        return
    if isinstance(strategy, Intermediate):
        meas = measure_token_at_angle(token, strategy.angle_deg, rng)
        out0[mask] = meas[mask]
        out1[mask] = meas[mask]
        return
    if isinstance(strategy, ConflictAware):
        if knowledge is not Knowledge.INSIDER:
            raise ValueError("conflict-aware attacks require insider knowledge")
        meas0 = measure_token(token, a0, rng)
        meas1 = measure_token(token, a1, rng)
        agree = mask & (a0 == a1)
        conflict = mask & (a0 != a1)
        # agreement: one measurement in the common basis, reported to both
        out0[agree] = meas0[agree]
        out1[agree] = meas0[agree]
        # multiphoton conflicts: one copy per basis, both tokens served
        out0[conflict & multi] = meas0[conflict & multi]
        out1[conflict & multi] = meas1[conflict & multi]
        single_conflict = conflict & ~multi & (token.photons > 0)
        u = rng.random(n)
        inter = single_conflict & (u < strategy.intermediate_fraction)
        meas_mid = measure_token_at_angle(token, INTERMEDIATE_ANGLE_DEG, rng)
        out0[inter] = meas_mid[inter]
        out1[inter] = meas_mid[inter]
        rest = single_conflict & ~inter
        if strategy.fill == FILL_DROP:
            side = rng.random(n) < 0.5
            out0[rest & side] = meas0[rest & side]
            out1[rest & ~side] = meas1[rest & ~side]
        else:
            coin = rng.integers(0, 2, size=n, dtype=np.uint8)
            out0[rest] = coin[rest]
            out1[rest] = coin[rest]
        return
    raise TypeError(f"unknown strategy {type(strategy).__name__}")


def run_double_spend(
    strategy: AttackStrategy,
    knowledge: Knowledge,
    token: QuantumToken,
    m0: BasisString,
    m1: BasisString,
    rng: np.random.Generator,
    merchant_0: bytes = b"M0",
    merchant_1: bytes = b"M1",
) -> DoubleSpendResult:
    """Execute a position-wise attack, producing cryptograms for two merchants."""
    if m0.bits == m1.bits:
        raise ValueError("double spend needs two distinct basis strings")
    if len(token) % len(m0) != 0 or len(m0) != len(m1):
        raise ValueError("token length must be a multiple of the tag width")
    n_per_bit = len(token) // len(m0)
    a0 = np.repeat(m0.to_array(), n_per_bit)
    a1 = np.repeat(m1.to_array(), n_per_bit)
    out0 = np.full(len(token), OUTCOME_NO_CLICK, dtype=np.uint8)
    out1 = np.full(len(token), OUTCOME_NO_CLICK, dtype=np.uint8)
    mask = np.ones(len(token), dtype=bool)
    _apply_strategy(strategy, knowledge, token, a0, a1, mask, rng, out0, out1)
    err0, loss0 = oracle_rates(token, a0, out0)
    err1, loss1 = oracle_rates(token, a1, out1)
    return DoubleSpendResult(
        crypt_0=Cryptogram(token_id=token.token_id, merchant=merchant_0, outcomes=out0),
        crypt_1=Cryptogram(token_id=token.token_id, merchant=merchant_1, outcomes=out1),
        claimed_loss_0=loss0,
        realized_error_0=err0,
        claimed_loss_1=loss1,
        realized_error_1=err1,
    )


# ---------------------------------------------------------------------------
# Closed-form companions. All rates are per checked position of one token;
# the checked set is half of all positions, composed of vacuum v, multiphoton
# p and single photons s = 1 - v - p, with basis-averaged flip fbar.
# ---------------------------------------------------------------------------


def _angle_error(theta_deg: float, flip_hv: float, flip_da: float) -> float:
    """Checked error of reporting the outcome of one analyzer angle.

    Averaged over the four states; flip noise rotates the state by 90deg
    before the cos^2 law applies.
    """
    th = np.radians(theta_deg)
    e_hv = np.sin(th) ** 2
    e_da = np.sin(np.radians(45.0) - th) ** 2
    part_hv = (1 - flip_hv) * e_hv + flip_hv * (1 - e_hv)
    part_da = (1 - flip_da) * e_da + flip_da * (1 - e_da)
    return float(0.5 * part_hv + 0.5 * part_da)


def expected_rates(
    strategy: AttackStrategy,
    knowledge: Knowledge,
    channel: ChannelModel | None = None,
) -> tuple[float, float]:
    """Analytic (checked error, checked loss) for a built-in strategy."""
    ch = channel or ChannelModel()
    v, p = ch.loss_prob, ch.multi_prob
    s = 1.0 - v - p
    fbar = 0.5 * (ch.flip_prob_hv + ch.flip_prob_da)
    if isinstance(strategy, Mixture):
        loss = err_num = clicked = 0.0
        for comp, w in strategy.components:
            e_i, l_i = expected_rates(comp, knowledge, ch)
            loss += w * l_i
            clicked += w * (1.0 - l_i)
            err_num += w * e_i * (1.0 - l_i)
        return (err_num / clicked if clicked > 0 else 0.0), loss
    if isinstance(strategy, Split):
        q = strategy.q
        if knowledge is Knowledge.INSIDER:
            loss = v + s * (1.0 - q / 2.0)
            clicked = p + s * q / 2.0
            error = fbar if clicked > 0 else 0.0
        else:
            answered = (1.0 - v) * (q / 2.0)
            loss = 1.0 - answered
            error = 0.5 * fbar + 0.25 if answered > 0 else 0.0
        return error, loss
    if isinstance(strategy, Intermediate):
        return _angle_error(strategy.angle_deg, ch.flip_prob_hv, ch.flip_prob_da), v
    if isinstance(strategy, ConflictAware):
        if knowledge is not Knowledge.INSIDER:
            raise ValueError("conflict-aware attacks require insider knowledge")
        alpha = strategy.intermediate_fraction
        e_mid = _angle_error(INTERMEDIATE_ANGLE_DEG, ch.flip_prob_hv, ch.flip_prob_da)
        if strategy.fill == FILL_DROP:
            loss = v + s * (1.0 - alpha) / 4.0
            clicked = p + s * (0.5 + 0.5 * alpha + 0.25 * (1.0 - alpha))
            err_num = p * fbar + s * (
                0.5 * fbar + 0.5 * alpha * e_mid + 0.25 * (1.0 - alpha) * fbar
            )
        else:
            loss = v
            clicked = p + s
            err_num = p * fbar + s * (0.5 * fbar + 0.5 * alpha * e_mid + 0.25 * (1.0 - alpha))
        return (err_num / clicked if clicked > 0 else 0.0), loss
    raise TypeError(f"unknown strategy {type(strategy).__name__}")


# ---------------------------------------------------------------------------
# Strategy grammar for the CLI: components joined by '+', each
# kind(param=value,...)@weight . A single unweighted component stands alone.
# Examples: "intermediate(angle=22.5)", "split(q=1)",
#           "split(q=1)@0.448+intermediate(angle=22.5)@0.552",
#           "conflict(alpha=0.1,fill=drop)".
# ---------------------------------------------------------------------------


def _parse_component(text: str) -> tuple[AttackStrategy, float | None]:
    text = text.strip()
    weight: float | None = None
    if "@" in text:
        text, wtext = text.rsplit("@", 1)
        weight = float(wtext)
    params: dict[str, str] = {}
    if "(" in text:
        if not text.endswith(")"):
            raise ValueError(f"malformed strategy component {text!r}")
        kind, inner = text[:-1].split("(", 1)
        for item in filter(None, (p.strip() for p in inner.split(","))):
            k, sep, val = item.partition("=")
            if not sep or not val:
                raise ValueError(f"malformed parameter {item!r}")
            params[k.strip()] = val.strip()
    else:
        kind = text
    kind = kind.strip().lower()
    if kind == "split":
        return Split(q=float(params.pop("q", 1.0))), weight
    if kind == "intermediate":
        return Intermediate(angle_deg=float(params.pop("angle", INTERMEDIATE_ANGLE_DEG))), weight
    if kind in ("conflict", "conflictaware", "conflict-aware"):
        return (
            ConflictAware(
                intermediate_fraction=float(params.pop("alpha", 0.0)),
                fill=params.pop("fill", FILL_DROP).lower(),
            ),
            weight,
        )
    raise ValueError(f"unknown strategy kind {kind!r}")


def parse_strategy(text: str) -> AttackStrategy:
    parts = [p for p in text.split("+") if p.strip()]
    if not parts:
        raise ValueError("empty strategy spec")
    parsed = [_parse_component(p) for p in parts]
    if len(parsed) == 1 and parsed[0][1] is None:
        return parsed[0][0]
    if any(w is None for _, w in parsed):
        raise ValueError("every mixture component needs an @weight")
    return Mixture(components=tuple((s, float(w)) for s, w in parsed))  # type: ignore[arg-type]
