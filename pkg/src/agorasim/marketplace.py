"""Central marketplace: discovery, matchmaking, routing, trust scoring.

All mutations are serialized through one logical event order (tick, session,
sender); the simulation kernel drives it that way, and the watchdog
recomputes trust scores whenever a session closes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .core import (
    AgentId,
    CommenceInfo,
    IssueId,
    MARKETPLACE_ID,
    MessageKind,
    NegotiationMessage,
    OfferPackage,
    Perspective,
    ProductId,
    SessionId,
    ValidatedAgenda,
)
from .tactics import Stance, classify_concession, concession_rate

logger = logging.getLogger(__name__)


class UnknownAgentError(KeyError):
    pass


class DuplicateIdError(ValueError):
    pass


class AlreadyAgreedError(RuntimeError):
    """A party already holds an agreement for this product."""


class UnknownSessionError(KeyError):
    pass


class SessionClosedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Advertisement repository
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IssueRange:
    issue_id: IssueId
    min_value: float
    max_value: float


@dataclass(frozen=True)
class Advertisement:
    ad_id: str
    agent: AgentId
    product: ProductId
    role: Perspective
    issues: tuple[IssueRange, ...]
    posted_at: int

    def issue_ids(self) -> tuple[IssueId, ...]:
        return tuple(r.issue_id for r in self.issues)


@dataclass(frozen=True)
class RFQ:
    rfq_id: str
    agent: AgentId
    product: ProductId
    issues: tuple[IssueId, ...]
    min_reputation: float
    posted_at: int


class AdvertisementRepository:
    """Registered agents, their declared agendas, and posted ads/RFQs."""

    def __init__(self) -> None:
        self._roles: dict[AgentId, Perspective] = {}
        self._agendas: dict[tuple[AgentId, ProductId], ValidatedAgenda] = {}
        self._ads: dict[str, Advertisement] = {}
        self._rfqs: dict[str, RFQ] = {}
        self._ad_seq = 0
        self._rfq_seq = 0

    def register_agent(self, agent: AgentId, role: Perspective) -> None:
        self._roles[agent] = role

    def agent_role(self, agent: AgentId) -> Perspective:
        try:
            return self._roles[agent]
        except KeyError:
            raise UnknownAgentError(agent) from None

    def agents(self) -> list[AgentId]:
        return sorted(self._roles)

    def declare_agenda(
        self, agent: AgentId, product: ProductId, agenda: ValidatedAgenda
    ) -> None:
        if agent not in self._roles:
            raise UnknownAgentError(agent)
        self._agendas[(agent, product)] = agenda

    def declared_agenda(
        self, agent: AgentId, product: ProductId
    ) -> Optional[ValidatedAgenda]:
        return self._agendas.get((agent, product))

    def submit_advertisement(
        self,
        agent: AgentId,
        product: ProductId,
        issues: Optional[Sequence[IssueId]] = None,
        posted_at: int = 0,
        ad_id: Optional[str] = None,
    ) -> str:
        """Store an ad derived from the agent's declared agenda; returns its id."""
        role = self.agent_role(agent)
        agenda = self.declared_agenda(agent, product)
        if agenda is None:
            raise UnknownAgentError(f"{agent!r} declared no agenda for {product!r}")
        wanted = tuple(issues) if issues is not None else agenda.issue_ids()
        ranges = tuple(
            IssueRange(s.issue_id, s.min_value, s.max_value)
            for s in agenda.issues
            if s.issue_id in set(wanted)
        )
        if ad_id is None:
            self._ad_seq += 1
            ad_id = f"ad-{self._ad_seq}"
        elif ad_id in self._ads:
            raise DuplicateIdError(ad_id)
        self._ads[ad_id] = Advertisement(
            ad_id=ad_id,
            agent=agent,
            product=product,
            role=role,
            issues=ranges,
            posted_at=posted_at,
        )
        return ad_id

    def submit_rfq(
        self,
        agent: AgentId,
        product: ProductId,
        issues: Optional[Sequence[IssueId]] = None,
        min_reputation: float = 0.0,
        posted_at: int = 0,
        rfq_id: Optional[str] = None,
    ) -> str:
        self.agent_role(agent)
        agenda = self.declared_agenda(agent, product)
        if agenda is None:
            raise UnknownAgentError(f"{agent!r} declared no agenda for {product!r}")
        wanted = tuple(issues) if issues is not None else agenda.issue_ids()
        if rfq_id is None:
            self._rfq_seq += 1
            rfq_id = f"rfq-{self._rfq_seq}"
        elif rfq_id in self._rfqs:
            raise DuplicateIdError(rfq_id)
        self._rfqs[rfq_id] = RFQ(
            rfq_id=rfq_id,
            agent=agent,
            product=product,
            issues=wanted,
            min_reputation=min_reputation,
            posted_at=posted_at,
        )
        return rfq_id

    def query_advertisements(
        self,
        agent: Optional[AgentId] = None,
        product: Optional[ProductId] = None,
        issues: Optional[Iterable[IssueId]] = None,
    ) -> list[Advertisement]:
        """All ads matching every supplied criterion, in submission order."""
        wanted = set(issues) if issues is not None else None
        found = [
            ad
            for ad in self._ads.values()
            if (agent is None or ad.agent == agent)
            and (product is None or ad.product == product)
            and (wanted is None or wanted <= set(ad.issue_ids()))
        ]
        return sorted(found, key=lambda ad: (ad.posted_at, ad.ad_id))

    def query_rfqs(
        self,
        agent: Optional[AgentId] = None,
        product: Optional[ProductId] = None,
    ) -> list[RFQ]:
        found = [
            rfq
            for rfq in self._rfqs.values()
            if (agent is None or rfq.agent == agent)
            and (product is None or rfq.product == product)
        ]
        return sorted(found, key=lambda rfq: (rfq.posted_at, rfq.rfq_id))


# ---------------------------------------------------------------------------
# Alliance matchmaking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Match:
    rfq_id: str
    ad_id: str
    product: ProductId
    buyer: AgentId
    seller: AgentId
    issue_ids: tuple[IssueId, ...]


def ranges_overlap(a_lo: float, a_hi: float, b_lo: float, b_hi: float) -> bool:
    return max(a_lo, b_lo) <= min(a_hi, b_hi)


def match_alliances(
    repo: AdvertisementRepository,
    trust: "TrustArchive",
    exclude: Iterable[tuple[str, str]] = (),
    require_overlap: bool = True,
) -> list[Match]:
    """Pair RFQs with compatible ads.

    A match requires the same product, opposite roles, the RFQ's issues to be
    a subset of the ad's, the ad owner's reputation to meet the RFQ's bar,
    and (unless disabled) per-issue range overlap between the two parties'
    declared agendas. Output order follows RFQ then ad submission order.
    """
    skip = set(exclude)
    matches: list[Match] = []
    for rfq in repo.query_rfqs():
        rfq_role = repo.agent_role(rfq.agent)
        rfq_agenda = repo.declared_agenda(rfq.agent, rfq.product)
        if rfq_agenda is None:
            continue
        for ad in repo.query_advertisements(product=rfq.product):
            if (rfq.rfq_id, ad.ad_id) in skip:
                continue
            if repo.agent_role(ad.agent) is rfq_role:
                continue
            ad_ranges = {r.issue_id: r for r in ad.issues}
            if not set(rfq.issues) <= set(ad_ranges):
                continue
            if trust.reputation(ad.agent) < rfq.min_reputation:
                continue
            if require_overlap:
                ok = True
                for issue_id in rfq.issues:
                    mine = rfq_agenda.issue(issue_id)
                    theirs = ad_ranges[issue_id]
                    if not ranges_overlap(
                        mine.min_value, mine.max_value,
                        theirs.min_value, theirs.max_value,
                    ):
                        ok = False
                        break
                if not ok:
                    continue
            buyer = rfq.agent if rfq_role is Perspective.BUYER else ad.agent
            seller = ad.agent if rfq_role is Perspective.BUYER else rfq.agent
            matches.append(
                Match(
                    rfq_id=rfq.rfq_id,
                    ad_id=ad.ad_id,
                    product=rfq.product,
                    buyer=buyer,
                    seller=seller,
                    issue_ids=tuple(rfq.issues),
                )
            )
    return matches


# ---------------------------------------------------------------------------
# Sessions and transcripts
# ---------------------------------------------------------------------------

class SessionOutcome(Enum):
    OPEN = "open"
    AGREED = "agreed"
    TERMINATED = "terminated"


@dataclass
class SessionState:
    """Marketplace-side record of one negotiation."""

    session: SessionId
    product: ProductId
    buyer: AgentId
    seller: AgentId
    issue_ids: tuple[IssueId, ...]
    commence_at: int
    t_max: int
    transcript: list[NegotiationMessage] = field(default_factory=list)
    outcome: SessionOutcome = SessionOutcome.OPEN
    final_package: Optional[OfferPackage] = None
    closed_at: Optional[int] = None
    close_reason: Optional[str] = None

    @property
    def is_open(self) -> bool:
        return self.outcome is SessionOutcome.OPEN

    def offer_count(self) -> int:
        return sum(1 for m in self.transcript if m.kind is MessageKind.OFFER)

    def participants(self) -> tuple[AgentId, AgentId]:
        return (self.buyer, self.seller)


def transcript_line(msg: NegotiationMessage) -> str:
    """One message as a stable-field-order JSON line."""
    values = None
    if msg.package is not None:
        values = {k: msg.package.values[k] for k in sorted(msg.package.values)}
    record = {
        "tick": msg.sent_at,
        "session": msg.session,
        "sender": msg.sender,
        "receiver": msg.receiver,
        "round": msg.round,
        "kind": msg.kind.value,
        "values": values,
        "reason": msg.reason,
    }
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Behavior watchdog
# ---------------------------------------------------------------------------

@dataclass
class TrustStats:
    sessions_observed: int = 0
    agreements: int = 0
    violations: int = 0
    messages_sent: int = 0
    rounds_to_agreement: list[int] = field(default_factory=list)


@dataclass
class TrustRecord:
    agent: AgentId
    behavior_norm: float = 1.0
    reputation: float = 0.5
    stance: Stance = Stance.LINEAR
    stats: TrustStats = field(default_factory=TrustStats)


def compute_behavior_norm(
    sessions: Iterable[SessionState], agent: AgentId
) -> float:
    """Mean concession ratio over the agent's own offer triples.

    Scans the agent's consecutive offers per issue across all closed
    sessions; triples with a flat previous step have no defined ratio and
    are skipped. With no usable triples the norm defaults to 1 (linear).
    """
    ratios: list[float] = []
    for session in sessions:
        if session.is_open:
            continue
        trails: dict[IssueId, list[float]] = {}
        for msg in session.transcript:
            if msg.kind is not MessageKind.OFFER or msg.sender != agent:
                continue
            if msg.package is None:
                continue
            for issue_id in sorted(msg.package.values):
                trails.setdefault(issue_id, []).append(msg.package.values[issue_id])
        for issue_id in sorted(trails):
            trail = trails[issue_id]
            for i in range(2, len(trail)):
                lam = concession_rate(trail[i - 2], trail[i - 1], trail[i])
                if lam is not None:
                    ratios.append(lam)
    if not ratios:
        return 1.0
    # Tactic switches can make an offer trail retreat, yielding negative
    # ratios; the norm is a concession measure and stays non-negative.
    return max(0.0, sum(ratios) / len(ratios))


def compute_reputation(stats: TrustStats, max_rounds_observed: int) -> float:
    """Reputation in [0, 1] from agreement rate, compliance, and speed.

    Weighted 0.5/0.3/0.2; agents with no closed sessions sit at the neutral
    0.5. An agent that never agreed gets the worst speed term.
    """
    if stats.sessions_observed == 0:
        return 0.5
    agreement_rate = stats.agreements / stats.sessions_observed
    if stats.messages_sent > 0:
        compliance_rate = 1.0 - stats.violations / stats.messages_sent
    else:
        compliance_rate = 1.0
    if stats.rounds_to_agreement and max_rounds_observed > 0:
        mean_rounds = sum(stats.rounds_to_agreement) / len(stats.rounds_to_agreement)
        normalized_rounds = mean_rounds / max_rounds_observed
    else:
        normalized_rounds = 1.0
    raw = (
        0.5 * agreement_rate
        + 0.3 * compliance_rate
        + 0.2 * (1.0 - normalized_rounds)
    )
    return min(1.0, max(0.0, raw))


class TrustArchive:
    """Per-agent Behavior Norm and Reputation Index records."""

    def __init__(self) -> None:
        self._records: dict[AgentId, TrustRecord] = {}

    def record(self, agent: AgentId) -> TrustRecord:
        rec = self._records.get(agent)
        if rec is None:
            rec = TrustRecord(agent=agent)
            self._records[agent] = rec
        return rec

    def reputation(self, agent: AgentId) -> float:
        rec = self._records.get(agent)
        return 0.5 if rec is None else rec.reputation

    def records(self) -> list[TrustRecord]:
        return [self._records[a] for a in sorted(self._records)]

    def export_lines(self) -> list[str]:
        lines = []
        for rec in self.records():
            lines.append(
                json.dumps(
                    {
                        "agent": rec.agent,
                        "behavior_norm": rec.behavior_norm,
                        "stance": rec.stance.value,
                        "reputation": rec.reputation,
                        "stats": {
                            "sessions_observed": rec.stats.sessions_observed,
                            "agreements": rec.stats.agreements,
                            "violations": rec.stats.violations,
                            "messages_sent": rec.stats.messages_sent,
                            "mean_rounds_to_agreement": (
                                sum(rec.stats.rounds_to_agreement)
                                / len(rec.stats.rounds_to_agreement)
                                if rec.stats.rounds_to_agreement
                                else None
                            ),
                        },
                    },
                    separators=(",", ":"),
                    ensure_ascii=False,
                )
            )
        return lines


# ---------------------------------------------------------------------------
# Marketplace engine
# ---------------------------------------------------------------------------

class DeliveryStatus(Enum):
    DELIVERED = "delivered"
    UNKNOWN_SESSION = "unknown-session"
    SESSION_CLOSED = "session-closed"


@dataclass(frozen=True)
class DeliveryResult:
    status: DeliveryStatus
    violations: tuple[str, ...] = ()


class Marketplace:
    """Owns discovery, sessions, message routing, and the trust archive."""

    def __init__(self, require_overlap: bool = True) -> None:
        self.repo = AdvertisementRepository()
        self.trust = TrustArchive()
        self.sessions: dict[SessionId, SessionState] = {}
        self.require_overlap = require_overlap
        self._matched: set[tuple[str, str]] = set()
        self._agreed: set[tuple[AgentId, ProductId]] = set()
        self._session_seq = 0
        self._pending: dict[int, list[NegotiationMessage]] = {}
        self._log: list[NegotiationMessage] = []

    # -- matchmaking -------------------------------------------------------

    def run_matchmaking(self, now: int) -> list[SessionState]:
        """Match new (RFQ, ad) pairs and commence their sessions."""
        created = []
        for match in match_alliances(
            self.repo, self.trust, exclude=self._matched,
            require_overlap=self.require_overlap,
        ):
            self._matched.add((match.rfq_id, match.ad_id))
            if (match.buyer, match.product) in self._agreed:
                continue
            if (match.seller, match.product) in self._agreed:
                continue
            created.append(self.commence_negotiation(match, now))
        return created

    def commence_negotiation(self, match: Match, now: int) -> SessionState:
        """Open a session for a match and introduce both parties.

        The seller is the initiator and will send the first offer. Raises
        AlreadyAgreedError when either party already closed a deal for the
        product.
        """
        if (match.buyer, match.product) in self._agreed:
            raise AlreadyAgreedError(f"{match.buyer!r} already agreed for {match.product!r}")
        if (match.seller, match.product) in self._agreed:
            raise AlreadyAgreedError(f"{match.seller!r} already agreed for {match.product!r}")
        buyer_agenda = self.repo.declared_agenda(match.buyer, match.product)
        seller_agenda = self.repo.declared_agenda(match.seller, match.product)
        if buyer_agenda is None or seller_agenda is None:
            raise UnknownAgentError("both parties must declare agendas before matching")
        t_max = min(buyer_agenda.t_max, seller_agenda.t_max)
        self._session_seq += 1
        session = SessionState(
            session=f"s-{self._session_seq}",
            product=match.product,
            buyer=match.buyer,
            seller=match.seller,
            issue_ids=match.issue_ids,
            commence_at=now,
            t_max=t_max,
        )
        self.sessions[session.session] = session
        info = CommenceInfo(
            product=match.product,
            issue_ids=match.issue_ids,
            t_max=t_max,
            buyer=match.buyer,
            seller=match.seller,
            initiator=match.seller,
        )
        for i, receiver in enumerate((match.buyer, match.seller)):
            msg = NegotiationMessage(
                session=session.session,
                sender=MARKETPLACE_ID,
                receiver=receiver,
                round=i,
                sent_at=now,
                kind=MessageKind.COMMENCE,
                commence=info,
            )
            session.transcript.append(msg)
            self._log.append(msg)
            self._enqueue(msg)
        return session

    # -- routing -----------------------------------------------------------

    def _enqueue(self, msg: NegotiationMessage) -> None:
        self._pending.setdefault(msg.sent_at + 1, []).append(msg)

    def due_messages(self, now: int) -> dict[AgentId, list[NegotiationMessage]]:
        """Pop messages due for delivery this tick, per receiver, in order."""
        due = self._pending.pop(now, [])
        due.sort(key=lambda m: (m.sent_at, m.session, m.sender, m.round))
        inboxes: dict[AgentId, list[NegotiationMessage]] = {}
        for msg in due:
            inboxes.setdefault(msg.receiver, []).append(msg)
        return inboxes

    def route_message(self, msg: NegotiationMessage) -> DeliveryResult:
        """Append a message to its session transcript and queue delivery.

        Acquire and Terminate close the session (exactly once); messages for
        unknown or closed sessions are counted against the sender and
        dropped.
        """
        session = self.sessions.get(msg.session)
        if session is None:
            self.trust.record(msg.sender).stats.violations += 1
            return DeliveryResult(DeliveryStatus.UNKNOWN_SESSION, ("unknown-session",))
        if not session.is_open:
            # A message crossing the close in the same tick is a benign race;
            # only sends after the sender could have learned of the closure
            # count against compliance.
            closed_at = session.closed_at if session.closed_at is not None else -1
            if msg.sent_at > closed_at:
                self.trust.record(msg.sender).stats.violations += 1
                return DeliveryResult(DeliveryStatus.SESSION_CLOSED, ("session-closed",))
            return DeliveryResult(DeliveryStatus.SESSION_CLOSED, ())

        violations = list(self._compliance_violations(session, msg))
        stats = self.trust.record(msg.sender).stats
        stats.messages_sent += 1
        stats.violations += len(violations)

        session.transcript.append(msg)
        self._log.append(msg)
        self._enqueue(msg)
        if msg.kind is MessageKind.ACQUIRE:
            session.outcome = SessionOutcome.AGREED
            session.final_package = msg.package
            session.closed_at = msg.sent_at
            self._agreed.add((session.buyer, session.product))
            self._agreed.add((session.seller, session.product))
            self._on_close(session)
        elif msg.kind is MessageKind.TERMINATE:
            session.outcome = SessionOutcome.TERMINATED
            session.closed_at = msg.sent_at
            session.close_reason = msg.reason
            self._on_close(session)
        return DeliveryResult(DeliveryStatus.DELIVERED, tuple(violations))

    def _compliance_violations(
        self, session: SessionState, msg: NegotiationMessage
    ) -> list[str]:
        """Sender-side compliance: a terminate past the deadline is the
        protocol-required teardown, and offers are held to the sender's own
        declared ranges (the receiver's space is the receiver's filter)."""
        found = []
        if (
            msg.kind is not MessageKind.TERMINATE
            and msg.sent_at - session.commence_at > session.t_max
        ):
            found.append("past-deadline")
        if msg.kind is MessageKind.OFFER and msg.package is not None:
            sender_agenda = self.repo.declared_agenda(msg.sender, session.product)
            if sender_agenda is not None:
                for issue_id in session.issue_ids:
                    try:
                        spec = sender_agenda.issue(issue_id)
                    except KeyError:
                        continue
                    offered = msg.package.values.get(issue_id)
                    if offered is None or not (
                        spec.min_value <= offered <= spec.max_value
                    ):
                        found.append(f"out-of-space:{issue_id}")
        return found

    # -- watchdog ----------------------------------------------------------

    def _on_close(self, session: SessionState) -> None:
        agreed = session.outcome is SessionOutcome.AGREED
        rounds = session.offer_count()
        for agent in session.participants():
            stats = self.trust.record(agent).stats
            stats.sessions_observed += 1
            if agreed:
                stats.agreements += 1
                stats.rounds_to_agreement.append(rounds)
        self.recompute_trust()

    def max_rounds_observed(self) -> int:
        best = 0
        for session in self.sessions.values():
            if session.outcome is SessionOutcome.AGREED:
                best = max(best, session.offer_count())
        return best

    def recompute_trust(self) -> None:
        """Event-driven watchdog pass: refresh B and R for every known agent."""
        max_rounds = self.max_rounds_observed()
        closed = [s for s in self.sessions.values() if not s.is_open]
        for agent in self.repo.agents():
            rec = self.trust.record(agent)
            rec.behavior_norm = compute_behavior_norm(closed, agent)
            rec.stance = classify_concession(rec.behavior_norm)
            rec.reputation = compute_reputation(rec.stats, max_rounds)

    # -- state queries and export -------------------------------------------

    def prospective_matches(self) -> list[Match]:
        """Matches that would commence next tick; read-only probe."""
        found = match_alliances(
            self.repo, self.trust, exclude=self._matched,
            require_overlap=self.require_overlap,
        )
        return [
            m for m in found
            if (m.buyer, m.product) not in self._agreed
            and (m.seller, m.product) not in self._agreed
        ]

    def open_sessions(self) -> list[SessionId]:
        return sorted(s for s, st in self.sessions.items() if st.is_open)

    def has_pending_messages(self) -> bool:
        return any(self._pending.values())

    def transcript_lines(self) -> list[str]:
        return [transcript_line(msg) for msg in self._log]
