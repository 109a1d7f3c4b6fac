"""The cloud-agent runtime: belief/goal/plan stores and the per-tick step.

An agent is a single logical actor. Its state is mutated only inside
agent_step, which consumes an ordered inbox and returns an ordered outbox;
distinct agents can therefore step concurrently while exchanging immutable
messages.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

from .core import (
    AgentId,
    IssueId,
    MessageKind,
    NegotiationMessage,
    OfferPackage,
    Perspective,
    ProductId,
    SessionId,
    ValidatedAgenda,
    restrict_agenda,
)
from .tactics import (
    ResourceProjection,
    ResponseKind,
    Stance,
    STANCE_BETA,
    TacticParams,
    adapt_tactic,
    aggregate_utility,
    classify_concession,
    concession_rate,
    decide_response,
    effective_deadline,
    generate_offer_package,
)

logger = logging.getLogger(__name__)

TERMINATE_DEADLINE = "deadline"
TERMINATE_BETTER_DEAL = "better-deal"


class EmptyCandidatesError(ValueError):
    """Concurrent-agreement resolution was invoked with no candidates."""


# ---------------------------------------------------------------------------
# Proxy filter
# ---------------------------------------------------------------------------

class RejectReason(Enum):
    UNKNOWN_SESSION = "unknown-session"
    DEADLINE_EXCEEDED = "deadline-exceeded"
    OUT_OF_SPACE = "out-of-space"
    STALE_ROUND = "stale-round"


@dataclass(frozen=True)
class FilterVerdict:
    ok: bool
    reason: Optional[RejectReason] = None

    @classmethod
    def passed(cls) -> "FilterVerdict":
        return cls(ok=True)

    @classmethod
    def rejected(cls, reason: RejectReason) -> "FilterVerdict":
        return cls(ok=False, reason=reason)


# ---------------------------------------------------------------------------
# Agenda DB (active-session metadata)
# ---------------------------------------------------------------------------

@dataclass
class SessionEntry:
    """Metadata for one active negotiation, agent-side."""

    session: SessionId
    opponent: AgentId
    product: ProductId
    role: Perspective
    agenda: ValidatedAgenda
    session_t_max: int
    t0: int
    t_max_eff: float
    initiator: bool
    opened: bool = False
    next_round: int = 0
    last_seen_round: int = -1
    offers_received: int = 0

    @property
    def deadline(self) -> float:
        """Absolute tick past which this negotiation is dead."""
        return self.t0 + self.t_max_eff


class AgendaDB:
    """Active sessions keyed by session id; entries leave on acquire/terminate."""

    def __init__(self) -> None:
        self._entries: dict[SessionId, SessionEntry] = {}

    def add(self, entry: SessionEntry) -> None:
        if entry.session in self._entries:
            raise ValueError(f"session {entry.session!r} already active")
        self._entries[entry.session] = entry

    def get(self, session: SessionId) -> Optional[SessionEntry]:
        return self._entries.get(session)

    def remove(self, session: SessionId) -> None:
        self._entries.pop(session, None)

    def active(self) -> list[SessionId]:
        return sorted(self._entries)

    def for_product(self, product: ProductId) -> list[SessionId]:
        return sorted(
            sid for sid, e in self._entries.items() if e.product == product
        )

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, session: SessionId) -> bool:
        return session in self._entries


def proxy_filter(
    msg: NegotiationMessage, entry: Optional[SessionEntry], now: int
) -> FilterVerdict:
    """Screen an inbound message against the agent's view of the session.

    Rejections are verdicts, not faults: unknown session, past-deadline
    arrival, offered values outside the negotiation space, or a stale or
    replayed round number.
    """
    if entry is None:
        return FilterVerdict.rejected(RejectReason.UNKNOWN_SESSION)
    if msg.kind is not MessageKind.TERMINATE:
        if msg.sent_at - entry.t0 > entry.t_max_eff:
            return FilterVerdict.rejected(RejectReason.DEADLINE_EXCEEDED)
    if msg.package is not None:
        values = msg.package.values
        for spec in entry.agenda.issues:
            offered = values.get(spec.issue_id)
            if offered is None or not spec.min_value <= offered <= spec.max_value:
                return FilterVerdict.rejected(RejectReason.OUT_OF_SPACE)
        if set(values) - set(entry.agenda.issue_ids()):
            return FilterVerdict.rejected(RejectReason.OUT_OF_SPACE)
    if msg.round <= entry.last_seen_round:
        return FilterVerdict.rejected(RejectReason.STALE_ROUND)
    return FilterVerdict.passed()


# ---------------------------------------------------------------------------
# Beliefs
# ---------------------------------------------------------------------------

BELIEF_WINDOW = 3


@dataclass
class IssueBelief:
    """Sliding window of the opponent's offers on one issue."""

    history: tuple[float, ...] = ()
    lam: Optional[float] = None


@dataclass
class SessionBelief:
    issues: dict[IssueId, IssueBelief] = field(default_factory=dict)
    last_package: Optional[OfferPackage] = None
    stance_estimate: Optional[Stance] = None
    last_update: int = -1


class Beliefset:
    """Per-session knowledge of the opponent, refreshed every round."""

    def __init__(self) -> None:
        self._sessions: dict[SessionId, SessionBelief] = {}

    def session(self, session: SessionId) -> Optional[SessionBelief]:
        return self._sessions.get(session)

    def ensure(self, session: SessionId) -> SessionBelief:
        return self._sessions.setdefault(session, SessionBelief())

    def mean_lambda(self, session: SessionId) -> Optional[float]:
        """Mean concession ratio across issues; None until 3 offers exist.

        Issues whose ratio is undefined (flat previous step) count as 1,
        the linear fixed point.
        """
        sb = self._sessions.get(session)
        if sb is None or not sb.issues:
            return None
        ratios = []
        for issue_id in sorted(sb.issues):
            ib = sb.issues[issue_id]
            if len(ib.history) < BELIEF_WINDOW:
                return None
            ratios.append(1.0 if ib.lam is None else ib.lam)
        return sum(ratios) / len(ratios)


def update_beliefs(
    beliefs: Beliefset, msg: NegotiationMessage, now: int
) -> Beliefset:
    """Fold an accepted opponent offer into the belief store.

    Keeps the last three values per issue, recomputes the concession ratio
    once three exist, and refreshes the stance estimate.
    """
    if msg.package is None:
        return beliefs
    sb = beliefs.ensure(msg.session)
    for issue_id in sorted(msg.package.values):
        value = msg.package.values[issue_id]
        ib = sb.issues.setdefault(issue_id, IssueBelief())
        ib.history = (ib.history + (value,))[-BELIEF_WINDOW:]
        if len(ib.history) == BELIEF_WINDOW:
            ib.lam = concession_rate(*ib.history)
    sb.last_package = msg.package
    sb.last_update = now
    lam = beliefs.mean_lambda(msg.session)
    if lam is not None:
        sb.stance_estimate = classify_concession(lam)
    return beliefs


# ---------------------------------------------------------------------------
# Goals
# ---------------------------------------------------------------------------

class GoalStatus(Enum):
    ACTIVE = "active"
    ACHIEVED = "achieved"
    ABANDONED = "abandoned"


@dataclass
class Goal:
    target_utility: float
    status: GoalStatus = GoalStatus.ACTIVE


class GoalRepository:
    """Per-session utility goals; achieved/abandoned are terminal."""

    def __init__(self) -> None:
        self._goals: dict[SessionId, Goal] = {}

    def open(self, session: SessionId, target_utility: float) -> Goal:
        goal = Goal(target_utility=target_utility)
        self._goals[session] = goal
        return goal

    def get(self, session: SessionId) -> Optional[Goal]:
        return self._goals.get(session)

    def settle(self, session: SessionId, status: GoalStatus) -> None:
        goal = self._goals.get(session)
        if goal is None:
            return
        if goal.status is not GoalStatus.ACTIVE and goal.status is not status:
            raise ValueError(
                f"goal for {session!r} already terminal ({goal.status.value})"
            )
        goal.status = status


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

class PlanKind(Enum):
    MAKE_OFFER = "make_offer"
    MAKE_COUNTER = "make_counter"
    ACCEPT = "accept"
    TERMINATE = "terminate"
    IDLE = "idle"


class PlanCondition(Enum):
    GOAL_TERMINAL = "goal_terminal"
    DEADLINE_PASSED = "deadline_passed"
    OFFER_MEETS_TARGET = "offer_meets_target"
    OFFER_STANDING = "offer_standing"
    OPENING_PENDING = "opening_pending"
    ALWAYS = "always"


@dataclass(frozen=True)
class PlanRule:
    when: PlanCondition
    do: PlanKind


DEFAULT_PLAN_RULES: tuple[PlanRule, ...] = (
    PlanRule(PlanCondition.GOAL_TERMINAL, PlanKind.IDLE),
    PlanRule(PlanCondition.DEADLINE_PASSED, PlanKind.TERMINATE),
    PlanRule(PlanCondition.OFFER_STANDING, PlanKind.MAKE_COUNTER),
    PlanRule(PlanCondition.OPENING_PENDING, PlanKind.MAKE_OFFER),
    PlanRule(PlanCondition.ALWAYS, PlanKind.IDLE),
)


@dataclass(frozen=True)
class PlanContext:
    """Facts a plan trigger may test, assembled by agent_step."""

    goal_terminal: bool = False
    deadline_passed: bool = False
    offer_standing: bool = False
    target_met: bool = False
    opening_pending: bool = False


class PlanLibrary:
    """Ordered trigger -> plan rules; first match wins."""

    def __init__(self, rules: Sequence[PlanRule]) -> None:
        if not rules:
            raise ValueError("plan library must not be empty")
        if rules[-1].when is not PlanCondition.ALWAYS:
            raise ValueError("final plan rule must be a catch-all")
        self.rules: tuple[PlanRule, ...] = tuple(rules)

    @classmethod
    def default(cls) -> "PlanLibrary":
        return cls(DEFAULT_PLAN_RULES)


def _condition_holds(cond: PlanCondition, ctx: PlanContext) -> bool:
    if cond is PlanCondition.GOAL_TERMINAL:
        return ctx.goal_terminal
    if cond is PlanCondition.DEADLINE_PASSED:
        return ctx.deadline_passed
    if cond is PlanCondition.OFFER_MEETS_TARGET:
        return ctx.target_met
    if cond is PlanCondition.OFFER_STANDING:
        return ctx.offer_standing
    if cond is PlanCondition.OPENING_PENDING:
        return ctx.opening_pending
    return True


def select_plan(plans: PlanLibrary, ctx: PlanContext) -> PlanKind:
    """First rule whose trigger matches; deterministic for a fixed context."""
    for rule in plans.rules:
        if _condition_holds(rule.when, ctx):
            return rule.do
    return PlanKind.IDLE


# ---------------------------------------------------------------------------
# Agent state and step function
# ---------------------------------------------------------------------------

def poll_resources(projection: ResourceProjection, now: float) -> float:
    """Projected resource level at a tick, clamped to the schedule domain."""
    return projection.level_at(now)


@dataclass
class AgentState:
    """Everything one agent owns: stores, tactic, schedule, live sessions."""

    agent_id: AgentId
    role: Perspective
    tactic: TacticParams
    resources: ResourceProjection = field(default_factory=ResourceProjection)
    declared_agendas: dict[ProductId, ValidatedAgenda] = field(default_factory=dict)
    beliefs: Beliefset = field(default_factory=Beliefset)
    goals: GoalRepository = field(default_factory=GoalRepository)
    plans: PlanLibrary = field(default_factory=PlanLibrary.default)
    agenda_db: AgendaDB = field(default_factory=AgendaDB)
    jitter: float = 0.0
    rng: random.Random = field(default_factory=lambda: random.Random(0))


def resolve_concurrent_agreements(
    agenda_db: AgendaDB, candidates: Sequence[tuple[SessionId, float]]
) -> tuple[SessionId, list[SessionId]]:
    """Pick the best candidate agreement and list the sessions to abandon.

    Highest utility wins; ties go to the lexicographically smallest session
    id. Every other active session for the same product is slated for
    termination.
    """
    if not candidates:
        raise EmptyCandidatesError("no candidate agreements to resolve")
    for sid, _ in candidates:
        if sid not in agenda_db:
            raise ValueError(f"candidate session {sid!r} is not active")
    chosen = sorted(candidates, key=lambda c: (-c[1], c[0]))[0][0]
    product = agenda_db.get(chosen).product
    losers = [sid for sid in agenda_db.for_product(product) if sid != chosen]
    return chosen, losers


def _emit(
    state: AgentState,
    entry: SessionEntry,
    now: int,
    kind: MessageKind,
    package: Optional[OfferPackage] = None,
    reason: Optional[str] = None,
) -> NegotiationMessage:
    msg = NegotiationMessage(
        session=entry.session,
        sender=state.agent_id,
        receiver=entry.opponent,
        round=entry.next_round,
        sent_at=now,
        kind=kind,
        package=package,
        reason=reason,
    )
    entry.next_round += 1
    return msg


def _close(state: AgentState, session: SessionId, status: GoalStatus) -> None:
    state.goals.settle(session, status)
    state.agenda_db.remove(session)


def _effective_params(state: AgentState, aggressive: bool) -> TacticParams:
    # Resource pressure forces buy-side sessions into a conceding stance.
    if aggressive and state.role is Perspective.BUYER:
        forced_beta = max(state.tactic.beta, STANCE_BETA[Stance.CONCEDER])
        return replace(state.tactic, beta=forced_beta, stance=Stance.CONCEDER)
    return state.tactic


def _jittered(
    state: AgentState, agenda: ValidatedAgenda, package: OfferPackage
) -> OfferPackage:
    if state.jitter <= 0.0:
        return package
    values = dict(package.values)
    for spec in agenda.issues:
        span = spec.max_value - spec.min_value
        shift = state.jitter * span * (state.rng.random() * 2.0 - 1.0)
        values[spec.issue_id] = min(
            spec.max_value, max(spec.min_value, values[spec.issue_id] + shift)
        )
    return OfferPackage(values=values)


def _open_session(state: AgentState, msg: NegotiationMessage, now: int) -> None:
    info = msg.commence
    if info is None:
        logger.warning("%s: commence without payload for %s", state.agent_id, msg.session)
        return
    if msg.session in state.agenda_db:
        logger.debug("%s: duplicate commence for %s", state.agent_id, msg.session)
        return
    declared = state.declared_agendas.get(info.product)
    if declared is None:
        raise KeyError(
            f"agent {state.agent_id!r} has no declared agenda for {info.product!r}"
        )
    agenda = restrict_agenda(declared, info.issue_ids)
    session_t_max = min(info.t_max, agenda.t_max)
    t_max_eff = effective_deadline(session_t_max, state.resources.shifted(now))
    role = Perspective.BUYER if info.buyer == state.agent_id else Perspective.SELLER
    entry = SessionEntry(
        session=msg.session,
        opponent=info.seller if role is Perspective.BUYER else info.buyer,
        product=info.product,
        role=role,
        agenda=agenda,
        session_t_max=session_t_max,
        t0=now,
        t_max_eff=t_max_eff,
        initiator=info.initiator == state.agent_id,
    )
    state.agenda_db.add(entry)
    opening = generate_offer_package(agenda, 0.0, t_max_eff, state.tactic)
    target = aggregate_utility(agenda, opening, role)
    state.goals.open(msg.session, target)


def _plan_context(
    state: AgentState, entry: SessionEntry, now: int
) -> PlanContext:
    goal = state.goals.get(entry.session)
    sb = state.beliefs.session(entry.session)
    standing = sb.last_package if sb is not None else None
    target_met = False
    if standing is not None and goal is not None:
        target_met = (
            aggregate_utility(entry.agenda, standing, entry.role)
            >= goal.target_utility
        )
    return PlanContext(
        goal_terminal=goal is not None and goal.status is not GoalStatus.ACTIVE,
        deadline_passed=now > entry.deadline,
        offer_standing=standing is not None,
        target_met=target_met,
        opening_pending=entry.initiator and not entry.opened,
    )


def agent_step(
    state: AgentState, inbox: Iterable[NegotiationMessage], now: int
) -> tuple[AgentState, list[NegotiationMessage]]:
    """One deliberation tick: filter, learn, adapt, plan, respond.

    Deterministic in (state, inbox, now). Returns the mutated state and the
    ordered outbox; rejected messages are logged, never raised.
    """
    outbox: list[NegotiationMessage] = []
    level = poll_resources(state.resources, now)
    aggressive = level <= state.resources.r_threshold
    acquire_products: set[ProductId] = set()

    # Sweep sessions whose effective deadline has passed.
    for sid in state.agenda_db.active():
        entry = state.agenda_db.get(sid)
        if now > entry.deadline:
            outbox.append(
                _emit(state, entry, now, MessageKind.TERMINATE, reason=TERMINATE_DEADLINE)
            )
            _close(state, sid, GoalStatus.ABANDONED)

    ordered = sorted(
        inbox, key=lambda m: (m.sent_at, m.session, m.sender, m.round)
    )
    for msg in ordered:
        if msg.kind is MessageKind.COMMENCE:
            _open_session(state, msg, now)
            continue
        entry = state.agenda_db.get(msg.session)
        verdict = proxy_filter(msg, entry, now)
        if not verdict.ok:
            logger.debug(
                "%s: rejected %s on %s (%s)",
                state.agent_id, msg.kind.value, msg.session, verdict.reason.value,
            )
            if verdict.reason is RejectReason.DEADLINE_EXCEEDED:
                outbox.append(
                    _emit(state, entry, now, MessageKind.TERMINATE, reason=TERMINATE_DEADLINE)
                )
                _close(state, msg.session, GoalStatus.ABANDONED)
            continue
        entry.last_seen_round = msg.round
        if msg.kind is MessageKind.TERMINATE:
            _close(state, msg.session, GoalStatus.ABANDONED)
            continue
        if msg.kind is MessageKind.ACQUIRE:
            _close(state, msg.session, GoalStatus.ACHIEVED)
            continue

        # Offer: learn, adapt, recompute the hybrid deadline, then plan.
        update_beliefs(state.beliefs, msg, now)
        entry.offers_received += 1
        lam = state.beliefs.mean_lambda(msg.session)
        state.tactic = adapt_tactic(
            state.tactic, 1.0 if lam is None else lam, entry.offers_received
        )
        entry.t_max_eff = effective_deadline(
            entry.session_t_max, state.resources.shifted(entry.t0)
        )
        ctx = _plan_context(state, entry, now)
        plan = select_plan(state.plans, ctx)
        if plan is PlanKind.TERMINATE:
            outbox.append(
                _emit(state, entry, now, MessageKind.TERMINATE, reason=TERMINATE_DEADLINE)
            )
            _close(state, msg.session, GoalStatus.ABANDONED)
        elif plan is PlanKind.ACCEPT:
            acquire_products.add(entry.product)
        elif plan in (PlanKind.MAKE_COUNTER, PlanKind.MAKE_OFFER):
            params = _effective_params(state, aggressive)
            planned = generate_offer_package(
                entry.agenda, now - entry.t0, entry.t_max_eff, params
            )
            response = decide_response(
                entry.agenda, entry.role, msg, planned, entry.deadline
            )
            if response.kind is ResponseKind.TERMINATE:
                outbox.append(
                    _emit(state, entry, now, MessageKind.TERMINATE, reason=TERMINATE_DEADLINE)
                )
                _close(state, msg.session, GoalStatus.ABANDONED)
            elif response.kind is ResponseKind.ACQUIRE:
                acquire_products.add(entry.product)
            else:
                entry.opened = True
                outbox.append(
                    _emit(state, entry, now, MessageKind.OFFER, package=response.package)
                )

    # Opening offers for sessions this agent initiates.
    for sid in state.agenda_db.active():
        entry = state.agenda_db.get(sid)
        goal = state.goals.get(sid)
        if goal is None or goal.status is not GoalStatus.ACTIVE:
            continue
        ctx = _plan_context(state, entry, now)
        if not ctx.opening_pending:
            continue
        if select_plan(state.plans, ctx) is not PlanKind.MAKE_OFFER:
            continue
        params = _effective_params(state, aggressive)
        package = generate_offer_package(
            entry.agenda, now - entry.t0, entry.t_max_eff, params
        )
        if now == entry.t0:
            package = _jittered(state, entry.agenda, package)
        entry.opened = True
        outbox.append(_emit(state, entry, now, MessageKind.OFFER, package=package))

    # Resolve agreements: best standing offer per product wins, the rest end.
    for product in sorted(acquire_products):
        candidates = []
        for sid in state.agenda_db.for_product(product):
            sb = state.beliefs.session(sid)
            goal = state.goals.get(sid)
            if sb is None or sb.last_package is None:
                continue
            if goal is None or goal.status is not GoalStatus.ACTIVE:
                continue
            entry = state.agenda_db.get(sid)
            candidates.append(
                (sid, aggregate_utility(entry.agenda, sb.last_package, entry.role))
            )
        if not candidates:
            continue
        chosen, losers = resolve_concurrent_agreements(state.agenda_db, candidates)
        affected = {chosen, *losers}
        outbox = [
            m for m in outbox
            if not (m.kind is MessageKind.OFFER and m.session in affected)
        ]
        entry = state.agenda_db.get(chosen)
        package = state.beliefs.session(chosen).last_package
        outbox.append(_emit(state, entry, now, MessageKind.ACQUIRE, package=package))
        _close(state, chosen, GoalStatus.ACHIEVED)
        for sid in losers:
            loser = state.agenda_db.get(sid)
            outbox.append(
                _emit(state, loser, now, MessageKind.TERMINATE, reason=TERMINATE_BETTER_DEAL)
            )
            _close(state, sid, GoalStatus.ABANDONED)

    outbox.sort(key=lambda m: (m.session, m.round, m.kind.value))
    return state, outbox
