"""Shared builders for the test suite."""

from __future__ import annotations

import pytest

from agorasim.core import (
    Agenda,
    Direction,
    IssueSpec,
    MessageKind,
    NegotiationMessage,
    OfferPackage,
    Perspective,
    validate_agenda,
)
from agorasim.agent import AgentState, SessionEntry
from agorasim.tactics import ResourceProjection, Stance, TacticParams


def make_issue(
    issue_id: str = "price",
    weight: float = 1.0,
    lo: float = 10.0,
    hi: float = 20.0,
    direction: Direction = Direction.ASCENDING,
) -> IssueSpec:
    return IssueSpec(
        issue_id=issue_id,
        weight=weight,
        min_value=lo,
        max_value=hi,
        direction=direction,
    )


def make_agenda(*issues: IssueSpec, t_max: int = 20, t_min: int = 0) -> Agenda:
    if not issues:
        issues = (make_issue(),)
    return validate_agenda(Agenda(issues=tuple(issues), t_max=t_max, t_min=t_min))


def make_offer(
    session: str = "s-1",
    sender: str = "seller-1",
    receiver: str = "buyer-1",
    round: int = 0,
    sent_at: int = 1,
    values: dict | None = None,
) -> NegotiationMessage:
    return NegotiationMessage(
        session=session,
        sender=sender,
        receiver=receiver,
        round=round,
        sent_at=sent_at,
        kind=MessageKind.OFFER,
        package=OfferPackage(values=values if values is not None else {"price": 15.0}),
    )


def make_entry(
    session: str = "s-1",
    opponent: str = "seller-1",
    product: str = "vm",
    role: Perspective = Perspective.BUYER,
    agenda: Agenda | None = None,
    session_t_max: int = 20,
    t0: int = 0,
    t_max_eff: float | None = None,
    initiator: bool = False,
) -> SessionEntry:
    return SessionEntry(
        session=session,
        opponent=opponent,
        product=product,
        role=role,
        agenda=agenda if agenda is not None else make_agenda(),
        session_t_max=session_t_max,
        t0=t0,
        t_max_eff=float(session_t_max) if t_max_eff is None else t_max_eff,
        initiator=initiator,
    )


def make_agent(
    agent_id: str = "buyer-1",
    role: Perspective = Perspective.BUYER,
    tactic: TacticParams | None = None,
    resources: ResourceProjection | None = None,
    **kwargs,
) -> AgentState:
    return AgentState(
        agent_id=agent_id,
        role=role,
        tactic=tactic if tactic is not None else TacticParams(),
        resources=resources if resources is not None else ResourceProjection(),
        **kwargs,
    )


BILATERAL_SCENARIO = """
name: bilateral
t_end: 64
agents:
  - id: buyer-1
    role: buyer
    tactic: {stance: conceder, k: 0.0, beta: 5}
    agendas:
      - product: vm
        t_max: 20
        issues:
          - {id: price, weight: 1.0, min: 10, max: 20}
  - id: seller-1
    role: seller
    tactic: {stance: conceder, k: 0.0, beta: 5}
    agendas:
      - product: vm
        t_max: 20
        issues:
          - {id: price, weight: 1.0, min: 10, max: 20}
advertisements:
  - {agent: seller-1, product: vm}
rfqs:
  - {agent: buyer-1, product: vm}
"""

DISJOINT_SCENARIO = """
name: disjoint
t_end: 64
options: {require_overlap: false}
agents:
  - id: buyer-1
    role: buyer
    tactic: {stance: conceder, k: 0.0, beta: 5}
    agendas:
      - product: vm
        t_max: 20
        issues:
          - {id: price, weight: 1.0, min: 10, max: 20}
  - id: seller-1
    role: seller
    tactic: {stance: conceder, k: 0.0, beta: 5}
    agendas:
      - product: vm
        t_max: 20
        issues:
          - {id: price, weight: 1.0, min: 30, max: 40}
advertisements:
  - {agent: seller-1, product: vm}
rfqs:
  - {agent: buyer-1, product: vm}
"""


@pytest.fixture
def bilateral_scenario_text() -> str:
    return BILATERAL_SCENARIO


@pytest.fixture
def disjoint_scenario_text() -> str:
    return DISJOINT_SCENARIO
