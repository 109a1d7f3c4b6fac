"""Marketplace: repository, matchmaking, session routing, watchdog scores."""

import random

import pytest

from agorasim.core import (
    MessageKind,
    NegotiationMessage,
    OfferPackage,
    Perspective,
)
from agorasim.marketplace import (
    AdvertisementRepository,
    AlreadyAgreedError,
    DeliveryStatus,
    DuplicateIdError,
    Marketplace,
    Match,
    SessionOutcome,
    SessionState,
    TrustStats,
    UnknownAgentError,
    compute_behavior_norm,
    compute_reputation,
    match_alliances,
    ranges_overlap,
)
from agorasim.tactics import Stance, classify_concession
from conftest import make_agenda, make_issue


def repo_with(*agents):
    """agents: (id, role, product, issue ranges dict)"""
    repo = AdvertisementRepository()
    for agent_id, role, product, ranges in agents:
        repo.register_agent(agent_id, role)
        issues = tuple(
            make_issue(issue_id, weight=1.0 / len(ranges), lo=lo, hi=hi)
            for issue_id, (lo, hi) in sorted(ranges.items())
        )
        repo.declare_agenda(agent_id, product, make_agenda(*issues))
    return repo


def default_repo():
    return repo_with(
        ("buyer-1", Perspective.BUYER, "vm", {"price": (10, 20)}),
        ("seller-1", Perspective.SELLER, "vm", {"price": (10, 20)}),
    )


class TestRepository:
    def test_first_ad_gets_sequence_id(self):
        repo = default_repo()
        assert repo.submit_advertisement("seller-1", "vm") == "ad-1"

    def test_unregistered_agent_rejected(self):
        repo = default_repo()
        with pytest.raises(UnknownAgentError):
            repo.submit_advertisement("ghost", "vm")

    def test_ids_are_distinct(self):
        repo = default_repo()
        first = repo.submit_advertisement("seller-1", "vm")
        second = repo.submit_advertisement("seller-1", "vm")
        assert first != second

    def test_explicit_duplicate_id_rejected(self):
        repo = default_repo()
        repo.submit_advertisement("seller-1", "vm", ad_id="ad-x")
        with pytest.raises(DuplicateIdError):
            repo.submit_advertisement("seller-1", "vm", ad_id="ad-x")

    def test_rfq_sequence_ids(self):
        repo = default_repo()
        assert repo.submit_rfq("buyer-1", "vm") == "rfq-1"
        assert repo.submit_rfq("buyer-1", "vm") == "rfq-2"

    def test_ad_requires_declared_agenda(self):
        repo = default_repo()
        with pytest.raises(UnknownAgentError):
            repo.submit_advertisement("seller-1", "unknown-product")


class TestQueries:
    def test_empty_repo(self):
        assert default_repo().query_advertisements() == []

    def test_filter_by_product(self):
        repo = repo_with(
            ("s1", Perspective.SELLER, "vm", {"price": (10, 20)}),
            ("s2", Perspective.SELLER, "db", {"price": (10, 20)}),
        )
        repo.declare_agenda("s1", "db", make_agenda(make_issue()))
        a1 = repo.submit_advertisement("s1", "vm", posted_at=0)
        a2 = repo.submit_advertisement("s2", "db", posted_at=1)
        a3 = repo.submit_advertisement("s1", "db", posted_at=2)
        found = repo.query_advertisements(product="db")
        assert [ad.ad_id for ad in found] == [a2, a3]
        assert a1 not in [ad.ad_id for ad in found]

    def test_no_filter_returns_all_in_order(self):
        repo = default_repo()
        ids = [repo.submit_advertisement("seller-1", "vm", posted_at=i) for i in range(3)]
        assert [ad.ad_id for ad in repo.query_advertisements()] == ids

    def test_issue_subset_filter(self):
        repo = repo_with(
            ("s1", Perspective.SELLER, "vm", {"price": (10, 20), "memory": (1, 8)}),
        )
        repo.submit_advertisement("s1", "vm")
        assert repo.query_advertisements(issues=["price"])
        assert repo.query_advertisements(issues=["price", "memory"])
        assert repo.query_advertisements(issues=["disk"]) == []

    def test_matches_bruteforce_scan(self):
        rng = random.Random(31)
        repo = AdvertisementRepository()
        products = ["p1", "p2", "p3"]
        all_issues = ["price", "memory", "disk"]
        for i in range(6):
            agent = f"s{i}"
            repo.register_agent(agent, Perspective.SELLER)
            for product in products:
                chosen = rng.sample(all_issues, rng.randint(1, 3))
                issues = tuple(
                    make_issue(iid, weight=1.0 / len(chosen), lo=0, hi=10)
                    for iid in sorted(chosen)
                )
                repo.declare_agenda(agent, product, make_agenda(*issues))
        submitted = []
        for i in range(20):
            agent = f"s{rng.randrange(6)}"
            product = rng.choice(products)
            ad_id = repo.submit_advertisement(agent, product, posted_at=rng.randrange(5))
            submitted.append(ad_id)
        for _ in range(30):
            agent = None if rng.random() < 0.5 else f"s{rng.randrange(6)}"
            product = None if rng.random() < 0.5 else rng.choice(products)
            got = repo.query_advertisements(agent=agent, product=product)
            expected = [
                ad
                for ad in sorted(
                    repo.query_advertisements(), key=lambda a: (a.posted_at, a.ad_id)
                )
                if (agent is None or ad.agent == agent)
                and (product is None or ad.product == product)
            ]
            assert got == expected


class TestMatchmaking:
    def market_pair(self, buyer_range=(10, 20), seller_range=(10, 20),
                    buyer_issues=None, seller_issues=None):
        buyer_issues = buyer_issues or {"price": buyer_range}
        seller_issues = seller_issues or {"price": seller_range}
        return repo_with(
            ("buyer-1", Perspective.BUYER, "vm", buyer_issues),
            ("seller-1", Perspective.SELLER, "vm", seller_issues),
        )

    def test_basic_match(self):
        market = Marketplace()
        repo = self.market_pair()
        market.repo = repo
        repo.submit_advertisement("seller-1", "vm")
        repo.submit_rfq("buyer-1", "vm")
        matches = match_alliances(repo, market.trust)
        assert len(matches) == 1
        match = matches[0]
        assert (match.buyer, match.seller) == ("buyer-1", "seller-1")
        assert match.issue_ids == ("price",)

    def test_disjoint_issue_sets_do_not_match(self):
        repo = self.market_pair(
            buyer_issues={"disk": (1, 5)}, seller_issues={"price": (10, 20)}
        )
        trust = Marketplace().trust
        repo.submit_advertisement("seller-1", "vm")
        repo.submit_rfq("buyer-1", "vm")
        assert match_alliances(repo, trust) == []

    def test_reputation_gate(self):
        market = Marketplace()
        repo = self.market_pair()
        repo.submit_advertisement("seller-1", "vm")
        repo.submit_rfq("buyer-1", "vm", min_reputation=0.6)
        market.trust.record("seller-1").reputation = 0.4
        assert match_alliances(repo, market.trust) == []
        market.trust.record("seller-1").reputation = 0.6
        assert len(match_alliances(repo, market.trust)) == 1

    def test_same_role_never_matches(self):
        repo = repo_with(
            ("b1", Perspective.BUYER, "vm", {"price": (10, 20)}),
            ("b2", Perspective.BUYER, "vm", {"price": (10, 20)}),
        )
        repo.submit_advertisement("b2", "vm")
        repo.submit_rfq("b1", "vm")
        assert match_alliances(repo, Marketplace().trust) == []

    def test_range_overlap_required(self):
        repo = self.market_pair(buyer_range=(10, 20), seller_range=(30, 40))
        trust = Marketplace().trust
        repo.submit_advertisement("seller-1", "vm")
        repo.submit_rfq("buyer-1", "vm")
        assert match_alliances(repo, trust) == []
        assert len(match_alliances(repo, trust, require_overlap=False)) == 1

    def test_touching_ranges_overlap(self):
        assert ranges_overlap(10, 20, 20, 30)
        assert not ranges_overlap(10, 20, 21, 30)

    def test_excluded_pairs_are_skipped(self):
        repo = self.market_pair()
        trust = Marketplace().trust
        ad = repo.submit_advertisement("seller-1", "vm")
        rfq = repo.submit_rfq("buyer-1", "vm")
        assert match_alliances(repo, trust, exclude={(rfq, ad)}) == []

    def test_matches_bruteforce_enumeration(self):
        # 2 RFQs x 3 ads; oracle re-applies the five predicates pairwise
        repo = repo_with(
            ("b1", Perspective.BUYER, "vm", {"price": (10, 20), "memory": (1, 8)}),
            ("b2", Perspective.BUYER, "vm", {"price": (50, 60)}),
            ("s1", Perspective.SELLER, "vm", {"price": (15, 25), "memory": (2, 16)}),
            ("s2", Perspective.SELLER, "vm", {"price": (10, 12)}),
            ("s3", Perspective.SELLER, "vm", {"memory": (1, 4)}),
        )
        trust = Marketplace().trust
        trust.record("s2").reputation = 0.2
        ads = [repo.submit_advertisement(s, "vm") for s in ("s1", "s2", "s3")]
        rfqs = [
            repo.submit_rfq("b1", "vm", issues=["price"], min_reputation=0.4),
            repo.submit_rfq("b2", "vm"),
        ]
        got = {(m.rfq_id, m.ad_id) for m in match_alliances(repo, trust)}
        expected = set()
        for rfq in repo.query_rfqs():
            for ad in repo.query_advertisements():
                if ad.product != rfq.product:
                    continue
                if repo.agent_role(ad.agent) is repo.agent_role(rfq.agent):
                    continue
                ad_map = {r.issue_id: r for r in ad.issues}
                if not set(rfq.issues) <= set(ad_map):
                    continue
                if trust.reputation(ad.agent) < rfq.min_reputation:
                    continue
                agenda = repo.declared_agenda(rfq.agent, rfq.product)
                if not all(
                    ranges_overlap(
                        agenda.issue(i).min_value, agenda.issue(i).max_value,
                        ad_map[i].min_value, ad_map[i].max_value,
                    )
                    for i in rfq.issues
                ):
                    continue
                expected.add((rfq.rfq_id, ad.ad_id))
        assert got == expected
        assert ("rfq-1", "ad-1") in got  # price ranges overlap, reputation ok
        assert ("rfq-1", "ad-2") not in got  # reputation 0.2 < 0.4


class TestSessions:
    def fresh_market(self):
        market = Marketplace()
        market.repo = repo_with(
            ("buyer-1", Perspective.BUYER, "vm", {"price": (10, 20)}),
            ("seller-1", Perspective.SELLER, "vm", {"price": (10, 20)}),
        )
        return market

    def match(self):
        return Match(
            rfq_id="rfq-1", ad_id="ad-1", product="vm",
            buyer="buyer-1", seller="seller-1", issue_ids=("price",),
        )

    def offer(self, session, value=15.0, sender="seller-1", receiver="buyer-1",
              round=0, sent_at=1):
        return NegotiationMessage(
            session=session, sender=sender, receiver=receiver, round=round,
            sent_at=sent_at, kind=MessageKind.OFFER,
            package=OfferPackage(values={"price": value}),
        )

    def test_commence_creates_open_session(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        assert session.outcome is SessionOutcome.OPEN
        assert session.t_max == 20
        inboxes = market.due_messages(1)
        assert set(inboxes) == {"buyer-1", "seller-1"}
        assert all(
            msgs[0].kind is MessageKind.COMMENCE for msgs in inboxes.values()
        )

    def test_commence_after_agreement_rejected(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        market.route_message(self.offer(session.session, sent_at=1))
        market.route_message(
            NegotiationMessage(
                session=session.session, sender="buyer-1", receiver="seller-1",
                round=0, sent_at=2, kind=MessageKind.ACQUIRE,
                package=OfferPackage(values={"price": 15.0}),
            )
        )
        with pytest.raises(AlreadyAgreedError):
            market.commence_negotiation(self.match(), now=3)

    def test_concurrent_sessions_for_one_rfq(self):
        market = Marketplace()
        market.repo = repo_with(
            ("buyer-1", Perspective.BUYER, "vm", {"price": (10, 20)}),
            ("s1", Perspective.SELLER, "vm", {"price": (10, 20)}),
            ("s2", Perspective.SELLER, "vm", {"price": (12, 18)}),
        )
        m1 = Match("rfq-1", "ad-1", "vm", "buyer-1", "s1", ("price",))
        m2 = Match("rfq-1", "ad-2", "vm", "buyer-1", "s2", ("price",))
        s1 = market.commence_negotiation(m1, now=0)
        s2 = market.commence_negotiation(m2, now=0)
        assert s1.session != s2.session
        assert market.open_sessions() == [s1.session, s2.session]

    def test_route_appends_and_delivers_next_tick(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        result = market.route_message(self.offer(session.session, sent_at=1))
        assert result.status is DeliveryStatus.DELIVERED
        assert session.transcript[-1].kind is MessageKind.OFFER
        inboxes = market.due_messages(2)
        assert [m.kind for m in inboxes["buyer-1"]] == [MessageKind.OFFER]

    def test_unknown_session(self):
        market = self.fresh_market()
        result = market.route_message(self.offer("s-ghost"))
        assert result.status is DeliveryStatus.UNKNOWN_SESSION

    def test_closed_session_rejects_offers(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        market.route_message(
            NegotiationMessage(
                session=session.session, sender="buyer-1", receiver="seller-1",
                round=0, sent_at=1, kind=MessageKind.TERMINATE, reason="deadline",
            )
        )
        before = len(session.transcript)
        result = market.route_message(self.offer(session.session, sent_at=2))
        assert result.status is DeliveryStatus.SESSION_CLOSED
        assert len(session.transcript) == before  # nothing routed after closure

    def test_acquire_sets_agreed_outcome(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        market.route_message(self.offer(session.session, sent_at=1))
        market.route_message(
            NegotiationMessage(
                session=session.session, sender="buyer-1", receiver="seller-1",
                round=0, sent_at=2, kind=MessageKind.ACQUIRE,
                package=OfferPackage(values={"price": 15.0}),
            )
        )
        assert session.outcome is SessionOutcome.AGREED
        assert session.final_package.values == {"price": 15.0}
        assert session.closed_at == 2

    def test_outcome_set_exactly_once(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        market.route_message(
            NegotiationMessage(
                session=session.session, sender="buyer-1", receiver="seller-1",
                round=0, sent_at=1, kind=MessageKind.TERMINATE, reason="deadline",
            )
        )
        result = market.route_message(
            NegotiationMessage(
                session=session.session, sender="seller-1", receiver="buyer-1",
                round=0, sent_at=1, kind=MessageKind.TERMINATE, reason="deadline",
            )
        )
        assert result.status is DeliveryStatus.SESSION_CLOSED
        assert session.outcome is SessionOutcome.TERMINATED
        assert session.closed_at == 1

    def test_transcript_timestamps_non_decreasing(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        market.route_message(self.offer(session.session, sent_at=1))
        market.route_message(
            self.offer(session.session, value=14.0, sender="buyer-1",
                       receiver="seller-1", sent_at=2)
        )
        stamps = [m.sent_at for m in session.transcript]
        assert stamps == sorted(stamps)

    def test_violations_counted_for_late_and_out_of_space(self):
        market = self.fresh_market()
        session = market.commence_negotiation(self.match(), now=0)
        market.route_message(self.offer(session.session, sent_at=25))
        assert market.trust.record("seller-1").stats.violations == 1
        market.route_message(
            self.offer(session.session, value=99.0, sent_at=2, round=1)
        )
        assert market.trust.record("seller-1").stats.violations == 2


class TestWatchdog:
    def closed_session_with_offers(self, values, agent="seller-1", session="s-1"):
        state = SessionState(
            session=session, product="vm", buyer="buyer-1", seller="seller-1",
            issue_ids=("price",), commence_at=0, t_max=50,
        )
        for i, value in enumerate(values):
            state.transcript.append(
                NegotiationMessage(
                    session=session, sender=agent, receiver="buyer-1", round=i,
                    sent_at=i + 1, kind=MessageKind.OFFER,
                    package=OfferPackage(values={"price": value}),
                )
            )
        state.outcome = SessionOutcome.TERMINATED
        state.closed_at = len(values) + 1
        return state

    def test_equal_steps_classified_linear(self):
        session = self.closed_session_with_offers([100.0, 90.0, 80.0, 70.0])
        b = compute_behavior_norm([session], "seller-1")
        assert b == 1.0
        assert classify_concession(b) is Stance.LINEAR

    def test_halving_steps_classified_headstrong(self):
        session = self.closed_session_with_offers([100.0, 90.0, 85.0, 82.5])
        b = compute_behavior_norm([session], "seller-1")
        assert b == pytest.approx(0.5, abs=1e-12)
        assert classify_concession(b) is Stance.HEADSTRONG

    def test_no_triples_defaults_to_one(self):
        session = self.closed_session_with_offers([100.0, 90.0])
        assert compute_behavior_norm([session], "seller-1") == 1.0
        assert compute_behavior_norm([], "seller-1") == 1.0

    def test_open_sessions_ignored(self):
        session = self.closed_session_with_offers([100.0, 90.0, 85.0])
        session.outcome = SessionOutcome.OPEN
        assert compute_behavior_norm([session], "seller-1") == 1.0

    @pytest.mark.parametrize("lam,stance", [
        (0.5, Stance.HEADSTRONG), (1.0, Stance.LINEAR), (2.0, Stance.CONCEDER),
    ])
    def test_scripted_constant_ratio_recovered(self, lam, stance):
        values = [200.0]
        delta = -8.0
        for _ in range(6):
            values.append(values[-1] + delta)
            delta *= lam
        session = self.closed_session_with_offers(values)
        b = compute_behavior_norm([session], "seller-1")
        assert b == pytest.approx(lam, abs=1e-9)
        assert classify_concession(b) is stance

    def test_reputation_defaults(self):
        assert compute_reputation(TrustStats(), 0) == 0.5

    def test_reputation_maximum(self):
        stats = TrustStats(
            sessions_observed=2, agreements=2, violations=0,
            messages_sent=10, rounds_to_agreement=[0, 0],
        )
        assert compute_reputation(stats, 8) == 1.0

    def test_reputation_minimum(self):
        stats = TrustStats(
            sessions_observed=2, agreements=0, violations=10, messages_sent=10,
        )
        assert compute_reputation(stats, 8) == 0.0

    def test_reputation_bounded(self):
        rng = random.Random(13)
        for _ in range(300):
            sessions = rng.randint(0, 10)
            agreements = rng.randint(0, sessions) if sessions else 0
            messages = rng.randint(0, 40)
            stats = TrustStats(
                sessions_observed=sessions,
                agreements=agreements,
                violations=rng.randint(0, messages) if messages else 0,
                messages_sent=messages,
                rounds_to_agreement=[rng.randint(1, 12) for _ in range(agreements)],
            )
            r = compute_reputation(stats, 12)
            assert 0.0 <= r <= 1.0

    def test_trust_export_is_stable(self):
        market = Marketplace()
        market.repo.register_agent("a1", Perspective.BUYER)
        market.repo.register_agent("a2", Perspective.SELLER)
        market.recompute_trust()
        assert market.trust.export_lines() == market.trust.export_lines()
        assert len(market.trust.export_lines()) == 2
