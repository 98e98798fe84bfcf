"""Event-driven MAC/channel simulator.

A set of static stations sends uplink traffic to a common sink at the
centre of the area. Every block of a :class:`BlockConfig` changes how a
station contends for and uses the channel:

* carrier sense: physical sensing with DIFS deferral and frozen backoff;
  without it a station just waits DIFS plus its backoff and transmits.
* backoff: BEB / EIED contention-window evolution, or a fixed window.
* ACK: immediate ACK after SIFS with retransmission on timeout.
* RTS/CTS: reservation handshake whose Duration fields set the NAV of
  overhearing stations; without it the NAV comes from data frames.
* fragmentation / aggregation: the payload carried per data frame.

Any two transmissions that overlap at a receiver destroy each other (no
capture). Bit errors hit every frame independently with probability
``1 - (1 - ber) ** bits``.
"""
from __future__ import annotations

import enum
import heapq
from heapq import heappush
import itertools
import math
import random
from dataclasses import dataclass, replace
from typing import Optional, TextIO

from .domain import (
    CW_MAX,
    BlockConfig,
    ConfigError,
    Scenario,
    SimStats,
    check_scenario,
)
from .logic import EffectiveBackoff, ResolvedRuntime, resolve_runtime

EPS = 1e-12


@dataclass(frozen=True)
class TimingParams:
    """MAC timing, frame sizes and the airtime energy model.

    Only the slot time is a literature value; the remaining defaults are
    chosen to be 802.11-like and are all overridable.
    """

    slot_sec: float = 2.0e-4
    sifs_sec: float = 5.0e-5
    difs_sec: float = 1.0e-4
    phy_header_sec: float = 2.0e-5
    ack_bytes: int = 14
    rts_bytes: int = 20
    cts_bytes: int = 14
    mac_header_bytes: int = 34
    ack_timeout_sec: Optional[float] = None
    retry_limit: int = 7
    tx_power_w: float = 1.65
    rx_power_w: float = 1.4
    idle_power_w: float = 1.15

    def __post_init__(self):
        if not (self.difs_sec > self.sifs_sec > 0):
            raise ConfigError("timing requires difs > sifs > 0")
        if self.slot_sec <= 0 or self.phy_header_sec < 0:
            raise ConfigError("slot must be > 0 and PHY header >= 0")
        if self.retry_limit < 0:
            raise ConfigError("retry_limit must be >= 0")

    def ack_timeout(self, rate_mbps: int) -> float:
        if self.ack_timeout_sec is not None:
            return self.ack_timeout_sec
        return self.sifs_sec + control_frame_time(self.ack_bytes, rate_mbps, self) + self.slot_sec

    def cts_timeout(self, rate_mbps: int) -> float:
        return self.sifs_sec + control_frame_time(self.cts_bytes, rate_mbps, self) + self.slot_sec

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, doc: dict) -> "TimingParams":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown timing keys: {sorted(unknown)}")
        return cls(**doc)


DEFAULT_TIMING = TimingParams()


class Outcome(enum.Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"


def frame_error_prob(bits: int, ber: float) -> float:
    """Probability that at least one of ``bits`` independent bits flips."""
    if bits < 0 or not 0.0 <= ber < 1.0:
        raise ValueError(f"need bits >= 0 and 0 <= ber < 1, got {bits}, {ber}")
    if bits == 0 or ber == 0.0:
        return 0.0
    return -math.expm1(bits * math.log1p(-ber))


def update_cw(algorithm, current: int, outcome: Outcome, cw_min: int) -> int:
    """Next contention window after a transmission ``outcome``.

    BEB and EIED both double on failure (capped at 1023); on success BEB
    resets to ``cw_min`` while EIED halves. A fixed window never moves.
    """
    if algorithm is not EffectiveBackoff.FIXED and algorithm is not EffectiveBackoff.BEB:
        algorithm = EffectiveBackoff(algorithm)
    if outcome is not Outcome.SUCCESS and outcome is not Outcome.FAILURE:
        outcome = Outcome(outcome)
    if algorithm is EffectiveBackoff.FIXED:
        return current
    if outcome is Outcome.FAILURE:
        return min(2 * current + 1, CW_MAX)
    if algorithm is EffectiveBackoff.BEB:
        return cw_min
    return max((current + 1) // 2 - 1, cw_min)


def transmission_time(payload_bytes: int, rate_mbps: int, timing: TimingParams = DEFAULT_TIMING) -> float:
    """Airtime of a data frame: PHY header plus MAC header and payload bits."""
    return timing.phy_header_sec + 8 * (payload_bytes + timing.mac_header_bytes) / (rate_mbps * 1e6)


def control_frame_time(frame_bytes: int, rate_mbps: int, timing: TimingParams = DEFAULT_TIMING) -> float:
    """Airtime of an ACK/RTS/CTS; their byte counts already include the MAC header."""
    return timing.phy_header_sec + 8 * frame_bytes / (rate_mbps * 1e6)


def fragment_sizes(unit_bytes: int, fragment_bytes: Optional[int]) -> tuple:
    if not fragment_bytes or unit_bytes <= fragment_bytes:
        return (unit_bytes,)
    full, rest = divmod(unit_bytes, fragment_bytes)
    return (fragment_bytes,) * full + ((rest,) if rest else ())


def exchange_time(frags, rt: ResolvedRuntime, timing: TimingParams) -> float:
    """Airtime from the first data fragment to the end of the last ACK."""
    rate = rt.rate_mbps
    t_ack = control_frame_time(timing.ack_bytes, rate, timing)
    total = (len(frags) - 1) * timing.sifs_sec
    for size in frags:
        total += transmission_time(size, rate, timing)
        if rt.ack:
            total += timing.sifs_sec + t_ack
    return total


def single_station_oracle(config: BlockConfig, timing: TimingParams = DEFAULT_TIMING,
                          packet_bytes: int = 1500) -> float:
    """Closed-form throughput (Mbps) of one saturated station.

    One cycle = DIFS + mean backoff + optional RTS/CTS handshake + the data
    exchange; with fragmentation the fragments of one packet go out as a
    SIFS-separated burst.
    """
    rt = resolve_runtime(config)
    rate = rt.rate_mbps
    if rt.aggregation:
        frags = [rt.effective_payload_bytes]
    else:
        frags = fragment_sizes(packet_bytes, config.fragmentation)
    cycle = timing.difs_sec + rt.effective_cw_min / 2 * timing.slot_sec
    if rt.rts_cts:
        cycle += (control_frame_time(timing.rts_bytes, rate, timing) + timing.sifs_sec
                  + control_frame_time(timing.cts_bytes, rate, timing) + timing.sifs_sec)
    cycle += exchange_time(frags, rt, timing)
    return 8 * sum(frags) / cycle / 1e6


# event kinds, value = tie-break priority at equal timestamps
TX_END, NAV_EXPIRY, ACK_TIMEOUT, NODE_JOIN, PACKET_ARRIVAL, BACKOFF_EXPIRY, TX_START = range(7)
EVENT_NAMES = ("TxEnd", "NavExpiry", "AckTimeout", "NodeJoin", "PacketArrival", "BackoffExpiry", "TxStart")

DATA, ACK, RTS, CTS = "DATA", "ACK", "RTS", "CTS"

IDLE, CONTEND, TX, WAIT, SIFS_GAP, OFF = range(6)


class Frame:
    __slots__ = ("sender", "dest", "kind", "start", "end", "bits", "payload", "nav",
                 "corrupt", "needs_ack", "rate", "airtime")

    def __init__(self, sender, dest, kind, bits, payload, nav, needs_ack, rate, airtime):
        self.sender = sender
        self.dest = dest
        self.kind = kind
        self.bits = bits
        self.payload = payload
        self.nav = nav
        self.needs_ack = needs_ack
        self.rate = rate
        self.airtime = airtime
        self.corrupt = None  # receivers where this frame collided
        self.start = 0.0
        self.end = 0.0


class Node:
    __slots__ = ("id", "x", "y", "state", "rate_pkt", "next_arrival", "queue_bytes", "cfg", "rt",
                 "cw", "retry", "frags", "frag_idx", "credited", "remaining", "anchor",
                 "start_idx", "expiry", "frozen", "token", "nav_until", "idle_since",
                 "tx_time", "rx_time", "rx_since", "join_time", "waiting", "deadline", "armed",
                 "prof", "traffic")

    def __init__(self, idx, x, y):
        self.id = idx
        self.x = x
        self.y = y
        self.state = OFF
        self.rate_pkt = 0.0
        self.next_arrival = math.inf
        self.queue_bytes = 0
        self.cfg = None
        self.rt = None
        self.cw = 15
        self.retry = 0
        self.frags = ()
        self.frag_idx = 0
        self.credited = False
        self.remaining = 0
        self.anchor = 0.0
        self.start_idx = 0
        self.expiry = math.inf
        self.frozen = True
        self.token = 0
        self.nav_until = 0.0
        self.idle_since = 0.0
        self.tx_time = 0.0
        self.rx_time = 0.0
        self.rx_since = 0.0
        self.join_time = 0.0
        self.waiting = None
        self.deadline = math.inf
        self.armed = -1
        self.prof = None
        self.traffic = None


class Simulator:
    """One simulation run; owns its RNG and event list.

    Use :func:`simulate` for a plain run. The class form lets a caller
    advance time in steps (:meth:`run_until`) and swap the protocol in
    between (:meth:`set_config`); stations adopt a new config when they
    start their next packet. ``positions`` replaces the random placement,
    e.g. to build a hidden-terminal layout.
    """

    def __init__(self, config: BlockConfig, scenario: Scenario,
                 timing: TimingParams = DEFAULT_TIMING, trace: Optional[TextIO] = None,
                 bucket_sec: float = 1.0, positions=None):
        check_scenario(scenario)
        self.scenario = scenario
        self.timing = timing
        self.trace = trace
        self.set_config(config)
        # separate streams so that changing the protocol leaves node
        # placement and packet arrivals untouched (common random numbers)
        seed = scenario.seed
        self.rng = random.Random(f"{seed}:backoff")
        self.rng_err = random.Random(f"{seed}:errors")
        place = random.Random(f"{seed}:placement")
        self.duration = scenario.duration_sec
        self.now = 0.0
        self.bucket_sec = bucket_sec
        self.delivered_by_bucket = [0] * (int(math.ceil(self.duration / bucket_sec)) + 1)

        total = scenario.total_nodes
        width, height = scenario.area_meters
        self.nodes = [Node(i, place.uniform(0, width), place.uniform(0, height))
                      for i in range(total)]
        if positions is not None:
            if len(positions) != total:
                raise ConfigError(f"expected {total} positions, got {len(positions)}")
            for node, (x, y) in zip(self.nodes, positions):
                node.x, node.y = float(x), float(y)
        for node in self.nodes:
            node.traffic = random.Random(f"{seed}:traffic:{node.id}")
        self.sink = total
        positions = [(n.x, n.y) for n in self.nodes] + [(width / 2, height / 2)]
        rng_range = scenario.radio_range_meters
        self.neighbors = []
        for i, (xi, yi) in enumerate(positions):
            self.neighbors.append([
                j for j, (xj, yj) in enumerate(positions)
                if j != i and math.hypot(xi - xj, yi - yj) <= rng_range
            ])
        self.neighbor_sets = [set(nb) for nb in self.neighbors]
        self.with_self = [nb + [i] for i, nb in enumerate(self.neighbors)]
        self.rx_active = [set() for _ in positions]
        self.busy = [0] * len(positions)
        self.sink_tx_until = -1.0
        self.sink_cluster_counted = False
        self.data_collisions = 0  # data frames destroyed by overlap at their receiver
        per_node = scenario.offered_load_pkt_per_sec / total if total else 0.0
        self.saturated = scenario.traffic == "saturated"

        self.heap = []
        self._seq = itertools.count()
        self._airtimes = {}
        self._profiles = {}
        self._timeouts = {}
        self.on_air_data = 0
        self.on_air_ctrl = 0
        self.last_account = 0.0
        self.stats = SimStats(duration_sec=self.duration)

        for node in self.nodes:
            node.rate_pkt = per_node
        for node in self.nodes[:scenario.node_count]:
            self._join(node, 0.0)
        first = scenario.node_count
        for t, count in scenario.join_schedule:
            for node in self.nodes[first:first + count]:
                self._push(t, NODE_JOIN, node.id, node)
            first += count

    # -- bookkeeping -------------------------------------------------

    def set_config(self, config: BlockConfig):
        self.runtime = resolve_runtime(config)
        self.config = config

    def _push(self, t, kind, ent, arg=None):
        heappush(self.heap, (t, kind, ent, next(self._seq), arg))

    def _data_time(self, payload, rate):
        key = (payload, rate)
        t = self._airtimes.get(key)
        if t is None:
            t = self._airtimes[key] = transmission_time(payload, rate, self.timing)
        return t

    def _ctrl_time(self, frame_bytes, rate):
        key = (-frame_bytes, rate)
        t = self._airtimes.get(key)
        if t is None:
            t = self._airtimes[key] = control_frame_time(frame_bytes, rate, self.timing)
        return t

    def _log(self, t, ent, kind, detail=""):
        if self.trace is not None:
            self.trace.write(f"{t:.9f}\t{ent}\t{EVENT_NAMES[kind]}\t{detail}\n")

    def _account(self, now):
        dt = now - self.last_account
        if dt > 0:
            if self.on_air_data:
                self.stats.data_airtime_sec += dt
            elif self.on_air_ctrl:
                self.stats.control_airtime_sec += dt
            else:
                self.stats.idle_sec += dt
            self.last_account = now

    def _draw_gap(self, node):
        return node.traffic.expovariate(node.rate_pkt) if node.rate_pkt > 0 else math.inf

    # -- traffic -----------------------------------------------------

    def _join(self, node, now):
        node.state = IDLE
        node.join_time = now
        node.rx_time = 0.0
        node.rx_since = now
        node.idle_since = now
        node.cw = self.runtime.effective_cw_min
        node.next_arrival = now + self._draw_gap(node) if not self.saturated else math.inf
        self._log(now, node.id, NODE_JOIN)
        self._begin_unit(node, now)

    def _pull_arrivals(self, node, now):
        packet = self.scenario.packet_bytes
        while node.next_arrival <= now:
            node.queue_bytes += packet
            self.stats.generated_bits += 8 * packet
            node.next_arrival += self._draw_gap(node)

    def _begin_unit(self, node, now):
        """Take the next transmission unit off the queue and start contending."""
        if node.cfg is not self.config:
            node.cfg = self.config
            node.rt = self.runtime
            node.cw = node.rt.effective_cw_min
        rt = node.rt
        packet = self.scenario.packet_bytes
        unit_cap = rt.effective_payload_bytes if rt.aggregation else packet
        if self.saturated:
            unit = unit_cap
            self.stats.generated_bits += 8 * unit
        else:
            self._pull_arrivals(node, now)
            if node.queue_bytes <= 0:
                node.state = IDLE
                if node.next_arrival < self.duration:
                    self._push(node.next_arrival, PACKET_ARRIVAL, node.id, node)
                return
            unit = min(node.queue_bytes, unit_cap)
            node.queue_bytes -= unit
        node.frags = fragment_sizes(unit, node.cfg.fragmentation)
        node.prof = self._burst_profile(rt, node.frags)
        node.frag_idx = 0
        node.retry = 0
        node.credited = False
        self._start_contention(node, now)

    # -- channel access ---------------------------------------------

    def _medium_idle(self, node, now):
        if now < node.nav_until - EPS:
            return False
        return not node.rt.carrier_sense or self.busy[node.id] == 0

    def _start_contention(self, node, now):
        node.state = CONTEND
        node.remaining = self.rng.randint(0, node.cw)
        node.frozen = True
        if self._medium_idle(node, now):
            self._resume(node, now)

    def _resume(self, node, now):
        slot = self.timing.slot_sec
        base = node.idle_since if node.rt.carrier_sense else now
        anchor = max(base, node.nav_until) + self.timing.difs_sec
        start_idx = 0 if now <= anchor else math.ceil((now - anchor) / slot - 1e-9)
        node.anchor = anchor
        node.start_idx = start_idx
        node.expiry = anchor + (start_idx + node.remaining) * slot
        node.frozen = False
        node.token += 1
        self._push(node.expiry, BACKOFF_EXPIRY, node.id, (node, node.token))

    def _freeze(self, node, now):
        if node.state != CONTEND or node.frozen:
            return
        if node.expiry <= now + EPS:
            return  # same slot boundary: it transmits too
        if now > node.anchor:
            elapsed = math.floor((now - node.anchor) / self.timing.slot_sec + 1e-9)
            node.remaining -= max(0, min(node.remaining, elapsed - node.start_idx))
        node.frozen = True
        node.token += 1

    # -- transmissions ------------------------------------------------

    def _transmit(self, sender, frame, now):
        dt = now - self.last_account
        if dt > 0:
            if self.on_air_data:
                self.stats.data_airtime_sec += dt
            elif self.on_air_ctrl:
                self.stats.control_airtime_sec += dt
            else:
                self.stats.idle_sec += dt
            self.last_account = now
        frame.start = now
        airtime = frame.airtime
        if frame.kind == DATA:
            self.on_air_data += 1
        else:
            self.on_air_ctrl += 1
        frame.end = now + airtime
        rx_active = self.rx_active
        sink = self.sink
        for r in self.with_self[sender]:
            active = rx_active[r]
            if active:
                for other in active:
                    if other.corrupt is None:
                        other.corrupt = {r}
                    else:
                        other.corrupt.add(r)
                if frame.corrupt is None:
                    frame.corrupt = {r}
                else:
                    frame.corrupt.add(r)
                if r == sink and not self.sink_cluster_counted:
                    self.stats.collisions += 1
                    self.sink_cluster_counted = True
            active.add(frame)
        busy = self.busy
        nodes = self.nodes
        for r in self.neighbors[sender]:
            busy[r] += 1
            if busy[r] == 1 and r != sink:
                node = nodes[r]
                node.rx_since = now
                if node.state == CONTEND and node.rt.carrier_sense:
                    self._freeze(node, now)
        if sender == sink:
            self.sink_tx_until = frame.end
        else:
            nodes[sender].state = TX
            nodes[sender].tx_time += airtime
        if self.trace is not None:
            self._log(now, sender, TX_START, f"{frame.kind} to={frame.dest} bytes={frame.payload}")
        heappush(self.heap, (frame.end, TX_END, sender, next(self._seq), frame))

    def _burst_profile(self, rt, frags):
        """Per-fragment (payload, data NAV) and the RTS NAV for each start index."""
        key = (rt, frags)
        prof = self._profiles.get(key)
        if prof is not None:
            return prof
        timing = self.timing
        rate = rt.rate_mbps
        t_ack = control_frame_time(timing.ack_bytes, rate, timing)
        t_cts = control_frame_time(timing.cts_bytes, rate, timing)
        data_nav = []
        rts_nav = []
        airtimes = [transmission_time(size, rate, timing) for size in frags]
        for k, size in enumerate(frags):
            nav = 0.0
            if not rt.rts_cts:
                if rt.ack:
                    nav += timing.sifs_sec + t_ack
                if k + 1 < len(frags):
                    nav += timing.sifs_sec + transmission_time(frags[k + 1], rate, timing)
                    if rt.ack:
                        nav += timing.sifs_sec + t_ack
            data_nav.append(nav)
            rts_nav.append(2 * timing.sifs_sec + t_cts + exchange_time(frags[k:], rt, timing))
        prof = self._profiles[key] = (data_nav, rts_nav, airtimes)
        return prof

    def _send_from_node(self, node, now):
        rt = node.rt
        data_nav, rts_nav, airtimes = node.prof
        k = node.frag_idx
        if node.state == CONTEND and rt.rts_cts:
            frame = Frame(node.id, self.sink, RTS, 8 * self.timing.rts_bytes, 0, rts_nav[k],
                          False, rt.rate_mbps, self._ctrl_time(self.timing.rts_bytes, rt.rate_mbps))
        else:
            size = node.frags[k]
            frame = Frame(node.id, self.sink, DATA, 8 * (size + self.timing.mac_header_bytes),
                          size, data_nav[k], rt.ack, rt.rate_mbps, airtimes[k])
        self._transmit(node.id, frame, now)

    def _end_tx(self, frame, now):
        dt = now - self.last_account
        if dt > 0:
            if self.on_air_data:
                self.stats.data_airtime_sec += dt
            elif self.on_air_ctrl:
                self.stats.control_airtime_sec += dt
            else:
                self.stats.idle_sec += dt
            self.last_account = now
        kind = frame.kind
        if kind == DATA:
            self.on_air_data -= 1
        else:
            self.on_air_ctrl -= 1
        sender = frame.sender
        sink = self.sink
        rx_active = self.rx_active
        for r in self.with_self[sender]:
            rx_active[r].discard(frame)
        if kind == DATA and frame.corrupt and frame.dest in frame.corrupt:
            self.data_collisions += 1
        if not rx_active[sink]:
            self.sink_cluster_counted = False
        busy = self.busy
        nodes = self.nodes
        for r in self.neighbors[sender]:
            busy[r] -= 1
            if busy[r] == 0 and r != sink:
                node = nodes[r]
                node.rx_time += now - node.rx_since
                node.idle_since = now
                if node.state == CONTEND and node.frozen and self._medium_idle(node, now):
                    self._resume(node, now)
        if self.trace is not None:
            self._log(now, sender, TX_END, frame.kind)

        if sender != sink:
            node = nodes[sender]
            if busy[sender] == 0:
                node.idle_since = now
            if kind == RTS or frame.needs_ack:
                self._await_reply(node, CTS if kind == RTS else ACK, frame.rate, now)

        self._receive(frame, now)

        # overhearing stations pick up the Duration field
        if frame.nav > 0:
            nav_end = now + frame.nav
            for r in self.neighbors[sender]:
                if r == sink or r == frame.dest or (frame.corrupt and r in frame.corrupt):
                    continue
                node = nodes[r]
                if node.state == OFF or nav_end <= node.nav_until:
                    continue
                node.nav_until = nav_end
                self._freeze(node, now)
                self._push(nav_end, NAV_EXPIRY, r, node)

        if sender != sink and kind == DATA and not frame.needs_ack:
            self._fragment_done(nodes[sender], now, acked=False)

    def _await_reply(self, node, kind, rate, now):
        """Enter WAIT with a reply deadline.

        The timeout event is only queued once the reply is known to be lost
        (see :meth:`_arm`); the outcome is the same as queueing it up front,
        with far fewer stale events.
        """
        cached = self._timeouts.get((kind, rate))
        if cached is None:
            timing = self.timing
            if kind == CTS:
                t_reply = control_frame_time(timing.cts_bytes, rate, timing)
                timeout = timing.sifs_sec + t_reply + timing.slot_sec
            else:
                t_reply = control_frame_time(timing.ack_bytes, rate, timing)
                timeout = timing.ack_timeout_sec
                if timeout is None:
                    timeout = timing.sifs_sec + t_reply + timing.slot_sec
            cached = self._timeouts[(kind, rate)] = (timeout, timeout < timing.sifs_sec + t_reply + EPS)
        timeout, early = cached
        node.state = WAIT
        node.waiting = kind
        node.token += 1
        node.deadline = now + timeout
        if early:
            self._arm(node)

    def _arm(self, node):
        if node.state == WAIT and node.armed != node.token:
            node.armed = node.token
            self._push(max(node.deadline, self.now), ACK_TIMEOUT, node.id, (node, node.token))

    def _frame_ok(self, frame, receiver):
        corrupt = frame.corrupt
        if (corrupt and receiver in corrupt) or receiver not in self.neighbor_sets[frame.sender]:
            return False
        ber = self.scenario.ber
        if ber and self.rng_err.random() < frame_error_prob(frame.bits, ber):
            if frame.kind == DATA:
                self.stats.frame_errors += 1
            return False
        return True

    def _receive(self, frame, now):
        timing = self.timing
        sink = self.sink
        if frame.dest == sink:
            if frame.kind == DATA:
                self.stats.frames_sent += 1
            node = self.nodes[frame.sender]
            if not self._frame_ok(frame, sink):
                if frame.needs_ack or frame.kind == RTS:
                    self._arm(node)
                return
            if frame.kind == DATA:
                if not node.credited:
                    node.credited = True
                    bits = 8 * frame.payload
                    self.stats.delivered_bits += bits
                    bucket = min(int(now / self.bucket_sec), len(self.delivered_by_bucket) - 1)
                    self.delivered_by_bucket[bucket] += bits
                if frame.needs_ack:
                    reply = Frame(sink, frame.sender, ACK, 8 * timing.ack_bytes, 0, 0.0, False,
                                  frame.rate, self._ctrl_time(timing.ack_bytes, frame.rate))
                    heappush(self.heap, (now + timing.sifs_sec, TX_START, sink, next(self._seq), reply))
            elif frame.kind == RTS:
                t_cts = self._ctrl_time(timing.cts_bytes, frame.rate)
                nav = frame.nav - timing.sifs_sec - t_cts
                reply = Frame(sink, frame.sender, CTS, 8 * timing.cts_bytes, 0, nav, False,
                              frame.rate, t_cts)
                self._push(now + timing.sifs_sec, TX_START, sink, reply)
            return
        node = self.nodes[frame.dest]
        if node.state != WAIT or node.waiting != frame.kind:
            return
        if not self._frame_ok(frame, node.id):
            self._arm(node)
            return
        node.token += 1  # cancels the pending timeout
        node.waiting = None
        if frame.kind == ACK:
            self._fragment_done(node, now, acked=True)
        else:
            node.state = SIFS_GAP
            self._push(now + timing.sifs_sec, TX_START, node.id, node)

    def _fragment_done(self, node, now, acked):
        rt = node.rt
        if acked:
            if rt.effective_backoff is EffectiveBackoff.BEB:
                node.cw = rt.effective_cw_min
            else:
                node.cw = update_cw(rt.effective_backoff, node.cw, Outcome.SUCCESS, rt.effective_cw_min)
        node.retry = 0
        node.credited = False
        node.frag_idx += 1
        if node.frag_idx < len(node.frags):
            node.state = SIFS_GAP
            heappush(self.heap, (now + self.timing.sifs_sec, TX_START, node.id, next(self._seq), node))
        else:
            self._begin_unit(node, now)

    def _fragment_failed(self, node, now):
        rt = node.rt
        node.retry += 1
        node.cw = update_cw(rt.effective_backoff, node.cw, Outcome.FAILURE, rt.effective_cw_min)
        if node.retry > self.timing.retry_limit:
            self.stats.drops += 1
            node.cw = rt.effective_cw_min
            self._begin_unit(node, now)
        else:
            self.stats.retransmissions += 1
            self._start_contention(node, now)

    # -- main loop ----------------------------------------------------

    def run_until(self, until: float):
        until = min(until, self.duration)
        heap = self.heap
        heappop = heapq.heappop
        while heap and heap[0][0] <= until:
            t, kind, ent, _, arg = heappop(heap)
            self.now = t
            if kind == TX_END:
                self._end_tx(arg, t)
            elif kind == BACKOFF_EXPIRY:
                node, token = arg
                if token == node.token and node.state == CONTEND and not node.frozen:
                    self._log(t, ent, BACKOFF_EXPIRY)
                    self._send_from_node(node, t)
            elif kind == TX_START:
                if ent == self.sink:
                    if self.sink_tx_until <= t + EPS:
                        self._transmit(ent, arg, t)
                    else:
                        self._arm(self.nodes[arg.dest])
                elif arg.state == SIFS_GAP:
                    self._send_from_node(arg, t)
            elif kind == ACK_TIMEOUT:
                node, token = arg
                if token == node.token and node.state == WAIT:
                    self._log(t, ent, ACK_TIMEOUT, node.waiting)
                    node.waiting = None
                    self._fragment_failed(node, t)
            elif kind == NAV_EXPIRY:
                node = arg
                if abs(node.nav_until - t) <= EPS:
                    self._log(t, ent, NAV_EXPIRY)
                    if self.busy[ent] == 0:
                        node.idle_since = max(node.idle_since, t)
                    if node.state == CONTEND and node.frozen and self._medium_idle(node, t):
                        self._resume(node, t)
            elif kind == PACKET_ARRIVAL:
                if arg.state == IDLE:
                    self._log(t, ent, PACKET_ARRIVAL)
                    self._begin_unit(arg, t)
            elif kind == NODE_JOIN:
                self._join(arg, t)
        self.now = until
        self._account(until)

    def run(self) -> SimStats:
        self.run_until(self.duration)
        return self.snapshot()

    def snapshot(self) -> SimStats:
        """Statistics accumulated up to the current simulation time."""
        now = self.now
        stats = replace(self.stats)
        stats.duration_sec = now if now > 0 else self.duration
        stats.avg_throughput_mbps = stats.delivered_bits / stats.duration_sec / 1e6 if now > 0 else 0.0
        t = self.timing
        energy = 0.0
        for node in self.nodes:
            if node.state == OFF:
                continue
            life = max(0.0, now - node.join_time)
            rx = node.rx_time + (now - node.rx_since if self.busy[node.id] > 0 else 0.0)
            tx = min(node.tx_time, life)
            rx = min(rx, life - tx)
            energy += t.tx_power_w * tx + t.rx_power_w * rx + t.idle_power_w * (life - tx - rx)
        stats.energy_joules = energy
        return stats


def simulate(config: BlockConfig, scenario: Scenario, timing: TimingParams = DEFAULT_TIMING,
             trace: Optional[TextIO] = None) -> SimStats:
    """Run ``config`` under ``scenario`` and return the channel statistics.

    Deterministic for a given (config, scenario, timing); the scenario seed
    drives node placement, traffic, backoff draws and bit errors.
    """
    if not scenario.duration_sec > 0:
        raise ConfigError("duration must be > 0")
    return Simulator(config, scenario, timing, trace).run()
