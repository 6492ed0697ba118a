"""Closed-loop driving world: ego meta-actions over simulated traffic.

The ego vehicle is steered automatically along its route by the same
PID/feedforward tracker the traffic uses; the learning agent only picks
one of five meta-actions per 1-second decision period (change lane left,
hold, change lane right, speed up, slow down).  Traffic vehicles follow
IDM for spacing, MOBIL for lane changes, and a junction gate that makes
them yield to conflicting occupied connectors.  Some traffic is flagged
as automated rather than human-driven; both drive identically here but
occupy different observation channels.  All randomness is drawn from
per-vehicle substreams, so adding a vehicle never changes the draws any
other vehicle sees.

Each policy step runs `substeps` Euler substeps.  Synchronous update:
all controls are computed from the same snapshot, then everyone moves.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .drivers import IDMParams, MobilParams, NO_LEADER_GAP, idm_accel, mobil_accepts
from .dynamics import (BicycleState, LanePID, VehicleParams, feedforward_steer,
                       speed_accel, step_bicycle)
from .errors import PlacementFailureError, StepAfterDoneError
from .geometry import RoadLayout, ScenarioKind, drivable
from .kernels import collision_mask
from .util import clipped_gaussian, sha256_array, substream, wrap_angle


class EgoAction(enum.IntEnum):
    """Meta-actions; the index order is part of the persisted-policy format."""

    LEFT = 0
    IDLE = 1
    RIGHT = 2
    ACCEL = 3
    DECEL = 4


N_ACTIONS = len(EgoAction)

# rasterization roles: surrounding human traffic, surrounding automated
# traffic, and the one mission vehicle the agent controls
ROLE_HUMAN, ROLE_AUTO, ROLE_MISSION = 0, 1, 2

_URBAN = (ScenarioKind.ROUNDABOUT, ScenarioKind.INTERSECTION)


@dataclass
class WorldParams:
    """Episode and traffic knobs; `for_scenario` fills speed-scale defaults."""

    dt: float = 0.1  # s, physics substep
    substeps: int = 10  # substeps per policy decision
    max_steps: int = 60  # policy steps before timeout
    n_hv: int = 4  # human-driven traffic count
    n_av: int = 2  # automated traffic count (same controllers, own map channel)
    dv_cmd: float = 2.0  # m/s per speed meta-action
    v_cmd_max: float = 30.0
    v_desired: float = 20.0  # traffic desired-speed mean
    v_sigma: float = 2.0
    v_delta: float = 5.0  # clip half-width around the mean
    mu_l: float = 100.0  # spawn longitude mean
    sigma_l: float = 60.0
    delta_l: float = 95.0
    min_spawn_gap: float = 10.0
    gate_distance: float = 12.0  # m before a junction where yielding starts
    stop_margin: float = 2.0  # m short of the junction line
    ego_v0_frac: float = 0.75
    ego_l0: float = 5.0

    @classmethod
    def for_scenario(cls, kind: ScenarioKind, **overrides) -> "WorldParams":
        if kind in _URBAN:
            base = dict(v_desired=8.0, mu_l=25.0, sigma_l=15.0, delta_l=23.0,
                        n_hv=4, n_av=2, max_steps=60, ego_l0=2.0)
        elif kind is ScenarioKind.HIGHWAY_CRUISE:
            base = dict(v_desired=20.0, mu_l=200.0, sigma_l=120.0, delta_l=190.0,
                        n_hv=6, n_av=2, max_steps=40)
        else:  # merge / exit mainlines
            base = dict(v_desired=20.0, mu_l=150.0, sigma_l=100.0, delta_l=140.0,
                        n_hv=6, n_av=2, max_steps=45, ego_l0=10.0)
        base.update(overrides)
        return cls(**base)


class Vehicle:
    """Mutable per-vehicle record; lane fields cache the Frenet projection."""

    __slots__ = ("vid", "role", "is_ego", "state", "params", "idm", "pid",
                 "stream", "seg", "l", "d", "heading_err", "next_seg", "v_cmd",
                 "alive", "chain_progress", "changing")

    def __init__(self, vid, role, state, params, idm, stream):
        self.vid = vid
        self.role = role
        self.is_ego = role == ROLE_MISSION
        self.state = state
        self.params = params
        self.idm = idm
        self.pid = LanePID()
        self.stream = stream
        self.seg = -1
        self.l = 0.0
        self.d = 0.0
        self.heading_err = 0.0
        self.next_seg = None
        self.v_cmd = state.v
        self.alive = True
        self.chain_progress = 0.0  # cumulative route arc length this episode
        self.changing = False


class World:
    """One episode of one scenario.  reset() -> step(action) until done."""

    def __init__(self, layout: RoadLayout, params: WorldParams = None, seed: int = 0,
                 vehicle_params: VehicleParams = None, idm: IDMParams = None,
                 mobil: MobilParams = None):
        self.layout = layout
        self.params = params or WorldParams.for_scenario(layout.scenario)
        self.seed = int(seed)
        self.vparams = vehicle_params or VehicleParams()
        self.base_idm = idm or IDMParams()
        self.mobil = mobil or MobilParams()
        self.vehicles = []
        self.step_count = 0
        self.done = True
        self.events = {}
        self.trace = []
        # priority roads: occupants of these never yield at their next hop
        self.priority_segs = (frozenset(range(4))
                              if layout.scenario is ScenarioKind.ROUNDABOUT
                              else frozenset())

    # -- setup ----------------------------------------------------------

    def reset(self):
        p = self.params
        self.vehicles = []
        self.step_count = 0
        self.done = False
        self.events = {"crash": False, "offroad": False, "goal": False,
                       "timeout": False, "missed": False, "traffic_collisions": 0}
        self.trace = []
        ego_seg = self.layout.segment(self.layout.ego_spawn)
        x, y = ego_seg.point_at(p.ego_l0, 0.0)
        ego = Vehicle(0, ROLE_MISSION,
                      BicycleState(x, y, ego_seg.heading_at(p.ego_l0),
                                   p.v_desired * p.ego_v0_frac),
                      self.vparams, self.base_idm.with_v0(p.v_desired),
                      substream(self.seed, "ego"))
        ego.seg, ego.l = self.layout.ego_spawn, p.ego_l0
        ego.v_cmd = ego.state.v
        ego.next_seg = self.layout.route_next(ego.seg)
        self.vehicles.append(ego)
        for i in range(p.n_hv + p.n_av):
            self.vehicles.append(self._spawn_traffic(i))
        self._refresh_caches()
        self._record_trace()
        return self

    def _spawn_traffic(self, idx):
        p = self.params
        stream = substream(self.seed, "veh", idx)
        role = ROLE_HUMAN if idx < p.n_hv else ROLE_AUTO
        v0 = clipped_gaussian(stream, p.v_desired, p.v_sigma, p.v_delta)
        for _ in range(40):
            sid = int(stream.choice(np.asarray(self.layout.spawn_lanes)))
            seg = self.layout.segment(sid)
            l = clipped_gaussian(stream, p.mu_l, p.sigma_l, p.delta_l)
            l = min(max(l, 1.0), seg.length - 1.0)
            x, y = seg.point_at(l, 0.0)
            if self._clear_of_others(x, y, sid, l, p.min_spawn_gap):
                v = clipped_gaussian(stream, 0.8 * v0, 1.0, 3.0)
                veh = Vehicle(idx + 1, role,
                              BicycleState(x, y, seg.heading_at(l), max(v, 0.0)),
                              self.vparams, self.base_idm.with_v0(v0), stream)
                veh.seg, veh.l = sid, l
                succs = seg.successors
                veh.next_seg = (int(stream.choice(np.asarray(succs)))
                                if succs else None)
                return veh
        raise PlacementFailureError(
            f"could not place traffic vehicle {idx} after 40 tries")

    def _clear_of_others(self, x, y, sid, l, gap):
        for other in self.vehicles:
            dx, dy = other.state.x - x, other.state.y - y
            if math.hypot(dx, dy) < gap:
                return False
            if other.seg == sid and abs(other.l - l) < gap + self.vparams.length:
                return False
        return True

    # -- stepping -------------------------------------------------------

    def step(self, action):
        if self.done:
            raise StepAfterDoneError("episode is finished; call reset()")
        action = EgoAction(int(action))
        ego = self.vehicles[0]
        p = self.params
        rem0 = self.layout.route_remaining(ego.seg, ego.l)
        lane_change_cost = 0.0
        if action is EgoAction.ACCEL:
            ego.v_cmd = min(ego.v_cmd + p.dv_cmd, p.v_cmd_max)
        elif action is EgoAction.DECEL:
            ego.v_cmd = max(ego.v_cmd - p.dv_cmd, 0.0)
        elif action in (EgoAction.LEFT, EgoAction.RIGHT):
            side = 1 if action is EgoAction.LEFT else -1
            if self._retarget_lane(ego, side):
                lane_change_cost = 0.01
        self._mobil_pass()
        for _ in range(p.substeps):
            self._substep()
            if self.done:
                break
        self.step_count += 1
        if not self.done and self.step_count >= p.max_steps:
            self.done = True
            self.events["timeout"] = True
        self._record_trace()
        reward = -lane_change_cost - 0.02  # idling is never free
        # progress is the signed reduction of on-route distance to the
        # goal, so speeding past an exit or down a wrong leg costs
        rem1 = self.layout.route_remaining(ego.seg, ego.l)
        gain = (rem0 - rem1) / max(p.v_desired * p.dt * p.substeps, 1e-9)
        reward += 0.1 * min(max(gain, -1.0), 1.0)
        d_frac = abs(ego.d) / (self.layout.segment(ego.seg).width * 0.5)
        reward -= 0.02 * min(d_frac, 2.0) ** 2
        # terminal bonuses; overshooting the goal lane is a failure on par
        # with a crash, while running out the clock costs half as much
        if self.events["crash"] or self.events["offroad"]:
            reward -= 1.0
        elif self.events["goal"]:
            reward += 1.0
        elif self.events["missed"]:
            reward -= 1.0
        elif self.events["timeout"]:
            reward -= 0.5
        return reward, self.done, dict(self.events)

    def _substep(self):
        dt = self.params.dt
        gates = self._gate_decisions()
        controls = []
        for veh in self.vehicles:
            if not veh.alive:
                controls.append((0.0, 0.0))
                continue
            seg = self.layout.segment(veh.seg)
            delta = feedforward_steer(seg.curvature, veh.params) + \
                veh.pid.steer(veh.d, veh.heading_err, veh.state.v, dt)
            if veh.is_ego:
                accel = speed_accel(veh.state.v, veh.v_cmd,
                                    a_limit=veh.params.accel_max)
            else:
                lead_v, gap = self._leader(veh)
                accel = idm_accel(veh.state.v, lead_v, gap, veh.idm)
                hold = gates.get(veh.vid)
                if hold is not None:
                    accel = min(accel, idm_accel(veh.state.v, 0.0, hold, veh.idm))
            controls.append((accel, delta))
        for veh, (accel, delta) in zip(self.vehicles, controls):
            if veh.alive:
                step_bicycle(veh.state, accel, delta, dt, veh.params)
        self._refresh_caches()
        # terminal precedence: crash, then goal, then running out of route,
        # then drifting off the pavement
        self._check_collisions()
        if self.done:
            return
        self._check_goal()
        if self.done:
            return
        self._advance_chains()
        if self.done:
            return
        self._check_offroad()

    def _refresh_caches(self):
        for veh in self.vehicles:
            if not veh.alive:
                continue
            seg = self.layout.segment(veh.seg)
            l, d, _, _ = seg.project(veh.state.x, veh.state.y)
            dl = l - veh.l
            veh.l, veh.d = l, d
            veh.heading_err = wrap_angle(
                veh.state.psi - seg.heading_at(min(max(l, 0.0), seg.length)))
            if 0.0 < dl < 15.0:  # same-segment forward motion only
                veh.chain_progress += dl
            if veh.changing and abs(d) < 0.3:
                veh.changing = False

    def _advance_chains(self):
        for veh in self.vehicles:
            if not veh.alive:
                continue
            seg = self.layout.segment(veh.seg)
            _, _, valid, _ = seg.project(veh.state.x, veh.state.y)
            past_end = (not valid and veh.l > seg.length) or veh.l >= seg.length
            if not past_end:
                continue
            overshoot = veh.l - seg.length
            if not valid and overshoot > 15.0:  # lost the lane entirely
                if veh.is_ego:
                    self.events["offroad"] = True
                    self.done = True
                else:
                    veh.alive = False
                continue
            if veh.next_seg is None:
                if veh.is_ego:
                    self.done = True
                    self.events["missed"] = True
                else:
                    veh.alive = False
                continue
            veh.seg = veh.next_seg
            nseg = self.layout.segment(veh.seg)
            veh.l = min(max(overshoot, 0.0), nseg.length)
            _, veh.d, _, _ = nseg.project(veh.state.x, veh.state.y)
            veh.heading_err = wrap_angle(veh.state.psi - nseg.heading_at(veh.l))
            if veh.is_ego:
                veh.next_seg = self.layout.route_next(veh.seg)
            else:
                succs = nseg.successors
                veh.next_seg = (int(veh.stream.choice(np.asarray(succs)))
                                if succs else None)

    def _check_collisions(self):
        alive = [v for v in self.vehicles if v.alive]
        if len(alive) < 2:
            return
        boxes = np.empty((len(alive), 5), dtype=np.float64)
        for i, v in enumerate(alive):
            boxes[i] = (v.state.x, v.state.y, v.state.psi,
                        v.params.length * 0.5, v.params.width * 0.5)
        hit = np.asarray(collision_mask(boxes))
        for i in range(len(alive)):
            for j in range(i + 1, len(alive)):
                if not hit[i, j]:
                    continue
                if alive[i].is_ego or alive[j].is_ego:
                    self.events["crash"] = True
                    self.done = True
                else:
                    alive[i].alive = False
                    alive[j].alive = False
                    self.events["traffic_collisions"] += 1

    def _check_offroad(self):
        ego = self.vehicles[0]
        if not drivable((ego.state.x, ego.state.y), self.layout):
            self.events["offroad"] = True
            self.done = True

    def _check_goal(self):
        ego = self.vehicles[0]
        goal_seg, threshold = self.layout.mission_goal
        if ego.seg in self.layout.goal_group and ego.l >= threshold - 1e-9:
            self.events["goal"] = True
            self.done = True

    # -- traffic behavior ----------------------------------------------

    def _chain_of(self, veh, horizon=90.0):
        """Route segments ahead as (seg_id, chain offset of segment start)."""
        segs = [(veh.seg, -veh.l)]
        seg = self.layout.segment(veh.seg)
        offset = seg.length - veh.l
        nxt = veh.next_seg
        while nxt is not None and offset < horizon and len(segs) < 4:
            segs.append((nxt, offset))
            nseg = self.layout.segment(nxt)
            offset += nseg.length
            nxt = self.layout.route_next(nxt)
        return segs

    def _leader(self, veh, chain=None):
        """Nearest vehicle ahead on the route, including lane straddlers.

        Returns (leader speed, bumper gap); (0, NO_LEADER_GAP) if free.
        """
        chain = chain or self._chain_of(veh)
        best_s, best_v = NO_LEADER_GAP, 0.0
        half_sum = veh.params.length  # own half + other half, equal params
        for other in self.vehicles:
            if other is veh or not other.alive:
                continue
            for sid, offset in chain:
                seg = self.layout.segment(sid)
                l2, d2, valid, _ = seg.project(other.state.x, other.state.y)
                if not valid or abs(d2) > seg.width * 0.5 + 0.6:
                    continue
                s = offset + l2
                if 0.1 < s < best_s:
                    best_s, best_v = s, other.state.v
                break
        if best_s >= NO_LEADER_GAP:
            return 0.0, NO_LEADER_GAP
        return best_v, best_s - half_sum

    def _gate_decisions(self):
        """vid -> gap to a virtual stop line for vehicles yielding this substep."""
        layout = self.layout
        p = self.params
        occupied = {v.seg for v in self.vehicles if v.alive}
        gated = []
        for veh in self.vehicles:
            if veh.is_ego or not veh.alive or veh.next_seg is None:
                continue
            if veh.seg in layout.junction_segments or veh.seg in self.priority_segs:
                continue
            if veh.next_seg not in layout.junction_segments:
                continue
            dist = layout.segment(veh.seg).length - veh.l
            if dist < p.gate_distance:
                gated.append((dist, veh.vid, veh))
        holds = {}
        claimed = set(occupied)
        for dist, vid, veh in sorted(gated):
            conflict = set(layout.conflicts.get(veh.next_seg, ()))
            if conflict & claimed:
                holds[vid] = max(dist - p.stop_margin, 0.05)
            else:
                claimed.add(veh.next_seg)
        return holds

    def _mobil_pass(self):
        """Once per policy step, let settled traffic consider a lane change."""
        for veh in self.vehicles[1:]:
            if not veh.alive or veh.changing or abs(veh.d) > 0.5:
                continue
            seg = self.layout.segment(veh.seg)
            if seg.curvature != 0.0 or veh.seg in self.layout.junction_segments:
                continue
            l_c = min(max(veh.l, 0.0), seg.length)
            for side in (1, -1):
                target = self.layout.adjacent_lane(veh.seg, l_c, side)
                if target is None:
                    continue
                if self._mobil_check(veh, target):
                    self._retarget_lane(veh, side)
                    break

    def _mobil_check(self, veh, target):
        tid, tl = target
        tseg = self.layout.segment(tid)
        lead_v, gap = self._leader(veh)
        a_old = idm_accel(veh.state.v, lead_v, gap, veh.idm)
        # occupants of the target chain, by signed distance from the changer
        ahead_s, ahead_v = NO_LEADER_GAP, 0.0
        behind_s, behind = NO_LEADER_GAP, None
        for other in self.vehicles:
            if other is veh or not other.alive:
                continue
            l2, d2, valid, _ = tseg.project(other.state.x, other.state.y)
            if not valid or abs(d2) > tseg.width * 0.5 + 0.6:
                continue
            s = l2 - tl
            if s >= 0.0 and s < ahead_s:
                ahead_s, ahead_v = s, other.state.v
            elif s < 0.0 and -s < behind_s:
                behind_s, behind = -s, other
        length = veh.params.length
        a_new = idm_accel(veh.state.v, ahead_v,
                          ahead_s - length if ahead_s < NO_LEADER_GAP else NO_LEADER_GAP,
                          veh.idm)
        if behind is None:
            a_nf_old = a_nf_new = 0.0
        else:
            a_nf_old = idm_accel(behind.state.v, ahead_v,
                                 (ahead_s + behind_s - length
                                  if ahead_s < NO_LEADER_GAP else NO_LEADER_GAP),
                                 behind.idm)
            a_nf_new = idm_accel(behind.state.v, veh.state.v,
                                 behind_s - length, behind.idm)
        # the old follower regains the changer's current leader
        a_of_old, a_of_new = self._follower_relief(veh)
        return mobil_accepts(a_old, a_new, a_nf_old, a_nf_new, a_of_old, a_of_new,
                             self.mobil)

    def _follower_relief(self, veh):
        """(old accel, new accel) for the vehicle trailing the changer."""
        seg = self.layout.segment(veh.seg)
        behind_s, behind = NO_LEADER_GAP, None
        for other in self.vehicles:
            if other is veh or not other.alive:
                continue
            l2, d2, valid, _ = seg.project(other.state.x, other.state.y)
            if not valid or abs(d2) > seg.width * 0.5 + 0.6:
                continue
            s = veh.l - l2
            if 0.0 < s < behind_s:
                behind_s, behind = s, other
        if behind is None:
            return 0.0, 0.0
        length = veh.params.length
        a_old = idm_accel(behind.state.v, veh.state.v, behind_s - length, behind.idm)
        lead_v, gap = self._leader(veh)
        new_gap = (behind_s + gap + length
                   if gap < NO_LEADER_GAP else NO_LEADER_GAP)
        a_new = idm_accel(behind.state.v, lead_v, new_gap, behind.idm)
        return a_old, a_new

    def _retarget_lane(self, veh, side):
        seg = self.layout.segment(veh.seg)
        l_c = min(max(veh.l, 0.0), seg.length)
        target = self.layout.adjacent_lane(veh.seg, l_c, side)
        if target is None:
            return False
        veh.seg = int(target[0])
        nseg = self.layout.segment(veh.seg)
        l2, d2, _, _ = nseg.project(veh.state.x, veh.state.y)
        veh.l, veh.d = l2, d2
        veh.heading_err = wrap_angle(
            veh.state.psi - nseg.heading_at(min(max(l2, 0.0), nseg.length)))
        veh.pid.reset()
        veh.changing = True
        if veh.is_ego:
            veh.next_seg = self.layout.route_next(veh.seg)
        else:
            succs = nseg.successors
            veh.next_seg = (int(veh.stream.choice(np.asarray(succs)))
                            if succs else None)
        return True

    # -- observation / bookkeeping --------------------------------------

    def vehicle_rows(self):
        """(N, 7) float64: x, y, psi, v, role, alive, lane speed.

        Lane speed is the velocity component along the vehicle's own lane
        direction; the map renderer encodes traffic by how fast it closes
        on the ego, which is a difference of these.
        """
        rows = np.zeros((len(self.vehicles), 7), dtype=np.float64)
        for i, v in enumerate(self.vehicles):
            rows[i] = (v.state.x, v.state.y, v.state.psi, v.state.v,
                       float(v.role), 1.0 if v.alive else 0.0,
                       v.state.v * math.cos(v.heading_err))
        return rows

    def _record_trace(self):
        for v in self.vehicles:
            if v.alive:
                self.trace.append((float(self.step_count), float(v.vid),
                                   v.state.x, v.state.y, v.state.psi, v.state.v))

    def trace_hash(self) -> str:
        return sha256_array(np.asarray(self.trace, dtype=np.float64))
