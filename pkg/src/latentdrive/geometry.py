"""Lane-segment road networks and Frenet-frame conversions.

Roads are piecewise straight / circular-arc lane centerlines with a width,
chained through successor links.  Five scenario topologies are provided:
roundabout, intersection, highway merge, highway exit, highway cruise.
All Cartesian<->Frenet maps are closed-form, so round trips are exact to
floating-point precision.

Conventions: x east, y north, headings in radians CCW from +x.  Lateral
offset d is positive to the LEFT of the direction of travel.  Curvature
kappa > 0 turns left; the centerline heading at arc length l is
heading0 + kappa * l.
"""

import enum
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParamsError, OffRoadError, UnknownSegmentError

_TWO_PI = 2.0 * math.pi
_L_EPS = 1e-6  # interior tolerance for projections; well under any feature size


class ScenarioKind(enum.Enum):
    ROUNDABOUT = "roundabout"
    INTERSECTION = "intersection"
    HIGHWAY_MERGE = "highway_merge"
    HIGHWAY_EXIT = "highway_exit"
    HIGHWAY_CRUISE = "highway_cruise"

    @classmethod
    def parse(cls, name: str) -> "ScenarioKind":
        key = name.strip().lower().replace("-", "_")
        for kind in cls:
            if kind.value == key:
                return kind
        raise InvalidParamsError(f"unknown scenario {name!r}; valid: {[k.value for k in cls]}")


@dataclass(frozen=True)
class LaneSegment:
    """One straight or circular-arc lane centerline piece."""

    seg_id: int
    kind: str  # "straight" | "arc"
    start: tuple  # (x, y) m
    heading: float  # rad at l = 0
    length: float  # m
    curvature: float  # 1/m, 0 for straight
    width: float  # m
    successors: tuple = ()

    def __post_init__(self):
        if self.length <= 0:
            raise InvalidParamsError(f"segment {self.seg_id}: length must be > 0")
        if self.width <= 0:
            raise InvalidParamsError(f"segment {self.seg_id}: width must be > 0")
        if abs(self.curvature) * self.length >= _TWO_PI:
            raise InvalidParamsError(f"segment {self.seg_id}: arc sweeps >= 2*pi")
        if (self.kind == "straight") != (self.curvature == 0.0):
            raise InvalidParamsError(f"segment {self.seg_id}: kind/curvature mismatch")

    # -- closed-form centerline geometry -------------------------------

    def arc_center(self) -> tuple:
        k = self.curvature
        x0, y0 = self.start
        return (x0 - math.sin(self.heading) / k, y0 + math.cos(self.heading) / k)

    def heading_at(self, l: float) -> float:
        return self.heading + self.curvature * l

    def point_at(self, l: float, d: float = 0.0) -> tuple:
        """Cartesian point at arc length l, lateral offset d (left positive)."""
        psi = self.heading_at(l)
        if self.curvature == 0.0:
            x = self.start[0] + l * math.cos(self.heading) - d * math.sin(psi)
            y = self.start[1] + l * math.sin(self.heading) + d * math.cos(psi)
            return (x, y)
        cx, cy = self.arc_center()
        r = d - 1.0 / self.curvature
        return (cx - r * math.sin(psi), cy + r * math.cos(psi))

    def end_pose(self) -> tuple:
        x, y = self.point_at(self.length, 0.0)
        return (x, y, self.heading_at(self.length))

    def project(self, x: float, y: float):
        """Project a point onto the centerline.

        Returns (l, d, valid, dist): unclamped arc length, signed lateral
        offset, whether l falls inside [0, length], and the distance used
        for nearest-segment search (|d| when valid, else distance to the
        nearer endpoint).
        """
        if self.curvature == 0.0:
            rx = x - self.start[0]
            ry = y - self.start[1]
            c, s = math.cos(self.heading), math.sin(self.heading)
            l = rx * c + ry * s
            d = -rx * s + ry * c
        else:
            cx, cy = self.arc_center()
            ux, uy = x - cx, y - cy
            rho = math.hypot(ux, uy)
            if rho < 1e-12:
                return (0.0, 0.0, False, abs(1.0 / self.curvature))
            sgn = 1.0 if self.curvature > 0 else -1.0
            nx, ny = -sgn * ux / rho, -sgn * uy / rho
            psi = math.atan2(-nx, ny)
            ang = (sgn * (psi - self.heading)) % _TWO_PI
            if ang > _TWO_PI - 1e-9:  # rounding just behind the start point
                ang = 0.0
            l = ang / abs(self.curvature)
            d = 1.0 / self.curvature - sgn * rho
        valid = -_L_EPS <= l <= self.length + _L_EPS
        if valid:
            return (min(max(l, 0.0), self.length), d, True, abs(d))
        d0 = math.hypot(x - self.start[0], y - self.start[1])
        ex, ey, _ = self.end_pose()
        d1 = math.hypot(x - ex, y - ey)
        return (l, d, False, min(d0, d1))

    def project_many(self, pts: np.ndarray):
        """Vectorized project() for an (N, 2) array; returns (l, d, valid)."""
        if self.curvature == 0.0:
            rel = pts - np.asarray(self.start)
            c, s = math.cos(self.heading), math.sin(self.heading)
            l = rel[:, 0] * c + rel[:, 1] * s
            d = -rel[:, 0] * s + rel[:, 1] * c
        else:
            u = pts - np.asarray(self.arc_center())
            rho = np.hypot(u[:, 0], u[:, 1])
            rho = np.maximum(rho, 1e-12)
            sgn = 1.0 if self.curvature > 0 else -1.0
            nx, ny = -sgn * u[:, 0] / rho, -sgn * u[:, 1] / rho
            psi = np.arctan2(-nx, ny)
            ang = (sgn * (psi - self.heading)) % _TWO_PI
            ang[ang > _TWO_PI - 1e-9] = 0.0
            l = ang / abs(self.curvature)
            d = 1.0 / self.curvature - sgn * rho
        valid = (l >= -_L_EPS) & (l <= self.length + _L_EPS)
        return l, d, valid

    def to_json(self) -> dict:
        return {
            "id": self.seg_id,
            "kind": self.kind,
            "start": [self.start[0], self.start[1]],
            "heading": self.heading,
            "length": self.length,
            "curvature": self.curvature,
            "width": self.width,
            "successors": list(self.successors),
        }


@dataclass(frozen=True)
class FrenetPose:
    """Curvilinear pose: segment id, arc length l, lateral offset d."""

    segment: int
    l: float
    d: float


class RoadLayout:
    """Immutable segment graph for one scenario.

    mission_goal is (segment id, longitude threshold); goal_group lists the
    segments on which crossing the threshold completes the mission (the
    goal segment plus its parallel lanes, where lanes never merge
    geometrically).  Junction bookkeeping (conflict pairs, adjacency, goal
    distances) is precomputed here so the episode loop stays cheap.
    """

    def __init__(self, scenario: ScenarioKind, segments, spawn_lanes, mission_goal,
                 goal_group=None, ego_spawn=None, junction_segments=()):
        self.scenario = scenario
        self.segments = {s.seg_id: s for s in segments}
        if len(self.segments) != len(segments):
            raise InvalidParamsError("duplicate segment ids")
        self.spawn_lanes = tuple(spawn_lanes)
        self.mission_goal = (int(mission_goal[0]), float(mission_goal[1]))
        self.goal_group = tuple(goal_group) if goal_group else (self.mission_goal[0],)
        self.ego_spawn = self.spawn_lanes[0] if ego_spawn is None else int(ego_spawn)
        self.junction_segments = frozenset(junction_segments)
        self._adjacency_cache = {}
        self._route_cache = {}
        self._validate_links()
        self._adjacency = self._segment_adjacency()
        self.conflicts = self._conflict_map()
        self._goal_dist = self._distances_to_goal()
        self._validate_graph()

    # -- construction checks -------------------------------------------

    def _validate_links(self):
        for seg in self.segments.values():
            ex, ey, _ = seg.end_pose()
            for succ in seg.successors:
                if succ not in self.segments:
                    raise InvalidParamsError(f"segment {seg.seg_id}: unknown successor {succ}")
                sx, sy = self.segments[succ].start
                if math.hypot(ex - sx, ey - sy) > 1e-6:
                    raise InvalidParamsError(
                        f"segment {seg.seg_id} end does not meet successor {succ} start")
        for sid in self.spawn_lanes + self.goal_group + (self.ego_spawn, self.mission_goal[0]):
            if sid not in self.segments:
                raise InvalidParamsError(f"unknown segment id {sid} in layout metadata")

    def _segment_adjacency(self):
        """Sampled lane-change edges: seg -> set of laterally adjacent segs.

        Also records, per (seg, neighbor) pair, the sampled arc-length
        window [first, last] over which the neighbor is reachable, along
        with the side it sits on; the route planner prefers early
        windows and the distance-to-goal walk needs the mapping.
        """
        adj = {sid: set() for sid in self.segments}
        self._adjacency_window = {}
        for sid, seg in self.segments.items():
            n = max(2, int(seg.length / 5.0) + 1)
            for l in np.linspace(0.5, seg.length - 0.5, n):
                for side in (1, -1):
                    hit = self.adjacent_lane(sid, float(l), side)
                    if hit is not None:
                        adj[sid].add(hit[0])
                        key = (sid, hit[0])
                        w = self._adjacency_window.get(key)
                        if w is None:
                            self._adjacency_window[key] = [float(l), float(l), side]
                        else:
                            w[1] = float(l)
        return {sid: tuple(sorted(v)) for sid, v in adj.items()}

    def _conflict_map(self):
        """Crossing/merging segment pairs among junction segments.

        Two junction segments conflict when their centerlines pass within
        2 m and neither directly feeds the other.
        """
        ids = sorted(self.junction_segments)
        samples = {}
        for sid in ids:
            seg = self.segments[sid]
            ls = np.linspace(0.0, seg.length, max(2, int(seg.length) + 1))
            samples[sid] = np.asarray([seg.point_at(float(l)) for l in ls])
        conflicts = {sid: set() for sid in ids}
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                if b in self.segments[a].successors or a in self.segments[b].successors:
                    continue
                pa, pb = samples[a], samples[b]
                d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
                if d2.min() < 4.0:
                    conflicts[a].add(b)
                    conflicts[b].add(a)
        return {sid: tuple(sorted(v)) for sid, v in conflicts.items()}

    def _distances_to_goal(self):
        """Hop counts to the goal group along successor edges (for routing)."""
        preds = {sid: [] for sid in self.segments}
        for sid, seg in self.segments.items():
            for succ in seg.successors:
                preds[succ].append(sid)
        dist = {sid: math.inf for sid in self.segments}
        frontier = list(self.goal_group)
        for sid in frontier:
            dist[sid] = 0
        while frontier:
            nxt = []
            for sid in frontier:
                for p in preds[sid]:
                    if dist[p] > dist[sid] + 1:
                        dist[p] = dist[sid] + 1
                        nxt.append(p)
            frontier = nxt
        return dist

    def _validate_graph(self):
        # connectivity over successor + lane-change edges, undirected
        neigh = {sid: set() for sid in self.segments}
        for sid, seg in self.segments.items():
            for succ in seg.successors:
                neigh[sid].add(succ)
                neigh[succ].add(sid)
            for adj in self._adjacency[sid]:
                neigh[sid].add(adj)
        seen = set()
        stack = [next(iter(self.segments))]
        while stack:
            sid = stack.pop()
            if sid in seen:
                continue
            seen.add(sid)
            stack.extend(neigh[sid] - seen)
        if seen != set(self.segments):
            raise InvalidParamsError("segment graph is not connected")
        goal = set(self.goal_group)
        for lane in self.spawn_lanes:
            if not self._reaches(lane, goal):
                raise InvalidParamsError(f"spawn lane {lane} cannot reach the mission goal")

    def _reaches(self, start, goal: set) -> bool:
        # BFS over successor edges plus lane-change adjacency
        seen = {start}
        queue = [start]
        while queue:
            sid = queue.pop(0)
            if sid in goal:
                return True
            for nxt in self.segments[sid].successors + self._adjacency[sid]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return False

    # -- queries --------------------------------------------------------

    def segment(self, seg_id: int) -> LaneSegment:
        try:
            return self.segments[seg_id]
        except KeyError:
            raise UnknownSegmentError(seg_id) from None

    def adjacent_lane(self, seg_id: int, l: float, side: int):
        """Neighbor lane one width to the left (+1) or right (-1).

        Returns (segment id, arc length on it) or None.  A candidate must
        be roughly parallel (heading within 0.5 rad) and its centerline
        within half a width of the laterally offset probe point.
        """
        key = (seg_id, round(l, 3), side)
        if key in self._adjacency_cache:
            return self._adjacency_cache[key]
        seg = self.segment(seg_id)
        px, py = seg.point_at(l, side * seg.width)
        psi = seg.heading_at(l)
        best = None
        for oid, other in self.segments.items():
            if oid == seg_id:
                continue
            ol, od, valid, _ = other.project(px, py)
            if not valid or abs(od) > other.width * 0.5 + 0.15:
                continue
            dpsi = abs(_wrap(other.heading_at(ol) - psi))
            if dpsi > 0.5:
                continue
            if best is None or abs(od) < best[2] - 1e-12 or (
                    abs(abs(od) - best[2]) <= 1e-12 and oid < best[0]):
                best = (oid, ol, abs(od))
        out = None if best is None else (best[0], best[1])
        self._adjacency_cache[key] = out
        return out

    def route_next(self, seg_id: int):
        """Successor choice that minimizes hops to the goal (ties: lowest id)."""
        succs = self.segment(seg_id).successors
        if not succs:
            return None
        return min(succs, key=lambda s: (self._goal_dist[s], s))

    def route_plan(self, seg_id: int) -> tuple:
        """Cheapest segment path to the goal group, lane changes included.

        Successor edges cost one hop; a lane change costs far more plus
        the arc length where its window first opens, so plans use as few
        changes as possible and take the earliest window (an exit ramp's
        deceleration lane beats cutting straight onto the ramp).  Returns
        the start segment alone if no path exists.
        """
        if seg_id in self._route_cache:
            return self._route_cache[seg_id]
        goal = set(self.goal_group)
        dist = {seg_id: 0.0}
        parent = {seg_id: None}
        heap = [(0.0, seg_id)]
        end = None
        while heap:
            cost, sid = heapq.heappop(heap)
            if cost > dist.get(sid, math.inf):
                continue
            if sid in goal:
                end = sid
                break
            edges = [(nxt, 1.0) for nxt in sorted(self.segments[sid].successors)]
            edges += [(nxt, 1000.0 + self._adjacency_window[(sid, nxt)][0])
                      for nxt in self._adjacency[sid]]
            for nxt, w in edges:
                c = cost + w
                if c < dist.get(nxt, math.inf) - 1e-12:
                    dist[nxt] = c
                    parent[nxt] = sid
                    heapq.heappush(heap, (c, nxt))
        if end is None:
            path = (seg_id,)
        else:
            ids = []
            while end is not None:
                ids.append(end)
                end = parent[end]
            path = tuple(reversed(ids))
        self._route_cache[seg_id] = path
        return path

    def route_remaining(self, seg_id: int, l: float) -> float:
        """Meters left to the mission goal along route_plan from (seg, l).

        Lane-change hops map to the same longitudinal station on the
        neighbor lane; being past a change window adds the backtrack
        distance, so driving beyond an exit increases the figure.  With
        no path to the goal a large constant is added.
        """
        plan = self.route_plan(seg_id)
        threshold = self.mission_goal[1]
        pos = float(l)
        total = 0.0
        for a, b in zip(plan, plan[1:]):
            seg = self.segments[a]
            if b in seg.successors:
                total += max(seg.length - pos, 0.0)
                pos = 0.0
                continue
            w0, w1, side = self._adjacency_window[(a, b)]
            lw = min(max(pos, w0), w1)
            total += abs(pos - lw)
            hit = self.adjacent_lane(a, lw, side)
            pos = hit[1] if hit is not None and hit[0] == b else 0.0
        if plan[-1] in self.goal_group:
            total += max(threshold - pos, 0.0)
        else:
            total += max(self.segments[plan[-1]].length - pos, 0.0) + 1e4
        return total

    def total_length(self) -> float:
        return sum(s.length for s in self.segments.values())

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "segments": [self.segments[sid].to_json() for sid in sorted(self.segments)],
            "spawn_lanes": list(self.spawn_lanes),
            "mission_goal": {"segment": self.mission_goal[0], "threshold": self.mission_goal[1]},
            "goal_group": list(self.goal_group),
            "ego_spawn": self.ego_spawn,
            "junction_segments": sorted(self.junction_segments),
            "conflicts": {str(k): list(v) for k, v in self.conflicts.items()},
        }

    def dump_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def _wrap(a: float) -> float:
    a = math.fmod(a + math.pi, _TWO_PI)
    if a <= 0.0:
        a += _TWO_PI
    return a - math.pi


# -- Frenet conversions -----------------------------------------------


def frenet_to_cartesian(pose: FrenetPose, layout: RoadLayout):
    """(x, y, heading) of a Frenet pose; heading is the lane tangent."""
    seg = layout.segment(pose.segment)
    x, y = seg.point_at(pose.l, pose.d)
    return (x, y, seg.heading_at(pose.l))


def cartesian_to_frenet(point, layout: RoadLayout) -> FrenetPose:
    """Nearest-segment Frenet pose of a Cartesian point.

    Nearest by perpendicular distance among segments whose projection is
    interior and within two lane widths laterally; ties go to the lowest
    segment id.  Raises OffRoadError when no segment qualifies.
    """
    x, y = float(point[0]), float(point[1])
    best = None
    for sid in sorted(layout.segments):
        seg = layout.segments[sid]
        l, d, valid, _ = seg.project(x, y)
        if not valid or abs(d) > 2.0 * seg.width:
            continue
        if best is None or abs(d) < best[2] - 1e-12:
            best = (sid, l, abs(d), d)
    if best is None:
        raise OffRoadError(f"point ({x}, {y}) is not within 2 lane widths of any segment")
    return FrenetPose(segment=best[0], l=best[1], d=best[3])


def drivable(point, layout: RoadLayout) -> bool:
    """True iff the point lies within half a width of some centerline (closed boundary)."""
    x, y = float(point[0]), float(point[1])
    for seg in layout.segments.values():
        _, d, valid, _ = seg.project(x, y)
        if valid and abs(d) <= seg.width * 0.5 + 1e-9:
            return True
    return False


def drivable_mask(layout: RoadLayout, pts: np.ndarray) -> np.ndarray:
    """Vectorized drivable() over an (N, 2) point array."""
    pts = np.asarray(pts, dtype=np.float64)
    mask = np.zeros(len(pts), dtype=bool)
    for seg in layout.segments.values():
        _, d, valid = seg.project_many(pts)
        mask |= valid & (np.abs(d) <= seg.width * 0.5 + 1e-9)
    return mask


# -- scenario construction --------------------------------------------


@dataclass
class GeometryParams:
    """Scenario geometry knobs with documented ranges.

    lane_width 3..4 m; n_lanes 1..4; lane_length 60..2000 m (cruise);
    mainline_length 200..2000 m (merge/exit); aux_start/aux_length place
    the acceleration or deceleration lane; roundabout_radius 15..30 m;
    approach_length 20..200 m (roundabout/intersection legs);
    exit_leg_length 20..200 m.  goal_longitude < 0 means the per-scenario
    default threshold.
    """

    lane_width: float = 4.0
    n_lanes: int = 2
    lane_length: float = 240.0
    mainline_length: float = 500.0
    aux_start: float = 120.0
    aux_length: float = 100.0
    roundabout_radius: float = 20.0
    approach_length: float = 50.0
    exit_leg_length: float = 60.0
    goal_longitude: float = -1.0

    def validate(self):
        checks = [
            ("lane_width", self.lane_width, 3.0, 4.0),
            ("n_lanes", self.n_lanes, 1, 4),
            ("lane_length", self.lane_length, 60.0, 2000.0),
            ("mainline_length", self.mainline_length, 200.0, 2000.0),
            ("aux_start", self.aux_start, 20.0, 1500.0),
            ("aux_length", self.aux_length, 40.0, 500.0),
            ("roundabout_radius", self.roundabout_radius, 15.0, 30.0),
            ("approach_length", self.approach_length, 20.0, 200.0),
            ("exit_leg_length", self.exit_leg_length, 20.0, 200.0),
        ]
        for name, val, lo, hi in checks:
            if not (lo <= val <= hi):
                raise InvalidParamsError(f"{name}={val} outside [{lo}, {hi}]")
        if self.aux_start + self.aux_length > self.mainline_length - 40.0:
            raise InvalidParamsError("auxiliary lane must end 40 m before the mainline ends")


def build_scenario(kind: ScenarioKind, params: GeometryParams = None) -> RoadLayout:
    """Construct one of the five road topologies; deterministic in params."""
    params = params or GeometryParams()
    params.validate()
    builder = {
        ScenarioKind.HIGHWAY_CRUISE: _build_cruise,
        ScenarioKind.HIGHWAY_MERGE: _build_merge,
        ScenarioKind.HIGHWAY_EXIT: _build_exit,
        ScenarioKind.INTERSECTION: _build_intersection,
        ScenarioKind.ROUNDABOUT: _build_roundabout,
    }[kind]
    return builder(params)


def _chain_backward(end_x, end_y, end_heading, pieces):
    """Build a forward chain of (kind, length, curvature) ending at a pose.

    Returns a list of (start, heading) poses, one per piece, such that
    piece i ends exactly where piece i+1 starts and the last piece ends at
    the given pose.
    """
    poses = []
    x, y, psi = end_x, end_y, end_heading
    for kind, length, curv in reversed(pieces):
        psi0 = psi - curv * length
        if kind == "straight":
            x0 = x - length * math.cos(psi0)
            y0 = y - length * math.sin(psi0)
        else:
            # walk back around the circle: center = end + (1/k) * n(psi_end)
            cx = x - math.sin(psi) / curv
            cy = y + math.cos(psi) / curv
            x0 = cx + math.sin(psi0) / curv
            y0 = cy - math.cos(psi0) / curv
        poses.append(((x0, y0), psi0))
        x, y, psi = x0, y0, psi0
    return list(reversed(poses))


def _build_cruise(p: GeometryParams) -> RoadLayout:
    w, L = p.lane_width, p.lane_length
    segs = [
        LaneSegment(i, "straight", (0.0, i * w), 0.0, L, 0.0, w)
        for i in range(p.n_lanes)
    ]
    thr = p.goal_longitude if p.goal_longitude >= 0 else L
    return RoadLayout(
        ScenarioKind.HIGHWAY_CRUISE, segs,
        spawn_lanes=tuple(range(p.n_lanes)),
        mission_goal=(0, thr),
        goal_group=tuple(range(p.n_lanes)),
        ego_spawn=0,
    )


def _build_merge(p: GeometryParams) -> RoadLayout:
    w, L = p.lane_width, p.mainline_length
    n = p.n_lanes
    segs = [LaneSegment(i, "straight", (0.0, i * w), 0.0, L, 0.0, w) for i in range(n)]
    # ramp: angled approach + right-hand arc straightening onto the
    # acceleration lane one width right of lane 0
    gamma, r = 0.35, 60.0
    approach_len = 60.0
    pieces = [("straight", approach_len, 0.0), ("arc", r * gamma, -1.0 / r)]
    poses = _chain_backward(p.aux_start, -w, 0.0, pieces)
    aid, cid, lid = n, n + 1, n + 2
    segs.append(LaneSegment(aid, "straight", poses[0][0], poses[0][1], approach_len, 0.0, w,
                            successors=(cid,)))
    segs.append(LaneSegment(cid, "arc", poses[1][0], poses[1][1], r * gamma, -1.0 / r, w,
                            successors=(lid,)))
    segs.append(LaneSegment(lid, "straight", (p.aux_start, -w), 0.0, p.aux_length, 0.0, w))
    thr = p.goal_longitude if p.goal_longitude >= 0 else p.aux_start + p.aux_length + 60.0
    return RoadLayout(
        ScenarioKind.HIGHWAY_MERGE, segs,
        spawn_lanes=tuple(range(n)) + (aid,),
        mission_goal=(0, thr),
        goal_group=tuple(range(n)),
        ego_spawn=aid,
    )


def _build_exit(p: GeometryParams) -> RoadLayout:
    w, L = p.lane_width, p.mainline_length
    n = p.n_lanes
    segs = [LaneSegment(i, "straight", (0.0, i * w), 0.0, L, 0.0, w) for i in range(n)]
    gamma, r = 0.35, 60.0
    did, cid, eid = n, n + 1, n + 2
    # deceleration lane right of lane 0, then a right-hand arc onto the exit leg
    segs.append(LaneSegment(did, "straight", (p.aux_start, -w), 0.0, p.aux_length, 0.0, w,
                            successors=(cid,)))
    arc = LaneSegment(cid, "arc", (p.aux_start + p.aux_length, -w), 0.0, r * gamma, -1.0 / r, w,
                      successors=(eid,))
    segs.append(arc)
    ax, ay, apsi = arc.end_pose()
    segs.append(LaneSegment(eid, "straight", (ax, ay), apsi, p.exit_leg_length, 0.0, w))
    thr = p.goal_longitude if p.goal_longitude >= 0 else p.exit_leg_length - 10.0
    return RoadLayout(
        ScenarioKind.HIGHWAY_EXIT, segs,
        spawn_lanes=tuple(range(n)),
        mission_goal=(eid, thr),
        goal_group=(eid,),
        ego_spawn=0,
    )


def _rot(pt, k):
    """Rotate a point by k * 90 degrees about the origin."""
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k % 4]
    return (pt[0] * c - pt[1] * s, pt[0] * s + pt[1] * c)


def _build_intersection(p: GeometryParams) -> RoadLayout:
    """4-way single-lane-per-approach crossing, right-hand traffic.

    Road k's incoming direction of travel is k*90 deg (k=0 eastbound).
    Segment ids: approach k -> k; straight/right/left connectors of
    approach k -> 4+3k..6+3k; outgoing leg with direction j*90 -> 16+j.
    """
    w, L = p.lane_width, p.approach_length
    h = w  # junction half-size: lane centers at +-w/2, curb at +-w
    segs = []
    junction = []
    for k in range(4):
        # base construction for k = 0 (eastbound from the west), rotated
        appr_start = _rot((-h - L, -w / 2.0), k)
        heading = k * math.pi / 2.0
        sid_a = k
        sid_s, sid_r, sid_l = 4 + 3 * k, 5 + 3 * k, 6 + 3 * k
        out_straight = 16 + k
        out_right = 16 + (k - 1) % 4
        out_left = 16 + (k + 1) % 4
        segs.append(LaneSegment(sid_a, "straight", appr_start, heading, L, 0.0, w,
                                successors=(sid_s, sid_r, sid_l)))
        entry = _rot((-h, -w / 2.0), k)
        segs.append(LaneSegment(sid_s, "straight", entry, heading, 2.0 * h, 0.0, w,
                                successors=(out_straight,)))
        r_r = h - w / 2.0
        segs.append(LaneSegment(sid_r, "arc", entry, heading, r_r * math.pi / 2.0, -1.0 / r_r, w,
                                successors=(out_right,)))
        r_l = h + w / 2.0
        segs.append(LaneSegment(sid_l, "arc", entry, heading, r_l * math.pi / 2.0, 1.0 / r_l, w,
                                successors=(out_left,)))
        junction += [sid_s, sid_r, sid_l]
    for j in range(4):
        out_start = _rot((h, -w / 2.0), j)
        segs.append(LaneSegment(16 + j, "straight", out_start, j * math.pi / 2.0, L, 0.0, w))
    thr = p.goal_longitude if p.goal_longitude >= 0 else L - 10.0
    return RoadLayout(
        ScenarioKind.INTERSECTION, segs,
        spawn_lanes=(0, 1, 2, 3),
        mission_goal=(16, thr),
        goal_group=(16, 17, 18, 19),  # crossing safely counts whichever leg
        ego_spawn=0,
        junction_segments=junction,
    )


def _build_roundabout(p: GeometryParams) -> RoadLayout:
    """Single-lane ring with four radial roads, counterclockwise flow.

    Ring vertices sit at -30 + 90k degrees.  Road k (0 south, 1 east,
    2 north, 3 west) enters at vertex k via a right-hand arc and exits at
    vertex k-1.  Segment ids: ring arcs 0..3 (arc k runs vertex k ->
    k+1); road k approach 4+k, entry arc 8+k, exit arc 12+k, exit leg
    16+k.  Mission: take the exit of road 2 (north).
    """
    R, w, A = p.roundabout_radius, p.lane_width, p.approach_length
    E = p.exit_leg_length
    gamma = math.pi / 6.0
    r_e = max(8.0, 0.6 * R)
    segs = []
    # vertex k (where road k's entry lands) sits at angle k*90 - 30 deg
    vert_angle = [k * math.pi / 2.0 - gamma for k in range(4)]
    for k in range(4):
        th = vert_angle[k]
        start = (R * math.cos(th), R * math.sin(th))
        segs.append(LaneSegment(k, "arc", start, th + math.pi / 2.0, R * math.pi / 2.0,
                                1.0 / R, w, successors=((k + 1) % 4, 12 + (k + 2) % 4)))
    for k in range(4):
        # entry: approach straight northward (rotated by k), then a
        # right-hand arc of radius r_e meeting the ring at vertex k
        th_join = vert_angle[k]
        base_x = R * math.cos(gamma) - r_e * (1.0 - math.cos(gamma))
        base_y = -(R + r_e) * math.sin(gamma)
        arc_start = _rot((base_x, base_y), k)
        appr_start = _rot((base_x, base_y - A), k)
        heading = math.pi / 2.0 + k * math.pi / 2.0
        segs.append(LaneSegment(4 + k, "straight", appr_start, heading, A, 0.0, w,
                                successors=(8 + k,)))
        segs.append(LaneSegment(8 + k, "arc", arc_start, heading, r_e * gamma, -1.0 / r_e, w,
                                successors=(k,)))
        # exit: right-hand arc leaving vertex k-1, then a straight leg south
        th_leave = vert_angle[(k - 1) % 4]
        leave = (R * math.cos(th_leave), R * math.sin(th_leave))
        sweep = math.pi / 2.0 - gamma
        exit_arc = LaneSegment(12 + k, "arc", leave, th_leave + math.pi / 2.0,
                               r_e * sweep, -1.0 / r_e, w, successors=(16 + k,))
        segs.append(exit_arc)
        ex, ey, epsi = exit_arc.end_pose()
        segs.append(LaneSegment(16 + k, "straight", (ex, ey), epsi, E, 0.0, w))
    thr = p.goal_longitude if p.goal_longitude >= 0 else E - 10.0
    return RoadLayout(
        ScenarioKind.ROUNDABOUT, segs,
        spawn_lanes=(4, 5, 6, 7, 0, 1, 2, 3),
        mission_goal=(18, thr),
        goal_group=(18,),
        ego_spawn=4,
        junction_segments=[0, 1, 2, 3, 8, 9, 10, 11],
    )
