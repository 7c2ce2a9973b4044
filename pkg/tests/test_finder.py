import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from mikado.errors import ValidationError
from mikado.evaluation import particle_efficiency
from mikado.event_model import Event, Hit, Particle, TruthLink
from mikado.finder import (PreparedEvent, TrackCandidate, brute_force_tracklets, build_indexes,
                           construct_tracklets, prolong, run, run_detailed, run_reference, select)
from mikado.schedule import PassConfig, Schedule
from mikado.synth import GenConfig, generate_event, layer_crossings, particle_helix

PIXEL3 = ((8, 2), (8, 4), (8, 6))


def _particle(pid, pt, phi, eta, q=1, z0=0.0):
    return Particle(pid, 0.0, 0.0, z0, pt * math.cos(phi), pt * math.sin(phi), pt * math.sinh(eta), q)


def _track_event(detector, particles, drop=(), shift=None):
    """Noiseless hits at every layer crossing; ``drop`` lists layer keys to skip."""
    hits, truth = [], []
    for p in particles:
        for surf, c in layer_crossings(particle_helix(p, 2.0), detector):
            if surf.key in drop:
                continue
            z = c.z + (shift[1] if shift and shift[0] == surf.key else 0.0)
            hid = len(hits) + 1
            hits.append(Hit(hid, c.x, c.y, z, *surf.key))
            truth.append(TruthLink(hid, p.particle_id, 1.0))
    return Event(1, tuple(hits), tuple(particles), tuple(truth))


def _loose(schedule):
    return schedule[9]  # loosest three-pixel-layer pass


def _tracklets(ev, detector, cfg):
    prep = PreparedEvent.from_event(ev, detector)
    idx = build_indexes(prep, set(prep.hit_ids), cfg)
    return construct_tracklets(cfg, idx, detector, prep.layer_hits[cfg.base_layers[0]]), idx, prep


def _cand(ids, dev=0.1):
    return TrackCandidate(list(ids), {h: dev for h in ids}, None, 0)


# -------------------------------------------------------------------- run

def test_empty_event(detector, schedule):
    sol = run(Event(1, ()), detector, schedule)
    assert sol.assignment == {}


def test_single_track_one_id(detector, schedule):
    ev = _track_event(detector, [_particle(1, 2.0, 0.7, 0.3)])
    assert len(ev.hits) >= 8
    sol = run(ev, detector, Schedule((_loose(schedule),)))
    assert len(set(sol.assignment.values())) == 1 and 0 not in sol.assignment.values()


@pytest.mark.parametrize("seed", [1, 2])
def test_generated_single_tracks(detector, schedule, seed):
    cfg = GenConfig(n_primaries=1, pt_range=(0.5, 5), eta_range=(-1.5, 1.5), secondary_fraction=0.0,
                    duplicate_prob=0.0, rng_seed=seed).noiseless()
    ev = generate_event(cfg, 1, detector)
    sol = run(ev, detector, Schedule((_loose(schedule),)))
    assert len(set(sol.assignment.values())) == 1 and 0 not in sol.assignment.values()


def test_unknown_layer_rejected(detector, schedule):
    ev = Event(1, (Hit(1, 32.0, 0.0, 0.0, 99, 1),))
    with pytest.raises(ValidationError):
        run(ev, detector, schedule)
    with pytest.raises(ValidationError):
        run(Event(1, ()), detector, schedule, workers=0)


def test_disjoint_and_monotone(detector, schedule, small_event):
    res = run_detailed(small_event, detector, schedule)
    seen = set()
    for t in res.tracks:
        assert not seen & set(t.hit_ids)
        seen.update(t.hit_ids)
    assert [t.track_id for t in res.tracks] == list(range(1, len(res.tracks) + 1))
    assert [t.pass_index for t in res.tracks] == sorted(t.pass_index for t in res.tracks)
    assert sum(s["hits_used"] for s in res.pass_stats) == len(seen)
    assigned = {h for h, t in res.solution.assignment.items() if t}
    assert assigned == seen and set(res.solution.assignment) == {h.hit_id for h in small_event.hits}


def test_workers_identical(detector, schedule, small_event):
    a = run(small_event, detector, schedule, workers=1)
    b = run(small_event, detector, schedule, workers=2)
    c = run(small_event, detector, schedule, workers=3)
    assert a == b == c


def test_clean_event_efficiency(detector, schedule, clean_event):
    eff, _ = particle_efficiency(clean_event, run(clean_event, detector, schedule))
    assert eff >= 0.95


@pytest.mark.parametrize("seed", range(4))
def test_grid_matches_scan(detector, schedule, seed):
    ev = generate_event(GenConfig(n_primaries=25, rng_seed=seed), 1, detector)
    assert len(ev.hits) <= 300
    for idx in (0, 1, 9, 10, 11):
        one = Schedule((schedule[idx],))
        assert run(ev, detector, one) == run_reference(ev, detector, one)


# -------------------------------------------------------------- tracklets

def test_single_tracklet(detector, schedule):
    p = _particle(1, 3.0, -2.0, 0.4)
    ev = _track_event(detector, [p])
    ev = Event(1, tuple(h for h in ev.hits if (h.volume_id, h.layer_id) in PIXEL3), ev.particles,
               tuple(t for t in ev.truth if t.hit_id <= 3))
    assert len(ev.hits) == 3
    trs, _, _ = _tracklets(ev, detector, schedule[0])
    assert len(trs) == 1 and trs[0].z_residual < 1e-9


def test_z_shift_beyond_cut_kills_tracklet(detector, schedule):
    cfg = schedule[0]
    p = _particle(1, 3.0, -2.0, 0.4)
    ok = _track_event(detector, [p], shift=((8, 2), 0.9 * cfg.z_residual_cut))
    assert len(_tracklets(ok, detector, cfg)[0]) == 1
    bad = _track_event(detector, [p], shift=((8, 2), 2.0 * cfg.z_residual_cut))
    assert _tracklets(bad, detector, cfg)[0] == []


def test_origin_seed_tracklet(detector, schedule):
    cfg = schedule[1]
    assert cfg.use_origin_seed
    trs, _, _ = _tracklets(_track_event(detector, [_particle(1, 1.0, 0.3, -0.8)]), detector, cfg)
    assert len(trs) == 1 and len(trs[0].hits) == 2 and trs[0].origin


@pytest.mark.parametrize("idx", [0, 1, 5, 9, 10])
def test_tracklets_match_brute_force(detector, schedule, idx):
    cfg = schedule[idx]
    ev = generate_event(GenConfig(n_primaries=30, rng_seed=11 + idx), 1, detector)
    trs, _, prep = _tracklets(ev, detector, cfg)
    first = prep.layer_hits[cfg.base_layers[0]]
    ref = brute_force_tracklets(cfg, prep.layer_hits, detector, first)
    ids = lambda ts: sorted(tuple(h.hit_id for h in t.hits) for t in ts)  # noqa: E731
    assert ids(trs) == ids(ref) and trs


# ------------------------------------------------------------ prolongation

def test_isolated_track_one_candidate(detector, schedule):
    ev = _track_event(detector, [_particle(1, 1.5, 2.5, 0.2, q=-1)])
    cfg = schedule[0]
    trs, idx, _ = _tracklets(ev, detector, cfg)
    assert len(trs) == 1
    cands = prolong(trs[0], cfg, idx, detector)
    assert len(cands) == 1
    assert cands[0].hit_ids == sorted(h.hit_id for h in ev.hits) and cands[0].n_missing == 0


def test_hole_counted(detector, schedule):
    ev = _track_event(detector, [_particle(1, 1.5, 2.5, 0.2, q=-1)], drop={(13, 4)})
    cfg = schedule[0]
    trs, idx, _ = _tracklets(ev, detector, cfg)
    cands = prolong(trs[0], cfg, idx, detector)
    assert len(cands) == 1
    assert cands[0].hit_ids == sorted(h.hit_id for h in ev.hits) and cands[0].n_missing == 1


def test_two_holes_stop_prolongation(detector, schedule):
    ev = _track_event(detector, [_particle(1, 1.5, 2.5, 0.2, q=-1)], drop={(13, 4), (13, 6)})
    cfg = schedule[0]
    trs, idx, _ = _tracklets(ev, detector, cfg)
    (cand,) = prolong(trs[0], cfg, idx, detector)
    layers = {(h.volume_id, h.layer_id) for h in ev.hits if h.hit_id in cand.hit_ids}
    assert layers == {(8, 2), (8, 4), (8, 6), (13, 2)}


def test_inward_prolongation(detector, schedule):
    # seeds on layers 2-4 must pick up the innermost pixel layer on the way back
    ev = _track_event(detector, [_particle(1, 4.0, 1.0, -0.3)])
    cfg = schedule[2]
    trs, idx, _ = _tracklets(ev, detector, cfg)
    (cand,) = prolong(trs[0], cfg, idx, detector)
    assert cand.hit_ids == sorted(h.hit_id for h in ev.hits)


def test_duplicates_picked_up(detector, schedule):
    ev = _track_event(detector, [_particle(1, 2.0, 0.4, 0.1)])
    extra = [Hit(len(ev.hits) + i + 1, h.x, h.y, h.z + 0.2, h.volume_id, h.layer_id)
             for i, h in enumerate(ev.hits[:5])]
    ev = Event(1, ev.hits + tuple(extra), ev.particles,
               ev.truth + tuple(TruthLink(h.hit_id, 1, 1.0) for h in extra))
    sol = run(ev, detector, Schedule((schedule[0],)))
    assert set(sol.assignment.values()) == {1}


def test_interleaved_tracks_branch(detector):
    a = _particle(1, 3.0, 0.50, 0.2)
    b = _particle(2, 2.0, 0.51, 0.2, q=-1)
    ev = _track_event(detector, [a, b])
    wide = {k: (0.1, 40.0) for k in detector.keys}
    cfg = PassConfig(base_layers=PIXEL3, window_l2=(0.2, 300.0), window_l3=(0.2, 40.0), layer_windows=wide,
                     z_residual_cut=1.0, max_branches=16)
    trs, idx, _ = _tracklets(ev, detector, cfg)
    cands = [c for tr in trs for c in prolong(tr, cfg, idx, detector)]
    assert len(cands) >= 2
    truth = {pid: sorted(t.hit_id for t in ev.truth if t.particle_id == pid) for pid in (1, 2)}
    got = [c.hit_ids for c in cands]
    assert truth[1] in got and truth[2] in got
    tracks, _ = select(cands, cfg)
    assert sorted(list(t.hit_ids) for t in tracks) == sorted(truth.values())


# --------------------------------------------------------------- selection

def _cfg(**kw):
    return PassConfig(base_layers=PIXEL3, **kw)


def test_select_single_and_min():
    tracks, used = select([_cand([1, 2, 3])], _cfg())
    assert [t.hit_ids for t in tracks] == [(1, 2, 3)] and used == {1, 2, 3}
    assert select([_cand([1, 2, 3])], _cfg(selection_min_hits=4))[0] == []
    assert select([], _cfg()) == ([], set())


def test_select_count_order():
    tracks, _ = select([_cand([1, 2, 3]), _cand([4, 5, 6, 7])], _cfg(), first_track_id=5, pass_index=2)
    assert [(t.track_id, t.hit_ids, t.pass_index) for t in tracks] == [(5, (4, 5, 6, 7), 2), (6, (1, 2, 3), 2)]


def test_select_hand_trace():
    cands = [
        _cand([1, 2, 3, 4, 5], 0.1),      # A
        _cand([4, 5, 6, 7, 8, 9], 0.5),   # B
        _cand([1, 2, 10], 0.3),           # C
        _cand([6, 7, 8], 0.2),            # D
        _cand([11, 12, 13], 0.2),         # E
        _cand([11, 12, 14], 0.2),         # F, ties E on count and deviation
    ]
    # B (6 hits) first; A shrinks to {1,2,3} and beats C on deviation; D dies;
    # E wins the tie against F by lowest hit id and F drops below three hits
    tracks, used = select(cands, _cfg())
    assert [t.hit_ids for t in tracks] == [(4, 5, 6, 7, 8, 9), (1, 2, 3), (11, 12, 13)]
    assert used == {1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13}


def test_select_deviation_tiebreak():
    tracks, _ = select([_cand([1, 2, 3], 0.5), _cand([3, 4, 5], 0.1)], _cfg())
    assert [t.hit_ids for t in tracks] == [(3, 4, 5)]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_select_order_independent_and_disjoint(seed):
    rng = random.Random(seed)
    cands = []
    for _ in range(rng.randint(0, 12)):
        ids = rng.sample(range(1, 25), rng.randint(3, 8))
        cands.append(TrackCandidate(ids, {h: rng.choice((0.1, 0.2, 0.3)) for h in ids}, None, 0))
    cfg = _cfg(selection_min_hits=rng.randint(1, 4))
    tracks, used = select(cands, cfg)
    shuffled = cands[:]
    rng.shuffle(shuffled)
    assert select(shuffled, cfg) == (tracks, used)
    seen = set()
    for t in tracks:
        assert not seen & set(t.hit_ids) and len(t.hit_ids) >= cfg.min_hits
        seen.update(t.hit_ids)
    assert seen == used
