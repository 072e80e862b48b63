"""
Tests for the off-chip firing-pattern controller
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from aer_bus import AERSample  # noqa: E402
from event_engine import EventKind  # noqa: E402
from pattern_controller import (  # noqa: E402
    Adaptation,
    Burst,
    Passive,
    PatternController,
    ResetCommand,
    Tonic,
    command_to_event,
    initial_state,
    on_sample,
    parse_mode,
)
from sim_errors import ConfigValidationError  # noqa: E402

MS = 1_000_000_000
NS = 1_000


def feed_pattern(mode, pattern):
    """Run on_sample over a list of booleans; return the issued commands"""
    state = initial_state(mode)
    commands = []
    for k, active in enumerate(pattern):
        state, command = on_sample(state, AERSample(k * MS, 0, 0, active))
        if command is not None:
            commands.append(command)
    return commands


def test_passive_never_resets():
    """Passive ignores every sample"""
    assert feed_pattern(Passive(), [True] * 10) == []


def test_tonic_resets_every_active_sample():
    """Tonic answers each active sample with one reset of fixed width"""
    commands = feed_pattern(Tonic(24 * NS), [False, True, True, False, True])
    assert [c.issue_time for c in commands] == [1 * MS, 2 * MS, 4 * MS]
    assert all(c.duration == 24 * NS for c in commands)


def test_burst_counts_consecutive_actives():
    """A reset follows the fifth consecutive active sample"""
    commands = feed_pattern(Burst(5, 24 * NS), [True] * 4 + [False] + [True] * 5)
    assert [c.issue_time for c in commands] == [9 * MS]


def test_burst_reset_count_matches_runs():
    """Resets = sum of floor(run length / 5) over active runs"""
    runs = [7, 12, 3, 5]
    pattern = []
    for length in runs:
        pattern += [True] * length + [False]
    commands = feed_pattern(Burst(5, 24 * NS), pattern)
    assert len(commands) == sum(r // 5 for r in runs)


def test_adaptation_staircase():
    """Reset width grows 3 ns per reset and clamps at 32 ns"""
    mode = Adaptation(3 * NS, 3 * NS, 32 * NS)
    commands = feed_pattern(mode, [True, False] * 13)
    expected = [min(3 * NS * (k + 1), 32 * NS) for k in range(13)]
    assert [c.duration for c in commands] == expected
    assert expected[-3:] == [32 * NS, 32 * NS, 32 * NS]


def test_adaptation_decay_restores_initial_width():
    """With decay_after the width resets after enough quiet samples"""
    mode = Adaptation(3 * NS, 3 * NS, 32 * NS, decay_after=3)
    commands = feed_pattern(mode, [True, True, False, False, False, True])
    assert [c.duration for c in commands] == [3 * NS, 6 * NS, 3 * NS]
    commands = feed_pattern(Adaptation(3 * NS, 3 * NS, 32 * NS), [True, True, False, False, False, True])
    assert [c.duration for c in commands] == [3 * NS, 6 * NS, 9 * NS]


def test_mode_validation():
    """Non-positive widths and counts are rejected"""
    with pytest.raises(ConfigValidationError):
        Tonic(0)
    with pytest.raises(ConfigValidationError):
        Burst(0, 24 * NS)
    with pytest.raises(ConfigValidationError):
        Adaptation(40 * NS, 3 * NS, 32 * NS)


def test_parse_mode_round_trip():
    """describe() output parses back to the same mode"""
    modes = [
        Passive(),
        Tonic(24 * NS),
        Burst(5, 32 * NS),
        Adaptation(3 * NS, 3 * NS, 32 * NS),
        Adaptation(3 * NS, 3 * NS, 32 * NS, decay_after=4),
    ]
    for mode in modes:
        assert parse_mode(mode.describe()) == mode
    assert parse_mode("tonic:24ns") == Tonic(24_000)
    assert parse_mode("burst:5:0.032us") == Burst(5, 32_000)


@pytest.mark.parametrize("text", ["", "tonic", "burst:5", "adaptation:3ns:3ns", "tonic:abc", "chaotic:1ns"])
def test_parse_mode_errors(text):
    """Malformed modes raise a validation error"""
    with pytest.raises(ConfigValidationError):
        parse_mode(text)


def test_command_to_event_latency():
    """Feedback latency delays the reset event"""
    c = ResetCommand(neuron_id=3, issue_time=2 * MS, duration=24 * NS)
    e = command_to_event(c)
    assert (e.time, e.neuron_id, e.kind, e.duration) == (2 * MS, 3, EventKind.RESET, 24 * NS)
    assert command_to_event(c, latency=500).time == 2 * MS + 500
    with pytest.raises(ValueError):
        command_to_event(c, latency=-1)


def test_controller_per_neuron_modes():
    """Each neuron keeps its own state; unknown ids use the default mode"""
    controller = PatternController({1: Burst(2, 24 * NS)}, default=Tonic(10 * NS), latency=1_000)
    assert controller.is_passive(5) is False
    assert isinstance(controller.mode_of(1), Burst)

    first = controller.feed(AERSample(0, 0, 0, True))
    assert first is not None
    command, event = first
    assert command.duration == 10 * NS and event.time == 1_000

    assert controller.feed(AERSample(0, 1, 1, True)) is None
    command, event = controller.feed(AERSample(MS, 1, 1, True))
    assert command.duration == 24 * NS and event.time == MS + 1_000
    assert controller.states[1].consecutive_active_count == 0


def test_bank_matches_per_neuron_rules():
    """The array bank issues the same resets as on_sample, mode by mode"""
    modes = [
        Passive(),
        Tonic(24 * NS),
        Burst(3, 24 * NS),
        Adaptation(3 * NS, 3 * NS, 12 * NS),
        Adaptation(3 * NS, 3 * NS, 32 * NS, decay_after=2),
    ]
    controller = PatternController(dict(enumerate(modes)), latency=500)
    bank = controller.bank(range(len(modes)))
    assert bank.latency == 500
    rng = np.random.default_rng(7)
    pattern = rng.random((40, len(modes))) < 0.6
    issued = {nid: [] for nid in range(len(modes))}
    for k, row in enumerate(pattern):
        fired, widths = bank.feed(np.arange(len(modes)), row)
        for nid, width in zip(fired.tolist(), widths.tolist()):
            issued[nid].append(bank.command(nid, k * MS, width))
    for nid, mode in enumerate(modes):
        expected = [replace(c, neuron_id=nid) for c in feed_pattern(mode, pattern[:, nid].tolist())]
        assert issued[nid] == expected, mode
