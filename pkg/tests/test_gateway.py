import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from shopsim.gateway import (
    FrameError,
    GatewayCore,
    Message,
    decode_frame,
    encode_frame,
    load_tokens,
    record_session_frames,
)
from shopsim.runtime import tick

from .helpers import make_world

TOKENS = {"op-token": "operator", "view-token": "viewer"}


class TestCodec:
    def test_ping_decodes(self):
        msg = decode_frame(b'{"v":1,"type":"PING","seq":7,"ts_ms":0}')
        assert msg == Message("PING", 7, 0)

    def test_trailing_newline_accepted(self):
        assert decode_frame(b'{"v":1,"type":"PING","seq":7,"ts_ms":0}\n').seq == 7

    def test_bad_version(self):
        with pytest.raises(FrameError) as err:
            decode_frame(b'{"v":2,"type":"PING","seq":1,"ts_ms":0}')
        assert err.value.code == "BadVersion"

    def test_overlong_frame(self):
        blob = b'{"v":1,"type":"PING","seq":1,"ts_ms":0,"pad":"' + b"x" * (70 * 1024) + b'"}'
        with pytest.raises(FrameError) as err:
            decode_frame(blob)
        assert err.value.code == "FrameTooLong"

    def test_unknown_type(self):
        with pytest.raises(FrameError) as err:
            decode_frame(b'{"v":1,"type":"GOSSIP","seq":1,"ts_ms":0}')
        assert err.value.code == "UnknownType"

    @pytest.mark.parametrize(
        "line",
        [
            b"not json at all",
            b'{"v":1,"type":"PING","seq":-4,"ts_ms":0}',
            b'{"v":1,"type":"PING","seq":true,"ts_ms":0}',
            b"[1,2,3]",
            b"\xff\xfe\x00garbage",
        ],
    )
    def test_malformed(self, line):
        with pytest.raises(FrameError) as err:
            decode_frame(line)
        assert err.value.code == "MalformedJson"

    @pytest.mark.parametrize(
        "line,missing",
        [
            (b'{"type":"PING","seq":1,"ts_ms":0}', "v"),
            (b'{"v":1,"seq":1,"ts_ms":0}', "type"),
            (b'{"v":1,"type":"PING","ts_ms":0}', "seq"),
            (b'{"v":1,"type":"COMMAND","seq":1,"ts_ms":0}', "device_id"),
            (b'{"v":1,"type":"NACK","seq":1,"ts_ms":0,"ref_seq":1}', "code"),
        ],
    )
    def test_missing_fields(self, line, missing):
        with pytest.raises(FrameError) as err:
            decode_frame(line)
        assert err.value.code == "MissingField"
        assert missing in err.value.reason

    def test_canonical_encoding_is_sorted_and_terminated(self):
        line = encode_frame(Message("PONG", 3, 1000))
        assert line == b'{"seq":3,"ts_ms":1000,"type":"PONG","v":1}\n'

    def test_encode_rejects_envelope_shadowing(self):
        with pytest.raises(ValueError):
            encode_frame(Message("EVENT", 1, 0, {"name": "x", "payload": {}, "seq": 9}))


_WORDS = st.text("abcdefgh-123", min_size=1, max_size=8)

_BODY_BY_TYPE = {
    "HELLO": st.fixed_dictionaries({"token": _WORDS, "role": st.sampled_from(["operator", "viewer"])}),
    "WELCOME": st.fixed_dictionaries({"session_id": _WORDS, "role": st.just("viewer")}),
    "SUBSCRIBE": st.fixed_dictionaries({"patterns": st.lists(_WORDS, max_size=3)}),
    "STATE": st.fixed_dictionaries(
        {"device_id": _WORDS, "kind": st.just("Siren"), "state": st.fixed_dictionaries({"on": st.booleans()})}
    ),
    "COMMAND": st.fixed_dictionaries({"device_id": _WORDS, "action": _WORDS}),
    "ACK": st.fixed_dictionaries({"ref_seq": st.integers(0, 2**32)}),
    "NACK": st.fixed_dictionaries(
        {"ref_seq": st.integers(0, 2**32), "code": _WORDS, "reason": _WORDS}
    ),
    "EVENT": st.fixed_dictionaries({"name": _WORDS, "payload": st.dictionaries(_WORDS, st.integers(), max_size=3)}),
    "SNAPSHOT_REQ": st.just({}),
    "SNAPSHOT_RES": st.fixed_dictionaries(
        {"snapshot": st.dictionaries(_WORDS, st.floats(allow_nan=False, allow_infinity=False), max_size=3)}
    ),
    "PING": st.just({}),
    "PONG": st.just({}),
}


@st.composite
def messages(draw):
    frame_type = draw(st.sampled_from(sorted(_BODY_BY_TYPE)))
    return Message(
        frame_type,
        draw(st.integers(0, 2**53)),
        draw(st.integers(0, 2**53)),
        draw(_BODY_BY_TYPE[frame_type]),
    )


class TestCodecLaws:
    @given(messages())
    def test_round_trip(self, msg):
        assert decode_frame(encode_frame(msg)) == msg

    @given(messages())
    def test_encode_deterministic(self, msg):
        assert encode_frame(msg) == encode_frame(msg)

    def test_decoder_survives_fuzz(self):
        """Random bytes and mutated valid frames: structured error or
        success, never a crash."""
        rng = random.Random(0xF00D)
        valid = encode_frame(
            Message("COMMAND", 5, 17, {"device_id": "fan-1", "action": "SetSpeed", "arg": "Low"})
        )
        outcomes = {"ok": 0, "err": 0}
        for i in range(20_000):
            if i % 2:
                data = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 120)))
            else:
                data = bytearray(valid)
                for _ in range(rng.randrange(1, 6)):
                    data[rng.randrange(len(data))] = rng.randrange(256)
                data = bytes(data)
            try:
                decode_frame(data)
                outcomes["ok"] += 1
            except FrameError:
                outcomes["err"] += 1
        assert outcomes["err"] > 0


def _core(world_holder):
    return GatewayCore(lambda: world_holder["world"], TOKENS)


def _hello(core, sid, token="op-token", role="operator", seq=1):
    return core.handle_line(
        sid, encode_frame(Message("HELLO", seq, 0, {"token": token, "role": role}))
    )


def _decode_all(outs):
    return [(sid, decode_frame(data)) for sid, data in outs]


@pytest.fixture
def holder():
    return {"world": make_world()}


class TestRegistration:
    def test_welcome_includes_full_state_dump(self, holder):
        core = _core(holder)
        sid = core.open_session()
        msgs = [m for _, m in _decode_all(_hello(core, sid))]
        assert msgs[0].type == "WELCOME"
        states = [m for m in msgs if m.type == "STATE"]
        assert len(states) == len(holder["world"].manifest)
        assert [m.body["device_id"] for m in states] == sorted(holder["world"].devices)

    def test_unknown_token_closes(self, holder):
        core = _core(holder)
        sid = core.open_session()
        msgs = [m for _, m in _decode_all(_hello(core, sid, token="wrong"))]
        assert msgs[0].type == "NACK" and msgs[0].body["code"] == "AuthFailed"
        assert core.sessions[sid].closing

    def test_viewer_token_cannot_claim_operator(self, holder):
        core = _core(holder)
        sid = core.open_session()
        msgs = [m for _, m in _decode_all(_hello(core, sid, token="view-token", role="operator"))]
        assert msgs[0].body["code"] == "RoleDenied"

    def test_operator_token_may_downgrade(self, holder):
        core = _core(holder)
        sid = core.open_session()
        msgs = [m for _, m in _decode_all(_hello(core, sid, role="viewer"))]
        assert msgs[0].type == "WELCOME" and msgs[0].body["role"] == "viewer"

    def test_second_hello_is_protocol_error(self, holder):
        core = _core(holder)
        sid = core.open_session()
        _hello(core, sid)
        msgs = [m for _, m in _decode_all(_hello(core, sid, seq=2))]
        assert msgs[0].body["code"] == "ProtocolError"

    def test_unauthenticated_command_refused(self, holder):
        core = _core(holder)
        sid = core.open_session()
        outs = core.handle_line(
            sid,
            encode_frame(Message("COMMAND", 1, 0, {"device_id": "fan-1", "action": "SetSpeed", "arg": "Low"})),
        )
        msgs = [m for _, m in _decode_all(outs)]
        assert msgs[0].body["code"] == "NotAuthorized"


class TestCommands:
    def _ready_operator(self, core):
        sid = core.open_session()
        _hello(core, sid)
        return sid

    def _send(self, core, sid, seq, frame_type, **body):
        return [m for _, m in _decode_all(core.handle_line(sid, encode_frame(Message(frame_type, seq, 0, body))))]

    def test_command_acked_and_queued(self, holder):
        core = _core(holder)
        holder["world"].devices["cctv-1"] = holder["world"].devices["cctv-1"].replace(on=False)
        sid = self._ready_operator(core)
        msgs = self._send(core, sid, 2, "COMMAND", device_id="cctv-1", action="TurnOn")
        assert msgs[0].type == "ACK" and msgs[0].body["ref_seq"] == 2
        queued = core.drain_injections()
        assert len(queued) == 1
        assert queued[0].doc == {"kind": "command", "device": "cctv-1", "action": "TurnOn", "arg": None}
        assert queued[0].source == f"session:{sid}"

    def test_viewer_command_refused(self, holder):
        core = _core(holder)
        sid = core.open_session()
        _hello(core, sid, token="view-token", role="viewer")
        msgs = self._send(core, sid, 2, "COMMAND", device_id="siren-1", action="TurnOn")
        assert msgs[0].type == "NACK" and msgs[0].body["code"] == "NotAuthorized"
        assert core.drain_injections() == []

    def test_unknown_device(self, holder):
        core = _core(holder)
        sid = self._ready_operator(core)
        msgs = self._send(core, sid, 2, "COMMAND", device_id="toaster-9", action="TurnOn")
        assert msgs[0].body["code"] == "UnknownDevice"

    def test_lock_open_door_nacked_up_front(self, holder):
        holder["world"].devices["door-1"] = holder["world"].devices["door-1"].replace(open=True)
        core = _core(holder)
        sid = self._ready_operator(core)
        msgs = self._send(core, sid, 2, "COMMAND", device_id="door-1", action="Lock")
        assert msgs[0].type == "NACK" and msgs[0].body["code"] == "IllegalAction"

    def test_every_command_gets_exactly_one_reply(self, holder):
        core = _core(holder)
        sid = self._ready_operator(core)
        rng = random.Random(42)
        actions = [
            ("fan-1", "SetSpeed", "High"),
            ("door-1", "Lock", None),
            ("nope-1", "TurnOn", None),
            ("siren-1", "TurnOn", None),
            ("window-2", "Open", None),
            ("meter-1", "TurnOn", None),
        ]
        for i in range(200):
            device, action, arg = rng.choice(actions)
            seq = i + 10
            msgs = self._send(core, sid, seq, "COMMAND", device_id=device, action=action, arg=arg)
            replies = [m for m in msgs if m.type in ("ACK", "NACK") and m.body.get("ref_seq") == seq]
            assert len(replies) == 1

    def test_stale_seq_rejected(self, holder):
        core = _core(holder)
        sid = self._ready_operator(core)
        self._send(core, sid, 5, "PING")
        msgs = self._send(core, sid, 5, "PING")
        assert msgs[0].type == "NACK" and msgs[0].body["code"] == "ProtocolError"

    def test_ping_pong_and_snapshot(self, holder):
        core = _core(holder)
        sid = self._ready_operator(core)
        assert self._send(core, sid, 2, "PING")[0].type == "PONG"
        res = self._send(core, sid, 3, "SNAPSHOT_REQ")
        assert res[0].type == "SNAPSHOT_RES"
        assert res[0].body["snapshot"]["schema"] == "shopsim-world-v1"


class TestBroadcast:
    def test_exactly_one_state_frame_per_changed_device(self, holder):
        core = _core(holder)
        sid = core.open_session()
        _hello(core, sid)
        core.handle_line(sid, encode_frame(Message("SUBSCRIBE", 2, 0, {"patterns": ["*"]})))

        before = holder["world"].devices
        holder["world"], _ = tick(holder["world"], [], 1.0)
        outs = _decode_all(core.broadcast_after_tick(before, holder["world"]))
        states = [m for _, m in outs if m.type == "STATE"]
        changed = {
            dev_id
            for dev_id in holder["world"].devices
            if holder["world"].devices[dev_id].fields != before[dev_id].fields
        }
        assert sorted(m.body["device_id"] for m in states) == sorted(changed)
        assert len(changed) > 0  # climate acts on the fresh world

    def test_subscription_glob_filters(self, holder):
        core = _core(holder)
        sid = core.open_session()
        _hello(core, sid)
        core.handle_line(sid, encode_frame(Message("SUBSCRIBE", 2, 0, {"patterns": ["window-*"]})))
        before = holder["world"].devices
        holder["world"], _ = tick(holder["world"], [], 1.0)
        outs = _decode_all(core.broadcast_after_tick(before, holder["world"]))
        states = [m for _, m in outs if m.type == "STATE"]
        assert states and all(m.body["device_id"].startswith("window-") for m in states)

    def test_unsubscribed_session_still_gets_env_events(self, holder):
        core = _core(holder)
        sid = core.open_session()
        _hello(core, sid)
        before = holder["world"].devices
        holder["world"], _ = tick(holder["world"], [], 1.0)
        outs = _decode_all(core.broadcast_after_tick(before, holder["world"]))
        assert [m.type for _, m in outs] == ["EVENT"]
        assert outs[0][1].body["name"] == "env"

    def test_alarm_events_fire_on_transition_only(self, holder):
        core = _core(holder)
        sid = core.open_session()
        _hello(core, sid)
        world = holder["world"]
        world.devices["fire-detector-1"] = world.devices["fire-detector-1"].replace(triggered=True)
        outs = _decode_all(core.broadcast_after_tick(world.devices, world))
        alarms = [m for _, m in outs if m.type == "EVENT" and m.body["name"] == "fire"]
        assert alarms == [alarms[0]] and alarms[0].body["payload"] == {"active": True}
        # unchanged flags emit nothing the second time
        outs2 = _decode_all(core.broadcast_after_tick(world.devices, world))
        assert not any(m.body["name"] == "fire" for _, m in outs2 if m.type == "EVENT")

    def test_server_seq_strictly_increases(self, holder):
        core = _core(holder)
        sid = core.open_session()
        seqs = [m.seq for _, m in _decode_all(_hello(core, sid))]
        before = holder["world"].devices
        holder["world"], _ = tick(holder["world"], [], 1.0)
        core.handle_line(sid, encode_frame(Message("SUBSCRIBE", 2, 0, {"patterns": ["*"]})))
        seqs += [m.seq for _, m in _decode_all(core.broadcast_after_tick(before, holder["world"]))]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)


class TestTokens:
    def test_load_tokens(self):
        doc = {"tokens": [{"token": "a", "role": "operator"}, {"token": "b", "role": "viewer"}]}
        assert load_tokens(doc) == {"a": "operator", "b": "viewer"}

    @pytest.mark.parametrize("doc", [{}, {"tokens": [{"token": "a", "role": "root"}]}, {"tokens": "x"}])
    def test_bad_token_docs(self, doc):
        with pytest.raises(ValueError):
            load_tokens(doc)


def test_recorded_frames_are_deterministic():
    from shopsim.cli import parse_scenario
    from .helpers import scenario_text

    world = make_world()
    scenario = parse_scenario(scenario_text("fig2-motion.json"), world.manifest)
    first = record_session_frames(make_world(), scenario)
    second = record_session_frames(make_world(), scenario)
    assert first == second
    assert any(b'"WELCOME"' in line for line in first)
    assert any(b'"security"' in line for line in first)


def test_dashboard_fixtures_in_sync_with_gateway():
    """The committed frontend fixtures must be exactly what the gateway
    produces today (regenerate with frontend/scripts/make_fixtures.py)."""
    from dataclasses import replace

    from shopsim.cli import parse_scenario
    from shopsim.runtime import initial_world
    from .helpers import REPO_ROOT, scenario_text

    fixture_dir = REPO_ROOT / "frontend" / "tests" / "fixtures"
    world = initial_world()
    scenario = parse_scenario(scenario_text("fig3-fire.json"), world.manifest)
    scenario = replace(scenario, duration_ticks=20)
    frames = record_session_frames(world, scenario)
    assert b"".join(frames) == (fixture_dir / "fig3-frames.jsonl").read_bytes()

    expected_cmd = encode_frame(
        Message("COMMAND", 3, 20_000, {"device_id": "cctv-1", "action": "TurnOn"})
    )
    assert expected_cmd == (fixture_dir / "expected-cctv-command.txt").read_bytes()
