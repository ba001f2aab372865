import json
import socket

import numpy as np
import pytest

from telextile.checkpoint import Checkpoint
from telextile.index import build_index
from telextile.nn import Encoder
from telextile.roller import MotorEmulator, MotorState, RollerConfig, current_slot
from telextile.service import (
    ActuatorError,
    MatchingServer,
    NotFoundError,
    RequestError,
    ServerError,
    TransportError,
    run_actuator_client,
    run_sensor_client,
    start_server,
    submit_payload,
)


@pytest.fixture(scope="module")
def matching_setup(tiny_run, tiny_manifest, tiny_frames, tiny_aug):
    ckpt, _ = tiny_run
    enc = ckpt.to_encoder()
    vectors, labels = [], []
    for sess, frames in zip(tiny_manifest.sessions, tiny_frames):
        emb = enc.embed_frames(frames, tiny_aug)
        vectors.extend(emb)
        labels.extend([sess.sample_id] * len(frames))
    index = build_index(vectors, labels)
    roller = RollerConfig(slot_count=3, slot_samples=tuple(sorted(set(labels))))
    return ckpt, index, roller


@pytest.fixture()
def server(matching_setup):
    ckpt, index, roller = matching_setup
    return MatchingServer(ckpt, index, roller)


def _session_pixels(tiny_frames, i=0, count=4):
    return np.stack([f.pixels for f in tiny_frames[i][:count]])


# ---------------------------------------------------------------------------
# server construction


def test_aug_config_recovered_from_checkpoint(matching_setup, tiny_aug):
    ckpt, index, roller = matching_setup
    srv = MatchingServer(ckpt, index, roller)
    assert srv.aug_cfg == tiny_aug


def test_construction_requires_augment_somewhere(matching_setup):
    ckpt, index, roller = matching_setup
    bare = Checkpoint(encoder_config=ckpt.encoder_config, params=ckpt.params)
    with pytest.raises(ValueError):
        MatchingServer(bare, index, roller)


def test_roller_samples_must_be_indexed(matching_setup):
    ckpt, index, _ = matching_setup
    roller = RollerConfig(slot_count=2, slot_samples=("nope1", "nope2"))
    with pytest.raises(ValueError):
        MatchingServer(ckpt, index, roller)


# ---------------------------------------------------------------------------
# submission handling


def test_fresh_server_targets_slot_zero(server):
    assert server.handle_poll() == 0


def test_submit_produces_consistent_record(server, tiny_frames):
    record = server.handle_submit(_session_pixels(tiny_frames))
    assert record.transmission_id == "t00000"
    assert record.frame_count == 4
    assert len(record.centroid) == 8
    # ranking ascends and covers every roller slot exactly once
    dists = [d for _, d in record.ranking]
    assert dists == sorted(dists)
    assert {sid for sid, _ in record.ranking} == set(server.roller_cfg.slot_samples)
    assert record.nearest_sample_id == record.ranking[0][0]
    assert record.slot == server.roller_cfg.slot_of_sample(record.nearest_sample_id)
    # the poll target follows the submission
    assert server.handle_poll() == record.slot


def test_submission_ids_are_sequential(server, tiny_frames):
    a = server.handle_submit(_session_pixels(tiny_frames, 0))
    b = server.handle_submit(_session_pixels(tiny_frames, 1))
    assert (a.transmission_id, b.transmission_id) == ("t00000", "t00001")


def test_match_replies_are_byte_identical(server, tiny_frames):
    record = server.handle_submit(_session_pixels(tiny_frames))
    r1 = server.handle_match(record.transmission_id)
    r2 = server.handle_match(record.transmission_id)
    assert r1 == r2
    doc = json.loads(r1)
    assert doc["type"] == "RECORD"
    assert doc["id"] == record.transmission_id
    assert doc["slot"] == record.slot
    with pytest.raises(NotFoundError):
        server.handle_match("t99999")


def test_submit_rejects_malformed_frames(server):
    with pytest.raises(RequestError):
        server.handle_submit(np.zeros((0, 24, 24, 3), dtype=np.float32))
    with pytest.raises(RequestError):
        server.handle_submit(np.zeros((2, 24, 24, 2), dtype=np.float32))
    bad = np.full((1, 24, 24, 3), np.nan, dtype=np.float32)
    with pytest.raises(RequestError):
        server.handle_submit(bad)
    with pytest.raises(RequestError):
        # frames smaller than the crop are rejected by the encoder path
        server.handle_submit(np.zeros((1, 8, 8, 3), dtype=np.float32))


# ---------------------------------------------------------------------------
# TCP round trips


@pytest.fixture()
def live_server(server):
    srv, thread = start_server(server)
    yield server, srv.server_address
    srv.shutdown()
    srv.server_close()


def test_sensor_client_round_trip(live_server, tiny_frames):
    matching, address = live_server
    record = run_sensor_client(list(tiny_frames[0][:4]), address)
    assert record["type"] == "RECORD"
    assert record["frame_count"] == 4
    assert record["slot"] == matching.handle_poll()
    # the wire record matches the server's canonical copy exactly
    assert json.dumps(record, sort_keys=True, separators=(",", ":")) == \
        matching.handle_match(record["id"])


def test_wire_errors_surface_as_server_error(live_server, tiny_frames):
    _, address = live_server
    from telextile.service import _rpc
    with pytest.raises(ServerError, match="not_found"):
        _rpc(address, {"type": "MATCH", "id": "t99999"}, timeout=5.0)
    with pytest.raises(ServerError, match="bad_request"):
        _rpc(address, {"type": "MATCH"}, timeout=5.0)
    with pytest.raises(ServerError, match="bad_request"):
        _rpc(address, {"type": "WHAT"}, timeout=5.0)
    payload = submit_payload(_session_pixels(tiny_frames))
    payload["data_b64"] = payload["data_b64"][:-8]
    with pytest.raises(ServerError, match="bad_request"):
        _rpc(address, payload, timeout=5.0)


def test_raw_garbage_gets_a_json_error_line(live_server):
    _, address = live_server
    with socket.create_connection(address, timeout=5.0) as sock:
        stream = sock.makefile("rwb")
        stream.write(b"{this is not json\n")
        stream.flush()
        reply = json.loads(stream.readline())
    assert reply["type"] == "ERROR"
    assert reply["error"] == "bad_json"


def test_transport_error_when_server_is_gone(server):
    srv, _ = start_server(server)
    address = srv.server_address
    srv.shutdown()
    srv.server_close()
    with pytest.raises(TransportError):
        run_sensor_client([np.zeros((24, 24, 3), dtype=np.float32)], address)


# ---------------------------------------------------------------------------
# actuator client


def test_actuator_converges_then_stays(live_server, tiny_frames):
    matching, address = live_server
    record = matching.handle_submit(_session_pixels(tiny_frames))
    emu = MotorEmulator(RollerConfig(
        slot_count=matching.roller_cfg.slot_count,
        slot_samples=matching.roller_cfg.slot_samples))
    transitions = run_actuator_client(address, emu, emu.config,
                                      max_cycles=3, sleep=lambda s: None)
    assert current_slot(emu.state, emu.config) == record.slot
    if record.slot != 0:
        assert len(transitions) == 1
        assert transitions[0].from_slot == 0
        assert transitions[0].to_slot == record.slot
        assert transitions[0].reply.startswith(b"OK")
    # identical follow-up run: target unchanged, zero further motion
    before = emu.state
    again = run_actuator_client(address, emu, emu.config,
                                max_cycles=3, sleep=lambda s: None)
    assert again == []
    assert emu.state == before


def test_actuator_resubmission_is_idempotent(live_server, tiny_frames):
    matching, address = live_server
    matching.handle_submit(_session_pixels(tiny_frames))
    emu = MotorEmulator(RollerConfig(
        slot_count=matching.roller_cfg.slot_count,
        slot_samples=matching.roller_cfg.slot_samples))
    run_actuator_client(address, emu, emu.config, max_cycles=2,
                        sleep=lambda s: None)
    moved = len(emu.transcript)
    # submitting the same session again must not move the motor
    matching.handle_submit(_session_pixels(tiny_frames))
    run_actuator_client(address, emu, emu.config, max_cycles=2,
                        sleep=lambda s: None)
    assert len(emu.transcript) == moved


def test_actuator_retries_through_transport_failures(live_server, tiny_frames):
    matching, address = live_server
    record = matching.handle_submit(_session_pixels(tiny_frames))
    emu = MotorEmulator(matching.roller_cfg)
    # first cycles poll a dead port, later cycles the live server
    dead = (address[0], 1)  # port 1: nothing listens there
    calls = {"n": 0}

    def flaky_sleep(_):
        calls["n"] += 1

    transitions = run_actuator_client(dead, emu, matching.roller_cfg,
                                      max_cycles=2, sleep=flaky_sleep,
                                      timeout=0.2)
    assert transitions == []          # polls failed, motor untouched
    assert calls["n"] == 2            # but every cycle still slept
    transitions = run_actuator_client(address, emu, matching.roller_cfg,
                                      max_cycles=2, sleep=lambda s: None)
    assert current_slot(emu.state, matching.roller_cfg) == record.slot


def test_actuator_aborts_on_serial_error(live_server, tiny_frames):
    matching, address = live_server
    record = matching.handle_submit(_session_pixels(tiny_frames, 1))
    if record.slot == 0:  # need an actual move for the serial path to fire
        record = matching.handle_submit(_session_pixels(tiny_frames, 2))

    class BrokenLink:
        def submit(self, frame):
            return b"ERR jammed\n"

    if record.slot != 0:
        with pytest.raises(ActuatorError):
            run_actuator_client(address, BrokenLink(), matching.roller_cfg,
                                max_cycles=2, sleep=lambda s: None)


def test_actuator_stop_callback(live_server):
    _, address = live_server
    emu = MotorEmulator(RollerConfig(slot_count=3))
    out = run_actuator_client(address, emu, emu.config,
                              stop=lambda: True, sleep=lambda s: None)
    assert out == []
