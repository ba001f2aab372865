"""Networked transmission pipeline: matching server, sensor and actuator clients.

The server holds a trained encoder and a centroid index.  A sensor
client submits a captured session; the server embeds it, stores a
transmission record and exposes the matched roller slot.  An actuator
client polls that slot (1 Hz by default) and drives the motor over its
serial link whenever the target changes.

Wire protocol: newline-delimited JSON over TCP, one object per line.

    {"type":"SUBMIT","h":..,"w":..,"n":..,"data_b64":..}
        -> {"type":"SUBMITTED","id":..,"nearest":..,"slot":..}
    {"type":"MATCH","id":..}   -> stored record (byte-identical per id)
    {"type":"POLL"}            -> {"type":"TARGET","slot":..}

Frames travel as base64 of the raw little-endian float32 tensor.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
import time
from dataclasses import dataclass

import numpy as np

from .augment import AugmentConfig
from .checkpoint import Checkpoint
from .index import LatentIndex, nearest_sample
from .roller import (MotorState, RollerConfig, current_slot, goto_slot)
from .textures import TactileFrame


class RequestError(ValueError):
    """Client payload is malformed or dimensionally wrong."""


class NotFoundError(KeyError):
    """Unknown transmission id."""


class TransportError(RuntimeError):
    """Could not reach the server or the connection broke mid-exchange."""


class ServerError(RuntimeError):
    """Server answered with an explicit error response."""


class ActuatorError(RuntimeError):
    """The serial controller rejected a command; aborting is safer than guessing."""


@dataclass(frozen=True)
class TransmissionRecord:
    transmission_id: str
    frame_count: int
    centroid: tuple                    # D floats
    nearest_sample_id: str             # nearest among roller samples
    nearest_global_id: str             # nearest over the full index
    slot: int
    ranking: tuple                     # ((sample_id, distance), ...) ascending
    timestamp: float

    def to_wire(self) -> dict:
        return {
            "type": "RECORD",
            "id": self.transmission_id,
            "frame_count": self.frame_count,
            "centroid": list(self.centroid),
            "nearest": self.nearest_sample_id,
            "nearest_global": self.nearest_global_id,
            "slot": self.slot,
            "ranking": [[sid, d] for sid, d in self.ranking],
            "timestamp": self.timestamp,
        }


def _as_frame_array(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        arr = np.stack([f.pixels if isinstance(f, TactileFrame) else np.asarray(f)
                        for f in frames]) if len(frames) else np.zeros((0, 1, 1, 3))
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise RequestError(f"expected frames shaped (n, h, w, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise RequestError("at least one frame required")
    if not np.isfinite(arr).all():
        raise RequestError("frames contain non-finite values")
    return arr.astype(np.float32)


class MatchingServer:
    """Owns the checkpoint, the index and the transmission log.

    Submissions are serialized under a lock; polls and matches read
    immutable snapshots (records are canonicalized to a JSON string once
    at submit time, so repeated MATCH responses are byte-identical).
    """

    def __init__(self, checkpoint: Checkpoint, index: LatentIndex,
                 roller_cfg: RollerConfig, aug_cfg: AugmentConfig | None = None,
                 clock=time.time):
        if aug_cfg is None:
            meta = checkpoint.metadata.get("augment")
            if meta is None:
                raise ValueError("no augment config given and none in the checkpoint")
            aug_cfg = AugmentConfig.from_dict(meta)
        missing = [s for s in roller_cfg.slot_samples if s not in index.centroids]
        if missing:
            raise ValueError(f"roller samples missing from the index: {missing}")
        self.encoder = checkpoint.to_encoder()
        self.aug_cfg = aug_cfg
        self.index = index
        self.roller_cfg = roller_cfg
        self.clock = clock
        self.current_target_slot = 0           # documented pre-submission default
        self.records: dict[str, TransmissionRecord] = {}
        self._canonical: dict[str, str] = {}
        self._counter = 0
        self._lock = threading.Lock()

    def handle_submit(self, frames) -> TransmissionRecord:
        arr = _as_frame_array(frames)
        try:
            emb = self.encoder.embed_frames(list(arr), self.aug_cfg)
        except ValueError as exc:
            raise RequestError(f"frames rejected by the encoder: {exc}") from exc
        centroid = emb.astype(np.float64).mean(axis=0).astype(np.float32)

        ranking = sorted(
            (float(np.linalg.norm(
                self.index.centroids[sid].astype(np.float64) - centroid)), sid)
            for sid in self.roller_cfg.slot_samples
        )
        nearest = ranking[0][1]
        slot = self.roller_cfg.slot_of_sample(nearest)
        nearest_global, _ = nearest_sample(self.index, centroid)

        with self._lock:
            tid = f"t{self._counter:05d}"
            self._counter += 1
            record = TransmissionRecord(
                transmission_id=tid,
                frame_count=int(arr.shape[0]),
                centroid=tuple(float(x) for x in centroid),
                nearest_sample_id=nearest,
                nearest_global_id=nearest_global,
                slot=slot,
                ranking=tuple((sid, d) for d, sid in ranking),
                timestamp=float(self.clock()),
            )
            self.records[tid] = record
            self._canonical[tid] = json.dumps(record.to_wire(), sort_keys=True,
                                              separators=(",", ":"))
            self.current_target_slot = slot
        return record

    def handle_match(self, transmission_id: str) -> str:
        """Canonical JSON of the stored record, byte-identical every call."""
        try:
            return self._canonical[transmission_id]
        except KeyError:
            raise NotFoundError(f"unknown transmission id {transmission_id!r}") from None

    def handle_poll(self) -> int:
        return self.current_target_slot


# ---------------------------------------------------------------------------
# TCP transport


def _error(code: str, message: str) -> str:
    return json.dumps({"type": "ERROR", "error": code, "message": message},
                      sort_keys=True)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            try:
                req = json.loads(line)
                reply = self.server.dispatch(req)
            except json.JSONDecodeError as exc:
                reply = _error("bad_json", str(exc))
            except Exception as exc:   # keep the connection alive on bad requests
                reply = _error("internal", str(exc))
            self.wfile.write(reply.encode("utf-8") + b"\n")
            self.wfile.flush()


class MatchingTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, matching: MatchingServer):
        super().__init__(address, _Handler)
        self.matching = matching

    def dispatch(self, req: dict) -> str:
        if not isinstance(req, dict) or "type" not in req:
            return _error("bad_request", "request must be an object with a 'type'")
        kind = req["type"]
        try:
            if kind == "SUBMIT":
                arr = _decode_submit(req)
                record = self.matching.handle_submit(arr)
                return json.dumps({"type": "SUBMITTED", "id": record.transmission_id,
                                   "nearest": record.nearest_sample_id,
                                   "slot": record.slot}, sort_keys=True)
            if kind == "MATCH":
                if "id" not in req:
                    return _error("bad_request", "MATCH requires 'id'")
                return self.matching.handle_match(str(req["id"]))
            if kind == "POLL":
                return json.dumps({"type": "TARGET",
                                   "slot": self.matching.handle_poll()})
            return _error("bad_request", f"unknown request type {kind!r}")
        except RequestError as exc:
            return _error("bad_request", str(exc))
        except NotFoundError as exc:
            return _error("not_found", str(exc))


def _decode_submit(req: dict) -> np.ndarray:
    try:
        n, h, w = int(req["n"]), int(req["h"]), int(req["w"])
        raw = base64.b64decode(req["data_b64"], validate=True)
    except (KeyError, ValueError, TypeError) as exc:
        raise RequestError(f"bad SUBMIT payload: {exc}") from exc
    if n < 1 or h < 1 or w < 1:
        raise RequestError(f"bad tensor dimensions n={n} h={h} w={w}")
    expect = n * h * w * 3 * 4
    if len(raw) != expect:
        raise RequestError(f"payload holds {len(raw)} bytes, dimensions imply {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(n, h, w, 3).copy()


def start_server(matching: MatchingServer, host: str = "127.0.0.1",
                 port: int = 0) -> tuple[MatchingTCPServer, threading.Thread]:
    """Bind and serve on a background thread; port 0 picks a free port."""
    server = MatchingTCPServer((host, port), matching)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


# ---------------------------------------------------------------------------
# Clients


def _rpc(address: tuple, payload: dict, timeout: float) -> dict:
    try:
        with socket.create_connection(address, timeout=timeout) as sock:
            sock.settimeout(timeout)
            stream = sock.makefile("rwb")
            stream.write(json.dumps(payload).encode("utf-8") + b"\n")
            stream.flush()
            line = stream.readline()
    except OSError as exc:
        raise TransportError(f"cannot reach {address[0]}:{address[1]}: {exc}") from exc
    if not line:
        raise TransportError("server closed the connection before replying")
    try:
        reply = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TransportError(f"unparseable reply: {exc}") from exc
    if isinstance(reply, dict) and reply.get("type") == "ERROR":
        raise ServerError(f"{reply.get('error')}: {reply.get('message')}")
    return reply


def submit_payload(frames) -> dict:
    arr = _as_frame_array(frames)
    return {
        "type": "SUBMIT",
        "n": int(arr.shape[0]),
        "h": int(arr.shape[1]),
        "w": int(arr.shape[2]),
        "data_b64": base64.b64encode(arr.astype("<f4").tobytes()).decode("ascii"),
    }


def run_sensor_client(frames, address: tuple, timeout: float = 5.0) -> dict:
    """Submit a session, then fetch and return its match record."""
    submitted = _rpc(address, submit_payload(frames), timeout)
    if submitted.get("type") != "SUBMITTED":
        raise ServerError(f"unexpected reply to SUBMIT: {submitted}")
    record = _rpc(address, {"type": "MATCH", "id": submitted["id"]}, timeout)
    if record.get("type") != "RECORD":
        raise ServerError(f"unexpected reply to MATCH: {record}")
    return record


@dataclass
class Transition:
    cycle: int
    from_slot: int
    to_slot: int
    frame: bytes
    reply: bytes


def run_actuator_client(address: tuple, serial_link, roller_cfg: RollerConfig, *,
                        poll_interval: float = 1.0, max_cycles: int | None = None,
                        stop=None, sleep=time.sleep, timeout: float = 5.0,
                        initial_state: MotorState | None = None,
                        on_transition=None) -> list[Transition]:
    """Poll the target slot and converge the motor onto it.

    One poll per cycle.  Poll transport failures are retried on the next
    cycle with the motor untouched; a serial ``ERR`` reply aborts with a
    diagnostic, since the shadow state can no longer be trusted.  The
    client never reads motor state back: it tracks a shadow MotorState
    seeded from ``initial_state`` (or the link's own state when the link
    exposes one, as the in-process emulator does).
    """
    if initial_state is not None:
        shadow = initial_state
    elif hasattr(serial_link, "state"):
        shadow = serial_link.state
    else:
        shadow = MotorState.for_config(roller_cfg)
    shadow_slot = current_slot(shadow, roller_cfg)
    transitions: list[Transition] = []
    cycle = 0
    while (max_cycles is None or cycle < max_cycles) and not (stop and stop()):
        try:
            reply = _rpc(address, {"type": "POLL"}, timeout)
            target = int(reply["slot"])
        except (TransportError, ServerError, KeyError, ValueError):
            cycle += 1
            sleep(poll_interval)
            continue
        if target != shadow_slot:
            frame, predicted = goto_slot(shadow, target, roller_cfg)
            ack = serial_link.submit(frame)
            if ack.startswith(b"ERR"):
                raise ActuatorError(
                    f"serial controller rejected {frame!r}: {ack!r}")
            t = Transition(cycle=cycle, from_slot=shadow_slot, to_slot=target,
                           frame=frame, reply=ack)
            transitions.append(t)
            if on_transition:
                on_transition(t)
            shadow = predicted
            shadow_slot = target
        cycle += 1
        sleep(poll_interval)
    return transitions
