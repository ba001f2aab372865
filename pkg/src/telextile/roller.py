"""Slot geometry and the serial protocol of the sample-roller actuator.

The roller is a disc with N equally spaced textile slots driven by a
stepper.  The controller speaks a one-line ASCII protocol:

    request  ROT <sign><angle with two decimals>\\n      e.g. ROT -45.00\\n
    reply    OK <CW|CCW> <steps>\\n  or  ERR <reason>\\n

Position is tracked in integer microsteps, never float degrees: with the
default 1.8 deg motor at 1/8 microstepping there are 1600 steps per
revolution and a 16-slot disc lands exactly on 100-step boundaries, so
slot-to-slot moves accumulate no rounding drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

CW = "CW"
CCW = "CCW"


class ProtocolError(Exception):
    """Malformed serial frame; ``offset`` is the first offending byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class RollerConfig:
    slot_count: int = 16
    slot_samples: tuple[str, ...] = ()      # ordered sample ids, one per slot
    full_step_angle: float = 1.8            # degrees per full motor step
    microstep_divisor: int = 8

    def __post_init__(self):
        if self.slot_count < 2:
            raise ValueError(f"slot_count must be >= 2, got {self.slot_count}")
        if not self.slot_samples:
            object.__setattr__(self, "slot_samples",
                               tuple(f"slot{i:02d}" for i in range(self.slot_count)))
        if len(self.slot_samples) != self.slot_count:
            raise ValueError(f"{len(self.slot_samples)} slot samples for "
                             f"{self.slot_count} slots")
        if len(set(self.slot_samples)) != self.slot_count:
            raise ValueError("slot_samples must be distinct")
        if self.full_step_angle <= 0 or self.microstep_divisor < 1:
            raise ValueError("full_step_angle must be > 0 and microstep_divisor >= 1")
        spr = 360.0 / self.step_angle
        if abs(spr - round(spr)) > 1e-9:
            raise ValueError(f"steps per revolution {spr} is not an integer")

    @property
    def step_angle(self) -> float:
        return self.full_step_angle / self.microstep_divisor

    @property
    def steps_per_revolution(self) -> int:
        return round(360.0 / self.step_angle)

    def slot_of_sample(self, sample_id: str) -> int:
        try:
            return self.slot_samples.index(sample_id)
        except ValueError:
            raise KeyError(f"sample {sample_id!r} is not on the roller") from None

    def to_dict(self) -> dict:
        return {
            "slot_count": self.slot_count,
            "slot_samples": list(self.slot_samples),
            "full_step_angle": self.full_step_angle,
            "microstep_divisor": self.microstep_divisor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RollerConfig":
        d = dict(d)
        if "slot_samples" in d:
            d["slot_samples"] = tuple(d["slot_samples"])
        return cls(**d)


@dataclass(frozen=True)
class MotorState:
    position_steps: int = 0
    steps_per_revolution: int = 1600

    def __post_init__(self):
        if self.steps_per_revolution < 1:
            raise ValueError("steps_per_revolution must be >= 1")
        if not 0 <= self.position_steps < self.steps_per_revolution:
            raise ValueError(f"position_steps {self.position_steps} outside "
                             f"[0, {self.steps_per_revolution})")

    @property
    def angle(self) -> float:
        return self.position_steps * 360.0 / self.steps_per_revolution

    @classmethod
    def for_config(cls, config: RollerConfig, position_steps: int = 0) -> "MotorState":
        return cls(position_steps=position_steps,
                   steps_per_revolution=config.steps_per_revolution)


def slot_angle(slot_index: int, slot_count: int) -> float:
    """Angular position of a slot: index * 360/N degrees."""
    if slot_count < 2:
        raise ValueError(f"slot_count must be >= 2, got {slot_count}")
    if not 0 <= slot_index < slot_count:
        raise ValueError(f"slot index {slot_index} outside [0, {slot_count})")
    return slot_index * 360.0 / slot_count


def shortest_rotation(current_deg: float, target_deg: float) -> float:
    """Signed move in (-180, +180] reaching target from current (mod 360).

    An exact half-turn is ambiguous; it resolves clockwise (+180).
    """
    if not (math.isfinite(current_deg) and math.isfinite(target_deg)):
        raise ValueError("angles must be finite")
    delta = (target_deg - current_deg) % 360.0
    if delta > 180.0:
        delta -= 360.0
    return delta


def plan_steps(delta_deg: float, config: RollerConfig) -> tuple[str, int]:
    """Quantize a signed rotation onto the step grid.

    Positive deltas are clockwise (DIR high).  Zero rounds to (CW, 0).
    Rounding is half-away-from-zero so a 0.5-step residue always moves.
    """
    steps = int(math.floor(abs(delta_deg) / config.step_angle + 0.5))
    return (CW if delta_deg >= 0 else CCW), steps


def encode_command(delta_deg: float) -> bytes:
    """Serial frame for a signed rotation, quantized to 0.01 degrees."""
    if not math.isfinite(delta_deg) or abs(delta_deg) > 180.0:
        raise ValueError(f"rotation must be finite and within +/-180, got {delta_deg}")
    sign = "-" if delta_deg < 0 else "+"
    return f"ROT {sign}{abs(delta_deg):.2f}\n".encode("ascii")


def decode_command(frame: bytes) -> float:
    """Strict parser for ``ROT <sign><digits>.<dd>\\n``; anything else raises.

    The error names the byte offset of the first deviation from the
    grammar, which makes corrupt-stream debugging on a serial console
    practical.
    """
    expect = b"ROT "
    for i, b in enumerate(expect):
        if i >= len(frame) or frame[i] != b:
            raise ProtocolError("expected 'ROT ' header", i)
    pos = len(expect)
    if pos >= len(frame) or frame[pos] not in b"+-":
        raise ProtocolError("expected sign '+' or '-'", pos)
    sign = -1.0 if frame[pos] == ord("-") else 1.0
    pos += 1

    digit_start = pos
    while pos < len(frame) and frame[pos] in b"0123456789":
        pos += 1
    n_int = pos - digit_start
    if n_int == 0 or n_int > 3:
        raise ProtocolError("expected 1-3 integer digits", pos if n_int == 0 else digit_start + 3)
    if pos >= len(frame) or frame[pos] != ord("."):
        raise ProtocolError("expected '.'", pos)
    pos += 1
    frac_start = pos
    while pos < len(frame) and frame[pos] in b"0123456789":
        pos += 1
    if pos - frac_start != 2:
        raise ProtocolError("expected exactly 2 decimal digits",
                            pos if pos - frac_start < 2 else frac_start + 2)
    if pos >= len(frame) or frame[pos] != ord("\n"):
        raise ProtocolError("expected newline terminator", pos)
    if pos + 1 != len(frame):
        raise ProtocolError("trailing bytes after newline", pos + 1)

    magnitude = float(frame[digit_start:pos].decode("ascii"))
    if magnitude > 180.0:
        raise ProtocolError(f"angle {magnitude} exceeds 180.00", digit_start)
    return sign * magnitude


def apply_command(state: MotorState, frame: bytes, config: RollerConfig
                  ) -> tuple[MotorState, bytes]:
    """Controller side: decode, step, acknowledge.

    Malformed frames produce an ``ERR`` reply and leave the state
    untouched.
    """
    try:
        delta = decode_command(frame)
    except ProtocolError as exc:
        return state, f"ERR {exc}\n".encode("ascii")
    direction, steps = plan_steps(delta, config)
    signed = steps if direction == CW else -steps
    new_pos = (state.position_steps + signed) % config.steps_per_revolution
    new_state = replace(state, position_steps=new_pos)
    return new_state, f"OK {direction} {steps}\n".encode("ascii")


def goto_slot(state: MotorState, slot_index: int, config: RollerConfig
              ) -> tuple[bytes, MotorState]:
    """Compose the frame that moves to a slot, plus the state it produces.

    The prediction replays the controller's own decode/step arithmetic,
    so it is exact, including the 0.01-degree wire quantization.
    """
    target = slot_angle(slot_index, config.slot_count)
    delta = shortest_rotation(state.angle, target)
    frame = encode_command(delta)
    predicted, ack = apply_command(state, frame, config)
    if ack.startswith(b"ERR"):
        raise AssertionError(f"self-generated frame rejected: {ack!r}")
    return frame, predicted


def current_slot(state: MotorState, config: RollerConfig) -> int:
    """Nearest slot to the motor's angle (used by the polling client)."""
    per_slot = 360.0 / config.slot_count
    return int(math.floor(state.angle / per_slot + 0.5)) % config.slot_count


class MotorEmulator:
    """In-process stand-in for the serial-attached controller.

    One frame in, one reply out, strictly serialized; keeps a transcript
    of (frame, reply) pairs for assertions and debugging.
    """

    def __init__(self, config: RollerConfig, state: MotorState | None = None):
        self.config = config
        self.state = state if state is not None else MotorState.for_config(config)
        self.transcript: list[tuple[bytes, bytes]] = []

    def submit(self, frame: bytes) -> bytes:
        self.state, reply = apply_command(self.state, frame, self.config)
        self.transcript.append((frame, reply))
        return reply
