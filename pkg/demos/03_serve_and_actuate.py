"""End-to-end transmission: sensor -> matching server -> roller motor.

Loads the checkpoint from 02_train_tiny.py, indexes the training split,
and starts the TCP matching server in a background thread.  A sensor
client submits the held-out frames of one session; the actuator client
then polls the server and walks an in-process motor emulator onto the
matched slot.  The serial transcript at the end is the exact byte
traffic a real controller would have seen.
"""

import sys
from pathlib import Path

from telextile.checkpoint import load_checkpoint
from telextile.dataset import load_dataset, split_session
from telextile.index import build_index
from telextile.roller import MotorEmulator, RollerConfig, current_slot
from telextile.service import (MatchingServer, run_actuator_client,
                               run_sensor_client, start_server)

OUT = Path(__file__).resolve().parent / "out"

try:
    ckpt = load_checkpoint(OUT / "tiny.ckpt")
except OSError:
    sys.exit("no checkpoint yet; run 02_train_tiny.py first")
manifest, frames = load_dataset(OUT / "dataset")
encoder = ckpt.to_encoder()

# index the first 48 frames of every session; keep the tails as probes
from telextile.augment import AugmentConfig
aug = AugmentConfig.from_dict(ckpt.metadata["augment"])
vectors, labels = [], []
for sess, sess_frames in zip(manifest.sessions, frames):
    head, _ = split_session(sess_frames, 48)
    emb = encoder.embed_frames(head, aug)
    vectors.extend(emb)
    labels.extend([sess.sample_id] * len(emb))
index = build_index(vectors, labels)

roller = RollerConfig(slot_count=len(manifest.samples),
                      slot_samples=tuple(s.sample_id for s in manifest.samples))
server, _ = start_server(MatchingServer(ckpt, index, roller))
host, port = server.server_address
print(f"matching server on {host}:{port}, roller has {roller.slot_count} slots")

try:
    probe = 4
    _, tail = split_session(frames[probe], 48)
    record = run_sensor_client(tail, server.server_address)
    print(f"submitted {record['frame_count']} frames of "
          f"{manifest.sessions[probe].sample_id} -> matched "
          f"{record['nearest']} (slot {record['slot']})")
    for sid, dist in record["ranking"][:3]:
        print(f"    {sid}  distance {dist:.4f}")

    emu = MotorEmulator(roller)
    moves = run_actuator_client(server.server_address, emu, roller,
                                max_cycles=3, sleep=lambda s: None)
    print(f"actuator: {len(moves)} move(s), motor now on slot "
          f"{current_slot(emu.state, roller)} "
          f"(position {emu.state.position_steps} steps)")
    for frame, reply in emu.transcript:
        print(f"    > {frame!r}   < {reply!r}")
finally:
    server.shutdown()
    server.server_close()
