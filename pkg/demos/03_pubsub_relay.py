"""
Topic-based pub/sub over TCP
=============================

The relay stands in for a managed IoT broker at desk scale: QoS-0 fan-out,
no retained messages, ordering inherited from TCP. Three subscribers watch
the predictions topic while a publisher sends a burst.
"""

import time

from melcast.transport import Relay, RelayClient

TOPIC = "site0/playback/predictions"

with Relay(keepalive_s=5.0) as relay:
    host, port = relay.address
    print(f"relay up on {host}:{port}")

    subscribers = [RelayClient(relay.address) for _ in range(3)]
    for i, sub in enumerate(subscribers):
        sub.subscribe(TOPIC)
    time.sleep(0.1)  # let the SUBSCRIBE frames land

    publisher = RelayClient(relay.address)
    bodies = [f"prediction window {i}".encode() for i in range(5)]
    for body in bodies:
        publisher.publish(TOPIC, body)
    print(f"published {len(bodies)} messages")

    # each subscriber receives every message exactly once, in publish order
    for i, sub in enumerate(subscribers):
        got = [sub.recv(timeout=2.0)[1] for _ in range(len(bodies))]
        print(f"subscriber {i}: in order = {got == bodies}")

    # no retention: a late subscriber starts from silence
    late = RelayClient(relay.address)
    late.subscribe(TOPIC)
    print(f"late subscriber sees backlog: {late.recv(timeout=0.3) is not None}")

    for c in subscribers + [publisher, late]:
        c.close()
print("relay stopped")
