"""Event-driven replay of a single non-queueing worker: inputs arrive every
`period` ms, an arrival while the worker is busy is discarded. Prints the
processed percentage for each (service, period) pair over 1000 inputs."""
import heapq
import json

def ratio(service, period, inputs=1000):
    events = [(k * period, "arrive") for k in range(inputs)]
    heapq.heapify(events)
    busy = False
    processed = 0
    while events:
        t, kind = heapq.heappop(events)
        if kind == "done":
            busy = False
        elif not busy:
            busy = True
            processed += 1
            heapq.heappush(events, (t + service, "done"))
    return 100.0 * processed / inputs

# "done" sorts before "arrive" at equal times, so a worker finishing exactly
# on an arrival accepts it.
pairs = [(400, 2000), (1500, 1000), (900, 500), (900, 1000), (900, 2000), (2500, 1000)]
print(json.dumps({f"{s},{p}": ratio(s, p) for s, p in pairs}))
