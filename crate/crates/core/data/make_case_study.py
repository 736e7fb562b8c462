"""Regenerates case_study.json: python3 make_case_study.py > case_study.json"""
import json, math
T = 120
def sun(t):
    return round(0.13 + 0.04 * math.sin(math.pi * t / T), 3)
rpi1 = [sun(t) for t in range(T)]
rpi2 = [0.03 if t < 80 else sun(t) for t in range(T)]
rpi3 = [sun(t) if t < 100 else 0.0 for t in range(T)]
def node(i, charge, solar):
    return {
        "node_id": f"rpi{i}",
        "controller_address": f"192.168.1.1{i}:5000",
        "service_address": f"192.168.1.1{i}:5001",
        "capacity": 100.0,
        "initial_charge": charge,
        "phi": 0.6,
        "varphi": 0.2,
        "solar": solar,
    }
sc = {
    "name": "case-study",
    "seed": 7,
    "horizon": {"num_slots": T, "slot_duration_ms": 60000},
    "topology": {"kind": "mesh"},
    "workload": {"image_ref": "bird-deterrent:1.0", "service_time_ms": 800, "input_period_ms": 1000, "count": 3},
    "policy": {"alpha": 50.0, "beta": 60.0, "gamma": 70.0, "loop_period_ms": 1000, "remote_timeout_ms": 5000},
    "nodes": [node(1, 88.0, rpi1), node(2, 78.0, rpi2), node(3, 98.2, rpi3)],
    "max_workloads_per_node": 2,
    "cpu": {"per_workload_pct": 30.0, "floor_pct": 2.0},
    "link": {"latency_ms": 5, "bandwidth_mbps": 2.0, "payload_bytes": 25000, "command_bytes": 128},
    "service_jitter_ms": 150,
    "stop_when_all_inactive": True,
}
print(json.dumps(sc, indent=2))
