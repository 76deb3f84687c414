"""Independent reference computations used by the test-suite.

Nothing in here imports the package under test; each helper rebuilds the
expected answer by a different route (string concatenation, brute-force
enumeration, sorting) so that agreement is meaningful.
"""

import math
from collections import deque

# (name, width) from the most-significant end of the 137-bit head flit.
HEAD_LAYOUT = [
    ("routing_info", 7),
    ("packet_head_tail", 2),
    ("source_id", 3),
    ("hwa_id", 5),
    ("packet_type", 1),
    ("task_head_tail", 2),
    ("task_buffer_id", 2),
    ("chaining_depth", 2),
    ("chaining_index", 6),
    ("packet_priority", 2),
    ("packet_direction", 2),
    ("start_address", 32),
    ("data_size", 10),
    ("payload", 61),
]


def head_word_from_bits(values):
    """Build the raw word by concatenating fixed-width binary strings."""
    bits = "".join(format(values[name], "0{}b".format(width)) for name, width in HEAD_LAYOUT)
    assert len(bits) == 137
    return int(bits, 2)


def head_bits_from_word(raw):
    bits = format(raw, "0137b")
    out = {}
    pos = 0
    for name, width in HEAD_LAYOUT:
        out[name] = int(bits[pos:pos + width], 2)
        pos += width
    return out


def pack_bytes_oracle(data):
    """Split bytes into 16-byte little-endian chunks, zero padding the last."""
    chunks = []
    for i in range(0, len(data), 16):
        chunk = data[i:i + 16]
        chunk = chunk + bytes(16 - len(chunk))
        chunks.append(int.from_bytes(chunk, "little"))
    return chunks


def xy_path(src, dst):
    """Enumerate the node sequence of dimension-ordered routing."""
    path = [src]
    x, y = src
    while x != dst[0]:
        x += 1 if dst[0] > x else -1
        path.append((x, y))
    while y != dst[1]:
        y += 1 if dst[1] > y else -1
        path.append((x, y))
    return path


def bfs_distance(w, h, src, dst):
    seen = {src: 0}
    q = deque([src])
    while q:
        x, y = q.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (x + dx, y + dy)
            if 0 <= n[0] < w and 0 <= n[1] < h and n not in seen:
                seen[n] = seen[(x, y)] + 1
                q.append(n)
    return seen[dst]


def rr_sequence(n, steps, start=0):
    """Grant order of a fair round-robin arbiter with every requester pending."""
    return [(start + k) % n for k in range(steps)]


def edges_after(t, period, phase=0, count=2):
    """First `count` clock edges strictly after t, by brute-force stepping."""
    out = []
    k = 0
    while len(out) < count:
        e = phase + k * period
        if e > t:
            out.append(e)
        k += 1
    return out


def ceil_div(a, b):
    return -(-a // b) if a else 0


def payload_flits(nbytes):
    return 1 + math.ceil(nbytes / 16)


def idle_request_timeline(hops, in_flits, out_flits, exec_cycles, depth=2, pc=1000, pi=3333,
                          request_cycles=8, send_cycles=4, recv_cycles=4):
    """Milestone times of one direct-mode request on an otherwise idle system.

    Built from the per-block cycle counts, the fifo visibility rules (sync:
    next edge; async: second read edge) and ``depth`` cycles per router.
    The accelerator clock equals the interface clock.
    """
    def sync_next(t):
        return edges_after(t, pc, count=1)[0]

    def async_vis(t, period):
        return edges_after(t, period)[1]

    routers = hops + 1

    def to_fpga(t_push):  # processor link -> mesh -> interface rx fifo
        return sync_next(t_push) + depth * pc * routers

    def to_cpu(t_push):  # interface tx fifo -> mesh -> processor link
        return sync_next(async_vis(t_push, pc) + depth * pc * routers)

    m = {"issue": 0}
    m["req_sent"] = request_cycles * pc
    m["rx_request"] = async_vis(to_fpga(m["req_sent"]), pi)
    m["tx_grant"] = m["rx_request"] + 3 * pi
    m["grant_recv"] = to_cpu(m["tx_grant"])
    pushes = [m["grant_recv"] + (recv_cycles + k * send_cycles) * pc for k in range(in_flits)]
    m["payload_sent"] = pushes[-1]
    # head decode takes two cycles, then one body flit per cycle, commit two after the tail
    pops = []
    for p in pushes:
        v = async_vis(to_fpga(p), pi)
        pops.append(v if not pops else max(v, pops[-1] + (2 if len(pops) == 1 else 1) * pi))
    m["rx_payload"] = pops[0] + 3 * pi if in_flits == 1 else pops[-1] + 2 * pi
    hwac = m["rx_payload"] + pi
    m["exec"] = hwac + (4 + in_flits) * pi
    m["exec_end"] = m["exec"] + exec_cycles * pi
    m["pg_pob"] = m["exec_end"] + (4 + out_flits) * pi
    m["ps_result"] = m["pg_pob"] + (4 + out_flits) * pi
    results = [m["ps_result"] + (4 + k) * pi for k in range(out_flits)]
    m["tx_result"] = results[-1]
    m["tx_notify"] = m["ps_result"] + (5 + out_flits) * pi
    q = None
    for r in results:
        lv = to_cpu(r)
        q = lv if q is None else max(lv, q + recv_cycles * pc)
    m["result_recv"] = q
    m["notify_recv"] = max(to_cpu(m["tx_notify"]), q + recv_cycles * pc)
    m["done"] = m["notify_recv"] + recv_cycles * pc
    return m
