"""Small constructors for hand-made logs and windows."""

import json

from grasp.events import ProvenanceEvent, build_log

MIN = 60 * 1_000_000_000


def ev(ts, src, dst, op="read", src_kind="Subject", dst_kind="File", src_attr=None, dst_attr=None):
    return ProvenanceEvent(ts, src, src_kind, dst, dst_kind, op,
                           {"src": src_attr or f"/bin/{src}", "dst": dst_attr or f"/data/{dst}"})


def log_of(events, schema="TC"):
    return build_log(events, schema)


def line(ts, src="p1", dst="f1", op="read", src_kind="Subject", dst_kind="File",
         src_attr="/bin/sh", dst_attr="/etc/passwd"):
    return json.dumps({"ts": ts, "src_id": src, "src_kind": src_kind, "dst_id": dst,
                       "dst_kind": dst_kind, "op": op,
                       "attrs": {"src": src_attr, "dst": dst_attr}})


def graph_log(edges, ts=0, kinds=None):
    """Log with one event per undirected edge; node kinds default to Subject."""
    kinds = kinds or {}
    out = []
    for i, (u, v) in enumerate(edges):
        ku, kv = kinds.get(u, "Subject"), kinds.get(v, "Subject")
        out.append(ProvenanceEvent(ts + i, u, ku, v, kv, "read" if kv == "File" else "clone",
                                   {"src": f"/bin/{u}" if ku == "Subject" else f"/x/{u}",
                                    "dst": f"/bin/{v}" if kv == "Subject" else f"/x/{v}"}))
    return build_log(out, "TC")
