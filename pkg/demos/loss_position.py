"""Where in a session does packet loss hurt most?

Compares P(rebuffer | loss) by chunk position with the slow-start loss burst
switched off, and the mean retransmission rate with it on.
"""
from dataclasses import replace

from streamdiag.analysis import rebuf_loss_position
from streamdiag.sim import SimConfig, simulate

N = 3000

base = SimConfig(n_sessions=N, seed=1)
flat = base.with_overrides(paths=tuple(replace(p, first_chunk_loss_multiplier=1.0)
                                       for p in base.paths))

uniform = rebuf_loss_position(r.joined() for r in simulate(flat))
burst = {p.chunk_id: p for p in rebuf_loss_position(r.joined() for r in simulate(base))}

print(f"{'chunk':>5} {'loss chunks':>11} {'P(rebuf|loss)':>14} {'retx rate (burst on)':>21}")
for p in uniform[:12]:
    cond = "n/a" if p.p_rebuf_given_loss is None else f"{p.p_rebuf_given_loss:.4f}"
    print(f"{p.chunk_id:>5} {p.loss_chunks:>11} {cond:>14} {burst[p.chunk_id].mean_retx_rate:>21.5f}")
