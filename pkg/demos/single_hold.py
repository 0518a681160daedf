"""One session with a 500 ms download-stack hold on chunk 7.

The first-byte delay of chunk 7 jumps while SRTT, CWND and server latency stay
calm, which is the signature the outlier detector looks for.
"""
from streamdiag.diagnosis import detect_ds_outliers, diagnose_session, estimate_persistent_ds
from streamdiag.sim import SimConfig, simulate

cfg = SimConfig(n_sessions=1, seed=4, first_chunk_ds_enabled=False).fault_free()
cfg = cfg.with_overrides(forced_ds=((0, 7, 500.0),))
run = simulate(cfg)[0]
chunks = run.joined()

print(f"{'chunk':>5} {'d_fb ms':>9} {'d_lb ms':>9} {'srtt ms':>8} {'cwnd':>5} {'bound ms':>9}  label")
labels = {lab.chunk_id: lab.label.value for lab in diagnose_session(chunks)}
for c in chunks:
    s = c.first_snapshot
    print(f"{c.chunk_id:>5} {c.d_fb / 1000:>9.1f} {c.d_lb / 1000:>9.1f} {s.srtt / 1000:>8.1f} "
          f"{s.cwnd:>5} {estimate_persistent_ds(c):>9.1f}  {labels[c.chunk_id]}")

flags = detect_ds_outliers(chunks)
print("\nflagged chunks:", [f.chunk_id for f in flags])
