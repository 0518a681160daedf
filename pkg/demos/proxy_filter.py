"""Drop sessions whose CDN view disagrees with the player beacon, or whose
client IP streams more video in a day than one person could watch."""
from streamdiag.ingest import filter_proxies
from streamdiag.telemetry import SessionMeta

sessions = [
    SessionMeta("home", "10.0.0.1", "Windows/Chrome", 1200.0, beacon_ip="10.0.0.1"),
    SessionMeta("office", "10.0.0.2", "Windows/Chrome", 900.0, beacon_ip="172.16.4.9"),
    SessionMeta("spoofed", "10.0.0.3", "Windows/Chrome", 900.0,
                beacon_user_agent="Macintosh/Safari"),
]
# one address with 25 sessions of 90 minutes on the same day
sessions += [SessionMeta(f"nat{i}", "10.0.9.9", "Windows/IE", 5400.0, day=0) for i in range(25)]

res = filter_proxies(sessions)
print("kept:", [m.session_id for m in res.kept])
print("reasons:", res.reasons)
for sid in ("office", "spoofed", "nat0"):
    print(f"  {sid}: {res.dropped[sid]}")
