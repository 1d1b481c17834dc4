import random
import threading
from collections import Counter

from epochrep.threaded import ThreadedCluster
from epochrep.txn import IsolationLevel, Status

KEYS = [b"k%02d" % i for i in range(16)]


def test_threads_converge_under_contention():
    results = Counter()
    with ThreadedCluster(3, [(k, b"0") for k in KEYS], epoch_ms=5) as c:
        def worker(nid, seed):
            rng = random.Random(seed)
            for _ in range(25):
                a, b, d = rng.sample(KEYS, 3)
                t = c.execute(nid, [("read", a), ("update", b, b"%d" % seed), ("update", d, b"w")],
                              IsolationLevel.SI)
                results[t.status] += 1

        threads = [threading.Thread(target=worker, args=(i % 3, i)) for i in range(9)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert c.quiesce() is not None
    assert not c.errors
    assert results[Status.COMMITTED] > 0 and sum(results.values()) == 225
    snaps = [dict(n.replica.snapshots) for n in c.nodes]
    common = set.intersection(*(set(s) for s in snaps))
    assert len(common) > 5
    assert all(len({s[e] for s in snaps}) == 1 for e in common)
    assert len({n.replica.store.fingerprint() for n in c.nodes}) == 1
    logs = [{e: set(v) for e, v in n.replica.commit_log.items() if e in common} for n in c.nodes]
    assert logs[0] == logs[1] == logs[2]
