"""
Ticketed sequencer in front of a ledger.

Concurrent submitters draw tickets and hand their transactions in whenever
they are ready; one worker thread applies them strictly in ticket order. The
applied order therefore depends only on how tickets were handed out, never on
thread scheduling.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import Future

logger = logging.getLogger(__name__)


class OrderingService:
    def __init__(self, ledger, name="ordering"):
        self.ledger = ledger
        self._cond = threading.Condition()
        self._next_ticket = 0
        self._serving = 0
        self._applied = 0
        self._slots = {}
        self._closed = False
        self._worker = threading.Thread(target=self._run, name=name, daemon=True)
        self._worker.start()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def reserve(self, count=1):
        """Hand out ``count`` consecutive tickets."""
        with self._cond:
            first = self._next_ticket
            self._next_ticket += count
            return range(first, first + count)

    def submit(self, ticket, tx) -> Future:
        future = Future()
        with self._cond:
            if self._closed:
                raise RuntimeError("ordering service is closed")
            if ticket < self._serving or ticket in self._slots:
                raise ValueError(f"ticket {ticket} already used")
            self._slots[ticket] = (tx, future)
            self._cond.notify_all()
        return future

    def submit_next(self, tx) -> Future:
        return self.submit(self.reserve()[0], tx)

    def _run(self):
        while True:
            with self._cond:
                while self._serving not in self._slots and not self._closed:
                    self._cond.wait()
                if self._serving not in self._slots:
                    return
                tx, future = self._slots.pop(self._serving)
                self._serving += 1
            try:
                future.set_result(self.ledger.submit(tx))
            except Exception as exc:  # pragma: no cover
                logger.exception("ordering worker failed on ticket %d", self._serving - 1)
                future.set_exception(exc)
            with self._cond:
                self._applied += 1
                self._cond.notify_all()

    def drain(self, timeout=None):
        """Wait until every reserved ticket has been applied."""
        with self._cond:
            target = self._next_ticket
            return self._cond.wait_for(
                lambda: self._applied >= target or self._closed, timeout=timeout
            )

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._worker.join()
