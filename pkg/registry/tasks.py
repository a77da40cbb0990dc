import logging

from celery import shared_task

from . import bench
from .index import sync_index
from .storage import open_ledger

logger = logging.getLogger(__name__)


@shared_task
def sync_registry_index(ledger_path):
    """Replay the ledger file and rebuild the ORM index from it."""
    ledger = open_ledger(ledger_path)
    sync_index(ledger.state, ledger.chain)
    return {"blocks": len(ledger.chain), "head": ledger.chain_digest()}


@shared_task
def run_benchmark(kind, options):
    """Run one benchmark kind and write its CSV and chart files.

    ``options`` holds ``BenchConfig`` fields plus an optional ``compare`` flag.
    """
    options = dict(options)
    compare = options.pop("compare", False)
    config = bench.BenchConfig(**options).validate()
    report = bench.run_benchmark(kind, config, compare=compare)
    written = bench.write_report(report, config.out_dir)
    logger.info("benchmark %s wrote %s", kind, ", ".join(str(path) for path in written))
    return [str(path) for path in written]
