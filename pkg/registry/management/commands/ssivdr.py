import argparse
import io

from django.core.management.base import BaseCommand, CommandError

from registry.cli import EXIT_OK, cli_dispatch


class Command(BaseCommand):
    help = "Registry node command line (keygen, init, issue, verify, bench, ledger ...)."

    def add_arguments(self, parser):
        parser.add_argument("args", nargs=argparse.REMAINDER, help="registry command and its flags")

    def handle(self, *args, **options):
        out, err = io.StringIO(), io.StringIO()
        code = cli_dispatch(args, stdout=out, stderr=err)
        self.stdout.write(out.getvalue(), ending="")
        if code != EXIT_OK:
            raise CommandError(err.getvalue().strip() or f"exit status {code}", returncode=code)
        self.stderr.write(err.getvalue(), ending="")
