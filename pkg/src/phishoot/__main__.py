import sys

from .cli import run_command


def main() -> int:
    return run_command(sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
