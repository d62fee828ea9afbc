#!/usr/bin/env python3
"""
DMA Quantization Simulator Launcher
Checks dependencies, configures logging and dispatches to the command line
"""

import argparse
import sys
import logging
from pathlib import Path
from typing import List, Optional

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
DEFAULT_LOG_FILE = 'dma_quantization.log'


def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 8):
        print("ERROR: Python 3.8 or higher is required", file=sys.stderr)
        print(f"   Current version: {sys.version}", file=sys.stderr)
        return False
    return True


def check_dependencies():
    """Check if required packages are installed"""
    required_packages = {
        'numpy': 'numpy',
        'scipy': 'scipy',
        'soundfile': 'soundfile',
    }

    missing_packages = []

    for package, module in required_packages.items():
        try:
            __import__(module)
        except (ImportError, OSError):
            # soundfile raises OSError when libsndfile itself is missing
            missing_packages.append(package)
            print(f"MISSING: {package}", file=sys.stderr)

    if missing_packages:
        print(f"\nMissing packages: {', '.join(missing_packages)}", file=sys.stderr)
        print("\nTo install missing packages, run:", file=sys.stderr)
        print(f"pip install {' '.join(missing_packages)}", file=sys.stderr)
        return False

    return True


def setup_logging(level: int = logging.INFO, log_file: Optional[str] = None):
    """Setup logging configuration"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def launcher_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--skip-checks', action='store_true')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true')
    verbosity.add_argument('--quiet', action='store_true')
    parser.add_argument('--log-file', nargs='?', const=DEFAULT_LOG_FILE, default=None)
    return parser


def launch_application(argv: List[str]) -> int:
    """Put src/ on the path and run the command line"""
    modules_dir = Path(__file__).parent / "src"
    if str(modules_dir) not in sys.path:
        sys.path.insert(0, str(modules_dir))

    import cli
    return cli.main(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main launcher function"""
    options, remaining = launcher_parser().parse_known_args(argv)

    if not options.skip_checks:
        if not check_python_version() or not check_dependencies():
            print("\nERROR: System check failed. Please fix the issues above and try again.",
                  file=sys.stderr)
            return 3

    level = logging.DEBUG if options.verbose else logging.WARNING if options.quiet else logging.INFO
    setup_logging(level, options.log_file)

    return launch_application(remaining)


if __name__ == "__main__":
    sys.exit(main())
