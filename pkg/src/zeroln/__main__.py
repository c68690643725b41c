"""Allow running as: python -m zeroln"""

from zeroln.interface.cli import main

if __name__ == "__main__":
    main()
