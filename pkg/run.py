#!/usr/bin/env python3
"""
Entry point for the poselabel pipeline commands
"""

import asyncio
import sys
import os

# Add the current directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cli import main
from colorama import init, Fore as f
init(autoreset=True)

if __name__ == "__main__":
    print(f"🎯 {f.LIGHTMAGENTA_EX}poselabel: mocap-driven 6D pose annotation")
    print(f"{f.YELLOW}=" * 50)

    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        print(f"\n👋 {f.RED}Stopped by user")
        sys.exit(130)
