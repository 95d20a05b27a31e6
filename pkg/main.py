import sys

from src.controller.MainController import MainController


def main() -> int:
    return MainController(sys.argv[1:]).run()


if __name__ == '__main__':
    sys.exit(main())
