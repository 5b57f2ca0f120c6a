import logging
import sys

from adapters.cli_adapter import main as cli_main
from config import settings


def setup_logging():
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    # 下载工况时 httpx 的请求日志过于嘈杂
    logging.getLogger('httpx').setLevel(logging.WARNING)


def main():
    setup_logging()
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
