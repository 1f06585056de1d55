"""
MNIST Fetcher - Streams the four gzipped IDX files into a data directory with retry and atomic rename
"""
import gzip
import logging
import os
import struct
import time
from typing import Callable, List, Optional

import requests

from .data import GZIP_MAGIC, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, MNIST_FILES
from .errors import FormatError
from .file_manager import ensure_dir, format_size

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"
CHUNK_SIZE = 64 * 1024
MAX_RETRIES = 3
TIMEOUT = 30


def _expected_magic(key: str) -> int:
    return IDX_IMAGE_MAGIC if key.endswith('images') else IDX_LABEL_MAGIC


def verify_idx_gz(path: str, expected_magic: int):
    with open(path, 'rb') as f:
        head = f.read(2)
    if head != GZIP_MAGIC:
        raise FormatError(f"{path}: not a gzip file", offset=0)
    with gzip.open(path, 'rb') as f:
        raw = f.read(4)
    if len(raw) < 4 or struct.unpack('>I', raw)[0] != expected_magic:
        raise FormatError(f"{path}: IDX magic is not {expected_magic}", offset=0)


def _download(session: requests.Session, url: str, dest: str,
              on_progress: Optional[Callable] = None) -> int:
    tmp = dest + '.part'
    with session.get(url, stream=True, timeout=TIMEOUT) as resp:
        if resp.status_code != 200:
            raise FormatError(f"GET {url} returned HTTP {resp.status_code}")
        total = int(resp.headers.get('Content-Length', 0))
        done = 0
        with open(tmp, 'wb') as f:
            for data in resp.iter_content(chunk_size=CHUNK_SIZE):
                if data:
                    f.write(data)
                    done += len(data)
                    if on_progress:
                        on_progress(done, total)
    os.replace(tmp, dest)
    return done


def fetch_mnist(dest_dir: str, base_url: str = DEFAULT_BASE_URL,
                session: Optional[requests.Session] = None,
                on_progress: Optional[Callable] = None) -> List[str]:
    """Download whatever of the train/test image/label files is missing; return all four paths."""
    ensure_dir(dest_dir)
    session = session or requests.Session()
    if not base_url.endswith('/'):
        base_url += '/'
    paths = []
    for key, name in MNIST_FILES.items():
        dest = os.path.join(dest_dir, name)
        paths.append(dest)
        if os.path.exists(dest):
            logger.info(f"{name} already present, skipping")
            continue
        url = base_url + name
        for attempt in range(MAX_RETRIES):
            try:
                size = _download(session, url, dest, on_progress)
                break
            except requests.RequestException as e:
                logger.error(f"{name} attempt {attempt + 1} failed: {e}")
                if attempt == MAX_RETRIES - 1:
                    raise
                time.sleep(2 ** attempt)
        try:
            verify_idx_gz(dest, _expected_magic(key))
        except FormatError:
            os.remove(dest)
            raise
        logger.info(f"Fetched {name} ({format_size(size)})")
    return paths
