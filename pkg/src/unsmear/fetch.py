"""Download the standard grayscale test images from a user-supplied mirror."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Optional

import httpx

from unsmear.errors import ImageFormatError
from unsmear.fileio import expand_path, read_pgm
from unsmear.models import FetchResult

logger = logging.getLogger(__name__)

STANDARD_IMAGES = [
    "boats",
    "bridge",
    "cameraman",
    "couple",
    "flag",
    "hill",
    "house",
    "man",
    "peppers",
    "saturn",
]
DOWNLOAD_TIMEOUT = 30.0


def image_url(base_url: str, name: str) -> str:
    return f"{base_url.rstrip('/')}/{name}.pgm"


def fetch_image(
    base_url: str,
    name: str,
    dest_dir: Path,
    overwrite: bool = False,
    client: Optional[httpx.Client] = None,
) -> FetchResult:
    """
    Download `<base_url>/<name>.pgm` into `dest_dir` and check it decodes as PGM.

    Args:
        base_url: Mirror URL without the file name
        name: Image name
        dest_dir: Destination directory
        overwrite: Replace an existing file
        client: Optional httpx client (a fresh one is used otherwise)

    Returns:
        FetchResult with the error message on failure
    """
    dest = expand_path(dest_dir) / f"{name}.pgm"
    if dest.exists() and not overwrite:
        return FetchResult(name=name, path=str(dest), skipped=True)

    url = image_url(base_url, name)
    try:
        if client is None:
            response = httpx.get(url, timeout=DOWNLOAD_TIMEOUT, follow_redirects=True)
        else:
            response = client.get(url)
        response.raise_for_status()
    except httpx.HTTPStatusError as e:
        return FetchResult(
            name=name, path=str(dest), success=False, error=f"HTTP {e.response.status_code}"
        )
    except httpx.RequestError as e:
        message = str(e) or type(e).__name__
        return FetchResult(name=name, path=str(dest), success=False, error=message)

    dest.parent.mkdir(parents=True, exist_ok=True)
    partial = dest.with_suffix(".part")
    partial.write_bytes(response.content)
    try:
        read_pgm(partial)
    except ImageFormatError as e:
        partial.unlink(missing_ok=True)
        return FetchResult(name=name, path=str(dest), success=False, error=str(e))
    partial.replace(dest)
    logger.info("fetched %s (%d bytes)", url, len(response.content))
    return FetchResult(name=name, path=str(dest), bytes_written=len(response.content))


def fetch_images(
    base_url: str,
    dest_dir: Path,
    names: Optional[list[str]] = None,
    overwrite: bool = False,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> list[FetchResult]:
    """Download several images; failures are reported per image, never raised."""
    names = names or STANDARD_IMAGES
    results = []
    with httpx.Client(timeout=DOWNLOAD_TIMEOUT, follow_redirects=True) as client:
        for i, name in enumerate(names):
            results.append(fetch_image(base_url, name, dest_dir, overwrite, client=client))
            if progress_callback:
                progress_callback(name, i + 1, len(names))
    return results
