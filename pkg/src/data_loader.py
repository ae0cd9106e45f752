"""
Data Loader Module

This module loads and saves the toolkit's files: networks in NNet format,
property JSON, sample and responsibility tables, and repair reports. Networks
named by URL are downloaded once and kept in an on-disk cache.
"""

import json
import logging
import os
import time
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
import requests

from src.config import get_settings
from src.evaluation import RepairReport
from src.exceptions import FetchError, PropertyFormatError
from src.localizer import ResponsibilityMatrix
from src.network import ActivationKind, Network, load_nnet, parse_nnet, save_nnet
from src.properties import InputDomain, PropertySpec, dumps_properties, parse_properties
from src.sampler import LabeledSampleSet

logger = logging.getLogger(__name__)

ACASXU_NAME = 'ACASXU_run2a_{prev}_{tau}_batch_2000.nnet'


def acasxu_file_name(prev: int, tau: int) -> str:
    """File name of the public ACAS Xu network N_{prev,tau}; both indices are 1-based."""
    if not 1 <= prev <= 5 or not 1 <= tau <= 9:
        raise FetchError(f"ACAS Xu networks are indexed 1..5 x 1..9, got {prev}, {tau}")
    return ACASXU_NAME.format(prev=prev, tau=tau)


class DataLoader:
    """Class for handling file loading and download caching."""

    def __init__(self, cache_dir: Optional[str] = None, cache_days: Optional[int] = None):
        """
        Initialize the DataLoader.

        Args:
            cache_dir (str, optional): Directory for downloaded files, from settings by default
            cache_days (int, optional): Days before a cached download is fetched again
        """
        settings = get_settings()
        self.cache_dir = Path(cache_dir or settings.cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.cache_expiry = timedelta(days=cache_days or settings.cache_days)
        self.session = requests.Session()

    def _get_cache_path(self, url: str) -> Path:
        """Cache file for a URL, named after its last path segment."""
        name = url.rstrip('/').rsplit('/', 1)[-1] or 'download'
        return self.cache_dir / name

    def _is_cache_valid(self, cache_path: Path) -> bool:
        if not cache_path.exists():
            return False
        cache_time = datetime.fromtimestamp(cache_path.stat().st_mtime)
        return datetime.now() - cache_time < self.cache_expiry

    def fetch_text(self, url: str, max_retries: int = 3, retry_delay: float = 2.0) -> str:
        """
        Download a text file through the cache.

        Args:
            url (str): File URL
            max_retries (int): Attempts before giving up
            retry_delay (float): Seconds between attempts

        Returns:
            str: File contents

        Raises:
            FetchError: Every attempt failed and no cached copy exists
        """
        cache_path = self._get_cache_path(url)
        if self._is_cache_valid(cache_path):
            logger.info(f"Using cached copy of {url}")
            return cache_path.read_text()

        for attempt in range(max_retries):
            try:
                logger.info(f"Fetching {url} (attempt {attempt + 1}/{max_retries})")
                response = self.session.get(url, timeout=30)
                response.raise_for_status()
                cache_path.write_text(response.text)
                return response.text
            except requests.exceptions.RequestException as e:
                logger.warning(f"Failed to fetch {url}: {str(e)}")
                if attempt < max_retries - 1:
                    time.sleep(retry_delay)

        if cache_path.exists():
            logger.warning(f"Falling back to expired cached copy of {url}")
            return cache_path.read_text()
        raise FetchError(f"Could not download {url} after {max_retries} attempts")

    def load_network(self, source: str, activation: Optional[ActivationKind] = None) -> Network:
        """
        Load a network from a local NNet file or an http(s) URL.

        Args:
            source (str): Path or URL
            activation (ActivationKind, optional): Overrides the file's activation

        Returns:
            Network: The parsed network
        """
        if source.startswith(('http://', 'https://')):
            return parse_nnet(self.fetch_text(source), activation)
        if not os.path.exists(source):
            raise FileNotFoundError(f"File not found: {source}")
        logger.info(f"Loading network: {source}")
        return load_nnet(source, activation)

    def fetch_acasxu(self, prev: int, tau: int, base_url: Optional[str] = None,
                     local_dir: Optional[str] = None) -> Network:
        """
        Load ACAS Xu network N_{prev,tau}, from ``local_dir`` when the file is there.
        """
        settings = get_settings()
        name = acasxu_file_name(prev, tau)
        local_dir = local_dir or settings.acasxu_dir
        if local_dir and (Path(local_dir) / name).exists():
            return self.load_network(str(Path(local_dir) / name))
        base = (base_url or settings.acasxu_base_url).rstrip('/')
        return self.load_network(f"{base}/{name}")

    def clear_cache(self) -> None:
        for cache_file in self.cache_dir.glob('*.nnet'):
            cache_file.unlink()

    @staticmethod
    def save_network(net: Network, file_path: str) -> None:
        _ensure_parent(file_path)
        logger.info(f"Saving network: {file_path}")
        save_nnet(net, file_path)

    @staticmethod
    def load_properties(file_path: str) -> List[PropertySpec]:
        """
        Load properties from a JSON file.

        Raises:
            PropertyFormatError: The file is not valid JSON or not a property document
        """
        try:
            doc = DataLoader.load_json(file_path)
        except json.JSONDecodeError as e:
            raise PropertyFormatError(f"{file_path}: invalid JSON ({e})")
        return parse_properties(doc)

    @staticmethod
    def save_properties(specs: List[PropertySpec], file_path: str) -> None:
        _ensure_parent(file_path)
        with open(file_path, 'w', encoding='utf-8') as f:
            f.write(dumps_properties(specs))

    @staticmethod
    def save_samples_csv(sample_set: LabeledSampleSet, file_path: str) -> None:
        _ensure_parent(file_path)
        sample_set.to_frame().to_csv(file_path, index=False)

    @staticmethod
    def load_samples_csv(file_path: str, domain: InputDomain) -> LabeledSampleSet:
        return LabeledSampleSet.from_frame(DataLoader.load_csv(file_path), domain)

    @staticmethod
    def save_responsibility_csv(matrix: ResponsibilityMatrix, file_path: str) -> None:
        _ensure_parent(file_path)
        matrix.to_frame().to_csv(file_path, index=False)

    @staticmethod
    def load_responsibility_csv(file_path: str) -> ResponsibilityMatrix:
        return ResponsibilityMatrix.from_frame(DataLoader.load_csv(file_path))

    @staticmethod
    def save_report(report: RepairReport, file_path: str) -> None:
        _ensure_parent(file_path)
        with open(file_path, 'w', encoding='utf-8') as f:
            f.write(report.to_json())

    @staticmethod
    def load_report(file_path: str) -> RepairReport:
        return RepairReport.from_dict(DataLoader.load_json(file_path))

    @staticmethod
    def load_csv(file_path: str, **kwargs) -> pd.DataFrame:
        """
        Load data from a CSV file.

        Args:
            file_path (str): Path to the CSV file
            **kwargs: Additional arguments to pass to pandas.read_csv()

        Returns:
            pd.DataFrame: Loaded data as a pandas DataFrame

        Raises:
            FileNotFoundError: If the file doesn't exist
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"File not found: {file_path}")
        logger.info(f"Loading CSV file: {file_path}")
        return pd.read_csv(file_path, **kwargs)

    @staticmethod
    def load_json(file_path: str) -> Union[Dict, List]:
        """
        Load data from a JSON file.

        Raises:
            FileNotFoundError: If the file doesn't exist
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"File not found: {file_path}")
        logger.info(f"Loading JSON file: {file_path}")
        with open(file_path, 'r', encoding='utf-8') as f:
            return json.load(f)

    @staticmethod
    def save_json(data: Any, file_path: str) -> None:
        _ensure_parent(file_path)
        logger.info(f"Saving JSON file: {file_path}")
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=4)


def _ensure_parent(file_path: str) -> None:
    parent = Path(file_path).parent
    if str(parent) not in ('', '.'):
        parent.mkdir(parents=True, exist_ok=True)
