# artifact_service.py
"""Stage-file persistence: atomic writes and stamped JSON documents under one output directory."""
import hashlib
import json
import logging
import os
import tempfile
from datetime import datetime
from typing import Dict, Optional

import pandas as pd
import pytz

from config import SCHEMA_VERSION, TOOL_VERSION
from errors import ArtifactIOError

logger = logging.getLogger(__name__)

# left out of content hashes so reruns hash identically
VOLATILE_KEYS = ('created_at', 'runtime')


def canonical_json(document: Dict) -> str:
    return json.dumps(document, sort_keys=True, separators=(',', ':'))


def content_hash(document: Dict) -> str:
    stable = {k: v for k, v in document.items() if k not in VOLATILE_KEYS}
    if isinstance(stable.get('payload'), dict):
        stable['payload'] = {k: v for k, v in stable['payload'].items() if k not in VOLATILE_KEYS}
    return hashlib.sha256(canonical_json(stable).encode('utf-8')).hexdigest()


class ArtifactService:
    """Service reading and writing the pipeline's artifacts below `out_dir`"""

    def __init__(self, out_dir: str, config_hash: str):
        self.out_dir = out_dir
        self.config_hash = config_hash
        self.timezone = pytz.utc

    def path(self, relative: str) -> str:
        return os.path.join(self.out_dir, relative)

    def exists(self, relative: str) -> bool:
        return os.path.exists(self.path(relative))

    def _atomic_write(self, relative: str, data: bytes):
        target = self.path(relative)
        directory = os.path.dirname(target)
        try:
            os.makedirs(directory, exist_ok=True)
            fd, temp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-')
            try:
                with os.fdopen(fd, 'wb') as f:
                    f.write(data)
                os.replace(temp_path, target)
            except BaseException:
                if os.path.exists(temp_path):
                    os.remove(temp_path)
                raise
        except OSError as e:
            raise ArtifactIOError(f"Could not write {target}: {str(e)}")

    def write_bytes(self, relative: str, data: bytes) -> str:
        """Atomically write raw bytes; returns their sha256"""
        self._atomic_write(relative, data)
        return hashlib.sha256(data).hexdigest()

    def read_bytes(self, relative: str) -> bytes:
        try:
            with open(self.path(relative), 'rb') as f:
                return f.read()
        except OSError as e:
            raise ArtifactIOError(f"Could not read {self.path(relative)}: {str(e)}")

    def write_text(self, relative: str, text: str):
        self._atomic_write(relative, text.encode('utf-8'))

    def write_csv(self, relative: str, frame: pd.DataFrame, index: bool = False):
        self._atomic_write(relative, frame.to_csv(index=index, float_format='%.9g').encode('utf-8'))

    def write_json(self, relative: str, kind: str, payload: Dict) -> str:
        """
        Write a stamped JSON document atomically.

        Returns:
            content hash of the document without its volatile keys
        """
        document = {
            'schema_version': SCHEMA_VERSION,
            'tool_version': TOOL_VERSION,
            'config_hash': self.config_hash,
            'kind': kind,
            'created_at': datetime.now(self.timezone).isoformat(),
            'payload': payload,
        }
        text = json.dumps(document, sort_keys=True, indent=2) + "\n"
        self._atomic_write(relative, text.encode('utf-8'))
        logger.debug(f"Wrote {kind} artifact {relative}")
        return content_hash(document)

    def read_json(self, relative: str, kind: Optional[str] = None) -> Dict:
        """Payload of a stamped document; kind and schema version are checked"""
        target = self.path(relative)
        try:
            with open(target) as f:
                document = json.load(f)
        except OSError as e:
            raise ArtifactIOError(f"Could not read {target}: {str(e)}")
        except json.JSONDecodeError as e:
            raise ArtifactIOError(f"{target} is not valid JSON: {str(e)}")
        if document.get('schema_version') != SCHEMA_VERSION:
            raise ArtifactIOError(f"{target} has schema version {document.get('schema_version')}, "
                                  f"expected {SCHEMA_VERSION}")
        if kind is not None and document.get('kind') != kind:
            raise ArtifactIOError(f"{target} holds a '{document.get('kind')}' artifact, expected '{kind}'")
        if document.get('config_hash') != self.config_hash:
            logger.warning(f"⚠️ {relative} was produced under another config ({document.get('config_hash', '')[:12]})")
        return document['payload']
