# app/models/manifest.py
import hashlib
import json
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from app.utils.csv_utils import write_text_atomic
from config import app_config


class RunManifest(BaseModel):
    """One per output directory. Only started_at and wall_clock_s vary between identical invocations."""
    command: str
    scenario: Optional[str] = None
    solver: Dict[str, Any] = Field(default_factory=dict)
    output_dir: str
    input_hash: str = ""
    tool_version: str = app_config.APP_VERSION
    started_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    wall_clock_s: float = 0.0
    outputs: List[str] = Field(default_factory=list)
    result: Dict[str, Any] = Field(default_factory=dict)

    @staticmethod
    def hash_inputs(*parts: Any) -> str:
        digest = hashlib.sha256()
        for part in parts:
            digest.update(json.dumps(part, sort_keys=True, default=str).encode())
        return digest.hexdigest()

    def write(self) -> str:
        path = os.path.join(self.output_dir, app_config.MANIFEST_FILE)
        write_text_atomic(self.model_dump_json(indent=2) + "\n", path)
        return path
