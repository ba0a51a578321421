"""Service configuration: defaults, config file, and environment overrides.

A JSON or TOML file may set any key; environment variables win over the
file, and built-in defaults fill the rest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .embedding import EmbeddingProviderConfig
from .ingest import ChunkingParams
from .llm import DEFAULT_CONTEXT_BUDGET, GenParams, LlmEndpointConfig
from .retrieval import DEFAULT_MAX_PAGES, RetrievalMode, RetrievalParams
from .webtools import SummarizeParams

DEFAULT_SYSTEM_PROMPT = (
    "You are a helpful assistant. Ground your answers in the provided context "
    "when it is relevant, cite sources as [n], and say when the context is not "
    "sufficient."
)
DEFAULT_UPLOAD_LIMIT = 20 * 2**20

CONFIG_PATH_ENV = "RAGCHAT_CONFIG"


@dataclass
class ServiceConfig:
    """Everything the service and CLI need to talk to their endpoints."""

    llm: LlmEndpointConfig = field(default_factory=lambda: LlmEndpointConfig(url=""))
    embed: EmbeddingProviderConfig | None = None
    search_endpoint: str = ""
    image_gen_endpoint: str = ""
    image_understand_endpoint: str = ""
    asr_endpoint: str = ""
    retrieval: RetrievalParams = field(default_factory=RetrievalParams)
    chunking: ChunkingParams = field(default_factory=ChunkingParams)
    gen: GenParams = field(default_factory=GenParams)
    summarize: SummarizeParams = field(default_factory=SummarizeParams)
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    context_budget_tokens: int = DEFAULT_CONTEXT_BUDGET
    upload_limit_bytes: int = DEFAULT_UPLOAD_LIMIT
    preindexed_dir: str = ""
    data_dir: str = ""
    max_pages: int = DEFAULT_MAX_PAGES


def _load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ImportError:  # pragma: no cover - depends on interpreter
            import tomli as tomllib
        return tomllib.loads(data.decode("utf-8"))
    return json.loads(data)


def _pick(env: Mapping[str, str], file_cfg: dict, env_key: str, file_key: str,
          default: Any) -> Any:
    if env_key in env and env[env_key] != "":
        return env[env_key]
    if file_key in file_cfg:
        return file_cfg[file_key]
    return default


def load_config(
    env: Mapping[str, str] | None = None, config_path: str | None = None
) -> ServiceConfig:
    """Build a ServiceConfig from defaults, an optional file, and the env."""
    env = os.environ if env is None else env
    config_path = config_path or env.get(CONFIG_PATH_ENV, "")
    file_cfg: dict[str, Any] = _load_config_file(config_path) if config_path else {}

    def pick(env_key: str, file_key: str, default: Any) -> Any:
        return _pick(env, file_cfg, env_key, file_key, default)

    llm_url = str(pick("LLM_ENDPOINT", "llm_endpoint", ""))
    embed_url = str(pick("EMBED_ENDPOINT", "embed_endpoint", ""))
    retrieval = RetrievalParams(
        mode=RetrievalMode(str(pick("RETRIEVAL_MODE", "retrieval_mode", "mmr"))),
        k=int(pick("RETRIEVAL_K", "retrieval_k", 4)),
        fetch_k=(
            int(pick("RETRIEVAL_FETCH_K", "retrieval_fetch_k", 0)) or None
        ),
        lambda_=float(pick("RETRIEVAL_LAMBDA", "retrieval_lambda", 0.5)),
        min_score=float(pick("RETRIEVAL_MIN_SCORE", "retrieval_min_score", 0.0)),
    )
    chunking = ChunkingParams(
        chunk_size=int(pick("CHUNK_SIZE", "chunk_size", ChunkingParams().chunk_size)),
        overlap=int(pick("CHUNK_OVERLAP", "chunk_overlap", ChunkingParams().overlap)),
    )
    return ServiceConfig(
        llm=LlmEndpointConfig(
            url=llm_url,
            model=str(pick("LLM_MODEL", "llm_model", "default")),
            api_key_env=str(pick("LLM_API_KEY_ENV", "llm_api_key_env", "")),
        ),
        embed=(
            EmbeddingProviderConfig(
                endpoint_url=embed_url,
                model_name=str(pick("EMBED_MODEL", "embed_model", "default")),
                api_key_env=str(pick("EMBED_API_KEY_ENV", "embed_api_key_env", "")),
            )
            if embed_url
            else None
        ),
        search_endpoint=str(pick("SEARCH_ENDPOINT", "search_endpoint", "")),
        image_gen_endpoint=str(pick("IMAGE_GEN_ENDPOINT", "image_gen_endpoint", "")),
        image_understand_endpoint=str(
            pick("IMAGE_UNDERSTAND_ENDPOINT", "image_understand_endpoint", "")
        ),
        asr_endpoint=str(pick("ASR_ENDPOINT", "asr_endpoint", "")),
        retrieval=retrieval,
        chunking=chunking,
        system_prompt=str(pick("SYSTEM_PROMPT", "system_prompt", DEFAULT_SYSTEM_PROMPT)),
        context_budget_tokens=int(
            pick("CONTEXT_BUDGET_TOKENS", "context_budget_tokens", DEFAULT_CONTEXT_BUDGET)
        ),
        upload_limit_bytes=int(
            pick("UPLOAD_LIMIT_BYTES", "upload_limit_bytes", DEFAULT_UPLOAD_LIMIT)
        ),
        preindexed_dir=str(pick("PREINDEXED_DIR", "preindexed_dir", "")),
        data_dir=str(pick("DATA_DIR", "data_dir", "")),
        max_pages=int(pick("MAX_PAGES", "max_pages", DEFAULT_MAX_PAGES)),
    )
