"""
Meta-path schema catalog.
Loads the user-item and item-item schema lists and the schema-subset variants.
"""

import os
import json
import logging
from typing import Dict, List, Any

from .errors import ContractViolation
from .metapath_sampler import MetaPathSchema

# Get logger for this module
logger = logging.getLogger(__name__)

DEFAULT_SCHEMAS = {
    "user_item": ["UIBI", "UICI", "UIBICI", "UICIBI"],
    "item_item": ["ICIBI", "IBICI", "ICICI", "IBIBI", "IUIUI", "ICIUI", "IBIUI"],
    "schema_sets": {"all": "UIBC", "ui": "UI", "uib": "UIB", "uic": "UIC"},
}


class SchemaCatalog:
    """
    Provides the meta-path schemas used for path sampling.
    """

    def __init__(self, schema_file: str = "metapath_schemas.json"):
        """
        Initialize SchemaCatalog with a schema file.

        Args:
            schema_file: Path of the JSON schema file, relative to the project root
                unless absolute
        """
        self.schema_file = schema_file
        self._catalog = None

    @property
    def catalog(self) -> Dict[str, Any]:
        """
        Load and cache the schema catalog.

        Returns:
            Dictionary with user_item, item_item and schema_sets entries
        """
        if self._catalog is None:
            self._catalog = self._load_catalog()
        return self._catalog

    def _load_catalog(self) -> Dict[str, Any]:
        if os.path.isabs(self.schema_file):
            json_path = self.schema_file
        else:
            current_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
            json_path = os.path.join(current_dir, self.schema_file)
        try:
            with open(json_path, 'r', encoding='utf-8') as file:
                return json.load(file)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error loading schema catalog {json_path}: {e}; using built-in schemas")
            return DEFAULT_SCHEMAS

    @property
    def schema_sets(self) -> List[str]:
        return sorted(self.catalog.get("schema_sets", {}))

    def schemas_for(self, schema_set: str = "all") -> List[MetaPathSchema]:
        """
        Get the schemas allowed by a schema-subset variant.

        Args:
            schema_set: One of the keys of schema_sets (all, ui, uib, uic)

        Returns:
            User-item schemas followed by item-item schemas, restricted to the
            node types of the variant
        """
        sets = self.catalog.get("schema_sets", {})
        if schema_set not in sets:
            raise ContractViolation(f"unknown schema set {schema_set!r}; expected one of {sorted(sets)}")
        allowed = set(sets[schema_set])
        schemas = []
        for group in ("user_item", "item_item"):
            for text in self.catalog.get(group, []):
                schema = MetaPathSchema.parse(text)
                if set(str(schema)) <= allowed:
                    schemas.append(schema)
        if not schemas:
            logger.warning(f"Schema set {schema_set!r} leaves no schema; every path set will be empty")
        return schemas
