import json

import pytest

from models.errors import ContractViolation
from models.schema_catalog import DEFAULT_SCHEMAS, SchemaCatalog


class TestSchemaCatalog:
    def test_default_file_holds_every_schema(self):
        schemas = SchemaCatalog().schemas_for("all")
        texts = [str(s) for s in schemas]
        assert texts == DEFAULT_SCHEMAS["user_item"] + DEFAULT_SCHEMAS["item_item"]
        assert SchemaCatalog().schema_sets == ["all", "ui", "uib", "uic"]

    def test_schema_sets_restrict_node_types(self):
        catalog = SchemaCatalog()
        assert [str(s) for s in catalog.schemas_for("ui")] == ["IUIUI"]
        assert [str(s) for s in catalog.schemas_for("uib")] == ["UIBI", "IBIBI", "IUIUI", "IBIUI"]
        assert [str(s) for s in catalog.schemas_for("uic")] == ["UICI", "ICICI", "IUIUI", "ICIUI"]

    def test_unknown_set_rejected(self):
        with pytest.raises(ContractViolation):
            SchemaCatalog().schemas_for("everything")

    def test_unreadable_file_falls_back_to_builtin(self, tmp_path, caplog):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        catalog = SchemaCatalog(str(path))
        assert catalog.catalog == DEFAULT_SCHEMAS
        assert "Error loading schema catalog" in caplog.text

    def test_custom_file(self, tmp_path):
        path = tmp_path / "schemas.json"
        path.write_text(json.dumps({"user_item": ["UIBI"], "item_item": ["IBI"], "schema_sets": {"all": "UIB"}}))
        assert [str(s) for s in SchemaCatalog(str(path)).schemas_for("all")] == ["UIBI", "IBI"]
