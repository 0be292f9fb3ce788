from collections import OrderedDict

from .base import deep_base
from .scenario import CheckModel, ReportModel, ScenarioModel


def _sorted_map(d: dict) -> dict:
    return OrderedDict(sorted(d.items(), key=lambda kv: kv[0]))


def _model_schemas() -> dict:
    out = {}
    for model in (ScenarioModel, ReportModel, CheckModel):
        js = model.model_json_schema(by_alias=True, ref_template="#/components/schemas/{model}")
        # hoist nested model definitions next to their parents
        for name, sub in (js.pop("$defs", None) or {}).items():
            out[name] = sub
        out[model.__name__] = js
    return out


def build_spec() -> dict:
    spec = deep_base()
    comps = spec.setdefault("components", {})
    schemas = comps.get("schemas") or {}
    schemas.update(_model_schemas())

    # sort for stable diffs
    comps["schemas"] = _sorted_map(schemas)
    spec["commands"] = _sorted_map(spec.get("commands") or {})
    return spec
