"""Versioned JSON persistence for fitted models.

The file stores the formula text, a hash of the dataset schema (so stale or
edited schemas are refused loudly downstream), coefficients, log smoothing
parameters, scale/dispersion, the dense coefficient covariance, per-term
effective degrees of freedom, and the full term recipes (knots, constraint
transforms, by-variable bindings) needed to rebuild design rows for new
data.  All floats round-trip exactly through JSON's shortest-repr encoding.
"""

from __future__ import annotations

import json

import numpy as np

from .bases import BasisSpec, KnotVector
from .errors import IngestError
from .fit import FittedModel
from .terms import DesignBlock, Margin, rebuild_block_penalties

MODEL_FORMAT_VERSION = 1


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def _margin_dict(m: Margin) -> dict:
    return {
        "var": m.var,
        "basis": {
            "kind": m.spec.kind, "k": m.spec.k,
            "penalty_order": m.spec.penalty_order,
            "knot_rule": m.spec.knot_rule,
        },
        "breaks": None if m.knots.breaks is None else list(m.knots.breaks),
        "levels": None if m.knots.levels is None else list(m.knots.levels),
    }


def _margin_from_dict(d: dict) -> Margin:
    b = d["basis"]
    return Margin(
        var=d["var"],
        spec=BasisSpec(kind=b["kind"], k=b["k"],
                       penalty_order=b["penalty_order"],
                       knot_rule=b["knot_rule"]),
        knots=KnotVector(
            breaks=None if d["breaks"] is None else tuple(d["breaks"]),
            levels=None if d["levels"] is None else tuple(d["levels"]),
        ),
    )


def _block_dict(b: DesignBlock) -> dict:
    return {
        "label": b.label,
        "term_type": b.term_type,
        "margins": [_margin_dict(m) for m in b.margins],
        "null_space_dim": b.null_space_dim,
        "Z": _arr(b.Z),
        "by_kind": b.by_kind,
        "by_var": b.by_var,
        "by_levels": None if b.by_levels is None else list(b.by_levels),
        "level_transforms": None if b.level_transforms is None
        else [_arr(Z) for Z in b.level_transforms],
        "weights": None if b.weights is None else list(b.weights),
        "slots": b.slots,
    }


def _block_from_dict(d: dict) -> DesignBlock:
    block = DesignBlock(
        label=d["label"],
        term_type=d["term_type"],
        margins=tuple(_margin_from_dict(m) for m in d["margins"]),
        penalties=[],
        null_space_dim=d["null_space_dim"],
        Z=None if d["Z"] is None else np.asarray(d["Z"], dtype=float),
        by_kind=d["by_kind"],
        by_var=d["by_var"],
        by_levels=None if d["by_levels"] is None else tuple(d["by_levels"]),
        level_transforms=None if d["level_transforms"] is None
        else [np.asarray(Z, dtype=float) for Z in d["level_transforms"]],
        weights=None if d["weights"] is None else tuple(d["weights"]),
        slots=d["slots"],
    )
    rebuild_block_penalties(block)
    return block


def model_to_dict(fit: FittedModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "formula": fit.formula,
        "response": fit.response,
        "schema_hash": fit.schema_hash,
        "family": {
            "name": fit.family_name,
            "kappa": fit.kappa,
            "kappa_estimated": fit.kappa_estimated,
        },
        "n_obs": fit.n_obs,
        "intercept": fit.intercept,
        "linear_vars": list(fit.linear_vars),
        "offset_var": fit.offset_var,
        "labels": list(fit.labels),
        "spans": {k: list(v) for k, v in fit.spans.items()},
        "slot_labels": list(fit.slot_labels),
        "terms": [_block_dict(b) for b in fit.blocks],
        "coefficients": _arr(fit.beta),
        "log_lambda": _arr(fit.log_lambda),
        "phi": fit.phi,
        "deviance": fit.deviance,
        "aic": fit.aic,
        "edf": {"total": fit.edf_total, "terms": fit.edf_terms},
        "vcov": _arr(fit.vcov),
        "gamma": fit.gamma,
        "seed": fit.seed,
        "convergence": {
            "converged": fit.converged,
            "pirls_iterations": fit.pirls_iterations,
            "ridge_used": fit.ridge_used,
            "lambda_trace": fit.lambda_trace,
            "kappa_trace": fit.kappa_trace,
            "notes": fit.notes,
        },
    }


def save_model(fit: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(fit), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def model_from_dict(doc: dict) -> FittedModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise IngestError(
            f"unsupported model format_version {doc.get('format_version')!r}"
        )
    conv = doc["convergence"]
    return FittedModel(
        formula=doc["formula"],
        response=doc["response"],
        family_name=doc["family"]["name"],
        kappa=doc["family"]["kappa"],
        kappa_estimated=doc["family"]["kappa_estimated"],
        intercept=doc["intercept"],
        linear_vars=tuple(doc["linear_vars"]),
        offset_var=doc["offset_var"],
        blocks=[_block_from_dict(b) for b in doc["terms"]],
        spans={k: tuple(v) for k, v in doc["spans"].items()},
        labels=list(doc["labels"]),
        slot_labels=list(doc["slot_labels"]),
        beta=np.asarray(doc["coefficients"], dtype=float),
        log_lambda=np.asarray(doc["log_lambda"], dtype=float),
        phi=doc["phi"],
        deviance=doc["deviance"],
        aic=doc["aic"],
        edf_total=doc["edf"]["total"],
        edf_terms=dict(doc["edf"]["terms"]),
        vcov=np.asarray(doc["vcov"], dtype=float),
        n_obs=doc["n_obs"],
        converged=conv["converged"],
        pirls_iterations=conv["pirls_iterations"],
        ridge_used=conv["ridge_used"],
        gamma=doc["gamma"],
        seed=doc["seed"],
        schema_hash=doc["schema_hash"],
        lambda_trace=conv.get("lambda_trace", []),
        kappa_trace=conv.get("kappa_trace"),
        notes=list(conv.get("notes", [])),
    )


def load_model(path) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"model file {path}: invalid JSON ({exc})") from exc
    return model_from_dict(doc)
