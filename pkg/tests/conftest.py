import json

import numpy as np
import pytest

from dceaudit.agents import AgentConfig, SimulatedConfig, read_records, run_experiment
from dceaudit.design import DesignSpec, generate_design
from dceaudit.inference import build_design_matrix, encode_design, fit_mnl
from dceaudit.prompts import load_template
from dceaudit.reference_estimates import estimates
from dceaudit.schema import Attribute, AttributeSchema, load_schema


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture(scope="session")
def template():
    return load_template()


def make_schema(*level_counts, version="toy"):
    attrs = [
        Attribute(f"A{i}", tuple(f"a{i}_{k}" for k in range(n)))
        for i, n in enumerate(level_counts)
    ]
    return AttributeSchema(tuple(attrs), version=version)


@pytest.fixture
def toy_schema_file(tmp_path):
    path = tmp_path / "toy.schema.json"
    path.write_text(json.dumps({
        "version": "toy-1",
        "attributes": [{"name": "X", "prompt_label": "X", "levels": ["A", "B"]}],
    }))
    return path


@pytest.fixture(scope="session")
def gpt4_run(schema, template, tmp_path_factory):
    """10,000 generated pairs answered by a Gumbel chooser with GPT-4 coefficients."""
    out = tmp_path_factory.mktemp("gpt4") / "records.jsonl"
    design = generate_design(schema, DesignSpec(n_sets=10_000, j_profiles=2, seed=20240416))
    beta_true = estimates("gpt-4")
    agent = AgentConfig("simulated", simulated=SimulatedConfig(beta=beta_true, seed=11))
    summary = run_experiment(design, agent, template, schema, out)
    records = read_records(out)
    dm = build_design_matrix(records, design, schema)
    fit = fit_mnl(dm)
    return {"design": design, "records": records, "summary": summary, "dm": dm,
            "fit": fit, "beta_true": beta_true}


def random_instance(schema, n_sets, seed, beta=None, j=2):
    """Design matrix with Gumbel-simulated choices (independent of the agent code)."""
    rng = np.random.default_rng(seed)
    design = generate_design(schema, DesignSpec(n_sets=n_sets, j_profiles=j, seed=seed))
    X = encode_design(design, schema)
    if beta is None:
        beta = rng.normal(scale=0.8, size=schema.n_parameters)
    util = X @ beta + rng.gumbel(size=X.shape[:2])
    chosen = util.argmax(axis=1)
    recs = [{"set_id": cs.id, "chosen_index": int(c)} for cs, c in zip(design, chosen)]
    return build_design_matrix(recs, design, schema), beta


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
