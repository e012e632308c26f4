import pytest

from mebn import corpus as corpus_pkg
from mebn.parser import SourceText, parse_evidence, parse_mtheory
from mebn.validation import ValidatedMTheory, validate


@pytest.fixture(scope="session")
def corpus_theory():
    return corpus_pkg.corpus_theory()


@pytest.fixture(scope="session")
def corpus_validated(corpus_theory):
    result = validate(corpus_theory)
    assert isinstance(result, ValidatedMTheory), result.render()
    return result


@pytest.fixture(scope="session")
def scenarios():
    return {s.name: s for s in corpus_pkg.load_scenarios()}


@pytest.fixture(scope="session")
def scenario_inputs(scenarios):
    cache = {}

    def load(name):
        if name not in cache:
            cache[name] = corpus_pkg.load_scenario_inputs(scenarios[name])
        return cache[name]

    return load


MINIMAL_THEORY = """
theory Tiny

types { Thing }

entities { Thing: !A0 }

mfrag Solo {
  vars { x: Thing }
  context { Isa(Thing, x) }
  resident { Mood(x) : { Good, Bad } }
  local Mood {
    default { Good: 0.7, Bad: 0.3 }
  }
}
"""


@pytest.fixture()
def minimal_theory():
    return parse_mtheory(SourceText(MINIMAL_THEORY, "<minimal>"))


def load_theory(text, origin="<test>"):
    return parse_mtheory(SourceText(text, origin))


def load_evidence(text, theory, origin="<test-evidence>"):
    return parse_evidence(SourceText(text, origin), theory)


def validated(text, origin="<test>"):
    theory = load_theory(text, origin)
    result = validate(theory)
    assert isinstance(result, ValidatedMTheory), result.render()
    return result
