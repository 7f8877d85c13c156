import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflect_loop import agents
from reflect_loop.agents import parse_structured
from reflect_loop.backend import ScriptedBackend
from reflect_loop.core import (
    CandidateResponse,
    EmotionForecast,
    PerceptionEvidence,
    PragmaticPlan,
    StageId,
)
from reflect_loop.errors import StageError
from tests.conftest import caef_reply, gra_reply, make_ctx, mpa_reply, psp_reply, sgrg_reply


# --- parse_structured ---------------------------------------------------------

def test_parse_fenced_block():
    reply = 'Sure thing!\n```json\n{"emotion": "sad"}\n```\nHope that helps.'
    out = parse_structured(reply, ("emotion",))
    assert out.ok and out.value["emotion"] == "sad"


def test_parse_pure_prose_fails_with_diagnostics():
    out = parse_structured("I feel like the speaker is sad.", ("emotion",))
    assert not out.ok
    assert out.diagnostics


def test_parse_first_of_two_blocks_wins():
    reply = '{"emotion": "sad"} and later {"emotion": "angry"}'
    out = parse_structured(reply, ("emotion",))
    assert out.value["emotion"] == "sad"


def test_parse_missing_field_reported():
    out = parse_structured('{"goal": "comfort"}', ("goal", "tone"))
    assert not out.ok
    assert "tone" in out.diagnostics


def test_parse_keys_case_insensitive():
    out = parse_structured('{"Emotion": "sad"}', ("emotion",))
    assert out.ok


# --- MPA ----------------------------------------------------------------------

def test_mpa_parses_observations(templates):
    backend = ScriptedBackend([mpa_reply()])
    z_p = agents.run_mpa(make_ctx(), backend, templates)
    assert isinstance(z_p, PerceptionEvidence)
    assert z_p.visual_observations and z_p.textual_observations
    assert z_p.raw_text == mpa_reply()


def test_mpa_text_only_context_is_legal(templates):
    reply = json.dumps({"visual_observations": [], "textual_observations": ["short answers"]})
    z_p = agents.run_mpa(make_ctx(), ScriptedBackend([reply]), templates)
    assert z_p.visual_observations == ()
    assert z_p.textual_observations == ("short answers",)


def test_mpa_retry_exhaustion_is_stage_error(templates):
    backend = ScriptedBackend(["nope", "still nope", "word salad"])
    with pytest.raises(StageError) as exc_info:
        agents.run_mpa(make_ctx(), backend, templates)
    assert exc_info.value.stage == "perception"
    assert exc_info.value.raw_text == "word salad"
    assert len(backend.calls) == 3  # initial ask + 2 format-reminder re-asks


def test_mpa_empty_both_lists_rejected(templates):
    reply = json.dumps({"visual_observations": [], "textual_observations": []})
    with pytest.raises(StageError):
        agents.run_mpa(make_ctx(), ScriptedBackend([reply] * 3), templates)


# --- CAEF ---------------------------------------------------------------------

def _z_p():
    return PerceptionEvidence(("tense jaw",), ("raised voice",), "raw")


def test_caef_accepts_label(templates):
    z_e = agents.run_caef(make_ctx(), _z_p(), ScriptedBackend([caef_reply("frustrated")]), templates)
    assert z_e.label == "frustrated"


def test_caef_normalizes_case_and_punctuation(templates):
    reply = json.dumps({"emotion": "Angry.", "rationale": ""})
    z_e = agents.run_caef(make_ctx(), _z_p(), ScriptedBackend([reply]), templates)
    assert z_e.label == "angry"


def test_caef_synonym_map(templates):
    reply = json.dumps({"emotion": "anger", "rationale": ""})
    z_e = agents.run_caef(make_ctx(), _z_p(), ScriptedBackend([reply]), templates)
    assert z_e.label == "angry"


def test_caef_out_of_vocabulary_retries_then_fails(templates):
    backend = ScriptedBackend([json.dumps({"emotion": "melancholy"})] * 3)
    with pytest.raises(StageError) as exc_info:
        agents.run_caef(make_ctx(), _z_p(), backend, templates)
    assert exc_info.value.stage == "emotion"
    assert len(backend.calls) == 3


def test_caef_prompt_mentions_evidence_agreement(templates):
    backend = ScriptedBackend([caef_reply()])
    agents.run_caef(make_ctx(), _z_p(), backend, templates)
    prompt = backend.calls[0].user_prompt
    assert "agreement" in prompt
    assert "tense jaw" in prompt and "raised voice" in prompt


# --- PSP ----------------------------------------------------------------------

def _z_e(label="sad"):
    return EmotionForecast(label, "they lost someone", "raw", "iemocap")


def test_psp_exact_field_mapping(templates):
    reply = json.dumps({"goal": "comfort", "stance": "warm", "tactic": "reassure", "tone": "gentle"})
    plan = agents.run_psp(make_ctx(), _z_p(), _z_e(), ScriptedBackend([reply]), templates)
    assert (plan.goal, plan.stance, plan.tactic, plan.tone) == ("comfort", "warm", "reassure", "gentle")


def test_psp_missing_tone_retries_then_fails(templates):
    reply = json.dumps({"goal": "g", "stance": "s", "tactic": "t"})
    backend = ScriptedBackend([reply] * 3)
    with pytest.raises(StageError) as exc_info:
        agents.run_psp(make_ctx(), _z_p(), _z_e(), backend, templates)
    assert exc_info.value.stage == "strategy"


# --- SGRG ---------------------------------------------------------------------

def _z_s():
    return PragmaticPlan("comfort", "warm", "reassure", "gentle", "raw")


def test_sgrg_returns_text(templates):
    r = agents.run_sgrg(make_ctx(), _z_p(), _z_e(), _z_s(), [], ScriptedBackend([sgrg_reply("I hear you.")]), templates)
    assert isinstance(r, CandidateResponse)
    assert r.text == "I hear you."


def test_sgrg_empty_exemplars_is_retrieval_off_path(templates):
    backend = ScriptedBackend([sgrg_reply()])
    agents.run_sgrg(make_ctx(), _z_p(), _z_e(), _z_s(), [], backend, templates)
    assert "Exemplar" not in backend.calls[0].user_prompt


def test_sgrg_prompt_carries_all_upstream_state(templates):
    backend = ScriptedBackend([sgrg_reply()])
    agents.run_sgrg(make_ctx(), _z_p(), _z_e(), _z_s(), [], backend, templates)
    prompt = backend.calls[0].user_prompt
    for expected in ("tense jaw", "raised voice", "sad", "comfort", "warm", "reassure", "gentle"):
        assert expected in prompt


def test_sgrg_correction_section_present_on_rerun(templates):
    backend = ScriptedBackend([sgrg_reply()])
    agents.run_sgrg(
        make_ctx(), _z_p(), _z_e(), _z_s(), [], backend, templates,
        correction="the reply ignored the plan's tone",
    )
    prompt = backend.calls[0].user_prompt
    assert "the reply ignored the plan's tone" in prompt
    assert agents.CORRECTION_PREAMBLES[StageId.RESPONSE] in prompt


# --- GRA ----------------------------------------------------------------------

def _full_state():
    return make_ctx(), _z_p(), _z_e(), _z_s(), CandidateResponse("I hear you.", "raw")


def test_gra_all_pass(templates):
    ctx, z_p, z_e, z_s, r = _full_state()
    f = agents.run_gra(ctx, z_p, z_e, z_s, r, ScriptedBackend([gra_reply()]), templates)
    assert f.is_valid and f.attributed_stage is None and not f.inconclusive


def test_gra_earliest_fault_rule(templates):
    ctx, z_p, z_e, z_s, r = _full_state()
    reply = gra_reply((True, False, True, False), critique="emotion overstated")
    f = agents.run_gra(ctx, z_p, z_e, z_s, r, ScriptedBackend([reply]), templates)
    assert not f.is_valid
    assert f.attributed_stage == StageId.EMOTION
    assert f.critique == "emotion overstated"


def test_gra_consistency_repair_overrides_model_claim(templates):
    ctx, z_p, z_e, z_s, r = _full_state()
    # the model claims validity while its own checks say the emotion failed
    doc = json.loads(gra_reply((True, False, True, True)))
    doc["is_valid"] = True
    f = agents.run_gra(ctx, z_p, z_e, z_s, r, ScriptedBackend([json.dumps(doc)]), templates)
    assert not f.is_valid
    assert f.attributed_stage == StageId.EMOTION


def test_gra_unparseable_degrades_to_inconclusive_all_pass(templates):
    ctx, z_p, z_e, z_s, r = _full_state()
    backend = ScriptedBackend(["garbage"] * 3)
    f = agents.run_gra(ctx, z_p, z_e, z_s, r, backend, templates)
    assert f.is_valid and f.inconclusive
    assert len(backend.calls) == 3


def test_gra_accepts_pass_fail_words(templates):
    ctx, z_p, z_e, z_s, r = _full_state()
    reply = json.dumps(
        {"perception_ok": "pass", "emotion_ok": "fail", "strategy_ok": "pass", "response_ok": "pass"}
    )
    f = agents.run_gra(ctx, z_p, z_e, z_s, r, ScriptedBackend([reply]), templates)
    assert f.checks == (True, False, True, True)


# --- prompt purity ------------------------------------------------------------

def test_prompt_rendering_is_pure(templates):
    ctx = make_ctx()
    b1, b2 = ScriptedBackend([mpa_reply()]), ScriptedBackend([mpa_reply()])
    agents.run_mpa(ctx, b1, templates)
    agents.run_mpa(ctx, b2, templates)
    assert b1.calls[0].user_prompt == b2.calls[0].user_prompt
    assert b1.calls[0].system_prompt == b2.calls[0].system_prompt


# --- randomized replies keep invariants ---------------------------------------

label_strategy = st.sampled_from(["angry", "happy", "sad", "neutral", "excited", "frustrated"])
text_strategy = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=40
).filter(lambda s: s.strip())


@settings(max_examples=250, deadline=None)
@given(
    label=label_strategy,
    rationale=text_strategy,
    goal=text_strategy,
    stance=text_strategy,
    tactic=text_strategy,
    tone=text_strategy,
    response=text_strategy,
    checks=st.tuples(st.booleans(), st.booleans(), st.booleans(), st.booleans()),
)
def test_random_scripted_replies_yield_invariant_valid_objects(
    templates, label, rationale, goal, stance, tactic, tone, response, checks
):
    ctx = make_ctx()
    z_e = agents.run_caef(
        ctx, _z_p(),
        ScriptedBackend([json.dumps({"emotion": label, "rationale": rationale})]),
        templates,
    )
    assert z_e.label == label
    z_s = agents.run_psp(
        ctx, _z_p(), z_e,
        ScriptedBackend([json.dumps({"goal": goal, "stance": stance, "tactic": tactic, "tone": tone})]),
        templates,
    )
    assert z_s.goal == goal
    r = agents.run_sgrg(
        ctx, _z_p(), z_e, z_s, [],
        ScriptedBackend([json.dumps({"response": response})]),
        templates,
    )
    assert r.text == response
    f = agents.run_gra(ctx, _z_p(), z_e, z_s, r, ScriptedBackend([gra_reply(checks)]), templates)
    assert f.is_valid == all(checks)
