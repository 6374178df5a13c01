"""Conversation document export/import: integrity before parsing."""

import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chatgate.convo import (
    ConversationState,
    ImportFailure,
    ImportFailureReason,
    export_conversation,
    import_conversation,
    utc_timestamp,
)
from chatgate.domain import Language, Message, Role


def state(messages=None, temperature=0.2, language=Language.EN):
    if messages is None:
        messages = (
            Message(role=Role.USER, content="What is a tumbling window?"),
            Message(role=Role.ASSISTANT, content="A fixed interval that resets completely."),
            Message(role=Role.USER, content="And a sliding one?"),
        )
    return ConversationState(
        model_id="standard-4k",
        language=language,
        temperature=temperature,
        created_at="2024-03-01T12:00:00Z",
        messages=tuple(messages),
    )


def forge(**overrides):
    """Build a document with a correct checksum around an arbitrary body."""
    body = {
        "created_at": "2024-03-01T12:00:00Z",
        "format_version": 1,
        "language": "en",
        "messages": [{"content": "hi", "role": "user"}],
        "model_id": "standard-4k",
        "temperature": "0.20",
    }
    body.update(overrides)
    for key in [k for k, v in body.items() if v is ...]:
        del body[key]
    encoded = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return encoded + b"\n" + hashlib.sha256(encoded).hexdigest().encode("ascii") + b"\n"


def reason_of(raw) -> ImportFailureReason:
    with pytest.raises(ImportFailure) as exc:
        import_conversation(raw)
    return exc.value.reason


def test_round_trip_is_byte_identical():
    doc = export_conversation(state())
    imported = import_conversation(doc)
    assert imported == state()
    assert export_conversation(imported) == doc


def test_document_shape():
    doc = export_conversation(state())
    body, checksum, trailer = doc.split(b"\n")
    assert trailer == b""
    assert hashlib.sha256(body).hexdigest().encode("ascii") == checksum
    parsed = json.loads(body)
    assert list(parsed) == sorted(parsed)
    assert parsed["temperature"] == "0.20"
    recanonicalized = json.dumps(parsed, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    assert recanonicalized.encode("utf-8") == body


def test_temperature_is_canonicalized_to_two_decimals():
    # 0.30000000000000004-style float noise must not leak into the document
    doc = export_conversation(state(temperature=0.1 + 0.2))
    assert b'"temperature":"0.30"' in doc
    assert import_conversation(doc).temperature == pytest.approx(0.30)


def test_unicode_content_round_trips():
    doc = export_conversation(state(messages=(Message(role=Role.USER, content="Größe → 10µm 💡"),)))
    assert "Größe → 10µm 💡".encode("utf-8") in doc
    assert import_conversation(doc).messages[0].content == "Größe → 10µm 💡"


def test_every_single_byte_mutation_fails_checksum():
    doc = export_conversation(state())
    for position in range(len(doc)):
        mutated = bytearray(doc)
        mutated[position] = (mutated[position] + 1) % 256
        assert reason_of(bytes(mutated)) is ImportFailureReason.BAD_CHECKSUM, f"byte {position}"


def test_truncation_and_emptiness_fail_checksum():
    doc = export_conversation(state())
    assert reason_of(doc[:-1]) is ImportFailureReason.BAD_CHECKSUM  # lost trailing newline
    assert reason_of(doc[: len(doc) // 2]) is ImportFailureReason.BAD_CHECKSUM
    assert reason_of(b"") is ImportFailureReason.BAD_CHECKSUM
    assert reason_of(b"\n") is ImportFailureReason.BAD_CHECKSUM


def test_checksum_case_is_not_forgiven():
    doc = export_conversation(state())
    body, checksum, _ = doc.split(b"\n")
    assert reason_of(body + b"\n" + checksum.upper() + b"\n") is ImportFailureReason.BAD_CHECKSUM


def test_future_version_is_reported_as_unsupported():
    assert reason_of(forge(format_version=2)) is ImportFailureReason.UNSUPPORTED_VERSION


@pytest.mark.parametrize(
    "overrides",
    [
        {"extra": "field"},
        {"model_id": ...},
        {"model_id": ""},
        {"model_id": 7},
        {"format_version": True},
        {"format_version": "1"},
        {"temperature": 0.2},
        {"language": 1},
        {"messages": {"role": "user"}},
        {"messages": [{"role": "user"}]},
        {"messages": [{"role": "user", "content": "x", "name": "y"}]},
        {"messages": [{"role": "user", "content": 5}]},
    ],
)
def test_malformed_bodies(overrides):
    assert reason_of(forge(**overrides)) is ImportFailureReason.MALFORMED


def test_checksummed_non_json_is_malformed():
    body = b"not json at all"
    doc = body + b"\n" + hashlib.sha256(body).hexdigest().encode("ascii") + b"\n"
    assert reason_of(doc) is ImportFailureReason.MALFORMED
    array = b"[1,2,3]"
    doc = array + b"\n" + hashlib.sha256(array).hexdigest().encode("ascii") + b"\n"
    assert reason_of(doc) is ImportFailureReason.MALFORMED


@pytest.mark.parametrize(
    "overrides",
    [
        {"language": "fr"},
        {"temperature": "1.01"},
        {"temperature": "0.5"},
        {"temperature": "2.00"},
        {"created_at": "yesterday"},
        {"created_at": "2024-03-01 12:00:00"},
        {"messages": [{"content": "hi", "role": "assistant"}]},
        {"messages": [{"content": "a", "role": "user"}, {"content": "b", "role": "user"}]},
        {"messages": [{"content": "hi", "role": "system"}]},
    ],
)
def test_invariant_violations(overrides):
    assert reason_of(forge(**overrides)) is ImportFailureReason.INVARIANT_VIOLATION


def test_user_turns_respect_the_input_limit_on_import():
    doc = forge(messages=[{"content": "x" * 5001, "role": "user"}])
    assert reason_of(doc) is ImportFailureReason.INVARIANT_VIOLATION
    ok = forge(messages=[{"content": "x" * 5000, "role": "user"}])
    assert import_conversation(ok).messages[0].char_count == 5000
    # assistant turns are the model's output and are not length-capped
    long_reply = forge(
        messages=[{"content": "hi", "role": "user"}, {"content": "y" * 6000, "role": "assistant"}]
    )
    assert import_conversation(long_reply).messages[1].char_count == 6000


def test_custom_limit_is_honored():
    doc = forge(messages=[{"content": "x" * 100, "role": "user"}])
    with pytest.raises(ImportFailure):
        import_conversation(doc, input_char_limit=99)


def test_utc_timestamp_format():
    stamp = utc_timestamp(1_700_000_000.0)
    assert stamp == "2023-11-14T22:13:20Z"
    assert import_conversation(forge(created_at=stamp)).created_at == stamp


contents = st.text(
    st.characters(blacklist_categories=("Cs",)),
    min_size=1,
    max_size=80,
)


@st.composite
def conversation_states(draw):
    n = draw(st.integers(min_value=1, max_value=7))
    messages = tuple(
        Message(role=Role.USER if i % 2 == 0 else Role.ASSISTANT, content=draw(contents)) for i in range(n)
    )
    return ConversationState(
        model_id=draw(st.sampled_from(["standard-4k", "large-16k"])),
        language=draw(st.sampled_from(list(Language))),
        temperature=draw(st.integers(min_value=0, max_value=100)) / 100,
        created_at=utc_timestamp(draw(st.integers(min_value=0, max_value=2_000_000_000))),
        messages=messages,
    )


@settings(max_examples=150, deadline=None)
@given(conversation_states())
def test_round_trip_property(s):
    doc = export_conversation(s)
    imported = import_conversation(doc)
    assert imported == s
    assert export_conversation(imported) == doc
