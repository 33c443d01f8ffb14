#pragma once

#include "cocola/numkit.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Dataset pipeline: a template mini-language mapping records to input/target
// text pairs, categorization/generation prompt kinds, field-swap
// augmentation, normalization, deduplication and synthetic task generation.
//
// Template file format:
//   @name: <template name>
//   @kind: categorization | generation
//   @choices: a | b | c          (categorization only)
//   @dataset: <source name>      (optional)
//   <input body>
//   |||
//   <target body>
//
// Bodies support {{field}} placeholders and string-equality conditionals
//   {% if field == "lit" %} ... {% elif field == "lit2" %} ... {% else %}
//   ... {% endif %}
// The ||| separator may also appear inline on a single body line.

namespace taskflow {

using numkit::Rng;

enum class TemplateKind { Categorization, Generation };

struct TemplateNode {
    enum class Type { Text, Placeholder, Conditional };

    struct Branch {
        std::string field;
        std::string literal;
        std::vector<TemplateNode> body;
    };

    Type type = Type::Text;
    std::string text;  // Text: literal run; Placeholder: field name
    std::vector<Branch> branches;
    std::optional<std::vector<TemplateNode>> else_body;
};

using NodeList = std::vector<TemplateNode>;

struct PromptTemplate {
    std::string name;
    TemplateKind kind = TemplateKind::Generation;
    std::vector<std::string> answer_choices;
    std::string source_dataset;
    NodeList input_body;
    NodeList target_body;

    /// All field names referenced by placeholders or conditionals.
    std::vector<std::string> referenced_fields() const;
};

using Record = std::map<std::string, std::string>;

struct PromptInstance {
    std::string input_text;
    std::string target_text;
    std::string template_name;
    std::vector<std::string> choices;  // empty for generation instances
};

enum class Split { Train, HeldInEval, HeldOutEval };
std::string split_name(Split s);
Split parse_split(const std::string& name);

struct TemplateStream {
    std::string template_name;
    Split split = Split::Train;
    std::vector<PromptInstance> instances;
};

/// Parse a template source string. Errors (missing ||| separator, unbalanced
/// conditionals, unknown directives, categorization without @choices, ...)
/// carry the offending line number.
PromptTemplate parse_template(const std::string& source);

/// Deterministic substitution of record fields into the template. Missing
/// fields and conditionals with no matching branch and no else are rejected
/// naming the field. Categorization targets must be one of the choices.
PromptInstance render(const PromptTemplate& t, const Record& r);

/// New template (name suffixed) with every reference to field_a replaced by
/// field_b and vice versa. Both fields must be referenced by the template.
/// Kind and choices are carried over; the caller re-declares them when the
/// swap changes the task direction.
PromptTemplate augment_swap(const PromptTemplate& t, const std::string& field_a,
                            const std::string& field_b);

/// Keep Unicode letters (block-granularity approximation covering the major
/// scripts), ASCII digits, Arabic-Indic digits, whitespace and the
/// punctuation set . , ? ! : ; " ' ( ) - %. Everything else (emoji, symbols,
/// control characters) is stripped; runs of spaces collapse to one and the
/// ends are trimmed. Idempotent.
std::string normalize(std::string_view text);

/// Drop later exact (input_text, target_text) duplicates, keeping first
/// occurrences in order. template_name is not part of the key.
std::vector<PromptInstance> dedup(const std::vector<PromptInstance>& instances);

/// Per template: render every record (records missing fields are skipped),
/// normalize both texts, dedup, shuffle with rng, truncate to cap. One
/// stream per template; a template producing zero valid instances is an
/// error naming it.
std::vector<TemplateStream> build_task(const std::vector<Record>& records,
                                       const std::vector<PromptTemplate>& templates, size_t cap,
                                       Rng& rng, Split split = Split::Train);

struct SynthTasks {
    std::vector<TemplateStream> train;     // sentiment_label, reverse_word, echo_phrase
    std::vector<TemplateStream> held_in;   // same template names, fresh records
    std::vector<TemplateStream> held_out;  // bracket_balance only
    std::vector<PromptTemplate> templates;
};

/// Deterministic toy tasks over the byte vocabulary: keyword sentiment
/// labeling (categorization), word reversal (generation), phrase echoing
/// (generation) and, held-out only, bracket-balance classification.
SynthTasks synth_tasks(uint64_t seed);

// JSON-lines I/O. Records are flat string-field objects, one per line.
std::vector<Record> read_records_jsonl(const std::filesystem::path& path);
void write_stream_jsonl(const TemplateStream& stream, const std::filesystem::path& path);
TemplateStream read_stream_jsonl(const std::filesystem::path& path);
PromptTemplate read_template_file(const std::filesystem::path& path);

}  // namespace taskflow
