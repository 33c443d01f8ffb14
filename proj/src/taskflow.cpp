#include "cocola/taskflow.hpp"

#include "cocola/container.hpp"
#include "cocola/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace taskflow {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// locale-independent character classes so parsing and normalization are
// identical on every host
bool ascii_space(char ch) {
    return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v';
}
bool ascii_digit(char ch) { return ch >= '0' && ch <= '9'; }
bool ascii_alpha(char ch) { return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z'); }

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && ascii_space(s[b])) ++b;
    while (e > b && ascii_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

bool is_ident(std::string_view s) {
    if (s.empty()) return false;
    if (!(ascii_alpha(s[0]) || s[0] == '_')) return false;
    for (const char ch : s)
        if (!(ascii_alpha(ch) || ascii_digit(ch) || ch == '_')) return false;
    return true;
}

[[noreturn]] void parse_fail(int line, const std::string& msg) {
    throw DataError("line " + std::to_string(line) + ": " + msg);
}

// ---------------------------------------------------------------------
// body tokenizer / recursive-descent parser
// ---------------------------------------------------------------------

struct Token {
    enum class Kind { Text, Placeholder, If, Elif, Else, Endif };
    Kind kind;
    std::string text;     // Text: literal run; Placeholder/If/Elif: field
    std::string literal;  // If/Elif comparison literal
    int line = 0;
};

class LineIndex {
public:
    explicit LineIndex(const std::string& source) {
        starts_.push_back(0);
        for (size_t i = 0; i < source.size(); ++i)
            if (source[i] == '\n') starts_.push_back(i + 1);
    }
    int line_at(size_t offset) const {
        const auto it = std::upper_bound(starts_.begin(), starts_.end(), offset);
        return static_cast<int>(it - starts_.begin());
    }

private:
    std::vector<size_t> starts_;
};

void parse_condition(std::string_view inner, int line, std::string& field, std::string& literal) {
    size_t p = 0;
    while (p < inner.size() && ascii_space(inner[p])) ++p;
    const size_t fb = p;
    while (p < inner.size() &&
           (ascii_alpha(inner[p]) || ascii_digit(inner[p]) || inner[p] == '_'))
        ++p;
    field = std::string(inner.substr(fb, p - fb));
    if (!is_ident(field)) parse_fail(line, "conditional requires a field name");
    while (p < inner.size() && ascii_space(inner[p])) ++p;
    if (inner.substr(p, 2) != "==")
        parse_fail(line, "conditional on field '" + field + "' requires '=='");
    p += 2;
    while (p < inner.size() && ascii_space(inner[p])) ++p;
    if (p >= inner.size() || inner[p] != '"')
        parse_fail(line, "conditional literal must be double-quoted");
    const size_t lb = ++p;
    const size_t lq = inner.find('"', p);
    if (lq == std::string_view::npos) parse_fail(line, "unterminated conditional literal");
    literal = std::string(inner.substr(lb, lq - lb));
    const std::string tail = trim(inner.substr(lq + 1));
    if (!tail.empty()) parse_fail(line, "unexpected text after conditional literal: '" + tail + "'");
}

std::vector<Token> tokenize_body(const std::string& source, size_t begin, size_t end,
                                 const LineIndex& lines) {
    std::vector<Token> toks;
    size_t pos = begin;
    while (pos < end) {
        size_t open = std::string::npos;
        bool is_expr = false;
        for (size_t i = pos; i + 1 < end; ++i) {
            if (source[i] == '{' && (source[i + 1] == '{' || source[i + 1] == '%')) {
                open = i;
                is_expr = source[i + 1] == '{';
                break;
            }
        }
        if (open == std::string::npos) {
            toks.push_back({Token::Kind::Text, source.substr(pos, end - pos), "", lines.line_at(pos)});
            break;
        }
        if (open > pos)
            toks.push_back({Token::Kind::Text, source.substr(pos, open - pos), "", lines.line_at(pos)});

        const int line = lines.line_at(open);
        const std::string closer = is_expr ? "}}" : "%}";
        const size_t close = source.find(closer, open + 2);
        if (close == std::string::npos || close + 2 > end)
            parse_fail(line, is_expr ? "unterminated {{ placeholder" : "unterminated {% directive");
        const std::string inner = trim(std::string_view(source).substr(open + 2, close - open - 2));
        if (is_expr) {
            if (!is_ident(inner))
                parse_fail(line, "invalid placeholder name '" + inner + "'");
            toks.push_back({Token::Kind::Placeholder, inner, "", line});
        } else if (inner == "else") {
            toks.push_back({Token::Kind::Else, "", "", line});
        } else if (inner == "endif") {
            toks.push_back({Token::Kind::Endif, "", "", line});
        } else if (inner.rfind("if", 0) == 0 &&
                   (inner.size() == 2 || ascii_space(inner[2]))) {
            Token t{Token::Kind::If, "", "", line};
            parse_condition(std::string_view(inner).substr(2), line, t.text, t.literal);
            toks.push_back(std::move(t));
        } else if (inner.rfind("elif", 0) == 0 &&
                   (inner.size() == 4 || ascii_space(inner[4]))) {
            Token t{Token::Kind::Elif, "", "", line};
            parse_condition(std::string_view(inner).substr(4), line, t.text, t.literal);
            toks.push_back(std::move(t));
        } else {
            const std::string word = inner.substr(0, inner.find_first_of(" \t\n"));
            parse_fail(line, "unknown directive '{% " + word + " %}'");
        }
        pos = close + 2;
    }
    return toks;
}

NodeList parse_nodes(const std::vector<Token>& toks, size_t& i, bool inside_conditional,
                     int open_line);

TemplateNode parse_conditional(const std::vector<Token>& toks, size_t& i) {
    TemplateNode node;
    node.type = TemplateNode::Type::Conditional;
    const Token& open = toks[i];
    TemplateNode::Branch first;
    first.field = open.text;
    first.literal = open.literal;
    ++i;
    first.body = parse_nodes(toks, i, true, open.line);
    node.branches.push_back(std::move(first));

    while (i < toks.size() && toks[i].kind == Token::Kind::Elif) {
        TemplateNode::Branch b;
        b.field = toks[i].text;
        b.literal = toks[i].literal;
        const int line = toks[i].line;
        ++i;
        b.body = parse_nodes(toks, i, true, line);
        node.branches.push_back(std::move(b));
    }
    if (i < toks.size() && toks[i].kind == Token::Kind::Else) {
        const int line = toks[i].line;
        ++i;
        node.else_body = parse_nodes(toks, i, true, line);
        if (i < toks.size() && toks[i].kind == Token::Kind::Elif)
            parse_fail(toks[i].line, "'elif' after 'else'");
    }
    if (i >= toks.size() || toks[i].kind != Token::Kind::Endif)
        parse_fail(open.line, "unclosed '{% if %}' (missing '{% endif %}')");
    ++i;  // endif
    return node;
}

NodeList parse_nodes(const std::vector<Token>& toks, size_t& i, bool inside_conditional,
                     int open_line) {
    NodeList out;
    while (i < toks.size()) {
        const Token& t = toks[i];
        switch (t.kind) {
            case Token::Kind::Text: {
                TemplateNode n;
                n.type = TemplateNode::Type::Text;
                n.text = t.text;
                out.push_back(std::move(n));
                ++i;
                break;
            }
            case Token::Kind::Placeholder: {
                TemplateNode n;
                n.type = TemplateNode::Type::Placeholder;
                n.text = t.text;
                out.push_back(std::move(n));
                ++i;
                break;
            }
            case Token::Kind::If:
                out.push_back(parse_conditional(toks, i));
                break;
            case Token::Kind::Elif:
            case Token::Kind::Else:
            case Token::Kind::Endif:
                if (!inside_conditional)
                    parse_fail(t.line, "conditional keyword without matching '{% if %}'");
                return out;  // terminator stays for the caller
        }
    }
    if (inside_conditional)
        parse_fail(open_line, "unclosed '{% if %}' (missing '{% endif %}')");
    return out;
}

NodeList parse_body(const std::string& source, size_t begin, size_t end, const LineIndex& lines) {
    const std::vector<Token> toks = tokenize_body(source, begin, end, lines);
    size_t i = 0;
    return parse_nodes(toks, i, false, 0);
}

void collect_fields(const NodeList& nodes, std::set<std::string>& out) {
    for (const auto& n : nodes) {
        switch (n.type) {
            case TemplateNode::Type::Text:
                break;
            case TemplateNode::Type::Placeholder:
                out.insert(n.text);
                break;
            case TemplateNode::Type::Conditional:
                for (const auto& b : n.branches) {
                    out.insert(b.field);
                    collect_fields(b.body, out);
                }
                if (n.else_body) collect_fields(*n.else_body, out);
                break;
        }
    }
}

void render_nodes(const NodeList& nodes, const Record& r, const std::string& tname,
                  std::string& out) {
    for (const auto& n : nodes) {
        switch (n.type) {
            case TemplateNode::Type::Text:
                out += n.text;
                break;
            case TemplateNode::Type::Placeholder: {
                const auto it = r.find(n.text);
                if (it == r.end())
                    throw DataError("render: record is missing field '" + n.text +
                                    "' required by template '" + tname + "'");
                out += it->second;
                break;
            }
            case TemplateNode::Type::Conditional: {
                bool matched = false;
                for (const auto& b : n.branches) {
                    const auto it = r.find(b.field);
                    if (it == r.end())
                        throw DataError("render: record is missing field '" + b.field +
                                        "' required by template '" + tname + "'");
                    if (it->second == b.literal) {
                        render_nodes(b.body, r, tname, out);
                        matched = true;
                        break;
                    }
                }
                if (!matched) {
                    if (!n.else_body)
                        throw DataError("render: conditional on field '" + n.branches[0].field +
                                        "' has no matching branch and no else (template '" +
                                        tname + "')");
                    render_nodes(*n.else_body, r, tname, out);
                }
                break;
            }
        }
    }
}

void swap_fields(NodeList& nodes, const std::string& a, const std::string& b) {
    const auto swapped = [&](const std::string& f) { return f == a ? b : (f == b ? a : f); };
    for (auto& n : nodes) {
        switch (n.type) {
            case TemplateNode::Type::Text:
                break;
            case TemplateNode::Type::Placeholder:
                n.text = swapped(n.text);
                break;
            case TemplateNode::Type::Conditional:
                for (auto& br : n.branches) {
                    br.field = swapped(br.field);
                    swap_fields(br.body, a, b);
                }
                if (n.else_body) swap_fields(*n.else_body, a, b);
                break;
        }
    }
}

// ---------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------

// Block-granularity approximation of the Unicode letter categories, chosen
// so every major script (Latin, Greek, Cyrillic, Hebrew, Arabic/Persian,
// Indic, CJK, Hangul, kana, ...) survives while symbols, arrows, dingbats
// and emoji do not. In-script digit and mark codepoints inside these blocks
// are kept as well.
constexpr std::pair<uint32_t, uint32_t> kLetterRanges[] = {
    {0x00AA, 0x00AA}, {0x00B5, 0x00B5}, {0x00BA, 0x00BA}, {0x00C0, 0x00D6}, {0x00D8, 0x00F6},
    {0x00F8, 0x02FF}, {0x0370, 0x1CFF}, {0x1E00, 0x1FFF}, {0x2C00, 0x2DFF}, {0x2E80, 0x2FDF},
    {0x3040, 0x30FF}, {0x3130, 0x318F}, {0x3400, 0x4DBF}, {0x4E00, 0x9FFF}, {0xA000, 0xA4CF},
    {0xA500, 0xA7FF}, {0xAC00, 0xD7A3}, {0xF900, 0xFAFF}, {0xFB00, 0xFB17}, {0xFB1D, 0xFDCF},
    {0xFDF0, 0xFDFC}, {0xFE70, 0xFEFC},
};

bool is_unicode_letter(uint32_t cp) {
    for (const auto& [lo, hi] : kLetterRanges)
        if (cp >= lo && cp <= hi) return true;
    return false;
}

bool is_allowed_punct(char ch) {
    switch (ch) {
        case '.': case ',': case '?': case '!': case ':': case ';':
        case '"': case '\'': case '(': case ')': case '-': case '%':
            return true;
        default:
            return false;
    }
}

// Decodes one UTF-8 codepoint at s[i]; on malformed input consumes a single
// byte and reports it as not-a-letter.
uint32_t decode_utf8(std::string_view s, size_t& i, bool& valid) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    valid = true;
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int extra = 0;
    uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        extra = 1;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        extra = 2;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        extra = 3;
        cp = b0 & 0x07;
    } else {
        ++i;
        valid = false;
        return 0;
    }
    if (i + static_cast<size_t>(extra) >= s.size()) {
        ++i;
        valid = false;
        return 0;
    }
    for (int k = 1; k <= extra; ++k) {
        const auto b = static_cast<unsigned char>(s[i + static_cast<size_t>(k)]);
        if ((b & 0xC0) != 0x80) {
            ++i;
            valid = false;
            return 0;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    i += static_cast<size_t>(extra) + 1;
    return cp;
}

void append_utf8(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace

std::vector<std::string> PromptTemplate::referenced_fields() const {
    std::set<std::string> fields;
    collect_fields(input_body, fields);
    collect_fields(target_body, fields);
    return {fields.begin(), fields.end()};
}

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::HeldInEval: return "held_in_eval";
        case Split::HeldOutEval: return "held_out_eval";
    }
    return "train";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "held_in_eval") return Split::HeldInEval;
    if (name == "held_out_eval") return Split::HeldOutEval;
    throw DataError("unknown split label '" + name + "'");
}

PromptTemplate parse_template(const std::string& source) {
    const LineIndex lines(source);
    PromptTemplate t;
    bool have_name = false, have_kind = false, have_choices = false;
    int kind_line = 0;

    // header: leading @directive lines (blank lines between them allowed)
    size_t pos = 0;
    size_t body_begin = std::string::npos;
    while (pos < source.size()) {
        size_t eol = source.find('\n', pos);
        if (eol == std::string::npos) eol = source.size();
        const std::string line = trim(std::string_view(source).substr(pos, eol - pos));
        const int line_no = lines.line_at(pos);
        if (line.empty()) {
            pos = eol + 1;
            continue;
        }
        if (line[0] != '@') {
            body_begin = pos;
            break;
        }
        const size_t colon = line.find(':');
        if (colon == std::string::npos) parse_fail(line_no, "directive is missing ':'");
        const std::string key = trim(line.substr(0, colon));
        const std::string value = trim(line.substr(colon + 1));
        if (key == "@name") {
            if (have_name) parse_fail(line_no, "duplicate @name directive");
            if (value.empty()) parse_fail(line_no, "@name must not be empty");
            t.name = value;
            have_name = true;
        } else if (key == "@kind") {
            if (have_kind) parse_fail(line_no, "duplicate @kind directive");
            if (value == "categorization") t.kind = TemplateKind::Categorization;
            else if (value == "generation") t.kind = TemplateKind::Generation;
            else parse_fail(line_no, "@kind must be 'categorization' or 'generation'");
            have_kind = true;
            kind_line = line_no;
        } else if (key == "@choices") {
            if (have_choices) parse_fail(line_no, "duplicate @choices directive");
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, '|')) {
                const std::string choice = trim(item);
                if (!choice.empty()) t.answer_choices.push_back(choice);
            }
            if (t.answer_choices.empty()) parse_fail(line_no, "@choices lists no choices");
            have_choices = true;
        } else if (key == "@dataset") {
            t.source_dataset = value;
        } else {
            parse_fail(line_no, "unknown directive '" + key + "'");
        }
        pos = eol + 1;
    }

    if (!have_name) parse_fail(1, "missing @name directive");
    if (!have_kind) parse_fail(1, "missing @kind directive");
    if (t.kind == TemplateKind::Categorization && !have_choices)
        parse_fail(kind_line, "categorization template requires @choices");
    if (t.kind == TemplateKind::Generation && have_choices)
        parse_fail(kind_line, "generation template must not declare @choices");
    if (body_begin == std::string::npos)
        parse_fail(lines.line_at(source.empty() ? 0 : source.size() - 1), "template has no body");

    // body: split at the first ||| separator
    const size_t sep = source.find("|||", body_begin);
    if (sep == std::string::npos)
        parse_fail(lines.line_at(body_begin),
                   "missing ||| separator (a ||| must separate the input body from the target "
                   "body)");

    size_t in_end = sep;
    while (in_end > body_begin && (source[in_end - 1] == ' ' || source[in_end - 1] == '\t'))
        --in_end;
    if (in_end > body_begin && source[in_end - 1] == '\n') --in_end;

    size_t tgt_begin = sep + 3;
    while (tgt_begin < source.size() && (source[tgt_begin] == ' ' || source[tgt_begin] == '\t'))
        ++tgt_begin;
    if (tgt_begin < source.size() && source[tgt_begin] == '\n') ++tgt_begin;
    // drop a single trailing newline so a final end-of-file newline does not
    // become part of the target text
    size_t tgt_end = source.size();
    if (tgt_end > tgt_begin && source[tgt_end - 1] == '\n') --tgt_end;

    t.input_body = parse_body(source, body_begin, in_end, lines);
    t.target_body = parse_body(source, tgt_begin, tgt_end, lines);
    return t;
}

PromptInstance render(const PromptTemplate& t, const Record& r) {
    PromptInstance out;
    out.template_name = t.name;
    render_nodes(t.input_body, r, t.name, out.input_text);
    render_nodes(t.target_body, r, t.name, out.target_text);
    if (t.kind == TemplateKind::Categorization) {
        out.choices = t.answer_choices;
        if (std::find(out.choices.begin(), out.choices.end(), out.target_text) ==
            out.choices.end())
            throw DataError("render: target '" + out.target_text +
                            "' is not among the answer choices of template '" + t.name + "'");
    }
    return out;
}

PromptTemplate augment_swap(const PromptTemplate& t, const std::string& field_a,
                            const std::string& field_b) {
    std::set<std::string> fields;
    collect_fields(t.input_body, fields);
    collect_fields(t.target_body, fields);
    for (const auto& f : {field_a, field_b})
        if (!fields.count(f))
            throw std::invalid_argument("augment_swap: field '" + f +
                                        "' is not referenced by template '" + t.name + "'");
    PromptTemplate out = t;
    out.name = t.name + "_swap_" + field_a + "_" + field_b;
    swap_fields(out.input_body, field_a, field_b);
    swap_fields(out.target_body, field_a, field_b);
    return out;
}

std::string normalize(std::string_view text) {
    std::string kept;
    kept.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        const auto b = static_cast<unsigned char>(text[i]);
        if (b < 0x80) {
            const char ch = static_cast<char>(b);
            if (ascii_alpha(ch) || ascii_digit(ch) || is_allowed_punct(ch) || ascii_space(ch)) kept.push_back(ch);
            ++i;
            continue;
        }
        bool valid = false;
        const uint32_t cp = decode_utf8(text, i, valid);
        if (valid && is_unicode_letter(cp)) append_utf8(kept, cp);
    }

    // collapse runs of spaces, then trim both ends
    std::string out;
    out.reserve(kept.size());
    for (const char ch : kept) {
        if (ch == ' ' && !out.empty() && out.back() == ' ') continue;
        out.push_back(ch);
    }
    size_t b = 0, e = out.size();
    while (b < e && ascii_space(out[b])) ++b;
    while (e > b && ascii_space(out[e - 1])) --e;
    return out.substr(b, e - b);
}

std::vector<PromptInstance> dedup(const std::vector<PromptInstance>& instances) {
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<PromptInstance> out;
    out.reserve(instances.size());
    for (const auto& inst : instances)
        if (seen.emplace(inst.input_text, inst.target_text).second) out.push_back(inst);
    return out;
}

std::vector<TemplateStream> build_task(const std::vector<Record>& records,
                                       const std::vector<PromptTemplate>& templates, size_t cap,
                                       Rng& rng, Split split) {
    if (cap < 1) throw std::invalid_argument("build_task: cap must be >= 1");
    std::vector<TemplateStream> streams;
    streams.reserve(templates.size());
    for (const auto& t : templates) {
        std::vector<PromptInstance> instances;
        instances.reserve(records.size());
        for (const auto& rec : records) {
            try {
                PromptInstance inst = render(t, rec);
                inst.input_text = normalize(inst.input_text);
                inst.target_text = normalize(inst.target_text);
                for (auto& c : inst.choices) c = normalize(c);
                instances.push_back(std::move(inst));
            } catch (const DataError&) {
                // records that do not fit the template are skipped
            }
        }
        instances = dedup(instances);
        if (instances.empty())
            throw DataError("build_task: template '" + t.name + "' produced zero valid instances");
        numkit::shuffle(instances, rng);
        if (instances.size() > cap) instances.resize(cap);
        streams.push_back({t.name, split, std::move(instances)});
    }
    return streams;
}

// ---------------------------------------------------------------------
// synthetic tasks
// ---------------------------------------------------------------------

namespace {

const char* kSentimentTemplate =
    "@name: sentiment_label\n"
    "@kind: categorization\n"
    "@choices: positive | negative\n"
    "@dataset: synth_reviews\n"
    "review: {{text}}\n"
    "the overall verdict is: ||| {{label}}\n";

const char* kReverseTemplate =
    "@name: reverse_word\n"
    "@kind: generation\n"
    "@dataset: synth_strings\n"
    "spell the word {{word}} backwards: ||| {{drow}}\n";

const char* kEchoTemplate =
    "@name: echo_phrase\n"
    "@kind: generation\n"
    "@dataset: synth_strings\n"
    "repeat exactly this phrase: {{phrase}} ||| {{phrase}}\n";

const char* kBracketTemplate =
    "@name: bracket_balance\n"
    "@kind: categorization\n"
    "@choices: balanced | unbalanced\n"
    "@dataset: synth_brackets\n"
    "is the sequence {{seq}} well nested? ||| {{label}}\n";

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<size_t>(rng.next_below(v.size()))];
}

std::vector<Record> sentiment_records(Rng& rng, size_t n) {
    const std::vector<std::string> nouns = {"food", "service", "place", "meal", "staff", "table"};
    const std::vector<std::string> advs = {"", "really ", "very "};
    const std::vector<std::string> pos = {"good", "great", "tasty", "fresh", "lovely", "superb"};
    const std::vector<std::string> neg = {"bad", "awful", "stale", "bland", "greasy", "dire"};

    std::vector<Record> all;
    for (const auto& noun : nouns)
        for (const auto& adv : advs) {
            for (const auto& kw : pos)
                all.push_back({{"text", "the " + noun + " was " + adv + kw}, {"label", "positive"}});
            for (const auto& kw : neg)
                all.push_back({{"text", "the " + noun + " was " + adv + kw}, {"label", "negative"}});
        }
    numkit::shuffle(all, rng);
    if (all.size() > n) all.resize(n);
    return all;
}

// fixed-length words so the reversal is an absolute position mapping a
// one-block model can actually learn
std::vector<Record> reverse_records(Rng& rng, size_t n) {
    std::set<std::string> seen;
    std::vector<Record> out;
    while (out.size() < n) {
        std::string w;
        for (size_t i = 0; i < 4; ++i)
            w.push_back(static_cast<char>('a' + rng.next_below(6)));
        if (!seen.insert(w).second) continue;
        out.push_back({{"word", w}, {"drow", std::string(w.rbegin(), w.rend())}});
    }
    return out;
}

std::vector<Record> echo_records(Rng& rng, size_t n) {
    const std::vector<std::string> first = {"amber", "basil", "cedar", "dune",  "ember", "fjord",
                                            "grove", "heath", "iris",  "jade",  "kelp",  "larch",
                                            "maple", "nettle", "oak",  "pine"};
    const std::vector<std::string> second = {"fox",  "owl",  "elk",   "hare", "lynx", "mole",
                                             "wren", "toad", "crow",  "deer", "frog", "goat",
                                             "ibis", "koi",  "moth",  "newt"};
    std::set<std::string> seen;
    std::vector<Record> out;
    while (out.size() < n) {
        const std::string phrase = pick(first, rng) + " " + pick(second, rng);
        if (!seen.insert(phrase).second) continue;
        out.push_back({{"phrase", phrase}});
    }
    return out;
}

std::vector<Record> bracket_records(Rng& rng, size_t n) {
    std::set<std::string> seen;
    std::vector<Record> out;
    while (out.size() < n) {
        const size_t len = 2 + static_cast<size_t>(rng.next_below(7));
        std::string seq;
        for (size_t i = 0; i < len; ++i) seq.push_back(rng.next_below(2) ? '(' : ')');
        if (!seen.insert(seq).second) continue;
        int depth = 0;
        bool ok = true;
        for (const char ch : seq) {
            depth += ch == '(' ? 1 : -1;
            if (depth < 0) ok = false;
        }
        ok = ok && depth == 0;
        out.push_back({{"seq", seq}, {"label", ok ? "balanced" : "unbalanced"}});
    }
    return out;
}

TemplateStream one_task(const std::vector<Record>& records, const PromptTemplate& t, Rng& rng,
                        Split split) {
    auto streams = build_task(records, {t}, records.size(), rng, split);
    return std::move(streams.front());
}

}  // namespace

SynthTasks synth_tasks(uint64_t seed) {
    constexpr size_t kTrain = 160;
    constexpr size_t kEval = 48;

    SynthTasks out;
    for (const char* src : {kSentimentTemplate, kReverseTemplate, kEchoTemplate, kBracketTemplate})
        out.templates.push_back(parse_template(src));
    const PromptTemplate& sentiment = out.templates[0];
    const PromptTemplate& reverse = out.templates[1];
    const PromptTemplate& echo = out.templates[2];
    const PromptTemplate& bracket = out.templates[3];

    // disjoint record pools per split: one generator pass hands out the
    // train slice first, then the eval slice
    Rng rec_rng(Rng::mix(seed, 0x7461736b));  // "task"
    auto senti_all = sentiment_records(rec_rng, kTrain + kEval);
    auto rev_all = reverse_records(rec_rng, kTrain + kEval);
    auto echo_all = echo_records(rec_rng, kTrain + kEval);
    auto bracket_all = bracket_records(rec_rng, kEval);

    const auto take = [](const std::vector<Record>& v, size_t begin, size_t count) {
        return std::vector<Record>(v.begin() + static_cast<std::ptrdiff_t>(begin),
                                   v.begin() + static_cast<std::ptrdiff_t>(begin + count));
    };

    Rng build_rng(Rng::mix(seed, 0x6275696c));  // "buil"
    out.train.push_back(one_task(take(senti_all, 0, kTrain), sentiment, build_rng, Split::Train));
    out.train.push_back(one_task(take(rev_all, 0, kTrain), reverse, build_rng, Split::Train));
    out.train.push_back(one_task(take(echo_all, 0, kTrain), echo, build_rng, Split::Train));

    out.held_in.push_back(
        one_task(take(senti_all, kTrain, kEval), sentiment, build_rng, Split::HeldInEval));
    out.held_in.push_back(
        one_task(take(rev_all, kTrain, kEval), reverse, build_rng, Split::HeldInEval));
    out.held_in.push_back(
        one_task(take(echo_all, kTrain, kEval), echo, build_rng, Split::HeldInEval));

    out.held_out.push_back(one_task(bracket_all, bracket, build_rng, Split::HeldOutEval));
    return out;
}

// ---------------------------------------------------------------------
// JSON-lines I/O
// ---------------------------------------------------------------------

std::vector<Record> read_records_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open data file: " + path.string());
    std::vector<Record> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object())
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": record line must be a JSON object");
        Record r;
        for (const auto& [k, v] : j.items()) {
            if (!v.is_string())
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": field '" + k +
                                "' must be a string");
            r[k] = v.get<std::string>();
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_stream_jsonl(const TemplateStream& stream, const std::filesystem::path& path) {
    if (stream.instances.empty())
        throw std::invalid_argument("write_stream_jsonl: refusing to write an empty stream");
    std::string text;
    for (const auto& inst : stream.instances) {
        ordered_json j;
        j["template_name"] = stream.template_name;
        j["split"] = split_name(stream.split);
        j["input_text"] = inst.input_text;
        j["target_text"] = inst.target_text;
        if (!inst.choices.empty()) j["choices"] = inst.choices;
        text += j.dump();
        text += '\n';
    }
    container::write_text_atomic(path, text);
}

TemplateStream read_stream_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open stream file: " + path.string());
    TemplateStream stream;
    std::string line;
    int line_no = 0;
    bool first = true;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            PromptInstance inst;
            inst.template_name = j.at("template_name").get<std::string>();
            inst.input_text = j.at("input_text").get<std::string>();
            inst.target_text = j.at("target_text").get<std::string>();
            if (j.contains("choices")) inst.choices = j["choices"].get<std::vector<std::string>>();
            const Split split = parse_split(j.at("split").get<std::string>());
            if (first) {
                stream.template_name = inst.template_name;
                stream.split = split;
                first = false;
            } else if (inst.template_name != stream.template_name) {
                throw DataError("mixed template names in one stream (' " + stream.template_name +
                                "' vs '" + inst.template_name + "')");
            } else if (split != stream.split) {
                throw DataError("mixed split labels in one stream");
            }
            stream.instances.push_back(std::move(inst));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (first) throw DataError(path.string() + ": stream file is empty");
    return stream;
}

PromptTemplate read_template_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open template file: " + path.string());
    std::string source((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return parse_template(source);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace taskflow
