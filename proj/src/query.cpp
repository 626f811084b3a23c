#include "nosqlgen/query.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "nosqlgen/engine.hpp"

namespace nosqlgen {

namespace {

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

/// Recursive-descent parser over the shell-relaxed surface syntax. Strictness
/// only matters for value bodies; the db.<collection>.<method>(...) frame is
/// fixed.
class QueryParser {
 public:
  explicit QueryParser(const std::string& text) : text_(text) {}

  Value parse_single_value() {
    skip_ws();
    Value v = parse_value();
    skip_ws();
    if (!eof()) fail("trailing content after value", "end of input");
    return v;
  }

  QueryAst parse() {
    QueryAst ast;
    skip_ws();
    expect_word("db");
    expect_char('.');
    ast.collection = parse_identifier("collection name");
    expect_char('.');
    const std::size_t method_at = i_;
    std::string method = parse_identifier("method name");
    if (method == "find") {
      ast.method = parse_find();
    } else if (method == "aggregate") {
      ast.method = parse_aggregate();
    } else if (method == "distinct") {
      ast.method = parse_distinct();
    } else if (method == "countDocuments" || method == "count") {
      ast.method = parse_count();
    } else {
      throw UnsupportedMethodError(method, method_at);
    }
    skip_ws();
    if (!eof() && peek() == ';') advance();
    skip_ws();
    if (!eof()) fail("trailing content after query", "end of input");
    return ast;
  }

 private:
  const std::string& text_;
  std::size_t i_ = 0;

  bool eof() const { return i_ >= text_.size(); }
  char peek() const { return text_[i_]; }
  char advance() { return text_[i_++]; }

  [[noreturn]] void fail(const std::string& msg, const std::string& expected) {
    throw QueryParseError(msg, i_, expected);
  }

  void skip_ws() {
    while (!eof()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        advance();
      } else {
        break;
      }
    }
  }

  void expect_char(char c) {
    skip_ws();
    if (eof() || peek() != c) {
      fail("unexpected " + describe_here(), std::string("'") + c + "'");
    }
    advance();
  }

  void expect_word(const std::string& w) {
    skip_ws();
    for (char c : w) {
      if (eof() || peek() != c) {
        fail("unexpected " + describe_here(), "\"" + w + "\"");
      }
      advance();
    }
  }

  std::string describe_here() const {
    if (i_ >= text_.size()) return "end of input";
    return std::string("character '") + text_[i_] + "'";
  }

  std::string parse_identifier(const std::string& what) {
    skip_ws();
    if (eof() || !is_ident_start(peek())) {
      fail("unexpected " + describe_here(), what);
    }
    std::string out;
    while (!eof() && is_ident_char(peek())) out += advance();
    return out;
  }

  // --- method argument lists ---

  Method parse_find() {
    FindSpec spec;
    expect_char('(');
    skip_ws();
    if (peek_is(')')) {
      advance();
    } else {
      spec.filter = parse_value();
      require_doc(spec.filter, "find filter");
      skip_ws();
      if (!eof() && peek() == ',') {
        advance();
        spec.projection = parse_value();
        require_doc(*spec.projection, "find projection");
      }
      expect_char(')');
    }
    parse_cursor_chain(spec);
    return spec;
  }

  void parse_cursor_chain(FindSpec& spec) {
    while (true) {
      const std::size_t mark = i_;
      skip_ws();
      if (eof() || peek() != '.') {
        i_ = mark;
        return;
      }
      advance();
      std::string name = parse_identifier("cursor method");
      if (name == "sort") {
        if (spec.sort) fail("duplicate .sort()", "");
        expect_char('(');
        spec.sort = parse_value();
        require_doc(*spec.sort, "sort specification");
        expect_char(')');
      } else if (name == "limit") {
        if (spec.limit) fail("duplicate .limit()", "");
        expect_char('(');
        Value n = parse_value();
        if (!n.is_int() || n.as_int() < 0) {
          fail("limit must be a non-negative integer", "integer");
        }
        spec.limit = n.as_int();
        expect_char(')');
      } else {
        fail("unsupported cursor method \"" + name + "\"", "sort or limit");
      }
    }
  }

  Method parse_aggregate() {
    AggregateSpec spec;
    expect_char('(');
    skip_ws();
    if (peek_is(')')) {
      advance();
      return spec;
    }
    Value pipeline = parse_value();
    if (!pipeline.is_array()) {
      fail("aggregate expects a pipeline array", "'['");
    }
    for (const auto& s : pipeline.as_array()) {
      spec.pipeline.push_back(to_stage(s));
    }
    expect_char(')');
    return spec;
  }

  Stage to_stage(const Value& v) {
    if (!v.is_doc() || v.as_doc().size() != 1) {
      fail("pipeline stage must be a document with exactly one $-keyword",
           "{\"$stage\": ...}");
    }
    const auto& [key, body] = v.as_doc().fields().front();
    if (key.empty() || key[0] != '$') {
      fail("pipeline stage keyword must begin with '$': \"" + key + "\"",
           "$-keyword");
    }
    return Stage{key, body};
  }

  Method parse_distinct() {
    DistinctSpec spec;
    expect_char('(');
    Value field = parse_value();
    if (!field.is_text() || field.as_text().empty()) {
      fail("distinct expects a field name string", "string");
    }
    spec.field = field.as_text();
    skip_ws();
    if (!eof() && peek() == ',') {
      advance();
      spec.filter = parse_value();
      require_doc(*spec.filter, "distinct filter");
    }
    expect_char(')');
    return spec;
  }

  Method parse_count() {
    CountSpec spec;
    expect_char('(');
    skip_ws();
    if (peek_is(')')) {
      advance();
      return spec;
    }
    spec.filter = parse_value();
    require_doc(spec.filter, "count filter");
    expect_char(')');
    return spec;
  }

  bool peek_is(char c) {
    skip_ws();
    return !eof() && peek() == c;
  }

  void require_doc(const Value& v, const std::string& what) {
    if (!v.is_doc()) fail(what + " must be a document", "'{'");
  }

  // --- relaxed values ---

  Value parse_value() {
    skip_ws();
    if (eof()) fail("unexpected end of input", "value");
    char c = peek();
    if (c == '{') return parse_object();
    if (c == '[') return parse_array();
    if (c == '"' || c == '\'') return Value(parse_string());
    if (c == '/') {
      fail("regular expression literals are not supported", "value");
    }
    if (c == '-' || std::isdigit(static_cast<unsigned char>(c))) {
      return parse_number();
    }
    if (is_ident_start(c)) {
      std::string word = parse_identifier("value");
      if (word == "true") return Value(true);
      if (word == "false") return Value(false);
      if (word == "null") return Value(nullptr);
      fail("bare word \"" + word + "\" is not a value", "value");
    }
    fail("unexpected " + describe_here(), "value");
  }

  Value parse_object() {
    expect_char('{');
    Doc d;
    skip_ws();
    if (peek_is('}')) {
      advance();
      return Value(std::move(d));
    }
    while (true) {
      skip_ws();
      std::size_t key_at = i_;
      std::string key = parse_key();
      if (d.find(key)) {
        throw QueryParseError("duplicate key \"" + key + "\"", key_at, "");
      }
      expect_char(':');
      d.set(std::move(key), parse_value());
      skip_ws();
      if (eof()) fail("unterminated document", "'}'");
      if (peek() == ',') {
        advance();
        if (peek_is('}')) {  // trailing comma
          advance();
          return Value(std::move(d));
        }
        continue;
      }
      if (peek() == '}') {
        advance();
        return Value(std::move(d));
      }
      fail("unexpected " + describe_here(), "',' or '}'");
    }
  }

  Value parse_array() {
    expect_char('[');
    Value::Array a;
    skip_ws();
    if (peek_is(']')) {
      advance();
      return Value(std::move(a));
    }
    while (true) {
      a.push_back(parse_value());
      skip_ws();
      if (eof()) fail("unterminated array", "']'");
      if (peek() == ',') {
        advance();
        if (peek_is(']')) {  // trailing comma
          advance();
          return Value(std::move(a));
        }
        continue;
      }
      if (peek() == ']') {
        advance();
        return Value(std::move(a));
      }
      fail("unexpected " + describe_here(), "',' or ']'");
    }
  }

  // Keys may be quoted strings or bare identifiers, optionally dotted
  // (status, _id, $sum, countries.car_makers).
  std::string parse_key() {
    skip_ws();
    if (eof()) fail("unexpected end of input", "key");
    char c = peek();
    if (c == '"' || c == '\'') return parse_string();
    if (!is_ident_start(c)) fail("unexpected " + describe_here(), "key");
    std::string out;
    while (!eof() && (is_ident_char(peek()) || peek() == '.')) out += advance();
    return out;
  }

  std::string parse_string() {
    char quote = advance();  // " or '
    std::string out;
    while (true) {
      if (eof()) fail("unterminated string", "closing quote");
      char c = advance();
      if (c == quote) return out;
      if (c == '\\') {
        if (eof()) fail("unterminated escape", "");
        char e = advance();
        switch (e) {
          case '"': out += '"'; break;
          case '\'': out += '\''; break;
          case '\\': out += '\\'; break;
          case '/': out += '/'; break;
          case 'b': out += '\b'; break;
          case 'f': out += '\f'; break;
          case 'n': out += '\n'; break;
          case 'r': out += '\r'; break;
          case 't': out += '\t'; break;
          case 'u': out += parse_unicode(); break;
          default: fail("invalid escape", "");
        }
      } else {
        out += c;
      }
    }
  }

  std::string parse_unicode() {
    unsigned cp = parse_hex4();
    if (cp >= 0xD800 && cp <= 0xDBFF) {
      if (eof() || advance() != '\\' || eof() || advance() != 'u') {
        fail("missing low surrogate", "");
      }
      unsigned lo = parse_hex4();
      if (lo < 0xDC00 || lo > 0xDFFF) fail("invalid low surrogate", "");
      cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
    } else if (cp >= 0xDC00 && cp <= 0xDFFF) {
      fail("unexpected low surrogate", "");
    }
    std::string out;
    if (cp < 0x80) {
      out += static_cast<char>(cp);
    } else if (cp < 0x800) {
      out += static_cast<char>(0xC0 | (cp >> 6));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += static_cast<char>(0xE0 | (cp >> 12));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (cp >> 18));
      out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return out;
  }

  unsigned parse_hex4() {
    unsigned v = 0;
    for (int k = 0; k < 4; ++k) {
      if (eof()) fail("truncated \\u escape", "");
      char c = advance();
      v <<= 4;
      if (c >= '0' && c <= '9') v |= static_cast<unsigned>(c - '0');
      else if (c >= 'a' && c <= 'f') v |= static_cast<unsigned>(c - 'a' + 10);
      else if (c >= 'A' && c <= 'F') v |= static_cast<unsigned>(c - 'A' + 10);
      else fail("invalid \\u escape", "hex digit");
    }
    return v;
  }

  Value parse_number() {
    const std::size_t start = i_;
    bool is_float = false;
    if (!eof() && peek() == '-') advance();
    while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) advance();
    if (!eof() && peek() == '.') {
      is_float = true;
      advance();
      while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) advance();
    }
    if (!eof() && (peek() == 'e' || peek() == 'E')) {
      is_float = true;
      advance();
      if (!eof() && (peek() == '+' || peek() == '-')) advance();
      while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) advance();
    }
    std::string_view tok(text_.data() + start, i_ - start);
    if (tok.empty() || tok == "-") fail("invalid number", "digits");
    if (!is_float) {
      std::int64_t iv = 0;
      auto r = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
      if (r.ec == std::errc() && r.ptr == tok.data() + tok.size()) {
        return Value(iv);
      }
    }
    double dv = 0;
    auto r = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
      fail("invalid number", "digits");
    }
    return Value(dv);
  }
};

}  // namespace

QueryAst parse_query(const std::string& text) {
  return QueryParser(text).parse();
}

Value parse_relaxed_value(const std::string& text) {
  return QueryParser(text).parse_single_value();
}

// ---------------------------------------------------------------------------
// Canonical rendering

std::string render_query(const QueryAst& ast) {
  std::string out = "db." + ast.collection + ".";
  if (const auto* f = std::get_if<FindSpec>(&ast.method)) {
    out += "find(" + render_json(f->filter);
    if (f->projection) out += ", " + render_json(*f->projection);
    out += ")";
    if (f->sort) out += ".sort(" + render_json(*f->sort) + ")";
    if (f->limit) out += ".limit(" + std::to_string(*f->limit) + ")";
  } else if (const auto* a = std::get_if<AggregateSpec>(&ast.method)) {
    out += "aggregate([";
    bool first = true;
    for (const auto& s : a->pipeline) {
      if (!first) out += ", ";
      first = false;
      Doc d;
      d.set(s.keyword, s.body);
      out += render_json(Value(std::move(d)));
    }
    out += "])";
  } else if (const auto* d = std::get_if<DistinctSpec>(&ast.method)) {
    out += "distinct(" + render_json(Value(d->field));
    if (d->filter) out += ", " + render_json(*d->filter);
    out += ")";
  } else {
    const auto& c = std::get<CountSpec>(ast.method);
    out += "countDocuments(" + render_json(c.filter) + ")";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage keywords (QSM input)

std::vector<std::string> stage_keywords(const QueryAst& ast) {
  std::vector<std::string> out;
  if (const auto* a = std::get_if<AggregateSpec>(&ast.method)) {
    out.reserve(a->pipeline.size());
    for (const auto& s : a->pipeline) out.push_back(s.keyword);
  } else if (const auto* f = std::get_if<FindSpec>(&ast.method)) {
    // fixed synthesis order regardless of the textual chain order
    if (!f->filter.as_doc().empty()) out.push_back("$match");
    if (f->projection) out.push_back("$project");
    if (f->sort) out.push_back("$sort");
    if (f->limit) out.push_back("$limit");
  } else if (std::holds_alternative<DistinctSpec>(ast.method)) {
    out.push_back("$distinct");
  } else {
    out.push_back("$count");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Referenced fields (QFC input)

namespace {

void add_ref(std::set<std::string>& out, std::string_view name) {
  while (!name.empty() && name.front() == '$') name.remove_prefix(1);
  if (!name.empty()) out.insert(std::string(name));
}

/// Any "$"-prefixed string value anywhere in a subtree is a field reference.
void scan_dollar_refs(const Value& v, std::set<std::string>& out) {
  switch (v.kind()) {
    case Value::Kind::Text:
      if (!v.as_text().empty() && v.as_text()[0] == '$') {
        add_ref(out, v.as_text());
      }
      break;
    case Value::Kind::Array:
      for (const auto& e : v.as_array()) scan_dollar_refs(e, out);
      break;
    case Value::Kind::Doc:
      for (const auto& [k, fv] : v.as_doc()) scan_dollar_refs(fv, out);
      break;
    default:
      break;
  }
}

bool has_operator_key(const Doc& d) {
  for (const auto& [k, v] : d) {
    if (!k.empty() && k[0] == '$') return true;
  }
  return false;
}

/// Filter documents: plain keys are field paths; operator docs and logical
/// connectors are descended without collecting their keys.
void collect_filter_fields(const Value& filter, std::set<std::string>& out) {
  if (!filter.is_doc()) return;
  for (const auto& [key, v] : filter.as_doc()) {
    if (!key.empty() && key[0] == '$') {
      if ((key == "$and" || key == "$or" || key == "$nor") && v.is_array()) {
        for (const auto& sub : v.as_array()) collect_filter_fields(sub, out);
      } else {
        scan_dollar_refs(v, out);  // $expr and operator arguments
      }
      continue;
    }
    out.insert(key);
    if (v.is_doc() && has_operator_key(v.as_doc())) {
      for (const auto& [opk, opv] : v.as_doc()) scan_dollar_refs(opv, out);
    } else {
      scan_dollar_refs(v, out);
    }
  }
}

void collect_top_level_keys(const Value& body, std::set<std::string>& out) {
  if (!body.is_doc()) return;
  for (const auto& [k, v] : body.as_doc()) {
    if (k.empty() || k[0] != '$') out.insert(k);
  }
}

void collect_stage_fields(const Stage& s, std::set<std::string>& out) {
  if (s.keyword == "$match") {
    collect_filter_fields(s.body, out);
    return;  // refs inside already scanned contextually
  }
  if (s.keyword == "$project" || s.keyword == "$addFields" ||
      s.keyword == "$group" || s.keyword == "$sort") {
    collect_top_level_keys(s.body, out);
  } else if (s.keyword == "$count") {
    if (s.body.is_text()) out.insert(s.body.as_text());
  } else if (s.keyword == "$lookup") {
    if (s.body.is_doc()) {
      if (const Value* as = s.body.as_doc().find("as")) {
        if (as->is_text()) out.insert(as->as_text());
      }
    }
  }
  scan_dollar_refs(s.body, out);
}

}  // namespace

std::set<std::string> referenced_fields(const QueryAst& ast) {
  std::set<std::string> out;
  if (const auto* a = std::get_if<AggregateSpec>(&ast.method)) {
    for (const auto& s : a->pipeline) collect_stage_fields(s, out);
  } else if (const auto* f = std::get_if<FindSpec>(&ast.method)) {
    collect_filter_fields(f->filter, out);
    if (f->projection) {
      collect_top_level_keys(*f->projection, out);
      scan_dollar_refs(*f->projection, out);
    }
    if (f->sort) collect_top_level_keys(*f->sort, out);
  } else if (const auto* d = std::get_if<DistinctSpec>(&ast.method)) {
    out.insert(d->field);
    if (d->filter) collect_filter_fields(*d->filter, out);
  } else {
    collect_filter_fields(std::get<CountSpec>(ast.method).filter, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

void check_expr(const Value& e, std::vector<Diagnostic>& out);

void check_operator_doc(const Doc& d, std::vector<Diagnostic>& out) {
  if (d.size() != 1) {
    out.push_back({Diagnostic::Kind::MalformedBody,
                   "operator document must have exactly one key"});
    return;
  }
  const auto& [op, arg] = d.fields().front();
  if (!contains(supported_expr_operators(), op)) {
    out.push_back({Diagnostic::Kind::UnknownOperator,
                   "unknown expression operator \"" + op + "\""});
    return;
  }
  check_expr(arg, out);
}

void check_expr(const Value& e, std::vector<Diagnostic>& out) {
  if (e.is_doc()) {
    if (has_operator_key(e.as_doc())) {
      check_operator_doc(e.as_doc(), out);
    } else {
      for (const auto& [k, v] : e.as_doc()) check_expr(v, out);
    }
  } else if (e.is_array()) {
    for (const auto& v : e.as_array()) check_expr(v, out);
  }
}

void check_filter(const Value& filter, std::vector<Diagnostic>& out) {
  if (!filter.is_doc()) {
    out.push_back({Diagnostic::Kind::MalformedBody, "filter must be a document"});
    return;
  }
  for (const auto& [key, v] : filter.as_doc()) {
    if (!key.empty() && key[0] == '$') {
      if (key == "$and" || key == "$or" || key == "$nor") {
        if (!v.is_array()) {
          out.push_back({Diagnostic::Kind::MalformedBody,
                         key + " expects an array of filters"});
          continue;
        }
        for (const auto& sub : v.as_array()) check_filter(sub, out);
      } else if (key == "$expr") {
        check_expr(v, out);
      } else {
        out.push_back({Diagnostic::Kind::UnknownOperator,
                       "unknown filter operator \"" + key + "\""});
      }
      continue;
    }
    if (v.is_doc() && has_operator_key(v.as_doc())) {
      for (const auto& [op, arg] : v.as_doc()) {
        if (!contains(supported_match_operators(), op)) {
          out.push_back({Diagnostic::Kind::UnknownOperator,
                         "unknown comparison operator \"" + op + "\""});
        }
      }
    }
  }
}

void check_group(const Value& body, std::vector<Diagnostic>& out) {
  if (!body.is_doc()) {
    out.push_back({Diagnostic::Kind::MalformedBody, "$group expects a document"});
    return;
  }
  if (!body.as_doc().find("_id")) {
    out.push_back({Diagnostic::Kind::MalformedBody, "$group requires an \"_id\" key"});
  }
  for (const auto& [k, v] : body.as_doc()) {
    if (k == "_id") {
      check_expr(v, out);
      continue;
    }
    if (!v.is_doc() || v.as_doc().size() != 1) {
      out.push_back({Diagnostic::Kind::MalformedBody,
                     "accumulator \"" + k + "\" must be {$op: expr}"});
      continue;
    }
    const auto& [op, arg] = v.as_doc().fields().front();
    if (!contains(supported_accumulators(), op)) {
      out.push_back({Diagnostic::Kind::UnknownOperator,
                     "unknown accumulator \"" + op + "\""});
      continue;
    }
    check_expr(arg, out);
  }
}

void check_stage(const Stage& s, std::vector<Diagnostic>& out) {
  if (!contains(supported_stages(), s.keyword)) {
    out.push_back({Diagnostic::Kind::UnknownStage,
                   "unknown stage \"" + s.keyword + "\""});
    return;
  }
  if (s.keyword == "$match") {
    check_filter(s.body, out);
  } else if (s.keyword == "$group") {
    check_group(s.body, out);
  } else if (s.keyword == "$project" || s.keyword == "$addFields") {
    if (!s.body.is_doc() || s.body.as_doc().empty()) {
      out.push_back({Diagnostic::Kind::MalformedBody,
                     s.keyword + " expects a non-empty document"});
      return;
    }
    for (const auto& [k, v] : s.body.as_doc()) check_expr(v, out);
  } else if (s.keyword == "$unwind") {
    if (s.body.is_text()) {
      if (s.body.as_text().empty() || s.body.as_text()[0] != '$') {
        out.push_back({Diagnostic::Kind::MalformedBody,
                       "$unwind path must begin with '$'"});
      }
    } else if (s.body.is_doc()) {
      const Value* p = s.body.as_doc().find("path");
      if (!p || !p->is_text() || p->as_text().empty() || p->as_text()[0] != '$') {
        out.push_back({Diagnostic::Kind::MalformedBody,
                       "$unwind document form requires a \"path\" string"});
      }
    } else {
      out.push_back({Diagnostic::Kind::MalformedBody,
                     "$unwind expects a path string or document"});
    }
  } else if (s.keyword == "$sort") {
    if (!s.body.is_doc() || s.body.as_doc().empty()) {
      out.push_back({Diagnostic::Kind::MalformedBody,
                     "$sort expects a non-empty document"});
      return;
    }
    for (const auto& [k, v] : s.body.as_doc()) {
      if (!v.is_int() || (v.as_int() != 1 && v.as_int() != -1)) {
        out.push_back({Diagnostic::Kind::MalformedBody,
                       "$sort direction for \"" + k + "\" must be 1 or -1"});
      }
    }
  } else if (s.keyword == "$limit" || s.keyword == "$skip") {
    if (!s.body.is_int() || s.body.as_int() < 0) {
      out.push_back({Diagnostic::Kind::MalformedBody,
                     s.keyword + " expects a non-negative integer"});
    }
  } else if (s.keyword == "$count") {
    if (!s.body.is_text() || s.body.as_text().empty()) {
      out.push_back({Diagnostic::Kind::MalformedBody,
                     "$count expects a non-empty field name"});
    }
  } else if (s.keyword == "$lookup") {
    // canonical four-key form only; the pipeline form is rejected
    if (!s.body.is_doc()) {
      out.push_back({Diagnostic::Kind::MalformedBody, "$lookup expects a document"});
      return;
    }
    for (const char* k : {"from", "localField", "foreignField", "as"}) {
      const Value* v = s.body.as_doc().find(k);
      if (!v || !v->is_text()) {
        out.push_back({Diagnostic::Kind::MalformedBody,
                       std::string("$lookup requires string \"") + k + "\""});
      }
    }
    if (s.body.as_doc().find("pipeline")) {
      out.push_back({Diagnostic::Kind::MalformedBody,
                     "$lookup pipeline form is not supported"});
    }
  }
}

}  // namespace

std::vector<Diagnostic> validate(const QueryAst& ast) {
  std::vector<Diagnostic> out;
  if (const auto* a = std::get_if<AggregateSpec>(&ast.method)) {
    for (const auto& s : a->pipeline) check_stage(s, out);
  } else if (const auto* f = std::get_if<FindSpec>(&ast.method)) {
    check_filter(f->filter, out);
    if (f->sort) {
      for (const auto& [k, v] : f->sort->as_doc()) {
        if (!v.is_int() || (v.as_int() != 1 && v.as_int() != -1)) {
          out.push_back({Diagnostic::Kind::MalformedBody,
                         "sort direction for \"" + k + "\" must be 1 or -1"});
        }
      }
    }
  } else if (const auto* d = std::get_if<DistinctSpec>(&ast.method)) {
    if (d->filter) check_filter(*d->filter, out);
  } else {
    check_filter(std::get<CountSpec>(ast.method).filter, out);
  }
  return out;
}

}  // namespace nosqlgen
