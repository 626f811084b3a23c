#include "nosqlgen/value.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace nosqlgen {

void Doc::set(std::string key, Value v) {
  for (auto& f : fields_) {
    if (f.first == key) {
      f.second = std::move(v);
      return;
    }
  }
  fields_.emplace_back(std::move(key), std::move(v));
}

const Value* Doc::find(std::string_view key) const {
  for (const auto& f : fields_) {
    if (f.first == key) return &f.second;
  }
  return nullptr;
}

bool Doc::erase(std::string_view key) {
  for (auto it = fields_.begin(); it != fields_.end(); ++it) {
    if (it->first == key) {
      fields_.erase(it);
      return true;
    }
  }
  return false;
}

bool operator==(const Doc& a, const Doc& b) {
  if (a.fields_.size() != b.fields_.size()) return false;
  for (std::size_t i = 0; i < a.fields_.size(); ++i) {
    if (a.fields_[i].first != b.fields_[i].first) return false;
    if (!(a.fields_[i].second == b.fields_[i].second)) return false;
  }
  return true;
}

bool operator==(const Value& a, const Value& b) { return values_equal(a, b); }

const char* kind_name(Value::Kind k) {
  switch (k) {
    case Value::Kind::Null: return "null";
    case Value::Kind::Bool: return "bool";
    case Value::Kind::Int: return "int";
    case Value::Kind::Float: return "float";
    case Value::Kind::Text: return "text";
    case Value::Kind::Array: return "array";
    case Value::Kind::Doc: return "doc";
  }
  return "?";
}

namespace {

int rank_of(Value::Kind k) {
  switch (k) {
    case Value::Kind::Null: return 0;
    case Value::Kind::Bool: return 1;
    case Value::Kind::Int:
    case Value::Kind::Float: return 2;
    case Value::Kind::Text: return 3;
    case Value::Kind::Doc: return 4;
    case Value::Kind::Array: return 5;
  }
  return 6;
}

int compare_numbers(const Value& a, const Value& b) {
  if (a.is_int() && b.is_int()) {
    const auto x = a.as_int(), y = b.as_int();
    return x < y ? -1 : (x > y ? 1 : 0);
  }
  const double x = a.number(), y = b.number();
  return x < y ? -1 : (x > y ? 1 : 0);
}

}  // namespace

int compare_values(const Value& a, const Value& b) {
  const int ra = rank_of(a.kind()), rb = rank_of(b.kind());
  if (ra != rb) return ra < rb ? -1 : 1;
  switch (a.kind()) {
    case Value::Kind::Null:
      return 0;
    case Value::Kind::Bool:
      return static_cast<int>(a.as_bool()) - static_cast<int>(b.as_bool());
    case Value::Kind::Int:
    case Value::Kind::Float:
      return compare_numbers(a, b);
    case Value::Kind::Text:
      return a.as_text().compare(b.as_text());
    case Value::Kind::Doc: {
      const auto& da = a.as_doc().fields();
      const auto& db = b.as_doc().fields();
      const std::size_t n = std::min(da.size(), db.size());
      for (std::size_t i = 0; i < n; ++i) {
        if (int c = da[i].first.compare(db[i].first)) return c < 0 ? -1 : 1;
        if (int c = compare_values(da[i].second, db[i].second)) return c;
      }
      return da.size() < db.size() ? -1 : (da.size() > db.size() ? 1 : 0);
    }
    case Value::Kind::Array: {
      const auto& xa = a.as_array();
      const auto& xb = b.as_array();
      const std::size_t n = std::min(xa.size(), xb.size());
      for (std::size_t i = 0; i < n; ++i) {
        if (int c = compare_values(xa[i], xb[i])) return c;
      }
      return xa.size() < xb.size() ? -1 : (xa.size() > xb.size() ? 1 : 0);
    }
  }
  return 0;
}

bool values_equal(const Value& a, const Value& b) {
  if (a.is_number() && b.is_number()) return compare_numbers(a, b) == 0;
  if (a.kind() != b.kind()) return false;
  return compare_values(a, b) == 0;
}

std::string float_shortest(double d) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), d);
  return std::string(buf, r.ptr);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 16);
}

// ---------------------------------------------------------------------------
// Strict JSON parsing

namespace {

class JsonParser {
 public:
  explicit JsonParser(std::string_view text) : text_(text) {}

  Value parse_document() {
    skip_ws();
    Value v = parse_value();
    skip_ws();
    if (!eof()) fail("trailing content after value");
    return v;
  }

 private:
  std::string_view text_;
  std::size_t i_ = 0;
  std::size_t line_ = 1;
  std::size_t line_start_ = 0;

  bool eof() const { return i_ >= text_.size(); }
  char peek() const { return text_[i_]; }

  char advance() {
    char c = text_[i_++];
    if (c == '\n') {
      ++line_;
      line_start_ = i_;
    }
    return c;
  }

  TextPos pos() const { return {i_, line_, i_ - line_start_ + 1}; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw JsonError(msg, pos());
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

  void expect(char c) {
    if (eof() || peek() != c) {
      fail(std::string("expected '") + c + "'");
    }
    advance();
  }

  bool consume_keyword(std::string_view kw) {
    if (text_.substr(i_, kw.size()) != kw) return false;
    for (std::size_t k = 0; k < kw.size(); ++k) advance();
    return true;
  }

  Value parse_value() {
    if (eof()) fail("unexpected end of input");
    char c = peek();
    switch (c) {
      case '{': return parse_object();
      case '[': return parse_array();
      case '"': return Value(parse_string());
      case 't':
        if (consume_keyword("true")) return Value(true);
        fail("invalid literal");
      case 'f':
        if (consume_keyword("false")) return Value(false);
        fail("invalid literal");
      case 'n':
        if (consume_keyword("null")) return Value(nullptr);
        fail("invalid literal");
      default:
        if (c == '-' || (c >= '0' && c <= '9')) return parse_number();
        fail("unexpected character");
    }
  }

  Value parse_object() {
    expect('{');
    Doc d;
    skip_ws();
    if (!eof() && peek() == '}') {
      advance();
      return Value(std::move(d));
    }
    while (true) {
      skip_ws();
      if (eof() || peek() != '"') fail("expected string key");
      TextPos key_pos = pos();
      std::string key = parse_string();
      if (d.find(key)) {
        throw JsonError("duplicate key \"" + key + "\"", key_pos);
      }
      skip_ws();
      expect(':');
      skip_ws();
      d.set(std::move(key), parse_value());
      skip_ws();
      if (eof()) fail("unterminated object");
      if (peek() == ',') {
        advance();
        continue;
      }
      if (peek() == '}') {
        advance();
        return Value(std::move(d));
      }
      fail("expected ',' or '}'");
    }
  }

  Value parse_array() {
    expect('[');
    Value::Array a;
    skip_ws();
    if (!eof() && peek() == ']') {
      advance();
      return Value(std::move(a));
    }
    while (true) {
      skip_ws();
      a.push_back(parse_value());
      skip_ws();
      if (eof()) fail("unterminated array");
      if (peek() == ',') {
        advance();
        continue;
      }
      if (peek() == ']') {
        advance();
        return Value(std::move(a));
      }
      fail("expected ',' or ']'");
    }
  }

  std::string parse_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof()) fail("unterminated string");
      char c = advance();
      if (c == '"') return out;
      if (c == '\\') {
        if (eof()) fail("unterminated escape");
        char e = advance();
        switch (e) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case '/': out += '/'; break;
          case 'b': out += '\b'; break;
          case 'f': out += '\f'; break;
          case 'n': out += '\n'; break;
          case 'r': out += '\r'; break;
          case 't': out += '\t'; break;
          case 'u': out += parse_unicode_escape(); break;
          default: fail("invalid escape");
        }
      } else {
        out += c;
      }
    }
  }

  std::string parse_unicode_escape() {
    unsigned cp = parse_hex4();
    if (cp >= 0xD800 && cp <= 0xDBFF) {
      // surrogate pair
      if (!consume_keyword("\\u")) fail("missing low surrogate");
      unsigned lo = parse_hex4();
      if (lo < 0xDC00 || lo > 0xDFFF) fail("invalid low surrogate");
      cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
    } else if (cp >= 0xDC00 && cp <= 0xDFFF) {
      fail("unexpected low surrogate");
    }
    return encode_utf8(cp);
  }

  unsigned parse_hex4() {
    unsigned v = 0;
    for (int k = 0; k < 4; ++k) {
      if (eof()) fail("truncated \\u escape");
      char c = advance();
      v <<= 4;
      if (c >= '0' && c <= '9') v |= static_cast<unsigned>(c - '0');
      else if (c >= 'a' && c <= 'f') v |= static_cast<unsigned>(c - 'a' + 10);
      else if (c >= 'A' && c <= 'F') v |= static_cast<unsigned>(c - 'A' + 10);
      else fail("invalid \\u escape");
    }
    return v;
  }

  static std::string encode_utf8(unsigned cp) {
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

  Value parse_number() {
    const std::size_t start = i_;
    bool is_float = false;
    if (!eof() && peek() == '-') advance();
    while (!eof() && peek() >= '0' && peek() <= '9') advance();
    if (!eof() && peek() == '.') {
      is_float = true;
      advance();
      while (!eof() && peek() >= '0' && peek() <= '9') advance();
    }
    if (!eof() && (peek() == 'e' || peek() == 'E')) {
      is_float = true;
      advance();
      if (!eof() && (peek() == '+' || peek() == '-')) advance();
      while (!eof() && peek() >= '0' && peek() <= '9') advance();
    }
    std::string_view tok = text_.substr(start, i_ - start);
    if (tok.empty() || tok == "-") fail("invalid number");
    if (!is_float) {
      std::int64_t iv = 0;
      auto r = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
      if (r.ec == std::errc() && r.ptr == tok.data() + tok.size()) {
        return Value(iv);
      }
      // out of int64 range: fall through to float
    }
    double dv = 0;
    auto r = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
      fail("invalid number");
    }
    return Value(dv);
  }
};

void render_string(const std::string& s, std::string& out) {
  out += '"';
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += '"';
}

void render_value(const Value& v, std::string& out) {
  switch (v.kind()) {
    case Value::Kind::Null:
      out += "null";
      break;
    case Value::Kind::Bool:
      out += v.as_bool() ? "true" : "false";
      break;
    case Value::Kind::Int:
      out += std::to_string(v.as_int());
      break;
    case Value::Kind::Float: {
      std::string t = float_shortest(v.as_float());
      // force a float-looking literal so the kind survives a round trip
      if (t.find('.') == std::string::npos && t.find('e') == std::string::npos &&
          t.find("inf") == std::string::npos && t.find("nan") == std::string::npos) {
        t += ".0";
      }
      out += t;
      break;
    }
    case Value::Kind::Text:
      render_string(v.as_text(), out);
      break;
    case Value::Kind::Array: {
      out += '[';
      bool first = true;
      for (const auto& e : v.as_array()) {
        if (!first) out += ", ";
        first = false;
        render_value(e, out);
      }
      out += ']';
      break;
    }
    case Value::Kind::Doc: {
      out += '{';
      bool first = true;
      for (const auto& [k, fv] : v.as_doc()) {
        if (!first) out += ", ";
        first = false;
        render_string(k, out);
        out += ": ";
        render_value(fv, out);
      }
      out += '}';
      break;
    }
  }
}

}  // namespace

Value parse_json(std::string_view text) {
  return JsonParser(text).parse_document();
}

std::string render_json(const Value& v) {
  std::string out;
  render_value(v, out);
  return out;
}

}  // namespace nosqlgen
