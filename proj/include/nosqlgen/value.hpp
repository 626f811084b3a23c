#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace nosqlgen {

class Value;

/// Ordered document: field order is insertion order and is preserved through
/// parse/render round trips. Field names are unique.
class Doc {
 public:
  using Field = std::pair<std::string, Value>;

  Doc() = default;

  // Appends, or replaces in place if the key already exists.
  void set(std::string key, Value v);
  const Value* find(std::string_view key) const;
  bool erase(std::string_view key);

  bool empty() const { return fields_.size() == 0; }
  std::size_t size() const { return fields_.size(); }
  const std::vector<Field>& fields() const { return fields_; }

  auto begin() const { return fields_.begin(); }
  auto end() const { return fields_.end(); }

  friend bool operator==(const Doc& a, const Doc& b);

 private:
  std::vector<Field> fields_;
};

/// JSON-like value tree. Int and Float are distinct kinds, but numeric
/// equality and ordering are cross-kind (1 == 1.0).
class Value {
 public:
  enum class Kind { Null, Bool, Int, Float, Text, Array, Doc };
  using Array = std::vector<Value>;

  Value() : v_(std::monostate{}) {}
  Value(std::nullptr_t) : v_(std::monostate{}) {}
  Value(bool b) : v_(b) {}
  Value(std::int64_t i) : v_(i) {}
  Value(int i) : v_(static_cast<std::int64_t>(i)) {}
  Value(double d) : v_(d) {}
  Value(const char* s) : v_(std::string(s)) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(Array a) : v_(std::move(a)) {}
  Value(Doc d) : v_(std::move(d)) {}

  Kind kind() const { return static_cast<Kind>(v_.index()); }
  bool is_null() const { return kind() == Kind::Null; }
  bool is_bool() const { return kind() == Kind::Bool; }
  bool is_int() const { return kind() == Kind::Int; }
  bool is_float() const { return kind() == Kind::Float; }
  bool is_number() const { return is_int() || is_float(); }
  bool is_text() const { return kind() == Kind::Text; }
  bool is_array() const { return kind() == Kind::Array; }
  bool is_doc() const { return kind() == Kind::Doc; }

  bool as_bool() const { return std::get<bool>(v_); }
  std::int64_t as_int() const { return std::get<std::int64_t>(v_); }
  double as_float() const { return std::get<double>(v_); }
  const std::string& as_text() const { return std::get<std::string>(v_); }
  const Array& as_array() const { return std::get<Array>(v_); }
  Array& as_array() { return std::get<Array>(v_); }
  const Doc& as_doc() const { return std::get<nosqlgen::Doc>(v_); }
  Doc& as_doc() { return std::get<nosqlgen::Doc>(v_); }

  /// Numeric value as double regardless of Int/Float kind. Pre: is_number().
  double number() const {
    return is_int() ? static_cast<double>(as_int()) : as_float();
  }

  friend bool operator==(const Value& a, const Value& b);
  friend bool operator!=(const Value& a, const Value& b) { return !(a == b); }

 private:
  std::variant<std::monostate, bool, std::int64_t, double, std::string, Array,
               nosqlgen::Doc>
      v_;
};

const char* kind_name(Value::Kind k);

/// Total order used by $sort and canonical forms:
/// Null < Bool < numbers (cross-kind) < Text < Doc < Array.
/// Returns <0, 0, >0.
int compare_values(const Value& a, const Value& b);

/// Cross-kind equality: Int 1 equals Float 1.0; otherwise kind-strict.
bool values_equal(const Value& a, const Value& b);

struct TextPos {
  std::size_t offset = 0;  // byte offset
  std::size_t line = 1;
  std::size_t column = 1;
};

class JsonError : public std::exception {
 public:
  JsonError(std::string message, TextPos pos)
      : pos_(pos), message_(std::move(message)) {
    full_ = message_ + " at line " + std::to_string(pos_.line) + ", column " +
            std::to_string(pos_.column) + " (byte " +
            std::to_string(pos_.offset) + ")";
  }
  const char* what() const noexcept override { return full_.c_str(); }
  const TextPos& pos() const { return pos_; }
  const std::string& message() const { return message_; }

 private:
  TextPos pos_;
  std::string message_;
  std::string full_;
};

/// Strict JSON parse. Rejects duplicate document keys. Throws JsonError with
/// line/column on malformed input.
Value parse_json(std::string_view text);

/// Canonical JSON: double-quoted keys/strings, ", " and ": " separators,
/// insertion-order keys, floats rendered shortest with a forced decimal
/// point. parse_json(render_json(v)) == v.
std::string render_json(const Value& v);

/// Shortest round-trip text for a double (std::to_chars), without the forced
/// decimal point render_json adds.
std::string float_shortest(double d);

/// Stable 64-bit FNV-1a over bytes, hex encoded. Used for fingerprints.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace nosqlgen
