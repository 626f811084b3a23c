#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "nosqlgen/value.hpp"

namespace nosqlgen {

/// One aggregation pipeline stage: {"$match": {...}} parses to
/// keyword "$match" with the inner value as body.
struct Stage {
  std::string keyword;
  Value body;

  friend bool operator==(const Stage& a, const Stage& b) {
    return a.keyword == b.keyword && a.body == b.body;
  }
};

struct FindSpec {
  Value filter = Value(Doc{});
  std::optional<Value> projection;
  std::optional<Value> sort;
  std::optional<std::int64_t> limit;

  friend bool operator==(const FindSpec&, const FindSpec&) = default;
};

struct AggregateSpec {
  std::vector<Stage> pipeline;

  friend bool operator==(const AggregateSpec&, const AggregateSpec&) = default;
};

struct DistinctSpec {
  std::string field;
  std::optional<Value> filter;

  friend bool operator==(const DistinctSpec&, const DistinctSpec&) = default;
};

struct CountSpec {
  Value filter = Value(Doc{});

  friend bool operator==(const CountSpec&, const CountSpec&) = default;
};

using Method = std::variant<FindSpec, AggregateSpec, DistinctSpec, CountSpec>;

struct QueryAst {
  std::string collection;
  Method method;

  friend bool operator==(const QueryAst&, const QueryAst&) = default;
};

/// Query text could not be parsed. Carries the byte offset and an
/// expected-token hint.
class QueryParseError : public std::exception {
 public:
  QueryParseError(std::string message, std::size_t offset, std::string expected)
      : offset_(offset), message_(std::move(message)), expected_(std::move(expected)) {
    full_ = message_ + " at byte " + std::to_string(offset_);
    if (!expected_.empty()) full_ += " (expected " + expected_ + ")";
  }
  const char* what() const noexcept override { return full_.c_str(); }
  std::size_t offset() const { return offset_; }
  const std::string& expected() const { return expected_; }
  const std::string& message() const { return message_; }

 private:
  std::size_t offset_;
  std::string message_;
  std::string expected_;
  std::string full_;
};

/// The query names a method this artifact does not handle (insert, update...).
class UnsupportedMethodError : public QueryParseError {
 public:
  UnsupportedMethodError(const std::string& method, std::size_t offset)
      : QueryParseError("unsupported method \"" + method + "\"", offset, "") {}
};

/// Parses MongoDB-shell style query text: db.<collection>.<method>(<args>)
/// with optional chained .sort({...}) / .limit(n) after find and an optional
/// trailing semicolon. Accepts shell-relaxed bodies: unquoted keys, single
/// quotes, trailing commas. Throws QueryParseError.
QueryAst parse_query(const std::string& text);

/// Canonical text: double-quoted keys and strings, ", " and ": " separators,
/// keys kept in parsed order. parse_query(render_query(ast)) == ast.
std::string render_query(const QueryAst& ast);

/// The stage keyword sequence the QSM metric compares. Find queries map to a
/// fixed [$match, $project, $sort, $limit] subsequence based on which parts
/// are present; distinct -> ["$distinct"]; countDocuments -> ["$count"].
std::vector<std::string> stage_keywords(const QueryAst& ast);

/// Fields referenced by the query: filter keys (dotted paths whole),
/// "$"/"$$"-prefixed string references with the prefix stripped, output keys
/// of $project/$group/$addFields/$count and $lookup's "as", projection keys,
/// the distinct field, and sort keys. Never contains a leading "$".
std::set<std::string> referenced_fields(const QueryAst& ast);

struct Diagnostic {
  enum class Kind { UnknownStage, UnknownOperator, MalformedBody };
  Kind kind;
  std::string detail;
};

/// Structural checks against the engine's supported vocabulary. An empty
/// result means the engine can attempt execution.
std::vector<Diagnostic> validate(const QueryAst& ast);

/// Relaxed value parser used for query bodies; exposed for tests and tools.
Value parse_relaxed_value(const std::string& text);

}  // namespace nosqlgen
