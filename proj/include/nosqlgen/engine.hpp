#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nosqlgen/model.hpp"
#include "nosqlgen/query.hpp"
#include "nosqlgen/value.hpp"

namespace nosqlgen {

enum class FailureKind {
  Parse,
  UnknownOperator,
  TypeError,
  ConversionError,
  LimitExceeded,
};

const char* failure_kind_name(FailureKind k);

/// Thrown by the low-level evaluators (eval_match, eval_expr, apply_stage
/// internals); execute() converts it into a Failure outcome.
class EngineError : public std::runtime_error {
 public:
  EngineError(FailureKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  FailureKind kind() const { return kind_; }

 private:
  FailureKind kind_;
};

struct ExecutionOutcome {
  bool ok = false;
  std::vector<Doc> rows;        // success only
  FailureKind kind = FailureKind::Parse;
  std::string message;          // failure only, non-empty

  static ExecutionOutcome success(std::vector<Doc> rows) {
    ExecutionOutcome o;
    o.ok = true;
    o.rows = std::move(rows);
    return o;
  }
  static ExecutionOutcome failure(FailureKind k, std::string message) {
    ExecutionOutcome o;
    o.ok = false;
    o.kind = k;
    o.message = std::move(message);
    return o;
  }
};

struct EngineLimits {
  std::int64_t max_intermediate_docs = 1'000'000;
  std::int64_t max_pipeline_stages = 64;
};

/// Runs a parsed query against a database. Unknown collections yield zero
/// rows (document-database behavior); unknown stages or operators yield
/// failures, never exceptions.
ExecutionOutcome execute(const QueryAst& ast, const DatabaseInstance& db,
                         const EngineLimits& limits = {});

/// Convenience wrapper: parses then executes; parse errors become
/// Failure{Parse}.
ExecutionOutcome execute_text(const std::string& query_text,
                              const DatabaseInstance& db,
                              const EngineLimits& limits = {});

/// Filter evaluation: equality on dotted paths, $gt/$gte/$lt/$lte/$ne/$in,
/// $and/$or/$nor, $exists, $expr. Throws EngineFailure internally; callers
/// outside the engine should use execute(). Missing fields never match
/// (except via $exists:false).
bool eval_match(const Value& filter, const Doc& doc);

/// Aggregation expression evaluation over one document. Missing paths come
/// back as nullopt (Null in comparisons, absent in projections).
std::optional<Value> eval_expr(const Value& expr, const Doc& doc);

/// One pipeline stage over materialized rows.
ExecutionOutcome apply_stage(const Stage& stage, std::vector<Doc> rows,
                             const DatabaseInstance& db,
                             const EngineLimits& limits = {});

/// Stable key for execution outcomes: equal fingerprints iff the outcomes are
/// EVM-equal (field names ignored, numeric kinds normalized, row signatures
/// deduplicated). Failures map to a per-kind sentinel.
std::string result_fingerprint(const ExecutionOutcome& outcome);

/// The EVM-canonical text the fingerprint hashes; exposed for the metrics
/// module and tests.
std::string evm_canonical_text(const std::vector<Doc>& rows);

/// Dotted-path lookup; descends documents only.
const Value* get_path(const Doc& doc, std::string_view path);

// Supported vocabulary, shared with validate() and the fixtures coverage
// matrix.
const std::vector<std::string>& supported_stages();
const std::vector<std::string>& supported_expr_operators();
const std::vector<std::string>& supported_match_operators();
const std::vector<std::string>& supported_accumulators();

/// Pluggable executor so a real document database can stand in for the
/// in-memory engine behind the same contract.
class QueryExecutor {
 public:
  virtual ~QueryExecutor() = default;
  virtual ExecutionOutcome execute_query(const std::string& query_text,
                                         const std::string& db_id) = 0;
};

/// In-memory implementation over a set of loaded databases.
class LocalExecutor : public QueryExecutor {
 public:
  LocalExecutor(const std::vector<const DatabaseInstance*>& dbs,
                EngineLimits limits = {});
  ExecutionOutcome execute_query(const std::string& query_text,
                                 const std::string& db_id) override;

 private:
  std::vector<const DatabaseInstance*> dbs_;
  EngineLimits limits_;
};

}  // namespace nosqlgen
