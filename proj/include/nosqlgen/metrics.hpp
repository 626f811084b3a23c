#pragma once

#include <map>
#include <string>
#include <vector>

#include "nosqlgen/engine.hpp"
#include "nosqlgen/model.hpp"
#include "nosqlgen/query.hpp"

namespace nosqlgen {

/// Compact execution summary kept in per-turn scores.
struct OutcomeSummary {
  bool ok = false;
  std::string failure_kind;  // empty on success
  std::size_t row_count = 0;
  std::string message;

  static OutcomeSummary of(const ExecutionOutcome& o) {
    OutcomeSummary s;
    s.ok = o.ok;
    if (o.ok) {
      s.row_count = o.rows.size();
    } else {
      s.failure_kind = failure_kind_name(o.kind);
      s.message = o.message;
    }
    return s;
  }
};

struct TurnScore {
  std::string dialogue_id;
  int turn_index = 0;
  bool em = false, qsm = false, qfc = false;
  bool ex = false, efm = false, evm = false;
  OutcomeSummary pred_outcome, gold_outcome;
};

struct CorpusReport {
  std::size_t n = 0;
  std::size_t n_em = 0, n_qsm = 0, n_qfc = 0, n_ex = 0, n_efm = 0, n_evm = 0;
  std::vector<TurnScore> turns;

  double em() const { return static_cast<double>(n_em) / static_cast<double>(n); }
  double qsm() const { return static_cast<double>(n_qsm) / static_cast<double>(n); }
  double qfc() const { return static_cast<double>(n_qfc) / static_cast<double>(n); }
  double ex() const { return static_cast<double>(n_ex) / static_cast<double>(n); }
  double efm() const { return static_cast<double>(n_efm) / static_cast<double>(n); }
  double evm() const { return static_cast<double>(n_evm) / static_cast<double>(n); }
};

/// Canonical-render equality when both parse; otherwise whitespace-collapsed
/// raw-text equality.
bool exact_match(const std::string& pred, const std::string& gold);

/// Stage keyword sequences identical (same keywords, same order).
bool query_stages_match(const QueryAst& pred, const QueryAst& gold);

/// referenced_fields(pred) is a superset of referenced_fields(gold).
bool query_fields_coverage(const QueryAst& pred, const QueryAst& gold);

/// Rows equal with field names and values; ordered comparison when the gold
/// query sorts, multiset comparison otherwise. False on any failure.
bool execution_accuracy(const ExecutionOutcome& pred_out,
                        const ExecutionOutcome& gold_out, bool gold_sorts);

/// The sets of dotted field paths across all rows are equal.
bool execution_fields_match(const ExecutionOutcome& pred_out,
                            const ExecutionOutcome& gold_out);

enum class EvmMode {
  UniqueValues,  // row signatures deduplicated (default reading)
  Multiset,      // strict multiset of row signatures
};

/// Field names dropped, per-row sorted leaf values compared as signature sets.
bool execution_value_match(const ExecutionOutcome& pred_out,
                           const ExecutionOutcome& gold_out,
                           EvmMode mode = EvmMode::UniqueValues);

/// True when the query orders its result (find with .sort, or a pipeline
/// containing $sort).
bool query_sorts(const QueryAst& ast);

/// All six flags for one (pred, gold) pair. The gold query must parse and
/// execute; violations throw DataError.
TurnScore evaluate_turn(const std::string& pred, const std::string& gold,
                        const DatabaseInstance& db,
                        const EngineLimits& limits = {});

struct Prediction {
  std::string dialogue_id;
  int turn_index = 0;
  std::string query;
};

/// Aggregates exact fractions over every turn of every dialogue. Requires
/// exactly one prediction per turn; n must be >= 1.
CorpusReport evaluate_corpus(
    const std::vector<Prediction>& predictions,
    const std::vector<Dialogue>& dialogues,
    const std::map<std::string, const DatabaseInstance*>& dbs,
    const EngineLimits& limits = {});

/// {"n":..., "em":..., ..., "turns":[...]} with rates at full precision.
std::string report_to_json(const CorpusReport& report);

std::vector<Prediction> load_predictions(const std::string& path);
std::string rate_4dp(double rate);

}  // namespace nosqlgen
