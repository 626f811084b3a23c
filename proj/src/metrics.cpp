#include "nosqlgen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

namespace nosqlgen {

namespace {

std::string collapse_ws(const std::string& s) {
  std::string out;
  bool in_ws = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out += ' ';
    in_ws = false;
    out += c;
  }
  return out;
}

}  // namespace

bool exact_match(const std::string& pred, const std::string& gold) {
  try {
    QueryAst p = parse_query(pred);
    QueryAst g = parse_query(gold);
    return render_query(p) == render_query(g);
  } catch (const QueryParseError&) {
    return collapse_ws(pred) == collapse_ws(gold);
  }
}

bool query_stages_match(const QueryAst& pred, const QueryAst& gold) {
  return stage_keywords(pred) == stage_keywords(gold);
}

bool query_fields_coverage(const QueryAst& pred, const QueryAst& gold) {
  std::set<std::string> p = referenced_fields(pred);
  std::set<std::string> g = referenced_fields(gold);
  return std::includes(p.begin(), p.end(), g.begin(), g.end());
}

namespace {

/// Key-order-insensitive canonical text of one row, numeric kinds normalized.
/// Used for EX so that equal contents compare equal regardless of the field
/// insertion order an engine happens to produce.
std::string row_canonical(const Value& v);

std::string row_canonical_doc(const Doc& d) {
  std::vector<std::string> members;
  members.reserve(d.size());
  for (const auto& [k, fv] : d) {
    members.push_back(render_json(Value(k)) + ":" + row_canonical(fv));
  }
  std::sort(members.begin(), members.end());
  std::string out = "{";
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (i) out += ',';
    out += members[i];
  }
  out += '}';
  return out;
}

std::string row_canonical(const Value& v) {
  switch (v.kind()) {
    case Value::Kind::Doc:
      return row_canonical_doc(v.as_doc());
    case Value::Kind::Array: {
      std::string out = "[";
      bool first = true;
      for (const auto& e : v.as_array()) {
        if (!first) out += ',';
        first = false;
        out += row_canonical(e);
      }
      out += ']';
      return out;
    }
    case Value::Kind::Float: {
      // normalize 1.0 vs 1 the same way the EVM signatures do
      double d = v.as_float();
      if (d == static_cast<double>(static_cast<std::int64_t>(d)) &&
          std::abs(d) <= 9.0e15) {
        return std::to_string(static_cast<std::int64_t>(d));
      }
      return float_shortest(d);
    }
    case Value::Kind::Int:
      return std::to_string(v.as_int());
    default:
      return render_json(v);
  }
}

void collect_field_paths(const Value& v, const std::string& prefix,
                         std::set<std::string>& out) {
  if (v.is_doc()) {
    for (const auto& [k, fv] : v.as_doc()) {
      std::string p = prefix.empty() ? k : prefix + "." + k;
      out.insert(p);
      collect_field_paths(fv, p, out);
    }
  } else if (v.is_array()) {
    for (const auto& e : v.as_array()) collect_field_paths(e, prefix, out);
  }
}

}  // namespace

bool execution_accuracy(const ExecutionOutcome& pred_out,
                        const ExecutionOutcome& gold_out, bool gold_sorts) {
  if (!pred_out.ok || !gold_out.ok) return false;
  if (pred_out.rows.size() != gold_out.rows.size()) return false;
  std::vector<std::string> p, g;
  p.reserve(pred_out.rows.size());
  g.reserve(gold_out.rows.size());
  for (const auto& r : pred_out.rows) p.push_back(row_canonical_doc(r));
  for (const auto& r : gold_out.rows) g.push_back(row_canonical_doc(r));
  if (!gold_sorts) {
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
  }
  return p == g;
}

bool execution_fields_match(const ExecutionOutcome& pred_out,
                            const ExecutionOutcome& gold_out) {
  if (!pred_out.ok || !gold_out.ok) return false;
  std::set<std::string> p, g;
  for (const auto& r : pred_out.rows) collect_field_paths(Value(r), "", p);
  for (const auto& r : gold_out.rows) collect_field_paths(Value(r), "", g);
  return p == g;
}

bool execution_value_match(const ExecutionOutcome& pred_out,
                           const ExecutionOutcome& gold_out, EvmMode mode) {
  if (!pred_out.ok || !gold_out.ok) return false;
  if (mode == EvmMode::UniqueValues) {
    return evm_canonical_text(pred_out.rows) == evm_canonical_text(gold_out.rows);
  }
  // multiset reading: keep duplicate signatures
  auto sigs = [](const std::vector<Doc>& rows) {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      ExecutionOutcome one = ExecutionOutcome::success({r});
      out.push_back(evm_canonical_text(one.rows));
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  return sigs(pred_out.rows) == sigs(gold_out.rows);
}

bool query_sorts(const QueryAst& ast) {
  if (const auto* f = std::get_if<FindSpec>(&ast.method)) {
    return f->sort.has_value();
  }
  if (const auto* a = std::get_if<AggregateSpec>(&ast.method)) {
    for (const auto& s : a->pipeline) {
      if (s.keyword == "$sort") return true;
    }
  }
  return false;
}

TurnScore evaluate_turn(const std::string& pred, const std::string& gold,
                        const DatabaseInstance& db, const EngineLimits& limits) {
  TurnScore score;

  QueryAst gold_ast;
  try {
    gold_ast = parse_query(gold);
  } catch (const QueryParseError& e) {
    throw DataError("gold query does not parse: " + std::string(e.what()) +
                    " in \"" + gold + "\"");
  }
  ExecutionOutcome gold_out = execute(gold_ast, db, limits);
  if (!gold_out.ok) {
    throw DataError("gold query failed to execute (" +
                    std::string(failure_kind_name(gold_out.kind)) +
                    "): " + gold_out.message);
  }
  score.gold_outcome = OutcomeSummary::of(gold_out);

  QueryAst pred_ast;
  try {
    pred_ast = parse_query(pred);
  } catch (const QueryParseError& e) {
    // unparseable prediction: all six flags stay false
    ExecutionOutcome f = ExecutionOutcome::failure(FailureKind::Parse, e.what());
    score.pred_outcome = OutcomeSummary::of(f);
    return score;
  }

  score.em = exact_match(pred, gold);
  score.qsm = query_stages_match(pred_ast, gold_ast);
  score.qfc = query_fields_coverage(pred_ast, gold_ast);

  ExecutionOutcome pred_out = execute(pred_ast, db, limits);
  score.pred_outcome = OutcomeSummary::of(pred_out);
  score.ex = execution_accuracy(pred_out, gold_out, query_sorts(gold_ast));
  score.efm = execution_fields_match(pred_out, gold_out);
  score.evm = execution_value_match(pred_out, gold_out);
  return score;
}

CorpusReport evaluate_corpus(
    const std::vector<Prediction>& predictions,
    const std::vector<Dialogue>& dialogues,
    const std::map<std::string, const DatabaseInstance*>& dbs,
    const EngineLimits& limits) {
  std::map<std::pair<std::string, int>, const Prediction*> by_turn;
  for (const auto& p : predictions) {
    auto key = std::make_pair(p.dialogue_id, p.turn_index);
    if (by_turn.count(key)) {
      throw DataError("duplicate prediction for " + p.dialogue_id + "#" +
                      std::to_string(p.turn_index));
    }
    by_turn[key] = &p;
  }

  std::size_t total_turns = 0;
  std::vector<std::string> missing;
  for (const auto& d : dialogues) {
    for (std::size_t i = 1; i <= d.turns.size(); ++i) {
      ++total_turns;
      if (!by_turn.count({d.dialogue_id, static_cast<int>(i)})) {
        missing.push_back(d.dialogue_id + "#" + std::to_string(i));
      }
    }
  }
  if (total_turns == 0) throw DataError("no turns to evaluate");
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) {
      if (!list.empty()) list += ", ";
      list += m;
    }
    throw DataError("missing predictions for turns: " + list);
  }

  CorpusReport report;
  report.n = total_turns;
  for (const auto& d : dialogues) {
    auto it = dbs.find(d.db_id);
    if (it == dbs.end() || !it->second) {
      throw DataError("no database loaded for db_id \"" + d.db_id + "\"");
    }
    const DatabaseInstance& db = *it->second;
    for (std::size_t i = 1; i <= d.turns.size(); ++i) {
      const Prediction* p = by_turn[{d.dialogue_id, static_cast<int>(i)}];
      TurnScore s = evaluate_turn(p->query, d.turns[i - 1].gold_query, db, limits);
      s.dialogue_id = d.dialogue_id;
      s.turn_index = static_cast<int>(i);
      report.n_em += s.em;
      report.n_qsm += s.qsm;
      report.n_qfc += s.qfc;
      report.n_ex += s.ex;
      report.n_efm += s.efm;
      report.n_evm += s.evm;
      report.turns.push_back(std::move(s));
    }
  }
  return report;
}

std::string rate_4dp(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", rate);
  return buf;
}

std::string report_to_json(const CorpusReport& report) {
  Doc root;
  root.set("n", Value(static_cast<std::int64_t>(report.n)));
  root.set("em", Value(report.em()));
  root.set("qsm", Value(report.qsm()));
  root.set("qfc", Value(report.qfc()));
  root.set("ex", Value(report.ex()));
  root.set("efm", Value(report.efm()));
  root.set("evm", Value(report.evm()));
  Value::Array turns;
  for (const auto& t : report.turns) {
    Doc e;
    e.set("id", Value(t.dialogue_id + "#" + std::to_string(t.turn_index)));
    e.set("em", Value(t.em));
    e.set("qsm", Value(t.qsm));
    e.set("qfc", Value(t.qfc));
    e.set("ex", Value(t.ex));
    e.set("efm", Value(t.efm));
    e.set("evm", Value(t.evm));
    e.set("pred_ok", Value(t.pred_outcome.ok));
    if (!t.pred_outcome.ok) {
      e.set("pred_failure", Value(t.pred_outcome.failure_kind));
    }
    turns.push_back(Value(std::move(e)));
  }
  root.set("turns", Value(std::move(turns)));
  return render_json(Value(std::move(root)));
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::string text = read_file(path);
  std::vector<Prediction> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    std::string_view line(text.data() + start,
                          (end == std::string::npos ? text.size() : end) - start);
    start = (end == std::string::npos) ? text.size() + 1 : end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string origin = path + ":" + std::to_string(line_no);
    Value v;
    try {
      v = parse_json(line);
    } catch (const JsonError& e) {
      throw DataError(origin + ": " + e.what());
    }
    if (!v.is_doc()) throw DataError(origin + ": expected an object");
    const Value* id = v.as_doc().find("dialogue_id");
    const Value* turn = v.as_doc().find("turn_index");
    const Value* query = v.as_doc().find("query");
    if (!id || !id->is_text() || !turn || !turn->is_int() || !query ||
        !query->is_text()) {
      throw DataError(origin +
                      ": prediction needs dialogue_id, turn_index, query");
    }
    out.push_back({id->as_text(), static_cast<int>(turn->as_int()),
                   query->as_text()});
  }
  return out;
}

}  // namespace nosqlgen
