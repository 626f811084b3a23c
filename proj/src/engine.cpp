#include "nosqlgen/engine.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <unordered_map>
#include <unordered_set>

namespace nosqlgen {

const char* failure_kind_name(FailureKind k) {
  switch (k) {
    case FailureKind::Parse: return "parse";
    case FailureKind::UnknownOperator: return "unknown-operator";
    case FailureKind::TypeError: return "type-error";
    case FailureKind::ConversionError: return "conversion-error";
    case FailureKind::LimitExceeded: return "limit-exceeded";
  }
  return "?";
}

namespace {

[[noreturn]] void raise(FailureKind k, std::string msg) {
  throw EngineError(k, msg);
}

bool truthy(const std::optional<Value>& v) {
  if (!v) return false;
  switch (v->kind()) {
    case Value::Kind::Null: return false;
    case Value::Kind::Bool: return v->as_bool();
    case Value::Kind::Int: return v->as_int() != 0;
    case Value::Kind::Float: return v->as_float() != 0.0;
    default: return true;
  }
}

}  // namespace

const Value* get_path(const Doc& doc, std::string_view path) {
  const Doc* cur = &doc;
  while (true) {
    std::size_t dot = path.find('.');
    std::string_view head = (dot == std::string_view::npos) ? path : path.substr(0, dot);
    const Value* v = cur->find(head);
    if (!v) return nullptr;
    if (dot == std::string_view::npos) return v;
    if (!v->is_doc()) return nullptr;
    cur = &v->as_doc();
    path = path.substr(dot + 1);
  }
}

namespace {

/// Writes (or removes, when v is nullopt) a dotted path, creating
/// intermediate documents as needed.
void set_path(Doc& doc, std::string_view path, std::optional<Value> v) {
  std::size_t dot = path.find('.');
  if (dot == std::string_view::npos) {
    if (v) {
      doc.set(std::string(path), std::move(*v));
    } else {
      doc.erase(path);
    }
    return;
  }
  std::string head(path.substr(0, dot));
  const Value* existing = doc.find(head);
  if (!existing || !existing->is_doc()) {
    if (!v) return;  // nothing to remove
    doc.set(head, Value(Doc{}));
    existing = doc.find(head);
  }
  Doc sub = existing->as_doc();
  set_path(sub, path.substr(dot + 1), std::move(v));
  doc.set(head, Value(std::move(sub)));
}

// --- numeric normalization shared by group keys, distinct and EVM ---

std::string normalized_number_text(const Value& v) {
  if (v.is_int()) return std::to_string(v.as_int());
  double d = v.as_float();
  if (std::isfinite(d) && d == std::floor(d) && std::fabs(d) <= 9.0e15) {
    return std::to_string(static_cast<std::int64_t>(d));
  }
  return float_shortest(d);
}

void render_normalized(const Value& v, std::string& out) {
  switch (v.kind()) {
    case Value::Kind::Null: out += "null"; break;
    case Value::Kind::Bool: out += v.as_bool() ? "true" : "false"; break;
    case Value::Kind::Int:
    case Value::Kind::Float: out += normalized_number_text(v); break;
    case Value::Kind::Text:
      out += render_json(v);
      break;
    case Value::Kind::Array: {
      out += '[';
      bool first = true;
      for (const auto& e : v.as_array()) {
        if (!first) out += ',';
        first = false;
        render_normalized(e, out);
      }
      out += ']';
      break;
    }
    case Value::Kind::Doc: {
      out += '{';
      bool first = true;
      for (const auto& [k, fv] : v.as_doc()) {
        if (!first) out += ',';
        first = false;
        out += render_json(Value(k));
        out += ':';
        render_normalized(fv, out);
      }
      out += '}';
      break;
    }
  }
}

std::string normalized_text(const Value& v) {
  std::string out;
  render_normalized(v, out);
  return out;
}

// --- expression evaluation ---

std::optional<Value> eval(const Value& expr, const Doc& doc);

std::vector<std::optional<Value>> eval_args(const Value& arg, const Doc& doc) {
  std::vector<std::optional<Value>> out;
  if (arg.is_array()) {
    for (const auto& e : arg.as_array()) out.push_back(eval(e, doc));
  } else {
    out.push_back(eval(arg, doc));
  }
  return out;
}

void require_arity(const std::string& op,
                   const std::vector<std::optional<Value>>& args, std::size_t n) {
  if (args.size() != n) {
    raise(FailureKind::TypeError,
          op + " expects " + std::to_string(n) + " arguments, got " +
              std::to_string(args.size()));
  }
}

Value as_comparison_value(const std::optional<Value>& v) {
  return v ? *v : Value(nullptr);  // missing compares as null
}

std::optional<Value> eval_compare(const std::string& op, const Value& arg,
                                  const Doc& doc) {
  auto args = eval_args(arg, doc);
  require_arity(op, args, 2);
  Value a = as_comparison_value(args[0]);
  Value b = as_comparison_value(args[1]);
  if (op == "$eq") return Value(values_equal(a, b));
  if (op == "$ne") return Value(!values_equal(a, b));
  int c = compare_values(a, b);
  if (op == "$gt") return Value(c > 0);
  if (op == "$gte") return Value(c >= 0);
  if (op == "$lt") return Value(c < 0);
  return Value(c <= 0);  // $lte
}

std::optional<Value> eval_arith(const std::string& op, const Value& arg,
                                const Doc& doc) {
  auto args = eval_args(arg, doc);
  if (op == "$subtract" || op == "$divide") require_arity(op, args, 2);
  if (args.empty()) raise(FailureKind::TypeError, op + " expects arguments");
  // null/missing propagates; non-numeric is an error
  for (const auto& a : args) {
    if (!a || a->is_null()) return Value(nullptr);
    if (!a->is_number()) {
      raise(FailureKind::TypeError,
            op + " expects numbers, got " + kind_name(a->kind()));
    }
  }
  if (op == "$divide") {
    double denom = args[1]->number();
    if (denom == 0.0) raise(FailureKind::TypeError, "$divide by zero");
    return Value(args[0]->number() / denom);
  }
  bool all_int = std::all_of(args.begin(), args.end(),
                             [](const auto& a) { return a->is_int(); });
  if (all_int) {
    std::int64_t acc = args[0]->as_int();
    for (std::size_t i = 1; i < args.size(); ++i) {
      std::int64_t x = args[i]->as_int();
      if (op == "$add") acc += x;
      else if (op == "$subtract") acc -= x;
      else acc *= x;
    }
    return Value(acc);
  }
  double acc = args[0]->number();
  for (std::size_t i = 1; i < args.size(); ++i) {
    double x = args[i]->number();
    if (op == "$add") acc += x;
    else if (op == "$subtract") acc -= x;
    else acc *= x;
  }
  return Value(acc);
}

std::optional<Value> eval_to_int(const Value& v) {
  switch (v.kind()) {
    case Value::Kind::Null: return Value(nullptr);
    case Value::Kind::Bool: return Value(static_cast<std::int64_t>(v.as_bool()));
    case Value::Kind::Int: return v;
    case Value::Kind::Float: {
      double d = v.as_float();
      if (!std::isfinite(d) || std::fabs(d) > 9.2e18) {
        raise(FailureKind::ConversionError, "$toInt: value out of range");
      }
      return Value(static_cast<std::int64_t>(d));
    }
    case Value::Kind::Text: {
      const std::string& s = v.as_text();
      char* end = nullptr;
      errno = 0;
      double d = std::strtod(s.c_str(), &end);
      if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE ||
          !std::isfinite(d)) {
        raise(FailureKind::ConversionError,
              "$toInt: cannot parse number from \"" + s + "\"");
      }
      return Value(static_cast<std::int64_t>(d));
    }
    default:
      raise(FailureKind::ConversionError,
            std::string("$toInt: unsupported input kind ") + kind_name(v.kind()));
  }
}

std::optional<Value> eval_to_double(const Value& v) {
  switch (v.kind()) {
    case Value::Kind::Null: return Value(nullptr);
    case Value::Kind::Bool: return Value(v.as_bool() ? 1.0 : 0.0);
    case Value::Kind::Int: return Value(static_cast<double>(v.as_int()));
    case Value::Kind::Float: return v;
    case Value::Kind::Text: {
      const std::string& s = v.as_text();
      char* end = nullptr;
      errno = 0;
      double d = std::strtod(s.c_str(), &end);
      if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE ||
          !std::isfinite(d)) {
        raise(FailureKind::ConversionError,
              "$toDouble: cannot parse number from \"" + s + "\"");
      }
      return Value(d);
    }
    default:
      raise(FailureKind::ConversionError,
            std::string("$toDouble: unsupported input kind ") + kind_name(v.kind()));
  }
}

std::optional<Value> eval_operator(const std::string& op, const Value& arg,
                                   const Doc& doc) {
  if (op == "$eq" || op == "$ne" || op == "$gt" || op == "$gte" ||
      op == "$lt" || op == "$lte") {
    return eval_compare(op, arg, doc);
  }
  if (op == "$add" || op == "$subtract" || op == "$multiply" || op == "$divide") {
    return eval_arith(op, arg, doc);
  }
  if (op == "$and" || op == "$or") {
    auto args = eval_args(arg, doc);
    if (op == "$and") {
      for (const auto& a : args) {
        if (!truthy(a)) return Value(false);
      }
      return Value(true);
    }
    for (const auto& a : args) {
      if (truthy(a)) return Value(true);
    }
    return Value(false);
  }
  if (op == "$not") {
    auto args = eval_args(arg, doc);
    require_arity(op, args, 1);
    return Value(!truthy(args[0]));
  }
  if (op == "$size") {
    auto args = eval_args(arg, doc);
    require_arity(op, args, 1);
    if (!args[0] || !args[0]->is_array()) {
      raise(FailureKind::TypeError,
            std::string("$size expects an array, got ") +
                (args[0] ? kind_name(args[0]->kind()) : "missing"));
    }
    return Value(static_cast<std::int64_t>(args[0]->as_array().size()));
  }
  if (op == "$toInt" || op == "$toDouble") {
    std::optional<Value> v = eval(arg, doc);
    if (!v) return Value(nullptr);
    return op == "$toInt" ? eval_to_int(*v) : eval_to_double(*v);
  }
  if (op == "$concat") {
    auto args = eval_args(arg, doc);
    std::string out;
    for (const auto& a : args) {
      if (!a || a->is_null()) return Value(nullptr);
      if (!a->is_text()) {
        raise(FailureKind::TypeError,
              std::string("$concat expects strings, got ") + kind_name(a->kind()));
      }
      out += a->as_text();
    }
    return Value(std::move(out));
  }
  if (op == "$cond") {
    if (!arg.is_array() || arg.as_array().size() != 3) {
      raise(FailureKind::TypeError, "$cond expects [if, then, else]");
    }
    const auto& branches = arg.as_array();
    bool take_then = truthy(eval(branches[0], doc));
    return eval(branches[take_then ? 1 : 2], doc);
  }
  raise(FailureKind::UnknownOperator, "unknown expression operator \"" + op + "\"");
}

std::optional<Value> eval(const Value& expr, const Doc& doc) {
  switch (expr.kind()) {
    case Value::Kind::Text: {
      const std::string& s = expr.as_text();
      if (s.rfind("$$", 0) == 0) {
        if (s == "$$ROOT") return Value(doc);
        raise(FailureKind::UnknownOperator, "unknown variable \"" + s + "\"");
      }
      if (!s.empty() && s[0] == '$') {
        const Value* v = get_path(doc, std::string_view(s).substr(1));
        if (!v) return std::nullopt;
        return *v;
      }
      return expr;
    }
    case Value::Kind::Doc: {
      const Doc& d = expr.as_doc();
      bool has_op = false;
      for (const auto& [k, v] : d) {
        if (!k.empty() && k[0] == '$') has_op = true;
      }
      if (has_op) {
        if (d.size() != 1) {
          raise(FailureKind::TypeError,
                "operator expression must have exactly one key");
        }
        const auto& [op, arg] = d.fields().front();
        return eval_operator(op, arg, doc);
      }
      Doc out;
      for (const auto& [k, v] : d) {
        std::optional<Value> ev = eval(v, doc);
        if (ev) out.set(k, std::move(*ev));
      }
      return Value(std::move(out));
    }
    case Value::Kind::Array: {
      Value::Array out;
      for (const auto& e : expr.as_array()) {
        std::optional<Value> ev = eval(e, doc);
        out.push_back(ev ? std::move(*ev) : Value(nullptr));
      }
      return Value(std::move(out));
    }
    default:
      return expr;  // literal
  }
}

// --- filters ---

bool match_filter(const Value& filter, const Doc& doc);

bool same_rank_comparable(const Value& a, const Value& b) {
  auto rank = [](const Value& v) {
    if (v.is_number()) return 2;
    switch (v.kind()) {
      case Value::Kind::Null: return 0;
      case Value::Kind::Bool: return 1;
      case Value::Kind::Text: return 3;
      case Value::Kind::Doc: return 4;
      default: return 5;
    }
  };
  return rank(a) == rank(b);
}

bool apply_comparison(const std::string& op, const Value* field,
                      const Value& operand, const Doc& doc) {
  if (op == "$exists") {
    if (!operand.is_bool()) {
      raise(FailureKind::TypeError, "$exists expects a boolean");
    }
    return (field != nullptr) == operand.as_bool();
  }
  if (!field) return false;  // missing fields never match
  if (op == "$eq") return values_equal(*field, operand);
  if (op == "$ne") return !values_equal(*field, operand);
  if (op == "$in") {
    if (!operand.is_array()) raise(FailureKind::TypeError, "$in expects an array");
    for (const auto& e : operand.as_array()) {
      if (values_equal(*field, e)) return true;
    }
    return false;
  }
  if (op == "$gt" || op == "$gte" || op == "$lt" || op == "$lte") {
    if (!same_rank_comparable(*field, operand)) return false;
    int c = compare_values(*field, operand);
    if (op == "$gt") return c > 0;
    if (op == "$gte") return c >= 0;
    if (op == "$lt") return c < 0;
    return c <= 0;
  }
  raise(FailureKind::UnknownOperator, "unknown comparison operator \"" + op + "\"");
}

bool has_op_key(const Doc& d) {
  for (const auto& [k, v] : d) {
    if (!k.empty() && k[0] == '$') return true;
  }
  return false;
}

bool match_member(const std::string& key, const Value& cond, const Doc& doc) {
  const Value* field = get_path(doc, key);
  if (cond.is_doc() && has_op_key(cond.as_doc())) {
    for (const auto& [op, operand] : cond.as_doc()) {
      if (!apply_comparison(op, field, operand, doc)) return false;
    }
    return true;
  }
  return field && values_equal(*field, cond);
}

bool match_filter(const Value& filter, const Doc& doc) {
  if (!filter.is_doc()) {
    raise(FailureKind::TypeError, "filter must be a document");
  }
  for (const auto& [key, cond] : filter.as_doc()) {
    if (!key.empty() && key[0] == '$') {
      if (key == "$and" || key == "$or" || key == "$nor") {
        if (!cond.is_array()) {
          raise(FailureKind::TypeError, key + " expects an array of filters");
        }
        bool any = false, all = true;
        for (const auto& sub : cond.as_array()) {
          bool m = match_filter(sub, doc);
          any = any || m;
          all = all && m;
        }
        bool ok = (key == "$and") ? all : (key == "$or") ? any : !any;
        if (!ok) return false;
      } else if (key == "$expr") {
        if (!truthy(eval(cond, doc))) return false;
      } else {
        raise(FailureKind::UnknownOperator,
              "unknown filter operator \"" + key + "\"");
      }
      continue;
    }
    if (!match_member(key, cond, doc)) return false;
  }
  return true;
}

// --- projection (shared by $project and find) ---

bool is_exclusion_flag(const Value& v) {
  return (v.is_int() && v.as_int() == 0) || (v.is_float() && v.as_float() == 0.0) ||
         (v.is_bool() && !v.as_bool());
}

bool is_inclusion_flag(const Value& v) {
  return (v.is_int() && v.as_int() == 1) || (v.is_float() && v.as_float() == 1.0) ||
         (v.is_bool() && v.as_bool());
}

Doc project_doc(const Value& spec, const Doc& doc) {
  if (!spec.is_doc() || spec.as_doc().empty()) {
    raise(FailureKind::TypeError, "projection must be a non-empty document");
  }
  bool has_include = false, has_exclude = false;
  for (const auto& [k, v] : spec.as_doc()) {
    if (k == "_id") continue;
    if (is_exclusion_flag(v)) has_exclude = true;
    else has_include = true;  // inclusion flag or computed expression
  }
  if (has_include && has_exclude) {
    raise(FailureKind::TypeError,
          "projection cannot mix inclusion and exclusion");
  }
  bool only_id = !has_include && !has_exclude;  // every member is "_id"
  bool exclusion_mode = has_exclude;
  if (only_id) {
    const Value* idspec = spec.as_doc().find("_id");
    exclusion_mode = idspec && is_exclusion_flag(*idspec);
  }
  if (exclusion_mode) {
    // exclusion mode: drop the listed paths
    Doc out = doc;
    for (const auto& [k, v] : spec.as_doc()) {
      if (!is_exclusion_flag(v)) {
        raise(FailureKind::TypeError,
              "projection cannot mix inclusion and exclusion");
      }
      set_path(out, k, std::nullopt);
    }
    return out;
  }
  // inclusion mode: _id rides along unless excluded
  Doc out;
  bool id_excluded = false;
  if (const Value* idspec = spec.as_doc().find("_id")) {
    id_excluded = is_exclusion_flag(*idspec);
  }
  if (!id_excluded) {
    if (const Value* id = doc.find("_id")) out.set("_id", *id);
  }
  for (const auto& [k, v] : spec.as_doc()) {
    if (k == "_id") continue;
    if (is_inclusion_flag(v)) {
      if (const Value* src = get_path(doc, k)) set_path(out, k, *src);
    } else {
      std::optional<Value> ev = eval(v, doc);
      if (ev) set_path(out, k, std::move(*ev));
    }
  }
  return out;
}

// --- stages ---

void check_row_limit(const std::vector<Doc>& rows, const EngineLimits& limits) {
  if (static_cast<std::int64_t>(rows.size()) > limits.max_intermediate_docs) {
    raise(FailureKind::LimitExceeded,
          "intermediate result exceeds " +
              std::to_string(limits.max_intermediate_docs) + " documents");
  }
}

std::vector<Doc> stage_match(const Value& body, std::vector<Doc> rows) {
  std::vector<Doc> out;
  for (auto& d : rows) {
    if (match_filter(body, d)) out.push_back(std::move(d));
  }
  return out;
}

std::vector<Doc> stage_project(const Value& body, std::vector<Doc> rows) {
  std::vector<Doc> out;
  out.reserve(rows.size());
  for (const auto& d : rows) out.push_back(project_doc(body, d));
  return out;
}

std::vector<Doc> stage_add_fields(const Value& body, std::vector<Doc> rows) {
  if (!body.is_doc()) raise(FailureKind::TypeError, "$addFields expects a document");
  for (auto& d : rows) {
    for (const auto& [k, expr] : body.as_doc()) {
      std::optional<Value> ev = eval(expr, d);
      if (ev) set_path(d, k, std::move(*ev));
    }
  }
  return rows;
}

struct Accumulator {
  std::string op;
  Value arg;

  // running state
  std::int64_t int_sum = 0;
  double float_sum = 0;
  bool all_int = true;
  std::int64_t numeric_count = 0;
  std::optional<Value> extreme;  // $min/$max
  std::optional<Value> first, last;
  Value::Array pushed;
};

std::vector<Doc> stage_group(const Value& body, std::vector<Doc> rows) {
  if (!body.is_doc()) raise(FailureKind::TypeError, "$group expects a document");
  const Value* id_expr = body.as_doc().find("_id");
  if (!id_expr) raise(FailureKind::TypeError, "$group requires an \"_id\" key");

  struct GroupState {
    Value key;
    std::vector<Accumulator> accs;
  };
  std::vector<GroupState> groups;                       // first-encounter order
  std::unordered_map<std::string, std::size_t> index;   // normalized key -> slot

  std::vector<std::pair<std::string, std::pair<std::string, Value>>> acc_specs;
  for (const auto& [name, spec] : body.as_doc()) {
    if (name == "_id") continue;
    if (!spec.is_doc() || spec.as_doc().size() != 1) {
      raise(FailureKind::TypeError,
            "accumulator \"" + name + "\" must be {$op: expr}");
    }
    const auto& [op, arg] = spec.as_doc().fields().front();
    acc_specs.push_back({name, {op, arg}});
  }

  for (const auto& d : rows) {
    std::optional<Value> key = eval(*id_expr, d);
    Value key_value = key ? *key : Value(nullptr);
    std::string key_text = normalized_text(key_value);
    auto it = index.find(key_text);
    std::size_t slot;
    if (it == index.end()) {
      slot = groups.size();
      index.emplace(key_text, slot);
      GroupState g;
      g.key = key_value;
      for (const auto& [name, opspec] : acc_specs) {
        Accumulator a;
        a.op = opspec.first;
        a.arg = opspec.second;
        g.accs.push_back(std::move(a));
      }
      groups.push_back(std::move(g));
    } else {
      slot = it->second;
    }
    GroupState& g = groups[slot];
    for (auto& a : g.accs) {
      std::optional<Value> v = eval(a.arg, d);
      if (a.op == "$sum" || a.op == "$avg") {
        if (v && v->is_number()) {
          ++a.numeric_count;
          if (v->is_int()) {
            a.int_sum += v->as_int();
          } else {
            a.all_int = false;
          }
          a.float_sum += v->number();
        }
        // non-numeric inputs contribute nothing
      } else if (a.op == "$min" || a.op == "$max") {
        if (v && !v->is_null()) {
          if (!a.extreme) {
            a.extreme = *v;
          } else {
            int c = compare_values(*v, *a.extreme);
            if ((a.op == "$min" && c < 0) || (a.op == "$max" && c > 0)) {
              a.extreme = *v;
            }
          }
        }
      } else if (a.op == "$first") {
        if (!a.first) a.first = v ? *v : Value(nullptr);
      } else if (a.op == "$last") {
        a.last = v ? *v : Value(nullptr);
      } else if (a.op == "$push") {
        if (v) a.pushed.push_back(*v);
      } else {
        raise(FailureKind::UnknownOperator,
              "unknown accumulator \"" + a.op + "\"");
      }
    }
  }

  std::vector<Doc> out;
  out.reserve(groups.size());
  for (auto& g : groups) {
    Doc row;
    row.set("_id", g.key);
    std::size_t i = 0;
    for (const auto& [name, opspec] : acc_specs) {
      Accumulator& a = g.accs[i++];
      if (a.op == "$sum") {
        if (a.numeric_count == 0) {
          row.set(name, Value(std::int64_t{0}));
        } else if (a.all_int) {
          row.set(name, Value(a.int_sum));
        } else {
          row.set(name, Value(a.float_sum));
        }
      } else if (a.op == "$avg") {
        if (a.numeric_count == 0) {
          row.set(name, Value(nullptr));
        } else {
          row.set(name, Value(a.float_sum / static_cast<double>(a.numeric_count)));
        }
      } else if (a.op == "$min" || a.op == "$max") {
        row.set(name, a.extreme ? *a.extreme : Value(nullptr));
      } else if (a.op == "$first") {
        if (a.first) row.set(name, *a.first);
      } else if (a.op == "$last") {
        if (a.last) row.set(name, *a.last);
      } else {  // $push
        row.set(name, Value(std::move(a.pushed)));
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<Doc> stage_unwind(const Value& body, std::vector<Doc> rows,
                              const EngineLimits& limits) {
  std::string path;
  bool preserve = false;
  if (body.is_text()) {
    path = body.as_text();
  } else if (body.is_doc()) {
    const Value* p = body.as_doc().find("path");
    if (!p || !p->is_text()) {
      raise(FailureKind::TypeError, "$unwind document form requires \"path\"");
    }
    path = p->as_text();
    if (const Value* pres = body.as_doc().find("preserveNullAndEmptyArrays")) {
      if (!pres->is_bool()) {
        raise(FailureKind::TypeError,
              "preserveNullAndEmptyArrays must be a boolean");
      }
      preserve = pres->as_bool();
    }
    for (const auto& [k, v] : body.as_doc()) {
      if (k != "path" && k != "preserveNullAndEmptyArrays") {
        raise(FailureKind::UnknownOperator, "unsupported $unwind option \"" + k + "\"");
      }
    }
  } else {
    raise(FailureKind::TypeError, "$unwind expects a path string or document");
  }
  if (path.empty() || path[0] != '$') {
    raise(FailureKind::TypeError, "$unwind path must begin with '$'");
  }
  std::string_view field(path);
  field.remove_prefix(1);

  std::vector<Doc> out;
  for (const auto& d : rows) {
    const Value* v = get_path(d, field);
    if (!v || v->is_null()) {
      if (preserve) out.push_back(d);
      continue;
    }
    if (!v->is_array()) {
      out.push_back(d);  // single values pass through unchanged
      continue;
    }
    if (v->as_array().empty()) {
      if (preserve) {
        Doc kept = d;
        set_path(kept, field, std::nullopt);  // empty array: field removed
        out.push_back(std::move(kept));
      }
      continue;
    }
    for (const auto& elem : v->as_array()) {
      Doc fanned = d;
      set_path(fanned, field, elem);
      out.push_back(std::move(fanned));
      check_row_limit(out, limits);
    }
  }
  return out;
}

std::vector<Doc> stage_sort(const Value& body, std::vector<Doc> rows) {
  if (!body.is_doc() || body.as_doc().empty()) {
    raise(FailureKind::TypeError, "$sort expects a non-empty document");
  }
  std::vector<std::pair<std::string, int>> keys;
  for (const auto& [k, v] : body.as_doc()) {
    if (!v.is_int() || (v.as_int() != 1 && v.as_int() != -1)) {
      raise(FailureKind::TypeError, "$sort direction must be 1 or -1");
    }
    keys.emplace_back(k, static_cast<int>(v.as_int()));
  }
  const Value null_value(nullptr);
  std::stable_sort(rows.begin(), rows.end(), [&](const Doc& a, const Doc& b) {
    for (const auto& [k, dir] : keys) {
      const Value* va = get_path(a, k);
      const Value* vb = get_path(b, k);
      int c = compare_values(va ? *va : null_value, vb ? *vb : null_value);
      if (c != 0) return dir > 0 ? c < 0 : c > 0;
    }
    return false;  // stable: equal keys keep input order
  });
  return rows;
}

std::vector<Doc> stage_lookup(const Value& body, std::vector<Doc> rows,
                              const DatabaseInstance& db,
                              const EngineLimits& limits) {
  if (!body.is_doc()) raise(FailureKind::TypeError, "$lookup expects a document");
  auto text_field = [&](const char* k) -> std::string {
    const Value* v = body.as_doc().find(k);
    if (!v || !v->is_text()) {
      raise(FailureKind::TypeError,
            std::string("$lookup requires string \"") + k + "\"");
    }
    return v->as_text();
  };
  if (body.as_doc().find("pipeline")) {
    raise(FailureKind::UnknownOperator, "$lookup pipeline form is not supported");
  }
  std::string from = text_field("from");
  std::string local = text_field("localField");
  std::string foreign = text_field("foreignField");
  std::string as = text_field("as");

  const std::vector<Doc>* foreign_docs = db.find_collection(from);
  static const std::vector<Doc> kEmpty;
  if (!foreign_docs) foreign_docs = &kEmpty;

  const Value null_value(nullptr);
  std::int64_t produced = 0;
  for (auto& d : rows) {
    const Value* lv = get_path(d, local);
    const Value& local_value = lv ? *lv : null_value;
    Value::Array matches;
    for (const auto& fd : *foreign_docs) {
      const Value* fv = get_path(fd, foreign);
      const Value& foreign_value = fv ? *fv : null_value;
      if (values_equal(local_value, foreign_value)) {
        matches.push_back(Value(fd));
        if (++produced > limits.max_intermediate_docs) {
          raise(FailureKind::LimitExceeded, "$lookup result exceeds limits");
        }
      }
    }
    set_path(d, as, Value(std::move(matches)));
  }
  return rows;
}

std::int64_t require_nonneg_int(const Value& v, const std::string& what) {
  if (!v.is_int() || v.as_int() < 0) {
    raise(FailureKind::TypeError, what + " expects a non-negative integer");
  }
  return v.as_int();
}

std::vector<Doc> apply_stage_impl(const Stage& stage, std::vector<Doc> rows,
                                  const DatabaseInstance& db,
                                  const EngineLimits& limits) {
  const std::string& kw = stage.keyword;
  if (kw == "$match") return stage_match(stage.body, std::move(rows));
  if (kw == "$project") return stage_project(stage.body, std::move(rows));
  if (kw == "$addFields") return stage_add_fields(stage.body, std::move(rows));
  if (kw == "$group") return stage_group(stage.body, std::move(rows));
  if (kw == "$unwind") return stage_unwind(stage.body, std::move(rows), limits);
  if (kw == "$sort") return stage_sort(stage.body, std::move(rows));
  if (kw == "$limit") {
    std::int64_t n = require_nonneg_int(stage.body, "$limit");
    if (static_cast<std::int64_t>(rows.size()) > n) {
      rows.resize(static_cast<std::size_t>(n));
    }
    return rows;
  }
  if (kw == "$skip") {
    std::int64_t n = require_nonneg_int(stage.body, "$skip");
    if (n >= static_cast<std::int64_t>(rows.size())) return {};
    rows.erase(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n));
    return rows;
  }
  if (kw == "$count") {
    if (!stage.body.is_text() || stage.body.as_text().empty()) {
      raise(FailureKind::TypeError, "$count expects a non-empty field name");
    }
    if (rows.empty()) return {};  // no input, no output row
    Doc d;
    d.set(stage.body.as_text(), Value(static_cast<std::int64_t>(rows.size())));
    return {std::move(d)};
  }
  if (kw == "$lookup") return stage_lookup(stage.body, std::move(rows), db, limits);
  raise(FailureKind::UnknownOperator, "unknown stage \"" + kw + "\"");
}

}  // namespace

bool eval_match(const Value& filter, const Doc& doc) {
  return match_filter(filter, doc);
}

std::optional<Value> eval_expr(const Value& expr, const Doc& doc) {
  return eval(expr, doc);
}

ExecutionOutcome apply_stage(const Stage& stage, std::vector<Doc> rows,
                             const DatabaseInstance& db,
                             const EngineLimits& limits) {
  try {
    std::vector<Doc> out = apply_stage_impl(stage, std::move(rows), db, limits);
    check_row_limit(out, limits);
    return ExecutionOutcome::success(std::move(out));
  } catch (const EngineError& f) {
    return ExecutionOutcome::failure(f.kind(), f.what());
  }
}

namespace {

std::vector<Doc> collection_rows(const DatabaseInstance& db,
                                 const std::string& name) {
  const std::vector<Doc>* docs = db.find_collection(name);
  if (!docs) return {};  // unknown collection behaves as empty
  return *docs;
}

ExecutionOutcome execute_impl(const QueryAst& ast, const DatabaseInstance& db,
                              const EngineLimits& limits) {
  std::vector<Doc> rows = collection_rows(db, ast.collection);

  if (const auto* a = std::get_if<AggregateSpec>(&ast.method)) {
    if (static_cast<std::int64_t>(a->pipeline.size()) > limits.max_pipeline_stages) {
      return ExecutionOutcome::failure(
          FailureKind::LimitExceeded,
          "pipeline exceeds " + std::to_string(limits.max_pipeline_stages) +
              " stages");
    }
    for (const auto& s : a->pipeline) {
      ExecutionOutcome step = apply_stage(s, std::move(rows), db, limits);
      if (!step.ok) return step;
      rows = std::move(step.rows);
    }
    return ExecutionOutcome::success(std::move(rows));
  }

  if (const auto* f = std::get_if<FindSpec>(&ast.method)) {
    try {
      std::vector<Doc> filtered;
      for (auto& d : rows) {
        if (match_filter(f->filter, d)) filtered.push_back(std::move(d));
      }
      if (f->projection && !f->projection->as_doc().empty()) {
        std::vector<Doc> projected;
        projected.reserve(filtered.size());
        for (const auto& d : filtered) {
          projected.push_back(project_doc(*f->projection, d));
        }
        filtered = std::move(projected);
      }
      if (f->sort) filtered = stage_sort(*f->sort, std::move(filtered));
      if (f->limit && static_cast<std::int64_t>(filtered.size()) > *f->limit) {
        filtered.resize(static_cast<std::size_t>(*f->limit));
      }
      check_row_limit(filtered, limits);
      return ExecutionOutcome::success(std::move(filtered));
    } catch (const EngineError& e) {
      return ExecutionOutcome::failure(e.kind(), e.what());
    }
  }

  if (const auto* dset = std::get_if<DistinctSpec>(&ast.method)) {
    try {
      std::vector<Doc> out;
      std::unordered_set<std::string> seen;
      for (const auto& d : rows) {
        if (dset->filter && !match_filter(*dset->filter, d)) continue;
        const Value* v = get_path(d, dset->field);
        if (!v) continue;
        auto add = [&](const Value& item) {
          if (seen.insert(normalized_text(item)).second) {
            Doc row;
            row.set(dset->field, item);
            out.push_back(std::move(row));
          }
        };
        if (v->is_array()) {
          for (const auto& e : v->as_array()) add(e);
        } else {
          add(*v);
        }
      }
      check_row_limit(out, limits);
      return ExecutionOutcome::success(std::move(out));
    } catch (const EngineError& e) {
      return ExecutionOutcome::failure(e.kind(), e.what());
    }
  }

  const auto& c = std::get<CountSpec>(ast.method);
  try {
    std::int64_t n = 0;
    for (const auto& d : rows) {
      if (match_filter(c.filter, d)) ++n;
    }
    Doc row;
    row.set("count", Value(n));  // n = 0 still yields one row
    return ExecutionOutcome::success({std::move(row)});
  } catch (const EngineError& e) {
    return ExecutionOutcome::failure(e.kind(), e.what());
  }
}

}  // namespace

ExecutionOutcome execute(const QueryAst& ast, const DatabaseInstance& db,
                         const EngineLimits& limits) {
  try {
    return execute_impl(ast, db, limits);
  } catch (const EngineError& f) {
    return ExecutionOutcome::failure(f.kind(), f.what());
  }
}

ExecutionOutcome execute_text(const std::string& query_text,
                              const DatabaseInstance& db,
                              const EngineLimits& limits) {
  QueryAst ast;
  try {
    ast = parse_query(query_text);
  } catch (const QueryParseError& e) {
    return ExecutionOutcome::failure(FailureKind::Parse, e.what());
  }
  return execute(ast, db, limits);
}

// ---------------------------------------------------------------------------
// EVM canonicalization and fingerprints

namespace {

void collect_leaves(const Value& v, std::vector<const Value*>& out) {
  switch (v.kind()) {
    case Value::Kind::Array:
      for (const auto& e : v.as_array()) collect_leaves(e, out);
      break;
    case Value::Kind::Doc:
      for (const auto& [k, fv] : v.as_doc()) collect_leaves(fv, out);
      break;
    default:
      out.push_back(&v);
  }
}

std::string row_signature(const Doc& row) {
  std::vector<const Value*> leaves;
  Value wrapper(row);
  collect_leaves(wrapper, leaves);
  std::vector<std::string> texts;
  texts.reserve(leaves.size());
  for (const Value* v : leaves) texts.push_back(normalized_text(*v));
  std::sort(texts.begin(), texts.end());
  std::string out = "[";
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i) out += ',';
    out += texts[i];
  }
  out += ']';
  return out;
}

}  // namespace

std::string evm_canonical_text(const std::vector<Doc>& rows) {
  std::vector<std::string> sigs;
  sigs.reserve(rows.size());
  for (const auto& r : rows) sigs.push_back(row_signature(r));
  std::sort(sigs.begin(), sigs.end());
  sigs.erase(std::unique(sigs.begin(), sigs.end()), sigs.end());
  std::string out;
  for (const auto& s : sigs) {
    out += s;
    out += '\n';
  }
  return out;
}

std::string result_fingerprint(const ExecutionOutcome& outcome) {
  if (!outcome.ok) {
    return std::string("failure:") + failure_kind_name(outcome.kind);
  }
  return "ok:" + fnv1a_hex(evm_canonical_text(outcome.rows));
}

// ---------------------------------------------------------------------------
// Vocabulary registries

const std::vector<std::string>& supported_stages() {
  static const std::vector<std::string> v = {
      "$match", "$project", "$addFields", "$group", "$unwind",
      "$sort",  "$limit",   "$skip",      "$count", "$lookup"};
  return v;
}

const std::vector<std::string>& supported_expr_operators() {
  static const std::vector<std::string> v = {
      "$eq",  "$ne",       "$gt",       "$gte",    "$lt",     "$lte",
      "$and", "$or",       "$not",      "$add",    "$subtract",
      "$multiply", "$divide", "$size",  "$toInt",  "$toDouble",
      "$concat", "$cond"};
  return v;
}

const std::vector<std::string>& supported_match_operators() {
  static const std::vector<std::string> v = {
      "$eq", "$ne", "$gt", "$gte", "$lt", "$lte", "$in", "$exists"};
  return v;
}

const std::vector<std::string>& supported_accumulators() {
  static const std::vector<std::string> v = {
      "$sum", "$avg", "$min", "$max", "$first", "$last", "$push"};
  return v;
}

// ---------------------------------------------------------------------------

LocalExecutor::LocalExecutor(const std::vector<const DatabaseInstance*>& dbs,
                             EngineLimits limits)
    : dbs_(dbs), limits_(limits) {}

ExecutionOutcome LocalExecutor::execute_query(const std::string& query_text,
                                              const std::string& db_id) {
  for (const DatabaseInstance* db : dbs_) {
    if (db && db->db_id == db_id) return execute_text(query_text, *db, limits_);
  }
  return ExecutionOutcome::failure(FailureKind::Parse,
                                   "unknown database \"" + db_id + "\"");
}

}  // namespace nosqlgen
