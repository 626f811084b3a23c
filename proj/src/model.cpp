#include "nosqlgen/model.hpp"

#include <fstream>
#include <sstream>

namespace nosqlgen {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw DataError("write failed: " + path);
}

namespace {

const Value& require_field(const Value& v, const std::string& key,
                           const std::string& origin) {
  if (!v.is_doc()) throw DataError(origin + ": expected an object");
  const Value* f = v.as_doc().find(key);
  if (!f) throw DataError(origin + ": missing \"" + key + "\"");
  return *f;
}

std::string require_text(const Value& v, const std::string& key,
                         const std::string& origin) {
  const Value& f = require_field(v, key, origin);
  if (!f.is_text()) throw DataError(origin + ": \"" + key + "\" must be a string");
  return f.as_text();
}

}  // namespace

DatabaseInstance database_from_value(const Value& v, const std::string& origin) {
  DatabaseInstance db;
  db.db_id = require_text(v, "db_id", origin);
  const Value& colls = require_field(v, "collections", origin);
  if (!colls.is_doc()) {
    throw DataError(origin + ": \"collections\" must be an object");
  }
  for (const auto& [name, docs] : colls.as_doc()) {
    if (db.find_collection(name)) {
      throw DataError(origin + ": duplicate collection \"" + name + "\"");
    }
    if (!docs.is_array()) {
      throw DataError(origin + ": collection \"" + name + "\" must be an array");
    }
    std::vector<Doc> rows;
    rows.reserve(docs.as_array().size());
    for (const auto& d : docs.as_array()) {
      if (!d.is_doc()) {
        throw DataError(origin + ": collection \"" + name +
                        "\" contains a non-document entry");
      }
      rows.push_back(d.as_doc());
    }
    db.collections.emplace_back(name, std::move(rows));
  }
  return db;
}

DatabaseInstance load_database(const std::string& path) {
  std::string text = read_file(path);
  Value v;
  try {
    v = parse_json(text);
  } catch (const JsonError& e) {
    throw DataError(path + ": " + e.what());
  }
  return database_from_value(v, path);
}

Dialogue dialogue_from_value(const Value& v, const std::string& origin) {
  Dialogue d;
  d.dialogue_id = require_text(v, "dialogue_id", origin);
  d.db_id = require_text(v, "db_id", origin);
  const Value& turns = require_field(v, "turns", origin);
  if (!turns.is_array() || turns.as_array().empty()) {
    throw DataError(origin + ": \"turns\" must be a non-empty array");
  }
  for (const auto& t : turns.as_array()) {
    DialogueTurn turn;
    turn.question = require_text(t, "question", origin);
    turn.gold_query = require_text(t, "gold_query", origin);
    if (turn.gold_query.empty()) {
      throw DataError(origin + ": empty gold_query");
    }
    d.turns.push_back(std::move(turn));
  }
  return d;
}

std::vector<Dialogue> load_dialogues(const std::string& path) {
  std::string text = read_file(path);
  std::vector<Dialogue> out;
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
    out.push_back(dialogue_from_value(v, origin));
  }
  return out;
}

TurnContext context_for_turn(const Dialogue& d, int i,
                             const DatabaseInstance& db) {
  if (i < 1 || static_cast<std::size_t>(i) > d.turns.size()) {
    throw DataError("turn index " + std::to_string(i) + " out of range for \"" +
                    d.dialogue_id + "\" (" + std::to_string(d.turns.size()) +
                    " turns)");
  }
  if (db.db_id != d.db_id) {
    throw DataError("dialogue \"" + d.dialogue_id + "\" expects database \"" +
                    d.db_id + "\", got \"" + db.db_id + "\"");
  }
  TurnContext ctx;
  ctx.database = &db;
  ctx.dialogue_id = d.dialogue_id;
  ctx.question = d.turns[static_cast<std::size_t>(i - 1)].question;
  ctx.turn_index = i;
  for (int k = 0; k + 1 < i; ++k) {
    const auto& t = d.turns[static_cast<std::size_t>(k)];
    ctx.history.emplace_back(t.question, t.gold_query);
  }
  return ctx;
}

namespace {

void collect_paths(const Value& v, const std::string& prefix,
                   std::map<std::string, std::string>& paths) {
  if (v.is_doc()) {
    for (const auto& [k, fv] : v.as_doc()) {
      std::string p = prefix.empty() ? k : prefix + "." + k;
      paths.emplace(p, kind_name(fv.kind()));  // first kind seen wins
      collect_paths(fv, p, paths);
    }
  } else if (v.is_array()) {
    for (const auto& e : v.as_array()) collect_paths(e, prefix, paths);
  }
}

}  // namespace

std::string schema_summary(const DatabaseInstance& db) {
  std::string out = "database " + db.db_id + "\n";
  for (const auto& [name, docs] : db.collections) {
    out += "collection " + name + " (" + std::to_string(docs.size()) + " docs)\n";
    std::map<std::string, std::string> paths;
    for (const auto& d : docs) collect_paths(Value(d), "", paths);
    for (const auto& [p, kind] : paths) {
      out += "  " + p + ": " + kind + "\n";
    }
  }
  return out;
}

}  // namespace nosqlgen
